//! Randomized multiresolution scanning.
//!
//! For each of `D` random decompositions the IAS MAP solver runs coarse to
//! fine, each level seeded with the previous level's estimate. The prolonged
//! level estimates are combined into a normalized mean, which also seeds the
//! coarsest level of the next decomposition. The result is the mean over all
//! decompositions.

use std::borrow::Cow;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{LeadField, Point3, SourceSpace};
use crate::hbm::{ias_map, HyperpriorConfig};
use crate::multires::{build_decomposition, level_counts, prolong, restrict_leadfield, restrict_vector};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RamusConfig {
    /// Number of resolution levels `L`.
    pub levels: usize,
    /// Ratio `s` of source counts between consecutive levels.
    pub sparsity: f64,
    /// Number of decompositions `D`.
    pub decompositions: usize,
    pub hyperprior: HyperpriorConfig,
    /// IAS sweeps per level.
    pub n_iter: usize,
    /// Likelihood standard deviation in data units.
    pub sigma: f64,
    pub rng_seed: u64,
    /// Store every prolonged level estimate in the result.
    pub keep_snapshots: bool,
}

impl RamusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::param("L must be at least 1"));
        }
        if !(self.sparsity > 1.0 && self.sparsity.is_finite()) {
            return Err(Error::param(format!("sparsity must exceed 1, got {}", self.sparsity)));
        }
        if self.decompositions == 0 {
            return Err(Error::param("D must be at least 1"));
        }
        if self.n_iter == 0 {
            return Err(Error::param("n_iter must be at least 1"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::param(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    /// `sum_l s^(L-l)`, the normalizer of the per-decomposition level mean.
    pub fn level_weight(&self) -> f64 {
        level_weight(self.sparsity, self.levels)
    }
}

/// Seed of decomposition `k` (0-based) under the master seed.
pub fn decomposition_seed(master: u64, k: usize) -> u64 {
    derive_seed(master, k as u64)
}

/// Solver outcome for one (decomposition, level) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub decomposition: usize,
    pub level: usize,
    pub sources: usize,
    pub objective_start: f64,
    pub objective_end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// Mean of the per-decomposition estimates.
    pub x_final: DVector<f64>,
    /// Normalized level mean of each decomposition.
    pub per_decomposition: Vec<DVector<f64>>,
    /// `snapshots[k][l]`: level `l` estimate of decomposition `k` on the fine grid.
    pub snapshots: Option<Vec<Vec<DVector<f64>>>>,
    pub records: Vec<LevelRecord>,
    pub decomposition_seeds: Vec<u64>,
}

fn level_weight(s: f64, levels: usize) -> f64 {
    (1..=levels).map(|l| s.powi((levels - l) as i32)).sum()
}

/// `(sum_l x^(l)) / (sum_l s^(L-l))` over fine-grid level estimates.
pub fn level_mean(snapshots: &[DVector<f64>], s: f64, levels: usize) -> Result<DVector<f64>> {
    if snapshots.len() != levels || levels == 0 {
        return Err(Error::param(format!(
            "expected {levels} level snapshots, got {}",
            snapshots.len()
        )));
    }
    let n = snapshots[0].len();
    if snapshots.iter().any(|v| v.len() != n) {
        return Err(Error::param("level snapshots differ in length"));
    }
    let mut sum = DVector::zeros(n);
    for v in snapshots {
        sum += v;
    }
    Ok(sum / level_weight(s, levels))
}

/// Run the full scan. `x_init` (fine grid) seeds the very first solve; when
/// absent or zero the first solve starts from the uniform `theta0` variances.
pub fn ramus_reconstruct(
    lf: &LeadField,
    space: &SourceSpace,
    y: &DVector<f64>,
    cfg: &RamusConfig,
    x_init: Option<&DVector<f64>>,
) -> Result<Reconstruction> {
    cfg.validate()?;
    if lf.cols() != space.dof() {
        return Err(Error::param(format!(
            "lead field has {} columns, source space has {} unknowns",
            lf.cols(),
            space.dof()
        )));
    }
    if y.len() != lf.rows() {
        return Err(Error::param(format!(
            "data has length {}, lead field has {} rows",
            y.len(),
            lf.rows()
        )));
    }
    level_counts(space.len(), cfg.sparsity, cfg.levels)?;

    let n = space.dof();
    let mut guess = match x_init {
        Some(x) if x.len() != n => {
            return Err(Error::param(format!("initial guess has length {}, expected {n}", x.len())))
        }
        Some(x) => x.clone(),
        None => DVector::zeros(n),
    };

    let weight = cfg.level_weight();
    let mut per_decomposition = Vec::with_capacity(cfg.decompositions);
    let mut snapshots = cfg.keep_snapshots.then(|| Vec::with_capacity(cfg.decompositions));
    let mut records = Vec::with_capacity(cfg.decompositions * cfg.levels);
    let mut seeds = Vec::with_capacity(cfg.decompositions);

    for k in 0..cfg.decompositions {
        let seed = decomposition_seed(cfg.rng_seed, k);
        seeds.push(seed);
        let dec = build_decomposition(space, cfg.sparsity, cfg.levels, seed)?;
        let mut level_sum = DVector::zeros(n);
        let mut kept = Vec::new();
        for level in dec.levels() {
            let coarse: Cow<LeadField> = if level.is_identity() {
                Cow::Borrowed(lf)
            } else {
                Cow::Owned(restrict_leadfield(lf, level)?)
            };
            let z0 = restrict_vector(&guess, level)?;
            let state = ias_map(coarse.matrix(), y, cfg.sigma, &cfg.hyperprior, cfg.n_iter, Some(&z0))?;
            let x_level = prolong(&state.x, level)?;
            if x_level.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    decomposition: k,
                    level: level.level_index(),
                });
            }
            records.push(LevelRecord {
                decomposition: k,
                level: level.level_index(),
                sources: level.len(),
                objective_start: state.objective_history[0],
                objective_end: state.objective(),
            });
            level_sum += &x_level;
            if cfg.keep_snapshots {
                kept.push(x_level.clone());
            }
            guess = x_level;
        }
        let xbar = level_sum / weight;
        guess = xbar.clone();
        per_decomposition.push(xbar);
        if let Some(s) = snapshots.as_mut() {
            s.push(kept);
        }
    }

    let mut x_final = DVector::zeros(n);
    for x in &per_decomposition {
        x_final += x;
    }
    x_final /= cfg.decompositions as f64;

    Ok(Reconstruction {
        x_final,
        per_decomposition,
        snapshots,
        records,
        decomposition_seeds: seeds,
    })
}

/// Per-position moment magnitudes with the global peak.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeField {
    pub amplitudes: Vec<f64>,
    pub max: f64,
    /// Index of the peak, `None` when everything is zero.
    pub argmax: Option<usize>,
    pub argmax_position: Option<Point3>,
}

/// Euclidean norm of each position's moment triple.
pub fn amplitudes(x: &DVector<f64>) -> Vec<f64> {
    x.as_slice()
        .chunks_exact(3)
        .map(|c| (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt())
        .collect()
}

pub fn reconstruction_summary(rec: &Reconstruction, space: &SourceSpace) -> AmplitudeField {
    summarize(&rec.x_final, space)
}

pub(crate) fn summarize(x: &DVector<f64>, space: &SourceSpace) -> AmplitudeField {
    let amplitudes = amplitudes(x);
    let mut max = 0.0;
    let mut argmax = None;
    for (i, &a) in amplitudes.iter().enumerate() {
        if a > max {
            max = a;
            argmax = Some(i);
        }
    }
    AmplitudeField {
        argmax_position: argmax.map(|i| space.positions()[i]),
        amplitudes,
        max,
        argmax,
    }
}
