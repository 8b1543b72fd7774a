use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    roi_metrics, simulate_measurements, CaseModality, CasePreset, GroundTruth, HistogramSummary, RoiMetrics,
    ROI_NAMES,
};
use crate::error::{Error, Result};
use crate::forward::{
    build_upper_hemisphere_sensors, combine_emeg, eeg_sphere_leadfield, generate_source_space, meg_radial_leadfield,
    LeadField, SensorKind, SourceSpace,
};
use crate::hbm::{HyperpriorConfig, HyperpriorFamily};
use crate::ramus::{ramus_reconstruct, RamusConfig};
use crate::seeds::derive_seed_path;

/// Geometry of the reduced-size spherical head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeskScale {
    pub sources: usize,
    /// Radius of the ball holding the sources, mm.
    pub source_radius: f64,
    /// Electrode sphere radius, mm.
    pub scalp_radius: f64,
    pub electrodes: usize,
    /// Magnetometer radius relative to the electrode radius.
    pub meg_scale: f64,
    pub conductivity: f64,
    pub series_terms: usize,
    pub space_seed: u64,
}

impl Default for DeskScale {
    fn default() -> Self {
        DeskScale {
            sources: 6400,
            source_radius: 87.0,
            scalp_radius: 100.0,
            electrodes: 102,
            meg_scale: 1.2,
            conductivity: 0.33,
            // 100 terms leave a ~1e-6 tail for sources 87 mm deep in a 100 mm sphere
            series_terms: 300,
            space_seed: 2024,
        }
    }
}

/// Source space with its EEG, MEG and stacked lead fields.
#[derive(Debug, Clone)]
pub struct Scene {
    pub space: SourceSpace,
    pub eeg: LeadField,
    pub meg: Option<LeadField>,
    pub combined: Option<LeadField>,
}

impl Scene {
    pub fn build(scale: &DeskScale) -> Result<Scene> {
        let space = generate_source_space(scale.sources, scale.source_radius, scale.space_seed)?;
        let electrodes =
            build_upper_hemisphere_sensors(scale.electrodes, scale.scalp_radius, SensorKind::Eeg, scale.source_radius)?;
        let eeg = eeg_sphere_leadfield(
            &space,
            &electrodes,
            scale.conductivity,
            scale.scalp_radius,
            scale.series_terms,
        )?;
        let magnetometers = electrodes.scaled(scale.meg_scale, SensorKind::MegRadial)?;
        let meg = meg_radial_leadfield(&space, &magnetometers)?;
        Scene::from_parts(space, eeg, Some(meg))
    }

    pub fn from_parts(space: SourceSpace, eeg: LeadField, meg: Option<LeadField>) -> Result<Scene> {
        if eeg.cols() != space.dof() {
            return Err(Error::param(format!(
                "lead field has {} columns, source space needs {}",
                eeg.cols(),
                space.dof()
            )));
        }
        let combined = match &meg {
            Some(m) => {
                let (lf, _) = combine_emeg(
                    &eeg,
                    m,
                    &nalgebra::DVector::zeros(eeg.rows()),
                    &nalgebra::DVector::zeros(m.rows()),
                )?;
                Some(lf)
            }
            None => None,
        };
        Ok(Scene {
            space,
            eeg,
            meg,
            combined,
        })
    }

    pub fn leadfield(&self, modality: CaseModality) -> Result<&LeadField> {
        match modality {
            CaseModality::Eeg => Ok(&self.eeg),
            CaseModality::Emeg => self
                .combined
                .as_ref()
                .ok_or_else(|| Error::param("E/MEG case requested but no MEG lead field is available")),
        }
    }
}

/// Everything needed to run one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub id: String,
    pub modality: CaseModality,
    /// Solver settings; `sigma` and `rng_seed` are set per realization.
    pub ramus: RamusConfig,
    pub superficial_amplitude: f64,
    pub deep_amplitude: f64,
    pub noise_pct: f64,
    /// Fixed solver sigma instead of the simulated noise level.
    pub sigma_override: Option<f64>,
}

impl CaseSpec {
    pub fn from_preset(p: &CasePreset, levels: usize, n_iter: usize, beta: f64, theta0: f64) -> Result<CaseSpec> {
        let hyperprior = HyperpriorConfig::new(p.family, beta, theta0)?;
        Ok(CaseSpec {
            id: p.id.to_string(),
            modality: p.modality,
            ramus: RamusConfig {
                levels,
                sparsity: p.sparsity,
                decompositions: p.decompositions,
                hyperprior,
                n_iter,
                sigma: 1.0,
                rng_seed: 0,
                keep_snapshots: false,
            },
            superficial_amplitude: p.superficial_amplitude,
            deep_amplitude: p.deep_amplitude,
            noise_pct: p.noise_pct,
            sigma_override: None,
        })
    }

    pub fn family(&self) -> HyperpriorFamily {
        self.ramus.hyperprior.family()
    }

    pub fn truth(&self) -> GroundTruth {
        GroundTruth::with_amplitudes(self.superficial_amplitude, self.deep_amplitude)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationResult {
    pub index: usize,
    pub seed: u64,
    pub sigma: f64,
    pub snap_distances: Vec<f64>,
    /// Indexed like the ground-truth ROIs.
    pub rois: Vec<RoiMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummaries {
    pub position_error: HistogramSummary,
    pub angle_error: HistogramSummary,
    pub log10_amplitude_error: HistogramSummary,
    pub relative_max: HistogramSummary,
}

impl MetricSummaries {
    pub fn by_name(&self, name: &str) -> Option<&HistogramSummary> {
        match name {
            "position_error" => Some(&self.position_error),
            "angle_error" => Some(&self.angle_error),
            "log10_amplitude_error" => Some(&self.log10_amplitude_error),
            "relative_max" => Some(&self.relative_max),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiSummary {
    pub name: String,
    /// Fraction of realizations in which the ROI was detected.
    pub detection_rate: f64,
    pub metrics: MetricSummaries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub spec: CaseSpec,
    pub master_seed: u64,
    pub realizations: Vec<RealizationResult>,
    pub rois: Vec<RoiSummary>,
}

impl CaseReport {
    fn aggregate(spec: CaseSpec, master_seed: u64, realizations: Vec<RealizationResult>) -> CaseReport {
        let n_roi = realizations.first().map_or(0, |r| r.rois.len());
        let rois = (0..n_roi)
            .map(|i| {
                let col = |f: fn(&RoiMetrics) -> f64| -> HistogramSummary {
                    HistogramSummary::new(realizations.iter().map(|r| f(&r.rois[i])).collect())
                };
                let detected = realizations.iter().filter(|r| r.rois[i].detected).count();
                RoiSummary {
                    name: ROI_NAMES.get(i).map_or_else(|| format!("roi{i}"), |s| s.to_string()),
                    detection_rate: detected as f64 / realizations.len() as f64,
                    metrics: MetricSummaries {
                        position_error: col(|m| m.position_error),
                        angle_error: col(|m| m.angle_error),
                        log10_amplitude_error: col(|m| m.log10_amplitude_error),
                        relative_max: col(|m| m.relative_max),
                    },
                }
            })
            .collect();
        CaseReport {
            spec,
            master_seed,
            realizations,
            rois,
        }
    }
}

fn run_realization(scene: &Scene, lf: &LeadField, spec: &CaseSpec, truth: &GroundTruth, master: u64, index: usize) -> Result<RealizationResult> {
    let seed = derive_seed_path(master, &[index as u64]);
    let sim = simulate_measurements(lf, &scene.space, truth, spec.noise_pct, derive_seed_path(seed, &[0]))?;
    let sigma = spec.sigma_override.unwrap_or(sim.sigma_effective);
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::param("solver sigma is zero; noiseless runs need an explicit sigma"));
    }
    let cfg = RamusConfig {
        sigma,
        rng_seed: derive_seed_path(seed, &[1]),
        keep_snapshots: false,
        ..spec.ramus
    };
    let rec = ramus_reconstruct(lf, &scene.space, &sim.y, &cfg, None)?;
    // back to source units so amplitudes compare with the truth
    let x = rec.x_final / sim.scale;
    let rois = (0..truth.dipoles.len())
        .map(|roi| roi_metrics(&x, &scene.space, truth, roi))
        .collect::<Result<Vec<_>>>()?;
    Ok(RealizationResult {
        index,
        seed,
        sigma,
        snap_distances: sim.snap_distances,
        rois,
    })
}

/// Simulate, reconstruct and score `realizations` noise draws. Realization `r`
/// draws everything from seeds derived from `(master_seed, r)`, so the report
/// does not depend on `threads`.
pub fn run_case(scene: &Scene, spec: &CaseSpec, realizations: usize, master_seed: u64, threads: usize) -> Result<CaseReport> {
    if realizations == 0 {
        return Err(Error::param("at least one realization is required"));
    }
    spec.ramus.validate()?;
    let lf = scene.leadfield(spec.modality)?;
    let truth = spec.truth();
    truth.check_inside(&scene.space)?;

    let threads = threads.clamp(1, realizations);
    let results: Vec<Result<RealizationResult>> = if threads == 1 {
        (0..realizations)
            .map(|r| run_realization(scene, lf, spec, &truth, master_seed, r))
            .collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<RealizationResult>>>> = Mutex::new((0..realizations).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(|| loop {
                    let r = next.fetch_add(1, Ordering::Relaxed);
                    if r >= realizations {
                        break;
                    }
                    let out = run_realization(scene, lf, spec, &truth, master_seed, r);
                    slots.lock().expect("result lock poisoned")[r] = Some(out);
                });
            }
        });
        slots
            .into_inner()
            .expect("result lock poisoned")
            .into_iter()
            .map(|o| o.expect("every realization ran"))
            .collect()
    };
    let realizations = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(CaseReport::aggregate(spec.clone(), master_seed, realizations))
}
