//! Synthetic two-dipole experiments: case presets, data simulation, ROI
//! metrics and sample statistics over noise realizations.

mod output;
mod runner;

pub use output::{write_histograms, write_metrics_csv, write_summary_json, HISTOGRAM_BINS, METRIC_NAMES};
pub use runner::{
    run_case, CaseReport, CaseSpec, DeskScale, MetricSummaries, RealizationResult, RoiSummary, Scene,
};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{Dipole, LeadField, Point3, SourceSpace};
use crate::hbm::HyperpriorFamily;
use crate::ramus::amplitudes;

/// Threshold on the ROI-to-global amplitude ratio for a detection.
pub const DETECTION_THRESHOLD: f64 = 0.1;

/// ROIs with a relative maximum below this are left out of histogram plots.
pub const DISPLAY_THRESHOLD: f64 = 0.05;

pub const ROI_DIAMETER_MM: f64 = 60.0;

pub const SUPERFICIAL: usize = 0;
pub const DEEP: usize = 1;
pub const ROI_NAMES: [&str; 2] = ["superficial", "deep"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseModality {
    Eeg,
    Emeg,
}

impl std::fmt::Display for CaseModality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CaseModality::Eeg => "EEG",
            CaseModality::Emeg => "E/MEG",
        })
    }
}

impl std::str::FromStr for CaseModality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EEG" => Ok(CaseModality::Eeg),
            "E/MEG" | "EMEG" => Ok(CaseModality::Emeg),
            _ => Err(Error::param(format!("unknown modality `{s}` (expected EEG or E/MEG)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CasePreset {
    pub id: char,
    pub modality: CaseModality,
    pub sparsity: f64,
    pub decompositions: usize,
    pub family: HyperpriorFamily,
    pub deep_amplitude: f64,
    pub superficial_amplitude: f64,
    pub noise_pct: f64,
}

const fn preset(
    id: char,
    modality: CaseModality,
    sparsity: f64,
    decompositions: usize,
    family: HyperpriorFamily,
    deep_amplitude: f64,
    superficial_amplitude: f64,
) -> CasePreset {
    CasePreset {
        id,
        modality,
        sparsity,
        decompositions,
        family,
        deep_amplitude,
        superficial_amplitude,
        noise_pct: 3.0,
    }
}

use CaseModality::{Eeg, Emeg};
use HyperpriorFamily::{Gamma, InverseGamma};

const PRESETS: [CasePreset; 9] = [
    preset('A', Eeg, 8.0, 100, InverseGamma, 10.0, 5.0),
    preset('B', Eeg, 8.0, 100, InverseGamma, 10.0, 0.0),
    preset('C', Eeg, 8.0, 100, InverseGamma, 0.0, 5.0),
    preset('D', Eeg, 8.0, 100, InverseGamma, 10.0, 7.0),
    preset('E', Eeg, 5.0, 100, InverseGamma, 10.0, 7.0),
    preset('F', Eeg, 8.0, 20, InverseGamma, 10.0, 7.0),
    preset('G', Eeg, 8.0, 100, Gamma, 10.0, 5.0),
    preset('H', Emeg, 8.0, 100, InverseGamma, 10.0, 5.0),
    preset('I', Emeg, 8.0, 100, InverseGamma, 10.0, 7.0),
];

impl CasePreset {
    pub fn all() -> &'static [CasePreset] {
        &PRESETS
    }

    pub fn by_id(id: char) -> Result<CasePreset> {
        let up = id.to_ascii_uppercase();
        PRESETS
            .iter()
            .copied()
            .find(|p| p.id == up)
            .ok_or_else(|| Error::param(format!("unknown case `{id}` (expected A to I)")))
    }
}

/// True dipoles and the ROIs centered on them. Index 0 is the superficial
/// source, index 1 the deep one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub dipoles: Vec<Dipole>,
    pub roi_centers: Vec<Point3>,
    pub roi_diameter: f64,
}

fn moment(angle_deg: f64, amplitude: f64) -> Point3 {
    let a = angle_deg.to_radians();
    Point3::new(a.cos(), 0.0, a.sin()) * amplitude
}

/// Superficial dipole at (-5, 0, 77) mm tilted 11 degrees, deep dipole at
/// (7, 0, 5) mm tilted 68 degrees, both with unit amplitude. Angles are
/// measured in the x-z plane from +x.
pub fn make_ground_truth() -> GroundTruth {
    GroundTruth::with_amplitudes(1.0, 1.0)
}

impl GroundTruth {
    pub fn with_amplitudes(superficial: f64, deep: f64) -> GroundTruth {
        let sup = Point3::new(-5.0, 0.0, 77.0);
        let deep_pos = Point3::new(7.0, 0.0, 5.0);
        GroundTruth {
            dipoles: vec![
                Dipole {
                    position: sup,
                    moment: moment(11.0, superficial),
                },
                Dipole {
                    position: deep_pos,
                    moment: moment(68.0, deep),
                },
            ],
            roi_centers: vec![sup, deep_pos],
            roi_diameter: ROI_DIAMETER_MM,
        }
    }

    pub fn for_preset(p: &CasePreset) -> GroundTruth {
        GroundTruth::with_amplitudes(p.superficial_amplitude, p.deep_amplitude)
    }

    pub fn check_inside(&self, space: &SourceSpace) -> Result<()> {
        for (i, d) in self.dipoles.iter().enumerate() {
            if d.position.norm() > space.max_radius() {
                return Err(Error::Geometry(format!(
                    "dipole {i} lies outside the {} mm source ball",
                    space.max_radius()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    /// Noisy data scaled to unit max-abs entry.
    pub y: DVector<f64>,
    /// Factor applied to the noisy data.
    pub scale: f64,
    /// Noise standard deviation in the units of `y`.
    pub sigma_effective: f64,
    /// Source index each dipole was snapped to.
    pub snapped: Vec<usize>,
    pub snap_distances: Vec<f64>,
}

/// Source vector with every nonzero dipole placed at its nearest source position.
pub fn place_dipoles(space: &SourceSpace, truth: &GroundTruth) -> (DVector<f64>, Vec<usize>, Vec<f64>) {
    let mut x = DVector::zeros(space.dof());
    let mut idx = Vec::with_capacity(truth.dipoles.len());
    let mut dist = Vec::with_capacity(truth.dipoles.len());
    for d in &truth.dipoles {
        let (j, r) = space.nearest(&d.position);
        idx.push(j);
        dist.push(r);
        for a in 0..3 {
            x[3 * j + a] += d.moment[a];
        }
    }
    (x, idx, dist)
}

/// Clean forward signal plus Gaussian noise of std `noise_pct` percent of its
/// peak, then scaled so the largest absolute entry is exactly 1.
pub fn simulate_measurements(
    lf: &LeadField,
    space: &SourceSpace,
    truth: &GroundTruth,
    noise_pct: f64,
    rng_seed: u64,
) -> Result<SimulatedData> {
    if !(noise_pct >= 0.0 && noise_pct.is_finite()) {
        return Err(Error::param(format!("noise percentage must be non-negative, got {noise_pct}")));
    }
    truth.check_inside(space)?;
    let (x, snapped, snap_distances) = place_dipoles(space, truth);
    let clean = lf.apply(&x)?;
    let peak = clean.amax();
    if peak == 0.0 {
        return Err(Error::Degenerate("clean signal is identically zero".into()));
    }
    let std = noise_pct / 100.0 * peak;
    let mut noisy = clean;
    if std > 0.0 {
        let normal = Normal::new(0.0, std).map_err(|e| Error::param(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        for v in noisy.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let top = noisy.amax();
    if top == 0.0 || !top.is_finite() {
        return Err(Error::Degenerate("noisy signal has no finite nonzero entry".into()));
    }
    let y = noisy.map(|v| v / top);
    Ok(SimulatedData {
        y,
        scale: 1.0 / top,
        sigma_effective: std / top,
        snapped,
        snap_distances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiMetrics {
    /// Distance from the amplitude-weighted center of mass to the true position, mm.
    /// NaN when the ROI holds no amplitude.
    pub position_error: f64,
    /// Angle between the summed ROI moment and the true moment, degrees.
    pub angle_error: f64,
    /// `log10(|summed ROI moment| / true amplitude)`.
    pub log10_amplitude_error: f64,
    /// ROI peak amplitude over the global peak.
    pub relative_max: f64,
    pub detected: bool,
    pub position_defined: bool,
}

/// Metrics of the reconstruction `x` inside ROI `roi` of `truth`.
pub fn roi_metrics(x: &DVector<f64>, space: &SourceSpace, truth: &GroundTruth, roi: usize) -> Result<RoiMetrics> {
    if x.len() != space.dof() {
        return Err(Error::param(format!(
            "reconstruction has length {}, expected {}",
            x.len(),
            space.dof()
        )));
    }
    let (center, dipole) = match (truth.roi_centers.get(roi), truth.dipoles.get(roi)) {
        (Some(c), Some(d)) => (*c, d),
        _ => return Err(Error::param(format!("no ROI with index {roi}"))),
    };
    let radius = truth.roi_diameter / 2.0;
    let amps = amplitudes(x);
    let global = amps.iter().copied().fold(0.0, f64::max);

    let mut members = 0usize;
    let mut weight = 0.0;
    let mut com = Point3::zeros();
    let mut sum = Point3::zeros();
    let mut peak: f64 = 0.0;
    for (j, p) in space.positions().iter().enumerate() {
        if (p - center).norm() > radius {
            continue;
        }
        members += 1;
        let a = amps[j];
        weight += a;
        com += p * a;
        sum += Point3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2]);
        peak = peak.max(a);
    }
    if members == 0 {
        return Err(Error::Geometry(format!("ROI {roi} contains no source position")));
    }
    if weight == 0.0 {
        return Ok(RoiMetrics {
            position_error: f64::NAN,
            angle_error: f64::NAN,
            log10_amplitude_error: f64::NEG_INFINITY,
            relative_max: 0.0,
            detected: false,
            position_defined: false,
        });
    }
    let position_error = (com / weight - dipole.position).norm();
    let truth_amp = dipole.amplitude();
    let angle_error = if truth_amp > 0.0 && sum.norm() > 0.0 {
        (sum.dot(&dipole.moment) / (sum.norm() * truth_amp)).clamp(-1.0, 1.0).acos().to_degrees()
    } else {
        f64::NAN
    };
    let relative_max = if global > 0.0 { (peak / global).min(1.0) } else { 0.0 };
    Ok(RoiMetrics {
        position_error,
        angle_error,
        log10_amplitude_error: (sum.norm() / truth_amp).log10(),
        relative_max,
        detected: relative_max > DETECTION_THRESHOLD,
        position_defined: true,
    })
}

/// Sample with its median and 90% interval (5th and 95th percentiles).
///
/// Statistics use the finite entries only; percentiles interpolate linearly
/// between order statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSummary {
    pub sample: Vec<f64>,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            if lo == hi {
                sorted[lo]
            } else {
                sorted[lo] + frac * (sorted[hi] - sorted[lo])
            }
        }
    }
}

impl HistogramSummary {
    pub fn new(sample: Vec<f64>) -> Self {
        let mut finite: Vec<f64> = sample.iter().copied().filter(|v| v.is_finite()).collect();
        finite.sort_by(f64::total_cmp);
        HistogramSummary {
            median: percentile(&finite, 0.5),
            lower: percentile(&finite, 0.05),
            upper: percentile(&finite, 0.95),
            sample,
        }
    }

    /// `(bin center, count)` over the finite entries.
    pub fn histogram(&self, bins: usize) -> Vec<(f64, usize)> {
        histogram(self.sample.iter().copied(), bins)
    }
}

pub(crate) fn histogram(values: impl Iterator<Item = f64>, bins: usize) -> Vec<(f64, usize)> {
    let vals: Vec<f64> = values.filter(|v| v.is_finite()).collect();
    if vals.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, width) = if hi > lo {
        (lo, (hi - lo) / bins as f64)
    } else {
        (lo - 0.5, 1.0 / bins as f64)
    };
    let mut counts = vec![0usize; bins];
    for v in vals {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + (i as f64 + 0.5) * width, c))
        .collect()
}
