//! Source spaces, sensor layouts and analytic spherical-head lead fields.
//!
//! Positions are carried in millimeters, head-centered. Lead-field assembly
//! converts to SI internally so entries are volts (EEG) or tesla (MEG) per
//! ampere-meter of dipole moment.

mod eeg;
mod io;
mod leadfield;
mod meg;

use std::cmp::Ordering;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use eeg::{eeg_sphere_leadfield, EegSphere, DEFAULT_SERIES_TERMS, SERIES_TAIL_TOLERANCE};
pub use io::{load_leadfield, save_leadfield, save_leadfield_binary};
pub use leadfield::{combine_emeg, LeadField, Modality, Units};
pub use meg::{meg_radial_leadfield, MU0_OVER_4PI};

pub type Point3 = Vector3<f64>;

pub(crate) const MM_TO_M: f64 = 1e-3;

/// A cloud of `K` candidate source positions inside a ball.
///
/// Each position carries three unknowns, one per Cartesian axis, so the
/// source vector has length `3K` and entry `3j + a` belongs to position `j`
/// and axis `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpace {
    positions: Vec<Point3>,
    max_radius: f64,
}

impl SourceSpace {
    pub fn new(positions: Vec<Point3>, max_radius: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::param("source space needs at least one position"));
        }
        if !(max_radius > 0.0 && max_radius.is_finite()) {
            return Err(Error::param(format!("max_radius must be positive, got {max_radius}")));
        }
        for (i, p) in positions.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::Geometry(format!("source {i} has a non-finite coordinate")));
            }
            if p.norm() > max_radius {
                return Err(Error::Geometry(format!(
                    "source {i} at radius {:.6} mm lies outside the {max_radius} mm ball",
                    p.norm()
                )));
            }
        }
        let mut order: Vec<usize> = (0..positions.len()).collect();
        order.sort_by(|&a, &b| lexicographic(&positions[a], &positions[b]));
        if let Some(w) = order.windows(2).find(|w| positions[w[0]] == positions[w[1]]) {
            return Err(Error::Geometry(format!("sources {} and {} coincide", w[0], w[1])));
        }
        Ok(Self { positions, max_radius })
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn max_radius(&self) -> f64 {
        self.max_radius
    }

    /// Number of positions `K`.
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Length of the unknown vector, `3K`.
    pub fn dof(&self) -> usize {
        3 * self.positions.len()
    }

    /// Index of the position closest to `p` and its distance (ties go to the lower index).
    pub fn nearest(&self, p: &Point3) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, q) in self.positions.iter().enumerate() {
            let d = (q - p).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        (best.0, best.1.sqrt())
    }
}

fn lexicographic(a: &Point3, b: &Point3) -> Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.z.total_cmp(&b.z))
}

/// Draw `count` positions uniformly from the ball of radius `max_radius` (mm).
///
/// Directions come from normalized Gaussian triples and radii from the
/// cube-root transform, so the radial density is proportional to `r^2`.
pub fn generate_source_space(count: usize, max_radius: f64, rng_seed: u64) -> Result<SourceSpace> {
    if count == 0 {
        return Err(Error::param("source count must be positive"));
    }
    if !(max_radius > 0.0 && max_radius.is_finite()) {
        return Err(Error::param(format!("max_radius must be positive, got {max_radius}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut positions = Vec::with_capacity(count);
    while positions.len() < count {
        let dir = Point3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = dir.norm();
        if n < 1e-12 {
            continue;
        }
        let u: f64 = rng.random();
        let r = (max_radius * u.cbrt()).min(max_radius);
        positions.push(dir * (r / n));
    }
    SourceSpace::new(positions, max_radius)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SensorKind {
    Eeg,
    MegRadial,
}

/// EEG reference convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reference {
    /// Each lead-field column has its mean over electrodes removed.
    Average,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorArray {
    kind: SensorKind,
    locations: Vec<Point3>,
    reference: Option<Reference>,
}

impl SensorArray {
    pub fn new(kind: SensorKind, locations: Vec<Point3>) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::param("sensor array needs at least one location"));
        }
        if let Some(i) = locations.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Geometry(format!("sensor {i} has a non-finite coordinate")));
        }
        let reference = match kind {
            SensorKind::Eeg => Some(Reference::Average),
            SensorKind::MegRadial => None,
        };
        Ok(Self {
            kind,
            locations,
            reference,
        })
    }

    pub fn kind(&self) -> SensorKind {
        self.kind
    }

    pub fn locations(&self) -> &[Point3] {
        &self.locations
    }

    pub fn reference(&self) -> Option<Reference> {
        self.reference
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// The same angular layout pushed radially outward by `factor`.
    pub fn scaled(&self, factor: f64, kind: SensorKind) -> Result<SensorArray> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::param(format!("scale factor must be positive, got {factor}")));
        }
        SensorArray::new(kind, self.locations.iter().map(|p| p * factor).collect())
    }

    /// Fails unless every sensor lies strictly outside the ball holding `space`.
    pub fn check_outside(&self, space: &SourceSpace) -> Result<()> {
        for (i, p) in self.locations.iter().enumerate() {
            if p.norm() <= space.max_radius() {
                return Err(Error::Geometry(format!(
                    "sensor {i} at radius {:.6} mm is not outside the {} mm source ball",
                    p.norm(),
                    space.max_radius()
                )));
            }
        }
        Ok(())
    }
}

/// Quasi-uniform sensor layout on the upper hemisphere (`z >= 0`).
///
/// A Fibonacci lattice with equal-area bands in `z` starting at the pole, so a
/// single sensor sits at `(0, 0, radius)`. `source_radius` is the radius of
/// the source ball the sensors must clear.
pub fn build_upper_hemisphere_sensors(
    count: usize,
    radius: f64,
    kind: SensorKind,
    source_radius: f64,
) -> Result<SensorArray> {
    if count == 0 {
        return Err(Error::param("sensor count must be positive"));
    }
    if !(radius.is_finite() && radius > source_radius.max(0.0)) {
        return Err(Error::Geometry(format!(
            "sensor radius {radius} mm must exceed the source ball radius {source_radius} mm"
        )));
    }
    let golden_angle = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let locations = (0..count)
        .map(|i| {
            let z = 1.0 - i as f64 / count as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden_angle * i as f64;
            Point3::new(rho * phi.cos(), rho * phi.sin(), z) * radius
        })
        .collect();
    SensorArray::new(kind, locations)
}

/// A current dipole: position in mm, moment in arbitrary source units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dipole {
    pub position: Point3,
    pub moment: Point3,
}

impl Dipole {
    pub fn new(position: Point3, moment: Point3) -> Result<Self> {
        if !position.iter().chain(moment.iter()).all(|c| c.is_finite()) {
            return Err(Error::param("dipole position and moment must be finite"));
        }
        Ok(Self { position, moment })
    }

    pub fn amplitude(&self) -> f64 {
        self.moment.norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_space_stays_in_ball() {
        let space = generate_source_space(10_000, 87.0, 3).unwrap();
        assert_eq!(space.len(), 10_000);
        assert_eq!(space.dof(), 30_000);
        assert!(space.positions().iter().all(|p| p.norm() <= 87.0));
    }

    #[test]
    fn single_source() {
        let space = generate_source_space(1, 5.0, 0).unwrap();
        assert_eq!(space.len(), 1);
        assert!(space.positions()[0].norm() <= 5.0);
    }

    #[test]
    fn mean_radius_matches_histogram_expectation() {
        // Brute-force expectation of r under density 3r^2/R^3, by midpoint histogram.
        let bins = 100_000;
        let expected: f64 = (0..bins)
            .map(|i| {
                let r = (i as f64 + 0.5) / bins as f64;
                3.0 * r * r * r / bins as f64
            })
            .sum::<f64>()
            * 87.0;
        assert!((expected - 87.0 * 0.75).abs() < 1e-6);

        let space = generate_source_space(5000, 87.0, 11).unwrap();
        let radii: Vec<f64> = space.positions().iter().map(|p| p.norm()).collect();
        let mean = radii.iter().sum::<f64>() / radii.len() as f64;
        // sd of r is R*sqrt(3/5 - 9/16) ~= 0.1936 R
        let se = 0.1936 * 87.0 / (5000f64).sqrt();
        assert!((mean - expected).abs() < 4.0 * se, "mean {mean} vs {expected}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_source_space(100, 50.0, 9).unwrap();
        let b = generate_source_space(100, 50.0, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_source_space(100, 50.0, 10).unwrap());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(generate_source_space(0, 1.0, 0), Err(Error::Parameter(_))));
        assert!(matches!(generate_source_space(3, 0.0, 0), Err(Error::Parameter(_))));
        assert!(matches!(generate_source_space(3, -1.0, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn rejects_duplicate_and_outside_positions() {
        let p = Point3::new(1.0, 2.0, 3.0);
        assert!(matches!(SourceSpace::new(vec![p, Point3::zeros(), p], 10.0), Err(Error::Geometry(_))));
        assert!(matches!(SourceSpace::new(vec![Point3::new(0.0, 0.0, 11.0)], 10.0), Err(Error::Geometry(_))));
    }

    #[test]
    fn nearest_breaks_ties_low() {
        let space = SourceSpace::new(vec![Point3::new(-1.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)], 2.0).unwrap();
        assert_eq!(space.nearest(&Point3::zeros()).0, 0);
        assert_eq!(space.nearest(&Point3::new(0.9, 0.0, 0.0)).0, 1);
    }

    #[test]
    fn hemisphere_layout() {
        let eeg = build_upper_hemisphere_sensors(102, 100.0, SensorKind::Eeg, 87.0).unwrap();
        assert_eq!(eeg.len(), 102);
        for p in eeg.locations() {
            assert!((p.norm() - 100.0).abs() < 1e-12);
            assert!(p.z >= 0.0);
        }
        let meg = build_upper_hemisphere_sensors(102, 120.0, SensorKind::MegRadial, 87.0).unwrap();
        let scaled = eeg.scaled(1.2, SensorKind::MegRadial).unwrap();
        for (a, b) in meg.locations().iter().zip(scaled.locations()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert_eq!(meg.reference(), None);
        assert_eq!(eeg.reference(), Some(Reference::Average));
    }

    #[test]
    fn single_sensor_at_pole() {
        let s = build_upper_hemisphere_sensors(1, 100.0, SensorKind::Eeg, 87.0).unwrap();
        assert_eq!(s.locations()[0], Point3::new(0.0, 0.0, 100.0));
    }

    #[test]
    fn sensors_inside_ball_rejected() {
        assert!(matches!(
            build_upper_hemisphere_sensors(10, 80.0, SensorKind::Eeg, 87.0),
            Err(Error::Geometry(_))
        ));
        let space = generate_source_space(10, 87.0, 1).unwrap();
        let s = SensorArray::new(SensorKind::Eeg, vec![Point3::new(0.0, 0.0, 50.0)]).unwrap();
        assert!(s.check_outside(&space).is_err());
    }
}
