use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::{LeadField, Modality, Point3, Reference, SensorArray, SourceSpace, Units, MM_TO_M};
use crate::error::{Error, Result};

pub const DEFAULT_SERIES_TERMS: usize = 100;

/// Relative size of the last retained series term above which a truncation
/// warning is logged.
pub const SERIES_TAIL_TOLERANCE: f64 = 1e-10;

/// Homogeneous conducting sphere with an insulating exterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EegSphere {
    /// S/m
    pub conductivity: f64,
    /// mm
    pub radius: f64,
    pub series_terms: usize,
}

impl Default for EegSphere {
    fn default() -> Self {
        Self {
            conductivity: 0.33,
            radius: 100.0,
            series_terms: DEFAULT_SERIES_TERMS,
        }
    }
}

/// Surface potential per unit moment, plus the relative size of the last term.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceGain {
    pub gain: Point3,
    pub tail: f64,
}

impl EegSphere {
    fn validate(&self) -> Result<()> {
        if !(self.conductivity > 0.0 && self.conductivity.is_finite()) {
            return Err(Error::param(format!("conductivity must be positive, got {}", self.conductivity)));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::param(format!("sphere radius must be positive, got {}", self.radius)));
        }
        if self.series_terms == 0 {
            return Err(Error::param("series_terms must be at least 1"));
        }
        Ok(())
    }

    /// Potential at `electrode` (on the surface) produced by a unit dipole at
    /// `source`, as a 3-vector `g` so that `V = g . q`. Not re-referenced.
    ///
    /// With `t = b/R` and `x = cos(gamma)` the potential is
    /// `(4 pi sigma R^2)^-1 sum_n (2n+1)/n t^(n-1) [n q_r P_n(x) + q_t cos(phi) P_n^1(x)]`.
    /// Writing `P_n^1 = sin(gamma) P_n'` turns the tangential part into
    /// `P_n'(x) q . (e - x r)`, which needs no division by `sin(gamma)`.
    pub fn surface_gain(&self, source: &Point3, electrode: &Point3) -> SurfaceGain {
        let b = source.norm();
        let e_hat = electrode / electrode.norm();
        let r_hat = if b > 0.0 { source / b } else { e_hat };
        let t = b / self.radius;
        let x = r_hat.dot(&e_hat).clamp(-1.0, 1.0);

        let (mut p_prev, mut p) = (1.0, x);
        let (mut dp_prev, mut dp) = (0.0, 1.0);
        let mut t_pow = 1.0;
        let (mut radial, mut tangential) = (0.0, 0.0);
        let (mut last_r, mut last_t) = (0.0, 0.0);
        for n in 1..=self.series_terms {
            let nf = n as f64;
            let w = (2.0 * nf + 1.0) * t_pow;
            last_r = w * p;
            last_t = w / nf * dp;
            radial += last_r;
            tangential += last_t;

            let p_next = ((2.0 * nf + 1.0) * x * p - nf * p_prev) / (nf + 1.0);
            let dp_next = dp_prev + (2.0 * nf + 1.0) * p;
            p_prev = p;
            p = p_next;
            dp_prev = dp;
            dp = dp_next;
            t_pow *= t;
        }

        let r_m = self.radius * MM_TO_M;
        let scale = 1.0 / (4.0 * PI * self.conductivity * r_m * r_m);
        let gain = (r_hat * radial + (e_hat - r_hat * x) * tangential) * scale;
        let denom = radial.abs() + tangential.abs();
        let tail = if denom > 0.0 {
            (last_r.abs() + last_t.abs()) / denom
        } else {
            0.0
        };
        SurfaceGain { gain, tail }
    }
}

/// EEG lead field of a homogeneous sphere, average referenced.
///
/// Column `3j + a` holds the electrode potentials of a unit dipole at source
/// `j` pointing along axis `a`.
pub fn eeg_sphere_leadfield(
    space: &SourceSpace,
    sensors: &SensorArray,
    conductivity: f64,
    sphere_radius: f64,
    series_terms: usize,
) -> Result<LeadField> {
    let model = EegSphere {
        conductivity,
        radius: sphere_radius,
        series_terms,
    };
    model.validate()?;
    for (j, p) in space.positions().iter().enumerate() {
        if p.norm() >= sphere_radius {
            return Err(Error::Geometry(format!(
                "source {j} at radius {:.6} mm is not strictly inside the {sphere_radius} mm sphere",
                p.norm()
            )));
        }
    }
    for (i, e) in sensors.locations().iter().enumerate() {
        if (e.norm() - sphere_radius).abs() > 1e-9 * sphere_radius {
            return Err(Error::Geometry(format!(
                "electrode {i} at radius {:.9} mm is not on the {sphere_radius} mm surface",
                e.norm()
            )));
        }
    }

    let m = sensors.len();
    let mut matrix = DMatrix::zeros(m, space.dof());
    let mut unconverged = 0usize;
    let mut worst_tail = 0.0f64;
    for (j, src) in space.positions().iter().enumerate() {
        for (i, e) in sensors.locations().iter().enumerate() {
            let SurfaceGain { gain, tail } = model.surface_gain(src, e);
            if tail > SERIES_TAIL_TOLERANCE {
                unconverged += 1;
                worst_tail = worst_tail.max(tail);
            }
            for a in 0..3 {
                matrix[(i, 3 * j + a)] = gain[a];
            }
        }
    }
    if unconverged > 0 {
        log::warn!(
            "Legendre series not converged for {unconverged} of {} source-electrode pairs \
             (worst last-term ratio {worst_tail:.3e} with {series_terms} terms)",
            m * space.len()
        );
    }

    if sensors.reference() == Some(Reference::Average) {
        for mut col in matrix.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
    }
    LeadField::new(matrix, Modality::Eeg, Units::VoltPerAm)
}
