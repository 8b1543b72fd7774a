use nalgebra::DMatrix;

use super::{LeadField, Modality, Point3, SensorArray, SourceSpace, Units, MM_TO_M};
use crate::error::{Error, Result};

/// mu_0 / (4 pi) in T m / A.
pub const MU0_OVER_4PI: f64 = 1e-7;

/// Radial magnetometer lead field for a spherically symmetric conductor.
///
/// Volume currents do not contribute to the radial field component, so each
/// entry is `B_r = -(mu0/4pi) ((q x r0) . r_hat) / |r - r0|^3`, i.e. the radial
/// part of the primary dipole field. Dipoles parallel to their position
/// vector are silent.
pub fn meg_radial_leadfield(space: &SourceSpace, sensors: &SensorArray) -> Result<LeadField> {
    let m = sensors.len();
    let mut matrix = DMatrix::zeros(m, space.dof());
    for (j, src) in space.positions().iter().enumerate() {
        let r0 = src * MM_TO_M;
        for (i, sensor) in sensors.locations().iter().enumerate() {
            let r = sensor * MM_TO_M;
            let d = (r - r0).norm();
            if d == 0.0 {
                return Err(Error::Singularity(format!("sensor {i} coincides with source {j}")));
            }
            let r_hat = r / r.norm();
            // (q x r0) . r_hat = q . (r0 x r_hat)
            let g: Point3 = r0.cross(&r_hat) * (-MU0_OVER_4PI / (d * d * d));
            for a in 0..3 {
                matrix[(i, 3 * j + a)] = g[a];
            }
        }
    }
    sensors.check_outside(space)?;
    LeadField::new(matrix, Modality::Meg, Units::TeslaPerAm)
}
