//! Shared fixtures for the benchmarks.

use ramus_core::experiment::{simulate_measurements, GroundTruth};
use ramus_core::forward::{
    build_upper_hemisphere_sensors, eeg_sphere_leadfield, generate_source_space, LeadField, SensorKind, SourceSpace,
};
use ramus_core::nalgebra::DVector;

/// Spherical EEG problem with `sources` positions and `electrodes` sensors,
/// plus normalized two-dipole data and its noise level.
pub fn eeg_problem(sources: usize, electrodes: usize) -> (SourceSpace, LeadField, DVector<f64>, f64) {
    let space = generate_source_space(sources, 87.0, 2024).expect("source space");
    let sensors = build_upper_hemisphere_sensors(electrodes, 100.0, SensorKind::Eeg, 87.0).expect("sensors");
    let lf = eeg_sphere_leadfield(&space, &sensors, 0.33, 100.0, 300).expect("lead field");
    let sim = simulate_measurements(&lf, &space, &GroundTruth::with_amplitudes(5.0, 10.0), 3.0, 1).expect("data");
    (space, lf, sim.y, sim.sigma_effective)
}
