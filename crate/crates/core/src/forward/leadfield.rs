use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Eeg,
    Meg,
    Combined,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Eeg => "EEG",
            Modality::Meg => "MEG",
            Modality::Combined => "COMBINED",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "EEG" => Ok(Modality::Eeg),
            "MEG" => Ok(Modality::Meg),
            "COMBINED" => Ok(Modality::Combined),
            other => Err(Error::param(format!("unknown modality {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    /// Volts per ampere-meter.
    VoltPerAm,
    /// Tesla per ampere-meter.
    TeslaPerAm,
    /// Rescaled; absolute units no longer meaningful.
    Arbitrary,
}

/// Gain matrix from the `3K` source unknowns to `m` sensor readings.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadField {
    matrix: DMatrix<f64>,
    modality: Modality,
    units: Units,
}

impl LeadField {
    pub fn new(matrix: DMatrix<f64>, modality: Modality, units: Units) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::param("lead field must be non-empty"));
        }
        if !matrix.ncols().is_multiple_of(3) {
            return Err(Error::param(format!(
                "lead field has {} columns, not a multiple of 3",
                matrix.ncols()
            )));
        }
        if let Some(k) = matrix.iter().position(|v| !v.is_finite()) {
            let (r, c) = (k % matrix.nrows(), k / matrix.nrows());
            return Err(Error::Numerical(format!("non-finite lead field entry at ({r}, {c})")));
        }
        Ok(Self {
            matrix,
            modality,
            units,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn units(&self) -> Units {
        self.units
    }

    /// Sensor count `m`.
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Unknown count `3K`.
    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn positions(&self) -> usize {
        self.matrix.ncols() / 3
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.norm()
    }

    /// Sensor readings for the source vector `x`.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.cols() {
            return Err(Error::param(format!(
                "source vector has length {}, lead field expects {}",
                x.len(),
                self.cols()
            )));
        }
        Ok(&self.matrix * x)
    }
}

/// Stack EEG and MEG into one system with the MEG block rescaled to the EEG
/// Frobenius norm. The MEG data is scaled by the same factor; EEG rows come first.
pub fn combine_emeg(
    eeg: &LeadField,
    meg: &LeadField,
    eeg_data: &DVector<f64>,
    meg_data: &DVector<f64>,
) -> Result<(LeadField, DVector<f64>)> {
    if eeg.cols() != meg.cols() {
        return Err(Error::param(format!(
            "EEG has {} columns but MEG has {}",
            eeg.cols(),
            meg.cols()
        )));
    }
    if eeg_data.len() != eeg.rows() || meg_data.len() != meg.rows() {
        return Err(Error::param("data length does not match lead-field rows"));
    }
    let meg_norm = meg.frobenius_norm();
    if meg_norm == 0.0 {
        return Err(Error::Degenerate("MEG lead field has zero Frobenius norm".into()));
    }
    let factor = eeg.frobenius_norm() / meg_norm;

    let (m_e, m_m, n) = (eeg.rows(), meg.rows(), eeg.cols());
    let mut stacked = DMatrix::zeros(m_e + m_m, n);
    stacked.rows_mut(0, m_e).copy_from(eeg.matrix());
    stacked.rows_mut(m_e, m_m).copy_from(&(meg.matrix() * factor));

    let mut data = DVector::zeros(m_e + m_m);
    data.rows_mut(0, m_e).copy_from(eeg_data);
    data.rows_mut(m_e, m_m).copy_from(&(meg_data * factor));

    Ok((LeadField::new(stacked, Modality::Combined, Units::Arbitrary)?, data))
}
