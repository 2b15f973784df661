use crate::error::{Error, Result};
use crate::peptide::{parse_modified_sequence, ModifiedPeptide};
use crate::projection::RawSpectrum;

/// One row of a spectral table.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRecord {
    pub peptide: ModifiedPeptide,
    pub charge: u8,
    /// Normalized collision energy as given in the table.
    pub nce: f64,
    pub spectrum: RawSpectrum,
    pub raw_file: Option<String>,
    pub andromeda_score: Option<f64>,
    pub mass_error_ppm: Option<f64>,
    pub split: Option<String>,
    pub sample_key: Option<String>,
    /// Zero-based data row index within the source table.
    pub row_index: Option<u64>,
}

impl SpectrumRecord {
    pub fn new(peptide: ModifiedPeptide, charge: u8, nce: f64) -> Self {
        Self {
            peptide,
            charge,
            nce,
            spectrum: RawSpectrum::default(),
            raw_file: None,
            andromeda_score: None,
            mass_error_ppm: None,
            split: None,
            sample_key: None,
            row_index: None,
        }
    }

    pub fn parse(sequence: &str, charge: u8, nce: f64) -> Result<Self> {
        Ok(Self::new(parse_modified_sequence(sequence)?, charge, nce))
    }

    pub fn with_spectrum(mut self, mz: Vec<f64>, intensity: Vec<f64>) -> Result<Self> {
        self.spectrum = RawSpectrum::new(mz, intensity)?;
        Ok(self)
    }

    pub fn naked(&self) -> String {
        self.peptide.to_naked()
    }

    pub fn length(&self) -> usize {
        self.peptide.len()
    }

    /// Identity used by row-level splitting: `sample_key|row_index`, or
    /// whichever of the two is present.
    pub fn row_identity(&self) -> Result<String> {
        match (&self.sample_key, self.row_index) {
            (Some(key), Some(idx)) => Ok(format!("{key}|{idx}")),
            (Some(key), None) => Ok(key.clone()),
            (None, Some(idx)) => Ok(idx.to_string()),
            (None, None) => Err(Error::MissingKeyColumn),
        }
    }
}
