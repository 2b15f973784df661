//! Evaluation toolkit for peptide fragment-ion intensity prediction.
//!
//! Spectra and model outputs are projected into a fixed canonical b/y ion
//! space ([`ions::CanonicalSpace`], 234 dimensions by default) and compared
//! there with masked spectral-angle and Pearson metrics. Around that core
//! sit leakage-aware splitting, deterministic sampling, a trainable bucketed
//! least-squares baseline and robustness probes over collision energy and
//! precursor charge.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod baseline;
pub mod cli;
pub mod error;
pub mod io;
pub mod ions;
pub mod metrics;
pub mod peptide;
pub mod projection;
pub mod record;
pub mod splits;

pub use error::{Error, Result};
pub use ions::{CanonicalSpace, IonId, IonType, Mask};
pub use metrics::{MetricRow, SaConvention};
pub use peptide::{parse_modified_sequence, ModifiedPeptide, Ptm, PtmBucket};
pub use projection::{CanonicalVector, RawSpectrum};
pub use record::SpectrumRecord;
