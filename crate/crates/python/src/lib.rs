//! Python bindings for `pepspec-core`.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pepspec_core::baseline::{self, BaselineConfig, BucketModel, TrainingExample};
use pepspec_core::ions::{enumerate_ions, valid_mask};
use pepspec_core::metrics::{bootstrap_ci, pcc_masked, spectral_angle_masked, BootstrapConfig};
use pepspec_core::projection::project_ground_truth;
use pepspec_core::splits::{self, SplitRule};
use pepspec_core::{CanonicalVector, IonId, IonType, Mask, ModifiedPeptide, RawSpectrum, SaConvention, SpectrumRecord};

create_exception!(pepspec, PepspecError, PyValueError);

fn err(e: pepspec_core::Error) -> PyErr {
    PepspecError::new_err(format!("{}: {e}", e.kind()))
}

fn convention(name: &str) -> PyResult<SaConvention> {
    match name.replace('-', "_").as_str() {
        "inverse_pi" => Ok(SaConvention::InversePi),
        "two_over_pi" => Ok(SaConvention::TwoOverPi),
        other => Err(PepspecError::new_err(format!("unknown SA convention '{other}'"))),
    }
}

fn ion_type(name: &str) -> PyResult<IonType> {
    match name {
        "b" | "B" => Ok(IonType::B),
        "y" | "Y" => Ok(IonType::Y),
        other => Err(PepspecError::new_err(format!("unknown ion type '{other}'"))),
    }
}

fn ion_tuple(ion: IonId) -> (usize, &'static str, u8) {
    let t = match ion.ion_type {
        IonType::B => "b",
        IonType::Y => "y",
    };
    (ion.position, t, ion.charge)
}

fn mask_from(bits: Vec<bool>, dim: usize) -> PyResult<Mask> {
    if bits.len() != dim {
        return Err(PepspecError::new_err(format!(
            "mask has {} entries, expected {dim}",
            bits.len()
        )));
    }
    Ok(Mask::from_bits(bits))
}

/// `(index, position, type, charge, mz)`.
type FragmentRow = (usize, usize, &'static str, u8, f64);

/// A validated peptide with its modifications.
#[pyclass(name = "Peptide", frozen)]
#[derive(Clone)]
struct PyPeptide(ModifiedPeptide);

#[pymethods]
impl PyPeptide {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        text.parse().map(Self).map_err(err)
    }

    #[getter]
    fn canonical(&self) -> String {
        self.0.to_canonical_string()
    }

    #[getter]
    fn naked(&self) -> String {
        self.0.to_naked()
    }

    #[getter]
    fn has_ptm(&self) -> bool {
        self.0.has_ptm()
    }

    #[getter]
    fn ptm_bucket(&self) -> &'static str {
        self.0.ptm_bucket().as_str()
    }

    #[getter]
    fn monoisotopic_mass(&self) -> f64 {
        self.0.monoisotopic_mass()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __str__(&self) -> String {
        self.0.to_canonical_string()
    }

    fn __repr__(&self) -> String {
        format!("Peptide('{}')", self.0)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

/// Fixed-length fragment-ion coordinate system.
#[pyclass(name = "CanonicalSpace", frozen)]
#[derive(Clone, Copy)]
struct PySpace(pepspec_core::CanonicalSpace);

#[pymethods]
impl PySpace {
    #[new]
    #[pyo3(signature = (l_ref = 40, z_frag_max = 3))]
    fn new(l_ref: usize, z_frag_max: u8) -> PyResult<Self> {
        pepspec_core::CanonicalSpace::new(l_ref, z_frag_max)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn index_of(&self, position: usize, ion_type: &str, charge: u8) -> PyResult<usize> {
        let ion = IonId {
            position,
            ion_type: self::ion_type(ion_type)?,
            charge,
        };
        self.0.index_of(ion).map_err(err)
    }

    /// `(position, "b" | "y", fragment charge)` at a canonical index.
    fn ion_at(&self, index: usize) -> PyResult<(usize, &'static str, u8)> {
        self.0.ion_at(index).map(ion_tuple).map_err(err)
    }

    fn valid_mask(&self, peptide: &PyPeptide, charge: u8) -> Vec<bool> {
        valid_mask(&peptide.0, charge, &self.0).bits().to_vec()
    }

    /// Valid ions in canonical order.
    fn fragment_ions(&self, peptide: &PyPeptide, charge: u8) -> PyResult<Vec<FragmentRow>> {
        enumerate_ions(&peptide.0, charge, &self.0)
            .into_iter()
            .map(|(ion, mz)| {
                let (p, t, z) = ion_tuple(ion);
                Ok((self.0.index_of(ion).map_err(err)?, p, t, z, mz))
            })
            .collect()
    }

    /// Canonical intensity vector of an observed spectrum, normalized to
    /// base peak 1 over the valid ions.
    fn project(&self, peptide: &PyPeptide, charge: u8, mz: Vec<f64>, intensity: Vec<f64>) -> PyResult<Vec<f64>> {
        let spectrum = RawSpectrum::new(mz, intensity).map_err(err)?;
        Ok(project_ground_truth(&spectrum, &peptide.0, charge, &self.0)
            .map_err(err)?
            .into_values())
    }

    fn __repr__(&self) -> String {
        format!(
            "CanonicalSpace(l_ref={}, z_frag_max={})",
            self.0.l_ref, self.0.z_frag_max
        )
    }
}

#[pyfunction]
fn parse_peptide(text: &str) -> PyResult<PyPeptide> {
    PyPeptide::new(text)
}

#[pyfunction]
#[pyo3(signature = (pred, truth, mask, convention = "inverse_pi"))]
fn spectral_angle(pred: Vec<f64>, truth: Vec<f64>, mask: Vec<bool>, convention: &str) -> PyResult<f64> {
    let mask = mask_from(mask, pred.len())?;
    spectral_angle_masked(&pred, &truth, &mask, self::convention(convention)?).map_err(err)
}

#[pyfunction]
fn pcc(pred: Vec<f64>, truth: Vec<f64>, mask: Vec<bool>) -> PyResult<f64> {
    let mask = mask_from(mask, pred.len())?;
    pcc_masked(&pred, &truth, &mask).map_err(err)
}

/// Percentile bootstrap interval of the median as `(lo, hi)`.
#[pyfunction]
#[pyo3(signature = (values, resamples = 1000, level = 0.95, seed = 42))]
fn bootstrap_median_ci(values: Vec<f64>, resamples: usize, level: f64, seed: u64) -> PyResult<(f64, f64)> {
    let ci = bootstrap_ci(&values, &BootstrapConfig { resamples, level, seed }).map_err(err)?;
    Ok((ci.lo, ci.hi))
}

#[pyfunction]
fn md5_bucket(key: &str) -> u8 {
    splits::md5_bucket(key)
}

/// `(label, bucket)` for one peptide under a split rule.
#[pyfunction]
#[pyo3(signature = (sequence, rule = "backbone"))]
fn assign_split(sequence: &str, rule: &str) -> PyResult<(&'static str, u8)> {
    let rule: SplitRule = rule.parse().map_err(err)?;
    let record = SpectrumRecord::parse(sequence, 2, 0.0).map_err(err)?;
    let a = splits::assign_split(&record, rule).map_err(err)?;
    Ok((a.label.as_str(), a.bucket))
}

#[pyfunction]
fn edit_distance(a: &str, b: &str) -> usize {
    splits::edit_distance(a, b)
}

#[pyfunction]
fn leakage_audit<'py>(py: Python<'py>, test: Vec<String>, train: Vec<String>) -> PyResult<Bound<'py, PyDict>> {
    let audit = py.allow_threads(|| splits::leakage_audit(&test, &train)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("n_test", audit.n_test)?;
    d.set_item("n_train", audit.n_train)?;
    d.set_item("mean_min_edit", audit.mean_min_edit)?;
    d.set_item("median_min_edit", audit.median_min_edit)?;
    d.set_item("frac_exact", audit.frac_exact)?;
    d.set_item("frac_le1", audit.frac_le1)?;
    Ok(d)
}

/// Per-bucket ridge baseline over flanking-residue features.
#[pyclass(name = "BaselineModel", frozen)]
struct PyBaseline(BucketModel);

#[pymethods]
impl PyBaseline {
    /// Trains from `(sequence, charge, nce, canonical_values)` tuples.
    #[staticmethod]
    #[pyo3(signature = (examples, space = None, min_bucket_count = 5, ridge_lambda = 1e-6))]
    fn train(
        py: Python<'_>,
        examples: Vec<(String, u8, f64, Vec<f64>)>,
        space: Option<PySpace>,
        min_bucket_count: usize,
        ridge_lambda: f64,
    ) -> PyResult<Self> {
        let space = space.map(|s| s.0).unwrap_or_default();
        let examples = examples
            .into_iter()
            .map(|(seq, charge, nce, values)| {
                let peptide: ModifiedPeptide = seq.parse().map_err(err)?;
                let mask = valid_mask(&peptide, charge, &space);
                let truth = CanonicalVector::from_masked(values, mask).map_err(err)?;
                Ok(TrainingExample {
                    peptide,
                    charge,
                    nce,
                    truth,
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        let config = BaselineConfig {
            min_bucket_count,
            ridge_lambda,
        };
        py.allow_threads(|| baseline::train(examples, &space, &config))
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        BucketModel::load(&path).map(Self).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(err)
    }

    #[getter]
    fn ce_grid(&self) -> Vec<f64> {
        self.0.ce_grid.clone()
    }

    #[getter]
    fn n_buckets(&self) -> usize {
        self.0.buckets.len()
    }

    fn ce_snap(&self, nce: f64) -> PyResult<f64> {
        self.0.ce_snap(nce).map_err(err)
    }

    fn predict(&self, peptide: &PyPeptide, charge: u8, nce: f64) -> PyResult<Vec<f64>> {
        self.0
            .predict(&peptide.0, charge, nce)
            .map(CanonicalVector::into_values)
            .map_err(err)
    }
}

#[pymodule]
fn pepspec(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PepspecError", m.py().get_type::<PepspecError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyPeptide>()?;
    m.add_class::<PySpace>()?;
    m.add_class::<PyBaseline>()?;
    m.add_function(wrap_pyfunction!(parse_peptide, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_angle, m)?)?;
    m.add_function(wrap_pyfunction!(pcc, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_median_ci, m)?)?;
    m.add_function(wrap_pyfunction!(md5_bucket, m)?)?;
    m.add_function(wrap_pyfunction!(assign_split, m)?)?;
    m.add_function(wrap_pyfunction!(edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(leakage_audit, m)?)?;
    Ok(())
}
