//! FastSpel-style bucketed linear baseline.
//!
//! Training rows are grouped by (length, precursor charge, collision energy).
//! In buckets with at least `min_bucket_count` rows every valid ion gets a
//! least-squares model of its intensity on a one-hot encoding of the two
//! residues flanking the cleavage site (plus an intercept); smaller buckets
//! keep only the mean template. At prediction time the collision energy is
//! snapped to the nearest trained value (ties to the lower one), then
//! (length, charge) to the nearest trained combination at that energy.
//!
//! The normal equations are damped by `ridge_lambda * n_rows` and then
//! refined a few times against the undamped system (iterated Tikhonov), so
//! rank-deficient buckets stay solvable while consistent data is fitted to
//! machine precision.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::Predictor;
use crate::error::{Error, Result};
use crate::ions::{valid_mask, CanonicalSpace};
use crate::peptide::{in_physical_scope, AminoAcidTable, ModifiedPeptide};
use crate::projection::CanonicalVector;

pub const MODEL_FORMAT: &str = "pepspec-bucket-baseline";
pub const MODEL_VERSION: u32 = 1;
/// Intercept plus two 20-way one-hot blocks.
pub const N_FEATURES: usize = 41;
const REFINEMENT_STEPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub min_bucket_count: usize,
    pub ridge_lambda: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            min_bucket_count: 5,
            ridge_lambda: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketKey {
    pub length: usize,
    pub charge: u8,
    pub ce: f64,
}

impl BucketKey {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.length
            .cmp(&other.length)
            .then(self.charge.cmp(&other.charge))
            .then(self.ce.total_cmp(&other.ce))
    }
}

// BTreeMap key wrapper
#[derive(Debug, Clone, Copy)]
struct OrdKey(BucketKey);

impl PartialEq for OrdKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for OrdKey {}
impl PartialOrd for OrdKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.cmp_key(&other.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IonFit {
    /// Canonical index.
    pub index: usize,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub key: BucketKey,
    pub n_rows: usize,
    /// Mean training vector (canonical layout, zero outside the bucket mask).
    pub template: Vec<f64>,
    /// Per-ion least-squares fits; empty for template-only buckets.
    pub fits: Vec<IonFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketModel {
    pub format: String,
    pub version: u32,
    pub space: CanonicalSpace,
    pub config: BaselineConfig,
    /// Distinct trained collision energies, ascending.
    pub ce_grid: Vec<f64>,
    pub buckets: Vec<Bucket>,
}

#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub peptide: ModifiedPeptide,
    pub charge: u8,
    pub nce: f64,
    pub truth: CanonicalVector,
}

fn residue_slot(residue: u8) -> usize {
    AminoAcidTable::STANDARD_RESIDUES
        .iter()
        .position(|&r| r == residue)
        .expect("validated residue")
}

/// Feature vector for the cleavage after residue `position` (1-based).
fn features(residues: &[u8], position: usize) -> [f64; N_FEATURES] {
    let mut x = [0.0; N_FEATURES];
    x[0] = 1.0;
    x[1 + residue_slot(residues[position - 1])] = 1.0;
    x[21 + residue_slot(residues[position])] = 1.0;
    x
}

struct Row {
    residues: Vec<u8>,
    values: Vec<f64>,
}

pub fn train(
    examples: impl IntoIterator<Item = TrainingExample>,
    space: &CanonicalSpace,
    config: &BaselineConfig,
) -> Result<BucketModel> {
    if config.min_bucket_count == 0 || !(config.ridge_lambda > 0.0) {
        return Err(Error::Config(
            "baseline needs min_bucket_count >= 1 and ridge_lambda > 0".into(),
        ));
    }
    let mut groups: BTreeMap<OrdKey, Vec<Row>> = BTreeMap::new();
    for ex in examples {
        if !in_physical_scope(&ex.peptide, ex.charge) {
            return Err(Error::ScopeViolation(ex.peptide.to_canonical_string()));
        }
        if !ex.nce.is_finite() {
            return Err(Error::Config(format!("non-finite collision energy for {}", ex.peptide)));
        }
        if ex.truth.mask() != &valid_mask(&ex.peptide, ex.charge, space) {
            return Err(Error::MaskMismatch);
        }
        let key = BucketKey {
            length: ex.peptide.len(),
            charge: ex.charge,
            ce: ex.nce,
        };
        groups.entry(OrdKey(key)).or_default().push(Row {
            residues: ex.peptide.residues().to_vec(),
            values: ex.truth.into_values(),
        });
    }
    if groups.is_empty() {
        return Err(Error::EmptyTraining);
    }

    let mut ce_grid: Vec<f64> = groups.keys().map(|k| k.0.ce).collect();
    ce_grid.sort_unstable_by(f64::total_cmp);
    ce_grid.dedup();

    let groups: Vec<(BucketKey, Vec<Row>)> = groups.into_iter().map(|(k, v)| (k.0, v)).collect();
    let buckets = groups
        .into_par_iter()
        .map(|(key, rows)| fit_bucket(key, rows, space, config))
        .collect();

    Ok(BucketModel {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        space: *space,
        config: *config,
        ce_grid,
        buckets,
    })
}

fn fit_bucket(key: BucketKey, mut rows: Vec<Row>, space: &CanonicalSpace, config: &BaselineConfig) -> Bucket {
    // fixed summation order makes the fit independent of input order
    rows.sort_by(|a, b| {
        a.residues.cmp(&b.residues).then_with(|| {
            a.values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
    });
    let n = rows.len();
    let mask = crate::ions::valid_mask_for(key.length, key.charge, space);

    let mut template = vec![0.0; space.dim()];
    for row in &rows {
        for i in mask.indices() {
            template[i] += row.values[i];
        }
    }
    for v in &mut template {
        *v = (*v / n as f64).max(0.0);
    }

    let mut fits = Vec::new();
    if n >= config.min_bucket_count {
        let mut by_position: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in mask.indices() {
            let ion = space.ion_at(i).expect("mask index");
            by_position.entry(ion.position).or_default().push(i);
        }
        for (position, indices) in by_position {
            let mut gram = DMatrix::<f64>::zeros(N_FEATURES, N_FEATURES);
            let mut rhs = DMatrix::<f64>::zeros(N_FEATURES, indices.len());
            for row in &rows {
                let x = DVector::from_row_slice(&features(&row.residues, position));
                gram.ger(1.0, &x, &x, 1.0);
                for (c, &i) in indices.iter().enumerate() {
                    let y = row.values[i];
                    if y != 0.0 {
                        let mut col = rhs.column_mut(c);
                        col.axpy(y, &x, 1.0);
                    }
                }
            }
            let Some(beta) = solve_refined(&gram, &rhs, config.ridge_lambda * n as f64) else {
                fits.clear();
                break;
            };
            for (c, &i) in indices.iter().enumerate() {
                fits.push(IonFit {
                    index: i,
                    coefficients: beta.column(c).iter().copied().collect(),
                });
            }
        }
        fits.sort_by_key(|f| f.index);
    }

    Bucket {
        key,
        n_rows: n,
        template,
        fits,
    }
}

/// Solves `gram * beta = rhs` through `(gram + damping I)` with iterative
/// refinement against the undamped system.
fn solve_refined(gram: &DMatrix<f64>, rhs: &DMatrix<f64>, damping: f64) -> Option<DMatrix<f64>> {
    let mut damped = gram.clone();
    for d in 0..damped.nrows() {
        damped[(d, d)] += damping;
    }
    let chol = damped.cholesky()?;
    let mut beta = chol.solve(rhs);
    for _ in 0..REFINEMENT_STEPS {
        let residual = rhs - gram * &beta;
        beta += chol.solve(&residual);
    }
    Some(beta)
}

impl BucketModel {
    /// Nearest trained collision energy; ties go to the lower value.
    pub fn ce_snap(&self, query: f64) -> Result<f64> {
        let mut best: Option<f64> = None;
        for &ce in &self.ce_grid {
            best = match best {
                None => Some(ce),
                Some(b) if (query - ce).abs() < (query - b).abs() => Some(ce),
                keep => keep,
            };
        }
        best.ok_or(Error::EmptyModel)
    }

    /// Bucket used for a query: CE snapped first, then nearest (length,
    /// charge) by `(|dL|, |dz|)`, ties to the smaller length and charge.
    pub fn select_bucket(&self, length: usize, charge: u8, nce: f64) -> Result<&Bucket> {
        let ce = self.ce_snap(nce)?;
        self.buckets
            .iter()
            .filter(|b| b.key.ce == ce)
            .min_by_key(|b| {
                (
                    b.key.length.abs_diff(length),
                    b.key.charge.abs_diff(charge),
                    b.key.length,
                    b.key.charge,
                )
            })
            .ok_or(Error::EmptyModel)
    }

    pub fn predict(&self, peptide: &ModifiedPeptide, charge: u8, nce: f64) -> Result<CanonicalVector> {
        let bucket = self.select_bucket(peptide.len(), charge, nce)?;
        let mask = valid_mask(peptide, charge, &self.space);
        let mut values = vec![0.0; self.space.dim()];
        if bucket.fits.is_empty() {
            for i in mask.indices() {
                values[i] = bucket.template[i];
            }
        } else {
            let residues = peptide.residues();
            let mut fits = bucket.fits.iter().peekable();
            for i in mask.indices() {
                while fits.next_if(|f| f.index < i).is_some() {}
                if let Some(fit) = fits.next_if(|f| f.index == i) {
                    let ion = self.space.ion_at(i).expect("mask index");
                    let x = features(residues, ion.position);
                    values[i] = fit.coefficients.iter().zip(x).map(|(b, x)| b * x).sum();
                }
            }
        }
        CanonicalVector::from_masked(values, mask)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: BucketModel = serde_json::from_str(text)?;
        if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format {} v{}",
                model.format, model.version
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn ce_snap(query: f64, model: &BucketModel) -> Result<f64> {
    model.ce_snap(query)
}

pub fn predict(peptide: &ModifiedPeptide, charge: u8, nce: f64, model: &BucketModel) -> Result<CanonicalVector> {
    model.predict(peptide, charge, nce)
}

impl Predictor for BucketModel {
    fn predict(&self, peptide: &ModifiedPeptide, charge: u8, nce: f64) -> Result<CanonicalVector> {
        BucketModel::predict(self, peptide, charge, nce)
    }
}
