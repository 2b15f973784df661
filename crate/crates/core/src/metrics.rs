//! Masked spectral metrics and their aggregation.
//!
//! The spectral angle is `scale * angle(pred, truth)` over masked positions,
//! with `scale = 1/pi` by default (so SA lies in [0, 0.5] for non-negative
//! vectors) or `2/pi` when configured. The angle is evaluated as
//! `2 * atan2(|u - v|, |u + v|)` on the unit vectors, which equals
//! `acos(u . v)` but stays accurate near 0 where `acos` loses half the digits.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ions::{valid_mask, CanonicalSpace, Mask};
use crate::peptide::{in_physical_scope, PtmBucket};
use crate::projection::CanonicalVector;
use crate::record::SpectrumRecord;

/// Standard deviation below which PCC is reported as 0.
pub const PCC_MIN_STD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaConvention {
    /// `acos(cos) / pi`, range [0, 0.5] for non-negative vectors.
    #[default]
    InversePi,
    /// `2 acos(cos) / pi`, range [0, 1] for non-negative vectors.
    TwoOverPi,
}

impl SaConvention {
    pub fn scale(self) -> f64 {
        match self {
            SaConvention::InversePi => 1.0 / PI,
            SaConvention::TwoOverPi => 2.0 / PI,
        }
    }

    /// SA of two orthogonal non-negative vectors.
    pub fn orthogonal(self) -> f64 {
        self.scale() * PI / 2.0
    }
}

fn check_pair(pred: &CanonicalVector, truth: &CanonicalVector) -> Result<()> {
    if pred.mask() != truth.mask() {
        return Err(Error::MaskMismatch);
    }
    Ok(())
}

/// Spectral angle over the positions set in `mask`.
///
/// When exactly one side is all-zero the result is the orthogonal value; when
/// both are all-zero it is 0.
pub fn spectral_angle_masked(pred: &[f64], truth: &[f64], mask: &Mask, convention: SaConvention) -> Result<f64> {
    if pred.len() != mask.len() || truth.len() != mask.len() {
        return Err(Error::MaskMismatch);
    }
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let norm = |v: &[f64]| mask.indices().map(|i| v[i] * v[i]).sum::<f64>().sqrt();
    let (np, nt) = (norm(pred), norm(truth));
    match (np > 0.0, nt > 0.0) {
        (false, false) => return Ok(0.0),
        (true, false) | (false, true) => return Ok(convention.orthogonal()),
        (true, true) => {}
    }
    let (mut diff, mut sum) = (0.0, 0.0);
    for i in mask.indices() {
        let u = pred[i] / np;
        let v = truth[i] / nt;
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    let angle = 2.0 * diff.sqrt().atan2(sum.sqrt());
    Ok((convention.scale() * angle).clamp(0.0, 2.0 * convention.orthogonal()))
}

pub fn spectral_angle(pred: &CanonicalVector, truth: &CanonicalVector, convention: SaConvention) -> Result<f64> {
    check_pair(pred, truth)?;
    spectral_angle_masked(pred.values(), truth.values(), pred.mask(), convention)
}

/// Pearson correlation over masked positions. Returns 0 when fewer than two
/// positions are valid or either side has standard deviation below 1e-8.
pub fn pcc_masked(pred: &[f64], truth: &[f64], mask: &Mask) -> Result<f64> {
    if pred.len() != mask.len() || truth.len() != mask.len() {
        return Err(Error::MaskMismatch);
    }
    let k = mask.count();
    if k < 2 {
        return Ok(0.0);
    }
    let n = k as f64;
    let mean = |v: &[f64]| mask.indices().map(|i| v[i]).sum::<f64>() / n;
    let (mp, mt) = (mean(pred), mean(truth));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in mask.indices() {
        let dx = pred[i] - mp;
        let dy = truth[i] - mt;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx / n).sqrt() < PCC_MIN_STD || (syy / n).sqrt() < PCC_MIN_STD {
        return Ok(0.0);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn pcc(pred: &CanonicalVector, truth: &CanonicalVector) -> Result<f64> {
    check_pair(pred, truth)?;
    pcc_masked(pred.values(), truth.values(), pred.mask())
}

/// Per-spectrum metrics plus the raw stratification keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub sa: f64,
    pub sas: f64,
    pub pcc: f64,
    pub k: usize,
    pub length: usize,
    pub charge: u8,
    pub ptm_bucket: PtmBucket,
    pub nce: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Sa,
    Sas,
    Pcc,
}

impl MetricKind {
    pub fn of(self, row: &MetricRow) -> f64 {
        match self {
            MetricKind::Sa => row.sa,
            MetricKind::Sas => row.sas,
            MetricKind::Pcc => row.pcc,
        }
    }
}

/// Scope check, mask check and metric computation for one spectrum.
pub fn evaluate_pair(
    record: &SpectrumRecord,
    pred: &CanonicalVector,
    truth: &CanonicalVector,
    space: &CanonicalSpace,
    convention: SaConvention,
) -> Result<MetricRow> {
    if !in_physical_scope(&record.peptide, record.charge) {
        return Err(Error::ScopeViolation(format!(
            "length {} charge {}",
            record.peptide.len(),
            record.charge
        )));
    }
    let mask = valid_mask(&record.peptide, record.charge, space);
    if pred.mask() != &mask || truth.mask() != &mask {
        return Err(Error::MaskMismatch);
    }
    let sa = spectral_angle(pred, truth, convention)?;
    Ok(MetricRow {
        sa,
        sas: 1.0 - sa,
        pcc: pcc(pred, truth)?,
        k: mask.count(),
        length: record.peptide.len(),
        charge: record.charge,
        ptm_bucket: record.peptide.ptm_bucket(),
        nce: record.nce,
    })
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    v
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Median with the mean-of-middle-two rule for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("median of no values"));
    }
    Ok(median_of_sorted(&sorted(values)))
}

/// Quantile with linear interpolation between order statistics (numpy's
/// default rule). `q` in [0, 1].
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("quantile of no values"));
    }
    Ok(quantile_of_sorted(&sorted(values), q))
}

fn quantile_of_sorted(sorted: &[f64], q: f64) -> f64 {
    let rank = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

pub fn aggregate_median(rows: &[MetricRow], kind: MetricKind) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no metric rows"));
    }
    let values: Vec<f64> = rows.iter().map(|r| kind.of(r)).collect();
    median(&values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 1000,
            level: 0.95,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    pub resamples: usize,
    pub level: f64,
}

/// Percentile bootstrap CI of the median.
///
/// Values are sorted first so the result depends only on the multiset of
/// inputs. Resample indices come from xoshiro256++ seeded via
/// `seed_from_u64(seed)` (SplitMix64 expansion) and drawn with
/// `Rng::random_range`; interval endpoints use the linear-interpolation
/// quantile at `(1 - level) / 2` and `(1 + level) / 2`.
pub fn bootstrap_ci(values: &[f64], config: &BootstrapConfig) -> Result<BootstrapCi> {
    if values.is_empty() {
        return Err(Error::EmptyInput("bootstrap of no values"));
    }
    if config.resamples == 0 {
        return Err(Error::Config("bootstrap needs at least one resample".into()));
    }
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(Error::Config(format!(
            "bootstrap level {} outside (0, 1)",
            config.level
        )));
    }
    let data = sorted(values);
    let n = data.len();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
    let mut sample = vec![0.0; n];
    let mut medians = Vec::with_capacity(config.resamples);
    for _ in 0..config.resamples {
        for slot in sample.iter_mut() {
            *slot = data[rng.random_range(0..n)];
        }
        medians.push(select_median(&mut sample));
    }
    medians.sort_unstable_by(f64::total_cmp);
    let tail = (1.0 - config.level) / 2.0;
    Ok(BootstrapCi {
        lo: quantile_of_sorted(&medians, tail),
        hi: quantile_of_sorted(&medians, 1.0 - tail),
        resamples: config.resamples,
        level: config.level,
    })
}

fn select_median(sample: &mut [f64]) -> f64 {
    let n = sample.len();
    let mid = n / 2;
    let (left, upper, _) = sample.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = left.iter().copied().max_by(f64::total_cmp).expect("n >= 2");
        (lower + upper) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ions::valid_mask_for;
    use crate::peptide::parse_modified_sequence;

    fn vector(values: Vec<f64>, mask: &Mask) -> CanonicalVector {
        CanonicalVector::from_masked(values, mask.clone()).unwrap()
    }

    fn mask7() -> Mask {
        valid_mask_for(7, 2, &CanonicalSpace::default())
    }

    #[test]
    fn sa_examples() {
        let mask = mask7();
        let ramp: Vec<f64> = (0..234).map(|i| (i % 5) as f64 + 1.0).collect();
        let v = vector(ramp.clone(), &mask);
        assert_eq!(spectral_angle(&v, &v, SaConvention::InversePi).unwrap(), 0.0);
        let scaled = vector(ramp.iter().map(|x| x * 3.5).collect(), &mask);
        assert!(spectral_angle(&v, &scaled, SaConvention::InversePi).unwrap() < 1e-12);

        let idx: Vec<usize> = mask.indices().collect();
        let mut a = vec![0.0; 234];
        let mut b = vec![0.0; 234];
        a[idx[0]] = 1.0;
        b[idx[1]] = 1.0;
        let (a, b) = (vector(a, &mask), vector(b, &mask));
        assert!((spectral_angle(&a, &b, SaConvention::InversePi).unwrap() - 0.5).abs() < 1e-15);
        assert!((spectral_angle(&a, &b, SaConvention::TwoOverPi).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sa_zero_conventions() {
        let mask = mask7();
        let zero = CanonicalVector::zeros(mask.clone());
        let v = vector(vec![1.0; 234], &mask);
        assert_eq!(spectral_angle(&zero, &zero, SaConvention::InversePi).unwrap(), 0.0);
        assert_eq!(spectral_angle(&zero, &v, SaConvention::InversePi).unwrap(), 0.5);
        assert_eq!(spectral_angle(&v, &zero, SaConvention::TwoOverPi).unwrap(), 1.0);
    }

    #[test]
    fn sa_errors() {
        let v = vector(vec![1.0; 234], &mask7());
        let w = vector(vec![1.0; 234], &valid_mask_for(8, 2, &CanonicalSpace::default()));
        assert!(matches!(
            spectral_angle(&v, &w, SaConvention::InversePi),
            Err(Error::MaskMismatch)
        ));
        let empty = CanonicalVector::zeros(Mask::none(234));
        assert!(matches!(
            spectral_angle(&empty, &empty, SaConvention::InversePi),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn sa_matches_acos_form_away_from_zero() {
        let mask = mask7();
        let a = vector((0..234).map(|i| ((i * 7) % 11) as f64).collect(), &mask);
        let b = vector((0..234).map(|i| ((i * 3) % 5) as f64).collect(), &mask);
        let dot: f64 = mask.indices().map(|i| a.values()[i] * b.values()[i]).sum();
        let na: f64 = a.masked_values().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.masked_values().map(|x| x * x).sum::<f64>().sqrt();
        let expected = (dot / (na * nb)).clamp(-1.0, 1.0).acos() / PI;
        let got = spectral_angle(&a, &b, SaConvention::InversePi).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn pcc_examples() {
        let mask = mask7();
        let ramp: Vec<f64> = (0..234).map(|i| (i % 5) as f64).collect();
        let v = vector(ramp.clone(), &mask);
        assert!((pcc(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        let constant = vector(vec![1.0; 234], &mask);
        assert_eq!(pcc(&v, &constant).unwrap(), 0.0);
        let max = v.masked_values().fold(0.0, f64::max);
        let reversed = vector(v.values().iter().map(|x| max - x).collect(), &mask);
        assert!((pcc(&reversed, &v).unwrap() + 1.0).abs() < 1e-12);
        let single = valid_mask_for(2, 1, &CanonicalSpace::default());
        let a = vector(vec![1.0; 234], &single);
        assert_eq!(pcc(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_pair_checks_scope_and_masks() {
        let space = CanonicalSpace::default();
        let record = SpectrumRecord::parse("PEPTIDEK", 2, 30.0).unwrap();
        let mask = valid_mask(&record.peptide, 2, &space);
        let v = vector((0..234).map(|i| (i % 3) as f64 + 0.5).collect(), &mask);
        let row = evaluate_pair(&record, &v, &v, &space, SaConvention::InversePi).unwrap();
        assert_eq!(row.sa, 0.0);
        assert!((row.pcc - 1.0).abs() < 1e-12);
        assert_eq!(row.k, mask.count());
        assert_eq!(row.sa + row.sas, 1.0);

        let long = SpectrumRecord::new(parse_modified_sequence(&"A".repeat(45)).unwrap(), 2, 30.0);
        assert!(matches!(
            evaluate_pair(&long, &v, &v, &space, SaConvention::InversePi),
            Err(Error::ScopeViolation(_))
        ));
        let other = vector(vec![1.0; 234], &valid_mask_for(9, 2, &space));
        assert!(matches!(
            evaluate_pair(&record, &other, &other, &space, SaConvention::InversePi),
            Err(Error::MaskMismatch)
        ));
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[0.1, 0.3, 0.2]).unwrap(), 0.2);
        assert!((median(&[0.1, 0.2]).unwrap() - 0.15).abs() < 1e-15);
        assert_eq!(median(&[0.7]).unwrap(), 0.7);
        assert!(median(&[]).is_err());
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.25).unwrap(), 1.75);
    }

    #[test]
    fn select_median_agrees_with_sort() {
        for n in 1..12 {
            let vals: Vec<f64> = (0..n).map(|i| ((i * 37) % 13) as f64).collect();
            let mut buf = vals.clone();
            assert_eq!(select_median(&mut buf), median(&vals).unwrap());
        }
    }

    #[test]
    fn bootstrap_examples() {
        let cfg = BootstrapConfig::default();
        let ci = bootstrap_ci(&[0.3; 50], &cfg).unwrap();
        assert_eq!((ci.lo, ci.hi), (0.3, 0.3));
        let vals: Vec<f64> = (0..200).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
        let a = bootstrap_ci(&vals, &cfg).unwrap();
        let b = bootstrap_ci(&vals, &cfg).unwrap();
        assert_eq!(a, b);
        let mut shuffled = vals.clone();
        shuffled.reverse();
        assert_eq!(bootstrap_ci(&shuffled, &cfg).unwrap(), a);
        assert!(a.lo <= a.hi);
        assert!(bootstrap_ci(&[], &cfg).is_err());
        assert!(bootstrap_ci(&vals, &BootstrapConfig { level: 1.0, ..cfg }).is_err());
    }
}
