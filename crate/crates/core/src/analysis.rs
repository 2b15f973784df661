//! Stratified reporting and physical-sensitivity probes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    bootstrap_ci, median, quantile, spectral_angle, BootstrapCi, BootstrapConfig, MetricRow, SaConvention,
};
use crate::peptide::{ModifiedPeptide, PtmBucket};
use crate::projection::CanonicalVector;

/// SAS above which two predictions count as effectively identical.
pub const HIGH_SAS_THRESHOLD: f64 = 0.90;

/// Anything that maps (peptide, precursor charge, NCE) to a canonical vector.
pub trait Predictor: Sync {
    fn predict(&self, peptide: &ModifiedPeptide, charge: u8, nce: f64) -> Result<CanonicalVector>;
}

/// Adapts a closure into a [`Predictor`].
pub struct FnPredictor<F>(pub F);

impl<F> Predictor for FnPredictor<F>
where
    F: Fn(&ModifiedPeptide, u8, f64) -> Result<CanonicalVector> + Sync,
{
    fn predict(&self, peptide: &ModifiedPeptide, charge: u8, nce: f64) -> Result<CanonicalVector> {
        (self.0)(peptide, charge, nce)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub peptide: ModifiedPeptide,
    pub charge: u8,
    pub nce: f64,
}

/// A query paired with its fixed ground-truth vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub query: Query,
    pub truth: CanonicalVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratAxis {
    LengthBin,
    Charge,
    PtmType,
    NceBin,
}

impl std::str::FromStr for StratAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "length" | "length_bin" => Ok(StratAxis::LengthBin),
            "charge" => Ok(StratAxis::Charge),
            "ptm" | "ptm_type" => Ok(StratAxis::PtmType),
            "nce" | "nce_bin" => Ok(StratAxis::NceBin),
            other => Err(Error::Config(format!("unknown stratification axis '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratConfig {
    /// Ascending length bin edges; bins are half-open except the last,
    /// which includes its right edge.
    pub length_edges: Vec<usize>,
    /// NCE bin width on the fractional scale (values above 1 are read as
    /// percentages and divided by 100 before binning).
    pub nce_bin_width: f64,
}

impl Default for StratConfig {
    fn default() -> Self {
        Self {
            length_edges: vec![6, 10, 15, 20, 25, 40],
            nce_bin_width: 0.05,
        }
    }
}

impl StratConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length_edges.len() < 2 || self.length_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "length_edges must be at least two strictly increasing values".into(),
            ));
        }
        if !(self.nce_bin_width > 0.0) {
            return Err(Error::Config("nce_bin_width must be positive".into()));
        }
        Ok(())
    }

    /// (sort order, label) of the length bin containing `length`.
    pub fn length_bin(&self, length: usize) -> (i64, String) {
        let edges = &self.length_edges;
        let last = edges.len() - 1;
        if length < edges[0] {
            return (-1, format!("<{}", edges[0]));
        }
        for k in 0..last {
            let closed = k + 1 == last;
            if length < edges[k + 1] || (closed && length == edges[k + 1]) {
                let right = if closed { ']' } else { ')' };
                return (k as i64, format!("[{},{}{right}", edges[k], edges[k + 1]));
            }
        }
        (last as i64, format!(">{}", edges[last]))
    }

    pub fn nce_bin(&self, nce: f64) -> (i64, String) {
        let frac = if nce > 1.0 { nce / 100.0 } else { nce };
        let w = self.nce_bin_width;
        let idx = (frac / w + 1e-9).floor() as i64;
        (idx, format!("[{:.2},{:.2})", idx as f64 * w, (idx + 1) as f64 * w))
    }

    fn stratum(&self, row: &MetricRow, axis: StratAxis) -> (i64, String) {
        match axis {
            StratAxis::LengthBin => self.length_bin(row.length),
            StratAxis::Charge => (row.charge as i64, row.charge.to_string()),
            StratAxis::PtmType => {
                let order = PtmBucket::ALL.iter().position(|&b| b == row.ptm_bucket).unwrap_or(0);
                (order as i64, row.ptm_bucket.to_string())
            }
            StratAxis::NceBin => self.nce_bin(row.nce),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratRow {
    pub stratum: String,
    pub n: usize,
    pub median_sa: f64,
    pub median_sas: f64,
    pub median_pcc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sa_ci: Option<BootstrapCi>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratTable {
    pub axis: StratAxis,
    pub rows: Vec<StratRow>,
}

impl StratTable {
    pub fn get(&self, stratum: &str) -> Option<&StratRow> {
        self.rows.iter().find(|r| r.stratum == stratum)
    }
}

/// Per-stratum medians (and optionally a bootstrap CI of median SA). Empty
/// strata are omitted; rows come out in natural stratum order.
pub fn stratify(
    rows: &[MetricRow],
    axis: StratAxis,
    config: &StratConfig,
    bootstrap: Option<&BootstrapConfig>,
) -> Result<StratTable> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no metric rows to stratify"));
    }
    config.validate()?;
    let mut groups: std::collections::BTreeMap<(i64, String), Vec<&MetricRow>> = Default::default();
    for row in rows {
        groups.entry(config.stratum(row, axis)).or_default().push(row);
    }
    let rows = groups
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|((_, stratum), members)| {
            let col = |f: fn(&MetricRow) -> f64| members.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let sa = col(|r| r.sa);
            Ok(StratRow {
                stratum,
                n: members.len(),
                median_sa: median(&sa)?,
                median_sas: median(&col(|r| r.sas))?,
                median_pcc: median(&col(|r| r.pcc))?,
                sa_ci: bootstrap.map(|b| bootstrap_ci(&sa, b)).transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StratTable { axis, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub stratum: String,
    pub delta_sa: f64,
    pub delta_pcc: f64,
}

/// Median SA and PCC of each stratum relative to `baseline`.
pub fn delta_decay(table: &StratTable, baseline: &str) -> Result<Vec<DecayPoint>> {
    let base = table
        .get(baseline)
        .ok_or_else(|| Error::MissingBaselineBin(baseline.to_string()))?;
    Ok(table
        .rows
        .iter()
        .map(|r| DecayPoint {
            stratum: r.stratum.clone(),
            delta_sa: r.median_sa - base.median_sa,
            delta_pcc: r.median_pcc - base.median_pcc,
        })
        .collect())
}

fn sa_at_nce(predictor: &dyn Predictor, items: &[EvalItem], nce: f64, convention: SaConvention) -> Result<Vec<f64>> {
    items
        .par_iter()
        .map(|item| {
            let pred = predictor.predict(&item.query.peptide, item.query.charge, nce)?;
            spectral_angle(&pred, &item.truth, convention)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcePoint {
    pub nce: f64,
    pub median_sa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NceCurve {
    pub points: Vec<NcePoint>,
    /// Grid NCE with the lowest median SA (ties to the lowest NCE).
    pub argmin: f64,
}

/// Median SA against fixed ground truth with every record's NCE overridden
/// by each grid value in turn.
pub fn nce_calibration_sweep(
    predictor: &dyn Predictor,
    items: &[EvalItem],
    grid: &[f64],
    convention: SaConvention,
) -> Result<NceCurve> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("empty NCE grid"));
    }
    if items.is_empty() {
        return Err(Error::EmptyInput("no records for NCE sweep"));
    }
    let mut sorted_grid = grid.to_vec();
    sorted_grid.sort_unstable_by(f64::total_cmp);
    sorted_grid.dedup();
    let points = sorted_grid
        .iter()
        .map(|&nce| {
            Ok(NcePoint {
                nce,
                median_sa: median(&sa_at_nce(predictor, items, nce, convention)?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let argmin = points
        .iter()
        .fold(None::<&NcePoint>, |best, p| match best {
            Some(b) if b.median_sa <= p.median_sa => Some(b),
            _ => Some(p),
        })
        .expect("non-empty grid")
        .nce;
    Ok(NceCurve { points, argmin })
}

/// Median SA at NCE `to` minus median SA at NCE `from`.
pub fn blind_nce_shift(
    predictor: &dyn Predictor,
    items: &[EvalItem],
    from: f64,
    to: f64,
    convention: SaConvention,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyInput("no records for NCE shift"));
    }
    let at_from = median(&sa_at_nce(predictor, items, from, convention)?)?;
    if from == to {
        return Ok(0.0);
    }
    Ok(median(&sa_at_nce(predictor, items, to, convention)?)? - at_from)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeSummary {
    pub n: usize,
    pub median_sas: f64,
    pub q25_sas: f64,
    pub q75_sas: f64,
    /// Fraction with SAS strictly above `threshold`.
    pub high_sas_fraction: f64,
    pub threshold: f64,
}

/// SAS between each peptide's prediction at charge 2 and at forced charge
/// 3, both compared on the charge-2 mask. Queries at other charges are
/// ignored.
pub fn charge_sas_values(predictor: &dyn Predictor, queries: &[Query], convention: SaConvention) -> Result<Vec<f64>> {
    queries
        .par_iter()
        .filter(|q| q.charge == 2)
        .map(|q| {
            let at2 = predictor.predict(&q.peptide, 2, q.nce)?;
            let at3 = predictor.predict(&q.peptide, 3, q.nce)?.remask(at2.mask())?;
            Ok(1.0 - spectral_angle(&at2, &at3, convention)?)
        })
        .collect()
}

pub fn charge_perturbation(
    predictor: &dyn Predictor,
    queries: &[Query],
    convention: SaConvention,
) -> Result<ChargeSummary> {
    let sas = charge_sas_values(predictor, queries, convention)?;
    summarize_charge_sas(&sas, HIGH_SAS_THRESHOLD)
}

pub fn summarize_charge_sas(sas: &[f64], threshold: f64) -> Result<ChargeSummary> {
    if sas.is_empty() {
        return Err(Error::EmptyInput("no charge-2 records"));
    }
    Ok(ChargeSummary {
        n: sas.len(),
        median_sas: median(sas)?,
        q25_sas: quantile(sas, 0.25)?,
        q75_sas: quantile(sas, 0.75)?,
        high_sas_fraction: sas.iter().filter(|&&s| s > threshold).count() as f64 / sas.len() as f64,
        threshold,
    })
}
