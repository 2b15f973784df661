//! Deterministic, leakage-aware partitioning and sampling.
//!
//! Hashing conventions (all frozen, all golden-tested):
//! - bucket = MD5(key as UTF-8) read as a big-endian `u128`, modulo 100;
//!   buckets 0-79 are train, 80-89 validation, 90-99 test.
//! - sampling keys hash `naked|charge|ce|seed` (CE rendered with three
//!   decimals) or, for the OOD ranking key, `naked|charge|seed`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use md5::{Digest, Md5};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::peptide::PtmBucket;
use crate::record::SpectrumRecord;

pub const DEFAULT_SEED: u64 = 42;
pub const TRAIN_BUCKET_END: u8 = 80;
pub const VAL_BUCKET_END: u8 = 90;

pub fn md5_digest(bytes: &[u8]) -> [u8; 16] {
    Md5::digest(bytes).into()
}

/// MD5 of `key` as a big-endian integer, modulo 100.
pub fn md5_bucket(key: &str) -> u8 {
    (u128::from_be_bytes(md5_digest(key.as_bytes())) % 100) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLabel {
    Train,
    Val,
    Test,
}

impl SplitLabel {
    pub const ALL: [SplitLabel; 3] = [SplitLabel::Train, SplitLabel::Val, SplitLabel::Test];

    pub fn from_bucket(bucket: u8) -> SplitLabel {
        if bucket < TRAIN_BUCKET_END {
            SplitLabel::Train
        } else if bucket < VAL_BUCKET_END {
            SplitLabel::Val
        } else {
            SplitLabel::Test
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SplitLabel::Train => "train",
            SplitLabel::Val => "val",
            SplitLabel::Test => "test",
        }
    }
}

impl fmt::Display for SplitLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(SplitLabel::Train),
            "val" | "valid" | "validation" => Ok(SplitLabel::Val),
            "test" => Ok(SplitLabel::Test),
            other => Err(Error::Config(format!("unknown split label '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitRule {
    /// Hash of the naked sequence; guarantees backbone disjointness.
    #[default]
    Backbone,
    /// Hash of the canonical modified sequence.
    ModifiedSequence,
    /// Hash of the row identity (`sample_key|row_index`).
    RowRandom,
}

impl FromStr for SplitRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "backbone" => Ok(SplitRule::Backbone),
            "modified-sequence" => Ok(SplitRule::ModifiedSequence),
            "row-random" | "random" => Ok(SplitRule::RowRandom),
            other => Err(Error::Config(format!("unknown split rule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub label: SplitLabel,
    pub bucket: u8,
    pub rule: SplitRule,
}

/// The string hashed by each rule.
pub fn split_key(record: &SpectrumRecord, rule: SplitRule) -> Result<String> {
    match rule {
        SplitRule::Backbone => Ok(record.peptide.to_naked()),
        SplitRule::ModifiedSequence => Ok(record.peptide.to_canonical_string()),
        SplitRule::RowRandom => record.row_identity(),
    }
}

pub fn assign_split(record: &SpectrumRecord, rule: SplitRule) -> Result<SplitAssignment> {
    let bucket = md5_bucket(&split_key(record, rule)?);
    Ok(SplitAssignment {
        label: SplitLabel::from_bucket(bucket),
        bucket,
        rule,
    })
}

/// 128-bit MD5-derived key; ordered as an unsigned integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SamplingKey(pub u128);

impl SamplingKey {
    fn of(text: &str) -> Self {
        SamplingKey(u128::from_be_bytes(md5_digest(text.as_bytes())))
    }
}

impl fmt::Display for SamplingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

/// Fixed textual rendering of collision energy inside hash inputs.
pub fn render_ce(ce: f64) -> String {
    format!("{ce:.3}")
}

pub fn sampling_key(naked: &str, charge: u8, ce: f64, seed: u64) -> SamplingKey {
    SamplingKey::of(&format!("{naked}|{charge}|{}|{seed}", render_ce(ce)))
}

pub fn ood_rank_key(naked: &str, charge: u8, seed: u64) -> SamplingKey {
    SamplingKey::of(&format!("{naked}|{charge}|{seed}"))
}

/// Tie-breaker for records sharing a sampling key: MD5 over every field that
/// distinguishes two spectra.
pub fn record_fingerprint(record: &SpectrumRecord) -> u128 {
    let mut h = Md5::new();
    h.update(record.peptide.to_canonical_string());
    h.update(format!("|{}|{}|", record.charge, record.nce));
    h.update(record.raw_file.as_deref().unwrap_or(""));
    h.update("|");
    h.update(record.sample_key.as_deref().unwrap_or(""));
    for (m, i) in record.spectrum.mz().iter().zip(record.spectrum.intensity()) {
        h.update(format!("|{m}:{i}"));
    }
    u128::from_be_bytes(h.finalize().into())
}

/// Full ordering key of a candidate: sampling key, then fingerprint.
pub type RankKey = (SamplingKey, u128);

struct Ranked<T> {
    key: RankKey,
    item: T,
}

impl<T> PartialEq for Ranked<T> {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl<T> Eq for Ranked<T> {}

impl<T> PartialOrd for Ranked<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Ranked<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key)
    }
}

/// Keeps the `n` smallest-keyed items seen so far in O(n) memory.
pub struct TopN<T> {
    n: usize,
    heap: BinaryHeap<Ranked<T>>,
}

impl<T> TopN<T> {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            heap: BinaryHeap::with_capacity(n.min(1 << 20) + 1),
        }
    }

    pub fn push(&mut self, key: RankKey, item: T) {
        if self.n == 0 {
            return;
        }
        if self.heap.len() < self.n {
            self.heap.push(Ranked { key, item });
        } else if let Some(top) = self.heap.peek() {
            if key < top.key {
                self.heap.pop();
                self.heap.push(Ranked { key, item });
            }
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Retained items in ascending key order.
    pub fn into_sorted(self) -> Vec<(RankKey, T)> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|r| (r.key, r.item))
            .collect()
    }
}

/// Top-`n` records by OOD ranking key; input order does not matter.
pub fn top_n(records: impl IntoIterator<Item = SpectrumRecord>, n: usize, seed: u64) -> Vec<SpectrumRecord> {
    let mut top = TopN::new(n);
    for r in records {
        let key = (ood_rank_key(&r.naked(), r.charge, seed), record_fingerprint(&r));
        top.push(key, r);
    }
    top.into_sorted().into_iter().map(|(_, r)| r).collect()
}

/// Per-bucket targets for a balanced quota, in [`PtmBucket::ALL`] order
/// (Unmod, Ox, Cam, Ace). Unmodified gets `ceil(quota / 2)`; the rest is
/// split across the three PTM buckets by largest remainder, leftover units
/// going to Ox, then Cam.
pub fn balanced_quotas(quota: usize) -> Result<[usize; 4]> {
    if quota == 0 {
        return Err(Error::QuotaZero);
    }
    let unmod = quota.div_ceil(2);
    let rest = quota - unmod;
    let base = rest / 3;
    let extra = rest % 3;
    let share = |k: usize| base + usize::from(k < extra);
    Ok([unmod, share(0), share(1), share(2)])
}

/// Streaming balanced sampler over the four PTM buckets. Short buckets
/// yield fewer rows; nothing is duplicated or substituted.
pub struct BalancedSampler<T> {
    buckets: [TopN<T>; 4],
}

impl<T> BalancedSampler<T> {
    pub fn new(quota: usize) -> Result<Self> {
        let q = balanced_quotas(quota)?;
        Ok(Self {
            buckets: q.map(TopN::new),
        })
    }

    pub fn push(&mut self, bucket: PtmBucket, key: RankKey, item: T) {
        let slot = PtmBucket::ALL.iter().position(|&b| b == bucket).expect("known bucket");
        self.buckets[slot].push(key, item);
    }

    /// Selected items grouped by bucket (Unmod, Ox, Cam, Ace), each ascending
    /// by key.
    pub fn finish(self) -> Vec<(PtmBucket, Vec<T>)> {
        PtmBucket::ALL
            .into_iter()
            .zip(self.buckets)
            .map(|(b, top)| (b, top.into_sorted().into_iter().map(|(_, t)| t).collect()))
            .collect()
    }
}

pub fn balanced_sample(
    records: impl IntoIterator<Item = SpectrumRecord>,
    quota: usize,
    seed: u64,
) -> Result<Vec<SpectrumRecord>> {
    let mut sampler = BalancedSampler::new(quota)?;
    for r in records {
        let key = (sampling_key(&r.naked(), r.charge, r.nce, seed), record_fingerprint(&r));
        sampler.push(r.peptide.ptm_bucket(), key, r);
    }
    Ok(sampler.finish().into_iter().flat_map(|(_, v)| v).collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisjointReport {
    pub n_backbones: usize,
    pub train_val: usize,
    pub train_test: usize,
    pub val_test: usize,
    /// Backbones present in more than one split.
    pub violations: usize,
    /// Up to ten offending backbones, sorted.
    pub examples: Vec<String>,
}

impl DisjointReport {
    pub fn is_disjoint(&self) -> bool {
        self.violations == 0
    }
}

/// Pairwise backbone intersections between labeled splits.
pub fn verify_disjoint<S: AsRef<str>>(assignments: impl IntoIterator<Item = (S, SplitLabel)>) -> DisjointReport {
    let mut seen: HashMap<String, u8> = HashMap::new();
    for (backbone, label) in assignments {
        let bit = 1u8 << (label as u8);
        let backbone = backbone.as_ref();
        match seen.get_mut(backbone) {
            Some(bits) => *bits |= bit,
            None => {
                seen.insert(backbone.to_string(), bit);
            }
        }
    }
    let mut report = DisjointReport {
        n_backbones: seen.len(),
        ..Default::default()
    };
    let mut offenders = Vec::new();
    for (backbone, bits) in &seen {
        let (tr, va, te) = (bits & 1 != 0, bits & 2 != 0, bits & 4 != 0);
        report.train_val += usize::from(tr && va);
        report.train_test += usize::from(tr && te);
        report.val_test += usize::from(va && te);
        if bits.count_ones() > 1 {
            report.violations += 1;
            offenders.push(backbone.as_str());
        }
    }
    offenders.sort_unstable();
    report.examples = offenders.into_iter().take(10).map(str::to_string).collect();
    report
}

/// Levenshtein distance with unit costs.
pub fn edit_distance(a: &str, b: &str) -> usize {
    levenshtein(a.as_bytes(), b.as_bytes())
}

fn levenshtein(a: &[u8], b: &[u8]) -> usize {
    if b.len() < 64 {
        levenshtein_row(a, b, &mut [0; 64][..=b.len()])
    } else {
        levenshtein_row(a, b, &mut vec![0; b.len() + 1])
    }
}

/// Single-row Wagner-Fischer; `row` has length `b.len() + 1`.
fn levenshtein_row(a: &[u8], b: &[u8], row: &mut [usize]) -> usize {
    for (j, cell) in row.iter_mut().enumerate() {
        *cell = j;
    }
    for (i, &ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = (diag + usize::from(ca != cb)).min(up + 1).min(row[j] + 1);
            diag = up;
        }
    }
    row[b.len()]
}

/// Levenshtein distance if it is at most `limit`, computed inside the
/// diagonal band `|i - j| <= limit` with an early exit once a whole row
/// exceeds the limit.
pub fn bounded_edit_distance(a: &str, b: &str, limit: usize) -> Option<usize> {
    bounded_levenshtein(a.as_bytes(), b.as_bytes(), limit)
}

fn bounded_levenshtein(a: &[u8], b: &[u8], limit: usize) -> Option<usize> {
    if a.len().abs_diff(b.len()) > limit {
        return None;
    }
    let over = limit + 1;
    let m = b.len();
    let mut prev: Vec<usize> = (0..=m).map(|j| j.min(over)).collect();
    let mut cur = vec![over; m + 1];
    for (i, &ca) in a.iter().enumerate() {
        let row = i + 1;
        let lo = row.saturating_sub(limit).max(1);
        let hi = (row + limit).min(m);
        cur.fill(over);
        cur[0] = row.min(over);
        let mut row_min = cur[0];
        for j in lo..=hi {
            let sub = prev[j - 1] + usize::from(ca != b[j - 1]);
            let v = sub.min(prev[j] + 1).min(cur[j - 1] + 1).min(over);
            cur[j] = v;
            row_min = row_min.min(v);
        }
        if row_min > limit {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[m];
    (d <= limit).then_some(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub n_test: usize,
    pub n_train: usize,
    pub mean_min_edit: f64,
    pub median_min_edit: f64,
    pub frac_exact: f64,
    pub frac_le1: f64,
}

/// Minimum edit distance from each test backbone to the training set.
/// Inputs are deduplicated; the result is independent of input order.
pub fn min_edit_distances<S: AsRef<str> + Sync>(test: &[S], train: &[S]) -> Result<Vec<usize>> {
    let train_set: HashSet<&str> = train.iter().map(AsRef::as_ref).collect();
    let mut test_set: Vec<&str> = test
        .iter()
        .map(AsRef::as_ref)
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    if test_set.is_empty() || train_set.is_empty() {
        return Err(Error::EmptyInput("leakage audit needs test and train backbones"));
    }
    test_set.sort_unstable();

    let mut by_len: BTreeMap<usize, Vec<&[u8]>> = BTreeMap::new();
    for s in &train_set {
        by_len.entry(s.len()).or_default().push(s.as_bytes());
    }
    let max_train_len = *by_len.keys().next_back().expect("non-empty");

    Ok(test_set
        .par_iter()
        .map(|t| {
            if train_set.contains(t) {
                return 0;
            }
            let t = t.as_bytes();
            let mut best = usize::MAX;
            let mut delta = 0;
            // candidates at length difference `delta` can do no better than `delta`
            while delta < best && delta <= t.len().max(max_train_len) {
                let lens = [t.len().checked_sub(delta), Some(t.len() + delta)];
                for len in lens.into_iter().flatten().take(if delta == 0 { 1 } else { 2 }) {
                    for s in by_len.get(&len).into_iter().flatten() {
                        if best == delta {
                            break;
                        }
                        let limit = best.saturating_sub(1).min(t.len().max(s.len()));
                        if let Some(d) = bounded_levenshtein(t, s, limit) {
                            best = best.min(d);
                        }
                    }
                }
                delta += 1;
            }
            best
        })
        .collect())
}

pub fn leakage_audit<S: AsRef<str> + Sync>(test: &[S], train: &[S]) -> Result<LeakageAudit> {
    let distances = min_edit_distances(test, train)?;
    let n = distances.len() as f64;
    let as_f64: Vec<f64> = distances.iter().map(|&d| d as f64).collect();
    let n_train = train.iter().map(AsRef::as_ref).collect::<HashSet<&str>>().len();
    Ok(LeakageAudit {
        n_test: distances.len(),
        n_train,
        mean_min_edit: as_f64.iter().sum::<f64>() / n,
        median_min_edit: crate::metrics::median(&as_f64)?,
        frac_exact: distances.iter().filter(|&&d| d == 0).count() as f64 / n,
        frac_le1: distances.iter().filter(|&&d| d <= 1).count() as f64 / n,
    })
}
