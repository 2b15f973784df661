//! Acceptance criteria 1-9. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails or exceeds its time budget.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

mod common;

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use pepspec_core::analysis::{
    blind_nce_shift, charge_perturbation, nce_calibration_sweep, EvalItem, FnPredictor, Predictor, Query,
};
use pepspec_core::baseline::{train, BaselineConfig, TrainingExample};
use pepspec_core::ions::{canonical_index, enumerate_ions, valid_mask, valid_mask_for, FragmentLadder};
use pepspec_core::metrics::{
    bootstrap_ci, evaluate_pair, median, pcc_masked, spectral_angle, spectral_angle_masked, BootstrapConfig,
};
use pepspec_core::projection::{bin_spectrum, mz_to_bin, project_full_spectrum, project_ground_truth};
use pepspec_core::splits::{
    assign_split, edit_distance, leakage_audit, min_edit_distances, verify_disjoint, SplitLabel, SplitRule,
};
use pepspec_core::{
    CanonicalSpace, CanonicalVector, IonId, IonType, Mask, ModifiedPeptide, PtmBucket, RawSpectrum, SaConvention,
    SpectrumRecord,
};
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Outcome {
    let space = CanonicalSpace::new(40, 3).map_err(fail)?;
    ensure!(space.dim() == 234, "dim = {}", space.dim());
    let mut checked = 0;
    for (l_ref, zmax) in (2..=50).flat_map(|l| (1..=4u8).map(move |z| (l, z))) {
        let space = CanonicalSpace::new(l_ref, zmax).map_err(fail)?;
        let dim = space.dim();
        ensure!(dim == (l_ref - 1) * 2 * zmax as usize, "dim({l_ref},{zmax}) = {dim}");
        let mut seen = vec![false; dim];
        for p in 1..l_ref {
            for (t, ion_type) in [IonType::B, IonType::Y].into_iter().enumerate() {
                for zf in 1..=zmax {
                    let ion = IonId {
                        position: p,
                        ion_type,
                        charge: zf,
                    };
                    let expected = (p - 1) * 2 * zmax as usize + t * zmax as usize + (zf as usize - 1);
                    let idx = canonical_index(ion, &space).map_err(fail)?;
                    ensure!(idx == expected, "index of {ion} = {idx}, expected {expected}");
                    ensure!(!seen[idx], "index {idx} hit twice");
                    seen[idx] = true;
                    ensure!(space.ion_at(idx).map_err(fail)? == ion, "ion_at({idx}) != {ion}");
                    checked += 1;
                }
            }
        }
        ensure!(seen.iter().all(|&s| s), "not surjective for ({l_ref},{zmax})");
        for bad in [
            IonId::b(0, 1),
            IonId::y(l_ref, 1),
            IonId::b(1, 0),
            IonId::y(1, zmax + 1),
        ] {
            ensure!(
                canonical_index(bad, &space).is_err(),
                "{bad} accepted in ({l_ref},{zmax})"
            );
        }
        ensure!(space.ion_at(dim).is_err(), "ion_at(dim) accepted");
    }
    Ok(format!("dim=234; bijection verified on {checked} ions over 196 spaces"))
}

// ---------------------------------------------------------------- 2

fn random_values(rng: &mut impl Rng, mask: &Mask, zero_rate: f64) -> Vec<f64> {
    (0..mask.len())
        .map(|i| {
            if mask.get(i) && !rng.random_bool(zero_rate) {
                rng.random_range(0.0..1.0)
            } else {
                0.0
            }
        })
        .collect()
}

fn acos_sa(u: &[f64], v: &[f64], mask: &Mask) -> f64 {
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for i in mask.indices() {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0).acos() / std::f64::consts::PI
}

fn criterion_2() -> Outcome {
    const TOL: f64 = 1e-12;
    let space = CanonicalSpace::default();
    let mut rng = common::rng(2);
    let inv = SaConvention::InversePi;
    let mut worst_oracle = 0.0f64;
    for trial in 0..10_000 {
        let len = rng.random_range(6..=40);
        let z = rng.random_range(1..=6u8);
        let residues = common::random_backbone(&mut rng, len, len);
        let peptide = ModifiedPeptide::unmodified(&residues).map_err(fail)?;
        let mask = valid_mask_for(len, z, &space);
        let u = random_values(&mut rng, &mask, 0.3);
        let mut v = random_values(&mut rng, &mask, 0.3);
        if v.iter().all(|&x| x == 0.0) {
            v[mask.indices().next().unwrap()] = 0.5;
        }
        let cu = CanonicalVector::from_masked(u.clone(), mask.clone()).map_err(fail)?;
        let cv = CanonicalVector::from_masked(v.clone(), mask.clone()).map_err(fail)?;

        let self_sa = spectral_angle(&cu, &cu, inv).map_err(fail)?;
        ensure!(self_sa.abs() <= TOL, "trial {trial}: SA(v,v) = {self_sa:e}");
        let uv = spectral_angle(&cu, &cv, inv).map_err(fail)?;
        let vu = spectral_angle(&cv, &cu, inv).map_err(fail)?;
        ensure!((uv - vu).abs() <= TOL, "trial {trial}: asymmetric {uv} vs {vu}");
        ensure!((0.0..=0.5).contains(&uv), "trial {trial}: SA {uv} outside [0, 0.5]");
        let two = spectral_angle(&cu, &cv, SaConvention::TwoOverPi).map_err(fail)?;
        ensure!(
            (two - 2.0 * uv).abs() <= TOL,
            "trial {trial}: 2/pi convention {two} vs {uv}"
        );

        if u.iter().any(|&x| x > 0.0) {
            let oracle = acos_sa(&u, &v, &mask);
            worst_oracle = worst_oracle.max((oracle - uv).abs());
            ensure!(
                (oracle - uv).abs() < 1e-7,
                "trial {trial}: acos oracle {oracle} vs {uv}"
            );
        }

        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled: Vec<f64> = u.iter().map(|x| x * c).collect();
        let raw = spectral_angle_masked(&u, &v, &mask, inv).map_err(fail)?;
        let raw_scaled = spectral_angle_masked(&scaled, &v, &mask, inv).map_err(fail)?;
        ensure!(
            (raw - raw_scaled).abs() <= TOL,
            "trial {trial}: SA scale variance {raw} vs {raw_scaled}"
        );
        let p = pcc_masked(&u, &v, &mask).map_err(fail)?;
        let p_scaled = pcc_masked(&scaled, &v, &mask).map_err(fail)?;
        ensure!(
            (p - p_scaled).abs() <= TOL,
            "trial {trial}: PCC scale variance {p} vs {p_scaled}"
        );

        let record = SpectrumRecord::new(peptide, z, 30.0);
        let row = evaluate_pair(&record, &cu, &cv, &space, inv).map_err(fail)?;
        ensure!(
            row.sas == 1.0 - row.sa,
            "trial {trial}: SAS {} != 1 - SA {}",
            row.sas,
            row.sa
        );

        let idx: Vec<usize> = mask.indices().collect();
        if idx.len() >= 2 {
            let split = rng.random_range(1..idx.len());
            let mut a = vec![0.0; mask.len()];
            let mut b = vec![0.0; mask.len()];
            for (k, &i) in idx.iter().enumerate() {
                if k < split {
                    a[i] = rng.random_range(0.1..1.0);
                } else {
                    b[i] = rng.random_range(0.1..1.0);
                }
            }
            let orth = spectral_angle_masked(&a, &b, &mask, inv).map_err(fail)?;
            ensure!((orth - 0.5).abs() <= TOL, "trial {trial}: orthogonal SA {orth}");
            let constant: Vec<f64> = (0..mask.len()).map(|i| if mask.get(i) { 0.7 } else { 0.0 }).collect();
            ensure!(
                pcc_masked(&constant, &v, &mask).map_err(fail)? == 0.0,
                "trial {trial}: constant PCC != 0"
            );
            ensure!(
                pcc_masked(&constant, &constant, &mask).map_err(fail)? == 0.0,
                "trial {trial}: constant PCC != 0"
            );
        }
    }
    Ok(format!("10000 pairs; max |SA - acos oracle| = {worst_oracle:.1e}"))
}

// ---------------------------------------------------------------- 3

/// Independent mass oracle from elemental compositions.
mod composition {
    use pepspec_core::Ptm;

    const C: f64 = 12.0;
    const H: f64 = 1.007_825_032_07;
    const N: f64 = 14.003_074_004_8;
    const O: f64 = 15.994_914_619_56;
    const S: f64 = 31.972_071_00;
    const ELECTRON: f64 = 0.000_548_579_909_065;
    pub const PROTON: f64 = H - ELECTRON;
    pub const WATER: f64 = 2.0 * H + O;

    fn formula(c: f64, h: f64, n: f64, o: f64, s: f64) -> f64 {
        c * C + h * H + n * N + o * O + s * S
    }

    pub fn residue(r: u8) -> f64 {
        let (c, h, n, o, s) = match r {
            b'G' => (2, 3, 1, 1, 0),
            b'A' => (3, 5, 1, 1, 0),
            b'S' => (3, 5, 1, 2, 0),
            b'P' => (5, 7, 1, 1, 0),
            b'V' => (5, 9, 1, 1, 0),
            b'T' => (4, 7, 1, 2, 0),
            b'C' => (3, 5, 1, 1, 1),
            b'L' | b'I' => (6, 11, 1, 1, 0),
            b'N' => (4, 6, 2, 2, 0),
            b'D' => (4, 5, 1, 3, 0),
            b'Q' => (5, 8, 2, 2, 0),
            b'K' => (6, 12, 2, 1, 0),
            b'E' => (5, 7, 1, 3, 0),
            b'M' => (5, 9, 1, 1, 1),
            b'H' => (6, 7, 3, 1, 0),
            b'F' => (9, 9, 1, 1, 0),
            b'R' => (6, 12, 4, 1, 0),
            b'Y' => (9, 9, 1, 2, 0),
            b'W' => (11, 10, 2, 1, 0),
            other => panic!("no composition for {}", other as char),
        };
        formula(c as f64, h as f64, n as f64, o as f64, s as f64)
    }

    pub fn modification(p: Ptm) -> f64 {
        match p {
            Ptm::Acetyl => formula(2.0, 2.0, 0.0, 1.0, 0.0),
            Ptm::Carbamidomethyl => formula(2.0, 3.0, 1.0, 1.0, 0.0),
            Ptm::Oxidation => formula(0.0, 0.0, 0.0, 1.0, 0.0),
        }
    }
}

fn oracle_residue(peptide: &ModifiedPeptide, i: usize) -> f64 {
    composition::residue(peptide.residues()[i]) + peptide.site_mod(i + 1).map_or(0.0, composition::modification)
}

fn criterion_3() -> Outcome {
    let space = CanonicalSpace::default();
    let mut rng = common::rng(3);
    let (mut n_ions, mut worst, mut worst_comp) = (0usize, 0.0f64, 0.0f64);
    for k in 0..200 {
        let residues = common::random_backbone(&mut rng, 6, 40);
        let peptide = common::random_decoration(&mut rng, &residues, 0.5);
        let charge = rng.random_range(1..=6u8);
        let len = peptide.len();
        let nterm = peptide.nterm_mod().map_or(0.0, composition::modification);
        for (ion, mz) in enumerate_ions(&peptide, charge, &space) {
            let p = ion.position;
            let neutral = match ion.ion_type {
                IonType::B => nterm + (0..p).map(|i| oracle_residue(&peptide, i)).sum::<f64>(),
                IonType::Y => (p..len).map(|i| oracle_residue(&peptide, i)).sum::<f64>() + composition::WATER,
            };
            let z = f64::from(ion.charge);
            let expected = (neutral + z * composition::PROTON) / z;
            worst = worst.max((mz - expected).abs());
            ensure!(
                (mz - expected).abs() < 1e-6,
                "peptide {k} {peptide} {ion}: {mz} vs oracle {expected}"
            );
            n_ions += 1;
        }
        let ladder = FragmentLadder::new(&peptide);
        let total = peptide.monoisotopic_mass();
        for p in 1..len {
            let b = ladder.neutral_mass(p, IonType::B).map_err(fail)?;
            let y = ladder.neutral_mass(p, IonType::Y).map_err(fail)?;
            worst_comp = worst_comp.max((b + y - total).abs());
            ensure!(
                (b + y - total).abs() < 1e-9,
                "{peptide} p={p}: b+y-M = {:e}",
                b + y - total
            );
        }
        ensure!(
            enumerate_ions(&peptide, charge, &space).len() == (len - 1) * 2 * usize::from(charge.min(3)),
            "{peptide}: wrong ion count"
        );
    }
    Ok(format!(
        "{n_ions} ions; max |m/z - oracle| = {worst:.1e} Da; max complementarity error = {worst_comp:.1e} Da"
    ))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let space = CanonicalSpace::default();
    let mut rng = common::rng(4);
    let mut nonzero = 0usize;
    for k in 0..1000 {
        let residues = common::random_backbone(&mut rng, 6, 40);
        let peptide = common::random_decoration(&mut rng, &residues, 0.3);
        let charge = rng.random_range(1..=6u8);
        let mut mz = Vec::new();
        let mut intensity = Vec::new();
        for (_, m) in enumerate_ions(&peptide, charge, &space) {
            if rng.random_bool(0.6) {
                for _ in 0..rng.random_range(1..=3) {
                    mz.push(m + rng.random_range(-0.08..0.08));
                    intensity.push(rng.random_range(0.0..1e4));
                }
            }
        }
        for _ in 0..rng.random_range(0..200) {
            mz.push(rng.random_range(-10.0..2100.0));
            intensity.push(rng.random_range(0.0..1e4));
        }
        let spectrum = RawSpectrum::new(mz, intensity).map_err(fail)?;
        let truth = project_ground_truth(&spectrum, &peptide, charge, &space).map_err(fail)?;
        let composed = project_full_spectrum(&bin_spectrum(&spectrum), &peptide, charge, &space).map_err(fail)?;
        ensure!(
            truth == composed,
            "spectrum {k}: composition differs from direct projection"
        );
        nonzero += usize::from(!truth.is_zero());
    }

    let mut recovered = 0;
    while recovered < 300 {
        let residues = common::random_backbone(&mut rng, 6, 40);
        let peptide = common::random_decoration(&mut rng, &residues, 0.3);
        let charge = rng.random_range(1..=6u8);
        let ions = enumerate_ions(&peptide, charge, &space);
        let mut bins: Vec<_> = ions.iter().map(|&(_, m)| mz_to_bin(m)).collect();
        bins.sort_unstable();
        let n = bins.len();
        bins.dedup();
        if bins.len() != n || bins.iter().any(Option::is_none) {
            continue;
        }
        let values: Vec<f64> = ions.iter().map(|_| rng.random_range(1.0..1e5)).collect();
        let max = values.iter().cloned().fold(0.0, f64::max);
        let spectrum = RawSpectrum::new(ions.iter().map(|&(_, m)| m).collect(), values.clone()).map_err(fail)?;
        let v = project_ground_truth(&spectrum, &peptide, charge, &space).map_err(fail)?;
        for ((ion, _), x) in ions.iter().zip(&values) {
            let i = space.index_of(*ion).map_err(fail)?;
            let expected = x / max;
            ensure!(
                v.values()[i] == expected,
                "{peptide} z={charge} {ion}: recovered {} expected {expected}",
                v.values()[i]
            );
        }
        ensure!(
            v.values().iter().filter(|&&x| x != 0.0).count() == ions.len(),
            "{peptide}: unexpected non-zero entries"
        );
        recovered += 1;
    }
    Ok(format!(
        "1000 spectra composed exactly ({nonzero} non-zero); 300 collision-free spectra recovered with error 0"
    ))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let mut rng = common::rng(5);
    let pool: Vec<Vec<u8>> = (0..250_000).map(|_| common::random_backbone(&mut rng, 7, 25)).collect();
    let mut counts = [0usize; 3];
    let mut labels: HashMap<String, u8> = HashMap::with_capacity(pool.len());
    const ROWS: usize = 1_000_000;
    for _ in 0..ROWS {
        let residues = &pool[rng.random_range(0..pool.len())];
        let peptide = common::random_decoration(&mut rng, residues, 0.3);
        let record = SpectrumRecord::new(peptide, 2, 30.0);
        let a = assign_split(&record, SplitRule::Backbone).map_err(fail)?;
        let slot = SplitLabel::ALL.iter().position(|&l| l == a.label).unwrap();
        counts[slot] += 1;
        *labels.entry(record.naked()).or_default() |= 1 << slot;
    }
    let pairs = labels.iter().flat_map(|(k, &bits)| {
        SplitLabel::ALL
            .into_iter()
            .enumerate()
            .filter(move |(i, _)| bits & (1 << i) != 0)
            .map(move |(_, l)| (k.as_str(), l))
    });
    let report = verify_disjoint(pairs);
    ensure!(
        report.violations == 0,
        "backbone rule: {} overlapping backbones",
        report.violations
    );
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / ROWS as f64).collect();
    for (f, target) in fractions.iter().zip([0.8, 0.1, 0.1]) {
        ensure!((f - target).abs() <= 0.01, "fractions {fractions:?}");
    }

    // PTM variants of one backbone hash apart under the modified-sequence rule.
    let mut variant_pairs = Vec::new();
    for residues in pool
        .iter()
        .filter(|r| r.contains(&b'M') && r.contains(&b'C'))
        .take(2000)
    {
        for bucket in PtmBucket::ALL {
            let record = SpectrumRecord::new(common::decorate_for(residues, bucket), 2, 30.0);
            let a = assign_split(&record, SplitRule::ModifiedSequence).map_err(fail)?;
            variant_pairs.push((record.naked(), a.label));
        }
    }
    let modseq = verify_disjoint(variant_pairs.iter().map(|(k, l)| (k.as_str(), *l)));
    ensure!(modseq.violations > 0, "modified-sequence rule reported no violations");
    Ok(format!(
        "1M rows, {} backbones, 0 overlaps; fractions {:.4}/{:.4}/{:.4}; modified-sequence violations = {}",
        labels.len(),
        fractions[0],
        fractions[1],
        fractions[2],
        modseq.violations
    ))
}

// ---------------------------------------------------------------- 6

/// Literal recursive definition, no memoization.
fn naive_levenshtein(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = naive_levenshtein(ra, rb) + usize::from(x != y);
            sub.min(naive_levenshtein(ra, b) + 1).min(naive_levenshtein(a, rb) + 1)
        }
    }
}

fn all_strings(max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for c in *b"ABC" {
                let mut t: Vec<u8> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Recurrence evaluated over a depth-first walk of every string of length
/// <= `depth`, sharing DP rows between strings with a common prefix. Calls
/// `visit(b, distance(a, b))` for each string `b`.
fn recurrence_walk(
    a: &[u8],
    depth: usize,
    visit: &mut dyn FnMut(&[u8], usize) -> Result<(), String>,
) -> Result<(), String> {
    fn rec(
        a: &[u8],
        prefix: &mut Vec<u8>,
        rows: &mut [Vec<usize>],
        visit: &mut dyn FnMut(&[u8], usize) -> Result<(), String>,
    ) -> Result<(), String> {
        let d = prefix.len();
        visit(prefix, rows[d][a.len()])?;
        if d + 1 == rows.len() {
            return Ok(());
        }
        for c in *b"ABC" {
            let (done, rest) = rows.split_at_mut(d + 1);
            let (row, next) = (&done[d], &mut rest[0]);
            next[0] = d + 1;
            for i in 1..=a.len() {
                next[i] = (row[i - 1] + usize::from(a[i - 1] != c))
                    .min(row[i] + 1)
                    .min(next[i - 1] + 1);
            }
            prefix.push(c);
            rec(a, prefix, rows, visit)?;
            prefix.pop();
        }
        Ok(())
    }
    let mut rows = vec![vec![0; a.len() + 1]; depth + 1];
    rows[0] = (0..=a.len()).collect();
    rec(a, &mut Vec::with_capacity(depth), &mut rows, visit)
}

fn criterion_6() -> Outcome {
    use rayon::prelude::*;
    // The shared-prefix recurrence against the literal recursion.
    let small = all_strings(4);
    for a in &small {
        recurrence_walk(a, 4, &mut |b, d| {
            let naive = naive_levenshtein(a, b);
            if d != naive {
                return Err(format!("recurrence {d} vs naive {naive}"));
            }
            Ok(())
        })?;
    }
    // Implementation against the recurrence on every pair of length <= 8.
    let strings = all_strings(8);
    let pairs: usize = strings
        .par_iter()
        .map(|a| -> Result<usize, String> {
            let a_str = std::str::from_utf8(a).unwrap();
            let mut n = 0;
            recurrence_walk(a, 8, &mut |b, d| {
                let got = edit_distance(a_str, std::str::from_utf8(b).unwrap());
                if got != d {
                    return Err(format!(
                        "edit_distance({a_str:?}, {:?}) = {got}, expected {d}",
                        String::from_utf8_lossy(b)
                    ));
                }
                n += 1;
                Ok(())
            })?;
            Ok(n)
        })
        .try_reduce(|| 0, |x, y| Ok(x + y))?;

    // Nearest-neighbour search against brute force.
    let mut rng = common::rng(6);
    let train: Vec<String> = (0..400)
        .map(|_| String::from_utf8(common::random_backbone(&mut rng, 6, 14)).unwrap())
        .collect();
    let mut test: Vec<String> = (0..150)
        .map(|_| String::from_utf8(common::random_backbone(&mut rng, 6, 14)).unwrap())
        .collect();
    test.extend(train.iter().take(10).cloned());
    let mut sorted_test = test.clone();
    sorted_test.sort();
    sorted_test.dedup();
    let brute: Vec<usize> = sorted_test
        .iter()
        .map(|t| train.iter().map(|r| edit_distance(t, r)).min().unwrap())
        .collect();
    ensure!(
        min_edit_distances(&test, &train).map_err(fail)? == brute,
        "min_edit_distances differs from brute force"
    );

    // Backbone-disjoint fixture.
    let mut split: [Vec<String>; 3] = Default::default();
    for _ in 0..20_000 {
        let residues = common::random_backbone(&mut rng, 7, 20);
        let record = SpectrumRecord::new(common::random_decoration(&mut rng, &residues, 0.3), 2, 30.0);
        let a = assign_split(&record, SplitRule::Backbone).map_err(fail)?;
        split[SplitLabel::ALL.iter().position(|&l| l == a.label).unwrap()].push(record.naked());
    }
    let audit = leakage_audit(&split[2], &split[0]).map_err(fail)?;
    ensure!(audit.frac_exact == 0.0, "frac_exact = {}", audit.frac_exact);
    Ok(format!(
        "{pairs} pairs match the recurrence; backbone-disjoint fixture frac_exact = 0.0 (mean min edit {:.2})",
        audit.mean_min_edit
    ))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let space = CanonicalSpace::default();
    let mut rng = common::rng(7);
    let mut examples = Vec::new();
    for len in [8usize, 12, 20] {
        for z in [2u8, 3] {
            for ce in [25.0, 30.0, 35.0] {
                let coef: Vec<(f64, [f64; 20], [f64; 20])> = (0..space.dim())
                    .map(|_| {
                        let mut w = [0.0; 20];
                        let mut u = [0.0; 20];
                        w.iter_mut().for_each(|x| *x = rng.random_range(0.0..0.3));
                        u.iter_mut().for_each(|x| *x = rng.random_range(0.0..0.3));
                        (rng.random_range(0.05..0.3), w, u)
                    })
                    .collect();
                for _ in 0..40 {
                    let residues = common::random_backbone(&mut rng, len, len);
                    let slot = |r: u8| common::RESIDUES.iter().position(|&x| x == r).unwrap();
                    let values: Vec<f64> = (0..space.dim())
                        .map(|i| {
                            if i == 0 {
                                return 1.0;
                            }
                            let ion = space.ion_at(i).unwrap();
                            if ion.position >= len {
                                return 0.0;
                            }
                            let (a, w, u) = &coef[i];
                            a + w[slot(residues[ion.position - 1])] + u[slot(residues[ion.position])]
                        })
                        .collect();
                    let peptide = ModifiedPeptide::unmodified(&residues).map_err(fail)?;
                    let truth = CanonicalVector::from_masked(values, valid_mask(&peptide, z, &space)).map_err(fail)?;
                    examples.push(TrainingExample {
                        peptide,
                        charge: z,
                        nce: ce,
                        truth,
                    });
                }
            }
        }
    }
    let model = train(examples.clone(), &space, &BaselineConfig::default()).map_err(fail)?;
    let mut max_err = 0.0f64;
    let mut sas = Vec::new();
    for ex in &examples {
        let pred = model.predict(&ex.peptide, ex.charge, ex.nce).map_err(fail)?;
        for (p, t) in pred.values().iter().zip(ex.truth.values()) {
            max_err = max_err.max((p - t).abs());
        }
        sas.push(spectral_angle(&pred, &ex.truth, SaConvention::InversePi).map_err(fail)?);
    }
    let med = median(&sas).map_err(fail)?;
    ensure!(max_err < 1e-6, "max abs error {max_err:e}");
    ensure!(med < 1e-6, "median SA {med:e}");

    for (query, expected) in [
        (25.0, 25.0),
        (27.5, 25.0),
        (27.6, 30.0),
        (32.5, 30.0),
        (32.4, 30.0),
        (33.0, 35.0),
        (0.0, 25.0),
        (99.0, 35.0),
    ] {
        let got = model.ce_snap(query).map_err(fail)?;
        ensure!(got == expected, "ce_snap({query}) = {got}, expected {expected}");
    }
    Ok(format!(
        "{} examples in {} buckets; max abs error {max_err:.1e}, median SA {med:.1e}; ce_snap nearest/tie-low ok",
        examples.len(),
        model.buckets.len()
    ))
}

// ---------------------------------------------------------------- 8

fn peptide_only_values(peptide: &ModifiedPeptide) -> Vec<f64> {
    let r = peptide.residues();
    (0..234)
        .map(|i| f64::from(r[i % r.len()]) * ((i % 7) as f64 + 1.0))
        .collect()
}

fn template_examples(
    rng: &mut impl Rng,
    charges: &[u8],
    nces: &[f64],
    per_bucket: usize,
    template: &dyn Fn(&ModifiedPeptide, u8, f64, IonId) -> f64,
) -> Vec<TrainingExample> {
    let space = CanonicalSpace::default();
    let mut out = Vec::new();
    for len in [9usize, 14] {
        for &z in charges {
            for &nce in nces {
                for _ in 0..per_bucket {
                    let residues = common::random_backbone(rng, len, len);
                    let peptide = ModifiedPeptide::unmodified(&residues).unwrap();
                    let values = (0..space.dim())
                        .map(|i| {
                            let ion = space.ion_at(i).unwrap();
                            if ion.position < len {
                                template(&peptide, z, nce, ion)
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let truth = CanonicalVector::from_masked(values, valid_mask(&peptide, z, &space)).unwrap();
                    out.push(TrainingExample {
                        peptide,
                        charge: z,
                        nce,
                        truth,
                    });
                }
            }
        }
    }
    out
}

fn criterion_8() -> Outcome {
    let space = CanonicalSpace::default();
    let conv = SaConvention::InversePi;
    let mut rng = common::rng(8);
    let queries: Vec<Query> = (0..300)
        .map(|_| Query {
            peptide: {
                let len = [9, 14][rng.random_range(0..2)];
                ModifiedPeptide::unmodified(&common::random_backbone(&mut rng, len, len)).unwrap()
            },
            charge: 2,
            nce: 30.0,
        })
        .collect();

    let ignoring = FnPredictor(move |p: &ModifiedPeptide, z: u8, _nce: f64| {
        CanonicalVector::from_masked(peptide_only_values(p), valid_mask(p, z, &space))
    });
    let collapsed = charge_perturbation(&ignoring, &queries, conv).map_err(fail)?;
    ensure!(
        collapsed.high_sas_fraction == 1.0,
        "charge-ignoring fraction {}",
        collapsed.high_sas_fraction
    );

    let responsive = train(
        template_examples(
            &mut rng,
            &[2, 3],
            &[30.0],
            20,
            &|_, z, _, ion| match (z, ion.ion_type) {
                (2, IonType::B) | (3, IonType::Y) => 1.0 / f64::from(ion.charge),
                _ => 0.05,
            },
        ),
        &space,
        &BaselineConfig::default(),
    )
    .map_err(fail)?;
    let resp = charge_perturbation(&responsive, &queries, conv).map_err(fail)?;
    ensure!(
        resp.high_sas_fraction < 0.05,
        "charge-responsive fraction {}",
        resp.high_sas_fraction
    );

    let grid = [20.0, 25.0, 30.0, 35.0, 40.0];
    let pattern = |p: &ModifiedPeptide, z: u8, nce: f64, ion: IonId| {
        common::pattern_intensity(p, z, nce, ion.position, ion.ion_type, ion.charge)
    };
    let multi_ce = train(
        template_examples(&mut rng, &[2], &grid, 15, &pattern),
        &space,
        &BaselineConfig::default(),
    )
    .map_err(fail)?;
    let items: Vec<EvalItem> = queries
        .iter()
        .map(|q| {
            let values = (0..space.dim())
                .map(|i| {
                    let ion = space.ion_at(i).unwrap();
                    if ion.position < q.peptide.len() {
                        pattern(&q.peptide, 2, 30.0, ion)
                    } else {
                        0.0
                    }
                })
                .collect();
            EvalItem {
                truth: CanonicalVector::from_masked(values, valid_mask(&q.peptide, 2, &space)).unwrap(),
                query: q.clone(),
            }
        })
        .collect();
    let curve = nce_calibration_sweep(&multi_ce, &items, &grid, conv).map_err(fail)?;
    ensure!(
        curve.argmin == 30.0,
        "multi-CE argmin {} (curve {:?})",
        curve.argmin,
        curve.points
    );

    let insensitive: &dyn Predictor = &ignoring;
    let shift = blind_nce_shift(insensitive, &items, 25.0, 30.0, conv).map_err(fail)?;
    ensure!(shift == 0.0, "NCE-insensitive shift {shift}");
    let sensitive = blind_nce_shift(&multi_ce, &items, 25.0, 30.0, conv).map_err(fail)?;
    ensure!(sensitive != 0.0, "NCE-sensitive fixture shift is 0");
    Ok(format!(
        "collapse fraction 1.0 vs responsive {:.3}; sweep argmin {} (SA {:.4}); blind shift 0 vs {:.4}",
        resp.high_sas_fraction,
        curve.argmin,
        curve.points.iter().find(|p| p.nce == 30.0).unwrap().median_sa,
        sensitive
    ))
}

// ---------------------------------------------------------------- 9

fn run_pipeline(bin: &str, raw: &Path, dir: &Path) -> Result<Duration, String> {
    std::fs::create_dir_all(dir).map_err(fail)?;
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let raw = raw.to_str().unwrap().to_string();
    let steps: Vec<Vec<String>> = vec![
        vec![
            "normalize",
            "-i",
            &raw,
            "-o",
            &p("norm.tsv"),
            "--report",
            &p("normalize.json"),
        ],
        vec![
            "split",
            "-i",
            &p("norm.tsv"),
            "-o",
            &p("split.tsv"),
            "--report",
            &p("split.json"),
        ],
        vec![
            "project-truth",
            "-i",
            &p("split.tsv"),
            "-o",
            &p("truth.tsv"),
            "--report",
            &p("project.json"),
        ],
        vec![
            "train-baseline",
            "-i",
            &p("split.tsv"),
            "--split",
            "train",
            "--model",
            &p("model.json"),
        ],
        vec![
            "predict-baseline",
            "--model",
            &p("model.json"),
            "-i",
            &p("split.tsv"),
            "-o",
            &p("pred.tsv"),
        ],
        vec![
            "evaluate",
            "--truth",
            &p("split.tsv"),
            "--predictions",
            &p("pred.tsv"),
            "--report",
            &p("evaluate.json"),
            "--rows",
            &p("rows.tsv"),
        ],
        vec![
            "stratify",
            "--rows",
            &p("rows.tsv"),
            "--axis",
            "length_bin",
            "--axis",
            "charge",
            "--axis",
            "ptm_type",
            "--axis",
            "nce_bin",
            "--baseline-bin",
            "[6,10)",
            "--report",
            &p("stratify.json"),
        ],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    let start = Instant::now();
    for args in &steps {
        let out = Command::new(bin).args(args).output().map_err(fail)?;
        if !out.status.success() {
            return Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(start.elapsed())
}

const PIPELINE_OUTPUTS: [&str; 11] = [
    "norm.tsv",
    "split.tsv",
    "truth.tsv",
    "model.json",
    "pred.tsv",
    "rows.tsv",
    "normalize.json",
    "split.json",
    "project.json",
    "evaluate.json",
    "stratify.json",
];

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(fail)?;
    let raw = dir.path().join("raw.tsv");
    common::write_corpus(
        &raw,
        common::CorpusSpec {
            rows: 50_000,
            backbones: 15_000,
            seed: 9,
            out_of_scope: 0.01,
            low_quality: 0.02,
            noise_peaks: 10,
        },
    );
    let bin = env!("CARGO_BIN_EXE_pepspec");
    let t1 = run_pipeline(bin, &raw, &dir.path().join("a"))?;
    let t2 = run_pipeline(bin, &raw, &dir.path().join("b"))?;
    for name in PIPELINE_OUTPUTS {
        let a = std::fs::read(dir.path().join("a").join(name)).map_err(fail)?;
        let b = std::fs::read(dir.path().join("b").join(name)).map_err(fail)?;
        ensure!(a == b, "{name} differs between runs");
    }
    let limit = Duration::from_secs(300);
    ensure!(t1 < limit && t2 < limit, "pipeline took {t1:?} / {t2:?}");
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a/evaluate.json")).map_err(fail)?).map_err(fail)?;

    let mut rng = common::rng(99);
    for k in 0..100u64 {
        let n = rng.random_range(5..400);
        let values: Vec<f64> = match k % 3 {
            0 => (0..n).map(|_| rng.random_range(0.0..0.5)).collect(),
            1 => (0..n).map(|_| rng.random_range(0.0..1.0f64).powi(4)).collect(),
            _ => (0..n).map(|_| f64::from(rng.random_range(0..5u8)) / 10.0).collect(),
        };
        let m = median(&values).map_err(fail)?;
        let ci = bootstrap_ci(
            &values,
            &BootstrapConfig {
                resamples: 1000,
                level: 0.95,
                seed: k,
            },
        )
        .map_err(fail)?;
        ensure!(
            ci.lo <= m && m <= ci.hi,
            "fixture {k}: median {m} outside [{}, {}]",
            ci.lo,
            ci.hi
        );
    }
    Ok(format!(
        "50k spectra, {} matched; runs took {:.1}s and {:.1}s; outputs byte-identical; 100/100 CIs contain the median",
        report["n_matched"],
        t1.as_secs_f64(),
        t2.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- driver

fn main() {
    let criteria: [(u8, &str, u64, fn() -> Outcome); 9] = [
        (1, "canonical dimension and index bijection", 1, criterion_1),
        (2, "metric identities", 10, criterion_2),
        (3, "fragment-mass oracle", 5, criterion_3),
        (4, "projection composition", 10, criterion_4),
        (5, "split correctness", 60, criterion_5),
        (6, "leakage audit oracle", 60, criterion_6),
        (7, "baseline exactness", 30, criterion_7),
        (8, "perturbation probes", 60, criterion_8),
        (9, "determinism and throughput", 600, criterion_9),
    ];
    let filter: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(_) if elapsed > Duration::from_secs(budget) => {
                Err(format!("exceeded {budget}s budget ({:.2}s)", elapsed.as_secs_f64()))
            }
            r => r,
        };
        match result {
            Ok(detail) => println!(
                "PASS  criterion {id}: {name} ({:.2}s) - {detail}",
                elapsed.as_secs_f64()
            ),
            Err(e) => {
                failed += 1;
                println!("FAIL  criterion {id}: {name} ({:.2}s) - {e}", elapsed.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
