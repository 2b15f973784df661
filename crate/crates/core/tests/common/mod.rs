//! Synthetic fixtures shared by the integration tests.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;

use pepspec_core::ions::{enumerate_ions, IonType};
use pepspec_core::{CanonicalSpace, ModifiedPeptide, Ptm, PtmBucket};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub const RESIDUES: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";
pub const NCE_LEVELS: [f64; 4] = [20.0, 25.0, 30.0, 35.0];

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn random_backbone(rng: &mut impl Rng, min_len: usize, max_len: usize) -> Vec<u8> {
    let len = rng.random_range(min_len..=max_len);
    (0..len).map(|_| RESIDUES[rng.random_range(0..20)]).collect()
}

/// Every eligible site modified independently with probability `rate`.
pub fn random_decoration(rng: &mut impl Rng, residues: &[u8], rate: f64) -> ModifiedPeptide {
    let mods = residues
        .iter()
        .map(|&r| {
            let ptm = match r {
                b'M' | b'W' => Ptm::Oxidation,
                b'C' => Ptm::Carbamidomethyl,
                b'K' => Ptm::Acetyl,
                _ => return None,
            };
            rng.random_bool(rate).then_some(ptm)
        })
        .collect();
    let nterm = rng.random_bool(rate / 2.0).then_some(Ptm::Acetyl);
    ModifiedPeptide::new(residues, mods, nterm).expect("valid decoration")
}

/// Decoration aiming at one PTM bucket; falls back to unmodified when the
/// backbone has no eligible site.
pub fn decorate_for(residues: &[u8], bucket: PtmBucket) -> ModifiedPeptide {
    let mut mods = vec![None; residues.len()];
    let mut nterm = None;
    match bucket {
        PtmBucket::Unmod => {}
        PtmBucket::Ox => {
            if let Some(i) = residues.iter().position(|&r| r == b'M') {
                mods[i] = Some(Ptm::Oxidation);
            }
        }
        PtmBucket::Cam => {
            for (i, &r) in residues.iter().enumerate() {
                if r == b'C' {
                    mods[i] = Some(Ptm::Carbamidomethyl);
                }
            }
        }
        PtmBucket::Ace => nterm = Some(Ptm::Acetyl),
    }
    ModifiedPeptide::new(residues, mods, nterm).expect("valid decoration")
}

/// The same peptide written with exporter-style aliases and flanks.
pub fn alias_notation(peptide: &ModifiedPeptide, style: usize) -> String {
    let token = |ptm: Ptm| -> &'static str {
        match (ptm, style % 3) {
            (Ptm::Oxidation, 0) => "(ox)",
            (Ptm::Oxidation, 1) => "[Oxidation]",
            (Ptm::Oxidation, _) => "[+15.995]",
            (Ptm::Carbamidomethyl, 0) => "(cam)",
            (Ptm::Carbamidomethyl, 1) => "[Carbamidomethyl]",
            (Ptm::Carbamidomethyl, _) => "[UNIMOD:4]",
            (Ptm::Acetyl, 0) => "(ac)",
            (Ptm::Acetyl, 1) => "[Acetyl]",
            (Ptm::Acetyl, _) => "[+42.011]",
        }
    };
    let mut out = String::from("_");
    if let Some(p) = peptide.nterm_mod() {
        out.push_str(token(p));
        out.push('-');
    }
    for (i, &r) in peptide.residues().iter().enumerate() {
        out.push(r as char);
        if let Some(p) = peptide.site_mod(i + 1) {
            out.push_str(token(p));
        }
    }
    out.push('_');
    out
}

/// Smooth, NCE-dependent fragmentation pattern used by the synthetic
/// spectra.
pub fn pattern_intensity(
    peptide: &ModifiedPeptide,
    charge: u8,
    nce: f64,
    position: usize,
    ion_type: IonType,
    zf: u8,
) -> f64 {
    let l = peptide.len() as f64;
    let frac = position as f64 / l;
    let center = 0.3 + (nce - 20.0) / 40.0;
    let shape = (-(frac - center).powi(2) / 0.08).exp();
    let series = match ion_type {
        IonType::B => 0.6,
        IonType::Y => 1.0,
    };
    let residue = peptide.residues()[position - 1];
    let boost = if matches!(residue, b'P' | b'D' | b'E') {
        1.6
    } else {
        1.0
    };
    let charge_factor = if zf == 1 {
        1.0
    } else {
        0.5 / f64::from(zf) * f64::from(charge) / 2.0
    };
    series * shape * boost * charge_factor + 0.01
}

/// Spectrum with peaks at theoretical b/y positions (jittered within
/// `jitter` Da) plus `noise` random peaks.
pub fn synth_spectrum(
    rng: &mut impl Rng,
    peptide: &ModifiedPeptide,
    charge: u8,
    nce: f64,
    jitter: f64,
    noise: usize,
) -> (Vec<f64>, Vec<f64>) {
    let space = CanonicalSpace::default();
    let mut mz = Vec::new();
    let mut intensity = Vec::new();
    for (ion, m) in enumerate_ions(peptide, charge, &space) {
        let value = pattern_intensity(peptide, charge, nce, ion.position, ion.ion_type, ion.charge);
        let scale = 1000.0 * rng.random_range(0.8..1.25);
        mz.push(
            m + if jitter > 0.0 {
                rng.random_range(-jitter..jitter)
            } else {
                0.0
            },
        );
        intensity.push((value * scale * 1e4).round() / 1e4);
    }
    for _ in 0..noise {
        mz.push((rng.random_range(100.0..1900.0f64) * 1e4).round() / 1e4);
        intensity.push((rng.random_range(0.0..20.0f64) * 1e2).round() / 1e2);
    }
    (mz, intensity)
}

fn join_list(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 9);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(';');
        }
        write!(s, "{v}").unwrap();
    }
    s
}

pub const CORPUS_HEADER: &str =
    "modified_sequence\tprecursor_charge\tcollision_energy\tmz_list\tintensity_list\traw_file\tandromeda_score\tmass_error_ppm\tnote";

#[derive(Debug, Clone, Copy)]
pub struct CorpusSpec {
    pub rows: usize,
    pub backbones: usize,
    pub seed: u64,
    /// Fraction of rows given a deliberately short (length 5) peptide.
    pub out_of_scope: f64,
    /// Fraction of rows with a failing quality score.
    pub low_quality: f64,
    pub noise_peaks: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            rows: 1000,
            backbones: 400,
            seed: 7,
            out_of_scope: 0.0,
            low_quality: 0.0,
            noise_peaks: 5,
        }
    }
}

/// Writes a synthetic spectral table; PTM notation varies between rows and
/// each backbone recurs with different decorations.
pub fn write_corpus(path: &Path, spec: CorpusSpec) {
    let mut rng = rng(spec.seed);
    let pool: Vec<Vec<u8>> = (0..spec.backbones).map(|_| random_backbone(&mut rng, 7, 30)).collect();
    let mut out = String::with_capacity(spec.rows * 1200);
    out.push_str(CORPUS_HEADER);
    out.push('\n');
    for row in 0..spec.rows {
        let residues = if rng.random_bool(spec.out_of_scope) {
            random_backbone(&mut rng, 5, 5)
        } else {
            pool[rng.random_range(0..pool.len())].clone()
        };
        let bucket = PtmBucket::ALL[[0, 0, 1, 2, 3][rng.random_range(0..5)]];
        let peptide = decorate_for(&residues, bucket);
        let charge = [1u8, 2, 2, 2, 3, 3, 4][rng.random_range(0..7)];
        let nce = NCE_LEVELS[rng.random_range(0..NCE_LEVELS.len())];
        let (mz, intensity) = synth_spectrum(&mut rng, &peptide, charge, nce, 0.004, spec.noise_peaks);
        let score = if rng.random_bool(spec.low_quality) {
            40.0
        } else {
            70.0 + rng.random_range(0.0..200.0f64).round()
        };
        let ppm = (rng.random_range(-15.0..15.0f64) * 100.0).round() / 100.0;
        let seq = if row % 2 == 0 {
            peptide.to_canonical_string()
        } else {
            alias_notation(&peptide, row / 2)
        };
        writeln!(
            out,
            "{seq}\t{charge}\t{nce}\t{}\t{}\trun{:02}\t{score}\t{ppm}\tr{row}",
            join_list(&mz),
            join_list(&intensity),
            row % 7,
        )
        .unwrap();
    }
    std::fs::write(path, out).unwrap();
}
