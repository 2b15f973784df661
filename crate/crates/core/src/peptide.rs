//! Modified peptide parsing, normalization and mass arithmetic.
//!
//! Canonical sequence grammar: one-letter residue codes, each optionally
//! followed by a single `[UNIMOD:n]` token, plus an optional leading
//! `[UNIMOD:n]` token for an N-terminal modification. Only UNIMOD 1
//! (acetyl), 4 (carbamidomethyl) and 35 (oxidation) are accepted.
//!
//! The parser also accepts a fixed set of alias spellings (see [`PTM_ALIASES`])
//! in either `[...]` or `(...)` brackets, an optional `-` after the N-terminal
//! token, and MaxQuant-style `_` flanks. Anything else is rejected rather than
//! guessed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::SpectrumRecord;

pub const PROTON_MASS: f64 = 1.007_276_466_88;
pub const WATER_MASS: f64 = 18.010_564_686_3;

/// Longest sequence accepted by the parser.
pub const MAX_PARSE_LENGTH: usize = 100;
pub const SCOPE_MIN_LENGTH: usize = 6;
pub const SCOPE_MAX_LENGTH: usize = 40;
pub const SCOPE_MIN_CHARGE: u8 = 1;
pub const SCOPE_MAX_CHARGE: u8 = 6;
pub const MIN_ANDROMEDA_SCORE: f64 = 70.0;
pub const MAX_ABS_MASS_ERROR_PPM: f64 = 20.0;

// Monoisotopic residue masses (residue = amino acid minus water), indexed by
// `letter - b'A'`. Zero marks a non-standard letter.
const RESIDUE_MASSES: [f64; 26] = [
    71.037_113_784_71,  // A
    0.0,                // B
    103.009_184_784_71, // C
    115.026_943_023_83, // D
    129.042_593_087_97, // E
    147.068_413_912_99, // F
    57.021_463_720_57,  // G
    137.058_911_858_45, // H
    113.084_063_977_13, // I
    0.0,                // J
    128.094_963_013_99, // K
    113.084_063_977_13, // L
    131.040_484_912_99, // M
    114.042_927_441_14, // N
    0.0,                // O
    97.052_763_848_85,  // P
    128.058_577_505_28, // Q
    156.101_111_023_59, // R
    87.032_028_404_27,  // S
    101.047_678_468_41, // T
    0.0,                // U
    99.068_413_912_99,  // V
    186.079_312_949_86, // W
    0.0,                // X
    163.063_328_532_55, // Y
    0.0,                // Z
];

/// Monoisotopic masses of the 20 standard residues plus the proton and water
/// constants used by all mass calculations.
#[derive(Debug, Clone, Copy, Default)]
pub struct AminoAcidTable;

impl AminoAcidTable {
    pub const STANDARD_RESIDUES: &'static [u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";

    pub fn residue_mass(&self, residue: u8) -> Option<f64> {
        residue_mass(residue)
    }

    pub fn proton_mass(&self) -> f64 {
        PROTON_MASS
    }

    pub fn water_mass(&self) -> f64 {
        WATER_MASS
    }
}

#[inline]
pub fn residue_mass(residue: u8) -> Option<f64> {
    if !residue.is_ascii_uppercase() {
        return None;
    }
    let mass = RESIDUE_MASSES[(residue - b'A') as usize];
    (mass > 0.0).then_some(mass)
}

/// The whitelisted modifications.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ptm {
    /// UNIMOD:1
    Acetyl,
    /// UNIMOD:4
    Carbamidomethyl,
    /// UNIMOD:35
    Oxidation,
}

impl Ptm {
    pub const ALL: [Ptm; 3] = [Ptm::Acetyl, Ptm::Carbamidomethyl, Ptm::Oxidation];

    pub fn unimod_id(self) -> u32 {
        match self {
            Ptm::Acetyl => 1,
            Ptm::Carbamidomethyl => 4,
            Ptm::Oxidation => 35,
        }
    }

    pub fn from_unimod_id(id: u32) -> Option<Ptm> {
        match id {
            1 => Some(Ptm::Acetyl),
            4 => Some(Ptm::Carbamidomethyl),
            35 => Some(Ptm::Oxidation),
            _ => None,
        }
    }

    /// Monoisotopic mass shift in Da.
    pub fn mass_delta(self) -> f64 {
        match self {
            Ptm::Acetyl => 42.010_564_683_7,
            Ptm::Carbamidomethyl => 57.021_463_720_6,
            Ptm::Oxidation => 15.994_914_619_6,
        }
    }

    /// Residues this modification may be attached to.
    pub fn allowed_residues(self) -> &'static [u8] {
        match self {
            Ptm::Acetyl => b"K",
            Ptm::Carbamidomethyl => b"C",
            Ptm::Oxidation => b"MW",
        }
    }

    pub fn allowed_at_n_terminus(self) -> bool {
        matches!(self, Ptm::Acetyl)
    }
}

/// Accepted spellings of the whitelisted modifications, matched
/// case-insensitively against the text between the brackets.
///
/// This list is a superset guess at what common exporters emit; extend it
/// here, never by fuzzy matching.
pub const PTM_ALIASES: &[(&str, Ptm)] = &[
    ("unimod:1", Ptm::Acetyl),
    ("acetyl", Ptm::Acetyl),
    ("acetylation", Ptm::Acetyl),
    ("ac", Ptm::Acetyl),
    ("+42.011", Ptm::Acetyl),
    ("+42.0106", Ptm::Acetyl),
    ("+42.010565", Ptm::Acetyl),
    ("unimod:4", Ptm::Carbamidomethyl),
    ("carbamidomethyl", Ptm::Carbamidomethyl),
    ("carbamidomethylation", Ptm::Carbamidomethyl),
    ("cam", Ptm::Carbamidomethyl),
    ("+57.021", Ptm::Carbamidomethyl),
    ("+57.0215", Ptm::Carbamidomethyl),
    ("+57.021464", Ptm::Carbamidomethyl),
    ("unimod:35", Ptm::Oxidation),
    ("oxidation", Ptm::Oxidation),
    ("ox", Ptm::Oxidation),
    ("+15.995", Ptm::Oxidation),
    ("+15.9949", Ptm::Oxidation),
    ("+15.994915", Ptm::Oxidation),
];

fn resolve_alias(token: &str) -> Option<Ptm> {
    let token = token.trim();
    PTM_ALIASES
        .iter()
        .find(|(alias, _)| alias.eq_ignore_ascii_case(token))
        .map(|&(_, ptm)| ptm)
}

/// Coarse PTM category of a peptide. When several modification types are
/// present the priority is Ace > Cam > Ox.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PtmBucket {
    Unmod,
    Ox,
    Cam,
    Ace,
}

impl PtmBucket {
    pub const ALL: [PtmBucket; 4] = [PtmBucket::Unmod, PtmBucket::Ox, PtmBucket::Cam, PtmBucket::Ace];

    pub fn as_str(self) -> &'static str {
        match self {
            PtmBucket::Unmod => "unmod",
            PtmBucket::Ox => "ox",
            PtmBucket::Cam => "cam",
            PtmBucket::Ace => "ace",
        }
    }
}

impl fmt::Display for PtmBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PtmBucket {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PtmBucket::ALL
            .into_iter()
            .find(|b| b.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown ptm bucket '{s}'")))
    }
}

/// A residue chain with at most one whitelisted modification per site and an
/// optional N-terminal modification.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModifiedPeptide {
    residues: Vec<u8>,
    mods: Vec<Option<Ptm>>,
    nterm: Option<Ptm>,
}

impl ModifiedPeptide {
    /// Builds a peptide from parts, applying the same validation as the parser.
    /// `mods` must be empty (no site modifications) or have one entry per residue.
    pub fn new(residues: &[u8], mods: Vec<Option<Ptm>>, nterm: Option<Ptm>) -> Result<Self> {
        if residues.is_empty() {
            return Err(Error::EmptySequence);
        }
        if residues.len() > MAX_PARSE_LENGTH {
            return Err(Error::InvalidLength(residues.len()));
        }
        for (i, &r) in residues.iter().enumerate() {
            if residue_mass(r).is_none() {
                return Err(Error::UnknownResidue {
                    residue: r as char,
                    position: i + 1,
                });
            }
        }
        let mods = if mods.is_empty() {
            vec![None; residues.len()]
        } else if mods.len() == residues.len() {
            mods
        } else {
            return Err(Error::MalformedToken {
                offset: 0,
                message: format!("{} modification slots for {} residues", mods.len(), residues.len()),
            });
        };
        for (&r, m) in residues.iter().zip(&mods) {
            if let Some(ptm) = m {
                check_site(*ptm, r, &format!("[UNIMOD:{}]", ptm.unimod_id()))?;
            }
        }
        if let Some(ptm) = nterm {
            check_nterm(ptm, &format!("[UNIMOD:{}]", ptm.unimod_id()))?;
        }
        Ok(Self {
            residues: residues.to_vec(),
            mods,
            nterm,
        })
    }

    pub fn unmodified(residues: &[u8]) -> Result<Self> {
        Self::new(residues, Vec::new(), None)
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    pub fn residues(&self) -> &[u8] {
        &self.residues
    }

    /// Modification at 1-based `position`.
    pub fn site_mod(&self, position: usize) -> Option<Ptm> {
        position
            .checked_sub(1)
            .and_then(|i| self.mods.get(i).copied().flatten())
    }

    /// Site modifications as (1-based position, ptm).
    pub fn site_mods(&self) -> impl Iterator<Item = (usize, Ptm)> + '_ {
        self.mods
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|ptm| (i + 1, ptm)))
    }

    pub fn nterm_mod(&self) -> Option<Ptm> {
        self.nterm
    }

    pub fn has_ptm(&self) -> bool {
        self.nterm.is_some() || self.mods.iter().any(Option::is_some)
    }

    /// Residue mass at 0-based index including any site modification.
    #[inline]
    pub fn modified_residue_mass(&self, index: usize) -> f64 {
        let base = residue_mass(self.residues[index]).expect("validated residue");
        base + self.mods[index].map_or(0.0, Ptm::mass_delta)
    }

    /// The backbone: residue letters with every modification stripped.
    pub fn to_naked(&self) -> String {
        // residues are validated ASCII uppercase
        String::from_utf8(self.residues.clone()).expect("ascii residues")
    }

    pub fn to_canonical_string(&self) -> String {
        let mut out = String::with_capacity(self.residues.len() + 12);
        if let Some(ptm) = self.nterm {
            push_token(&mut out, ptm);
        }
        for (&r, m) in self.residues.iter().zip(&self.mods) {
            out.push(r as char);
            if let Some(ptm) = m {
                push_token(&mut out, *ptm);
            }
        }
        out
    }

    pub fn ptm_bucket(&self) -> PtmBucket {
        let mut present = [false; 3];
        for ptm in self.nterm.iter().chain(self.mods.iter().flatten()) {
            present[*ptm as usize] = true;
        }
        match present {
            [true, _, _] => PtmBucket::Ace,
            [false, true, _] => PtmBucket::Cam,
            [false, false, true] => PtmBucket::Ox,
            _ => PtmBucket::Unmod,
        }
    }

    pub fn ptm_metadata(&self) -> (bool, PtmBucket) {
        (self.has_ptm(), self.ptm_bucket())
    }

    /// Neutral monoisotopic mass: residues, modification deltas and one water.
    pub fn monoisotopic_mass(&self) -> f64 {
        let residues: f64 = (0..self.len()).map(|i| self.modified_residue_mass(i)).sum();
        residues + self.nterm.map_or(0.0, Ptm::mass_delta) + WATER_MASS
    }

    pub fn in_length_scope(&self) -> bool {
        (SCOPE_MIN_LENGTH..=SCOPE_MAX_LENGTH).contains(&self.len())
    }
}

fn push_token(out: &mut String, ptm: Ptm) {
    use fmt::Write;
    let _ = write!(out, "[UNIMOD:{}]", ptm.unimod_id());
}

impl fmt::Display for ModifiedPeptide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_canonical_string())
    }
}

impl FromStr for ModifiedPeptide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_modified_sequence(s)
    }
}

fn check_site(ptm: Ptm, residue: u8, token: &str) -> Result<()> {
    if ptm.allowed_residues().contains(&residue) {
        Ok(())
    } else {
        Err(Error::UnsupportedModification {
            token: token.to_string(),
            reason: format!("UNIMOD:{} is not allowed on {}", ptm.unimod_id(), residue as char),
        })
    }
}

fn check_nterm(ptm: Ptm, token: &str) -> Result<()> {
    if ptm.allowed_at_n_terminus() {
        Ok(())
    } else {
        Err(Error::UnsupportedModification {
            token: token.to_string(),
            reason: format!("UNIMOD:{} is not allowed at the N-terminus", ptm.unimod_id()),
        })
    }
}

/// Reads one bracketed token starting at `open`; returns the inner text and
/// the index just past the closing bracket.
fn read_token(text: &str, open: usize) -> Result<(&str, usize)> {
    let bytes = text.as_bytes();
    let close = match bytes[open] {
        b'[' => b']',
        b'(' => b')',
        _ => unreachable!("caller checks the opening bracket"),
    };
    let rest = &bytes[open + 1..];
    let len = rest
        .iter()
        .position(|&b| b == close)
        .ok_or_else(|| Error::MalformedToken {
            offset: open,
            message: "unterminated modification token".into(),
        })?;
    let inner = &text[open + 1..open + 1 + len];
    if inner.trim().is_empty() {
        return Err(Error::MalformedToken {
            offset: open,
            message: "empty modification token".into(),
        });
    }
    if inner.bytes().any(|b| matches!(b, b'[' | b'(' | b']' | b')')) {
        return Err(Error::MalformedToken {
            offset: open,
            message: "nested brackets in modification token".into(),
        });
    }
    Ok((inner, open + len + 2))
}

fn resolve_token(inner: &str) -> Result<Ptm> {
    resolve_alias(inner).ok_or_else(|| Error::UnsupportedModification {
        token: inner.to_string(),
        reason: "not one of UNIMOD 1, 4, 35".into(),
    })
}

/// Parses a modified peptide string, normalizing recognized modification
/// spellings to their UNIMOD identity.
pub fn parse_modified_sequence(text: &str) -> Result<ModifiedPeptide> {
    let text = text.trim().trim_matches('_');
    if text.is_empty() {
        return Err(Error::EmptySequence);
    }
    let bytes = text.as_bytes();
    let mut residues = Vec::with_capacity(bytes.len());
    let mut mods: Vec<Option<Ptm>> = Vec::with_capacity(bytes.len());
    let mut nterm = None;
    let mut i = 0;

    if matches!(bytes[0], b'[' | b'(') {
        let (inner, next) = read_token(text, 0)?;
        let ptm = resolve_token(inner)?;
        check_nterm(ptm, inner)?;
        nterm = Some(ptm);
        i = next;
        if bytes.get(i) == Some(&b'-') {
            i += 1;
        }
    }

    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b'[' | b'(' => {
                let Some(&residue) = residues.last() else {
                    return Err(Error::MalformedToken {
                        offset: i,
                        message: "modification token without a preceding residue".into(),
                    });
                };
                let slot = mods.last_mut().expect("parallel to residues");
                if slot.is_some() {
                    return Err(Error::MalformedToken {
                        offset: i,
                        message: "more than one modification on a residue".into(),
                    });
                }
                let (inner, next) = read_token(text, i)?;
                let ptm = resolve_token(inner)?;
                check_site(ptm, residue, inner)?;
                *slot = Some(ptm);
                i = next;
            }
            b'A'..=b'Z' => {
                if residue_mass(b).is_none() {
                    return Err(Error::UnknownResidue {
                        residue: b as char,
                        position: residues.len() + 1,
                    });
                }
                residues.push(b);
                mods.push(None);
                i += 1;
            }
            _ if b.is_ascii_alphabetic() => {
                return Err(Error::UnknownResidue {
                    residue: b as char,
                    position: residues.len() + 1,
                });
            }
            _ => {
                return Err(Error::MalformedToken {
                    offset: i,
                    message: format!("unexpected character '{}'", text[i..].chars().next().unwrap_or('?')),
                });
            }
        }
    }

    if residues.is_empty() {
        return Err(Error::EmptySequence);
    }
    if residues.len() > MAX_PARSE_LENGTH {
        return Err(Error::InvalidLength(residues.len()));
    }
    Ok(ModifiedPeptide { residues, mods, nterm })
}

pub fn to_naked(peptide: &ModifiedPeptide) -> String {
    peptide.to_naked()
}

pub fn to_canonical_string(peptide: &ModifiedPeptide) -> String {
    peptide.to_canonical_string()
}

pub fn ptm_metadata(peptide: &ModifiedPeptide) -> (bool, PtmBucket) {
    peptide.ptm_metadata()
}

pub fn monoisotopic_mass(peptide: &ModifiedPeptide) -> f64 {
    peptide.monoisotopic_mass()
}

pub fn charge_in_scope(charge: u8) -> bool {
    (SCOPE_MIN_CHARGE..=SCOPE_MAX_CHARGE).contains(&charge)
}

/// Length and charge bounds only; quality columns are not consulted.
pub fn in_physical_scope(peptide: &ModifiedPeptide, charge: u8) -> bool {
    peptide.in_length_scope() && charge_in_scope(charge)
}

/// Benchmark scope filter. Quality thresholds apply only when the record
/// carries the corresponding column.
pub fn scope_filter(record: &SpectrumRecord) -> bool {
    if !in_physical_scope(&record.peptide, record.charge) {
        return false;
    }
    if let Some(score) = record.andromeda_score {
        if !(score >= MIN_ANDROMEDA_SCORE) {
            return false;
        }
    }
    if let Some(ppm) = record.mass_error_ppm {
        if !(ppm.abs() <= MAX_ABS_MASS_ERROR_PPM) {
            return false;
        }
    }
    true
}
