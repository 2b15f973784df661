//! The canonical ion space and theoretical b/y fragment m/z.
//!
//! Index layout is position-major: for cleavage position `p` (1-based, the
//! bond after residue `p`), the `2 * z_frag_max` slots hold the b ion at
//! charges `1..=z_frag_max` followed by the y ion at the same charges.
//!
//! Ions are identified by cleavage position for both series. The b ion at
//! position `p` covers residues `1..=p`; the y ion at position `p` covers
//! residues `p+1..=L` (conventionally `y_{L-p}`).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::peptide::{ModifiedPeptide, Ptm, PROTON_MASS, WATER_MASS};

pub const DEFAULT_L_REF: usize = 40;
pub const DEFAULT_Z_FRAG_MAX: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalSpace {
    pub l_ref: usize,
    pub z_frag_max: u8,
}

impl Default for CanonicalSpace {
    fn default() -> Self {
        Self {
            l_ref: DEFAULT_L_REF,
            z_frag_max: DEFAULT_Z_FRAG_MAX,
        }
    }
}

impl CanonicalSpace {
    pub fn new(l_ref: usize, z_frag_max: u8) -> Result<Self> {
        if l_ref < 2 || z_frag_max == 0 {
            return Err(Error::Config(format!(
                "canonical space needs l_ref >= 2 and z_frag_max >= 1 (got {l_ref}, {z_frag_max})"
            )));
        }
        Ok(Self { l_ref, z_frag_max })
    }

    /// `(l_ref - 1) * 2 * z_frag_max`
    pub fn dim(&self) -> usize {
        (self.l_ref - 1) * 2 * self.z_frag_max as usize
    }

    pub fn max_position(&self) -> usize {
        self.l_ref - 1
    }

    pub fn contains(&self, ion: IonId) -> bool {
        (1..=self.max_position()).contains(&ion.position) && (1..=self.z_frag_max).contains(&ion.charge)
    }

    pub fn index_of(&self, ion: IonId) -> Result<usize> {
        if !self.contains(ion) {
            return Err(Error::OutOfBounds(ion.to_string()));
        }
        let z = self.z_frag_max as usize;
        Ok((ion.position - 1) * 2 * z + ion.ion_type.offset() * z + (ion.charge as usize - 1))
    }

    pub fn ion_at(&self, index: usize) -> Result<IonId> {
        if index >= self.dim() {
            return Err(Error::OutOfBounds(format!("index {index}")));
        }
        let z = self.z_frag_max as usize;
        let position = index / (2 * z) + 1;
        let within = index % (2 * z);
        let ion_type = if within < z { IonType::B } else { IonType::Y };
        Ok(IonId {
            position,
            ion_type,
            charge: (within % z) as u8 + 1,
        })
    }

    pub fn ions(&self) -> impl Iterator<Item = IonId> + '_ {
        (0..self.dim()).map(|i| self.ion_at(i).expect("index within dim"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IonType {
    B,
    Y,
}

impl IonType {
    fn offset(self) -> usize {
        match self {
            IonType::B => 0,
            IonType::Y => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IonId {
    /// 1-based cleavage position.
    pub position: usize,
    pub ion_type: IonType,
    /// Fragment charge.
    pub charge: u8,
}

impl IonId {
    pub fn b(position: usize, charge: u8) -> Self {
        Self {
            position,
            ion_type: IonType::B,
            charge,
        }
    }

    pub fn y(position: usize, charge: u8) -> Self {
        Self {
            position,
            ion_type: IonType::Y,
            charge,
        }
    }
}

impl fmt::Display for IonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = match self.ion_type {
            IonType::B => 'b',
            IonType::Y => 'y',
        };
        write!(f, "{t}@{}^{}+", self.position, self.charge)
    }
}

pub fn canonical_index(ion: IonId, space: &CanonicalSpace) -> Result<usize> {
    space.index_of(ion)
}

/// Validity mask over the canonical space.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    bits: Vec<bool>,
}

impl Mask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn all(dim: usize) -> Self {
        Self { bits: vec![true; dim] }
    }

    pub fn none(dim: usize) -> Self {
        Self { bits: vec![false; dim] }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Number of valid positions (K).
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, index: usize) -> bool {
        self.bits.get(index).copied().unwrap_or(false)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter_map(|(i, &b)| b.then_some(i))
    }
}

/// Mask for a peptide of `length` residues at precursor charge `charge`:
/// position <= L-1 and fragment charge <= min(z, z_frag_max).
pub fn valid_mask_for(length: usize, charge: u8, space: &CanonicalSpace) -> Mask {
    let max_pos = length.saturating_sub(1).min(space.max_position());
    let max_z = charge.min(space.z_frag_max);
    let bits = space
        .ions()
        .map(|ion| ion.position <= max_pos && ion.charge <= max_z)
        .collect();
    Mask { bits }
}

pub fn valid_mask(peptide: &ModifiedPeptide, charge: u8, space: &CanonicalSpace) -> Mask {
    valid_mask_for(peptide.len(), charge, space)
}

/// Neutral b/y fragment masses for every cleavage position of one peptide.
#[derive(Debug, Clone)]
pub struct FragmentLadder {
    /// `prefix[p]` = neutral b fragment mass for cleavage p (index 0 unused).
    prefix: Vec<f64>,
    /// `suffix[p]` = neutral y fragment mass for cleavage p.
    suffix: Vec<f64>,
}

impl FragmentLadder {
    pub fn new(peptide: &ModifiedPeptide) -> Self {
        let n = peptide.len();
        let masses: Vec<f64> = (0..n).map(|i| peptide.modified_residue_mass(i)).collect();
        let mut prefix = vec![0.0; n];
        let mut acc = peptide.nterm_mod().map_or(0.0, Ptm::mass_delta);
        for p in 1..n {
            acc += masses[p - 1];
            prefix[p] = acc;
        }
        let mut suffix = vec![0.0; n];
        let mut acc = WATER_MASS;
        for p in (1..n).rev() {
            acc += masses[p];
            suffix[p] = acc;
        }
        Self { prefix, suffix }
    }

    pub fn peptide_len(&self) -> usize {
        self.prefix.len()
    }

    pub fn neutral_mass(&self, position: usize, ion_type: IonType) -> Result<f64> {
        if position == 0 || position >= self.peptide_len() {
            return Err(Error::PositionBeyondPeptide {
                position,
                length: self.peptide_len(),
            });
        }
        Ok(match ion_type {
            IonType::B => self.prefix[position],
            IonType::Y => self.suffix[position],
        })
    }

    pub fn mz(&self, ion: IonId) -> Result<f64> {
        if ion.charge == 0 {
            return Err(Error::OutOfBounds(ion.to_string()));
        }
        let neutral = self.neutral_mass(ion.position, ion.ion_type)?;
        let z = ion.charge as f64;
        Ok((neutral + z * PROTON_MASS) / z)
    }
}

/// Theoretical m/z of one fragment ion.
pub fn ion_mz(peptide: &ModifiedPeptide, ion: IonId) -> Result<f64> {
    FragmentLadder::new(peptide).mz(ion)
}

/// Every valid ion of the peptide at this precursor charge with its m/z, in
/// canonical index order.
pub fn enumerate_ions(peptide: &ModifiedPeptide, charge: u8, space: &CanonicalSpace) -> Vec<(IonId, f64)> {
    let ladder = FragmentLadder::new(peptide);
    let mask = valid_mask(peptide, charge, space);
    mask.indices()
        .map(|i| {
            let ion = space.ion_at(i).expect("mask index in space");
            (ion, ladder.mz(ion).expect("masked ion lies within peptide"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::peptide::parse_modified_sequence;

    #[test]
    fn default_dim_is_234() {
        assert_eq!(CanonicalSpace::default().dim(), 234);
    }

    #[test]
    fn index_examples() {
        let s = CanonicalSpace::default();
        assert_eq!(s.index_of(IonId::b(1, 1)).unwrap(), 0);
        assert_eq!(s.index_of(IonId::y(1, 3)).unwrap(), 5);
        assert_eq!(s.index_of(IonId::y(39, 3)).unwrap(), 233);
        assert!(s.index_of(IonId::b(40, 1)).is_err());
        assert!(s.index_of(IonId::b(0, 1)).is_err());
        assert!(s.index_of(IonId::b(1, 4)).is_err());
        assert!(s.ion_at(234).is_err());
    }

    #[test]
    fn index_is_bijective() {
        let s = CanonicalSpace::default();
        let mut seen = vec![false; s.dim()];
        for p in 1..=39 {
            for t in [IonType::B, IonType::Y] {
                for z in 1..=3u8 {
                    let ion = IonId {
                        position: p,
                        ion_type: t,
                        charge: z,
                    };
                    let i = s.index_of(ion).unwrap();
                    assert!(!seen[i]);
                    seen[i] = true;
                    assert_eq!(s.ion_at(i).unwrap(), ion);
                }
            }
        }
        assert!(seen.into_iter().all(|b| b));
    }

    #[test]
    fn glycine_dipeptide_fragments() {
        let gg = parse_modified_sequence("GG").unwrap();
        assert!((ion_mz(&gg, IonId::b(1, 1)).unwrap() - 58.02874).abs() < 1e-5);
        assert!((ion_mz(&gg, IonId::y(1, 1)).unwrap() - 76.03930).abs() < 1e-5);
        assert!((ion_mz(&gg, IonId::b(1, 2)).unwrap() - 29.51801).abs() < 1e-5);
        assert!(matches!(
            ion_mz(&gg, IonId::b(2, 1)),
            Err(Error::PositionBeyondPeptide { position: 2, length: 2 })
        ));
    }

    #[test]
    fn mask_counts() {
        let s = CanonicalSpace::default();
        assert_eq!(valid_mask_for(7, 2, &s).count(), 24);
        assert_eq!(valid_mask_for(40, 6, &s).count(), 234);
        assert_eq!(valid_mask_for(6, 1, &s).count(), 10);
    }

    #[test]
    fn enumeration_matches_mask() {
        let s = CanonicalSpace::default();
        let p = parse_modified_sequence("PEPTIDE").unwrap();
        let ions = enumerate_ions(&p, 2, &s);
        assert_eq!(ions.len(), 24);
        let q = parse_modified_sequence("PEPTID").unwrap();
        let ions = enumerate_ions(&q, 1, &s);
        assert_eq!(ions.len(), 10);
        assert!(ions.iter().all(|(ion, _)| ion.charge == 1));
        let idx: Vec<usize> = ions.iter().map(|(ion, _)| s.index_of(*ion).unwrap()).collect();
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn nterm_acetyl_only_shifts_b_ions() {
        let plain = FragmentLadder::new(&parse_modified_sequence("MAKER").unwrap());
        let acetyl = FragmentLadder::new(&parse_modified_sequence("[UNIMOD:1]MAKER").unwrap());
        for p in 1..5 {
            let db = acetyl.neutral_mass(p, IonType::B).unwrap() - plain.neutral_mass(p, IonType::B).unwrap();
            let dy = acetyl.neutral_mass(p, IonType::Y).unwrap() - plain.neutral_mass(p, IonType::Y).unwrap();
            assert!((db - Ptm::Acetyl.mass_delta()).abs() < 1e-9);
            assert_eq!(dy, 0.0);
        }
    }
}
