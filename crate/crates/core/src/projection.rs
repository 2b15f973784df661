//! Projection of experimental spectra and model outputs into the canonical
//! ion space.
//!
//! Every projection ends the same way: negative or non-finite values are set
//! to zero, positions outside the validity mask are zeroed, and the vector is
//! scaled so that its largest masked-in value is 1 (all-zero vectors stay
//! all-zero).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ions::{valid_mask, CanonicalSpace, FragmentLadder, IonId, IonType, Mask};
use crate::peptide::ModifiedPeptide;

pub const BIN_WIDTH: f64 = 0.1;
pub const N_BINS: usize = 20_000;
pub const MAX_MZ: f64 = 2000.0;

/// Centroided peak list. Peaks with m/z outside (0, 2000] are dropped on
/// construction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawSpectrum {
    mz: Vec<f64>,
    intensity: Vec<f64>,
}

impl RawSpectrum {
    pub fn new(mz: Vec<f64>, intensity: Vec<f64>) -> Result<Self> {
        if mz.len() != intensity.len() {
            return Err(Error::InvalidSpectrum(format!(
                "{} m/z values but {} intensities",
                mz.len(),
                intensity.len()
            )));
        }
        if let Some(bad) = mz.iter().chain(&intensity).find(|v| !v.is_finite()) {
            return Err(Error::InvalidSpectrum(format!("non-finite value {bad}")));
        }
        if let Some(bad) = intensity.iter().find(|&&v| v < 0.0) {
            return Err(Error::InvalidSpectrum(format!("negative intensity {bad}")));
        }
        let (mz, intensity) = mz
            .into_iter()
            .zip(intensity)
            .filter(|(m, _)| *m > 0.0 && *m <= MAX_MZ)
            .unzip();
        Ok(Self { mz, intensity })
    }

    pub fn mz(&self) -> &[f64] {
        &self.mz
    }

    pub fn intensity(&self) -> &[f64] {
        &self.intensity
    }

    pub fn len(&self) -> usize {
        self.mz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mz.is_empty()
    }

    /// Peaks collapsed to (bin, max intensity), sorted by bin.
    fn sparse_bins(&self) -> Vec<(usize, f64)> {
        let mut peaks: Vec<(usize, f64)> = self
            .mz
            .iter()
            .zip(&self.intensity)
            .filter_map(|(&m, &i)| mz_to_bin(m).map(|b| (b, i)))
            .collect();
        peaks.sort_unstable_by_key(|&(b, _)| b);
        peaks.dedup_by(|later, kept| {
            if later.0 == kept.0 {
                kept.1 = kept.1.max(later.1);
                true
            } else {
                false
            }
        });
        peaks
    }
}

/// Nearest 0.1 Da bin, ties to even as in numpy's `round`.
#[inline]
pub fn mz_to_bin(mz: f64) -> Option<usize> {
    let bin = (mz / BIN_WIDTH).round_ties_even();
    (bin >= 0.0 && bin < N_BINS as f64).then_some(bin as usize)
}

/// Dense 20,000-bin intensity vector over 0-2000 m/z.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedSpectrum {
    bins: Vec<f64>,
}

impl BinnedSpectrum {
    pub fn zeros() -> Self {
        Self {
            bins: vec![0.0; N_BINS],
        }
    }

    pub fn from_bins(bins: Vec<f64>) -> Result<Self> {
        if bins.len() != N_BINS {
            return Err(Error::LayoutMismatch(format!(
                "binned spectrum needs {N_BINS} bins, got {}",
                bins.len()
            )));
        }
        Ok(Self { bins })
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn get(&self, bin: usize) -> f64 {
        self.bins[bin]
    }
}

/// Bins a spectrum; peaks sharing a bin keep the maximum intensity.
pub fn bin_spectrum(spectrum: &RawSpectrum) -> BinnedSpectrum {
    let mut out = BinnedSpectrum::zeros();
    for (&m, &i) in spectrum.mz.iter().zip(&spectrum.intensity) {
        if let Some(b) = mz_to_bin(m) {
            let slot = &mut out.bins[b];
            *slot = slot.max(i);
        }
    }
    out
}

/// Intensity vector in the canonical space with its validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalVector {
    values: Vec<f64>,
    mask: Mask,
}

impl CanonicalVector {
    /// Clamps, masks and base-peak normalizes `values`.
    pub fn from_masked(mut values: Vec<f64>, mask: Mask) -> Result<Self> {
        if values.len() != mask.len() {
            return Err(Error::LayoutMismatch(format!(
                "{} values for a {}-d mask",
                values.len(),
                mask.len()
            )));
        }
        let mut max = 0.0f64;
        for (v, &valid) in values.iter_mut().zip(mask.bits()) {
            if !valid || !v.is_finite() || *v <= 0.0 {
                *v = 0.0;
            }
            max = max.max(*v);
        }
        if max > 0.0 {
            for v in &mut values {
                *v /= max;
            }
        }
        Ok(Self { values, mask })
    }

    pub fn zeros(mask: Mask) -> Self {
        Self {
            values: vec![0.0; mask.len()],
            mask,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Masked-in values in canonical order.
    pub fn masked_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.mask.indices().map(|i| self.values[i])
    }

    /// Re-applies a different mask (and renormalizes).
    pub fn remask(&self, mask: &Mask) -> Result<Self> {
        Self::from_masked(self.values.clone(), mask.clone())
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

fn checked_mask(peptide: &ModifiedPeptide, charge: u8, space: &CanonicalSpace) -> Result<Mask> {
    let mask = valid_mask(peptide, charge, space);
    if mask.count() == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(mask)
}

/// Theoretical bin of every masked-in ion (None when the ion falls outside
/// the binned range).
fn ion_bins<'a>(
    peptide: &ModifiedPeptide,
    mask: &'a Mask,
    space: &'a CanonicalSpace,
) -> impl Iterator<Item = (usize, Option<usize>)> + 'a {
    let ladder = FragmentLadder::new(peptide);
    mask.indices().map(move |i| {
        let ion = space.ion_at(i).expect("mask index in space");
        let mz = ladder.mz(ion).expect("masked ion lies within peptide");
        (i, mz_to_bin(mz))
    })
}

/// Ground-truth projection: reads the (max-collapsed) intensity in each
/// valid ion's theoretical 0.1 Da bin.
pub fn project_ground_truth(
    spectrum: &RawSpectrum,
    peptide: &ModifiedPeptide,
    charge: u8,
    space: &CanonicalSpace,
) -> Result<CanonicalVector> {
    let mask = checked_mask(peptide, charge, space)?;
    let peaks = spectrum.sparse_bins();
    let mut values = vec![0.0; space.dim()];
    for (i, bin) in ion_bins(peptide, &mask, space) {
        if let Some(bin) = bin {
            if let Ok(k) = peaks.binary_search_by_key(&bin, |&(b, _)| b) {
                values[i] = peaks[k].1;
            }
        }
    }
    CanonicalVector::from_masked(values, mask)
}

/// Same extraction as [`project_ground_truth`] but from pre-binned input,
/// e.g. a full-spectrum model output.
pub fn project_full_spectrum(
    bins: &BinnedSpectrum,
    peptide: &ModifiedPeptide,
    charge: u8,
    space: &CanonicalSpace,
) -> Result<CanonicalVector> {
    let mask = checked_mask(peptide, charge, space)?;
    let mut values = vec![0.0; space.dim()];
    for (i, bin) in ion_bins(peptide, &mask, space) {
        if let Some(bin) = bin {
            values[i] = bins.get(bin);
        }
    }
    CanonicalVector::from_masked(values, mask)
}

/// Scatters (ion, intensity) entries into the canonical space. Duplicate ions
/// keep the last entry.
pub fn project_sparse_entries(
    entries: &[(IonId, f64)],
    peptide: &ModifiedPeptide,
    charge: u8,
    space: &CanonicalSpace,
) -> Result<CanonicalVector> {
    let mut values = vec![0.0; space.dim()];
    for &(ion, v) in entries {
        values[space.index_of(ion)?] = v;
    }
    CanonicalVector::from_masked(values, valid_mask(peptide, charge, space))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Position,
    IonType,
    Charge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChargeOrder {
    Ascending,
    Descending,
}

/// How a model numbers y ions along its position axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YNumbering {
    /// Same cleavage-site index as the b series.
    Cleavage,
    /// Ion number (residue count from the C-terminus), as in `y1, y2, ...`.
    IonNumber,
}

/// Describes a model's native flat ion tensor so it can be remapped onto the
/// canonical space. The tensor is read row-major with `axis_order[0]` as the
/// outermost axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutDescriptor {
    /// Reference length of the native tensor; `None` means the tensor has
    /// exactly `L - 1` positions for the peptide being projected.
    pub model_l_ref: Option<usize>,
    pub model_z_max: u8,
    pub axis_order: [Axis; 3],
    pub ion_order: [IonType; 2],
    pub charge_order: ChargeOrder,
    pub y_numbering: YNumbering,
}

impl LayoutDescriptor {
    /// The canonical layout itself.
    pub fn canonical(space: &CanonicalSpace) -> Self {
        Self {
            model_l_ref: Some(space.l_ref),
            model_z_max: space.z_frag_max,
            axis_order: [Axis::Position, Axis::IonType, Axis::Charge],
            ion_order: [IonType::B, IonType::Y],
            charge_order: ChargeOrder::Ascending,
            y_numbering: YNumbering::Cleavage,
        }
    }

    /// 174-d tensor: 29 positions x (y, b) x charge 1..3, y indexed by ion number.
    pub fn prosit() -> Self {
        Self {
            model_l_ref: Some(30),
            model_z_max: 3,
            axis_order: [Axis::Position, Axis::IonType, Axis::Charge],
            ion_order: [IonType::Y, IonType::B],
            charge_order: ChargeOrder::Ascending,
            y_numbering: YNumbering::IonNumber,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let axes = &self.axis_order;
        let is_perm = [Axis::Position, Axis::IonType, Axis::Charge]
            .iter()
            .all(|a| axes.iter().filter(|x| *x == a).count() == 1);
        if !is_perm {
            return Err(Error::LayoutMismatch("axis_order must be a permutation".into()));
        }
        if self.ion_order[0] == self.ion_order[1] {
            return Err(Error::LayoutMismatch("ion_order must list b and y once".into()));
        }
        if self.model_z_max == 0 || self.model_l_ref.is_some_and(|l| l < 2) {
            return Err(Error::LayoutMismatch("layout needs l_ref >= 2 and z_max >= 1".into()));
        }
        Ok(())
    }

    fn positions(&self, peptide_len: usize) -> usize {
        self.model_l_ref.unwrap_or(peptide_len).saturating_sub(1)
    }

    pub fn native_len(&self, peptide_len: usize) -> usize {
        self.positions(peptide_len) * 2 * self.model_z_max as usize
    }

    /// Maps a native flat index to a canonical ion for a peptide of
    /// `peptide_len` residues; `None` when the cell has no counterpart.
    fn decode(&self, flat: usize, peptide_len: usize) -> Option<IonId> {
        let extent = |axis: Axis| match axis {
            Axis::Position => self.positions(peptide_len),
            Axis::IonType => 2,
            Axis::Charge => self.model_z_max as usize,
        };
        let mut coords = [0usize; 3];
        let mut rest = flat;
        for k in (0..3).rev() {
            let n = extent(self.axis_order[k]);
            coords[k] = rest % n;
            rest /= n;
        }
        let coord = |axis: Axis| coords[self.axis_order.iter().position(|&a| a == axis).unwrap()];

        let ion_type = self.ion_order[coord(Axis::IonType)];
        let number = coord(Axis::Position) + 1;
        let position = match (ion_type, self.y_numbering) {
            (IonType::Y, YNumbering::IonNumber) => peptide_len.checked_sub(number).filter(|&p| p >= 1)?,
            _ => number,
        };
        let slot = coord(Axis::Charge) as u8;
        let charge = match self.charge_order {
            ChargeOrder::Ascending => slot + 1,
            ChargeOrder::Descending => self.model_z_max - slot,
        };
        Some(IonId {
            position,
            ion_type,
            charge,
        })
    }
}

/// Remaps a model's native ion tensor onto the canonical space. Cells beyond
/// the canonical range are dropped; canonical positions the model does not
/// cover are zero.
pub fn project_ion_tensor(
    native: &[f64],
    layout: &LayoutDescriptor,
    peptide: &ModifiedPeptide,
    charge: u8,
    space: &CanonicalSpace,
) -> Result<CanonicalVector> {
    layout.validate()?;
    let expected = layout.native_len(peptide.len());
    if native.len() != expected {
        return Err(Error::LayoutMismatch(format!(
            "expected {expected} native values, got {}",
            native.len()
        )));
    }
    let mut values = vec![0.0; space.dim()];
    for (flat, &v) in native.iter().enumerate() {
        let Some(ion) = layout.decode(flat, peptide.len()) else {
            continue;
        };
        if let Ok(i) = space.index_of(ion) {
            values[i] = v;
        }
    }
    CanonicalVector::from_masked(values, valid_mask(peptide, charge, space))
}
