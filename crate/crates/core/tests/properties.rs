mod common;

use pepspec_core::ions::valid_mask_for;
use pepspec_core::metrics::{bootstrap_ci, spectral_angle_masked, BootstrapConfig};
use pepspec_core::projection::{bin_spectrum, mz_to_bin, BIN_WIDTH};
use pepspec_core::splits::{balanced_quotas, bounded_edit_distance, edit_distance, md5_bucket, SamplingKey, TopN};
use pepspec_core::{parse_modified_sequence, CanonicalSpace, Mask, ModifiedPeptide, Ptm, RawSpectrum, SaConvention};
use proptest::prelude::*;

fn residues() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(prop::sample::select(common::RESIDUES.to_vec()), 1..45)
}

fn peptide() -> impl Strategy<Value = ModifiedPeptide> {
    (residues(), any::<u64>()).prop_map(|(r, seed)| {
        let mut rng = common::rng(seed);
        common::random_decoration(&mut rng, &r, 0.5)
    })
}

fn masked_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Mask)> {
    (2usize..=45, 1u8..=6).prop_flat_map(|(len, z)| {
        let mask = valid_mask_for(len, z, &CanonicalSpace::default());
        let values = prop::collection::vec(prop_oneof![Just(0.0), 0.0..1.0f64], mask.len());
        (values.clone(), values, Just(mask))
    })
}

proptest! {
    #[test]
    fn canonical_string_round_trips(p in peptide(), style in 0usize..3) {
        let text = p.to_canonical_string();
        prop_assert_eq!(&parse_modified_sequence(&text).unwrap(), &p);
        prop_assert_eq!(&parse_modified_sequence(&common::alias_notation(&p, style)).unwrap(), &p);
    }

    #[test]
    fn modifications_add_their_deltas(p in peptide()) {
        let naked = ModifiedPeptide::unmodified(p.residues()).unwrap();
        let delta: f64 = p.site_mods().map(|(_, m)| m.mass_delta()).sum::<f64>()
            + p.nterm_mod().map_or(0.0, Ptm::mass_delta);
        prop_assert!((p.monoisotopic_mass() - naked.monoisotopic_mass() - delta).abs() < 1e-9);
    }

    #[test]
    fn mask_count_formula(len in 1usize..60, z in 1u8..=8) {
        let mask = valid_mask_for(len, z, &CanonicalSpace::default());
        prop_assert_eq!(mask.count(), (len - 1).min(39) * 2 * usize::from(z.min(3)));
    }

    #[test]
    fn sa_symmetric_and_convention_scaled((u, v, mask) in masked_pair()) {
        let a = spectral_angle_masked(&u, &v, &mask, SaConvention::InversePi).unwrap();
        let b = spectral_angle_masked(&v, &u, &mask, SaConvention::InversePi).unwrap();
        let c = spectral_angle_masked(&u, &v, &mask, SaConvention::TwoOverPi).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((c - 2.0 * a).abs() <= 1e-12);
        prop_assert!((0.0..=0.5).contains(&a));
    }

    #[test]
    fn binning_keeps_max_per_bin(peaks in prop::collection::vec((0.01..2000.0f64, 0.0..1e6f64), 0..300)) {
        let (mz, intensity): (Vec<f64>, Vec<f64>) = peaks.iter().cloned().unzip();
        let binned = bin_spectrum(&RawSpectrum::new(mz, intensity).unwrap());
        let mut expected = vec![0.0f64; binned.bins().len()];
        for &(m, i) in &peaks {
            if let Some(b) = mz_to_bin(m) {
                expected[b] = expected[b].max(i);
            }
        }
        prop_assert_eq!(binned.bins(), &expected[..]);
    }

    #[test]
    fn bin_centres_map_to_themselves(bin in 0usize..20_000) {
        prop_assert_eq!(mz_to_bin(bin as f64 * BIN_WIDTH), Some(bin));
    }

    #[test]
    fn index_bijection(l_ref in 2usize..60, zmax in 1u8..6, seed in any::<usize>()) {
        let space = CanonicalSpace::new(l_ref, zmax).unwrap();
        let i = seed % space.dim();
        prop_assert_eq!(space.index_of(space.ion_at(i).unwrap()).unwrap(), i);
    }

    #[test]
    fn md5_bucket_in_range(key in ".*") {
        prop_assert!(md5_bucket(&key) < 100);
    }

    #[test]
    fn balanced_quotas_sum(q in 1usize..100_000) {
        let parts = balanced_quotas(q).unwrap();
        prop_assert_eq!(parts.iter().sum::<usize>(), q);
        prop_assert_eq!(parts[0], q.div_ceil(2));
        prop_assert!(parts[1] >= parts[2] && parts[2] >= parts[3] && parts[1] - parts[3] <= 1);
    }

    #[test]
    fn top_n_matches_sort_and_truncate(keys in prop::collection::vec(any::<u128>(), 0..300), n in 0usize..50) {
        let mut top = TopN::new(n);
        for (i, &k) in keys.iter().enumerate() {
            top.push((SamplingKey(k), i as u128), i);
        }
        let mut sorted: Vec<_> = keys.iter().enumerate().map(|(i, &k)| ((SamplingKey(k), i as u128), i)).collect();
        sorted.sort();
        sorted.truncate(n);
        prop_assert_eq!(top.into_sorted(), sorted);
    }

    #[test]
    fn bounded_edit_distance_agrees(a in "[ABC]{0,12}", b in "[ABC]{0,12}", limit in 0usize..14) {
        let d = edit_distance(&a, &b);
        prop_assert_eq!(bounded_edit_distance(&a, &b, limit), (d <= limit).then_some(d));
    }

    #[test]
    fn bootstrap_ignores_input_order(mut values in prop::collection::vec(0.0..1.0f64, 1..200), seed in any::<u64>()) {
        let config = BootstrapConfig { resamples: 200, level: 0.9, seed };
        let before = bootstrap_ci(&values, &config).unwrap();
        values.reverse();
        let mid = values.len() / 2;
        values.rotate_left(mid);
        prop_assert_eq!(bootstrap_ci(&values, &config).unwrap(), before);
    }
}
