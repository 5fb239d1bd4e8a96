use lesionkit::dataprep::{centered_corner, random_split, sample_patch_pair, size_balanced_split, CaseRecord, PatchSpec};
use lesionkit::ensemble::{ensemble, postprocess, EnsembleConfig, PostprocessConfig};
use lesionkit::labeling::{binarize, category_to_binary, dbl_encode, msl_encode, DistanceBands, SizeBands};
use lesionkit::metrics::{dice, lesionwise_counts};
use lesionkit::volume::{distance_to_background, label_components};
use lesionkit::{Connectivity, DistanceUnits, Mask, VoxelGrid};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dims_strategy(max: usize) -> impl Strategy<Value = [usize; 3]> {
    [1..=max, 1..=max, 1..=max]
}

fn mask_strategy(max: usize) -> impl Strategy<Value = Mask> {
    dims_strategy(max).prop_flat_map(|dims| {
        let n: usize = dims.iter().product();
        (0.05f64..0.6, proptest::collection::vec(0.0f64..1.0, n)).prop_map(move |(density, u)| {
            Mask::new(dims, u.iter().map(|&x| u8::from(x < density)).collect()).unwrap()
        })
    })
}

fn conn_strategy() -> impl Strategy<Value = Connectivity> {
    prop_oneof![
        Just(Connectivity::Six),
        Just(Connectivity::Eighteen),
        Just(Connectivity::TwentySix)
    ]
}

/// Probability map with values clustered around the usual thresholds.
fn prob_map(dims: [usize; 3]) -> impl Strategy<Value = VoxelGrid<f64>> {
    let levels = [0.0, 0.1, 0.3, 0.5, 0.55, 0.6, 0.75, 0.8, 0.95, 1.0];
    proptest::collection::vec(proptest::sample::select(levels.to_vec()), dims.iter().product::<usize>())
        .prop_map(move |v| VoxelGrid::new(dims, v).unwrap())
}

fn prob_pair(max: usize) -> impl Strategy<Value = (VoxelGrid<f64>, VoxelGrid<f64>)> {
    dims_strategy(max).prop_flat_map(|d| (prob_map(d), prob_map(d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn components_partition_foreground(mask in mask_strategy(10), conn in conn_strategy()) {
        let labels = label_components(&mask, conn);
        let mut first_seen = Vec::new();
        for (i, (&l, &m)) in labels.labels.data().iter().zip(mask.data()).enumerate() {
            prop_assert_eq!(l != 0, m != 0);
            if l as usize > first_seen.len() {
                prop_assert_eq!(l as usize, first_seen.len() + 1);
                first_seen.push(i);
            }
        }
        prop_assert_eq!(labels.volumes.iter().sum::<usize>(), mask.count_nonzero());
    }

    #[test]
    fn more_neighbours_never_more_components(mask in mask_strategy(10)) {
        let c6 = label_components(&mask, Connectivity::Six).count();
        let c18 = label_components(&mask, Connectivity::Eighteen).count();
        let c26 = label_components(&mask, Connectivity::TwentySix).count();
        prop_assert!(c26 <= c18 && c18 <= c6);
    }

    #[test]
    fn distance_commutes_with_axis_permutation(mask in mask_strategy(9), perm in 0usize..6) {
        let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let order = orders[perm];
        let d = distance_to_background::<f64>(&mask, DistanceUnits::Voxels).unwrap();
        let dp = distance_to_background::<f64>(&mask.permute_axes(order), DistanceUnits::Voxels).unwrap();
        prop_assert_eq!(d.permute_axes(order), dp);
        for (&v, &m) in d.data().iter().zip(mask.data()) {
            prop_assert_eq!(v == 0.0, m == 0);
            prop_assert!(m == 0 || v >= 1.0);
        }
    }

    #[test]
    fn relabeling_round_trips(mask in mask_strategy(10), conn in conn_strategy(), transition in any::<bool>()) {
        let msl = msl_encode(&mask, &SizeBands::default(), conn).unwrap();
        prop_assert_eq!(&category_to_binary(&msl), &mask);
        let bands = if transition { DistanceBands::with_transition() } else { DistanceBands::default() };
        let dbl = dbl_encode(&mask, &bands, DistanceUnits::Voxels).unwrap();
        prop_assert_eq!(&category_to_binary(&dbl), &mask);
    }

    #[test]
    fn msl_label_is_a_monotone_function_of_component_volume(
        mask in mask_strategy(12),
        conn in conn_strategy(),
        t in proptest::collection::btree_set(1u64..60, 1..4),
    ) {
        let bands = SizeBands::new(t.into_iter().collect()).unwrap();
        let labels = label_components(&mask, conn);
        let cm = msl_encode(&mask, &bands, conn).unwrap();
        let mut by_component = vec![0u8; labels.count() + 1];
        for (&id, &cat) in labels.labels.data().iter().zip(cm.labels().data()) {
            if id == 0 {
                continue;
            }
            let seen = &mut by_component[id as usize];
            prop_assert!(*seen == 0 || *seen == cat, "component {} has mixed labels", id);
            *seen = cat;
        }
        let mut pairs: Vec<(usize, u8)> =
            (1..=labels.count()).map(|id| (labels.volumes[id - 1], by_component[id])).collect();
        pairs.sort();
        prop_assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn dbl_label_is_a_step_function_of_distance(mask in mask_strategy(10), transition in any::<bool>()) {
        let bands = if transition { DistanceBands::with_transition() } else { DistanceBands::default() };
        let d = distance_to_background::<f64>(&mask, DistanceUnits::Voxels).unwrap();
        let cm = dbl_encode(&mask, &bands, DistanceUnits::Voxels).unwrap();
        for (&dist, &cat) in d.data().iter().zip(cm.labels().data()) {
            let expected = if dist == 0.0 {
                0
            } else {
                1 + bands.thresholds().iter().filter(|&&t| t < dist).count() as u8
            };
            prop_assert_eq!(cat, expected);
        }
    }

    #[test]
    fn ensemble_only_touches_small_candidates(
        (msl, dbl) in prob_pair(9),
        lambda in 0.0f64..=1.0,
        cutoff in 1usize..40,
        conn in conn_strategy(),
    ) {
        let cfg = EnsembleConfig { lambda, small_cutoff: cutoff, binarize_threshold: 0.5, conn };
        let out = ensemble(&msl, &dbl, &cfg).unwrap();
        let a = binarize(&msl, 0.5).unwrap();
        let b = binarize(&dbl, 0.5).unwrap();
        let union = a.with_data(a.data().iter().zip(b.data()).map(|(x, y)| x | y).collect()).unwrap();
        let labels = label_components(&union, conn);
        for i in 0..msl.len() {
            let id = labels.labels.data()[i];
            let (m, d, f) = (msl.data()[i], dbl.data()[i], out.fused.data()[i]);
            if id == 0 || labels.volume_of(id) >= cutoff {
                prop_assert_eq!(f.to_bits(), d.to_bits());
            } else {
                prop_assert!(f >= m.min(d) && f <= m.max(d));
                prop_assert!((f - (lambda * m + (1.0 - lambda) * d)).abs() <= 1e-12);
            }
        }
        prop_assert_eq!(out.mask, binarize(&out.fused, 0.5).unwrap());
    }

    #[test]
    fn ensemble_degenerate_rates((msl, dbl) in prob_pair(8), conn in conn_strategy()) {
        let base = EnsembleConfig { lambda: 0.0, small_cutoff: 1000, binarize_threshold: 0.5, conn };
        prop_assert_eq!(ensemble(&msl, &dbl, &base).unwrap().fused, dbl.clone());
        let one = ensemble(&msl, &dbl, &EnsembleConfig { lambda: 1.0, ..base }).unwrap();
        let a = binarize(&msl, 0.5).unwrap();
        let b = binarize(&dbl, 0.5).unwrap();
        for i in 0..msl.len() {
            let candidate = a.data()[i] | b.data()[i] != 0;
            let expected = if candidate { msl.data()[i] } else { dbl.data()[i] };
            prop_assert_eq!(one.fused.data()[i].to_bits(), expected.to_bits());
        }
    }

    #[test]
    fn postprocessing_shrinks_monotonically(
        prob in dims_strategy(9).prop_flat_map(prob_map),
        t1 in 0.0f64..=1.0,
        t2 in 0.0f64..=1.0,
        cutoff in 1usize..30,
        conn in conn_strategy(),
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let mask = binarize(&prob, 0.5).unwrap();
        let cfg = |t| PostprocessConfig { prob_threshold: t, small_cutoff: cutoff, conn };
        let zero = postprocess(&mask, &prob, &cfg(0.0)).unwrap();
        prop_assert_eq!(&zero, &mask);
        let keep_lo = postprocess(&mask, &prob, &cfg(lo)).unwrap();
        let keep_hi = postprocess(&mask, &prob, &cfg(hi)).unwrap();
        for i in 0..mask.len() {
            prop_assert!(keep_hi.data()[i] <= keep_lo.data()[i]);
            prop_assert!(keep_lo.data()[i] <= mask.data()[i]);
        }
        prop_assert_eq!(postprocess(&keep_hi, &prob, &cfg(hi)).unwrap(), keep_hi.clone());
        let labels = label_components(&mask, conn);
        for (i, &id) in labels.labels.data().iter().enumerate() {
            if id != 0 && labels.volume_of(id) >= cutoff {
                prop_assert_eq!(keep_hi.data()[i], 1);
            }
        }
    }

    #[test]
    fn dice_is_symmetric_and_bounded(a in mask_strategy(8), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = a.map(|_| u8::from(rand::Rng::gen_bool(&mut rng, 0.3)));
        let ab = dice(&a, &b).unwrap();
        prop_assert_eq!(ab, dice(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let c = lesionwise_counts(&a, &b, Connectivity::TwentySix).unwrap();
        prop_assert_eq!(c.tp + c.fn_, label_components(&b, Connectivity::TwentySix).count());
    }

    #[test]
    fn split_folds_are_balanced(
        volumes in proptest::collection::vec(1u64..200_000, 2..120),
        k in 2usize..8,
        seed in any::<u64>(),
    ) {
        prop_assume!(k <= volumes.len());
        let cases: Vec<CaseRecord> =
            volumes.iter().enumerate().map(|(i, &v)| CaseRecord::new(format!("c{i:03}"), v)).collect();
        let folds = size_balanced_split(&cases, k, seed).unwrap();
        let sizes = folds.fold_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let totals = folds.fold_totals(&cases);
        let gap = totals.iter().max().unwrap() - totals.iter().min().unwrap();
        prop_assert!(gap <= *volumes.iter().max().unwrap());
        prop_assert_eq!(folds.folds.len(), cases.len());
    }

    #[test]
    fn lesion_patch_contains_its_voxel(
        mask in mask_strategy(14),
        size in [1usize..12, 1usize..12, 1usize..12],
        seed in any::<u64>(),
    ) {
        prop_assume!(mask.count_nonzero() > 0);
        let image = mask.map(|&v| v as f32);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = sample_patch_pair(&image, &mask, &PatchSpec { size, seed }, &mut rng).unwrap();
        let v = pair.center_voxel.unwrap();
        prop_assert_eq!(mask.get(v[0], v[1], v[2]), 1);
        let c = pair.lesion_centered.corner;
        prop_assert_eq!(c, centered_corner(mask.dims(), size, v));
        let local: Vec<isize> = (0..3).map(|a| v[a] as isize - c[a]).collect();
        for a in 0..3 {
            prop_assert!(local[a] >= 0 && (local[a] as usize) < size[a]);
            let n = mask.dims()[a];
            let half = size[a] / 2;
            if n >= size[a] && v[a] >= half && v[a] + size[a] - half <= n {
                prop_assert_eq!(local[a] as usize, half);
            }
        }
        let l = [local[0] as usize, local[1] as usize, local[2] as usize];
        prop_assert_eq!(pair.lesion_centered.mask.get(l[0], l[1], l[2]), 1);
    }
}

#[test]
fn balanced_split_beats_random_on_average() {
    let mut gap_balanced = 0u64;
    let mut gap_random = 0u64;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..40 {
        let cases: Vec<CaseRecord> = (0..100)
            .map(|i| CaseRecord::new(format!("c{i}"), rand::Rng::gen_range(&mut rng, 13u64..200_000)))
            .collect();
        let gap = |f: &lesionkit::dataprep::FoldAssignment| {
            let t = f.fold_totals(&cases);
            t.iter().max().unwrap() - t.iter().min().unwrap()
        };
        gap_balanced += gap(&size_balanced_split(&cases, 5, seed).unwrap());
        gap_random += gap(&random_split(&cases, 5, seed).unwrap());
    }
    assert!(gap_balanced * 10 < gap_random, "{gap_balanced} vs {gap_random}");
}
