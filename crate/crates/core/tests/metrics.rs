#[path = "support/oracle.rs"]
mod oracle;

use ct_core::data::{ConceptMatrix, Layer};
use ct_core::metrics::{
    bin_activations, nmi_binned, normalized_mutual_information, saliency, saliency_matrix, selectivity_matrix,
    ActivationVector, BinnedVector, ConceptLevel, ConceptVector,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn av(v: Vec<f64>) -> ActivationVector {
    ActivationVector::new(v).unwrap()
}

fn cv(v: Vec<u8>) -> ConceptVector {
    ConceptVector::new("c", ConceptLevel::Unspecified, v).unwrap()
}

#[test]
fn nmi_matches_brute_force_on_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let m = rng.random_range(2..=8);
        let bins = rng.random_range(2..=4);
        // coarse grid so ties show up
        let a: Vec<f64> = (0..m).map(|_| rng.random_range(0..5) as f64 * 0.5).collect();
        let b: Vec<u8> = (0..m).map(|_| rng.random_range(0..2)).collect();
        let got = normalized_mutual_information(&av(a.clone()), &cv(b.clone()), bins).unwrap();
        let want = oracle::saliency(&a, &b, bins);
        worst = worst.max((got - want).abs());
        let expected_bins: Vec<u16> = oracle::bins(&a, bins).into_iter().map(|x| x as u16).collect();
        assert_eq!(bin_activations(&av(a.clone()), bins).unwrap().bin_indices(), &expected_bins[..]);
    }
    assert!(worst <= 1e-12, "max deviation {worst:e}");
}

#[test]
fn worked_example_value() {
    let a = av(vec![0.1, 0.2, 0.3, 0.9]);
    let b = cv(vec![0, 0, 1, 1]);
    // with 2 bins the activations split as [0, 0, 1, 1]; with 4 bins each sample gets its own bin
    let binned_pattern = oracle::nmi(&[0, 0, 0, 1], &[0, 0, 1, 1]);
    assert!((binned_pattern - 0.383_688_546_596_344).abs() < 1e-12);
    let lib = nmi_binned(&BinnedVector::new(vec![0, 0, 0, 1], 2).unwrap(), &b).unwrap();
    assert!((lib - binned_pattern).abs() < 1e-12);
    assert!((saliency(&a, &b, 2).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn noiseless_perfect_separation() {
    let b = vec![0, 1, 0, 1, 1, 0, 0, 1];
    let a: Vec<f64> = b.iter().map(|&x| x as f64).collect();
    assert_eq!(saliency(&av(a), &cv(b), 2).unwrap(), 1.0);
}

fn layer_from_columns(columns: &[Vec<f64>]) -> Layer {
    let m = columns[0].len();
    let n = columns.len();
    let mut data = vec![0f32; m * n];
    for (j, col) in columns.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            data[r * n + j] = v as f32;
        }
    }
    Layer::new(0, "l0", m, n, data).unwrap()
}

fn concepts_from(labels: &[Vec<u8>]) -> ConceptMatrix {
    ConceptMatrix::new(
        labels
            .iter()
            .enumerate()
            .map(|(j, v)| ConceptVector::new(format!("c{j}"), ConceptLevel::Unspecified, v.clone()).unwrap())
            .collect(),
    )
    .unwrap()
}

fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>, usize)> {
    (4usize..64, 2usize..9).prop_flat_map(|(m, bins)| {
        (
            prop::collection::vec((-40i32..40).prop_map(|x| x as f64 / 4.0), m),
            prop::collection::vec(0u8..2, m),
            Just(bins),
        )
    })
}

fn matrix_instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<u8>>)> {
    (8usize..48, 1usize..5, 2usize..6).prop_flat_map(|(m, n, c)| {
        (
            prop::collection::vec(prop::collection::vec(-100.0f64..100.0, m), n),
            prop::collection::vec(prop::collection::vec(0u8..2, m), c),
        )
    })
}

proptest! {
    #[test]
    fn saliency_in_unit_interval((a, b, bins) in instance()) {
        let s = saliency(&av(a), &cv(b), bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn invariant_under_increasing_transform((a, b, bins) in instance()) {
        let base = saliency(&av(a.clone()), &cv(b.clone()), bins).unwrap();
        let affine: Vec<f64> = a.iter().map(|x| 2.0 * x + 7.0).collect();
        let cubic: Vec<f64> = a.iter().map(|x| x * x * x).collect();
        prop_assert_eq!(base, saliency(&av(affine), &cv(b.clone()), bins).unwrap());
        prop_assert_eq!(base, saliency(&av(cubic), &cv(b), bins).unwrap());
    }

    #[test]
    fn invariant_under_label_flip((a, b, bins) in instance()) {
        let flipped: Vec<u8> = b.iter().map(|x| 1 - x).collect();
        let s = saliency(&av(a.clone()), &cv(b), bins).unwrap();
        let t = saliency(&av(a), &cv(flipped), bins).unwrap();
        prop_assert!((s - t).abs() < 1e-12, "{} vs {}", s, t);
    }

    #[test]
    fn selectivity_rows_normalized((cols, labels) in matrix_instance()) {
        let sal = saliency_matrix(&layer_from_columns(&cols), &concepts_from(&labels), 4).unwrap();
        let sel = selectivity_matrix(&sal);
        for i in 0..sal.neurons() {
            let row = sel.row(i);
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            if sal.row(i).iter().any(|&v| v > 0.0) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                prop_assert_eq!(first_argmax(row), first_argmax(sal.row(i)));
            } else {
                prop_assert!(row.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn matrix_agrees_with_oracle((cols, labels) in matrix_instance()) {
        let sal = saliency_matrix(&layer_from_columns(&cols), &concepts_from(&labels), 4).unwrap();
        for (i, col) in cols.iter().enumerate() {
            let col32: Vec<f64> = col.iter().map(|&v| v as f32 as f64).collect();
            for (j, lab) in labels.iter().enumerate() {
                prop_assert!((sal.get(i, j) - oracle::saliency(&col32, lab, 4)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropping_a_concept_never_lowers_selectivity((cols, labels) in matrix_instance(), drop in 0usize..5) {
        prop_assume!(labels.len() >= 2);
        let drop = drop % labels.len();
        let layer = layer_from_columns(&cols);
        let full = selectivity_matrix(&saliency_matrix(&layer, &concepts_from(&labels), 4).unwrap());
        let mut fewer = labels.clone();
        fewer.remove(drop);
        let reduced = selectivity_matrix(&saliency_matrix(&layer, &concepts_from(&fewer), 4).unwrap());
        for i in 0..full.neurons() {
            for (k, j) in (0..labels.len()).filter(|&j| j != drop).enumerate() {
                prop_assert!(reduced.get(i, k) + 1e-12 >= full.get(i, j));
            }
        }
    }
}
