//! Property-based checks over the numeric core and the data pipeline.

use proptest::collection::vec;
use proptest::prelude::*;

use vmclass::balance::smote_with_parents;
use vmclass::dataset::{encode_nominal, minmax_normalize, split, Dataset, SplitTag, StatsScope};
use vmclass::nn::gru::{gru_cell, GruParams};
use vmclass::nn::layers::softmax;
use vmclass::nn::{Adam, Grid};
use vmclass::selection::{rank, HostSnapshot, Policy, SelectOptions, VmRuntime};

fn finite_f64(range: std::ops::Range<f64>) -> impl Strategy<Value = f64> {
    range.prop_map(|v| if v == 0.0 { 0.0 } else { v })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_are_probability_distributions(
        batch in 1usize..6,
        vals in vec(-40.0..40.0f64, 2 * 6),
    ) {
        let data: Vec<f64> = vals[..batch * 2].to_vec();
        let x = Grid::from_vec(&[batch, 2], data).unwrap();
        let p = softmax(&x).unwrap();
        for b in 0..batch {
            let row = p.row(b);
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn softmax_is_shift_invariant(
        vals in vec(-20.0..20.0f64, 4),
        shift in -100.0..100.0f64,
    ) {
        let x = Grid::from_vec(&[2, 2], vals.clone()).unwrap();
        let shifted = Grid::from_vec(
            &[2, 2],
            vals.iter().map(|v| v + shift).collect(),
        ).unwrap();
        let a = softmax(&x).unwrap();
        let b = softmax(&shifted).unwrap();
        for (va, vb) in a.data().iter().zip(b.data()) {
            prop_assert!((va - vb).abs() < 1e-9);
        }
    }

    #[test]
    fn gru_state_stays_between_previous_state_and_candidate(
        seed in 0u64..1000,
        x_vals in vec(-3.0..3.0f64, 4),
        h_vals in vec(-1.0..1.0f64, 3),
    ) {
        let params = {
            use rand::{Rng, SeedableRng};
            let mut p = GruParams::zeros(4, 3);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for (_, g) in p.grids_mut() {
                for v in g.data_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
            }
            p
        };
        let x = Grid::from_vec(&[1, 4], x_vals).unwrap();
        let h_prev = Grid::from_vec(&[1, 3], h_vals).unwrap();
        let (h, cache) = gru_cell(&x, &h_prev, &params).unwrap();
        for i in 0..3 {
            let (a, b) = (h_prev.data()[i], cache.cand.data()[i]);
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(
                h.data()[i] >= lo - 1e-12 && h.data()[i] <= hi + 1e-12,
                "h[{}] = {} outside [{}, {}]", i, h.data()[i], lo, hi
            );
        }
    }

    #[test]
    fn minmax_output_is_always_in_unit_range(
        n_rows in 1usize..20,
        n_cols in 1usize..5,
        seed in 0u64..10_000,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let features: Vec<f64> = (0..n_rows * n_cols)
            .map(|_| rng.random_range(-1e6..1e6))
            .collect();
        let labels: Vec<u8> = (0..n_rows).map(|i| (i % 2) as u8).collect();
        let names = (0..n_cols).map(|j| format!("c{j}")).collect();
        let ds = Dataset::new(names, features, labels).unwrap();
        let (norm, _) = minmax_normalize(&ds, StatsScope::WholeData).unwrap();
        prop_assert!(norm.features.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn encoding_is_a_bijection_on_distinct_values(
        raw in vec("[a-e]{1,3}", 1..40),
    ) {
        let (codes, values) = encode_nominal(&raw);
        prop_assert_eq!(codes.len(), raw.len());
        for (s, &c) in raw.iter().zip(&codes) {
            prop_assert_eq!(&values[c], s);
        }
        let mut sorted_values = values.clone();
        sorted_values.sort();
        sorted_values.dedup();
        prop_assert_eq!(sorted_values.len(), values.len(), "codes map 1:1");
    }

    #[test]
    fn split_partitions_every_row_exactly_once(
        n in 3usize..200,
        seed in 0u64..1000,
    ) {
        let names = vec!["x".to_string()];
        let features: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let mut ds = Dataset::new(names, features, labels).unwrap();
        let (t, v, e) = split(&mut ds, (0.7, 0.1, 0.2), seed).unwrap();
        prop_assert_eq!(t + v + e, n);
        prop_assert_eq!(t, (n as f64 * 0.7).floor() as usize);
        prop_assert_eq!(v, (n as f64 * 0.1).floor() as usize);
        prop_assert!(ds.split.iter().all(|&tag| tag != SplitTag::Unassigned));
        prop_assert_eq!(ds.split_indices(SplitTag::Train).len(), t);
    }

    #[test]
    fn smote_synthetics_stay_in_the_minority_bounding_box(
        n_major in 6usize..25,
        n_minor in 4usize..6,
        seed in 0u64..1000,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = n_major + n_minor;
        let features: Vec<f64> = (0..n * 3).map(|_| rng.random_range(0.0..50.0)).collect();
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i >= n_major)).collect();
        let names = vec!["a".into(), "b".into(), "c".into()];
        let ds = Dataset::new(names, features, labels).unwrap();

        let (out, parents) = smote_with_parents(&ds, 3, seed).unwrap();
        prop_assert_eq!(out.class_counts().0, out.class_counts().1);
        for (s, &(base, neighbor)) in parents.iter().enumerate() {
            let row = out.row(n + s);
            for j in 0..3 {
                let lo = ds.row(base)[j].min(ds.row(neighbor)[j]);
                let hi = ds.row(base)[j].max(ds.row(neighbor)[j]);
                prop_assert!(row[j] >= lo - 1e-12 && row[j] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn rankings_ignore_vm_input_order(
        seed in 0u64..500,
        perm_seed in 0u64..500,
        n_vms in 2usize..8,
    ) {
        use rand::seq::SliceRandom;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let vms: Vec<VmRuntime> = (0..n_vms)
            .map(|i| VmRuntime {
                vm_id: format!("vm-{i:02}"),
                memory_used: rng.random_range(0.5..64.0),
                cpu_series: (0..4).map(|_| rng.random_range(0.0..100.0)).collect(),
                features: Vec::new(),
            })
            .collect();
        let mut shuffled = vms.clone();
        let mut perm_rng = rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed);
        shuffled.shuffle(&mut perm_rng);

        let host = |vms: Vec<VmRuntime>| HostSnapshot {
            host_id: "h".into(),
            bandwidth: 10.0,
            vms,
        };
        let opts = SelectOptions { seed, ..SelectOptions::default() };
        for policy in [
            Policy::Random,
            Policy::MinMigrationTime,
            Policy::MinUtilization,
            Policy::MaxCorrelation,
            Policy::UtilizationSlope,
        ] {
            let a = rank(&host(vms.clone()), policy, &opts, None).unwrap();
            let b = rank(&host(shuffled.clone()), policy, &opts, None).unwrap();
            prop_assert_eq!(a, b, "policy {}", policy.name());
        }
    }

    #[test]
    fn adam_first_step_moves_each_parameter_by_lr(
        lr in finite_f64(1e-4..0.5),
        g0 in -5.0..5.0f64,
        g1 in -5.0..5.0f64,
    ) {
        prop_assume!(g0.abs() > 1e-6 && g1.abs() > 1e-6);
        let mut param = Grid::from_vec(&[2], vec![1.0, -2.0]).unwrap();
        let grad = Grid::from_vec(&[2], vec![g0, g1]).unwrap();
        let mut opt = Adam::new(lr, &[&[2]]);
        opt.step(&mut [&mut param], &[&grad]).unwrap();
        // bias correction cancels at step 1: the update is exactly
        // lr * g / (|g| + eps), i.e. lr * sign(g) up to epsilon
        let eps = 1e-8;
        let step = |g: f64| lr * g / (g.abs() + eps);
        prop_assert!((param.data()[0] - (1.0 - step(g0))).abs() < lr * 1e-9 + 1e-12);
        prop_assert!((param.data()[1] - (-2.0 - step(g1))).abs() < lr * 1e-9 + 1e-12);
        prop_assert!((param.data()[0] - (1.0 - lr * g0.signum())).abs() < lr * 1e-1);
        prop_assert!((param.data()[1] - (-2.0 - lr * g1.signum())).abs() < lr * 1e-1);
    }
}
