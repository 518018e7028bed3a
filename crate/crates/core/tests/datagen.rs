use lengen_core::arch::{make_degenerate, sample_teacher, Capacity, DeepSetModel, Family, Map, Model, ModelSpec};
use lengen_core::datagen::{
    band_acceptance_rate, batch_rng, draw_batch, in_band, label_batch, sample_band, sample_corners,
    sample_discrete, sample_uniform, DistributionKind, DistributionSpec,
};
use lengen_core::numerics::{Matrix, RngStream};
use proptest::prelude::*;

/// Sequence `b` of a position-major batch as a row-major `t × n` vector.
fn sequence(tokens: &[Matrix], b: usize) -> Vec<f64> {
    tokens.iter().flat_map(|x| x.row(b).to_vec()).collect()
}

/// `P(lo ≤ S ≤ hi)` for `S` a sum of `t` independent Uniform[0,1] (Irwin–Hall).
fn irwin_hall_prob(t: usize, lo: f64, hi: f64) -> f64 {
    let cdf = |x: f64| {
        let mut acc = 0.0;
        let mut binom = 1.0;
        let mut fact = 1.0;
        for i in 1..=t {
            fact *= i as f64;
        }
        for k in 0..=t {
            if k > 0 {
                binom *= (t - k + 1) as f64 / k as f64;
            }
            let s = x - k as f64;
            if s > 0.0 {
                acc += if k % 2 == 0 { 1.0 } else { -1.0 } * binom * s.powi(t as i32);
            }
        }
        (acc / fact).clamp(0.0, 1.0)
    };
    cdf(hi) - cdf(lo)
}

#[test]
fn uniform_component_means() {
    let mut rng = RngStream::new(1, "uniform");
    let tokens = sample_uniform(5, 4, 5000, &mut rng).unwrap();
    for c in 0..5 {
        let mut sum = 0.0;
        let mut count = 0;
        for x in &tokens {
            for r in 0..x.rows() {
                let v = x[(r, c)];
                assert!((0.0..=1.0).contains(&v));
                sum += v;
                count += 1;
            }
        }
        assert_eq!(count, 20_000);
        let mean = sum / count as f64;
        assert!((mean - 0.5).abs() <= 0.01, "component {c}: {mean}");
    }
}

#[test]
fn same_seed_same_batch() {
    for kind in [
        DistributionKind::UniformHypercube,
        DistributionKind::band(),
        DistributionKind::corners(),
        DistributionKind::DiscreteGrid { levels: 3 },
    ] {
        let dist = DistributionSpec::new(kind, 3, 4);
        let a = dist.sample(20, &mut batch_rng(5, "train", 2, 7)).unwrap();
        let b = dist.sample(20, &mut batch_rng(5, "train", 2, 7)).unwrap();
        assert_eq!(a, b);
        let c = dist.sample(20, &mut batch_rng(5, "train", 2, 8)).unwrap();
        assert_ne!(a, c);
    }
}

#[test]
fn stream_keys_are_distinct_across_epochs_batches_and_splits() {
    let draw = |split, e, b| batch_rng(9, split, e, b).uniform();
    let mut seen = std::collections::HashSet::new();
    for split in ["train", "validation"] {
        for e in 0..20 {
            for b in 0..100 {
                assert!(seen.insert(draw(split, e, b).to_bits()));
            }
        }
    }
}

#[test]
fn band_samples_satisfy_constraint() {
    let mut rng = RngStream::new(2, "band");
    let tokens = sample_band(8, 6, 300, 0.5, &mut rng).unwrap();
    for b in 0..300 {
        assert!(in_band(&sequence(&tokens, b), 8, 0.5));
    }
}

#[test]
fn band_acceptance_n1_t2() {
    let mut rng = RngStream::new(3, "accept");
    let rate = band_acceptance_rate(1, 2, 0.5, 100_000, &mut rng);
    assert!((rate - 0.75).abs() <= 0.01, "{rate}");
}

#[test]
fn band_acceptance_n1_t3_matches_volume() {
    // |x₁+x₂+x₃ − 1.5| ≤ 0.5 ⇔ 1 ≤ S ≤ 2
    let exact = irwin_hall_prob(3, 1.0, 2.0);
    assert!((exact - 2.0 / 3.0).abs() < 1e-12);
    let mut rng = RngStream::new(4, "accept");
    let rate = band_acceptance_rate(1, 3, 0.5, 100_000, &mut rng);
    assert!((rate - exact).abs() <= 0.01, "{rate} vs {exact}");
}

#[test]
fn corner_samples_violate_constraint() {
    let mut rng = RngStream::new(5, "corners");
    let tokens = sample_corners(3, 4, 500, 0.5, &mut rng).unwrap();
    for b in 0..500 {
        assert!(!in_band(&sequence(&tokens, b), 3, 0.5));
    }
}

#[test]
fn corner_acceptance_n1_t2() {
    let mut rng = RngStream::new(6, "accept");
    let rate = 1.0 - band_acceptance_rate(1, 2, 0.5, 100_000, &mut rng);
    assert!((rate - 0.25).abs() <= 0.01, "{rate}");
}

#[test]
fn train_and_test_supports_are_disjoint() {
    let mut rng = RngStream::new(7, "disjoint");
    let band = sample_band(2, 3, 10_000, 0.5, &mut rng).unwrap();
    let corners = sample_corners(2, 3, 10_000, 0.5, &mut rng).unwrap();
    for b in 0..10_000 {
        assert!(in_band(&sequence(&band, b), 2, 0.5));
        assert!(!in_band(&sequence(&corners, b), 2, 0.5));
    }
}

#[test]
fn band_and_corner_mixture_is_uniform() {
    // mixing by the acceptance mass recovers the uniform law on the square
    let mut rng = RngStream::new(8, "mixture");
    let total = 100_000;
    let n_band = total * 3 / 4;
    let band = sample_band(1, 2, n_band, 0.5, &mut rng).unwrap();
    let corners = sample_corners(1, 2, total - n_band, 0.5, &mut rng).unwrap();
    let mut hist = [[0usize; 4]; 4];
    for tokens in [&band, &corners] {
        for b in 0..tokens[0].rows() {
            let i = ((tokens[0][(b, 0)] * 4.0) as usize).min(3);
            let j = ((tokens[1][(b, 0)] * 4.0) as usize).min(3);
            hist[i][j] += 1;
        }
    }
    for row in hist {
        for count in row {
            let p = count as f64 / total as f64;
            assert!((p - 1.0 / 16.0).abs() <= 0.005, "{p}");
        }
    }
}

#[test]
fn infeasible_band_reports_sampler_error() {
    let mut rng = RngStream::new(9, "tight");
    let err = sample_band(2, 3, 1, 1e-9, &mut rng).unwrap_err();
    assert!(err.to_string().contains("smaller T or n"), "{err}");
}

#[test]
fn discrete_binary_support() {
    let mut rng = RngStream::new(10, "discrete");
    let tokens = sample_discrete(4, 5, 100, 2, &mut rng).unwrap();
    assert!(tokens.iter().all(|x| x.as_slice().iter().all(|&v| v == 0.0 || v == 1.0)));
}

#[test]
fn discrete_levels_are_uniform() {
    let mut rng = RngStream::new(11, "discrete");
    let levels = 5;
    let tokens = sample_discrete(1, 1, 100_000, levels, &mut rng).unwrap();
    let mut counts = vec![0usize; levels];
    for &v in tokens[0].as_slice() {
        let idx = (v * (levels - 1) as f64).round() as usize;
        assert!((v - idx as f64 / (levels - 1) as f64).abs() < 1e-15);
        counts[idx] += 1;
    }
    for c in counts {
        assert!((c as f64 / 1e5 - 0.2).abs() <= 0.01);
    }
    assert!(sample_discrete(1, 1, 1, 1, &mut rng).is_err());
}

#[test]
fn identity_sum_labels() {
    let model = Model::DeepSet(DeepSetModel::new(Map::identity(1), Map::identity(1), Capacity::HighCapacity).unwrap());
    let batch = label_batch(&model, vec![Matrix::scalar(0.1), Matrix::scalar(0.2)], false).unwrap();
    assert!((batch.labels[0].item() - 0.1).abs() < 1e-15);
    assert!((batch.labels[1].item() - 0.3).abs() < 1e-15);
    assert!(batch.cot.is_none());
}

#[test]
fn ssm_cot_is_hidden_state() {
    let teacher = sample_teacher(&ModelSpec::new(Family::Ssm, 4), 1).unwrap();
    let dist = DistributionSpec::uniform(4, 7);
    let batch = draw_batch(&teacher, &dist, 16, true, &mut RngStream::new(1, "x")).unwrap();
    let trace = teacher.run(&batch.tokens).unwrap();
    assert_eq!(batch.cot.as_ref().unwrap(), &trace.hidden);
    assert_eq!(batch.labels, trace.labels);
    assert_eq!(batch.cot.unwrap()[0].cols(), teacher.hidden_dim());
}

#[test]
fn degenerate_teacher_label_at_six() {
    let base = sample_teacher(&ModelSpec::new(Family::DeepSet, 4), 2).unwrap();
    let deg = make_degenerate(base.clone(), &[0.2], 5).unwrap();
    let dist = DistributionSpec::uniform(4, 6);
    let tokens = dist.sample(8, &mut RngStream::new(3, "x")).unwrap();
    let a = label_batch(&base, tokens.clone(), false).unwrap();
    let b = label_batch(&deg, tokens, false).unwrap();
    assert_eq!(a.labels[4], b.labels[4]);
    for (p, q) in a.labels[5].as_slice().iter().zip(b.labels[5].as_slice()) {
        assert_eq!(*q, p + 0.2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn labels_do_not_depend_on_batch_order(seed in 0u64..500, rot in 1usize..7) {
        let teacher = sample_teacher(&ModelSpec::new(Family::Transformer, 3), seed).unwrap();
        let tokens = sample_uniform(3, 5, 8, &mut RngStream::new(seed, "x")).unwrap();
        let rotated: Vec<Matrix> = tokens
            .iter()
            .map(|x| {
                let rows: Vec<Vec<f64>> = (0..8).map(|r| x.row((r + rot) % 8).to_vec()).collect();
                Matrix::from_rows(&rows).unwrap()
            })
            .collect();
        let a = label_batch(&teacher, tokens, false).unwrap();
        let b = label_batch(&teacher, rotated, false).unwrap();
        for (la, lb) in a.labels.iter().zip(&b.labels) {
            for r in 0..8 {
                prop_assert_eq!(la.row((r + rot) % 8), lb.row(r));
            }
        }
    }
}
