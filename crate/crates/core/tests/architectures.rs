use lengen_core::arch::{
    make_degenerate, sample_student, sample_teacher, Activation, AttentionHead, AttentionKind, Capacity,
    DeepSetModel, Dense, Elementwise, Family, Map, Mlp, MlpSpec, Model, ModelSpec, Normalization, RnnModel,
    SsmModel, TransformerModel,
};
use lengen_core::numerics::{random_normal, random_orthogonal, random_uniform, sigmoid, Matrix, RngStream};
use proptest::prelude::*;

fn seq(batch: usize, n: usize, t: usize, seed: u64) -> Vec<Matrix> {
    let mut rng = RngStream::new(seed, "tokens");
    (0..t).map(|_| random_uniform(batch, n, 0.0, 1.0, &mut rng)).collect()
}

fn max_diff(a: &[Matrix], b: &[Matrix]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn small_spec(family: Family) -> ModelSpec {
    let mut spec = ModelSpec::new(family, 4);
    spec.psi_hidden = vec![5];
    spec.omega_hidden = vec![5];
    spec
}

/// Single sequence `x` (row vectors) through a plain-loop MLP.
fn mlp_ref(mlp: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (idx, layer) in mlp.layers.iter().enumerate() {
        let w = &layer.weight;
        let mut z = vec![0.0; w.rows()];
        for (r, zr) in z.iter_mut().enumerate() {
            *zr = layer.bias.as_slice()[r] + (0..w.cols()).map(|c| w[(r, c)] * h[c]).sum::<f64>();
        }
        let last = idx + 1 == mlp.layers.len();
        h = if !last || mlp.spec.output_activation == Activation::Sigmoid {
            z.into_iter().map(sigmoid).collect()
        } else {
            z
        };
    }
    h
}

fn map_ref(map: &Map, x: &[f64]) -> Vec<f64> {
    match map {
        Map::Mlp(m) => mlp_ref(m, x),
        Map::Fixed { func, .. } => x
            .iter()
            .map(|&v| match func {
                Elementwise::Identity => v,
                Elementwise::Log => v.ln(),
                Elementwise::Exp => v.exp(),
                Elementwise::Sigmoid => sigmoid(v),
            })
            .collect(),
    }
}

fn matvec(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|r| (0..m.cols()).map(|c| m[(r, c)] * x[c]).sum())
        .collect()
}

// ---- deep sets ----

#[test]
fn deep_set_prefix_sum() {
    let model = Model::DeepSet(DeepSetModel::new(Map::identity(1), Map::identity(1), Capacity::HighCapacity).unwrap());
    let tokens: Vec<Matrix> = [0.2, 0.3, 0.5].iter().map(|&v| Matrix::scalar(v)).collect();
    let y = model.run(&tokens).unwrap().labels;
    let expect = [0.2, 0.5, 1.0];
    for (yi, e) in y.iter().zip(expect) {
        assert!((yi.item() - e).abs() < 1e-12);
    }
}

#[test]
fn deep_set_product_via_log_exp() {
    let psi = Map::Fixed { dim: 1, func: Elementwise::Log };
    let omega = Map::Fixed { dim: 1, func: Elementwise::Exp };
    let model = Model::DeepSet(DeepSetModel::new(psi, omega, Capacity::HighCapacity).unwrap());
    let tokens = vec![Matrix::scalar(0.5), Matrix::scalar(0.4)];
    let y = model.run(&tokens).unwrap().labels;
    assert!((y[0].item() - 0.5).abs() < 1e-12);
    assert!((y[1].item() - 0.2).abs() < 1e-12);
}

#[test]
fn deep_set_matches_unrolled_reference() {
    let teacher = sample_teacher(&ModelSpec::new(Family::DeepSet, 4), 5).unwrap();
    let Model::DeepSet(ds) = &teacher else { unreachable!() };
    let tokens = seq(1, 4, 7, 1);
    let y = teacher.run(&tokens).unwrap().labels;
    let mut s = vec![0.0; 4];
    for (x, yi) in tokens.iter().zip(&y) {
        let p = map_ref(&ds.psi, x.row(0));
        s.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
        let expect = map_ref(&ds.omega, &s);
        for (a, b) in yi.row(0).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn deep_set_is_permutation_invariant(seed in 0u64..1000, perm_seed in 0u64..1000) {
        let model = sample_teacher(&small_spec(Family::DeepSet), seed).unwrap();
        let tokens = seq(3, 4, 6, seed);
        let mut order: Vec<usize> = (0..6).collect();
        let mut rng = RngStream::new(perm_seed, "perm");
        for i in (1..6).rev() {
            order.swap(i, rng.below(i + 1));
        }
        let shuffled: Vec<Matrix> = order.iter().map(|&i| tokens[i].clone()).collect();
        let a = model.run(&tokens).unwrap().labels;
        let b = model.run(&shuffled).unwrap().labels;
        let d = max_diff(&a[5..], &b[5..]);
        prop_assert!(d < 1e-12, "diff {}", d);
    }

    #[test]
    fn serialization_round_trips_exactly(seed in 0u64..1000, fam in 0usize..4) {
        let mut spec = small_spec(Family::ALL[fam]);
        if fam == 1 {
            spec.heads = 2;
            spec.positional_tmax = Some(3);
        }
        let model = sample_teacher(&spec, seed).unwrap();
        let back = Model::from_json(&model.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &model);
        let a: Vec<u64> = model.flat_params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.flat_params().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn every_family_is_causal() {
    for family in Family::ALL {
        let model = sample_teacher(&small_spec(family), 3).unwrap();
        let tokens = seq(2, 4, 6, 9);
        let base = model.run(&tokens).unwrap().labels;
        for i in 0..5 {
            let mut perturbed = tokens.clone();
            for later in perturbed.iter_mut().skip(i + 1) {
                *later = later.map(|v| 1.0 - v);
            }
            let y = model.run(&perturbed).unwrap().labels;
            assert!(max_diff(&base[..=i], &y[..=i]) == 0.0, "{family} leaks at position {i}");
        }
    }
}

#[test]
fn dim_mismatch_is_an_error() {
    for family in Family::ALL {
        let model = sample_teacher(&small_spec(family), 3).unwrap();
        assert!(model.run(&seq(2, 3, 2, 0)).is_err(), "{family}");
    }
}

// ---- transformer ----

fn transformer(kind: AttentionKind, norm: Normalization, tmax: Option<usize>, omega_identity: bool) -> TransformerModel {
    let mut spec = small_spec(Family::Transformer);
    spec.attention = kind;
    spec.normalization = norm;
    spec.positional_tmax = tmax;
    let Model::Transformer(mut t) = sample_teacher(&spec, 17).unwrap() else { unreachable!() };
    if omega_identity {
        t.omega = Map::identity(4);
        t.capacity = Capacity::HighCapacity;
    }
    t
}

/// `z_i` for one sequence by a direct double loop.
fn attention_ref(t: &TransformerModel, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let h = &t.heads[0];
    let d = h.wq.rows();
    let mut out = Vec::new();
    for i in 0..xs.len() {
        let q = matvec(&h.wq, &xs[i]);
        let keys: Vec<usize> = match t.normalization {
            Normalization::MeanOverI => (0..=i).collect(),
            Normalization::MeanOverPrevious => (0..i).collect(),
        };
        let mut z = vec![0.0; d];
        for &j in &keys {
            if let Some(p) = &t.positional {
                if i - j >= p.tmax() {
                    continue;
                }
            }
            let k = matvec(&h.wk, &xs[j]);
            let v = matvec(&h.wv, &xs[j]);
            let mut s = q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt();
            if let Some(p) = &t.positional {
                s += p.bias[i - j].item();
            }
            let w = sigmoid(s);
            z.iter_mut().zip(&v).for_each(|(a, b)| *a += w * b);
        }
        if !keys.is_empty() {
            z.iter_mut().for_each(|a| *a /= keys.len() as f64);
        }
        out.push(z);
    }
    out
}

#[test]
fn sigmoid_attention_matches_double_loop() {
    for (norm, tmax) in [
        (Normalization::MeanOverI, None),
        (Normalization::MeanOverPrevious, None),
        (Normalization::MeanOverI, Some(3)),
    ] {
        let t = transformer(AttentionKind::Sigmoid, norm, tmax, false);
        let tokens = seq(2, 4, 8, 4);
        let trace = Model::Transformer(t.clone()).run(&tokens).unwrap();
        for r in 0..2 {
            let xs: Vec<Vec<f64>> = tokens.iter().map(|x| x.row(r).to_vec()).collect();
            let z = attention_ref(&t, &xs);
            for (i, zi) in z.iter().enumerate() {
                for (a, b) in trace.hidden[i].row(r).iter().zip(zi) {
                    assert!((a - b).abs() < 1e-12, "{norm:?} {tmax:?} i={i}");
                }
                let y = map_ref(&t.omega, zi);
                for (a, b) in trace.labels[i].row(r).iter().zip(&y) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn single_token_is_one_term_mean() {
    let t = transformer(AttentionKind::Sigmoid, Normalization::MeanOverI, None, false);
    let x = seq(1, 4, 1, 2);
    let y = Model::Transformer(t.clone()).run(&x).unwrap().labels;
    let h = &t.heads[0];
    let q = matvec(&h.wq, x[0].row(0));
    let k = matvec(&h.wk, x[0].row(0));
    let v = matvec(&h.wv, x[0].row(0));
    let w = sigmoid(q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / 2.0);
    let psi: Vec<f64> = v.iter().map(|vi| w * vi).collect();
    let expect = map_ref(&t.omega, &psi);
    for (a, b) in y[0].row(0).iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn constant_psi_gives_constant_output() {
    // zero query/key weights fix every attention weight at σ(0) = ½,
    // so with a repeated token ψ is the constant ½·W_v x
    let mut t = transformer(AttentionKind::Sigmoid, Normalization::MeanOverI, None, false);
    t.heads[0].wq = Matrix::zeros(4, 4);
    t.heads[0].wk = Matrix::zeros(4, 4);
    let x = Matrix::row_vector(&[0.1, 0.7, 0.3, 0.9]);
    let tokens = vec![x.clone(); 6];
    let y = Model::Transformer(t.clone()).run(&tokens).unwrap().labels;
    let v: Vec<f64> = matvec(&t.heads[0].wv, x.row(0)).iter().map(|a| 0.5 * a).collect();
    let expect = map_ref(&t.omega, &v);
    for yi in &y {
        for (a, b) in yi.row(0).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn previous_only_variant_starts_at_zero() {
    let t = transformer(AttentionKind::Sigmoid, Normalization::MeanOverPrevious, None, false);
    let trace = Model::Transformer(t.clone()).run(&seq(3, 4, 2, 1)).unwrap();
    assert_eq!(trace.hidden[0].max_abs(), 0.0);
    let expect = map_ref(&t.omega, &[0.0; 4]);
    for r in 0..3 {
        for (a, b) in trace.labels[0].row(r).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn distant_tokens_do_not_reach_positional_aggregate() {
    let t = transformer(AttentionKind::Sigmoid, Normalization::MeanOverI, Some(2), true);
    let model = Model::Transformer(t);
    let tokens = seq(2, 4, 7, 3);
    let base = model.run(&tokens).unwrap().hidden;
    // perturb x_1; positions i with i − 1 ≥ 2 (0-based i ≥ 2) must not move
    let mut perturbed = tokens.clone();
    perturbed[0] = perturbed[0].map(|v| v + 10.0);
    let z = model.run(&perturbed).unwrap().hidden;
    assert!(max_diff(&base[2..], &z[2..]) == 0.0);
    assert!(max_diff(&base[..2], &z[..2]) > 0.0);
}

#[test]
fn multi_head_mixes_per_head_aggregates() {
    let mut spec = small_spec(Family::Transformer);
    spec.heads = 2;
    let Model::Transformer(t) = sample_teacher(&spec, 8).unwrap() else { unreachable!() };
    let tokens = seq(1, 4, 4, 6);
    let z = Model::Transformer(t.clone()).run(&tokens).unwrap().hidden;
    let xs: Vec<Vec<f64>> = tokens.iter().map(|x| x.row(0).to_vec()).collect();
    let single = |h: &AttentionHead| {
        let mut one = t.clone();
        one.heads = vec![h.clone()];
        one.mixing.clear();
        attention_ref(&one, &xs)
    };
    let z0 = single(&t.heads[0]);
    let z1 = single(&t.heads[1]);
    for i in 0..4 {
        let a = matvec(&t.mixing[0], &z0[i]);
        let b = matvec(&t.mixing[1], &z1[i]);
        for c in 0..4 {
            assert!((z[i].row(0)[c] - (a[c] + b[c])).abs() < 1e-12);
        }
    }
}

// ---- SSM ----

fn ssm(lambda: Matrix, b: Matrix, omega: Map) -> Model {
    Model::Ssm(SsmModel::new(lambda, b, omega, Capacity::HighCapacity).unwrap())
}

#[test]
fn memoryless_ssm() {
    let mut rng = RngStream::new(1, "ssm");
    let b = random_orthogonal(3, &mut rng);
    let omega = Map::Mlp(Mlp::sample(MlpSpec::new(3, 3, vec![4]), 0.6, &mut rng).unwrap());
    let model = ssm(Matrix::zeros(3, 3), b.clone(), omega.clone());
    let tokens = seq(1, 3, 5, 2);
    let y = model.run(&tokens).unwrap().labels;
    for (x, yi) in tokens.iter().zip(&y) {
        let expect = map_ref(&omega, &matvec(&b, x.row(0)));
        for (a, e) in yi.row(0).iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}

#[test]
fn integrator_ssm() {
    let model = ssm(Matrix::identity(3), Matrix::identity(3), Map::identity(3));
    let tokens = seq(2, 3, 9, 5);
    let y = model.run(&tokens).unwrap().labels;
    let mut acc = Matrix::zeros(2, 3);
    for (x, yi) in tokens.iter().zip(&y) {
        acc = acc.add(x).unwrap();
        assert!(max_diff(&[acc.clone()], &[yi.clone()]) < 1e-12);
    }
}

#[test]
fn ssm_recurrence_equals_closed_form_to_t100() {
    let mut rng = RngStream::new(21, "closed-form");
    let k = 5;
    let lambda = random_orthogonal(k, &mut rng);
    let b = random_orthogonal(k, &mut rng);
    let model = ssm(lambda.clone(), b.clone(), Map::identity(k));
    let tokens = seq(1, k, 100, 8);
    let h = model.run(&tokens).unwrap().hidden;
    let bx: Vec<Vec<f64>> = tokens.iter().map(|x| matvec(&b, x.row(0))).collect();
    let mut worst: f64 = 0.0;
    for t in 1..=100 {
        // Σ_{j=0}^{t−1} Λʲ B x_{t−j}
        let mut sum = vec![0.0; k];
        let mut power = Matrix::identity(k);
        for j in 0..t {
            let term = matvec(&power, &bx[t - 1 - j]);
            sum.iter_mut().zip(&term).for_each(|(a, b)| *a += b);
            power = power.matmul(&lambda).unwrap();
        }
        for (a, e) in h[t - 1].row(0).iter().zip(&sum) {
            worst = worst.max((a - e).abs());
        }
    }
    assert!(worst <= 1e-10, "worst {worst:e}");
}

#[test]
fn ssm_similarity_transform_preserves_outputs() {
    let mut spec = small_spec(Family::Ssm);
    spec.capacity = Capacity::StructuredPerceptron;
    let Model::Ssm(base) = sample_teacher(&spec, 4).unwrap() else { unreachable!() };
    let mut rng = RngStream::new(4, "similarity");
    let b_tilde = random_normal(4, 4, 0.0, 1.0, &mut rng).add(&Matrix::identity(4).scale(2.0)).unwrap();
    let c = b_tilde.matmul(&base.b_in.inverse().unwrap()).unwrap();
    let c_inv = c.inverse().unwrap();
    let lambda_tilde = c.matmul(&base.lambda).unwrap().matmul(&c_inv).unwrap();
    let Map::Mlp(omega) = &base.omega else { unreachable!() };
    let layer = &omega.layers[0];
    let omega_tilde = Mlp::from_layers(
        omega.spec.clone(),
        vec![Dense {
            weight: layer.weight.matmul(&c_inv).unwrap(),
            bias: layer.bias.clone(),
        }],
    )
    .unwrap();
    let tilde = SsmModel::new(lambda_tilde, b_tilde, Map::Mlp(omega_tilde), Capacity::StructuredPerceptron).unwrap();
    let tokens = seq(4, 4, 30, 3);
    let a = Model::Ssm(base).run(&tokens).unwrap().labels;
    let b = Model::Ssm(tilde).run(&tokens).unwrap().labels;
    assert!(max_diff(&a, &b) <= 1e-8);
}

#[test]
fn structured_ssm_rejects_singular_lambda() {
    let mut rng = RngStream::new(2, "x");
    let omega = Map::Mlp(Mlp::sample(MlpSpec::perceptron(3, 3), 0.6, &mut rng).unwrap());
    let err = SsmModel::new(Matrix::zeros(3, 3), Matrix::identity(3), omega, Capacity::StructuredPerceptron);
    assert!(err.is_err());
}

// ---- RNN ----

#[test]
fn rnn_zero_input_first_state_is_half() {
    let model = sample_teacher(&small_spec(Family::Rnn), 1).unwrap();
    let trace = model.run(&[Matrix::zeros(1, 4)]).unwrap();
    assert!(trace.hidden[0].as_slice().iter().all(|&h| h == 0.5));
}

#[test]
fn rnn_matches_step_by_step_unroll() {
    let Model::Rnn(rnn) = sample_teacher(&small_spec(Family::Rnn), 6).unwrap() else { unreachable!() };
    let tokens = seq(1, 4, 12, 7);
    let y = Model::Rnn(rnn.clone()).run(&tokens).unwrap().labels;
    let mut h = vec![0.0; 4];
    for (x, yi) in tokens.iter().zip(&y) {
        let a = matvec(&rnn.lambda, &h);
        let b = matvec(&rnn.b_in, x.row(0));
        h = a.iter().zip(&b).map(|(p, q)| sigmoid(p + q)).collect();
        let out: Vec<f64> = matvec(&rnn.a_out, &h).into_iter().map(sigmoid).collect();
        for (p, q) in yi.row(0).iter().zip(&out) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn conjugated_rnn_is_output_equivalent() {
    let Model::Rnn(rnn) = sample_teacher(&small_spec(Family::Rnn), 6).unwrap() else { unreachable!() };
    let perm = [2, 0, 3, 1];
    let conj: RnnModel = rnn.permuted(&perm).unwrap();
    let tokens = seq(5, 4, 20, 2);
    let a = Model::Rnn(rnn).run(&tokens).unwrap();
    let b = Model::Rnn(conj).run(&tokens).unwrap();
    assert!(max_diff(&a.labels, &b.labels) <= 1e-8);
    // hidden units are relabelled, not changed
    for (ha, hb) in a.hidden.iter().zip(&b.hidden) {
        for r in 0..5 {
            for (i, &pi) in perm.iter().enumerate() {
                assert!((ha.row(r)[pi] - hb.row(r)[i]).abs() < 1e-12);
            }
        }
    }
}

// ---- sampling ----

#[test]
fn same_seed_gives_identical_parameters() {
    for family in Family::ALL {
        let spec = ModelSpec::new(family, 5);
        let a = sample_teacher(&spec, 77).unwrap().flat_params();
        let b = sample_teacher(&spec, 77).unwrap().flat_params();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = sample_student(&spec, 77).unwrap().flat_params();
        assert_ne!(a, c);
    }
}

#[test]
fn recurrence_matrices_are_orthogonal() {
    for family in [Family::Ssm, Family::Rnn] {
        for seed in 0..5 {
            let model = sample_teacher(&ModelSpec::new(family, 8), seed).unwrap();
            let lambda = match &model {
                Model::Ssm(s) => s.lambda.clone(),
                Model::Rnn(r) => r.lambda.clone(),
                _ => unreachable!(),
            };
            let gram = lambda.transpose().matmul(&lambda).unwrap().sub(&Matrix::identity(8)).unwrap();
            assert!(gram.max_abs() <= 1e-10);
        }
    }
}

#[test]
fn mlp_init_moments() {
    let mut values = Vec::new();
    let mut seed = 0;
    while values.len() < 100_000 {
        let model = sample_teacher(&ModelSpec::new(Family::DeepSet, 20), seed).unwrap();
        let Model::DeepSet(ds) = model else { unreachable!() };
        for p in ds.psi.params().into_iter().chain(ds.omega.params()) {
            values.extend_from_slice(p.as_slice());
        }
        seed += 1;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() <= 0.01, "mean {mean}");
    assert!((std - 0.6).abs() <= 0.01, "std {std}");
}

// ---- degenerate teachers ----

#[test]
fn degenerate_offset_starts_after_threshold() {
    let base = sample_teacher(&small_spec(Family::DeepSet), 3).unwrap();
    let deg = make_degenerate(base.clone(), &[0.2], 5).unwrap();
    let tokens = seq(3, 4, 8, 1);
    let a = base.run(&tokens).unwrap().labels;
    let b = deg.run(&tokens).unwrap().labels;
    for t in 0..8 {
        let shift = if t + 1 > 5 { 0.2 } else { 0.0 };
        for (p, q) in a[t].as_slice().iter().zip(b[t].as_slice()) {
            assert_eq!(*q, *p + shift, "t={}", t + 1);
        }
    }
}

#[test]
fn degenerate_offset_shape_is_checked() {
    let base = sample_teacher(&small_spec(Family::Ssm), 3).unwrap();
    assert!(make_degenerate(base.clone(), &[0.1, 0.2], 5).is_err());
    assert!(make_degenerate(base, &[f64::NAN], 5).is_err());
}

#[test]
fn structured_capacity_checks_omega() {
    let mut rng = RngStream::new(0, "cap");
    let wide = Map::Mlp(Mlp::sample(MlpSpec::new(3, 2, vec![4]), 0.6, &mut rng).unwrap());
    let psi = Map::identity(3);
    assert!(DeepSetModel::new(psi.clone(), wide.clone(), Capacity::StructuredDiffeo).is_err());
    assert!(DeepSetModel::new(psi.clone(), wide.clone(), Capacity::StructuredPerceptron).is_err());
    assert!(DeepSetModel::new(psi, wide, Capacity::HighCapacity).is_ok());
}
