use lengen_core::arch::{
    sample_student, sample_teacher, Activation, Capacity, DeepSetModel, Dense, Elementwise, Family, Map, Mlp,
    MlpSpec, Model, ModelSpec,
};
use lengen_core::datagen::DistributionSpec;
use lengen_core::numerics::{Eager, Matrix, RngStream};
use lengen_core::training::{cot_train, erm_train, objective, LossKind, TrainConfig};
use lengen_core::Error;
use proptest::prelude::*;

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        batches_per_epoch: 20,
        validation_batches: 2,
        epochs,
        seed: 3,
        ..TrainConfig::default()
    }
}

/// `y_t = Σ_{j≤t} (θ x_j + β)` with scalar tokens.
fn scalar_linear(theta: f64, beta: f64) -> Model {
    let spec = MlpSpec::perceptron(1, 1).with_output(Activation::Identity);
    let psi = Mlp::from_layers(
        spec,
        vec![Dense {
            weight: Matrix::scalar(theta),
            bias: Matrix::scalar(beta),
        }],
    )
    .unwrap();
    Model::DeepSet(DeepSetModel::new(Map::Mlp(psi), Map::identity(1), Capacity::HighCapacity).unwrap())
}

#[test]
fn teacher_initialized_student_stays_put() {
    for family in Family::ALL {
        let mut spec = ModelSpec::new(family, 3);
        spec.psi_hidden = vec![4];
        spec.omega_hidden = vec![4];
        let teacher = sample_teacher(&spec, 1).unwrap();
        let mut student = teacher.clone();
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..quick(5)
        };
        let report = erm_train(&mut student, &teacher, &DistributionSpec::uniform(3, 4), &cfg).unwrap();
        assert_eq!(report.initial_val_loss, 0.0);
        assert!(report.val_loss.iter().all(|&v| v == 0.0), "{family}");
        assert_eq!(student, teacher);
        assert_eq!(report.steps, 100);
    }
}

#[test]
fn scalar_least_squares_converges_to_teacher() {
    let teacher = scalar_linear(2.0, 0.0);
    let mut student = scalar_linear(0.3, 0.1);
    let cfg = TrainConfig {
        weight_decay: 0.0,
        epochs: 40,
        seed: 3,
        ..TrainConfig::default()
    };
    let report = erm_train(&mut student, &teacher, &DistributionSpec::uniform(1, 1), &cfg).unwrap();
    let theta = student.flat_params()[0];
    assert!((theta - 2.0).abs() <= 1e-3, "θ = {theta}");
    assert!(report.final_val_loss() < 1e-6);
}

#[test]
fn cot_loss_is_zero_at_teacher() {
    for family in Family::ALL {
        let teacher = sample_teacher(&ModelSpec::new(family, 3), 2).unwrap();
        let tokens = DistributionSpec::uniform(3, 5).sample(16, &mut RngStream::new(0, "x")).unwrap();
        let trace = teacher.run(&tokens).unwrap();
        let cfg = TrainConfig {
            loss: LossKind::LabelPlusCot,
            ..TrainConfig::default()
        };
        let loss = objective(&mut Eager, &teacher, &tokens, &trace.labels, Some(&trace.hidden), &cfg).unwrap();
        assert_eq!(loss.item(), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cot_objective_dominates_label_objective(seed in 0u64..1000, fam in 0usize..4) {
        let spec = ModelSpec::new(Family::ALL[fam], 3);
        let teacher = sample_teacher(&spec, seed).unwrap();
        let student = sample_student(&spec, seed).unwrap();
        let tokens = DistributionSpec::uniform(3, 4).sample(8, &mut RngStream::new(seed, "x")).unwrap();
        let trace = teacher.run(&tokens).unwrap();
        let cfg = TrainConfig::default();
        let label = objective(&mut Eager, &student, &tokens, &trace.labels, None, &cfg).unwrap().item();
        let both = objective(&mut Eager, &student, &tokens, &trace.labels, Some(&trace.hidden), &cfg).unwrap().item();
        prop_assert!(both >= label);
    }
}

#[test]
fn ssm_cot_recovers_recurrence() {
    let mut spec = ModelSpec::new(Family::Ssm, 3);
    spec.capacity = Capacity::HighCapacity;
    spec.omega_hidden = vec![4];
    let teacher = sample_teacher(&spec, 5).unwrap();
    let mut student = sample_student(&spec, 5).unwrap();
    let cfg = TrainConfig {
        batch_size: 64,
        batches_per_epoch: 50,
        validation_batches: 2,
        epochs: 40,
        seed: 5,
        ..TrainConfig::default()
    };
    cot_train(&mut student, &teacher, &DistributionSpec::uniform(3, 4), &cfg).unwrap();
    let (Model::Ssm(s), Model::Ssm(t)) = (&student, &teacher) else { unreachable!() };
    let dl = s.lambda.sub(&t.lambda).unwrap().frobenius();
    let db = s.b_in.sub(&t.b_in).unwrap().frobenius();
    assert!(dl <= 1e-3 && db <= 1e-3, "‖ΔΛ‖ = {dl:e}, ‖ΔB‖ = {db:e}");
}

#[test]
fn realizable_training_reduces_loss_a_hundredfold() {
    let mut spec = ModelSpec::new(Family::Ssm, 4);
    spec.capacity = Capacity::StructuredPerceptron;
    let teacher = sample_teacher(&spec, 9).unwrap();
    let mut student = sample_student(&spec, 9).unwrap();
    let cfg = TrainConfig {
        batch_size: 64,
        batches_per_epoch: 50,
        ..quick(20)
    };
    let report = erm_train(&mut student, &teacher, &DistributionSpec::uniform(4, 4), &cfg).unwrap();
    assert!(
        report.final_val_loss() <= report.initial_val_loss / 100.0,
        "{} -> {}",
        report.initial_val_loss,
        report.final_val_loss()
    );
    assert!(report.lr.iter().all(|&lr| lr >= cfg.min_lr));
}

#[test]
fn training_is_bit_reproducible() {
    let spec = ModelSpec::new(Family::Transformer, 3);
    let teacher = sample_teacher(&spec, 1).unwrap();
    let run = || {
        let mut student = sample_student(&spec, 1).unwrap();
        let report = erm_train(&mut student, &teacher, &DistributionSpec::uniform(3, 4), &quick(3)).unwrap();
        (student.flat_params(), report.val_loss)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(la, lb);
}

#[test]
fn cot_rejects_hidden_dim_mismatch() {
    let teacher = sample_teacher(&ModelSpec::new(Family::Rnn, 3), 1).unwrap();
    let mut spec = ModelSpec::new(Family::DeepSet, 3);
    spec.k = 5;
    spec.capacity = Capacity::HighCapacity;
    let mut student = sample_student(&spec, 1).unwrap();
    let err = cot_train(&mut student, &teacher, &DistributionSpec::uniform(3, 4), &quick(1)).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    // label-only training is fine with any hidden width
    erm_train(&mut student, &teacher, &DistributionSpec::uniform(3, 4), &quick(1)).unwrap();
}

#[test]
fn divergence_reports_where_it_happened() {
    let psi = Mlp::sample(
        MlpSpec::perceptron(2, 2).with_output(Activation::Identity),
        0.6,
        &mut RngStream::new(0, "psi"),
    )
    .unwrap();
    let mut student = Model::DeepSet(
        DeepSetModel::new(Map::Mlp(psi), Map::Fixed { dim: 2, func: Elementwise::Exp }, Capacity::HighCapacity)
            .unwrap(),
    );
    let teacher = sample_teacher(&ModelSpec::new(Family::Ssm, 2), 0).unwrap();
    let cfg = TrainConfig {
        lr: 50.0,
        ..quick(5)
    };
    match erm_train(&mut student, &teacher, &DistributionSpec::uniform(2, 8), &cfg) {
        Err(Error::Diverged { epoch, lr, loss, .. }) => {
            assert!(epoch >= 1);
            assert!(lr > 0.0);
            assert!(!loss.is_finite());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn invalid_config_is_rejected() {
    let teacher = sample_teacher(&ModelSpec::new(Family::Ssm, 2), 0).unwrap();
    let mut student = teacher.clone();
    let cfg = TrainConfig {
        batch_size: 0,
        ..quick(1)
    };
    assert!(erm_train(&mut student, &teacher, &DistributionSpec::uniform(2, 2), &cfg).is_err());
}
