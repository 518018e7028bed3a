//! Risk minimization on streaming teacher-labelled batches.
//!
//! The objective is the mean over prefix lengths `t = first_t..=T` of the
//! squared error at `t`. Summing instead of averaging has the same minimizer
//! for fixed `T`; the mean keeps the step size independent of `T`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::arch::Model;
use crate::datagen::{batch_rng, DistributionSpec};
use crate::error::{Error, Result};
use crate::numerics::{Backend, Eager, Matrix, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    LabelOnly,
    /// Label loss plus squared error between student and teacher hidden
    /// traces, both with unit weight.
    LabelPlusCot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub plateau_factor: f64,
    /// Relative improvement below which an epoch counts as a plateau.
    pub plateau_threshold: f64,
    pub cooldown_epochs: usize,
    pub min_lr: f64,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub epochs: usize,
    pub validation_batches: usize,
    pub loss: LossKind,
    /// Supervise only the label at `t = T`.
    pub final_label_only: bool,
    /// First prefix length that enters the loss.
    pub first_t: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            plateau_factor: 0.8,
            plateau_threshold: 1e-6,
            cooldown_epochs: 1,
            min_lr: 1e-7,
            batch_size: 256,
            batches_per_epoch: 100,
            epochs: 100,
            validation_batches: 10,
            loss: LossKind::LabelOnly,
            final_label_only: false,
            first_t: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("eps", self.eps),
            ("plateau-factor", self.plateau_factor),
            ("min-lr", self.min_lr),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.weight_decay < 0.0 || self.plateau_threshold < 0.0 {
            return Err(Error::Config("weight decay and threshold must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if self.plateau_factor >= 1.0 {
            return Err(Error::Config("plateau factor must be < 1".into()));
        }
        if self.batch_size == 0 || self.batches_per_epoch == 0 || self.validation_batches == 0 {
            return Err(Error::Config("batch counts must be >= 1".into()));
        }
        if self.first_t == 0 {
            return Err(Error::Config("first-t starts at 1".into()));
        }
        Ok(())
    }
}

/// AdamW moments, step counter and current learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
    pub lr: f64,
}

impl OptimizerState {
    pub fn new(params: &[&Matrix], lr: f64) -> Self {
        let zeros: Vec<Matrix> = params
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr,
        }
    }
}

/// One AdamW update with bias correction and decoupled weight decay:
/// `θ ← θ − lr·m̂/(√v̂ + eps) − lr·wd·θ`.
pub fn adamw_step(
    params: &mut [&mut Matrix],
    grads: &[Matrix],
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let lr = state.lr;
    let decay = lr * config.weight_decay;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].shape() != g.shape() {
            return Err(Error::Shape(format!(
                "parameter {i}: {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        let m = state.m[i].as_mut_slice();
        let v = state.v[i].as_mut_slice();
        for (j, (theta, &gj)) in p.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + config.eps) + decay * *theta;
        }
    }
    Ok(())
}

/// Reduce-on-plateau bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauState {
    pub best: f64,
    pub cooldown: usize,
    pub reductions: usize,
}

impl Default for PlateauState {
    fn default() -> Self {
        Self {
            best: f64::INFINITY,
            cooldown: 0,
            reductions: 0,
        }
    }
}

/// Feeds one epoch's validation loss to the scheduler. The learning rate is
/// multiplied by the plateau factor when the loss fails to improve on the
/// best so far by a relative margin of `plateau_threshold`, except during the
/// cooldown that follows each reduction. Returns whether a reduction happened.
pub fn plateau_schedule(
    val_loss: f64,
    plateau: &mut PlateauState,
    lr: &mut f64,
    config: &TrainConfig,
) -> bool {
    let improved = val_loss < plateau.best * (1.0 - config.plateau_threshold);
    if improved {
        plateau.best = val_loss;
    }
    if plateau.cooldown > 0 {
        plateau.cooldown -= 1;
        return false;
    }
    if improved {
        return false;
    }
    let next = (*lr * config.plateau_factor).max(config.min_lr);
    if next < *lr {
        *lr = next;
        plateau.reductions += 1;
        plateau.cooldown = config.cooldown_epochs;
        true
    } else {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Validation loss of the initial student.
    pub initial_val_loss: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Learning rate in effect during each epoch.
    pub lr: Vec<f64>,
    pub steps: u64,
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn final_val_loss(&self) -> f64 {
        self.val_loss.last().copied().unwrap_or(self.initial_val_loss)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `epoch,train_loss,val_loss,lr` rows.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "val_loss", "lr"])?;
        for (e, ((tl, vl), lr)) in self
            .train_loss
            .iter()
            .zip(&self.val_loss)
            .zip(&self.lr)
            .enumerate()
        {
            w.write_record([
                (e + 1).to_string(),
                format!("{tl:e}"),
                format!("{vl:e}"),
                format!("{lr:e}"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The training objective on one batch, on any backend.
pub fn objective<B: Backend>(
    b: &mut B,
    student: &Model,
    tokens: &[Matrix],
    labels: &[Matrix],
    cot: Option<&[Matrix]>,
    config: &TrainConfig,
) -> Result<B::Value> {
    let inputs: Vec<B::Value> = tokens.iter().map(|x| b.constant(x.clone())).collect();
    let trace = student.forward(b, &inputs)?;
    let t_max = tokens.len();
    let positions: Vec<usize> = if config.final_label_only {
        vec![t_max - 1]
    } else {
        (config.first_t.min(t_max) - 1..t_max).collect()
    };
    let weight = 1.0 / positions.len() as f64;
    let mut total: Option<B::Value> = None;
    for &t in &positions {
        let y = b.constant(labels[t].clone());
        let mut term = b.mse(&trace.labels[t], &y)?;
        if let Some(hidden) = cot {
            let h = b.constant(hidden[t].clone());
            let c = b.mse(&trace.hidden[t], &h)?;
            term = b.add(&term, &c)?;
        }
        total = Some(match total {
            Some(acc) => b.add(&acc, &term)?,
            None => term,
        });
    }
    let total = total.expect("at least one position");
    Ok(b.scale(&total, weight))
}

fn check_compatible(student: &Model, teacher: &Model, config: &TrainConfig) -> Result<()> {
    if student.token_dim() != teacher.token_dim() || student.out_dim() != teacher.out_dim() {
        return Err(Error::Config(format!(
            "student maps {}→{} but teacher maps {}→{}",
            student.token_dim(),
            student.out_dim(),
            teacher.token_dim(),
            teacher.out_dim()
        )));
    }
    if config.loss == LossKind::LabelPlusCot && student.hidden_dim() != teacher.hidden_dim() {
        return Err(Error::Config(format!(
            "CoT needs equal hidden dims (student {}, teacher {})",
            student.hidden_dim(),
            teacher.hidden_dim()
        )));
    }
    Ok(())
}

/// Mean objective over `batches` fresh validation batches for `epoch`.
pub fn validation_loss(
    student: &Model,
    teacher: &Model,
    dist: &DistributionSpec,
    config: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let with_cot = config.loss == LossKind::LabelPlusCot;
    let mut total = 0.0;
    for i in 0..config.validation_batches {
        let mut rng = batch_rng(config.seed, "validation", epoch, i);
        let tokens = dist.sample(config.batch_size, &mut rng)?;
        let trace = teacher.run(&tokens)?;
        let cot = with_cot.then_some(trace.hidden.as_slice());
        let loss = objective(&mut Eager, student, &tokens, &trace.labels, cot, config)?;
        total += loss.item();
    }
    Ok(total / config.validation_batches as f64)
}

/// Trains `student` on batches drawn online from `dist` and labelled by
/// `teacher`. With [`LossKind::LabelPlusCot`] the teacher's hidden traces
/// are supervised as well.
pub fn train(
    student: &mut Model,
    teacher: &Model,
    dist: &DistributionSpec,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    check_compatible(student, teacher, config)?;
    let start = Instant::now();
    let with_cot = config.loss == LossKind::LabelPlusCot;
    let mut opt = OptimizerState::new(&student.params(), config.lr);
    let mut plateau = PlateauState::default();
    let initial_val_loss = validation_loss(student, teacher, dist, config, 0)?;
    let mut report = TrainReport {
        initial_val_loss,
        train_loss: Vec::with_capacity(config.epochs),
        val_loss: Vec::with_capacity(config.epochs),
        lr: Vec::with_capacity(config.epochs),
        steps: 0,
        wall_time_secs: 0.0,
    };
    for epoch in 1..=config.epochs {
        report.lr.push(opt.lr);
        let mut epoch_loss = 0.0;
        for batch in 0..config.batches_per_epoch {
            let mut rng = batch_rng(config.seed, "train", epoch, batch);
            let tokens = dist.sample(config.batch_size, &mut rng)?;
            let trace = teacher.run(&tokens)?;
            let cot = with_cot.then_some(trace.hidden.as_slice());
            let mut tape = Tape::new();
            let loss = objective(&mut tape, student, &tokens, &trace.labels, cot, config)?;
            let value = tape.get(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    lr: opt.lr,
                    loss: value,
                });
            }
            let grads = tape.backward(loss)?.params();
            let mut params = student.params_mut();
            adamw_step(&mut params, &grads, &mut opt, config)?;
            epoch_loss += value;
        }
        report.train_loss.push(epoch_loss / config.batches_per_epoch as f64);
        let val = validation_loss(student, teacher, dist, config, epoch)?;
        if !val.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: config.batches_per_epoch,
                lr: opt.lr,
                loss: val,
            });
        }
        report.val_loss.push(val);
        plateau_schedule(val, &mut plateau, &mut opt.lr, config);
    }
    report.steps = opt.step;
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Label-only risk minimization.
pub fn erm_train(
    student: &mut Model,
    teacher: &Model,
    dist: &DistributionSpec,
    config: &TrainConfig,
) -> Result<TrainReport> {
    let config = TrainConfig {
        loss: LossKind::LabelOnly,
        ..config.clone()
    };
    train(student, teacher, dist, &config)
}

/// Risk minimization with the teacher's hidden trace as a second target.
pub fn cot_train(
    student: &mut Model,
    teacher: &Model,
    dist: &DistributionSpec,
    config: &TrainConfig,
) -> Result<TrainReport> {
    let config = TrainConfig {
        loss: LossKind::LabelPlusCot,
        ..config.clone()
    };
    train(student, teacher, dist, &config)
}
