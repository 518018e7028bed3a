//! The experiment families. Each returns its artifacts in memory; writing
//! them out is left to [`crate::run`].

use lengen_core::arch::{make_degenerate, sample_student, sample_teacher, Family, Model, ModelSpec};
use lengen_core::datagen::{DistributionKind, DistributionSpec};
use lengen_core::eval::{
    length_gen_curve, permutation_recovery, write_trajectory, CurveOptions, EvalReport, EVAL_CSV_HEADER,
};
use lengen_core::numerics::RngStream;
use lengen_core::theory::{
    build_cover, empirical_lipschitz_rnn, empirical_lipschitz_transformer, finite_class_t0, survivor_sequence,
    HypothesisGrid, ScalarSsm,
};
use lengen_core::training::{train, LossKind, TrainConfig, TrainReport};
use lengen_core::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{HarnessError, Result};
use crate::plot::{risk_chart, trajectory_chart_bytes, CurveRow};
use crate::svg::{LineChart, Series};

/// Header of the cover experiment's results.
pub const COVER_CSV_HEADER: [&str; 3] = ["T", "survivors", "contains_nearest"];
/// Header of the Lipschitz experiment's results.
pub const LIPSCHITZ_CSV_HEADER: [&str; 4] = ["model", "t", "max_ratio", "bound"];
/// Sequences used to measure the mean label gap of the failure experiment.
const GAP_SAMPLES: usize = 2000;

/// Outcome of one training job, recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SeedStatus {
    pub arm: String,
    pub seed: u64,
    /// `ok` or `diverged`.
    pub status: String,
    pub detail: Option<String>,
    pub final_val_loss: Option<f64>,
    pub wall_time_secs: f64,
}

/// Everything a run produces.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub results_csv: String,
    pub report: Value,
    /// Further artifacts by relative path (plots, models, training curves).
    pub files: Vec<(String, Vec<u8>)>,
    pub seeds: Vec<SeedStatus>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    match cfg.experiment {
        ExperimentKind::Lengthgen | ExperimentKind::Discrete => run_lengthgen(cfg),
        ExperimentKind::Compgen => run_compgen(cfg),
        ExperimentKind::Failure => run_failure(cfg),
        ExperimentKind::Cot => run_cot(cfg),
        ExperimentKind::Nonrealizable => run_nonrealizable(cfg),
        ExperimentKind::Finite => run_finite(cfg),
        ExperimentKind::Cover => run_cover(cfg),
        ExperimentKind::Lipschitz => run_lipschitz(cfg),
    }
}

struct Job {
    arm: String,
    seed: u64,
    teacher: Model,
    student_spec: ModelSpec,
    dist: DistributionSpec,
    train: TrainConfig,
}

struct Trained {
    arm: String,
    seed: u64,
    teacher: Model,
    student: Option<Model>,
    report: Option<TrainReport>,
    status: SeedStatus,
}

/// Trains every job in parallel; results come back in job order. A diverged
/// job is recorded and skipped, any other error aborts the run.
fn train_jobs(jobs: Vec<Job>) -> Result<Vec<Trained>> {
    jobs.into_par_iter()
        .map(|job| {
            let mut student = sample_student(&job.student_spec, job.seed)?;
            let cfg = TrainConfig {
                seed: job.seed,
                ..job.train
            };
            let start = std::time::Instant::now();
            let (student, report, status, detail) = match train(&mut student, &job.teacher, &job.dist, &cfg) {
                Ok(rep) => (Some(student), Some(rep), "ok", None),
                Err(e @ Error::Diverged { .. }) => (None, None, "diverged", Some(e.to_string())),
                Err(e) => return Err(HarnessError::from(e)),
            };
            Ok(Trained {
                status: SeedStatus {
                    arm: job.arm.clone(),
                    seed: job.seed,
                    status: status.into(),
                    detail,
                    final_val_loss: report.as_ref().map(TrainReport::final_val_loss),
                    wall_time_secs: start.elapsed().as_secs_f64(),
                },
                arm: job.arm,
                seed: job.seed,
                teacher: job.teacher,
                student,
                report,
            })
        })
        .collect()
}

fn teachers(cfg: &ExperimentConfig) -> Result<Vec<(u64, Model)>> {
    let spec = cfg.teacher_spec();
    cfg.seed_list()
        .into_iter()
        .map(|s| Ok((s, sample_teacher(&spec, s)?)))
        .collect()
}

fn jobs_for(
    arm: &str,
    teachers: &[(u64, Model)],
    student_spec: &ModelSpec,
    dist: DistributionSpec,
    train: &TrainConfig,
) -> Vec<Job> {
    teachers
        .iter()
        .map(|(seed, teacher)| Job {
            arm: arm.into(),
            seed: *seed,
            teacher: teacher.clone(),
            student_spec: student_spec.clone(),
            dist,
            train: train.clone(),
        })
        .collect()
}

fn arm_of<'a>(trained: &'a [Trained], arm: &str) -> Vec<&'a Trained> {
    trained
        .iter()
        .filter(|t| t.arm == arm && t.student.is_some())
        .collect()
}

fn curve_options(cfg: &ExperimentConfig, label: &str, r2: bool) -> CurveOptions {
    CurveOptions {
        num_samples: cfg.eval.samples,
        r2_samples: if r2 { cfg.eval.r2_samples } else { 0 },
        seed: 0,
        model: label.into(),
    }
}

/// Curve over the trained students of one arm; `None` when all diverged.
fn curve(
    ok: &[&Trained],
    lengths: &[usize],
    dist: &DistributionSpec,
    opts: &CurveOptions,
) -> Result<Option<EvalReport>> {
    if ok.is_empty() {
        return Ok(None);
    }
    let pairs: Vec<(&Model, &Model)> = ok
        .iter()
        .map(|t| (t.student.as_ref().expect("filtered"), &t.teacher))
        .collect();
    let seeds: Vec<u64> = ok.iter().map(|t| t.seed).collect();
    Ok(Some(length_gen_curve(&pairs, &seeds, lengths, dist, opts)?))
}

fn csv_of(reports: &[&EvalReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EVAL_CSV_HEADER)?;
    for r in reports {
        r.write_csv(&mut w)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn curve_rows(reports: &[&EvalReport]) -> Vec<CurveRow> {
    reports
        .iter()
        .flat_map(|r| {
            r.rows.iter().map(|row| CurveRow {
                model: r.model.clone(),
                family: r.family.clone(),
                t: row.t,
                risk_mean: row.risk_mean,
                risk_std: row.risk_std,
            })
        })
        .collect()
}

fn training_summary(trained: &[Trained]) -> Value {
    Value::Array(
        trained
            .iter()
            .map(|t| {
                json!({
                    "arm": t.arm,
                    "seed": t.seed,
                    "status": t.status.status,
                    "detail": t.status.detail,
                    "initial-val-loss": t.report.as_ref().map(|r| r.initial_val_loss),
                    "final-val-loss": t.report.as_ref().map(TrainReport::final_val_loss),
                })
            })
            .collect(),
    )
}

/// Saved students and per-epoch training curves.
fn training_files(trained: &[Trained]) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    for t in trained {
        if let (Some(student), Some(report)) = (&t.student, &t.report) {
            files.push((format!("models/{}-seed{}.json", t.arm, t.seed), student.to_json()?.into_bytes()));
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            files.push((format!("training/{}-seed{}.csv", t.arm, t.seed), buf));
        }
    }
    Ok(files)
}

fn finish_training(out: &mut RunOutput, trained: &[Trained]) -> Result<()> {
    out.files.extend(training_files(trained)?);
    out.seeds = trained.iter().map(|t| t.status.clone()).collect();
    Ok(())
}

fn svg_file(name: &str, chart: &LineChart) -> Result<(String, Vec<u8>)> {
    Ok((name.into(), chart.render()?.into_bytes()))
}

fn loss_at(report: &EvalReport, t: usize) -> Option<f64> {
    report.row(t).map(|r| r.risk_mean)
}

fn run_lengthgen(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let dist = cfg.train_distribution();
    let teachers = teachers(cfg)?;
    let trained = train_jobs(jobs_for("student", &teachers, &cfg.student_spec(), dist, &cfg.train))?;
    let ok = arm_of(&trained, "student");
    let mut out = RunOutput::default();
    let mut report = json!({
        "experiment": cfg.experiment,
        "distribution": dist.kind,
        "train-t": cfg.train_t,
        "training": training_summary(&trained),
    });
    let curve_report = curve(&ok, &cfg.eval_lengths, &dist, &curve_options(cfg, "student", true))?;
    if let Some(mut curve_report) = curve_report {
        if cfg.family == Family::Rnn && cfg.student_spec().family == Family::Rnn {
            let mut scores = Vec::new();
            for t in &ok {
                let probe = dist
                    .with_len(cfg.train_t)
                    .sample(cfg.eval.perm_samples, &mut RngStream::new(t.seed, "permutation-probe"))?;
                let score = permutation_recovery(t.student.as_ref().expect("ok"), &t.teacher, &probe)?;
                scores.push(json!({"seed": t.seed, "score": score.score, "perm": score.perm}));
            }
            let mean = scores.iter().map(|s| s["score"].as_f64().expect("number")).sum::<f64>() / scores.len() as f64;
            for row in &mut curve_report.rows {
                row.perm_score = Some(mean);
            }
            report["permutation"] = json!({"mean-score": mean, "per-seed": scores});
        }
        let first = ok[0];
        let max_len = *cfg.eval_lengths.last().expect("non-empty");
        let tokens = dist
            .with_len(max_len)
            .sample(1, &mut RngStream::new(first.seed, "trajectory"))?;
        let mut traj = Vec::new();
        write_trajectory(first.student.as_ref().expect("ok"), &first.teacher, &tokens, &mut traj)?;
        let label = format!("{} (seed {})", cfg.summary(), first.seed);
        let chart = trajectory_chart_bytes(std::path::Path::new("trajectory.csv"), &traj, &label)?;
        out.files.push(("trajectory.csv".into(), traj));
        out.files.push(svg_file("trajectory.svg", &chart)?);

        report["loss-at"] = json!(curve_report
            .rows
            .iter()
            .map(|r| (r.t.to_string(), json!(r.risk_mean)))
            .collect::<serde_json::Map<_, _>>());
        report["r2-overall"] = json!(curve_report.r2_overall);
        report["curve"] = serde_json::to_value(&curve_report)?;
        out.results_csv = csv_of(&[&curve_report])?;
        let chart = risk_chart(
            &curve_rows(&[&curve_report]),
            &cfg.summary(),
            vec![(cfg.train_t as f64, "train T".into())],
        );
        out.files.push(svg_file("risk.svg", &chart)?);
    } else {
        out.results_csv = csv_of(&[])?;
    }
    out.report = report;
    finish_training(&mut out, &trained)?;
    Ok(out)
}

fn run_compgen(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let train_dist = cfg.train_distribution();
    let halfwidth = cfg.compgen.halfwidth;
    let test_dist = DistributionSpec::new(DistributionKind::CornerComplement { halfwidth }, cfg.n, cfg.train_t);
    let teachers = teachers(cfg)?;
    let trained = train_jobs(jobs_for("student", &teachers, &cfg.student_spec(), train_dist, &cfg.train))?;
    let ok = arm_of(&trained, "student");
    let mut out = RunOutput::default();
    let mut report = json!({
        "experiment": cfg.experiment,
        "train-distribution": train_dist.kind,
        "test-distribution": test_dist.kind,
        "train-t": cfg.train_t,
        "training": training_summary(&trained),
    });
    let corners = curve(&ok, &cfg.eval_lengths, &test_dist, &curve_options(cfg, "corners", true))?;
    let band = curve(&ok, &cfg.eval_lengths, &train_dist, &curve_options(cfg, "band", false))?;
    if let (Some(corners), Some(band)) = (corners, band) {
        report["corner-loss"] = json!(loss_at(&corners, cfg.train_t));
        report["band-loss"] = json!(loss_at(&band, cfg.train_t));
        report["r2-overall"] = json!(corners.r2_overall);
        report["corners"] = serde_json::to_value(&corners)?;
        report["band"] = serde_json::to_value(&band)?;
        out.results_csv = csv_of(&[&corners, &band])?;
        let chart = risk_chart(&curve_rows(&[&corners, &band]), &cfg.summary(), Vec::new());
        out.files.push(svg_file("risk.svg", &chart)?);
    } else {
        out.results_csv = csv_of(&[])?;
    }
    out.report = report;
    finish_training(&mut out, &trained)?;
    Ok(out)
}

/// Mean of `label − prediction` over sequences, label dims and positions
/// `t > threshold`.
fn mean_gap(student: &Model, teacher: &Model, n: usize, len: usize, threshold: usize, seed: u64) -> Result<f64> {
    let tokens = DistributionSpec::uniform(n, len).sample(GAP_SAMPLES, &mut RngStream::new(seed, "gap"))?;
    let pred = student.run(&tokens)?;
    let truth = teacher.run(&tokens)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for pos in threshold..len {
        let diff = truth.labels[pos].sub(&pred.labels[pos])?;
        sum += diff.as_slice().iter().sum::<f64>();
        count += diff.as_slice().len();
    }
    Ok(sum / count as f64)
}

fn run_failure(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let t0 = cfg.failure.threshold;
    let offset = cfg.failure.offset;
    let teachers: Vec<(u64, Model)> = teachers(cfg)?
        .into_iter()
        .map(|(s, base)| Ok((s, make_degenerate(base, &[offset], t0)?)))
        .collect::<Result<_>>()?;
    let arms = [("failure", t0 - 1), ("success", 2 * t0)];
    let student_spec = cfg.student_spec();
    let jobs = arms
        .iter()
        .flat_map(|&(arm, len)| jobs_for(arm, &teachers, &student_spec, DistributionSpec::uniform(cfg.n, len), &cfg.train))
        .collect();
    let trained = train_jobs(jobs)?;
    let eval_dist = DistributionSpec::uniform(cfg.n, cfg.train_t);
    let max_len = *cfg.eval_lengths.last().expect("non-empty");
    let mut out = RunOutput::default();
    let mut reports = Vec::new();
    let mut arm_json = serde_json::Map::new();
    for &(arm, len) in &arms {
        let ok = arm_of(&trained, arm);
        let Some(curve_report) = curve(&ok, &cfg.eval_lengths, &eval_dist, &curve_options(cfg, arm, false))? else {
            arm_json.insert(arm.into(), json!({"train-len": len, "status": "all seeds diverged"}));
            continue;
        };
        let split = |values: &dyn Fn(usize) -> f64| {
            let (mut lo, mut nlo, mut hi, mut nhi) = (0.0, 0, 0.0, 0);
            for (i, &t) in cfg.eval_lengths.iter().enumerate() {
                if t < t0 {
                    lo += values(i);
                    nlo += 1;
                } else {
                    hi += values(i);
                    nhi += 1;
                }
            }
            (lo / nlo.max(1) as f64, hi / nhi.max(1) as f64)
        };
        let (lo, hi) = split(&|i| curve_report.rows[i].risk_mean);
        let per_seed_ratio: Vec<f64> = curve_report
            .per_seed
            .iter()
            .map(|r| {
                let (l, h) = split(&|i| r[i]);
                h / l
            })
            .collect();
        let gaps = if max_len > t0 {
            ok.iter()
                .map(|t| mean_gap(t.student.as_ref().expect("ok"), &t.teacher, cfg.n, max_len, t0, t.seed))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let gap = (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64);
        arm_json.insert(
            arm.into(),
            json!({
                "train-len": len,
                "loss-below-threshold": lo,
                "loss-from-threshold": hi,
                "ratio": hi / lo,
                "per-seed-ratio": per_seed_ratio,
                "mean-gap-beyond-threshold": gap,
                "curve": serde_json::to_value(&curve_report)?,
            }),
        );
        reports.push(curve_report);
    }
    let refs: Vec<&EvalReport> = reports.iter().collect();
    out.results_csv = csv_of(&refs)?;
    if !refs.is_empty() {
        let chart = risk_chart(&curve_rows(&refs), &cfg.summary(), vec![(t0 as f64, "T0".into())]);
        out.files.push(svg_file("risk.svg", &chart)?);
    }
    out.report = json!({
        "experiment": cfg.experiment,
        "offset": offset,
        "threshold": t0,
        "arms": Value::Object(arm_json),
        "training": training_summary(&trained),
    });
    finish_training(&mut out, &trained)?;
    Ok(out)
}

fn run_cot(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let dist = cfg.train_distribution();
    let teachers = teachers(cfg)?;
    let student_spec = cfg.student_spec();
    let arms = [("label-only", LossKind::LabelOnly), ("cot", LossKind::LabelPlusCot)];
    let jobs = arms
        .iter()
        .flat_map(|&(arm, loss)| {
            let train = TrainConfig {
                loss,
                ..cfg.train.clone()
            };
            jobs_for(arm, &teachers, &student_spec, dist, &train)
        })
        .collect();
    let trained = train_jobs(jobs)?;
    let far = 2 * cfg.train_t;
    let mut reports = Vec::new();
    let mut arm_json = serde_json::Map::new();
    for &(arm, loss) in &arms {
        let ok = arm_of(&trained, arm);
        let guaranteed = loss == LossKind::LabelPlusCot || student_spec.capacity.is_structured();
        let note = if guaranteed {
            Value::Null
        } else {
            json!("high-capacity student trained on labels only: no length-generalization guarantee")
        };
        let recovery: Vec<Value> = ok
            .iter()
            .filter_map(|t| match (t.student.as_ref().expect("ok"), &t.teacher) {
                (Model::Ssm(s), Model::Ssm(th)) => Some(json!({
                    "seed": t.seed,
                    "lambda-error": s.lambda.sub(&th.lambda).ok()?.frobenius(),
                    "b-error": s.b_in.sub(&th.b_in).ok()?.frobenius(),
                })),
                _ => None,
            })
            .collect();
        let Some(curve_report) = curve(&ok, &cfg.eval_lengths, &dist, &curve_options(cfg, arm, true))? else {
            arm_json.insert(arm.into(), json!({"guarantee": guaranteed, "note": note, "status": "all seeds diverged"}));
            continue;
        };
        arm_json.insert(
            arm.into(),
            json!({
                "guarantee": guaranteed,
                "note": note,
                "loss-at-2T": loss_at(&curve_report, far),
                "parameter-recovery": recovery,
                "curve": serde_json::to_value(&curve_report)?,
            }),
        );
        reports.push(curve_report);
    }
    let refs: Vec<&EvalReport> = reports.iter().collect();
    let mut out = RunOutput {
        results_csv: csv_of(&refs)?,
        ..RunOutput::default()
    };
    if !refs.is_empty() {
        let chart = risk_chart(&curve_rows(&refs), &cfg.summary(), vec![(cfg.train_t as f64, "train T".into())]);
        out.files.push(svg_file("risk.svg", &chart)?);
    }
    out.report = json!({
        "experiment": cfg.experiment,
        "capacity": student_spec.capacity,
        "train-t": cfg.train_t,
        "arms": Value::Object(arm_json),
        "training": training_summary(&trained),
    });
    finish_training(&mut out, &trained)?;
    Ok(out)
}

fn run_nonrealizable(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let dist = cfg.train_distribution();
    let teachers = teachers(cfg)?;
    let mut arms = vec![("mismatched", cfg.student_spec())];
    if cfg.nonrealizable.control {
        arms.push(("control", cfg.teacher_spec()));
    }
    let jobs = arms
        .iter()
        .flat_map(|(arm, spec)| jobs_for(arm, &teachers, spec, dist, &cfg.train))
        .collect();
    let trained = train_jobs(jobs)?;
    let near = cfg.train_t;
    let far = cfg.nonrealizable.factor * cfg.train_t;
    let near_i = cfg.eval_lengths.iter().position(|&t| t == near).expect("finalized");
    let far_i = cfg.eval_lengths.iter().position(|&t| t == far).expect("finalized");
    let mut reports = Vec::new();
    let mut arm_json = serde_json::Map::new();
    for (arm, spec) in &arms {
        let ok = arm_of(&trained, arm);
        let Some(curve_report) = curve(&ok, &cfg.eval_lengths, &dist, &curve_options(cfg, arm, false))? else {
            arm_json.insert((*arm).into(), json!({"student-family": spec.family, "status": "all seeds diverged"}));
            continue;
        };
        let ratios: Vec<f64> = curve_report.per_seed.iter().map(|r| r[far_i] / r[near_i]).collect();
        let diverging = ratios.iter().filter(|&&r| r >= cfg.nonrealizable.divergence_ratio).count();
        arm_json.insert(
            (*arm).into(),
            json!({
                "student-family": spec.family,
                "student-capacity": spec.capacity,
                "loss-at-train-t": loss_at(&curve_report, near),
                "loss-at-far-t": loss_at(&curve_report, far),
                "per-seed-ratio": ratios,
                "diverging-seeds": diverging,
                "curve": serde_json::to_value(&curve_report)?,
            }),
        );
        reports.push(curve_report);
    }
    let refs: Vec<&EvalReport> = reports.iter().collect();
    let mut out = RunOutput {
        results_csv: csv_of(&refs)?,
        ..RunOutput::default()
    };
    if !refs.is_empty() {
        let chart = risk_chart(&curve_rows(&refs), &cfg.summary(), vec![(near as f64, "train T".into())]);
        out.files.push(svg_file("risk.svg", &chart)?);
    }
    out.report = json!({
        "experiment": cfg.experiment,
        "teacher-family": cfg.family,
        "train-t": near,
        "far-t": far,
        "divergence-ratio": cfg.nonrealizable.divergence_ratio,
        "arms": Value::Object(arm_json),
        "training": training_summary(&trained),
    });
    finish_training(&mut out, &trained)?;
    Ok(out)
}

fn scalar_risks(teacher: ScalarSsm, points: &[Vec<f64>], horizon: usize) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|p| ScalarSsm::from_params(p).risk_profile(&teacher, horizon))
        .collect()
}

fn check_scalar_params(p: &[f64], what: &str) -> Result<()> {
    if !(2..=3).contains(&p.len()) {
        return Err(HarnessError::Config(format!("{what} must be (lambda, b) or (lambda, b, w)")));
    }
    Ok(())
}

fn run_finite(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let s = &cfg.finite;
    check_scalar_params(&s.teacher, "finite.teacher")?;
    let mut axes = vec![("lambda".to_string(), s.lambdas.clone()), ("b".to_string(), s.bs.clone())];
    if !s.ws.is_empty() {
        axes.push(("w".into(), s.ws.clone()));
    }
    if axes.len() != s.teacher.len() {
        return Err(HarnessError::Config("finite.teacher must have one value per grid axis".into()));
    }
    let grid = HypothesisGrid::new("ssm", axes);
    let teacher = ScalarSsm::from_params(&s.teacher);
    let fc = finite_class_t0(&grid, &s.teacher, s.horizon, s.tolerance, |p, h| {
        ScalarSsm::from_params(p).risk_profile(&teacher, h)
    })?;
    let survivors = fc.survivors(s.train_len);
    let worst: Vec<f64> = survivors
        .iter()
        .map(|&e| fc.risk_table[e].iter().copied().fold(0.0, f64::max))
        .collect();
    let mut buf = Vec::new();
    fc.write_csv(&grid, s.train_len, &mut buf)?;
    let series = grid
        .entries
        .iter()
        .enumerate()
        .map(|(e, p)| {
            let pts = fc.risk_table[e].iter().enumerate().map(|(i, &r)| ((i + 1) as f64, r)).collect();
            Series::new(format!("entry {e} {p:?}"), pts)
        })
        .collect();
    let chart = LineChart {
        title: "Per-length risk of each hypothesis".into(),
        subtitle: format!("finite class | {} entries | tolerance {:e} | T0 = {}", grid.entries.len(), s.tolerance, fc.t0),
        x_label: "sequence length t".into(),
        y_label: "exact risk".into(),
        log_y: false,
        series,
        vlines: vec![(fc.t0.max(1) as f64, "T0".into())],
    };
    Ok(RunOutput {
        results_csv: String::from_utf8(buf).expect("csv is utf-8"),
        report: json!({
            "experiment": cfg.experiment,
            "risk-source": "exact",
            "grid": grid,
            "teacher-entry": fc.teacher_entry,
            "t0": fc.t0,
            "t-h": fc.t_h,
            "train-len": s.train_len,
            "survivors": survivors,
            "certified": fc.certified(s.train_len),
            "survivor-max-risk": worst,
            "tolerance": s.tolerance,
            "horizon": s.horizon,
        }),
        files: vec![svg_file("risk.svg", &chart)?],
        seeds: Vec::new(),
    })
}

fn run_cover(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let s = &cfg.cover;
    check_scalar_params(&s.teacher, "cover.teacher")?;
    let cover = build_cover(&s.lower, &s.upper, s.epsilon, s.lipschitz, s.max_points)?;
    let teacher = ScalarSsm::from_params(&s.teacher);
    let risks = scalar_risks(teacher, &cover.grid, s.horizon);
    let trace = survivor_sequence(&risks, s.epsilon);
    let (nearest, distance) = cover.nearest(&s.teacher);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COVER_CSV_HEADER)?;
    for (t, set) in trace.sets.iter().enumerate() {
        w.write_record([t.to_string(), set.len().to_string(), set.contains(&nearest).to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
    let stabilized: Vec<Value> = trace
        .stabilized()
        .iter()
        .map(|&p| {
            json!({
                "index": p,
                "params": cover.grid[p],
                "max-risk": risks[p].iter().copied().fold(0.0, f64::max),
            })
        })
        .collect();
    let within = trace
        .stabilized()
        .iter()
        .all(|&p| risks[p].iter().all(|&r| r <= s.epsilon));
    let chart = LineChart {
        title: "Survivors of the constrained learner".into(),
        subtitle: format!(
            "cover of {} points | eta {:.4} | epsilon {} | T0 = {}",
            cover.grid.len(),
            cover.eta,
            s.epsilon,
            trace.t0
        ),
        x_label: "training length T".into(),
        y_label: "surviving cover points".into(),
        log_y: false,
        series: vec![Series::new(
            "survivors",
            trace.sets.iter().enumerate().map(|(t, set)| (t as f64, set.len() as f64)).collect(),
        )],
        vlines: vec![(trace.t0 as f64, "T0".into())],
    };
    Ok(RunOutput {
        results_csv: String::from_utf8(bytes).expect("csv is utf-8"),
        report: json!({
            "experiment": cfg.experiment,
            "risk-source": "exact",
            "mc-std-err": 0.0,
            "grid-size": cover.grid.len(),
            "eta": cover.eta,
            "lipschitz": cover.lipschitz,
            "epsilon": s.epsilon,
            "horizon": s.horizon,
            "nearest": {"index": nearest, "params": cover.grid[nearest], "distance": distance},
            "nearest-always-survives": trace.sets.iter().all(|set| set.contains(&nearest)),
            "nested": trace.is_nested(),
            "t0": trace.t0,
            "stabilized": stabilized,
            "stabilized-within-epsilon": within,
            "nearest-miss": trace.nearest_miss,
        }),
        files: vec![svg_file("survivors.svg", &chart)?],
        seeds: Vec::new(),
    })
}

fn run_lipschitz(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let s = &cfg.lipschitz;
    let rnn = empirical_lipschitz_rnn(&s.rnn, s.trials, cfg.seed)?;
    let transformer = empirical_lipschitz_transformer(&s.transformer, s.trials, cfg.seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(LIPSCHITZ_CSV_HEADER)?;
    let mut series = Vec::new();
    for (name, emp) in [("rnn", &rnn), ("transformer", &transformer)] {
        for (i, r) in emp.max_by_t.iter().enumerate() {
            w.write_record([name.to_string(), (i + 1).to_string(), format!("{r:e}"), format!("{:e}", emp.bound)])?;
        }
        series.push(Series::new(
            format!("{name} empirical"),
            emp.max_by_t.iter().enumerate().map(|(i, &r)| ((i + 1) as f64, r)).collect(),
        ));
        series.push(
            Series::new(
                format!("{name} bound"),
                vec![(1.0, emp.bound), (emp.max_by_t.len().max(1) as f64, emp.bound)],
            )
            .dashed(),
        );
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
    let chart = LineChart {
        title: "Empirical parameter-difference ratio vs analytical bound".into(),
        subtitle: format!("{} random parameter pairs per model", s.trials),
        x_label: "sequence length t".into(),
        y_label: "max |f(θ) − f(θ')| / |θ − θ'|".into(),
        log_y: false,
        series,
        vlines: Vec::new(),
    };
    Ok(RunOutput {
        results_csv: String::from_utf8(bytes).expect("csv is utf-8"),
        report: json!({
            "experiment": cfg.experiment,
            "rnn": rnn,
            "transformer": transformer,
            "violations": rnn.violations + transformer.violations,
        }),
        files: vec![svg_file("lipschitz.svg", &chart)?],
        seeds: Vec::new(),
    })
}
