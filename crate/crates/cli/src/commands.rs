//! The six subcommands. Machine output (JSON, CSV) goes to `--out` or
//! standard out; progress and tables go to standard error.

use crate::config::{
    BenchConfig, BoundConfig, ExportConfig, PredictConfig, SweepAxis, SweepConfig, SynthConfig,
    TrainConfig,
};
use crate::error::AppError;
use crate::Overrides;
use mtmf::baselines::{cmtl_fit, lasso_fit, ridge_fit};
use mtmf::bound::{estimate_feature_norm_bound, generalization_bound, BoundInputs};
use mtmf::dataset::{load_csv_with_ids, split, synth_gen, write_csv, MultiTaskDataset};
use mtmf::eval::{
    default_beta_grid, default_gamma_grid, nmse, run_experiment, Method, MetricKind, MetricResult,
};
use mtmf::model_io::{
    matrix_to_rows, model_to_json, read_model, rows_to_matrix, write_matrix_csv, ModelDocument,
};
use mtmf::solver::{factorize, fit};
use mtmf::HyperParams;
use nalgebra::DVector;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

/// Writes machine output to `--out` when present, standard out otherwise.
fn emit(out: Option<&Path>, payload: &str) -> Result<(), AppError> {
    match out {
        Some(path) => {
            std::fs::write(path, payload)?;
            Ok(())
        }
        None => std::io::stdout()
            .write_all(payload.as_bytes())
            .map_err(AppError::from),
    }
}

fn pretty_json<T: Serialize>(value: &T) -> Result<String, AppError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| AppError::data(format!("serialization failed: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn bound_report(
    cfg: &BoundConfig,
    ds: &MultiTaskDataset,
    hp: &HyperParams,
) -> Result<mtmf::bound::BoundTerms, AppError> {
    let inputs = BoundInputs {
        admissibility: cfg.admissibility,
        loss_bound: cfg.loss_bound,
        feature_norm_bound: cfg
            .feature_norm_bound
            .unwrap_or_else(|| estimate_feature_norm_bound(ds)),
        delta: cfg.delta,
        gamma: hp.gamma,
        beta: hp.beta,
        // the bound assumes equal task sizes; the smallest is conservative
        samples_per_task: ds
            .tasks()
            .iter()
            .map(|t| t.num_samples())
            .min()
            .unwrap_or(1),
        tasks: ds.num_tasks(),
    };
    Ok(generalization_bound(&inputs)?)
}

pub fn train(cfg: TrainConfig, ov: &Overrides) -> Result<(), AppError> {
    let ds = cfg.data.load(ov.seed)?;
    let doc = match cfg.method {
        Method::Mtmf | Method::Cmtl => {
            let hp = cfg.hyperparams.solver_params()?;
            let (cs, report) = if cfg.method == Method::Mtmf {
                fit(&ds, &hp)?
            } else {
                cmtl_fit(&ds, &hp)?
            };
            ov.log(
                1,
                &format!(
                    "fit converged={} iterations={} ({:.3}s)",
                    report.converged, report.iterations, report.wall_time_seconds
                ),
            );
            let fs = factorize(&cs);
            let mut doc =
                ModelDocument::from_joint(&cfg.method.to_string(), &cs, &fs, &hp, &report);
            if ov.bound {
                let terms = bound_report(&cfg.bound.clone().unwrap_or_default(), &ds, &hp)?;
                if let Some(report_doc) = doc.report.as_mut() {
                    report_doc.bound = Some(terms);
                }
            }
            doc
        }
        Method::L2r => {
            let lambda = cfg.hyperparams.lambda()?;
            ModelDocument::from_baseline(&ridge_fit(&ds, lambda), lambda)
        }
        Method::L1r => {
            let lambda = cfg.hyperparams.lambda()?;
            let model = lasso_fit(&ds, lambda, 50_000, 1e-10);
            if !model.converged {
                ov.log(0, "lasso hit its iteration cap before meeting tolerance");
            }
            ModelDocument::from_baseline(&model, lambda)
        }
    };
    if ov.bound && matches!(cfg.method, Method::L2r | Method::L1r) {
        ov.log(0, "--bound applies to the joint methods only; ignored");
    }
    if !doc
        .weights
        .iter()
        .flatten()
        .chain(doc.shared.iter())
        .all(|v| v.is_finite())
    {
        return Err(AppError::Numerical("fitted weights are not finite".into()));
    }
    emit(ov.out.as_deref(), &model_to_json(&doc)?)
}

pub fn predict(cfg: PredictConfig, ov: &Overrides) -> Result<(), AppError> {
    let doc = read_model(&cfg.model)?;
    let predictor = doc.predictor()?;
    let (ds, ids) = match (&cfg.data.path, &cfg.data.synth) {
        (Some(path), None) => {
            let schema = cfg.data.schema.clone().unwrap_or_default();
            load_csv_with_ids(path, &schema)?
        }
        _ => {
            let ds = cfg.data.load(ov.seed)?;
            let ids = (0..ds.num_tasks()).map(|t| t.to_string()).collect();
            (ds, ids)
        }
    };
    let ds = if cfg.data.add_bias {
        ds.with_bias_column()
    } else {
        ds
    };
    if ds.dim() != predictor.dim() {
        return Err(AppError::data(format!(
            "model expects {} features, dataset has {}",
            predictor.dim(),
            ds.dim()
        )));
    }
    if ds.num_tasks() != predictor.num_tasks() {
        return Err(AppError::data(format!(
            "model has {} tasks, dataset has {}",
            predictor.num_tasks(),
            ds.num_tasks()
        )));
    }

    let mut out = String::from("task_id,prediction\n");
    for (t, task) in ds.tasks().iter().enumerate() {
        for i in 0..task.num_samples() {
            let x = task.features().row(i).transpose();
            let value = predictor.predict(&x, t)?;
            out.push_str(&format!("{},{}\n", ids[t], value));
        }
    }
    emit(ov.out.as_deref(), &out)
}

/// `mean ± std` rows with aligned columns, for the diagnostic stream.
fn metric_table(rows: &[(String, &MetricResult)]) -> String {
    let label_width = rows
        .iter()
        .map(|(label, _)| label.len())
        .max()
        .unwrap_or(6)
        .max(6);
    let mut text = format!(
        "{:<label_width$}  {:>10}  {:>10}\n",
        "metric", "mean", "std"
    );
    for (label, result) in rows {
        text.push_str(&format!(
            "{label:<label_width$}  {:>10.4}  {:>10.4}\n",
            result.mean, result.std
        ));
    }
    text
}

pub fn bench(mut cfg: BenchConfig, ov: &Overrides) -> Result<(), AppError> {
    if let Some(seed) = ov.seed {
        cfg.experiment.split.seed = seed;
    }
    if let Some(metric) = ov.metric {
        cfg.experiment.metrics = vec![metric];
    }
    let ds = cfg.data.load(None)?;
    ov.log(
        1,
        &format!(
            "bench: method={} repetitions={} tasks={} d={}",
            cfg.experiment.method,
            cfg.experiment.repetitions,
            ds.num_tasks(),
            ds.dim()
        ),
    );
    let outcome = run_experiment(&ds, &cfg.experiment)?;

    let rows: Vec<(String, &MetricResult)> = outcome
        .metrics
        .iter()
        .map(|m| (m.metric.to_string(), &m.result))
        .collect();
    eprint!("{}", metric_table(&rows));
    emit(ov.out.as_deref(), &pretty_json(&outcome)?)
}

pub fn synth(mut cfg: SynthConfig, ov: &Overrides) -> Result<(), AppError> {
    if let Some(seed) = ov.seed {
        cfg.synth.seed = seed;
    }
    let (ds, truth) = synth_gen(&cfg.synth)?;
    let dir = ov
        .out
        .clone()
        .ok_or_else(|| AppError::usage("synth requires --out <directory>"))?;
    std::fs::create_dir_all(&dir)?;
    write_csv(&ds, dir.join("dataset.csv"))?;

    #[derive(Serialize)]
    struct TruthDoc {
        #[serde(rename = "A_true")]
        offsets: Vec<Vec<f64>>,
        #[serde(rename = "a0_true")]
        shared: Vec<f64>,
        #[serde(rename = "U_true")]
        feature_map: Vec<Vec<f64>>,
    }
    let doc = TruthDoc {
        offsets: matrix_to_rows(&truth.offsets),
        shared: truth.shared.iter().copied().collect(),
        feature_map: matrix_to_rows(&truth.feature_map),
    };
    std::fs::write(dir.join("ground_truth.json"), pretty_json(&doc)?)?;
    ov.log(
        1,
        &format!(
            "wrote dataset.csv and ground_truth.json under {}",
            dir.display()
        ),
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    value: f64,
    nmse: MetricResult,
}

pub fn sweep(mut cfg: SweepConfig, ov: &Overrides) -> Result<(), AppError> {
    if let Some(seed) = ov.seed {
        cfg.split.seed = seed;
    }
    if !matches!(cfg.method, Method::Mtmf | Method::Cmtl) {
        return Err(AppError::usage(
            "sweep varies gamma/beta; method must be mtmf or cmtl",
        ));
    }
    if cfg.repetitions == 0 {
        return Err(AppError::usage("repetitions must be >= 1"));
    }
    let metric = ov.metric.unwrap_or(MetricKind::Nmse);
    let ds = cfg.data.load(None)?;

    let grid = cfg.grid.clone().unwrap_or_else(|| match cfg.vary {
        SweepAxis::Gamma => default_gamma_grid(),
        SweepAxis::Beta => default_beta_grid(),
    });
    let fixed = cfg.fixed.unwrap_or(match cfg.vary {
        SweepAxis::Gamma => 1.0,  // beta held at 1
        SweepAxis::Beta => 100.0, // gamma held at 100
    });

    let mut rows = Vec::with_capacity(grid.len());
    for &value in &grid {
        let (gamma, beta) = match cfg.vary {
            SweepAxis::Gamma => (value, fixed),
            SweepAxis::Beta => (fixed, value),
        };
        let mut per_run = Vec::with_capacity(cfg.repetitions);
        for r in 0..cfg.repetitions {
            let spec = cfg.split.with_seed(cfg.split.seed.wrapping_add(r as u64));
            let (train, validation, test) = split(&ds, &spec)?;
            let hp = HyperParams {
                gamma,
                beta,
                eps: cfg.solver.eps,
                max_iter: cfg.solver.max_iter,
                tol: cfg.solver.tol,
            };
            hp.validate()?;
            let (cs, _) = if cfg.method == Method::Mtmf {
                fit(&train, &hp)?
            } else {
                cmtl_fit(&train, &hp)?
            };
            // sensitivity protocol holds out everything that is not training
            let held_out = merge(&validation, &test)?;
            let mut predictions = Vec::with_capacity(held_out.total_samples());
            for (t, task) in held_out.tasks().iter().enumerate() {
                for i in 0..task.num_samples() {
                    let x = task.features().row(i).transpose();
                    predictions.push(cs.predict(&x, t)?);
                }
            }
            let predictions = DVector::from_vec(predictions);
            let score = match metric {
                MetricKind::Nmse => nmse(&held_out.pooled_targets(), &predictions)?,
                MetricKind::Amse => mtmf::eval::amse(&held_out.pooled_targets(), &predictions)?,
                MetricKind::Map => {
                    return Err(AppError::usage("sweep reports regression metrics only"))
                }
            };
            per_run.push(score);
        }
        ov.log(1, &format!("sweep {value}: done"));
        rows.push(SweepRow {
            value,
            nmse: MetricResult::from_runs(per_run),
        });
    }

    let table_rows: Vec<(String, &MetricResult)> = rows
        .iter()
        .map(|r| (format!("{}", r.value), &r.nmse))
        .collect();
    eprint!("{}", metric_table(&table_rows));
    emit(ov.out.as_deref(), &pretty_json(&rows)?)
}

fn merge(a: &MultiTaskDataset, b: &MultiTaskDataset) -> Result<MultiTaskDataset, AppError> {
    use mtmf::dataset::TaskData;
    use nalgebra::DMatrix;
    let tasks = a
        .tasks()
        .iter()
        .zip(b.tasks())
        .map(|(x, y)| {
            let m = x.num_samples() + y.num_samples();
            let d = x.dim();
            let features = DMatrix::from_fn(m, d, |i, j| {
                if i < x.num_samples() {
                    x.features()[(i, j)]
                } else {
                    y.features()[(i - x.num_samples(), j)]
                }
            });
            let targets = DVector::from_fn(m, |i, _| {
                if i < x.num_samples() {
                    x.targets()[i]
                } else {
                    y.targets()[i - x.num_samples()]
                }
            });
            TaskData::new(features, targets)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MultiTaskDataset::new(tasks)?)
}

pub fn export(cfg: ExportConfig, ov: &Overrides) -> Result<(), AppError> {
    let doc = read_model(&cfg.model)?;
    let offsets = doc
        .offsets
        .as_ref()
        .ok_or_else(|| AppError::data("model has no offset matrix to export"))?;
    let shared = doc
        .factored_shared
        .as_ref()
        .ok_or_else(|| AppError::data("model has no shared hyperplane to export"))?;
    let dir = ov
        .out
        .clone()
        .ok_or_else(|| AppError::usage("export requires --out <directory>"))?;
    std::fs::create_dir_all(&dir)?;

    let offsets = rows_to_matrix(offsets)?;
    write_matrix_csv(dir.join("A.csv"), &offsets)?;
    let shared_col = nalgebra::DMatrix::from_fn(shared.len(), 1, |i, _| shared[i]);
    write_matrix_csv(dir.join("a0.csv"), &shared_col)?;
    ov.log(
        1,
        &format!("wrote A.csv and a0.csv under {}", dir.display()),
    );
    Ok(())
}
