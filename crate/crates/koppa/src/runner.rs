//! One continual-learning run: train every task, evaluate, report.

use std::path::{Path, PathBuf};

use koppa_core::linalg::Matrix;
use koppa_core::metrics::{self, AccuracyMatrix};
use koppa_core::{TaskData, TrainError, Trainer, TrainingMode};
use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, CheckpointError};
use crate::config::{ConfigError, DataKind, RunConfig};
use crate::data::{self, DataError, SynthSpec};
use crate::report::{MemoryReport, ReportError, RunReport, ShiftReport, Status, TaskRecord};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("training task {task}: {source}")]
    Train {
        task: usize,
        #[source]
        source: TrainError,
    },
    #[error(
        "task {task}: keys not orthogonal to the previous query subspace (max |K Q| = {value:e})"
    )]
    Orthogonality { task: usize, value: f64 },
    #[error("non-finite accuracy or metric after task {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("creating output directory {path}: {source}")]
    OutputDir {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub struct RunOutcome {
    pub report: RunReport,
    pub trainer: Trainer,
    pub tasks: Vec<TaskData>,
}

pub fn load_tasks(config: &RunConfig) -> Result<Vec<TaskData>, DataError> {
    let d = &config.data;
    let seed = config.data_seed();
    match d.kind {
        DataKind::Synthetic => data::synth_split_gaussians(&SynthSpec {
            tasks: d.tasks,
            classes_per_task: d.classes_per_task,
            dim: d.dim,
            samples_per_class: d.samples_per_class,
            separation: d.separation,
            seed,
        }),
        DataKind::Csv => data::load_csv_tasks(path_of(config), d.tasks, d.classes_per_task, seed),
        DataKind::Kpds => data::load_kpds_tasks(path_of(config), d.tasks, d.classes_per_task, seed),
    }
}

fn path_of(config: &RunConfig) -> &Path {
    config.data.path.as_deref().expect("validated")
}

/// `max |K^t Q|` over the current keys of task `t` and a basis `Q`.
pub fn key_overlap(trainer: &Trainer, t: usize, basis: &Matrix) -> f64 {
    if basis.cols() == 0 {
        return 0.0;
    }
    trainer
        .model
        .pool
        .block(t)
        .keys
        .matmul(basis)
        .expect("key and basis dimensions agree")
        .max_abs()
}

/// Probe inputs of a task (the training inputs whose queries entered the
/// subspace) as recorded right after the task closed.
struct ProbeSnapshot {
    features: Vec<Vec<f64>>,
    queries: Vec<Vec<f64>>,
    in_span: Vec<bool>,
}

impl ProbeSnapshot {
    fn features_in_span(&self, features: &[Vec<f64>]) -> Vec<Vec<f64>> {
        features
            .iter()
            .zip(&self.in_span)
            .filter(|(_, &s)| s)
            .map(|(f, _)| f.clone())
            .collect()
    }
}

/// Runs the configuration. With an output directory, writes checkpoints
/// after every task and the report files at the end, or a partial report
/// (status `failed`) if anything goes wrong after the data is loaded.
pub fn run(config: &RunConfig, out: Option<&Path>) -> Result<RunOutcome, RunError> {
    config.validate()?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|source| RunError::OutputDir {
            path: dir.display().to_string(),
            source,
        })?;
    }
    let tasks = load_tasks(config)?;
    let dims = config.dims(tasks[0].input_dim());
    let mut trainer = Trainer::new(config.train_config(), dims);
    let mut report = RunReport::new(config.clone());

    match drive(config, out, &tasks, &mut trainer, &mut report) {
        Ok(()) => {
            report.status = Status::Complete;
            if let Some(dir) = out {
                report.write_all(dir)?;
            }
            Ok(RunOutcome {
                report,
                trainer,
                tasks,
            })
        }
        Err(e) => {
            report.status = Status::Failed;
            report.error = Some(e.to_string());
            if let Some(dir) = out {
                report.write_all(dir)?;
            }
            Err(e)
        }
    }
}

fn checkpoint_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("task_{t}.kpt"))
}

fn drive(
    config: &RunConfig,
    out: Option<&Path>,
    tasks: &[TaskData],
    trainer: &mut Trainer,
    report: &mut RunReport,
) -> Result<(), RunError> {
    let tc = trainer.config;
    let mut acc = AccuracyMatrix::new();
    let mut probes: Vec<ProbeSnapshot> = Vec::with_capacity(tasks.len());

    for data in tasks {
        let t = data.index;
        info!("task {t}: training on {} samples", data.train.len());
        let log = trainer
            .train_task(data)
            .map_err(|source| RunError::Train { task: t, source })?;

        let orthogonality = (t > 0).then(|| key_overlap(trainer, t, &trainer.basis_before(t)));
        if let Some(value) = orthogonality {
            debug!("task {t}: max |K Q| = {value:e}");
            if tc.mode == TrainingMode::Koppa
                && config.orthogonality_checked()
                && (value.is_nan() || value >= config.report.orthogonality_tol)
            {
                return Err(RunError::Orthogonality { task: t, value });
            }
        }

        let picked = &trainer.probe_indices[t];
        let queries: Vec<Vec<f64>> = picked
            .iter()
            .map(|&i| trainer.model.encoder.query(data.train.input(i)))
            .collect();
        let in_span: Vec<bool> = queries
            .iter()
            .map(|q| trainer.subspace.residual_norm(q) < config.report.span_tol)
            .collect();
        let features = picked
            .iter()
            .map(|&i| trainer.model.features(data.train.input(i)))
            .collect();
        let snapshot = ProbeSnapshot {
            features,
            queries,
            in_span,
        };

        let stage: Vec<f64> = tasks[..=t]
            .iter()
            .map(|d| metrics::accuracy(&trainer.model, &d.test, tc.prediction, tc.score_target))
            .collect();
        if stage.iter().any(|a| !a.is_finite()) {
            return Err(RunError::NonFinite(t));
        }
        info!("task {t}: accuracy {stage:?}");
        acc.push_stage(stage.clone())
            .expect("stage length matches task count");
        report.accuracy.push(stage);
        report.tasks.push(TaskRecord {
            task: t,
            classes: [data.classes.start, data.classes.end],
            train_size: data.train.len(),
            test_size: data.test.len(),
            standard_loss: log.standard,
            lookahead_loss: log.lookahead,
            finetune_loss: log.finetune,
            basis_columns: trainer.subspace.columns(),
            orthogonality,
            probes: snapshot.in_span.len(),
            probes_in_span: snapshot.in_span.iter().filter(|&&s| s).count(),
        });
        probes.push(snapshot);
        report.memory = memory_report(trainer);

        if let (Some(dir), true) = (out, config.report.checkpoints) {
            let path = checkpoint_path(dir, t);
            std::fs::create_dir_all(path.parent().expect("has parent")).map_err(|source| {
                RunError::OutputDir {
                    path: path.display().to_string(),
                    source,
                }
            })?;
            checkpoint::save(&path, config, report, trainer)?;
        }
    }

    let last = tasks.len() - 1;
    report.average_accuracy = acc.average_accuracy().ok();
    report.average_forgetting = acc.average_forgetting().ok();
    if report
        .average_accuracy
        .into_iter()
        .chain(report.average_forgetting)
        .any(|v| !v.is_finite())
    {
        return Err(RunError::NonFinite(last));
    }
    report.shift = Some(shift_report(config, tasks, trainer, &probes));

    let in_span_queries: Vec<Vec<Vec<f64>>> = probes
        .iter()
        .map(|p| {
            p.queries
                .iter()
                .zip(&p.in_span)
                .filter(|(_, &s)| s)
                .map(|(q, _)| q.clone())
                .collect()
        })
        .collect();
    let heatmap = metrics::key_query_heatmap(&trainer.model, &in_span_queries);
    report.heatmap = (0..heatmap.rows())
        .map(|r| heatmap.row(r).to_vec())
        .collect();

    let mut pairs = Vec::new();
    for d in tasks {
        for i in 0..d.test.len() {
            let p = trainer
                .model
                .predict(d.test.input(i), tc.prediction, tc.score_target);
            pairs.push((d.index, p.task));
        }
    }
    report.triggering = metrics::triggering_rates(&pairs, tasks.len());
    Ok(())
}

fn shift_report(
    config: &RunConfig,
    tasks: &[TaskData],
    trainer: &Trainer,
    probes: &[ProbeSnapshot],
) -> ShiftReport {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cap = config.report.shift_points;
    let mut per_task = Vec::new();
    let mut per_task_all = Vec::new();
    for (t, snap) in probes
        .iter()
        .enumerate()
        .take(tasks.len().saturating_sub(1))
    {
        let now: Vec<Vec<f64>> = trainer.probe_indices[t]
            .iter()
            .map(|&i| trainer.model.features(tasks[t].train.input(i)))
            .collect();
        let mut distance = |old: Vec<Vec<f64>>, new: Vec<Vec<f64>>| {
            let n = old.len().min(cap);
            metrics::feature_shift(&old[..n], &new[..n], &mut rng).ok()
        };
        per_task.push(distance(
            snap.features_in_span(&snap.features),
            snap.features_in_span(&now),
        ));
        per_task_all.push(distance(snap.features.clone(), now));
    }
    let cumulative = per_task
        .iter()
        .scan(0.0, |acc, s| {
            *acc += s.unwrap_or(0.0);
            Some(*acc)
        })
        .collect();
    ShiftReport {
        per_task,
        cumulative,
        per_task_all,
    }
}

pub fn memory_report(trainer: &Trainer) -> MemoryReport {
    let basis_bytes = trainer.subspace.memory_bytes();
    let prototype_bytes = trainer.buffer.memory_bytes();
    MemoryReport {
        basis_bytes,
        prototype_bytes,
        total_bytes: basis_bytes + prototype_bytes,
    }
}
