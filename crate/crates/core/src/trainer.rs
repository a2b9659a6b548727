//! Per-task training loop.
//!
//! In KOPPA mode the first task is trained normally. Every later task runs a
//! look-ahead phase, where the loss is evaluated at the keys projected off the
//! stored query subspace while the free keys receive the projected gradient,
//! then fixes the keys to their projection, freezes them and fine-tunes the
//! rest. Closing a task extends the query subspace, captures prototypes from
//! end-of-task features and freezes the task's prompt block.
//!
//! CODA mode trains keys, prompts and masks jointly for the whole task with no
//! constraint; it exists as the baseline for the mismatch diagnostics.

use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::buffer::{Prototype, PrototypeBuffer, Selection};
use crate::linalg::{self, LinalgError, Matrix};
use crate::model::{Gradients, ModelDims, ModelState, ParamKey, PredictionRule, ScoreTarget};
use crate::optimizer::{Adam, AdamConfig, CosineSchedule, OptimError};
use crate::prompt::{AttentionMode, Similarity};
use crate::subspace::SubspaceBasis;
use crate::task::{Split, TaskData};

pub use crate::model::LossWeights;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("task {0} has no training samples")]
    EmptyDataset(usize),
    #[error("look-ahead needs the query subspace of previous tasks")]
    MissingSubspace,
    #[error("operation {op} is not valid in the current phase ({phase:?})")]
    WrongPhase { op: &'static str, phase: Phase },
    #[error("inputs have dimension {got}, model expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("label {label} outside task class range")]
    LabelOutOfRange { label: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainingMode {
    #[default]
    Koppa,
    Coda,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainingMode,
    pub loss: LossWeights,
    pub prediction: PredictionRule,
    pub score_target: ScoreTarget,
    pub similarity: Similarity,
    /// Epochs per task (both phases together for tasks after the first).
    pub epochs: usize,
    pub lookahead_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Energy threshold for the query subspace.
    pub epsilon: f64,
    /// Queries sampled per task to extend the subspace.
    pub query_samples: usize,
    /// Prototypes kept per task.
    pub prototypes: usize,
    pub selection: Selection,
    /// Keep old classification sub-heads fixed while training a new task.
    pub freeze_old_heads: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainingMode::Koppa,
            loss: LossWeights::default(),
            prediction: PredictionRule::TaskScoreAdjusted,
            score_target: ScoreTarget::Probabilities,
            similarity: Similarity::Cosine,
            epochs: 20,
            lookahead_epochs: 10,
            batch_size: 32,
            adam: AdamConfig::default(),
            epsilon: 0.97,
            query_samples: 200,
            prototypes: 100,
            selection: Selection::Uniform,
            freeze_old_heads: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn finetune_epochs(&self) -> usize {
        self.epochs.saturating_sub(self.lookahead_epochs)
    }
}

/// Where the trainer is within the current task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Open,
    LookAhead,
    FineTune,
}

/// Epoch-mean training losses of one task.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskLog {
    pub lookahead: Vec<f64>,
    pub finetune: Vec<f64>,
    /// Standard training (first task, CODA mode).
    pub standard: Vec<f64>,
}

/// Full training state: model, query subspace, prototypes, optimiser.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: ModelState,
    pub subspace: SubspaceBasis,
    pub buffer: PrototypeBuffer,
    /// Basis column count after closing each task; the basis before task `t`
    /// is the leading `basis_history[t - 1]` columns of the current one.
    pub basis_history: Vec<usize>,
    /// Training inputs whose queries were added to the subspace, per task.
    pub probe_indices: Vec<Vec<usize>>,
    adam: Adam<ParamKey>,
    free_keys: Option<Matrix>,
    keys_frozen: bool,
    epoch: usize,
    phase: Phase,
    rng: ChaCha8Rng,
}

fn task_rng(seed: u64, task: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (task as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

impl Trainer {
    pub fn new(config: TrainConfig, dims: ModelDims) -> Self {
        let attention = match config.mode {
            TrainingMode::Koppa => AttentionMode::Koppa,
            TrainingMode::Coda => AttentionMode::Coda,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = ModelState::new(dims, attention, config.similarity, &mut rng);
        Self {
            config,
            subspace: SubspaceBasis::empty(dims.query),
            buffer: PrototypeBuffer::new(),
            basis_history: Vec::new(),
            probe_indices: Vec::new(),
            adam: Adam::new(config.adam),
            free_keys: None,
            keys_frozen: false,
            epoch: 0,
            phase: Phase::Idle,
            rng,
            model,
        }
    }

    /// Reassembles a trainer around restored state (checkpoint loading).
    pub fn from_parts(
        config: TrainConfig,
        model: ModelState,
        subspace: SubspaceBasis,
        buffer: PrototypeBuffer,
        basis_history: Vec<usize>,
    ) -> Self {
        Self {
            config,
            subspace,
            buffer,
            basis_history,
            probe_indices: Vec::new(),
            adam: Adam::new(config.adam),
            free_keys: None,
            keys_frozen: false,
            epoch: 0,
            phase: Phase::Idle,
            rng: task_rng(config.seed, model.tasks()),
            model,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn tasks(&self) -> usize {
        self.model.tasks()
    }

    /// Orthonormal basis of the query subspace as it was before task `t`.
    pub fn basis_before(&self, t: usize) -> Matrix {
        let cols = if t == 0 { 0 } else { self.basis_history[t - 1] };
        self.subspace.basis().leading_columns(cols)
    }

    /// Adds a prompt block and sub-heads for a new task and resets the
    /// optimiser.
    pub fn begin_task(&mut self) -> usize {
        let t = self.model.tasks();
        self.rng = task_rng(self.config.seed, t);
        self.model.expand(&mut self.rng);
        self.adam = Adam::new(self.config.adam);
        self.free_keys = None;
        self.keys_frozen = false;
        self.epoch = 0;
        self.phase = Phase::Open;
        t
    }

    /// Runs the whole procedure for one task, including `begin_task` and
    /// `close_task`.
    pub fn train_task(&mut self, data: &TaskData) -> Result<TaskLog, TrainError> {
        self.check_data(data)?;
        let t = self.begin_task();
        let log = if t == 0 {
            self.train_first_task(data)?
        } else if self.config.mode == TrainingMode::Coda {
            self.train_coda_task(data)?
        } else {
            let lookahead = self.phase1_lookahead(data, self.config.lookahead_epochs)?;
            let finetune = self.phase2_freeze_finetune(data, self.config.finetune_epochs())?;
            self.close_task(data)?;
            TaskLog {
                lookahead,
                finetune,
                standard: Vec::new(),
            }
        };
        Ok(log)
    }

    /// Unconstrained training of the first task followed by `close_task`.
    pub fn train_first_task(&mut self, data: &TaskData) -> Result<TaskLog, TrainError> {
        self.check_data(data)?;
        if self.phase != Phase::Open || self.model.tasks() != 1 {
            return Err(TrainError::WrongPhase {
                op: "train_first_task",
                phase: self.phase,
            });
        }
        let mut standard = Vec::with_capacity(self.config.epochs);
        for _ in 0..self.config.epochs {
            standard.push(self.run_epoch(&data.train, None)?);
        }
        self.close_task(data)?;
        Ok(TaskLog {
            standard,
            ..TaskLog::default()
        })
    }

    /// CODA-style task: keys, prompts and masks trained jointly, no projection.
    pub fn train_coda_task(&mut self, data: &TaskData) -> Result<TaskLog, TrainError> {
        self.check_data(data)?;
        if self.phase != Phase::Open {
            return Err(TrainError::WrongPhase {
                op: "train_coda_task",
                phase: self.phase,
            });
        }
        let mut standard = Vec::with_capacity(self.config.epochs);
        for _ in 0..self.config.epochs {
            standard.push(self.run_epoch(&data.train, None)?);
        }
        self.close_task(data)?;
        Ok(TaskLog {
            standard,
            ..TaskLog::default()
        })
    }

    /// Optimises the loss at `K (I - Q Q^T)` for `epochs` epochs, updating the
    /// free keys `K` with the projected gradient. Returns epoch-mean losses.
    pub fn phase1_lookahead(
        &mut self,
        data: &TaskData,
        epochs: usize,
    ) -> Result<Vec<f64>, TrainError> {
        self.check_data(data)?;
        let t = self.current_task().ok_or(TrainError::WrongPhase {
            op: "phase1_lookahead",
            phase: self.phase,
        })?;
        if !matches!(self.phase, Phase::Open | Phase::LookAhead) {
            return Err(TrainError::WrongPhase {
                op: "phase1_lookahead",
                phase: self.phase,
            });
        }
        if t == 0 || self.basis_history.len() < t {
            return Err(TrainError::MissingSubspace);
        }
        let q = self.basis_before(t);
        if self.free_keys.is_none() {
            self.free_keys = Some(self.model.pool.block(t).keys.clone());
        }
        self.phase = Phase::LookAhead;
        self.sync_projected_keys(t, &q)?;
        let mut losses = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            losses.push(self.run_epoch(&data.train, Some(&q))?);
        }
        Ok(losses)
    }

    /// Fixes the keys to their projection, freezes them and fine-tunes the
    /// prompts and heads for `epochs` epochs.
    pub fn phase2_freeze_finetune(
        &mut self,
        data: &TaskData,
        epochs: usize,
    ) -> Result<Vec<f64>, TrainError> {
        self.check_data(data)?;
        let t = match (self.phase, self.current_task()) {
            (Phase::LookAhead | Phase::FineTune, Some(t)) => t,
            _ => {
                return Err(TrainError::WrongPhase {
                    op: "phase2_freeze_finetune",
                    phase: self.phase,
                })
            }
        };
        if self.phase == Phase::LookAhead {
            let q = self.basis_before(t);
            self.sync_projected_keys(t, &q)?;
            self.free_keys = None;
            self.keys_frozen = true;
            self.phase = Phase::FineTune;
        }
        let mut losses = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            losses.push(self.run_epoch(&data.train, None)?);
        }
        Ok(losses)
    }

    /// Extends the query subspace, stores prototypes of end-of-task features
    /// and freezes the task's prompt block.
    pub fn close_task(&mut self, data: &TaskData) -> Result<(), TrainError> {
        self.check_data(data)?;
        let t = self.current_task().ok_or(TrainError::WrongPhase {
            op: "close_task",
            phase: self.phase,
        })?;
        let train = &data.train;
        let n = train.len();

        let take = self.config.query_samples.min(n);
        let mut picked = index::sample(&mut self.rng, n, take).into_vec();
        picked.sort_unstable();
        let queries: Vec<Vec<f64>> = picked
            .iter()
            .map(|&i| self.model.encoder.query(train.input(i)))
            .collect();
        let query_matrix = Matrix::from_columns(self.model.dims.query, &queries)?;
        self.subspace = match self.subspace.update(&query_matrix, self.config.epsilon) {
            Ok(s) => s,
            // every sampled query was the zero vector
            Err(LinalgError::ZeroMatrix) => SubspaceBasis::from_parts(
                self.subspace.basis().clone(),
                self.subspace.task_count() + 1,
            )?,
            Err(e) => return Err(e.into()),
        };
        self.basis_history.push(self.subspace.columns());
        self.probe_indices.push(picked);

        if self.config.loss.ova != 0.0 {
            let features: Vec<Prototype> = (0..n)
                .map(|i| Prototype {
                    feature: self.model.features(train.input(i)),
                    label: train.labels[i],
                })
                .collect();
            self.buffer.capture(
                &features,
                self.config.prototypes,
                self.config.selection,
                &mut self.rng,
            );
        } else {
            self.buffer.push_task(Vec::new());
        }

        self.model.pool.freeze(t);
        self.free_keys = None;
        self.phase = Phase::Idle;
        Ok(())
    }

    /// Mean training loss over a split without updating anything.
    pub fn evaluate_loss(&self, split: &Split) -> f64 {
        let prototypes = self.buffer.replay_all();
        let inputs: Vec<&[f64]> = (0..split.len()).map(|i| split.input(i)).collect();
        self.model
            .total_loss(&inputs, &split.labels, &prototypes, self.config.loss)
            .0
    }

    fn current_task(&self) -> Option<usize> {
        match self.phase {
            Phase::Idle => None,
            _ => self.model.tasks().checked_sub(1),
        }
    }

    fn check_data(&self, data: &TaskData) -> Result<(), TrainError> {
        if data.train.is_empty() {
            return Err(TrainError::EmptyDataset(data.index));
        }
        if data.input_dim() != self.model.dims.input {
            return Err(TrainError::InputDim {
                expected: self.model.dims.input,
                got: data.input_dim(),
            });
        }
        if let Some(&label) = data.train.labels.iter().find(|l| !data.classes.contains(l)) {
            return Err(TrainError::LabelOutOfRange { label });
        }
        Ok(())
    }

    fn sync_projected_keys(&mut self, t: usize, q: &Matrix) -> Result<(), TrainError> {
        let free = self.free_keys.as_ref().expect("look-ahead keeps free keys");
        let projected = linalg::project_onto_complement(free, q)?;
        let block = self
            .model
            .pool
            .block_mut(t)
            .expect("current block is not frozen");
        block.keys = projected;
        Ok(())
    }

    /// One pass over the split in seeded random order. `projection` is set
    /// during look-ahead.
    fn run_epoch(&mut self, split: &Split, projection: Option<&Matrix>) -> Result<f64, TrainError> {
        let t = self.model.tasks() - 1;
        let schedule = CosineSchedule {
            base: self.config.adam.lr,
            total_epochs: self.config.epochs,
        };
        let lr = schedule.lr(self.epoch);
        let prototypes = self.buffer.replay_all();
        let mut order: Vec<usize> = (0..split.len()).collect();
        order.shuffle(&mut self.rng);

        let mut total = 0.0;
        for chunk in order.chunks(self.config.batch_size.max(1)) {
            let inputs: Vec<&[f64]> = chunk.iter().map(|&i| split.input(i)).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| split.labels[i]).collect();
            let (loss, grads) =
                self.model
                    .total_loss(&inputs, &labels, &prototypes, self.config.loss);
            total += loss * chunk.len() as f64;
            self.apply_gradients(t, lr, grads, projection)?;
            if let Some(q) = projection {
                self.sync_projected_keys(t, q)?;
            }
        }
        self.epoch += 1;
        Ok(total / split.len() as f64)
    }

    fn apply_gradients(
        &mut self,
        t: usize,
        lr: f64,
        mut grads: Gradients,
        projection: Option<&Matrix>,
    ) -> Result<(), TrainError> {
        if let Some((key, index)) = grads
            .tensors
            .iter()
            .find_map(|(k, v)| v.iter().position(|x| !x.is_finite()).map(|i| (*k, i)))
        {
            return Err(OptimError::NonFiniteGradient {
                tensor: alloc::format!("{key:?}"),
                index,
            }
            .into());
        }
        let mut keys: Vec<ParamKey> = Vec::new();
        if !self.keys_frozen {
            keys.push(ParamKey::Keys(t));
        }
        keys.push(ParamKey::Prompts(t));
        if self.model.attention == AttentionMode::Coda {
            keys.push(ParamKey::Masks(t));
        }
        let head_tasks = if self.config.freeze_old_heads {
            t..t + 1
        } else {
            0..t + 1
        };
        for h in head_tasks {
            keys.extend([ParamKey::CeWeights(h), ParamKey::CeBias(h)]);
        }
        for h in 0..=t {
            keys.extend([ParamKey::OvaWeights(h), ParamKey::OvaBias(h)]);
        }

        self.adam.begin_step();
        for key in keys {
            let Some(grad) = grads.tensors.remove(&key) else {
                continue;
            };
            match (key, projection, self.free_keys.as_mut()) {
                (ParamKey::Keys(_), Some(q), Some(free)) => {
                    // d/dK of L(K (I - QQ^T)) = dL/dK_perp (I - QQ^T)
                    let g = Matrix::new(free.rows(), free.cols(), grad)?;
                    let g = linalg::project_onto_complement(&g, q)?;
                    self.adam
                        .apply(key, lr, free.as_mut_slice(), g.as_slice())?;
                }
                _ => {
                    if let Some(params) = self.model.param_mut(key) {
                        self.adam.apply(key, lr, params, &grad)?;
                    }
                }
            }
        }
        Ok(())
    }
}
