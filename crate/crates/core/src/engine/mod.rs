//! Sequential training over a task order: freeze per task, SGD, optional EMA
//! shadow, checkpoint and evaluate after every task.

mod eval;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{AccuracyMatrix, PredictionRecord};
use crate::model::{Checkpoint, CheckpointMeta, ModelConfig, TensorMap, ToyModel};
use crate::numerics::Rng;
use crate::pema::{
    BetaStats, EmaPolicy, EmaState, FisherAccumulator, DEFAULT_EPS_DELTA, DEFAULT_LAMBDA,
};
use crate::tasks::{TaskOrder, TaskSpec};

pub use eval::{evaluate, ConstantPredictor, EvalResult, Predictor, RuleOracle};
pub use store::{load_run, RunSnapshot};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Cap on optimizer steps per task.
    pub max_steps: usize,
    /// Passes over each task's training split, before the step cap.
    pub epochs: usize,
    /// Seeds data shuffling. Model initialization uses `model.init_seed`.
    pub seed: u64,
    pub model: ModelConfig,
    pub ema: EmaPolicy,
    pub lambda: f64,
    pub eps_delta: f64,
    /// Start each task's trainable tensors from their shadow values rather
    /// than from where the previous task's live weights ended.
    pub restart_from_shadow: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 16,
            max_steps: 3001,
            epochs: 1,
            seed: 0,
            model: ModelConfig::default(),
            ema: EmaPolicy::Pema,
            lambda: DEFAULT_LAMBDA,
            eps_delta: DEFAULT_EPS_DELTA,
            restart_from_shadow: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.max_steps == 0 || self.epochs == 0 {
            return Err(Error::config("batch_size, max_steps and epochs must be positive"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.eps_delta >= 0.0) {
            return Err(Error::config("eps_delta must be non-negative"));
        }
        self.ema.validate()?;
        self.model.validate()
    }

    /// Same config with both the shuffle seed and the init seed set.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.model.init_seed = seed;
        c
    }
}

/// The serializable part of a stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub task_id: String,
    /// Accuracy on every task seen so far.
    pub accuracies: BTreeMap<String, f64>,
    pub steps: usize,
    pub mean_loss: f64,
    /// Mean PEMA weight over the stage, when PEMA is active.
    pub beta_mean: Option<f64>,
    /// Checkpoint path relative to the run directory.
    pub checkpoint: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageResult {
    pub summary: StageSummary,
    pub predictions: BTreeMap<String, Vec<PredictionRecord>>,
    pub checkpoint: Checkpoint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub order: TaskOrder,
    /// Task descriptions, without example data.
    pub tasks: Vec<TaskSpec>,
    pub stages: Vec<StageResult>,
    pub matrix: AccuracyMatrix,
}

impl RunRecord {
    pub fn is_complete(&self) -> bool {
        self.stages.len() == self.order.ids.len()
    }

    pub fn total_steps(&self) -> usize {
        self.stages.iter().map(|s| s.summary.steps).sum()
    }

    pub fn stage_of(&self, task_id: &str) -> Result<&StageResult> {
        self.stages
            .iter()
            .find(|s| s.summary.task_id == task_id)
            .ok_or_else(|| Error::Lookup(format!("no completed stage trained on {task_id:?}")))
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Persist to (and resume from) this run directory.
    pub dir: Option<PathBuf>,
    /// Stop after this many completed stages, as if interrupted.
    pub stop_after: Option<usize>,
}

pub(crate) fn matrix_of(order: &TaskOrder, stages: &[StageResult]) -> Result<AccuracyMatrix> {
    let rows = stages
        .iter()
        .enumerate()
        .map(|(j, s)| {
            order.ids[..=j]
                .iter()
                .map(|id| {
                    s.summary
                        .accuracies
                        .get(id)
                        .copied()
                        .ok_or_else(|| Error::validation(format!("stage {j} lacks accuracy for {id}")))
                })
                .collect()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    AccuracyMatrix::new(order.ids.clone(), rows)
}

fn without_data(t: &TaskSpec) -> TaskSpec {
    TaskSpec {
        train: Vec::new(),
        test: Vec::new(),
        ..t.clone()
    }
}

fn check_order(roster: &[TaskSpec], order: &TaskOrder) -> Result<Vec<usize>> {
    let ids: BTreeSet<&str> = roster.iter().map(|t| t.id.as_str()).collect();
    if ids.len() != roster.len() {
        return Err(Error::validation("roster has duplicate task ids"));
    }
    let ordered: BTreeSet<&str> = order.ids.iter().map(String::as_str).collect();
    if ordered != ids || order.ids.len() != roster.len() {
        return Err(Error::validation("task order is not a permutation of the roster"));
    }
    order
        .ids
        .iter()
        .map(|id| {
            let i = roster.iter().position(|t| &t.id == id).expect("checked");
            if roster[i].train.is_empty() || roster[i].test.is_empty() {
                return Err(Error::validation(format!("task {id} has no examples loaded")));
            }
            Ok(i)
        })
        .collect()
}

struct TaskStats {
    steps: usize,
    mean_loss: f64,
    beta: Option<BetaStats>,
}

fn non_finite(task: &TaskSpec, step: usize, tensor: impl Into<String>) -> Error {
    Error::NonFinite {
        task: task.id.clone(),
        step,
        tensor: tensor.into(),
    }
}

fn train_task(
    model: &mut ToyModel,
    mut ema: Option<&mut EmaState>,
    task: &TaskSpec,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TaskStats> {
    let n = task.train.len();
    let per_epoch = n.div_ceil(cfg.batch_size);
    let steps = cfg.max_steps.min(cfg.epochs.saturating_mul(per_epoch));
    let pema = matches!(cfg.ema, EmaPolicy::Pema);
    let mut order = Vec::new();
    let mut loss_sum = 0.0;
    let mut beta = pema.then(BetaStats::default);

    for step in 0..steps {
        let k = step % per_epoch;
        if k == 0 {
            order = rng.permutation(n);
        }
        let batch = &order[k * cfg.batch_size..((k + 1) * cfg.batch_size).min(n)];
        let scale = 1.0 / batch.len() as f64;
        let mut grad = TensorMap::new();
        let mut fisher = FisherAccumulator::new();
        let mut batch_loss = 0.0;
        for &i in batch {
            let ex = &task.train[i];
            let (loss, g) = model.loss_and_grads(&ex.inputs, &task.signature, &ex.target)?;
            if !loss.is_finite() {
                let culprit = g.first_non_finite().map_or("loss".to_string(), |t| t.to_string());
                return Err(non_finite(task, step, culprit));
            }
            batch_loss += loss * scale;
            grad.add_scaled(&g, scale)?;
            if pema {
                fisher.add_sample(&g)?;
            }
        }
        if let Some(t) = grad.first_non_finite() {
            return Err(non_finite(task, step, t.to_string()));
        }
        for (name, g) in grad.iter() {
            let theta = model.tensor_mut(name).expect("gradient of a model tensor");
            theta.axpy(-cfg.lr, g)?;
            if !theta.is_finite() {
                return Err(non_finite(task, step, name.to_string()));
            }
        }
        loss_sum += batch_loss;
        if let Some(state) = ema.as_deref_mut() {
            match cfg.ema {
                EmaPolicy::Pema => {
                    let f = fisher.finalize()?;
                    let stats = state.step_pema(model, &grad, &f)?;
                    beta.as_mut().expect("pema").merge(&stats);
                }
                EmaPolicy::Stable { weight } => state.step_stable(model, weight)?,
                EmaPolicy::Off => {}
            }
        }
    }
    Ok(TaskStats {
        steps,
        mean_loss: if steps == 0 { 0.0 } else { loss_sum / steps as f64 },
        beta,
    })
}

/// Trains on `order`, one stage per task, and evaluates every seen task after
/// each stage. With `opts.dir` set, completed stages are persisted and an
/// existing directory for the same configuration is resumed.
pub fn run_sequence(
    cfg: &TrainConfig,
    roster: &[TaskSpec],
    order: &TaskOrder,
    opts: &RunOptions,
) -> Result<RunRecord> {
    cfg.validate()?;
    let indices = check_order(roster, order)?;
    let snapshot = RunSnapshot {
        train: cfg.clone(),
        order: order.clone(),
        tasks: roster.iter().map(without_data).collect(),
    };
    let (dir, mut stages) = match &opts.dir {
        Some(path) => {
            let (d, s) = store::RunDir::open(path, &snapshot)?;
            (Some(d), s)
        }
        None => (None, Vec::new()),
    };

    let (mut model, mut ema) = match stages.last() {
        Some(last) => {
            let ckpt = &last.checkpoint;
            let ema = match (&ckpt.ema, cfg.ema.is_off()) {
                (Some(shadow), false) => Some(EmaState::from_shadow(shadow.clone(), cfg.lambda, cfg.eps_delta)?),
                (None, true) => None,
                _ => return Err(Error::validation("checkpoint EMA state does not match the EMA policy")),
            };
            (ckpt.model.clone(), ema)
        }
        None => {
            let model = ToyModel::new(cfg.model.clone())?;
            let ema = if cfg.ema.is_off() {
                None
            } else {
                Some(EmaState::new(&model, cfg.lambda, cfg.eps_delta)?)
            };
            (model, ema)
        }
    };

    let root = Rng::new(cfg.seed).fork_named("train");
    let stop = opts.stop_after.unwrap_or(usize::MAX).min(indices.len());
    for (j, &ti) in indices.iter().enumerate().take(stop).skip(stages.len()) {
        let started = Instant::now();
        let task = &roster[ti];
        model.apply_mask(&cfg.model.variant.freeze_mask(&task.signature)?)?;
        if let Some(state) = ema.as_mut() {
            state.begin_task();
            if cfg.restart_from_shadow {
                // frozen tensors keep their live values; they must not move
                for (name, v) in state.shadow.iter() {
                    if model.is_trainable(name) {
                        model.set_tensor(name, v.clone())?;
                    }
                }
            }
        }
        let mut rng = root.fork(j as u64);
        let stats = train_task(&mut model, ema.as_mut(), task, cfg, &mut rng)?;

        let checkpoint = Checkpoint {
            meta: CheckpointMeta {
                task_id: task.id.clone(),
                stage: j,
            },
            model: model.clone(),
            ema: ema.as_ref().map(|s| s.shadow.clone()),
        };
        let eval_model = checkpoint.eval_model()?;
        let mut accuracies = BTreeMap::new();
        let mut predictions = BTreeMap::new();
        for &si in &indices[..=j] {
            let seen = &roster[si];
            let r = evaluate(&eval_model, seen)?;
            accuracies.insert(seen.id.clone(), r.accuracy);
            predictions.insert(seen.id.clone(), r.predictions);
        }
        stages.push(StageResult {
            summary: StageSummary {
                stage: j,
                task_id: task.id.clone(),
                accuracies,
                steps: stats.steps,
                mean_loss: stats.mean_loss,
                beta_mean: stats.beta.map(|b| b.mean()),
                checkpoint: store::checkpoint_rel(j),
            },
            predictions,
            checkpoint,
        });
        if let Some(d) = &dir {
            let matrix = matrix_of(order, &stages)?;
            d.commit(stages.last().expect("just pushed"), &matrix, started.elapsed().as_secs_f64())?;
        }
    }

    let matrix = matrix_of(order, &stages)?;
    Ok(RunRecord {
        config: cfg.clone(),
        order: order.clone(),
        tasks: snapshot.tasks,
        stages,
        matrix,
    })
}

/// Accuracy on `eval_on` of the checkpoint saved after training `trained_on`.
pub fn cross_eval(run: &RunRecord, trained_on: &str, eval_on: &str, tasks: &[TaskSpec]) -> Result<f64> {
    let stage = run.stage_of(trained_on)?;
    let task = tasks
        .iter()
        .find(|t| t.id == eval_on)
        .ok_or_else(|| Error::Lookup(format!("unknown task {eval_on:?}")))?;
    Ok(evaluate(&stage.checkpoint.eval_model()?, task)?.accuracy)
}
