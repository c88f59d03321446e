use crate::error::{Error, Result};
use crate::metrics::PredictionRecord;
use crate::model::ToyModel;
use crate::tasks::{Example, TaskSpec};

/// Anything that maps a task example to output tokens.
pub trait Predictor {
    fn predict(&self, example: &Example, task: &TaskSpec) -> Result<Vec<u32>>;
}

impl Predictor for ToyModel {
    fn predict(&self, example: &Example, task: &TaskSpec) -> Result<Vec<u32>> {
        if self.vocab() != task.vocab() {
            return Err(Error::validation(format!(
                "model vocabulary ({} per modality) does not match task {} ({})",
                self.vocab().per_modality,
                task.id,
                task.vocab().per_modality
            )));
        }
        let len = task.format().length;
        if len > self.config().max_output_len {
            return Err(Error::validation(format!(
                "task {} needs {len} output positions, model has {}",
                task.id,
                self.config().max_output_len
            )));
        }
        // may run past the task format; the error classifier needs to see that
        ToyModel::predict(self, &example.inputs, &task.signature)
    }
}

/// The task's own hidden rule.
#[derive(Clone, Copy, Debug, Default)]
pub struct RuleOracle;

impl Predictor for RuleOracle {
    fn predict(&self, example: &Example, task: &TaskSpec) -> Result<Vec<u32>> {
        task.oracle(&example.inputs)
            .ok_or_else(|| Error::validation(format!("rule of task {} undefined on {}", task.id, example.id)))
    }
}

/// Emits the same tokens for every input.
#[derive(Clone, Debug)]
pub struct ConstantPredictor(pub Vec<u32>);

impl Predictor for ConstantPredictor {
    fn predict(&self, _: &Example, _: &TaskSpec) -> Result<Vec<u32>> {
        Ok(self.0.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    /// Percent of test examples reproduced exactly.
    pub accuracy: f64,
    pub predictions: Vec<PredictionRecord>,
}

/// Exact-match accuracy on the task's test split.
pub fn evaluate(predictor: &dyn Predictor, task: &TaskSpec) -> Result<EvalResult> {
    if task.test.is_empty() {
        return Err(Error::validation(format!("task {} has no test examples loaded", task.id)));
    }
    let format = task.format();
    let mut correct = 0usize;
    let mut predictions = Vec::with_capacity(task.test.len());
    for ex in &task.test {
        let prediction = predictor.predict(ex, task)?;
        if prediction == ex.target {
            correct += 1;
        }
        predictions.push(PredictionRecord {
            id: ex.id.clone(),
            prediction,
            target: ex.target.clone(),
            format: Some(format),
        });
    }
    Ok(EvalResult {
        accuracy: 100.0 * correct as f64 / task.test.len() as f64,
        predictions,
    })
}
