use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gamlp::{Gamlp, Stacks};
use super::TrainConfig;
use crate::data::Splits;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{argmax_rows, cross_entropy, Optimizer, Parameterized};

/// Rows per evaluation forward pass.
const EVAL_CHUNK: usize = 4096;

/// What [`fit`] trains on.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub stacks: Stacks<'a>,
    /// Class of every node, `None` when unlabeled.
    pub targets: &'a [Option<usize>],
    pub splits: &'a Splits,
    pub num_classes: usize,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub best_val_acc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub model: Gamlp,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Optimizer state at the end of training.
    pub optimizer: Optimizer,
}

impl FitOutcome {
    /// The log as JSON lines.
    pub fn log_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.log {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

fn targets_of(targets: &[Option<usize>], rows: &[usize]) -> Result<Vec<usize>> {
    rows.iter()
        .map(|&i| {
            targets
                .get(i)
                .copied()
                .flatten()
                .ok_or_else(|| Error::Inconsistent(format!("node {i} has no label")))
        })
        .collect()
}

/// Evaluation-mode logits for `rows`, computed in chunks.
pub fn logits(model: &Gamlp, stacks: &Stacks<'_>, rows: &[usize]) -> Result<Matrix> {
    let mut out = Matrix::zeros(rows.len(), model.num_classes());
    for (c, chunk) in rows.chunks(EVAL_CHUNK).enumerate() {
        let l = model.logits(&stacks.gather(chunk))?;
        for r in 0..chunk.len() {
            out.row_mut(c * EVAL_CHUNK + r).copy_from_slice(l.row(r));
        }
    }
    Ok(out)
}

/// Predicted class per row of `rows`; ties go to the lowest class id.
pub fn predict(model: &Gamlp, stacks: &Stacks<'_>, rows: &[usize]) -> Result<Vec<usize>> {
    Ok(argmax_rows(&logits(model, stacks, rows)?))
}

/// Fraction of `split` whose prediction matches the truth. `pred[i]` is the
/// prediction for `split[i]`.
pub fn evaluate_accuracy(pred: &[usize], truth: &[Option<usize>], split: &[usize]) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::invalid("accuracy over an empty split"));
    }
    if pred.len() != split.len() {
        return Err(Error::shape(format!(
            "{} predictions for a split of {}",
            pred.len(),
            split.len()
        )));
    }
    let truth = targets_of(truth, split)?;
    let correct = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / split.len() as f64)
}

/// Trains a fresh model with early stopping on validation accuracy.
///
/// Each epoch visits every training node once, in one batch or in shuffled
/// batches of `batch_size`. Training stops after `patience` epochs without a
/// strict improvement in validation accuracy (`patience = 0` never stops
/// early) and the best-validation parameters are returned.
pub fn fit(data: &TrainingData<'_>, config: &TrainConfig) -> Result<FitOutcome> {
    config.validate()?;
    let train = &data.splits.train;
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if data.splits.val.is_empty() {
        return Err(Error::invalid("validation split is empty; model selection needs it"));
    }
    let n = data.stacks.num_nodes();
    if data.targets.len() != n {
        return Err(Error::shape(format!("{} targets for {n} nodes", data.targets.len())));
    }
    if config.batch_size > n {
        return Err(Error::invalid(format!(
            "batch size {} exceeds {n} nodes",
            config.batch_size
        )));
    }
    if data.stacks.features.len() != config.hops + 1 {
        return Err(Error::shape(format!(
            "feature stack has {} steps but the config asks for {}",
            data.stacks.features.len().saturating_sub(1),
            config.hops
        )));
    }
    let stacks = if config.label_branch() {
        match data.stacks.labels {
            Some(ls) if ls.len() == config.label_hops + 1 => data.stacks,
            Some(ls) => {
                return Err(Error::shape(format!(
                    "label stack has {} steps but the config asks for {}",
                    ls.len() - 1,
                    config.label_hops
                )))
            }
            None => return Err(Error::invalid("label branch enabled but no label stack given")),
        }
    } else {
        Stacks {
            labels: None,
            ..data.stacks
        }
    };
    let train_targets = targets_of(data.targets, train)?;
    targets_of(data.targets, &data.splits.val)?;

    let mut model = Gamlp::new(config, stacks.features[0].cols(), data.num_classes)?;
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let batch = if config.batch_size == 0 {
        train.len()
    } else {
        config.batch_size
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = model.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut log = Vec::new();

    for epoch in 1..=config.epochs {
        if batch < train.len() {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let rows: Vec<usize> = chunk.iter().map(|&p| train[p]).collect();
            let targets: Vec<usize> = chunk.iter().map(|&p| train_targets[p]).collect();
            let inputs = stacks.gather(&rows);
            model.zero_grad();
            let (out, cache) = model.forward(&inputs, Some(&mut rng))?;
            let all: Vec<usize> = (0..rows.len()).collect();
            let (loss, grad) = cross_entropy(&out, &targets, &all)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("training loss became {loss}"),
                });
            }
            model.backward(&cache, &grad)?;
            if let Some(p) = model.params().iter().find(|p| !p.grad.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("gradient of {} is not finite", p.name),
                });
            }
            optimizer.step(&mut model.params_mut());
            total += loss * rows.len() as f64;
        }
        let train_loss = total / train.len() as f64;

        let pred = predict(&model, &stacks, &data.splits.val)?;
        let val_acc = evaluate_accuracy(&pred, data.targets, &data.splits.val)?;
        if val_acc > best_val {
            best_val = val_acc;
            best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_acc,
            best_val_acc: best_val,
            lr: config.optimizer.lr,
        });
        if config.patience > 0 && stale >= config.patience {
            break;
        }
    }
    Ok(FitOutcome {
        model: best,
        log,
        best_epoch,
        best_val_acc: best_val,
        optimizer,
    })
}
