//! Dataset to stacks to trained model: the glue shared by the experiment
//! drivers and the command line.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{add_self_loops, normalize, PropagationOperator};
use crate::matrix::Matrix;
use crate::model::{evaluate_accuracy, fit, predict, FitOutcome, Gamlp, LabelInput, Stacks, TrainConfig, TrainingData};
use crate::propagation::{
    apply_last_residual, apply_uniform_residual, build_label_seed, input_fingerprint, propagate_features,
    propagate_labels, remove_self_labels, FeatureStack, Fingerprint, LabelStack,
};

/// Precomputed inputs for one dataset and config.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub features: FeatureStack,
    /// Present when the config uses the label branch; smoothed when the
    /// config reads smoothed labels.
    pub labels: Option<LabelStack>,
}

impl Prepared {
    pub fn stacks(&self, config: &TrainConfig) -> Result<Stacks<'_>> {
        Stacks::new(&self.features, self.labels.as_ref(), config.label_input)
    }

    /// Cuts both stacks down to the depths in `config` and re-applies the
    /// residual, so that one deep propagation serves every shallower run.
    pub fn truncated(&self, config: &TrainConfig) -> Result<Prepared> {
        let labels = match (&self.labels, config.label_branch()) {
            (Some(ls), true) => Some(smooth(&ls.truncated(config.label_hops)?, config)?),
            (None, true) => return Err(Error::invalid("config uses labels but no label stack was prepared")),
            (_, false) => None,
        };
        Ok(Prepared {
            features: self.features.truncated(config.hops)?,
            labels,
        })
    }
}

/// Each row divided by its L1 norm; all-zero rows stay zero.
pub fn row_normalize(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm: f64 = row.iter().map(|v| v.abs()).sum();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

fn smooth(raw: &LabelStack, config: &TrainConfig) -> Result<LabelStack> {
    match config.label_input {
        LabelInput::Uniform => apply_uniform_residual(raw, config.residual),
        _ => apply_last_residual(raw, config.residual),
    }
}

fn operators(ds: &Dataset, config: &TrainConfig) -> Result<(PropagationOperator, PropagationOperator)> {
    let g = add_self_loops(&ds.graph);
    let op = normalize(&g, config.r_mode)?;
    let label_op = if config.label_mode() == config.r_mode {
        op.clone()
    } else {
        normalize(&g, config.label_mode())?
    };
    Ok((op, label_op))
}

fn feature_seed(ds: &Dataset, config: &TrainConfig) -> Matrix {
    if config.row_normalize_features {
        row_normalize(&ds.features)
    } else {
        ds.features.clone()
    }
}

/// Propagates features and, if used, labels as `config` describes.
pub fn prepare(ds: &Dataset, config: &TrainConfig) -> Result<Prepared> {
    config.validate()?;
    ds.validate()?;
    let (op, label_op) = operators(ds, config)?;
    let features = propagate_features(&op, &feature_seed(ds, config), config.hops)?;
    let labels = if config.label_branch() {
        let y0 = build_label_seed(&ds.labels, &ds.splits.train, ds.num_classes)?;
        let mut ls = propagate_labels(&label_op, &y0, config.label_hops)?;
        if config.zero_train_self_label {
            remove_self_labels(&label_op, &mut ls, &ds.labels, &ds.splits.train)?;
        }
        Some(smooth(&ls, config)?)
    } else {
        None
    };
    Ok(Prepared { features, labels })
}

/// Fingerprints [`prepare`] would stamp on its stacks, without propagating.
pub fn expected_fingerprints(ds: &Dataset, config: &TrainConfig) -> Result<(Fingerprint, Option<Fingerprint>)> {
    let (op, label_op) = operators(ds, config)?;
    let features = input_fingerprint("features", &op, &feature_seed(ds, config), config.hops);
    let labels = if config.label_branch() {
        let y0 = build_label_seed(&ds.labels, &ds.splits.train, ds.num_classes)?;
        let mut fp = input_fingerprint("labels", &label_op, &y0, config.label_hops);
        if config.zero_train_self_label {
            fp = fp.self_removed();
        }
        Some(match config.label_input {
            LabelInput::Uniform => fp.uniform_smoothed(config.residual),
            _ => fp.smoothed(config.residual),
        })
    } else {
        None
    };
    Ok((features, labels))
}

/// Trains on `ds` with stacks already prepared for `config`.
pub fn train(ds: &Dataset, prepared: &Prepared, config: &TrainConfig) -> Result<FitOutcome> {
    let data = TrainingData {
        stacks: prepared.stacks(config)?,
        targets: &ds.labels,
        splits: &ds.splits,
        num_classes: ds.num_classes,
    };
    fit(&data, config)
}

/// Accuracy on each of train, val and test; `None` for empty splits.
pub fn split_accuracies(
    model: &Gamlp,
    ds: &Dataset,
    prepared: &Prepared,
    config: &TrainConfig,
) -> Result<[Option<f64>; 3]> {
    let stacks = prepared.stacks(config)?;
    let mut out = [None; 3];
    for (slot, (_, ids)) in out.iter_mut().zip(ds.splits.named()) {
        if !ids.is_empty() {
            let pred = predict(model, &stacks, ids)?;
            *slot = Some(evaluate_accuracy(&pred, &ds.labels, ids)?);
        }
    }
    Ok(out)
}
