use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{JkAttention, JkCache, JkShape, RecursiveAttention, RecursiveCache};
use super::baseline::{baseline_combine, BaselineMode};
use super::{CombinerKind, LabelInput, TrainConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{dropout, Activation, Mlp, MlpCache, Param, Parameterized};
use crate::propagation::{FeatureStack, LabelStack};

/// Merges one branch's stack into a single matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Combiner {
    Recursive(RecursiveAttention),
    Jk(JkAttention),
    Baseline(BaselineMode),
}

#[derive(Debug, Clone)]
enum CombinerCache {
    Recursive(RecursiveCache),
    Jk(JkCache),
    Baseline,
}

impl Combiner {
    fn new(name: &str, config: &TrainConfig, dim: usize, steps: usize, noise_seed: u64, rng: &mut ChaCha8Rng) -> Self {
        match config.combiner {
            CombinerKind::Recursive => Combiner::Recursive(RecursiveAttention::new(name, dim, config.activation)),
            CombinerKind::Jk => Combiner::Jk(JkAttention::new(
                name,
                JkShape {
                    dim,
                    steps,
                    hidden: config.hidden,
                    jk_layers: config.jk_layers,
                    dropout: config.dropout,
                },
                config.reference,
                config.activation,
                noise_seed,
                rng,
            )),
            CombinerKind::Baseline(mode) => Combiner::Baseline(mode),
        }
    }

    fn output_dim(&self, dim: usize, steps: usize) -> usize {
        match self {
            Combiner::Baseline(mode) => mode.output_dim(dim, steps),
            _ => dim,
        }
    }

    /// `(H, weights, cache)`; weights are `None` for baselines.
    fn forward(
        &self,
        xs: &[Matrix],
        rows: &[usize],
        attention_dropout: f64,
        rng: Option<&mut (dyn RngCore + '_)>,
    ) -> Result<(Matrix, Option<Matrix>, CombinerCache)> {
        Ok(match self {
            Combiner::Recursive(att) => {
                let (h, w, c) = att.forward(xs, attention_dropout, rng)?;
                (h, Some(w), CombinerCache::Recursive(c))
            }
            Combiner::Jk(att) => {
                let (h, w, c) = att.forward(xs, rows, attention_dropout, rng)?;
                (h, Some(w), CombinerCache::Jk(c))
            }
            Combiner::Baseline(mode) => (baseline_combine(xs, *mode)?, None, CombinerCache::Baseline),
        })
    }

    fn backward(&mut self, xs: &[Matrix], cache: &CombinerCache, dh: &Matrix) -> Result<()> {
        match (self, cache) {
            (Combiner::Recursive(att), CombinerCache::Recursive(c)) => att.backward(xs, c, dh),
            (Combiner::Jk(att), CombinerCache::Jk(c)) => att.backward(xs, c, dh),
            (Combiner::Baseline(_), CombinerCache::Baseline) => Ok(()),
            _ => Err(Error::invalid("combiner cache does not match the combiner")),
        }
    }
}

impl Parameterized for Combiner {
    fn params(&self) -> Vec<&Param> {
        match self {
            Combiner::Recursive(a) => a.params(),
            Combiner::Jk(a) => a.params(),
            Combiner::Baseline(_) => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Combiner::Recursive(a) => a.params_mut(),
            Combiner::Jk(a) => a.params_mut(),
            Combiner::Baseline(_) => Vec::new(),
        }
    }
}

/// Full stacks the model reads rows from.
#[derive(Debug, Clone, Copy)]
pub struct Stacks<'a> {
    pub features: &'a [Matrix],
    pub labels: Option<&'a [Matrix]>,
}

impl<'a> Stacks<'a> {
    /// Picks smoothed or raw label matrices per `input`.
    pub fn new(features: &'a FeatureStack, labels: Option<&'a LabelStack>, input: LabelInput) -> Result<Self> {
        let labels = match labels {
            None => None,
            Some(stack) => Some(match input {
                LabelInput::Raw => stack.mats.as_slice(),
                LabelInput::Smoothed | LabelInput::Uniform if stack.is_smoothed() => stack.smoothed.as_slice(),
                LabelInput::Smoothed | LabelInput::Uniform => {
                    return Err(Error::invalid("label stack has not been smoothed"));
                }
            }),
        };
        Ok(Self {
            features: &features.mats,
            labels,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.first().map_or(0, Matrix::rows)
    }

    /// The model inputs for `rows`, in that order.
    pub fn gather(&self, rows: &[usize]) -> ModelInputs {
        ModelInputs {
            features: self.features.iter().map(|m| m.gather_rows(rows)).collect(),
            labels: self.labels.map(|ls| ls.iter().map(|m| m.gather_rows(rows)).collect()),
            rows: rows.to_vec(),
        }
    }
}

/// Stack rows for one batch. Nodes are independent once propagated, so any
/// subset of rows is a valid input.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInputs {
    pub features: Vec<Matrix>,
    pub labels: Option<Vec<Matrix>>,
    /// Node id of every row.
    pub rows: Vec<usize>,
}

/// Two branches: `logits = MLP_P(H_X) + β · MLP_Q(H_Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gamlp {
    pub feature_combiner: Combiner,
    pub feature_mlp: Mlp,
    pub label_combiner: Option<Combiner>,
    pub label_mlp: Option<Mlp>,
    pub beta: f64,
    pub input_dropout: f64,
    pub attention_dropout: f64,
    hops: usize,
    label_hops: usize,
}

#[derive(Debug, Clone)]
pub struct GamlpCache {
    xs: Vec<Matrix>,
    feature: CombinerCache,
    feature_mlp: MlpCache,
    label: Option<(CombinerCache, MlpCache)>,
    ys: Option<Vec<Matrix>>,
}

fn classifier_dims(input: usize, hidden: usize, layers: usize, classes: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend(std::iter::repeat_n(hidden, layers - 1));
    dims.push(classes);
    dims
}

impl Gamlp {
    /// Initializes every parameter from `config.seed`. The label branch exists
    /// only when [`TrainConfig::label_branch`] holds.
    pub fn new(config: &TrainConfig, feat_dim: usize, classes: usize) -> Result<Self> {
        config.validate()?;
        if feat_dim == 0 || classes == 0 {
            return Err(Error::invalid("feature dimension and class count must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let feature_combiner = Combiner::new("feat.att", config, feat_dim, config.hops, config.seed, &mut rng);
        let feature_mlp = Mlp::new(
            "feat.mlp",
            &classifier_dims(
                feature_combiner.output_dim(feat_dim, config.hops),
                config.hidden,
                config.num_layers,
                classes,
            ),
            Activation::Relu,
            config.dropout,
            &mut rng,
        );
        let (label_combiner, label_mlp) = if config.label_branch() {
            let comb = Combiner::new(
                "label.att",
                config,
                classes,
                config.label_hops,
                config.seed.wrapping_add(1),
                &mut rng,
            );
            let mlp = Mlp::new(
                "label.mlp",
                &classifier_dims(
                    comb.output_dim(classes, config.label_hops),
                    config.hidden,
                    config.label_num_layers,
                    classes,
                ),
                Activation::Relu,
                config.dropout,
                &mut rng,
            );
            (Some(comb), Some(mlp))
        } else {
            (None, None)
        };
        Ok(Self {
            feature_combiner,
            feature_mlp,
            label_combiner,
            label_mlp,
            beta: config.beta,
            input_dropout: config.input_dropout,
            attention_dropout: config.attention_dropout,
            hops: config.hops,
            label_hops: config.label_hops,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.feature_mlp.out_dim()
    }

    pub fn uses_labels(&self) -> bool {
        self.label_mlp.is_some()
    }

    fn check_inputs(&self, inputs: &ModelInputs) -> Result<()> {
        if inputs.features.len() != self.hops + 1 {
            return Err(Error::shape(format!(
                "model expects {} feature matrices, got {}",
                self.hops + 1,
                inputs.features.len()
            )));
        }
        if self.uses_labels() {
            match &inputs.labels {
                Some(ys) if ys.len() == self.label_hops + 1 => {}
                Some(ys) => {
                    return Err(Error::shape(format!(
                        "model expects {} label matrices, got {}",
                        self.label_hops + 1,
                        ys.len()
                    )))
                }
                None => return Err(Error::invalid("model has a label branch but no label stack was given")),
            }
        }
        Ok(())
    }

    /// Training mode when `rng` is given (all dropouts active), evaluation
    /// otherwise.
    pub fn forward(&self, inputs: &ModelInputs, rng: Option<&mut (dyn RngCore + '_)>) -> Result<(Matrix, GamlpCache)> {
        self.check_inputs(inputs)?;
        let mut rng = rng;
        let xs: Vec<Matrix> = match rng.as_deref_mut() {
            Some(r) if self.input_dropout > 0.0 => inputs
                .features
                .iter()
                .map(|x| dropout(x, self.input_dropout, r, true).map(|(m, _)| m))
                .collect::<Result<_>>()?,
            _ => inputs.features.clone(),
        };
        let (hx, _, feature) =
            self.feature_combiner
                .forward(&xs, &inputs.rows, self.attention_dropout, rng.as_deref_mut())?;
        let (mut logits, feature_mlp) = self.feature_mlp.forward(&hx, rng.as_deref_mut())?;

        let mut label = None;
        let mut ys = None;
        if let (Some(comb), Some(mlp)) = (&self.label_combiner, &self.label_mlp) {
            let y = inputs.labels.as_ref().expect("checked above");
            let (hy, _, lc) = comb.forward(y, &inputs.rows, self.attention_dropout, rng.as_deref_mut())?;
            let (out, mc) = mlp.forward(&hy, rng)?;
            logits.add_scaled(&out, self.beta);
            label = Some((lc, mc));
            ys = Some(y.clone());
        }
        Ok((
            logits,
            GamlpCache {
                xs,
                feature,
                feature_mlp,
                label,
                ys,
            },
        ))
    }

    /// Evaluation-mode logits.
    pub fn logits(&self, inputs: &ModelInputs) -> Result<Matrix> {
        Ok(self.forward(inputs, None)?.0)
    }

    /// Evaluation-mode attention weights of the feature and label branches.
    pub fn attention_weights(&self, inputs: &ModelInputs) -> Result<(Option<Matrix>, Option<Matrix>)> {
        self.check_inputs(inputs)?;
        let (_, wx, _) = self
            .feature_combiner
            .forward(&inputs.features, &inputs.rows, 0.0, None)?;
        let wy = match (&self.label_combiner, &inputs.labels) {
            (Some(comb), Some(ys)) => comb.forward(ys, &inputs.rows, 0.0, None)?.1,
            _ => None,
        };
        Ok((wx, wy))
    }

    /// Accumulates parameter gradients for `∂loss/∂logits`.
    pub fn backward(&mut self, cache: &GamlpCache, dlogits: &Matrix) -> Result<()> {
        let dhx = self.feature_mlp.backward(&cache.feature_mlp, dlogits)?;
        self.feature_combiner.backward(&cache.xs, &cache.feature, &dhx)?;
        if let (Some(comb), Some(mlp), Some((lc, mc)), Some(ys)) = (
            self.label_combiner.as_mut(),
            self.label_mlp.as_mut(),
            cache.label.as_ref(),
            cache.ys.as_ref(),
        ) {
            let mut dy = dlogits.clone();
            dy.scale(self.beta);
            let dhy = mlp.backward(mc, &dy)?;
            comb.backward(ys, lc, &dhy)?;
        }
        Ok(())
    }
}

impl Parameterized for Gamlp {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.feature_combiner.params();
        v.extend(self.feature_mlp.params());
        if let Some(c) = &self.label_combiner {
            v.extend(c.params());
        }
        if let Some(m) = &self.label_mlp {
            v.extend(m.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.feature_combiner.params_mut();
        v.extend(self.feature_mlp.params_mut());
        if let Some(c) = &mut self.label_combiner {
            v.extend(c.params_mut());
        }
        if let Some(m) = &mut self.label_mlp {
            v.extend(m.params_mut());
        }
        v
    }
}
