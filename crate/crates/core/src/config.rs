//! Flat `key = value` run configuration.
//!
//! One pair per line, `#` starts a comment, blank lines are ignored. Relative
//! paths are resolved against the config file's directory. Every key is
//! optional; unset keys keep the [`TrainConfig`] default.
//!
//! | key | default | values |
//! |---|---|---|
//! | `dataset_dir`, `cache_dir` | unset | paths |
//! | `hops`, `label_hops` | 5, 10 | 0 to 128 |
//! | `r`, `label_r` | 0.5, same as `r` | `0`, `0.5`, `1` |
//! | `residual` | `cosine` | `cosine`, `linear`, `fixed` |
//! | `alpha` | 0.7 | weight for `residual = fixed` |
//! | `combiner` | `recursive` | `recursive`, `jk`, `sgc`, `s2gc`, `gbp`, `sign` |
//! | `gbp_beta` | 0.5 | in (0, 1) |
//! | `reference` | `jk` | `jk`, `origin_feature`, `normal_noise`, `none` |
//! | `hidden` | 512 | |
//! | `num_layers`, `label_num_layers`, `jk_layers` | 4, 2, 4 | |
//! | `activation` | `leaky_relu` | `leaky_relu`, `relu`, `sigmoid` |
//! | `leaky_slope` | 0.2 | |
//! | `input_dropout`, `attention_dropout`, `dropout` | 0.2, 0.5, 0.5 | [0, 1) |
//! | `optimizer` | `adam` | `adam`, `sgd` |
//! | `lr`, `weight_decay` | 0.001, 0 | |
//! | `batch_size` | 0 | 0 is full batch |
//! | `epochs`, `patience` | 400, 300 | patience 0 disables early stopping |
//! | `beta` | 1 | label-branch weight |
//! | `seed` | 0 | |
//! | `use_labels` | `true` | |
//! | `label_input` | `smoothed` | `smoothed`, `raw`, `uniform` |
//! | `zero_train_self_label`, `row_normalize_features` | `false` | |

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::NormMode;
use crate::model::{BaselineMode, CombinerKind, LabelInput, ReferenceMode, TrainConfig};
use crate::nn::{Activation, OptimizerKind};
use crate::propagation::ResidualScheme;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

const KEYS: &[&str] = &[
    "dataset_dir",
    "cache_dir",
    "hops",
    "label_hops",
    "r",
    "label_r",
    "residual",
    "alpha",
    "combiner",
    "gbp_beta",
    "reference",
    "hidden",
    "num_layers",
    "label_num_layers",
    "jk_layers",
    "activation",
    "leaky_slope",
    "input_dropout",
    "attention_dropout",
    "dropout",
    "optimizer",
    "lr",
    "weight_decay",
    "batch_size",
    "epochs",
    "patience",
    "beta",
    "seed",
    "use_labels",
    "label_input",
    "zero_train_self_label",
    "row_normalize_features",
];

struct Entries {
    values: HashMap<String, (usize, String)>,
}

impl Entries {
    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        let Some((line, raw)) = self.values.get(key) else {
            return Ok(None);
        };
        raw.parse::<T>().map(Some).map_err(|_| Error::Config {
            line: Some(*line),
            msg: format!("{key} = {raw:?} is not a valid {}", type_name::<T>()),
        })
    }

    fn choice<T>(&self, key: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some((line, raw)) => parse(raw).map(Some).ok_or_else(|| Error::Config {
                line: Some(*line),
                msg: format!("unsupported value {raw:?} for {key}"),
            }),
        }
    }
}

fn type_name<T>() -> &'static str {
    let full = std::any::type_name::<T>();
    match full {
        "usize" | "u64" => "non-negative integer",
        "f64" => "number",
        "bool" => "boolean (true or false)",
        _ => full.rsplit("::").next().unwrap_or(full),
    }
}

fn norm_mode(s: &str) -> Option<NormMode> {
    s.parse().ok()
}

/// Parses config text. `base` resolves relative paths.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig> {
    let mut values = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line: Some(line),
            msg: format!("expected key = value, got {content:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(Error::Config {
                line: Some(line),
                msg: format!("unknown key {key:?}"),
            });
        }
        if let Some((first, _)) = values.insert(key.to_string(), (line, value.to_string())) {
            return Err(Error::Config {
                line: Some(line),
                msg: format!("duplicate key {key:?} (first set on line {first})"),
            });
        }
    }
    let e = Entries { values };
    let mut c = TrainConfig::default();

    macro_rules! set {
        ($($key:literal => $field:ident),* $(,)?) => {
            $(if let Some(v) = e.get($key)? { c.$field = v; })*
        };
    }
    set!(
        "hops" => hops,
        "label_hops" => label_hops,
        "hidden" => hidden,
        "num_layers" => num_layers,
        "label_num_layers" => label_num_layers,
        "jk_layers" => jk_layers,
        "input_dropout" => input_dropout,
        "attention_dropout" => attention_dropout,
        "dropout" => dropout,
        "batch_size" => batch_size,
        "epochs" => epochs,
        "patience" => patience,
        "beta" => beta,
        "seed" => seed,
        "use_labels" => use_labels,
        "zero_train_self_label" => zero_train_self_label,
        "row_normalize_features" => row_normalize_features,
    );
    if let Some(v) = e.choice("r", norm_mode)? {
        c.r_mode = v;
    }
    c.label_r_mode = e.choice("label_r", norm_mode)?;
    if let Some(v) = e.get("lr")? {
        c.optimizer.lr = v;
    }
    if let Some(v) = e.get("weight_decay")? {
        c.optimizer.weight_decay = v;
    }
    if let Some(v) = e.choice("optimizer", |s| match s {
        "adam" => Some(OptimizerKind::Adam),
        "sgd" => Some(OptimizerKind::Sgd),
        _ => None,
    })? {
        c.optimizer.kind = v;
    }
    let alpha = e.get::<f64>("alpha")?.unwrap_or(0.7);
    if let Some(v) = e.choice("residual", |s| match s {
        "cosine" => Some(ResidualScheme::Cosine),
        "linear" => Some(ResidualScheme::Linear),
        "fixed" => Some(ResidualScheme::Fixed(alpha)),
        _ => None,
    })? {
        c.residual = v;
    }
    if let Some(v) = e.choice("combiner", |s| s.parse::<CombinerKind>().ok())? {
        c.combiner = v;
    }
    if let Some(b) = e.get::<f64>("gbp_beta")? {
        match c.combiner {
            CombinerKind::Baseline(BaselineMode::Gbp(_)) => c.combiner = CombinerKind::Baseline(BaselineMode::Gbp(b)),
            _ => {
                return Err(Error::Config {
                    line: e.values.get("gbp_beta").map(|v| v.0),
                    msg: "gbp_beta is only meaningful with combiner = gbp".into(),
                })
            }
        }
    }
    if let Some(v) = e.choice("reference", |s| s.parse::<ReferenceMode>().ok())? {
        c.reference = v;
    }
    let slope = e.get::<f64>("leaky_slope")?.unwrap_or(0.2);
    c.activation = e
        .choice("activation", |s| match s {
            "leaky_relu" => Some(Activation::LeakyRelu(slope)),
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        })?
        .unwrap_or(Activation::LeakyRelu(slope));
    if let Some(v) = e.choice("label_input", |s| match s {
        "smoothed" => Some(LabelInput::Smoothed),
        "raw" => Some(LabelInput::Raw),
        "uniform" => Some(LabelInput::Uniform),
        _ => None,
    })? {
        c.label_input = v;
    }
    c.validate().map_err(|err| Error::Config {
        line: None,
        msg: err.to_string(),
    })?;

    let path = |key: &str| -> Result<Option<PathBuf>> {
        Ok(e.get::<PathBuf>(key)?
            .map(|p| if p.is_relative() { base.join(p) } else { p }))
    };
    Ok(RunConfig {
        train: c,
        dataset_dir: path("dataset_dir")?,
        cache_dir: path("cache_dir")?,
    })
}

/// Reads and validates a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    parse_config_str(&text, path.parent().unwrap_or(Path::new(".")))
}
