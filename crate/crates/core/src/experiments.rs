//! Multi-seed drivers: method comparison, depth and sparsity sweeps, and
//! ablations. Every report carries the resolved configs and seeds it ran.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{drop_edges, sample_labels_per_class, Dataset};
use crate::error::{Error, Result};
use crate::model::{BaselineMode, CombinerKind, LabelInput, ReferenceMode, TrainConfig};
use crate::pipeline::{prepare, split_accuracies, train, Prepared};
use crate::propagation::ResidualScheme;

/// A named configuration to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Method {
    pub name: String,
    pub config: TrainConfig,
}

impl Method {
    pub fn new(name: impl Into<String>, config: TrainConfig) -> Self {
        Self {
            name: name.into(),
            config,
        }
    }
}

/// One trained model. Accuracies are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub setting: String,
    pub seed: u64,
    /// Seed of the dataset perturbation, when there was one.
    pub perturbation_seed: Option<u64>,
    pub val_acc: f64,
    pub test_acc: f64,
    pub best_epoch: usize,
    pub epochs: usize,
}

/// Test accuracy over seeds for one method and setting. `std` is the
/// population standard deviation, so a single run has `std = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub setting: String,
    pub mean: f64,
    pub std: f64,
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub summary: Vec<SummaryRow>,
    pub methods: Vec<Method>,
    pub runs: Vec<RunRecord>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Report {
    fn new(experiment: &str, ds: &Dataset, seeds: &[u64], methods: Vec<Method>, runs: Vec<RunRecord>) -> Self {
        let mut keys: Vec<(String, String)> = Vec::new();
        for r in &runs {
            let key = (r.method.clone(), r.setting.clone());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        let summary = keys
            .into_iter()
            .map(|(method, setting)| {
                let accs: Vec<f64> = runs
                    .iter()
                    .filter(|r| r.method == method && r.setting == setting)
                    .map(|r| r.test_acc)
                    .collect();
                let (mean, std) = mean_std(&accs);
                SummaryRow {
                    method,
                    setting,
                    mean,
                    std,
                    n_runs: accs.len(),
                }
            })
            .collect();
        Self {
            experiment: experiment.into(),
            dataset: ds.name.clone(),
            seeds: seeds.to_vec(),
            summary,
            methods,
            runs,
        }
    }

    pub fn summary_row(&self, method: &str, setting: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.method == method && r.setting == setting)
    }

    /// Mean test accuracy (percent) of `method` at `setting`.
    pub fn mean(&self, method: &str, setting: &str) -> Option<f64> {
        self.summary_row(method, setting).map(|r| r.mean)
    }

    /// One line per run.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,setting,seed,perturbation_seed,val_acc,test_acc,best_epoch,epochs\n");
        for r in &self.runs {
            let p = r.perturbation_seed.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{p},{:.4},{:.4},{},{}",
                r.method, r.setting, r.seed, r.val_acc, r.test_acc, r.best_epoch, r.epochs
            );
        }
        out
    }

    /// Human-readable `mean ± std` table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for r in &self.summary {
            let _ = writeln!(
                out,
                "{:<16} {:<16} {:>6.2} ± {:.2}  (n={})",
                r.method, r.setting, r.mean, r.std, r.n_runs
            );
        }
        out
    }

    /// Writes `<stem>.csv` (runs) and `<stem>.json` (summary, configs, seeds).
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Method names accepted by [`method_from_name`].
pub const METHOD_NAMES: &[&str] = &["gamlp_r", "gamlp_jk", "sgc", "s2gc", "gbp", "sign"];

/// `base` with the combiner of a named method. Baselines drop the label
/// branch; SGC and S²GC also use a linear classifier, as in their papers.
pub fn method_from_name(name: &str, base: &TrainConfig) -> Result<Method> {
    let mut c = base.clone();
    let linear = |c: &mut TrainConfig, mode| {
        c.combiner = CombinerKind::Baseline(mode);
        c.use_labels = false;
        c.beta = 0.0;
        c.num_layers = 1;
    };
    match name {
        "gamlp_r" => c.combiner = CombinerKind::Recursive,
        "gamlp_jk" => c.combiner = CombinerKind::Jk,
        "sgc" => linear(&mut c, BaselineMode::Sgc),
        "s2gc" => linear(&mut c, BaselineMode::S2gc),
        "gbp" | "sign" => {
            c.combiner = CombinerKind::Baseline(if name == "gbp" {
                match base.combiner {
                    CombinerKind::Baseline(m @ BaselineMode::Gbp(_)) => m,
                    _ => BaselineMode::Gbp(0.5),
                }
            } else {
                BaselineMode::Sign
            });
            c.use_labels = false;
            c.beta = 0.0;
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown method {other:?} (expected one of {})",
                METHOD_NAMES.join(", ")
            )))
        }
    }
    Ok(Method::new(name, c))
}

/// Seeds `0..n`.
pub fn run_seeds(n: usize) -> Vec<u64> {
    (0..n as u64).collect()
}

fn run_one(
    ds: &Dataset,
    prepared: &Prepared,
    method: &Method,
    setting: &str,
    seed: u64,
    perturbation_seed: Option<u64>,
) -> Result<RunRecord> {
    let config = TrainConfig {
        seed,
        ..method.config.clone()
    };
    let outcome = train(ds, prepared, &config)?;
    let [_, _, test] = split_accuracies(&outcome.model, ds, prepared, &config)?;
    let test = test.ok_or_else(|| Error::invalid("dataset has an empty test split"))?;
    Ok(RunRecord {
        method: method.name.clone(),
        setting: setting.into(),
        seed,
        perturbation_seed,
        val_acc: outcome.best_val_acc * 100.0,
        test_acc: test * 100.0,
        best_epoch: outcome.best_epoch,
        epochs: outcome.log.len(),
    })
}

fn run_seeds_for(
    ds: &Dataset,
    prepared: &Prepared,
    method: &Method,
    setting: &str,
    seeds: &[u64],
) -> Result<Vec<RunRecord>> {
    seeds
        .par_iter()
        .map(|&s| run_one(ds, prepared, method, setting, s, None))
        .collect()
}

fn check_inputs(methods: &[Method], seeds: &[u64]) -> Result<()> {
    if methods.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("need at least one method and one seed"));
    }
    for m in methods {
        m.config.validate()?;
    }
    Ok(())
}

/// Test accuracy of every method over `seeds`, with model selection by
/// validation accuracy.
pub fn run_baseline_table(ds: &Dataset, methods: &[Method], seeds: &[u64]) -> Result<Report> {
    check_inputs(methods, seeds)?;
    let mut runs = Vec::new();
    for m in methods {
        let prepared = prepare(ds, &m.config)?;
        runs.extend(run_seeds_for(ds, &prepared, m, "default", seeds)?);
    }
    Ok(Report::new("baseline_table", ds, seeds, methods.to_vec(), runs))
}

/// Label for one depth in [`run_depth_sweep`].
pub fn depth_setting(depth: usize) -> String {
    format!("depth={depth}")
}

/// Sets the propagation depth of `config`; attention methods also use it for
/// the label stack.
pub fn with_depth(config: &TrainConfig, depth: usize) -> TrainConfig {
    let mut c = config.clone();
    c.hops = depth;
    if c.combiner.is_attention() {
        c.label_hops = depth;
    }
    c
}

/// Accuracy against propagation depth. Each method propagates once to the
/// deepest depth and every shallower run reads a prefix of that stack.
pub fn run_depth_sweep(ds: &Dataset, depths: &[usize], methods: &[Method], seeds: &[u64]) -> Result<Report> {
    check_inputs(methods, seeds)?;
    let Some(&max) = depths.iter().max() else {
        return Err(Error::invalid("depth sweep needs at least one depth"));
    };
    let mut runs = Vec::new();
    let mut resolved = Vec::new();
    for m in methods {
        let deep = prepare(ds, &with_depth(&m.config, max))?;
        for &d in depths {
            let method = Method::new(m.name.clone(), with_depth(&m.config, d));
            // The deepest setting reads the stack as is rather than a copy.
            let shallow;
            let prepared = if d == max {
                &deep
            } else {
                shallow = deep.truncated(&method.config)?;
                &shallow
            };
            runs.extend(run_seeds_for(ds, prepared, &method, &depth_setting(d), seeds)?);
            resolved.push(Method::new(format!("{}@{}", m.name, depth_setting(d)), method.config));
        }
    }
    Ok(Report::new("depth_sweep", ds, seeds, resolved, runs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SparsityKind {
    /// Levels are fractions of undirected edges removed.
    Edge,
    /// Levels are training nodes per class.
    Label,
}

impl std::str::FromStr for SparsityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edge" => Ok(SparsityKind::Edge),
            "label" => Ok(SparsityKind::Label),
            other => Err(Error::invalid(format!(
                "unknown sparsity kind {other:?} (edge or label)"
            ))),
        }
    }
}

/// Label for one level in [`run_sparsity_sweep`].
pub fn sparsity_setting(kind: SparsityKind, level: f64) -> String {
    match kind {
        SparsityKind::Edge => format!("edge={level}"),
        SparsityKind::Label => format!("label={level}"),
    }
}

fn perturb(ds: &Dataset, kind: SparsityKind, level: f64, seed: u64) -> Result<Dataset> {
    match kind {
        SparsityKind::Edge => drop_edges(ds, level, seed),
        SparsityKind::Label => {
            if level < 1.0 || level.fract() != 0.0 {
                return Err(Error::invalid(format!(
                    "label level must be a positive integer, got {level}"
                )));
            }
            sample_labels_per_class(ds, level as usize, seed)
        }
    }
}

/// Accuracy under edge or label sparsity. Run `i` perturbs the dataset with
/// seed `perturbation_seed + seeds[i]`, and every method sees that same
/// perturbed dataset.
pub fn run_sparsity_sweep(
    ds: &Dataset,
    kind: SparsityKind,
    levels: &[f64],
    methods: &[Method],
    seeds: &[u64],
    perturbation_seed: u64,
) -> Result<Report> {
    check_inputs(methods, seeds)?;
    let mut runs = Vec::new();
    for &level in levels {
        let setting = sparsity_setting(kind, level);
        let per_seed: Vec<Vec<RunRecord>> = seeds
            .par_iter()
            .map(|&seed| {
                let pseed = perturbation_seed.wrapping_add(seed);
                let perturbed = perturb(ds, kind, level, pseed)?;
                methods
                    .iter()
                    .map(|m| {
                        let prepared = prepare(&perturbed, &m.config)?;
                        run_one(&perturbed, &prepared, m, &setting, seed, Some(pseed))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        // Group by method so that the CSV reads method by method.
        for mi in 0..methods.len() {
            runs.extend(per_seed.iter().map(|r| r[mi].clone()));
        }
    }
    Ok(Report::new(
        match kind {
            SparsityKind::Edge => "edge_sparsity",
            SparsityKind::Label => "label_sparsity",
        },
        ds,
        seeds,
        methods.to_vec(),
        runs,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    /// Full model against no labels, raw labels and a uniform residual.
    LabelUse,
    /// JK attention with each reference vector.
    ReferenceVector,
    /// Cosine, linear and fixed `α = 0.7` residual weights.
    AlphaScheme,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label_use" => Ok(Ablation::LabelUse),
            "reference_vector" => Ok(Ablation::ReferenceVector),
            "alpha_scheme" => Ok(Ablation::AlphaScheme),
            other => Err(Error::invalid(format!(
                "unknown ablation {other:?} (label_use, reference_vector or alpha_scheme)"
            ))),
        }
    }
}

/// The variants an ablation compares, derived from `base`.
pub fn ablation_variants(which: Ablation, base: &TrainConfig) -> Vec<Method> {
    let with = |name: &str, f: &dyn Fn(&mut TrainConfig)| {
        let mut c = base.clone();
        f(&mut c);
        Method::new(name, c)
    };
    match which {
        Ablation::LabelUse => vec![
            with("gamlp", &|c| {
                c.use_labels = true;
                c.label_input = LabelInput::Smoothed;
            }),
            with("no_label", &|c| {
                c.use_labels = false;
                c.beta = 0.0;
            }),
            with("plain_label", &|c| {
                c.use_labels = true;
                c.label_input = LabelInput::Raw;
            }),
            with("uniform", &|c| {
                c.use_labels = true;
                c.label_input = LabelInput::Uniform;
            }),
        ],
        Ablation::ReferenceVector => [
            ("jk", ReferenceMode::Jk),
            ("origin_feature", ReferenceMode::OriginFeature),
            ("normal_noise", ReferenceMode::NormalNoise),
            ("no_reference", ReferenceMode::None),
        ]
        .into_iter()
        .map(|(name, r)| {
            with(name, &|c| {
                c.combiner = CombinerKind::Jk;
                c.reference = r;
            })
        })
        .collect(),
        Ablation::AlphaScheme => [
            ("cosine", ResidualScheme::Cosine),
            ("linear", ResidualScheme::Linear),
            ("fixed", ResidualScheme::Fixed(0.7)),
        ]
        .into_iter()
        .map(|(name, s)| with(name, &|c| c.residual = s))
        .collect(),
    }
}

pub fn run_ablation(ds: &Dataset, which: Ablation, base: &TrainConfig, seeds: &[u64]) -> Result<Report> {
    let methods = ablation_variants(which, base);
    let mut report = run_baseline_table(ds, &methods, seeds)?;
    report.experiment = match which {
        Ablation::LabelUse => "ablation_label_use",
        Ablation::ReferenceVector => "ablation_reference_vector",
        Ablation::AlphaScheme => "ablation_alpha_scheme",
    }
    .into();
    Ok(report)
}
