//! The `gamlp` command: preprocess, train, eval, sweep, ablate and
//! export-attention over a flat config file.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gamlp::config::{parse_config, RunConfig};
use gamlp::data::{load_dataset, Dataset};
use gamlp::experiments::{
    method_from_name, run_ablation, run_baseline_table, run_depth_sweep, run_seeds, run_sparsity_sweep, Ablation,
    Method, SparsityKind,
};
use gamlp::model::{export_attention, parse_buckets, Gamlp};
use gamlp::nn::{load_params, read_checkpoint, write_checkpoint, Parameterized};
use gamlp::pipeline::{expected_fingerprints, split_accuracies, train, Prepared};
use gamlp::propagation::{cache_read_checked, cache_write, CachedStack};
use gamlp::Error;

pub const FEATURE_CACHE: &str = "features.gmlp";
pub const LABEL_CACHE: &str = "labels.gmlp";
pub const DEFAULT_CHECKPOINT: &str = "model.gmck";

#[derive(Parser, Debug)]
#[command(name = "gamlp", version, about = "Graph attention MLP over precomputed propagation")]
struct Cli {
    /// Worker threads (overrides GAMLP_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat key = value config file.
    #[arg(long)]
    config: PathBuf,
    /// Cache directory (overrides `cache_dir` in the config).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Propagate features and labels and write the caches.
    Preprocess {
        #[command(flatten)]
        common: Common,
    },
    /// Train from the caches; writes a checkpoint and a JSON-lines log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Training log path (default: train_log.jsonl in the cache directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use caches whose fingerprint does not match the config.
        #[arg(long)]
        force: bool,
    },
    /// Print split accuracies of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Multi-seed comparison: a method table or a depth, edge or label sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// table, depth, edge or label.
        #[arg(long, default_value = "table")]
        kind: String,
        /// Comma-separated depths, edge fractions or labels per class.
        #[arg(long)]
        levels: Option<String>,
        /// Comma-separated methods (gamlp_r, gamlp_jk, sgc, s2gc, gbp, sign).
        #[arg(long, default_value = "gamlp_jk,sgc")]
        methods: String,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        /// Seed for edge dropping and label sampling.
        #[arg(long, default_value_t = 0)]
        perturbation_seed: u64,
        /// Report directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ablation over label use, reference vector or residual scheme.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// label_use, reference_vector or alpha_scheme.
        #[arg(long)]
        which: String,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-node and per-degree-bucket attention weights as CSV.
    ExportAttention {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "1-4,5-8,9-12")]
        buckets: String,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

struct RunContext {
    run: RunConfig,
    dataset: Dataset,
    cache_dir: Option<PathBuf>,
}

impl RunContext {
    fn load(common: &Common) -> Result<Self> {
        let mut run = parse_config(&common.config).with_context(|| format!("reading {}", common.config.display()))?;
        if let Some(seed) = common.seed {
            run.train.seed = seed;
        }
        let dir = run
            .dataset_dir
            .clone()
            .ok_or_else(|| anyhow!("config {} does not set dataset_dir", common.config.display()))?;
        let dataset = load_dataset(&dir).with_context(|| format!("loading dataset {}", dir.display()))?;
        let cache_dir = common.cache_dir.clone().or_else(|| run.cache_dir.clone());
        Ok(Self {
            run,
            dataset,
            cache_dir,
        })
    }

    fn cache_dir(&self) -> Result<&Path> {
        self.cache_dir
            .as_deref()
            .ok_or_else(|| anyhow!("no cache directory: pass --cache-dir or set cache_dir in the config"))
    }

    fn checkpoint(&self, flag: &Option<PathBuf>) -> Result<PathBuf> {
        match flag {
            Some(p) => Ok(p.clone()),
            None => Ok(self.cache_dir()?.join(DEFAULT_CHECKPOINT)),
        }
    }

    /// Reads the caches, checking them against the current inputs.
    fn prepared(&self, force: bool) -> Result<Prepared> {
        let dir = self.cache_dir()?;
        let (fx, fy) = expected_fingerprints(&self.dataset, &self.run.train)?;
        let read = |name: &str, fp| -> Result<CachedStack> {
            let path = dir.join(name);
            cache_read_checked(&path, &fp, force).map_err(|e| match e {
                Error::MissingFile(p) => anyhow!(
                    "no cache at {}; run `gamlp preprocess --config <CONFIG>` first",
                    p.display()
                ),
                Error::FingerprintMismatch { .. } => anyhow!(
                    "{e}; the cache at {} was built from different inputs, rerun `gamlp preprocess` or pass --force",
                    path.display()
                ),
                e => anyhow!(e),
            })
        };
        let features = read(FEATURE_CACHE, fx)?.into_features()?;
        let labels = match fy {
            Some(fp) => Some(read(LABEL_CACHE, fp)?.into_labels()?),
            None => None,
        };
        Ok(Prepared { features, labels })
    }

    fn model_from(&self, checkpoint: &Path) -> Result<Gamlp> {
        let ckpt = read_checkpoint(checkpoint).map_err(|e| match e {
            Error::MissingFile(p) => anyhow!("no checkpoint at {}; run `gamlp train` first", p.display()),
            e => anyhow!(e),
        })?;
        let mut model = Gamlp::new(&self.run.train, self.dataset.features.cols(), self.dataset.num_classes)?;
        load_params(&mut model, &ckpt).context("checkpoint does not match the configured model")?;
        Ok(model)
    }
}

fn print_accuracies(model: &Gamlp, ctx: &RunContext, prepared: &Prepared) -> Result<()> {
    let accs = split_accuracies(model, &ctx.dataset, prepared, &ctx.run.train)?;
    let mut out = std::io::stdout().lock();
    for ((name, _), acc) in ctx.dataset.splits.named().iter().zip(accs) {
        if let Some(a) = acc {
            writeln!(out, "{name} accuracy {a:.4}")?;
        }
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| anyhow!("bad {what} {v:?}")))
        .collect()
}

fn methods(names: &str, ctx: &RunContext) -> Result<Vec<Method>> {
    names
        .split(',')
        .map(|n| Ok(method_from_name(n.trim(), &ctx.run.train)?))
        .collect()
}

fn report_dir(out: &Option<PathBuf>, ctx: &RunContext) -> Result<PathBuf> {
    match out {
        Some(p) => Ok(p.clone()),
        None => Ok(ctx.cache_dir()?.join("reports")),
    }
}

fn seeds(runs: usize, ctx: &RunContext) -> Vec<u64> {
    run_seeds(runs).into_iter().map(|s| s + ctx.run.train.seed).collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess { common } => {
            let ctx = RunContext::load(&common)?;
            let dir = ctx.cache_dir()?;
            std::fs::create_dir_all(dir)?;
            let prepared = gamlp::pipeline::prepare(&ctx.dataset, &ctx.run.train)?;
            cache_write(&CachedStack::from(prepared.features.clone()), dir.join(FEATURE_CACHE))?;
            println!(
                "features {} ({} steps)",
                prepared.features.fingerprint,
                prepared.features.steps()
            );
            if let Some(ls) = prepared.labels {
                cache_write(&CachedStack::from(ls.clone()), dir.join(LABEL_CACHE))?;
                println!("labels {} ({} steps)", ls.fingerprint, ls.steps());
            }
        }
        Command::Train {
            common,
            checkpoint,
            out,
            force,
        } => {
            let ctx = RunContext::load(&common)?;
            let prepared = ctx.prepared(force)?;
            let outcome = train(&ctx.dataset, &prepared, &ctx.run.train)?;
            let ckpt = ctx.checkpoint(&checkpoint)?;
            if let Some(parent) = ckpt.parent() {
                std::fs::create_dir_all(parent)?;
            }
            write_checkpoint(&ckpt, &outcome.model.params(), Some(&outcome.optimizer))?;
            let log = match out {
                Some(p) => p,
                None => ctx.cache_dir()?.join("train_log.jsonl"),
            };
            std::fs::write(&log, outcome.log_json_lines()?)?;
            println!(
                "best val accuracy {:.4} at epoch {} of {}",
                outcome.best_val_acc,
                outcome.best_epoch,
                outcome.log.len()
            );
            print_accuracies(&outcome.model, &ctx, &prepared)?;
            println!("checkpoint {}", ckpt.display());
        }
        Command::Eval {
            common,
            checkpoint,
            force,
        } => {
            let ctx = RunContext::load(&common)?;
            let model = ctx.model_from(&ctx.checkpoint(&checkpoint)?)?;
            let prepared = ctx.prepared(force)?;
            print_accuracies(&model, &ctx, &prepared)?;
        }
        Command::Sweep {
            common,
            kind,
            levels,
            methods: names,
            runs,
            perturbation_seed,
            out,
        } => {
            let ctx = RunContext::load(&common)?;
            let methods = methods(&names, &ctx)?;
            let seeds = seeds(runs, &ctx);
            let levels = || {
                levels
                    .as_deref()
                    .ok_or_else(|| anyhow!("--levels is required for a {kind} sweep"))
            };
            let report = match kind.as_str() {
                "table" => run_baseline_table(&ctx.dataset, &methods, &seeds)?,
                "depth" => run_depth_sweep(&ctx.dataset, &parse_list(levels()?, "depth")?, &methods, &seeds)?,
                "edge" | "label" => run_sparsity_sweep(
                    &ctx.dataset,
                    kind.parse::<SparsityKind>()?,
                    &parse_list(levels()?, "level")?,
                    &methods,
                    &seeds,
                    perturbation_seed,
                )?,
                other => bail!("unknown sweep kind {other:?} (table, depth, edge or label)"),
            };
            let dir = report_dir(&out, &ctx)?;
            report.write(&dir, &report.experiment)?;
            print!("{}", report.to_table());
            println!("report {}", dir.join(format!("{}.json", report.experiment)).display());
        }
        Command::Ablate {
            common,
            which,
            runs,
            out,
        } => {
            let ctx = RunContext::load(&common)?;
            let which: Ablation = which.parse()?;
            let report = run_ablation(&ctx.dataset, which, &ctx.run.train, &seeds(runs, &ctx))?;
            let dir = report_dir(&out, &ctx)?;
            report.write(&dir, &report.experiment)?;
            print!("{}", report.to_table());
            println!("report {}", dir.join(format!("{}.json", report.experiment)).display());
        }
        Command::ExportAttention {
            common,
            checkpoint,
            buckets,
            out,
            force,
        } => {
            let ctx = RunContext::load(&common)?;
            let model = ctx.model_from(&ctx.checkpoint(&checkpoint)?)?;
            let prepared = ctx.prepared(force)?;
            let buckets = parse_buckets(&buckets)?;
            let rows: Vec<usize> = (0..ctx.dataset.num_nodes()).collect();
            let degrees = gamlp::graph::DegreeVector(ctx.dataset.graph.degrees_without_loops());
            let export = export_attention(&model, &prepared.stacks(&ctx.run.train)?, &rows, &degrees, &buckets)?;
            let dir = match out {
                Some(p) => p,
                None => ctx.cache_dir()?.join("attention"),
            };
            export.write(&dir)?;
            print!("{}", export.bucket_csv());
            println!("wrote {}", dir.display());
        }
    }
    Ok(())
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let env = std::env::var("GAMLP_THREADS").ok();
    let threads = match (flag, env) {
        (Some(n), _) => Some(n),
        (None, Some(v)) => Some(
            v.trim()
                .parse()
                .map_err(|_| anyhow!("GAMLP_THREADS={v:?} is not a count"))?,
        ),
        (None, None) => None,
    };
    if let Some(n) = threads {
        // A second call in one process (tests) finds the pool already built.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Runs the command line `argv` (including the program name) and returns the
/// process exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match init_threads(cli.threads).and_then(|()| run(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
