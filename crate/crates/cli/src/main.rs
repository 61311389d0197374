use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use use_embed::data::io::{load_dataset, save_dataset};
use use_embed::metrics::evaluate;
use use_embed::model::{load_model, save_model, Description};
use use_embed::solver::{
    fit, grid_search, transfer_fit, Grid, GridPoint, TrainReport, TransferDictionary,
};
use use_embed::synth::{gen_planted, gen_taxonomy, PlantedConfig};
use use_embed::{Dataset, EmbeddingModel, Error, ErrorKind, Hyperparams, Regularization};

type Result<T> = std::result::Result<T, Error>;

/// Unified semantic embeddings: train, evaluate, describe and transfer.
#[derive(Parser)]
#[command(name = "use-embed", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted synthetic dataset and its ground truth.
    Synth(SynthArgs),
    /// Train a model and write it with a JSON training report.
    Train(TrainArgs),
    /// Evaluate a model (flat hit@k and hierarchical precision@k).
    Eval(EvalArgs),
    /// Print "A <parent> that is/has <attributes>" for every non-root node.
    Describe(DescribeArgs),
    /// Learn novel categories on top of a frozen source model.
    Transfer(TransferArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum DictArg {
    #[value(name = "attrs")]
    Attrs,
    #[value(name = "attrs+cats")]
    AttrsCats,
}

#[derive(Args)]
struct HyperArgs {
    /// Embedding dimension.
    #[arg(long, default_value_t = 32)]
    de: usize,
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    mu1: f64,
    #[arg(long, default_value_t = 1.0)]
    mu2: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma1: f64,
    #[arg(long, default_value_t = 0.1)]
    gamma2: f64,
    /// Attribute margin.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Outer alternating rounds.
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
}

impl HyperArgs {
    fn hyperparams(&self, seed: u64) -> Hyperparams {
        let regularization = if self.mu1 == 0.0 && self.mu2 == 0.0 {
            Regularization::Penalty
        } else {
            Regularization::NormBall
        };
        Hyperparams {
            embed_dim: self.de,
            lambda: self.lambda,
            mu1: self.mu1,
            mu2: self.mu2,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            sigma: self.sigma,
            outer_iters: self.iters,
            tol: self.tol,
            seed,
            regularization,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    branching: usize,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 8)]
    attributes: usize,
    /// Attributes per non-root node.
    #[arg(long, default_value_t = 2)]
    k_star: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Planted embedding dimension.
    #[arg(long, default_value_t = 8)]
    de: usize,
    #[arg(long, default_value_t = 40)]
    per_class: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma1: f64,
    #[arg(long, default_value_t = 2.0)]
    root_norm: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Write the JSON training report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-class train,validation,test counts; training uses the first part.
    #[arg(long, value_parser = parse_split)]
    split: Option<(usize, usize, usize)>,
    /// Select mu2, gamma1, gamma2 by validation hit@1 (needs --split).
    #[arg(long)]
    grid: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Cutoffs for both metrics [default: hit@1,2,5 and hp@2,5].
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    /// Evaluate on the test part of this per-class split.
    #[arg(long, value_parser = parse_split)]
    split: Option<(usize, usize, usize)>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct DescribeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Attributes listed per node.
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct TransferArgs {
    /// Novel-class dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// Source model.
    #[arg(long)]
    model: PathBuf,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_parser = parse_split)]
    split: Option<(usize, usize, usize)>,
    #[arg(long, value_enum, default_value_t = DictArg::Attrs)]
    transfer_dict: DictArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

fn parse_split(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err("expected three comma-separated counts, e.g. 30,30,30".into()),
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn split_part(
    ds: Dataset,
    split: Option<(usize, usize, usize)>,
    seed: u64,
    part: usize,
) -> Dataset {
    match split {
        None => ds,
        Some(counts) => {
            let parts = ds.split_per_class(counts, seed);
            ds.select([&parts.0, &parts.1, &parts.2][part])
        }
    }
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    hyperparams: &'a Hyperparams,
    train_instances: usize,
    grid: Option<Vec<GridPoint>>,
    report: &'a TrainReport,
}

fn train_summary(out: &TrainOutput) -> String {
    let r = out.report;
    let last = r.history.last().unwrap_or(&r.initial);
    format!(
        "trained on {} instances: objective {:.6} -> {:.6} in {} rounds (converged: {})\n",
        out.train_instances,
        r.initial.total,
        last.total,
        r.history.len(),
        r.converged
    )
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let taxonomy = gen_taxonomy(a.branching, a.depth, a.seed)?;
    let config = PlantedConfig {
        attributes: a.attributes,
        k_star: a.k_star,
        input_dim: a.dim,
        embed_dim: a.de,
        per_class: a.per_class,
        noise: a.noise,
        gamma1: a.gamma1,
        root_norm: a.root_norm,
        seed: a.seed,
        ..Default::default()
    };
    let (dataset, truth) = gen_planted(&taxonomy, &config)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let manifest = save_dataset(&dataset, &a.out)?;
    let truth_path = a.out.join("truth.json");
    write_or_print(Some(&truth_path), &to_json(&truth))?;
    let text = match a.format {
        Format::Json => to_json(&json!({"manifest": manifest, "truth": truth_path})),
        Format::Text => format!("{}\n", manifest.display()),
    };
    write_or_print(None, &text)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    if a.grid && a.split.is_none_or(|s| s.1 == 0) {
        return Err(Error::InvalidArgument(
            "--grid needs --split with a non-empty validation part".into(),
        ));
    }
    let full = load_dataset(&a.data)?;
    let hyper = a.hyper.hyperparams(a.seed);
    let (model, report, grid, train_instances) = if a.grid {
        let counts = a.split.expect("checked above");
        let parts = full.split_per_class(counts, a.seed);
        let (train, val) = (full.select(&parts.0), full.select(&parts.1));
        let (model, report, table) = grid_search(&train, &val, &hyper, &Grid::default())?;
        (model, report, Some(table), train.len())
    } else {
        let train = split_part(full, a.split, a.seed, 0);
        let (model, report) = fit(&train, &hyper)?;
        (model, report, None, train.len())
    };
    save_model(&model, &a.out)?;
    let out = TrainOutput {
        hyperparams: model.hyperparams(),
        train_instances,
        grid,
        report: &report,
    };
    emit_train(&out, a.report.as_deref(), a.format)
}

fn emit_train(out: &TrainOutput, report_path: Option<&Path>, format: Format) -> Result<()> {
    if let Some(p) = report_path {
        write_or_print(Some(p), &to_json(out))?;
        return write_or_print(None, &train_summary(out));
    }
    match format {
        Format::Json => write_or_print(None, &to_json(out)),
        Format::Text => write_or_print(None, &train_summary(out)),
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let ds = split_part(load_dataset(&a.data)?, a.split, a.seed, 2);
    let (flat, hp) = if a.k.is_empty() {
        (vec![1, 2, 5], vec![2, 5])
    } else {
        (a.k.clone(), a.k.clone())
    };
    let report = evaluate(&model, &ds, &flat, &hp)?;
    let text = match a.format {
        Format::Json => to_json(&report),
        Format::Text => report.to_table(),
    };
    write_or_print(a.out.as_deref(), &text)
}

fn describe_all(model: &EmbeddingModel, k: usize) -> Result<Vec<Description>> {
    let t = model.taxonomy();
    t.non_root_ids().map(|n| model.describe(n, k)).collect()
}

fn cmd_describe(a: &DescribeArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let descriptions = describe_all(&model, a.k)?;
    let text = match a.format {
        Format::Json => to_json(&descriptions),
        Format::Text => descriptions.iter().map(|d| format!("{d}\n")).collect(),
    };
    write_or_print(a.out.as_deref(), &text)
}

fn cmd_transfer(a: &TransferArgs) -> Result<()> {
    let source = load_model(&a.model)?;
    let novel = split_part(load_dataset(&a.data)?, a.split, a.seed, 0);
    let dictionary = match a.transfer_dict {
        DictArg::Attrs => TransferDictionary::Attributes,
        DictArg::AttrsCats => TransferDictionary::AttributesAndCategories,
    };
    let hyper = a.hyper.hyperparams(a.seed);
    let (model, report) = transfer_fit(&novel, &source, &hyper, dictionary)?;
    save_model(&model, &a.out)?;
    let out = TrainOutput {
        hyperparams: model.hyperparams(),
        train_instances: novel.len(),
        grid: None,
        report: &report,
    };
    emit_train(&out, a.report.as_deref(), a.format)
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("USE_EMBED_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "USE_EMBED_THREADS must be a positive integer, got {value:?}"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("cannot size the worker pool: {e}")))
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({"error": kind, "message": message}));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            return fail("argument", first, 2);
        }
    };
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Describe(a) => cmd_describe(a),
        Command::Transfer(a) => cmd_transfer(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = match e.kind() {
                ErrorKind::Argument => ("argument", 2),
                ErrorKind::Io => ("io", 3),
                ErrorKind::Validation => ("validation", 4),
                ErrorKind::Divergence => ("divergence", 5),
            };
            fail(kind, &e.to_string(), code)
        }
    }
}
