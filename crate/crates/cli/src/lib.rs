//! Command-line surface for `svmroc`.
//!
//! Every command writes its outputs and a `<command>-manifest.json` into the
//! output directory (`--out-dir`, else `$SVMROC_OUT_DIR`, else
//! `./svmroc-out`). `--config FILE` reads `key = value` lines that act as
//! flags placed before the command line ones, so explicit flags win.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use svmroc::bands::{build_band, BandSpec, WeightScheme};
use svmroc::io::{
    self, load_csv, table_rows, write_band_csv, write_curve_csv, write_json, write_table_csv,
    BandSummary, RunManifest,
};
use svmroc::plot::Plot;
use svmroc::rng::substream;
use svmroc::roc::{auc, default_alpha_grid, select_operating_point, sweep, OperatingCriterion};
use svmroc::synth::{run_experiment, ExperimentConfig, GenModel, Method, ModelForm};
use svmroc::tune::{cv_tune, TuneGrid};
use svmroc::{fit, Dataset, KernelFamily, KernelSpec, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "svmroc", version, about = "Weighted-SVM ROC curves and bootstrap bands")]
#[command(args_override_self = true)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// File of `key = value` lines mirroring the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one weighted SVM and write it as JSON.
    Fit(FitArgs),
    /// Sweep the weight grid and write the empirical ROC curve.
    Roc(RocArgs),
    /// ROC curve plus a simultaneous bootstrap band.
    Bands(BandsArgs),
    /// Run one simulation cell.
    Simulate(SimulateArgs),
    /// Rerun a preset table of simulation cells.
    Reproduce(ReproduceArgs),
    /// Render a curve and/or band CSV as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KernelArg {
    Linear,
    Gaussian,
    Polynomial,
}

impl From<KernelArg> for KernelFamily {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Linear => KernelFamily::Linear,
            KernelArg::Gaussian => KernelFamily::Gaussian,
            KernelArg::Polynomial => KernelFamily::Polynomial,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WeightArg {
    Exponential,
    Multinomial,
    /// Unit weights: every replicate equals the estimate.
    Constant,
}

impl From<WeightArg> for WeightScheme {
    fn from(w: WeightArg) -> Self {
        match w {
            WeightArg::Exponential => WeightScheme::Exponential,
            WeightArg::Multinomial => WeightScheme::Multinomial,
            WeightArg::Constant => WeightScheme::Constant,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormArg {
    Linear,
    Nonlinear,
}

impl From<FormArg> for ModelForm {
    fn from(f: FormArg) -> Self {
        match f {
            FormArg::Linear => ModelForm::Linear,
            FormArg::Nonlinear => ModelForm::Nonlinear,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    LinearSvm,
    GaussianSvm,
    Logistic,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::LinearSvm => Method::LinearSvm,
            MethodArg::GaussianSvm => Method::GaussianSvm,
            MethodArg::Logistic => Method::Logistic,
        }
    }
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Headed CSV file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "label")]
    label_column: String,
    /// Label value treated as the positive class.
    #[arg(long, default_value = "1")]
    positive: String,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "linear")]
    kernel: KernelArg,
    /// Penalty; cross-validated at equal costs when omitted.
    #[arg(long)]
    lambda: Option<f64>,
    /// Gaussian bandwidth; cross-validated (or 1/p with --lambda) when omitted.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 2)]
    degree: u32,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 1e-3)]
    kkt_tolerance: f64,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Cost weight of the positive class.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
}

#[derive(Debug, Args)]
struct RocArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Number of interior weights k/(M+1).
    #[arg(long, default_value_t = 99)]
    alpha_grid: usize,
    /// Share of each class held out for estimating the curve.
    #[arg(long, default_value_t = 0.3)]
    test_fraction: f64,
}

#[derive(Debug, Args)]
struct BandsArgs {
    #[command(flatten)]
    roc: RocArgs,
    #[arg(long, default_value_t = 1000)]
    n_boot: usize,
    /// The band has level 1 - gamma_bar.
    #[arg(long, default_value_t = 0.1)]
    gamma_bar: f64,
    #[arg(long, value_enum, default_value = "exponential")]
    weights: WeightArg,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[arg(long, default_value_t = 0.25)]
    q: f64,
    #[arg(long, value_enum, default_value = "linear")]
    model: FormArg,
    #[arg(long, default_value_t = 100)]
    replications: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "linear-svm,gaussian-svm,logistic")]
    methods: Vec<MethodArg>,
    #[arg(long, default_value_t = 99)]
    alpha_grid: usize,
    /// Build bands for the linear SVM and check coverage.
    #[arg(long)]
    bands: bool,
    #[arg(long, default_value_t = 1000)]
    n_boot: usize,
    #[arg(long, default_value_t = 0.1)]
    gamma_bar: f64,
    #[arg(long, default_value_t = 100_000)]
    truth_size: usize,
}

#[derive(Debug, Args)]
struct ReproduceArgs {
    /// table1 | table2 | table3 | table4 | table5 | table6 | table8
    table: String,
    /// Restrict to one cell, e.g. n=500,p=2,q=0.25,model=linear
    #[arg(long)]
    cell: Option<String>,
    #[arg(long, default_value_t = 100)]
    replications: usize,
    #[arg(long, default_value_t = 1000)]
    n_boot: usize,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Curve CSV (alpha,fpf,tpf).
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Band CSV (z,y_lower,y_hat,y_upper).
    #[arg(long)]
    band: Option<PathBuf>,
    #[arg(long, default_value = "ROC curve")]
    title: String,
    #[arg(long, default_value = "plot.svg")]
    output: String,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let expanded = match expand_config(&argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(&expanded) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    match pool.install(|| run(&cli, &expanded)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

const COMMANDS: [&str; 6] = ["fit", "roc", "bands", "simulate", "reproduce", "plot"];

/// Splices `--key value` pairs from a `--config` file in right after the
/// subcommand name.
fn expand_config(argv: &[String]) -> anyhow::Result<Vec<String>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if a == "--config" {
            path = argv.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(argv.to_vec());
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let mut extra = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{path}:{}: expected key = value", lineno + 1);
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key == "config" {
            bail!("{path}:{}: config files cannot nest", lineno + 1);
        }
        match value {
            "true" => extra.push(format!("--{key}")),
            "false" => {}
            _ => {
                extra.push(format!("--{key}"));
                extra.push(value.to_string());
            }
        }
    }
    let at = argv
        .iter()
        .position(|a| COMMANDS.contains(&a.as_str()))
        .map_or(argv.len(), |i| i + 1);
    let mut out = argv[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(cli: &Cli) -> anyhow::Result<Self> {
        let dir = io::output_dir(cli.out_dir.as_deref());
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir,
            written: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.display().to_string());
        p
    }

    fn finish(
        self,
        command: &str,
        argv: &[String],
        seed: u64,
        config: serde_json::Value,
        started: (f64, Instant),
    ) -> anyhow::Result<()> {
        let manifest = RunManifest {
            command: command.into(),
            args: argv.to_vec(),
            config_hash: io::config_hash(&config),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            started_unix: started.0,
            finished_unix: io::unix_now(),
            wall_seconds: started.1.elapsed().as_secs_f64(),
            outputs: self.written.clone(),
        };
        let path = self.dir.join(format!("{command}-manifest.json"));
        write_json(&path, &manifest)?;
        for o in &self.written {
            println!("wrote {o}");
        }
        Ok(())
    }
}

fn run(cli: &Cli, argv: &[String]) -> anyhow::Result<()> {
    let started = (io::unix_now(), Instant::now());
    let mut out = Outputs::new(cli)?;
    let (name, config) = match &cli.command {
        Command::Fit(a) => ("fit", cmd_fit(cli, a, &mut out)?),
        Command::Roc(a) => ("roc", cmd_roc(cli, a, None, &mut out)?),
        Command::Bands(a) => ("bands", cmd_roc(cli, &a.roc, Some(a), &mut out)?),
        Command::Simulate(a) => ("simulate", cmd_simulate(cli, a, &mut out)?),
        Command::Reproduce(a) => ("reproduce", cmd_reproduce(cli, a, &mut out)?),
        Command::Plot(a) => ("plot", cmd_plot(a, &mut out)?),
    };
    out.finish(name, argv, cli.seed, config, started)
}

fn load(data: &DataArgs) -> anyhow::Result<Dataset> {
    load_csv(&data.input, &data.label_column, &data.positive)
        .with_context(|| format!("loading {}", data.input.display()))
}

/// Resolves the penalty and kernel: fixed when `--lambda` is given,
/// cross-validated otherwise.
fn resolve_model(
    m: &ModelArgs,
    train: &Dataset,
    seed: u64,
) -> anyhow::Result<(TrainConfig, serde_json::Value)> {
    let family = KernelFamily::from(m.kernel);
    let (lambda, kernel, tuning) = match m.lambda {
        Some(lambda) => {
            let kernel = match family {
                KernelFamily::Linear => KernelSpec::Linear,
                KernelFamily::Polynomial => KernelSpec::polynomial(m.degree),
                KernelFamily::Gaussian => {
                    KernelSpec::gaussian(m.gamma.unwrap_or(1.0 / train.dim() as f64))
                }
            };
            (lambda, kernel, serde_json::Value::Null)
        }
        None => {
            let mut grid = TuneGrid::default_for(train.len(), train.dim(), seed);
            grid.n_folds = m.folds;
            grid.poly_degree = m.degree;
            if let Some(g) = m.gamma {
                grid.gamma_candidates = vec![g];
            }
            let report = cv_tune(train, family, &grid)?;
            (report.lambda, report.kernel, json!({ "grid": grid, "report": report }))
        }
    };
    let mut cfg = TrainConfig::new(0.5, lambda, kernel);
    cfg.kkt_tolerance = m.kkt_tolerance;
    Ok((cfg, tuning))
}

fn cmd_fit(cli: &Cli, a: &FitArgs, out: &mut Outputs) -> anyhow::Result<serde_json::Value> {
    let data = load(&a.data)?;
    let (cfg, tuning) = resolve_model(&a.model, &data, cli.seed)?;
    let cfg = cfg.with_alpha(a.alpha);
    let model = match fit(&data, &cfg) {
        Ok(m) => m,
        Err(svmroc::Error::NotConverged { model, kkt_residual, .. }) => {
            log::warn!("solver stopped before convergence (kkt residual {kkt_residual:.3e})");
            *model
        }
        Err(e) => return Err(e.into()),
    };
    write_json(&out.path("model.json"), &model)?;
    println!(
        "fitted alpha = {}: {} support vectors, kkt residual {:.3e}",
        a.alpha,
        model.support_indices.len(),
        model.diagnostics.kkt_residual
    );
    Ok(json!({ "input": a.data.input, "train": cfg, "tuning": tuning }))
}

fn cmd_roc(
    cli: &Cli,
    a: &RocArgs,
    bands: Option<&BandsArgs>,
    out: &mut Outputs,
) -> anyhow::Result<serde_json::Value> {
    let data = load(&a.data)?;
    let (train, test) = data.stratified_split(1.0 - a.test_fraction, &mut substream(cli.seed, &[0]))?;
    let (base, tuning) = resolve_model(&a.model, &train, cli.seed)?;
    let grid = default_alpha_grid(a.alpha_grid);
    let result = sweep(&train, &test, &base, &grid)?;
    write_curve_csv(&out.path("curve.csv"), &result.curve)?;
    let area = auc(&result.curve);
    let op = select_operating_point(&result.curve, OperatingCriterion::ClosestToCorner)?;
    println!(
        "auc {area:.4}; closest to (0,1) at alpha = {}: se {:.4}, sp {:.4}",
        op.alpha_star, op.sensitivity, op.specificity
    );
    let mut config = json!({
        "input": a.data.input,
        "label_column": a.data.label_column,
        "positive": a.data.positive,
        "test_fraction": a.test_fraction,
        "alpha_grid": grid,
        "train": base,
        "tuning": tuning,
        "auc": area,
        "operating_point": op,
    });
    if let Some(b) = bands {
        let spec = BandSpec {
            weight_scheme: b.weights.into(),
            ..BandSpec::new(b.n_boot, b.gamma_bar, cli.seed)
        };
        let band = build_band(&result.classifications, &spec)?;
        write_band_csv(&out.path("band.csv"), &band)?;
        let summary = BandSummary::of(&band);
        write_json(&out.path("band.json"), &summary)?;
        println!("band p* = {:.4}, area {:.4}", summary.p_star, summary.area);
        config["band"] = serde_json::to_value(&spec)?;
    }
    Ok(config)
}

fn experiment_config(
    model: GenModel,
    n: usize,
    replications: usize,
    methods: Vec<Method>,
    band: Option<BandSpec>,
    seed: u64,
) -> ExperimentConfig {
    ExperimentConfig {
        methods,
        band_spec: band,
        ..ExperimentConfig::new(model, n, replications, seed)
    }
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs, out: &mut Outputs) -> anyhow::Result<serde_json::Value> {
    let mut cfg = experiment_config(
        GenModel::standard(a.p, a.q, a.model.into()),
        a.n,
        a.replications,
        a.methods.iter().map(|&m| m.into()).collect(),
        a.bands.then(|| BandSpec::new(a.n_boot, a.gamma_bar, cli.seed)),
        cli.seed,
    );
    cfg.alpha_grid = default_alpha_grid(a.alpha_grid);
    cfg.truth_set_size = a.truth_size;
    let result = run_experiment(&cfg)?;
    let rows = table_rows(&cfg, &result);
    print_rows(&rows);
    write_table_csv(&out.path("table.csv"), &rows)?;
    write_json(&out.path("result.json"), &result)?;
    Ok(serde_json::to_value(&cfg)?)
}

fn print_rows(rows: &[io::TableRow]) {
    for r in rows {
        println!(
            "n={} p={} q={} {} {:<13} {:<14} {:.3} ({:.3})",
            r.n, r.p, r.q, r.form, r.method, r.metric, r.mean, r.sd
        );
    }
}

/// A preset: model forms, methods and whether bands are built.
struct Preset {
    forms: &'static [ModelForm],
    methods: &'static [Method],
    bands: bool,
    metrics: &'static [&'static str],
}

fn preset(table: &str) -> Option<Preset> {
    const ALL: &[Method] = &[Method::LinearSvm, Method::GaussianSvm, Method::Logistic];
    const SVMS: &[Method] = &[Method::LinearSvm, Method::GaussianSvm];
    const NL: &[ModelForm] = &[ModelForm::Nonlinear];
    const LIN: &[ModelForm] = &[ModelForm::Linear];
    const SESP: &[&str] = &["optimal_se", "optimal_sp"];
    const UW: &[&str] = &["unweighted_se", "unweighted_sp"];
    let p = |forms, methods, bands, metrics| Preset {
        forms,
        methods,
        bands,
        metrics,
    };
    Some(match table {
        "table1" => p(NL, ALL, false, &["auc"]),
        "table2" => p(NL, ALL, false, SESP),
        "table3" => p(&[ModelForm::Linear, ModelForm::Nonlinear], &[Method::LinearSvm], true, &["coverage", "band_area"]),
        "table4" => p(NL, SVMS, false, UW),
        "table5" => p(LIN, ALL, false, &["auc"]),
        "table6" => p(LIN, ALL, false, SESP),
        "table8" => p(LIN, SVMS, false, UW),
        _ => return None,
    })
}

#[derive(Debug, Default)]
struct CellFilter {
    n: Option<usize>,
    p: Option<usize>,
    q: Option<f64>,
    form: Option<ModelForm>,
}

fn parse_cell(spec: &str) -> anyhow::Result<CellFilter> {
    let mut f = CellFilter::default();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let Some((k, v)) = part.split_once('=') else {
            bail!("cell filter {part:?} is not key=value");
        };
        match k.trim() {
            "n" => f.n = Some(v.parse()?),
            "p" => f.p = Some(v.parse()?),
            "q" => f.q = Some(v.parse()?),
            "model" | "form" => {
                f.form = Some(match v {
                    "linear" => ModelForm::Linear,
                    "nonlinear" => ModelForm::Nonlinear,
                    _ => bail!("unknown model form {v:?}"),
                })
            }
            other => bail!("unknown cell key {other:?}"),
        }
    }
    Ok(f)
}

fn cmd_reproduce(cli: &Cli, a: &ReproduceArgs, out: &mut Outputs) -> anyhow::Result<serde_json::Value> {
    let Some(preset) = preset(&a.table) else {
        bail!(
            "unknown table {:?}; choose one of table1, table2, table3, table4, table5, table6, table8",
            a.table
        );
    };
    let filter = a.cell.as_deref().map(parse_cell).transpose()?.unwrap_or_default();
    let mut rows = Vec::new();
    let mut configs = Vec::new();
    for &form in preset.forms {
        for n in [250, 500] {
            for p in [2, 5, 10] {
                for q in [0.05, 0.25] {
                    let keep = filter.n.is_none_or(|v| v == n)
                        && filter.p.is_none_or(|v| v == p)
                        && filter.q.is_none_or(|v| v == q)
                        && filter.form.is_none_or(|v| v == form);
                    if !keep {
                        continue;
                    }
                    let cfg = experiment_config(
                        GenModel::standard(p, q, form),
                        n,
                        a.replications,
                        preset.methods.to_vec(),
                        preset.bands.then(|| BandSpec::new(a.n_boot, 0.1, cli.seed)),
                        cli.seed,
                    );
                    let result = run_experiment(&cfg)
                        .with_context(|| format!("cell n={n} p={p} q={q} {}", form.name()))?;
                    let cell: Vec<_> = table_rows(&cfg, &result)
                        .into_iter()
                        .filter(|r| preset.metrics.contains(&r.metric.as_str()))
                        .collect();
                    print_rows(&cell);
                    rows.extend(cell);
                    configs.push(serde_json::to_value(&cfg)?);
                }
            }
        }
    }
    if rows.is_empty() {
        bail!("the cell filter matches no cell of {}", a.table);
    }
    write_table_csv(&out.path(&format!("{}.csv", a.table)), &rows)?;
    Ok(json!({ "table": a.table, "cells": configs }))
}

fn cmd_plot(a: &PlotArgs, out: &mut Outputs) -> anyhow::Result<serde_json::Value> {
    if a.curve.is_none() && a.band.is_none() {
        bail!("nothing to plot: pass --curve and/or --band");
    }
    let curve = a
        .curve
        .as_deref()
        .map(|p| -> anyhow::Result<Vec<(f64, f64)>> {
            Ok(io::read_curve_csv(p)?.collapsed())
        })
        .transpose()?;
    let band = a.band.as_deref().map(io::read_band_csv).transpose()?;
    let svg = Plot {
        title: &a.title,
        curve: curve.as_deref(),
        band: band.as_deref(),
    }
    .to_svg();
    io::atomic_write(&out.path(&a.output), svg.as_bytes())?;
    Ok(json!({ "curve": a.curve.as_deref().map(Path::display).map(|d| d.to_string()),
               "band": a.band.as_deref().map(Path::display).map(|d| d.to_string()),
               "title": a.title }))
}
