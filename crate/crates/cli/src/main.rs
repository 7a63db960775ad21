use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use stair::dataio::{gen_synthetic, write_csv, SyntheticSpec};
use stair::eval::ablation::{ablate_norm, capacity, capacity_grid};
use stair::eval::config::{BackboneSpec, ExperimentConfig, ResolvedConfig};
use stair::eval::experiment::{reevaluate, report_from_manifests, run_experiment};
use stair::eval::report::{comparison_table, emit, render, Format};
use stair::gradcheck::{run_suite, TOLERANCE};
use stair::norm::{NormConfig, NormMode};

#[derive(Parser)]
#[command(name = "stair", version, about = "Stagewise forecasting: shared, per-channel and cross-channel stages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run all three stages for every horizon and write checkpoints, manifests and reports.
    Train(RunArgs),
    /// Recompute metrics from the checkpoints listed in a manifest.
    Eval {
        /// manifest.json of one horizon
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = OutFormat::Table)]
        format: OutFormat,
    },
    /// Per-stage table across horizons.
    AblateStages(RunArgs),
    /// Sweep normalization: none, α=0.95, α=0.99, RevIN.
    AblateNorm(RunArgs),
    /// Linear mapping against the MLP preset, or a grid search with --grid.
    Capacity {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        grid: bool,
    },
    /// Generate a synthetic series and save it as CSV.
    Synth(SynthArgs),
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value_t = 2026)]
        seed: u64,
    },
    /// Re-emit a report from a manifest or a dataset output directory.
    Report {
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = OutFormat::Table)]
        format: OutFormat,
        /// write the report file here instead of printing it
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Json,
    Csv,
    Table,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Json => Format::Json,
            OutFormat::Csv => Format::Csv,
            OutFormat::Table => Format::Table,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NormChoice {
    None,
    Alpha,
    Revin,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// experiment config (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV file; relative paths are also looked up under STAIR_DATA_DIR
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// prediction length; repeat for several
    #[arg(long)]
    horizon: Vec<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// output root
    #[arg(long)]
    out: Option<PathBuf>,
    /// what to print on stdout
    #[arg(long, value_enum, default_value_t = OutFormat::Table)]
    format: OutFormat,
    #[arg(long, value_enum)]
    norm: Option<NormChoice>,
    /// α for --norm alpha (default 0.99)
    #[arg(long)]
    alpha: Option<f64>,
    /// capacity preset: linear, mlp-<layers>x<hidden>, or a dataset name
    #[arg(long)]
    preset: Option<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ResolvedConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
            cfg.synthetic = None;
        }
        if !self.horizon.is_empty() {
            cfg.horizons = Some(self.horizon.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(p) = &self.preset {
            if BackboneSpec::preset(p).is_none() {
                bail!("unknown preset `{p}`");
            }
            cfg.preset = Some(p.clone());
            cfg.backbone = None;
        }
        let base = cfg.norm.unwrap_or_default();
        cfg.norm = match (self.norm, self.alpha) {
            (Some(NormChoice::None), _) => Some(NormConfig::none()),
            (Some(NormChoice::Revin), _) => Some(NormConfig { mode: NormMode::Full, alpha: 1.0 }),
            (Some(NormChoice::Alpha), a) => Some(NormConfig { mode: NormMode::Full, alpha: a.unwrap_or(0.99) }),
            (None, Some(a)) => Some(NormConfig { alpha: a, ..base }),
            (None, None) => cfg.norm,
        };
        if cfg.dataset.is_none() && cfg.synthetic.is_none() {
            bail!("no data: pass --dataset or a --config with `dataset` or `synthetic`");
        }
        Ok(cfg.resolve()?)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// structure of the generated series
    #[arg(long, value_enum, default_value_t = SynthKind::Coupled)]
    kind: SynthKind,
    /// full generator spec (JSON); overrides the other options
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    channels: usize,
    #[arg(long, default_value_t = 4000)]
    length: usize,
    #[arg(long, default_value_t = 0.5)]
    kappa: f64,
    #[arg(long, default_value_t = 2026)]
    seed: u64,
    /// CSV to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Shared,
    Distinct,
    Coupled,
}

fn print_report(report: &stair::eval::experiment::ExperimentReport, format: OutFormat) -> Result<()> {
    print!("{}", render(report, format.into())?);
    Ok(())
}

fn print_columns(title: &str, cols: &[(String, stair::eval::experiment::ExperimentReport)], format: OutFormat) -> Result<()> {
    match format {
        OutFormat::Table => print!("{}", comparison_table(title, cols)),
        OutFormat::Json => {
            let v: Vec<_> = cols.iter().map(|(l, r)| serde_json::json!({ "label": l, "report": r })).collect();
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
        OutFormat::Csv => {
            for (i, (label, r)) in cols.iter().enumerate() {
                let text = render(r, Format::Csv)?;
                for (j, line) in text.lines().enumerate() {
                    match (i, j) {
                        (0, 0) => println!("column,{line}"),
                        (_, 0) => {}
                        _ => println!("{label},{line}"),
                    }
                }
            }
        }
    }
    Ok(())
}

fn failures(report: &stair::eval::experiment::ExperimentReport) -> usize {
    report.horizons.iter().filter(|h| !h.is_ok()).count()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let out = args.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
            let report = run_experiment(&cfg, Some(&out))?;
            print_report(&report, args.format)?;
            eprintln!("wrote {}", out.join(&cfg.name).display());
            if failures(&report) > 0 {
                bail!("{} horizon(s) failed", failures(&report));
            }
        }
        Command::AblateStages(args) => {
            let cfg = args.resolve()?;
            let report = run_experiment(&cfg, args.out.as_deref())?;
            print_report(&report, args.format)?;
            if failures(&report) > 0 {
                bail!("{} horizon(s) failed", failures(&report));
            }
        }
        Command::Eval { manifest, format } => {
            let rows = reevaluate(&manifest)?;
            match format {
                OutFormat::Json => println!("{}", serde_json::to_string_pretty(&rows)?),
                OutFormat::Csv => {
                    println!("stage,mse,mae,val_mse,val_mae");
                    for r in &rows {
                        println!("{},{},{},{},{}", r.stage, r.test.mse, r.test.mae, r.val.mse, r.val.mae);
                    }
                }
                OutFormat::Table => {
                    println!("stage  test mse  test mae   val mse   val mae");
                    for r in &rows {
                        println!("{:>5} {:>9.4} {:>9.4} {:>9.4} {:>9.4}", r.stage, r.test.mse, r.test.mae, r.val.mse, r.val.mae);
                    }
                }
            }
        }
        Command::AblateNorm(args) => {
            let cfg = args.resolve()?;
            let cols = ablate_norm(&cfg, args.out.as_deref())?;
            print_columns(&format!("{} normalization", cfg.name), &cols, args.format)?;
        }
        Command::Capacity { run, grid } => {
            let cfg = run.resolve()?;
            if grid {
                let (points, best) = capacity_grid(&cfg)?;
                match run.format {
                    OutFormat::Json => {
                        println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "points": points, "best": best }))?)
                    }
                    _ => {
                        println!("horizon,layers,hidden,val_mse");
                        for p in &points {
                            println!("{},{},{},{}", p.horizon, p.layers, p.hidden, p.val_mse);
                        }
                        for b in &best {
                            eprintln!("best for H={}: layers {} hidden {} (val mse {:.5})", b.horizon, b.layers, b.hidden, b.val_mse);
                        }
                    }
                }
            } else {
                let cols = capacity(&cfg, run.out.as_deref())?;
                print_columns(&format!("{} capacity", cfg.name), &cols, run.format)?;
            }
        }
        Command::Synth(args) => {
            let spec = match &args.spec {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => match args.kind {
                    SynthKind::Shared => SyntheticSpec::shared_rule(args.channels, args.length, args.seed),
                    SynthKind::Distinct => SyntheticSpec::distinct_rules(args.channels, args.length, args.seed),
                    SynthKind::Coupled => SyntheticSpec::cross_coupled(args.channels, args.length, args.kappa, args.seed),
                },
            };
            let series = gen_synthetic(&spec)?;
            write_csv(&series, &args.out)?;
            let spec_path = args.out.with_extension("spec.json");
            std::fs::write(&spec_path, serde_json::to_string_pretty(&spec)? + "\n")
                .with_context(|| format!("writing {}", spec_path.display()))?;
            eprintln!("wrote {} ({} rows, {} channels)", args.out.display(), series.len, series.channels());
        }
        Command::Gradcheck { seed } => {
            let results = run_suite(seed)?;
            for r in &results {
                println!(
                    "{:<24} {:>5} params  max rel error {:.3e}  median {:.3e}  {}",
                    r.name,
                    r.checked,
                    r.max_rel_error,
                    r.median_rel_error,
                    if r.passed() { "ok" } else { "FAIL" }
                );
            }
            let bad = results.iter().filter(|r| !r.passed()).count();
            if bad > 0 {
                bail!("{bad} gradient check(s) above {TOLERANCE:e}");
            }
        }
        Command::Report { path, format, out } => {
            let report = report_from_manifests(&path)?;
            match out {
                Some(dir) => {
                    let written = emit(&report, format.into(), Path::new(&dir))?;
                    eprintln!("wrote {}", written.display());
                }
                None => print_report(&report, format)?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
