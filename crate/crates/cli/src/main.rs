//! `alignnet`: simulate listening experiments, train regimens, evaluate,
//! compare and export alignment curves.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use alignnet::io::{self, Manifest};
use alignnet::metrics::{self, CompareSettings, EvalReport};
use alignnet::model::Estimator;
use alignnet::plot::render_alignment_svg;
use alignnet::sim::SimulationConfig;
use alignnet::training::{train_regimen, RegimenKind, TrainConfig};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "alignnet", version, about = "Multi-dataset score alignment experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Seed for simulation, initialization, shuffling and bootstrap.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate experiments into dataset CSVs, a manifest and an oracle file.
    Simulate {
        /// Simulation config (TOML); the four-experiment benchmark when absent.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one regimen; writes `<out>/<regimen>-seed<seed>/`.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_parser = parse_regimen)]
        regimen: RegimenKind,
        /// Dataset name, required by `individual`.
        #[arg(long)]
        dataset: Option<String>,
        /// Training config (TOML); defaults for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score a checkpoint on every test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        oracle: Option<PathBuf>,
    },
    /// Significance of evaluation A against evaluation B.
    Compare {
        /// Evaluation directory of the candidate.
        a: PathBuf,
        /// Evaluation directory of the baseline.
        b: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n_boot: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
    },
    /// Sample each dataset's alignment function and plot it.
    ExportAlignments {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long)]
        oracle: Option<PathBuf>,
    },
}

fn parse_regimen(s: &str) -> Result<RegimenKind, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = RegimenKind::ALL.iter().map(|r| r.as_str()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

/// Refuses to overwrite `path` unless forced.
fn guard(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!("{} already exists (use --force to overwrite)", path.display());
    }
    Ok(())
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn simulate(g: &Global, config: Option<&Path>) -> Result<()> {
    let cfg = match config {
        Some(p) => io::read_simulation_config(p)?,
        None => SimulationConfig::benchmark(),
    };
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    guard(&out.join("manifest.toml"), g.force)?;
    let seed = g.seed.unwrap_or(0);
    let manifest = io::write_simulation(&cfg, seed, &out, concat!("alignnet ", env!("CARGO_PKG_VERSION")))?;
    println!(
        "simulated {} datasets into {} (seed {seed})",
        manifest.dataset.len(),
        out.display()
    );
    Ok(())
}

fn train(
    g: &Global,
    manifest_path: &Path,
    regimen: RegimenKind,
    dataset: Option<&str>,
    config: Option<&Path>,
) -> Result<()> {
    let mut cfg: TrainConfig = match config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).map_err(|e| anyhow!("{}: {}", p.display(), e.message()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if regimen == RegimenKind::Individual && dataset.is_none() {
        eprintln!("error: --regimen individual requires --dataset <name>");
        std::process::exit(2);
    }
    let (_, collection) = io::load_manifest_collection(manifest_path)?;
    let index = match (regimen, dataset) {
        (RegimenKind::Individual, Some(name)) => Some(
            collection
                .index_of(name)
                .ok_or_else(|| anyhow!("dataset {name} is not in the manifest"))?,
        ),
        (_, Some(_)) => bail!("--dataset only applies to --regimen individual"),
        (_, None) => None,
    };
    let name = match dataset {
        Some(d) => format!("{regimen}-{d}-seed{}", cfg.seed),
        None => format!("{regimen}-seed{}", cfg.seed),
    };
    let run = g.out.clone().unwrap_or_else(|| PathBuf::from("runs")).join(name);
    guard(&run, g.force)?;
    let outcome = train_regimen(regimen, &collection, &cfg, index)?;
    fs::create_dir_all(&run).with_context(|| format!("creating {}", run.display()))?;
    io::write_checkpoint(&run.join("checkpoint.json"), &outcome.checkpoint)?;
    write(&run.join("train_log.jsonl"), &io::log_jsonl(&outcome.log)?)?;
    write(&run.join("train_config.toml"), &toml::to_string(&cfg)?)?;
    println!("trained {regimen} for {} epochs into {}", outcome.log.len(), run.display());
    Ok(())
}

fn evaluate(g: &Global, checkpoint: &Path, manifest_path: &Path, oracle: Option<&Path>) -> Result<()> {
    let ckpt = io::read_checkpoint(checkpoint)?;
    let (_, collection) = io::load_manifest_collection(manifest_path)?;
    if ckpt.datasets != collection.names() && ckpt.regimen != RegimenKind::Individual {
        bail!(
            "checkpoint was trained on datasets {:?}, manifest lists {:?}",
            ckpt.datasets,
            collection.names()
        );
    }
    let oracle = oracle.map(io::read_oracle).transpose()?;
    let estimator = &ckpt.estimator;
    let (report, rows) = metrics::evaluate_with(
        ckpt.regimen.label(),
        &collection,
        oracle.as_ref(),
        |x, i| Ok(estimator.predict(x, i)?.to_vec()),
        |x| Ok(estimator.intermediate(x)?.to_vec()),
    )?;
    let out = g
        .out
        .clone()
        .unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    guard(&out.join("report.json"), g.force)?;
    fs::create_dir_all(&out)?;
    write(&out.join("report.json"), &io::to_json(&report)?)?;
    let table = metrics::render_table(std::slice::from_ref(&report));
    write(&out.join("report.txt"), &table)?;
    write(&out.join("predictions.csv"), &io::predictions_csv(&rows)?)?;
    print!("{table}");
    Ok(())
}

fn compare(g: &Global, a: &Path, b: &Path, n_boot: usize, level: f64) -> Result<()> {
    let load = |dir: &Path| -> Result<(EvalReport, Vec<metrics::PredictionRow>)> {
        let report: EvalReport = io::read_json(&dir.join("report.json"))?;
        let rows = io::read_predictions(&dir.join("predictions.csv"))?;
        Ok((report, rows))
    };
    let (mut ra, pa) = load(a)?;
    let (rb, pb) = load(b)?;
    let settings = CompareSettings {
        level,
        n_boot,
        seed: g.seed.unwrap_or(0),
    };
    let mut label_b = rb.label.clone();
    if label_b == ra.label {
        label_b.push_str(" (B)");
    }
    let entries = metrics::compare_predictions(&ra.label, &pa, &label_b, &pb, settings)?;
    ra.significance = entries.clone();
    let rb = EvalReport { label: label_b, ..rb };
    let mut text = metrics::render_table(&[ra, rb]);
    text.push('\n');
    for e in &entries {
        text.push_str(&format!(
            "{:<10} {:<5} diff {:+.4}  CI [{:+.4}, {:+.4}]{}\n",
            e.dataset,
            e.metric,
            e.difference,
            e.ci.low,
            e.ci.high,
            if e.improvement {
                "  improvement"
            } else if e.significant {
                "  worse"
            } else {
                ""
            }
        ));
    }
    if let Some(out) = &g.out {
        guard(&out.join("comparison.json"), g.force)?;
        fs::create_dir_all(out)?;
        write(&out.join("comparison.json"), &io::to_json(&entries)?)?;
        write(&out.join("comparison.txt"), &text)?;
    }
    print!("{text}");
    Ok(())
}

fn export_alignments(
    g: &Global,
    checkpoint: &Path,
    manifest_path: &Path,
    grid: usize,
    oracle: Option<&Path>,
) -> Result<()> {
    let ckpt = io::read_checkpoint(checkpoint)?;
    let Estimator::Aligned(model) = &ckpt.estimator else {
        bail!("checkpoint {} has no alignment network", checkpoint.display());
    };
    let manifest = Manifest::read(manifest_path)?;
    let collection = manifest.load_collection(manifest_path)?;
    if ckpt.datasets != collection.names() {
        bail!("checkpoint datasets {:?} differ from manifest {:?}", ckpt.datasets, collection.names());
    }
    if grid < 2 {
        bail!("--grid must be at least 2");
    }
    let curves = metrics::alignment_curves(model, &collection, grid)?;
    let oracle = oracle.map(io::read_oracle).transpose()?;
    let out = g
        .out
        .clone()
        .unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    guard(&out.join("curves.csv"), g.force)?;
    fs::create_dir_all(&out)?;
    write(&out.join("curves.csv"), &io::curves_csv(&curves)?)?;
    write(&out.join("alignments.svg"), &render_alignment_svg(&curves, oracle.as_ref()))?;
    for c in &curves {
        let (lo, hi) = c.range().unwrap_or((f64::NAN, f64::NAN));
        match oracle.as_ref().and_then(|o| o.experiment(&c.dataset)) {
            Some(exp) => println!(
                "{}: [{lo:.3}, {hi:.3}] max deviation from distortion {:.3}",
                c.dataset,
                c.max_deviation(&exp.distortion)
            ),
            None => println!("{}: [{lo:.3}, {hi:.3}]", c.dataset),
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate { config } => simulate(g, config.as_deref()),
        Command::Train {
            manifest,
            regimen,
            dataset,
            config,
        } => train(g, manifest, *regimen, dataset.as_deref(), config.as_deref()),
        Command::Evaluate {
            checkpoint,
            manifest,
            oracle,
        } => evaluate(g, checkpoint, manifest, oracle.as_deref()),
        Command::Compare { a, b, n_boot, level } => compare(g, a, b, *n_boot, *level),
        Command::ExportAlignments {
            checkpoint,
            manifest,
            grid,
            oracle,
        } => export_alignments(g, checkpoint, manifest, *grid, oracle.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
