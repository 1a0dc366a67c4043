mod config;
mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use dominance_core::data::{self, holdout_indices};
use dominance_core::dominance::{load_score_report, write_score_report};
use dominance_core::numerics::derive_seed;
use dominance_core::trainer::accuracy;
use dominance_core::{
    estimate_all, evaluate, train_classifier, train_sae, Dataset, DominanceRecord, EvalReport,
    Provenance, Rng, SaeModel,
};

use config::RunConfig;
use output::{write_output, OutputLock};

const VALIDATION_STREAM: u64 = 100;

/// Process exit categories: configuration problems exit with 2, everything else with 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<dominance_core::Error> for CliError {
    fn from(e: dominance_core::Error) -> Self {
        match e {
            dominance_core::Error::Argument { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "dominance",
    version,
    about = "Sample dominance scoring and weighted training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides the root seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (`.csv` extension selects CSV, anything else the binary format).
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Train the autoencoder (or load one) and write per-trial dominance scores.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        data: Option<PathBuf>,
        /// Score report CSV.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Reuse this autoencoder checkpoint instead of training one.
        #[arg(long)]
        sae: Option<PathBuf>,
        /// Where to save the trained checkpoint (default: the report path with `.sae`).
        #[arg(long)]
        sae_out: Option<PathBuf>,
    },
    /// Train one classifier on a stratified train/validation split and write a JSON summary.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        data: Option<PathBuf>,
        /// Score report; when given, training is dominance weighted.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        crop: bool,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run the baseline/weighted comparison grid over folds and seeds.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        data: Option<PathBuf>,
        /// Report JSON.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Skip the cropped conditions.
        #[arg(long)]
        no_crop: bool,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Summarize a score report and, optionally, an evaluation report.
    Report {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        eval: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Config(msg) => eprintln!("configuration error: {msg}"),
                CliError::Runtime(err) => eprintln!("error: {err:#}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.or_else(|| fallback.clone()).ok_or_else(|| {
        CliError::Config(format!("missing --{name} (or paths.{name} in the config)"))
    })
}

fn load_dataset(path: &Path, cfg: &RunConfig) -> CliResult<Dataset> {
    if !path.exists() {
        return Err(CliError::Config(format!(
            "dataset {} does not exist",
            path.display()
        )));
    }
    let ds = if is_csv(path) {
        data::load_csv(path, cfg.synth.sample_rate_hz)
    } else {
        data::load(path)
    };
    Ok(ds.with_context(|| format!("loading {}", path.display()))?)
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Generate { common, out } => {
            let cfg = load_config(&common)?;
            let out = required(out, &cfg.paths.dataset, "dataset")?;
            cmd_generate(&cfg, &out)
        }
        Command::Score {
            common,
            data,
            out,
            sae,
            sae_out,
        } => {
            let cfg = load_config(&common)?;
            let data = required(data, &cfg.paths.dataset, "dataset")?;
            let out = required(out, &cfg.paths.scores, "scores")?;
            let sae_out = sae_out
                .or_else(|| cfg.paths.sae.clone())
                .unwrap_or_else(|| out.with_extension("sae"));
            cmd_score(&cfg, &data, &out, sae.as_deref(), &sae_out)
        }
        Command::Train {
            common,
            data,
            scores,
            crop,
            out,
        } => {
            let cfg = load_config(&common)?;
            let data = required(data, &cfg.paths.dataset, "dataset")?;
            cmd_train(&cfg, &data, scores.as_deref(), crop, &out)
        }
        Command::Evaluate {
            common,
            data,
            out,
            no_crop,
            folds,
        } => {
            let mut cfg = load_config(&common)?;
            if no_crop {
                cfg.eval.with_crop = false;
            }
            if let Some(f) = folds {
                cfg.eval.folds = f;
            }
            cfg.validate()?;
            let data = required(data, &cfg.paths.dataset, "dataset")?;
            let out = required(out, &cfg.paths.report, "report")?;
            cmd_evaluate(&cfg, &data, &out)
        }
        Command::Report { scores, eval } => cmd_report(&scores, eval.as_deref()),
    }
}

fn cmd_generate(cfg: &RunConfig, out: &Path) -> CliResult {
    let _lock = OutputLock::acquire(out)?;
    let ds = data::generate(&cfg.synth_spec())?;
    let mut bytes = Vec::new();
    if is_csv(out) {
        data::write_csv(&ds, &mut bytes)?;
    } else {
        data::write_dataset(&ds, &mut bytes)?;
    }
    write_output(out, &bytes)?;

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for i in 0..ds.len() {
        *counts
            .entry(ds.provenance_of(i).map_or("unknown", Provenance::as_str))
            .or_default() += 1;
    }
    let summary: Vec<String> = counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!(
        "wrote {} trials ({} classes, {}x{}) to {}: {}",
        ds.len(),
        ds.num_classes,
        ds.channels(),
        ds.time_points(),
        out.display(),
        summary.join(" ")
    );
    Ok(())
}

fn cmd_score(
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    sae: Option<&Path>,
    sae_out: &Path,
) -> CliResult {
    if let Some(p) = sae {
        if !p.exists() {
            return Err(CliError::Config(format!(
                "checkpoint {} does not exist",
                p.display()
            )));
        }
    }
    let ds = load_dataset(data, cfg)?;
    let _lock = OutputLock::acquire(out)?;

    let model = match sae {
        Some(p) => {
            SaeModel::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?
        }
        None => {
            let fit = train_sae(&ds, &cfg.sae, &mut Rng::new(cfg.sae_seed()))?;
            let _sae_lock = OutputLock::acquire(sae_out)?;
            let mut bytes = Vec::new();
            fit.model.write_checkpoint(&mut bytes)?;
            write_output(sae_out, &bytes)?;
            if let (Some(first), Some(last)) = (fit.loss_history.first(), fit.loss_history.last()) {
                println!(
                    "autoencoder: {} epochs, loss {first:.4} -> {last:.4}, saved to {}",
                    fit.loss_history.len(),
                    sae_out.display()
                );
            }
            fit.model
        }
    };
    if model.input_width() != ds.time_points() {
        return Err(CliError::Config(format!(
            "checkpoint expects {} time points, dataset has {}",
            model.input_width(),
            ds.time_points()
        )));
    }

    let records = estimate_all(&ds, &model, &cfg.kde, cfg.threshold)?;
    let mut bytes = Vec::new();
    write_score_report(&records, &mut bytes)?;
    write_output(out, &bytes)?;
    println!("wrote {} scores to {}", records.len(), out.display());
    print!("{}", score_summary(&records));
    Ok(())
}

fn cmd_train(
    cfg: &RunConfig,
    data: &Path,
    scores: Option<&Path>,
    crop: bool,
    out: &Path,
) -> CliResult {
    let ds = load_dataset(data, cfg)?;
    let records = scores
        .map(|p| load_score_report(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let _lock = OutputLock::acquire(out)?;

    let (train_idx, val_idx) = holdout_indices(
        &ds,
        cfg.eval.validation_fraction,
        derive_seed(cfg.seed, VALIDATION_STREAM),
    )?;
    let train = ds.subset(&train_idx);
    let val = ds.subset(&val_idx);
    let train_records: Option<Vec<DominanceRecord>> = match &records {
        None => None,
        Some(recs) => {
            if recs.len() != ds.len() {
                return Err(CliError::Config(format!(
                    "score report has {} rows, dataset has {} trials",
                    recs.len(),
                    ds.len()
                )));
            }
            Some(
                train_idx
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| DominanceRecord {
                        trial_index: k,
                        ..recs[i].clone()
                    })
                    .collect(),
            )
        }
    };

    let train_cfg = cfg.train_config(crop);
    let fit = train_classifier(&train, &val, train_records.as_deref(), &train_cfg)?;
    let val_acc = accuracy(&fit.model, &val, train_cfg.crop.as_ref())?;
    let summary = serde_json::json!({
        "weighted": train_records.is_some(),
        "crop": crop,
        "train_trials": train.len(),
        "validation_trials": val.len(),
        "selected_epoch": fit.selected_epoch,
        "validation_accuracy": val_acc,
        "log_clamps": fit.log_clamps,
        "history": fit.history.iter().map(|e| serde_json::json!({
            "epoch": e.epoch,
            "train_loss": e.train_loss,
            "val_loss": e.val_loss,
        })).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&summary).context("serializing summary")? + "\n";
    write_output(out, text.as_bytes())?;
    println!(
        "{} training: epoch {} selected, validation accuracy {:.2}%",
        if train_records.is_some() {
            "weighted"
        } else {
            "baseline"
        },
        fit.selected_epoch,
        val_acc
    );
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, data: &Path, out: &Path) -> CliResult {
    let ds = load_dataset(data, cfg)?;
    let _lock = OutputLock::acquire(out)?;
    let report = evaluate(&ds, &cfg.eval_config())?;
    let text = report.to_json() + "\n";
    write_output(out, text.as_bytes())?;
    print!("{}", report.table());
    for (mode, delta) in &report.deltas {
        println!("delta {mode}: {delta:+.2}");
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_report(scores: &Path, eval: Option<&Path>) -> CliResult {
    let records =
        load_score_report(scores).with_context(|| format!("loading {}", scores.display()))?;
    println!("{} trials in {}", records.len(), scores.display());
    print!("{}", score_summary(&records));
    if let Some(p) = eval {
        let text =
            std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let report =
            EvalReport::from_json(&text).with_context(|| format!("parsing {}", p.display()))?;
        print!("{}", report.table());
        for (mode, delta) in &report.deltas {
            println!("delta {mode}: {delta:+.2}");
        }
    }
    Ok(())
}

/// Per class: dominant count and mean raw score by provenance.
fn score_summary(records: &[DominanceRecord]) -> String {
    let mut by_class: BTreeMap<usize, Vec<&DominanceRecord>> = BTreeMap::new();
    for r in records {
        by_class.entry(r.class).or_default().push(r);
    }
    let mut out = String::new();
    for (class, recs) in by_class {
        let dominant = recs.iter().filter(|r| r.is_dominant).count();
        let mut line = format!("class {class}: {} trials, {dominant} dominant", recs.len());
        let mut groups: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for r in &recs {
            let key = r.provenance.map_or("all", Provenance::as_str);
            let g = groups.entry(key).or_default();
            g.0 += r.raw_score;
            g.1 += 1;
        }
        for (key, (sum, n)) in groups {
            line += &format!(", {key} mean raw {:.6} (n={n})", sum / n as f64);
        }
        out += &line;
        out.push('\n');
    }
    out
}
