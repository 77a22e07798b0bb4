use std::fs;
use std::path::Path;

use gacse::checkpoint;
use gacse::eval::{append_metrics_csv, evaluate, write_plot_tsv, EvalOptions, EvalSplit, MetricsReport};
use gacse::graph::{self, k_core_filter, read_split, split, write_split, RawInteractions, SplitConfig};
use gacse::train::{run_ablation, train, TrainConfig, TrainReport, Variant};
use gacse::{Error, Result};
use serde_json::{json, Value};

use crate::{Cli, Command, EvaluateArgs, ExportArgs, PrepareArgs, SplitArg, TrainArgs};

pub const STATS_FILE: &str = "stats.json";
pub const METRICS_CSV: &str = "metrics.csv";

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => ablate(a),
        Command::ExportMetrics(a) => export_metrics(a),
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn summary(raw: &RawInteractions) -> Value {
    let (n, m, x) = (raw.num_users(), raw.num_items(), raw.len());
    let density = graph::density(x, n, m);
    json!({
        "users": n,
        "items": m,
        "interactions": x,
        "density": density,
        "density_pct": density * 100.0,
    })
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let config = SplitConfig {
        train_frac: a.train_frac,
        valid_frac: a.valid_frac,
        seed: a.seed,
    };
    let mut bad = Vec::new();
    if !(a.train_frac > 0.0 && a.train_frac < 1.0) {
        bad.push(format!("train_frac must be in (0, 1), got {}", a.train_frac));
    }
    if !(a.valid_frac > 0.0 && a.valid_frac < 1.0) {
        bad.push(format!("valid_frac must be in (0, 1), got {}", a.valid_frac));
    }
    if a.min_degree == 0 {
        bad.push("min_degree must be at least 1".into());
    }
    if !bad.is_empty() {
        return Err(Error::Config(bad));
    }

    let raw = graph::ingest(&a.data, a.format.into())?;
    let filtered = k_core_filter(&raw, a.min_degree)?;
    let dataset = split(&filtered, &config)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_split(&dataset, &a.out)?;
    let stats = json!({
        "seed": a.seed,
        "min_degree": a.min_degree,
        "raw": summary(&raw),
        "filtered": summary(&filtered),
        "split": {
            "train": dataset.train.num_edges(),
            "validation": dataset.validation.len(),
            "test": dataset.test.len(),
        },
    });
    write_json(&a.out.join(STATS_FILE), &stats)?;
    println!("{}", serde_json::to_string(&stats)?);
    Ok(())
}

/// Defaults, then the config file, then flags.
fn resolve_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut config = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(k) = a.k {
        config.k = k;
    }
    if let Some(e) = a.max_epochs {
        config.max_epochs = e;
    }
    if let Some(id) = &a.run_id {
        config.run_id = id.clone();
    }
    if let Some(ablation) = a.ablation {
        let v = Variant::from(ablation);
        config.no_similarity = v == Variant::NoSimilarity;
        config.no_adaptive_margin = v == Variant::NoAdaptiveMargin;
    }
    config.validate()?;
    Ok(config)
}

fn metrics_json(m: &MetricsReport) -> Result<Value> {
    Ok(serde_json::to_value(m)?)
}

/// Drop earlier rows of `run` so re-running a command leaves one copy.
fn forget_run(csv: &Path, run: &str) -> Result<()> {
    if !csv.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(csv).map_err(|e| Error::io(csv, e))?;
    let kept: String = text
        .lines()
        .enumerate()
        .filter(|(n, l)| *n == 0 || l.split(',').next() != Some(run))
        .map(|(_, l)| format!("{l}\n"))
        .collect();
    fs::write(csv, kept).map_err(|e| Error::io(csv, e))
}

fn record_report(out: &Path, report: &TrainReport) -> Result<()> {
    let csv = out.join(METRICS_CSV);
    forget_run(&csv, &report.run_id)?;
    for e in &report.evaluations {
        append_metrics_csv(&csv, &report.run_id, e.epoch, &e.metrics)?;
    }
    if let Some(t) = &report.test {
        append_metrics_csv(&csv, &report.run_id, report.best_epoch, t)?;
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let config = resolve_config(&a)?;
    let dataset = read_split(&a.data)?;
    let run_dir = a.out.join(&config.run_id);
    let output = train(&dataset, &config, Some(&run_dir))?;
    let report = &output.report;
    record_report(&a.out, report)?;
    let best = report.best_evaluation().map(|e| e.metrics);
    let line = json!({
        "run_id": report.run_id,
        "seed": report.seed,
        "epochs": report.epochs.len(),
        "stop_reason": report.stop_reason,
        "best_epoch": report.best_epoch,
        "validation": best.as_ref().map(metrics_json).transpose()?,
        "test": report.test.as_ref().map(metrics_json).transpose()?,
        "checkpoint": report.best_checkpoint,
    });
    println!("{}", serde_json::to_string(&line)?);
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    if a.k == 0 {
        return Err(Error::InvalidArgument("--k must be at least 1".into()));
    }
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let dataset = read_split(&a.data)?;
    let (n, m) = (ckpt.model.num_users(), ckpt.model.num_items());
    if (n, m) != (dataset.num_users(), dataset.num_items()) {
        return Err(Error::Shape(format!(
            "checkpoint {} holds {n} users x {m} items but dataset {} has {} users x {} items",
            a.checkpoint.display(),
            a.data.display(),
            dataset.num_users(),
            dataset.num_items()
        )));
    }
    let split = match a.split {
        SplitArg::Validation => EvalSplit::Validation,
        SplitArg::Test => EvalSplit::Test,
        SplitArg::Train => EvalSplit::Train,
    };
    let options = EvalOptions {
        k: a.k,
        exclude_validation: a.exclude_validation,
        ..EvalOptions::default()
    };
    let report = evaluate(&ckpt.model.embed_all(&dataset.train)?, &dataset, split, &options)?;
    let value = metrics_json(&report)?;
    if let Some(out) = &a.out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_json(&out.join("metrics.json"), &value)?;
        let run = a.checkpoint.display().to_string();
        forget_run(&out.join(METRICS_CSV), &run)?;
        append_metrics_csv(out.join(METRICS_CSV), &run, ckpt.epoch as usize, &report)?;
    }
    println!("{}", serde_json::to_string(&value)?);
    Ok(())
}

fn ablate(a: TrainArgs) -> Result<()> {
    let config = resolve_config(&a)?;
    let dataset = read_split(&a.data)?;
    let report = run_ablation(&dataset, &config, Some(&a.out))?;
    for r in &report.reports {
        record_report(&a.out, r)?;
    }
    let csv = a.out.join("ablation.csv");
    fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
    write_json(&a.out.join("ablation.json"), &serde_json::to_value(&report)?)?;
    print!("{}", report.to_table());
    Ok(())
}

fn export_metrics(a: ExportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.report).map_err(|e| Error::io(&a.report, e))?;
    let mut run = String::from("run");
    let mut points = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: n + 1,
            msg: e.to_string(),
        })?;
        match v["type"].as_str() {
            Some("config") => {
                if let Some(id) = v["config"]["run_id"].as_str() {
                    run = id.to_string();
                }
            }
            Some("eval") => {
                let epoch = v["epoch"].as_u64().ok_or_else(|| Error::Parse {
                    line: n + 1,
                    msg: "eval line without epoch".into(),
                })?;
                let metrics: MetricsReport = serde_json::from_value(v.clone())?;
                points.push((epoch as usize, metrics));
            }
            _ => {}
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no evaluation lines", a.report.display())));
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let csv = a.out.join(METRICS_CSV);
    if csv.exists() {
        fs::remove_file(&csv).map_err(|e| Error::io(&csv, e))?;
    }
    for (epoch, m) in &points {
        append_metrics_csv(&csv, &run, *epoch, m)?;
    }
    write_plot_tsv(a.out.join("plot.tsv"), &points)?;
    println!("{} evaluations exported to {}", points.len(), a.out.display());
    Ok(())
}
