//! Epoch loop, periodic validation, early stopping, checkpoints and the
//! ablation driver.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::eval::{evaluate, EvalOptions, EvalSplit, MetricsReport, DEFAULT_K};
use crate::graph::SplitDataset;
use crate::model::{Dims, GradientSet, Model, ModelConfig, DEFAULT_LEAKY_SLOPE};
use crate::objective::{batch_loss_and_grad, BprForm, L2Scope, LossBreakdown, LossConfig};
use crate::optim::{AdamConfig, AdamState};
use crate::sampling::{MiniBatch, Sampler, SamplingConfig, DEFAULT_MAX_RETRIES};
use crate::{Error, Result};

pub const REPORT_FILE: &str = "report.jsonl";
pub const BEST_CHECKPOINT: &str = "best.bin";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.bin";

/// Stream of the sampling RNG; stream 0 of the same seed initializes parameters.
const SAMPLING_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dims: Dims,
    pub batch_size: usize,
    pub fan_in: usize,
    pub num_pos: usize,
    pub num_neg: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Validate every this many epochs.
    pub eval_every: usize,
    /// Evaluations without a validation Recall@K improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub k: usize,
    pub no_similarity: bool,
    pub no_adaptive_margin: bool,
    pub leaky_slope: f64,
    pub detach_margin: bool,
    pub bpr_form: BprForm,
    pub l2_scope: L2Scope,
    pub sparse_adam: bool,
    pub max_retries: usize,
    pub warmup_cap: Option<usize>,
    pub run_id: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        TrainConfig {
            dims: Dims::default(),
            batch_size: 1024,
            fan_in: 64,
            num_pos: 5,
            num_neg: 5,
            lambda1: loss.lambda1,
            lambda2: loss.lambda2,
            learning_rate: AdamConfig::default().learning_rate,
            max_epochs: 400,
            eval_every: 10,
            patience: 5,
            seed: 2020,
            k: DEFAULT_K,
            no_similarity: false,
            no_adaptive_margin: false,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            detach_margin: loss.detach_margin,
            bpr_form: BprForm::default(),
            l2_scope: L2Scope::default(),
            sparse_adam: true,
            max_retries: DEFAULT_MAX_RETRIES,
            warmup_cap: None,
            run_id: "run".into(),
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: TrainConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Collects every invalid field instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let Dims { d0, d1, d2, d3 } = self.dims;
        for (name, v) in [("dims.d0", d0), ("dims.d1", d1), ("dims.d2", d2), ("dims.d3", d3)] {
            if v == 0 {
                bad.push(format!("{name} must be at least 1"));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("fan_in", self.fan_in),
            ("num_pos", self.num_pos),
            ("num_neg", self.num_neg),
            ("eval_every", self.eval_every),
            ("patience", self.patience),
            ("k", self.k),
            ("max_retries", self.max_retries),
        ] {
            if v == 0 {
                bad.push(format!("{name} must be at least 1"));
            }
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v.is_finite() && v >= 0.0) {
                bad.push(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            bad.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !self.leaky_slope.is_finite() {
            bad.push(format!("leaky_slope must be finite, got {}", self.leaky_slope));
        }
        if self.warmup_cap == Some(0) {
            bad.push("warmup_cap must be at least 1 when set".into());
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            bad.push(format!("run_id must be a non-empty file name, got {:?}", self.run_id));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dims: self.dims,
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn sampling_config(&self) -> SamplingConfig {
        SamplingConfig {
            batch_size: self.batch_size,
            fan_in: self.fan_in,
            num_pos: self.num_pos,
            num_neg: self.num_neg,
            max_retries: self.max_retries,
            warmup_cap: self.warmup_cap,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            no_similarity: self.no_similarity,
            no_adaptive_margin: self.no_adaptive_margin,
            detach_margin: self.detach_margin,
            bpr_form: self.bpr_form,
            l2_scope: self.l2_scope,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            sparse: self.sparse_adam,
            ..AdamConfig::default()
        }
    }
}

/// Mean loss components over one epoch's steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub metrics: MetricsReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub run_id: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub evaluations: Vec<EvalRecord>,
    pub best_epoch: usize,
    pub best_recall: f64,
    pub best_checkpoint: Option<PathBuf>,
    /// Test metrics of the best model, when the dataset has a test split.
    pub test: Option<MetricsReport>,
    pub stop_reason: StopReason,
}

impl TrainReport {
    pub fn best_evaluation(&self) -> Option<&EvalRecord> {
        self.evaluations.iter().find(|e| e.epoch == self.best_epoch)
    }
}

pub struct TrainOutput {
    pub report: TrainReport,
    pub best_model: Model,
    pub final_model: Model,
}

/// Progress notifications; handy for logging and for tests that need
/// per-step detail the report does not keep.
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Initialized { model: &'a Model },
    Step { epoch: usize, step: usize, loss: &'a LossBreakdown },
    Epoch { record: &'a EpochRecord, model: &'a Model },
    Evaluation(&'a EvalRecord),
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ReportLine<'a> {
    Config { config: &'a TrainConfig },
    Epoch(&'a EpochRecord),
    Eval {
        epoch: usize,
        #[serde(flatten)]
        metrics: &'a MetricsReport,
    },
    Summary(&'a TrainReport),
}

struct Artifacts {
    dir: PathBuf,
    report: File,
    last_periodic: Option<PathBuf>,
}

impl Artifacts {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(REPORT_FILE);
        let report = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            report,
            last_periodic: None,
        })
    }

    fn line(&mut self, line: &ReportLine) -> Result<()> {
        let mut text = serde_json::to_string(line)?;
        text.push('\n');
        let path = self.dir.join(REPORT_FILE);
        self.report.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Keeps only the latest periodic checkpoint on disk.
    fn periodic(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let path = self.dir.join(format!("ckpt_{}.bin", ckpt.epoch));
        checkpoint::save(&path, ckpt)?;
        if let Some(old) = self.last_periodic.replace(path.clone()) {
            if old != path {
                fs::remove_file(&old).map_err(|e| Error::io(&old, e))?;
            }
        }
        Ok(())
    }
}

fn snapshot(model: &Model, seed: u64, epoch: usize, optimizer: Option<&AdamState>) -> Checkpoint {
    Checkpoint {
        model: model.clone(),
        seed,
        epoch: epoch as u64,
        optimizer: optimizer.cloned(),
    }
}

pub fn train(dataset: &SplitDataset, config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutput> {
    train_with(dataset, config, out_dir, |_| {})
}

/// [`train`] with a callback invoked on every [`TrainEvent`].
pub fn train_with<F>(
    dataset: &SplitDataset,
    config: &TrainConfig,
    out_dir: Option<&Path>,
    mut observe: F,
) -> Result<TrainOutput>
where
    F: FnMut(TrainEvent<'_>),
{
    config.validate()?;
    let graph = &dataset.train;
    if graph.num_edges() == 0 {
        return Err(Error::EmptyDataset("training graph has no edges".into()));
    }
    let mut artifacts = out_dir.map(Artifacts::create).transpose()?;
    if let Some(a) = artifacts.as_mut() {
        a.line(&ReportLine::Config { config })?;
    }

    let mut model = Model::new(config.model_config(), graph.num_users(), graph.num_items(), config.seed)?;
    let mut adam = AdamState::new(&model.params, config.adam_config());
    let sampler = Sampler::new(config.sampling_config());
    let loss_config = config.loss_config();
    let eval_options = EvalOptions {
        k: config.k,
        ..EvalOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SAMPLING_STREAM);
    let mut grads = GradientSet::zeros_like(&model.params);
    observe(TrainEvent::Initialized { model: &model });

    let steps_per_epoch = graph.num_edges().div_ceil(config.batch_size);
    let mut epochs = Vec::new();
    let mut evaluations = Vec::new();
    let mut best_model = model.clone();
    let mut best_epoch = 0;
    let mut best_recall = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut best_checkpoint = None;
    let mut stop_reason = StopReason::MaxEpochs;

    let mut epoch = 0;
    loop {
        let due = epoch % config.eval_every == 0 || epoch == config.max_epochs;
        if due {
            let metrics = evaluate(&model.embed_all(graph)?, dataset, EvalSplit::Validation, &eval_options)?;
            let record = EvalRecord { epoch, metrics };
            observe(TrainEvent::Evaluation(&record));
            evaluations.push(record);
            let improved = metrics.recall_at_k > best_recall;
            if improved {
                best_recall = metrics.recall_at_k;
                best_epoch = epoch;
                best_model = model.clone();
                stale = 0;
            } else {
                stale += 1;
            }
            if let Some(a) = artifacts.as_mut() {
                a.line(&ReportLine::Eval {
                    epoch,
                    metrics: &metrics,
                })?;
                a.periodic(&snapshot(&model, config.seed, epoch, Some(&adam)))?;
                if improved {
                    let path = a.dir.join(BEST_CHECKPOINT);
                    checkpoint::save(&path, &snapshot(&model, config.seed, epoch, None))?;
                    best_checkpoint = Some(path);
                }
            }
            if stale >= config.patience {
                stop_reason = StopReason::EarlyStopping;
                break;
            }
        }
        if epoch == config.max_epochs {
            break;
        }
        epoch += 1;

        let mut sum = LossBreakdown::new(0.0, 0.0, 0.0, config.lambda1, config.lambda2);
        let mut next: Result<MiniBatch> = sampler.sample_batch(graph, &mut rng);
        for step in 0..steps_per_epoch {
            let batch = next?;
            // The next batch depends only on the graph and the RNG, so it can
            // be drawn while this step computes.
            let prefetch = step + 1 < steps_per_epoch;
            let (sampled, stepped) = rayon::join(
                || prefetch.then(|| sampler.sample_batch(graph, &mut rng)),
                || -> Result<LossBreakdown> {
                    grads.clear();
                    batch_loss_and_grad(&model, graph, &batch, &loss_config, &mut grads)
                },
            );
            let loss = stepped?;
            if !loss.is_finite() {
                if let Some(a) = artifacts.as_ref() {
                    let path = a.dir.join(LAST_GOOD_CHECKPOINT);
                    checkpoint::save(&path, &snapshot(&model, config.seed, epoch - 1, Some(&adam)))?;
                }
                return Err(Error::NonFinite(format!(
                    "loss at epoch {epoch}, step {step}: bpr {}, similarity {}, l2 {}",
                    loss.bpr, loss.similarity, loss.l2
                )));
            }
            adam.step(&mut model.params, &grads)?;
            observe(TrainEvent::Step {
                epoch,
                step,
                loss: &loss,
            });
            sum.bpr += loss.bpr;
            sum.similarity += loss.similarity;
            sum.l2 += loss.l2;
            next = sampled.unwrap_or_else(|| Ok(MiniBatch::default()));
        }
        let n = steps_per_epoch as f64;
        let record = EpochRecord {
            epoch,
            steps: steps_per_epoch,
            loss: LossBreakdown::new(sum.bpr / n, sum.similarity / n, sum.l2 / n, config.lambda1, config.lambda2),
        };
        observe(TrainEvent::Epoch {
            record: &record,
            model: &model,
        });
        if let Some(a) = artifacts.as_mut() {
            a.line(&ReportLine::Epoch(&record))?;
        }
        epochs.push(record);
    }

    let test = if dataset.test.is_empty() {
        None
    } else {
        Some(evaluate(&best_model.embed_all(graph)?, dataset, EvalSplit::Test, &eval_options)?)
    };
    let report = TrainReport {
        run_id: config.run_id.clone(),
        seed: config.seed,
        epochs,
        evaluations,
        best_epoch,
        best_recall,
        best_checkpoint,
        test,
        stop_reason,
    };
    if let Some(a) = artifacts.as_mut() {
        a.line(&ReportLine::Summary(&report))?;
    }
    Ok(TrainOutput {
        report,
        best_model,
        final_model: model,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoSimilarity,
    NoAdaptiveMargin,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoSimilarity, Variant::NoAdaptiveMargin];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "GACSE",
            Variant::NoSimilarity => "GACSE-sl",
            Variant::NoAdaptiveMargin => "GACSE-am",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSimilarity => "no_similarity",
            Variant::NoAdaptiveMargin => "no_adaptive_margin",
        }
    }

    /// `base` with this variant's switches applied (the others cleared).
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        c.no_similarity = self == Variant::NoSimilarity;
        c.no_adaptive_margin = self == Variant::NoAdaptiveMargin;
        c.run_id = format!("{}_{}", base.run_id, self.slug());
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    /// Metrics the comparison is based on: test when available, else best validation.
    pub metrics: MetricsReport,
    pub recall_delta_pct: f64,
    pub ndcg_delta_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
    pub reports: Vec<TrainReport>,
}

/// `(variant − full) / full` in percent; 0 when the full value is 0.
pub fn relative_delta_pct(variant: f64, full: f64) -> f64 {
    if full == 0.0 {
        0.0
    } else {
        (variant - full) / full * 100.0
    }
}

fn headline(report: &TrainReport) -> MetricsReport {
    report
        .test
        .or_else(|| report.best_evaluation().map(|e| e.metrics))
        .expect("training always evaluates at least once")
}

/// Train the full model and both ablations from the same seed.
pub fn run_ablation(dataset: &SplitDataset, config: &TrainConfig, out_dir: Option<&Path>) -> Result<AblationReport> {
    config.validate()?;
    let mut reports = Vec::new();
    for variant in Variant::ALL {
        let c = variant.apply(config);
        let dir = out_dir.map(|d| d.join(&c.run_id));
        reports.push(train(dataset, &c, dir.as_deref())?.report);
    }
    let full = headline(&reports[0]);
    let rows = Variant::ALL
        .iter()
        .zip(&reports)
        .map(|(&variant, r)| {
            let m = headline(r);
            AblationRow {
                variant,
                seed: r.seed,
                metrics: m,
                recall_delta_pct: relative_delta_pct(m.recall_at_k, full.recall_at_k),
                ndcg_delta_pct: relative_delta_pct(m.ndcg_at_k, full.ndcg_at_k),
            }
        })
        .collect();
    Ok(AblationReport {
        seed: config.seed,
        rows,
        reports,
    })
}

impl AblationReport {
    /// Fixed-width comparison table, deltas in parentheses.
    pub fn to_table(&self) -> String {
        let k = self.rows.first().map_or(DEFAULT_K, |r| r.metrics.k);
        let mut out = format!("{:<10} {:>20} {:>20}\n", "model", format!("recall@{k}"), format!("ndcg@{k}"));
        for r in &self.rows {
            let cell = |v: f64, d: f64| {
                if r.variant == Variant::Full {
                    format!("{v:.4}")
                } else {
                    format!("{v:.4} ({d:+.2}%)")
                }
            };
            out.push_str(&format!(
                "{:<10} {:>20} {:>20}\n",
                r.variant.label(),
                cell(r.metrics.recall_at_k, r.recall_delta_pct),
                cell(r.metrics.ndcg_at_k, r.ndcg_delta_pct)
            ));
        }
        out.push_str(&format!("seed {} shared by all variants\n", self.seed));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,seed,k,recall,ndcg,recall_delta_pct,ndcg_delta_pct\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.variant.label(),
                r.seed,
                r.metrics.k,
                r.metrics.recall_at_k,
                r.metrics.ndcg_at_k,
                r.recall_delta_pct,
                r.ndcg_delta_pct
            ));
        }
        out
    }
}
