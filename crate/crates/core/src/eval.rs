//! Full-ranking top-K evaluation.
//!
//! Every item is scored for every evaluated user; items the user interacted
//! with in training are removed from the candidates; the rest are ranked by
//! descending score with ties broken by ascending item index.
//!
//! NDCG uses binary relevance with a `log2(p + 1)` discount and an ideal DCG
//! truncated at `min(|held-out|, K)` hits.

use std::cmp::Ordering;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::SplitDataset;
use crate::linalg::dot;
use crate::model::FinalEmbeddings;
use crate::{Error, Result};

pub const DEFAULT_K: usize = 20;

/// Anything that can score all items for a user.
pub trait Scorer: Sync {
    fn num_items(&self) -> usize;
    fn score_user(&self, user: usize, out: &mut [f64]);
}

impl Scorer for FinalEmbeddings {
    fn num_items(&self) -> usize {
        FinalEmbeddings::num_items(self)
    }

    fn score_user(&self, user: usize, out: &mut [f64]) {
        let u = self.user(user);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(u, self.item(i));
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Train,
    Validation,
    Test,
}

impl EvalSplit {
    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::Train => "train",
            EvalSplit::Validation => "validation",
            EvalSplit::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub k: usize,
    /// Remove training positives from the candidates (ignored for the train split).
    pub exclude_train: bool,
    /// Also remove validation positives when ranking for the test split.
    pub exclude_validation: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            k: DEFAULT_K,
            exclude_train: true,
            exclude_validation: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: EvalSplit,
    pub k: usize,
    #[serde(rename = "recall")]
    pub recall_at_k: f64,
    #[serde(rename = "ndcg")]
    pub ndcg_at_k: f64,
    #[serde(rename = "users")]
    pub num_users_evaluated: usize,
}

#[inline]
fn key(score: f64) -> f64 {
    if score.is_nan() {
        f64::NEG_INFINITY
    } else {
        score
    }
}

#[inline]
fn rank_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    key(scores[b]).total_cmp(&key(scores[a])).then(a.cmp(&b))
}

fn candidates(num_items: usize, exclude: &[usize]) -> Vec<usize> {
    let mut excluded = vec![false; num_items];
    for &i in exclude {
        if i < num_items {
            excluded[i] = true;
        }
    }
    (0..num_items).filter(|&i| !excluded[i]).collect()
}

/// All non-excluded items, best first.
pub fn rank_scores(scores: &[f64], exclude: &[usize]) -> Vec<usize> {
    let mut items = candidates(scores.len(), exclude);
    items.sort_by(|&a, &b| rank_order(scores, a, b));
    items
}

/// The first `k` entries of [`rank_scores`] without sorting the tail.
pub fn top_k(scores: &[f64], exclude: &[usize], k: usize) -> Vec<usize> {
    let mut items = candidates(scores.len(), exclude);
    let k = k.min(items.len());
    if k == 0 {
        return Vec::new();
    }
    if k < items.len() {
        items.select_nth_unstable_by(k - 1, |&a, &b| rank_order(scores, a, b));
        items.truncate(k);
    }
    items.sort_by(|&a, &b| rank_order(scores, a, b));
    items
}

/// Rank every item for `user`, excluding `exclude`.
pub fn rank_items<S: Scorer + ?Sized>(scorer: &S, user: usize, exclude: &[usize]) -> Vec<usize> {
    let mut scores = vec![0.0; scorer.num_items()];
    scorer.score_user(user, &mut scores);
    rank_scores(&scores, exclude)
}

/// `|top-k ∩ held-out| / |held-out|`; `None` when nothing is held out.
pub fn recall_at_k(ranked: &[usize], held_out: &[usize], k: usize) -> Option<f64> {
    if held_out.is_empty() {
        return None;
    }
    let hits = ranked.iter().take(k).filter(|i| held_out.contains(i)).count();
    Some(hits as f64 / held_out.len() as f64)
}

/// Binary-relevance NDCG@k; `None` when nothing is held out.
pub fn ndcg_at_k(ranked: &[usize], held_out: &[usize], k: usize) -> Option<f64> {
    if held_out.is_empty() {
        return None;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| held_out.contains(i))
        .map(|(p, _)| 1.0 / ((p + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..held_out.len().min(k)).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
    Some(dcg / idcg)
}

/// Per-user `(recall, ndcg)` for the split; `None` for users with nothing held out.
pub fn per_user_metrics<S: Scorer + ?Sized>(
    scorer: &S,
    dataset: &SplitDataset,
    split: EvalSplit,
    options: &EvalOptions,
) -> Result<Vec<Option<(f64, f64)>>> {
    if options.k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let n = dataset.num_users();
    let m = dataset.num_items();
    if scorer.num_items() != m {
        return Err(Error::Shape(format!(
            "scorer ranks {} items, dataset has {m}",
            scorer.num_items()
        )));
    }
    let held_out: Vec<Vec<usize>> = match split {
        EvalSplit::Train => (0..n).map(|u| dataset.train.user_items(u).to_vec()).collect(),
        EvalSplit::Validation => SplitDataset::group_by_user(&dataset.validation, n),
        EvalSplit::Test => SplitDataset::group_by_user(&dataset.test, n),
    };
    let validation = if split == EvalSplit::Test && options.exclude_validation {
        Some(SplitDataset::group_by_user(&dataset.validation, n))
    } else {
        None
    };
    let results = (0..n)
        .into_par_iter()
        .map_init(
            || vec![0.0; m],
            |scores, u| {
                let truth = &held_out[u];
                if truth.is_empty() {
                    return None;
                }
                let mut exclude: Vec<usize> = Vec::new();
                if split != EvalSplit::Train && options.exclude_train {
                    exclude.extend_from_slice(dataset.train.user_items(u));
                }
                if let Some(v) = &validation {
                    exclude.extend_from_slice(&v[u]);
                }
                scorer.score_user(u, scores);
                let top = top_k(scores, &exclude, options.k);
                Some((
                    recall_at_k(&top, truth, options.k).unwrap(),
                    ndcg_at_k(&top, truth, options.k).unwrap(),
                ))
            },
        )
        .collect();
    Ok(results)
}

/// Average Recall@K and NDCG@K over users with at least one held-out item.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    dataset: &SplitDataset,
    split: EvalSplit,
    options: &EvalOptions,
) -> Result<MetricsReport> {
    let per_user = per_user_metrics(scorer, dataset, split, options)?;
    let (mut recall, mut ndcg, mut users) = (0.0, 0.0, 0usize);
    for (r, g) in per_user.into_iter().flatten() {
        recall += r;
        ndcg += g;
        users += 1;
    }
    let denom = users.max(1) as f64;
    Ok(MetricsReport {
        split,
        k: options.k,
        recall_at_k: recall / denom,
        ndcg_at_k: ndcg / denom,
        num_users_evaluated: users,
    })
}

/// Append one row to a metrics CSV, writing the header when the file is new.
pub fn append_metrics_csv(path: impl AsRef<Path>, run: &str, epoch: usize, report: &MetricsReport) -> Result<()> {
    let path = path.as_ref();
    let fresh = !path.exists();
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str("run,epoch,split,k,recall,ndcg,users\n");
    }
    text.push_str(&format!(
        "{run},{epoch},{},{},{},{},{}\n",
        report.split.name(),
        report.k,
        report.recall_at_k,
        report.ndcg_at_k,
        report.num_users_evaluated
    ));
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Epoch-vs-metric table for plotting convergence curves.
pub fn write_plot_tsv(path: impl AsRef<Path>, points: &[(usize, MetricsReport)]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("epoch\tsplit\tk\trecall\tndcg\n");
    for (epoch, r) in points {
        text.push_str(&format!(
            "{epoch}\t{}\t{}\t{}\t{}\n",
            r.split.name(),
            r.k,
            r.recall_at_k,
            r.ndcg_at_k
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
