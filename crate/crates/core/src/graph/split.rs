use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{parse_interactions, DatasetFormat, InteractionGraph, RawInteractions};
use crate::{Error, Result};

pub const TRAIN_FILE: &str = "train.txt";
pub const VALID_FILE: &str = "valid.txt";
pub const TEST_FILE: &str = "test.txt";
pub const USER_IDS_FILE: &str = "user_ids.txt";
pub const ITEM_IDS_FILE: &str = "item_ids.txt";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Fraction of each user's interactions kept for training.
    pub train_frac: f64,
    /// Fraction of the training pairs (global, uniform) moved to validation.
    pub valid_frac: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_frac: 0.8,
            valid_frac: 0.1,
            seed: 2020,
        }
    }
}

/// Train graph plus held-out pairs and the external id tables.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: InteractionGraph,
    pub validation: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

impl SplitDataset {
    pub fn num_users(&self) -> usize {
        self.train.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.train.num_items()
    }

    pub fn num_interactions(&self) -> usize {
        self.train.num_edges() + self.validation.len() + self.test.len()
    }

    /// Held-out items grouped per user, in ascending item order.
    pub fn group_by_user(pairs: &[(usize, usize)], num_users: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); num_users];
        for &(u, i) in pairs {
            out[u].push(i);
        }
        for row in &mut out {
            row.sort_unstable();
        }
        out
    }
}

fn floor_frac(frac: f64, n: usize) -> usize {
    // Tolerate representation error such as 0.29 * 100 = 28.999999999999996.
    (frac * n as f64 + 1e-9).floor() as usize
}

/// Per-user train/test split followed by a global validation carve-out.
///
/// Each user keeps `max(1, floor(train_frac · n))` of its interactions for
/// training. Items left without any training edge get one held-out edge
/// returned to training. Then `floor(valid_frac · |train|)` uniformly chosen
/// training pairs move to validation, skipping pairs whose removal would leave
/// a user or item with no training edge.
pub fn split(raw: &RawInteractions, config: &SplitConfig) -> Result<SplitDataset> {
    let SplitConfig {
        train_frac,
        valid_frac,
        seed,
    } = *config;
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidArgument(format!("train_frac {train_frac} not in (0, 1)")));
    }
    if !(valid_frac > 0.0 && valid_frac < 1.0) {
        return Err(Error::InvalidArgument(format!("valid_frac {valid_frac} not in (0, 1)")));
    }
    if raw.is_empty() {
        return Err(Error::EmptyDataset("nothing to split".into()));
    }

    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut per_user: Vec<Vec<usize>> = Vec::new();
    for (u, i) in raw.iter() {
        let u = *user_index.entry(u).or_insert_with(|| {
            user_ids.push(u.to_string());
            per_user.push(Vec::new());
            user_ids.len() - 1
        });
        let i = *item_index.entry(i).or_insert_with(|| {
            item_ids.push(i.to_string());
            item_ids.len() - 1
        });
        per_user[u].push(i);
    }
    let (num_users, num_items) = (user_ids.len(), item_ids.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (u, items) in per_user.iter_mut().enumerate() {
        if items.len() < 2 {
            return Err(Error::Invariant(format!(
                "user `{}` has {} interaction(s); at least 2 are needed to split",
                user_ids[u],
                items.len()
            )));
        }
        items.shuffle(&mut rng);
        let n_train = floor_frac(train_frac, items.len()).max(1);
        train.extend(items[..n_train].iter().map(|&i| (u, i)));
        test.extend(items[n_train..].iter().map(|&i| (u, i)));
    }

    let mut user_deg = vec![0usize; num_users];
    let mut item_deg = vec![0usize; num_items];
    for &(u, i) in &train {
        user_deg[u] += 1;
        item_deg[i] += 1;
    }
    // Items that only appear in held-out pairs would be cold at evaluation.
    let mut k = 0;
    while k < test.len() {
        let (u, i) = test[k];
        if item_deg[i] == 0 {
            test.remove(k);
            train.push((u, i));
            user_deg[u] += 1;
            item_deg[i] += 1;
        } else {
            k += 1;
        }
    }

    let target = floor_frac(valid_frac, train.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let mut moved = vec![false; train.len()];
    let mut n_moved = 0;
    for idx in order {
        if n_moved == target {
            break;
        }
        let (u, i) = train[idx];
        if user_deg[u] > 1 && item_deg[i] > 1 {
            moved[idx] = true;
            user_deg[u] -= 1;
            item_deg[i] -= 1;
            n_moved += 1;
        }
    }
    let mut validation = Vec::with_capacity(n_moved);
    let mut kept = Vec::with_capacity(train.len() - n_moved);
    for (pair, moved) in train.into_iter().zip(moved) {
        if moved {
            validation.push(pair);
        } else {
            kept.push(pair);
        }
    }
    validation.sort_unstable();
    test.sort_unstable();

    Ok(SplitDataset {
        train: InteractionGraph::from_edges(num_users, num_items, &kept)?,
        validation,
        test,
        user_ids,
        item_ids,
    })
}

fn adjacency_text(num_users: usize, pairs: impl Iterator<Item = (usize, usize)>) -> String {
    let mut rows = vec![Vec::new(); num_users];
    for (u, i) in pairs {
        rows[u].push(i);
    }
    let mut out = String::new();
    for (u, mut items) in rows.into_iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        items.sort_unstable();
        write!(out, "{u}").unwrap();
        for i in items {
            write!(out, " {i}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Write `train.txt`, `valid.txt`, `test.txt` (adjacency lists over dense
/// indices) and `user_ids.txt` / `item_ids.txt` (line `k` holds the external
/// id of dense index `k`).
pub fn write_split(dataset: &SplitDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = dataset.num_users();
    let files = [
        (TRAIN_FILE, adjacency_text(n, dataset.train.edges())),
        (VALID_FILE, adjacency_text(n, dataset.validation.iter().copied())),
        (TEST_FILE, adjacency_text(n, dataset.test.iter().copied())),
        (USER_IDS_FILE, lines(&dataset.user_ids)),
        (ITEM_IDS_FILE, lines(&dataset.item_ids)),
    ];
    for (name, text) in files {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn lines(ids: &[String]) -> String {
    let mut out = String::new();
    for id in ids {
        out.push_str(id);
        out.push('\n');
    }
    out
}

fn read_pairs(path: &Path, num_users: usize, num_items: usize) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let raw = parse_interactions(&text, DatasetFormat::AdjList)?;
    raw.iter()
        .map(|(u, i)| {
            let bad = |what: &str| Error::Parse {
                line: 0,
                msg: format!("{}: {what} index out of range in ({u}, {i})", path.display()),
            };
            let u: usize = u.parse().map_err(|_| bad("user"))?;
            let i: usize = i.parse().map_err(|_| bad("item"))?;
            if u >= num_users {
                return Err(bad("user"));
            }
            if i >= num_items {
                return Err(bad("item"));
            }
            Ok((u, i))
        })
        .collect()
}

/// Load a dataset directory written by [`write_split`].
pub fn read_split(dir: impl AsRef<Path>) -> Result<SplitDataset> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let read_ids = |name: &str| -> Result<Vec<String>> {
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(text.lines().map(str::to_string).collect())
    };
    let user_ids = read_ids(USER_IDS_FILE)?;
    let item_ids = read_ids(ITEM_IDS_FILE)?;
    let (n, m) = (user_ids.len(), item_ids.len());
    let train = read_pairs(&dir.join(TRAIN_FILE), n, m)?;
    let mut validation = read_pairs(&dir.join(VALID_FILE), n, m)?;
    let mut test = read_pairs(&dir.join(TEST_FILE), n, m)?;
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitDataset {
        train: InteractionGraph::from_edges(n, m, &train)?,
        validation,
        test,
        user_ids,
        item_ids,
    })
}
