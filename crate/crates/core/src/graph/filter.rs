use std::collections::{HashMap, VecDeque};

use super::RawInteractions;
use crate::{Error, Result};

/// Maximal subset in which every user and every item has at least `k`
/// interactions, found by iterative peeling. Input order is preserved.
pub fn k_core_filter(raw: &RawInteractions, k: usize) -> Result<RawInteractions> {
    let mut user_ids: HashMap<&str, usize> = HashMap::new();
    let mut item_ids: HashMap<&str, usize> = HashMap::new();
    let mut edges = Vec::with_capacity(raw.len());
    for (u, i) in raw.iter() {
        let nu = user_ids.len();
        let u = *user_ids.entry(u).or_insert(nu);
        let ni = item_ids.len();
        let i = *item_ids.entry(i).or_insert(ni);
        edges.push((u, i));
    }
    let (nu, ni) = (user_ids.len(), item_ids.len());

    // Nodes: users [0, nu), items [nu, nu + ni).
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nu + ni];
    for &(u, i) in &edges {
        adj[u].push(nu + i);
        adj[nu + i].push(u);
    }
    let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut removed = vec![false; nu + ni];
    let mut queue: VecDeque<usize> = (0..nu + ni).filter(|&n| degree[n] < k).collect();
    for &n in &queue {
        removed[n] = true;
    }
    while let Some(n) = queue.pop_front() {
        for &m in &adj[n] {
            if removed[m] {
                continue;
            }
            degree[m] -= 1;
            if degree[m] < k {
                removed[m] = true;
                queue.push_back(m);
            }
        }
    }

    let kept = RawInteractions::from_pairs(
        raw.iter()
            .zip(&edges)
            .filter(|(_, &(u, i))| !removed[u] && !removed[nu + i])
            .map(|((u, i), _)| (u, i)),
    );
    if kept.is_empty() {
        return Err(Error::EmptyDataset(format!("{k}-core of the input is empty")));
    }
    Ok(kept)
}

/// The 10-core used by the standard benchmark protocol.
pub fn ten_core_filter(raw: &RawInteractions) -> Result<RawInteractions> {
    k_core_filter(raw, 10)
}
