//! Bipartite user–item interaction data: ingestion, k-core filtering,
//! splitting and the immutable adjacency structure used everywhere else.

mod filter;
mod ingest;
mod split;
pub mod synthetic;

pub use filter::{k_core_filter, ten_core_filter};
pub use ingest::{ingest, parse_interactions, DatasetFormat, RawInteractions};
pub use split::{read_split, split, write_split, SplitConfig, SplitDataset};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which side of the bipartite graph an index refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    User,
    Item,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::User => Side::Item,
            Side::Item => Side::User,
        }
    }
}

/// Immutable bipartite graph stored as two mutually transposed CSR tables.
///
/// Users are indexed `[0, N)` and items `[0, M)`. Where a single index space
/// is needed (the base embedding table), users occupy `[0, N)` and items
/// `[N, N + M)`; see [`InteractionGraph::node`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    user_offsets: Vec<usize>,
    user_items: Vec<usize>,
    item_offsets: Vec<usize>,
    item_users: Vec<usize>,
}

fn build_csr(rows: usize, pairs: impl Iterator<Item = (usize, usize)> + Clone) -> (Vec<usize>, Vec<usize>) {
    let mut offsets = vec![0usize; rows + 1];
    for (r, _) in pairs.clone() {
        offsets[r + 1] += 1;
    }
    for r in 0..rows {
        offsets[r + 1] += offsets[r];
    }
    let mut cursor = offsets.clone();
    let mut cols = vec![0usize; offsets[rows]];
    for (r, c) in pairs {
        cols[cursor[r]] = c;
        cursor[r] += 1;
    }
    for r in 0..rows {
        cols[offsets[r]..offsets[r + 1]].sort_unstable();
    }
    (offsets, cols)
}

impl InteractionGraph {
    /// Build from dense `(user, item)` pairs. Duplicate pairs are an error.
    pub fn from_edges(num_users: usize, num_items: usize, edges: &[(usize, usize)]) -> Result<Self> {
        for &(u, i) in edges {
            if u >= num_users || i >= num_items {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u}, {i}) out of range for {num_users} users, {num_items} items"
                )));
            }
        }
        let (user_offsets, user_items) = build_csr(num_users, edges.iter().copied());
        let (item_offsets, item_users) = build_csr(num_items, edges.iter().map(|&(u, i)| (i, u)));
        for u in 0..num_users {
            let row = &user_items[user_offsets[u]..user_offsets[u + 1]];
            if row.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidArgument(format!("duplicate edge for user {u}")));
            }
        }
        Ok(InteractionGraph {
            num_users,
            num_items,
            user_offsets,
            user_items,
            item_offsets,
            item_users,
        })
    }

    #[inline]
    pub fn num_users(&self) -> usize {
        self.num_users
    }

    #[inline]
    pub fn num_items(&self) -> usize {
        self.num_items
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.user_items.len()
    }

    pub fn num_on(&self, side: Side) -> usize {
        match side {
            Side::User => self.num_users,
            Side::Item => self.num_items,
        }
    }

    /// Sorted item indices of user `u` (N_u).
    #[inline]
    pub fn user_items(&self, u: usize) -> &[usize] {
        &self.user_items[self.user_offsets[u]..self.user_offsets[u + 1]]
    }

    /// Sorted user indices of item `i` (N_i).
    #[inline]
    pub fn item_users(&self, i: usize) -> &[usize] {
        &self.item_users[self.item_offsets[i]..self.item_offsets[i + 1]]
    }

    /// Opposite-side neighbors of `idx` on `side`.
    #[inline]
    pub fn neighbors(&self, side: Side, idx: usize) -> &[usize] {
        match side {
            Side::User => self.user_items(idx),
            Side::Item => self.item_users(idx),
        }
    }

    #[inline]
    pub fn degree(&self, side: Side, idx: usize) -> usize {
        self.neighbors(side, idx).len()
    }

    #[inline]
    pub fn user_degree(&self, u: usize) -> usize {
        self.user_offsets[u + 1] - self.user_offsets[u]
    }

    #[inline]
    pub fn item_degree(&self, i: usize) -> usize {
        self.item_offsets[i + 1] - self.item_offsets[i]
    }

    #[inline]
    pub fn contains(&self, u: usize, i: usize) -> bool {
        self.user_items(u).binary_search(&i).is_ok()
    }

    /// Global node id in `[0, N + M)`.
    #[inline]
    pub fn node(&self, side: Side, idx: usize) -> usize {
        match side {
            Side::User => idx,
            Side::Item => self.num_users + idx,
        }
    }

    /// Inverse of [`InteractionGraph::node`].
    #[inline]
    pub fn locate(&self, node: usize) -> (Side, usize) {
        if node < self.num_users {
            (Side::User, node)
        } else {
            (Side::Item, node - self.num_users)
        }
    }

    /// Edges in user-major, item-ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_users).flat_map(move |u| self.user_items(u).iter().map(move |&i| (u, i)))
    }

    /// Interactions / (N · M).
    pub fn density(&self) -> f64 {
        density(self.num_edges(), self.num_users, self.num_items)
    }
}

pub fn density(interactions: usize, num_users: usize, num_items: usize) -> f64 {
    if num_users == 0 || num_items == 0 {
        return 0.0;
    }
    interactions as f64 / (num_users as f64 * num_items as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposes_agree() {
        let edges = [(0, 1), (0, 0), (1, 1), (2, 0), (2, 2)];
        let g = InteractionGraph::from_edges(3, 3, &edges).unwrap();
        assert_eq!(g.user_items(0), &[0, 1]);
        assert_eq!(g.item_users(1), &[0, 1]);
        for u in 0..3 {
            for i in 0..3 {
                assert_eq!(g.user_items(u).contains(&i), g.item_users(i).contains(&u));
            }
        }
        assert_eq!(g.num_edges(), 5);
        assert_eq!(g.node(Side::Item, 2), 5);
        assert_eq!(g.locate(5), (Side::Item, 2));
    }

    #[test]
    fn density_cases() {
        let full: Vec<_> = (0..3).flat_map(|u| (0..4).map(move |i| (u, i))).collect();
        assert_eq!(InteractionGraph::from_edges(3, 4, &full).unwrap().density(), 1.0);
        assert_eq!(InteractionGraph::from_edges(3, 4, &[]).unwrap().density(), 0.0);
        let d = density(1_027_370, 29_858, 40_981);
        assert!((d * 100.0 - 0.084).abs() < 0.0005, "{d}");
    }

    #[test]
    fn rejects_duplicates_and_out_of_range() {
        assert!(InteractionGraph::from_edges(1, 1, &[(0, 0), (0, 0)]).is_err());
        assert!(InteractionGraph::from_edges(1, 1, &[(0, 1)]).is_err());
    }
}
