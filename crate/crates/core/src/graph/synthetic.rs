//! Small generated datasets for tests, demos and smoke runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RawInteractions;

/// Block-structured interactions: users and items are cut into `blocks`
/// contiguous groups and each same-block pair is present with probability
/// `within_prob`. Every user gets at least two interactions and every item at
/// least one, both drawn from the node's own block.
pub fn block_interactions(
    num_users: usize,
    num_items: usize,
    blocks: usize,
    within_prob: f64,
    seed: u64,
) -> RawInteractions {
    assert!(blocks >= 1 && blocks <= num_users && blocks <= num_items);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let user_block = |u: usize| u * blocks / num_users;
    let item_block = |i: usize| i * blocks / num_items;
    let block_items: Vec<Vec<usize>> = (0..blocks)
        .map(|b| (0..num_items).filter(|&i| item_block(i) == b).collect())
        .collect();

    let mut adj = vec![Vec::new(); num_users];
    for (u, row) in adj.iter_mut().enumerate() {
        let items = &block_items[user_block(u)];
        for &i in items {
            if rng.gen_bool(within_prob) {
                row.push(i);
            }
        }
        while row.len() < 2.min(items.len()) {
            let i = items[rng.gen_range(0..items.len())];
            if !row.contains(&i) {
                row.push(i);
            }
        }
    }
    for i in 0..num_items {
        if adj.iter().all(|row| !row.contains(&i)) {
            let users: Vec<usize> = (0..num_users).filter(|&u| user_block(u) == item_block(i)).collect();
            adj[users[rng.gen_range(0..users.len())]].push(i);
        }
    }
    RawInteractions::from_pairs(
        adj.into_iter()
            .enumerate()
            .flat_map(|(u, row)| row.into_iter().map(move |i| (format!("u{u}"), format!("i{i}")))),
    )
}

/// Uniform random bipartite graph: each pair present with probability `density`.
pub fn random_interactions(num_users: usize, num_items: usize, density: f64, seed: u64) -> RawInteractions {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for u in 0..num_users {
        for i in 0..num_items {
            if rng.gen_bool(density) {
                pairs.push((format!("u{u}"), format!("i{i}")));
            }
        }
    }
    RawInteractions::from_pairs(pairs)
}
