//! Trainable parameters and the two-layer propagation model.
//!
//! A node's final representation is `e* = e⁰ ∥ e²`:
//!
//! ```text
//! e¹_x = LeakyReLU(W0 · (e⁰_x + Σ_{n∈N_x} e⁰_n / √(|N_x|·|N_n|)))
//! π_xn = softmax_{n∈S_x}( Vᵀ tanh(P · [e¹_x ∥ e¹_n]) )
//! s_x  = Σ_{n∈S_x} π_xn e¹_n
//! e²_x = LeakyReLU(W1 · (e¹_x + s_x)) + LeakyReLU(W2 · (e¹_x ⊙ s_x))
//! y_ab = ⟨e*_a, e*_b⟩
//! ```
//!
//! The warm-up layer sees the full first-hop neighborhood `N_x`; the
//! attention layer sees the sampled set `S_x` during training and the full
//! neighborhood at evaluation time.

mod backward;
mod forward;
mod grad;

pub use forward::{
    attention_aggregate, attention_normalize, attention_score, predict, warmup_weight, FinalEmbeddings,
    ForwardTrace, TargetTrace,
};
pub use grad::{GradientSet, RowGrad};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

/// Layer widths: `d0` embeddings, `d1` warm-up output, `d2` attention
/// projection, `d3` attention aggregation output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d0: usize,
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
}

impl Dims {
    pub fn uniform(d: usize) -> Self {
        Dims {
            d0: d,
            d1: d,
            d2: d,
            d3: d,
        }
    }

    /// Width of `e* = e⁰ ∥ e²`.
    pub fn final_dim(&self) -> usize {
        self.d0 + self.d3
    }
}

impl Default for Dims {
    fn default() -> Self {
        Dims::uniform(64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: Dims,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dims: Dims::default(),
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }
}

/// The trainable tables, in the fixed order used by checkpoints and optimizers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Table {
    Base,
    UserContext,
    ItemContext,
    W0,
    W1,
    W2,
    V,
    P,
}

impl Table {
    pub const ALL: [Table; 8] = [
        Table::Base,
        Table::UserContext,
        Table::ItemContext,
        Table::W0,
        Table::W1,
        Table::W2,
        Table::V,
        Table::P,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Table::Base => "E",
            Table::UserContext => "E_UC",
            Table::ItemContext => "E_IC",
            Table::W0 => "W0",
            Table::W1 => "W1",
            Table::W2 => "W2",
            Table::V => "V",
            Table::P => "P",
        }
    }

    /// Row-indexed lookup tables (updated lazily by the optimizer).
    pub fn is_embedding(self) -> bool {
        matches!(self, Table::Base | Table::UserContext | Table::ItemContext)
    }
}

/// Base table `E` ((N+M) × d0, users first) and the context tables used only
/// by the similarity loss.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingState {
    pub base: Matrix,
    pub user_context: Matrix,
    pub item_context: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropagationWeights {
    /// d1 × d0
    pub w0: Matrix,
    /// d3 × d1
    pub w1: Matrix,
    /// d3 × d1
    pub w2: Matrix,
    /// d2 × 2·d1; columns `[0, d1)` act on the center node, `[d1, 2·d1)` on the neighbor.
    pub p: Matrix,
    /// d2 × 1
    pub v: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub embeddings: EmbeddingState,
    pub weights: PropagationWeights,
}

impl Params {
    pub fn zeros(dims: Dims, num_users: usize, num_items: usize) -> Self {
        let Dims { d0, d1, d2, d3 } = dims;
        Params {
            embeddings: EmbeddingState {
                base: Matrix::zeros(num_users + num_items, d0),
                user_context: Matrix::zeros(num_users, d0),
                item_context: Matrix::zeros(num_items, d0),
            },
            weights: PropagationWeights {
                w0: Matrix::zeros(d1, d0),
                w1: Matrix::zeros(d3, d1),
                w2: Matrix::zeros(d3, d1),
                p: Matrix::zeros(d2, 2 * d1),
                v: Matrix::zeros(d2, 1),
            },
        }
    }

    /// Glorot-uniform tables, bound `√(6 / (rows + cols))` per table.
    pub fn glorot(dims: Dims, num_users: usize, num_items: usize, seed: u64) -> Result<Self> {
        if num_users == 0 || num_items == 0 {
            return Err(Error::InvalidArgument(format!(
                "need at least one user and one item (got {num_users}, {num_items})"
            )));
        }
        if dims.d0 == 0 || dims.d1 == 0 || dims.d2 == 0 || dims.d3 == 0 {
            return Err(Error::InvalidArgument(format!("all dims must be >= 1, got {dims:?}")));
        }
        let mut params = Params::zeros(dims, num_users, num_items);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for table in Table::ALL {
            let m = params.table_mut(table);
            let bound = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            for x in m.as_mut_slice() {
                *x = dist.sample(&mut rng);
            }
        }
        Ok(params)
    }

    pub fn dims(&self) -> Dims {
        let w = &self.weights;
        Dims {
            d0: w.w0.cols(),
            d1: w.w0.rows(),
            d2: w.p.rows(),
            d3: w.w1.rows(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.embeddings.user_context.rows()
    }

    pub fn num_items(&self) -> usize {
        self.embeddings.item_context.rows()
    }

    pub fn table(&self, table: Table) -> &Matrix {
        match table {
            Table::Base => &self.embeddings.base,
            Table::UserContext => &self.embeddings.user_context,
            Table::ItemContext => &self.embeddings.item_context,
            Table::W0 => &self.weights.w0,
            Table::W1 => &self.weights.w1,
            Table::W2 => &self.weights.w2,
            Table::V => &self.weights.v,
            Table::P => &self.weights.p,
        }
    }

    pub fn table_mut(&mut self, table: Table) -> &mut Matrix {
        match table {
            Table::Base => &mut self.embeddings.base,
            Table::UserContext => &mut self.embeddings.user_context,
            Table::ItemContext => &mut self.embeddings.item_context,
            Table::W0 => &mut self.weights.w0,
            Table::W1 => &mut self.weights.w1,
            Table::W2 => &mut self.weights.w2,
            Table::V => &mut self.weights.v,
            Table::P => &mut self.weights.p,
        }
    }

    /// Expected shape of every table for the given sizes.
    pub fn expected_shape(table: Table, dims: Dims, num_users: usize, num_items: usize) -> (usize, usize) {
        let Dims { d0, d1, d2, d3 } = dims;
        match table {
            Table::Base => (num_users + num_items, d0),
            Table::UserContext => (num_users, d0),
            Table::ItemContext => (num_items, d0),
            Table::W0 => (d1, d0),
            Table::W1 | Table::W2 => (d3, d1),
            Table::V => (d2, 1),
            Table::P => (d2, 2 * d1),
        }
    }

    pub fn check_shapes(&self, dims: Dims, num_users: usize, num_items: usize) -> Result<()> {
        for table in Table::ALL {
            let want = Params::expected_shape(table, dims, num_users, num_items);
            let got = self.table(table).shape();
            if want != got {
                return Err(Error::Shape(format!(
                    "table {} is {}x{}, expected {}x{}",
                    table.name(),
                    got.0,
                    got.1,
                    want.0,
                    want.1
                )));
            }
        }
        Ok(())
    }

    /// ‖Θ‖² over every table.
    pub fn sum_squares(&self) -> f64 {
        Table::ALL.iter().map(|&t| self.table(t).sum_squares()).sum()
    }

    pub fn is_finite(&self) -> bool {
        Table::ALL.iter().all(|&t| self.table(t).is_finite())
    }

    pub fn num_parameters(&self) -> usize {
        Table::ALL.iter().map(|&t| self.table(t).as_slice().len()).sum()
    }
}

/// Parameters plus the hyperparameters the forward pass needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
}

impl Model {
    pub fn new(config: ModelConfig, num_users: usize, num_items: usize, seed: u64) -> Result<Self> {
        Ok(Model {
            config,
            params: Params::glorot(config.dims, num_users, num_items, seed)?,
        })
    }

    pub fn from_params(config: ModelConfig, params: Params) -> Result<Self> {
        params.check_shapes(config.dims, params.num_users(), params.num_items())?;
        Ok(Model { config, params })
    }

    pub fn dims(&self) -> Dims {
        self.config.dims
    }

    pub fn num_users(&self) -> usize {
        self.params.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.params.num_items()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_shapes_and_determinism() {
        let dims = Dims { d0: 4, d1: 3, d2: 2, d3: 5 };
        let a = Params::glorot(dims, 5, 6, 9).unwrap();
        let b = Params::glorot(dims, 5, 6, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, Params::glorot(dims, 5, 6, 10).unwrap());
        a.check_shapes(dims, 5, 6).unwrap();
        assert_eq!(a.dims(), dims);
        assert_eq!(a.embeddings.base.rows(), 11);
        for t in Table::ALL {
            let m = a.table(t);
            let bound = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
            assert!(m.as_slice().iter().all(|x| x.abs() <= bound));
        }
    }

    #[test]
    fn full_scale_base_table_size() {
        let (n, m) = (29_858, 52_643);
        assert_eq!(Params::expected_shape(Table::Base, Dims::default(), n, m), (n + m, 64));
    }

    #[test]
    fn init_rejects_empty_sides_and_zero_dims() {
        assert!(Params::glorot(Dims::uniform(4), 0, 3, 1).is_err());
        assert!(Params::glorot(Dims::uniform(4), 3, 0, 1).is_err());
        assert!(Params::glorot(Dims { d0: 4, d1: 0, d2: 4, d3: 4 }, 3, 3, 1).is_err());
    }

    #[test]
    fn init_mean_is_centered() {
        // Uniform(-b, b): σ = b/√3, so the mean of n draws is within 4σ/√n of 0.
        let p = Params::glorot(Dims::uniform(64), 200, 100, 3).unwrap();
        let e = p.embeddings.base.as_slice();
        let n = e.len() as f64;
        let b = (6.0 / (300.0 + 64.0) as f64).sqrt();
        let mean = e.iter().sum::<f64>() / n;
        assert!(mean.abs() <= 4.0 * (b / 3f64.sqrt()) / n.sqrt(), "{mean}");
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = Params::zeros(Dims::uniform(4), 2, 3);
        let err = p.check_shapes(Dims::uniform(4), 3, 3).unwrap_err();
        assert_eq!(err.category(), "shape");
    }
}
