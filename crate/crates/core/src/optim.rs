//! Mini-batch Adam with lazy row updates for the embedding tables.

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::model::{GradientSet, Params, Table};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Lazy mode: embedding rows without gradient this step keep their
    /// parameters and moments untouched. Dense weights are always updated.
    pub sparse: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            sparse: true,
        }
    }
}

/// First/second moment accumulators for every table, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &Params, config: AdamConfig) -> Self {
        let zeros = || {
            Table::ALL
                .iter()
                .map(|&t| {
                    let (r, c) = params.table(t).shape();
                    Matrix::zeros(r, c)
                })
                .collect()
        };
        AdamState {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Rebuild from saved moments (table order of [`Table::ALL`]).
    pub fn from_parts(config: AdamConfig, t: u64, m: Vec<Matrix>, v: Vec<Matrix>, params: &Params) -> Result<Self> {
        if m.len() != Table::ALL.len() || v.len() != Table::ALL.len() {
            return Err(Error::Shape("optimizer state must hold one moment pair per table".into()));
        }
        for (k, &table) in Table::ALL.iter().enumerate() {
            let want = params.table(table).shape();
            if m[k].shape() != want || v[k].shape() != want {
                return Err(Error::Shape(format!("optimizer moments for {} have wrong shape", table.name())));
            }
        }
        Ok(AdamState { config, t, m, v })
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// All first and second moments, in [`Table::ALL`] order.
    pub fn moment_tables(&self) -> (&[Matrix], &[Matrix]) {
        (&self.m, &self.v)
    }

    pub fn moments(&self, table: Table) -> (&Matrix, &Matrix) {
        let k = Table::ALL.iter().position(|&t| t == table).unwrap();
        (&self.m[k], &self.v[k])
    }

    /// Apply one bias-corrected update. Rejects non-finite gradients before
    /// touching any state.
    pub fn step(&mut self, params: &mut Params, grads: &GradientSet) -> Result<()> {
        if let Some((table, idx, value)) = grads.first_non_finite() {
            let cols = grads.table(table).cols().max(1);
            return Err(Error::NonFinite(format!(
                "gradient of {} at row {}, col {} is {value}",
                table.name(),
                idx / cols,
                idx % cols
            )));
        }
        let AdamConfig {
            learning_rate: lr,
            beta1,
            beta2,
            epsilon,
            sparse,
        } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);

        let update = |theta: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
            for k in 0..theta.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                theta[k] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        };

        for (k, &table) in Table::ALL.iter().enumerate() {
            let grad = grads.table(table);
            let theta = params.table_mut(table);
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            match grads.rows(table) {
                Some(rows) if sparse => {
                    for &r in rows.touched() {
                        let g = grad.row(r);
                        if g.iter().all(|&x| x == 0.0) {
                            continue;
                        }
                        update(theta.row_mut(r), m.row_mut(r), v.row_mut(r), g);
                    }
                }
                _ => update(theta.as_mut_slice(), m.as_mut_slice(), v.as_mut_slice(), grad.as_slice()),
            }
        }
        Ok(())
    }
}
