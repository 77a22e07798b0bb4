use super::{Params, Table};
use crate::linalg::Matrix;

/// Gradient buffer for a row-indexed table that remembers which rows were
/// written, so clearing and lazy updates cost O(touched rows).
#[derive(Clone, Debug)]
pub struct RowGrad {
    grad: Matrix,
    touched: Vec<usize>,
    mark: Vec<bool>,
}

impl RowGrad {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RowGrad {
            grad: Matrix::zeros(rows, cols),
            touched: Vec::new(),
            mark: vec![false; rows],
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.grad
    }

    /// Mutable row access; marks the row as touched.
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        if !self.mark[r] {
            self.mark[r] = true;
            self.touched.push(r);
        }
        self.grad.row_mut(r)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.grad.row(r)
    }

    /// Touched rows in first-touch order.
    pub fn touched(&self) -> &[usize] {
        &self.touched
    }

    pub fn is_touched(&self, r: usize) -> bool {
        self.mark[r]
    }

    pub fn touch_all(&mut self) {
        for r in 0..self.grad.rows() {
            if !self.mark[r] {
                self.mark[r] = true;
                self.touched.push(r);
            }
        }
    }

    pub fn clear(&mut self) {
        let cols = self.grad.cols();
        if self.touched.len() * 4 > self.grad.rows() {
            self.grad.fill(0.0);
            self.mark.iter_mut().for_each(|m| *m = false);
        } else {
            for &r in &self.touched {
                self.grad.as_mut_slice()[r * cols..(r + 1) * cols].fill(0.0);
                self.mark[r] = false;
            }
        }
        self.touched.clear();
    }
}

/// One accumulator per trainable table; shapes mirror [`Params`].
#[derive(Clone, Debug)]
pub struct GradientSet {
    pub base: RowGrad,
    pub user_context: RowGrad,
    pub item_context: RowGrad,
    pub w0: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
    pub v: Matrix,
    pub p: Matrix,
}

impl GradientSet {
    pub fn zeros_like(params: &Params) -> Self {
        let rg = |m: &Matrix| RowGrad::zeros(m.rows(), m.cols());
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        let e = &params.embeddings;
        let w = &params.weights;
        GradientSet {
            base: rg(&e.base),
            user_context: rg(&e.user_context),
            item_context: rg(&e.item_context),
            w0: z(&w.w0),
            w1: z(&w.w1),
            w2: z(&w.w2),
            v: z(&w.v),
            p: z(&w.p),
        }
    }

    pub fn table(&self, table: Table) -> &Matrix {
        match table {
            Table::Base => self.base.matrix(),
            Table::UserContext => self.user_context.matrix(),
            Table::ItemContext => self.item_context.matrix(),
            Table::W0 => &self.w0,
            Table::W1 => &self.w1,
            Table::W2 => &self.w2,
            Table::V => &self.v,
            Table::P => &self.p,
        }
    }

    pub fn rows(&self, table: Table) -> Option<&RowGrad> {
        match table {
            Table::Base => Some(&self.base),
            Table::UserContext => Some(&self.user_context),
            Table::ItemContext => Some(&self.item_context),
            _ => None,
        }
    }

    pub fn rows_mut(&mut self, table: Table) -> Option<&mut RowGrad> {
        match table {
            Table::Base => Some(&mut self.base),
            Table::UserContext => Some(&mut self.user_context),
            Table::ItemContext => Some(&mut self.item_context),
            _ => None,
        }
    }

    pub fn dense_mut(&mut self, table: Table) -> Option<&mut Matrix> {
        match table {
            Table::W0 => Some(&mut self.w0),
            Table::W1 => Some(&mut self.w1),
            Table::W2 => Some(&mut self.w2),
            Table::V => Some(&mut self.v),
            Table::P => Some(&mut self.p),
            _ => None,
        }
    }

    /// Zero every accumulator.
    pub fn clear(&mut self) {
        self.base.clear();
        self.user_context.clear();
        self.item_context.clear();
        for m in [&mut self.w0, &mut self.w1, &mut self.w2, &mut self.v, &mut self.p] {
            m.fill(0.0);
        }
    }

    pub fn is_zero(&self) -> bool {
        Table::ALL
            .iter()
            .all(|&t| self.table(t).as_slice().iter().all(|&x| x == 0.0))
    }

    /// First non-finite entry as `(table, flat index, value)`.
    pub fn first_non_finite(&self) -> Option<(Table, usize, f64)> {
        Table::ALL.iter().find_map(|&t| {
            self.table(t)
                .as_slice()
                .iter()
                .position(|x| !x.is_finite())
                .map(|k| (t, k, self.table(t).as_slice()[k]))
        })
    }

    /// `self += other`, entry-wise, merging touched-row sets.
    pub fn merge(&mut self, other: &GradientSet) {
        for t in [Table::Base, Table::UserContext, Table::ItemContext] {
            let src = other.rows(t).unwrap();
            let dst = self.rows_mut(t).unwrap();
            for &r in src.touched() {
                let from = src.row(r).to_vec();
                for (d, s) in dst.row_mut(r).iter_mut().zip(from) {
                    *d += s;
                }
            }
        }
        for t in [Table::W0, Table::W1, Table::W2, Table::V, Table::P] {
            let src = other.table(t).as_slice().to_vec();
            let dst = self.dense_mut(t).unwrap();
            for (d, s) in dst.as_mut_slice().iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dims;

    #[test]
    fn row_grad_tracks_and_clears() {
        let mut g = RowGrad::zeros(10, 2);
        g.row_mut(3)[0] = 1.0;
        g.row_mut(7)[1] = 2.0;
        g.row_mut(3)[1] = 1.0;
        assert_eq!(g.touched(), &[3, 7]);
        g.clear();
        assert!(g.touched().is_empty());
        assert!(g.matrix().as_slice().iter().all(|&x| x == 0.0));
        assert!(!g.is_touched(3));
    }

    #[test]
    fn merge_sums_entries() {
        let p = Params::zeros(Dims::uniform(2), 2, 2);
        let mut a = GradientSet::zeros_like(&p);
        let mut b = GradientSet::zeros_like(&p);
        a.base.row_mut(0)[0] = 1.0;
        b.base.row_mut(0)[0] = 2.0;
        b.base.row_mut(3)[1] = 5.0;
        b.w1.set(1, 1, 4.0);
        a.merge(&b);
        assert_eq!(a.base.row(0), &[3.0, 0.0]);
        assert_eq!(a.base.row(3), &[0.0, 5.0]);
        assert_eq!(a.w1.get(1, 1), 4.0);
        assert!(a.base.is_touched(3));
        a.clear();
        assert!(a.is_zero());
    }
}
