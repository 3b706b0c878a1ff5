use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Stacked per-node parameters (one row per node) and optional per-node
/// momentum buffers. Momentum is local state and never gossiped.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStates {
    params: Matrix,
    momentum: Option<Matrix>,
}

impl NodeStates {
    pub fn identical(n: usize, x0: &[f64]) -> Self {
        Self { params: Matrix::from_fn(n, x0.len(), |_, j| x0[j]), momentum: None }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("node states need at least one node".into()));
        }
        Ok(Self { params: Matrix::from_rows(rows)?, momentum: None })
    }

    pub fn from_matrix(params: Matrix) -> Self {
        Self { params, momentum: None }
    }

    pub fn with_momentum(mut self) -> Self {
        self.momentum = Some(Matrix::zeros(self.params.rows(), self.params.cols()));
        self
    }

    pub fn n(&self) -> usize {
        self.params.rows()
    }

    pub fn dim(&self) -> usize {
        self.params.cols()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        self.params.row(i)
    }

    pub fn node_mut(&mut self, i: usize) -> &mut [f64] {
        self.params.row_mut(i)
    }

    pub fn params(&self) -> &Matrix {
        &self.params
    }

    pub fn momentum(&self) -> Option<&Matrix> {
        self.momentum.as_ref()
    }

    pub(crate) fn ensure_momentum(&mut self) {
        if self.momentum.is_none() {
            self.momentum = Some(Matrix::zeros(self.n(), self.dim()));
        }
    }

    pub(crate) fn momentum_row_mut(&mut self, i: usize) -> Option<&mut [f64]> {
        self.momentum.as_mut().map(|m| m.row_mut(i))
    }

    /// Replaces the parameters, keeping momentum buffers.
    pub fn set_params(&mut self, params: Matrix) -> Result<()> {
        if params.rows() != self.n() || params.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.n() * self.dim(),
                got: params.rows() * params.cols(),
            });
        }
        self.params = params;
        Ok(())
    }

    /// `x_bar`, accumulated in node order.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim()];
        for i in 0..self.n() {
            for (m, v) in mean.iter_mut().zip(self.node(i)) {
                *m += v;
            }
        }
        let n = self.n() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Exact averaging (all-reduce): every node receives `x_bar`.
    pub fn average_exact(&mut self) {
        let mean = self.mean();
        for i in 0..self.n() {
            self.node_mut(i).copy_from_slice(&mean);
        }
    }

    pub fn all_identical(&self) -> bool {
        (1..self.n()).all(|i| self.node(i) == self.node(0))
    }

    /// Largest absolute parameter, or infinity if any entry is not finite.
    pub fn max_abs(&self) -> f64 {
        self.params.as_slice().iter().map(|v| if v.is_finite() { v.abs() } else { f64::INFINITY }).fold(0.0, f64::max)
    }
}
