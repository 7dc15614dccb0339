use std::collections::HashMap;

use ndarray::{Array2, ArrayView1, ArrayViewMut1};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Moments;

/// Row-major embedding matrix with per-row Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub values: Array2<f64>,
    pub moments: Moments,
}

impl EmbeddingTable {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingTable {
            values: Array2::zeros((rows, dim)),
            moments: Moments::zeros(rows * dim),
        }
    }

    /// Entries drawn from normal(0, std).
    pub fn normal<R: Rng + ?Sized>(rows: usize, dim: usize, std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let values = Array2::from_shape_simple_fn((rows, dim), || dist.sample(rng));
        EmbeddingTable {
            values,
            moments: Moments::zeros(rows * dim),
        }
    }

    pub fn from_values(values: Array2<f64>) -> Self {
        let n = values.len();
        EmbeddingTable {
            values,
            moments: Moments::zeros(n),
        }
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn row_mut(&mut self, i: usize) -> ArrayViewMut1<'_, f64> {
        self.values.row_mut(i)
    }

    pub fn sum_squares(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum()
    }
}

/// Sparse gradient accumulator over the rows of one table.
///
/// Rows are kept in first-touch order so updates are deterministic.
#[derive(Debug, Clone)]
pub struct RowGrads {
    dim: usize,
    rows: Vec<usize>,
    slot: HashMap<usize, usize>,
    data: Vec<f64>,
}

impl RowGrads {
    pub fn new(dim: usize) -> Self {
        RowGrads {
            dim,
            rows: Vec::new(),
            slot: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mutable gradient slice for `row`, zero-initialised on first touch.
    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let dim = self.dim;
        let s = *self.slot.entry(row).or_insert_with(|| {
            self.rows.push(row);
            self.data.extend(std::iter::repeat_n(0.0, dim));
            self.rows.len() - 1
        });
        &mut self.data[s * dim..(s + 1) * dim]
    }

    pub fn add(&mut self, row: usize, grad: &[f64], scale: f64) {
        for (g, x) in self.row_mut(row).iter_mut().zip(grad) {
            *g += scale * x;
        }
    }

    pub fn get(&self, row: usize) -> Option<&[f64]> {
        self.slot
            .get(&row)
            .map(|&s| &self.data[s * self.dim..(s + 1) * self.dim])
    }

    /// Touched rows with their gradients, in first-touch order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows
            .iter()
            .enumerate()
            .map(move |(s, &r)| (r, &self.data[s * self.dim..(s + 1) * self.dim]))
    }

    pub fn touched(&self) -> &[usize] {
        &self.rows
    }

    pub fn merge(&mut self, other: &RowGrads) {
        for (r, g) in other.iter() {
            self.add(r, g, 1.0);
        }
    }
}
