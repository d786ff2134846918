//! Time-indexed vector sequences.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// A `dim × len` matrix stored one time step (column) at a time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    dim: usize,
    len: usize,
    data: Vec<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn zeros(dim: usize, len: usize) -> Self {
        Self {
            dim,
            len,
            data: vec![T::zero(); dim * len],
        }
    }

    /// Repeats `column` for `len` steps.
    pub fn constant(column: &[T], len: usize) -> Self {
        let mut data = Vec::with_capacity(column.len() * len);
        for _ in 0..len {
            data.extend_from_slice(column);
        }
        Self {
            dim: column.len(),
            len,
            data,
        }
    }

    pub fn from_columns(dim: usize, columns: &[Vec<T>]) -> Self {
        let mut data = Vec::with_capacity(dim * columns.len());
        for c in columns {
            assert_eq!(c.len(), dim, "column has wrong dimension");
            data.extend_from_slice(c);
        }
        Self {
            dim,
            len: columns.len(),
            data,
        }
    }

    pub fn from_flat(dim: usize, len: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), dim * len);
        Self { dim, len, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn col(&self, t: usize) -> &[T] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    #[inline]
    pub fn col_mut(&mut self, t: usize) -> &mut [T] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn columns(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.len)
    }

    /// Rows `[start, start + width)` of every column.
    pub fn rows(&self, start: usize, width: usize) -> Trajectory<T> {
        let mut out = Trajectory::zeros(width, self.len);
        for t in 0..self.len {
            out.col_mut(t)
                .copy_from_slice(&self.col(t)[start..start + width]);
        }
        out
    }

    pub fn set_rows(&mut self, start: usize, src: &Trajectory<T>) {
        assert_eq!(src.len, self.len);
        for t in 0..self.len {
            self.col_mut(t)[start..start + src.dim].copy_from_slice(src.col(t));
        }
    }

    /// Stacks trajectories of equal length on top of each other.
    pub fn stack(parts: &[&Trajectory<T>]) -> Trajectory<T> {
        let len = parts.first().map_or(0, |p| p.len);
        let dim = parts.iter().map(|p| p.dim).sum();
        let mut out = Trajectory::zeros(dim, len);
        let mut row = 0;
        for p in parts {
            assert_eq!(p.len, len, "stacked trajectories must share a horizon");
            out.set_rows(row, p);
            row += p.dim;
        }
        out
    }

    /// Drops the first column and appends `tail`.
    pub fn shift_with(&mut self, tail: &[T]) {
        if self.len == 0 {
            return;
        }
        assert_eq!(tail.len(), self.dim);
        self.data.drain(0..self.dim);
        self.data.extend_from_slice(tail);
    }

    /// Drops the first column and repeats the (new) last one.
    pub fn shift_repeat_last(&mut self) {
        if self.len == 0 {
            return;
        }
        let last = self.col(self.len - 1).to_vec();
        self.shift_with(&last);
    }

    /// Drops the first column and appends zeros.
    pub fn shift_zero(&mut self) {
        let zeros = vec![T::zero(); self.dim];
        self.shift_with(&zeros);
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.dim, self.len), (other.dim, other.len));
        Self {
            dim: self.dim,
            len: self.len,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        }
    }

    pub fn norm_sq(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Paired state and control trajectories for one (possibly augmented) agent.
///
/// `states.col(t)` is the state reached after applying `controls.col(t)`, so
/// both have the same length and the initial state is not stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPair<T> {
    pub states: Trajectory<T>,
    pub controls: Trajectory<T>,
}

impl<T: Real> TrajectoryPair<T> {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }
}
