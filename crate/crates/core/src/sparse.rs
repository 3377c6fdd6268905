//! Compressed sparse row storage shared by the admittance, Jacobian and
//! block-diagonal systems.
//!
//! The sparsity pattern lives in its own reference-counted [`CsrPattern`] so
//! that many matrices (one per contingency scenario) can share one symbolic
//! structure and only carry their own value arrays.

use std::ops::{Add, Mul};
use std::sync::Arc;

use num_complex::Complex64;

/// Row-compressed sparsity pattern with sorted column indices per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrPattern {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl CsrPattern {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    /// Storage range of row `r`.
    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.row_ptr[r]..self.row_ptr[r + 1]
    }

    /// Position of `(r, c)` in the value array, if structurally present.
    pub fn find(&self, r: usize, c: usize) -> Option<usize> {
        let range = self.row_range(r);
        self.col_idx[range.clone()]
            .binary_search(&c)
            .ok()
            .map(|off| range.start + off)
    }

    /// Builds a pattern from sorted, deduplicated `(row, col)` pairs.
    pub fn from_sorted_entries(nrows: usize, ncols: usize, entries: &[(usize, usize)]) -> Self {
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        for &(r, c) in entries {
            debug_assert!(r < nrows && c < ncols);
            row_ptr[r + 1] += 1;
            col_idx.push(c);
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
        }
    }

    /// True when `(r, c)` present implies `(c, r)` present.
    pub fn is_structurally_symmetric(&self) -> bool {
        self.nrows == self.ncols
            && (0..self.nrows).all(|r| {
                self.col_idx[self.row_range(r)]
                    .iter()
                    .all(|&c| self.find(c, r).is_some())
            })
    }
}

/// Values on top of a shared pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    pattern: Arc<CsrPattern>,
    values: Vec<T>,
}

impl<T: Copy + Default> CsrMatrix<T> {
    pub fn new(pattern: Arc<CsrPattern>, values: Vec<T>) -> Self {
        assert_eq!(pattern.nnz(), values.len(), "value count must match pattern");
        Self { pattern, values }
    }

    pub fn zeros(pattern: Arc<CsrPattern>) -> Self {
        let values = vec![T::default(); pattern.nnz()];
        Self { pattern, values }
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn nrows(&self) -> usize {
        self.pattern.nrows
    }

    pub fn ncols(&self) -> usize {
        self.pattern.ncols
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    /// Value at `(r, c)`; structural zeros read as `T::default()`.
    pub fn get(&self, r: usize, c: usize) -> T {
        self.pattern
            .find(r, c)
            .map(|p| self.values[p])
            .unwrap_or_default()
    }

    /// Iterates `(row, col, value)` in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.pattern.nrows).flat_map(move |r| {
            self.pattern
                .row_range(r)
                .map(move |p| (r, self.pattern.col_idx[p], self.values[p]))
        })
    }
}

impl<T> CsrMatrix<T>
where
    T: Copy + Default + Add<Output = T> + Mul<Output = T>,
{
    /// `y = A x`.
    pub fn mul_vec_into(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.ncols());
        debug_assert_eq!(y.len(), self.nrows());
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = T::default();
            for p in self.pattern.row_range(r) {
                acc = acc + self.values[p] * x[self.pattern.col_idx[p]];
            }
            *out = acc;
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::default(); self.nrows()];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `y = Aᵀ x`.
    pub fn mul_transpose_vec_into(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.nrows());
        debug_assert_eq!(y.len(), self.ncols());
        y.iter_mut().for_each(|v| *v = T::default());
        for (r, &xr) in x.iter().enumerate() {
            for p in self.pattern.row_range(r) {
                let c = self.pattern.col_idx[p];
                y[c] = y[c] + self.values[p] * xr;
            }
        }
    }
}

impl CsrMatrix<f64> {
    /// Dense row-major copy, used by direct fallbacks and test oracles.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows(), self.ncols());
        for (r, c, v) in self.iter() {
            m[(r, c)] += v;
        }
        m
    }
}

impl CsrMatrix<Complex64> {
    pub fn to_dense(&self) -> nalgebra::DMatrix<Complex64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows(), self.ncols());
        for (r, c, v) in self.iter() {
            m[(r, c)] += v;
        }
        m
    }
}

/// Coordinate-format accumulator.
///
/// Duplicate coordinates are summed in insertion order, which keeps the
/// assembled values bit-reproducible for a fixed insertion sequence.
#[derive(Debug, Clone)]
pub struct TripletBuilder<T> {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, T)>,
}

impl<T> TripletBuilder<T>
where
    T: Copy + Default + Add<Output = T>,
{
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, r: usize, c: usize, v: T) {
        assert!(r < self.nrows && c < self.ncols, "triplet out of bounds");
        self.entries.push((r, c, v));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn build(mut self) -> CsrMatrix<T> {
        // stable: equal keys keep insertion order
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut coords: Vec<(usize, usize)> = Vec::with_capacity(self.entries.len());
        let mut values: Vec<T> = Vec::with_capacity(self.entries.len());
        for (r, c, v) in self.entries {
            match coords.last() {
                Some(&last) if last == (r, c) => {
                    let acc = values.last_mut().expect("values track coords");
                    *acc = *acc + v;
                }
                _ => {
                    coords.push((r, c));
                    values.push(v);
                }
            }
        }
        let pattern = CsrPattern::from_sorted_entries(self.nrows, self.ncols, &coords);
        CsrMatrix::new(Arc::new(pattern), values)
    }
}
