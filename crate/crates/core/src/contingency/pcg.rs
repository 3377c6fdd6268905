//! Block-diagonal systems and conjugate gradients on the normal equations.
//!
//! Newton blocks are nonsymmetric, so each block `A x = b` is solved as
//! `min ‖A M⁻¹ z − b‖`, `x = M⁻¹ z`, with CGLS (CG applied to the normal
//! equations without forming them). CGLS makes the true residual
//! `‖b − A x‖` non-increasing.
//!
//! `M⁻¹` is either the Jacobi scaling of `AᵀA` (inverse column norms of
//! `A`) or an explicit dense inverse shared by many blocks.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::sparse::{CsrMatrix, CsrPattern, TripletBuilder};

/// Right preconditioner of one block.
#[derive(Debug, Clone, Default)]
pub enum Preconditioner {
    #[default]
    Jacobi,
    /// Explicit `M⁻¹`, typically the inverse of a nearby Jacobian.
    Inverse(Arc<DMatrix<f64>>),
}

/// One block: a square sparse matrix on a (possibly shared) pattern, its
/// right-hand side and the relative residual it must reach.
#[derive(Debug, Clone)]
pub struct Block {
    pub pattern: Arc<CsrPattern>,
    pub values: Vec<f64>,
    pub rhs: Vec<f64>,
    pub tol: f64,
    pub preconditioner: Preconditioner,
}

impl Block {
    pub fn dim(&self) -> usize {
        self.pattern.nrows()
    }

    pub fn matrix(&self) -> CsrMatrix<f64> {
        CsrMatrix::new(self.pattern.clone(), self.values.clone())
    }
}

/// Independent square blocks along the diagonal of one stacked system.
#[derive(Debug, Clone, Default)]
pub struct BlockSystem {
    pub blocks: Vec<Block>,
}

impl BlockSystem {
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(Block::dim).sum()
    }

    /// Start of every block in the stacked vectors.
    pub fn offsets(&self) -> Vec<usize> {
        let mut at = 0;
        self.blocks
            .iter()
            .map(|b| {
                let o = at;
                at += b.dim();
                o
            })
            .collect()
    }

    pub fn stacked_rhs(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.rhs.iter().copied()).collect()
    }

    /// The whole block-diagonal matrix.
    pub fn matrix(&self) -> CsrMatrix<f64> {
        let n = self.dim();
        let mut t = TripletBuilder::with_capacity(n, n, self.blocks.iter().map(|b| b.values.len()).sum());
        for (b, off) in self.blocks.iter().zip(self.offsets()) {
            for r in 0..b.dim() {
                for p in b.pattern.row_range(r) {
                    t.push(off + r, off + b.pattern.col_idx()[p], b.values[p]);
                }
            }
        }
        t.build()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockReport {
    pub iterations: usize,
    /// `‖b − A x‖ / ‖b‖` at exit.
    pub relative_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcgOutcome {
    /// Stacked solution.
    pub x: Vec<f64>,
    pub blocks: Vec<BlockReport>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PcgError {
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("block {block} stagnated at relative residual {residual:.3e}")]
    Stagnation { block: usize, residual: f64 },
}

/// Solves every block to relative residual `tol` (overriding the blocks'
/// own tolerances). Fails naming the worst block if any does not converge.
pub fn pcg_solve(system: &BlockSystem, tol: f64, max_iter: usize) -> Result<PcgOutcome, PcgError> {
    if !(tol > 0.0) {
        return Err(PcgError::BadTolerance);
    }
    let mut sys = system.clone();
    sys.blocks.iter_mut().for_each(|b| b.tol = tol);
    let out = pcg_solve_blocks(&sys, max_iter);
    let worst = out
        .blocks
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.converged)
        .max_by(|a, b| a.1.relative_residual.total_cmp(&b.1.relative_residual));
    match worst {
        Some((block, r)) => Err(PcgError::Stagnation {
            block,
            residual: r.relative_residual,
        }),
        None => Ok(out),
    }
}

/// Solves each block to its own tolerance, in parallel. Non-converged
/// blocks keep their best iterate and are flagged in the report.
pub fn pcg_solve_blocks(system: &BlockSystem, max_iter: usize) -> PcgOutcome {
    let results: Vec<(Vec<f64>, BlockReport)> = system
        .blocks
        .par_iter()
        .map(|b| cgls(&b.pattern, &b.values, &b.rhs, &b.preconditioner, b.tol, max_iter))
        .collect();
    let mut x = Vec::with_capacity(system.dim());
    let mut blocks = Vec::with_capacity(results.len());
    for (xb, rep) in results {
        x.extend(xb);
        blocks.push(rep);
    }
    PcgOutcome { x, blocks }
}

/// Eight independent partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Right-preconditioned CGLS on one CSR block.
pub(crate) fn cgls(
    pattern: &CsrPattern,
    values: &[f64],
    b: &[f64],
    precond: &Preconditioner,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, BlockReport) {
    let n = pattern.nrows();
    let cols = pattern.col_idx();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return (
            vec![0.0; n],
            BlockReport {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
            },
        );
    }
    let mut scale = vec![0.0; n];
    if let Preconditioner::Jacobi = precond {
        for (p, &c) in cols.iter().enumerate() {
            scale[c] += values[p] * values[p];
        }
        for s in scale.iter_mut() {
            *s = if *s > 0.0 { 1.0 / s.sqrt() } else { 1.0 };
        }
    }
    // out = M⁻¹ v
    let m_inv = |v: &[f64], out: &mut [f64]| match precond {
        Preconditioner::Jacobi => {
            for i in 0..n {
                out[i] = scale[i] * v[i];
            }
        }
        Preconditioner::Inverse(m) => {
            out.iter_mut().for_each(|o| *o = 0.0);
            for (col, &vj) in m.as_slice().chunks_exact(n).zip(v) {
                if vj != 0.0 {
                    for (o, &a) in out.iter_mut().zip(col) {
                        *o += a * vj;
                    }
                }
            }
        }
    };
    // out = M⁻ᵀ v
    let m_inv_t = |v: &[f64], out: &mut [f64]| match precond {
        Preconditioner::Jacobi => {
            for i in 0..n {
                out[i] = scale[i] * v[i];
            }
        }
        Preconditioner::Inverse(m) => {
            for (o, col) in out.iter_mut().zip(m.as_slice().chunks_exact(n)) {
                *o = dot(col, v);
            }
        }
    };
    let a_mul = |x: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let mut acc = 0.0;
            for p in pattern.row_range(i) {
                acc += values[p] * x[cols[p]];
            }
            out[i] = acc;
        }
    };
    let at_mul = |r: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let ri = r[i];
            if ri != 0.0 {
                for p in pattern.row_range(i) {
                    out[cols[p]] += values[p] * ri;
                }
            }
        }
    };

    let mut tmp = vec![0.0; n];
    let mut r = b.to_vec();
    let mut s = vec![0.0; n];
    at_mul(&r, &mut tmp);
    m_inv_t(&tmp, &mut s);
    let mut p = s.clone();
    let mut q = vec![0.0; n];
    let mut gamma = dot(&s, &s);
    let mut z = vec![0.0; n];
    let mut rel = 1.0;
    let mut iterations = 0;
    while iterations < max_iter && gamma > 0.0 {
        m_inv(&p, &mut tmp);
        a_mul(&tmp, &mut q);
        let qq = dot(&q, &q);
        if qq == 0.0 || !qq.is_finite() {
            break;
        }
        let alpha = gamma / qq;
        for i in 0..n {
            z[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        iterations += 1;
        rel = dot(&r, &r).sqrt() / b_norm;
        if rel < tol {
            break;
        }
        at_mul(&r, &mut tmp);
        m_inv_t(&tmp, &mut s);
        let gamma_new = dot(&s, &s);
        let beta = gamma_new / gamma;
        gamma = gamma_new;
        for i in 0..n {
            p[i] = s[i] + beta * p[i];
        }
    }
    let mut x = vec![0.0; n];
    m_inv(&z, &mut x);
    (
        x,
        BlockReport {
            iterations,
            relative_residual: rel,
            converged: rel < tol,
        },
    )
}
