//! Sparse Cholesky for the primal system and small dense solves.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Square sparse matrix in compressed-row form without duplicate entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseMatrix {
    /// Compresses triplets; duplicates are summed in input order.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(t) = triplets.iter().find(|t| t.0 >= n || t.1 >= n) {
            return Err(Error::InvalidInput(format!(
                "entry ({}, {}) outside a {n}x{n} matrix",
                t.0, t.1
            )));
        }
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col = Vec::with_capacity(triplets.len());
        let mut val: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(c);
                val.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            n,
            row_ptr,
            col,
            val,
        })
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col[span.clone()]
            .iter()
            .copied()
            .zip(self.val[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col[span.clone()].binary_search(&c) {
            Ok(k) => self.val[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `max |A_rc - A_cr| / max |A_rc|`.
    pub fn asymmetry(&self) -> f64 {
        let mut scale = 0.0f64;
        let mut diff = 0.0f64;
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                scale = scale.max(v.abs());
                diff = diff.max((v - self.get(c, r)).abs());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            diff / scale
        }
    }

    /// Keeps the rows and columns with `map[i] = Some(new index)`.
    pub fn restrict(&self, map: &[Option<usize>], n_new: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(n_new + 1);
        row_ptr.push(0);
        let mut col = Vec::new();
        let mut val = Vec::new();
        for r in (0..self.n).filter(|&r| map[r].is_some()) {
            for (c, v) in self.row(r) {
                if let Some(nc) = map[c] {
                    col.push(nc);
                    val.push(v);
                }
            }
            row_ptr.push(col.len());
        }
        Self {
            n: n_new,
            row_ptr,
            col,
            val,
        }
    }
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Solves `A x = b` for symmetric positive definite `A` by sparse Cholesky
/// with iterative refinement, certifying `|Ax - b| <= 1e-10 |b|`.
pub fn solve_sparse_spd(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.n {
        return Err(Error::InvalidInput(format!(
            "rhs of length {} for a {n}x{n} system",
            b.len(),
            n = a.n
        )));
    }
    SpdSolver::factor(a)?.solve_refined(a, b)
}

/// Sparse Cholesky factorization of a symmetric positive definite matrix.
pub struct SpdSolver {
    n: usize,
    llt: Option<faer::sparse::linalg::solvers::Llt<usize, f64>>,
}

impl SpdSolver {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        let n = a.n;
        if n == 0 {
            return Ok(Self { n, llt: None });
        }
        faer::set_global_parallelism(faer::Par::Seq);
        let triplets: Vec<Triplet<usize, usize, f64>> = (0..n)
            .flat_map(|r| a.row(r).map(move |(c, v)| Triplet::new(r, c, v)))
            .collect();
        let mat =
            SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets).map_err(|e| {
                Error::Factorization {
                    size: n,
                    detail: format!("{e:?}"),
                }
            })?;
        let llt = mat
            .sp_cholesky(faer::Side::Lower)
            .map_err(|e| Error::Factorization {
                size: n,
                detail: format!("{e:?}"),
            })?;
        Ok(Self { n, llt: Some(llt) })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// One forward/backward substitution.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let Some(llt) = &self.llt else {
            return Vec::new();
        };
        let m = Mat::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = llt.solve(&m);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }

    /// Solve plus iterative refinement against `a`; fails unless the
    /// residual drops below `1e-10 |b|`.
    pub fn solve_refined(&self, a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if n == 0 {
            return Ok(Vec::new());
        }
        let residual = |x: &[f64]| -> Vec<f64> {
            let ax = a.matvec(x);
            b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect()
        };
        let tol = 1e-10 * norm2(b);
        let mut x = self.solve(b);
        let mut r = residual(&x);
        let mut res = norm2(&r);
        // Refine until the residual stops shrinking, so it sits at rounding level.
        for _ in 0..6 {
            if !res.is_finite() {
                return Err(Error::Factorization {
                    size: n,
                    detail: "non-finite solution".into(),
                });
            }
            let dx = self.solve(&r);
            let cand: Vec<f64> = x.iter().zip(dx).map(|(xi, di)| xi + di).collect();
            let cr = residual(&cand);
            let cres = norm2(&cr);
            if !(cres < 0.5 * res) {
                if cres < res {
                    x = cand;
                    res = cres;
                }
                break;
            }
            (x, r, res) = (cand, cr, cres);
        }
        if !(res <= tol) {
            return Err(Error::SolveAccuracy {
                residual: res,
                tolerance: tol,
            });
        }
        Ok(x)
    }
}

/// Dense system with a rank tolerance relative to the largest singular value.
#[derive(Debug, Clone)]
pub struct DenseSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub rank_tol: f64,
}

impl DenseSystem {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Self {
        Self {
            a,
            b,
            rank_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LsqSolution {
    pub x: DVector<f64>,
    /// Euclidean residual of the stacked system.
    pub residual: f64,
}

/// Minimal-norm solution of `A x = b` (with an optional homogeneous
/// constraint row appended), certified consistent to `1e-8 * scale`.
pub fn solve_constrained_lsq(
    system: &DenseSystem,
    constraint: Option<&[f64]>,
    scale: f64,
) -> Result<LsqSolution> {
    let (m, n) = system.a.shape();
    if system.b.len() != m {
        return Err(Error::InvalidInput("rhs length mismatch".into()));
    }
    let (a, b) = match constraint {
        Some(row) => {
            if row.len() != n {
                return Err(Error::InvalidInput("constraint length mismatch".into()));
            }
            let mut a = system.a.clone().insert_row(m, 0.0);
            for (j, &v) in row.iter().enumerate() {
                a[(m, j)] = v;
            }
            (a, system.b.clone().push(0.0))
        }
        None => (system.a.clone(), system.b.clone()),
    };
    if n == 0 {
        let residual = b.norm();
        return check_residual(
            DVector::zeros(0),
            residual,
            scale.max(b.norm()),
            "empty system",
        );
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let x = if smax == 0.0 {
        DVector::zeros(n)
    } else {
        svd.solve(&b, system.rank_tol * smax)
            .map_err(|e| Error::Internal(format!("SVD solve failed: {e}")))?
    };
    let residual = (&a * &x - &b).norm();
    check_residual(x, residual, scale.max(b.norm()), "least squares")
}

fn check_residual(
    x: DVector<f64>,
    residual: f64,
    scale: f64,
    context: &str,
) -> Result<LsqSolution> {
    if !(residual <= 1e-8 * scale) && residual > 0.0 {
        return Err(Error::IncompatibleSystem {
            context: context.into(),
            residual,
            scale,
        });
    }
    Ok(LsqSolution { x, residual })
}

/// Solves a small square system by LU, rejecting (near-)singular matrices.
pub fn solve_dense_square(mut a: DMatrix<f64>, mut b: DVector<f64>) -> Option<DVector<f64>> {
    // Row equilibration, then one step of iterative refinement.
    for i in 0..a.nrows() {
        let r = a.row(i).amax();
        if r == 0.0 {
            return None;
        }
        a.row_mut(i).scale_mut(1.0 / r);
        b[i] /= r;
    }
    let lu = a.clone().lu();
    let u = lu.u();
    let min_pivot = (0..u.nrows())
        .map(|i| u[(i, i)].abs())
        .fold(f64::INFINITY, f64::min);
    if min_pivot <= 1e-14 {
        return None;
    }
    let mut x = lu.solve(&b)?;
    let r = &b - &a * &x;
    x += lu.solve(&r)?;
    Some(x)
}
