//! Sparse storage and linear solvers: Jacobi-preconditioned conjugate
//! gradients and a banded Cholesky factorization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Empty matrix (all zeros) with the given sorted per-row column lists.
    pub fn from_pattern(rows: &[Vec<usize>]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for r in rows {
            debug_assert!(r.windows(2).all(|w| w[0] < w[1]));
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        Self {
            nrows: rows.len(),
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Position of entry `(i, j)` in `values`, if it is in the pattern.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        cols.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.nrows) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y
    }

    /// `alpha * self + beta * other`; both must share the same pattern.
    pub fn linear_combination(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> CsrMatrix {
        assert_eq!(self.col_idx, other.col_idx, "patterns differ");
        let mut out = self.clone();
        for (v, w) in out.values.iter_mut().zip(&other.values) {
            *v = alpha * *v + beta * w;
        }
        out
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    /// Maximum relative asymmetry `|a_ij - a_ji| / max|a|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / scale
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for an SPD matrix, stopping when
/// `|b - A x| <= tol |b|`.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    guess: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = a.nrows;
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(CgOutcome {
            solution: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut x = guess.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r = a.mul(&x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = norm(&r) / bnorm;
    let mut it = 0;
    while rel > tol {
        if it == max_iter {
            return Err(Error::SolverFailure {
                iterations: it,
                residual: rel,
            });
        }
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::SolverFailure {
                iterations: it,
                residual: rel,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rel = norm(&r) / bnorm;
        it += 1;
    }
    Ok(CgOutcome {
        solution: x,
        iterations: it,
        relative_residual: rel,
    })
}

/// Cholesky factor `L` of a symmetric positive definite banded matrix, stored
/// row by row: row `i` holds `L[i][i - bw ..= i]` (entries left of column 0
/// are padding).
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows;
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    l[i * w + (j + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                // Column range shared by rows i and j inside both bands.
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = l[i * w + (j + bw - i)];
                let ri = i * w + bw - i;
                let rj = j * w + bw - j;
                for k in k0..j {
                    s -= l[ri + k] * l[rj + k];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite { row: i, pivot: s });
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            let ri = i * w + bw - i;
            for k in i.saturating_sub(bw)..i {
                s -= self.l[ri + k] * y[k];
            }
            y[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            let s = y[i] / self.l[i * w + bw];
            y[i] = s;
            // Scatter the column of L^T into earlier unknowns.
            let ri = i * w + bw - i;
            for k in i.saturating_sub(bw)..i {
                y[k] -= self.l[ri + k] * s;
            }
        }
        y
    }
}

/// Which linear solver backs a constrained operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Jacobi-preconditioned conjugate gradients.
    Cg,
    /// Banded Cholesky factorization.
    Direct,
    /// Direct when the band fits comfortably in memory, CG otherwise.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub kind: SolverKind,
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kind: SolverKind::Auto,
            tol: 1e-10,
            max_iterations: 20_000,
        }
    }
}

impl SolverOptions {
    pub fn cg(tol: f64) -> Self {
        Self {
            kind: SolverKind::Cg,
            tol,
            ..Self::default()
        }
    }

    pub fn direct() -> Self {
        Self {
            kind: SolverKind::Direct,
            ..Self::default()
        }
    }
}

/// Band storage above which `Auto` switches to CG (about 400 MB).
const AUTO_DIRECT_LIMIT: usize = 50_000_000;

enum Backend {
    Direct(BandedCholesky),
    Cg,
}

/// SPD operator with homogeneous Dirichlet rows eliminated, ready for
/// repeated solves with different right-hand sides.
pub struct ConstrainedOperator {
    matrix: CsrMatrix,
    constrained: Vec<bool>,
    backend: Backend,
    options: SolverOptions,
}

impl ConstrainedOperator {
    /// Eliminates the constrained rows and columns (replaced by identity) and
    /// prepares the chosen backend.
    pub fn new(mut matrix: CsrMatrix, constrained: Vec<bool>, options: SolverOptions) -> Result<Self> {
        eliminate(&mut matrix, &constrained);
        let direct = match options.kind {
            SolverKind::Direct => true,
            SolverKind::Cg => false,
            SolverKind::Auto => matrix.nrows * (matrix.bandwidth() + 1) <= AUTO_DIRECT_LIMIT,
        };
        let backend = if direct {
            Backend::Direct(BandedCholesky::factor(&matrix)?)
        } else {
            Backend::Cg
        };
        Ok(Self {
            matrix,
            constrained,
            backend,
            options,
        })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn constrained(&self) -> &[bool] {
        &self.constrained
    }

    /// Solves with zero values on the constrained entries; `rhs` entries at
    /// constrained rows are ignored.
    pub fn solve(&self, rhs: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut b = rhs.to_vec();
        for (bi, &c) in b.iter_mut().zip(&self.constrained) {
            if c {
                *bi = 0.0;
            }
        }
        let mut x = match &self.backend {
            Backend::Direct(f) => f.solve(&b),
            Backend::Cg => {
                pcg(
                    &self.matrix,
                    &b,
                    guess,
                    self.options.tol,
                    self.options.max_iterations,
                )?
                .solution
            }
        };
        for (xi, &c) in x.iter_mut().zip(&self.constrained) {
            if c {
                *xi = 0.0;
            }
        }
        Ok(x)
    }
}

/// Zeroes constrained rows and columns and puts 1 on their diagonal.
fn eliminate(matrix: &mut CsrMatrix, constrained: &[bool]) {
    for i in 0..matrix.nrows {
        for k in matrix.row_ptr[i]..matrix.row_ptr[i + 1] {
            let j = matrix.col_idx[k];
            if constrained[i] || constrained[j] {
                matrix.values[k] = if i == j { 1.0 } else { 0.0 };
            }
        }
    }
}
