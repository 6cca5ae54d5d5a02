//! Small dense matrices and the power iteration used for spectral constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix with explicit dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixDoc", into = "MatrixDoc")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MatrixDoc {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatrixDoc> for Matrix {
    type Error = Error;
    fn try_from(doc: MatrixDoc) -> Result<Self> {
        Matrix::new(doc.rows, doc.cols, doc.data)
    }
}

impl From<Matrix> for MatrixDoc {
    fn from(m: Matrix) -> Self {
        MatrixDoc {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                format!("{rows}x{cols} matrix data"),
                rows * cols,
                data.len(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::dim(format!("matrix row {i}"), c, row.len()));
            }
            data.extend_from_slice(row);
        }
        Matrix::new(r, c, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `out = A x`.
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(r), x);
        }
    }

    /// `out = Aᵀ y`.
    pub fn mul_t_vec(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, yr) in y.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * yr;
            }
        }
    }

    /// Spectral norm, via power iteration on `AᵀA`.
    pub fn spectral_norm(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        let mut tmp = vec![0.0; self.rows];
        let top = power_iteration(self.cols, POWER_TOL, |x, out| {
            self.mul_vec(x, &mut tmp);
            self.mul_t_vec(&tmp, out);
        });
        top.max(0.0).sqrt()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Relative tolerance for spectral constants.
pub const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 1_000_000;

/// Largest eigenvalue of a symmetric positive semidefinite operator.
///
/// Iterates until the eigen-residual `‖Av − θv‖` drops below `tol·θ`, which
/// places an eigenvalue within relative distance `tol` of the Rayleigh
/// quotient `θ`. The start vector is a fixed non-symmetric sequence so that
/// it has a component along every eigenvector of the structured matrices
/// seen in practice; results are deterministic.
pub fn power_iteration(n: usize, tol: f64, mut apply: impl FnMut(&[f64], &mut [f64])) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..n)
        .map(|j| 1.0 + 0.5 * (1.7 * j as f64 + 0.3).sin() + 0.01 * j as f64)
        .collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut av = vec![0.0; n];
    let mut theta = 0.0;
    for it in 0..POWER_MAX_ITERS {
        apply(&v, &mut av);
        theta = dot(&v, &av);
        let anorm = norm(&av);
        if anorm == 0.0 {
            return 0.0;
        }
        let resid: f64 = av
            .iter()
            .zip(&v)
            .map(|(a, x)| (a - theta * x) * (a - theta * x))
            .sum::<f64>()
            .sqrt();
        if resid <= tol * theta.abs() {
            return theta;
        }
        for (x, a) in v.iter_mut().zip(&av) {
            *x = a / anorm;
        }
        if it + 1 == POWER_MAX_ITERS {
            log::warn!("power iteration stopped at budget with residual {resid:e}");
        }
    }
    theta
}
