//! Dense square matrices and the Cholesky kernel used by estimation and scoring.

use serde::{Deserialize, Serialize};

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = s;
        }
        m
    }

    /// Panics if `data.len() != n * n`.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "expected {n}x{n} entries");
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    /// Sum of squared entries, ‖A‖_F².
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Largest |A_ij − A_ji| relative to the largest |A_ij|.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / scale
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            self[(i, i)] += v;
        }
    }

    /// xᵀ A x.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.n);
        self.data
            .chunks_exact(self.n)
            .zip(x)
            .map(|(row, xi)| xi * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }
}

impl std::ops::Index<(usize, usize)> for SquareMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for SquareMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// Lower-triangular Cholesky factor L with A = L·Lᵀ.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    lower: SquareMatrix,
}

/// Cholesky failed at `pivot` with non-positive or non-finite diagonal `value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub pivot: usize,
    pub value: f64,
}

impl Cholesky {
    /// Factorizes the lower triangle of `a`; the upper triangle is not read.
    pub fn factor(a: &SquareMatrix) -> Result<Self, NotPositiveDefinite> {
        let n = a.dim();
        let mut l = SquareMatrix::zeros(n);
        for j in 0..n {
            let row_j = &l.data[j * n..j * n + j];
            let d = a[(j, j)] - row_j.iter().map(|v| v * v).sum::<f64>();
            if d.is_nan() || d <= 0.0 || !d.is_finite() {
                return Err(NotPositiveDefinite { pivot: j, value: d });
            }
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let (head, tail) = l.data.split_at_mut(i * n);
                let row_j = &head[j * n..j * n + j];
                let row_i = &tail[..j];
                let s: f64 = row_i.iter().zip(row_j).map(|(a, b)| a * b).sum();
                tail[j] = (a[(i, j)] - s) / ljj;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &SquareMatrix {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.dim()
    }

    /// Solves L·z = b in place (forward substitution).
    pub fn forward_solve_in_place(&self, b: &mut [f64]) {
        let n = self.lower.dim();
        debug_assert_eq!(b.len(), n);
        for i in 0..n {
            let row = self.lower.row(i);
            let s: f64 = row[..i].iter().zip(&b[..i]).map(|(a, z)| a * z).sum();
            b[i] = (b[i] - s) / row[i];
        }
    }

    /// Σ ln L_ii = ½ ln det A.
    pub fn half_log_det(&self) -> f64 {
        (0..self.dim()).map(|i| self.lower[(i, i)].ln()).sum()
    }

    /// L·Lᵀ.
    pub fn reconstruct(&self) -> SquareMatrix {
        let n = self.dim();
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let k = j + 1;
                let s: f64 = self.lower.row(i)[..k]
                    .iter()
                    .zip(&self.lower.row(j)[..k])
                    .map(|(a, b)| a * b)
                    .sum();
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }
}
