//! Small dense row-major matrices: just enough for Gram matrices, Cholesky
//! factors and the least-squares solves used by the latent-factor model.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, IoContext, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Real> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = F::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<F> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[F]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn scale(&mut self, s: F) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Self {
        let n = self.cols;
        let mut g = Self::zeros(n, n);
        for row in self.iter_rows() {
            for a in 0..n {
                let ra = row[a];
                if ra == F::zero() {
                    continue;
                }
                for (b, &rb) in row.iter().enumerate().skip(a) {
                    g.data[a * n + b] += ra * rb;
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                g.data[a * n + b] = g.data[b * n + a];
            }
        }
        g
    }

    pub fn mul_vec(&self, v: &[F]) -> Vec<F> {
        self.iter_rows().map(|r| dot(r, v)).collect()
    }

    /// `selfᵀ · v`.
    pub fn tr_mul_vec(&self, v: &[F]) -> Vec<F> {
        let mut out = vec![F::zero(); self.cols];
        for (row, &w) in self.iter_rows().zip(v) {
            if w != F::zero() {
                axpy(w, row, &mut out);
            }
        }
        out
    }

    pub fn is_symmetric(&self, tol: F) -> bool {
        self.rows == self.cols && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Lower Cholesky factor `L` with `L·Lᵀ = self` for a symmetric positive
    /// semi-definite matrix. Pivots within a relative tolerance of zero are
    /// treated as exact zeros (rank deficiency); clearly negative pivots fail.
    pub fn cholesky_psd(&self) -> Result<Self> {
        let n = self.rows;
        if n != self.cols || !self.is_symmetric(F::lit(1e-9) * self.max_abs().max(F::one())) {
            return Err(Error::NotPositiveSemiDefinite {
                pivot: 0,
                value: f64::NAN,
            });
        }
        let tol = F::lit(1e-10) * self.max_abs().max(F::min_positive_value());
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d < -tol {
                return Err(Error::NotPositiveSemiDefinite {
                    pivot: j,
                    value: d.as_f64(),
                });
            }
            if d <= tol {
                // zero column; the remaining entries of this column must vanish too
                for i in j + 1..n {
                    let mut s = self[(i, j)];
                    for k in 0..j {
                        s -= l[(i, k)] * l[(j, k)];
                    }
                    if s.abs() > tol.sqrt() {
                        return Err(Error::NotPositiveSemiDefinite {
                            pivot: j,
                            value: d.as_f64(),
                        });
                    }
                }
                continue;
            }
            let pivot = d.sqrt();
            l[(j, j)] = pivot;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / pivot;
            }
        }
        Ok(l)
    }

    /// Solves `self · x = b` for symmetric positive definite `self`.
    pub fn solve_spd(&self, b: &[F]) -> Result<Vec<F>> {
        let l = self.cholesky_psd()?;
        let n = self.rows;
        if let Some(j) = (0..n).find(|&j| l[(j, j)] == F::zero()) {
            return Err(Error::NotPositiveSemiDefinite { pivot: j, value: 0.0 });
        }
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] = y[i] - l[(i, k)] * y[k];
            }
            y[i] /= l[(i, i)];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] = y[i] - l[(k, i)] * y[k];
            }
            y[i] /= l[(i, i)];
        }
        Ok(y)
    }

    /// Inverse of a symmetric positive definite matrix.
    pub fn inverse_spd(&self) -> Result<Self> {
        let n = self.rows;
        let mut inv = Self::zeros(n, n);
        let mut e = vec![F::zero(); n];
        for c in 0..n {
            e.iter_mut().for_each(|x| *x = F::zero());
            e[c] = F::one();
            let col = self.solve_spd(&e)?;
            for r in 0..n {
                inv[(r, c)] = col[r];
            }
        }
        Ok(inv)
    }

    fn max_abs(&self) -> F {
        self.data.iter().fold(F::zero(), |m, x| m.max(x.abs()))
    }

    /// Text form: a `rows cols` header line followed by one whitespace
    /// separated row per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.rows, self.cols);
        for row in self.iter_rows() {
            let mut first = true;
            for x in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{x}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`Matrix::to_text`] output from a line iterator, consuming
    /// exactly the header and `rows` lines.
    pub fn parse_lines<'a>(path: &Path, lines: &mut impl Iterator<Item = (usize, &'a str)>) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let (n, header) = lines.next().ok_or_else(|| perr(0, "missing matrix header".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| perr(n, format!("bad header {header:?}")))?;
        let [rows, cols] = dims[..] else {
            return Err(perr(n, format!("expected \"rows cols\", got {header:?}")));
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, line) = lines.next().ok_or_else(|| perr(n, "truncated matrix".into()))?;
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(tok.parse::<F>().map_err(|_| perr(n, format!("bad number {tok:?}")))?);
            }
            if data.len() - before != cols {
                return Err(perr(n, format!("expected {cols} columns")));
            }
        }
        Ok(Self::from_vec(rows, cols, data))
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        crate::dataset::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load_text(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).context(|| format!("reading {}", path.display()))?;
        let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l));
        Self::parse_lines(path, &mut lines)
    }
}

impl<F> std::ops::Index<(usize, usize)> for Matrix<F> {
    type Output = F;

    fn index(&self, (r, c): (usize, usize)) -> &F {
        &self.data[r * self.cols + c]
    }
}

impl<F> std::ops::IndexMut<(usize, usize)> for Matrix<F> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut F {
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |s, (&x, &y)| s + x * y)
}

#[inline]
pub fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn euclidean<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter()
        .zip(b)
        .fold(F::zero(), |s, (&x, &y)| s + (x - y) * (x - y))
        .sqrt()
}
