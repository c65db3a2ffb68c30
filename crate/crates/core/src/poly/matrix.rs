use super::{Coefficient, Poly, PolyError};

/// Dense row-major matrix of polynomials sharing one variable count.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyMatrix<T: Coefficient> {
    rows: usize,
    cols: usize,
    entries: Vec<Poly<T>>,
}

impl<T: Coefficient> PolyMatrix<T> {
    pub fn new(rows: usize, cols: usize, entries: Vec<Poly<T>>) -> Result<Self, PolyError> {
        if entries.len() != rows * cols {
            return Err(PolyError::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                entries.len()
            )));
        }
        if let Some(first) = entries.first() {
            let n = first.nvars();
            if let Some(bad) = entries.iter().find(|p| p.nvars() != n) {
                return Err(PolyError::VarCountMismatch { left: n, right: bad.nvars() });
            }
        }
        Ok(PolyMatrix { rows, cols, entries })
    }

    pub fn zeros(rows: usize, cols: usize, nvars: usize) -> Self {
        PolyMatrix { rows, cols, entries: vec![Poly::zero(nvars); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n, n);
        for i in 0..n {
            m.entries[i * n + i] = Poly::one(n);
        }
        m
    }

    /// Constant matrix in `rows` variables (the usual square case).
    pub fn from_constants(rows: usize, cols: usize, values: &[T]) -> Self {
        Self::from_constants_in(rows, cols, rows, values)
    }

    pub fn from_constants_in(rows: usize, cols: usize, nvars: usize, values: &[T]) -> Self {
        assert_eq!(values.len(), rows * cols);
        let entries = values.iter().map(|v| Poly::constant(nvars, v.clone())).collect();
        PolyMatrix { rows, cols, entries }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nvars(&self) -> Option<usize> {
        self.entries.first().map(Poly::nvars)
    }

    pub fn get(&self, i: usize, j: usize) -> &Poly<T> {
        &self.entries[i * self.cols + j]
    }

    pub fn entries(&self) -> &[Poly<T>] {
        &self.entries
    }

    pub fn transpose(&self) -> Self {
        let mut entries = Vec::with_capacity(self.entries.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                entries.push(self.get(i, j).clone());
            }
        }
        PolyMatrix { rows: self.cols, cols: self.rows, entries }
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self, PolyError> {
        if self.cols != other.rows {
            return Err(PolyError::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let nvars = self.nvars().or(other.nvars()).unwrap_or(0);
        let mut entries = Vec::with_capacity(self.rows * other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = Poly::zero(nvars);
                for k in 0..self.cols {
                    acc = acc.try_add(&self.get(i, k).try_mul(other.get(k, j))?)?;
                }
                entries.push(acc);
            }
        }
        Ok(PolyMatrix { rows: self.rows, cols: other.cols, entries })
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, PolyError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(PolyError::ShapeMismatch("subtraction of differently shaped matrices".into()));
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a.try_sub(b))
            .collect::<Result<_, _>>()?;
        Ok(PolyMatrix { rows: self.rows, cols: self.cols, entries })
    }

    pub fn scale(&self, s: &T) -> Self {
        PolyMatrix { rows: self.rows, cols: self.cols, entries: self.entries.iter().map(|p| p.scale(s)).collect() }
    }

    pub fn map<F: Fn(&Poly<T>) -> Poly<T>>(&self, f: F) -> Self {
        PolyMatrix { rows: self.rows, cols: self.cols, entries: self.entries.iter().map(f).collect() }
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

impl PolyMatrix<f64> {
    /// Row-major values at `point`.
    pub fn eval(&self, point: &[f64]) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).eval_f64(point))
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.entries.iter().fold(0.0, |a, p| a.max(p.max_abs_coeff()))
    }
}
