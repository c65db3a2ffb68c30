//! Sparse multivariate polynomials.
//!
//! A [`Poly`] is a map from [`Monomial`] to coefficient, kept free of
//! negligible terms and iterated in graded-lexicographic order. The
//! coefficient type is generic: the solver pipeline runs on `f64`, while
//! exact rationals are available for hand-checkable algebra.

mod cheb;
mod coeff;
mod matrix;
mod text;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

pub use cheb::{product_terms, ChebSeries};
pub use coeff::Coefficient;
pub use matrix::PolyMatrix;
pub use text::{parse_poly, parse_poly_with_names, ParsePolyError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("variable count mismatch: {left} vs {right}")]
    VarCountMismatch { left: usize, right: usize },
    #[error("variable index {var} out of range for {nvars} variables")]
    VarOutOfRange { var: usize, nvars: usize },
    #[error("point has {got} coordinates, polynomial has {expected} variables")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Exponent vector of a monomial. Ordered graded-lexicographically: total
/// degree first, then lexicographic with `x1` most significant, so that
/// `x1 > x2` and `x1^2 > x1*x2 > x2^2`.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.0.len(), other.0.len());
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `self / other` when `other` divides `self`.
    pub fn div(&self, other: &Monomial) -> Option<Monomial> {
        let mut out = Vec::with_capacity(self.0.len());
        for (a, b) in self.0.iter().zip(&other.0) {
            if b > a {
                return None;
            }
            out.push(a - b);
        }
        Some(Monomial(out))
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(point)
            .map(|(&e, &x)| x.powi(e as i32))
            .product()
    }

    /// All monomials in `nvars` variables of total degree `<= max_degree`:
    /// degree ascending, and within a degree `x1`-heavy monomials first.
    pub fn all_up_to(nvars: usize, max_degree: u32) -> Vec<Monomial> {
        let mut out = Vec::new();
        for d in 0..=max_degree {
            let mut level = Vec::new();
            let mut cur = vec![0u32; nvars];
            compositions(nvars, d, 0, &mut cur, &mut level);
            level.sort_by(|a, b| b.cmp(a));
            out.extend(level);
        }
        out
    }
}

fn compositions(nvars: usize, remaining: u32, idx: usize, cur: &mut Vec<u32>, out: &mut Vec<Monomial>) {
    if nvars == 0 {
        if remaining == 0 {
            out.push(Monomial(Vec::new()));
        }
        return;
    }
    if idx == nvars - 1 {
        cur[idx] = remaining;
        out.push(Monomial(cur.clone()));
        cur[idx] = 0;
        return;
    }
    for e in 0..=remaining {
        cur[idx] = e;
        compositions(nvars, remaining - e, idx + 1, cur, out);
    }
    cur[idx] = 0;
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sparse polynomial with coefficients in `T`.
#[derive(Clone, PartialEq)]
pub struct Poly<T: Coefficient> {
    nvars: usize,
    terms: BTreeMap<Monomial, T>,
}

impl<T: Coefficient> fmt::Debug for Poly<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Poly[{}]({})", self.nvars, self.to_text())
    }
}

impl<T: Coefficient> Poly<T> {
    pub fn zero(nvars: usize) -> Self {
        Poly { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: T) -> Self {
        Self::from_terms(nvars, [(Monomial::one(nvars), c)])
    }

    pub fn one(nvars: usize) -> Self {
        Self::constant(nvars, T::one())
    }

    /// The coordinate polynomial `x_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        Self::from_terms(nvars, [(Monomial::var(nvars, i), T::one())])
    }

    pub fn monomial(m: Monomial, c: T) -> Self {
        let nvars = m.nvars();
        Self::from_terms(nvars, [(m, c)])
    }

    /// Builds a polynomial, summing repeated monomials and dropping
    /// negligible coefficients.
    pub fn from_terms<I: IntoIterator<Item = (Monomial, T)>>(nvars: usize, terms: I) -> Self {
        let mut p = Poly::zero(nvars);
        for (m, c) in terms {
            assert_eq!(m.nvars(), nvars, "monomial arity differs from polynomial arity");
            p.add_term(m, c);
        }
        p
    }

    fn add_term(&mut self, m: Monomial, c: T) {
        match self.terms.get_mut(&m) {
            Some(existing) => {
                let sum = existing.clone() + c;
                if sum.is_negligible() {
                    self.terms.remove(&m);
                } else {
                    *existing = sum;
                }
            }
            None => {
                if !c.is_negligible() {
                    self.terms.insert(m, c);
                }
            }
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Terms in graded-lex ascending order.
    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&Monomial, &T)> {
        self.terms.iter()
    }

    pub fn coeff(&self, m: &Monomial) -> T {
        self.terms.get(m).cloned().unwrap_or_else(T::zero)
    }

    pub fn constant_term(&self) -> T {
        self.coeff(&Monomial::one(self.nvars))
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    fn check_nvars(&self, other: &Self) -> Result<(), PolyError> {
        if self.nvars != other.nvars {
            return Err(PolyError::VarCountMismatch { left: self.nvars, right: other.nvars });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_nvars(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_nvars(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), -c.clone());
        }
        Ok(out)
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_nvars(other)?;
        let mut out = Poly::zero(self.nvars);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(ma.mul(mb), ca.clone() * cb.clone());
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: &T) -> Self {
        Poly::from_terms(self.nvars, self.terms.iter().map(|(m, c)| (m.clone(), c.clone() * s.clone())))
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut out = Poly::one(self.nvars);
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    /// Formal partial derivative with respect to `var`.
    pub fn diff(&self, var: usize) -> Result<Self, PolyError> {
        if var >= self.nvars {
            return Err(PolyError::VarOutOfRange { var, nvars: self.nvars });
        }
        let mut out = Poly::zero(self.nvars);
        for (m, c) in &self.terms {
            let e = m.0[var];
            if e == 0 {
                continue;
            }
            let mut exps = m.0.clone();
            exps[var] -= 1;
            out.add_term(Monomial(exps), c.clone() * T::from_u32(e));
        }
        Ok(out)
    }

    pub fn gradient(&self) -> Vec<Self> {
        (0..self.nvars).map(|i| self.diff(i).expect("index in range")).collect()
    }

    /// Term-wise evaluation at `point`.
    pub fn eval(&self, point: &[T]) -> Result<T, PolyError> {
        if point.len() != self.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, got: point.len() });
        }
        let mut acc = T::zero();
        for (m, c) in &self.terms {
            let mut v = c.clone();
            for (&e, x) in m.0.iter().zip(point) {
                for _ in 0..e {
                    v = v * x.clone();
                }
            }
            acc = acc + v;
        }
        Ok(acc)
    }

    /// `Tr((∇² p) S)` for a square polynomial matrix `S` of side `nvars`.
    pub fn hessian_trace_form(&self, s: &PolyMatrix<T>) -> Result<Self, PolyError> {
        if s.rows() != self.nvars || s.cols() != self.nvars {
            return Err(PolyError::ShapeMismatch(format!(
                "expected {n}x{n} weight matrix, got {}x{}",
                s.rows(),
                s.cols(),
                n = self.nvars
            )));
        }
        let grad = self.gradient();
        let mut out = Poly::zero(self.nvars);
        for i in 0..self.nvars {
            for j in 0..self.nvars {
                let w = s.get(j, i);
                if w.is_zero() {
                    continue;
                }
                let dij = grad[i].diff(j)?;
                out = out.try_add(&dij.try_mul(w)?)?;
            }
        }
        Ok(out)
    }

    /// Re-embeds into `new_nvars` variables, mapping variable `i` to `offset + i`.
    pub fn lift(&self, new_nvars: usize, offset: usize) -> Self {
        assert!(offset + self.nvars <= new_nvars, "lift target too small");
        Poly::from_terms(
            new_nvars,
            self.terms.iter().map(|(m, c)| {
                let mut e = vec![0; new_nvars];
                e[offset..offset + self.nvars].copy_from_slice(&m.0);
                (Monomial(e), c.clone())
            }),
        )
    }

    /// Fixes variable `var` to `value` and removes it, returning a polynomial
    /// in `nvars - 1` variables.
    pub fn substitute(&self, var: usize, value: &T) -> Result<Self, PolyError> {
        if var >= self.nvars {
            return Err(PolyError::VarOutOfRange { var, nvars: self.nvars });
        }
        let mut out = Poly::zero(self.nvars - 1);
        for (m, c) in &self.terms {
            let mut v = c.clone();
            for _ in 0..m.0[var] {
                v = v * value.clone();
            }
            let mut e = m.0.clone();
            e.remove(var);
            out.add_term(Monomial(e), v);
        }
        Ok(out)
    }

    /// `p(c + r ∘ s)` as a polynomial in `s`: the affine change of variables
    /// `x_i = center_i + scale_i s_i`.
    pub fn affine_substitute(&self, center: &[T], scale: &[T]) -> Result<Self, PolyError> {
        if center.len() != self.nvars || scale.len() != self.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, got: center.len().min(scale.len()) });
        }
        let n = self.nvars;
        let max = self.terms.keys().flat_map(|m| m.0.iter().copied()).max().unwrap_or(0) as usize;
        let mut powers: Vec<Vec<Poly<T>>> = Vec::with_capacity(n);
        for i in 0..n {
            let lin = &Poly::constant(n, center[i].clone()) + &Poly::var(n, i).scale(&scale[i]);
            let mut row = vec![Poly::one(n)];
            for k in 1..=max {
                row.push(&row[k - 1] * &lin);
            }
            powers.push(row);
        }
        let mut out = Poly::zero(n);
        for (m, c) in &self.terms {
            let mut t = Poly::constant(n, c.clone());
            for (i, &e) in m.0.iter().enumerate() {
                if e > 0 {
                    t = &t * &powers[i][e as usize];
                }
            }
            out = &out + &t;
        }
        Ok(out)
    }

    /// Keeps only the leading `keep` variables; the rest must not occur.
    pub fn truncate_vars(&self, keep: usize) -> Option<Self> {
        let mut out = Poly::zero(keep);
        for (m, c) in &self.terms {
            if m.0[keep..].iter().any(|&e| e != 0) {
                return None;
            }
            out.add_term(Monomial(m.0[..keep].to_vec()), c.clone());
        }
        Some(out)
    }

    /// Whether any term involves variable `var`.
    pub fn depends_on(&self, var: usize) -> bool {
        self.terms.keys().any(|m| m.0.get(var).copied().unwrap_or(0) > 0)
    }

    pub fn map_coeffs<U: Coefficient, F: Fn(&T) -> U>(&self, f: F) -> Poly<U> {
        Poly::from_terms(self.nvars, self.terms.iter().map(|(m, c)| (m.clone(), f(c))))
    }
}

impl Poly<f64> {
    pub fn eval_f64(&self, point: &[f64]) -> f64 {
        debug_assert_eq!(point.len(), self.nvars);
        self.terms.iter().map(|(m, &c)| c * m.eval(point)).sum()
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    /// Sum of absolute coefficients; bounds `|p|` on the unit box.
    pub fn l1_norm(&self) -> f64 {
        self.terms.values().map(|c| c.abs()).sum()
    }
}

/// Serialized as `{"nvars": n, "terms": [[exponents, coefficient], ...]}`.
#[derive(Serialize, Deserialize)]
struct PolyRepr {
    nvars: usize,
    terms: Vec<(Vec<u32>, f64)>,
}

impl Serialize for Poly<f64> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let terms = self.terms.iter().map(|(m, c)| (m.0.clone(), *c)).collect();
        PolyRepr { nvars: self.nvars, terms }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Poly<f64> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = PolyRepr::deserialize(d)?;
        if let Some((e, _)) = r.terms.iter().find(|(e, _)| e.len() != r.nvars) {
            return Err(serde::de::Error::custom(format!("monomial {e:?} does not have {} exponents", r.nvars)));
        }
        Ok(Poly::from_terms(r.nvars, r.terms.into_iter().map(|(e, c)| (Monomial(e), c))))
    }
}

impl<T: Coefficient> Add for &Poly<T> {
    type Output = Poly<T>;
    fn add(self, rhs: &Poly<T>) -> Poly<T> {
        self.try_add(rhs).expect("polynomial variable counts differ")
    }
}

impl<T: Coefficient> Sub for &Poly<T> {
    type Output = Poly<T>;
    fn sub(self, rhs: &Poly<T>) -> Poly<T> {
        self.try_sub(rhs).expect("polynomial variable counts differ")
    }
}

impl<T: Coefficient> Mul for &Poly<T> {
    type Output = Poly<T>;
    fn mul(self, rhs: &Poly<T>) -> Poly<T> {
        self.try_mul(rhs).expect("polynomial variable counts differ")
    }
}

impl<T: Coefficient> Neg for &Poly<T> {
    type Output = Poly<T>;
    fn neg(self) -> Poly<T> {
        self.map_coeffs(|c| -c.clone())
    }
}

impl<T: Coefficient> fmt::Display for Poly<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
