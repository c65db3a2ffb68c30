//! Tensor-product Chebyshev series `Σ c_α Π_i T_{α_i}(x_i)`.
//!
//! On the unit box the Chebyshev basis is far better conditioned than the
//! monomial one, so SOS coefficient matching is done in it. Multi-indices
//! reuse [`Monomial`].

use std::collections::BTreeMap;

use super::{Monomial, Poly};

#[derive(Clone, Debug, PartialEq)]
pub struct ChebSeries {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

/// `x^k = Σ_j table[k][j] T_j(x)` for `k ≤ max`.
fn power_table(max: u32) -> Vec<Vec<f64>> {
    let max = max as usize;
    let mut t = vec![vec![0.0; max + 1]; max + 1];
    t[0][0] = 1.0;
    for k in 0..max {
        // x T_0 = T_1, x T_j = (T_{j+1} + T_{j-1}) / 2.
        for j in 0..=k {
            let c = t[k][j];
            if c == 0.0 {
                continue;
            }
            if j == 0 {
                t[k + 1][1] += c;
            } else {
                t[k + 1][j + 1] += 0.5 * c;
                t[k + 1][j - 1] += 0.5 * c;
            }
        }
    }
    t
}

/// `T_j(x) = Σ_k table[j][k] x^k` for `j ≤ max`.
fn cheb_table(max: u32) -> Vec<Vec<f64>> {
    let max = max as usize;
    let mut t = vec![vec![0.0; max + 1]; max + 1];
    t[0][0] = 1.0;
    if max >= 1 {
        t[1][1] = 1.0;
    }
    for j in 2..=max {
        for k in 0..j {
            let prev = t[j - 1][k];
            t[j][k + 1] += 2.0 * prev;
            t[j][k] -= t[j - 2][k];
        }
    }
    t
}

/// Expands `Π_i table[e_i]` into multi-index terms.
fn tensor(exps: &[u32], table: &[Vec<f64>], coeff: f64, out: &mut BTreeMap<Monomial, f64>) {
    let mut acc: Vec<(Vec<u32>, f64)> = vec![(Vec::with_capacity(exps.len()), coeff)];
    for &e in exps {
        let row = &table[e as usize];
        let mut next = Vec::with_capacity(acc.len() * (e as usize + 1));
        for (idx, c) in &acc {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    let mut i2 = idx.clone();
                    i2.push(j as u32);
                    next.push((i2, c * v));
                }
            }
        }
        acc = next;
    }
    for (idx, c) in acc {
        *out.entry(Monomial::new(idx)).or_insert(0.0) += c;
    }
}

/// `T_α T_β` as a list of `(γ, coefficient)`, from `T_a T_b = (T_{a+b} + T_{|a−b|}) / 2`.
pub fn product_terms(a: &Monomial, b: &Monomial) -> Vec<(Monomial, f64)> {
    let mut acc: Vec<(Vec<u32>, f64)> = vec![(Vec::with_capacity(a.nvars()), 1.0)];
    for (&ea, &eb) in a.exponents().iter().zip(b.exponents()) {
        let mut next = Vec::with_capacity(acc.len() * 2);
        for (idx, c) in acc {
            if ea == 0 || eb == 0 {
                let mut i = idx;
                i.push(ea + eb);
                next.push((i, c));
            } else {
                let mut hi = idx.clone();
                hi.push(ea + eb);
                next.push((hi, 0.5 * c));
                let mut lo = idx;
                lo.push(ea.abs_diff(eb));
                next.push((lo, 0.5 * c));
            }
        }
        acc = next;
    }
    acc.into_iter().map(|(i, c)| (Monomial::new(i), c)).collect()
}

impl ChebSeries {
    pub fn zero(nvars: usize) -> Self {
        ChebSeries { nvars, terms: BTreeMap::new() }
    }

    pub fn from_terms<I: IntoIterator<Item = (Monomial, f64)>>(nvars: usize, terms: I) -> Self {
        let mut s = ChebSeries::zero(nvars);
        for (m, c) in terms {
            s.add_term(m, c);
        }
        s
    }

    pub fn from_poly(p: &Poly<f64>) -> Self {
        let table = power_table(p.degree());
        let mut terms = BTreeMap::new();
        for (m, &c) in p.terms() {
            tensor(m.exponents(), &table, c, &mut terms);
        }
        let mut s = ChebSeries { nvars: p.nvars(), terms };
        s.prune();
        s
    }

    pub fn to_poly(&self) -> Poly<f64> {
        let table = cheb_table(self.max_index());
        let mut terms = BTreeMap::new();
        for (m, &c) in &self.terms {
            tensor(m.exponents(), &table, c, &mut terms);
        }
        Poly::from_terms(self.nvars, terms)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &f64)> {
        self.terms.iter()
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    /// Largest single-variable index.
    fn max_index(&self) -> u32 {
        self.terms.keys().map(|m| m.exponents().iter().copied().max().unwrap_or(0)).max().unwrap_or(0)
    }

    pub fn add_term(&mut self, m: Monomial, c: f64) {
        debug_assert_eq!(m.nvars(), self.nvars);
        *self.terms.entry(m).or_insert(0.0) += c;
    }

    pub fn add_scaled(&mut self, other: &ChebSeries, s: f64) {
        for (m, &c) in &other.terms {
            self.add_term(m.clone(), s * c);
        }
    }

    pub fn mul(&self, other: &ChebSeries) -> ChebSeries {
        let mut out = ChebSeries::zero(self.nvars);
        for (a, &ca) in &self.terms {
            for (b, &cb) in &other.terms {
                for (g, c) in product_terms(a, b) {
                    out.add_term(g, ca * cb * c);
                }
            }
        }
        out.prune();
        out
    }

    /// Bounds `|Σ c_α T_α|` on the unit box.
    pub fn l1_norm(&self) -> f64 {
        self.terms.values().map(|c| c.abs()).sum()
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let deg = self.max_index() as usize;
        // T_j(x_i) for all i, j by the three-term recurrence.
        let vals: Vec<Vec<f64>> = x
            .iter()
            .map(|&xi| {
                let mut t = vec![1.0; deg + 1];
                if deg >= 1 {
                    t[1] = xi;
                }
                for j in 2..=deg {
                    t[j] = 2.0 * xi * t[j - 1] - t[j - 2];
                }
                t
            })
            .collect();
        self.terms
            .iter()
            .map(|(m, &c)| c * m.exponents().iter().zip(&vals).map(|(&e, t)| t[e as usize]).product::<f64>())
            .sum()
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| *c != 0.0);
    }
}
