//! Basic closed semialgebraic sets, boundary descriptions, and the two
//! certificate-building operators: the localizing sum `𝒟` and the boundary
//! shift `ℬ`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::PolyError;
use crate::Polynomial;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("a semialgebraic set needs at least one generator")]
    Empty,
    #[error("generator {index} has {got} variables, expected {expected}")]
    VarCountMismatch { index: usize, expected: usize, got: usize },
    #[error("multiplier index {nu:?} is invalid for {generators} generators ({kind:?})")]
    IndexMismatch { nu: Vec<u8>, generators: usize, kind: CertificateKind },
    #[error("multiplier for {nu:?} reaches degree {degree}, budget is {max_degree}")]
    DegreeOverflow { nu: Vec<u8>, degree: u32, max_degree: u32 },
    #[error("expected {expected} multipliers, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("variable {var} out of range for {nvars} variables")]
    VarOutOfRange { var: usize, nvars: usize },
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// `Ω = {x | g_i(x) ≥ 0 for all i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SemialgebraicSet {
    nvars: usize,
    inequalities: Vec<Polynomial>,
}

impl SemialgebraicSet {
    pub fn new(inequalities: Vec<Polynomial>) -> Result<Self, DomainError> {
        let nvars = inequalities.first().ok_or(DomainError::Empty)?.nvars();
        check_nvars(&inequalities, nvars)?;
        Ok(SemialgebraicSet { nvars, inequalities })
    }

    /// The whole space, used as a neutral factor in products.
    pub fn unconstrained(nvars: usize) -> Self {
        SemialgebraicSet { nvars, inequalities: Vec::new() }
    }

    /// The box `Π [lo_i, hi_i]` written with one quadratic generator per
    /// axis, `(x_i − lo_i)(hi_i − x_i) ≥ 0`.
    pub fn bounding_box(bounds: &[(f64, f64)]) -> Self {
        let n = bounds.len();
        let inequalities = bounds
            .iter()
            .enumerate()
            .map(|(i, &(lo, hi))| {
                let x = Polynomial::var(n, i);
                let a = &x - &Polynomial::constant(n, lo);
                let b = &Polynomial::constant(n, hi) - &x;
                &a * &b
            })
            .collect();
        SemialgebraicSet { nvars: n, inequalities }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn inequalities(&self) -> &[Polynomial] {
        &self.inequalities
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.inequalities.iter().all(|g| g.eval_f64(x) >= -tol)
    }

    /// Per-coordinate bounds read off generators that depend on a single
    /// variable with degree at most two. `None` for an axis no such
    /// generator bounds on both sides.
    pub fn axis_bounds(&self) -> Vec<Option<(f64, f64)>> {
        let mut lo = vec![f64::NEG_INFINITY; self.nvars];
        let mut hi = vec![f64::INFINITY; self.nvars];
        for g in &self.inequalities {
            let vars: Vec<usize> = (0..self.nvars).filter(|&v| g.depends_on(v)).collect();
            if vars.len() != 1 || g.degree() > 2 {
                continue;
            }
            let v = vars[0];
            let coef = |k: u32| {
                g.terms()
                    .find(|(m, _)| m.exponents()[v] == k)
                    .map(|(_, c)| *c)
                    .unwrap_or(0.0)
            };
            let (c0, c1, c2) = (coef(0), coef(1), coef(2));
            if c2 == 0.0 {
                if c1 > 0.0 {
                    lo[v] = lo[v].max(-c0 / c1);
                } else if c1 < 0.0 {
                    hi[v] = hi[v].min(-c0 / c1);
                }
            } else if c2 < 0.0 {
                let disc = c1 * c1 - 4.0 * c2 * c0;
                if disc >= 0.0 {
                    let r1 = (-c1 + disc.sqrt()) / (2.0 * c2);
                    let r2 = (-c1 - disc.sqrt()) / (2.0 * c2);
                    lo[v] = lo[v].max(r1.min(r2));
                    hi[v] = hi[v].min(r1.max(r2));
                }
            }
        }
        lo.into_iter()
            .zip(hi)
            .map(|(l, h)| (l.is_finite() && h.is_finite()).then_some((l, h)))
            .collect()
    }

    /// `axis_bounds` with every axis bounded, or `None`.
    pub fn bounds(&self) -> Option<Vec<(f64, f64)>> {
        self.axis_bounds().into_iter().collect()
    }

    /// Points of a regular grid over the bounding box that lie in the set.
    pub fn grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let Some(b) = self.bounds() else { return Vec::new() };
        grid_points(&b, per_axis).into_iter().filter(|p| self.contains(p, 0.0)).collect()
    }

    /// Uniform samples by rejection from the bounding box. Returns fewer
    /// than `n` points if the acceptance rate is tiny.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let Some(b) = self.bounds() else { return Vec::new() };
        let mut out = Vec::with_capacity(n);
        let mut tries = 0;
        while out.len() < n && tries < 1000 * n.max(1) {
            tries += 1;
            let p: Vec<f64> = b.iter().map(|&(l, h)| if h > l { rng.random_range(l..=h) } else { l }).collect();
            if self.contains(&p, 0.0) {
                out.push(p);
            }
        }
        out
    }

    /// Whether some grid point satisfies every generator strictly.
    pub fn has_interior(&self) -> bool {
        let Some(b) = self.bounds() else { return true };
        let per_axis = match self.nvars {
            0 | 1 => 201,
            2 => 41,
            _ => 9,
        };
        grid_points(&b, per_axis)
            .iter()
            .any(|p| self.inequalities.iter().all(|g| g.eval_f64(p) > 1e-9))
    }

    /// The same set without generators that are nonzero multiples of `h`.
    /// A row that already carries a free multiple of `h` gains nothing from
    /// them but an unbounded direction.
    pub fn without_multiples_of(&self, h: &Polynomial) -> SemialgebraicSet {
        let Some((lead, &hc)) = h.terms().next_back() else { return self.clone() };
        let keep = self
            .inequalities
            .iter()
            .filter(|g| {
                let c = g.coeff(lead) / hc;
                c == 0.0 || (*g - &h.scale(&c)).max_abs_coeff() > 1e-12 * g.max_abs_coeff()
            })
            .cloned()
            .collect();
        SemialgebraicSet { nvars: self.nvars, inequalities: keep }
    }
}

fn check_nvars(polys: &[Polynomial], nvars: usize) -> Result<(), DomainError> {
    for (index, g) in polys.iter().enumerate() {
        if g.nvars() != nvars {
            return Err(DomainError::VarCountMismatch { index, expected: nvars, got: g.nvars() });
        }
    }
    Ok(())
}

/// Tensor grid with `per_axis` points per coordinate, endpoints included.
pub fn grid_points(bounds: &[(f64, f64)], per_axis: usize) -> Vec<Vec<f64>> {
    let per_axis = per_axis.max(1);
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(l, h)| {
            if per_axis == 1 {
                vec![0.5 * (l + h)]
            } else {
                (0..per_axis).map(|k| l + (h - l) * k as f64 / (per_axis - 1) as f64).collect()
            }
        })
        .collect();
    let mut out = vec![Vec::new()];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

/// A polynomial value pinned at an isolated boundary point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointConstraint {
    pub point: Vec<f64>,
    pub value: f64,
}

/// `∂Ω = {x | Π h_i(x) = 0}` plus isolated points handled by value.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySet {
    nvars: usize,
    components: Vec<Polynomial>,
    pub point_constraints: Vec<PointConstraint>,
}

impl BoundarySet {
    pub fn new(nvars: usize, components: Vec<Polynomial>, point_constraints: Vec<PointConstraint>) -> Result<Self, DomainError> {
        check_nvars(&components, nvars)?;
        for p in &point_constraints {
            if p.point.len() != nvars {
                return Err(PolyError::DimensionMismatch { expected: nvars, got: p.point.len() }.into());
            }
        }
        Ok(BoundarySet { nvars, components, point_constraints })
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    /// `σ_0 + Σ_i σ_i g_i`.
    #[default]
    QuadraticModule,
    /// `Σ_ν σ_ν g^ν` over every product of distinct generators.
    Preordering,
}

/// One term `s_ν · g^ν` of a localizing sum, before `s_ν` is chosen.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorProduct {
    pub nu: Vec<u8>,
    pub product: Polynomial,
    /// Even degree available to `s_ν` under the budget.
    pub multiplier_degree: u32,
}

/// Index vectors `ν ≠ 0` of the given kind over `k` generators.
pub fn multiplier_indices(kind: CertificateKind, k: usize) -> Vec<Vec<u8>> {
    match kind {
        CertificateKind::QuadraticModule => (0..k)
            .map(|i| {
                let mut nu = vec![0u8; k];
                nu[i] = 1;
                nu
            })
            .collect(),
        CertificateKind::Preordering => (1u64..(1u64 << k))
            .map(|bits| (0..k).map(|i| ((bits >> i) & 1) as u8).collect())
            .collect(),
    }
}

fn valid_index(kind: CertificateKind, nu: &[u8], k: usize) -> bool {
    if nu.len() != k || nu.iter().any(|&b| b > 1) {
        return false;
    }
    let ones = nu.iter().filter(|&&b| b == 1).count();
    match kind {
        CertificateKind::QuadraticModule => ones == 1,
        CertificateKind::Preordering => ones >= 1,
    }
}

fn generator_power(set: &SemialgebraicSet, nu: &[u8]) -> Polynomial {
    let mut p = Polynomial::one(set.nvars);
    for (g, &b) in set.inequalities.iter().zip(nu) {
        if b == 1 {
            p = &p * g;
        }
    }
    p
}

/// The terms `g^ν` with the multiplier degree `max_degree − deg g^ν`
/// rounded down to even; products that exceed the budget are dropped.
pub fn generator_products(set: &SemialgebraicSet, kind: CertificateKind, max_degree: u32) -> Vec<GeneratorProduct> {
    multiplier_indices(kind, set.inequalities.len())
        .into_iter()
        .filter_map(|nu| {
            let product = generator_power(set, &nu);
            let d = product.degree();
            (d <= max_degree).then(|| GeneratorProduct { nu, product, multiplier_degree: (max_degree - d) & !1 })
        })
        .collect()
}

/// Concrete multipliers `s_ν` for a set.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiplierSet {
    pub kind: CertificateKind,
    pub multipliers: BTreeMap<Vec<u8>, Polynomial>,
    pub max_degree: u32,
}

impl MultiplierSet {
    pub fn new(kind: CertificateKind, max_degree: u32) -> Self {
        MultiplierSet { kind, multipliers: BTreeMap::new(), max_degree }
    }

    pub fn with(mut self, nu: Vec<u8>, s: Polynomial) -> Self {
        self.multipliers.insert(nu, s);
        self
    }
}

/// `𝒟(Ω, S) = Σ_ν s_ν g^ν`.
pub fn d_operator(set: &SemialgebraicSet, s: &MultiplierSet) -> Result<Polynomial, DomainError> {
    let k = set.inequalities.len();
    let mut out = Polynomial::zero(set.nvars);
    for (nu, m) in &s.multipliers {
        if !valid_index(s.kind, nu, k) {
            return Err(DomainError::IndexMismatch { nu: nu.clone(), generators: k, kind: s.kind });
        }
        if m.nvars() != set.nvars {
            return Err(PolyError::VarCountMismatch { left: set.nvars, right: m.nvars() }.into());
        }
        let term = m * &generator_power(set, nu);
        if !m.is_zero() && term.degree() > s.max_degree {
            return Err(DomainError::DegreeOverflow { nu: nu.clone(), degree: term.degree(), max_degree: s.max_degree });
        }
        out = &out + &term;
    }
    Ok(out)
}

/// `ℬ(p, ∂Ω, T) = {p − t_i h_i}`.
pub fn b_operator(p: &Polynomial, boundary: &BoundarySet, t: &[Polynomial]) -> Result<Vec<Polynomial>, DomainError> {
    if t.len() != boundary.components.len() {
        return Err(DomainError::LengthMismatch { expected: boundary.components.len(), got: t.len() });
    }
    boundary
        .components
        .iter()
        .zip(t)
        .map(|(h, ti)| {
            let th = ti.try_mul(h)?;
            Ok(p.try_sub(&th)?)
        })
        .collect()
}

/// Affine coordinates `x = center + scale ∘ s`. Programs are solved in `s`,
/// chosen so a piece's bounding box becomes the unit box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Frame {
    pub fn identity(nvars: usize) -> Self {
        Frame { center: vec![0.0; nvars], scale: vec![1.0; nvars] }
    }

    /// Maps each bounded axis onto `[-1, 1]`; unbounded or degenerate axes
    /// are left alone.
    pub fn fit(bounds: &[Option<(f64, f64)>]) -> Self {
        let (center, scale) = bounds
            .iter()
            .map(|b| match *b {
                Some((lo, hi)) if hi > lo => (0.5 * (lo + hi), 0.5 * (hi - lo)),
                _ => (0.0, 1.0),
            })
            .unzip();
        Frame { center, scale }
    }

    pub fn nvars(&self) -> usize {
        self.center.len()
    }

    pub fn is_identity(&self) -> bool {
        self.center.iter().all(|&c| c == 0.0) && self.scale.iter().all(|&r| r == 1.0)
    }

    /// The frame restricted to variables `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Frame {
        Frame { center: self.center[range.clone()].to_vec(), scale: self.scale[range].to_vec() }
    }

    pub fn concat(&self, other: &Frame) -> Frame {
        let mut out = self.clone();
        out.center.extend_from_slice(&other.center);
        out.scale.extend_from_slice(&other.scale);
        out
    }

    /// `s = (x − center) / scale` on the leading `x.len()` variables.
    pub fn to_local(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.center).zip(&self.scale).map(|((v, c), r)| (v - c) / r).collect()
    }

    pub fn to_global(&self, s: &[f64]) -> Vec<f64> {
        s.iter().zip(&self.center).zip(&self.scale).map(|((v, c), r)| c + r * v).collect()
    }

    /// `p(center + scale ∘ s)` for `p` over the leading `p.nvars()` variables.
    pub fn poly_to_local(&self, p: &Polynomial) -> Polynomial {
        let n = p.nvars();
        p.affine_substitute(&self.center[..n], &self.scale[..n]).expect("frame covers the variables")
    }

    /// Inverse of [`poly_to_local`](Self::poly_to_local).
    pub fn poly_to_global(&self, p: &Polynomial) -> Polynomial {
        let n = p.nvars();
        let c: Vec<f64> = (0..n).map(|i| -self.center[i] / self.scale[i]).collect();
        let r: Vec<f64> = (0..n).map(|i| 1.0 / self.scale[i]).collect();
        p.affine_substitute(&c, &r).expect("frame covers the variables")
    }

    pub fn set_to_local(&self, set: &SemialgebraicSet) -> SemialgebraicSet {
        SemialgebraicSet { nvars: set.nvars, inequalities: set.inequalities.iter().map(|g| self.poly_to_local(g)).collect() }
    }
}

/// `Ω × ℋ` over the concatenated variables `(x, a)`.
pub fn product_domain(a: &SemialgebraicSet, b: &SemialgebraicSet) -> SemialgebraicSet {
    let n = a.nvars + b.nvars;
    let inequalities = a
        .inequalities
        .iter()
        .map(|g| g.lift(n, 0))
        .chain(b.inequalities.iter().map(|g| g.lift(n, a.nvars)))
        .collect();
    SemialgebraicSet { nvars: n, inequalities }
}

impl SemialgebraicSet {
    /// The set with one more generator.
    pub fn with_generator(&self, g: Polynomial) -> Result<SemialgebraicSet, DomainError> {
        if g.nvars() != self.nvars {
            return Err(DomainError::VarCountMismatch { index: self.inequalities.len(), expected: self.nvars, got: g.nvars() });
        }
        let mut out = self.clone();
        out.inequalities.push(g);
        Ok(out)
    }
}

/// `Ω ∩ {sign · x_var ≥ 0}`.
pub fn halfspace_intersect(set: &SemialgebraicSet, var: usize, sign: i8) -> Result<SemialgebraicSet, DomainError> {
    if var >= set.nvars {
        return Err(DomainError::VarOutOfRange { var, nvars: set.nvars });
    }
    let mut out = set.clone();
    let s = if sign >= 0 { 1.0 } else { -1.0 };
    out.inequalities.push(Polynomial::var(set.nvars, var).scale(&s));
    Ok(out)
}
