//! Sum-of-squares programs and their compilation to semidefinite programs.
//!
//! A program has scalar decision variables (including the coefficients of
//! polynomial templates), constraints asking affine polynomial expressions
//! to be sums of squares, optionally localized by generators `g^ν` of a
//! semialgebraic set, scalar linear constraints, and a linear objective.
//! Each SOS constraint `e = σ_0 + Σ_ν σ_ν g^ν` becomes one Gram block per
//! `σ` and one coefficient-matching equality per Chebyshev coefficient, with
//! Gram matrices written in the Chebyshev basis. Both are far better
//! conditioned than their monomial counterparts on the unit box, so callers
//! should scale their variables into it.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::domain::{generator_products, CertificateKind, SemialgebraicSet};
use crate::poly::{product_terms, ChebSeries, Monomial, PolyError};
use crate::sdp::{BlockEntry, SdpConstraint, SdpProblem, SdpSolution, SdpStatus};
use crate::Polynomial;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SosError {
    #[error("Gram basis needs an even degree, got {0}")]
    OddDegree(u32),
    #[error("constraint '{label}': expression has degree {degree}, budget is {budget}")]
    DegreeMismatch { label: String, degree: u32, budget: u32 },
    #[error("constraint '{label}': monomial {monomial} cannot be matched (coefficient {value:e})")]
    TriviallyInfeasible { label: String, monomial: String, value: f64 },
    #[error("solution status {0:?} carries no certificate")]
    NotOptimal(SdpStatus),
    #[error("duplicate name '{0}'")]
    DuplicateName(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// `constant + Σ coeffs[v] · u_v` over scalar decision variables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AffineScalar {
    pub constant: f64,
    pub coeffs: BTreeMap<usize, f64>,
}

impl AffineScalar {
    pub fn constant(c: f64) -> Self {
        AffineScalar { constant: c, coeffs: BTreeMap::new() }
    }

    pub fn var(v: usize) -> Self {
        AffineScalar { constant: 0.0, coeffs: BTreeMap::from([(v, 1.0)]) }
    }

    pub fn add(&self, other: &AffineScalar) -> AffineScalar {
        let mut out = self.clone();
        out.constant += other.constant;
        for (&v, &c) in &other.coeffs {
            *out.coeffs.entry(v).or_insert(0.0) += c;
        }
        out
    }

    pub fn scale(&self, s: f64) -> AffineScalar {
        AffineScalar { constant: self.constant * s, coeffs: self.coeffs.iter().map(|(&v, &c)| (v, c * s)).collect() }
    }

    pub fn sub(&self, other: &AffineScalar) -> AffineScalar {
        self.add(&other.scale(-1.0))
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().map(|(&v, &c)| c * values[v]).sum::<f64>()
    }
}

/// A polynomial whose coefficients are affine in scalar decision variables:
/// `constant(x) + Σ_v u_v · terms[v](x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinePoly {
    nvars: usize,
    constant: Polynomial,
    terms: BTreeMap<usize, Polynomial>,
}

impl AffinePoly {
    pub fn zero(nvars: usize) -> Self {
        AffinePoly { nvars, constant: Polynomial::zero(nvars), terms: BTreeMap::new() }
    }

    pub fn from_poly(p: Polynomial) -> Self {
        AffinePoly { nvars: p.nvars(), constant: p, terms: BTreeMap::new() }
    }

    /// `u_v · p`.
    pub fn var_times(v: usize, p: Polynomial) -> Self {
        AffinePoly { nvars: p.nvars(), constant: Polynomial::zero(p.nvars()), terms: BTreeMap::from([(v, p)]) }
    }

    /// The constant `u_v`, as a polynomial in `nvars` variables.
    pub fn scalar(nvars: usize, s: &AffineScalar) -> Self {
        let mut out = AffinePoly::from_poly(Polynomial::constant(nvars, s.constant));
        for (&v, &c) in &s.coeffs {
            out.terms.insert(v, Polynomial::constant(nvars, c));
        }
        out
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn constant_part(&self) -> &Polynomial {
        &self.constant
    }

    pub fn terms(&self) -> &BTreeMap<usize, Polynomial> {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms.values().map(|p| p.degree()).fold(self.constant.degree(), u32::max)
    }

    pub fn add(&self, other: &AffinePoly) -> AffinePoly {
        let mut out = self.clone();
        out.constant = &out.constant + &other.constant;
        for (&v, p) in &other.terms {
            let e = out.terms.entry(v).or_insert_with(|| Polynomial::zero(self.nvars));
            *e = &*e + p;
        }
        out.terms.retain(|_, p| !p.is_zero());
        out
    }

    pub fn sub(&self, other: &AffinePoly) -> AffinePoly {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> AffinePoly {
        self.map_linear(|p| p.scale(&s))
    }

    pub fn mul_poly(&self, q: &Polynomial) -> AffinePoly {
        self.map_linear(|p| p * q)
    }

    pub fn add_poly(&self, q: &Polynomial) -> AffinePoly {
        let mut out = self.clone();
        out.constant = &out.constant + q;
        out
    }

    /// Applies a linear map to every part; the map must send zero to zero.
    pub fn map_linear<F: Fn(&Polynomial) -> Polynomial>(&self, f: F) -> AffinePoly {
        let constant = f(&self.constant);
        let nvars = constant.nvars();
        let terms = self
            .terms
            .iter()
            .map(|(&v, p)| (v, f(p)))
            .filter(|(_, p)| !p.is_zero())
            .collect();
        AffinePoly { nvars, constant, terms }
    }

    /// Fallible form of [`map_linear`](Self::map_linear).
    pub fn try_map_linear<E, F: FnMut(&Polynomial) -> Result<Polynomial, E>>(&self, mut f: F) -> Result<AffinePoly, E> {
        let constant = f(&self.constant)?;
        let nvars = constant.nvars();
        let mut terms = BTreeMap::new();
        for (&v, p) in &self.terms {
            let q = f(p)?;
            if !q.is_zero() {
                terms.insert(v, q);
            }
        }
        Ok(AffinePoly { nvars, constant, terms })
    }

    pub fn diff(&self, var: usize) -> Result<AffinePoly, PolyError> {
        if var >= self.nvars {
            return Err(PolyError::VarOutOfRange { var, nvars: self.nvars });
        }
        Ok(self.map_linear(|p| p.diff(var).expect("variable checked")))
    }

    /// Substitutes decision values.
    pub fn evaluate(&self, values: &[f64]) -> Polynomial {
        let mut out = self.constant.clone();
        for (&v, p) in &self.terms {
            out = &out + &p.scale(&values[v]);
        }
        out
    }

    /// The affine scalar `expr(x)` at a fixed state.
    pub fn at_point(&self, x: &[f64]) -> AffineScalar {
        AffineScalar {
            constant: self.constant.eval_f64(x),
            coeffs: self.terms.iter().map(|(&v, p)| (v, p.eval_f64(x))).collect(),
        }
    }
}

/// Half-degree Chebyshev basis `z(x)` and the map from Chebyshev indices to
/// the Gram positions `(a, b, weight)` (with `a ≤ b`) whose products
/// `z_a z_b` contribute to them.
///
/// Basis entry `a` is `Σ elements[a]`; `basis[a]` is its leading index. The
/// plain basis is `z = (T_α)_{|α| ≤ d}`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMap {
    pub basis: Vec<Monomial>,
    pub elements: Vec<Vec<(Monomial, f64)>>,
    pub index: BTreeMap<Monomial, Vec<(usize, usize, f64)>>,
}

pub fn build_gram_basis(nvars: usize, degree: u32) -> Result<GramMap, SosError> {
    if degree % 2 != 0 {
        return Err(SosError::OddDegree(degree));
    }
    Ok(gram_map(nvars, degree / 2))
}

fn gram_map(nvars: usize, half: u32) -> GramMap {
    let basis = Monomial::all_up_to(nvars, half);
    let elements = basis.iter().map(|m| vec![(m.clone(), 1.0)]).collect();
    GramMap::from_elements(basis, elements)
}

/// `T_e(x)` by the three-term recurrence.
fn cheb_at(e: u32, x: f64) -> f64 {
    let (mut a, mut b) = (1.0, x);
    for _ in 0..e {
        (a, b) = (b, 2.0 * x * b - a);
    }
    a
}

/// Basis of the polynomials of degree `≤ half` vanishing on
/// `{x : x_i = point_i, i < point.len()}`: `(T_α(x') − T_α(point)) T_β(x'')`
/// with `α ≠ 0` over the leading variables `x'`.
fn gram_map_vanishing(nvars: usize, half: u32, point: &[f64]) -> GramMap {
    let k = point.len();
    let basis: Vec<Monomial> =
        Monomial::all_up_to(nvars, half).into_iter().filter(|m| m.exponents()[..k].iter().any(|&e| e > 0)).collect();
    let elements = basis
        .iter()
        .map(|m| {
            let at: f64 = m.exponents()[..k].iter().zip(point).map(|(&e, &p)| cheb_at(e, p)).product();
            let mut rest = m.exponents().to_vec();
            rest[..k].fill(0);
            let mut terms = vec![(m.clone(), 1.0)];
            if at.abs() > 1e-15 {
                terms.push((Monomial::new(rest), -at));
            }
            terms
        })
        .collect();
    GramMap::from_elements(basis, elements)
}

impl GramMap {
    fn from_elements(basis: Vec<Monomial>, elements: Vec<Vec<(Monomial, f64)>>) -> Self {
        let mut index: BTreeMap<Monomial, Vec<(usize, usize, f64)>> = BTreeMap::new();
        for a in 0..elements.len() {
            for b in a..elements.len() {
                for (ma, ca) in &elements[a] {
                    for (mb, cb) in &elements[b] {
                        for (g, c) in product_terms(ma, mb) {
                            index.entry(g).or_default().push((a, b, ca * cb * c));
                        }
                    }
                }
            }
        }
        GramMap { basis, elements, index }
    }

    /// `z(x)ᵀ Q z(x)` as a Chebyshev series.
    pub fn recompose_series(&self, q: &DMatrix<f64>) -> ChebSeries {
        let nvars = self.basis.first().map(|m| m.nvars()).unwrap_or(0);
        let terms = self.index.iter().map(|(m, pos)| {
            let c: f64 = pos
                .iter()
                .map(|&(a, b, w)| if a == b { w * q[(a, a)] } else { w * (q[(a, b)] + q[(b, a)]) })
                .sum();
            (m.clone(), c)
        });
        ChebSeries::from_terms(nvars, terms)
    }

    /// `z(x)ᵀ Q z(x)` in the monomial basis.
    pub fn recompose(&self, q: &DMatrix<f64>) -> Polynomial {
        self.recompose_series(q).to_poly()
    }
}

/// A localizing generator `g` whose multiplier is an SOS of the given even
/// degree.
#[derive(Clone, Debug, PartialEq)]
pub struct Localizer {
    pub generator: Polynomial,
    pub multiplier_degree: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SosConstraint {
    pub label: String,
    pub expr: AffinePoly,
    pub localizers: Vec<Localizer>,
    /// Even degree of the `σ_0` Gram block.
    pub degree: u32,
    /// When set, `expr` vanishes wherever the leading variables equal this
    /// point, and every multiplier whose generator does not vanish there
    /// uses a basis vanishing there too.
    pub vanishing: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinearKind {
    /// `expr = 0`.
    Eq,
    /// `expr ≥ 0`.
    Ge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearConstraint {
    pub label: String,
    pub expr: AffineScalar,
    pub kind: LinearKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub name: String,
    pub basis: Vec<Monomial>,
    pub first_var: usize,
    /// Basis entries are Chebyshev indices `T_α` rather than monomials.
    pub chebyshev: bool,
}

impl Template {
    /// The polynomial with the given coefficient vector.
    pub fn poly(&self, nvars: usize, coeffs: &[f64]) -> Polynomial {
        let terms = self.basis.iter().cloned().zip(coeffs.iter().copied());
        if self.chebyshev {
            ChebSeries::from_terms(nvars, terms).to_poly()
        } else {
            Polynomial::from_terms(nvars, terms)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SosProgram {
    nvars: usize,
    scalars: Vec<String>,
    templates: Vec<Template>,
    pub sos_constraints: Vec<SosConstraint>,
    pub linear_constraints: Vec<LinearConstraint>,
    pub objective: AffineScalar,
}

impl SosProgram {
    pub fn new(nvars: usize) -> Self {
        SosProgram {
            nvars,
            scalars: Vec::new(),
            templates: Vec::new(),
            sos_constraints: Vec::new(),
            linear_constraints: Vec::new(),
            objective: AffineScalar::default(),
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn num_scalars(&self) -> usize {
        self.scalars.len()
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    /// Adds a free scalar and returns its index.
    pub fn scalar(&mut self, name: &str) -> usize {
        self.scalars.push(name.to_string());
        self.scalars.len() - 1
    }

    /// A polynomial with one free coefficient per monomial of degree at most
    /// `degree`.
    pub fn template(&mut self, name: &str, degree: u32) -> Result<AffinePoly, SosError> {
        self.template_with_basis(name, Monomial::all_up_to(self.nvars, degree))
    }

    pub fn template_with_basis(&mut self, name: &str, basis: Vec<Monomial>) -> Result<AffinePoly, SosError> {
        self.new_template(name, basis, false)
    }

    /// A template `Σ_k u_k T_{α_k}(x)` in the Chebyshev basis, far better
    /// conditioned than monomials of high degree on the unit box.
    pub fn template_chebyshev(&mut self, name: &str, basis: Vec<Monomial>) -> Result<AffinePoly, SosError> {
        self.new_template(name, basis, true)
    }

    fn new_template(&mut self, name: &str, basis: Vec<Monomial>, chebyshev: bool) -> Result<AffinePoly, SosError> {
        if self.templates.iter().any(|t| t.name == name) {
            return Err(SosError::DuplicateName(name.to_string()));
        }
        let first_var = self.scalars.len();
        let mut expr = AffinePoly::zero(self.nvars);
        for (k, m) in basis.iter().enumerate() {
            if m.nvars() != self.nvars {
                return Err(PolyError::VarCountMismatch { left: self.nvars, right: m.nvars() }.into());
            }
            let v = self.scalar(&format!("{name}[{k}]"));
            let p = if chebyshev {
                ChebSeries::from_terms(self.nvars, [(m.clone(), 1.0)]).to_poly()
            } else {
                Polynomial::monomial(m.clone(), 1.0)
            };
            expr.terms.insert(v, p);
        }
        self.templates.push(Template { name: name.to_string(), basis, first_var, chebyshev });
        Ok(expr)
    }

    /// `expr ∈ Σ[x]` with the smallest even Gram degree covering `expr`.
    pub fn add_sos(&mut self, label: &str, expr: AffinePoly) -> Result<(), SosError> {
        let degree = even_ceil(expr.degree());
        self.add_sos_with(label, expr, Vec::new(), degree)
    }

    /// `expr − 𝒟(set, S) ∈ Σ[x]` with SOS multipliers of the given kind. The
    /// certificate degree is the larger of `min_degree` and `deg expr`,
    /// rounded up to even.
    pub fn add_sos_on(
        &mut self,
        label: &str,
        expr: AffinePoly,
        set: &SemialgebraicSet,
        kind: CertificateKind,
        min_degree: u32,
    ) -> Result<(), SosError> {
        let degree = even_ceil(expr.degree().max(min_degree));
        let localizers = generator_products(set, kind, degree)
            .into_iter()
            .map(|g| Localizer { generator: g.product, multiplier_degree: g.multiplier_degree })
            .collect();
        self.add_sos_with(label, expr, localizers, degree)
    }

    /// Like [`add_sos_on`](Self::add_sos_on) for an `expr` that vanishes
    /// identically on `{x : x_i = point_i, i < point.len()}`. The certificate
    /// is restricted to multipliers that vanish there as well, which removes
    /// the zero directions every feasible Gram matrix would otherwise share.
    pub fn add_sos_on_vanishing(
        &mut self,
        label: &str,
        expr: AffinePoly,
        set: &SemialgebraicSet,
        kind: CertificateKind,
        min_degree: u32,
        point: &[f64],
    ) -> Result<(), SosError> {
        if point.len() > self.nvars {
            return Err(PolyError::VarCountMismatch { left: self.nvars, right: point.len() }.into());
        }
        self.add_sos_on(label, expr, set, kind, min_degree)?;
        self.sos_constraints.last_mut().expect("just added").vanishing = Some(point.to_vec());
        Ok(())
    }

    pub fn add_sos_with(&mut self, label: &str, expr: AffinePoly, localizers: Vec<Localizer>, degree: u32) -> Result<(), SosError> {
        if degree % 2 != 0 {
            return Err(SosError::OddDegree(degree));
        }
        if expr.nvars() != self.nvars {
            return Err(PolyError::VarCountMismatch { left: self.nvars, right: expr.nvars() }.into());
        }
        if expr.degree() > degree {
            return Err(SosError::DegreeMismatch { label: label.to_string(), degree: expr.degree(), budget: degree });
        }
        self.sos_constraints.push(SosConstraint { label: label.to_string(), expr, localizers, degree, vanishing: None });
        Ok(())
    }

    pub fn add_eq(&mut self, label: &str, expr: AffineScalar) {
        self.linear_constraints.push(LinearConstraint { label: label.to_string(), expr, kind: LinearKind::Eq });
    }

    /// `expr ≡ 0`, one equality per Chebyshev coefficient.
    pub fn add_identity(&mut self, label: &str, expr: &AffinePoly) {
        let mut rows: BTreeMap<Monomial, AffineScalar> = BTreeMap::new();
        for (m, &c) in ChebSeries::from_poly(&expr.constant).terms() {
            rows.entry(m.clone()).or_default().constant += c;
        }
        for (&v, p) in &expr.terms {
            for (m, &c) in ChebSeries::from_poly(p).terms() {
                *rows.entry(m.clone()).or_default().coeffs.entry(v).or_insert(0.0) += c;
            }
        }
        for (m, row) in rows {
            self.add_eq(&format!("{label} [{m:?}]"), row);
        }
    }

    pub fn add_ge(&mut self, label: &str, expr: AffineScalar) {
        self.linear_constraints.push(LinearConstraint { label: label.to_string(), expr, kind: LinearKind::Ge });
    }

    pub fn minimize(&mut self, objective: AffineScalar) {
        self.objective = objective;
    }

    pub fn compile(&self) -> Result<CompiledProgram, SosError> {
        let mut blocks = Vec::new();
        let mut constraints = Vec::new();
        let mut certificates = Vec::new();
        for c in &self.sos_constraints {
            let mut parts = Vec::new();
            let mut rows: BTreeMap<Monomial, RowBuilder> = BTreeMap::new();
            let mut add_block = |gm: GramMap, generator: Polynomial, blocks: &mut Vec<usize>| {
                if gm.basis.is_empty() {
                    return;
                }
                let block = blocks.len();
                blocks.push(gm.basis.len());
                let g = ChebSeries::from_poly(&generator);
                for (m, positions) in &gm.index {
                    for (gm_idx, gc) in g.terms() {
                        for (row_idx, pc) in product_terms(m, gm_idx) {
                            let row = rows.entry(row_idx).or_default();
                            for &(a, b, w) in positions {
                                let w = if a == b { w } else { 2.0 * w };
                                *row.blocks.entry((block, a, b)).or_insert(0.0) += w * gc * pc;
                            }
                        }
                    }
                }
                parts.push(CertificatePart { block, gram: gm, generator });
            };
            let map = |half: u32, generator: &Polynomial| match &c.vanishing {
                Some(p) if !vanishes_on(generator, p) => gram_map_vanishing(self.nvars, half, p),
                _ => gram_map(self.nvars, half),
            };
            add_block(map(c.degree / 2, &Polynomial::one(self.nvars)), Polynomial::one(self.nvars), &mut blocks);
            for l in &c.localizers {
                add_block(map(l.multiplier_degree / 2, &l.generator), l.generator.clone(), &mut blocks);
            }
            // Σ Gram terms − Σ_v coef_v u_v = constant part, matched per
            // Chebyshev coefficient.
            for (m, coef) in ChebSeries::from_poly(&c.expr.constant).terms() {
                rows.entry(m.clone()).or_default().rhs += coef;
            }
            for (&v, p) in &c.expr.terms {
                for (m, coef) in ChebSeries::from_poly(p).terms() {
                    *rows.entry(m.clone()).or_default().free.entry(v).or_insert(0.0) -= coef;
                }
            }
            for (m, row) in rows {
                if let Some(sc) = row.finish(&c.label, &m)? {
                    constraints.push(sc);
                }
            }
            certificates.push(parts);
        }
        let mut slack_blocks = Vec::new();
        for l in &self.linear_constraints {
            let mut row = RowBuilder { rhs: -l.expr.constant, ..Default::default() };
            row.free = l.expr.coeffs.iter().map(|(&v, &c)| (v, c)).collect();
            if l.kind == LinearKind::Ge {
                let block = blocks.len();
                blocks.push(1);
                row.blocks.insert((block, 0, 0), -1.0);
                slack_blocks.push(block);
            }
            if let Some(sc) = row.finish(&l.label, &Monomial::one(self.nvars))? {
                constraints.push(sc);
            }
        }
        let mut objective_free = vec![0.0; self.scalars.len()];
        for (&v, &c) in &self.objective.coeffs {
            objective_free[v] += c;
        }
        let sdp = SdpProblem { blocks, num_free: self.scalars.len(), constraints, objective_free, objective_blocks: Vec::new() };
        Ok(CompiledProgram { sdp, certificates })
    }

    /// Solved templates, scalars, and objective value.
    pub fn extract(&self, sol: &SdpSolution) -> Result<SosSolution, SosError> {
        if sol.status != SdpStatus::Optimal {
            return Err(SosError::NotOptimal(sol.status));
        }
        Ok(self.extract_values(&sol.y))
    }

    /// Like [`extract`](Self::extract) but from raw decision values.
    pub fn extract_values(&self, values: &[f64]) -> SosSolution {
        let polys = self
            .templates
            .iter()
            .map(|t| (t.name.clone(), t.poly(self.nvars, &values[t.first_var..t.first_var + t.basis.len()])))
            .collect();
        let template_vars: usize = self.templates.iter().map(|t| t.basis.len()).sum();
        let scalars = self
            .scalars
            .iter()
            .enumerate()
            .filter(|(v, _)| !self.templates.iter().any(|t| (t.first_var..t.first_var + t.basis.len()).contains(v)))
            .map(|(v, name)| (name.clone(), values[v]))
            .collect();
        debug_assert!(template_vars <= values.len());
        SosSolution { values: values.to_vec(), polys, scalars, objective: self.objective.eval(values) }
    }

    /// Per SOS constraint, the largest Chebyshev coefficient of
    /// `expr − z₀ᵀQ₀z₀ − Σ g_ν z_νᵀQ_νz_ν` under the solver's values.
    pub fn certificate_residuals(&self, compiled: &CompiledProgram, sol: &SdpSolution) -> Vec<f64> {
        self.sos_constraints
            .iter()
            .zip(&compiled.certificates)
            .map(|(c, parts)| {
                let mut r = ChebSeries::from_poly(&c.expr.evaluate(&sol.y));
                for part in parts {
                    let s = part.gram.recompose_series(&sol.block_matrices[part.block]);
                    r.add_scaled(&s.mul(&ChebSeries::from_poly(&part.generator)), -1.0);
                }
                r.max_abs_coeff()
            })
            .collect()
    }
}

fn even_ceil(d: u32) -> u32 {
    d + (d % 2)
}

#[derive(Default)]
struct RowBuilder {
    blocks: HashMap<(usize, usize, usize), f64>,
    free: BTreeMap<usize, f64>,
    rhs: f64,
}

impl RowBuilder {
    /// Scales the row by its largest coefficient. Rows without unknowns
    /// must have a zero right-hand side.
    fn finish(self, label: &str, m: &Monomial) -> Result<Option<SdpConstraint>, SosError> {
        let scale = self
            .blocks
            .values()
            .chain(self.free.values())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        if scale == 0.0 {
            if self.rhs.abs() > 1e-12 {
                return Err(SosError::TriviallyInfeasible {
                    label: label.to_string(),
                    monomial: Polynomial::monomial(m.clone(), 1.0).to_text(),
                    value: self.rhs,
                });
            }
            return Ok(None);
        }
        let mut block_entries: Vec<BlockEntry> = self
            .blocks
            .into_iter()
            .filter(|(_, v)| *v != 0.0)
            .map(|((b, r, c), v)| BlockEntry::new(b, r, c, v / scale))
            .collect();
        block_entries.sort_by_key(|e| (e.block, e.row, e.col));
        let free_entries = self.free.into_iter().filter(|(_, v)| *v != 0.0).map(|(k, v)| (k, v / scale)).collect();
        Ok(Some(SdpConstraint { block_entries, free_entries, rhs: self.rhs / scale }))
    }
}

/// Whether `g` is identically zero once the leading variables are fixed to
/// `point`.
pub fn vanishes_on(g: &Polynomial, point: &[f64]) -> bool {
    let mut r = g.clone();
    for &p in point {
        r = r.substitute(0, &p).expect("point fits the variable count");
    }
    r.max_abs_coeff() <= 1e-12 * (1.0 + g.max_abs_coeff())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertificatePart {
    pub block: usize,
    pub gram: GramMap,
    pub generator: Polynomial,
}

#[derive(Clone, Debug)]
pub struct CompiledProgram {
    pub sdp: SdpProblem,
    /// Gram blocks of each SOS constraint, `σ_0` first.
    pub certificates: Vec<Vec<CertificatePart>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SosSolution {
    pub values: Vec<f64>,
    pub polys: BTreeMap<String, Polynomial>,
    /// Scalars that are not template coefficients.
    pub scalars: BTreeMap<String, f64>,
    pub objective: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::parse_poly;
    use crate::sdp::{certify_infeasible, solve, SolverOptions};

    fn p(s: &str) -> Polynomial {
        parse_poly(s, 1).unwrap()
    }

    #[test]
    fn gram_basis_sizes() {
        let g = build_gram_basis(1, 4).unwrap();
        assert_eq!(g.basis.len(), 3);
        assert_eq!(g.basis[2], Monomial::new(vec![2]));
        assert_eq!(build_gram_basis(2, 2).unwrap().basis.len(), 3);
        assert_eq!(build_gram_basis(2, 20).unwrap().basis.len(), 66);
        assert_eq!(build_gram_basis(1, 3), Err(SosError::OddDegree(3)));
    }

    #[test]
    fn perfect_square_is_feasible() {
        let mut prog = SosProgram::new(1);
        prog.add_sos("sq", AffinePoly::from_poly(p("x1^2 + 2*x1 + 1"))).unwrap();
        let compiled = prog.compile().unwrap();
        assert_eq!(compiled.sdp.blocks, vec![2]);
        let sol = solve(&compiled.sdp, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        let q = &sol.block_matrices[0];
        assert!((q[(0, 0)] - 1.0).abs() < 1e-7 && (q[(0, 1)] - 1.0).abs() < 1e-7 && (q[(1, 1)] - 1.0).abs() < 1e-7);
        assert!(prog.certificate_residuals(&compiled, &sol)[0] <= 1e-7);
    }

    #[test]
    fn negative_at_origin_is_infeasible() {
        let mut prog = SosProgram::new(1);
        prog.add_sos("neg", AffinePoly::from_poly(p("x1^2 - 1"))).unwrap();
        let compiled = prog.compile().unwrap();
        let sol = solve(&compiled.sdp, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
        assert!(certify_infeasible(&compiled.sdp, &sol).unwrap());
        assert!(matches!(prog.extract(&sol), Err(SosError::NotOptimal(_))));
    }

    #[test]
    fn localizer_wiring_recovers_unit_multiplier() {
        // 1 − x² is not SOS but lies in the module of g = 1 − x² with s = 1.
        let set = SemialgebraicSet::new(vec![p("1 - x1^2")]).unwrap();
        let mut prog = SosProgram::new(1);
        prog.add_sos_on("box", AffinePoly::from_poly(p("1 - x1^2")), &set, CertificateKind::QuadraticModule, 2).unwrap();
        let compiled = prog.compile().unwrap();
        assert_eq!(compiled.sdp.blocks, vec![2, 1]);
        let sol = solve(&compiled.sdp, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.block_matrices[1][(0, 0)] - 1.0).abs() < 1e-7);
        assert!(prog.certificate_residuals(&compiled, &sol)[0] <= 1e-7);

        let mut bare = SosProgram::new(1);
        bare.add_sos("bare", AffinePoly::from_poly(p("1 - x1^2"))).unwrap();
        let compiled = bare.compile().unwrap();
        let sol = solve(&compiled.sdp, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }

    #[test]
    fn fixed_coefficients_round_trip() {
        let mut prog = SosProgram::new(1);
        let t = prog.template("t", 2).unwrap();
        let target = [0.5, -2.0, 3.25];
        for (k, v) in target.iter().enumerate() {
            prog.add_eq(&format!("fix{k}"), AffineScalar::var(k).sub(&AffineScalar::constant(*v)));
        }
        prog.add_sos("t sos", t.add_poly(&p("x1^2 + 10"))).unwrap();
        let compiled = prog.compile().unwrap();
        let sol = solve(&compiled.sdp, &SolverOptions::default()).unwrap();
        let out = prog.extract(&sol).unwrap();
        let got = &out.polys["t"];
        assert!((got.coeff(&Monomial::new(vec![0])) - 0.5).abs() < 1e-9);
        assert!((got.coeff(&Monomial::new(vec![1])) + 2.0).abs() < 1e-9);
        assert!((got.coeff(&Monomial::new(vec![2])) - 3.25).abs() < 1e-9);
    }

    #[test]
    fn minimize_scalar_bound() {
        // min ε such that ε − x² ≥ 0 on [−1, 1]  →  ε = 1.
        let set = SemialgebraicSet::new(vec![p("1 - x1^2")]).unwrap();
        let mut prog = SosProgram::new(1);
        let eps = prog.scalar("eps");
        let expr = AffinePoly::scalar(1, &AffineScalar::var(eps)).sub(&AffinePoly::from_poly(p("x1^2")));
        prog.add_sos_on("gap", expr, &set, CertificateKind::QuadraticModule, 2).unwrap();
        prog.add_ge("eps nonneg", AffineScalar::var(eps));
        prog.minimize(AffineScalar::var(eps));
        let compiled = prog.compile().unwrap();
        let sol = solve(&compiled.sdp, &SolverOptions::default()).unwrap();
        let out = prog.extract(&sol).unwrap();
        assert!((out.scalars["eps"] - 1.0).abs() < 1e-6, "{}", out.scalars["eps"]);
        assert!((out.objective - 1.0).abs() < 1e-6);
    }

    #[test]
    fn degree_budget_is_enforced() {
        let mut prog = SosProgram::new(1);
        let e = AffinePoly::from_poly(p("x1^4"));
        assert!(matches!(prog.add_sos_with("d", e, vec![], 2), Err(SosError::DegreeMismatch { .. })));
    }

    #[test]
    fn unmatched_odd_top_term_is_reported() {
        let mut prog = SosProgram::new(1);
        prog.add_sos_with("odd", AffinePoly::from_poly(p("x1^3")), vec![], 2).unwrap_err();
        prog.add_sos_with("odd", AffinePoly::from_poly(p("x1^3 + x1^4")), vec![], 4).unwrap();
        // x³ is matched by the Gram entry (x, x²); only an unreachable
        // monomial is trivially infeasible.
        assert!(prog.compile().is_ok());
    }

    fn quadratic() -> impl proptest::strategy::Strategy<Value = Polynomial> {
        use proptest::prelude::*;
        proptest::collection::vec(-2.0f64..2.0, 6).prop_map(|c| {
            let basis = Monomial::all_up_to(2, 2);
            Polynomial::from_terms(2, basis.into_iter().zip(c))
        })
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn random_sums_of_squares_are_certified(fs in proptest::collection::vec(quadratic(), 1..4)) {
            let sos = fs.iter().fold(Polynomial::zero(2), |acc, f| &acc + &(f * f));
            proptest::prop_assume!(sos.max_abs_coeff() > 1e-3);
            let mut prog = SosProgram::new(2);
            prog.add_sos("sum", AffinePoly::from_poly(sos.clone())).unwrap();
            let compiled = prog.compile().unwrap();
            let sol = solve(&compiled.sdp, &SolverOptions::default()).unwrap();
            proptest::prop_assert_eq!(sol.status, SdpStatus::Optimal);
            proptest::prop_assert!(prog.certificate_residuals(&compiled, &sol)[0] <= 1e-7 * (1.0 + sos.max_abs_coeff()));
            let q = &sol.block_matrices[0];
            let min_eig = q.clone().symmetric_eigen().eigenvalues.min();
            proptest::prop_assert!(min_eig >= -1e-8, "{}", min_eig);
        }
    }
}
