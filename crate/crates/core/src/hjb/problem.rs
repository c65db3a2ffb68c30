//! Problem data, its JSON form, and validation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::HjbError;
use crate::domain::{BoundarySet, CertificateKind, Frame, PointConstraint, SemialgebraicSet};
use crate::poly::parse_poly_with_names;
use crate::{PolyMatrix, Polynomial};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Goal at the origin: monotonicity and normalization rows are added.
    #[default]
    Stabilization,
    /// Goal set given only through boundary data.
    PathPlanning,
    /// Noise is a design choice; adds the trace condition on `V_u`.
    DeterministicClf,
}

/// A boundary value given either as a cost `φ` or a desirability `ψ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CostValue {
    Number(f64),
    Text(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentFile {
    pub h: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<CostValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointFile {
    pub point: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFile {
    #[serde(default)]
    pub components: Vec<ComponentFile>,
    #[serde(default)]
    pub points: Vec<PointFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionFile {
    pub domain: Vec<String>,
    /// Indices into the boundary component list that touch this piece.
    pub components: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyFile {
    pub parameters: Vec<String>,
    pub domain: Vec<String>,
    /// Parameter values the controller assumes where `G` depends on them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyFile {
    pub min_degree: u32,
    pub max_degree: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// The on-disk problem description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default)]
    pub name: String,
    pub variables: Vec<String>,
    #[serde(default)]
    pub mode: Mode,
    pub drift: Vec<String>,
    pub input: Vec<Vec<String>>,
    pub noise: Vec<Vec<String>>,
    pub sigma_eps: Vec<Vec<f64>>,
    pub state_cost: String,
    pub control_penalty: Vec<Vec<f64>>,
    /// Only read in `deterministic_clf` mode; otherwise computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub domain: Vec<String>,
    pub boundary: BoundaryFile,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub partitions: Vec<PartitionFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<UncertaintyFile>,
    #[serde(default)]
    pub certificate: CertificateKind,
    /// Strictness added to the PDE inequality rows, scaled by `q`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<HierarchyFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationFile>,
}

/// One piece of a partitioned domain and the boundary components it touches.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub domain: SemialgebraicSet,
    pub components: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyModel {
    pub names: Vec<String>,
    /// `ℋ` over the parameters alone.
    pub set_h: SemialgebraicSet,
    pub nominal: Vec<f64>,
}

/// Validated problem data. Polynomials live in `nvars()` variables: the
/// states first, then any uncertain parameters.
#[derive(Clone, Debug)]
pub struct HjbProblem {
    pub name: String,
    pub state_names: Vec<String>,
    pub f: PolyMatrix<f64>,
    pub g: PolyMatrix<f64>,
    pub b: PolyMatrix<f64>,
    pub sigma_eps: DMatrix<f64>,
    pub q: Polynomial,
    pub r: DMatrix<f64>,
    pub lambda: f64,
    /// `B Σ_ε Bᵀ`.
    pub sigma_t: PolyMatrix<f64>,
    pub mode: Mode,
    /// `Ω` over the states.
    pub domain: SemialgebraicSet,
    pub boundary: BoundarySet,
    /// `φ` per boundary component, over the states.
    pub phi: Vec<Polynomial>,
    pub partitions: Vec<Partition>,
    pub uncertainty: Option<UncertaintyModel>,
    pub certificate: CertificateKind,
    pub margin: f64,
    pub degrees: Option<(u32, u32)>,
    pub simulation: SimulationFile,
    pub source: ProblemFile,
    /// Coordinates the polynomial data is written in; identity for a
    /// problem as loaded, see [`HjbProblem::localized`].
    pub frame: Frame,
}

fn parse_in(src: &str, names: &[String], what: &str) -> Result<Polynomial, HjbError> {
    parse_poly_with_names(src, names).map_err(|e| HjbError::Input(format!("{what}: '{src}': {e}")))
}

fn parse_matrix(rows: &[Vec<String>], names: &[String], what: &str) -> Result<PolyMatrix<f64>, HjbError> {
    let r = rows.len();
    let c = rows.first().map(|row| row.len()).unwrap_or(0);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(HjbError::Input(format!("{what}: expected a non-empty rectangular matrix")));
    }
    let entries = rows
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, s)| (i, j, s)))
        .map(|(i, j, s)| parse_in(s, names, &format!("{what}[{i}][{j}]")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PolyMatrix::new(r, c, entries)?)
}

fn real_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, HjbError> {
    let r = rows.len();
    if r == 0 || rows.iter().any(|row| row.len() != r) {
        return Err(HjbError::Input(format!("{what}: expected a non-empty square matrix")));
    }
    let m = DMatrix::from_fn(r, r, |i, j| rows[i][j]);
    if (&m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
        return Err(HjbError::Input(format!("{what}: not symmetric")));
    }
    Ok(m)
}

fn set_from(srcs: &[String], names: &[String], what: &str) -> Result<SemialgebraicSet, HjbError> {
    let gs = srcs.iter().map(|s| parse_in(s, names, what)).collect::<Result<Vec<_>, _>>()?;
    Ok(SemialgebraicSet::new(gs)?)
}

/// Solves `λ G R⁻¹ Gᵀ = Σ_t` in least squares over all coefficients and
/// checks the fit.
pub fn solve_lambda(g: &PolyMatrix<f64>, r: &DMatrix<f64>, sigma_t: &PolyMatrix<f64>) -> Result<f64, HjbError> {
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| HjbError::Input("control penalty R is singular".into()))?;
    let nv = g.nvars().unwrap_or(0);
    let m1 = g.try_mul(&PolyMatrix::from_constants_in(r.nrows(), r.ncols(), nv, r_inv.transpose().as_slice()))?.try_mul(&g.transpose())?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in m1.entries().iter().zip(sigma_t.entries()) {
        for (m, c) in a.terms() {
            num += c * b.coeff(m);
            den += c * c;
        }
    }
    if den == 0.0 {
        return Err(HjbError::Lambda("G R⁻¹ Gᵀ vanishes identically".into()));
    }
    let lambda = num / den;
    if !(lambda > 0.0) {
        return Err(HjbError::Lambda(format!("best fit λ = {lambda} is not positive")));
    }
    let mismatch = sigma_t.try_sub(&m1.scale(&lambda))?.max_abs_coeff();
    if mismatch > 1e-9 {
        return Err(HjbError::Lambda(format!(
            "λ G R⁻¹ Gᵀ differs from B Σ_ε Bᵀ by {mismatch:e} at best fit λ = {lambda}"
        )));
    }
    Ok(lambda)
}

fn component_cost(c: &ComponentFile, names: &[String], idx: usize, lambda: f64) -> Result<Polynomial, HjbError> {
    let n = names.len();
    match (&c.phi, c.psi) {
        (Some(CostValue::Number(v)), None) => Ok(Polynomial::constant(n, *v)),
        (Some(CostValue::Text(s)), None) => parse_in(s, names, &format!("boundary component {idx} phi")),
        (None, Some(psi)) if psi > 0.0 => Ok(Polynomial::constant(n, -lambda * psi.ln())),
        (None, Some(psi)) => Err(HjbError::Input(format!("boundary component {idx}: psi must be positive, got {psi}"))),
        _ => Err(HjbError::Input(format!("boundary component {idx}: give exactly one of phi or psi"))),
    }
}

impl HjbProblem {
    pub fn from_json(text: &str) -> Result<Self, HjbError> {
        let file: ProblemFile = serde_json::from_str(text)
            .map_err(|e| HjbError::Input(format!("problem JSON, line {} column {}: {e}", e.line(), e.column())))?;
        Self::from_file(file)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, HjbError> {
        let text = std::fs::read_to_string(path).map_err(|e| HjbError::Input(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_file(file: ProblemFile) -> Result<Self, HjbError> {
        let n = file.variables.len();
        if n == 0 {
            return Err(HjbError::Input("no state variables".into()));
        }
        let state_names = file.variables.clone();
        let param_names: Vec<String> = file.uncertainty.as_ref().map(|u| u.parameters.clone()).unwrap_or_default();
        if file.uncertainty.is_some() && param_names.is_empty() {
            return Err(HjbError::Input("uncertainty block lists no parameters".into()));
        }
        let mut all_names = state_names.clone();
        all_names.extend(param_names.iter().cloned());
        let nv = all_names.len();

        if file.drift.len() != n {
            return Err(HjbError::Input(format!("drift has {} entries for {n} states", file.drift.len())));
        }
        let f = parse_matrix(&file.drift.iter().map(|s| vec![s.clone()]).collect::<Vec<_>>(), &all_names, "drift")?;
        let g = parse_matrix(&file.input, &all_names, "input")?;
        let b = parse_matrix(&file.noise, &all_names, "noise")?;
        if g.rows() != n || b.rows() != n {
            return Err(HjbError::Input("input and noise maps need one row per state".into()));
        }
        let sigma_eps = real_matrix(&file.sigma_eps, "sigma_eps")?;
        let r = real_matrix(&file.control_penalty, "control_penalty")?;
        if sigma_eps.nrows() != b.cols() || r.nrows() != g.cols() {
            return Err(HjbError::Input("sigma_eps must match noise columns and R must match input columns".into()));
        }
        if nalgebra::Cholesky::new(r.clone()).is_none() {
            return Err(HjbError::Input("control penalty R must be positive definite".into()));
        }
        if sigma_eps.clone().symmetric_eigen().eigenvalues.min() < -1e-12 {
            return Err(HjbError::Input("sigma_eps must be positive semidefinite".into()));
        }
        let q = parse_in(&file.state_cost, &all_names, "state_cost")?;
        let sig = PolyMatrix::from_constants_in(sigma_eps.nrows(), sigma_eps.ncols(), nv, sigma_eps.transpose().as_slice());
        let sigma_t = b.try_mul(&sig)?.try_mul(&b.transpose())?;

        let lambda = match file.mode {
            Mode::DeterministicClf => match file.lambda {
                Some(l) if l > 0.0 => l,
                Some(l) => return Err(HjbError::Lambda(format!("lambda must be positive, got {l}"))),
                None => solve_lambda(&g, &r, &sigma_t)?,
            },
            _ => solve_lambda(&g, &r, &sigma_t)?,
        };

        let domain = set_from(&file.domain, &state_names, "domain")?;
        if domain.bounds().is_none() {
            return Err(HjbError::Input("domain must be bounded on every axis by single-variable generators".into()));
        }
        let mut components = Vec::new();
        let mut phi = Vec::new();
        for (i, c) in file.boundary.components.iter().enumerate() {
            components.push(parse_in(&c.h, &state_names, &format!("boundary component {i}"))?);
            phi.push(component_cost(c, &state_names, i, lambda)?);
        }
        let mut points = Vec::new();
        for (i, p) in file.boundary.points.iter().enumerate() {
            let value = match (p.phi, p.psi) {
                (Some(phi), None) => (-phi / lambda).exp(),
                (None, Some(psi)) => psi,
                _ => return Err(HjbError::Input(format!("boundary point {i}: give exactly one of phi or psi"))),
            };
            points.push(PointConstraint { point: p.point.clone(), value });
        }
        let boundary = BoundarySet::new(n, components, points)?;

        let partitions = if file.partitions.is_empty() {
            vec![Partition { domain: domain.clone(), components: (0..boundary.components().len()).collect() }]
        } else {
            file.partitions
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    if let Some(&bad) = p.components.iter().find(|&&c| c >= boundary.components().len()) {
                        return Err(HjbError::Input(format!("partition {i}: unknown boundary component {bad}")));
                    }
                    let d = set_from(&p.domain, &state_names, &format!("partition {i}"))?;
                    if d.bounds().is_none() {
                        return Err(HjbError::Input(format!("partition {i} is not bounded")));
                    }
                    Ok(Partition { domain: d, components: p.components.clone() })
                })
                .collect::<Result<Vec<_>, _>>()?
        };

        let uncertainty = match &file.uncertainty {
            None => None,
            Some(u) => {
                let set_h = set_from(&u.domain, &u.parameters, "uncertainty domain")?;
                let bounds = set_h
                    .bounds()
                    .ok_or_else(|| HjbError::Input("uncertainty set must bound every parameter".into()))?;
                let nominal = match &u.nominal {
                    Some(v) if v.len() == u.parameters.len() => v.clone(),
                    Some(_) => return Err(HjbError::Input("nominal parameter vector has the wrong length".into())),
                    None => bounds.iter().map(|(l, h)| 0.5 * (l + h)).collect(),
                };
                Some(UncertaintyModel { names: u.parameters.clone(), set_h, nominal })
            }
        };

        let degrees = match file.hierarchy {
            Some(h) if h.min_degree > h.max_degree || h.min_degree % 2 == 1 || h.max_degree % 2 == 1 => {
                return Err(HjbError::Input("hierarchy degrees must be even with min <= max".into()))
            }
            Some(h) => Some((h.min_degree, h.max_degree)),
            None => None,
        };
        let margin = file.margin.unwrap_or(0.0);
        if !(margin >= 0.0) {
            return Err(HjbError::Input("margin must be nonnegative".into()));
        }

        let prob = HjbProblem {
            name: file.name.clone(),
            state_names,
            f,
            g,
            b,
            sigma_eps,
            q,
            r,
            lambda,
            sigma_t,
            mode: file.mode,
            domain,
            boundary,
            phi,
            partitions,
            uncertainty,
            certificate: file.certificate,
            margin,
            degrees,
            simulation: file.simulation.clone().unwrap_or_default(),
            source: file,
            frame: Frame::identity(nv),
        };
        prob.check_invariants()?;
        Ok(prob)
    }

    /// Number of states.
    pub fn n(&self) -> usize {
        self.state_names.len()
    }

    /// Number of polynomial variables (states plus parameters).
    pub fn nvars(&self) -> usize {
        self.n() + self.uncertainty.as_ref().map(|u| u.names.len()).unwrap_or(0)
    }

    pub fn m(&self) -> usize {
        self.g.cols()
    }

    fn check_invariants(&self) -> Result<(), HjbError> {
        let n = self.n();
        let at_origin = |p: &Polynomial| -> f64 {
            let mut x = vec![0.0; self.nvars()];
            if let Some(u) = &self.uncertainty {
                x[n..].copy_from_slice(&u.nominal);
            }
            p.eval_f64(&x)
        };
        if self.mode == Mode::Stabilization || self.mode == Mode::DeterministicClf {
            if !self.domain.contains(&vec![0.0; n], 1e-12) {
                return Err(HjbError::Invariant("the origin must lie in the domain".into()));
            }
            if let Some(i) = (0..n).find(|&i| at_origin(self.f.get(i, 0)).abs() > 1e-12) {
                return Err(HjbError::Invariant(format!("drift component {i} does not vanish at the origin")));
            }
            let gb_nonzero = self.g.entries().iter().chain(self.b.entries()).any(|p| at_origin(p).abs() > 1e-12);
            if gb_nonzero {
                log::info!("G or B does not vanish at the origin; the goal is still treated as a boundary point");
            }
            if at_origin(&self.q).abs() > 1e-12 {
                return Err(HjbError::Invariant("state cost q must vanish at the origin".into()));
            }
        }
        let q_state = self.q.truncate_vars(n);
        let q_state = match q_state {
            Some(q) => q,
            None => return Err(HjbError::Invariant("state cost q must not depend on uncertain parameters".into())),
        };
        for x in self.domain.grid(match n {
            1 => 201,
            2 => 41,
            _ => 7,
        }) {
            if x.iter().all(|v| v.abs() < 1e-12) {
                continue;
            }
            let v = q_state.eval_f64(&x);
            if v < 0.0 || (self.mode != Mode::PathPlanning && v <= 0.0) {
                return Err(HjbError::Invariant(format!("state cost q is not positive at {x:?} (value {v})")));
            }
        }
        Ok(())
    }

    /// The nominal problem with uncertain parameters fixed to `values`.
    pub fn with_parameters(&self, values: &[f64]) -> Result<HjbProblem, HjbError> {
        let Some(u) = &self.uncertainty else {
            if values.is_empty() {
                return Ok(self.clone());
            }
            return Err(HjbError::Input("problem has no uncertain parameters".into()));
        };
        if values.len() != u.names.len() {
            return Err(HjbError::Input(format!("expected {} parameter values", u.names.len())));
        }
        let n = self.n();
        let fix = |p: &Polynomial| -> Polynomial {
            let mut out = p.clone();
            for (k, v) in values.iter().enumerate().rev() {
                out = out.substitute(n + k, v).expect("parameter index in range");
            }
            out
        };
        let mut out = self.clone();
        out.f = self.f.map(fix);
        out.g = self.g.map(fix);
        out.b = self.b.map(fix);
        out.q = fix(&self.q);
        out.sigma_t = self.sigma_t.map(fix);
        out.uncertainty = None;
        Ok(out)
    }

    /// The same problem in coordinates `s` with `x = c + r ∘ s`: drift,
    /// input and noise rows are divided by `r_i`, every other polynomial is
    /// composed with the change of variables. Certificates carry over
    /// unchanged. The frame spans states and parameters.
    pub fn localized(&self, frame: &Frame) -> Result<HjbProblem, HjbError> {
        let n = self.n();
        let nv = self.nvars();
        if !self.frame.is_identity() {
            return Err(HjbError::Input("problem is already localized".into()));
        }
        if frame.nvars() != nv || frame.scale.iter().any(|&r| !(r > 0.0)) {
            return Err(HjbError::Input(format!("frame must cover {nv} variables with positive scales")));
        }
        let states = frame.slice(0..n);
        let rows = |m: &PolyMatrix<f64>| -> Result<PolyMatrix<f64>, HjbError> {
            let entries = (0..m.rows())
                .flat_map(|i| (0..m.cols()).map(move |j| (i, j)))
                .map(|(i, j)| frame.poly_to_local(m.get(i, j)).scale(&(1.0 / frame.scale[i])))
                .collect();
            Ok(PolyMatrix::new(m.rows(), m.cols(), entries)?)
        };
        let mut out = self.clone();
        out.f = rows(&self.f)?;
        out.g = rows(&self.g)?;
        out.b = rows(&self.b)?;
        let sig = PolyMatrix::from_constants_in(self.sigma_eps.nrows(), self.sigma_eps.ncols(), nv, self.sigma_eps.transpose().as_slice());
        out.sigma_t = out.b.try_mul(&sig)?.try_mul(&out.b.transpose())?;
        out.q = frame.poly_to_local(&self.q);
        out.domain = states.set_to_local(&self.domain);
        let points = self
            .boundary
            .point_constraints
            .iter()
            .map(|p| PointConstraint { point: states.to_local(&p.point), value: p.value })
            .collect();
        let components = self.boundary.components().iter().map(|h| states.poly_to_local(h)).collect();
        out.boundary = BoundarySet::new(n, components, points)?;
        out.phi = self.phi.iter().map(|p| states.poly_to_local(p)).collect();
        out.partitions = self
            .partitions
            .iter()
            .map(|p| Partition { domain: states.set_to_local(&p.domain), components: p.components.clone() })
            .collect();
        if let Some(u) = &self.uncertainty {
            let params = frame.slice(n..nv);
            out.uncertainty = Some(UncertaintyModel {
                names: u.names.clone(),
                set_h: params.set_to_local(&u.set_h),
                nominal: params.to_local(&u.nominal),
            });
        }
        out.frame = frame.clone();
        Ok(out)
    }

    /// The frame mapping the bounding box of partition `k` (times `ℋ`) onto
    /// the unit box.
    pub fn partition_frame(&self, k: usize) -> Frame {
        let mut frame = Frame::fit(&self.partitions[k].domain.axis_bounds());
        if let Some(u) = &self.uncertainty {
            frame = frame.concat(&Frame::fit(&u.set_h.axis_bounds()));
        }
        frame
    }

    /// The origin of the original coordinates, over the states.
    pub fn origin(&self) -> Vec<f64> {
        self.frame.slice(0..self.n()).to_local(&vec![0.0; self.n()])
    }

    /// `x ∈ Ω` over the states.
    pub fn in_domain(&self, x: &[f64]) -> bool {
        self.domain.contains(x, 0.0)
    }

    pub fn r_inv(&self) -> DMatrix<f64> {
        self.r.clone().try_inverse().expect("R checked positive definite")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::{json, Value};

    fn scalar() -> Value {
        serde_json::from_str(include_str!("../../problems/scalar_unstable.json")).unwrap()
    }

    fn build(v: Value) -> Result<HjbProblem, HjbError> {
        HjbProblem::from_json(&v.to_string())
    }

    #[test]
    fn lambda_is_one_for_both_examples() {
        let a = build(scalar()).unwrap();
        assert!((a.lambda - 1.0).abs() < 1e-12);
        let b = HjbProblem::from_json(include_str!("../../problems/planar.json")).unwrap();
        assert!((b.lambda - 1.0).abs() < 1e-12);
        assert_eq!(b.sigma_t.get(0, 0), &parse_poly_with_names("x^2", &["x", "y"]).unwrap());
        assert!(b.sigma_t.get(0, 1).is_zero());
    }

    #[test]
    fn lambda_follows_the_penalty() {
        let mut v = scalar();
        v["control_penalty"] = json!([[2.0]]);
        assert!((build(v.clone()).unwrap().lambda - 2.0).abs() < 1e-12);
        v["sigma_eps"] = json!([[3.0]]);
        assert!((build(v).unwrap().lambda - 6.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_channels_have_no_lambda() {
        let mut v = scalar();
        v["input"] = json!([["x"]]);
        assert!(matches!(build(v.clone()), Err(HjbError::Lambda(_))));
        // The deterministic mode takes λ as a design choice instead.
        v["mode"] = json!("deterministic_clf");
        v["lambda"] = json!(0.5);
        assert_eq!(build(v).unwrap().lambda, 0.5);
    }

    #[test]
    fn standing_assumptions_are_enforced() {
        let mut v = scalar();
        v["drift"] = json!(["x + 1"]);
        assert!(matches!(build(v), Err(HjbError::Invariant(_))));
        let mut v = scalar();
        v["state_cost"] = json!("x^2 + 1");
        assert!(matches!(build(v), Err(HjbError::Invariant(_))));
        let mut v = scalar();
        v["state_cost"] = json!("0.4*x^2 - 0.5*x^4");
        assert!(matches!(build(v), Err(HjbError::Invariant(_))));
        let mut v = scalar();
        v["domain"] = json!(["x + 1"]);
        assert!(matches!(build(v), Err(HjbError::Input(_))));
        let mut v = scalar();
        v["control_penalty"] = json!([[-1.0]]);
        assert!(matches!(build(v), Err(HjbError::Input(_))));
        let mut v = scalar();
        v["hierarchy"] = json!({"min_degree": 9, "max_degree": 12});
        assert!(matches!(build(v), Err(HjbError::Input(_))));
    }

    #[test]
    fn boundary_points_need_exactly_one_value() {
        let mut v = scalar();
        v["boundary"]["points"] = json!([{"point": [0.0], "phi": 0.0, "psi": 1.0}]);
        assert!(build(v).is_err());
        let mut v = scalar();
        v["boundary"]["points"] = json!([{"point": [0.0], "psi": 0.5}]);
        assert_eq!(build(v).unwrap().boundary.point_constraints[0].value, 0.5);
    }

    #[test]
    fn malformed_json_reports_a_location() {
        let err = HjbProblem::from_json("{\n \"name\": 3\n}").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    fn robust() -> Value {
        let mut v = scalar();
        v["drift"] = json!(["x^3 + a*x^2 + x"]);
        v["uncertainty"] = json!({"parameters": ["a"], "domain": ["a - 4.5", "5.5 - a"]});
        v
    }

    #[test]
    fn uncertainty_defaults_to_the_centre() {
        let p = build(robust()).unwrap();
        assert_eq!(p.nvars(), 2);
        assert_eq!(p.uncertainty.as_ref().unwrap().nominal, vec![5.0]);
        let nominal = p.with_parameters(&[5.0]).unwrap();
        let reference = build(scalar()).unwrap();
        assert!(nominal.uncertainty.is_none());
        assert_eq!(nominal.nvars(), 1);
        assert_eq!(nominal.f.get(0, 0), reference.f.get(0, 0));
        let low = p.with_parameters(&[4.5]).unwrap();
        assert!((low.f.get(0, 0).eval_f64(&[0.5]) - (0.125 + 4.5 * 0.25 + 0.5)).abs() < 1e-12);
        assert!(p.with_parameters(&[]).is_err());
        assert!(reference.with_parameters(&[1.0]).is_err());
    }

    #[test]
    fn uncertainty_must_be_listed_and_bounded() {
        let mut v = robust();
        v["uncertainty"]["parameters"] = json!([]);
        v["uncertainty"]["domain"] = json!([]);
        assert!(matches!(build(v), Err(HjbError::Input(m)) if m.contains("no parameters")));
        let mut v = robust();
        v["uncertainty"]["domain"] = json!(["a - 4.5"]);
        assert!(matches!(build(v), Err(HjbError::Input(m)) if m.contains("bound")));
        let mut v = robust();
        v["uncertainty"]["nominal"] = json!([1.0, 2.0]);
        assert!(build(v).is_err());
    }

    #[test]
    fn localized_frame_maps_partition_to_unit_box() {
        let p = build(scalar()).unwrap();
        let frame = p.partition_frame(0);
        assert_eq!(frame.scale, vec![0.5]);
        let local = p.localized(&frame).unwrap();
        assert_eq!(local.origin(), vec![1.0]);
        // f is divided by the scale and composed: f(c + r s) / r at s = 0 is f(-0.5)/0.5.
        let f_mid = -0.125 + 5.0 * 0.25 - 0.5;
        assert!((local.f.get(0, 0).eval_f64(&[0.0]) - f_mid / 0.5).abs() < 1e-12);
        assert!(local.localized(&frame).is_err());
    }
}
