//! Independent checks of a certified solution: a finite-difference oracle
//! for the linear desirability PDE and a battery of grid-quantified bound,
//! Lyapunov and hierarchy checks against it.

mod fd;

use std::fmt;

use nalgebra::DMatrix;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fd::{solve_pde_fd, GridSolution};

use crate::domain::{grid_points, halfspace_intersect, Frame, SemialgebraicSet};
use crate::hjb::{l_operator, CertifiedSolution, Controller, HjbError, HjbProblem, Mode};
use crate::Polynomial;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("the oracle handles one or two states, got {0}")]
    Dimension(usize),
    #[error("fix uncertain parameters before solving the oracle")]
    Uncertain,
    #[error("oracle mesh: {0}")]
    Mesh(String),
    #[error("oracle matrix is singular at row {0}")]
    Singular(usize),
    #[error(transparent)]
    Hjb(#[from] HjbError),
}

/// Added to every oracle comparison on top of the discretization error.
pub const ORACLE_TOL: f64 = 1e-6;
pub const RESIDUAL_TOL: f64 = 1e-7;
pub const GAP_TOL: f64 = 1e-7;
pub const SCLF_TOL: f64 = 1e-7;
pub const MONOTONE_TOL: f64 = 1e-9;
pub const HIERARCHY_TOL: f64 = 1e-7;
pub const NORMALIZATION_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// `Ψ_l − δ ≤ Ψ_FD ≤ Ψ_u + δ`.
    Sandwich,
    /// `qΨ_l/λ − ℒΨ_l ≤ tol` and `qΨ_u/λ − ℒΨ_u ≥ −tol`.
    ResidualSign,
    /// `Ψ_u − Ψ_l ≤ ε + tol`.
    Gap,
    /// `|Ψ − Ψ_FD| ≤ ε + δ` for both bounds.
    EpsilonBound,
    /// `V_u − V_FD ≤ −λ ln(1 − ε/η) + δ′` where `ε < η`.
    ValueBound,
    /// `V_u(0) = 0`, `V_u > 0` and `L(V_u) ≤ min(tol, −q + tol)` under `u^ε`.
    Sclf,
    /// `∂_iΨ_l` has the sign that makes `Ψ_l` peak at the origin.
    Monotone,
    /// `Ψ_l(0) = 1`.
    Normalization,
    /// `ε` nonincreasing along the stored degrees.
    EpsilonMonotone,
    /// The error of degree `d + 2` stays within `ε` of degree `d`.
    NextDegreeError,
}

impl CheckKind {
    pub fn name(self) -> &'static str {
        match self {
            CheckKind::Sandwich => "sandwich",
            CheckKind::ResidualSign => "residual_sign",
            CheckKind::Gap => "gap",
            CheckKind::EpsilonBound => "epsilon_bound",
            CheckKind::ValueBound => "value_bound",
            CheckKind::Sclf => "sclf",
            CheckKind::Monotone => "monotone",
            CheckKind::Normalization => "normalization",
            CheckKind::EpsilonMonotone => "epsilon_monotone",
            CheckKind::NextDegreeError => "next_degree_error",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub kind: CheckKind,
    pub ok: bool,
    /// Smallest slack found; negative means violated by that much.
    pub margin: f64,
    pub tolerance: f64,
    pub worst_at: Option<Vec<f64>>,
    pub samples: usize,
    pub note: String,
}

/// Running minimum of a slack with its location.
#[derive(Clone, Debug)]
struct Worst {
    slack: f64,
    at: Option<Vec<f64>>,
    samples: usize,
    note: String,
}

impl Worst {
    fn new() -> Self {
        Worst { slack: f64::INFINITY, at: None, samples: 0, note: String::new() }
    }

    fn see(&mut self, slack: f64, x: &[f64]) {
        self.samples += 1;
        let slack = if slack.is_nan() { f64::NEG_INFINITY } else { slack };
        if slack < self.slack {
            self.slack = slack;
            self.at = Some(x.to_vec());
        }
    }

    fn see_note(&mut self, slack: f64, note: impl FnOnce() -> String) {
        self.samples += 1;
        let slack = if slack.is_nan() { f64::NEG_INFINITY } else { slack };
        if slack < self.slack {
            self.slack = slack;
            self.note = note();
        }
    }

    fn finish(self, kind: CheckKind, tolerance: f64) -> CheckResult {
        CheckResult { kind, ok: self.slack >= 0.0, margin: self.slack, tolerance, worst_at: self.at, samples: self.samples, note: self.note }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub per_axis: usize,
    pub residual: f64,
    pub discretization_error: f64,
    /// `ORACLE_TOL` plus the discretization error.
    pub delta: f64,
    /// `min Ψ_FD = exp(−max V_FD / λ)`.
    pub eta: f64,
    pub nonpositive: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub problem: String,
    pub degree: u32,
    pub epsilon: f64,
    pub lambda: f64,
    pub oracle: Option<OracleSummary>,
    /// No oracle was available; only the sampled checks ran.
    pub sampled_only: bool,
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn check(&self, kind: CheckKind) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.kind == kind)
    }

    /// `None` when the check did not apply.
    pub fn ok(&self, kind: CheckKind) -> Option<bool> {
        self.check(kind).map(|c| c.ok)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.ok).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "problem {}  degree {}  eps {:.3e}  lambda {}", self.problem, self.degree, self.epsilon, self.lambda)?;
        match &self.oracle {
            Some(o) => writeln!(
                f,
                "oracle {} per axis  residual {:.1e}  discretization {:.2e}  delta {:.2e}  eta {:.4e}",
                o.per_axis, o.residual, o.discretization_error, o.delta, o.eta
            )?,
            None => writeln!(f, "SAMPLED-ONLY MODE: no finite-difference oracle; oracle comparisons were not run")?,
        }
        for c in &self.checks {
            let at = c.worst_at.as_ref().map(|x| format!("{x:.4?}")).unwrap_or_else(|| "-".into());
            writeln!(
                f,
                "{:<18} {}  margin {:>11.3e}  tol {:.0e}  n {:>6}  worst {}{}",
                c.kind.name(),
                if c.ok { "PASS" } else { "FAIL" },
                c.margin,
                c.tolerance,
                c.samples,
                at,
                if c.note.is_empty() { String::new() } else { format!("  ({})", c.note) }
            )?;
        }
        write!(f, "overall {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// One piece of a solution, evaluated in its local coordinates.
struct PieceEval {
    domain: SemialgebraicSet,
    frame: Frame,
    psi_l: Polynomial,
    psi_u: Polynomial,
    grad_l: Vec<Polynomial>,
    epsilon: f64,
}

impl PieceEval {
    fn all(sol: &CertifiedSolution) -> Vec<PieceEval> {
        sol.pieces
            .iter()
            .map(|p| PieceEval {
                domain: p.domain.clone(),
                frame: p.frame.clone(),
                psi_l: p.psi_l.clone(),
                psi_u: p.psi_u.clone(),
                grad_l: p.psi_l.gradient(),
                epsilon: p.epsilon,
            })
            .collect()
    }

    fn contains(&self, x: &[f64]) -> bool {
        self.domain.contains(x, 1e-12)
    }
}

/// The problem at a handful of parameter values: the nominal one and a
/// 3-per-axis grid of `ℋ`. A problem without parameters is its own sample.
fn parameter_instances(prob: &HjbProblem) -> Result<Vec<(Vec<f64>, HjbProblem)>, HjbError> {
    let Some(u) = &prob.uncertainty else { return Ok(vec![(Vec::new(), prob.clone())]) };
    let mut values = vec![u.nominal.clone()];
    values.extend(u.set_h.grid(3));
    values.into_iter().map(|a| prob.with_parameters(&a).map(|p| (a, p))).collect()
}

/// Residual polynomials `qΨ/λ − ℒΨ` of both bounds, in the piece's
/// coordinates, for one parameter instance.
fn residual_polys(inst: &HjbProblem, piece: &PieceEval) -> Result<(Polynomial, Polynomial), HjbError> {
    let local = inst.localized(&piece.frame)?;
    let r = |psi: &Polynomial| -> Result<Polynomial, HjbError> {
        let lq = (&local.q * psi).scale(&(1.0 / local.lambda));
        Ok(&lq - &l_operator(psi, &local)?)
    };
    Ok((r(&piece.psi_l)?, r(&piece.psi_u)?))
}

fn stabilizing(prob: &HjbProblem) -> bool {
    prob.mode != Mode::PathPlanning
}

/// Points for the sampled checks: the oracle nodes, or a regular grid of
/// the domain's bounding box restricted to the domain.
fn check_points(prob: &HjbProblem, oracle: Option<&GridSolution>, per_axis: usize) -> Vec<Vec<f64>> {
    match oracle {
        Some(g) => (0..g.len()).map(|k| g.point(k)).collect(),
        None => match prob.domain.bounds() {
            Some(b) => grid_points(&b, per_axis).into_iter().filter(|x| prob.domain.contains(x, 1e-12)).collect(),
            None => {
                let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0);
                prob.domain.sample(per_axis.pow(prob.n() as u32), &mut rng)
            }
        },
    }
}

/// About a thousand points of `Ω ∖ {0}`.
pub fn sclf_samples(prob: &HjbProblem) -> Vec<Vec<f64>> {
    let n = prob.n();
    let per = (1000f64.powf(1.0 / n as f64)).ceil() as usize;
    let pts = match prob.domain.bounds() {
        Some(b) => grid_points(&b, per).into_iter().filter(|x| prob.domain.contains(x, 1e-12)).collect(),
        None => {
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0);
            prob.domain.sample(1000, &mut rng)
        }
    };
    pts.into_iter().filter(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt() > 1e-9).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SclfReport {
    /// Largest `L(V_u)` and where.
    pub worst: f64,
    pub worst_at: Option<Vec<f64>>,
    /// Largest `L(V_u) + q` and where.
    pub worst_plus_q: f64,
    pub worst_plus_q_at: Option<Vec<f64>>,
    /// Samples with `Ψ_l ≤ 0`, skipped.
    pub skipped: Vec<Vec<f64>>,
    pub samples: usize,
}

/// `L(V_u)(x) = ∇V_uᵀ(f + G u^ε) + ½Tr(∇²V_u Σ_t)` at each sample, with
/// `∇V_u = −λ∇Ψ_l/Ψ_l` and `∇²V_u = −λ(∇²Ψ_l/Ψ_l − ∇Ψ_l∇Ψ_lᵀ/Ψ_l²)`.
pub fn sclf_sample_check(controller: &Controller, prob: &HjbProblem, samples: &[Vec<f64>]) -> SclfReport {
    let psi = controller.psi_l();
    let lambda = prob.lambda;
    let mut out = SclfReport {
        worst: f64::NEG_INFINITY,
        worst_at: None,
        worst_plus_q: f64::NEG_INFINITY,
        worst_plus_q_at: None,
        skipped: Vec::new(),
        samples: 0,
    };
    for x in samples {
        let p = psi.eval(x);
        if !(p > 0.0) {
            out.skipped.push(x.clone());
            continue;
        }
        let Ok(u) = controller.control(x) else {
            out.skipped.push(x.clone());
            continue;
        };
        let g = psi.gradient(x);
        let h = psi.hessian(x);
        let grad_v = &g * (-lambda / p);
        let hess_v: DMatrix<f64> = (&h / p - &g * g.transpose() / (p * p)) * (-lambda);
        let f = prob.f.eval(x).column(0).into_owned();
        let gm = prob.g.eval(x);
        let sig = prob.sigma_t.eval(x);
        let lv = grad_v.dot(&(f + gm * u)) + 0.5 * (hess_v * sig).trace();
        let q = prob.q.eval_f64(x);
        out.samples += 1;
        if lv > out.worst {
            out.worst = lv;
            out.worst_at = Some(x.clone());
        }
        if lv + q > out.worst_plus_q {
            out.worst_plus_q = lv + q;
            out.worst_plus_q_at = Some(x.clone());
        }
    }
    out
}

/// Runs every check against the oracle grid.
pub fn check_all(sol: &CertifiedSolution, prob: &HjbProblem, oracle: &GridSolution) -> Result<VerificationReport, VerifyError> {
    run_checks(sol, prob, Some(oracle), 0)
}

/// The checks that need no oracle, on a grid of `per_axis` points per axis.
pub fn check_sampled(sol: &CertifiedSolution, prob: &HjbProblem, per_axis: usize) -> Result<VerificationReport, VerifyError> {
    run_checks(sol, prob, None, per_axis)
}

fn run_checks(
    sol: &CertifiedSolution,
    prob: &HjbProblem,
    oracle: Option<&GridSolution>,
    per_axis: usize,
) -> Result<VerificationReport, VerifyError> {
    let n = prob.n();
    let pieces = PieceEval::all(sol);
    let instances = parameter_instances(prob)?;
    let points = check_points(prob, oracle, per_axis);
    let mut checks = Vec::new();

    // Residual signs and gap at every point, for every containing piece.
    let mut residual = Worst::new();
    let mut gap = Worst::new();
    for (j, (_, inst)) in instances.iter().enumerate() {
        let polys: Vec<(Polynomial, Polynomial)> = pieces.iter().map(|p| residual_polys(inst, p)).collect::<Result<_, _>>()?;
        for x in &points {
            for (p, (rl, ru)) in pieces.iter().zip(&polys) {
                if !p.contains(x) {
                    continue;
                }
                let s = p.frame.to_local(x);
                let slack = (RESIDUAL_TOL - rl.eval_f64(&s)).min(ru.eval_f64(&s) + RESIDUAL_TOL);
                residual.see(slack, x);
                if j == 0 {
                    gap.see(p.epsilon + GAP_TOL - (p.psi_u.eval_f64(&s) - p.psi_l.eval_f64(&s)), x);
                }
            }
        }
    }
    if instances.len() > 1 {
        residual.note = format!("over {} parameter values", instances.len());
    }
    checks.push(residual.finish(CheckKind::ResidualSign, RESIDUAL_TOL));
    checks.push(gap.finish(CheckKind::Gap, GAP_TOL));

    let mut summary = None;
    if let Some(g) = oracle {
        let delta = ORACLE_TOL + g.discretization_error;
        let eta = g.values.iter().copied().fold(f64::INFINITY, f64::min);
        summary = Some(OracleSummary {
            per_axis: g.per_axis(),
            residual: g.residual,
            discretization_error: g.discretization_error,
            delta,
            eta,
            nonpositive: g.nonpositive.len(),
        });
        let mut sandwich = Worst::new();
        let mut bound = Worst::new();
        let mut value = Worst::new();
        for k in 0..g.len() {
            let x = g.point(k);
            let fd = g.values[k];
            for p in pieces.iter().filter(|p| p.contains(&x)) {
                let s = p.frame.to_local(&x);
                let (l, u) = (p.psi_l.eval_f64(&s), p.psi_u.eval_f64(&s));
                sandwich.see((fd - (l - delta)).min(u + delta - fd), &x);
                bound.see(p.epsilon + delta - (l - fd).abs().max((u - fd).abs()), &x);
                if p.epsilon < eta && fd > delta {
                    let v_u = if l > 0.0 { -prob.lambda * l.ln() } else { f64::INFINITY };
                    let v_fd = -prob.lambda * fd.ln();
                    let allowed = -prob.lambda * (1.0 - p.epsilon / eta).ln() + prob.lambda * (fd / (fd - delta)).ln();
                    value.see(allowed - (v_u - v_fd), &x);
                }
            }
        }
        checks.push(sandwich.finish(CheckKind::Sandwich, delta));
        checks.push(bound.finish(CheckKind::EpsilonBound, delta));
        if value.samples == 0 {
            value.slack = 0.0;
            value.note = format!("not applicable: eps >= eta = {eta:.3e} on every piece");
        }
        checks.push(value.finish(CheckKind::ValueBound, delta));
        checks.push(next_degree_check(sol, prob, g, delta)?);
    }

    if stabilizing(prob) {
        checks.push(sclf_check(sol, prob, &instances)?);
        checks.push(monotone_check(&pieces, &points, n)?);
        let origin = vec![0.0; n];
        let mut norm = Worst::new();
        for p in pieces.iter().filter(|p| p.contains(&origin)) {
            norm.see(NORMALIZATION_TOL - (p.psi_l.eval_f64(&p.frame.to_local(&origin)) - 1.0).abs(), &origin);
        }
        checks.push(norm.finish(CheckKind::Normalization, NORMALIZATION_TOL));
    }
    checks.push(epsilon_monotone_check(sol));

    Ok(VerificationReport {
        problem: prob.name.clone(),
        degree: sol.degree,
        epsilon: sol.epsilon,
        lambda: sol.lambda,
        oracle: summary,
        sampled_only: oracle.is_none(),
        checks,
    })
}

fn sclf_check(sol: &CertifiedSolution, prob: &HjbProblem, instances: &[(Vec<f64>, HjbProblem)]) -> Result<CheckResult, VerifyError> {
    let controller = sol.controller(prob)?;
    let samples = sclf_samples(prob);
    let mut w = Worst::new();
    let origin = vec![0.0; prob.n()];
    let v0 = controller.value(&origin).unwrap_or(f64::NEG_INFINITY);
    w.see(SCLF_TOL - v0.abs(), &origin);
    let mut skipped = 0;
    for x in &samples {
        match controller.value(x) {
            Ok(v) => w.see(v + SCLF_TOL, x),
            Err(_) => w.see(f64::NEG_INFINITY, x),
        }
    }
    for (_, inst) in instances {
        let r = sclf_sample_check(&controller, inst, &samples);
        skipped += r.skipped.len();
        if let Some(at) = &r.worst_at {
            w.see(SCLF_TOL - r.worst, at);
        }
        if let Some(at) = &r.worst_plus_q_at {
            w.see(SCLF_TOL - r.worst_plus_q, at);
        }
    }
    let mut out = w.finish(CheckKind::Sclf, SCLF_TOL);
    if skipped > 0 {
        out.ok = false;
        out.note = format!("{skipped} samples with nonpositive Psi_l");
    }
    Ok(out)
}

/// Per piece and coordinate, only on the halfspace parts with interior,
/// matching the rows the program certifies.
fn monotone_check(pieces: &[PieceEval], points: &[Vec<f64>], n: usize) -> Result<CheckResult, VerifyError> {
    let mut w = Worst::new();
    for p in pieces {
        for i in 0..n {
            for sign in [1i8, -1] {
                let half = halfspace_intersect(&p.domain, i, sign).map_err(HjbError::from)?;
                if !half.has_interior() {
                    continue;
                }
                let sg = sign as f64;
                for x in points.iter().filter(|x| sg * x[i] >= 0.0 && p.contains(x)) {
                    let d = p.grad_l[i].eval_f64(&p.frame.to_local(x)) / p.frame.scale[i];
                    w.see(MONOTONE_TOL - sg * d, x);
                }
            }
        }
    }
    Ok(w.finish(CheckKind::Monotone, MONOTONE_TOL))
}

fn epsilon_monotone_check(sol: &CertifiedSolution) -> CheckResult {
    let mut w = Worst::new();
    let np = sol.history.first().map(|h| h.partitions.len()).unwrap_or(0);
    for p in 0..np {
        let mut prev: Option<(u32, f64)> = None;
        for rec in &sol.history {
            let Some(e) = rec.partitions[p].epsilon else { continue };
            if let Some((d0, e0)) = prev {
                w.see_note(e0 + HIERARCHY_TOL - e, || format!("partition {p}, degree {d0} -> {}", rec.degree));
            }
            prev = Some((rec.degree, e));
        }
    }
    if w.samples == 0 {
        w.slack = 0.0;
        w.note = "fewer than two feasible degrees".into();
    }
    w.finish(CheckKind::EpsilonMonotone, HIERARCHY_TOL)
}

/// For consecutive feasible degrees `d < d'`: `|Ψ^{d'} − Ψ_FD| ≤ ε^d + δ`.
fn next_degree_check(sol: &CertifiedSolution, prob: &HjbProblem, g: &GridSolution, delta: f64) -> Result<CheckResult, VerifyError> {
    let mut w = Worst::new();
    let feasible: Vec<&crate::hjb::DegreeRecord> = sol.history.iter().filter(|r| r.feasible()).collect();
    for pair in feasible.windows(2) {
        let (prev, next) = (pair[0], pair[1]);
        let Some(at) = sol.at_degree(prob, next.degree) else { continue };
        let pieces = PieceEval::all(&at);
        for k in 0..g.len() {
            let x = g.point(k);
            for (i, p) in pieces.iter().enumerate() {
                if !p.contains(&x) {
                    continue;
                }
                let Some(eps) = prev.partitions[i].epsilon else { continue };
                let s = p.frame.to_local(&x);
                let err = (p.psi_l.eval_f64(&s) - g.values[k]).abs().max((p.psi_u.eval_f64(&s) - g.values[k]).abs());
                w.see(eps + delta - err, &x);
            }
        }
    }
    let mut out = w.finish(CheckKind::NextDegreeError, delta);
    if out.samples == 0 {
        out.ok = true;
        out.margin = 0.0;
        out.note = "fewer than two feasible degrees".into();
    }
    Ok(out)
}

/// Deliberate faults for exercising the checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Corruption {
    /// `Ψ_l ↦ c Ψ_l`.
    ScalePsiL(f64),
    /// `Ψ_l ↦ 2 − Ψ_l`, which flips the sign of its residual.
    FlipResidual,
    /// `Ψ_l ↦ Ψ_l + c`, so `Ψ_l(0) ≠ 1`.
    ShiftPsiL(f64),
    /// The last stored degree reports `ε` larger than the first.
    RaiseEpsilon,
}

/// `sol` with `c` applied to the selected pieces and to the matching
/// degree record, so the fault survives archiving.
pub fn corrupt(sol: &CertifiedSolution, c: Corruption) -> CertifiedSolution {
    let mut out = sol.clone();
    let map = |p: &Polynomial| -> Polynomial {
        match c {
            Corruption::ScalePsiL(s) => p.scale(&s),
            Corruption::FlipResidual => &Polynomial::constant(p.nvars(), 2.0) - p,
            Corruption::ShiftPsiL(s) => p + &Polynomial::constant(p.nvars(), s),
            Corruption::RaiseEpsilon => p.clone(),
        }
    };
    for piece in &mut out.pieces {
        piece.psi_l = map(&piece.psi_l);
    }
    for rec in out.history.iter_mut().filter(|r| r.degree == sol.degree) {
        for r in &mut rec.partitions {
            r.psi_l = r.psi_l.as_ref().map(&map);
        }
    }
    if c == Corruption::RaiseEpsilon {
        let first = out.history.iter().find_map(|r| r.partitions[0].epsilon).unwrap_or(0.0);
        if let Some(rec) = out.history.iter_mut().rev().find(|r| r.partitions[0].epsilon.is_some()) {
            rec.partitions[0].epsilon = Some(10.0 * first + 1e-3);
        }
    }
    out
}
