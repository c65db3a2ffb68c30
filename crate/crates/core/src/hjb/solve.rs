//! Solving the bounding programs and sweeping the degree hierarchy.

use std::collections::BTreeMap;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::assemble::{assemble, trace_condition, AssembleOptions, EPSILON, PSI_L, PSI_U};
use super::problem::{HjbProblem, Mode};
use super::HjbError;
use crate::domain::{CertificateKind, Frame, SemialgebraicSet};
use crate::sdp::{self, KktResiduals, SdpStatus, SolverOptions};
use crate::soscomp::{AffinePoly, SosError, SosProgram};
use crate::Polynomial;

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyOptions {
    pub sdp: SolverOptions,
    /// Retry an infeasible quadratic-module program with the preordering.
    pub escalate: bool,
    /// Linearization rounds for the trace condition.
    pub trace_iterations: usize,
}

impl Default for HierarchyOptions {
    fn default() -> Self {
        HierarchyOptions { sdp: SolverOptions::default(), escalate: true, trace_iterations: 6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionStatus {
    Feasible,
    Infeasible,
    Stalled,
}

/// Solved SOS multipliers of one constraint row, `σ_0` first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplierRecord {
    pub row: String,
    pub sos: Vec<Polynomial>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    pub partition: usize,
    pub degree: u32,
    pub status: PartitionStatus,
    pub certificate: CertificateKind,
    pub epsilon: Option<f64>,
    /// Coordinates of `psi_l`, `psi_u` and all multipliers: `x = c + r ∘ s`
    /// over the states.
    pub frame: Frame,
    pub psi_l: Option<Polynomial>,
    pub psi_u: Option<Polynomial>,
    pub iterations: usize,
    pub kkt: KktResiduals,
    /// Largest coefficient mismatch over all SOS rows; `None` without a
    /// certificate.
    pub certificate_residual: Option<f64>,
    pub blocks: usize,
    pub constraints: usize,
    /// Whether the exact trace condition was certified (`deterministic_clf`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_certified: Option<bool>,
    pub boundary_fit_residual: f64,
    #[serde(default)]
    pub multipliers: Vec<MultiplierRecord>,
    /// Boundary shift polynomials `t`.
    #[serde(default)]
    pub boundary_multipliers: BTreeMap<String, Polynomial>,
}

impl PartitionResult {
    fn failed(partition: usize, degree: u32, status: PartitionStatus, certificate: CertificateKind, frame: Frame) -> Self {
        PartitionResult {
            partition,
            degree,
            status,
            certificate,
            epsilon: None,
            frame,
            psi_l: None,
            psi_u: None,
            iterations: 0,
            kkt: KktResiduals::default(),
            certificate_residual: None,
            blocks: 0,
            constraints: 0,
            trace_certified: None,
            boundary_fit_residual: 0.0,
            multipliers: Vec::new(),
            boundary_multipliers: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeRecord {
    pub degree: u32,
    pub partitions: Vec<PartitionResult>,
}

impl DegreeRecord {
    pub fn feasible(&self) -> bool {
        self.partitions.iter().all(|p| p.status == PartitionStatus::Feasible)
    }

    pub fn stalled(&self) -> bool {
        self.partitions.iter().any(|p| p.status == PartitionStatus::Stalled)
    }

    /// Largest `ε` over partitions, if every partition is feasible.
    pub fn epsilon(&self) -> Option<f64> {
        if !self.feasible() {
            return None;
        }
        self.partitions.iter().map(|p| p.epsilon.unwrap_or(f64::NAN)).reduce(f64::max)
    }
}

/// Bounds on one partition, written in local coordinates `s` with
/// `x = frame.center + frame.scale ∘ s`.
#[derive(Clone, Debug, PartialEq)]
pub struct Piece {
    pub domain: SemialgebraicSet,
    pub frame: Frame,
    pub psi_l: Polynomial,
    pub psi_u: Polynomial,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertifiedSolution {
    pub lambda: f64,
    pub degree: u32,
    pub pieces: Vec<Piece>,
    /// Largest `ε` over pieces.
    pub epsilon: f64,
    pub history: Vec<DegreeRecord>,
    pub warnings: Vec<String>,
}

fn solve_program(
    prog: &SosProgram,
    opts: &SolverOptions,
) -> Result<(SdpStatus, Option<(crate::soscomp::CompiledProgram, sdp::SdpSolution)>), HjbError> {
    let compiled = match prog.compile() {
        Ok(c) => c,
        Err(SosError::TriviallyInfeasible { .. }) => return Ok((SdpStatus::Infeasible, None)),
        Err(e) => return Err(e.into()),
    };
    let sol = sdp::solve(&compiled.sdp, opts)?;
    Ok((sol.status, Some((compiled, sol))))
}

/// `prob` is the problem localized to the partition's frame.
fn solve_once(
    prob: &HjbProblem,
    partition: usize,
    degree: u32,
    kind: CertificateKind,
    trace_around: Option<Polynomial>,
    opts: &HierarchyOptions,
) -> Result<PartitionResult, HjbError> {
    let asm = assemble(prob, partition, degree, &AssembleOptions { kind, trace_around })?;
    let prog = &asm.program;
    let (status, solved) = solve_program(prog, &opts.sdp)?;
    let fit = asm.boundary.fit_residuals.iter().copied().fold(0.0, f64::max);
    let frame = prob.frame.slice(0..prob.n());
    let Some((compiled, sol)) = solved else {
        let mut r = PartitionResult::failed(partition, degree, PartitionStatus::Infeasible, kind, frame);
        r.boundary_fit_residual = fit;
        return Ok(r);
    };
    let pstatus = match status {
        SdpStatus::Optimal => PartitionStatus::Feasible,
        SdpStatus::Infeasible => PartitionStatus::Infeasible,
        // An unbounded ε is impossible for a consistent program; treat as a
        // numerical failure.
        SdpStatus::Unbounded | SdpStatus::Stalled => PartitionStatus::Stalled,
    };
    let mut r = PartitionResult::failed(partition, degree, pstatus, kind, frame);
    r.iterations = sol.iterations;
    r.kkt = sol.kkt_residuals;
    r.blocks = compiled.sdp.blocks.len();
    r.constraints = compiled.sdp.constraints.len();
    r.boundary_fit_residual = fit;
    if pstatus != PartitionStatus::Feasible {
        return Ok(r);
    }
    let out = prog.extract(&sol)?;
    r.epsilon = Some(out.scalars[EPSILON]);
    let n = prob.n();
    let state_only = |p: &Polynomial| p.truncate_vars(n).expect("templates use the states only");
    r.psi_l = Some(state_only(&out.polys[PSI_L]));
    r.psi_u = Some(state_only(&out.polys[PSI_U]));
    r.certificate_residual = Some(prog.certificate_residuals(&compiled, &sol).into_iter().fold(0.0, f64::max));
    r.multipliers = prog
        .sos_constraints
        .iter()
        .zip(&compiled.certificates)
        .map(|(c, parts)| MultiplierRecord {
            row: c.label.clone(),
            sos: parts.iter().map(|p| p.gram.recompose(&sol.block_matrices[p.block])).collect(),
        })
        .collect();
    r.boundary_multipliers = out.polys.into_iter().filter(|(k, _)| k != PSI_L && k != PSI_U).collect();
    Ok(r)
}

/// Whether `Tr((∇Ψ∇Ψᵀ − Ψ∇²Ψ)Σ_t)` is certified nonnegative on the piece.
fn certify_trace(prob: &HjbProblem, partition: usize, psi_l: &Polynomial, kind: CertificateKind, opts: &SolverOptions) -> Result<bool, HjbError> {
    let nv = prob.nvars();
    let t = trace_condition(&psi_l.lift(nv, 0), prob)?;
    let part = &prob.partitions[partition];
    let dom = match &prob.uncertainty {
        Some(u) => crate::domain::product_domain(&part.domain, &u.set_h),
        None => part.domain.clone(),
    };
    let mut prog = SosProgram::new(nv);
    prog.add_sos_on("trace condition", AffinePoly::from_poly(t), &dom, kind, 0)?;
    let (status, _) = solve_program(&prog, opts)?;
    Ok(status == SdpStatus::Optimal)
}

/// Solves one partition at one degree, escalating the certificate kind and
/// running the trace-condition rounds as configured.
pub fn solve_partition(prob: &HjbProblem, partition: usize, degree: u32, opts: &HierarchyOptions) -> Result<PartitionResult, HjbError> {
    if partition >= prob.partitions.len() {
        return Err(HjbError::Input(format!("no partition {partition}")));
    }
    let local = prob.localized(&prob.partition_frame(partition))?;
    let prob = &local;
    let mut kinds = vec![prob.certificate];
    if opts.escalate && prob.certificate == CertificateKind::QuadraticModule {
        kinds.push(CertificateKind::Preordering);
    }
    let mut result = None;
    for &kind in &kinds {
        let r = solve_once(prob, partition, degree, kind, None, opts)?;
        let done = r.status == PartitionStatus::Feasible;
        result = Some(r);
        if done {
            break;
        }
    }
    let mut result = result.expect("at least one certificate kind");
    if prob.mode == Mode::DeterministicClf && result.status == PartitionStatus::Feasible {
        let kind = result.certificate;
        let mut current = result.clone();
        let mut certified = certify_trace(prob, partition, current.psi_l.as_ref().unwrap(), kind, &opts.sdp)?;
        for _ in 0..opts.trace_iterations {
            if certified {
                break;
            }
            let next = solve_once(prob, partition, degree, kind, current.psi_l.clone(), opts)?;
            if next.status != PartitionStatus::Feasible {
                break;
            }
            current = next;
            certified = certify_trace(prob, partition, current.psi_l.as_ref().unwrap(), kind, &opts.sdp)?;
        }
        current.trace_certified = Some(certified);
        result = current;
    }
    info!(
        "degree {degree} partition {partition}: {:?} ({:?}) eps {:?} iterations {} residual {:?}",
        result.status, result.certificate, result.epsilon, result.iterations, result.certificate_residual
    );
    Ok(result)
}

/// Solves every even degree in `d_min..=d_max` on every partition and keeps
/// the feasible degree with the smallest `ε`.
pub fn hierarchy(prob: &HjbProblem, d_min: u32, d_max: u32, opts: &HierarchyOptions) -> Result<CertifiedSolution, HjbError> {
    if d_min > d_max || d_min % 2 == 1 || d_max % 2 == 1 {
        return Err(HjbError::Input(format!("degree range {d_min}..={d_max} must be even and nonempty")));
    }
    let degrees: Vec<u32> = (d_min..=d_max).step_by(2).collect();
    let np = prob.partitions.len();
    let jobs: Vec<(u32, usize)> = degrees.iter().flat_map(|&d| (0..np).map(move |p| (d, p))).collect();
    let results: Vec<PartitionResult> = jobs
        .par_iter()
        .map(|&(d, p)| solve_partition(prob, p, d, opts))
        .collect::<Result<_, _>>()?;
    let history: Vec<DegreeRecord> = degrees
        .iter()
        .map(|&d| DegreeRecord { degree: d, partitions: results.iter().filter(|r| r.degree == d).cloned().collect() })
        .collect();
    let warnings = monotonicity_warnings(&history);
    for w in &warnings {
        warn!("{w}");
    }
    from_history(prob, history, warnings, d_min, d_max)
}

/// Per partition, `ε` must not increase by more than `1e-7` between
/// consecutive feasible degrees.
pub(crate) fn monotonicity_warnings(history: &[DegreeRecord]) -> Vec<String> {
    let mut warnings = Vec::new();
    let np = history.first().map(|h| h.partitions.len()).unwrap_or(0);
    for p in 0..np {
        let mut prev: Option<(u32, f64)> = None;
        for rec in history {
            let Some(e) = rec.partitions[p].epsilon else { continue };
            if let Some((d0, e0)) = prev {
                if e > e0 + 1e-7 {
                    warnings.push(format!(
                        "partition {p}: eps rose from {e0:.3e} at degree {d0} to {e:.3e} at degree {} (solver accuracy)",
                        rec.degree
                    ));
                }
            }
            prev = Some((rec.degree, e));
        }
    }
    warnings
}

/// Picks the best feasible degree out of a recorded sweep.
pub(crate) fn from_history(
    prob: &HjbProblem,
    history: Vec<DegreeRecord>,
    warnings: Vec<String>,
    d_min: u32,
    d_max: u32,
) -> Result<CertifiedSolution, HjbError> {
    let best = history
        .iter()
        .filter_map(|r| r.epsilon().map(|e| (r.degree, e)))
        .fold(None::<(u32, f64)>, |acc, (d, e)| match acc {
            Some((_, be)) if be <= e => acc,
            _ => Some((d, e)),
        });
    let Some((degree, epsilon)) = best else {
        if let Some(r) = history.iter().find(|r| r.stalled()) {
            return Err(HjbError::Stalled { degree: r.degree, history });
        }
        return Err(HjbError::AllInfeasible { min: d_min, max: d_max, history });
    };
    let rec = history.iter().find(|r| r.degree == degree).expect("best degree is in history");
    let pieces = rec
        .partitions
        .iter()
        .map(|r| Piece {
            domain: prob.partitions[r.partition].domain.clone(),
            frame: r.frame.clone(),
            psi_l: r.psi_l.clone().expect("feasible partitions carry Ψ_l"),
            psi_u: r.psi_u.clone().expect("feasible partitions carry Ψ_u"),
            epsilon: r.epsilon.unwrap_or(f64::NAN),
        })
        .collect();
    Ok(CertifiedSolution { lambda: prob.lambda, degree, pieces, epsilon, history, warnings })
}

impl CertifiedSolution {
    /// `ε` per feasible degree and partition, in sweep order.
    pub fn epsilon_table(&self) -> Vec<(u32, Vec<Option<f64>>)> {
        self.history.iter().map(|r| (r.degree, r.partitions.iter().map(|p| p.epsilon).collect())).collect()
    }

    /// The solution with the pieces of another recorded degree.
    pub fn at_degree(&self, prob: &HjbProblem, degree: u32) -> Option<CertifiedSolution> {
        let rec = self.history.iter().find(|r| r.degree == degree && r.feasible())?;
        let pieces = rec
            .partitions
            .iter()
            .map(|r| Piece {
                domain: prob.partitions[r.partition].domain.clone(),
                frame: r.frame.clone(),
                psi_l: r.psi_l.clone().unwrap(),
                psi_u: r.psi_u.clone().unwrap(),
                epsilon: r.epsilon.unwrap_or(f64::NAN),
            })
            .collect();
        Some(CertifiedSolution { degree, pieces, epsilon: rec.epsilon()?, ..self.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar() -> HjbProblem {
        HjbProblem::from_json(include_str!("../../problems/scalar_unstable.json")).unwrap()
    }

    #[test]
    fn rejects_bad_ranges() {
        let prob = scalar();
        let opts = HierarchyOptions::default();
        assert!(matches!(hierarchy(&prob, 6, 4, &opts), Err(HjbError::Input(_))));
        assert!(matches!(hierarchy(&prob, 5, 8, &opts), Err(HjbError::Input(_))));
        assert!(matches!(solve_partition(&prob, 2, 8, &opts), Err(HjbError::Input(_))));
    }

    #[test]
    fn single_degree_is_a_single_solve() {
        let sol = hierarchy(&scalar(), 8, 8, &HierarchyOptions::default()).unwrap();
        assert_eq!(sol.history.len(), 1);
        assert_eq!(sol.degree, 8);
        assert_eq!(sol.pieces.len(), 2);
        assert_eq!(sol.epsilon, sol.history[0].epsilon().unwrap());
        assert!(sol.warnings.is_empty());
        for r in &sol.history[0].partitions {
            assert_eq!(r.status, PartitionStatus::Feasible);
            assert!(r.certificate_residual.unwrap() < 1e-7);
            assert!(r.kkt.primal < 1e-6);
        }
    }

    #[test]
    fn history_bookkeeping() {
        let prob = scalar();
        let sol = hierarchy(&prob, 6, 8, &HierarchyOptions::default()).unwrap();
        assert_eq!(sol.degree, 8);
        assert_eq!(sol.epsilon_table().iter().map(|(d, _)| *d).collect::<Vec<_>>(), vec![6, 8]);
        let at6 = sol.at_degree(&prob, 6).unwrap();
        assert!(at6.epsilon > sol.epsilon);
        assert!(sol.at_degree(&prob, 10).is_none());

        // ε rising along the sweep is flagged but the best degree still wins.
        let mut h = sol.history.clone();
        h[1].partitions[0].epsilon = Some(h[0].partitions[0].epsilon.unwrap() + 1e-3);
        let w = monotonicity_warnings(&h);
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("partition 0"));
        let re = from_history(&prob, h, w, 6, 8).unwrap();
        assert_eq!(re.degree, 6);

        let mut h = sol.history.clone();
        for r in &mut h {
            r.partitions[1].status = PartitionStatus::Infeasible;
        }
        assert!(matches!(from_history(&prob, h.clone(), vec![], 6, 8), Err(HjbError::AllInfeasible { min: 6, max: 8, .. })));
        h[1].partitions[0].status = PartitionStatus::Stalled;
        assert!(matches!(from_history(&prob, h, vec![], 6, 8), Err(HjbError::Stalled { degree: 8, .. })));
    }

    #[test]
    fn lowest_degree_is_infeasible_on_one_side() {
        let err = hierarchy(&scalar(), 2, 2, &HierarchyOptions::default()).unwrap_err();
        let HjbError::AllInfeasible { history, .. } = err else { panic!("{err}") };
        assert_eq!(history[0].partitions[0].status, PartitionStatus::Feasible);
        assert_eq!(history[0].partitions[1].status, PartitionStatus::Infeasible);
        assert_eq!(history[0].partitions[1].certificate, CertificateKind::Preordering);
    }
}
