//! Small dense semidefinite programs and an embedded interior-point solver.
//!
//! Problems are held in primal standard form with free variables:
//!
//! ```text
//! minimize    Σ_k <C_k, X_k> + c_fᵀ u
//! subject to  Σ_k <A_ik, X_k> + (B u)_i = b_i   for every constraint i
//!             X_k ⪰ 0,  u free
//! ```
//!
//! Block coefficients are given on the upper triangle: an entry
//! `(row, col, v)` with `row <= col` contributes `v * X[row][col]`.

mod ipm;
mod triplet;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ipm::InteriorPoint;
pub use triplet::{read_triplets, write_triplets, TripletError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("operation requires status {expected:?}, solution has {actual:?}")]
    WrongStatus { expected: SdpStatus, actual: SdpStatus },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockEntry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl BlockEntry {
    pub fn new(block: usize, row: usize, col: usize, value: f64) -> Self {
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        BlockEntry { block, row, col, value }
    }
}

/// One linear equality over block entries and free variables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SdpConstraint {
    pub block_entries: Vec<BlockEntry>,
    pub free_entries: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SdpProblem {
    pub blocks: Vec<usize>,
    pub num_free: usize,
    pub constraints: Vec<SdpConstraint>,
    pub objective_free: Vec<f64>,
    pub objective_blocks: Vec<BlockEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Stalled,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SdpStatus,
    /// Free variable values `u`.
    pub y: Vec<f64>,
    /// Primal PSD blocks `X_k`.
    pub block_matrices: Vec<DMatrix<f64>>,
    /// Equality multipliers; for `Infeasible` this is the Farkas ray.
    pub dual: Vec<f64>,
    /// Dual slack blocks `Z_k`.
    pub dual_slacks: Vec<DMatrix<f64>>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub kkt_residuals: KktResiduals,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub feasibility_tol: f64,
    pub gap_tol: f64,
    /// Relative tolerance for accepting an infeasibility ray.
    pub infeasibility_tol: f64,
    pub max_iterations: usize,
    pub regularization: f64,
    pub step_fraction: f64,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feasibility_tol: 1e-8,
            gap_tol: 1e-8,
            infeasibility_tol: 1e-8,
            max_iterations: 200,
            regularization: 1e-15,
            step_fraction: 0.98,
            verbose: false,
        }
    }
}

/// A semidefinite solver. The embedded [`InteriorPoint`] is the reference.
pub trait SdpBackend {
    fn solve(&self, prob: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution, SdpError>;
}

/// Solves with the embedded interior-point method.
pub fn solve(prob: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution, SdpError> {
    InteriorPoint.solve(prob, opts)
}

impl SdpProblem {
    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        if self.objective_free.len() != self.num_free {
            return Err(SdpError::Malformed(format!(
                "objective has {} free coefficients, problem has {} free variables",
                self.objective_free.len(),
                self.num_free
            )));
        }
        if self.blocks.iter().any(|&s| s == 0) {
            return Err(SdpError::Malformed("zero-sized block".into()));
        }
        let check_entry = |e: &BlockEntry| -> Result<(), SdpError> {
            let side = *self
                .blocks
                .get(e.block)
                .ok_or_else(|| SdpError::Malformed(format!("block index {} out of range", e.block)))?;
            if e.row > e.col || e.col >= side {
                return Err(SdpError::Malformed(format!(
                    "entry ({}, {}) invalid for block {} of side {side}",
                    e.row, e.col, e.block
                )));
            }
            if !e.value.is_finite() {
                return Err(SdpError::Malformed("non-finite coefficient".into()));
            }
            Ok(())
        };
        let mut touched = vec![false; self.blocks.len()];
        for (i, c) in self.constraints.iter().enumerate() {
            for e in &c.block_entries {
                check_entry(e)?;
                touched[e.block] = true;
            }
            for &(v, val) in &c.free_entries {
                if v >= self.num_free || !val.is_finite() {
                    return Err(SdpError::Malformed(format!("constraint {i}: bad free entry ({v}, {val})")));
                }
            }
            if !c.rhs.is_finite() {
                return Err(SdpError::Malformed(format!("constraint {i}: non-finite right-hand side")));
            }
        }
        for e in &self.objective_blocks {
            check_entry(e)?;
        }
        if let Some(k) = touched.iter().position(|t| !t) {
            return Err(SdpError::Malformed(format!("block {k} appears in no constraint")));
        }
        Ok(())
    }

    /// `A(X) + B u` for every constraint.
    pub fn apply(&self, x: &[DMatrix<f64>], u: &[f64]) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|c| {
                let blocks: f64 = c.block_entries.iter().map(|e| e.value * x[e.block][(e.row, e.col)]).sum();
                let free: f64 = c.free_entries.iter().map(|&(v, a)| a * u[v]).sum();
                blocks + free
            })
            .collect()
    }

    /// The adjoint `Σ_i y_i A_i` as symmetric matrices, and `Bᵀ y`.
    pub fn apply_adjoint(&self, y: &[f64]) -> (Vec<DMatrix<f64>>, Vec<f64>) {
        let mut mats: Vec<DMatrix<f64>> = self.blocks.iter().map(|&s| DMatrix::zeros(s, s)).collect();
        let mut bt = vec![0.0; self.num_free];
        for (c, &yi) in self.constraints.iter().zip(y) {
            for e in &c.block_entries {
                add_sym(&mut mats[e.block], e.row, e.col, yi * e.value);
            }
            for &(v, a) in &c.free_entries {
                bt[v] += a * yi;
            }
        }
        (mats, bt)
    }

    pub fn objective_matrices(&self) -> Vec<DMatrix<f64>> {
        let mut mats: Vec<DMatrix<f64>> = self.blocks.iter().map(|&s| DMatrix::zeros(s, s)).collect();
        for e in &self.objective_blocks {
            add_sym(&mut mats[e.block], e.row, e.col, e.value);
        }
        mats
    }

    pub fn primal_objective(&self, x: &[DMatrix<f64>], u: &[f64]) -> f64 {
        let blocks: f64 = self.objective_blocks.iter().map(|e| e.value * x[e.block][(e.row, e.col)]).sum();
        blocks + self.objective_free.iter().zip(u).map(|(c, v)| c * v).sum::<f64>()
    }

    pub fn rhs(&self) -> Vec<f64> {
        self.constraints.iter().map(|c| c.rhs).collect()
    }
}

/// Adds `v` to the symmetric matrix whose upper-triangle entry `(r, c)` is
/// addressed by a constraint coefficient.
pub(crate) fn add_sym(m: &mut DMatrix<f64>, r: usize, c: usize, v: f64) {
    if r == c {
        m[(r, r)] += v;
    } else {
        m[(r, c)] += 0.5 * v;
        m[(c, r)] += 0.5 * v;
    }
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = 0.5 * (m + m.transpose());
    SymmetricEigen::new(sym).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn mat_inf_norm(ms: &[DMatrix<f64>]) -> f64 {
    ms.iter().flat_map(|m| m.iter()).fold(0.0, |a, x| a.max(x.abs()))
}

/// Relative KKT residuals recomputed from the returned iterates.
///
/// `primal` also folds in negative curvature of the returned blocks and
/// `dual` that of the dual slacks, so a solution that merely reports small
/// linear residuals cannot pass with an indefinite block.
pub fn kkt_residuals(prob: &SdpProblem, sol: &SdpSolution) -> KktResiduals {
    let b = prob.rhs();
    let ax = prob.apply(&sol.block_matrices, &sol.y);
    let rp: Vec<f64> = ax.iter().zip(&b).map(|(a, b)| a - b).collect();
    let primal_neg = sol
        .block_matrices
        .iter()
        .map(|m| (-min_eigenvalue(m)).max(0.0) / (1.0 + m.norm()))
        .fold(0.0, f64::max);
    let primal = (inf_norm(&rp) / (1.0 + inf_norm(&b))).max(primal_neg);

    let (aty, bty) = prob.apply_adjoint(&sol.dual);
    let c = prob.objective_matrices();
    let mut dual_blocks = 0.0f64;
    for k in 0..prob.blocks.len() {
        let r = &aty[k] + &sol.dual_slacks[k] - &c[k];
        dual_blocks = dual_blocks.max(r.amax());
    }
    let rf: Vec<f64> = bty.iter().zip(&prob.objective_free).map(|(a, c)| a - c).collect();
    let dual_neg = sol
        .dual_slacks
        .iter()
        .map(|m| (-min_eigenvalue(m)).max(0.0) / (1.0 + m.norm()))
        .fold(0.0, f64::max);
    let cnorm = mat_inf_norm(&c).max(inf_norm(&prob.objective_free));
    let dual = (dual_blocks.max(inf_norm(&rf)) / (1.0 + cnorm)).max(dual_neg);

    let pobj = prob.primal_objective(&sol.block_matrices, &sol.y);
    let dobj: f64 = b.iter().zip(&sol.dual).map(|(b, y)| b * y).sum();
    let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
    KktResiduals { primal, dual, gap }
}

/// Checks the Farkas ray stored in an `Infeasible` solution: normalized to
/// `bᵀy = 1`, it must satisfy `Bᵀy = 0` and `Σ y_i A_i ⪯ 0` to within
/// `1e-6`.
pub fn certify_infeasible(prob: &SdpProblem, sol: &SdpSolution) -> Result<bool, SdpError> {
    if sol.status != SdpStatus::Infeasible {
        return Err(SdpError::WrongStatus { expected: SdpStatus::Infeasible, actual: sol.status });
    }
    Ok(farkas_residual(prob, &sol.dual).is_some_and(|r| r <= 1e-6))
}

/// Residual of a candidate primal-infeasibility ray, `None` if `bᵀy <= 0`.
pub fn farkas_residual(prob: &SdpProblem, ray: &[f64]) -> Option<f64> {
    let by: f64 = prob.constraints.iter().zip(ray).map(|(c, y)| c.rhs * y).sum();
    if !(by > 0.0) {
        return None;
    }
    let y: Vec<f64> = ray.iter().map(|v| v / by).collect();
    let (aty, bty) = prob.apply_adjoint(&y);
    let cone = aty
        .iter()
        .map(|m| {
            let top = -min_eigenvalue(&(-m));
            top.max(0.0)
        })
        .fold(0.0, f64::max);
    Some(cone.max(inf_norm(&bty)))
}
