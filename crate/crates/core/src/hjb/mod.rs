//! Linearly solvable stochastic optimal control: problem data, the bounding
//! SOS programs on the desirability `Ψ = exp(−V/λ)`, the degree hierarchy,
//! and the resulting value bounds and feedback controller.

mod archive;
mod assemble;
mod control;
mod problem;
mod solve;

use thiserror::Error;

pub use archive::{SolutionArchive, ARCHIVE_FORMAT};
pub use assemble::{
    assemble, assemble_robust, boundary_desirability, l_operator, linearized_trace_condition, trace_condition, AssembleOptions,
    Assembled, BoundaryDesirability, EPSILON, PSI_L, PSI_U,
};
pub use control::{Controller, PiecewisePoly, Which};
pub use problem::{
    solve_lambda, BoundaryFile, ComponentFile, CostValue, HierarchyFile, HjbProblem, Mode, Partition, PartitionFile, PointFile,
    ProblemFile, SimulationFile, UncertaintyFile, UncertaintyModel,
};
pub use solve::{
    hierarchy, solve_partition, CertifiedSolution, DegreeRecord, HierarchyOptions, MultiplierRecord, PartitionResult,
    PartitionStatus, Piece,
};

#[derive(Debug, Error)]
pub enum HjbError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("no positive λ: {0}")]
    Lambda(String),
    #[error("problem data violates a standing assumption: {0}")]
    Invariant(String),
    #[error("no feasible degree in {min}..={max}")]
    AllInfeasible { min: u32, max: u32, history: Vec<DegreeRecord> },
    #[error("solver stalled at degree {degree} without any feasible degree")]
    Stalled { degree: u32, history: Vec<DegreeRecord> },
    #[error("Ψ_l = {value:e} is not positive at {x:?}")]
    NonPositive { x: Vec<f64>, value: f64 },
    #[error(transparent)]
    Poly(#[from] crate::poly::PolyError),
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
    #[error(transparent)]
    Sos(#[from] crate::soscomp::SosError),
    #[error(transparent)]
    Sdp(#[from] crate::sdp::SdpError),
}
