//! Value bounds and the feedback controller derived from `Ψ_l`.

use nalgebra::{DMatrix, DVector};

use super::problem::HjbProblem;
use super::solve::CertifiedSolution;
use super::HjbError;
use crate::domain::{Frame, SemialgebraicSet};
use crate::{PolyMatrix, Polynomial};

/// Below this `Ψ_l` the controller refuses to evaluate.
const PSI_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    /// `V_u = −λ ln Ψ_l`.
    Upper,
    /// `V_l = −λ ln Ψ_u`.
    Lower,
}

/// A function given by one polynomial per partition piece, each written in
/// its piece's local coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewisePoly {
    pieces: Vec<PieceFn>,
}

#[derive(Clone, Debug, PartialEq)]
struct PieceFn {
    domain: SemialgebraicSet,
    frame: Frame,
    poly: Polynomial,
    grad: Vec<Polynomial>,
}

impl PiecewisePoly {
    pub fn new(pieces: Vec<(SemialgebraicSet, Frame, Polynomial)>) -> Self {
        let pieces = pieces
            .into_iter()
            .map(|(domain, frame, poly)| {
                let grad = poly.gradient();
                PieceFn { domain, frame, poly, grad }
            })
            .collect();
        PiecewisePoly { pieces }
    }

    /// Index of the first piece containing `x`, or the piece whose worst
    /// generator is least violated.
    pub fn piece_of(&self, x: &[f64]) -> usize {
        if let Some(i) = self.pieces.iter().position(|p| p.domain.contains(x, 1e-12)) {
            return i;
        }
        let slack = |d: &SemialgebraicSet| d.inequalities().iter().map(|g| g.eval_f64(x)).fold(f64::INFINITY, f64::min);
        (0..self.pieces.len())
            .max_by(|&a, &b| slack(&self.pieces[a].domain).total_cmp(&slack(&self.pieces[b].domain)))
            .unwrap_or(0)
    }

    /// The polynomial of `piece` in the original coordinates.
    pub fn poly(&self, piece: usize) -> Polynomial {
        let p = &self.pieces[piece];
        p.frame.poly_to_global(&p.poly)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let p = &self.pieces[self.piece_of(x)];
        p.poly.eval_f64(&p.frame.to_local(x))
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let p = &self.pieces[self.piece_of(x)];
        let s = p.frame.to_local(x);
        DVector::from_iterator(p.grad.len(), p.grad.iter().zip(&p.frame.scale).map(|(g, r)| g.eval_f64(&s) / r))
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let p = &self.pieces[self.piece_of(x)];
        let s = p.frame.to_local(x);
        let n = p.grad.len();
        DMatrix::from_fn(n, n, |i, j| {
            p.grad[i].diff(j).map(|d| d.eval_f64(&s)).unwrap_or(0.0) / (p.frame.scale[i] * p.frame.scale[j])
        })
    }
}

impl CertifiedSolution {
    pub fn psi_l(&self) -> PiecewisePoly {
        PiecewisePoly::new(self.pieces.iter().map(|p| (p.domain.clone(), p.frame.clone(), p.psi_l.clone())).collect())
    }

    pub fn psi_u(&self) -> PiecewisePoly {
        PiecewisePoly::new(self.pieces.iter().map(|p| (p.domain.clone(), p.frame.clone(), p.psi_u.clone())).collect())
    }

    /// `V_u(x) = −λ ln Ψ_l(x)` or `V_l(x) = −λ ln Ψ_u(x)`.
    pub fn value(&self, which: Which, x: &[f64]) -> Result<f64, HjbError> {
        let psi = match which {
            Which::Upper => self.psi_l().eval(x),
            Which::Lower => self.psi_u().eval(x),
        };
        if !(psi > 0.0) {
            return Err(HjbError::NonPositive { x: x.to_vec(), value: psi });
        }
        Ok(-self.lambda * psi.ln())
    }

    pub fn controller(&self, prob: &HjbProblem) -> Result<Controller, HjbError> {
        Controller::new(self.psi_l(), prob)
    }
}

/// `u(x) = (λ / Ψ_l(x)) R⁻¹ G(x)ᵀ ∇Ψ_l(x)`.
#[derive(Clone, Debug)]
pub struct Controller {
    psi_l: PiecewisePoly,
    lambda: f64,
    r_inv: DMatrix<f64>,
    /// Input map over the states, uncertain parameters at nominal values.
    g: PolyMatrix<f64>,
}

impl Controller {
    pub fn new(psi_l: PiecewisePoly, prob: &HjbProblem) -> Result<Self, HjbError> {
        let nominal = prob.uncertainty.as_ref().map(|u| u.nominal.clone()).unwrap_or_default();
        let g = prob.with_parameters(&nominal)?.g;
        Ok(Controller { psi_l, lambda: prob.lambda, r_inv: prob.r_inv(), g })
    }

    /// Rescales the penalty the controller was built with; used to compare
    /// penalties at a fixed `Ψ_l`.
    pub fn with_penalty(mut self, r: &DMatrix<f64>) -> Option<Self> {
        self.r_inv = r.clone().try_inverse()?;
        Some(self)
    }

    pub fn psi_l(&self) -> &PiecewisePoly {
        &self.psi_l
    }

    pub fn control(&self, x: &[f64]) -> Result<DVector<f64>, HjbError> {
        let psi = self.psi_l.eval(x);
        if !(psi > PSI_FLOOR) {
            return Err(HjbError::NonPositive { x: x.to_vec(), value: psi });
        }
        let grad = self.psi_l.gradient(x);
        let g = self.g.eval(x);
        Ok(&self.r_inv * g.transpose() * grad * (self.lambda / psi))
    }

    /// `V_u(x)`.
    pub fn value(&self, x: &[f64]) -> Result<f64, HjbError> {
        let psi = self.psi_l.eval(x);
        if !(psi > 0.0) {
            return Err(HjbError::NonPositive { x: x.to_vec(), value: psi });
        }
        Ok(-self.lambda * psi.ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::parse_poly_with_names;

    fn scalar() -> HjbProblem {
        HjbProblem::from_json(include_str!("../../problems/scalar_unstable.json")).unwrap()
    }

    /// Ψ_l = 1 − (1 − ψ_b) x², which meets the exterior desirability at ±1.
    fn bowl(prob: &HjbProblem) -> PiecewisePoly {
        let psi_b = 20.0 * (-10f64).exp();
        let p = parse_poly_with_names(&format!("1 - {}*x^2", 1.0 - psi_b), &["x"]).unwrap();
        PiecewisePoly::new(vec![(prob.domain.clone(), Frame::identity(1), p)])
    }

    #[test]
    fn value_at_origin_and_boundary() {
        let prob = scalar();
        let c = Controller::new(bowl(&prob), &prob).unwrap();
        assert_eq!(c.value(&[0.0]).unwrap(), 0.0);
        let want = 10.0 - 20f64.ln();
        for x in [-1.0, 1.0] {
            assert!((c.value(&[x]).unwrap() - want).abs() < 1e-12);
        }
        assert!((want - 7.004267726446009).abs() < 1e-12);
    }

    #[test]
    fn control_points_toward_the_origin() {
        let prob = scalar();
        let c = Controller::new(bowl(&prob), &prob).unwrap();
        assert!(c.control(&[0.5]).unwrap()[0] < 0.0);
        assert!(c.control(&[-0.5]).unwrap()[0] > 0.0);
        assert_eq!(c.control(&[0.0]).unwrap()[0], 0.0);
        // u = −R⁻¹Gᵀ V_u' with V_u = −ln Ψ_l.
        let (x, a) = (0.3, 1.0 - 20.0 * (-10f64).exp());
        let want = (-2.0 * a * x) / (1.0 - a * x * x);
        assert!((c.control(&[x]).unwrap()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn doubling_the_penalty_halves_the_control() {
        let prob = scalar();
        let c = Controller::new(bowl(&prob), &prob).unwrap();
        let u1 = c.control(&[0.4]).unwrap()[0];
        let c2 = c.clone().with_penalty(&DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert!((c2.control(&[0.4]).unwrap()[0] - 0.5 * u1).abs() < 1e-15);
        assert!(c.with_penalty(&DMatrix::zeros(1, 1)).is_none());
    }

    #[test]
    fn vanishing_input_map_gives_zero_control_at_origin() {
        let prob = HjbProblem::from_json(include_str!("../../problems/planar.json")).unwrap();
        let p = parse_poly_with_names("1 - x^2 - y^2 + x*y", &["x", "y"]).unwrap();
        let c = Controller::new(PiecewisePoly::new(vec![(prob.domain.clone(), Frame::identity(2), p)]), &prob).unwrap();
        assert_eq!(c.control(&[0.0, 0.0]).unwrap().iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert!(c.control(&[0.3, -0.2]).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn nonpositive_desirability_is_an_error() {
        let prob = scalar();
        let p = parse_poly_with_names("1 - 2*x^2", &["x"]).unwrap();
        let c = Controller::new(PiecewisePoly::new(vec![(prob.domain.clone(), Frame::identity(1), p)]), &prob).unwrap();
        assert!(matches!(c.control(&[0.9]), Err(HjbError::NonPositive { .. })));
        assert!(matches!(c.value(&[0.9]), Err(HjbError::NonPositive { .. })));
        assert!(c.value(&[0.5]).is_ok());
    }

    #[test]
    fn pieces_are_evaluated_in_their_own_frames() {
        let prob = scalar();
        let left = prob.partitions[0].domain.clone();
        let right = prob.partitions[1].domain.clone();
        let frame = Frame::fit(&left.axis_bounds());
        // 1 − x² written in the left frame x = −0.5 + 0.5 s.
        let global = parse_poly_with_names("1 - x^2", &["x"]).unwrap();
        let local = frame.poly_to_local(&global);
        let pw = PiecewisePoly::new(vec![(left, frame, local), (right, Frame::identity(1), parse_poly_with_names("1 - 3*x^2", &["x"]).unwrap())]);
        assert!((pw.eval(&[-0.4]) - 0.84).abs() < 1e-12);
        assert!((pw.gradient(&[-0.4])[0] - 0.8).abs() < 1e-12);
        assert!((pw.hessian(&[-0.4])[(0, 0)] + 2.0).abs() < 1e-12);
        assert!((pw.eval(&[0.4]) - 0.52).abs() < 1e-12);
        assert!((pw.poly(0).eval_f64(&[-0.7]) - 0.51).abs() < 1e-12);
        // Outside every piece: nearest piece by least violated generator.
        assert_eq!(pw.piece_of(&[1.2]), 1);
    }
}
