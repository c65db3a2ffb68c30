//! The generator `ℒ`, boundary desirability, and the SOS programs bounding
//! the desirability from above and below.

use nalgebra::{DMatrix, DVector};

use super::problem::{HjbProblem, Mode};
use super::HjbError;
use crate::domain::{product_domain, CertificateKind, PointConstraint, SemialgebraicSet};
use crate::poly::Monomial;
use crate::soscomp::{vanishes_on, AffinePoly, AffineScalar, SosProgram};
use crate::Polynomial;

/// Template names used in assembled programs.
pub const PSI_L: &str = "psi_l";
pub const PSI_U: &str = "psi_u";
pub const EPSILON: &str = "eps";

/// `ℒΨ = fᵀ∇Ψ + ½ Tr(∇²Ψ Σ_t)`, differentiating in the states only.
pub fn l_operator(psi: &Polynomial, prob: &HjbProblem) -> Result<Polynomial, HjbError> {
    if psi.nvars() != prob.nvars() {
        return Err(crate::poly::PolyError::VarCountMismatch { left: prob.nvars(), right: psi.nvars() }.into());
    }
    let n = prob.n();
    let grad: Vec<Polynomial> = (0..n).map(|i| psi.diff(i)).collect::<Result<_, _>>()?;
    let mut out = Polynomial::zero(psi.nvars());
    for i in 0..n {
        out = &out + &(prob.f.get(i, 0) * &grad[i]);
        for j in 0..n {
            let s = prob.sigma_t.get(i, j);
            if !s.is_zero() {
                out = &out + &(&grad[i].diff(j)? * s).scale(&0.5);
            }
        }
    }
    Ok(out)
}

/// `Tr((∇Ψ∇Ψᵀ − Ψ∇²Ψ) Σ_t)`: the trace condition on `V_u = −λ ln Ψ`
/// multiplied through by `Ψ²/λ`.
pub fn trace_condition(psi: &Polynomial, prob: &HjbProblem) -> Result<Polynomial, HjbError> {
    bilinear_trace(psi, psi, prob)
}

/// Symmetric bilinear form whose diagonal is [`trace_condition`].
fn bilinear_trace(a: &Polynomial, b: &Polynomial, prob: &HjbProblem) -> Result<Polynomial, HjbError> {
    let n = prob.n();
    let ga: Vec<Polynomial> = (0..n).map(|i| a.diff(i)).collect::<Result<_, _>>()?;
    let gb: Vec<Polynomial> = (0..n).map(|i| b.diff(i)).collect::<Result<_, _>>()?;
    let mut out = Polynomial::zero(a.nvars());
    for i in 0..n {
        for j in 0..n {
            let s = prob.sigma_t.get(i, j);
            if s.is_zero() {
                continue;
            }
            let grads = &(&ga[i] * &gb[j]) + &(&gb[i] * &ga[j]);
            let hess = &(a * &gb[i].diff(j)?) + &(b * &ga[i].diff(j)?);
            out = &out + &(&(&grads - &hess).scale(&0.5) * s);
        }
    }
    Ok(out)
}

/// First-order expansion of the trace condition around `around`:
/// `T(Ψ₀) + DT(Ψ₀)[Ψ − Ψ₀] = 2B(Ψ₀, Ψ) − T(Ψ₀)`.
pub fn linearized_trace_condition(psi: &AffinePoly, around: &Polynomial, prob: &HjbProblem) -> Result<AffinePoly, HjbError> {
    let lin = psi.try_map_linear(|p| bilinear_trace(around, p, prob).map(|v| v.scale(&2.0)))?;
    Ok(lin.sub(&AffinePoly::from_poly(trace_condition(around, prob)?)))
}

/// `ψ = exp(−φ/λ)` per boundary component.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryDesirability {
    /// Over the states.
    pub components: Vec<Polynomial>,
    /// Max abs error of the polynomial fit on each component's samples
    /// (zero for constant `φ`).
    pub fit_residuals: Vec<f64>,
    pub points: Vec<PointConstraint>,
}

/// Boundary desirability; non-constant `φ` is fitted in least squares by a
/// polynomial of total degree `degree` on 200 samples of the component.
pub fn boundary_desirability(prob: &HjbProblem, degree: u32) -> Result<BoundaryDesirability, HjbError> {
    if !(prob.lambda > 0.0) {
        return Err(HjbError::Lambda(format!("λ = {} is not positive", prob.lambda)));
    }
    let n = prob.n();
    let mut components = Vec::new();
    let mut fit_residuals = Vec::new();
    for (h, phi) in prob.boundary.components().iter().zip(&prob.phi) {
        if phi.degree() == 0 {
            components.push(Polynomial::constant(n, (-phi.constant_term() / prob.lambda).exp()));
            fit_residuals.push(0.0);
            continue;
        }
        let samples = component_samples(&prob.domain, h, 200);
        if samples.is_empty() {
            return Err(HjbError::Input("could not sample a boundary component with non-constant cost".into()));
        }
        let basis = Monomial::all_up_to(n, degree);
        let a = DMatrix::from_fn(samples.len(), basis.len(), |i, j| basis[j].eval(&samples[i]));
        let y = DVector::from_iterator(samples.len(), samples.iter().map(|x| (-phi.eval_f64(x) / prob.lambda).exp()));
        let svd = a.clone().svd(true, true);
        let coef = svd.solve(&y, 1e-12).map_err(|e| HjbError::Input(format!("boundary fit failed: {e}")))?;
        let fit = Polynomial::from_terms(n, basis.iter().cloned().zip(coef.iter().copied()));
        let resid = (&a * &coef - &y).amax();
        components.push(fit);
        fit_residuals.push(resid);
    }
    Ok(BoundaryDesirability { components, fit_residuals, points: prob.boundary.point_constraints.clone() })
}

/// Points on `{h = 0} ∩ Ω`, found by Newton projection from a grid.
fn component_samples(domain: &SemialgebraicSet, h: &Polynomial, want: usize) -> Vec<Vec<f64>> {
    let per_axis = match domain.nvars() {
        1 => want,
        2 => 60,
        _ => 8,
    };
    let grad = h.gradient();
    let mut out = Vec::new();
    for mut x in domain.grid(per_axis) {
        for _ in 0..30 {
            let v = h.eval_f64(&x);
            let gvec: Vec<f64> = grad.iter().map(|g| g.eval_f64(&x)).collect();
            let gn: f64 = gvec.iter().map(|g| g * g).sum();
            if v.abs() < 1e-13 || gn == 0.0 {
                break;
            }
            for (xi, gi) in x.iter_mut().zip(&gvec) {
                *xi -= v * gi / gn;
            }
        }
        if h.eval_f64(&x).abs() < 1e-10 && domain.contains(&x, 1e-9) && !out.iter().any(|p: &Vec<f64>| dist2(p, &x) < 1e-12) {
            out.push(x);
        }
    }
    if out.len() > want {
        let stride = out.len() as f64 / want as f64;
        out = (0..want).map(|k| out[(k as f64 * stride) as usize].clone()).collect();
    }
    out
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssembleOptions {
    pub kind: CertificateKind,
    /// Linearization point for the trace row (`deterministic_clf` only).
    pub trace_around: Option<Polynomial>,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions { kind: CertificateKind::QuadraticModule, trace_around: None }
    }
}

/// A program and the bookkeeping needed to read it back.
#[derive(Clone, Debug)]
pub struct Assembled {
    pub program: SosProgram,
    pub partition: usize,
    pub degree: u32,
    pub boundary: BoundaryDesirability,
}

/// Multi-indices over the states only, embedded in `nvars` variables.
fn state_basis(n: usize, nvars: usize, degree: u32) -> Vec<Monomial> {
    Monomial::all_up_to(n, degree)
        .into_iter()
        .map(|m| {
            let mut e = m.exponents().to_vec();
            e.resize(nvars, 0);
            Monomial::new(e)
        })
        .collect()
}

/// The bounding program on one partition at template degree `degree`.
///
/// Rows (all localized on the partition, or on partition × `ℋ` when the
/// problem has uncertain parameters):
/// `ℒΨ_l − qΨ_l/λ − m q`, `qΨ_u/λ − ℒΨ_u − m q`, `ε − (Ψ_u − Ψ_l)`,
/// boundary rows `Ψ_l − t h`, `ψ − Ψ_l − t h`, `Ψ_u − ψ − t h` per
/// component, monotonicity of `Ψ_l` on each half-space piece with an
/// interior, and point constraints at isolated boundary points.
pub fn assemble(prob: &HjbProblem, partition: usize, degree: u32, opts: &AssembleOptions) -> Result<Assembled, HjbError> {
    if degree % 2 != 0 {
        return Err(HjbError::Input(format!("degree {degree} is odd")));
    }
    let part = prob
        .partitions
        .get(partition)
        .ok_or_else(|| HjbError::Input(format!("no partition {partition}")))?;
    let n = prob.n();
    let nv = prob.nvars();
    let lift = |p: &Polynomial| p.lift(nv, 0);
    let row_domain = match &prob.uncertainty {
        Some(u) => product_domain(&part.domain, &u.set_h),
        None => part.domain.clone(),
    };
    let kind = opts.kind;
    let bd = boundary_desirability(prob, degree)?;

    let mut prog = SosProgram::new(nv);
    let psi_l = prog.template_chebyshev(PSI_L, state_basis(n, nv, degree))?;
    let psi_u = prog.template_chebyshev(PSI_U, state_basis(n, nv, degree))?;
    let eps = prog.scalar(EPSILON);

    let inv_l = 1.0 / prob.lambda;
    let q = &prob.q;
    let margin_q = q.scale(&prob.margin);
    let l_of = |t: &AffinePoly| t.try_map_linear(|p| l_operator(p, prob));

    let normalize = matches!(prob.mode, Mode::Stabilization | Mode::DeterministicClf);
    let origin = prob.origin();
    let has_origin = part.domain.contains(&origin, 1e-12);
    // With f, Σ_t and q all zero at the origin both HJB rows vanish there
    // for every choice of templates.
    let pinned_rows = normalize
        && has_origin
        && prob.f.entries().iter().chain(prob.sigma_t.entries()).chain([q]).all(|p| vanishes_on(p, &origin));
    let mut hjb_row = |label: &str, row: AffinePoly| {
        if pinned_rows {
            prog.add_sos_on_vanishing(label, row, &row_domain, kind, degree, &origin)
        } else {
            prog.add_sos_on(label, row, &row_domain, kind, degree)
        }
    };
    let lower = l_of(&psi_l)?.sub(&psi_l.mul_poly(q).scale(inv_l)).add_poly(&margin_q.scale(&-1.0));
    hjb_row("lower subsolution", lower)?;
    let upper = psi_u.mul_poly(q).scale(inv_l).sub(&l_of(&psi_u)?).add_poly(&margin_q.scale(&-1.0));
    hjb_row("upper supersolution", upper)?;
    let gap = AffinePoly::scalar(nv, &AffineScalar::var(eps)).sub(&psi_u.sub(&psi_l));
    prog.add_sos_on("gap", gap, &row_domain, kind, degree)?;

    for &c in &part.components {
        let h = lift(&prob.boundary.components()[c]);
        let psi_b = lift(&bd.components[c]);
        let t_deg = degree.saturating_sub(h.degree());
        let rows = [
            ("lower nonnegative", psi_l.clone()),
            ("lower below boundary", AffinePoly::from_poly(psi_b.clone()).sub(&psi_l)),
            ("upper above boundary", psi_u.sub(&AffinePoly::from_poly(psi_b.clone()))),
        ];
        let local = row_domain.without_multiples_of(&h);
        for (k, (label, p)) in rows.into_iter().enumerate() {
            let t = prog.template_chebyshev(&format!("t{k}_c{c}"), state_basis(n, nv, t_deg))?;
            let row = p.sub(&t.mul_poly(&h));
            prog.add_sos_on(&format!("{label} on component {c}"), row, &local, kind, degree)?;
        }
    }

    let mut nominal = origin.clone();
    if let Some(u) = &prob.uncertainty {
        nominal.extend(u.nominal.iter());
    }
    let lift_point = |x: &[f64]| -> Vec<f64> {
        let mut v = x.to_vec();
        v.extend_from_slice(&nominal[n..]);
        v
    };
    if normalize && has_origin {
        let at0 = psi_l.at_point(&lift_point(&origin));
        prog.add_eq("lower normalized at origin", at0.sub(&AffineScalar::constant(1.0)));
    }
    for (k, pc) in bd.points.iter().enumerate() {
        if !part.domain.contains(&pc.point, 1e-12) {
            continue;
        }
        let x = lift_point(&pc.point);
        let pinned = normalize && pc.point.iter().zip(&origin).all(|(v, o)| (v - o).abs() < 1e-12);
        if !pinned {
            prog.add_ge(&format!("lower nonnegative at point {k}"), psi_l.at_point(&x));
            prog.add_ge(&format!("lower below point {k}"), AffineScalar::constant(pc.value).sub(&psi_l.at_point(&x)));
        }
        prog.add_ge(&format!("upper above point {k}"), psi_u.at_point(&x).sub(&AffineScalar::constant(pc.value)));
    }

    if normalize {
        for i in 0..n {
            // sign · x_i ≥ 0 in the problem's coordinates.
            let half = |nvars: usize, sign: f64| {
                let x = &Polynomial::var(nvars, i).scale(&prob.frame.scale[i]) + &Polynomial::constant(nvars, prob.frame.center[i]);
                x.scale(&sign)
            };
            let mut pieces = Vec::new();
            for (sign, label) in [(1.0, "decreasing"), (-1.0, "increasing")] {
                if part.domain.with_generator(half(n, sign))?.has_interior() {
                    pieces.push((sign, label));
                }
            }
            let name = &prob.state_names[i];
            if pieces.len() == 2 {
                // Both signs force ∂_i Ψ_l = 0 on x_i = 0, which leaves the
                // program without a strict interior. Write ∂_i Ψ_l = x_i w
                // and ask −w ≥ 0 on the whole piece instead.
                let w = prog.template_chebyshev(&format!("w_{name}"), state_basis(n, nv, degree.saturating_sub(2)))?;
                let factored = psi_l.diff(i)?.sub(&w.mul_poly(&half(nv, 1.0)));
                prog.add_identity(&format!("lower slope factors through {name}"), &factored);
                prog.add_sos_on(&format!("lower peaked in {name}"), w.scale(-1.0), &row_domain, kind, degree)?;
                continue;
            }
            for (sign, label) in pieces {
                let row_piece = row_domain.with_generator(half(nv, sign))?;
                let d = psi_l.diff(i)?.scale(-sign);
                prog.add_sos_on(&format!("lower {label} in {name}"), d, &row_piece, kind, degree)?;
            }
        }
    }

    if prob.mode == Mode::DeterministicClf {
        if let Some(around) = &opts.trace_around {
            let row = linearized_trace_condition(&psi_l, &lift(around), prob)?;
            prog.add_sos_on("trace condition", row, &row_domain, kind, degree)?;
        }
    }

    prog.minimize(AffineScalar::var(eps));
    Ok(Assembled { program: prog, partition, degree, boundary: bd })
}

/// The robust program: identical rows over `Ω × ℋ` with templates in the
/// states only. Requires an uncertainty block.
pub fn assemble_robust(prob: &HjbProblem, partition: usize, degree: u32, opts: &AssembleOptions) -> Result<Assembled, HjbError> {
    if prob.uncertainty.is_none() {
        return Err(HjbError::Input("robust assembly needs uncertain parameters".into()));
    }
    assemble(prob, partition, degree, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::parse_poly_with_names;
    use serde_json::{json, Value};

    fn scalar_json() -> Value {
        serde_json::from_str(include_str!("../../problems/scalar_unstable.json")).unwrap()
    }

    fn scalar() -> HjbProblem {
        HjbProblem::from_json(&scalar_json().to_string()).unwrap()
    }

    fn planar() -> HjbProblem {
        HjbProblem::from_json(include_str!("../../problems/planar.json")).unwrap()
    }

    fn p1(s: &str) -> Polynomial {
        parse_poly_with_names(s, &["x"]).unwrap()
    }

    fn p2(s: &str) -> Polynomial {
        parse_poly_with_names(s, &["x", "y"]).unwrap()
    }

    #[test]
    fn l_operator_of_a_constant_is_zero() {
        assert!(l_operator(&p1("1"), &scalar()).unwrap().is_zero());
        assert!(l_operator(&p2("3"), &planar()).unwrap().is_zero());
    }

    #[test]
    fn l_operator_matches_hand_expansions() {
        let got = l_operator(&p1("x^2"), &scalar()).unwrap();
        let want = &(&p1("x^3 + 5*x^2 + x") * &p1("2*x")) + &p1("1");
        assert!((&got - &want).max_abs_coeff() < 1e-12);

        let got = l_operator(&p2("x^2 + y^2"), &planar()).unwrap();
        let f1 = p2("2*x^5 - 2*x^3 - 2*x + 2*x*y^4");
        let f2 = p2("2*y^5 - 2*y^3 - 2*y + 2*y*x^4");
        // ½ Tr(2I · diag(x², y²)) = x² + y².
        let want = &(&(&f1 * &p2("2*x")) + &(&f2 * &p2("2*y"))) + &p2("x^2 + y^2");
        assert!((&got - &want).max_abs_coeff() < 1e-12);

        assert!(l_operator(&p2("x"), &scalar()).is_err());
    }

    #[test]
    fn boundary_desirability_of_both_examples() {
        let bd = boundary_desirability(&scalar(), 8).unwrap();
        let exterior = 20.0 * (-10f64).exp();
        for c in &bd.components {
            assert_eq!(c.degree(), 0);
            assert!((c.constant_term() - exterior).abs() < 1e-15);
            assert!((c.constant_term() - 9.0800e-4).abs() < 1e-7);
        }
        assert_eq!(bd.points[0].value, 1.0);
        assert_eq!(bd.fit_residuals, vec![0.0, 0.0]);

        let bd = boundary_desirability(&planar(), 10).unwrap();
        for c in &bd.components {
            assert!((c.constant_term() - (-5f64).exp()).abs() < 1e-15);
            assert!((c.constant_term() - 6.7379e-3).abs() < 1e-7);
        }
    }

    #[test]
    fn nonconstant_boundary_cost_is_fitted() {
        let mut v = scalar_json();
        v["boundary"]["components"][1]["phi"] = json!("x^2 + 1");
        let prob = HjbProblem::from_json(&v.to_string()).unwrap();
        let bd = boundary_desirability(&prob, 4).unwrap();
        // The component {x = 1} is a single point, where e^{−2} is fitted exactly.
        assert!((bd.components[1].eval_f64(&[1.0]) - (-2f64).exp()).abs() < 1e-9);
        assert!(bd.fit_residuals[1] < 1e-9);
    }

    #[test]
    fn nonpositive_lambda_is_rejected() {
        let mut prob = scalar();
        prob.lambda = 0.0;
        assert!(matches!(boundary_desirability(&prob, 4), Err(HjbError::Lambda(_))));
    }

    #[test]
    fn trace_condition_examples() {
        let prob = scalar();
        assert!(trace_condition(&p1("0.7"), &prob).unwrap().is_zero());
        // e^{−x²} truncated; the full series gives 2e^{−2x²}.
        let psi = p1("1 - x^2 + 0.5*x^4");
        let t = trace_condition(&psi, &prob).unwrap();
        assert!((t.eval_f64(&[0.0]) - 2.0).abs() < 1e-12);
        for k in 0..=40 {
            let x = -0.5 + k as f64 * 0.025;
            let (v0, v1, v2) = (1.0 - x * x + 0.5 * x.powi(4), -2.0 * x + 2.0 * x.powi(3), -2.0 + 6.0 * x * x);
            let v = t.eval_f64(&[x]);
            assert!(v > 0.0);
            assert!((v - (v1 * v1 - v0 * v2)).abs() < 1e-12);
            if x.abs() <= 0.2 {
                assert!((v - 2.0 * (-2.0 * x * x).exp()).abs() < 0.01);
            }
        }
    }

    #[test]
    fn linearized_trace_is_exact_at_the_expansion_point() {
        let prob = scalar();
        let psi = p1("1 - x^2 + 0.5*x^4");
        let lin = linearized_trace_condition(&AffinePoly::from_poly(psi.clone()), &psi, &prob).unwrap();
        let exact = trace_condition(&psi, &prob).unwrap();
        assert!((lin.constant_part() - &exact).max_abs_coeff() < 1e-12);
    }

    fn labels(a: &Assembled) -> Vec<String> {
        a.program
            .sos_constraints
            .iter()
            .map(|c| c.label.clone())
            .chain(a.program.linear_constraints.iter().map(|c| c.label.clone()))
            .collect()
    }

    #[test]
    fn row_set_per_mode() {
        let opts = AssembleOptions::default();
        let stab = labels(&assemble(&scalar(), 0, 8, &opts).unwrap());
        for want in ["lower subsolution", "upper supersolution", "gap", "lower normalized at origin", "lower increasing in x"] {
            assert!(stab.iter().any(|l| l == want), "{want} missing from {stab:?}");
        }
        // x ≥ 0 meets [−1, 0] in a single point, so that slope row is skipped.
        assert!(!stab.iter().any(|l| l == "lower decreasing in x"));

        let mut v = scalar_json();
        v["mode"] = json!("path_planning");
        let pp = labels(&assemble(&HjbProblem::from_json(&v.to_string()).unwrap(), 0, 8, &opts).unwrap());
        assert!(!pp.iter().any(|l| l.contains("normalized") || l.contains("increasing") || l.contains("decreasing")));
        assert!(pp.iter().any(|l| l == "gap"));

        let mut v = scalar_json();
        v["mode"] = json!("deterministic_clf");
        v["lambda"] = json!(1.0);
        let det = HjbProblem::from_json(&v.to_string()).unwrap();
        let without = labels(&assemble(&det, 0, 8, &opts).unwrap());
        assert!(!without.iter().any(|l| l == "trace condition"));
        let around = AssembleOptions { trace_around: Some(p1("1 - x^2")), ..opts.clone() };
        assert!(labels(&assemble(&det, 0, 8, &around).unwrap()).iter().any(|l| l == "trace condition"));

        let planar_rows = labels(&assemble(&planar(), 0, 10, &opts).unwrap());
        assert!(planar_rows.iter().any(|l| l == "lower peaked in x") && planar_rows.iter().any(|l| l == "lower peaked in y"));
    }

    #[test]
    fn assembly_errors() {
        let opts = AssembleOptions::default();
        assert!(assemble(&scalar(), 0, 7, &opts).is_err());
        assert!(assemble(&scalar(), 5, 8, &opts).is_err());
        assert!(matches!(assemble_robust(&scalar(), 0, 8, &opts), Err(HjbError::Input(_))));
    }
}
