use sclf::hjb::*;
use sclf::sim::{rollout, Exit, SimConfig};
use sclf::verify::solve_pde_fd;
use serde_json::{json, Value};

fn scalar_json() -> Value {
    serde_json::from_str(include_str!("../problems/scalar_unstable.json")).unwrap()
}

fn build(v: &Value) -> HjbProblem {
    HjbProblem::from_json(&v.to_string()).unwrap()
}

fn grid(n: usize) -> impl Iterator<Item = f64> {
    (0..=n).map(move |k| -1.0 + 2.0 * k as f64 / n as f64)
}

#[test]
fn scalar_sweep_bounds_are_ordered_and_tight() {
    let prob = build(&scalar_json());
    let sol = hierarchy(&prob, 8, 20, &HierarchyOptions::default()).unwrap();
    assert!(sol.warnings.is_empty(), "{:?}", sol.warnings);
    let table = sol.epsilon_table();
    for p in 0..2 {
        let eps: Vec<f64> = table.iter().filter_map(|(_, e)| e[p]).collect();
        assert_eq!(eps.len(), 7);
        for w in eps.windows(2) {
            assert!(w[1] <= w[0] + 1e-7, "{eps:?}");
        }
    }
    assert!(sol.epsilon < 1e-6);

    let (lo, hi) = (sol.psi_l(), sol.psi_u());
    assert!((lo.eval(&[0.0]) - 1.0).abs() < 1e-7);
    assert!(sol.value(Which::Upper, &[0.0]).unwrap().abs() < 1e-6);
    for x in grid(400) {
        let vu = sol.value(Which::Upper, &[x]).unwrap();
        let vl = sol.value(Which::Lower, &[x]).unwrap();
        // A 1e-7 slack on Ψ is 1e-7/Ψ on V.
        assert!(vu >= vl - 1e-7 / hi.eval(&[x]), "x={x}: {vu} < {vl}");
        assert!(hi.eval(&[x]) - lo.eval(&[x]) <= sol.epsilon.max(0.0) + 1e-7);
    }
    // The boundary values come back out of the bounds.
    for x in [-1.0, 1.0] {
        assert!((sol.value(Which::Upper, &[x]).unwrap() - (10.0 - 20f64.ln())).abs() < 1e-3);
    }
}

#[test]
fn control_sign_agrees_with_the_oracle() {
    let prob = build(&scalar_json());
    let sol = hierarchy(&prob, 14, 14, &HierarchyOptions::default()).unwrap();
    let ctrl = sol.controller(&prob).unwrap();
    let fd = solve_pde_fd(&prob, 2001).unwrap();
    let h = fd.axes[0][1] - fd.axes[0][0];
    for x in [-0.5, -0.2, 0.2, 0.5] {
        let k = fd.axes[0].iter().position(|a| (a - x).abs() < 0.5 * h).unwrap();
        // u* = λ R⁻¹ G Ψ*' / Ψ* with G = R = 1.
        let u_star = prob.lambda * (fd.values[k + 1] - fd.values[k - 1]) / (2.0 * h) / fd.values[k];
        let u = ctrl.control(&[x]).unwrap()[0];
        assert_eq!(u.signum(), u_star.signum(), "x={x}: {u} vs {u_star}");
        assert!((u - u_star).abs() < 0.05 * u_star.abs() + 1e-3, "x={x}: {u} vs {u_star}");
    }
    assert!(ctrl.control(&[0.5]).unwrap()[0] < 0.0);
}

#[test]
fn stable_linear_toy_is_tight_at_low_degree() {
    let mut v = scalar_json();
    v["drift"] = json!(["-x"]);
    v["boundary"]["components"][0]["phi"] = json!(1.0);
    v["boundary"]["components"][1]["phi"] = json!(1.0);
    let prob = build(&v);
    let sol = hierarchy(&prob, 4, 8, &HierarchyOptions::default()).unwrap();
    assert!(sol.history[0].epsilon().unwrap() < 0.1);
    assert!(sol.epsilon < 1e-4, "{}", sol.epsilon);
    let fd = solve_pde_fd(&prob, 2001).unwrap();
    let delta = 1e-6 + fd.discretization_error;
    let (lo, hi) = (sol.psi_l(), sol.psi_u());
    for k in 0..fd.len() {
        let x = fd.point(k);
        assert!(lo.eval(&x) - delta <= fd.values[k] && fd.values[k] <= hi.eval(&x) + delta, "x={x:?}");
    }
}

fn with_interval(lo: f64, hi: f64) -> HjbProblem {
    let mut v = scalar_json();
    v["drift"] = json!(["x^3 + a*x^2 + x"]);
    v["uncertainty"] = json!({"parameters": ["a"], "domain": [format!("a - {lo}"), format!("{hi} - a")]});
    build(&v)
}

#[test]
fn single_point_uncertainty_builds_the_nominal_rows() {
    let nominal = build(&scalar_json());
    let robust = with_interval(5.0, 5.0);
    let opts = AssembleOptions::default();
    let a = assemble(&nominal, 1, 8, &opts).unwrap().program;
    let b = assemble_robust(&robust, 1, 8, &opts).unwrap().program;
    let labels = |p: &sclf::soscomp::SosProgram| p.sos_constraints.iter().map(|c| c.label.clone()).collect::<Vec<_>>();
    assert_eq!(labels(&a), labels(&b));
    assert_eq!(a.linear_constraints.len(), b.linear_constraints.len());
    assert_eq!(a.num_scalars(), b.num_scalars());
    assert_eq!(b.nvars(), a.nvars() + 1);
    // Fixing a = 5 in the lifted problem gives back the nominal data.
    let fixed = robust.with_parameters(&[5.0]).unwrap();
    assert_eq!(fixed.f.get(0, 0), nominal.f.get(0, 0));
}

#[test]
fn narrow_uncertainty_approaches_the_nominal_gap() {
    let opts = HierarchyOptions::default();
    let a = hierarchy(&build(&scalar_json()), 8, 8, &opts).unwrap();
    let b = hierarchy(&with_interval(4.999, 5.001), 8, 8, &opts).unwrap();
    assert!(b.epsilon >= a.epsilon - 1e-7, "{} vs {}", b.epsilon, a.epsilon);
    assert!(b.epsilon - a.epsilon < 1e-3, "{} vs {}", b.epsilon, a.epsilon);
}

#[test]
fn more_noise_never_lowers_the_cost() {
    let base = build(&scalar_json());
    let mut v = scalar_json();
    v["sigma_eps"] = json!([[2.0]]);
    let noisy = build(&v);
    assert!((noisy.lambda - 2.0).abs() < 1e-12);
    let sol = hierarchy(&noisy, 12, 12, &HierarchyOptions::default()).unwrap();
    let fd = solve_pde_fd(&base, 2001).unwrap();
    let mut worst = f64::INFINITY;
    for k in 0..fd.len() {
        let x = fd.point(k);
        let vu = sol.value(Which::Upper, &x).unwrap();
        worst = worst.min(vu - fd.value_function(k));
    }
    assert!(worst >= -1e-6, "V_u with doubled noise undercuts V* by {worst}");
}

#[test]
fn deterministic_controller_drives_the_noiseless_system_home() {
    let mut v = scalar_json();
    v["mode"] = json!("deterministic_clf");
    v["lambda"] = json!(1.0);
    let prob = build(&v);
    let sol = hierarchy(&prob, 10, 10, &HierarchyOptions::default()).unwrap();
    for r in &sol.history[0].partitions {
        assert_eq!(r.trace_certified, Some(true));
    }
    let ctrl = sol.controller(&prob).unwrap();
    let cfg = SimConfig { noise: false, ..SimConfig::for_problem(&prob) };
    for x0 in [-0.5, 0.5] {
        let t = rollout(&prob, &ctrl, &[x0], &cfg).unwrap();
        assert_eq!(t.exit, Exit::OriginReached, "x0={x0}");
    }
}
