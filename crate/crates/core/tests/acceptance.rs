//! End-to-end acceptance gate. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Runs without the libtest harness so the
//! lines always show; pass a filter that does not match "acceptance" to
//! skip it.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use sclf::hjb::{hierarchy, CertifiedSolution, HierarchyOptions, HjbProblem, PartitionStatus, Which};
use sclf::poly::parse_poly;
use sclf::sdp::{certify_infeasible, solve, BlockEntry, SdpConstraint, SdpProblem, SdpStatus, SolverOptions};
use sclf::sim::{monte_carlo, monte_carlo_runs, rollout, rollout_with, run_rng, Exit, SimConfig};
use sclf::soscomp::{AffinePoly, AffineScalar, SosProgram};
use sclf::domain::{CertificateKind, SemialgebraicSet};
use sclf::verify::{check_all, corrupt, sclf_sample_check, sclf_samples, solve_pde_fd, CheckKind, Corruption, GridSolution, ORACLE_TOL};

const SWEEP_BUDGET: Duration = Duration::from_secs(600);

struct Gate {
    results: Vec<(u32, bool)>,
}

impl Gate {
    fn record(&mut self, id: u32, ok: bool, detail: String) {
        println!("criterion {id:>2}: {} {detail}", if ok { "PASS" } else { "FAIL" });
        self.results.push((id, ok));
    }
}

fn problem(name: &str) -> HjbProblem {
    let path: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("problems").join(name);
    HjbProblem::from_path(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

struct Example {
    prob: HjbProblem,
    sol: CertifiedSolution,
    oracle: GridSolution,
    elapsed: Duration,
}

fn sweep(prob: HjbProblem, lo: u32, hi: u32, per_axis: usize) -> Example {
    let t = Instant::now();
    let sol = hierarchy(&prob, lo, hi, &HierarchyOptions::default()).expect("sweep succeeds");
    let elapsed = t.elapsed();
    let oracle = solve_pde_fd(&prob, per_axis).expect("oracle solves");
    Example { prob, sol, oracle, elapsed }
}

/// Lowest degree at which partition `p` is feasible.
fn first_feasible(sol: &CertifiedSolution, p: usize) -> Option<u32> {
    sol.history.iter().find(|r| r.partitions[p].status == PartitionStatus::Feasible).map(|r| r.degree)
}

fn any_infeasible_at(sol: &CertifiedSolution, degree: u32) -> bool {
    sol.history.iter().filter(|r| r.degree == degree).any(|r| r.partitions.iter().any(|p| p.epsilon.is_none()))
}

fn criterion_1(gate: &mut Gate, scalar: &Example, planar: &Example) {
    let np = scalar.prob.partitions.len();
    let firsts: Vec<Option<u32>> = (0..np).map(|p| first_feasible(&scalar.sol, p)).collect();
    let scalar_ok = firsts.iter().all(|d| matches!(d, Some(d) if *d <= 18)) && any_infeasible_at(&scalar.sol, 2);
    let planar_first = first_feasible(&planar.sol, 0);
    let planar_ok = matches!(planar_first, Some(d) if d <= 12);
    let time_ok = scalar.elapsed <= SWEEP_BUDGET && planar.elapsed <= SWEEP_BUDGET;
    gate.record(
        1,
        scalar_ok && planar_ok && time_ok,
        format!(
            "scalar: infeasible at 2 = {}, first feasible per partition {firsts:?}, sweep {:.1}s; planar: first feasible {planar_first:?}, sweep {:.1}s",
            any_infeasible_at(&scalar.sol, 2),
            scalar.elapsed.as_secs_f64(),
            planar.elapsed.as_secs_f64()
        ),
    );
}

fn criterion_2(gate: &mut Gate, examples: &[(&str, &Example)]) {
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, ex) in examples {
        let table = ex.sol.epsilon_table();
        for p in 0..ex.prob.partitions.len() {
            let eps: Vec<f64> = table.iter().filter_map(|(_, e)| e[p]).collect();
            let worst = eps.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
            ok &= eps.len() >= 2 && worst <= 1e-7;
            detail.push(format!("{name}[{p}] {} degrees, max increase {worst:.1e}", eps.len()));
        }
    }
    gate.record(2, ok, detail.join("; "));
}

/// Node-by-node comparison with the oracle, done here rather than through
/// the verifier.
struct OracleComparison {
    sandwich: f64,
    bound_l: f64,
    bound_u: f64,
    value: f64,
    value_nodes: usize,
    delta: f64,
    eta: f64,
}

fn compare(ex: &Example) -> OracleComparison {
    let g = &ex.oracle;
    let delta = ORACLE_TOL + g.discretization_error;
    let eta = g.values.iter().copied().fold(f64::INFINITY, f64::min);
    let (lo, hi) = (ex.sol.psi_l(), ex.sol.psi_u());
    let eps = ex.sol.epsilon;
    let lambda = ex.prob.lambda;
    let mut c = OracleComparison { sandwich: f64::INFINITY, bound_l: 0.0, bound_u: 0.0, value: f64::INFINITY, value_nodes: 0, delta, eta };
    for k in 0..g.len() {
        let x = g.point(k);
        let fd = g.values[k];
        let (l, u) = (lo.eval(&x), hi.eval(&x));
        c.sandwich = c.sandwich.min(fd - (l - delta)).min(u + delta - fd);
        c.bound_l = c.bound_l.max((l - fd).abs());
        c.bound_u = c.bound_u.max((u - fd).abs());
        if eps < eta && fd > delta {
            let v_u = ex.sol.value(Which::Upper, &x).unwrap_or(f64::INFINITY);
            let slack = -lambda * (1.0 - eps / eta).ln() + lambda * (fd / (fd - delta)).ln() - (v_u - g.value_function(k));
            c.value = c.value.min(slack);
            c.value_nodes += 1;
        }
    }
    c
}

fn criteria_3_to_5(gate: &mut Gate, examples: &[(&str, &Example)]) {
    let cmp: Vec<(&str, &Example, OracleComparison, Option<bool>, Option<bool>, Option<bool>)> = examples
        .iter()
        .map(|(name, ex)| {
            let rep = check_all(&ex.sol, &ex.prob, &ex.oracle).expect("checks run");
            (*name, *ex, compare(ex), rep.ok(CheckKind::Sandwich), rep.ok(CheckKind::EpsilonBound), rep.ok(CheckKind::ValueBound))
        })
        .collect();

    let ok = cmp.iter().all(|(_, _, c, s, _, _)| c.sandwich >= 0.0 && *s == Some(true));
    let detail = cmp
        .iter()
        .map(|(n, ex, c, _, _, _)| format!("{n} {} nodes, min slack {:.2e}, delta {:.2e}", ex.oracle.len(), c.sandwich, c.delta))
        .collect::<Vec<_>>()
        .join("; ");
    gate.record(3, ok, detail);

    let ok = cmp.iter().all(|(_, ex, c, _, b, _)| c.bound_l.max(c.bound_u) <= ex.sol.epsilon + c.delta && *b == Some(true));
    let detail = cmp
        .iter()
        .map(|(n, ex, c, _, _, _)| format!("{n} max|l-fd| {:.2e}, max|u-fd| {:.2e}, eps+delta {:.2e}", c.bound_l, c.bound_u, ex.sol.epsilon + c.delta))
        .collect::<Vec<_>>()
        .join("; ");
    gate.record(4, ok, detail);

    let ok = cmp.iter().all(|(_, _, c, _, _, v)| c.value_nodes > 0 && c.value >= 0.0 && *v == Some(true));
    let detail = cmp
        .iter()
        .map(|(n, ex, c, _, _, _)| format!("{n} eps {:.2e} < eta {:.3}, {} nodes, min slack {:.2e}", ex.sol.epsilon, c.eta, c.value_nodes, c.value))
        .collect::<Vec<_>>()
        .join("; ");
    gate.record(5, ok, detail);
}

fn criterion_6(gate: &mut Gate, examples: &[(&str, &Example)]) {
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, ex) in examples {
        let ctrl = ex.sol.controller(&ex.prob).expect("controller");
        let samples = sclf_samples(&ex.prob);
        let r = sclf_sample_check(&ctrl, &ex.prob, &samples);
        ok &= r.samples >= 900 && r.skipped.is_empty() && r.worst <= 1e-7 && r.worst_plus_q <= 1e-7;
        detail.push(format!("{name} {} samples, max L(V_u) {:.2e}, max L(V_u)+q {:.2e}", r.samples, r.worst, r.worst_plus_q));
    }
    gate.record(6, ok, detail.join("; "));
}

fn criterion_7(gate: &mut Gate, examples: &[(&str, &Example, Vec<f64>)]) {
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, ex, x0) in examples {
        let ctrl = ex.sol.controller(&ex.prob).expect("controller");
        let cfg = SimConfig { n_runs: 30, ..SimConfig::for_problem(&ex.prob) };
        let mc = monte_carlo(&ex.prob, &ctrl, x0, &cfg).expect("rollouts");
        ok &= mc.timeouts == 0 && mc.mean_cost <= mc.v_u_x0 + mc.std_error;
        detail.push(format!("{name} x0 {x0:?}: mean J {:.4} +- {:.4} vs V_u {:.4}", mc.mean_cost, mc.std_error, mc.v_u_x0));
    }
    gate.record(7, ok, detail.join("; "));
}

fn criterion_8(gate: &mut Gate, examples: &[(&str, &Example, Vec<Vec<f64>>)]) {
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, ex, starts) in examples {
        let ctrl = ex.sol.controller(&ex.prob).expect("controller");
        let reached = starts
            .iter()
            .enumerate()
            .filter(|(k, x0)| {
                let cfg = SimConfig { seed: 100 + *k as u64, ..SimConfig::for_problem(&ex.prob) };
                rollout(&ex.prob, &ctrl, x0, &cfg).expect("rollout").exit == Exit::OriginReached
            })
            .count();
        ok &= reached >= 5;
        detail.push(format!("{name} {reached}/{}", starts.len()));
    }
    gate.record(8, ok, detail.join("; "));
}

fn criterion_9(gate: &mut Gate) {
    let opts = SolverOptions::default();
    let mut fails = Vec::new();

    // min x s.t. [[x, 1], [1, x]] ⪰ 0.
    let two = SdpProblem {
        blocks: vec![2],
        num_free: 1,
        constraints: vec![
            SdpConstraint { block_entries: vec![BlockEntry::new(0, 0, 0, 1.0)], free_entries: vec![(0, -1.0)], rhs: 0.0 },
            SdpConstraint { block_entries: vec![BlockEntry::new(0, 1, 1, 1.0)], free_entries: vec![(0, -1.0)], rhs: 0.0 },
            SdpConstraint { block_entries: vec![BlockEntry::new(0, 0, 1, 1.0)], free_entries: vec![], rhs: 1.0 },
        ],
        objective_free: vec![1.0],
        objective_blocks: vec![],
    };
    let s = solve(&two, &opts).expect("solves");
    if s.status != SdpStatus::Optimal || (s.y[0] - 1.0).abs() > 1e-6 {
        fails.push(format!("2x2 min: {:?} {}", s.status, s.y[0]));
    }

    // Gram matrix of c0 + c1 x + c2 x² over {1, x}.
    let gram = |c: [f64; 3]| SdpProblem {
        blocks: vec![2],
        num_free: 0,
        constraints: vec![
            SdpConstraint { block_entries: vec![BlockEntry::new(0, 0, 0, 1.0)], free_entries: vec![], rhs: c[0] },
            SdpConstraint { block_entries: vec![BlockEntry::new(0, 0, 1, 2.0)], free_entries: vec![], rhs: c[1] },
            SdpConstraint { block_entries: vec![BlockEntry::new(0, 1, 1, 1.0)], free_entries: vec![], rhs: c[2] },
        ],
        objective_free: vec![],
        objective_blocks: vec![],
    };
    let s = solve(&gram([1.0, 2.0, 1.0]), &opts).expect("solves");
    if s.status != SdpStatus::Optimal {
        fails.push(format!("gram of (x+1)^2: {:?}", s.status));
    }
    let bad = gram([-1.0, 0.0, 1.0]);
    let s = solve(&bad, &opts).expect("solves");
    if s.status != SdpStatus::Infeasible || !certify_infeasible(&bad, &s).unwrap_or(false) {
        fails.push(format!("gram of x^2-1: {:?}", s.status));
    }

    // min ε s.t. ε − a = s ⪰ 0, a = 3.
    let floor = SdpProblem {
        blocks: vec![1],
        num_free: 2,
        constraints: vec![
            SdpConstraint { block_entries: vec![BlockEntry::new(0, 0, 0, -1.0)], free_entries: vec![(0, 1.0), (1, -1.0)], rhs: 0.0 },
            SdpConstraint { block_entries: vec![], free_entries: vec![(1, 1.0)], rhs: 3.0 },
        ],
        objective_free: vec![1.0, 0.0],
        objective_blocks: vec![],
    };
    let s = solve(&floor, &opts).expect("solves");
    if s.status != SdpStatus::Optimal || (s.y[0] - 3.0).abs() > 1e-6 {
        fails.push(format!("min eps >= 3: {:?} {}", s.status, s.y[0]));
    }

    // SOS / non-SOS pairs.
    let p = |s: &str| parse_poly(s, 1).expect("parses");
    let sos_status = |prog: &SosProgram| {
        let compiled = prog.compile().expect("compiles");
        let sol = solve(&compiled.sdp, &opts).expect("solves");
        let resid = if sol.status == SdpStatus::Optimal { prog.certificate_residuals(&compiled, &sol)[0] } else { f64::NAN };
        (sol.status, resid)
    };
    let box_set = SemialgebraicSet::new(vec![p("1 - x1^2")]).expect("set");
    let cases: Vec<(&str, SosProgram, SdpStatus)> = vec![
        ("x^2+2x+1", single(&p("x1^2 + 2*x1 + 1")), SdpStatus::Optimal),
        ("x^2-1", single(&p("x1^2 - 1")), SdpStatus::Infeasible),
        ("1-x^2 bare", single(&p("1 - x1^2")), SdpStatus::Infeasible),
        ("1-x^2 on [-1,1]", {
            let mut prog = SosProgram::new(1);
            prog.add_sos_on("box", AffinePoly::from_poly(p("1 - x1^2")), &box_set, CertificateKind::QuadraticModule, 2).expect("row");
            prog
        }, SdpStatus::Optimal),
    ];
    for (name, prog, want) in &cases {
        let (status, resid) = sos_status(prog);
        if status != *want || (status == SdpStatus::Optimal && !(resid <= 1e-7)) {
            fails.push(format!("{name}: {status:?} residual {resid:e}"));
        }
    }

    // min ε with ε − x² ≥ 0 on [−1, 1] is 1.
    let mut prog = SosProgram::new(1);
    let eps = prog.scalar("eps");
    let expr = AffinePoly::scalar(1, &AffineScalar::var(eps)).sub(&AffinePoly::from_poly(p("x1^2")));
    prog.add_sos_on("gap", expr, &box_set, CertificateKind::QuadraticModule, 2).expect("row");
    prog.minimize(AffineScalar::var(eps));
    let compiled = prog.compile().expect("compiles");
    let s = solve(&compiled.sdp, &opts).expect("solves");
    match prog.extract(&s) {
        Ok(out) if (out.objective - 1.0).abs() <= 1e-6 => {}
        other => fails.push(format!("min eps over x^2: {:?}", other.map(|o| o.objective))),
    }

    let ok = fails.is_empty();
    gate.record(9, ok, if ok { "4 SDPs and 5 SOS programs as expected".into() } else { fails.join("; ") });
}

fn single(poly: &sclf::Polynomial) -> SosProgram {
    let mut prog = SosProgram::new(1);
    prog.add_sos("p", AffinePoly::from_poly(poly.clone())).expect("row");
    prog
}

fn criterion_10(gate: &mut Gate) {
    let robust = problem("scalar_robust.json");
    let (lo, hi) = robust.degrees.expect("hierarchy block");
    let t = Instant::now();
    let sol = match hierarchy(&robust, lo, hi, &HierarchyOptions::default()) {
        Ok(s) => s,
        Err(e) => return gate.record(10, false, format!("robust sweep failed: {e}")),
    };
    let mut ok = true;
    let mut detail = vec![format!("degree {} eps {:.2e} in {:.1}s", sol.degree, sol.epsilon, t.elapsed().as_secs_f64())];
    for a in [4.5, 5.5] {
        let prob = robust.with_parameters(&[a]).expect("parameters");
        let ctrl = sol.controller(&prob).expect("controller");
        for noise in [false, true] {
            let cfg = SimConfig { noise, n_runs: 10, seed: 7, ..SimConfig::for_problem(&prob) };
            let mut reached = 0;
            let mut total = 0;
            for x0 in [-0.5, 0.5] {
                let trajs = if noise {
                    monte_carlo_runs(&prob, &ctrl, &[x0], &cfg).expect("rollouts")
                } else {
                    vec![rollout_with(&prob, &ctrl, &[x0], &cfg, &mut run_rng(cfg.seed, 0)).expect("rollout")]
                };
                total += trajs.len();
                reached += trajs.iter().filter(|t| t.exit == Exit::OriginReached).count();
            }
            ok &= reached == total;
            detail.push(format!("a={a} {}: {reached}/{total}", if noise { "noisy" } else { "noiseless" }));
        }
    }
    gate.record(10, ok, detail.join("; "));
}

fn criterion_11(gate: &mut Gate) {
    let prob = problem("scalar_deterministic.json");
    let (lo, hi) = prob.degrees.expect("hierarchy block");
    let sol = match hierarchy(&prob, lo, hi, &HierarchyOptions::default()) {
        Ok(s) => s,
        Err(e) => return gate.record(11, false, format!("deterministic sweep failed: {e}")),
    };
    let ctrl = sol.controller(&prob).expect("controller");
    let cfg = SimConfig { noise: false, ..SimConfig::for_problem(&prob) };
    let mut worst = f64::NEG_INFINITY;
    let mut ok = true;
    for x0 in [-0.75, -0.5, -0.25, 0.25, 0.5, 0.75] {
        let t = rollout(&prob, &ctrl, &[x0], &cfg).expect("rollout");
        ok &= t.exit == Exit::OriginReached;
        let v: Vec<f64> = t.states.iter().map(|x| ctrl.value(x).unwrap_or(f64::INFINITY)).collect();
        for w in v.windows(2) {
            worst = worst.max(w[1] - w[0]);
        }
    }
    let tol = cfg.dt * cfg.dt * 10.0;
    ok &= worst <= tol;
    gate.record(11, ok, format!("degree {}, largest step increase of V_u {worst:.2e} (allowed {tol:.1e} with dt {})", sol.degree, cfg.dt));
}

fn criterion_12(gate: &mut Gate, ex: &Example) {
    let cases = [
        (Corruption::ScalePsiL(1.5), vec![CheckKind::Sandwich, CheckKind::EpsilonBound]),
        (Corruption::ScalePsiL(0.5), vec![CheckKind::ValueBound]),
        (Corruption::FlipResidual, vec![CheckKind::ResidualSign, CheckKind::Sclf]),
        (Corruption::ShiftPsiL(0.1), vec![CheckKind::Normalization]),
        (Corruption::RaiseEpsilon, vec![CheckKind::EpsilonMonotone]),
    ];
    let clean = check_all(&ex.sol, &ex.prob, &ex.oracle).expect("checks run");
    let mut ok = clean.passed();
    let mut detail = vec![format!("clean {}", if clean.passed() { "passes" } else { "FAILS" })];
    for (c, kinds) in cases {
        let rep = check_all(&corrupt(&ex.sol, c), &ex.prob, &ex.oracle).expect("checks run");
        for k in kinds {
            let failed = rep.ok(k) == Some(false);
            ok &= failed;
            detail.push(format!("{c:?} -> {} {}", k.name(), if failed { "fails" } else { "MISSED" }));
        }
    }
    gate.record(12, ok, detail.join("; "));
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| !"acceptance".contains(a.as_str())) {
        return;
    }
    let mut gate = Gate { results: Vec::new() };

    criterion_9(&mut gate);

    let scalar = sweep(problem("scalar_unstable.json"), 2, 20, 2001);
    let planar = sweep(problem("planar.json"), 10, 20, 201);
    criterion_1(&mut gate, &scalar, &planar);
    let both = [("scalar", &scalar), ("planar", &planar)];
    criterion_2(&mut gate, &both);
    criteria_3_to_5(&mut gate, &both);
    criterion_6(&mut gate, &both);
    criterion_7(&mut gate, &[("scalar", &scalar, vec![-0.5]), ("planar", &planar, vec![0.5, 0.5])]);
    let ring: Vec<Vec<f64>> = (0..6)
        .map(|k| {
            let a = std::f64::consts::PI * (k as f64 / 3.0 + 1.0 / 12.0);
            vec![0.6 * a.cos(), 0.6 * a.sin()]
        })
        .collect();
    let line: Vec<Vec<f64>> = [-0.75, -0.5, -0.25, 0.25, 0.5, 0.75].iter().map(|&x| vec![x]).collect();
    criterion_8(&mut gate, &[("scalar", &scalar, line), ("planar", &planar, ring)]);
    criterion_10(&mut gate);
    criterion_11(&mut gate);
    criterion_12(&mut gate, &scalar);

    gate.results.sort_by_key(|r| r.0);
    let failed: Vec<u32> = gate.results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria pass", gate.results.len() - failed.len(), gate.results.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
