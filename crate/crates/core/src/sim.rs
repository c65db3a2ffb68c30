//! Euler–Maruyama simulation of `dx = (f + G u) dt + B dω` under a feedback
//! law, with first-exit detection and cost accumulation.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hjb::{Controller, HjbError, HjbProblem};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("initial state {0:?} is outside the domain")]
    OutsideDomain(Vec<f64>),
    #[error("problem has uncertain parameters; fix them with HjbProblem::with_parameters first")]
    Uncertain,
    #[error("controller failed at step {step} (t = {t:.4}, x = {x:?}): {source}")]
    Controller {
        step: usize,
        t: f64,
        x: Vec<f64>,
        #[source]
        source: HjbError,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub stop_radius: f64,
    pub t_max: f64,
    pub seed: u64,
    pub n_runs: usize,
    /// Draw Brownian increments; `false` integrates the noiseless system.
    pub noise: bool,
}

impl SimConfig {
    /// Defaults for an `n`-state problem.
    pub fn for_states(n: usize) -> Self {
        SimConfig { dt: 0.005, stop_radius: if n == 1 { 0.005 } else { 0.01 }, t_max: 50.0, seed: 0, n_runs: 30, noise: true }
    }

    /// Defaults overridden by the problem file's simulation block.
    pub fn for_problem(prob: &HjbProblem) -> Self {
        let d = SimConfig::for_states(prob.n());
        let s = &prob.simulation;
        SimConfig {
            dt: s.dt.unwrap_or(d.dt),
            stop_radius: s.stop_radius.unwrap_or(d.stop_radius),
            t_max: s.t_max.unwrap_or(d.t_max),
            seed: s.seed.unwrap_or(d.seed),
            n_runs: s.runs.unwrap_or(d.n_runs),
            noise: true,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [("dt", self.dt), ("stop_radius", self.stop_radius), ("t_max", self.t_max)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exit {
    OriginReached,
    BoundaryExit,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Control applied on `[t_k, t_{k+1})`; one fewer entry than `states`.
    pub controls: Vec<Vec<f64>>,
    /// Running cost accumulated up to `t_k`, terminal cost excluded.
    pub running_cost: Vec<f64>,
    pub exit: Exit,
    /// Boundary component crossed on `BoundaryExit`.
    pub component: Option<usize>,
    pub terminal_cost: f64,
    /// Running plus terminal cost.
    pub cost: f64,
}

impl Trajectory {
    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("a trajectory holds its initial state")
    }
}

/// A state feedback law.
pub trait Policy: Sync {
    fn control(&self, x: &[f64]) -> Result<DVector<f64>, HjbError>;
}

impl Policy for Controller {
    fn control(&self, x: &[f64]) -> Result<DVector<f64>, HjbError> {
        Controller::control(self, x)
    }
}

/// `u ≡ 0` with `m` inputs.
#[derive(Clone, Copy, Debug)]
pub struct ZeroPolicy(pub usize);

impl Policy for ZeroPolicy {
    fn control(&self, _x: &[f64]) -> Result<DVector<f64>, HjbError> {
        Ok(DVector::zeros(self.0))
    }
}

/// One Euler–Maruyama step `x + (f + G u) dt + B dw`.
pub fn step(x: &[f64], u: &DVector<f64>, prob: &HjbProblem, dw: &DVector<f64>, dt: f64) -> Vec<f64> {
    let f = prob.f.eval(x).column(0).into_owned();
    let g = prob.g.eval(x);
    let b = prob.b.eval(x);
    let dx = (f + g * u) * dt + b * dw;
    x.iter().zip(dx.iter()).map(|(a, d)| a + d).collect()
}

/// Square root factor `L` with `L Lᵀ = Σ_ε`; falls back to the symmetric
/// square root when `Σ_ε` is only semidefinite.
fn noise_factor(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = sigma.clone().cholesky() {
        return c.l();
    }
    let eig = sigma.clone().symmetric_eigen();
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt) * eig.eigenvectors.transpose()
}

fn check_problem(prob: &HjbProblem, x0: &[f64], cfg: &SimConfig) -> Result<(), SimError> {
    cfg.validate()?;
    if prob.uncertainty.is_some() {
        return Err(SimError::Uncertain);
    }
    if x0.len() != prob.n() {
        return Err(SimError::Config(format!("x0 has {} entries, problem has {} states", x0.len(), prob.n())));
    }
    if !prob.domain.contains(x0, 1e-12) {
        return Err(SimError::OutsideDomain(x0.to_vec()));
    }
    Ok(())
}

/// The boundary component crossed between `prev` (inside) and `next`
/// (outside), and the fraction of the step at which it is crossed.
fn crossing(prob: &HjbProblem, prev: &[f64], next: &[f64]) -> (Option<usize>, f64) {
    let mut best: Option<(usize, f64, f64)> = None;
    for (k, h) in prob.boundary.components().iter().enumerate() {
        let (a, b) = (h.eval_f64(prev), h.eval_f64(next));
        let s = if a >= 0.0 && b < 0.0 { a / (a - b) } else { f64::INFINITY };
        if best.map_or(true, |(_, bs, bh)| s < bs || (s == bs && b.abs() < bh)) {
            best = Some((k, s, b.abs()));
        }
    }
    match best {
        Some((k, s, _)) => (Some(k), if s.is_finite() { s } else { 1.0 }),
        None => (None, 1.0),
    }
}

/// Fraction of the step `prev → next` at which the segment enters the ball
/// of radius `r` around the origin. Catches steps that jump over the ball.
fn ball_entry(prev: &[f64], next: &[f64], r: f64) -> Option<f64> {
    let d: Vec<f64> = prev.iter().zip(next).map(|(p, q)| q - p).collect();
    let a: f64 = d.iter().map(|v| v * v).sum();
    let b: f64 = 2.0 * prev.iter().zip(&d).map(|(p, v)| p * v).sum::<f64>();
    let c: f64 = prev.iter().map(|v| v * v).sum::<f64>() - r * r;
    let disc = b * b - 4.0 * a * c;
    if a == 0.0 || disc < 0.0 {
        return None;
    }
    let s = (-b - disc.sqrt()) / (2.0 * a);
    (0.0..=1.0).contains(&s).then_some(s)
}

fn lerp(a: &[f64], b: &[f64], s: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(p, q)| p + s * (q - p)).collect()
}

/// Terminal cost at the goal: `−λ ln ψ` of the nearest pinned point, or 0.
fn goal_cost(prob: &HjbProblem, x: &[f64]) -> f64 {
    let nearest = prob.boundary.point_constraints.iter().min_by(|a, b| dist(&a.point, x).total_cmp(&dist(&b.point, x)));
    match nearest {
        Some(p) if p.value > 0.0 => (-prob.lambda * p.value.ln()).max(0.0),
        _ => 0.0,
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Integrates from `x0` until a step passes through the stop ball, a step
/// leaves the domain, or `t_max` passes; the exit point is interpolated on
/// the step. `rng` supplies the Brownian increments and is
/// untouched when `cfg.noise` is off.
pub fn rollout_with<P: Policy + ?Sized, R: rand::Rng + ?Sized>(
    prob: &HjbProblem,
    policy: &P,
    x0: &[f64],
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<Trajectory, SimError> {
    check_problem(prob, x0, cfg)?;
    let l = noise_factor(&prob.sigma_eps);
    let sqrt_dt = cfg.dt.sqrt();
    let max_steps = (cfg.t_max / cfg.dt).ceil() as usize;
    let origin = vec![0.0; prob.n()];

    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut cost = 0.0;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x.clone()],
        controls: Vec::new(),
        running_cost: vec![0.0],
        exit: Exit::Timeout,
        component: None,
        terminal_cost: 0.0,
        cost: 0.0,
    };
    for k in 0..=max_steps {
        if dist(&x, &origin) <= cfg.stop_radius {
            traj.exit = Exit::OriginReached;
            traj.terminal_cost = goal_cost(prob, &x);
            break;
        }
        if k == max_steps {
            break;
        }
        let u = policy.control(&x).map_err(|source| SimError::Controller { step: k, t, x: x.clone(), source })?;
        let running = prob.q.eval_f64(&x) + 0.5 * u.dot(&(&prob.r * &u));
        let dw = if cfg.noise {
            let z = DVector::from_fn(l.ncols(), |_, _| StandardNormal.sample(rng));
            &l * z * sqrt_dt
        } else {
            DVector::zeros(l.ncols())
        };
        let next = step(&x, &u, prob, &dw, cfg.dt);
        cost += running * cfg.dt;
        t = (k + 1) as f64 * cfg.dt;
        traj.controls.push(u.iter().copied().collect());
        let goal = ball_entry(&x, &next, cfg.stop_radius);
        let exit = (!prob.domain.contains(&next, 0.0)).then(|| crossing(prob, &x, &next));
        let first_goal = match (goal, exit) {
            (Some(g), Some((_, b))) => Some(g <= b),
            (Some(_), None) => Some(true),
            (None, Some(_)) => Some(false),
            (None, None) => None,
        };
        if let Some(hit_goal) = first_goal {
            let (point, exit_kind, component) = if hit_goal {
                (lerp(&x, &next, goal.unwrap()), Exit::OriginReached, None)
            } else {
                let (c, s) = exit.unwrap();
                (lerp(&x, &next, s), Exit::BoundaryExit, c)
            };
            traj.exit = exit_kind;
            traj.component = component;
            traj.terminal_cost = match exit_kind {
                Exit::OriginReached => goal_cost(prob, &point),
                _ => component.map(|c| prob.phi[c].eval_f64(&point)).unwrap_or(0.0),
            };
            traj.times.push(t);
            traj.states.push(point);
            traj.running_cost.push(cost);
            break;
        }
        x = next;
        traj.times.push(t);
        traj.states.push(x.clone());
        traj.running_cost.push(cost);
    }
    traj.cost = cost + traj.terminal_cost;
    Ok(traj)
}

/// The generator of run `run` under master seed `seed`: ChaCha20 keyed by
/// the seed, on stream number `run`.
pub fn run_rng(seed: u64, run: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

/// Single rollout on run 0 of `cfg.seed`.
pub fn rollout<P: Policy + ?Sized>(prob: &HjbProblem, policy: &P, x0: &[f64], cfg: &SimConfig) -> Result<Trajectory, SimError> {
    rollout_with(prob, policy, x0, cfg, &mut run_rng(cfg.seed, 0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub x0: Vec<f64>,
    pub runs: usize,
    /// Mean cost over runs that did not time out.
    pub mean_cost: f64,
    pub std_error: f64,
    pub costs: Vec<f64>,
    pub exits: Vec<Exit>,
    pub timeouts: usize,
    pub v_u_x0: f64,
    /// `mean_cost ≤ V_u(x0) + std_error`.
    pub bound_satisfied: bool,
}

/// `n_runs` independent rollouts; run `i` draws from [`run_rng`]`(seed, i)`.
pub fn monte_carlo_runs<P: Policy + ?Sized>(
    prob: &HjbProblem,
    policy: &P,
    x0: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<Trajectory>, SimError> {
    if cfg.n_runs == 0 {
        return Err(SimError::Config("n_runs must be at least 1".into()));
    }
    (0..cfg.n_runs).into_par_iter().map(|i| rollout_with(prob, policy, x0, cfg, &mut run_rng(cfg.seed, i))).collect()
}

pub fn summarize(x0: &[f64], trajs: &[Trajectory], v_u_x0: f64) -> MonteCarloReport {
    let done: Vec<f64> = trajs.iter().filter(|t| t.exit != Exit::Timeout).map(|t| t.cost).collect();
    let n = done.len();
    // Summed in run order so the report is independent of scheduling.
    let mean = if n > 0 { done.iter().sum::<f64>() / n as f64 } else { f64::NAN };
    let std_error = if n > 1 {
        let var = done.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    MonteCarloReport {
        x0: x0.to_vec(),
        runs: trajs.len(),
        mean_cost: mean,
        std_error,
        costs: trajs.iter().map(|t| t.cost).collect(),
        exits: trajs.iter().map(|t| t.exit).collect(),
        timeouts: trajs.len() - n,
        v_u_x0,
        bound_satisfied: n > 0 && mean <= v_u_x0 + std_error,
    }
}

/// Expected cost under `controller` against its certified bound `V_u(x0)`.
pub fn monte_carlo(prob: &HjbProblem, controller: &Controller, x0: &[f64], cfg: &SimConfig) -> Result<MonteCarloReport, SimError> {
    let trajs = monte_carlo_runs(prob, controller, x0, cfg)?;
    let v = controller.value(x0).map_err(|source| SimError::Controller { step: 0, t: 0.0, x: x0.to_vec(), source })?;
    Ok(summarize(x0, &trajs, v))
}

pub const CSV_SCHEMA: u32 = 1;

/// Columns `t, <states>, <controls>, running_cost`; the last row carries no
/// control.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, state_names: &[String], m: usize, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend(state_names.iter().cloned());
    header.extend((0..m).map(|j| format!("u{}", j + 1)));
    header.push("running_cost".into());
    w.write_record(&header)?;
    for (k, (t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(x.iter().map(f64::to_string));
        match traj.controls.get(k) {
            Some(u) => row.extend(u.iter().map(f64::to_string)),
            None => row.extend((0..m).map(|_| String::new())),
        }
        row.push(traj.running_cost[k].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per run: `run, exit, cost, final_time`, then a summary row.
pub fn write_summary_csv<W: Write>(report: &MonteCarloReport, trajs: &[Trajectory], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run", "exit", "cost", "final_time"])?;
    for (i, t) in trajs.iter().enumerate() {
        let exit = match t.exit {
            Exit::OriginReached => "origin_reached",
            Exit::BoundaryExit => "boundary_exit",
            Exit::Timeout => "timeout",
        };
        w.write_record([i.to_string(), exit.into(), t.cost.to_string(), t.final_time().to_string()])?;
    }
    w.write_record(["mean".into(), String::new(), report.mean_cost.to_string(), String::new()])?;
    w.write_record(["std_error".into(), String::new(), report.std_error.to_string(), String::new()])?;
    w.write_record(["v_u_x0".into(), String::new(), report.v_u_x0.to_string(), String::new()])?;
    w.write_record(["bound_satisfied".into(), String::new(), report.bound_satisfied.to_string(), String::new()])?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(drift: &str, input: &str, noise: &str) -> HjbProblem {
        let json = format!(
            r#"{{
            "name": "toy", "variables": ["x"], "mode": "deterministic_clf",
            "drift": ["{drift}"], "input": [["{input}"]], "noise": [["{noise}"]],
            "sigma_eps": [[1.0]], "state_cost": "x^2", "control_penalty": [[1.0]], "lambda": 1.0,
            "domain": ["1 - x^2"],
            "boundary": {{"components": [{{"h": "x + 1", "phi": 3.0}}, {{"h": "1 - x", "phi": 7.0}}],
                         "points": [{{"point": [0.0], "phi": 0.0}}]}}
        }}"#
        );
        HjbProblem::from_json(&json).unwrap()
    }

    fn unstable() -> HjbProblem {
        HjbProblem::from_path(std::path::Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/problems/scalar_unstable.json"))).unwrap()
    }

    #[test]
    fn step_arithmetic() {
        let dt = 0.005;
        let zero = DVector::zeros(1);
        let p = scalar("0", "0", "0");
        assert_eq!(step(&[0.3], &DVector::from_element(1, 2.0), &p, &DVector::from_element(1, 1.0), dt), vec![0.3]);
        let p = scalar("-x", "1", "1");
        assert!((step(&[1.0], &zero, &p, &zero, dt)[0] - 0.995).abs() < 1e-15);
        let x = step(&[0.5], &zero, &unstable(), &zero, dt)[0];
        assert!((x - 0.509375).abs() < 1e-15, "{x}");
    }

    #[test]
    fn config_is_validated() {
        let mut c = SimConfig::for_states(1);
        assert!(c.validate().is_ok());
        c.dt = 0.0;
        assert!(c.validate().is_err());
        let mut c = SimConfig::for_states(2);
        assert_eq!(c.stop_radius, 0.01);
        c.t_max = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn start_at_origin_stops_immediately() {
        let p = unstable();
        let t = rollout(&p, &ZeroPolicy(1), &[0.0], &SimConfig::for_states(1)).unwrap();
        assert_eq!(t.exit, Exit::OriginReached);
        assert_eq!(t.cost, 0.0);
        assert_eq!(t.states.len(), 1);
    }

    #[test]
    fn uncontrolled_unstable_drift_exits_with_terminal_cost() {
        let p = unstable();
        let cfg = SimConfig { noise: false, ..SimConfig::for_states(1) };
        let t = rollout(&p, &ZeroPolicy(1), &[0.5], &cfg).unwrap();
        assert_eq!(t.exit, Exit::BoundaryExit);
        assert_eq!(t.component, Some(1));
        assert!((t.states.last().unwrap()[0] - 1.0).abs() < 1e-12);
        assert!((t.terminal_cost - 7.004267726446009).abs() < 1e-12);
        assert!(t.cost > t.terminal_cost);
        assert!(t.running_cost.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn stable_drift_reaches_origin_and_left_exit_uses_left_cost() {
        let p = scalar("-x", "1", "1");
        let cfg = SimConfig { noise: false, ..SimConfig::for_states(1) };
        let t = rollout(&p, &ZeroPolicy(1), &[0.5], &cfg).unwrap();
        assert_eq!(t.exit, Exit::OriginReached);
        // x(t) = 0.5 e^{-t} reaches 0.005 near t = ln 100.
        assert!((t.final_time() - 100f64.ln()).abs() < 0.02);
        let p = scalar("x", "1", "1");
        let t = rollout(&p, &ZeroPolicy(1), &[-0.5], &cfg).unwrap();
        assert_eq!((t.exit, t.component, t.terminal_cost), (Exit::BoundaryExit, Some(0), 3.0));
    }

    #[test]
    fn steps_jumping_over_the_goal_count_as_arrival() {
        assert!((ball_entry(&[-0.05], &[0.06], 0.005).unwrap() - 0.045 / 0.11).abs() < 1e-12);
        assert_eq!(ball_entry(&[-0.05], &[-0.01], 0.005), None);
        assert!(ball_entry(&[0.3, 0.1], &[-0.3, 0.1], 0.01).is_none());
        assert!(ball_entry(&[0.3, 0.005], &[-0.3, 0.005], 0.01).is_some());
    }

    #[test]
    fn timeout_is_reported() {
        let p = scalar("0", "1", "1");
        let cfg = SimConfig { noise: false, t_max: 0.1, ..SimConfig::for_states(1) };
        let t = rollout(&p, &ZeroPolicy(1), &[0.5], &cfg).unwrap();
        assert_eq!(t.exit, Exit::Timeout);
        assert!((t.final_time() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn deterministic_runs_have_zero_variance() {
        let p = scalar("-x", "1", "0");
        let cfg = SimConfig { n_runs: 5, seed: 9, ..SimConfig::for_states(1) };
        let trajs = monte_carlo_runs(&p, &ZeroPolicy(1), &[0.4], &cfg).unwrap();
        let r = summarize(&[0.4], &trajs, 1.0);
        assert_eq!(r.costs.len(), 5);
        assert!(r.costs.iter().all(|&c| c == r.costs[0]));
        assert_eq!(r.std_error, 0.0);
    }

    #[test]
    fn runs_are_reproducible_and_distinct() {
        let p = scalar("-x", "1", "1");
        let cfg = SimConfig { n_runs: 4, seed: 11, ..SimConfig::for_states(1) };
        let a = monte_carlo_runs(&p, &ZeroPolicy(1), &[0.4], &cfg).unwrap();
        let b = monte_carlo_runs(&p, &ZeroPolicy(1), &[0.4], &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].states, a[1].states);
        let single = rollout_with(&p, &ZeroPolicy(1), &[0.4], &cfg, &mut run_rng(11, 2)).unwrap();
        assert_eq!(single, a[2]);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let p = scalar("-x", "1", "1");
        let cfg = SimConfig::for_states(1);
        assert!(matches!(rollout(&p, &ZeroPolicy(1), &[1.5], &cfg), Err(SimError::OutsideDomain(_))));
        let cfg0 = SimConfig { n_runs: 0, ..cfg };
        assert!(monte_carlo_runs(&p, &ZeroPolicy(1), &[0.1], &cfg0).is_err());
    }

    #[test]
    fn noise_factor_reproduces_covariance() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let l = noise_factor(&s);
        assert!((&l * l.transpose() - &s).amax() < 1e-12);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = noise_factor(&s);
        assert!((&l * l.transpose() - &s).amax() < 1e-12);
    }

    #[test]
    fn csv_export() {
        let p = scalar("-x", "1", "1");
        let cfg = SimConfig { noise: false, t_max: 0.02, ..SimConfig::for_states(1) };
        let t = rollout(&p, &ZeroPolicy(1), &[0.5], &cfg).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&t, &p.state_names, 1, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x,u1,running_cost");
        assert_eq!(lines.len(), t.states.len() + 1);
        let r = summarize(&[0.5], std::slice::from_ref(&t), 1.0);
        let mut buf = Vec::new();
        write_summary_csv(&r, &[t], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("timeout"));
    }
}
