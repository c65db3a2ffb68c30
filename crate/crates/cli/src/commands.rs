use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde_json::json;
use sclf::hjb::{hierarchy, CertifiedSolution, DegreeRecord, HierarchyOptions, HjbError, HjbProblem, Mode, PartitionStatus, ProblemFile, SolutionArchive};
use sclf::sim::{self, Exit, MonteCarloReport, SimConfig, SimError, Trajectory};
use sclf::verify::{self, VerificationReport, VerifyError};

use crate::manifest::RunManifest;
use crate::plot::{LinePlot, Series};
use crate::{ModeArg, SimOptions, SimulateArgs, SolveArgs, SweepArgs, VerifyArgs, VerifyOptions};

/// A command failure and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Infeasible(String),
    Stalled(String),
    Verification(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Infeasible(_) => 2,
            Failure::Stalled(_) => 3,
            Failure::Verification(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Infeasible(m) | Failure::Stalled(m) | Failure::Verification(m) => m,
        }
    }
}

impl From<HjbError> for Failure {
    fn from(e: HjbError) -> Self {
        match e {
            HjbError::AllInfeasible { .. } => Failure::Infeasible(e.to_string()),
            HjbError::Stalled { .. } | HjbError::Sdp(_) => Failure::Stalled(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Controller { source, .. } => Failure::Input(format!("controller evaluation failed: {source}")),
            other => Failure::Input(other.to_string()),
        }
    }
}

impl From<VerifyError> for Failure {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::Hjb(h) => h.into(),
            other => Failure::Input(other.to_string()),
        }
    }
}

fn io<E: std::fmt::Display>(what: &Path) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::Input(format!("{}: {e}", what.display()))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(io(dir))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(io(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(io(path))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(io(path))
}

pub struct Solved {
    pub archive: PathBuf,
}

pub fn solve(a: &SolveArgs) -> Result<Solved, Failure> {
    let bytes = read_bytes(&a.problem)?;
    let mut file: ProblemFile = serde_json::from_slice(&bytes).map_err(|e| {
        Failure::Input(format!("{}: line {} column {}: {e}", a.problem.display(), e.line(), e.column()))
    })?;
    if let Some(m) = a.mode {
        file.mode = match m {
            ModeArg::Stabilization => Mode::Stabilization,
            ModeArg::PathPlanning => Mode::PathPlanning,
            ModeArg::DeterministicClf => Mode::DeterministicClf,
        };
    }
    let prob = HjbProblem::from_file(file).map_err(|e| Failure::Input(format!("{}: {e}", a.problem.display())))?;
    let (lo, hi) = a
        .degrees
        .or(prob.degrees)
        .ok_or_else(|| Failure::Input("no --degrees given and the problem has no hierarchy block".into()))?;

    create_dir(&a.out)?;
    let options = json!({ "degrees": [lo, hi], "mode": prob.mode });
    let mut manifest = RunManifest::new("solve", &a.problem, &bytes, options, &a.out);
    manifest.degrees = Some((lo, hi));
    manifest.write(&a.out).map_err(io(&a.out))?;

    log::info!("{}: degrees {lo}..={hi}, λ = {}", prob.name, prob.lambda);
    match hierarchy(&prob, lo, hi, &HierarchyOptions::default()) {
        Ok(sol) => {
            write_epsilon(&a.out, &sol.history)?;
            let archive = a.out.join("solution.json");
            SolutionArchive::new(&prob, &sol).write(&archive).map_err(io(&archive))?;
            print_epsilon(&prob, &sol.history);
            println!("best degree {}  epsilon {:.4e}  lambda {}", sol.degree, sol.epsilon, sol.lambda);
            for w in &sol.warnings {
                log::warn!("{w}");
            }
            Ok(Solved { archive })
        }
        Err(e) => {
            if let HjbError::AllInfeasible { history, .. } | HjbError::Stalled { history, .. } = &e {
                write_epsilon(&a.out, history)?;
                print_epsilon(&prob, history);
            }
            Err(e.into())
        }
    }
}

fn status_name(s: PartitionStatus) -> &'static str {
    match s {
        PartitionStatus::Feasible => "feasible",
        PartitionStatus::Infeasible => "infeasible",
        PartitionStatus::Stalled => "stalled",
    }
}

fn write_epsilon(dir: &Path, history: &[DegreeRecord]) -> Result<(), Failure> {
    let path = dir.join("epsilon.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut rows = || -> csv::Result<()> {
        w.write_record(["degree", "partition", "status", "epsilon", "iterations"])?;
        for rec in history {
            for p in &rec.partitions {
                let eps = p.epsilon.map(|e| format!("{e:e}")).unwrap_or_default();
                w.write_record([rec.degree.to_string(), p.partition.to_string(), status_name(p.status).into(), eps, p.iterations.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    };
    rows().map_err(io(&path))?;

    let parts = history.iter().map(|r| r.partitions.len()).max().unwrap_or(0);
    let series = (0..parts)
        .map(|k| Series {
            name: format!("partition {k}"),
            points: history
                .iter()
                .filter_map(|r| r.partitions.get(k).and_then(|p| p.epsilon).map(|e| (f64::from(r.degree), e)))
                .collect(),
            scatter: false,
        })
        .collect();
    let plot = LinePlot { title: "gap vs degree".into(), x_label: "degree".into(), y_label: "epsilon".into(), log_y: true, series };
    write_text(&dir.join("epsilon.svg"), &plot.to_svg())
}

fn print_epsilon(prob: &HjbProblem, history: &[DegreeRecord]) {
    println!("{}: gap by degree", prob.name);
    for rec in history {
        let cells: Vec<String> = rec
            .partitions
            .iter()
            .map(|p| match p.epsilon {
                Some(e) => format!("{e:>11.3e}"),
                None => format!("{:>11}", status_name(p.status)),
            })
            .collect();
        println!("  {:>3}  {}", rec.degree, cells.join("  "));
    }
}

fn load(archive: &Path) -> Result<(Vec<u8>, HjbProblem, CertifiedSolution), Failure> {
    let bytes = read_bytes(archive)?;
    let text = String::from_utf8(bytes.clone()).map_err(io(archive))?;
    let (prob, sol) = SolutionArchive::from_json(&text)
        .and_then(|a| a.restore())
        .map_err(|e| Failure::Input(format!("{}: {e}", archive.display())))?;
    Ok((bytes, prob, sol))
}

pub fn simulate(a: &SimulateArgs) -> Result<(), Failure> {
    run_simulation(&a.archive, &a.sim, &a.out)
}

fn run_simulation(archive: &Path, o: &SimOptions, out: &Path) -> Result<(), Failure> {
    let (bytes, prob, sol) = load(archive)?;
    let prob = match (&prob.uncertainty, &o.params) {
        (Some(u), p) => {
            let values = p.clone().unwrap_or_else(|| u.nominal.clone());
            prob.with_parameters(&values)?
        }
        (None, Some(_)) => return Err(Failure::Input("--params given but the problem has no uncertain parameters".into())),
        (None, None) => prob,
    };
    let mut cfg = SimConfig::for_problem(&prob);
    if let Some(r) = o.runs {
        cfg.n_runs = r as usize;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(t) = o.t_max {
        cfg.t_max = t;
    }
    // The deterministic certificate says nothing about the noisy system.
    cfg.noise = !o.noiseless && prob.mode != Mode::DeterministicClf;
    cfg.validate()?;
    let x0 = o
        .x0
        .clone()
        .or_else(|| prob.simulation.x0.clone())
        .ok_or_else(|| Failure::Input("no --x0 given and the problem has no simulation.x0".into()))?;
    if x0.len() != prob.n() {
        return Err(Failure::Input(format!("x0 has {} entries, problem has {} states", x0.len(), prob.n())));
    }
    if !prob.domain.contains(&x0, 1e-12) {
        return Err(Failure::Input(format!("x0 = {x0:?} is outside the domain")));
    }

    let controller = sol.controller(&prob)?;
    let trajs = sim::monte_carlo_runs(&prob, &controller, &x0, &cfg)?;
    let v = controller.value(&x0)?;
    let report = sim::summarize(&x0, &trajs, v);

    create_dir(out)?;
    let options = json!({
        "x0": x0, "runs": cfg.n_runs, "seed": cfg.seed, "dt": cfg.dt, "stop_radius": cfg.stop_radius,
        "t_max": cfg.t_max, "noise": cfg.noise, "params": o.params,
    });
    let mut manifest = RunManifest::new("simulate", archive, &bytes, options, out);
    manifest.degrees = Some((sol.degree, sol.degree));
    manifest.seeds = vec![cfg.seed];
    manifest.write(out).map_err(io(out))?;

    let tdir = out.join("trajectories");
    create_dir(&tdir)?;
    for (i, t) in trajs.iter().enumerate() {
        let path = tdir.join(format!("run_{i:03}.csv"));
        sim::write_trajectory_csv(t, &prob.state_names, prob.m(), create(&path)?).map_err(io(&path))?;
    }
    let path = out.join("summary.csv");
    sim::write_summary_csv(&report, &trajs, create(&path)?).map_err(io(&path))?;
    let path = out.join("summary.json");
    write_text(&path, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    write_text(&out.join("trajectories.svg"), &trajectory_plot(&prob, &trajs).to_svg())?;

    print_summary(&report);
    if !report.bound_satisfied {
        log::warn!("mean cost exceeds V_u(x0) by more than one standard error");
    }
    Ok(())
}

const PLOTTED_RUNS: usize = 8;

fn trajectory_plot(prob: &HjbProblem, trajs: &[Trajectory]) -> LinePlot {
    let phase = prob.n() == 2;
    let series = trajs
        .iter()
        .take(PLOTTED_RUNS)
        .enumerate()
        .map(|(i, t)| Series {
            name: format!("run {i}"),
            points: t
                .times
                .iter()
                .zip(&t.states)
                .map(|(&s, x)| if phase { (x[0], x[1]) } else if prob.n() == 1 { (s, x[0]) } else { (s, x.iter().map(|v| v * v).sum::<f64>().sqrt()) })
                .collect(),
            scatter: false,
        })
        .collect();
    let names = &prob.state_names;
    let (x_label, y_label) = match prob.n() {
        1 => ("t".to_string(), names[0].clone()),
        2 => (names[0].clone(), names[1].clone()),
        _ => ("t".to_string(), "|x|".to_string()),
    };
    LinePlot { title: format!("{} closed loop", prob.name), x_label, y_label, log_y: false, series }
}

fn print_summary(r: &MonteCarloReport) {
    let count = |e: Exit| r.exits.iter().filter(|x| **x == e).count();
    println!(
        "x0 {:?}  runs {}  origin {}  boundary {}  timeout {}",
        r.x0,
        r.runs,
        count(Exit::OriginReached),
        count(Exit::BoundaryExit),
        r.timeouts
    );
    println!(
        "mean cost {:.6}  std error {:.6}  V_u(x0) {:.6}  bound_satisfied {}",
        r.mean_cost, r.std_error, r.v_u_x0, r.bound_satisfied
    );
}

/// Nodes per axis for the sampled-only checks: about 2·10⁴ points in all.
fn sampled_per_axis(n: usize) -> usize {
    ((2e4f64).powf(1.0 / n as f64).floor() as usize).max(3)
}

pub fn verify(a: &VerifyArgs) -> Result<(), Failure> {
    run_verification(&a.archive, &a.verify, &a.out)
}

fn run_verification(archive: &Path, o: &VerifyOptions, out: &Path) -> Result<(), Failure> {
    let (bytes, prob, sol) = load(archive)?;
    let n = prob.n();
    create_dir(out)?;
    let report: VerificationReport = if n <= 2 {
        let per_axis = o.resolution.unwrap_or(if n == 1 { 2001 } else { 201 });
        let nominal = match &prob.uncertainty {
            Some(u) => prob.with_parameters(&u.nominal)?,
            None => prob.clone(),
        };
        let grid = verify::solve_pde_fd(&nominal, per_axis)?;
        let path = out.join("oracle.csv");
        grid.write_csv(&prob.state_names, create(&path)?).map_err(io(&path))?;
        verify::check_all(&sol, &prob, &grid)?
    } else {
        let per_axis = o.resolution.unwrap_or_else(|| sampled_per_axis(n));
        eprintln!("SAMPLED-ONLY MODE: {n} states is beyond the finite-difference oracle; oracle comparisons are skipped");
        verify::check_sampled(&sol, &prob, per_axis)?
    };
    let options = json!({ "resolution": o.resolution, "sampled_only": report.sampled_only });
    let mut manifest = RunManifest::new("verify", archive, &bytes, options, out);
    manifest.degrees = Some((sol.degree, sol.degree));
    manifest.write(out).map_err(io(out))?;
    write_text(&out.join("report.json"), &report.to_json())?;
    write_text(&out.join("report.txt"), &report.to_string())?;
    print!("{report}");

    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().iter().map(|c| c.kind.name()).collect();
        Err(Failure::Verification(format!("failed checks: {}", names.join(", "))))
    }
}

pub fn sweep(a: &SweepArgs) -> Result<(), Failure> {
    create_dir(&a.out)?;
    let solve_args = SolveArgs { problem: a.problem.clone(), degrees: a.degrees, mode: a.mode, out: a.out.join("solve") };
    let solved = solve(&solve_args)?;
    run_simulation(&solved.archive, &a.sim, &a.out.join("simulate"))?;
    run_verification(&solved.archive, &a.verify, &a.out.join("verify"))?;
    let bytes = read_bytes(&a.problem)?;
    let options = json!({ "degrees": a.degrees, "mode": a.mode.map(|m| format!("{m:?}")), "steps": ["solve", "simulate", "verify"] });
    let mut manifest = RunManifest::new("sweep", &a.problem, &bytes, options, &a.out);
    manifest.degrees = a.degrees;
    manifest.write(&a.out).map_err(io(&a.out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let h = HjbError::AllInfeasible { min: 2, max: 4, history: vec![] };
        assert_eq!(Failure::from(h).code(), 2);
        let s = HjbError::Stalled { degree: 6, history: vec![] };
        let f = Failure::from(s);
        assert_eq!(f.code(), 3);
        assert!(f.message().contains('6'));
        assert_eq!(Failure::from(HjbError::Input("x".into())).code(), 1);
        assert_eq!(Failure::from(VerifyError::Dimension(3)).code(), 1);
    }

    #[test]
    fn sampled_grid_size() {
        assert_eq!(sampled_per_axis(3), 27);
        assert_eq!(sampled_per_axis(4), 11);
        assert!(sampled_per_axis(20) >= 3);
    }
}
