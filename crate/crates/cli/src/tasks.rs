use std::collections::BTreeMap;
use std::f64::consts::{E, PI};
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};
use vofrac::dtn::{laplace_dtn_with, PanelSchedule};
use vofrac::grid::compile_expr;
use vofrac::inverse::{laplace_dataset, unit_drives, PipelineOptions};
use vofrac::oracle::snapshot_at;
use vofrac::resolvent::{envelope_ratio, tail_envelope_constant, verify_bound_with};
use vofrac::{
    assemble_operator, build_grid, co_reference_solution, invert_all, l1_solve, sample_coefficients,
    sample_flux_series, solve_forward, solve_with_boundary, time_to_laplace_pipeline, verify_weak_solution,
    BoundaryDrive, CoefficientField, DtnOptions, EllipticOperator, FitOptions, L1Options, LaplaceDataset,
    ShiftedSolver, SolutionSnapshot, Source, WeakSolutionOptions,
};

use crate::config::{DtnDomain, ExperimentConfig, OracleKind, Task};
use crate::output::{num, write_csv, write_report};
use crate::{CliError, RunOutcome};

/// Errors that come from the configured inputs rather than the numerics.
fn setup_error(e: vofrac::Error) -> CliError {
    use vofrac::Error::*;
    match e {
        InvalidGrid(_)
        | InvalidBoundarySpec(_)
        | InvalidOrder { .. }
        | InvalidDensity { .. }
        | InvalidPotential { .. }
        | Expression(_)
        | ShapeError(_) => CliError::config(e.to_string()),
        other => CliError::Numerical(other),
    }
}

struct Problem {
    operator: EllipticOperator,
    field: CoefficientField,
}

impl Problem {
    fn new(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let p = &cfg.problem;
        let grid = build_grid(p.dimension, &p.extents, &p.cells, &cfg.subsets()?).map_err(setup_error)?;
        let field = sample_coefficients(&p.alpha.to_spec(), &p.rho.to_spec(), &p.q.to_spec(), &grid)
            .map_err(setup_error)?;
        let operator = assemble_operator(&grid, &field).map_err(setup_error)?;
        Ok(Problem { operator, field })
    }

    fn u0(&self, cfg: &ExperimentConfig) -> Result<Vec<f64>, CliError> {
        let pts = self.operator.grid().interior();
        match &cfg.problem.u0 {
            None => Ok(vec![0.0; pts.len()]),
            Some(s) => {
                let f = compile_expr(s).map_err(setup_error)?;
                Ok(pts.iter().map(|x| f(x[0], x[1])).collect())
            }
        }
    }

    fn source(&self, cfg: &ExperimentConfig) -> Result<Source, CliError> {
        match &cfg.problem.source {
            None => Ok(Source::Zero),
            Some(s) => Source::expr(s, self.operator.grid()).map_err(setup_error),
        }
    }
}

fn times(cfg: &ExperimentConfig) -> Result<&[f64], CliError> {
    if cfg.problem.times.is_empty() {
        return Err(CliError::config("problem.times is empty"));
    }
    Ok(&cfg.problem.times)
}

pub fn execute(task: Task, cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome, CliError> {
    let start = Instant::now();
    let (files, results) = match task {
        Task::Solve => solve(cfg, dir)?,
        Task::Oracle => oracle(cfg, dir)?,
        Task::Dtn => dtn(cfg, dir)?,
        Task::Invert => invert(cfg, dir)?,
        Task::VerifyResolvent => verify_resolvent(cfg, dir)?,
    };
    let name = serde_json::to_value(task)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    let report = write_report(dir, &name, cfg, json!({ "total": start.elapsed().as_secs_f64() }), results)?;
    let mut files = files;
    files.push(report);
    Ok(RunOutcome {
        out_dir: dir.to_path_buf(),
        files,
    })
}

fn solution_rows(op: &EllipticOperator, snaps: &[SolutionSnapshot]) -> Vec<Vec<String>> {
    let pts = op.grid().interior();
    snaps
        .iter()
        .flat_map(|s| {
            s.u.iter().enumerate().map(move |(i, u)| {
                vec![num(s.t), i.to_string(), num(pts[i][0]), num(pts[i][1]), num(*u)]
            })
        })
        .collect()
}

const SOLUTION_HEADER: [&str; 5] = ["t", "node", "x", "y", "u"];

fn snapshot_summary(snaps: &[SolutionSnapshot]) -> Value {
    snaps
        .iter()
        .map(|s| {
            json!({
                "t": s.t,
                "provenance": s.provenance.to_string(),
                "imag_residual": s.imag_residual,
                "l2_norm": s.u.iter().map(|x| x * x).sum::<f64>().sqrt(),
            })
        })
        .collect()
}

fn solve(cfg: &ExperimentConfig, dir: &Path) -> Result<(Vec<PathBuf>, Value), CliError> {
    let pb = Problem::new(cfg)?;
    let u0 = pb.u0(cfg)?;
    let source = pb.source(cfg)?;
    let opts = cfg.solver.contour_options();
    let snaps = solve_forward(&pb.operator, &pb.field, &u0, &source, times(cfg)?, &opts)?;
    let csv = write_csv(&dir.join("solution.csv"), &SOLUTION_HEADER, &solution_rows(&pb.operator, &snaps))?;
    let mut results = json!({ "snapshots": snapshot_summary(&snaps) });
    if !cfg.solver.weak_samples.is_empty() {
        let w = verify_weak_solution(
            &pb.operator,
            &pb.field,
            &u0,
            &source,
            &cfg.solver.weak_samples,
            &WeakSolutionOptions {
                contour: opts,
                ..WeakSolutionOptions::default()
            },
        )?;
        results["weak_solution"] = json!({
            "p": w.p_samples,
            "residuals": w.residuals,
            "max_residual": w.max_residual,
            "horizon": w.horizon,
        });
    }
    Ok((vec![csv], results))
}

fn oracle(cfg: &ExperimentConfig, dir: &Path) -> Result<(Vec<PathBuf>, Value), CliError> {
    let pb = Problem::new(cfg)?;
    let u0 = pb.u0(cfg)?;
    let ts = times(cfg)?;
    let snaps: Vec<SolutionSnapshot> = match cfg.oracle.kind {
        OracleKind::Eigen => {
            if cfg.problem.source.is_some() {
                return Err(CliError::config("the eigen oracle does not take a source"));
            }
            ts.iter()
                .map(|&t| co_reference_solution(&pb.operator, &pb.field, &u0, t))
                .collect::<Result<_, _>>()?
        }
        OracleKind::L1 => {
            let dt = cfg.oracle.dt;
            if let Some(t) = ts.iter().find(|&&t| ((t / dt).round() * dt - t).abs() > 1e-9 * t) {
                return Err(CliError::config(format!("time {t} is not a multiple of oracle.dt = {dt}")));
            }
            let t_end = *ts.last().expect("times checked non-empty");
            let opts = L1Options {
                step_cap: cfg.oracle.step_cap,
            };
            let all = l1_solve(&pb.operator, &pb.field, &u0, &pb.source(cfg)?, dt, t_end, &opts)?;
            ts.iter()
                .map(|&t| {
                    let mut s = snapshot_at(&all, t).expect("non-empty run").clone();
                    s.t = t;
                    s
                })
                .collect()
        }
    };
    let csv = write_csv(&dir.join("solution.csv"), &SOLUTION_HEADER, &solution_rows(&pb.operator, &snaps))?;
    Ok((vec![csv], json!({ "snapshots": snapshot_summary(&snaps) })))
}

const DTN_HEADER: [&str; 6] = [
    "domain_tag",
    "point_re",
    "point_im",
    "drive_id",
    "boundary_node_index",
    "flux_value",
];

fn drive_nodes(cfg: &ExperimentConfig, pb: &Problem) -> Result<Vec<usize>, CliError> {
    let s_in = pb.operator.grid().s_in();
    if cfg.dtn.drive_nodes.is_empty() {
        return Ok(s_in.to_vec());
    }
    if let Some(b) = cfg.dtn.drive_nodes.iter().find(|b| !s_in.contains(b)) {
        return Err(CliError::config(format!("dtn.drive_nodes: node {b} is not in S_in")));
    }
    Ok(cfg.dtn.drive_nodes.clone())
}

fn unit(n: usize, b: usize) -> Vec<f64> {
    let mut g = vec![0.0; n];
    g[b] = 1.0;
    g
}

fn dtn(cfg: &ExperimentConfig, dir: &Path) -> Result<(Vec<PathBuf>, Value), CliError> {
    let pb = Problem::new(cfg)?;
    let grid = pb.operator.grid();
    let nodes = drive_nodes(cfg, &pb)?;
    let stencil = cfg.dtn.stencil.to_core();
    let s_out = grid.s_out();
    let mut rows = Vec::new();
    let mut push = |tag: &str, p: Complex64, drive: usize, flux: &[f64]| {
        for (b, v) in s_out.iter().zip(flux) {
            rows.push(vec![tag.to_string(), num(p.re), num(p.im), drive.to_string(), b.to_string(), num(*v)]);
        }
    };
    let results;
    match (cfg.dtn.domain, cfg.dtn.from_time) {
        (DtnDomain::Laplace, false) => {
            if cfg.dtn.points.is_empty() {
                return Err(CliError::config("dtn.points is empty"));
            }
            let points: Vec<Complex64> = cfg
                .dtn
                .points
                .iter()
                .enumerate()
                .map(|(i, &re)| Complex64::new(re, cfg.dtn.points_imag.get(i).copied().unwrap_or(0.0)))
                .collect();
            let solver = ShiftedSolver::new(&pb.operator, &pb.field)?;
            let jobs: Vec<(Complex64, usize)> = points.iter().flat_map(|&p| nodes.iter().map(move |&b| (p, b))).collect();
            let recs = jobs
                .par_iter()
                .map(|&(p, b)| laplace_dtn_with(&solver, p, &unit(grid.n_boundary(), b), b, stencil))
                .collect::<Result<Vec<_>, _>>()?;
            for r in &recs {
                push("laplace", r.point, r.drive_id, &r.real_flux());
            }
            results = json!({ "records": recs.len(), "max_imag": recs.iter().flat_map(|r| r.flux.iter().map(|z| z.im.abs())).fold(0.0, f64::max) });
        }
        (DtnDomain::Time, _) => {
            let ts = if cfg.dtn.points.is_empty() {
                PanelSchedule::chebyshev(0.5, 2.0, 12)?.times()
            } else {
                cfg.dtn.points.clone()
            };
            let opts = DtnOptions {
                contour: cfg.solver.contour_options(),
                stencil,
            };
            let sols = nodes
                .iter()
                .map(|&b| {
                    let d = BoundaryDrive::new(b, unit(grid.n_boundary(), b), cfg.dtn.k, &pb.operator)?;
                    solve_with_boundary(&pb.operator, &pb.field, &d, &ts, &opts)
                })
                .collect::<Result<Vec<_>, _>>()?;
            for s in &sols {
                for r in &s.records {
                    push("time", r.point, r.drive_id, &r.real_flux());
                }
            }
            results = json!({ "records": sols.len() * ts.len(), "times": ts });
        }
        (DtnDomain::Laplace, true) => {
            let p_min = cfg.dtn.points.iter().copied().fold(f64::INFINITY, f64::min);
            let sched = PanelSchedule::laplace(p_min, 12)?;
            let opts = DtnOptions {
                contour: cfg.solver.contour_options(),
                stencil,
            };
            let mut series = Vec::new();
            let mut drives = Vec::new();
            for &b in &nodes {
                let d = BoundaryDrive::new(b, unit(grid.n_boundary(), b), cfg.dtn.k, &pb.operator)?;
                series.push(sample_flux_series(&pb.operator, &pb.field, &d, &sched, &opts)?);
                drives.push(d.g);
            }
            let popts = PipelineOptions {
                stencil,
                ..PipelineOptions::default()
            };
            let sets = time_to_laplace_pipeline(&series, &drives, &pb.operator, &cfg.dtn.points, &popts)?;
            for ds in &sets {
                for (b, flux) in nodes.iter().zip(&ds.flux) {
                    push("laplace", Complex64::new(ds.p, 0.0), *b, flux);
                }
            }
            results = json!({ "records": sets.len() * nodes.len(), "horizon": sched.horizon(), "time_samples": sched.len() });
        }
    }
    let csv = write_csv(&dir.join("dtn.csv"), &DTN_HEADER, &rows)?;
    Ok((vec![csv], results))
}

/// Reads Laplace-domain records back into one dataset per real `p`.
fn read_datasets(path: &Path, pb: &Problem) -> Result<Vec<LaplaceDataset>, CliError> {
    let grid = pb.operator.grid();
    let bad = |m: String| CliError::config(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header: Vec<String> = r.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_string).collect();
    if header != DTN_HEADER {
        return Err(bad(format!("unexpected columns {header:?}")));
    }
    // p bits -> drive -> node -> flux
    let mut groups: BTreeMap<u64, BTreeMap<usize, BTreeMap<usize, f64>>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let parse = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(format!("column {i}: {e}")));
        let index = |i: usize| rec[i].parse::<usize>().map_err(|e| bad(format!("column {i}: {e}")));
        if &rec[0] != "laplace" || parse(2)? != 0.0 {
            return Err(bad("only real Laplace-domain records can be inverted".into()));
        }
        let (drive, node) = (index(3)?, index(4)?);
        if drive >= grid.n_boundary() {
            return Err(bad(format!("drive {drive} is not a boundary node")));
        }
        groups
            .entry(parse(1)?.to_bits())
            .or_default()
            .entry(drive)
            .or_default()
            .insert(node, parse(5)?);
    }
    groups
        .into_iter()
        .map(|(bits, drives)| {
            let mut gs = Vec::new();
            let mut flux = Vec::new();
            for (drive, by_node) in drives {
                let row = grid
                    .s_out()
                    .iter()
                    .map(|b| by_node.get(b).copied().ok_or_else(|| bad(format!("drive {drive} lacks node {b}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                gs.push(unit(grid.n_boundary(), drive));
                flux.push(row);
            }
            LaplaceDataset::new(f64::from_bits(bits), gs, flux).map_err(|e| bad(e.to_string()))
        })
        .collect()
}

fn invert(cfg: &ExperimentConfig, dir: &Path) -> Result<(Vec<PathBuf>, Value), CliError> {
    let pb = Problem::new(cfg)?;
    let ic = &cfg.invert;
    let stencil = ic.stencil.to_core();
    let data: [LaplaceDataset; 3] = match &ic.data {
        None => {
            let drives = unit_drives(&pb.operator);
            let sets = [ic.p_small, 1.0, E]
                .iter()
                .map(|&p| laplace_dataset(&pb.operator, &pb.field, p, &drives, stencil))
                .collect::<Result<Vec<_>, _>>()?;
            sets.try_into().expect("three datasets")
        }
        Some(path) => {
            let sets = read_datasets(path, &pb)?;
            let pick = |target: f64| {
                sets.iter()
                    .find(|d| (d.p - target).abs() <= 1e-12 * target)
                    .cloned()
                    .ok_or_else(|| CliError::config(format!("{}: no records at p = {target}", path.display())))
            };
            [pick(ic.p_small)?, pick(1.0)?, pick(E)?]
        }
    };
    let opts = FitOptions {
        reg_weight: ic.reg_weight,
        max_iter: ic.max_iter,
        stencil,
        ..FitOptions::default()
    };
    let res = invert_all(&data, &pb.operator, &opts)?;
    let pts = pb.operator.grid().interior();
    let rows: Vec<Vec<String>> = (0..pts.len())
        .map(|i| {
            vec![
                i.to_string(),
                num(pts[i][0]),
                num(pts[i][1]),
                num(res.alpha[i]),
                num(res.rho[i]),
                num(res.q[i]),
            ]
        })
        .collect();
    let recovered = write_csv(&dir.join("recovered.csv"), &["node", "x", "y", "alpha", "rho", "q"], &rows)?;
    let prow: Vec<Vec<String>> = res
        .potentials
        .iter()
        .flat_map(|e| e.v_hat.iter().enumerate().map(move |(i, v)| vec![num(e.p), i.to_string(), num(*v)]))
        .collect();
    let potentials = write_csv(&dir.join("potentials.csv"), &["p", "node", "v_hat"], &prow)?;
    let errs = res.errors_against(&pb.field)?;
    let fits: Vec<Value> = res
        .potentials
        .iter()
        .map(|e| {
            json!({
                "p": e.p,
                "iterations": e.iterations,
                "residual": e.residual,
                "gradient_norm": e.gradient_norm,
                "reg_weight": e.reg_weight,
                "warning": e.warning.as_ref().map(|w| w.to_string()),
            })
        })
        .collect();
    let results = json!({
        "fits": fits,
        "q_bias_estimate": res.q_bias_estimate,
        "out_of_model_nodes": res.out_of_model_count(),
        "relative_l2_vs_problem_coefficients": { "alpha": errs.alpha, "rho": errs.rho, "q": errs.q },
    });
    Ok((vec![recovered, potentials], results))
}

fn verify_resolvent(cfg: &ExperimentConfig, dir: &Path) -> Result<(Vec<PathBuf>, Value), CliError> {
    let pb = Problem::new(cfg)?;
    let rc = &cfg.resolvent;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = (rc.r_min.ln(), rc.r_max.ln());
    let shifts: Vec<(f64, f64)> = (0..rc.samples)
        .map(|_| {
            let r = if hi > lo { rng.random_range(lo..hi).exp() } else { rc.r_min };
            let mut beta = rng.random_range(-PI..PI);
            while beta.abs() >= PI {
                beta = rng.random_range(-PI..PI);
            }
            (r, beta)
        })
        .collect();
    let solver = ShiftedSolver::new(&pb.operator, &pb.field)?;
    let reports = shifts
        .par_iter()
        .map(|&(r, b)| verify_bound_with(&solver, Complex64::from_polar(r, b)))
        .collect::<Result<Vec<_>, _>>()?;
    let c_env = tail_envelope_constant(&pb.field);
    let spread = pb.field.alpha_m - pb.field.alpha0;
    let mut worst_envelope = 0.0f64;
    let mut rows = Vec::with_capacity(reports.len());
    for (i, rep) in reports.iter().enumerate() {
        let env = rep.c / (c_env * rep.r.powf(spread).max(rep.r.powf(-spread)));
        worst_envelope = worst_envelope.max(env);
        rows.push(vec![
            i.to_string(),
            num(rep.r),
            num(rep.beta),
            num(rep.theta_star),
            num(rep.c),
            num(rep.bound),
            num(rep.estimated_norm.unwrap_or(f64::NAN)),
            u8::from(rep.satisfied == Some(true)).to_string(),
        ]);
    }
    let csv = write_csv(
        &dir.join("resolvent.csv"),
        &["sample", "r", "beta", "theta_star", "c", "bound", "estimated_norm", "satisfied"],
        &rows,
    )?;
    let sup_ratio = shifts
        .iter()
        .map(|&(r, _)| envelope_ratio(r, &pb.field))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let satisfied = reports.iter().filter(|r| r.satisfied == Some(true)).count();
    let results = json!({
        "samples": reports.len(),
        "satisfied": satisfied,
        "envelope_constant": c_env,
        "max_c_over_envelope": worst_envelope,
        "max_sup_ratio": sup_ratio,
        "near_branch_switch": reports.iter().filter(|r| r.near_branch_switch).count(),
    });
    if satisfied != reports.len() {
        return Err(CliError::Runtime(format!(
            "resolvent bound violated at {} of {} shifts (see {})",
            reports.len() - satisfied,
            reports.len(),
            csv.display()
        )));
    }
    Ok((vec![csv], results))
}
