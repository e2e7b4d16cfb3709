//! Boundary-driven solves, normal fluxes and Dirichlet-to-Neumann maps in
//! the time and Laplace domains.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use rayon::prelude::*;
use statrs::function::gamma::gamma;

use crate::contour::{solve_forward, ContourOptions, PowerTerm, SolutionSnapshot, Source};
use crate::error::{Error, Result};
use crate::grid::{lift_boundary, BoundaryLift, CoefficientField, EllipticOperator, NodeRef, SpatialGrid};
use crate::linalg::{norm2_c, to_complex};
use crate::quadrature::{chebyshev_nodes, ChebyshevInterpolant, GaussRule};
use crate::resolvent::ShiftedSolver;

/// One-sided difference used for `∂_ν u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FluxStencil {
    /// `(3u_b - 4u_1 + u_2) / 2h`.
    #[default]
    SecondOrder,
    /// `(u_b - u_1) / h`; makes the discrete Laplace-domain map symmetric.
    FirstOrder,
}

/// Outward normal derivative at the boundary nodes in `subset`, from the
/// interior values and the boundary trace.
pub fn normal_flux<T>(
    grid: &SpatialGrid,
    interior: &[T],
    boundary: &[T],
    subset: &[usize],
    stencil: FluxStencil,
) -> Result<Vec<T>>
where
    T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
{
    if interior.len() != grid.n_interior() || boundary.len() != grid.n_boundary() {
        return Err(Error::ShapeError(format!(
            "field has {} interior and {} boundary values, grid has {} and {}",
            interior.len(),
            boundary.len(),
            grid.n_interior(),
            grid.n_boundary()
        )));
    }
    let value = |r: NodeRef| match r {
        NodeRef::Interior(k) => interior[k],
        NodeRef::Boundary(b) => boundary[b],
    };
    subset
        .iter()
        .map(|&b| {
            if b >= grid.n_boundary() {
                return Err(Error::DomainError(format!(
                    "node {b} is not a boundary node (grid has {})",
                    grid.n_boundary()
                )));
            }
            let h = grid.normal_spacing(b);
            let ub = boundary[b];
            match (grid.inward_neighbors(b), stencil) {
                ([Some(n1), Some(n2)], FluxStencil::SecondOrder) => {
                    Ok((ub * 3.0 - value(n1) * 4.0 + value(n2)) * (0.5 / h))
                }
                ([Some(n1), _], _) => Ok((ub - value(n1)) * (1.0 / h)),
                _ => Err(Error::DomainError(format!("boundary node {b} has no inward neighbour"))),
            }
        })
        .collect()
}

/// Boundary data `t^k g` for the time-domain problem.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryDrive {
    pub id: usize,
    pub g: Vec<f64>,
    pub k: u32,
    pub lift: BoundaryLift,
}

impl BoundaryDrive {
    pub fn new(id: usize, g: Vec<f64>, k: u32, operator: &EllipticOperator) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidDrive(format!("time exponent k = {k} must be at least 2")));
        }
        check_support(&g, operator.grid())?;
        let lift = lift_boundary(&g, operator.grid(), operator)?;
        Ok(BoundaryDrive { id, g, k, lift })
    }

    /// The drive equal to 1 at boundary node `b` and 0 elsewhere.
    pub fn unit(id: usize, b: usize, k: u32, operator: &EllipticOperator) -> Result<Self> {
        let mut g = vec![0.0; operator.grid().n_boundary()];
        if b >= g.len() {
            return Err(Error::InvalidDrive(format!("boundary node {b} out of range")));
        }
        g[b] = 1.0;
        BoundaryDrive::new(id, g, k, operator)
    }

    /// `k!`.
    pub fn k_factorial(&self) -> f64 {
        (1..=self.k).map(f64::from).product()
    }
}

fn check_support(g: &[f64], grid: &SpatialGrid) -> Result<()> {
    if g.len() != grid.n_boundary() {
        return Err(Error::ShapeError(format!(
            "boundary data has {} values, grid has {} boundary nodes",
            g.len(),
            grid.n_boundary()
        )));
    }
    let s_in = grid.s_in();
    if let Some(b) = (0..g.len()).find(|b| g[*b] != 0.0 && s_in.binary_search(b).is_err()) {
        return Err(Error::InvalidDrive(format!("g is nonzero at node {b}, outside S_in")));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidDrive("g has non-finite values".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainTag {
    Time,
    Laplace,
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainTag::Time => "time",
            DomainTag::Laplace => "laplace",
        })
    }
}

/// Normal flux on `S_out` for one drive at one time or Laplace variable.
/// Time-domain records store `t` as the real part of `point`.
#[derive(Debug, Clone, PartialEq)]
pub struct DtNRecord {
    pub domain: DomainTag,
    pub point: Complex64,
    pub drive_id: usize,
    /// Boundary node indices, equal to `S_out`.
    pub nodes: Vec<usize>,
    pub flux: Vec<Complex64>,
}

impl DtNRecord {
    pub fn real_flux(&self) -> Vec<f64> {
        self.flux.iter().map(|z| z.re).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DtnOptions {
    pub contour: ContourOptions,
    pub stencil: FluxStencil,
}

#[derive(Debug, Clone)]
pub struct BoundarySolution {
    /// Interior values of `u = t^k G + v`.
    pub snapshots: Vec<SolutionSnapshot>,
    pub records: Vec<DtNRecord>,
}

/// Source for `v = u - t^k G`:
/// `f = -ρ k!/Γ(k+1-α) t^{k-α} G - t^k q G`.
pub fn lifted_source(field: &CoefficientField, drive: &BoundaryDrive) -> Result<Source> {
    let g = &drive.lift.interior;
    if g.len() != field.len() {
        return Err(Error::ShapeError("drive lifting and field sizes differ".into()));
    }
    let k = f64::from(drive.k);
    let kf = drive.k_factorial();
    let caputo: Vec<f64> = (0..g.len())
        .map(|i| -field.rho[i] * kf / gamma(k + 1.0 - field.alpha[i]) * g[i])
        .collect();
    let exps: Vec<f64> = field.alpha.iter().map(|a| k - a).collect();
    let potential: Vec<f64> = (0..g.len()).map(|i| -field.q[i] * g[i]).collect();
    Ok(Source::PowerLaw(vec![
        PowerTerm::new(caputo, exps)?,
        PowerTerm::uniform(potential, k)?,
    ]))
}

/// Full field `t^k G + v` and its flux on `S_out`.
pub fn assemble_boundary_field(
    grid: &SpatialGrid,
    drive: &BoundaryDrive,
    v: &SolutionSnapshot,
    stencil: FluxStencil,
) -> Result<(SolutionSnapshot, DtNRecord)> {
    let tk = v.t.powi(drive.k as i32);
    let u: Vec<f64> = v.u.iter().zip(&drive.lift.interior).map(|(a, g)| a + tk * g).collect();
    let trace: Vec<f64> = drive.g.iter().map(|g| tk * g).collect();
    let flux = normal_flux(grid, &u, &trace, grid.s_out(), stencil)?;
    let record = DtNRecord {
        domain: DomainTag::Time,
        point: Complex64::new(v.t, 0.0),
        drive_id: drive.id,
        nodes: grid.s_out().to_vec(),
        flux: to_complex(&flux),
    };
    let snap = SolutionSnapshot {
        t: v.t,
        u,
        imag_residual: v.imag_residual,
        provenance: v.provenance,
    };
    Ok((snap, record))
}

/// Solves `(ρ ∂_t^α + A_q) u = 0`, `u(0) = 0`, `u = t^k g` on the boundary.
pub fn solve_with_boundary(
    operator: &EllipticOperator,
    field: &CoefficientField,
    drive: &BoundaryDrive,
    times: &[f64],
    options: &DtnOptions,
) -> Result<BoundarySolution> {
    if drive.k < 2 {
        return Err(Error::InvalidDrive(format!("time exponent k = {} must be at least 2", drive.k)));
    }
    let grid = operator.grid();
    if drive.g.len() != grid.n_boundary() {
        return Err(Error::ShapeError("drive does not match the grid".into()));
    }
    let source = lifted_source(field, drive)?;
    let v = solve_forward(operator, field, &vec![0.0; operator.n()], &source, times, &options.contour)?;
    let mut snapshots = Vec::with_capacity(v.len());
    let mut records = Vec::with_capacity(v.len());
    for snap in &v {
        let (s, r) = assemble_boundary_field(grid, drive, snap, options.stencil)?;
        snapshots.push(s);
        records.push(r);
    }
    Ok(BoundarySolution { snapshots, records })
}

/// Where the right-hand side of a Laplace-domain solve came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaplaceRhs {
    /// `F(p) + ρ p^{α-1} u0`.
    InitialAndSource,
    /// `C g`, the coupling to Dirichlet data.
    Boundary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceField {
    pub p: Complex64,
    pub v: Vec<Complex64>,
    pub rhs: LaplaceRhs,
    /// `‖(A_q + ρp^α)V - rhs‖ / ‖rhs‖`.
    pub residual: f64,
}

fn relative_residual(solver: &ShiftedSolver<'_>, p: Complex64, v: &[Complex64], rhs: &[Complex64]) -> f64 {
    let op = solver.operator();
    let r: Vec<Complex64> = op
        .apply_shifted(&solver.shift_diagonal(p), v)
        .iter()
        .zip(rhs)
        .map(|(a, b)| a - b)
        .collect();
    let scale = norm2_c(rhs);
    if scale == 0.0 {
        norm2_c(&r)
    } else {
        norm2_c(&r) / scale
    }
}

/// `V(p) = (A_q + ρp^α)⁻¹ (F(p) + ρ p^{α-1} u0)` given `F(p)`.
pub fn laplace_field(
    solver: &ShiftedSolver<'_>,
    u0: &[f64],
    source_transform: &[Complex64],
    p: Complex64,
) -> Result<LaplaceField> {
    let field = solver.field();
    if u0.len() != solver.n() || source_transform.len() != solver.n() {
        return Err(Error::ShapeError("u0 or F(p) does not match the operator".into()));
    }
    let lp = p.ln();
    let rhs: Vec<Complex64> = (0..u0.len())
        .map(|i| source_transform[i] + (lp * (field.alpha[i] - 1.0)).exp() * (field.rho[i] * u0[i]))
        .collect();
    let v = solver.solve(p, &rhs)?;
    let residual = relative_residual(solver, p, &v, &rhs);
    Ok(LaplaceField {
        p,
        v,
        rhs: LaplaceRhs::InitialAndSource,
        residual,
    })
}

/// Flux on `S_out` of `W` solving `(A_q + ρp^α) W = 0` with `W = g` on the
/// boundary.
pub fn laplace_dtn(
    operator: &EllipticOperator,
    field: &CoefficientField,
    p: Complex64,
    g: &[f64],
    drive_id: usize,
    stencil: FluxStencil,
) -> Result<DtNRecord> {
    let solver = ShiftedSolver::new(operator, field)?;
    laplace_dtn_with(&solver, p, g, drive_id, stencil)
}

/// [`laplace_dtn`] reusing a solver, e.g. across many drives at one `p`.
pub fn laplace_dtn_with(
    solver: &ShiftedSolver<'_>,
    p: Complex64,
    g: &[f64],
    drive_id: usize,
    stencil: FluxStencil,
) -> Result<DtNRecord> {
    let grid = solver.operator().grid();
    check_support(g, grid)?;
    let w = solver.solve(p, &to_complex(&solver.operator().boundary_rhs(g)))?;
    let trace = to_complex(g);
    let flux = normal_flux(grid, &w, &trace, grid.s_out(), stencil)?;
    Ok(DtNRecord {
        domain: DomainTag::Laplace,
        point: p,
        drive_id,
        nodes: grid.s_out().to_vec(),
        flux,
    })
}

/// Time panels, each sampled at Chebyshev points of the first kind.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSchedule {
    pub panels: Vec<[f64; 2]>,
    pub nodes_per_panel: usize,
}

/// Gauss points per panel used when transforming sampled series.
const TRANSFORM_NODES: usize = 24;

impl PanelSchedule {
    /// A single panel: the default accumulation-point schedule is
    /// `chebyshev(0.5, 2.0, 12)`.
    pub fn chebyshev(a: f64, b: f64, n: usize) -> Result<Self> {
        PanelSchedule::from_breaks(&[a, b], n)
    }

    pub fn from_breaks(breaks: &[f64], nodes_per_panel: usize) -> Result<Self> {
        if breaks.len() < 2 || breaks.windows(2).any(|w| !(w[1] > w[0])) || !(breaks[0] >= 0.0) {
            return Err(Error::DomainError("panel breaks must be non-negative and increasing".into()));
        }
        if nodes_per_panel < 2 {
            return Err(Error::DomainError("need at least 2 nodes per panel".into()));
        }
        Ok(PanelSchedule {
            panels: breaks.windows(2).map(|w| [w[0], w[1]]).collect(),
            nodes_per_panel,
        })
    }

    /// Covers `[0, T_hor]`, `T_hor = max(40/p_min, 20)`: geometric panels
    /// (ratio 4) from `1e-6` up to 1, doubling panels up to width 4, then
    /// width-4 panels.
    pub fn laplace(p_min: f64, nodes_per_panel: usize) -> Result<Self> {
        if !(p_min > 0.0 && p_min.is_finite()) {
            return Err(Error::DomainError(format!("p_min = {p_min} must be positive")));
        }
        let horizon = (40.0 / p_min).max(20.0);
        let mut breaks = vec![0.0];
        let mut b = 1e-6;
        while b < 1.0 {
            breaks.push(b);
            b *= 4.0;
        }
        let mut b = 1.0;
        while b < horizon {
            breaks.push(b);
            b += b.min(4.0);
        }
        breaks.push(horizon);
        PanelSchedule::from_breaks(&breaks, nodes_per_panel)
    }

    pub fn horizon(&self) -> f64 {
        self.panels.last().map_or(0.0, |p| p[1])
    }

    /// All sample times, panel by panel, increasing.
    pub fn times(&self) -> Vec<f64> {
        self.panels
            .iter()
            .flat_map(|&[a, b]| chebyshev_nodes(a, b, self.nodes_per_panel))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.panels.len() * self.nodes_per_panel
    }

    pub fn is_empty(&self) -> bool {
        self.panels.is_empty()
    }

    /// Gauss nodes and weights `(t, w)` on every panel, `w` without the
    /// exponential factor.
    pub fn gauss(&self, nodes: usize) -> Vec<(f64, f64)> {
        let rule = GaussRule::new(nodes);
        self.panels.iter().flat_map(|&[a, b]| rule.on(a, b).collect::<Vec<_>>()).collect()
    }

    fn panel_of(&self, t: f64) -> Option<usize> {
        let k = self.panels.partition_point(|p| p[1] < t);
        (k < self.panels.len() && t >= self.panels[k][0]).then_some(k)
    }
}

/// Time-domain flux on `S_out` for one drive, sampled on a panel schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxSeries {
    pub drive_id: usize,
    pub k: u32,
    pub schedule: PanelSchedule,
    pub nodes: Vec<usize>,
    /// `values[m][j]`: flux at `schedule.times()[m]`, node `nodes[j]`.
    pub values: Vec<Vec<f64>>,
}

impl FluxSeries {
    pub fn new(drive_id: usize, k: u32, schedule: PanelSchedule, nodes: Vec<usize>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != schedule.len() || values.iter().any(|v| v.len() != nodes.len()) {
            return Err(Error::ShapeError(format!(
                "flux series needs {} rows of {} values",
                schedule.len(),
                nodes.len()
            )));
        }
        Ok(FluxSeries {
            drive_id,
            k,
            schedule,
            nodes,
            values,
        })
    }

    pub fn from_records(k: u32, schedule: PanelSchedule, records: &[DtNRecord]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::ShapeError("no flux records".into()))?;
        let values = records.iter().map(DtNRecord::real_flux).collect();
        FluxSeries::new(first.drive_id, k, schedule, first.nodes.clone(), values)
    }

    /// Flux at time `t` from the Chebyshev interpolant of its panel.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let k = self
            .schedule
            .panel_of(t)
            .ok_or_else(|| Error::DomainError(format!("t = {t} outside the sampled range")))?;
        let [a, b] = self.schedule.panels[k];
        let m = self.schedule.nodes_per_panel;
        let interp = ChebyshevInterpolant::new(a, b, m);
        let rows = &self.values[k * m..(k + 1) * m];
        Ok((0..self.nodes.len())
            .map(|j| {
                let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                interp.eval(&col, t)
            })
            .collect())
    }
}

/// Samples `∂_ν u` for one drive on a schedule.
pub fn sample_flux_series(
    operator: &EllipticOperator,
    field: &CoefficientField,
    drive: &BoundaryDrive,
    schedule: &PanelSchedule,
    options: &DtnOptions,
) -> Result<FluxSeries> {
    let times = schedule.times();
    if times.first().is_some_and(|&t| t <= 0.0) {
        return Err(Error::DomainError("schedule must start after t = 0".into()));
    }
    let sol = solve_with_boundary(operator, field, drive, &times, options)?;
    FluxSeries::from_records(drive.k, schedule.clone(), &sol.records)
}

/// `e^{-pT} |f(T)| / p / (1 - γ/(pT))` for a tail growing like `t^γ`;
/// infinite when `pT ≤ γ`.
fn tail_estimate(p: f64, horizon: f64, end_value: f64, growth: f64) -> f64 {
    let pt = p * horizon;
    if pt <= growth {
        return f64::INFINITY;
    }
    end_value * (-pt).exp() / p / (1.0 - growth.max(0.0) / pt)
}

/// Default relative tolerance for the neglected tail `∫_{T_hor}^∞`.
pub const HORIZON_TOL: f64 = 1e-8;

/// `(p^{k+1}/k!) ∫₀^{T_hor} e^{-pt} flux(t) dt`, with the flux interpolated
/// panelwise and integrated by Gauss quadrature.
pub fn laplace_from_time(series: &FluxSeries, p: f64, tol: f64) -> Result<DtNRecord> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::DomainError(format!("p = {p} must be real and positive")));
    }
    let sched = &series.schedule;
    let m = sched.nodes_per_panel;
    let rule = GaussRule::new(TRANSFORM_NODES);
    let nj = series.nodes.len();
    let mut acc = vec![0.0; nj];
    for (k, &[a, b]) in sched.panels.iter().enumerate() {
        let interp = ChebyshevInterpolant::new(a, b, m);
        let rows = &series.values[k * m..(k + 1) * m];
        for j in 0..nj {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            acc[j] += rule
                .on(a, b)
                .map(|(t, w)| w * (-p * t).exp() * interp.eval(&col, t))
                .sum::<f64>();
        }
    }
    let k = f64::from(series.k);
    let kf: f64 = (1..=series.k).map(f64::from).product();
    let scale = p.powf(k + 1.0) / kf;
    let out: Vec<f64> = acc.iter().map(|v| v * scale).collect();

    let end = series.values.last().map_or(0.0, |r| r.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    let estimate = scale * tail_estimate(p, sched.horizon(), end, k);
    let size = out.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(estimate <= tol * size) && estimate > 0.0 {
        return Err(Error::HorizonError {
            estimate,
            tol: tol * size,
        });
    }
    Ok(DtNRecord {
        domain: DomainTag::Laplace,
        point: Complex64::new(p, 0.0),
        drive_id: series.drive_id,
        nodes: series.nodes.clone(),
        flux: to_complex(&out),
    })
}

/// Comparison of the numerical transform of `u` with the resolvent
/// expression, per Laplace sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakSolutionReport {
    pub p_samples: Vec<f64>,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakSolutionOptions {
    pub contour: ContourOptions,
    pub gauss_nodes: usize,
    pub horizon_tol: f64,
}

impl Default for WeakSolutionOptions {
    fn default() -> Self {
        WeakSolutionOptions {
            contour: ContourOptions::default(),
            gauss_nodes: 16,
            horizon_tol: HORIZON_TOL,
        }
    }
}

/// Transforms the contour solution numerically on `[0, T_hor]` and compares
/// it with `(A_q + ρp^α)⁻¹(F(p) + ρ p^{α-1} u0)`.
pub fn verify_weak_solution(
    operator: &EllipticOperator,
    field: &CoefficientField,
    u0: &[f64],
    source: &Source,
    p_samples: &[f64],
    options: &WeakSolutionOptions,
) -> Result<WeakSolutionReport> {
    let n = operator.n();
    if u0.len() != n {
        return Err(Error::ShapeError("u0 does not match the operator".into()));
    }
    if p_samples.is_empty() || p_samples.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(Error::DomainError("Laplace samples must be positive".into()));
    }
    let p_min = p_samples.iter().copied().fold(f64::INFINITY, f64::min);
    let sched = PanelSchedule::laplace(p_min, 2)?;
    let horizon = sched.horizon();
    let nodes = sched.gauss(options.gauss_nodes);
    let times: Vec<f64> = nodes.iter().map(|x| x.0).collect();
    let snaps = solve_forward(operator, field, u0, source, &times, &options.contour)?;
    let f_at: Vec<Vec<f64>> = times.iter().map(|&t| source.eval(t, n)).collect::<Result<_>>()?;

    let norm = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let u_end = norm(&snaps.last().expect("non-empty schedule").u);
    let u_mid = norm(&snaps[snaps.len() / 2].u);
    let growth = if u_mid > 0.0 && u_end > u_mid {
        (u_end / u_mid).ln() / (horizon / times[times.len() / 2]).ln()
    } else {
        0.0
    };

    let solver = ShiftedSolver::new(operator, field)?;
    let residuals = p_samples
        .par_iter()
        .map(|&p| {
            let mut lu = vec![0.0; n];
            let mut lf = vec![0.0; n];
            for ((&(t, w), s), f) in nodes.iter().zip(&snaps).zip(&f_at) {
                let c = w * (-p * t).exp();
                for i in 0..n {
                    lu[i] += c * s.u[i];
                    lf[i] += c * f[i];
                }
            }
            let pc = Complex64::new(p, 0.0);
            let fp = source.laplace(pc, n).unwrap_or_else(|| to_complex(&lf));
            let rhs = laplace_field(&solver, u0, &fp, pc)?;
            let exact: Vec<f64> = rhs.v.iter().map(|z| z.re).collect();
            let scale = exact.iter().map(|x| x * x).sum::<f64>().sqrt();
            let diff = lu.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let tail = tail_estimate(p, horizon, u_end, growth);
            if scale > 0.0 && tail > options.horizon_tol * scale {
                return Err(Error::HorizonError {
                    estimate: tail,
                    tol: options.horizon_tol * scale,
                });
            }
            Ok(if scale == 0.0 { diff } else { diff / scale })
        })
        .collect::<Result<Vec<f64>>>()?;
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    Ok(WeakSolutionReport {
        p_samples: p_samples.to_vec(),
        residuals,
        max_residual,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{assemble_operator, build_grid, sample_coefficients, BoundarySubset, BoundarySubsetSpec, CoefficientSpec};
    use crate::linalg::rel_l2;
    use crate::oracle::{l1_solve, snapshot_at, L1Options};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn setup(dim: usize, n: usize, alpha: &str, rho: &str, q: &str) -> (EllipticOperator, CoefficientField) {
        let (ext, cells) = if dim == 1 {
            (vec![[0.0, 1.0]], vec![n])
        } else {
            (vec![[0.0, 1.0], [0.0, 1.0]], vec![n, n])
        };
        let g = build_grid(dim, &ext, &cells, &BoundarySubsetSpec::default()).unwrap();
        let f = sample_coefficients(
            &CoefficientSpec::expr(alpha),
            &CoefficientSpec::expr(rho),
            &CoefficientSpec::expr(q),
            &g,
        )
        .unwrap();
        (assemble_operator(&g, &f).unwrap(), f)
    }

    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0, |a, x| a.max(x.abs()))
    }

    #[test]
    fn flux_of_linear_and_constant_fields() {
        let g = build_grid(1, &[[0.0, 1.0]], &[10], &BoundarySubsetSpec::default()).unwrap();
        let x: Vec<f64> = g.interior().iter().map(|p| p[0]).collect();
        let fl = normal_flux(&g, &x, &[0.0, 1.0], &[0, 1], FluxStencil::SecondOrder).unwrap();
        assert_abs_diff_eq!(fl[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fl[1], 1.0, epsilon = 1e-12);
        let c = normal_flux(&g, &vec![2.5; 9], &[2.5, 2.5], &[0, 1], FluxStencil::SecondOrder).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-12));
        assert!(matches!(
            normal_flux(&g, &x, &[0.0, 1.0], &[2], FluxStencil::SecondOrder),
            Err(Error::DomainError(_))
        ));
    }

    #[test]
    fn flux_of_quadratic_on_square_right_edge() {
        for n in [8, 16] {
            let g = build_grid(2, &[[0.0, 1.0], [0.0, 1.0]], &[n, n], &BoundarySubsetSpec::default()).unwrap();
            let u: Vec<f64> = g.interior().iter().map(|p| p[0] * p[0]).collect();
            let tr: Vec<f64> = g.boundary().iter().map(|b| b.coord[0] * b.coord[0]).collect();
            let right: Vec<usize> = (0..g.n_boundary())
                .filter(|&b| g.boundary()[b].normal == [1.0, 0.0] && !g.boundary()[b].corner)
                .collect();
            // the second-order stencil is exact on quadratics
            for v in normal_flux(&g, &u, &tr, &right, FluxStencil::SecondOrder).unwrap() {
                assert_abs_diff_eq!(v, 2.0, epsilon = 1e-10);
            }
            let h = 1.0 / n as f64;
            for v in normal_flux(&g, &u, &tr, &right, FluxStencil::FirstOrder).unwrap() {
                assert_abs_diff_eq!(v, 2.0 - h, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn drive_validation() {
        let (op, _) = setup(1, 8, "0.5", "1", "0");
        assert!(matches!(BoundaryDrive::new(0, vec![0.0, 1.0], 1, &op), Err(Error::InvalidDrive(_))));
        let g = build_grid(
            1,
            &[[0.0, 1.0]],
            &[8],
            &BoundarySubsetSpec {
                s_in: BoundarySubset::Nodes(vec![1]),
                s_out: BoundarySubset::Full,
            },
        )
        .unwrap();
        let f = CoefficientField::new(vec![0.5; 7], vec![1.0; 7], vec![0.0; 7]).unwrap();
        let op2 = assemble_operator(&g, &f).unwrap();
        assert!(matches!(BoundaryDrive::new(0, vec![1.0, 0.0], 2, &op2), Err(Error::InvalidDrive(_))));
        assert!(BoundaryDrive::new(0, vec![0.0, 1.0], 2, &op2).is_ok());
    }

    #[test]
    fn zero_drive_gives_zero_solution_and_flux() {
        let (op, f) = setup(1, 16, "0.3 + 0.4*x", "1 + x", "x");
        let d = BoundaryDrive::new(0, vec![0.0, 0.0], 2, &op).unwrap();
        let s = solve_with_boundary(&op, &f, &d, &[0.5, 1.0], &DtnOptions::default()).unwrap();
        assert!(s.snapshots.iter().all(|x| x.u.iter().all(|v| *v == 0.0)));
        assert!(s.records.iter().all(|r| r.flux.iter().all(|v| v.norm() == 0.0)));
    }

    #[test]
    fn boundary_solution_vanishes_at_start() {
        let (op, f) = setup(1, 16, "0.3 + 0.4*x", "1 + x", "x");
        let d = BoundaryDrive::new(0, vec![1.0, 0.5], 2, &op).unwrap();
        let s = solve_with_boundary(&op, &f, &d, &[1e-4, 1.0], &DtnOptions::default()).unwrap();
        assert!(max_abs(&s.snapshots[0].u) < 1e-6);
        assert!(max_abs(&s.snapshots[1].u) > 0.1);
    }

    #[test]
    fn boundary_solution_agrees_with_time_stepping() {
        let (op, f) = setup(1, 32, "0.3 + 0.4*x", "1 + x", "x");
        let d = BoundaryDrive::new(3, vec![0.5, 1.0], 2, &op).unwrap();
        let times = [0.5, 1.0];
        let s = solve_with_boundary(&op, &f, &d, &times, &DtnOptions::default()).unwrap();
        let src = lifted_source(&f, &d).unwrap();
        let l1 = l1_solve(&op, &f, &vec![0.0; 31], &src, 1e-3, 1.0, &L1Options::default()).unwrap();
        for (t, rec) in times.iter().zip(&s.records) {
            assert_eq!(rec.drive_id, 3);
            let v = snapshot_at(&l1, *t).unwrap();
            let (_, r) = assemble_boundary_field(op.grid(), &d, v, FluxStencil::SecondOrder).unwrap();
            assert!(rel_l2(&r.real_flux(), &rec.real_flux()) < 1e-3);
        }
    }

    #[test]
    fn laplace_dtn_at_unit_shift_is_real() {
        let (op, f) = setup(2, 6, "0.3 + 0.2*x", "1 + y", "x*y");
        let mut g = vec![0.0; op.grid().n_boundary()];
        g[3] = 1.0;
        g[7] = -0.5;
        let r = laplace_dtn(&op, &f, Complex64::new(1.0, 0.0), &g, 0, FluxStencil::SecondOrder).unwrap();
        assert!(r.flux.iter().all(|z| z.im.abs() < 1e-13 * (1.0 + z.re.abs())));
        // same as the real problem with potential q + ρ
        let pot: Vec<f64> = (0..f.len()).map(|i| f.q[i] + f.rho[i]).collect();
        let w = op.band_with_diagonal(&pot).factor().unwrap().solve(&op.boundary_rhs(&g));
        let fl = normal_flux(op.grid(), &w, &g, op.grid().s_out(), FluxStencil::SecondOrder).unwrap();
        assert!(rel_l2(&r.real_flux(), &fl) < 1e-12);
    }

    #[test]
    fn laplace_dtn_matches_hyperbolic_solution() {
        // V = μ² = q + ρ·1 with q = 3, ρ = 1
        let mu = 2.0f64;
        let mut errs = Vec::new();
        for n in [32, 64] {
            let (op, f) = setup(1, n, "0.5", "1", "3");
            let r = laplace_dtn(&op, &f, Complex64::new(1.0, 0.0), &[0.0, 1.0], 0, FluxStencil::SecondOrder).unwrap();
            let exact = mu * mu.cosh() / mu.sinh();
            errs.push((r.flux[1].re - exact).abs());
            assert!(errs.last().unwrap() < &(5.0 / (n * n) as f64));
        }
        assert!(errs[0] / errs[1] > 3.5);
        let (op, f) = setup(1, 16, "0.5", "1", "3");
        let z = laplace_dtn(&op, &f, Complex64::new(2.0, 1.0), &[0.0, 0.0], 0, FluxStencil::SecondOrder).unwrap();
        assert!(z.flux.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn laplace_dtn_is_symmetric_for_real_shifts() {
        let (op, f) = setup(2, 6, "0.35 + 0.2*x", "1 + 0.5*y", "1 + x*y");
        let grid = op.grid();
        let s = grid.s_out().to_vec();
        for p in [0.5, 2.0] {
            let cols: Vec<Vec<f64>> = s
                .iter()
                .map(|&b| {
                    let mut g = vec![0.0; grid.n_boundary()];
                    g[b] = 1.0;
                    laplace_dtn(&op, &f, Complex64::new(p, 0.0), &g, b, FluxStencil::FirstOrder)
                        .unwrap()
                        .real_flux()
                })
                .collect();
            for i in 0..s.len() {
                for j in 0..s.len() {
                    assert_abs_diff_eq!(cols[i][j], cols[j][i], epsilon = 1e-10 * cols[i][i].abs());
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn laplace_dtn_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, pr in 0.1f64..3.0, pi in -2.0f64..2.0) {
            let (op, f) = setup(2, 5, "0.4 + 0.1*y", "1", "x");
            let nb = op.grid().n_boundary();
            let g1: Vec<f64> = (0..nb).map(|i| if op.grid().boundary()[i].corner { 0.0 } else { (i as f64).sin() }).collect();
            let g2: Vec<f64> = (0..nb).map(|i| if op.grid().boundary()[i].corner { 0.0 } else { (i as f64 * 0.7).cos() }).collect();
            let mix: Vec<f64> = g1.iter().zip(&g2).map(|(x, y)| a * x + b * y).collect();
            let p = Complex64::new(pr, pi);
            let r = |g: &[f64]| laplace_dtn(&op, &f, p, g, 0, FluxStencil::SecondOrder).unwrap().flux;
            let (r1, r2, rm) = (r(&g1), r(&g2), r(&mix));
            for j in 0..rm.len() {
                let lin = r1[j] * a + r2[j] * b;
                prop_assert!((rm[j] - lin).norm() <= 1e-10 * (1.0 + lin.norm()));
            }
        }
    }

    #[test]
    fn time_domain_flux_is_linear_in_the_drive() {
        let (op, f) = setup(1, 16, "0.3 + 0.4*x", "1 + x", "x");
        let opts = DtnOptions::default();
        let run = |g: Vec<f64>| {
            let d = BoundaryDrive::new(0, g, 2, &op).unwrap();
            solve_with_boundary(&op, &f, &d, &[0.7], &opts).unwrap().records[0].real_flux()
        };
        let (r1, r2, rm) = (run(vec![1.0, 0.0]), run(vec![0.0, 1.0]), run(vec![2.0, -3.0]));
        for j in 0..rm.len() {
            assert_abs_diff_eq!(rm[j], 2.0 * r1[j] - 3.0 * r2[j], epsilon = 1e-9 * (1.0 + rm[j].abs()));
        }
    }

    #[test]
    fn schedules() {
        let s = PanelSchedule::laplace(0.5, 12).unwrap();
        assert_eq!(s.horizon(), 80.0);
        assert_eq!(PanelSchedule::laplace(4.0, 12).unwrap().horizon(), 20.0);
        let t = s.times();
        assert_eq!(t.len(), s.len());
        assert!(t.windows(2).all(|w| w[1] > w[0]) && t[0] > 0.0);
        assert!(s.panels.iter().all(|p| p[1] - p[0] <= 4.0));
        let c = PanelSchedule::chebyshev(0.5, 2.0, 12).unwrap();
        assert_eq!(c.times().len(), 12);
    }

    #[test]
    fn transform_of_zero_series_is_zero() {
        let s = PanelSchedule::laplace(0.5, 12).unwrap();
        let zero = FluxSeries::new(0, 2, s.clone(), vec![0, 1], vec![vec![0.0; 2]; s.len()]).unwrap();
        let r = laplace_from_time(&zero, 1.0, HORIZON_TOL).unwrap();
        assert!(r.flux.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn transform_of_polynomial_series() {
        // flux = t^k c: (p^{k+1}/k!) L[t^k] = 1
        let s = PanelSchedule::laplace(0.5, 12).unwrap();
        for k in [2u32, 3] {
            let vals = s.times().iter().map(|t| vec![t.powi(k as i32), -2.0 * t.powi(k as i32)]).collect();
            let series = FluxSeries::new(0, k, s.clone(), vec![0, 1], vals).unwrap();
            for p in [0.5, 1.0, 2.0] {
                let r = laplace_from_time(&series, p, HORIZON_TOL).unwrap();
                assert_abs_diff_eq!(r.flux[0].re, 1.0, epsilon = 1e-10);
                assert_abs_diff_eq!(r.flux[1].re, -2.0, epsilon = 1e-10);
            }
        }
        let short = PanelSchedule::from_breaks(&[0.0, 1.0, 2.0], 12).unwrap();
        let vals = short.times().iter().map(|t| vec![t * t]).collect();
        let series = FluxSeries::new(0, 2, short, vec![0], vals).unwrap();
        assert!(matches!(laplace_from_time(&series, 0.5, HORIZON_TOL), Err(Error::HorizonError { .. })));
    }

    #[test]
    fn caputo_transform_identity_for_t_squared() {
        // ∂^α t² = 2 t^{2-α} / Γ(3-α), transform p^α · 2/p³
        let s = PanelSchedule::laplace(0.5, 2).unwrap();
        for a in [0.3, 0.7] {
            for p in [0.5f64, 1.0, 2.0] {
                let lhs: f64 = s
                    .gauss(16)
                    .iter()
                    .map(|&(t, w)| w * (-p * t).exp() * 2.0 * t.powf(2.0 - a) / gamma(3.0 - a))
                    .sum();
                assert_abs_diff_eq!(lhs, p.powf(a) * 2.0 / p.powi(3), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn flux_series_interpolates_between_samples() {
        let (op, f) = setup(1, 16, "0.3 + 0.4*x", "1 + x", "x");
        let d = BoundaryDrive::new(0, vec![1.0, 0.5], 2, &op).unwrap();
        let sched = PanelSchedule::chebyshev(0.5, 2.0, 12).unwrap();
        let series = sample_flux_series(&op, &f, &d, &sched, &DtnOptions::default()).unwrap();
        let probe = [0.55, 0.8, 1.3, 1.95];
        let direct = solve_with_boundary(&op, &f, &d, &probe, &DtnOptions::default()).unwrap();
        for (t, rec) in probe.iter().zip(&direct.records) {
            let exact = rec.real_flux();
            assert!(rel_l2(&series.eval(*t).unwrap(), &exact) < 1e-6);
        }
        assert!(series.eval(3.0).is_err());
    }

    #[test]
    fn time_and_laplace_dtn_agree_in_one_dimension() {
        let (op, f) = setup(1, 16, "0.3 + 0.4*x", "1 + x", "x");
        let d = BoundaryDrive::new(0, vec![1.0, 0.5], 2, &op).unwrap();
        let sched = PanelSchedule::laplace(0.5, 12).unwrap();
        let series = sample_flux_series(&op, &f, &d, &sched, &DtnOptions::default()).unwrap();
        for p in [0.5, 1.0, 2.0] {
            let lt = laplace_from_time(&series, p, HORIZON_TOL).unwrap().real_flux();
            let ld = laplace_dtn(&op, &f, Complex64::new(p, 0.0), &d.g, 0, FluxStencil::SecondOrder)
                .unwrap()
                .real_flux();
            assert!(rel_l2(&lt, &ld) < 1e-4, "p = {p}: {lt:?} vs {ld:?}");
        }
    }

    #[test]
    fn weak_solution_identity_on_an_eigenmode() {
        let n = 32;
        let (op, f) = setup(1, n, "0.6", "1", "0");
        let phi: Vec<f64> = op.grid().interior().iter().map(|x| (PI * x[0]).sin()).collect();
        let r = verify_weak_solution(&op, &f, &phi, &Source::Zero, &[0.5, 1.0, 2.0], &WeakSolutionOptions::default()).unwrap();
        assert!(r.max_residual < 1e-4, "{:?}", r.residuals);
        let z = verify_weak_solution(&op, &f, &vec![0.0; n - 1], &Source::Zero, &[1.0], &WeakSolutionOptions::default()).unwrap();
        assert_eq!(z.max_residual, 0.0);
    }
}
