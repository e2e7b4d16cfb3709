//! Inverse-Laplace contour quadrature along `γ(ε, θ)` and the solution
//! operators built on it.
//!
//! The contour runs in along `s e^{-iθ}`, around the arc `ε e^{iβ}`,
//! `β ∈ [-θ, θ]`, and out along `s e^{iθ}`. Nodes are composite
//! Gauss–Legendre in `β` on the arc and in `ln s` on the rays, mirrored so the
//! node set is exactly closed under conjugation.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{compile_expr_txy, CoefficientField, EllipticOperator, SpatialGrid};
use crate::linalg::norm_inf;
use crate::quadrature::{graded_breaks, GaussRule};
use crate::resolvent::{c_star, ShiftedSolver};

/// Gauss nodes per panel on each ray.
pub const RAY_PANEL_NODES: usize = 10;
const ARC_PANEL_NODES: usize = 12;

pub const DEFAULT_THETA: f64 = 3.0 * PI / 4.0;
/// Imaginary parts below this many ulps of the summed terms are roundoff.
const ROUNDOFF_FACTOR: f64 = 64.0;
pub const DEFAULT_REALNESS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    LowerRay,
    Arc,
    UpperRay,
}

/// One quadrature node. `weight` already contains `dp / (2πi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourNode {
    pub p: Complex64,
    pub weight: Complex64,
    pub segment: Segment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourQuadrature {
    pub epsilon: f64,
    pub theta: f64,
    pub r_max: f64,
    /// Nodes on the arc.
    pub n_arc: usize,
    /// Nodes on each ray.
    pub n_ray: usize,
    pub realness_tol: f64,
    nodes: Vec<ContourNode>,
}

impl ContourQuadrature {
    pub fn nodes(&self) -> &[ContourNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn with_realness_tol(mut self, tol: f64) -> Self {
        self.realness_tol = tol;
        self
    }

    /// `(1/2πi) ∫ e^{tp} F(p) dp` for a scalar transform `F`.
    pub fn inverse_laplace(&self, t: f64, f: impl Fn(Complex64) -> Complex64) -> Complex64 {
        self.nodes
            .iter()
            .map(|n| n.weight * (n.p * t).exp() * f(n.p))
            .sum()
    }

    /// Contour sized for `S₂`: the rays reach far enough that the neglected
    /// tail is below `tol` relative to the input.
    pub fn for_s2(field: &CoefficientField, epsilon: f64, theta: f64, tol: f64) -> Result<Self> {
        check_angle(epsilon, theta)?;
        let c = c_star(theta, field)? / field.rho0;
        let a0 = field.alpha0;
        let r_max = (c / (PI * a0 * tol)).powf(1.0 / a0).clamp(2.0, 1e300);
        let n_ray = RAY_PANEL_NODES * ((r_max / epsilon).ln() / 1.0).ceil().max(1.0) as usize;
        build_contour(epsilon, theta, 32, n_ray, r_max)
    }
}

fn check_angle(epsilon: f64, theta: f64) -> Result<()> {
    if !(theta > PI / 2.0 && theta < PI) {
        return Err(Error::ContourError(format!("theta = {theta} must lie in (pi/2, pi)")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::ContourError(format!("epsilon = {epsilon} must lie in (0, 1)")));
    }
    Ok(())
}

fn panel_split(n: usize, per_panel: usize) -> (usize, usize) {
    let panels = n.div_ceil(per_panel).max(1);
    (panels, n.div_ceil(panels))
}

/// Builds `γ(ε, θ)` truncated at `|p| = r_max`.
pub fn build_contour(epsilon: f64, theta: f64, n_arc: usize, n_ray: usize, r_max: f64) -> Result<ContourQuadrature> {
    check_angle(epsilon, theta)?;
    if !(r_max > 1.0 && r_max > epsilon && r_max.is_finite()) {
        return Err(Error::ContourError(format!("r_max = {r_max} must exceed max(1, epsilon)")));
    }
    if n_arc < 4 || n_ray < 4 {
        return Err(Error::ContourError(format!("node counts n_arc = {n_arc}, n_ray = {n_ray} must be at least 4")));
    }
    let two_pi = 2.0 * PI;

    let (arc_panels, arc_per) = panel_split(n_arc.div_ceil(2), ARC_PANEL_NODES);
    let arc_rule = GaussRule::new(arc_per);
    let arc_breaks: Vec<f64> = (0..=arc_panels).map(|k| theta * k as f64 / arc_panels as f64).collect();
    let upper_arc: Vec<ContourNode> = arc_rule
        .composite(&arc_breaks)
        .into_iter()
        .map(|(b, w)| {
            let p = Complex64::from_polar(epsilon, b);
            ContourNode {
                p,
                weight: p * (w / two_pi),
                segment: Segment::Arc,
            }
        })
        .collect();

    let (ray_panels, ray_per) = panel_split(n_ray, RAY_PANEL_NODES);
    let ray_rule = GaussRule::new(ray_per);
    let (u0, u1) = (epsilon.ln(), r_max.ln());
    let ray_breaks: Vec<f64> = (0..=ray_panels)
        .map(|k| u0 + (u1 - u0) * k as f64 / ray_panels as f64)
        .collect();
    let dir = Complex64::from_polar(1.0, theta);
    let upper_ray: Vec<ContourNode> = ray_rule
        .composite(&ray_breaks)
        .into_iter()
        .map(|(u, w)| {
            let s = u.exp();
            ContourNode {
                p: dir * s,
                weight: dir * (s * w) / Complex64::new(0.0, two_pi),
                segment: Segment::UpperRay,
            }
        })
        .collect();

    let mirror = |n: &ContourNode, segment| ContourNode {
        p: n.p.conj(),
        weight: n.weight.conj(),
        segment,
    };
    let mut nodes = Vec::with_capacity(2 * (upper_arc.len() + upper_ray.len()));
    nodes.extend(upper_ray.iter().rev().map(|n| mirror(n, Segment::LowerRay)));
    nodes.extend(upper_arc.iter().rev().map(|n| mirror(n, Segment::Arc)));
    nodes.extend(upper_arc.iter().copied());
    nodes.extend(upper_ray.iter().copied());

    Ok(ContourQuadrature {
        epsilon,
        theta,
        r_max,
        n_arc: 2 * upper_arc.len(),
        n_ray: upper_ray.len(),
        realness_tol: DEFAULT_REALNESS_TOL,
        nodes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Contour,
    L1,
    Oracle,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Contour => "contour",
            Provenance::L1 => "l1",
            Provenance::Oracle => "oracle",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionSnapshot {
    pub t: f64,
    pub u: Vec<f64>,
    pub imag_residual: f64,
    pub provenance: Provenance,
}

/// Nodal `ρ p^{α-1} v`.
fn memory_term(field: &CoefficientField, p: Complex64, v: &[f64]) -> Vec<Complex64> {
    let lp = p.ln();
    field
        .alpha
        .iter()
        .zip(&field.rho)
        .zip(v)
        .map(|((&a, &r), &x)| (lp * (a - 1.0)).exp() * (r * x))
        .collect()
}

/// Accumulated contour sum and `Σ_j |c_j| ‖x_j‖_∞`, the size of the terms
/// that cancel in it.
struct ContourSum {
    acc: Vec<Complex64>,
    mass: f64,
}

/// `Σ_j w_j · scalar(p_j) · (A_q + ρ p_j^α)⁻¹ rhs(p_j)`, reduced in node order.
fn contour_sum<R, S>(solver: &ShiftedSolver<'_>, contour: &ContourQuadrature, rhs: R, scalar: S) -> Result<ContourSum>
where
    R: Fn(Complex64) -> Vec<Complex64> + Sync,
    S: Fn(Complex64) -> Complex64 + Sync,
{
    let parts: Vec<Result<Option<Vec<Complex64>>>> = contour
        .nodes
        .par_iter()
        .map(|node| {
            let c = node.weight * scalar(node.p);
            if c == Complex64::new(0.0, 0.0) {
                return Ok(None);
            }
            let x = solver.solve_fresh(node.p, &rhs(node.p))?;
            Ok(Some(x.into_iter().map(|v| v * c).collect()))
        })
        .collect();
    let mut acc = vec![Complex64::new(0.0, 0.0); solver.n()];
    let mut mass = 0.0;
    for part in parts {
        if let Some(v) = part? {
            mass += v.iter().fold(0.0f64, |m, z| m.max(z.norm()));
            for (a, b) in acc.iter_mut().zip(v) {
                *a += b;
            }
        }
    }
    Ok(ContourSum { acc, mass })
}

/// Drops the imaginary part after checking it is at roundoff level relative
/// to the larger of the input and output sizes, or to the cancelling terms.
fn realize(t: f64, sum: ContourSum, input_scale: f64, tol: f64) -> Result<SolutionSnapshot> {
    let u: Vec<f64> = sum.acc.iter().map(|z| z.re).collect();
    let imag = sum.acc.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
    let limit = (tol * input_scale.max(norm_inf(&u))).max(ROUNDOFF_FACTOR * f64::EPSILON * sum.mass);
    if imag > limit || !imag.is_finite() {
        return Err(Error::RealnessViolation { imag, tol: limit });
    }
    Ok(SolutionSnapshot {
        t,
        u,
        imag_residual: imag,
        provenance: Provenance::Contour,
    })
}

fn check_len(v: &[f64], n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::ShapeError(format!("{what} has {} entries, operator has {n}", v.len())));
    }
    Ok(())
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::DomainError(format!("time t = {t} must be positive")));
    }
    Ok(())
}

/// `S₀(t) u0`.
pub fn apply_s0(
    contour: &ContourQuadrature,
    operator: &EllipticOperator,
    field: &CoefficientField,
    t: f64,
    u0: &[f64],
) -> Result<SolutionSnapshot> {
    check_time(t)?;
    check_len(u0, operator.n(), "u0")?;
    let solver = ShiftedSolver::new(operator, field)?;
    let acc = contour_sum(&solver, contour, |p| memory_term(field, p, u0), |p| (p * t).exp())?;
    realize(t, acc, norm_inf(u0), contour.realness_tol)
}

/// `S₁(t) ψ`.
pub fn apply_s1(
    contour: &ContourQuadrature,
    operator: &EllipticOperator,
    field: &CoefficientField,
    t: f64,
    psi: &[f64],
) -> Result<SolutionSnapshot> {
    check_time(t)?;
    check_len(psi, operator.n(), "psi")?;
    let solver = ShiftedSolver::new(operator, field)?;
    let rhs: Vec<Complex64> = psi.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let acc = contour_sum(&solver, contour, |_| rhs.clone(), |p| (p * t).exp())?;
    realize(t, acc, norm_inf(psi), contour.realness_tol)
}

/// `S₂ ψ`; the snapshot time is reported as 0.
pub fn apply_s2(
    contour: &ContourQuadrature,
    operator: &EllipticOperator,
    field: &CoefficientField,
    psi: &[f64],
) -> Result<SolutionSnapshot> {
    check_len(psi, operator.n(), "psi")?;
    let solver = ShiftedSolver::new(operator, field)?;
    let rhs: Vec<Complex64> = psi.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let acc = contour_sum(&solver, contour, |_| rhs.clone(), |p| p.inv())?;
    realize(0.0, acc, norm_inf(psi), contour.realness_tol)
}

/// A source term `c(x) t^{γ(x)}` with nodal coefficient and exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTerm {
    pub coeff: Vec<f64>,
    pub exponent: Vec<f64>,
}

impl PowerTerm {
    pub fn new(coeff: Vec<f64>, exponent: Vec<f64>) -> Result<Self> {
        if coeff.len() != exponent.len() {
            return Err(Error::ShapeError("power term coefficient and exponent lengths differ".into()));
        }
        if let Some(g) = exponent.iter().find(|g| !(**g > -1.0)) {
            return Err(Error::DomainError(format!("power exponent {g} must exceed -1")));
        }
        Ok(PowerTerm { coeff, exponent })
    }

    /// Same exponent at every node.
    pub fn uniform(coeff: Vec<f64>, exponent: f64) -> Result<Self> {
        let n = coeff.len();
        PowerTerm::new(coeff, vec![exponent; n])
    }
}

/// Right-hand side `f(t, x)` of the evolution equation.
#[derive(Clone, Default)]
pub enum Source {
    #[default]
    Zero,
    /// Sum of power terms; transformed exactly.
    PowerLaw(Vec<PowerTerm>),
    Function(Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>),
    /// Piecewise-linear in time, constant outside the table range.
    Table { times: Vec<f64>, values: Vec<Vec<f64>> },
}

impl fmt::Debug for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Zero => f.write_str("Zero"),
            Source::PowerLaw(terms) => f.debug_tuple("PowerLaw").field(terms).finish(),
            Source::Function(_) => f.write_str("Function(..)"),
            Source::Table { times, .. } => f.debug_struct("Table").field("times", &times.len()).finish(),
        }
    }
}

impl Source {
    pub fn function(f: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Source::Function(Arc::new(f))
    }

    /// Source from an expression in `t`, `x`, `y` sampled at the interior nodes.
    pub fn expr(s: &str, grid: &SpatialGrid) -> Result<Self> {
        compile_expr_txy(s).map(drop)?;
        let text = s.to_string();
        let pts = grid.interior().to_vec();
        // compiled expressions are not thread-safe, so each call recompiles
        Ok(Source::function(move |t| {
            let f = compile_expr_txy(&text).expect("expression validated above");
            pts.iter().map(|x| f(t, x[0], x[1])).collect()
        }))
    }

    pub fn table(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::ShapeError("source table needs one row per time".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::DomainError("source table times must increase strictly".into()));
        }
        let n = values[0].len();
        if values.iter().any(|v| v.len() != n) {
            return Err(Error::ShapeError("source table rows differ in length".into()));
        }
        Ok(Source::Table { times, values })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Source::Zero)
    }

    /// `f(t)` at the interior nodes.
    pub fn eval(&self, t: f64, n: usize) -> Result<Vec<f64>> {
        let v = match self {
            Source::Zero => vec![0.0; n],
            Source::PowerLaw(terms) => {
                let mut v = vec![0.0; n];
                for term in terms {
                    check_len(&term.coeff, n, "power term")?;
                    for ((vi, c), g) in v.iter_mut().zip(&term.coeff).zip(&term.exponent) {
                        *vi += c * t.powf(*g);
                    }
                }
                v
            }
            Source::Function(f) => f(t),
            Source::Table { times, values } => {
                let k = times.partition_point(|&s| s <= t);
                if k == 0 {
                    values[0].clone()
                } else if k == times.len() {
                    values[k - 1].clone()
                } else {
                    let w = (t - times[k - 1]) / (times[k] - times[k - 1]);
                    values[k - 1]
                        .iter()
                        .zip(&values[k])
                        .map(|(a, b)| a + w * (b - a))
                        .collect()
                }
            }
        };
        check_len(&v, n, "source value")?;
        Ok(v)
    }

    /// Exact Laplace transform, available for zero and power-law sources.
    pub fn laplace(&self, p: Complex64, n: usize) -> Option<Vec<Complex64>> {
        match self {
            Source::Zero => Some(vec![Complex64::new(0.0, 0.0); n]),
            Source::PowerLaw(terms) => {
                let lp = p.ln();
                let mut v = vec![Complex64::new(0.0, 0.0); n];
                for term in terms {
                    for ((vi, c), g) in v.iter_mut().zip(&term.coeff).zip(&term.exponent) {
                        *vi += (lp * (-g - 1.0)).exp() * (c * gamma(g + 1.0));
                    }
                }
                Some(v)
            }
            _ => None,
        }
    }

    fn breakpoints(&self) -> &[f64] {
        match self {
            Source::Table { times, .. } => times,
            _ => &[],
        }
    }
}

/// How `(ε, θ)` is chosen at each output time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContourPolicy {
    /// `ε = min(0.9, 1/t)` with the given angle.
    Auto { theta: f64 },
    Fixed { epsilon: f64, theta: f64 },
}

impl Default for ContourPolicy {
    fn default() -> Self {
        ContourPolicy::Auto { theta: DEFAULT_THETA }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourOptions {
    pub policy: ContourPolicy,
    pub n_arc: usize,
    /// Panel width in `ln s` on the rays.
    pub ray_panel_width: f64,
    /// `e^{t R cos θ} = e^{-decay}` at the truncation radius.
    pub decay: f64,
    pub realness_tol: f64,
    /// Panels in `τ` for the memory integral of non-power-law sources.
    pub duhamel_panels: usize,
    pub duhamel_nodes: usize,
    /// Target for the neglected ray tail of the memory integral.
    pub duhamel_tol: f64,
}

impl Default for ContourOptions {
    fn default() -> Self {
        ContourOptions {
            policy: ContourPolicy::default(),
            n_arc: 32,
            ray_panel_width: 0.5,
            decay: 37.0,
            realness_tol: DEFAULT_REALNESS_TOL,
            duhamel_panels: 32,
            duhamel_nodes: 12,
            duhamel_tol: 1e-10,
        }
    }
}

impl ContourOptions {
    /// `(ε, θ)` used at time `t`.
    pub fn angle_at(&self, t: f64) -> (f64, f64) {
        match self.policy {
            ContourPolicy::Auto { theta } => ((1.0 / t).min(0.9), theta),
            ContourPolicy::Fixed { epsilon, theta } => (epsilon, theta),
        }
    }

    /// The contour used at time `t`; `r_floor` raises the truncation radius.
    pub fn contour_at(&self, t: f64, r_floor: f64) -> Result<ContourQuadrature> {
        let (eps, theta) = self.angle_at(t);
        check_angle(eps, theta)?;
        let r_max = (self.decay / (t * theta.cos().abs())).max(2.0).max(r_floor);
        let panels = ((r_max / eps).ln() / self.ray_panel_width).ceil().max(1.0) as usize;
        Ok(build_contour(eps, theta, self.n_arc, panels * RAY_PANEL_NODES, r_max)?.with_realness_tol(self.realness_tol))
    }
}

/// Solution of `(ρ ∂_t^α + A_q) u = f`, `u(0) = u0`, at each of `times`.
///
/// Zero and power-law sources go through their exact transforms. Other
/// sources are integrated against `S₁(t - τ)` in `τ` after subtracting the
/// linear Taylor polynomial of `f` at `t`, whose contribution is added in
/// closed form.
pub fn solve_forward(
    operator: &EllipticOperator,
    field: &CoefficientField,
    u0: &[f64],
    source: &Source,
    times: &[f64],
    options: &ContourOptions,
) -> Result<Vec<SolutionSnapshot>> {
    let n = operator.n();
    check_len(u0, n, "u0")?;
    if times.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::DomainError("output times must be positive".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::DomainError("output times must be sorted and distinct".into()));
    }
    let solver = ShiftedSolver::new(operator, field)?;
    times
        .iter()
        .map(|&t| solve_at(&solver, u0, source, t, options))
        .collect()
}

fn solve_at(
    solver: &ShiftedSolver<'_>,
    u0: &[f64],
    source: &Source,
    t: f64,
    options: &ContourOptions,
) -> Result<SolutionSnapshot> {
    let field = solver.field();
    let n = solver.n();
    let u0_scale = norm_inf(u0);
    match source {
        Source::Zero | Source::PowerLaw(_) => {
            let contour = options.contour_at(t, 0.0)?;
            let f_scale = norm_inf(&source.eval(t, n)?);
            let acc = contour_sum(
                solver,
                &contour,
                |p| {
                    let mut r = memory_term(field, p, u0);
                    if let Some(fp) = source.laplace(p, n) {
                        for (a, b) in r.iter_mut().zip(fp) {
                            *a += b;
                        }
                    }
                    r
                },
                |p| (p * t).exp(),
            )?;
            realize(t, acc, u0_scale.max(f_scale), contour.realness_tol)
        }
        Source::Function(_) | Source::Table { .. } => {
            let r_floor = (1.0 / options.duhamel_tol).powf(1.0 / (2.0 + field.alpha0));
            let contour = options.contour_at(t, r_floor)?;
            let memory = DuhamelData::new(source, t, n, options)?;
            let f_scale = norm_inf(&memory.ft);
            let acc = contour_sum(
                solver,
                &contour,
                |p| {
                    let etp = (p * t).exp();
                    let inv = p.inv();
                    let mut r: Vec<Complex64> = memory_term(field, p, u0)
                        .into_iter()
                        .zip(&memory.l0)
                        .zip(&memory.slope)
                        .map(|((m, &l0), &d)| etp * (m + inv * l0 + inv * inv * d))
                        .collect();
                    for (tau, w, g) in &memory.samples {
                        let k = (p * (t - tau)).exp() * *w;
                        for (a, &b) in r.iter_mut().zip(g) {
                            *a += k * b;
                        }
                    }
                    r
                },
                |_| Complex64::new(1.0, 0.0),
            )?;
            realize(t, acc, u0_scale.max(f_scale), contour.realness_tol)
        }
    }
}

/// `f(t)`, the linear part `l0 + slope·τ` of `f` near `t`, and the samples
/// `f(τ) - l0 - slope·τ` on a Gauss rule over `[0, t]` graded at both ends.
struct DuhamelData {
    ft: Vec<f64>,
    l0: Vec<f64>,
    slope: Vec<f64>,
    samples: Vec<(f64, f64, Vec<f64>)>,
}

impl DuhamelData {
    fn new(source: &Source, t: f64, n: usize, options: &ContourOptions) -> Result<Self> {
        let ft = source.eval(t, n)?;
        let delta = 1e-3 * t;
        let f1 = source.eval(t - delta, n)?;
        let f2 = source.eval(t - 2.0 * delta, n)?;
        let slope: Vec<f64> = (0..n)
            .map(|i| (3.0 * ft[i] - 4.0 * f1[i] + f2[i]) / (2.0 * delta))
            .collect();
        let l0: Vec<f64> = (0..n).map(|i| ft[i] - slope[i] * t).collect();

        let half = (options.duhamel_panels / 2).max(1);
        let left = graded_breaks(0.5 * t, 0.5, half);
        let mut breaks: Vec<f64> = left.clone();
        breaks.extend(left.iter().rev().skip(1).map(|&b| t - b));
        breaks.extend(source.breakpoints().iter().copied().filter(|&b| b > 0.0 && b < t));
        breaks.sort_by(|a, b| a.total_cmp(b));
        breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * t);

        let rule = GaussRule::new(options.duhamel_nodes);
        let samples = rule
            .composite(&breaks)
            .into_iter()
            .map(|(tau, w)| {
                let f = source.eval(tau, n)?;
                let g = (0..n).map(|i| f[i] - l0[i] - slope[i] * tau).collect();
                Ok((tau, w, g))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DuhamelData { ft, l0, slope, samples })
    }
}
