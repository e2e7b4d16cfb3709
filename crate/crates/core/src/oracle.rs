//! Reference computations independent of the contour solver: Mittag-Leffler
//! functions, eigen-expansions for constant order, and an L1 time stepper.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use statrs::function::gamma::{gamma, ln_gamma};

use crate::contour::{Provenance, SolutionSnapshot, Source};
use crate::error::{Error, Result};
use crate::grid::{CoefficientField, EllipticOperator};
use crate::linalg::BandLu;
use crate::quadrature::GaussRule;

/// Above this value of `|z|^{1/α}` the power series loses too many digits to
/// cancellation and the integral representation is used instead.
const SERIES_LIMIT: f64 = 3.0;
const SERIES_MAX_TERMS: usize = 2000;

/// Two-parameter Mittag-Leffler function `E_{α,β}(z)` for `α ∈ (0, 1]`,
/// `β > 0`.
pub fn mittag_leffler(alpha: f64, beta: f64, z: Complex64) -> Result<Complex64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::EvaluationError(format!("alpha = {alpha} outside (0, 1]")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::EvaluationError(format!("beta = {beta} must be positive")));
    }
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::EvaluationError(format!("argument {z} is not finite")));
    }
    if alpha == 1.0 && beta == 1.0 {
        return Ok(z.exp());
    }
    if z.norm() <= 5.0 && z.norm().powf(1.0 / alpha) <= SERIES_LIMIT {
        return series(alpha, beta, z);
    }
    if alpha == 1.0 {
        return if beta == 2.0 {
            Ok((z.exp() - 1.0) / z)
        } else {
            Err(Error::EvaluationError(format!(
                "alpha = 1, beta = {beta} is only supported near the origin"
            )))
        };
    }
    if beta > 1.0 {
        // E_{α,β}(z) = (E_{α,β-α}(z) - 1/Γ(β-α)) / z
        let b = beta - alpha;
        let lower = mittag_leffler(alpha, b, z)?;
        return Ok((lower - recip_gamma(b)) / z);
    }
    hankel(alpha, beta, z)
}

/// `1/Γ(x)`, exact at small positive integers.
fn recip_gamma(x: f64) -> f64 {
    if x.fract() == 0.0 && x > 0.0 && x <= 20.0 {
        1.0 / (2..x as u64).map(|k| k as f64).product::<f64>()
    } else {
        1.0 / gamma(x)
    }
}

fn series(alpha: f64, beta: f64, z: Complex64) -> Result<Complex64> {
    if z == Complex64::new(0.0, 0.0) {
        return Ok(Complex64::new(recip_gamma(beta), 0.0));
    }
    let (lz, arg) = (z.norm().ln(), z.arg());
    let mut sum = Complex64::new(0.0, 0.0);
    let mut peak = 0.0f64;
    for k in 0..SERIES_MAX_TERMS {
        let a = alpha * k as f64 + beta;
        let mag = (k as f64 * lz - ln_gamma(a)).exp();
        sum += Complex64::from_polar(mag, k as f64 * arg);
        peak = peak.max(mag);
        if mag <= 1e-17 * peak && a > 2.0 {
            return Ok(sum);
        }
    }
    Err(Error::EvaluationError(format!("series did not converge at z = {z}")))
}

/// Hankel-contour representation collapsed onto the negative real axis,
/// plus the residue at `z^{1/α}` when that pole lies on the principal sheet.
/// Requires `0 < β ≤ 1`.
fn hankel(alpha: f64, beta: f64, z: Complex64) -> Result<Complex64> {
    let c = 1.0 + alpha - beta;
    let em = Complex64::from_polar(1.0, -PI * alpha);
    let ep = Complex64::from_polar(1.0, PI * alpha);
    let pm = Complex64::from_polar(1.0, -PI * (alpha - beta));
    let pp = Complex64::from_polar(1.0, PI * (alpha - beta));
    let two_pi_i = Complex64::new(0.0, 2.0 * PI);
    // e^{-r} r^{α-β} h(r^α)
    let h = |y: f64| (pm / (em * y - z) - pp / (ep * y - z)) / two_pi_i;

    // below r0 expand h in powers of r^α / z and e^{-r} in powers of r
    let r0 = (0.05 * z.norm()).powf(1.0 / alpha).min(0.05);
    let mut head = Complex64::new(0.0, 0.0);
    let mut zm = -z.inv();
    let (mut emm, mut epm) = (Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0));
    for m in 0..14 {
        let a_m = (pm * emm - pp * epm) * zm / two_pi_i;
        let mut fact = 1.0;
        for j in 0..8 {
            if j > 0 {
                fact *= -(j as f64);
            }
            let e = c + m as f64 * alpha + j as f64;
            head += a_m * (r0.powf(e) / (e * fact));
        }
        zm /= z;
        emm *= em;
        epm *= ep;
    }

    let v_lo = r0.ln();
    let v_hi = 50f64.ln().max(v_lo + 1.0);
    let width = (0.3 * PI * (1.0 - alpha) / alpha).min(0.5);
    let panels = ((v_hi - v_lo) / width).ceil() as usize;
    let rule = GaussRule::new(12);
    let mut body = Complex64::new(0.0, 0.0);
    for k in 0..panels {
        let a = v_lo + (v_hi - v_lo) * k as f64 / panels as f64;
        let b = v_lo + (v_hi - v_lo) * (k + 1) as f64 / panels as f64;
        for (v, w) in rule.on(a, b) {
            let r = v.exp();
            body += h(r.powf(alpha)) * (w * (-r).exp() * r.powf(c));
        }
    }
    let mut total = head + body;
    if z.arg().abs() < alpha * PI {
        let s = z.powf(1.0 / alpha);
        total += s.exp() * s.powf(1.0 - beta) / alpha;
    }
    if !(total.re.is_finite() && total.im.is_finite()) {
        return Err(Error::EvaluationError(format!("integral diverged at z = {z}")));
    }
    Ok(total)
}

/// Eigen-expansion reference for constant `α` and `ρ`:
/// `u(t) = Σ_k E_α(-λ_k t^α / ρ) ⟨u0, φ_k⟩ φ_k`.
#[derive(Debug, Clone)]
pub struct EigenReference {
    alpha: f64,
    rho: f64,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl EigenReference {
    pub fn new(operator: &EllipticOperator, field: &CoefficientField) -> Result<Self> {
        if !field.has_constant_order() || !field.has_constant_density() {
            return Err(Error::NotApplicable(
                "eigen-expansion reference needs constant order and density".into(),
            ));
        }
        if field.len() != operator.n() {
            return Err(Error::ShapeError("field and operator sizes differ".into()));
        }
        let eig = SymmetricEigen::new(operator.to_dense());
        Ok(EigenReference {
            alpha: field.alpha0,
            rho: field.rho0,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
        })
    }

    /// Eigenvalues of `A_q` in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.eigenvalues.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn solve(&self, u0: &[f64], t: f64) -> Result<SolutionSnapshot> {
        if u0.len() != self.eigenvalues.len() {
            return Err(Error::ShapeError("u0 length does not match operator".into()));
        }
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::DomainError(format!("time t = {t} must be non-negative")));
        }
        let u0v = DVector::from_column_slice(u0);
        let coef = self.eigenvectors.tr_mul(&u0v);
        let mut out = DVector::zeros(u0.len());
        for k in 0..coef.len() {
            let z = -self.eigenvalues[k] * t.powf(self.alpha) / self.rho;
            let e = mittag_leffler(self.alpha, 1.0, Complex64::new(z, 0.0))?.re;
            out += self.eigenvectors.column(k) * (e * coef[k]);
        }
        Ok(SolutionSnapshot {
            t,
            u: out.iter().copied().collect(),
            imag_residual: 0.0,
            provenance: Provenance::Oracle,
        })
    }
}

pub fn co_reference_solution(
    operator: &EllipticOperator,
    field: &CoefficientField,
    u0: &[f64],
    t: f64,
) -> Result<SolutionSnapshot> {
    EigenReference::new(operator, field)?.solve(u0, t)
}

/// L1 weights for one node: `∂^α u(t_n) ≈ scale · Σ_j b_j (u^{n-j} - u^{n-j-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct L1Weights {
    pub alpha: f64,
    pub dt: f64,
    /// `dt^{-α} / Γ(2 - α)`.
    pub scale: f64,
    pub b: Vec<f64>,
}

impl L1Weights {
    /// Discrete derivative at the last entry of `history` (`u^0, ..., u^n`).
    pub fn apply(&self, history: &[f64]) -> f64 {
        let n = history.len() - 1;
        (0..n)
            .map(|j| self.b[j] * (history[n - j] - history[n - j - 1]))
            .sum::<f64>()
            * self.scale
    }
}

pub fn caputo_l1_weights(alpha: f64, dt: f64, n_steps: usize) -> Result<L1Weights> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::DomainError(format!("alpha = {alpha} outside (0, 1)")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::DomainError(format!("dt = {dt} must be positive")));
    }
    let e = 1.0 - alpha;
    let b = (0..n_steps)
        .map(|j| ((j + 1) as f64).powf(e) - (j as f64).powf(e))
        .collect();
    Ok(L1Weights {
        alpha,
        dt,
        scale: dt.powf(-alpha) / gamma(2.0 - alpha),
        b,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Options {
    pub step_cap: usize,
}

impl Default for L1Options {
    fn default() -> Self {
        L1Options { step_cap: 20_000 }
    }
}

/// Implicit L1 stepping with full memory; returns the solution at
/// `t_n = n dt`, `n = 1, ..., round(T / dt)`.
pub fn l1_solve(
    operator: &EllipticOperator,
    field: &CoefficientField,
    u0: &[f64],
    source: &Source,
    dt: f64,
    t_end: f64,
    options: &L1Options,
) -> Result<Vec<SolutionSnapshot>> {
    let n = operator.n();
    if u0.len() != n || field.len() != n {
        return Err(Error::ShapeError("u0, field and operator sizes differ".into()));
    }
    if !(dt > 0.0 && t_end > 0.0 && (t_end / dt).is_finite()) {
        return Err(Error::DomainError(format!("dt = {dt}, T = {t_end} must be positive")));
    }
    let steps = (t_end / dt).round().max(1.0) as usize;
    if steps > options.step_cap {
        return Err(Error::BudgetError {
            steps,
            cap: options.step_cap,
        });
    }
    let weights: Vec<L1Weights> = field
        .alpha
        .iter()
        .map(|&a| caputo_l1_weights(a, dt, steps))
        .collect::<Result<_>>()?;
    let lead: Vec<f64> = weights.iter().zip(&field.rho).map(|(w, r)| r * w.scale).collect();
    let diag: Vec<f64> = lead.iter().zip(operator.q()).map(|(c, q)| c + q).collect();
    let lu: BandLu<f64> = operator.band_with_diagonal(&diag).factor()?;

    // increments[m] = u^{m+1} - u^m
    let mut increments: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut prev = u0.to_vec();
    let mut out = Vec::with_capacity(steps);
    for step in 1..=steps {
        let t = step as f64 * dt;
        let f = source.eval(t, n)?;
        let mut rhs = f;
        for i in 0..n {
            let mut hist = 0.0;
            for j in 1..step {
                hist += weights[i].b[j] * increments[step - 1 - j][i];
            }
            rhs[i] += lead[i] * (prev[i] - hist);
        }
        lu.solve_in_place(&mut rhs);
        increments.push(rhs.iter().zip(&prev).map(|(a, b)| a - b).collect());
        prev = rhs;
        out.push(SolutionSnapshot {
            t,
            u: prev.clone(),
            imag_residual: 0.0,
            provenance: Provenance::L1,
        });
    }
    Ok(out)
}

/// The snapshot whose time is closest to `t`.
pub fn snapshot_at(snaps: &[SolutionSnapshot], t: f64) -> Option<&SolutionSnapshot> {
    snaps
        .iter()
        .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
}
