//! Experiment configuration: a TOML document with a fixed key set.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Solve,
    Dtn,
    Invert,
    VerifyResolvent,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must match the subcommand when given.
    pub task: Option<Task>,
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub dtn: DtnConfig,
    #[serde(default)]
    pub invert: InvertConfig,
    #[serde(default)]
    pub resolvent: ResolventConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// A coefficient given as a number or an expression in `x`, `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Value(f64),
    Expr(String),
}

impl Coefficient {
    pub fn to_spec(&self) -> vofrac::CoefficientSpec {
        match self {
            Coefficient::Value(v) => vofrac::CoefficientSpec::Constant(*v),
            Coefficient::Expr(s) => vofrac::CoefficientSpec::expr(s.clone()),
        }
    }
}

/// `"full"`, a list of side names, or a list of boundary node indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Subset {
    Named(String),
    Sides(Vec<String>),
    Nodes(Vec<usize>),
}

impl Default for Subset {
    fn default() -> Self {
        Subset::Named("full".into())
    }
}

impl Subset {
    fn to_core(&self, key: &str) -> Result<vofrac::BoundarySubset, CliError> {
        match self {
            Subset::Named(s) if s == "full" => Ok(vofrac::BoundarySubset::Full),
            Subset::Named(s) => Err(CliError::config(format!("{key}: expected \"full\", got \"{s}\""))),
            Subset::Sides(v) => v
                .iter()
                .map(|s| {
                    vofrac::Side::parse(s).ok_or_else(|| CliError::config(format!("{key}: unknown side \"{s}\"")))
                })
                .collect::<Result<_, _>>()
                .map(vofrac::BoundarySubset::Sides),
            Subset::Nodes(v) => Ok(vofrac::BoundarySubset::Nodes(v.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dimension: usize,
    pub extents: Vec<[f64; 2]>,
    /// Cells per axis.
    pub cells: Vec<usize>,
    #[serde(default)]
    pub s_in: Subset,
    #[serde(default)]
    pub s_out: Subset,
    pub alpha: Coefficient,
    pub rho: Coefficient,
    #[serde(default = "zero_coefficient")]
    pub q: Coefficient,
    /// Initial data in `x`, `y`; zero when absent.
    pub u0: Option<String>,
    /// Source in `t`, `x`, `y`; zero when absent.
    pub source: Option<String>,
    #[serde(default)]
    pub times: Vec<f64>,
}

fn zero_coefficient() -> Coefficient {
    Coefficient::Value(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub theta: f64,
    /// Fixed arc radius; `min(0.9, 1/t)` when absent.
    pub epsilon: Option<f64>,
    pub n_arc: usize,
    pub ray_panel_width: f64,
    pub decay: f64,
    pub realness_tol: f64,
    /// Laplace variables at which to check the transformed solution.
    pub weak_samples: Vec<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = vofrac::ContourOptions::default();
        SolverConfig {
            theta: vofrac::contour::DEFAULT_THETA,
            epsilon: None,
            n_arc: d.n_arc,
            ray_panel_width: d.ray_panel_width,
            decay: d.decay,
            realness_tol: d.realness_tol,
            weak_samples: Vec::new(),
        }
    }
}

impl SolverConfig {
    pub fn contour_options(&self) -> vofrac::ContourOptions {
        let policy = match self.epsilon {
            Some(epsilon) => vofrac::ContourPolicy::Fixed {
                epsilon,
                theta: self.theta,
            },
            None => vofrac::ContourPolicy::Auto { theta: self.theta },
        };
        vofrac::ContourOptions {
            policy,
            n_arc: self.n_arc,
            ray_panel_width: self.ray_panel_width,
            decay: self.decay,
            realness_tol: self.realness_tol,
            ..vofrac::ContourOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DtnDomain {
    Time,
    Laplace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stencil {
    Second,
    First,
}

impl Stencil {
    pub fn to_core(self) -> vofrac::FluxStencil {
        match self {
            Stencil::Second => vofrac::FluxStencil::SecondOrder,
            Stencil::First => vofrac::FluxStencil::FirstOrder,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DtnConfig {
    pub domain: DtnDomain,
    pub k: u32,
    /// Times or real Laplace variables. Time-domain runs default to 12
    /// Chebyshev points on `[0.5, 2]`.
    pub points: Vec<f64>,
    /// Imaginary parts for Laplace points; zero when absent.
    pub points_imag: Vec<f64>,
    /// Boundary nodes carrying unit drives; all of `S_in` when empty.
    pub drive_nodes: Vec<usize>,
    pub stencil: Stencil,
    /// Laplace-domain records computed from sampled time-domain fluxes.
    pub from_time: bool,
}

impl Default for DtnConfig {
    fn default() -> Self {
        DtnConfig {
            domain: DtnDomain::Laplace,
            k: 2,
            points: Vec::new(),
            points_imag: Vec::new(),
            drive_nodes: Vec::new(),
            stencil: Stencil::Second,
            from_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvertConfig {
    /// A `dtn.csv` with Laplace-domain records at `p_small`, 1 and `e`;
    /// synthetic data from the problem coefficients when absent.
    pub data: Option<PathBuf>,
    pub p_small: f64,
    pub reg_weight: f64,
    pub max_iter: usize,
    pub stencil: Stencil,
}

impl Default for InvertConfig {
    fn default() -> Self {
        let f = vofrac::FitOptions::default();
        InvertConfig {
            data: None,
            p_small: 1e-6,
            reg_weight: f.reg_weight,
            max_iter: f.max_iter,
            stencil: Stencil::Second,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResolventConfig {
    pub samples: usize,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for ResolventConfig {
    fn default() -> Self {
        ResolventConfig {
            samples: 500,
            r_min: 1e-2,
            r_max: 1e2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    Eigen,
    L1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub kind: OracleKind,
    pub dt: f64,
    pub step_cap: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            kind: OracleKind::L1,
            dt: 1e-3,
            step_cap: vofrac::L1Options::default().step_cap,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

/// Parses `key=value` where `value` is a TOML literal, or a bare string.
fn override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override \"{spec}\" is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("override key \"{key}\" is malformed")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("override \"{key}\": \"{part}\" is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), override_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::config(format!("{origin}: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::config(format!("{origin}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        ExperimentConfig::parse(&text, &path.display().to_string(), overrides)
    }

    /// Range checks that do not need any numerical work. Contour angles
    /// are left to the solver.
    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.problem;
        let bad = |m: String| Err(CliError::config(m));
        if p.dimension != 1 && p.dimension != 2 {
            return bad(format!("problem.dimension = {} must be 1 or 2", p.dimension));
        }
        if p.extents.len() != p.dimension || p.cells.len() != p.dimension {
            return bad("problem.extents and problem.cells need one entry per dimension".into());
        }
        if p.cells.iter().any(|&c| !(2..=4096).contains(&c)) {
            return bad("problem.cells entries must lie in [2, 4096]".into());
        }
        if p.times.iter().any(|t| !(*t > 0.0 && t.is_finite())) || p.times.windows(2).any(|w| w[1] <= w[0]) {
            return bad("problem.times must be positive and strictly increasing".into());
        }
        let s = &self.solver;
        if s.n_arc < 4 {
            return bad("solver.n_arc must be at least 4".into());
        }
        if !(s.ray_panel_width > 0.0 && s.decay > 0.0 && s.realness_tol > 0.0) {
            return bad("solver.ray_panel_width, decay and realness_tol must be positive".into());
        }
        if s.weak_samples.iter().any(|p| !(*p > 0.0)) {
            return bad("solver.weak_samples must be positive".into());
        }
        let d = &self.dtn;
        if d.k < 2 {
            return bad(format!("dtn.k = {} must be at least 2", d.k));
        }
        if !d.points_imag.is_empty() && d.points_imag.len() != d.points.len() {
            return bad("dtn.points_imag must match dtn.points in length".into());
        }
        if d.domain == DtnDomain::Time && d.points.iter().any(|t| !(*t > 0.0)) {
            return bad("dtn.points must be positive times".into());
        }
        if d.from_time && (d.domain != DtnDomain::Laplace || d.points.iter().any(|p| !(*p > 0.0))) {
            return bad("dtn.from_time needs positive real Laplace points".into());
        }
        let i = &self.invert;
        if !(i.p_small > 0.0 && i.p_small < 1.0) {
            return bad(format!("invert.p_small = {} must lie in (0, 1)", i.p_small));
        }
        if !(i.reg_weight >= 0.0) || i.max_iter == 0 {
            return bad("invert.reg_weight must be non-negative and invert.max_iter positive".into());
        }
        if let Some(path) = &i.data {
            if !path.exists() {
                return bad(format!("invert.data: {} does not exist", path.display()));
            }
        }
        let r = &self.resolvent;
        if r.samples == 0 || !(r.r_min > 0.0 && r.r_max >= r.r_min) {
            return bad("resolvent needs samples > 0 and 0 < r_min <= r_max".into());
        }
        let o = &self.oracle;
        if !(o.dt > 0.0) || o.step_cap == 0 {
            return bad("oracle.dt and oracle.step_cap must be positive".into());
        }
        Ok(())
    }

    pub fn subsets(&self) -> Result<vofrac::BoundarySubsetSpec, CliError> {
        Ok(vofrac::BoundarySubsetSpec {
            s_in: self.problem.s_in.to_core("problem.s_in")?,
            s_out: self.problem.s_out.to_core("problem.s_out")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[problem]
dimension = 1
extents = [[0.0, 1.0]]
cells = [16]
alpha = "0.3 + 0.4*x"
rho = 1
times = [0.5]
"#;

    #[test]
    fn defaults_fill_missing_blocks() {
        let c = ExperimentConfig::parse(BASE, "base", &[]).unwrap();
        assert_eq!(c.problem.q, Coefficient::Value(0.0));
        assert_eq!(c.solver.n_arc, 32);
        assert_eq!(c.dtn.k, 2);
        assert_eq!(c.problem.s_in, Subset::default());
    }

    #[test]
    fn unknown_keys_are_named() {
        let text = BASE.replace("alpha =", "alpah = 0.5\nalpha =");
        let e = ExperimentConfig::parse(&text, "base", &[]).unwrap_err();
        assert_eq!(e.code(), 2);
        assert!(e.to_string().contains("alpah"), "{e}");
    }

    #[test]
    fn overrides_replace_and_create_values() {
        let c = ExperimentConfig::parse(
            BASE,
            "base",
            &["solver.theta=2.0".into(), "problem.alpha=0.5".into(), "dtn.k = 3".into()],
        )
        .unwrap();
        assert_eq!(c.solver.theta, 2.0);
        assert_eq!(c.problem.alpha, Coefficient::Value(0.5));
        assert_eq!(c.dtn.k, 3);
        let e = ExperimentConfig::parse(BASE, "base", &["solver.bogus=1".into()]).unwrap_err();
        assert!(e.to_string().contains("bogus"));
        assert!(ExperimentConfig::parse(BASE, "base", &["noequals".into()]).is_err());
    }

    #[test]
    fn range_checks() {
        for o in ["problem.dimension=3", "dtn.k=1", "invert.p_small=2.0", "problem.times=[1.0, 0.5]"] {
            let e = ExperimentConfig::parse(BASE, "base", &[o.into()]).unwrap_err();
            assert_eq!(e.code(), 2, "{o}");
        }
        // the contour angle is checked by the solver, not here
        assert!(ExperimentConfig::parse(BASE, "base", &["solver.theta=1.0".into()]).is_ok());
    }

    #[test]
    fn subsets_parse() {
        let text = BASE.replace("rho = 1", "rho = 1\ns_in = [\"left\"]\ns_out = [1]");
        let c = ExperimentConfig::parse(&text, "base", &[]).unwrap();
        let s = c.subsets().unwrap();
        assert_eq!(s.s_in, vofrac::BoundarySubset::Sides(vec![vofrac::Side::Left]));
        assert_eq!(s.s_out, vofrac::BoundarySubset::Nodes(vec![1]));
    }
}
