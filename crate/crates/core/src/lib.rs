//! Variable-order time-fractional diffusion `(ρ ∂_t^{α(x)} + A_q) u = f` on
//! finite-difference grids: contour-quadrature forward solves, resolvent
//! bound checks, Dirichlet-to-Neumann maps and recovery of `(α, ρ, q)`.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod contour;
pub mod dtn;
pub mod error;
pub mod grid;
pub mod inverse;
pub mod linalg;
pub mod oracle;
pub mod quadrature;
pub mod resolvent;

pub use contour::{
    apply_s0, apply_s1, apply_s2, build_contour, solve_forward, ContourOptions, ContourPolicy, ContourQuadrature,
    PowerTerm, Provenance, SolutionSnapshot, Source,
};
pub use dtn::{
    laplace_dtn, laplace_from_time, normal_flux, sample_flux_series, solve_with_boundary, verify_weak_solution,
    BoundaryDrive, DomainTag, DtNRecord, DtnOptions, FluxSeries, FluxStencil, LaplaceField, PanelSchedule,
    WeakSolutionOptions, WeakSolutionReport,
};
pub use error::{Error, Result};
pub use grid::{
    assemble_operator, build_grid, lift_boundary, sample_coefficients, BoundarySubset, BoundarySubsetSpec,
    CoefficientField, CoefficientSpec, EllipticOperator, Side, SpatialGrid,
};
pub use inverse::{
    extract_pointwise, invert_all, recover_potential, time_to_laplace_pipeline, FitOptions, InverseResult,
    LaplaceDataset, PotentialEstimate,
};
pub use oracle::{co_reference_solution, l1_solve, mittag_leffler, EigenReference, L1Options};
pub use resolvent::{resolvent_bound, shifted_solve, verify_bound, BoundReport, ComplexShift, ShiftedSolver};
