//! Fixtures shared by the benchmarks.

use std::f64::consts::PI;

use vofrac::{
    assemble_operator, build_grid, sample_coefficients, BoundarySubsetSpec, CoefficientField, CoefficientSpec,
    EllipticOperator,
};

/// Variable-order phantom on `[0, 1]^dim` with `cells` cells per axis.
pub fn phantom(dim: usize, cells: usize) -> (EllipticOperator, CoefficientField) {
    let grid = build_grid(dim, &vec![[0.0, 1.0]; dim], &vec![cells; dim], &BoundarySubsetSpec::default())
        .expect("valid grid");
    let field = sample_coefficients(
        &CoefficientSpec::expr("0.35 + 0.2*x"),
        &CoefficientSpec::expr("1 + 0.5*y"),
        &CoefficientSpec::expr("1 + x*y"),
        &grid,
    )
    .expect("valid coefficients");
    let op = assemble_operator(&grid, &field).expect("operator assembles");
    (op, field)
}

/// `sin(πx)^3` at the interior nodes.
pub fn bump(op: &EllipticOperator) -> Vec<f64> {
    op.grid().interior().iter().map(|x| (PI * x[0]).sin().powi(3)).collect()
}
