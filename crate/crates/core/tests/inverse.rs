use std::f64::consts::E;

use vofrac::inverse::{laplace_dataset, unit_drives};
use vofrac::{
    assemble_operator, build_grid, invert_all, recover_potential, sample_coefficients, BoundarySubset,
    BoundarySubsetSpec, CoefficientField, CoefficientSpec, EllipticOperator, Error, FitOptions, FluxStencil, Side,
};

fn plate(cells: usize, alpha: &str, rho: &str, q: &str, subsets: &BoundarySubsetSpec) -> (EllipticOperator, CoefficientField) {
    let g = build_grid(2, &[[0.0, 1.0], [0.0, 1.0]], &[cells, cells], subsets).unwrap();
    let f = sample_coefficients(
        &CoefficientSpec::expr(alpha),
        &CoefficientSpec::expr(rho),
        &CoefficientSpec::expr(q),
        &g,
    )
    .unwrap();
    (assemble_operator(&g, &f).unwrap(), f)
}

#[test]
fn smooth_phantom_is_recovered_on_a_coarse_grid() {
    let (op, f) = plate(7, "0.4 + 0.1*y", "1 + 0.3*x", "0.5 + y", &BoundarySubsetSpec::default());
    let drives = unit_drives(&op);
    let data = [1e-6, 1.0, E].map(|p| laplace_dataset(&op, &f, p, &drives, FluxStencil::SecondOrder).unwrap());
    let res = invert_all(&data, &op, &FitOptions::default()).unwrap();
    let e = res.errors_against(&f).unwrap();
    assert!(e.alpha < 5e-2 && e.rho < 5e-2 && e.q < 5e-2, "{e:?}");
    assert_eq!(res.out_of_model_count(), 0);
}

#[test]
fn identical_datasets_give_identical_recoveries() {
    let (op, f) = plate(5, "0.5", "1", "2", &BoundarySubsetSpec::default());
    let drives = unit_drives(&op);
    let data = [1e-6, 1.0, E].map(|p| laplace_dataset(&op, &f, p, &drives, FluxStencil::SecondOrder).unwrap());
    let a = invert_all(&data, &op, &FitOptions::default()).unwrap();
    let b = invert_all(&data.clone(), &op, &FitOptions::default()).unwrap();
    assert_eq!(a.alpha, b.alpha);
    assert_eq!(a.rho, b.rho);
    assert_eq!(a.q, b.q);
}

#[test]
fn disjoint_input_and_output_sides_fit_the_potential() {
    let subsets = BoundarySubsetSpec {
        s_in: BoundarySubset::Sides(vec![Side::parse("left").unwrap(), Side::parse("bottom").unwrap()]),
        s_out: BoundarySubset::Sides(vec![Side::parse("right").unwrap(), Side::parse("top").unwrap()]),
    };
    let (op, f) = plate(5, "0.5", "1", "1 + x", &subsets);
    let drives = unit_drives(&op);
    let data = laplace_dataset(&op, &f, 1.0, &drives, FluxStencil::SecondOrder).unwrap();
    let est = recover_potential(&data, &op, &FitOptions::default()).unwrap();
    assert!(est.residual <= 1e-6, "{}", est.residual);
    assert!(est.warning.is_none());
}

#[test]
fn extraction_points_must_be_ordered() {
    let (op, f) = plate(4, "0.5", "1", "0", &BoundarySubsetSpec::default());
    let drives = unit_drives(&op);
    let data = [1.0, 1e-6, E].map(|p| laplace_dataset(&op, &f, p, &drives, FluxStencil::SecondOrder).unwrap());
    assert!(matches!(invert_all(&data, &op, &FitOptions::default()), Err(Error::DomainError(_))));
}
