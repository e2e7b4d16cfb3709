//! Uniform finite-difference grids on an interval or a rectangle, nodal
//! coefficient fields, the Dirichlet operator `A_q = -div(a grad) + q` and the
//! discrete-harmonic boundary lifting.

use std::fmt;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};
use crate::linalg::{BandLu, BandMatrix};

/// Side of the interval or rectangle a boundary node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub fn parse(s: &str) -> Option<Side> {
        match s.to_ascii_lowercase().as_str() {
            "left" => Some(Side::Left),
            "right" => Some(Side::Right),
            "bottom" => Some(Side::Bottom),
            "top" => Some(Side::Top),
            _ => None,
        }
    }
}

/// Selection of boundary nodes used for `S_in` or `S_out`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum BoundarySubset {
    /// Every boundary node except rectangle corners, which the 5-point
    /// stencil never couples to the interior.
    #[default]
    Full,
    Sides(Vec<Side>),
    /// Explicit indices into the boundary node list.
    Nodes(Vec<usize>),
}

/// Selection of `S_in` and `S_out`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundarySubsetSpec {
    pub s_in: BoundarySubset,
    pub s_out: BoundarySubset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryNode {
    pub coord: [f64; 2],
    /// Outward unit normal. Corners carry the normal of their left/right side.
    pub normal: [f64; 2],
    pub side: Side,
    pub corner: bool,
    lattice: [usize; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    Interior(usize),
    Boundary(usize),
}

/// Uniform grid on `[a, b]` or `[a, b] × [c, d]`.
///
/// `intervals[k]` is the number of cells along axis `k`, so the axis carries
/// `intervals[k] - 1` interior nodes. Interior nodes are numbered with the
/// x index running fastest; boundary nodes run counterclockwise from the
/// lower-left corner.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    dimension: usize,
    extents: Vec<[f64; 2]>,
    intervals: Vec<usize>,
    h: Vec<f64>,
    interior: Vec<[f64; 2]>,
    boundary: Vec<BoundaryNode>,
    s_in: Vec<usize>,
    s_out: Vec<usize>,
    lattice: Vec<Option<NodeRef>>,
}

impl SpatialGrid {
    pub fn dimension(&self) -> usize {
        self.dimension
    }
    pub fn extents(&self) -> &[[f64; 2]] {
        &self.extents
    }
    pub fn intervals(&self) -> &[usize] {
        &self.intervals
    }
    pub fn h(&self) -> &[f64] {
        &self.h
    }
    pub fn interior(&self) -> &[[f64; 2]] {
        &self.interior
    }
    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }
    pub fn boundary(&self) -> &[BoundaryNode] {
        &self.boundary
    }
    pub fn n_boundary(&self) -> usize {
        self.boundary.len()
    }
    pub fn s_in(&self) -> &[usize] {
        &self.s_in
    }
    pub fn s_out(&self) -> &[usize] {
        &self.s_out
    }

    /// Interior-node count along the x axis; the matrix half-bandwidth.
    pub fn bandwidth(&self) -> usize {
        if self.dimension == 1 {
            1
        } else {
            self.intervals[0] - 1
        }
    }

    fn lattice_dims(&self) -> [usize; 2] {
        if self.dimension == 1 {
            [self.intervals[0] + 1, 1]
        } else {
            [self.intervals[0] + 1, self.intervals[1] + 1]
        }
    }

    /// Node at lattice position `(i, j)`; `None` outside the lattice or on a
    /// position that is neither interior nor boundary.
    pub fn node_at(&self, i: isize, j: isize) -> Option<NodeRef> {
        let [nx, ny] = self.lattice_dims();
        if i < 0 || j < 0 || i as usize >= nx || j as usize >= ny {
            return None;
        }
        self.lattice[j as usize * nx + i as usize]
    }

    pub fn boundary_lattice(&self, b: usize) -> [usize; 2] {
        self.boundary[b].lattice
    }

    /// Interior nodes `m = 1, 2` steps inward from boundary node `b` along
    /// its normal. Either may be a boundary node (corners, tiny grids).
    pub(crate) fn inward_neighbors(&self, b: usize) -> [Option<NodeRef>; 2] {
        let node = &self.boundary[b];
        let [i, j] = node.lattice;
        let di = -node.normal[0].round() as isize;
        let dj = -node.normal[1].round() as isize;
        let at = |m: isize| self.node_at(i as isize + m * di, j as isize + m * dj);
        [at(1), at(2)]
    }

    /// Mesh spacing along the normal of boundary node `b`.
    pub(crate) fn normal_spacing(&self, b: usize) -> f64 {
        if self.boundary[b].normal[0] != 0.0 {
            self.h[0]
        } else {
            self.h[1]
        }
    }

    fn resolve_subset(&self, subset: &BoundarySubset, label: &str) -> Result<Vec<usize>> {
        let out: Vec<usize> = match subset {
            BoundarySubset::Full => (0..self.boundary.len())
                .filter(|&b| !self.boundary[b].corner)
                .collect(),
            BoundarySubset::Sides(sides) => (0..self.boundary.len())
                .filter(|&b| !self.boundary[b].corner && sides.contains(&self.boundary[b].side))
                .collect(),
            BoundarySubset::Nodes(idx) => {
                let mut v = idx.clone();
                v.sort_unstable();
                v.dedup();
                if let Some(&bad) = v.iter().find(|&&b| b >= self.boundary.len()) {
                    return Err(Error::InvalidBoundarySpec(format!(
                        "{label} index {bad} out of range (boundary has {} nodes)",
                        self.boundary.len()
                    )));
                }
                v
            }
        };
        if out.is_empty() {
            return Err(Error::InvalidBoundarySpec(format!("{label} is empty")));
        }
        Ok(out)
    }
}

/// Builds a uniform grid. `n_per_axis` counts cells, so `n = 4` on `[0, 1]`
/// gives interior nodes `{0.25, 0.5, 0.75}`.
pub fn build_grid(
    dimension: usize,
    extents: &[[f64; 2]],
    n_per_axis: &[usize],
    subsets: &BoundarySubsetSpec,
) -> Result<SpatialGrid> {
    if dimension != 1 && dimension != 2 {
        return Err(Error::InvalidGrid(format!("dimension {dimension} not in {{1, 2}}")));
    }
    if extents.len() != dimension || n_per_axis.len() != dimension {
        return Err(Error::InvalidGrid(format!(
            "expected {dimension} extents and cell counts, got {} and {}",
            extents.len(),
            n_per_axis.len()
        )));
    }
    for (k, (&[lo, hi], &n)) in extents.iter().zip(n_per_axis).enumerate() {
        if n < 2 {
            return Err(Error::InvalidGrid(format!("axis {k}: need at least 2 cells, got {n}")));
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidGrid(format!("axis {k}: empty extent [{lo}, {hi}]")));
        }
    }
    let h: Vec<f64> = extents
        .iter()
        .zip(n_per_axis)
        .map(|(&[lo, hi], &n)| (hi - lo) / n as f64)
        .collect();
    let coord = |axis: usize, i: usize| -> f64 {
        let [lo, hi] = extents[axis];
        if i == n_per_axis[axis] {
            hi
        } else {
            lo + i as f64 * h[axis]
        }
    };

    let mut interior = Vec::new();
    let mut boundary = Vec::new();
    let (nx, ny) = (n_per_axis[0], if dimension == 2 { n_per_axis[1] } else { 0 });
    let mut lattice = vec![None; (nx + 1) * (ny + 1)];

    if dimension == 1 {
        for i in 1..nx {
            lattice[i] = Some(NodeRef::Interior(interior.len()));
            interior.push([coord(0, i), 0.0]);
        }
        for (i, side, nrm) in [(0, Side::Left, -1.0), (nx, Side::Right, 1.0)] {
            lattice[i] = Some(NodeRef::Boundary(boundary.len()));
            boundary.push(BoundaryNode {
                coord: [coord(0, i), 0.0],
                normal: [nrm, 0.0],
                side,
                corner: false,
                lattice: [i, 0],
            });
        }
    } else {
        for j in 1..ny {
            for i in 1..nx {
                lattice[j * (nx + 1) + i] = Some(NodeRef::Interior(interior.len()));
                interior.push([coord(0, i), coord(1, j)]);
            }
        }
        let mut push = |i: usize, j: usize, side: Side, normal: [f64; 2], corner: bool| {
            lattice[j * (nx + 1) + i] = Some(NodeRef::Boundary(boundary.len()));
            boundary.push(BoundaryNode {
                coord: [coord(0, i), coord(1, j)],
                normal,
                side,
                corner,
                lattice: [i, j],
            });
        };
        for i in 0..=nx {
            let corner = i == 0 || i == nx;
            let normal = if i == 0 {
                [-1.0, 0.0]
            } else if i == nx {
                [1.0, 0.0]
            } else {
                [0.0, -1.0]
            };
            let side = if i == 0 {
                Side::Left
            } else if i == nx {
                Side::Right
            } else {
                Side::Bottom
            };
            push(i, 0, side, normal, corner);
        }
        for j in 1..=ny {
            let corner = j == ny;
            push(nx, j, Side::Right, [1.0, 0.0], corner);
        }
        for i in (0..nx).rev() {
            let corner = i == 0;
            let (side, normal) = if corner {
                (Side::Left, [-1.0, 0.0])
            } else {
                (Side::Top, [0.0, 1.0])
            };
            push(i, ny, side, normal, corner);
        }
        for j in (1..ny).rev() {
            push(0, j, Side::Left, [-1.0, 0.0], false);
        }
    }

    let mut grid = SpatialGrid {
        dimension,
        extents: extents.to_vec(),
        intervals: n_per_axis.to_vec(),
        h,
        interior,
        boundary,
        s_in: Vec::new(),
        s_out: Vec::new(),
        lattice,
    };
    grid.s_in = grid.resolve_subset(&subsets.s_in, "S_in")?;
    grid.s_out = grid.resolve_subset(&subsets.s_out, "S_out")?;
    Ok(grid)
}

/// How a coefficient is specified: a constant, an arithmetic expression in
/// `x` and `y` (with `exp`, `sin`, `cos`, `pi`, ...), a table of interior
/// node values, or a closure.
#[derive(Clone)]
pub enum CoefficientSpec {
    Constant(f64),
    Expr(String),
    Table(Vec<f64>),
    Function(Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>),
}

impl fmt::Debug for CoefficientSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefficientSpec::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            CoefficientSpec::Expr(s) => f.debug_tuple("Expr").field(s).finish(),
            CoefficientSpec::Table(t) => f.debug_tuple("Table").field(&t.len()).finish(),
            CoefficientSpec::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl CoefficientSpec {
    pub fn function(f: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static) -> Self {
        CoefficientSpec::Function(Arc::new(f))
    }

    pub fn expr(s: impl Into<String>) -> Self {
        CoefficientSpec::Expr(s.into())
    }

    /// Evaluates the coefficient at the given points.
    pub fn sample(&self, points: &[[f64; 2]]) -> Result<Vec<f64>> {
        match self {
            CoefficientSpec::Constant(c) => Ok(vec![*c; points.len()]),
            CoefficientSpec::Expr(s) => {
                let f = compile_expr(s)?;
                Ok(points.iter().map(|p| f(p[0], p[1])).collect())
            }
            CoefficientSpec::Table(t) => {
                if t.len() != points.len() {
                    return Err(Error::ShapeError(format!(
                        "table has {} values for {} nodes",
                        t.len(),
                        points.len()
                    )));
                }
                Ok(t.clone())
            }
            CoefficientSpec::Function(f) => Ok(points.iter().map(|&p| f(p)).collect()),
        }
    }
}

/// Compiles an expression in `x` and `y`.
pub fn compile_expr(s: &str) -> Result<impl Fn(f64, f64) -> f64> {
    let expr: meval::Expr = s
        .parse()
        .map_err(|e| Error::Expression(format!("`{s}`: {e}")))?;
    expr.bind2("x", "y")
        .map_err(|e| Error::Expression(format!("`{s}`: {e}")))
}

/// Compiles an expression in `t`, `x` and `y`.
pub fn compile_expr_txy(s: &str) -> Result<impl Fn(f64, f64, f64) -> f64> {
    let expr: meval::Expr = s
        .parse()
        .map_err(|e| Error::Expression(format!("`{s}`: {e}")))?;
    expr.bind3("t", "x", "y")
        .map_err(|e| Error::Expression(format!("`{s}`: {e}")))
}

/// Nodal values of α, ρ and q with their recorded bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub alpha: Vec<f64>,
    pub rho: Vec<f64>,
    pub q: Vec<f64>,
    pub alpha0: f64,
    pub alpha_m: f64,
    pub rho0: f64,
    pub rho_m: f64,
}

impl CoefficientField {
    /// Validates nodal values and records their bounds.
    pub fn new(alpha: Vec<f64>, rho: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() || alpha.len() != rho.len() || alpha.len() != q.len() {
            return Err(Error::ShapeError(format!(
                "coefficient lengths differ or are empty: alpha {}, rho {}, q {}",
                alpha.len(),
                rho.len(),
                q.len()
            )));
        }
        for (node, &a) in alpha.iter().enumerate() {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::InvalidOrder { node, value: a });
            }
        }
        for (node, &r) in rho.iter().enumerate() {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidDensity { node, value: r });
            }
        }
        for (node, &v) in q.iter().enumerate() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidPotential { node, value: v });
            }
        }
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(CoefficientField {
            alpha0: min(&alpha),
            alpha_m: max(&alpha),
            rho0: min(&rho),
            rho_m: max(&rho),
            alpha,
            rho,
            q,
        })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn has_constant_order(&self) -> bool {
        self.alpha_m == self.alpha0
    }

    pub fn has_constant_density(&self) -> bool {
        self.rho_m == self.rho0
    }

    /// Nodal `q + ρ p^α` for a shift `p` on the principal branch.
    pub fn potential(&self, p: Complex64) -> Vec<Complex64> {
        let lp = p.ln();
        self.alpha
            .iter()
            .zip(&self.rho)
            .zip(&self.q)
            .map(|((&a, &r), &q)| q + r * (lp * a).exp())
            .collect()
    }
}

/// Samples α, ρ and q at the interior nodes.
pub fn sample_coefficients(
    alpha: &CoefficientSpec,
    rho: &CoefficientSpec,
    q: &CoefficientSpec,
    grid: &SpatialGrid,
) -> Result<CoefficientField> {
    let pts = grid.interior();
    CoefficientField::new(alpha.sample(pts)?, rho.sample(pts)?, q.sample(pts)?)
}

/// Constant diagonal diffusion tensor `diag(a_xx, a_yy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionTensor {
    pub diag: [f64; 2],
}

impl Default for DiffusionTensor {
    fn default() -> Self {
        DiffusionTensor { diag: [1.0, 1.0] }
    }
}

impl DiffusionTensor {
    pub fn ellipticity(&self, dimension: usize) -> f64 {
        self.diag[..dimension].iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Dirichlet discretization of `A_q` on a [`SpatialGrid`].
#[derive(Debug, Clone)]
pub struct EllipticOperator {
    grid: Arc<SpatialGrid>,
    diffusion: DiffusionTensor,
    ellipticity: f64,
    laplacian: CsMat<f64>,
    q: Vec<f64>,
    /// `(interior node, boundary node, weight)`: `(A_0 u)_k` picks up
    /// `-weight * u_b` from boundary values.
    coupling: Vec<(usize, usize, f64)>,
    lift_lu: OnceLock<std::result::Result<Arc<BandLu<f64>>, Error>>,
}

impl EllipticOperator {
    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }
    pub fn grid_arc(&self) -> Arc<SpatialGrid> {
        Arc::clone(&self.grid)
    }
    pub fn diffusion(&self) -> DiffusionTensor {
        self.diffusion
    }
    pub fn ellipticity(&self) -> f64 {
        self.ellipticity
    }
    pub fn n(&self) -> usize {
        self.q.len()
    }
    pub fn q(&self) -> &[f64] {
        &self.q
    }
    /// The `q = 0` part `A_0`.
    pub fn laplacian(&self) -> &CsMat<f64> {
        &self.laplacian
    }
    pub fn coupling(&self) -> &[(usize, usize, f64)] {
        &self.coupling
    }

    /// Assembled `A_q = A_0 + diag(q)`.
    pub fn matrix(&self) -> CsMat<f64> {
        let mut tri = TriMat::new((self.n(), self.n()));
        for (v, (i, j)) in self.laplacian.iter() {
            tri.add_triplet(i, j, *v);
        }
        for (i, &qi) in self.q.iter().enumerate() {
            if qi != 0.0 {
                tri.add_triplet(i, i, qi);
            }
        }
        tri.to_csr()
    }

    /// Same stencil with a different nodal potential.
    pub fn with_potential(&self, q: Vec<f64>) -> Result<EllipticOperator> {
        if q.len() != self.n() {
            return Err(Error::ShapeError(format!(
                "potential has {} values for {} nodes",
                q.len(),
                self.n()
            )));
        }
        Ok(EllipticOperator {
            q,
            lift_lu: OnceLock::new(),
            ..self.clone()
        })
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for (i, row) in self.laplacian.outer_iterator().enumerate() {
            out[i] = row.iter().map(|(j, v)| v * u[j]).sum::<f64>() + self.q[i] * u[i];
        }
        out
    }

    /// `(A_q + diag(shift)) u` for complex `u`.
    pub fn apply_shifted(&self, shift: &[Complex64], u: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.n()];
        for (i, row) in self.laplacian.outer_iterator().enumerate() {
            let mut acc: Complex64 = row.iter().map(|(j, v)| u[j] * *v).sum();
            acc += u[i] * (self.q[i] + shift[i]);
            out[i] = acc;
        }
        out
    }

    /// Band form of `A_0 + diag(diag)`.
    pub fn band_with_diagonal<T>(&self, diag: &[T]) -> BandMatrix<T>
    where
        T: nalgebra::ComplexField<RealField = f64> + Copy + From<f64>,
    {
        let bw = self.grid.bandwidth();
        let mut band = BandMatrix::zeros(self.n(), bw, bw);
        for (v, (i, j)) in self.laplacian.iter() {
            band.add(i, j, T::from(*v));
        }
        for (i, d) in diag.iter().enumerate() {
            band.add(i, i, *d);
        }
        band
    }

    /// `C g`: the interior right-hand side produced by boundary values `g`.
    pub fn boundary_rhs(&self, g: &[f64]) -> Vec<f64> {
        let mut rhs = vec![0.0; self.n()];
        for &(k, b, w) in &self.coupling {
            rhs[k] += w * g[b];
        }
        rhs
    }

    /// Dense copy, for eigen-solver oracles at desk scale.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.n();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for (v, (i, j)) in self.laplacian.iter() {
            m[(i, j)] += *v;
        }
        for i in 0..n {
            m[(i, i)] += self.q[i];
        }
        m
    }

    fn lift_factor(&self) -> Result<Arc<BandLu<f64>>> {
        self.lift_lu
            .get_or_init(|| {
                let zeros = vec![0.0; self.n()];
                self.band_with_diagonal(&zeros).factor().map(Arc::new)
            })
            .clone()
    }
}

/// Assembles `A_q` with the identity diffusion tensor.
pub fn assemble_operator(grid: &SpatialGrid, field: &CoefficientField) -> Result<EllipticOperator> {
    assemble_operator_with(grid, field, DiffusionTensor::default())
}

pub fn assemble_operator_with(
    grid: &SpatialGrid,
    field: &CoefficientField,
    diffusion: DiffusionTensor,
) -> Result<EllipticOperator> {
    let n = grid.n_interior();
    if field.len() != n {
        return Err(Error::ShapeError(format!(
            "field has {} nodes, grid has {n} interior nodes",
            field.len()
        )));
    }
    let d = grid.dimension();
    if diffusion.diag[..d].iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::ShapeError(format!(
            "diffusion tensor {:?} is not elliptic",
            diffusion.diag
        )));
    }
    let mut tri = TriMat::new((n, n));
    let mut coupling = Vec::new();
    let [nx, ny] = if d == 1 {
        [grid.intervals()[0], 0]
    } else {
        [grid.intervals()[0], grid.intervals()[1]]
    };
    let rows: Vec<usize> = if d == 1 { vec![0] } else { (1..ny).collect() };
    for j in rows {
        for i in 1..nx {
            let Some(NodeRef::Interior(k)) = grid.node_at(i as isize, j as isize) else {
                unreachable!("lattice position ({i}, {j}) must be interior");
            };
            let mut diag = 0.0;
            for axis in 0..d {
                let w = diffusion.diag[axis] / (grid.h()[axis] * grid.h()[axis]);
                diag += 2.0 * w;
                for step in [-1isize, 1] {
                    let (ii, jj) = if axis == 0 {
                        (i as isize + step, j as isize)
                    } else {
                        (i as isize, j as isize + step)
                    };
                    match grid.node_at(ii, jj) {
                        Some(NodeRef::Interior(m)) => tri.add_triplet(k, m, -w),
                        Some(NodeRef::Boundary(b)) => coupling.push((k, b, w)),
                        None => unreachable!("stencil left the lattice"),
                    }
                }
            }
            tri.add_triplet(k, k, diag);
        }
    }
    Ok(EllipticOperator {
        grid: Arc::new(grid.clone()),
        diffusion,
        ellipticity: diffusion.ellipticity(d),
        laplacian: tri.to_csr(),
        q: field.q.clone(),
        coupling,
        lift_lu: OnceLock::new(),
    })
}

/// Discrete-harmonic extension of boundary data.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryLift {
    pub interior: Vec<f64>,
    pub trace: Vec<f64>,
}

/// Solves `A_0 G = C g`, i.e. the discrete Laplace problem with `G = g` on
/// the boundary.
pub fn lift_boundary(g: &[f64], grid: &SpatialGrid, operator: &EllipticOperator) -> Result<BoundaryLift> {
    if g.len() != grid.n_boundary() {
        return Err(Error::ShapeError(format!(
            "boundary data has {} values, grid has {} boundary nodes",
            g.len(),
            grid.n_boundary()
        )));
    }
    if operator.grid() != grid {
        return Err(Error::ShapeError("operator was assembled on a different grid".into()));
    }
    let lu = operator
        .lift_factor()
        .map_err(|e| Error::LiftingFailure(e.to_string()))?;
    let interior = lu.solve(&operator.boundary_rhs(g));
    if interior.iter().any(|v| !v.is_finite()) {
        return Err(Error::LiftingFailure("non-finite lifting".into()));
    }
    Ok(BoundaryLift {
        interior,
        trace: g.to_vec(),
    })
}
