//! Nullity and kernel spaces, parallel one-forms and parallel transport.
//!
//! A covector `b_i(x)` is parallel when `d_i b_j - G^r_ij b_r = 0`. The
//! detector combines two independent filters: the algebraic compatibility
//! conditions `b_h R^h_jk = 0` (plus `b_h G^h_ijk = 0` in the Finsler case)
//! at one base point, and the fixed space of the linear transport maps
//! around a finite set of coordinate-rectangle loops. The reported parallel
//! space is their intersection; loop-transport defects are kept as
//! diagnostics.

use crate::expr::{Axis, Expr, Program, Var};
use crate::geometry::{Geometry, GeometryError, MetricKind, MetricSpec, TangentSample};
use crate::numerics::{self, NumericsError, SubspaceBasis};
use nalgebra::{DMatrix, DVector};
use std::cell::RefCell;

#[derive(Debug, Clone, thiserror::Error)]
pub enum ParallelError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("nullity dimension differs across y samples: {0:?}")]
    InconsistentNullity(Vec<usize>),
    #[error("loop vertex {0:?} violates the domain constraints")]
    LoopOutsideDomain(Vec<f64>),
    #[error("loop set is empty")]
    EmptyLoopSet,
    #[error("frozen-reference transport needs a reference tangent vector")]
    MissingReference,
    #[error("operation requires a riemannian metric")]
    RequiresRiemannian,
    #[error("constructed norm not positive at sample x = {0:?}")]
    PositivityViolated(Vec<f64>),
}

/// Tangent reference used by Finsler covector transport (`G^r_ij` depends
/// on `y`). Riemannian transport is policy-independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferencePolicy {
    /// Use the (piecewise-constant) path velocity.
    PathVelocity,
    /// Transport a frozen reference vector alongside the covector.
    FrozenTransported,
}

#[derive(Debug, Clone)]
pub struct TransportOptions {
    pub policy: ReferencePolicy,
    /// Initial reference vector for [`ReferencePolicy::FrozenTransported`].
    pub reference: Option<Vec<f64>>,
    pub steps_per_unit: usize,
}

impl Default for TransportOptions {
    fn default() -> Self {
        TransportOptions { policy: ReferencePolicy::PathVelocity, reference: None, steps_per_unit: 2000 }
    }
}

/// Piecewise-linear path given by its vertices.
#[derive(Debug, Clone)]
pub struct PiecewiseLinearPath {
    pub vertices: Vec<Vec<f64>>,
}

impl PiecewiseLinearPath {
    pub fn new(vertices: Vec<Vec<f64>>) -> Self {
        assert!(vertices.len() >= 2, "path needs at least two vertices");
        PiecewiseLinearPath { vertices }
    }

    pub fn is_loop(&self) -> bool {
        self.vertices.first() == self.vertices.last()
    }

    pub fn reversed(&self) -> Self {
        let mut v = self.vertices.clone();
        v.reverse();
        PiecewiseLinearPath { vertices: v }
    }

    /// Rectangle in the `(i, j)` coordinate 2-plane with side `scale`,
    /// traversed from `base` counterclockwise.
    pub fn coordinate_rectangle(base: &[f64], i: usize, j: usize, scale: f64) -> Self {
        let mut a = base.to_vec();
        a[i] += scale;
        let mut b = a.clone();
        b[j] += scale;
        let mut c = base.to_vec();
        c[j] += scale;
        PiecewiseLinearPath::new(vec![base.to_vec(), a, b, c, base.to_vec()])
    }
}

/// Closed loops through a common base point.
#[derive(Debug, Clone)]
pub struct LoopSet {
    pub base: Vec<f64>,
    pub loops: Vec<PiecewiseLinearPath>,
}

impl LoopSet {
    /// All `C(n, 2)` coordinate rectangles at each scale, vertices checked
    /// against the domain constraints.
    pub fn coordinate_rectangles(
        spec: &MetricSpec,
        base: &[f64],
        scales: &[f64],
    ) -> Result<Self, ParallelError> {
        let n = spec.dim;
        let mut loops = Vec::new();
        for &s in scales {
            for i in 0..n {
                for j in (i + 1)..n {
                    let rect = PiecewiseLinearPath::coordinate_rectangle(base, i, j, s);
                    for v in &rect.vertices {
                        if !spec.in_domain(v) {
                            return Err(ParallelError::LoopOutsideDomain(v.clone()));
                        }
                    }
                    loops.push(rect);
                }
            }
        }
        if loops.is_empty() {
            return Err(ParallelError::EmptyLoopSet);
        }
        Ok(LoopSet { base: base.to_vec(), loops })
    }
}

/// Outcome of the parallel one-form detector at the loop-set base point.
#[derive(Debug, Clone)]
pub struct ParallelVerdict {
    pub algebraic_dim: usize,
    pub holonomy_dim: usize,
    pub final_dim: usize,
    /// Covector basis at the base point.
    pub basis: Vec<DVector<f64>>,
    /// Max `|T b - b|` over loops and reported basis covectors.
    pub max_transport_defect: f64,
}

/// Nullity space `{X : X^m R^h_ijm = 0}` of a riemannian curvature at `x`.
/// The tensor is `y`-independent; extra `y` samples only cross-check the
/// computed dimension.
pub fn nullity_space(
    geom: &Geometry,
    x: &[f64],
    y_samples: &[Vec<f64>],
    rank_tol: f64,
) -> Result<SubspaceBasis, ParallelError> {
    if !geom.spec().is_riemannian() {
        return Err(ParallelError::RequiresRiemannian);
    }
    let n = geom.dim();
    let mut result: Option<SubspaceBasis> = None;
    let mut dims = Vec::new();
    for y in y_samples {
        let r = geom.h_curvature(&TangentSample::new(x.to_vec(), y.clone()))?;
        let mut rows = Vec::new();
        for h in 0..n {
            for i in 0..n {
                for j in 0..n {
                    rows.push((0..n).map(|m| r[h][i][j][m]).collect::<Vec<_>>());
                }
            }
        }
        let m = DMatrix::from_fn(rows.len(), n, |r_, c| rows[r_][c]);
        let k = numerics::kernel(&m, rank_tol);
        dims.push(k.dim());
        result.get_or_insert(k);
    }
    let first = dims.first().copied().unwrap_or(n);
    if dims.iter().any(|d| *d != first) {
        return Err(ParallelError::InconsistentNullity(dims));
    }
    Ok(result.unwrap_or_else(|| numerics::kernel(&DMatrix::zeros(0, n), rank_tol)))
}

/// Kernel space `{X : X^m R^h_mjk = 0}` of a riemannian curvature at `x`.
pub fn kernel_space(
    geom: &Geometry,
    x: &[f64],
    y_probe: &[f64],
    rank_tol: f64,
) -> Result<SubspaceBasis, ParallelError> {
    if !geom.spec().is_riemannian() {
        return Err(ParallelError::RequiresRiemannian);
    }
    let n = geom.dim();
    let r = geom.h_curvature(&TangentSample::new(x.to_vec(), y_probe.to_vec()))?;
    let mut rows = Vec::new();
    for h in 0..n {
        for j in 0..n {
            for k in 0..n {
                rows.push((0..n).map(|m| r[h][m][j][k]).collect::<Vec<_>>());
            }
        }
    }
    let m = DMatrix::from_fn(rows.len(), n, |r_, c| rows[r_][c]);
    Ok(numerics::kernel(&m, rank_tol))
}

/// Covector candidates from the compatibility conditions: kernel of the
/// stacked rows `b_h R^h_jk(x, y) = 0` over the samples and, for finsler
/// kind, `b_h G^h_ijk(x, y) = 0`.
pub fn algebraic_candidate_space(
    geom: &Geometry,
    x: &[f64],
    y_samples: &[Vec<f64>],
    rank_tol: f64,
) -> Result<SubspaceBasis, ParallelError> {
    let n = geom.dim();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for y in y_samples {
        let s = TangentSample::new(x.to_vec(), y.clone());
        let r = geom.spray_curvature(&s)?;
        for j in 0..n {
            for k in (j + 1)..n {
                rows.push((0..n).map(|h| r[h][j][k]).collect());
            }
        }
        if !geom.spec().is_riemannian() {
            let g = geom.berwald_curvature(&s)?;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        rows.push((0..n).map(|h| g[h][i][j][k]).collect());
                    }
                }
            }
        }
    }
    let m = DMatrix::from_fn(rows.len(), n, |r_, c| rows[r_][c]);
    Ok(numerics::kernel(&m, rank_tol))
}

// Compiled `G^r_ij` components, flattened [r][i][j]; the covector rate is
// db_i/dt = b_r G^r_ij(x, w) d^j.
fn berwald_program(geom: &Geometry) -> Program {
    let flat: Vec<Expr> = geom
        .berwald_exprs()
        .iter()
        .flat_map(|a| a.iter().flat_map(|b| b.iter().copied()))
        .collect();
    Program::compile(&flat)
}

// Compiled `N^i_j`, flattened [i][j]; the vector rate is
// dy^i/dt = -N^i_j(x, y) d^j.
fn nonlinear_program(geom: &Geometry) -> Program {
    let flat: Vec<Expr> = geom
        .nonlinear_exprs()
        .iter()
        .flat_map(|row| row.iter().copied())
        .collect();
    Program::compile(&flat)
}

// Integrate one segment, trapping geometry errors raised inside the closure.
fn integrate_segment<F>(
    field: F,
    state: &[f64],
    steps: usize,
) -> Result<Vec<f64>, ParallelError>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>, GeometryError>,
{
    let trapped: RefCell<Option<GeometryError>> = RefCell::new(None);
    let dim = state.len();
    let wrapped = |t: f64, s: &[f64]| match field(t, s) {
        Ok(v) => v,
        Err(e) => {
            trapped.borrow_mut().get_or_insert(e);
            vec![f64::NAN; dim]
        }
    };
    let out = numerics::rk4_path(wrapped, 0.0, 1.0, state, steps);
    if let Some(e) = trapped.into_inner() {
        return Err(e.into());
    }
    Ok(out?)
}

// Translate several covectors (the columns of `cols`) simultaneously along
// a path; one rate-matrix evaluation serves all columns.
fn transport_covectors(
    geom: &Geometry,
    path: &PiecewiseLinearPath,
    cols: &DMatrix<f64>,
    opts: &TransportOptions,
) -> Result<DMatrix<f64>, ParallelError> {
    let n = geom.dim();
    let k = cols.ncols();
    let frozen = opts.policy == ReferencePolicy::FrozenTransported;
    let g_prog = berwald_program(geom);
    let n_prog = frozen.then(|| nonlinear_program(geom));
    let scratch = RefCell::new(Vec::new());
    let g_buf = RefCell::new(vec![0.0; n * n * n]);
    let n_buf = RefCell::new(vec![0.0; n * n]);
    // state = column-major covector block, then the frozen reference
    let mut state: Vec<f64> = cols.as_slice().to_vec();
    if frozen {
        state.extend(opts.reference.clone().ok_or(ParallelError::MissingReference)?);
    }
    for seg in path.vertices.windows(2) {
        let (p, q) = (&seg[0], &seg[1]);
        let d: Vec<f64> = (0..n).map(|i| q[i] - p[i]).collect();
        if d.iter().all(|v| *v == 0.0) {
            continue;
        }
        state = integrate_segment(
            |t, s| {
                let x: Vec<f64> = (0..n).map(|i| p[i] + t * d[i]).collect();
                let w = if frozen { &s[n * k..] } else { &d[..] };
                let mut sc = scratch.borrow_mut();
                let mut g = g_buf.borrow_mut();
                g_prog.eval_into(&x, w, &mut sc, &mut g).map_err(GeometryError::from)?;
                let mut rate = vec![0.0; s.len()];
                for c in 0..k {
                    let b = &s[c * n..(c + 1) * n];
                    for i in 0..n {
                        let mut acc = 0.0;
                        for r in 0..n {
                            if b[r] != 0.0 {
                                for j in 0..n {
                                    acc += b[r] * g[(r * n + i) * n + j] * d[j];
                                }
                            }
                        }
                        rate[c * n + i] = acc;
                    }
                }
                if frozen {
                    let mut nb = n_buf.borrow_mut();
                    n_prog
                        .as_ref()
                        .unwrap()
                        .eval_into(&x, w, &mut sc, &mut nb)
                        .map_err(GeometryError::from)?;
                    for i in 0..n {
                        rate[n * k + i] = -(0..n).map(|j| nb[i * n + j] * d[j]).sum::<f64>();
                    }
                }
                Ok(rate)
            },
            &state,
            opts.steps_per_unit,
        )?;
    }
    Ok(DMatrix::from_column_slice(n, k, &state[..n * k]))
}

/// Parallel-translate the covector `b0` along `path`. Linear in `b0`.
pub fn transport_covector(
    geom: &Geometry,
    path: &PiecewiseLinearPath,
    b0: &DVector<f64>,
    opts: &TransportOptions,
) -> Result<DVector<f64>, ParallelError> {
    let n = geom.dim();
    let cols = DMatrix::from_column_slice(n, 1, b0.as_slice());
    let out = transport_covectors(geom, path, &cols, opts)?;
    Ok(out.column(0).into_owned())
}

/// Nonlinear parallel translation of the tangent vector `v0` along `path`:
/// integrates `dy^i/dt = -N^i_j y'^j`.
pub fn transport_vector(
    geom: &Geometry,
    path: &PiecewiseLinearPath,
    v0: &[f64],
    steps_per_unit: usize,
) -> Result<Vec<f64>, ParallelError> {
    let n = geom.dim();
    let n_prog = nonlinear_program(geom);
    let scratch = RefCell::new(Vec::new());
    let n_buf = RefCell::new(vec![0.0; n * n]);
    let mut y = v0.to_vec();
    for seg in path.vertices.windows(2) {
        let (p, q) = (&seg[0], &seg[1]);
        let d: Vec<f64> = (0..n).map(|i| q[i] - p[i]).collect();
        if d.iter().all(|v| *v == 0.0) {
            continue;
        }
        y = integrate_segment(
            |t, s| {
                let x: Vec<f64> = (0..n).map(|i| p[i] + t * d[i]).collect();
                let mut sc = scratch.borrow_mut();
                let mut nb = n_buf.borrow_mut();
                n_prog.eval_into(&x, s, &mut sc, &mut nb).map_err(GeometryError::from)?;
                Ok((0..n)
                    .map(|i| -(0..n).map(|j| nb[i * n + j] * d[j]).sum::<f64>())
                    .collect())
            },
            &y,
            steps_per_unit,
        )?;
    }
    Ok(y)
}

/// Transport map of a loop on covectors, column `i` = transport of `e_i`.
pub fn loop_transport_map(
    geom: &Geometry,
    path: &PiecewiseLinearPath,
    opts: &TransportOptions,
) -> Result<DMatrix<f64>, ParallelError> {
    let n = geom.dim();
    transport_covectors(geom, path, &DMatrix::identity(n, n), opts)
}

/// Common fixed space of all loop transports: kernel of stacked `T - I`.
/// Also returns the individual transport maps for diagnostics.
pub fn holonomy_fixed_space(
    geom: &Geometry,
    loops: &LoopSet,
    opts: &TransportOptions,
    rank_tol: f64,
) -> Result<(SubspaceBasis, Vec<DMatrix<f64>>), ParallelError> {
    if loops.loops.is_empty() {
        return Err(ParallelError::EmptyLoopSet);
    }
    let n = geom.dim();
    let mut maps = Vec::with_capacity(loops.loops.len());
    let mut stacked = DMatrix::zeros(loops.loops.len() * n, n);
    for (k, l) in loops.loops.iter().enumerate() {
        let t = loop_transport_map(geom, l, opts)?;
        stacked
            .view_mut((k * n, 0), (n, n))
            .copy_from(&(&t - DMatrix::<f64>::identity(n, n)));
        maps.push(t);
    }
    Ok((numerics::kernel(&stacked, rank_tol), maps))
}

/// Intersection of two subspaces: kernel of the stacked complementary
/// projectors `I - P_a`, `I - P_b`.
pub fn intersect(a: &SubspaceBasis, b: &SubspaceBasis, rank_tol: f64) -> SubspaceBasis {
    let n = a.ambient;
    assert_eq!(n, b.ambient, "ambient dimensions differ");
    let proj = |basis: &SubspaceBasis| {
        let mut p = DMatrix::<f64>::identity(n, n);
        for v in &basis.vectors {
            p -= v * v.transpose();
        }
        p
    };
    let mut stacked = DMatrix::zeros(2 * n, n);
    stacked.view_mut((0, 0), (n, n)).copy_from(&proj(a));
    stacked.view_mut((n, 0), (n, n)).copy_from(&proj(b));
    numerics::kernel(&stacked, rank_tol)
}

/// Full parallel one-form detector at the loop-set base point.
pub fn parallel_form_basis(
    geom: &Geometry,
    loops: &LoopSet,
    y_samples: &[Vec<f64>],
    opts: &TransportOptions,
    rank_tol: f64,
) -> Result<ParallelVerdict, ParallelError> {
    let candidates = algebraic_candidate_space(geom, &loops.base, y_samples, rank_tol)?;
    let (fixed, maps) = holonomy_fixed_space(geom, loops, opts, rank_tol)?;
    let joint = intersect(&candidates, &fixed, rank_tol);
    let mut defect = 0.0f64;
    for t in &maps {
        for v in &joint.vectors {
            defect = defect.max((t * v - v).norm());
        }
    }
    Ok(ParallelVerdict {
        algebraic_dim: candidates.dim(),
        holonomy_dim: fixed.dim(),
        final_dim: joint.dim(),
        basis: joint.vectors,
        max_transport_defect: defect,
    })
}

/// `beta = b_i(x) y^i` as an expression.
pub fn one_form_expr(b: &[Expr]) -> Expr {
    let mut acc = Expr::constant(0.0);
    for (i, bi) in b.iter().enumerate() {
        acc = acc.add(bi.mul(Expr::y(i)));
    }
    acc
}

/// Max residual of the parallel system for a closed-form covector:
/// `max(|d_h beta|_i, |S.beta|)` over the samples.
pub fn verify_parallel_form_exprs(
    geom: &Geometry,
    b: &[Expr],
    samples: &[TangentSample],
) -> Result<f64, ParallelError> {
    let n = geom.dim();
    let beta = one_form_expr(b);
    // S.beta = y^i d_i beta - 2 G^i dy_i beta
    let mut s_beta = Expr::constant(0.0);
    for i in 0..n {
        s_beta = s_beta.add(Expr::y(i).mul(beta.differentiate(Var::x(i))));
        let two_g = Expr::constant(2.0).mul(geom.spray_exprs()[i]);
        s_beta = s_beta.sub(two_g.mul(beta.differentiate(Var::y(i))));
    }
    let mut worst = 0.0f64;
    for s in samples {
        for v in geom.horizontal_scalar_derivative(beta, s)? {
            worst = worst.max(v.abs());
        }
        worst = worst.max(s_beta.evaluate(&s.x, &s.y).map_err(GeometryError::from)?.abs());
    }
    Ok(worst)
}

/// A covector known at one point, extended elsewhere by straight-line
/// parallel transport from the base point.
#[derive(Debug, Clone)]
pub struct CovectorField {
    pub base: Vec<f64>,
    pub b0: DVector<f64>,
}

impl CovectorField {
    /// `b(x)` by transport along the straight segment from the base.
    pub fn value_at(
        &self,
        geom: &Geometry,
        x: &[f64],
        opts: &TransportOptions,
    ) -> Result<DVector<f64>, ParallelError> {
        if x == self.base.as_slice() {
            return Ok(self.b0.clone());
        }
        let path = PiecewiseLinearPath::new(vec![self.base.clone(), x.to_vec()]);
        transport_covector(geom, &path, &self.b0, opts)
    }
}

/// Max residual of `|d_h beta|` and `|S.beta|` for a transport-reconstructed
/// covector field; `d_j b_i` comes from a fourth-order stencil on the
/// reconstruction (step `fd_h`).
pub fn verify_parallel_form(
    geom: &Geometry,
    form: &CovectorField,
    samples: &[TangentSample],
    opts: &TransportOptions,
    fd_h: f64,
) -> Result<f64, ParallelError> {
    let n = geom.dim();
    let mut worst = 0.0f64;
    for s in samples {
        let b = form.value_at(geom, &s.x, opts)?;
        // db[j][i] = d_j b_i via (-f2 + 8 f1 - 8 fm1 + fm2) / (12 h)
        let mut db = vec![vec![0.0; n]; n];
        for j in 0..n {
            let shift = |t: f64| -> Result<DVector<f64>, ParallelError> {
                let mut x = s.x.clone();
                x[j] += t;
                form.value_at(geom, &x, opts)
            };
            let (f2, f1, fm1, fm2) =
                (shift(2.0 * fd_h)?, shift(fd_h)?, shift(-fd_h)?, shift(-2.0 * fd_h)?);
            for i in 0..n {
                db[j][i] = (-f2[i] + 8.0 * f1[i] - 8.0 * fm1[i] + fm2[i]) / (12.0 * fd_h);
            }
        }
        let nonlinear = geom.nonlinear_connection(s)?;
        let spray = geom.spray_coefficients(s)?;
        // d_h beta components: y^j d_i b_j - N^r_i b_r
        for i in 0..n {
            let mut v = 0.0;
            for j in 0..n {
                v += s.y[j] * db[i][j];
            }
            for r in 0..n {
                v -= nonlinear[(r, i)] * b[r];
            }
            worst = worst.max(v.abs());
        }
        // S.beta = y^i y^j d_i b_j - 2 G^i b_i
        let mut sv = 0.0;
        for i in 0..n {
            for j in 0..n {
                sv += s.y[i] * s.y[j] * db[i][j];
            }
            sv -= 2.0 * spray[i] * b[i];
        }
        worst = worst.max(sv.abs());
    }
    Ok(worst)
}

/// Indices satisfying the sufficient conditions for a parallel one-form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SufficientScan {
    /// `mu` with `R^mu_hij = 0` (riemannian) or `R^mu_jk = 0` and
    /// `G^mu_ijk = 0` (finsler) at every sample.
    pub vanishing: Vec<usize>,
    /// `mu` with `G^mu = 0` at every sample (constant form `c_mu y^mu`).
    pub zero_spray: Vec<usize>,
}

pub fn sufficient_condition_scan(
    geom: &Geometry,
    samples: &[TangentSample],
    tol: f64,
) -> Result<SufficientScan, ParallelError> {
    let n = geom.dim();
    let mut max_curv = vec![0.0f64; n];
    let mut max_spray = vec![0.0f64; n];
    for s in samples {
        if geom.spec().is_riemannian() {
            let r = geom.h_curvature(s)?;
            for mu in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            max_curv[mu] = max_curv[mu].max(r[mu][i][j][k].abs());
                        }
                    }
                }
            }
        } else {
            let r = geom.spray_curvature(s)?;
            let g = geom.berwald_curvature(s)?;
            for mu in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        max_curv[mu] = max_curv[mu].max(r[mu][j][k].abs());
                        for i in 0..n {
                            max_curv[mu] = max_curv[mu].max(g[mu][i][j][k].abs());
                        }
                    }
                }
            }
        }
        let spray = geom.spray_coefficients(s)?;
        for mu in 0..n {
            max_spray[mu] = max_spray[mu].max(spray[mu].abs());
        }
    }
    Ok(SufficientScan {
        vanishing: (0..n).filter(|&mu| max_curv[mu] <= tol).collect(),
        zero_spray: (0..n).filter(|&mu| max_spray[mu] <= tol).collect(),
    })
}

/// Symmetric covariant tensor with expression components in `x`, stored
/// row-major over all `dim^order` index tuples.
#[derive(Debug, Clone)]
pub struct SymmetricTensorField {
    pub dim: usize,
    pub order: usize,
    pub components: Vec<Expr>,
}

impl SymmetricTensorField {
    pub fn new(dim: usize, order: usize, components: Vec<Expr>) -> Self {
        assert_eq!(components.len(), dim.pow(order as u32));
        SymmetricTensorField { dim, order, components }
    }

    pub fn from_matrix(m: &[Vec<Expr>]) -> Self {
        let dim = m.len();
        let mut components = Vec::with_capacity(dim * dim);
        for row in m {
            components.extend_from_slice(row);
        }
        SymmetricTensorField { dim, order: 2, components }
    }

    /// `Q(x, y) = T_{i..k} y^i .. y^k`.
    pub fn induced_function(&self) -> Expr {
        let mut acc = Expr::constant(0.0);
        for (flat, t) in self.components.iter().enumerate() {
            let mut term = *t;
            let mut rest = flat;
            for _ in 0..self.order {
                term = term.mul(Expr::y(rest % self.dim));
                rest /= self.dim;
            }
            acc = acc.add(term);
        }
        acc
    }
}

/// Max `|d_h Q|` over the samples for `Q` induced by the tensor; vanishes
/// when the tensor is parallel.
pub fn induced_invariant_check(
    geom: &Geometry,
    tensor: &SymmetricTensorField,
    samples: &[TangentSample],
) -> Result<f64, ParallelError> {
    let q = tensor.induced_function();
    let mut worst = 0.0f64;
    for s in samples {
        for v in geom.horizontal_scalar_derivative(q, s)? {
            worst = worst.max(v.abs());
        }
    }
    Ok(worst)
}

/// Randers metric `F = alpha + beta` from a riemannian metric and a parallel
/// covector; returns the new spec and the max spray mismatch over samples.
pub fn construct_berwald(
    geom: &Geometry,
    b: &[Expr],
    samples: &[TangentSample],
) -> Result<(MetricSpec, f64), ParallelError> {
    let MetricKind::Riemannian(_) = geom.spec().kind else {
        return Err(ParallelError::RequiresRiemannian);
    };
    for bi in b {
        if !bi.is_free_of(Axis::Y) {
            return Err(GeometryError::InvalidSpec("form components must not depend on y".into()).into());
        }
    }
    let alpha = geom.spec().norm_expr();
    let f = alpha.add(one_form_expr(b));
    for s in samples {
        let v = f.evaluate(&s.x, &s.y).map_err(GeometryError::from)?;
        if !(v > 0.0) {
            return Err(ParallelError::PositivityViolated(s.x.clone()));
        }
    }
    let spec = MetricSpec::finsler(
        format!("{}-randers", geom.spec().name),
        geom.dim(),
        f,
        geom.spec().domain.clone(),
    )?;
    let randers = Geometry::new(spec)?;
    let mut worst = 0.0f64;
    for s in samples {
        let ga = geom.spray_coefficients(s)?;
        let gf = randers.spray_coefficients(s)?;
        for i in 0..geom.dim() {
            worst = worst.max((gf[i] - ga[i]).abs());
        }
    }
    Ok((randers.spec().clone(), worst))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example1() -> Geometry {
        let dim = 4;
        let mut a = vec![vec![Expr::constant(0.0); dim]; dim];
        a[0][0] = parse_expr("x2*x3", dim).unwrap();
        for i in 1..dim {
            a[i][i] = Expr::constant(1.0);
        }
        Geometry::new(
            MetricSpec::riemannian("ex1", dim, a, vec![Expr::x(1), Expr::x(2)]).unwrap(),
        )
        .unwrap()
    }

    fn example3() -> Geometry {
        let dim = 4;
        let mut a = vec![vec![Expr::constant(0.0); dim]; dim];
        a[0][0] = Expr::x(1);
        a[1][1] = Expr::x(0);
        a[2][2] = Expr::x(3);
        a[3][3] = Expr::x(2);
        let domain = (0..4).map(Expr::x).collect();
        Geometry::new(MetricSpec::riemannian("ex3", dim, a, domain).unwrap()).unwrap()
    }

    fn example5() -> Geometry {
        let f = parse_expr("sqrt(sqrt(y1^4 + x1*x2*y2^4 + y3^4) + y3^2)", 3).unwrap();
        Geometry::new(MetricSpec::finsler("ex5", 3, f, vec![Expr::x(0), Expr::x(1)]).unwrap())
            .unwrap()
    }

    fn euclidean(dim: usize) -> Geometry {
        let mut a = vec![vec![Expr::constant(0.0); dim]; dim];
        for i in 0..dim {
            a[i][i] = Expr::constant(1.0);
        }
        Geometry::new(MetricSpec::riemannian("euclidean", dim, a, vec![]).unwrap()).unwrap()
    }

    fn sphere2() -> Geometry {
        let mut a = vec![vec![Expr::constant(0.0); 2]; 2];
        a[0][0] = Expr::constant(1.0);
        a[1][1] = parse_expr("sin(x1)^2", 2).unwrap();
        let domain = vec![parse_expr("sin(x1)", 2).unwrap()];
        Geometry::new(MetricSpec::riemannian("sphere2", 2, a, domain).unwrap()).unwrap()
    }

    fn random_ys(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| (0..n).map(|_| rng.gen_range(0.25..1.75)).collect())
            .collect()
    }

    #[test]
    fn example1_nullity_dimension_and_basis() {
        let geom = example1();
        let x = vec![0.0, 1.0, 2.0, 0.0];
        let k = nullity_space(&geom, &x, &random_ys(4, 3, 1), 1e-8).unwrap();
        assert_eq!(k.dim(), 2);
        // span{x2 d2 + x3 d3, d4} at x2=1, x3=2
        let v1 = DVector::from_vec(vec![0.0, 1.0, 2.0, 0.0]);
        let v2 = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]);
        assert!(k.distance(&v1) < 1e-8);
        assert!(k.distance(&v2) < 1e-8);
    }

    #[test]
    fn example1_kernel_matches_nullity() {
        let geom = example1();
        let x = vec![0.3, 1.4, 0.8, -0.2];
        let y = vec![1.0, 0.5, -0.5, 1.0];
        let nullity = nullity_space(&geom, &x, &[y.clone()], 1e-8).unwrap();
        let kernel = kernel_space(&geom, &x, &y, 1e-8).unwrap();
        assert!(nullity.spans_same(&kernel, 1e-8));
    }

    #[test]
    fn flat_nullity_is_full_and_sphere_trivial() {
        let geom = euclidean(3);
        let x = vec![0.1, 0.2, 0.3];
        let k = nullity_space(&geom, &x, &random_ys(3, 2, 2), 1e-8).unwrap();
        assert_eq!(k.dim(), 3);

        let sph = sphere2();
        let x = vec![1.0, 0.5];
        let k = nullity_space(&sph, &x, &random_ys(2, 2, 3), 1e-8).unwrap();
        assert_eq!(k.dim(), 0);
        let ker = kernel_space(&sph, &x, &[1.0, 1.0], 1e-8).unwrap();
        assert_eq!(ker.dim(), 0);
    }

    #[test]
    fn algebraic_candidates_example3_empty() {
        let geom = example3();
        let x = vec![1.0, 1.2, 0.9, 1.1];
        let k = algebraic_candidate_space(&geom, &x, &random_ys(4, 8, 4), 1e-8).unwrap();
        assert_eq!(k.dim(), 0);
    }

    #[test]
    fn algebraic_candidates_example5_direction() {
        let geom = example5();
        let x = vec![1.0, 1.0, 0.2];
        let k = algebraic_candidate_space(&geom, &x, &random_ys(3, 8, 5), 1e-8).unwrap();
        assert_eq!(k.dim(), 1);
        let e3 = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        assert!(k.distance(&e3) < 1e-8);
    }

    #[test]
    fn transport_constant_path_is_identity() {
        let geom = example1();
        let x = vec![0.0, 1.0, 2.0, 0.0];
        let path = PiecewiseLinearPath::new(vec![x.clone(), x.clone()]);
        let b0 = DVector::from_vec(vec![0.3, -0.2, 0.5, 1.0]);
        let out = transport_covector(&geom, &path, &b0, &TransportOptions::default()).unwrap();
        assert!((out - b0).norm() < 1e-14);
    }

    #[test]
    fn example1_dx4_loop_invariant() {
        let geom = example1();
        let x = vec![0.0, 1.0, 2.0, 0.0];
        let rect = PiecewiseLinearPath::coordinate_rectangle(&x, 1, 2, 0.3);
        let b0 = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]);
        let out = transport_covector(&geom, &rect, &b0, &TransportOptions::default()).unwrap();
        assert!((out - b0).norm() < 1e-8);
    }

    #[test]
    fn transport_linearity_and_reversal() {
        let geom = example1();
        let x = vec![0.1, 1.1, 1.9, 0.0];
        let rect = PiecewiseLinearPath::coordinate_rectangle(&x, 0, 1, 0.3);
        let opts = TransportOptions::default();
        let b0 = DVector::from_vec(vec![1.0, -0.5, 0.25, 0.7]);
        let b1 = DVector::from_vec(vec![0.2, 0.4, -1.0, 0.1]);
        let combo = 0.7 * &b0 + 1.3 * &b1;
        let t_combo = transport_covector(&geom, &rect, &combo, &opts).unwrap();
        let t0 = transport_covector(&geom, &rect, &b0, &opts).unwrap();
        let t1 = transport_covector(&geom, &rect, &b1, &opts).unwrap();
        assert!((t_combo - (0.7 * t0.clone() + 1.3 * t1)).norm() < 1e-10);
        // forward then reversed returns the start
        let back = transport_covector(&geom, &rect.reversed(), &t0, &opts).unwrap();
        assert!((back - b0).norm() < 1e-8);
    }

    #[test]
    fn riemannian_vector_transport_matches_covector_duality() {
        // lower v with g at the start, transport both, compare at the end
        let geom = example1();
        let path = PiecewiseLinearPath::new(vec![
            vec![0.0, 1.0, 2.0, 0.0],
            vec![0.2, 1.3, 1.8, 0.1],
            vec![0.1, 1.5, 2.2, -0.1],
        ]);
        let v0 = vec![0.6, -0.3, 0.8, 0.5];
        let s0 = TangentSample::new(path.vertices[0].clone(), vec![1.0; 4]);
        let s1 = TangentSample::new(path.vertices[2].clone(), vec![1.0; 4]);
        let (g0, _) = geom.fundamental_tensor(&s0).unwrap();
        let (g1, _) = geom.fundamental_tensor(&s1).unwrap();
        let b0 = &g0 * DVector::from_vec(v0.clone());
        let v1 = transport_vector(&geom, &path, &v0, 2000).unwrap();
        let b1 = transport_covector(&geom, &path, &b0, &TransportOptions::default()).unwrap();
        let lowered = &g1 * DVector::from_vec(v1);
        assert!((lowered - b1).norm() < 1e-8);
    }

    #[test]
    fn example1_parallel_form_verdict() {
        let geom = example1();
        let x = vec![0.0, 1.0, 2.0, 0.0];
        let loops = LoopSet::coordinate_rectangles(geom.spec(), &x, &[0.1, 0.3]).unwrap();
        let verdict = parallel_form_basis(
            &geom,
            &loops,
            &random_ys(4, 8, 6),
            &TransportOptions::default(),
            1e-8,
        )
        .unwrap();
        assert_eq!(verdict.final_dim, 1);
        let dx4 = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]);
        let b = &verdict.basis[0];
        assert!((b.dot(&dx4).abs() - 1.0).abs() < 1e-8, "basis {b:?}");
        assert!(verdict.max_transport_defect < 1e-8);
    }

    #[test]
    fn example3_parallel_form_verdict_empty() {
        let geom = example3();
        let x = vec![1.0, 1.2, 0.9, 1.1];
        let loops = LoopSet::coordinate_rectangles(geom.spec(), &x, &[0.1, 0.3]).unwrap();
        let verdict = parallel_form_basis(
            &geom,
            &loops,
            &random_ys(4, 8, 7),
            &TransportOptions::default(),
            1e-8,
        )
        .unwrap();
        assert_eq!(verdict.algebraic_dim, 0);
        assert_eq!(verdict.final_dim, 0);
    }

    #[test]
    fn example5_parallel_form_verdict() {
        let geom = example5();
        let x = vec![1.0, 1.0, 0.2];
        let loops = LoopSet::coordinate_rectangles(geom.spec(), &x, &[0.1, 0.3]).unwrap();
        let opts = TransportOptions {
            policy: ReferencePolicy::FrozenTransported,
            reference: Some(vec![1.0, 0.8, 0.9]),
            steps_per_unit: 2000,
        };
        let verdict =
            parallel_form_basis(&geom, &loops, &random_ys(3, 8, 8), &opts, 1e-8).unwrap();
        assert_eq!(verdict.final_dim, 1);
        let e3 = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        assert!((verdict.basis[0].dot(&e3).abs() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn verify_closed_forms() {
        let geom = example1();
        let b = vec![
            Expr::constant(0.0),
            Expr::constant(0.0),
            Expr::constant(0.0),
            Expr::constant(1.0),
        ];
        let samples: Vec<TangentSample> = random_ys(4, 10, 9)
            .into_iter()
            .zip(random_ys(4, 10, 10))
            .map(|(x, y)| TangentSample::new(x, y))
            .collect();
        assert!(verify_parallel_form_exprs(&geom, &b, &samples).unwrap() < 1e-8);

        let geom5 = example5();
        let b5 = vec![Expr::constant(0.0), Expr::constant(0.0), Expr::constant(1.0)];
        let samples5: Vec<TangentSample> = random_ys(3, 10, 11)
            .into_iter()
            .zip(random_ys(3, 10, 12))
            .map(|(x, y)| TangentSample::new(x, y))
            .collect();
        assert!(verify_parallel_form_exprs(&geom5, &b5, &samples5).unwrap() < 1e-8);

        // a generic covector on example 3 is far from parallel
        let geom3 = example3();
        let b3 = vec![
            Expr::constant(1.0),
            Expr::constant(0.5),
            Expr::constant(-0.3),
            Expr::constant(0.8),
        ];
        let samples3: Vec<TangentSample> = random_ys(4, 10, 13)
            .into_iter()
            .zip(random_ys(4, 10, 14))
            .map(|(x, y)| TangentSample::new(x, y))
            .collect();
        assert!(verify_parallel_form_exprs(&geom3, &b3, &samples3).unwrap() > 1e-2);
    }

    #[test]
    fn verify_reconstructed_form() {
        let geom = example1();
        let form = CovectorField {
            base: vec![0.0, 1.0, 2.0, 0.0],
            b0: DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]),
        };
        let samples: Vec<TangentSample> = random_ys(4, 5, 15)
            .into_iter()
            .zip(random_ys(4, 5, 16))
            .map(|(x, y)| TangentSample::new(x, y))
            .collect();
        let res =
            verify_parallel_form(&geom, &form, &samples, &TransportOptions::default(), 1e-2)
                .unwrap();
        assert!(res < 1e-6, "residual {res}");
    }

    #[test]
    fn sufficient_scan_results() {
        let samples1: Vec<TangentSample> = random_ys(4, 20, 17)
            .into_iter()
            .zip(random_ys(4, 20, 18))
            .map(|(x, y)| TangentSample::new(x, y))
            .collect();
        // example 1: R^4_hij = 0 and G^4 = 0
        let scan = sufficient_condition_scan(&example1(), &samples1, 1e-10).unwrap();
        assert_eq!(scan.vanishing, vec![3]);
        assert_eq!(scan.zero_spray, vec![3]);
        // example 3: nothing vanishes
        let scan = sufficient_condition_scan(&example3(), &samples1, 1e-10).unwrap();
        assert!(scan.vanishing.is_empty());
        assert!(scan.zero_spray.is_empty());
        // example 5: index 3 with zero spray coefficient
        let samples5: Vec<TangentSample> = random_ys(3, 20, 19)
            .into_iter()
            .zip(random_ys(3, 20, 20))
            .map(|(x, y)| TangentSample::new(x, y))
            .collect();
        let scan = sufficient_condition_scan(&example5(), &samples5, 1e-10).unwrap();
        assert_eq!(scan.vanishing, vec![2]);
        assert_eq!(scan.zero_spray, vec![2]);
    }

    #[test]
    fn induced_invariant_metric_is_parallel() {
        let geom = example1();
        let samples: Vec<TangentSample> = random_ys(4, 10, 21)
            .into_iter()
            .zip(random_ys(4, 10, 22))
            .map(|(x, y)| TangentSample::new(x, y))
            .collect();
        let metric = SymmetricTensorField::from_matrix(geom.metric_exprs());
        assert!(induced_invariant_check(&geom, &metric, &samples).unwrap() < 1e-8);

        // a_ij + dx4 (x) dx4 is again parallel
        let mut plus = geom.metric_exprs().clone();
        plus[3][3] = plus[3][3].add(Expr::constant(1.0));
        let t = SymmetricTensorField::from_matrix(&plus);
        assert!(induced_invariant_check(&geom, &t, &samples).unwrap() < 1e-8);

        // x1 * a_ij is not parallel
        let scaled: Vec<Vec<Expr>> = geom
            .metric_exprs()
            .iter()
            .map(|row| row.iter().map(|e| e.mul(Expr::x(0))).collect())
            .collect();
        let t = SymmetricTensorField::from_matrix(&scaled);
        assert!(induced_invariant_check(&geom, &t, &samples).unwrap() > 1e-2);
    }

    #[test]
    fn construct_berwald_example1() {
        let geom = example1();
        let b = vec![
            Expr::constant(0.0),
            Expr::constant(0.0),
            Expr::constant(0.0),
            Expr::constant(0.5),
        ];
        let samples: Vec<TangentSample> = random_ys(4, 10, 23)
            .into_iter()
            .zip(random_ys(4, 10, 24))
            .map(|(x, y)| TangentSample::new(x, y))
            .collect();
        let (spec, residual) = construct_berwald(&geom, &b, &samples).unwrap();
        assert!(!spec.is_riemannian());
        assert!(residual < 1e-7, "residual {residual}");
        // zero form reproduces alpha exactly
        let zero = vec![Expr::constant(0.0); 4];
        let (_, residual) = construct_berwald(&geom, &zero, &samples).unwrap();
        assert!(residual < 1e-12);
    }

    #[test]
    fn intersect_subspaces() {
        let a = numerics::kernel(&DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]), 1e-8);
        let b = numerics::kernel(&DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]), 1e-8);
        let i = intersect(&a, &b, 1e-8);
        assert_eq!(i.dim(), 1);
        assert!(i.vectors[0][0].abs() > 0.99);
    }
}
