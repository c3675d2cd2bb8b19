//! Spray, connection and curvature objects of a metric.
//!
//! From a [`MetricSpec`] this module generates, once, symbolic components of
//! the geodesic spray `G^i`, the nonlinear connection `N^i_j = dG^i/dy^j`,
//! the Berwald connection `G^h_ij = dN^h_i/dy^j`, the Berwald curvature
//! `G^h_ijk`, the spray curvature `R^i_jk` and the h-curvature `R^h_ijk`.
//! Numeric jets evaluate those expressions at tangent-bundle samples, so one
//! code path feeds both the numeric checks and the symbolic Lie brackets of
//! the holonomy module.
//!
//! For a Finsler norm `F` the spray coefficients use
//! `G^i = 1/4 g^{il} ( y^k d2(F^2)/dy^l dx^k - d(F^2)/dx^l )`
//! with the symbolic inverse `g^{il}` formed from the adjugate and
//! determinant (capped at small dimensions).

use crate::expr::{Axis, EvalError, Evaluator, Expr, Var};
use crate::numerics;
use nalgebra::DMatrix;
use once_cell::sync::OnceCell;

#[derive(Debug, Clone, thiserror::Error)]
pub enum GeometryError {
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("metric tensor is singular at the sample")]
    SingularMetric,
    #[error("invalid tangent sample: {0}")]
    InvalidSample(String),
    #[error("invalid metric specification: {0}")]
    InvalidSpec(String),
    #[error("dimension {dim} exceeds the symbolic-inverse cap {cap}")]
    DimensionTooLarge { dim: usize, cap: usize },
}

/// Riemannian matrix of expressions in `x`, or a Finsler norm in `(x, y)`.
#[derive(Debug, Clone)]
pub enum MetricKind {
    Riemannian(Vec<Vec<Expr>>),
    Finsler(Expr),
}

/// A metric on a chart, with strict-inequality domain constraints
/// (each listed expression must evaluate positive).
#[derive(Debug, Clone)]
pub struct MetricSpec {
    pub name: String,
    pub dim: usize,
    pub kind: MetricKind,
    pub domain: Vec<Expr>,
}

impl MetricSpec {
    pub fn riemannian(
        name: impl Into<String>,
        dim: usize,
        matrix: Vec<Vec<Expr>>,
        domain: Vec<Expr>,
    ) -> Result<Self, GeometryError> {
        if dim < 2 {
            return Err(GeometryError::InvalidSpec("dimension must be at least 2".into()));
        }
        if matrix.len() != dim || matrix.iter().any(|r| r.len() != dim) {
            return Err(GeometryError::InvalidSpec(format!(
                "metric matrix must be {dim}x{dim}"
            )));
        }
        for i in 0..dim {
            for j in 0..dim {
                if matrix[i][j] != matrix[j][i] {
                    return Err(GeometryError::InvalidSpec(format!(
                        "metric matrix not structurally symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
                if !matrix[i][j].is_free_of(Axis::Y) {
                    return Err(GeometryError::InvalidSpec(format!(
                        "riemannian entry ({}, {}) depends on y",
                        i + 1,
                        j + 1
                    )));
                }
                check_indices(matrix[i][j], dim)?;
            }
        }
        for d in &domain {
            check_indices(*d, dim)?;
        }
        Ok(MetricSpec { name: name.into(), dim, kind: MetricKind::Riemannian(matrix), domain })
    }

    pub fn finsler(
        name: impl Into<String>,
        dim: usize,
        norm: Expr,
        domain: Vec<Expr>,
    ) -> Result<Self, GeometryError> {
        if dim < 2 {
            return Err(GeometryError::InvalidSpec("dimension must be at least 2".into()));
        }
        check_indices(norm, dim)?;
        for d in &domain {
            check_indices(*d, dim)?;
        }
        Ok(MetricSpec { name: name.into(), dim, kind: MetricKind::Finsler(norm), domain })
    }

    pub fn is_riemannian(&self) -> bool {
        matches!(self.kind, MetricKind::Riemannian(_))
    }

    /// The norm `F` as an expression (`sqrt(a_ij y^i y^j)` for riemannian).
    pub fn norm_expr(&self) -> Expr {
        match &self.kind {
            MetricKind::Finsler(f) => *f,
            MetricKind::Riemannian(a) => quadratic_energy(a, self.dim).sqrt(),
        }
    }

    /// `F^2`; for riemannian kind this is the quadratic form itself.
    pub fn energy_expr(&self) -> Expr {
        match &self.kind {
            MetricKind::Finsler(f) => f.powi(2),
            MetricKind::Riemannian(a) => quadratic_energy(a, self.dim),
        }
    }

    /// All domain constraints strictly positive at `x`.
    pub fn in_domain(&self, x: &[f64]) -> bool {
        let y0 = vec![0.0; self.dim];
        self.domain
            .iter()
            .all(|d| matches!(d.evaluate(x, &y0), Ok(v) if v > 0.0))
    }

    /// Numeric check of positive 1-homogeneity of `F` in `y` at one sample.
    pub fn homogeneity_residual(&self, sample: &TangentSample) -> Result<f64, GeometryError> {
        let f = self.norm_expr();
        let base = f.evaluate(&sample.x, &sample.y)?;
        let mut worst = 0.0f64;
        for lambda in [0.5, 2.0, 3.0] {
            let scaled: Vec<f64> = sample.y.iter().map(|v| v * lambda).collect();
            let v = f.evaluate(&sample.x, &scaled)?;
            let rel = (v - lambda * base).abs() / (1.0 + (lambda * base).abs());
            worst = worst.max(rel);
        }
        Ok(worst)
    }
}

fn check_indices(e: Expr, dim: usize) -> Result<(), GeometryError> {
    for axis in [Axis::X, Axis::Y] {
        if let Some(i) = e.max_index(axis) {
            if i >= dim {
                return Err(GeometryError::InvalidSpec(format!(
                    "variable index {} exceeds dimension {dim}",
                    i + 1
                )));
            }
        }
    }
    Ok(())
}

fn quadratic_energy(a: &[Vec<Expr>], dim: usize) -> Expr {
    let mut acc = Expr::constant(0.0);
    for i in 0..dim {
        for j in 0..dim {
            let term = a[i][j].mul(Expr::y(i)).mul(Expr::y(j));
            acc = acc.add(term);
        }
    }
    acc
}

/// A point of the slit tangent bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl TangentSample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        TangentSample { x, y }
    }
}

/// All connection and curvature component values at one sample.
#[derive(Debug, Clone)]
pub struct GeometryJet {
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    /// `G^i`
    pub spray: Vec<f64>,
    /// `N^i_j`, row `i`, column `j`
    pub nonlinear: DMatrix<f64>,
    /// `G^h_ij` indexed `[h][i][j]`
    pub berwald: Vec<Vec<Vec<f64>>>,
    /// `G^h_ijk` indexed `[h][i][j][k]`
    pub berwald_curvature: Vec<Vec<Vec<Vec<f64>>>>,
    /// `R^i_jk` indexed `[i][j][k]`, antisymmetric in `j, k`
    pub spray_curvature: Vec<Vec<Vec<f64>>>,
    /// `R^h_ijk` indexed `[h][i][j][k]`
    pub h_curvature: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Frozen symbolic geometry of one metric. Construction generates the spray
/// and connection expressions; curvature tensors are generated on first use
/// and cached.
pub struct Geometry {
    spec: MetricSpec,
    energy: Expr,
    g: Vec<Vec<Expr>>,
    det: Expr,
    g_inv: Vec<Vec<Expr>>,
    spray: Vec<Expr>,
    nonlinear: Vec<Vec<Expr>>,
    berwald: Vec<Vec<Vec<Expr>>>,
    berwald_curvature: OnceCell<Vec<Vec<Vec<Vec<Expr>>>>>,
    spray_curvature: OnceCell<Vec<Vec<Vec<Expr>>>>,
    h_curvature: OnceCell<Vec<Vec<Vec<Vec<Expr>>>>>,
}

pub const DEFAULT_SYMBOLIC_INVERSE_CAP: usize = 4;

impl Geometry {
    pub fn new(spec: MetricSpec) -> Result<Self, GeometryError> {
        Self::with_inverse_cap(spec, DEFAULT_SYMBOLIC_INVERSE_CAP)
    }

    pub fn with_inverse_cap(spec: MetricSpec, cap: usize) -> Result<Self, GeometryError> {
        let n = spec.dim;
        if n > cap {
            return Err(GeometryError::DimensionTooLarge { dim: n, cap });
        }
        let energy = spec.energy_expr();
        // g_ij = 1/2 d2(F^2)/dy_i dy_j; equals a_ij for riemannian kind
        let g: Vec<Vec<Expr>> = match &spec.kind {
            MetricKind::Riemannian(a) => a.clone(),
            MetricKind::Finsler(_) => {
                let half = Expr::constant(0.5);
                (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| {
                                energy
                                    .differentiate(Var::y(i))
                                    .differentiate(Var::y(j))
                                    .mul(half)
                            })
                            .collect()
                    })
                    .collect()
            }
        };
        let det = determinant(&g);
        let g_inv = adjugate_over_det(&g, det);
        // G^i = 1/4 g^{il} ( y^k d2(F^2)/dy^l dx^k - d(F^2)/dx^l )
        let mut spray = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = Expr::constant(0.0);
            for l in 0..n {
                let dl = energy.differentiate(Var::y(l));
                let mut inner = dl.differentiate(Var::x(0)).mul(Expr::y(0));
                for k in 1..n {
                    inner = inner.add(dl.differentiate(Var::x(k)).mul(Expr::y(k)));
                }
                inner = inner.sub(energy.differentiate(Var::x(l)));
                acc = acc.add(g_inv[i][l].mul(inner));
            }
            spray.push(acc.mul(Expr::constant(0.25)).simplify_basic());
        }
        let nonlinear: Vec<Vec<Expr>> = (0..n)
            .map(|i| (0..n).map(|j| spray[i].differentiate(Var::y(j))).collect())
            .collect();
        let berwald: Vec<Vec<Vec<Expr>>> = (0..n)
            .map(|h| {
                (0..n)
                    .map(|i| (0..n).map(|j| nonlinear[h][i].differentiate(Var::y(j))).collect())
                    .collect()
            })
            .collect();
        Ok(Geometry {
            spec,
            energy,
            g,
            det,
            g_inv,
            spray,
            nonlinear,
            berwald,
            berwald_curvature: OnceCell::new(),
            spray_curvature: OnceCell::new(),
            h_curvature: OnceCell::new(),
        })
    }

    pub fn spec(&self) -> &MetricSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn energy_expr(&self) -> Expr {
        self.energy
    }

    pub fn metric_exprs(&self) -> &Vec<Vec<Expr>> {
        &self.g
    }

    pub fn metric_determinant_expr(&self) -> Expr {
        self.det
    }

    pub fn metric_inverse_exprs(&self) -> &Vec<Vec<Expr>> {
        &self.g_inv
    }

    pub fn spray_exprs(&self) -> &[Expr] {
        &self.spray
    }

    pub fn nonlinear_exprs(&self) -> &Vec<Vec<Expr>> {
        &self.nonlinear
    }

    pub fn berwald_exprs(&self) -> &Vec<Vec<Vec<Expr>>> {
        &self.berwald
    }

    pub fn berwald_curvature_exprs(&self) -> &Vec<Vec<Vec<Vec<Expr>>>> {
        self.berwald_curvature.get_or_init(|| {
            let n = self.dim();
            (0..n)
                .map(|h| {
                    (0..n)
                        .map(|i| {
                            (0..n)
                                .map(|j| {
                                    (0..n)
                                        .map(|k| self.berwald[h][i][j].differentiate(Var::y(k)))
                                        .collect()
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
    }

    /// Horizontal derivative `delta f / delta x^i = d_i f - N^m_i dy_m f`.
    pub fn delta(&self, e: Expr, i: usize) -> Expr {
        let n = self.dim();
        let mut acc = e.differentiate(Var::x(i));
        for m in 0..n {
            let t = self.nonlinear[m][i].mul(e.differentiate(Var::y(m)));
            acc = acc.sub(t);
        }
        acc
    }

    /// `R^i_jk = delta N^i_j / delta x^k - delta N^i_k / delta x^j`.
    pub fn spray_curvature_exprs(&self) -> &Vec<Vec<Vec<Expr>>> {
        self.spray_curvature.get_or_init(|| {
            let n = self.dim();
            (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            (0..n)
                                .map(|k| {
                                    self.delta(self.nonlinear[i][j], k)
                                        .sub(self.delta(self.nonlinear[i][k], j))
                                        .simplify_basic()
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
    }

    /// `R^h_ijk = delta G^h_ij/dx^k - delta G^h_ik/dx^j
    ///            + G^h_mk G^m_ij - G^h_mj G^m_ik`.
    pub fn h_curvature_exprs(&self) -> &Vec<Vec<Vec<Vec<Expr>>>> {
        self.h_curvature.get_or_init(|| {
            let n = self.dim();
            (0..n)
                .map(|h| {
                    (0..n)
                        .map(|i| {
                            (0..n)
                                .map(|j| {
                                    (0..n)
                                        .map(|k| {
                                            let mut acc = self
                                                .delta(self.berwald[h][i][j], k)
                                                .sub(self.delta(self.berwald[h][i][k], j));
                                            for m in 0..n {
                                                let p = self.berwald[h][m][k].mul(self.berwald[m][i][j]);
                                                let q = self.berwald[h][m][j].mul(self.berwald[m][i][k]);
                                                acc = acc.add(p).sub(q);
                                            }
                                            acc.simplify_basic()
                                        })
                                        .collect()
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
    }

    /// Sample validity: `y != 0`, domain constraints positive, `F > 0`
    /// (finsler kind) and `g` nonsingular.
    pub fn validate_sample(&self, sample: &TangentSample) -> Result<(), GeometryError> {
        let n = self.dim();
        if sample.x.len() != n || sample.y.len() != n {
            return Err(GeometryError::InvalidSample("wrong dimension".into()));
        }
        if sample.y.iter().all(|v| *v == 0.0) {
            return Err(GeometryError::InvalidSample("y must be nonzero".into()));
        }
        for d in &self.spec.domain {
            let v = d.evaluate(&sample.x, &sample.y)?;
            if !(v > 0.0) {
                return Err(GeometryError::InvalidSample(format!(
                    "domain constraint `{d}` not positive (value {v})"
                )));
            }
        }
        if !self.spec.is_riemannian() {
            let f = self.spec.norm_expr().evaluate(&sample.x, &sample.y)?;
            if !(f > 0.0) {
                return Err(GeometryError::InvalidSample(format!("F = {f} not positive")));
            }
        }
        self.fundamental_tensor(sample)?;
        Ok(())
    }

    /// `g_ij` and `g^ij` at a sample.
    pub fn fundamental_tensor(
        &self,
        sample: &TangentSample,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>), GeometryError> {
        let n = self.dim();
        let mut ev = Evaluator::new(&sample.x, &sample.y);
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] = ev.eval(self.g[i][j])?;
            }
        }
        let g_inv = numerics::invert(&g).map_err(|_| GeometryError::SingularMetric)?;
        Ok((g, g_inv))
    }

    pub fn spray_coefficients(&self, sample: &TangentSample) -> Result<Vec<f64>, GeometryError> {
        let mut ev = Evaluator::new(&sample.x, &sample.y);
        self.spray.iter().map(|e| Ok(ev.eval(*e)?)).collect()
    }

    /// `N^i_j` values, row `i`, column `j`.
    pub fn nonlinear_connection(&self, sample: &TangentSample) -> Result<DMatrix<f64>, GeometryError> {
        let n = self.dim();
        let mut ev = Evaluator::new(&sample.x, &sample.y);
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = ev.eval(self.nonlinear[i][j])?;
            }
        }
        Ok(m)
    }

    pub fn spray_curvature(&self, sample: &TangentSample) -> Result<Vec<Vec<Vec<f64>>>, GeometryError> {
        let exprs = self.spray_curvature_exprs();
        let mut ev = Evaluator::new(&sample.x, &sample.y);
        eval3(exprs, &mut ev)
    }

    pub fn h_curvature(&self, sample: &TangentSample) -> Result<Vec<Vec<Vec<Vec<f64>>>>, GeometryError> {
        let exprs = self.h_curvature_exprs();
        let mut ev = Evaluator::new(&sample.x, &sample.y);
        eval4(exprs, &mut ev)
    }

    pub fn berwald_curvature(&self, sample: &TangentSample) -> Result<Vec<Vec<Vec<Vec<f64>>>>, GeometryError> {
        let exprs = self.berwald_curvature_exprs();
        let mut ev = Evaluator::new(&sample.x, &sample.y);
        eval4(exprs, &mut ev)
    }

    /// Full jet at one sample, evaluated with a shared subtree cache.
    pub fn jet(&self, sample: &TangentSample) -> Result<GeometryJet, GeometryError> {
        let n = self.dim();
        let bc = self.berwald_curvature_exprs().clone();
        let rc = self.spray_curvature_exprs().clone();
        let hc = self.h_curvature_exprs().clone();
        let mut ev = Evaluator::new(&sample.x, &sample.y);
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] = ev.eval(self.g[i][j])?;
            }
        }
        let g_inv = numerics::invert(&g).map_err(|_| GeometryError::SingularMetric)?;
        let spray = self
            .spray
            .iter()
            .map(|e| ev.eval(*e))
            .collect::<Result<Vec<_>, _>>()?;
        let mut nonlinear = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                nonlinear[(i, j)] = ev.eval(self.nonlinear[i][j])?;
            }
        }
        let berwald = eval3(&self.berwald, &mut ev)?;
        let berwald_curvature = eval4(&bc, &mut ev)?;
        let spray_curvature = eval3(&rc, &mut ev)?;
        let h_curvature = eval4(&hc, &mut ev)?;
        Ok(GeometryJet {
            g,
            g_inv,
            spray,
            nonlinear,
            berwald,
            berwald_curvature,
            spray_curvature,
            h_curvature,
        })
    }

    /// Global Berwald test: true iff `max |G^h_ijk|` over the samples stays
    /// below `tol`. Returns the verdict and the max residual.
    pub fn is_berwald(&self, samples: &[TangentSample], tol: f64) -> Result<(bool, f64), GeometryError> {
        let mut max_abs = 0.0f64;
        for s in samples {
            let bc = self.berwald_curvature(s)?;
            for h in &bc {
                for i in h {
                    for j in i {
                        for v in j {
                            max_abs = max_abs.max(v.abs());
                        }
                    }
                }
            }
        }
        Ok((max_abs <= tol, max_abs))
    }

    /// Components of `d_h f`: entry `i` is `d_i f - N^m_i dy_m f`.
    pub fn horizontal_scalar_derivative(
        &self,
        f: Expr,
        sample: &TangentSample,
    ) -> Result<Vec<f64>, GeometryError> {
        let n = self.dim();
        let mut ev = Evaluator::new(&sample.x, &sample.y);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut v = ev.eval(f.differentiate(Var::x(i)))?;
            for m in 0..n {
                v -= ev.eval(self.nonlinear[m][i])? * ev.eval(f.differentiate(Var::y(m)))?;
            }
            out.push(v);
        }
        Ok(out)
    }

    /// Christoffel symbols of a riemannian metric by the direct formula
    /// `1/2 g^{hl} (d_i g_lj + d_j g_li - d_l g_ij)`, evaluated numerically.
    /// Independent route used to cross-check the Berwald coefficients.
    pub fn christoffel_direct(&self, sample: &TangentSample) -> Result<Vec<Vec<Vec<f64>>>, GeometryError> {
        let MetricKind::Riemannian(a) = &self.spec.kind else {
            return Err(GeometryError::InvalidSpec(
                "christoffel_direct requires a riemannian metric".into(),
            ));
        };
        let n = self.dim();
        let mut ev = Evaluator::new(&sample.x, &sample.y);
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] = ev.eval(a[i][j])?;
            }
        }
        let g_inv = numerics::invert(&g).map_err(|_| GeometryError::SingularMetric)?;
        let mut dg = vec![vec![vec![0.0; n]; n]; n]; // dg[k][i][j] = d_k a_ij
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    dg[k][i][j] = ev.eval(a[i][j].differentiate(Var::x(k)))?;
                }
            }
        }
        let mut gamma = vec![vec![vec![0.0; n]; n]; n];
        for h in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for l in 0..n {
                        acc += g_inv[(h, l)] * (dg[i][l][j] + dg[j][l][i] - dg[l][i][j]);
                    }
                    gamma[h][i][j] = 0.5 * acc;
                }
            }
        }
        Ok(gamma)
    }
}

fn eval3(exprs: &[Vec<Vec<Expr>>], ev: &mut Evaluator) -> Result<Vec<Vec<Vec<f64>>>, GeometryError> {
    exprs
        .iter()
        .map(|a| {
            a.iter()
                .map(|b| b.iter().map(|e| Ok(ev.eval(*e)?)).collect())
                .collect()
        })
        .collect()
}

fn eval4(
    exprs: &[Vec<Vec<Vec<Expr>>>],
    ev: &mut Evaluator,
) -> Result<Vec<Vec<Vec<Vec<f64>>>>, GeometryError> {
    exprs
        .iter()
        .map(|a| {
            a.iter()
                .map(|b| {
                    b.iter()
                        .map(|c| c.iter().map(|e| Ok(ev.eval(*e)?)).collect())
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Determinant by cofactor expansion; fine for the capped dimensions.
fn determinant(m: &[Vec<Expr>]) -> Expr {
    let n = m.len();
    if n == 1 {
        return m[0][0];
    }
    let mut acc = Expr::constant(0.0);
    for j in 0..n {
        let minor = minor_matrix(m, 0, j);
        let term = m[0][j].mul(determinant(&minor));
        acc = if j % 2 == 0 { acc.add(term) } else { acc.sub(term) };
    }
    acc
}

fn minor_matrix(m: &[Vec<Expr>], row: usize, col: usize) -> Vec<Vec<Expr>> {
    m.iter()
        .enumerate()
        .filter(|(i, _)| *i != row)
        .map(|(_, r)| {
            r.iter()
                .enumerate()
                .filter(|(j, _)| *j != col)
                .map(|(_, e)| *e)
                .collect()
        })
        .collect()
}

/// `inv[i][l] = cofactor(l, i) / det` (adjugate is the cofactor transpose).
fn adjugate_over_det(m: &[Vec<Expr>], det: Expr) -> Vec<Vec<Expr>> {
    let n = m.len();
    let mut inv = vec![vec![Expr::constant(0.0); n]; n];
    for i in 0..n {
        for l in 0..n {
            let minor = if n == 1 {
                vec![vec![Expr::constant(1.0)]]
            } else {
                minor_matrix(m, l, i)
            };
            let mut cof = determinant(&minor);
            if (i + l) % 2 == 1 {
                cof = cof.neg();
            }
            inv[i][l] = cof.div(det).simplify_basic();
        }
    }
    inv
}
