//! Small dense linear algebra and fixed-step ODE integration.
//!
//! Matrix factorizations are delegated to nalgebra; this module pins the
//! tolerance conventions (relative SVD cutoffs for rank and null spaces)
//! shared by the analysis modules.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, thiserror::Error)]
pub enum NumericsError {
    #[error("matrix is singular within pivot tolerance {0}")]
    Singular(f64),
    #[error("non-finite state encountered during integration at t = {0}")]
    NonFiniteState(f64),
}

/// Tolerances shared across the analysis modules.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ToleranceConfig {
    /// Relative singular-value cutoff for rank / null-space decisions.
    pub rank_tol: f64,
    /// Finite-difference cross-check tolerance.
    pub fd_tol: f64,
    /// RK4 steps per unit curve parameter.
    pub ode_steps: usize,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig { rank_tol: 1e-8, fd_tol: 1e-6, ode_steps: 2000 }
    }
}

impl ToleranceConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.rank_tol > 0.0) || !(self.fd_tol > 0.0) || self.ode_steps == 0 {
            return Err("tolerances must be strictly positive".into());
        }
        Ok(())
    }
}

/// Orthonormal basis of a subspace of `R^ambient`.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    pub ambient: usize,
    pub vectors: Vec<DVector<f64>>,
    pub tol: f64,
}

impl SubspaceBasis {
    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    /// Distance of `v` from the subspace: norm of the component orthogonal
    /// to the basis, relative to the norm of `v`.
    pub fn distance(&self, v: &DVector<f64>) -> f64 {
        let norm = v.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let mut rem = v.clone();
        for b in &self.vectors {
            let c = b.dot(v);
            rem -= b * c;
        }
        rem.norm() / norm
    }

    /// True if every vector of `other` lies in `self` within `tol` and the
    /// dimensions agree.
    pub fn spans_same(&self, other: &SubspaceBasis, tol: f64) -> bool {
        self.dim() == other.dim()
            && other.vectors.iter().all(|v| self.distance(v) <= tol)
    }
}

/// Inverse via LU with partial pivoting; pivot tolerance 1e-12.
pub fn invert(m: &DMatrix<f64>) -> Result<DMatrix<f64>, NumericsError> {
    assert_eq!(m.nrows(), m.ncols(), "invert requires a square matrix");
    let lu = m.clone().lu();
    match lu.try_inverse() {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => Ok(inv),
        _ => Err(NumericsError::Singular(1e-12)),
    }
}

fn svd_of(m: &DMatrix<f64>) -> nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn> {
    // Pad with zero rows when wide so V is full and the null space complete.
    let padded = if m.nrows() < m.ncols() {
        let mut p = DMatrix::zeros(m.ncols(), m.ncols());
        p.view_mut((0, 0), (m.nrows(), m.ncols())).copy_from(m);
        p
    } else {
        m.clone()
    };
    padded.svd(false, true)
}

/// Orthonormal basis of the numerical null space: right singular vectors
/// whose singular value is at most `rank_tol * max(sigma_max, 1)`. The
/// absolute floor keeps a matrix of pure round-off noise (for instance the
/// curvature constraints of a flat metric, entries `~1e-15`) from acquiring
/// spurious rank under a purely relative cutoff.
pub fn kernel(m: &DMatrix<f64>, rank_tol: f64) -> SubspaceBasis {
    let n = m.ncols();
    if m.nrows() == 0 || n == 0 {
        let vectors = (0..n)
            .map(|i| DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 }))
            .collect();
        return SubspaceBasis { ambient: n, vectors, tol: rank_tol };
    }
    let svd = svd_of(m);
    let v_t = svd.v_t.as_ref().unwrap();
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = rank_tol * sigma_max.max(1.0);
    let mut vectors = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff {
            vectors.push(v_t.row(i).transpose());
        }
    }
    SubspaceBasis { ambient: n, vectors, tol: rank_tol }
}

/// Numerical rank of a set of vectors, relative SVD cutoff.
pub fn rank(vectors: &[DVector<f64>], rank_tol: f64) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let n = vectors[0].len();
    let m = DMatrix::from_fn(vectors.len(), n, |i, j| vectors[i][j]);
    rank_of_matrix(&m, rank_tol)
}

pub fn rank_of_matrix(m: &DMatrix<f64>, rank_tol: f64) -> usize {
    let svd = m.clone().svd(false, false);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if sigma_max == 0.0 {
        return 0;
    }
    svd.singular_values.iter().filter(|&&s| s > rank_tol * sigma_max.max(1.0)).count()
}

/// Singular values sorted descending; diagnostic for borderline rank calls.
pub fn singular_values(vectors: &[DVector<f64>]) -> Vec<f64> {
    if vectors.is_empty() {
        return Vec::new();
    }
    let n = vectors[0].len();
    let m = DMatrix::from_fn(vectors.len(), n, |i, j| vectors[i][j]);
    let mut sv: Vec<f64> = m.svd(false, false).singular_values.iter().cloned().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Classical fixed-step RK4 from `t0` to `t1` with
/// `ceil(steps_per_unit * (t1 - t0))` steps.
pub fn rk4_path<F>(
    field: F,
    t0: f64,
    t1: f64,
    state0: &[f64],
    steps_per_unit: usize,
) -> Result<Vec<f64>, NumericsError>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    assert!(t1 > t0, "rk4_path requires t1 > t0");
    let n_steps = ((steps_per_unit as f64) * (t1 - t0)).ceil().max(1.0) as usize;
    let h = (t1 - t0) / n_steps as f64;
    let mut state = state0.to_vec();
    let mut t = t0;
    let mut scratch = vec![0.0; state.len()];
    for _ in 0..n_steps {
        let k1 = field(t, &state);
        axpy(&mut scratch, &state, &k1, h / 2.0);
        let k2 = field(t + h / 2.0, &scratch);
        axpy(&mut scratch, &state, &k2, h / 2.0);
        let k3 = field(t + h / 2.0, &scratch);
        axpy(&mut scratch, &state, &k3, h);
        let k4 = field(t + h, &scratch);
        for i in 0..state.len() {
            state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t += h;
        if state.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFiniteState(t));
        }
    }
    Ok(state)
}

fn axpy(out: &mut [f64], base: &[f64], dir: &[f64], scale: f64) {
    for i in 0..out.len() {
        out[i] = base[i] + scale * dir[i];
    }
}
