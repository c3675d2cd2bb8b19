//! Holonomy distribution of a spray and its rank.
//!
//! The distribution is generated by the horizontal frame
//! `h_i = d/dx^i - N^j_i d/dy^j` and its successive Lie brackets. The
//! metrizability freedom is estimated as `mu_S = 2n - rank` at generic
//! samples, with left-normed brackets `[h_i, [ ... ]]` generated level by
//! level until the rank stabilizes or a depth cap is hit.

use crate::expr::{Evaluator, Expr, Var};
use crate::geometry::{Geometry, GeometryError, TangentSample};
use crate::numerics;
use nalgebra::DVector;
use std::collections::HashSet;

pub const DEFAULT_NODE_BUDGET: usize = 2_000_000;
pub const DEFAULT_DEPTH: usize = 4;

#[derive(Debug, Clone, thiserror::Error)]
pub enum HolonomyError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("bracket component grew to {nodes} nodes, over the budget {budget}")]
    NodeBudgetExceeded { nodes: usize, budget: usize },
    #[error("holonomy rank needs at least one sample")]
    NoSamples,
}

/// Vector field on `TM`: first `n` components are the `d/dx` block, the
/// last `n` the `d/dy` block.
#[derive(Debug, Clone)]
pub struct TmVectorField {
    pub label: String,
    pub components: Vec<Expr>,
}

impl TmVectorField {
    pub fn dim(&self) -> usize {
        self.components.len() / 2
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.is_const(0.0))
    }

    pub fn evaluate(&self, sample: &TangentSample) -> Result<DVector<f64>, HolonomyError> {
        let mut ev = Evaluator::new(&sample.x, &sample.y);
        let vals = self
            .components
            .iter()
            .map(|c| ev.eval(*c))
            .collect::<Result<Vec<_>, _>>()
            .map_err(GeometryError::from)?;
        Ok(DVector::from_vec(vals))
    }

    fn node_count(&self) -> usize {
        self.components.iter().map(|c| c.node_count()).sum()
    }
}

/// The horizontal frame `h_i = d/dx^i - N^j_i d/dy^j`.
pub fn horizontal_frame(geom: &Geometry) -> Vec<TmVectorField> {
    let n = geom.dim();
    let zero = Expr::constant(0.0);
    (0..n)
        .map(|i| {
            let mut components = vec![zero; 2 * n];
            components[i] = Expr::constant(1.0);
            for j in 0..n {
                components[n + j] = geom.nonlinear_exprs()[j][i].neg().simplify_basic();
            }
            TmVectorField { label: format!("h_{}", i + 1), components }
        })
        .collect()
}

/// `[a, b]^k = a^m d_m b^k - b^m d_m a^k` over the 2n chart coordinates.
pub fn lie_bracket(
    a: &TmVectorField,
    b: &TmVectorField,
    node_budget: usize,
) -> Result<TmVectorField, HolonomyError> {
    let n = a.dim();
    assert_eq!(n, b.dim(), "bracket of fields on different charts");
    let coord = |m: usize| if m < n { Var::x(m) } else { Var::y(m - n) };
    let mut components = Vec::with_capacity(2 * n);
    for k in 0..2 * n {
        let mut acc = Expr::constant(0.0);
        for m in 0..2 * n {
            if !a.components[m].is_const(0.0) {
                acc = acc.add(a.components[m].mul(b.components[k].differentiate(coord(m))));
            }
            if !b.components[m].is_const(0.0) {
                acc = acc.sub(b.components[m].mul(a.components[k].differentiate(coord(m))));
            }
        }
        components.push(acc.simplify_basic());
    }
    let field = TmVectorField { label: format!("[{}, {}]", a.label, b.label), components };
    let nodes = field.node_count();
    if nodes > node_budget {
        return Err(HolonomyError::NodeBudgetExceeded { nodes, budget: node_budget });
    }
    Ok(field)
}

// Generate levels of left-normed brackets. Level 0 is the frame; level 1
// holds [h_i, h_j] (i < j); level k >= 2 holds [h_i, f] for f in level k-1.
// Zero and duplicate fields are pruned structurally.
struct BracketLevels {
    frame: Vec<TmVectorField>,
    levels: Vec<Vec<TmVectorField>>,
    seen: HashSet<Vec<Expr>>,
}

impl BracketLevels {
    fn new(geom: &Geometry) -> Self {
        let frame = horizontal_frame(geom);
        let mut seen = HashSet::new();
        for f in &frame {
            seen.insert(f.components.clone());
        }
        BracketLevels { frame, levels: Vec::new(), seen }
    }

    fn extend_one_level(&mut self, node_budget: usize) -> Result<&[TmVectorField], HolonomyError> {
        let n = self.frame.len();
        let mut next = Vec::new();
        if self.levels.is_empty() {
            for i in 0..n {
                for j in (i + 1)..n {
                    let f = lie_bracket(&self.frame[i], &self.frame[j], node_budget)?;
                    if !f.is_zero() && self.seen.insert(f.components.clone()) {
                        next.push(f);
                    }
                }
            }
        } else {
            let last = self.levels.last().unwrap();
            let mut brackets = Vec::new();
            for h in &self.frame {
                for f in last {
                    brackets.push(lie_bracket(h, f, node_budget)?);
                }
            }
            for f in brackets {
                if !f.is_zero() && self.seen.insert(f.components.clone()) {
                    next.push(f);
                }
            }
        }
        self.levels.push(next);
        Ok(self.levels.last().unwrap())
    }

    fn all_fields(&self) -> impl Iterator<Item = &TmVectorField> {
        self.frame.iter().chain(self.levels.iter().flatten())
    }
}

/// Rank of the holonomy distribution at one sample using brackets up to
/// `depth` (depth 1 = frame plus first brackets).
pub fn holonomy_rank(
    geom: &Geometry,
    sample: &TangentSample,
    depth: usize,
    rank_tol: f64,
) -> Result<usize, HolonomyError> {
    holonomy_rank_budgeted(geom, sample, depth, rank_tol, DEFAULT_NODE_BUDGET)
}

pub fn holonomy_rank_budgeted(
    geom: &Geometry,
    sample: &TangentSample,
    depth: usize,
    rank_tol: f64,
    node_budget: usize,
) -> Result<usize, HolonomyError> {
    assert!(depth >= 1, "depth must be at least 1");
    let mut gen = BracketLevels::new(geom);
    for _ in 0..depth {
        if gen.extend_one_level(node_budget)?.is_empty() {
            break;
        }
    }
    let vectors = gen
        .all_fields()
        .map(|f| f.evaluate(sample))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(numerics::rank(&vectors, rank_tol))
}

/// Per-sample holonomy ranks and the derived metrizability freedom.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct FreedomReport {
    pub rank_per_sample: Vec<usize>,
    pub depth_reached: usize,
    pub max_rank: usize,
    /// `mu_S = 2n - max_rank`.
    pub mu_s: usize,
    /// Set when one more bracket level changed no sample's rank (or no new
    /// nonzero bracket appeared).
    pub stabilized: bool,
}

/// Estimate `mu_S` at generic points: grow bracket levels until every
/// sample's rank is unchanged by the next level, up to `depth` levels.
pub fn metrizability_freedom(
    geom: &Geometry,
    samples: &[TangentSample],
    depth: usize,
    rank_tol: f64,
    node_budget: usize,
) -> Result<FreedomReport, HolonomyError> {
    if samples.is_empty() {
        return Err(HolonomyError::NoSamples);
    }
    let n = geom.dim();
    let mut gen = BracketLevels::new(geom);
    let mut vectors: Vec<Vec<DVector<f64>>> = vec![Vec::new(); samples.len()];
    for (k, s) in samples.iter().enumerate() {
        for f in &gen.frame {
            vectors[k].push(f.evaluate(s)?);
        }
    }
    let mut ranks: Vec<usize> = vectors.iter().map(|v| numerics::rank(v, rank_tol)).collect();
    let mut depth_reached = 0;
    let mut stabilized = false;
    for _ in 0..depth {
        let new_fields = gen.extend_one_level(node_budget)?;
        depth_reached += 1;
        if new_fields.is_empty() {
            stabilized = true;
            break;
        }
        let mut changed = false;
        for (k, s) in samples.iter().enumerate() {
            for f in new_fields {
                vectors[k].push(f.evaluate(s)?);
            }
            let r = numerics::rank(&vectors[k], rank_tol);
            if r != ranks[k] {
                changed = true;
                ranks[k] = r;
            }
        }
        // The frame always contributes n; a level that adds no direction
        // anywhere means later left-normed levels are unlikely to either.
        if !changed && depth_reached >= 2 {
            stabilized = true;
            break;
        }
    }
    let max_rank = ranks.iter().copied().max().unwrap_or(n);
    Ok(FreedomReport {
        rank_per_sample: ranks,
        depth_reached,
        max_rank,
        mu_s: 2 * n - max_rank,
        stabilized,
    })
}

/// True iff the differentials of the two scalars are independent at some
/// sample: the 2 x 2n matrix of all partials has rank 2.
pub fn functional_independence(
    fa: Expr,
    fb: Expr,
    samples: &[TangentSample],
    rank_tol: f64,
) -> Result<bool, HolonomyError> {
    for s in samples {
        let n = s.x.len();
        let mut ev = Evaluator::new(&s.x, &s.y);
        let mut rows = Vec::new();
        for f in [fa, fb] {
            let mut grad = Vec::with_capacity(2 * n);
            for i in 0..n {
                grad.push(ev.eval(f.differentiate(Var::x(i))).map_err(GeometryError::from)?);
            }
            for i in 0..n {
                grad.push(ev.eval(f.differentiate(Var::y(i))).map_err(GeometryError::from)?);
            }
            rows.push(DVector::from_vec(grad));
        }
        if numerics::rank(&rows, rank_tol) == 2 {
            return Ok(true);
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::geometry::MetricSpec;

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

    #[test]
    fn flat_frame_is_coordinate_frame() {
        let geom = euclidean(3);
        let frame = horizontal_frame(&geom);
        for (i, h) in frame.iter().enumerate() {
            for (k, c) in h.components.iter().enumerate() {
                if k == i {
                    assert!(c.is_const(1.0));
                } else {
                    assert!(c.is_const(0.0));
                }
            }
        }
        let br = lie_bracket(&frame[0], &frame[1], DEFAULT_NODE_BUDGET).unwrap();
        assert!(br.is_zero());
    }

    #[test]
    fn example1_frame_values() {
        let geom = example1();
        let frame = horizontal_frame(&geom);
        let s = TangentSample::new(vec![0.0, 1.0, 2.0, 0.0], vec![1.0, 1.0, 1.0, 1.0]);
        let h1 = frame[0].evaluate(&s).unwrap();
        // y-block of h_1 is -N^j_1; N^2_1 = dG^2/dy^1 = -x3 y1 / 2 = -1
        assert!((h1[4 + 1] - 1.0).abs() < 1e-12);
        assert!((h1[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn example3_first_brackets() {
        let geom = example3();
        let frame = horizontal_frame(&geom);
        let s = TangentSample::new(vec![1.0; 4], vec![1.0; 4]);
        let h12 = lie_bracket(&frame[0], &frame[1], DEFAULT_NODE_BUDGET).unwrap();
        let v = h12.evaluate(&s).unwrap();
        for i in 0..4 {
            assert!(v[i].abs() < 1e-12, "x-block must vanish");
        }
        // printed h_12 y-block at the all-ones sample
        assert!((v[4] - (-0.5)).abs() < 1e-10);
        assert!((v[5] - 0.5).abs() < 1e-10);
        assert!(v[6].abs() < 1e-12);
        assert!(v[7].abs() < 1e-12);
        // h_13, h_14, h_23, h_24 vanish identically
        for (i, j) in [(0, 2), (0, 3), (1, 2), (1, 3)] {
            let br = lie_bracket(&frame[i], &frame[j], DEFAULT_NODE_BUDGET).unwrap();
            assert!(br.is_zero(), "bracket ({i},{j}) should vanish");
        }
        // left-normed second bracket h_112 = [h_1, h_12]
        let h112 = lie_bracket(&frame[0], &h12, DEFAULT_NODE_BUDGET).unwrap();
        let v = h112.evaluate(&s).unwrap();
        assert!((v[4] - 0.5).abs() < 1e-10);
        assert!((v[5] - (-0.5)).abs() < 1e-10);
    }

    #[test]
    fn bracket_y_block_matches_spray_curvature() {
        let geom = example1();
        let frame = horizontal_frame(&geom);
        let s = TangentSample::new(vec![0.3, 1.2, 1.7, 0.7], vec![0.4, -0.8, 0.3, 1.0]);
        let r = geom.spray_curvature(&s).unwrap();
        for j in 0..4 {
            for k in (j + 1)..4 {
                let br = lie_bracket(&frame[j], &frame[k], DEFAULT_NODE_BUDGET).unwrap();
                let v = br.evaluate(&s).unwrap();
                for i in 0..4 {
                    assert!(v[i].abs() < 1e-10, "x-block");
                    assert!((v[4 + i] - r[i][j][k]).abs() < 1e-10, "i={i} j={j} k={k}");
                }
            }
        }
    }

    #[test]
    fn holonomy_ranks() {
        let geom = example3();
        let s = TangentSample::new(vec![1.0, 1.2, 0.9, 1.1], vec![0.8, 1.1, 0.9, 1.3]);
        assert_eq!(holonomy_rank(&geom, &s, 2, 1e-8).unwrap(), 6);

        let flat = euclidean(3);
        let s = TangentSample::new(vec![0.1, 0.2, 0.3], vec![1.0, 0.5, -0.5]);
        assert_eq!(holonomy_rank(&flat, &s, 3, 1e-8).unwrap(), 3);

        let sph = sphere2();
        let s = TangentSample::new(vec![1.0, 0.5], vec![0.7, 1.1]);
        assert_eq!(holonomy_rank(&sph, &s, 2, 1e-8).unwrap(), 3);
    }

    #[test]
    fn freedom_reports() {
        let geom = example3();
        let samples: Vec<TangentSample> = (0..10)
            .map(|k| {
                let t = 0.9 + 0.02 * k as f64;
                TangentSample::new(vec![t, 1.1, t + 0.1, 0.95], vec![0.8, 1.2, 0.7, 1.0 + 0.03 * k as f64])
            })
            .collect();
        let report =
            metrizability_freedom(&geom, &samples, DEFAULT_DEPTH, 1e-8, DEFAULT_NODE_BUDGET)
                .unwrap();
        assert_eq!(report.mu_s, 2);
        assert!(report.stabilized);
        assert!(report.depth_reached <= 3);

        let sph = sphere2();
        let samples: Vec<TangentSample> = (0..10)
            .map(|k| TangentSample::new(vec![0.8 + 0.05 * k as f64, 0.3], vec![1.0, 0.6]))
            .collect();
        let report =
            metrizability_freedom(&sph, &samples, DEFAULT_DEPTH, 1e-8, DEFAULT_NODE_BUDGET)
                .unwrap();
        assert_eq!(report.mu_s, 1);
        assert!(report.stabilized);
    }

    #[test]
    fn node_budget_enforced() {
        let geom = example3();
        let frame = horizontal_frame(&geom);
        let err = lie_bracket(&frame[0], &frame[1], 3).unwrap_err();
        assert!(matches!(err, HolonomyError::NodeBudgetExceeded { .. }));
    }

    #[test]
    fn functional_independence_cases() {
        let geom = example3();
        let alpha = geom.spec().norm_expr();
        let twice = Expr::constant(2.0).mul(alpha);
        let samples = vec![TangentSample::new(vec![1.0, 1.2, 0.9, 1.1], vec![0.8, 1.1, 0.9, 1.3])];
        assert!(!functional_independence(alpha, twice, &samples, 1e-8).unwrap());
        let quartic = parse_expr(
            "((x2*y1^2 + x1*y2^2)^2 + (x4*y3^2 + x3*y4^2)^2)^(1/4)",
            4,
        )
        .unwrap();
        assert!(functional_independence(alpha, quartic, &samples, 1e-8).unwrap());
    }
}
