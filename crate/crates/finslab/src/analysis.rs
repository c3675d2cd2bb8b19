//! Analysis orchestration: seeded sampling, fixed block order, per-block
//! error capture and report assembly.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Analysis, AnalysisConfig};
use crate::geometry::{Geometry, GeometryError, TangentSample};
use crate::holonomy::{self, FreedomReport};
use crate::numerics::{self, SubspaceBasis};
use crate::parallel::{
    self, CovectorField, LoopSet, ParallelError, ReferencePolicy, TransportOptions,
};
use crate::report::{
    AnalysisReport, BerwaldBlock, Block, Blocks, CurvatureBlock, NullityBlock, ParallelBlock,
    SprayBlock, Status,
};

/// Bracket depth used when the caller does not override it.
pub const DEFAULT_FREEDOM_DEPTH: usize = 4;
/// Berwald verdict threshold on `max |G^h_ijk|`.
pub const BERWALD_TOL: f64 = 1e-8;
/// Step used by the finite-difference stencil in form verification.
pub const VERIFY_FD_STEP: f64 = 1e-2;

const MAX_FREEDOM_SAMPLES: usize = 6;
const MAX_VERIFY_SAMPLES: usize = 8;
const MAX_Y_PROBES: usize = 4;

#[derive(Debug, Clone, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(
        "rejection sampling success rate below 50%: {accepted} of {attempts} draws \
         landed in the metric domain"
    )]
    Sampling { accepted: usize, attempts: usize },
    #[error("base point {0:?} violates the domain constraints")]
    BasePointOutsideDomain(Vec<f64>),
}

/// Runtime knobs not part of the config file.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub freedom_depth: usize,
    pub node_budget: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            freedom_depth: DEFAULT_FREEDOM_DEPTH,
            node_budget: holonomy::DEFAULT_NODE_BUDGET,
        }
    }
}

/// Draw `samples` tangent samples in the box by seeded rejection sampling.
/// Fails if more than half of the draws fall outside the domain.
pub fn draw_samples(
    geom: &Geometry,
    cfg: &AnalysisConfig,
) -> Result<Vec<TangentSample>, AnalysisError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.raw.seed);
    let want = cfg.raw.samples;
    let budget = 2 * want;
    let mut out = Vec::with_capacity(want);
    let mut attempts = 0;
    while out.len() < want && attempts < budget {
        attempts += 1;
        let x: Vec<f64> = cfg.raw.sampling_box.x.iter().map(|[lo, hi]| rng.gen_range(*lo..*hi)).collect();
        let y: Vec<f64> = cfg.raw.sampling_box.y.iter().map(|[lo, hi]| rng.gen_range(*lo..*hi)).collect();
        if !geom.spec().in_domain(&x) {
            continue;
        }
        let sample = TangentSample::new(x, y);
        if geom.validate_sample(&sample).is_ok() {
            out.push(sample);
        }
    }
    if out.len() < want {
        return Err(AnalysisError::Sampling { accepted: out.len(), attempts });
    }
    Ok(out)
}

fn timed<T: serde::Serialize>(
    f: impl FnOnce() -> Result<(Status, T), String>,
) -> Block<T> {
    let start = Instant::now();
    let result = f();
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    match result {
        Ok((status, data)) => Block::done(status, data, wall_ms),
        Err(message) => Block::failed(message, wall_ms),
    }
}

fn spray_block(geom: &Geometry, samples: &[TangentSample], fd_tol: f64) -> Block<SprayBlock> {
    timed(|| {
        let mut max_abs = 0.0f64;
        let mut max_res = 0.0f64;
        for s in samples {
            let g = geom.spray_coefficients(s).map_err(|e| e.to_string())?;
            let doubled = TangentSample::new(s.x.clone(), s.y.iter().map(|v| 2.0 * v).collect());
            let g2 = geom.spray_coefficients(&doubled).map_err(|e| e.to_string())?;
            for i in 0..geom.dim() {
                max_abs = max_abs.max(g[i].abs());
                let res = (g2[i] - 4.0 * g[i]).abs() / (1.0 + 4.0 * g[i].abs());
                max_res = max_res.max(res);
            }
        }
        let status = if max_res <= fd_tol { Status::Pass } else { Status::Fail };
        Ok((
            status,
            SprayBlock {
                samples: samples.len(),
                max_abs,
                max_homogeneity_residual: max_res,
            },
        ))
    })
}

fn curvature_block(geom: &Geometry, samples: &[TangentSample], fd_tol: f64) -> Block<CurvatureBlock> {
    timed(|| {
        let n = geom.dim();
        let mut max_abs = 0.0f64;
        let mut max_res = 0.0f64;
        for s in samples {
            let r = geom.spray_curvature(s).map_err(|e| e.to_string())?;
            let h = geom.h_curvature(s).map_err(|e| e.to_string())?;
            for a in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let contracted: f64 = (0..n).map(|i| s.y[i] * h[a][i][j][k]).sum();
                        max_res = max_res.max((contracted - r[a][j][k]).abs());
                        for i in 0..n {
                            max_abs = max_abs.max(h[a][i][j][k].abs());
                        }
                    }
                }
            }
        }
        let status = if max_res <= fd_tol { Status::Pass } else { Status::Fail };
        Ok((
            status,
            CurvatureBlock { max_abs, max_contraction_residual: max_res, flat: max_abs <= 1e-9 },
        ))
    })
}

/// Nullity of the h-curvature in its last slot at `x`. For a riemannian
/// metric this is the `y`-independent nullity space; for a finsler metric
/// the constraints from every `y` probe are stacked into one system.
fn nullity_basis(
    geom: &Geometry,
    x: &[f64],
    y_probes: &[Vec<f64>],
    rank_tol: f64,
) -> Result<SubspaceBasis, ParallelError> {
    if geom.spec().is_riemannian() {
        return parallel::nullity_space(geom, x, y_probes, rank_tol);
    }
    let n = geom.dim();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for y in y_probes {
        let r = geom.h_curvature(&TangentSample::new(x.to_vec(), y.clone()))?;
        for h in 0..n {
            for i in 0..n {
                for j in 0..n {
                    rows.push((0..n).map(|m| r[h][i][j][m]).collect());
                }
            }
        }
    }
    let m = DMatrix::from_fn(rows.len(), n, |r_, c| rows[r_][c]);
    Ok(numerics::kernel(&m, rank_tol))
}

fn nullity_block(
    geom: &Geometry,
    base: &[f64],
    y_probes: &[Vec<f64>],
    rank_tol: f64,
) -> Block<NullityBlock> {
    timed(|| {
        let basis = nullity_basis(geom, base, y_probes, rank_tol).map_err(|e| e.to_string())?;
        Ok((
            Status::Pass,
            NullityBlock {
                dim: basis.dim(),
                basis: basis.vectors.iter().map(|v| v.iter().copied().collect()).collect(),
            },
        ))
    })
}

fn parallel_block(
    geom: &Geometry,
    cfg: &AnalysisConfig,
    base: &[f64],
    samples: &[TangentSample],
    y_probes: &[Vec<f64>],
) -> Block<ParallelBlock> {
    timed(|| {
        let rank_tol = cfg.raw.tolerances.rank_tol;
        let fd_tol = cfg.raw.tolerances.fd_tol;
        let loops = LoopSet::coordinate_rectangles(geom.spec(), base, &cfg.raw.loop_scales)
            .map_err(|e| e.to_string())?;
        let mut opts = TransportOptions {
            policy: ReferencePolicy::PathVelocity,
            reference: None,
            steps_per_unit: cfg.raw.tolerances.ode_steps,
        };
        let verdict = match parallel::parallel_form_basis(geom, &loops, y_probes, &opts, rank_tol) {
            Ok(v) => v,
            Err(_) => {
                // Path-velocity transport can leave the norm's smooth locus
                // (e.g. a velocity component crossing zero); retry against a
                // transported reference vector from the y-box midpoint.
                opts.policy = ReferencePolicy::FrozenTransported;
                opts.reference = Some(cfg.y_reference());
                parallel::parallel_form_basis(geom, &loops, y_probes, &opts, rank_tol)
                    .map_err(|e| e.to_string())?
            }
        };
        let verify: Vec<TangentSample> =
            samples.iter().take(MAX_VERIFY_SAMPLES).cloned().collect();
        let mut residuals = Vec::new();
        for b in &verdict.basis {
            let form = CovectorField { base: base.to_vec(), b0: b.clone() };
            let res = parallel::verify_parallel_form(geom, &form, &verify, &opts, VERIFY_FD_STEP)
                .map_err(|e| e.to_string())?;
            residuals.push(res);
        }
        let status = if residuals.iter().all(|r| *r <= fd_tol) { Status::Pass } else { Status::Fail };
        Ok((
            status,
            ParallelBlock {
                algebraic_dim: verdict.algebraic_dim,
                holonomy_dim: verdict.holonomy_dim,
                final_dim: verdict.final_dim,
                basis: verdict.basis.iter().map(|v| v.iter().copied().collect()).collect(),
                residuals,
                max_transport_defect: verdict.max_transport_defect,
            },
        ))
    })
}

fn berwald_block(geom: &Geometry, samples: &[TangentSample]) -> Block<BerwaldBlock> {
    timed(|| {
        let (is_berwald, max_residual) =
            geom.is_berwald(samples, BERWALD_TOL).map_err(|e| e.to_string())?;
        Ok((Status::Pass, BerwaldBlock { is_berwald, max_residual }))
    })
}

fn freedom_block(
    geom: &Geometry,
    samples: &[TangentSample],
    rank_tol: f64,
    opts: &RunOptions,
) -> Block<FreedomReport> {
    timed(|| {
        let subset: Vec<TangentSample> =
            samples.iter().take(MAX_FREEDOM_SAMPLES).cloned().collect();
        let report = holonomy::metrizability_freedom(
            geom,
            &subset,
            opts.freedom_depth,
            rank_tol,
            opts.node_budget,
        )
        .map_err(|e| e.to_string())?;
        let status = if report.stabilized { Status::Pass } else { Status::Fail };
        Ok((status, report))
    })
}

/// Run the requested analyses in fixed order and assemble the report.
/// Individual block failures are captured in the report; only configuration
/// level problems (bad spec, sampling, base point) abort the run.
pub fn run(cfg: &AnalysisConfig, opts: &RunOptions) -> Result<AnalysisReport, AnalysisError> {
    let geom = Geometry::new(cfg.spec.clone())?;
    let samples = draw_samples(&geom, cfg)?;
    let base = cfg.base_point();
    if !geom.spec().in_domain(&base) {
        return Err(AnalysisError::BasePointOutsideDomain(base));
    }
    let mut y_probes: Vec<Vec<f64>> = vec![cfg.y_reference()];
    y_probes.extend(samples.iter().take(MAX_Y_PROBES).map(|s| s.y.clone()));

    let rank_tol = cfg.raw.tolerances.rank_tol;
    let fd_tol = cfg.raw.tolerances.fd_tol;
    let mut blocks = Blocks::empty();
    for analysis in &cfg.analyses {
        match analysis {
            Analysis::Spray => blocks.spray = Some(spray_block(&geom, &samples, fd_tol)),
            Analysis::Curvature => {
                blocks.curvature = Some(curvature_block(&geom, &samples, fd_tol))
            }
            Analysis::Nullity => {
                blocks.nullity = Some(nullity_block(&geom, &base, &y_probes, rank_tol))
            }
            Analysis::Parallel => {
                blocks.parallel = Some(parallel_block(&geom, cfg, &base, &samples, &y_probes))
            }
            Analysis::Berwald => blocks.berwald = Some(berwald_block(&geom, &samples)),
            Analysis::Freedom => {
                blocks.freedom = Some(freedom_block(&geom, &samples, rank_tol, opts))
            }
            Analysis::All => unreachable!("expanded during validation"),
        }
    }
    let verdict = if blocks.statuses().iter().all(|s| *s == Status::Pass) {
        Status::Pass
    } else {
        Status::Fail
    };
    Ok(AnalysisReport {
        metric: cfg.raw.name.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.raw.clone(),
        blocks,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::config::validate;

    fn run_catalog(name: &str) -> AnalysisReport {
        let cfg = validate(catalog::get(name).unwrap()).unwrap();
        run(&cfg, &RunOptions::default()).unwrap()
    }

    #[test]
    fn euclidean_all_blocks_pass() {
        let report = run_catalog("euclidean-2");
        assert!(report.all_pass(), "{}", report.to_json());
        let parallel = report.blocks.parallel.as_ref().unwrap();
        let data = parallel.data.as_ref().unwrap();
        assert_eq!(data.final_dim, 2);
        let freedom = report.blocks.freedom.as_ref().unwrap().data.as_ref().unwrap();
        assert_eq!(freedom.mu_s, 2); // flat spray: rank n, corank 2n - n
        assert!(report.blocks.curvature.as_ref().unwrap().data.as_ref().unwrap().flat);
    }

    #[test]
    fn sampling_failure_when_box_outside_domain() {
        let mut raw = catalog::ex1();
        // x2 interval entirely negative violates x2 > 0 everywhere.
        raw.sampling_box.x[1] = [-2.0, -1.0];
        let cfg = validate(raw).unwrap();
        let geom = Geometry::new(cfg.spec.clone()).unwrap();
        assert!(matches!(
            draw_samples(&geom, &cfg),
            Err(AnalysisError::Sampling { accepted: 0, .. })
        ));
    }

    #[test]
    fn determinism_under_fixed_seed() {
        let cfg = validate(catalog::sphere2()).unwrap();
        let a = run(&cfg, &RunOptions::default()).unwrap();
        let b = run(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(a.canonical_json(), b.canonical_json());
    }

    #[test]
    fn subset_of_analyses_only_fills_those_blocks() {
        let mut raw = catalog::euclidean(2);
        raw.analyses = vec![crate::config::Analysis::Spray, crate::config::Analysis::Berwald];
        let cfg = validate(raw).unwrap();
        let report = run(&cfg, &RunOptions::default()).unwrap();
        assert!(report.blocks.spray.is_some());
        assert!(report.blocks.berwald.is_some());
        assert!(report.blocks.parallel.is_none());
        assert!(report.blocks.freedom.is_none());
        assert!(report.all_pass());
    }
}
