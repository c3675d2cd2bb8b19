//! Built-in metric catalog with ready-to-run configurations. Sampling boxes
//! keep clear of each metric's singular loci (`ex5`: `y1` away from `0`,
//! `ex4`: `|x|` well inside the unit ball).

use crate::config::{Analysis, RawConfig, SamplingBox};
use crate::numerics::ToleranceConfig;

pub const NAMES: [&str; 8] =
    ["ex1", "ex2", "ex3", "ex3-quartic", "ex4", "ex5", "sphere2", "euclidean-n"];

/// Catalog lookup. `euclidean-n` is a family: `euclidean-2` .. `euclidean-4`.
pub fn get(name: &str) -> Option<RawConfig> {
    match name {
        "ex1" => Some(ex1()),
        "ex2" => Some(ex2_pullback(2, &[0.5, 0.0])),
        "ex3" => Some(ex3()),
        "ex3-quartic" => Some(ex3_quartic()),
        "ex4" => Some(ex4()),
        "ex5" => Some(ex5()),
        "sphere2" => Some(sphere2()),
        _ => name
            .strip_prefix("euclidean-")
            .and_then(|d| d.parse::<usize>().ok())
            .filter(|d| (2..=4).contains(d))
            .map(euclidean),
    }
}

fn base(name: &str, dim: usize, sampling_box: SamplingBox) -> RawConfig {
    RawConfig {
        name: name.into(),
        dim,
        kind: crate::config::Kind::Riemannian,
        norm: None,
        metric: None,
        domain: Vec::new(),
        sampling_box,
        samples: 50,
        seed: 20240 + dim as u64,
        tolerances: ToleranceConfig::default(),
        analyses: vec![Analysis::All],
        base_point: None,
        loop_scales: vec![0.1, 0.3],
    }
}

fn diag(entries: &[&str]) -> Vec<Vec<String>> {
    let n = entries.len();
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { entries[i].into() } else { "0".into() }).collect())
        .collect()
}

fn intervals(v: &[(f64, f64)]) -> Vec<[f64; 2]> {
    v.iter().map(|&(lo, hi)| [lo, hi]).collect()
}

/// `F = sqrt(x2 x3 (y1)^2 + (y2)^2 + (y3)^2 + (y4)^2)` on `x2, x3 > 0`.
pub fn ex1() -> RawConfig {
    let mut cfg = base(
        "ex1",
        4,
        SamplingBox {
            x: intervals(&[(-0.5, 0.5), (0.8, 1.6), (1.4, 2.4), (-0.5, 0.5)]),
            y: intervals(&[(0.25, 1.75); 4]),
        },
    );
    cfg.metric = Some(diag(&["x2*x3", "1", "1", "1"]));
    cfg.domain = vec!["x2".into(), "x3".into()];
    cfg.base_point = Some(vec![0.0, 1.0, 2.0, 0.0]);
    cfg
}

/// Flat metric written in the chart `x -> x / (1 + <a, x>)`: the pullback
/// of the Euclidean metric, so every straight-line spray survives and every
/// constant covector pulls back to a parallel one.
pub fn ex2_pullback(n: usize, a: &[f64]) -> RawConfig {
    assert_eq!(a.len(), n);
    let phi = {
        let mut s = String::from("1");
        for (i, ai) in a.iter().enumerate() {
            if *ai != 0.0 {
                let sign = if *ai < 0.0 { "-" } else { "+" };
                s += &format!(" {sign} {}*x{}", ai.abs(), i + 1);
            }
        }
        format!("({s})")
    };
    let x_sq = (1..=n).map(|i| format!("x{i}^2")).collect::<Vec<_>>().join(" + ");
    let scale = 1.0 - a.iter().map(|v| v * v).sum::<f64>();
    // Terms are (coefficient, factor) pairs joined with explicit `+`/`-`
    // so negative coefficients never produce a double sign.
    let join = |terms: &[(f64, String)]| -> String {
        let mut body = String::new();
        for (k, (c, factor)) in terms.iter().enumerate() {
            let sign = if *c < 0.0 { "-" } else { "+" };
            if k > 0 || *c < 0.0 {
                body += sign;
                body += " ";
            }
            body += &format!("{}*{factor} ", c.abs());
        }
        body.trim_end().to_string()
    };
    let mut matrix = vec![vec![String::from("0"); n]; n];
    for i in 0..n {
        for j in i..n {
            let mut terms: Vec<(f64, String)> = Vec::new();
            if i == j {
                terms.push((1.0, format!("1/{phi}^2")));
            }
            if a[j] != 0.0 {
                terms.push((-a[j], format!("x{}/{phi}^3", i + 1)));
            }
            if a[i] != 0.0 {
                terms.push((-a[i], format!("x{}/{phi}^3", j + 1)));
            }
            let quad = a[i] * a[j];
            if quad != 0.0 {
                terms.push((quad, format!("({x_sq})/{phi}^4")));
            }
            if !terms.is_empty() {
                let entry = format!("{scale}*({})", join(&terms));
                matrix[i][j] = entry.clone();
                matrix[j][i] = entry;
            }
        }
    }
    let mut cfg = base(
        &format!("ex2-{n}d"),
        n,
        SamplingBox {
            x: intervals(&vec![(-0.4, 0.4); n]),
            y: intervals(&vec![(0.25, 1.75); n]),
        },
    );
    cfg.name = if n == 2 { "ex2".into() } else { cfg.name };
    cfg.metric = Some(matrix);
    cfg.domain = vec![phi];
    cfg
}

/// `alpha = sqrt(x2 (y1)^2 + x1 (y2)^2 + x4 (y3)^2 + x3 (y4)^2)`.
pub fn ex3() -> RawConfig {
    let mut cfg = base(
        "ex3",
        4,
        SamplingBox {
            x: intervals(&[(0.8, 1.6); 4]),
            y: intervals(&[(0.25, 1.75); 4]),
        },
    );
    cfg.metric = Some(diag(&["x2", "x1", "x4", "x3"]));
    cfg.domain = (1..=4).map(|i| format!("x{i}")).collect();
    cfg
}

/// The quartic alternate with the same geodesics: a Berwald metric.
pub fn ex3_quartic() -> RawConfig {
    let mut cfg = ex3();
    cfg.name = "ex3-quartic".into();
    cfg.kind = crate::config::Kind::Finsler;
    cfg.metric = None;
    // The quartic's Berwald connection compiles to a large program; fewer
    // RK4 steps keep loop transport fast with error still far below fd_tol.
    cfg.tolerances.ode_steps = 500;
    cfg.norm = Some("((x2*y1^2 + x1*y2^2)^2 + (x4*y3^2 + x3*y4^2)^2)^(1/4)".into());
    cfg
}

/// Shen's projectively flat metric with zero flag curvature on the unit
/// ball (n = 2).
pub fn ex4() -> RawConfig {
    let a = "((1 - x1^2 - x2^2)*(y1^2 + y2^2) + (x1*y1 + x2*y2)^2)";
    let f = format!(
        "(sqrt({a}) + x1*y1 + x2*y2)^2/((1 - x1^2 - x2^2)^2*sqrt({a}))"
    );
    let mut cfg = base(
        "ex4",
        2,
        SamplingBox {
            x: intervals(&[(-0.4, 0.4); 2]),
            y: intervals(&[(0.25, 1.75); 2]),
        },
    );
    cfg.kind = crate::config::Kind::Finsler;
    cfg.norm = Some(f);
    cfg.domain = vec!["0.49 - x1^2 - x2^2".into()];
    cfg
}

/// `F = sqrt(sqrt((y1)^4 + x1 x2 (y2)^4 + (y3)^4) + (y3)^2)` on
/// `x1, x2 > 0`; sampling keeps `y1` away from its singular locus `0`.
pub fn ex5() -> RawConfig {
    let mut cfg = base(
        "ex5",
        3,
        SamplingBox {
            x: intervals(&[(0.7, 1.4), (0.7, 1.4), (-0.5, 0.5)]),
            y: intervals(&[(0.5, 1.5), (0.25, 1.75), (0.25, 1.75)]),
        },
    );
    cfg.kind = crate::config::Kind::Finsler;
    cfg.norm = Some("sqrt(sqrt(y1^4 + x1*x2*y2^4 + y3^4) + y3^2)".into());
    cfg.domain = vec!["x1".into(), "x2".into()];
    cfg.base_point = Some(vec![1.0, 1.0, 0.0]);
    cfg.tolerances.ode_steps = 500;
    cfg
}

/// Round-sphere patch `diag(1, sin^2 x1)` away from the poles.
pub fn sphere2() -> RawConfig {
    let mut cfg = base(
        "sphere2",
        2,
        SamplingBox {
            x: intervals(&[(0.6, 1.4), (-0.5, 0.5)]),
            y: intervals(&[(0.25, 1.75); 2]),
        },
    );
    cfg.metric = Some(diag(&["1", "sin(x1)^2"]));
    cfg.domain = vec!["sin(x1)".into()];
    cfg
}

pub fn euclidean(dim: usize) -> RawConfig {
    let entries: Vec<&str> = (0..dim).map(|_| "1").collect();
    let mut cfg = base(
        &format!("euclidean-{dim}"),
        dim,
        SamplingBox {
            x: intervals(&vec![(-1.0, 1.0); dim]),
            y: intervals(&vec![(0.25, 1.75); dim]),
        },
    );
    cfg.metric = Some(diag(&entries));
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::validate;

    #[test]
    fn every_entry_validates() {
        for name in ["ex1", "ex2", "ex3", "ex3-quartic", "ex4", "ex5", "sphere2", "euclidean-3"] {
            let raw = get(name).unwrap_or_else(|| panic!("missing {name}"));
            validate(raw).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(get("nope").is_none());
        assert!(get("euclidean-9").is_none());
    }

    #[test]
    fn ex2_pullback_matches_printed_spray() {
        // G^i = -<a, y>/(1 + <a, x>) y^i for the corrected pullback form
        use crate::geometry::{Geometry, TangentSample};
        let cfg = validate(ex2_pullback(2, &[0.5, 0.0])).unwrap();
        let geom = Geometry::new(cfg.spec).unwrap();
        for (x, y) in [
            (vec![0.2, -0.1], vec![0.7, 1.1]),
            (vec![-0.3, 0.25], vec![1.2, 0.4]),
        ] {
            let spray = geom.spray_coefficients(&TangentSample::new(x.clone(), y.clone())).unwrap();
            let factor = -(0.5 * y[0]) / (1.0 + 0.5 * x[0]);
            for i in 0..2 {
                assert!(
                    (spray[i] - factor * y[i]).abs() < 1e-9,
                    "i={i}: {} vs {}",
                    spray[i],
                    factor * y[i]
                );
            }
        }
    }

    #[test]
    fn ex2_3d_variant_spray() {
        use crate::geometry::{Geometry, TangentSample};
        let a = [0.4, 0.2, -0.1];
        let cfg = validate(ex2_pullback(3, &a)).unwrap();
        let geom = Geometry::new(cfg.spec).unwrap();
        let (x, y) = (vec![0.1, -0.2, 0.3], vec![0.9, 1.1, 0.6]);
        let spray = geom.spray_coefficients(&TangentSample::new(x.clone(), y.clone())).unwrap();
        let ay: f64 = (0..3).map(|i| a[i] * y[i]).sum();
        let ax: f64 = (0..3).map(|i| a[i] * x[i]).sum();
        for i in 0..3 {
            assert!((spray[i] - (-ay / (1.0 + ax)) * y[i]).abs() < 1e-9);
        }
    }
}
