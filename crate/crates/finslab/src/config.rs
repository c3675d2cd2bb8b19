//! Analysis configuration: JSON schema, parsing and static validation.

use crate::expr::parse_expr;
use crate::geometry::{GeometryError, MetricSpec};
use crate::numerics::ToleranceConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, thiserror::Error)]
pub enum ConfigError {
    #[error("config is not valid JSON: {0}")]
    Json(String),
    #[error("field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("expression `{text}`: {message}")]
    Expression { text: String, message: String },
    #[error(transparent)]
    Spec(#[from] GeometryError),
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.into() }
}

/// Per-coordinate sampling intervals for `x` and `y`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingBox {
    pub x: Vec<[f64; 2]>,
    pub y: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Riemannian,
    Finsler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Analysis {
    Spray,
    Curvature,
    Nullity,
    Parallel,
    Berwald,
    Freedom,
    All,
}

pub const ALL_ANALYSES: [Analysis; 6] = [
    Analysis::Spray,
    Analysis::Curvature,
    Analysis::Nullity,
    Analysis::Parallel,
    Analysis::Berwald,
    Analysis::Freedom,
];

fn default_samples() -> usize {
    50
}

fn default_analyses() -> Vec<Analysis> {
    vec![Analysis::All]
}

fn default_loop_scales() -> Vec<f64> {
    vec![0.1, 0.3]
}

/// The JSON document as written by the user (also echoed into reports).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub name: String,
    pub dim: usize,
    pub kind: Kind,
    #[serde(rename = "F", default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Vec<Vec<String>>>,
    #[serde(default)]
    pub domain: Vec<String>,
    #[serde(rename = "box")]
    pub sampling_box: SamplingBox,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default = "default_analyses")]
    pub analyses: Vec<Analysis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_point: Option<Vec<f64>>,
    #[serde(default = "default_loop_scales")]
    pub loop_scales: Vec<f64>,
}

/// A validated configuration with the metric parsed into a [`MetricSpec`].
#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub raw: RawConfig,
    pub spec: MetricSpec,
    pub analyses: Vec<Analysis>,
}

pub fn load_config_str(text: &str) -> Result<AnalysisConfig, ConfigError> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
    validate(raw)
}

pub fn load_config(path: &std::path::Path) -> Result<AnalysisConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Json(format!("cannot read {}: {e}", path.display())))?;
    load_config_str(&text)
}

fn parse(text: &str, dim: usize) -> Result<crate::expr::Expr, ConfigError> {
    parse_expr(text, dim)
        .map_err(|e| ConfigError::Expression { text: text.into(), message: e.to_string() })
}

pub fn validate(raw: RawConfig) -> Result<AnalysisConfig, ConfigError> {
    let dim = raw.dim;
    if dim < 2 {
        return Err(invalid("dim", "must be at least 2"));
    }
    raw.tolerances
        .validate()
        .map_err(|m| invalid("tolerances", m))?;
    if raw.samples == 0 {
        return Err(invalid("samples", "must be positive"));
    }
    if raw.sampling_box.x.len() != dim || raw.sampling_box.y.len() != dim {
        return Err(invalid("box", format!("x and y need {dim} intervals each")));
    }
    for [lo, hi] in raw.sampling_box.x.iter().chain(raw.sampling_box.y.iter()) {
        if !(lo < hi) {
            return Err(invalid("box", format!("empty interval [{lo}, {hi}]")));
        }
    }
    if let Some(bp) = &raw.base_point {
        if bp.len() != dim {
            return Err(invalid("base_point", format!("needs {dim} coordinates")));
        }
    }
    if raw.loop_scales.is_empty() || raw.loop_scales.iter().any(|s| !(*s > 0.0)) {
        return Err(invalid("loop_scales", "need at least one positive scale"));
    }
    if raw.analyses.is_empty() {
        return Err(invalid("analyses", "need at least one analysis"));
    }
    let domain = raw
        .domain
        .iter()
        .map(|d| parse(d, dim))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = match raw.kind {
        Kind::Riemannian => {
            let rows = raw
                .metric
                .as_ref()
                .ok_or_else(|| invalid("metric", "riemannian kind needs a `metric` matrix"))?;
            if raw.norm.is_some() {
                return Err(invalid("F", "riemannian kind must not set `F`"));
            }
            let matrix = rows
                .iter()
                .map(|row| row.iter().map(|e| parse(e, dim)).collect::<Result<Vec<_>, _>>())
                .collect::<Result<Vec<_>, _>>()?;
            MetricSpec::riemannian(raw.name.clone(), dim, matrix, domain)?
        }
        Kind::Finsler => {
            let f = raw
                .norm
                .as_ref()
                .ok_or_else(|| invalid("F", "finsler kind needs the norm `F`"))?;
            if raw.metric.is_some() {
                return Err(invalid("metric", "finsler kind must not set `metric`"));
            }
            MetricSpec::finsler(raw.name.clone(), dim, parse(f, dim)?, domain)?
        }
    };
    let analyses = if raw.analyses.contains(&Analysis::All) {
        ALL_ANALYSES.to_vec()
    } else {
        let mut seen = Vec::new();
        for a in ALL_ANALYSES {
            if raw.analyses.contains(&a) && !seen.contains(&a) {
                seen.push(a);
            }
        }
        seen
    };
    Ok(AnalysisConfig { raw, spec, analyses })
}

impl AnalysisConfig {
    /// Requested base point, defaulting to the x-box centroid.
    pub fn base_point(&self) -> Vec<f64> {
        self.raw
            .base_point
            .clone()
            .unwrap_or_else(|| self.raw.sampling_box.x.iter().map(|[lo, hi]| 0.5 * (lo + hi)).collect())
    }

    /// Midpoint of the y box, used as the frozen transport reference.
    pub fn y_reference(&self) -> Vec<f64> {
        self.raw.sampling_box.y.iter().map(|[lo, hi]| 0.5 * (lo + hi)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(kind: &str, extra: &str) -> String {
        format!(
            r#"{{"name":"t","dim":2,"kind":"{kind}",{extra}
                "box":{{"x":[[0.5,1.5],[0.5,1.5]],"y":[[0.25,1.75],[0.25,1.75]]}}}}"#
        )
    }

    #[test]
    fn loads_riemannian() {
        let cfg = load_config_str(&minimal(
            "riemannian",
            r#""metric":[["x1","0"],["0","1"]],"domain":["x1"],"#,
        ))
        .unwrap();
        assert_eq!(cfg.spec.dim, 2);
        assert_eq!(cfg.analyses.len(), 6);
        assert_eq!(cfg.base_point(), vec![1.0, 1.0]);
    }

    #[test]
    fn loads_finsler() {
        let cfg = load_config_str(&minimal("finsler", r#""F":"sqrt(y1^2 + x1^2*y2^2)","#)).unwrap();
        assert!(!cfg.spec.is_riemannian());
    }

    #[test]
    fn rejects_dim_zero() {
        let bad = r#"{"name":"t","dim":0,"kind":"finsler","F":"y1",
            "box":{"x":[],"y":[]}}"#;
        assert!(matches!(load_config_str(bad), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn rejects_parse_error_with_offset() {
        let cfg = load_config_str(&minimal("finsler", r#""F":"sqrt(y1^2 + ","#));
        let err = cfg.unwrap_err();
        assert!(err.to_string().contains("offset"), "{err}");
    }

    #[test]
    fn rejects_kind_mismatch() {
        let cfg = load_config_str(&minimal("riemannian", r#""F":"y1","#));
        assert!(cfg.is_err());
        let cfg = load_config_str(&minimal("finsler", r#""metric":[["1","0"],["0","1"]],"#));
        assert!(cfg.is_err());
    }

    #[test]
    fn analyses_subset_ordering() {
        let cfg = load_config_str(
            r#"{"name":"t","dim":2,"kind":"finsler","F":"sqrt(y1^2 + y2^2)",
                "analyses":["freedom","spray"],
                "box":{"x":[[0,1],[0,1]],"y":[[0.25,1.75],[0.25,1.75]]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.analyses, vec![Analysis::Spray, Analysis::Freedom]);
    }
}
