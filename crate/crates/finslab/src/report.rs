//! Machine-readable analysis reports.
//!
//! A report embeds the configuration echo, one result block per requested
//! analysis and an overall `PASS`/`FAIL` verdict. Re-running with the same
//! configuration and seed reproduces every value; only the `wall_ms` timing
//! fields vary, and [`AnalysisReport::canonical_json`] strips them so two
//! runs can be compared byte for byte.

use serde::Serialize;

use crate::config::RawConfig;
use crate::holonomy::FreedomReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
}

/// One analysis block: outcome, timing, optional error and the payload.
#[derive(Debug, Clone, Serialize)]
pub struct Block<T: Serialize> {
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_ms: f64,
    #[serde(flatten)]
    pub data: Option<T>,
}

impl<T: Serialize> Block<T> {
    pub fn failed(error: String, wall_ms: f64) -> Self {
        Block { status: Status::Fail, error: Some(error), wall_ms, data: None }
    }

    pub fn done(status: Status, data: T, wall_ms: f64) -> Self {
        Block { status, error: None, wall_ms, data: Some(data) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SprayBlock {
    pub samples: usize,
    pub max_abs: f64,
    /// Relative defect of `G^i(x, 2y) = 4 G^i(x, y)` over the samples.
    pub max_homogeneity_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvatureBlock {
    /// Largest `|R^h_ijk|` seen over the samples.
    pub max_abs: f64,
    /// Largest defect of `y^i R^h_ijk = R^h_jk` over the samples.
    pub max_contraction_residual: f64,
    pub flat: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NullityBlock {
    pub dim: usize,
    pub basis: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParallelBlock {
    pub algebraic_dim: usize,
    pub holonomy_dim: usize,
    pub final_dim: usize,
    /// Covector basis of the detected parallel forms at the base point.
    pub basis: Vec<Vec<f64>>,
    /// Per-basis-form verification residual `max(|d_h beta|, |S.beta|)`.
    pub residuals: Vec<f64>,
    pub max_transport_defect: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BerwaldBlock {
    pub is_berwald: bool,
    pub max_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Blocks {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spray: Option<Block<SprayBlock>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curvature: Option<Block<CurvatureBlock>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nullity: Option<Block<NullityBlock>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parallel: Option<Block<ParallelBlock>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub berwald: Option<Block<BerwaldBlock>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub freedom: Option<Block<FreedomReport>>,
}

impl Blocks {
    pub fn empty() -> Self {
        Blocks { spray: None, curvature: None, nullity: None, parallel: None, berwald: None, freedom: None }
    }

    pub fn statuses(&self) -> Vec<Status> {
        let mut out = Vec::new();
        if let Some(b) = &self.spray {
            out.push(b.status);
        }
        if let Some(b) = &self.curvature {
            out.push(b.status);
        }
        if let Some(b) = &self.nullity {
            out.push(b.status);
        }
        if let Some(b) = &self.parallel {
            out.push(b.status);
        }
        if let Some(b) = &self.berwald {
            out.push(b.status);
        }
        if let Some(b) = &self.freedom {
            out.push(b.status);
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub metric: String,
    pub version: String,
    pub config: RawConfig,
    pub blocks: Blocks,
    pub verdict: Status,
}

impl AnalysisReport {
    pub fn all_pass(&self) -> bool {
        self.verdict == Status::Pass
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// JSON with every `wall_ms` field removed, for determinism comparisons.
    pub fn canonical_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serializes");
        strip_wall_times(&mut value);
        serde_json::to_string_pretty(&value).expect("value serializes")
    }
}

fn strip_wall_times(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            map.remove("wall_ms");
            for v in map.values_mut() {
                strip_wall_times(v);
            }
        }
        serde_json::Value::Array(items) => {
            for v in items {
                strip_wall_times(v);
            }
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_json_strips_timings() {
        let report = AnalysisReport {
            metric: "t".into(),
            version: "0.1.0".into(),
            config: crate::catalog::euclidean(2),
            blocks: Blocks {
                spray: Some(Block::done(
                    Status::Pass,
                    SprayBlock { samples: 1, max_abs: 0.0, max_homogeneity_residual: 0.0 },
                    12.5,
                )),
                ..Blocks::empty()
            },
            verdict: Status::Pass,
        };
        let full = report.to_json();
        let canon = report.canonical_json();
        assert!(full.contains("wall_ms"));
        assert!(!canon.contains("wall_ms"));
        assert!(canon.contains("\"verdict\": \"PASS\""));
    }

    #[test]
    fn failed_block_serializes_error() {
        let block: Block<SprayBlock> = Block::failed("boom".into(), 1.0);
        let text = serde_json::to_string(&block).unwrap();
        assert!(text.contains("\"status\":\"FAIL\""));
        assert!(text.contains("boom"));
    }
}
