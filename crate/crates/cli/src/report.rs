//! Evaluation report document and its table rendering.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fad: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jsd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ndb: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ndb_over_k: Option<f64>,
    pub parameters: ReportParameters,
    /// Argument vector that produced this report.
    pub command: Vec<String>,
    pub toolkit_version: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportParameters {
    pub metrics: Vec<String>,
    pub seed: u64,
    pub real_dir: String,
    pub fake_dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inception: Option<InceptionParameters>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frechet: Option<FrechetParameters>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diversity: Option<DiversityParameters>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InceptionParameters {
    pub splits: usize,
    pub seed: u64,
    pub posterior_provider: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_provider: Option<String>,
    pub sample_count: usize,
    pub class_count: usize,
    pub split_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrechetParameters {
    pub real_provider: String,
    pub fake_provider: String,
    pub real_count: usize,
    pub fake_count: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityParameters {
    pub k: usize,
    pub alpha: f64,
    pub critical_value: f64,
    pub kmeans_seed: u64,
    pub kmeans_iterations: usize,
    pub reference_available: usize,
    pub reference_count: u64,
    pub generated_count: u64,
    pub max_reference: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters_in: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters_out: Option<String>,
}

/// RFC 3339 time of the run, taken from `SOURCE_DATE_EPOCH` when set.
pub fn timestamp() -> Result<String> {
    let time = match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => {
            let secs: i64 = v
                .trim()
                .parse()
                .with_context(|| format!("SOURCE_DATE_EPOCH {v:?} is not an integer"))?;
            DateTime::<Utc>::from_timestamp(secs, 0).context("SOURCE_DATE_EPOCH out of range")?
        }
        Err(_) => Utc::now(),
    };
    Ok(time.to_rfc3339_opts(SecondsFormat::Secs, true))
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Writes the report through a temporary file so a failed write never
    /// leaves a truncated document behind.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_os_string();
        tmp.push(".tmp");
        fs::write(&tmp, self.to_json()).with_context(|| format!("writing {}", path.display()))?;
        fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
    }

    pub fn table(&self) -> String {
        let mut rows: Vec<(&str, String)> = Vec::new();
        if let (Some(m), Some(s)) = (self.is_mean, self.is_std) {
            rows.push(("IS", format!("{m:.4} ± {s:.4}")));
        }
        if let Some(f) = self.fad {
            rows.push(("FAD", format!("{f:.6}")));
        }
        if let Some(j) = self.jsd {
            rows.push(("JSD", format!("{j:.6}")));
        }
        if let (Some(n), Some(r)) = (self.ndb, self.ndb_over_k) {
            let k = self.parameters.diversity.as_ref().map_or(0, |d| d.k);
            rows.push(("NDB/K", format!("{r:.4} ({n} of {k})")));
        }
        let mut out = String::new();
        let _ = writeln!(out, "{:<8}{}", "metric", "value");
        for (name, value) in rows {
            let _ = writeln!(out, "{name:<8}{value}");
        }
        out
    }
}
