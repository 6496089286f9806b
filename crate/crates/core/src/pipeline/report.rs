//! Per-method comparison report, written as CSV and Markdown.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::util;

use super::config::RunConfig;

pub const REPORT_COLUMNS: [&str; 7] = [
    "method",
    "total_loss_mean",
    "total_loss_std",
    "auc_mean",
    "error_rate_mean",
    "mtl_trainings",
    "repeats",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    /// One total loss per repeat (or a single value for deterministic
    /// methods).
    pub losses: Vec<f64>,
    pub auc: Option<f64>,
    pub error_rate: Option<f64>,
    pub mtl_trainings: f64,
}

impl MethodRow {
    pub fn mean(&self) -> f64 {
        util::mean(&self.losses)
    }

    /// Population std over repeats.
    pub fn std(&self) -> f64 {
        util::population_std(&self.losses)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<MethodRow>,
}

impl ComparisonReport {
    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    fn best_method(&self) -> Option<&str> {
        self.rows
            .iter()
            .filter(|r| !r.losses.is_empty())
            .min_by(|a, b| a.mean().partial_cmp(&b.mean()).unwrap())
            .map(|r| r.method.as_str())
    }

    pub fn write_csv(&self, path: &Path, cfg: &RunConfig) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!(
            "# schema_version={} config_hash={} seed={}\n",
            super::ARTIFACT_SCHEMA_VERSION,
            cfg.config_hash(),
            cfg.seed
        ));
        out.push_str(&REPORT_COLUMNS.join(","));
        out.push('\n');
        for r in &self.rows {
            let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{:.6},{:.6},{},{},{:.1},{}\n",
                r.method,
                r.mean(),
                r.std(),
                fmt_opt(r.auc),
                fmt_opt(r.error_rate),
                r.mtl_trainings,
                r.losses.len(),
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn write_markdown(&self, path: &Path) -> Result<()> {
        let best = self.best_method().map(str::to_owned);
        let mut out = String::new();
        out.push_str("| Method | Total loss | AUC | Error rate | MTL trainings |\n");
        out.push_str("|---|---|---|---|---|\n");
        for r in &self.rows {
            let loss = if r.losses.len() > 1 {
                format!("{:.4} ± {:.4}", r.mean(), r.std())
            } else {
                format!("{:.4}", r.mean())
            };
            let loss = if best.as_deref() == Some(r.method.as_str()) {
                format!("**{loss}**")
            } else {
                loss
            };
            let auc = r
                .auc
                .map(|a| format!("{:.2}%", a * 100.0))
                .unwrap_or_else(|| "-".into());
            let err = r
                .error_rate
                .map(|e| format!("{e:.4}"))
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "| {} | {} | {} | {} | {:.1} |\n",
                r.method, loss, auc, err, r.mtl_trainings
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_population_std() {
        let row = MethodRow {
            method: "Ours".into(),
            losses: vec![4.9, 5.0, 4.8],
            auc: None,
            error_rate: None,
            mtl_trainings: 10.0,
        };
        assert!((row.mean() - 4.9).abs() < 1e-12);
        assert!((row.std() - 0.0816497).abs() < 1e-6);
    }

    #[test]
    fn markdown_bolds_the_lowest_loss() {
        let report = ComparisonReport {
            rows: vec![
                MethodRow {
                    method: "STL".into(),
                    losses: vec![10.0],
                    auc: None,
                    error_rate: None,
                    mtl_trainings: 0.0,
                },
                MethodRow {
                    method: "Ours".into(),
                    losses: vec![8.0, 8.2],
                    auc: Some(0.9),
                    error_rate: Some(0.1),
                    mtl_trainings: 25.0,
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.md");
        report.write_markdown(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("**8.1000 ± 0.1000**"));
        assert!(text.contains("90.00%"));
        assert!(!text.contains("**10.0000**"));
    }

    #[test]
    fn single_row_report_is_valid() {
        let report = ComparisonReport {
            rows: vec![MethodRow {
                method: "STL".into(),
                losses: vec![1.0],
                auc: None,
                error_rate: None,
                mtl_trainings: 0.0,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("report.csv");
        let cfg_json = serde_json::json!({
            "dataset": {"synth": {"n_tasks": 4, "n_clusters": 2, "d": 2, "samples_per_task": 20, "noise": 0.1}},
            "artifacts_dir": dir.path(),
        });
        let cfg: RunConfig = serde_json::from_value(cfg_json).unwrap();
        report.write_csv(&csv, &cfg).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with('#'));
        assert_eq!(lines.next().unwrap(), REPORT_COLUMNS.join(","));
        assert_eq!(lines.count(), 1);
    }
}
