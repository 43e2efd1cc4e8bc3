//! `metrics.csv`, `table.md` and `curves.csv` from a set of runs.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scenario::RunResult;
use super::transcript::write_atomic;
use super::{RunError, SCHEMA_VERSION};
use crate::reward::mean;
use crate::sim::WeatherTier;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub schema: u32,
    pub run_id: String,
    pub map: String,
    pub weather: WeatherTier,
    pub density: u32,
    pub strategy: String,
    pub seed: u64,
    pub horizon: u32,
    pub decision_period: f64,
    pub policy: String,
    pub temperature: f64,
    pub sparse_terminal_only: bool,
    pub reward_source: String,
    pub decisions: usize,
    pub completed: bool,
    pub collision: bool,
    pub junction_missed: bool,
    pub r_s: f64,
    pub r_c: f64,
    pub r_e: f64,
    pub return_j: f64,
    pub transcript_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub schema: u32,
    pub run_id: String,
    pub map: String,
    pub weather: WeatherTier,
    pub density: u32,
    pub strategy: String,
    pub seed: u64,
    pub step: usize,
    pub reward: f64,
    pub evaluator_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub metrics: PathBuf,
    pub table: PathBuf,
    pub curves: PathBuf,
}

impl MetricsRow {
    pub fn from_result(r: &RunResult) -> Self {
        let c = &r.config;
        Self {
            schema: SCHEMA_VERSION,
            run_id: r.run_id.clone(),
            map: c.map.name().into(),
            weather: c.weather,
            density: c.density,
            strategy: c.strategy.to_string(),
            seed: c.seed,
            horizon: c.horizon,
            decision_period: c.decision_period,
            policy: c.policy.label(),
            temperature: c.temperature.unwrap_or(c.strategy.temperature()),
            sparse_terminal_only: c.context.sparse_terminal_only,
            reward_source: serde_json::to_value(c.context.reward_source)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
            decisions: r.decisions(),
            completed: r.metrics.completed,
            collision: r.metrics.collision,
            junction_missed: r.metrics.junction_missed,
            r_s: r.metrics.r_s,
            r_c: r.metrics.r_c,
            r_e: r.metrics.r_e,
            return_j: r.metrics.return_j,
            transcript_hash: r.transcript_hash.clone(),
        }
    }
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>, RunError> {
    let mut w = csv::Writer::from_writer(vec![]);
    for row in rows {
        w.serialize(row).map_err(|e| RunError::Report(e.to_string()))?;
    }
    w.into_inner().map_err(|e| RunError::Report(e.to_string()))
}

pub fn metrics_csv(results: &[RunResult]) -> Result<Vec<u8>, RunError> {
    to_csv(results.iter().map(MetricsRow::from_result))
}

pub fn curves_csv(results: &[RunResult]) -> Result<Vec<u8>, RunError> {
    to_csv(results.iter().flat_map(|r| {
        let m = MetricsRow::from_result(r);
        r.rewards.iter().zip(&r.evaluator_rewards).enumerate().map(move |(i, (&reward, &evaluator_reward))| CurveRow {
            schema: SCHEMA_VERSION,
            run_id: m.run_id.clone(),
            map: m.map.clone(),
            weather: m.weather,
            density: m.density,
            strategy: m.strategy.clone(),
            seed: m.seed,
            step: i + 1,
            reward,
            evaluator_reward,
        })
    }))
}

fn unique_in_order<T: PartialEq + Clone>(items: impl IntoIterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = vec![];
    for x in items {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

/// Mean Safety/Comfort/Efficiency per (weather, strategy) row and density
/// column, one table per map. Values are printed to two decimals.
pub fn table_markdown(rows: &[MetricsRow]) -> String {
    let mut out = format!("<!-- schema: {SCHEMA_VERSION} -->\n");
    let maps = unique_in_order(rows.iter().map(|r| r.map.clone()));
    let densities: BTreeSet<u32> = rows.iter().map(|r| r.density).collect();
    let weathers: BTreeSet<WeatherTier> = rows.iter().map(|r| r.weather).collect();
    let strategies = unique_in_order(rows.iter().map(|r| r.strategy.clone()));

    for map in &maps {
        let _ = writeln!(out, "\n## {map}\n");
        let mut header = "| Weather | Method |".to_string();
        let mut rule = "|---|---|".to_string();
        for d in &densities {
            for m in ["Safety", "Comfort", "Efficiency"] {
                let _ = write!(header, " {d}x {m} |");
                rule.push_str("---:|");
            }
        }
        let _ = writeln!(out, "{header}\n{rule}");
        for w in &weathers {
            for s in &strategies {
                let cell = |d: u32| -> Vec<&MetricsRow> {
                    rows.iter().filter(|r| &r.map == map && r.weather == *w && r.density == d && &r.strategy == s).collect()
                };
                if densities.iter().all(|&d| cell(d).is_empty()) {
                    continue;
                }
                let mut line = format!("| {} | {s} |", w.label());
                for &d in &densities {
                    let rs = cell(d);
                    if rs.is_empty() {
                        line.push_str(" - | - | - |");
                        continue;
                    }
                    for f in [|r: &MetricsRow| r.r_s, |r: &MetricsRow| r.r_c, |r: &MetricsRow| r.r_e] {
                        let xs: Vec<f64> = rs.iter().map(|r| f(r)).collect();
                        let _ = write!(line, " {:.2} |", mean(&xs));
                    }
                }
                let _ = writeln!(out, "{line}");
            }
        }
    }
    out
}

/// Writes the three report files into `out_dir`. Nothing is written for an empty result set.
pub fn emit_reports(results: &[RunResult], out_dir: &Path) -> Result<ReportFiles, RunError> {
    if results.is_empty() {
        return Err(RunError::EmptyResults);
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = results.iter().find(|r| !seen.insert(r.run_id.as_str())) {
        return Err(RunError::Report(format!("run id {} appears more than once", dup.run_id)));
    }
    let files = ReportFiles {
        metrics: out_dir.join("metrics.csv"),
        table: out_dir.join("table.md"),
        curves: out_dir.join("curves.csv"),
    };
    let rows: Vec<MetricsRow> = results.iter().map(MetricsRow::from_result).collect();
    let metrics = metrics_csv(results)?;
    let curves = curves_csv(results)?;
    write_atomic(&files.metrics, &metrics)?;
    write_atomic(&files.table, table_markdown(&rows).as_bytes())?;
    write_atomic(&files.curves, &curves)?;
    Ok(files)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>, RunError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| RunError::Report(e.to_string()))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| RunError::Report(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::EpisodeMetrics;
    use crate::runner::ScenarioConfig;
    use std::time::Duration;

    fn result(rewards: Vec<f64>) -> RunResult {
        RunResult {
            config: ScenarioConfig::default(),
            run_id: "r".into(),
            metrics: EpisodeMetrics {
                r_s: 1.0,
                r_c: 0.5,
                r_e: 0.25,
                completed: true,
                collision: false,
                junction_missed: false,
                return_j: 0.0,
            },
            evaluator_rewards: vec![0.0; rewards.len()],
            actions: vec![],
            rewards,
            transcript_path: PathBuf::new(),
            transcript_hash: "h".into(),
            duration: Duration::ZERO,
        }
    }

    #[test]
    fn curves_are_long_format() {
        let csv = String::from_utf8(curves_csv(&[result(vec![0.5, 0.7])]).unwrap()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("step,reward"));
        assert!(lines[1].contains(",1,0.5,"));
        assert!(lines[2].contains(",2,0.7,"));
    }

    #[test]
    fn empty_results_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_reports(&[], dir.path()), Err(RunError::EmptyResults)));
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
        let r = result(vec![0.5]);
        assert!(matches!(emit_reports(&[r.clone(), r], dir.path()), Err(RunError::Report(_))));
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn metrics_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = result(vec![0.1]);
        r.metrics.r_c = 0.1 + 0.2;
        let files = emit_reports(&[r.clone()], dir.path()).unwrap();
        let rows = read_metrics_csv(&files.metrics).unwrap();
        assert_eq!(rows, vec![MetricsRow::from_result(&r)]);
        let table = std::fs::read_to_string(files.table).unwrap();
        assert!(table.contains("| Clear Weather | icrl | 1.00 | 0.30 | 0.25 |"), "{table}");
    }
}
