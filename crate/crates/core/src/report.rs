//! Files written for a closed-loop run and the plot-data bundle derived from a log.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{ClosedLoopLog, GuaranteeReport, RunMetrics, StepRecord};

pub const LOG_CSV: &str = "log.csv";
pub const LOG_JSONL: &str = "log.jsonl";
/// Full log including derived series and prediction snapshots; input of `report`.
pub const LOG_JSON: &str = "log.json";
pub const METRICS_JSON: &str = "metrics.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub name: String,
    pub metrics: RunMetrics,
    pub guarantees: GuaranteeReport,
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("report types serialize")
}

/// `t,u_1..u_m,y_1..y_p,us_1..us_m,ys_1..ys_p,cost,status`, cost being the regularized one.
pub fn log_csv(log: &ClosedLoopLog) -> String {
    let mut head = vec!["t".to_string()];
    for (pre, d) in [("u", log.m), ("y", log.p), ("us", log.m), ("ys", log.p)] {
        head.extend((1..=d).map(|i| format!("{pre}_{i}")));
    }
    head.push("cost".into());
    head.push("status".into());
    let mut out = head.join(",");
    out.push('\n');
    for r in &log.steps {
        let mut row = vec![r.t.to_string()];
        for v in [&r.u_applied, &r.y_measured, &r.u_s, &r.y_s] {
            row.extend(v.iter().map(|x| x.to_string()));
        }
        row.push(r.cost_regularized.to_string());
        row.push(r.status.to_string());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn log_jsonl(log: &ClosedLoopLog) -> String {
    log.steps.iter().map(|r| json(r) + "\n").collect()
}

/// Writes the CSV, JSON lines, full JSON log and metrics into `dir`.
pub fn write_run(dir: &Path, log: &ClosedLoopLog, metrics: &MetricsFile) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let files = [
        (LOG_CSV, log_csv(log)),
        (LOG_JSONL, log_jsonl(log)),
        (LOG_JSON, json(log)),
        (
            METRICS_JSON,
            serde_json::to_string_pretty(metrics).expect("metrics serialize"),
        ),
    ];
    files
        .into_iter()
        .map(|(name, text)| {
            let path = dir.join(name);
            write(&path, text.as_bytes())?;
            Ok(path)
        })
        .collect()
}

/// What a log file turned out to contain.
#[derive(Debug)]
pub enum LoadedLog {
    Full(Box<ClosedLoopLog>),
    /// Per-step records only (a JSON-lines log); no predictions available.
    StepsOnly(Vec<StepRecord>),
}

pub fn read_log(path: &Path) -> Result<LoadedLog> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(log) = serde_json::from_str::<ClosedLoopLog>(&text) {
        return Ok(LoadedLog::Full(Box::new(log)));
    }
    let mut steps = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let rec = serde_json::from_str::<StepRecord>(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: format!("line {}: not a closed-loop log: {e}", i + 1),
        })?;
        steps.push(rec);
    }
    Ok(LoadedLog::StepsOnly(steps))
}

fn series(points: impl IntoIterator<Item = (usize, f64)>) -> String {
    let mut s = String::from("t,value\n");
    for (t, v) in points {
        s.push_str(&format!("{t},{v}\n"));
    }
    s
}

/// Per-channel `(t, value)` files: closed-loop outputs and inputs, the artificial
/// equilibrium, the target and the stored open-loop predictions.
pub fn write_plot_data(dir: &Path, log: &ClosedLoopLog) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut files: Vec<(String, String)> = Vec::new();
    let col = |f: &dyn Fn(&StepRecord) -> f64| series(log.steps.iter().map(|r| (r.t, f(r))));
    for i in 0..log.p {
        files.push((format!("y{}.csv", i + 1), col(&|r| r.y_measured[i])));
        files.push((format!("ys{}.csv", i + 1), col(&|r| r.y_s[i])));
        files.push((
            format!("target_y{}.csv", i + 1),
            series(
                log.steps
                    .iter()
                    .map(|r| (r.t, log.segments[log.segment_of(r.t)].target_y[i])),
            ),
        ));
    }
    for i in 0..log.m {
        files.push((format!("u{}.csv", i + 1), col(&|r| r.u_applied[i])));
        files.push((format!("us{}.csv", i + 1), col(&|r| r.u_s[i])));
    }
    for snap in &log.predictions {
        for i in 0..log.p {
            files.push((
                format!("pred_y{}_t{}.csv", i + 1, snap.t),
                series(snap.y.iter().enumerate().map(|(k, y)| (snap.t + k, y[i]))),
            ));
        }
        for i in 0..log.m {
            files.push((
                format!("pred_u{}_t{}.csv", i + 1, snap.t),
                series(snap.u.iter().enumerate().map(|(k, u)| (snap.t + k, u[i]))),
            ));
        }
    }
    files
        .into_iter()
        .map(|(name, text)| {
            let path = dir.join(name);
            write(&path, text.as_bytes())?;
            Ok(path)
        })
        .collect()
}
