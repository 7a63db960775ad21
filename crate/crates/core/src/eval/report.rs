//! Report emission: json, csv and a stage table with improvement markers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, StairError};
use crate::eval::experiment::{ExperimentReport, HorizonResult};

pub const CSV_HEADER: &str = "dataset,horizon,stage,mse,mae,val_mse,val_mae,best_epoch";
pub const IMPROVED: &str = "↓";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Table,
}

impl Format {
    pub const ALL: [Format; 3] = [Format::Json, Format::Csv, Format::Table];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "table" | "text" => Ok(Format::Table),
            other => Err(StairError::Config(format!("unknown report format {other:?}"))),
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Format::Json => "report.json",
            Format::Csv => "report.csv",
            Format::Table => "report.txt",
        }
    }
}

pub fn render(report: &ExperimentReport, format: Format) -> Result<String> {
    Ok(match format {
        Format::Json => serde_json::to_string_pretty(report)? + "\n",
        Format::Csv => to_csv(report),
        Format::Table => stage_table(report),
    })
}

pub fn parse_json(text: &str) -> Result<ExperimentReport> {
    Ok(serde_json::from_str(text)?)
}

pub fn emit(report: &ExperimentReport, format: Format, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| StairError::io(dir, e))?;
    let path = dir.join(format.file_name());
    fs::write(&path, render(report, format)?).map_err(|e| StairError::io(&path, e))?;
    Ok(path)
}

pub fn emit_all(report: &ExperimentReport, dir: &Path) -> Result<()> {
    for f in Format::ALL {
        emit(report, f, dir)?;
    }
    Ok(())
}

pub fn to_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for h in &report.horizons {
        for s in &h.stages {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                report.dataset, h.horizon, s.stage, s.mse, s.mae, s.val_mse, s.val_mae, s.best_epoch
            );
        }
    }
    out
}

/// `value` followed by the marker when strictly below `prev`.
pub fn marked(value: f64, prev: Option<f64>) -> String {
    match prev {
        Some(p) if value < p => format!("{value:.4}{IMPROVED}"),
        _ => format!("{value:.4} "),
    }
}

fn stage_cells(h: &HorizonResult) -> Vec<String> {
    let mut cells = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for stage in 1..=3u8 {
        match h.stage(stage) {
            Some(s) => {
                cells.push(marked(s.mse, prev.map(|p| p.0)));
                cells.push(marked(s.mae, prev.map(|p| p.1)));
                prev = Some((s.mse, s.mae));
            }
            None => {
                cells.push("-".into());
                cells.push("-".into());
                prev = None;
            }
        }
    }
    cells
}

fn push_row(out: &mut String, label: &str, cells: &[String], tail: &str, width: usize) {
    let _ = write!(out, "{label:<8}");
    for c in cells {
        let _ = write!(out, " {c:>width$}");
    }
    if tail.is_empty() {
        out.push('\n');
    } else {
        let _ = writeln!(out, "  {tail}");
    }
}

/// Per-stage MSE/MAE for every horizon, plus the average row when present.
pub fn stage_table(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "dataset {}  backbone {}  norm {}", report.dataset, report.backbone, report.norm);
    let head: Vec<String> = ["S1 MSE", "S1 MAE", "S2 MSE", "S2 MAE", "S3 MSE", "S3 MAE"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    push_row(&mut out, "horizon", &head, "selected", 8);
    for h in &report.horizons {
        match &h.error {
            Some(e) => {
                let _ = writeln!(out, "{:<8} failed: {e}", h.horizon);
            }
            None => {
                let sel = h.selected_stage.map(|s| format!("stage {s}")).unwrap_or_default();
                push_row(&mut out, &h.horizon.to_string(), &stage_cells(h), &sel, 8);
            }
        }
    }
    if let Some(avg) = &report.averages {
        let mut cells = Vec::new();
        let mut prev: Option<(f64, f64)> = None;
        for s in &avg.stages {
            cells.push(marked(s.mse, prev.map(|p| p.0)));
            cells.push(marked(s.mae, prev.map(|p| p.1)));
            prev = Some((s.mse, s.mae));
        }
        let tail = format!("selected {:.4} / {:.4}", avg.selected.mse, avg.selected.mae);
        push_row(&mut out, "avg", &cells, &tail, 8);
    }
    out
}

/// One column per labelled report: test MSE/MAE of the selected stage.
pub fn comparison_table(title: &str, columns: &[(String, ExperimentReport)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let mut head = Vec::new();
    for (label, _) in columns {
        head.push(format!("{label} MSE"));
        head.push(format!("{label} MAE"));
    }
    let width = head.iter().map(|h| h.chars().count()).max().unwrap_or(8).max(8);
    push_row(&mut out, "horizon", &head, "", width);
    let mut horizons: Vec<usize> = columns.iter().flat_map(|(_, r)| r.horizons.iter().map(|h| h.horizon)).collect();
    horizons.sort_unstable();
    horizons.dedup();
    for h in horizons {
        let mut cells = Vec::new();
        for (_, r) in columns {
            match r.horizon(h).and_then(|x| x.selected()) {
                Some(s) => {
                    cells.push(format!("{:.4}", s.mse));
                    cells.push(format!("{:.4}", s.mae));
                }
                None => {
                    cells.push("-".into());
                    cells.push("-".into());
                }
            }
        }
        push_row(&mut out, &h.to_string(), &cells, "", width);
    }
    if columns.iter().all(|(_, r)| r.averages.is_some()) && !columns.is_empty() {
        let cells: Vec<String> = columns
            .iter()
            .flat_map(|(_, r)| {
                let a = r.averages.as_ref().map(|a| a.selected).unwrap_or_default();
                [format!("{:.4}", a.mse), format!("{:.4}", a.mae)]
            })
            .collect();
        push_row(&mut out, "avg", &cells, "", width);
    }
    out
}
