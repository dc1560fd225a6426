use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use staggercast::sim::{Resource, Summary};

use crate::error::CliError;
use crate::simulate::{Manifest, MANIFEST};
use crate::Format;

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub run: String,
    pub dir: PathBuf,
    pub summary: Summary,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

/// One row per seed of every run; sweeps are named `label@seed`.
pub fn load(runs: &[PathBuf]) -> Result<Vec<Row>, CliError> {
    let mut rows = Vec::new();
    for dir in runs {
        let manifest_path = dir.join(MANIFEST);
        if !manifest_path.is_file() {
            return Err(CliError::runtime(format!("{} is not a run directory", dir.display())));
        }
        let manifest: Manifest = read_json(&manifest_path)?;
        if manifest.finished_unix_s.is_none() {
            return Err(CliError::runtime(format!("run in {} did not finish", dir.display())));
        }
        let sweep = manifest.seeds.len() > 1;
        for &seed in &manifest.seeds {
            let summary: Summary = read_json(&manifest.seed_dir(dir, seed).join("summary.json"))?;
            let run = if sweep { format!("{}@{seed}", manifest.label) } else { manifest.label.clone() };
            rows.push(Row { run, dir: dir.clone(), summary });
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_default()
}

pub fn render(rows: &[Row], format: Format) -> String {
    let mut table: Vec<[String; 5]> = Vec::new();
    for row in rows {
        for r in Resource::ALL {
            let s = &row.summary;
            table.push([
                row.run.clone(),
                r.name().to_string(),
                opt(*s.peak_to_mean.get(r), 4),
                s.p95_load_bytes.get(r).to_string(),
                opt(s.acceptance_rate, 4),
            ]);
        }
    }
    let header = ["run", "resource", "peak_to_mean", "p95", "acceptance"];
    let mut out = String::new();
    match format {
        Format::Csv => {
            out.push_str(&header.join(","));
            out.push('\n');
            for line in &table {
                out.push_str(&line.join(","));
                out.push('\n');
            }
        }
        Format::Text => {
            let mut widths = header.map(str::len);
            for line in &table {
                for (w, cell) in widths.iter_mut().zip(line) {
                    *w = (*w).max(cell.len().max(1));
                }
            }
            let mut emit = |cells: [&str; 5]| {
                let parts: Vec<String> = cells
                    .iter()
                    .zip(widths)
                    .map(|(c, w)| format!("{:<w$}", if c.is_empty() { "-" } else { c }))
                    .collect();
                let _ = writeln!(out, "{}", parts.join("  ").trim_end());
            };
            emit(header);
            for line in &table {
                emit([&line[0], &line[1], &line[2], &line[3], &line[4]]);
            }
            out.push_str(&comparison(rows));
        }
    }
    out
}

/// Change in peak-to-mean of every run against the first run labelled
/// `baseline`, when there is one.
fn comparison(rows: &[Row]) -> String {
    let Some(base) = rows.iter().find(|r| r.summary.label == "baseline") else {
        return String::new();
    };
    let mut out = String::new();
    for row in rows.iter().filter(|r| r.dir != base.dir) {
        for r in Resource::ALL {
            if let (Some(b), Some(v)) = (base.summary.peak_to_mean.get(r), row.summary.peak_to_mean.get(r)) {
                let _ = writeln!(
                    out,
                    "{} vs {}: {} peak_to_mean {:+.2}%",
                    row.run,
                    base.run,
                    r.name(),
                    (v / b - 1.0) * 100.0
                );
            }
        }
    }
    if !out.is_empty() {
        out.insert(0, '\n');
    }
    out
}
