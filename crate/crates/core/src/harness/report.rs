//! Aggregate tables over emitted CSV directories: per-group medians from
//! the summary plus plot-ready median curves from the run files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::csv::{format_float, read_csv};
use super::runner::{median, median_of_sorted};

/// Aggregates for one grid cell (all seeds of one configuration).
#[derive(Debug, Clone)]
pub struct GroupSummary {
    pub estimator: String,
    pub optimizer: String,
    pub group_size: String,
    pub alpha: String,
    pub mu: String,
    pub variant: String,
    pub runs: usize,
    pub collapsed: usize,
    pub median_collapse_step: Option<f64>,
    pub median_final_entropy: f64,
}

impl GroupSummary {
    pub fn key(&self) -> String {
        format!(
            "{}_{}_g{}_a{}_mu{}{}",
            self.estimator,
            self.optimizer,
            self.group_size,
            self.alpha,
            self.mu,
            if self.variant.is_empty() {
                String::new()
            } else {
                format!("_{}", self.variant)
            }
        )
    }
}

/// Read `summary.csv` in `dir` and aggregate by configuration.
pub fn summarize(dir: &Path) -> Result<Vec<GroupSummary>> {
    let (header, rows) = read_csv(&dir.join("summary.csv"))?;
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("summary.csv missing column `{name}`")))
    };
    let (c_est, c_opt, c_g) = (col("estimator")?, col("optimizer")?, col("G")?);
    let (c_alpha, c_mu, c_var) = (col("alpha")?, col("mu")?, col("variant")?);
    let (c_collapse, c_entropy) = (col("collapse_step")?, col("final_entropy")?);

    // key -> (collapse steps, final entropies) across the group's seeds
    type GroupAccumulator = (Vec<Option<f64>>, Vec<f64>);
    let mut groups: BTreeMap<Vec<String>, GroupAccumulator> = BTreeMap::new();
    for row in &rows {
        let key = vec![
            row[c_est].clone(),
            row[c_opt].clone(),
            row[c_g].clone(),
            row[c_alpha].clone(),
            row[c_mu].clone(),
            row[c_var].clone(),
        ];
        let collapse = if row[c_collapse].is_empty() {
            None
        } else {
            Some(row[c_collapse].parse::<f64>().map_err(|e| {
                Error::Config(format!("bad collapse_step `{}`: {e}", row[c_collapse]))
            })?)
        };
        let entropy = row[c_entropy]
            .parse::<f64>()
            .map_err(|e| Error::Config(format!("bad final_entropy: {e}")))?;
        let entry = groups.entry(key).or_default();
        entry.0.push(collapse);
        entry.1.push(entropy);
    }

    let mut out = Vec::new();
    for (key, (collapses, entropies)) in groups {
        let mut padded: Vec<f64> = collapses
            .iter()
            .map(|c| c.unwrap_or(f64::INFINITY))
            .collect();
        padded.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
        let median_collapse = median_of_sorted(&padded).filter(|m| m.is_finite());
        out.push(GroupSummary {
            estimator: key[0].clone(),
            optimizer: key[1].clone(),
            group_size: key[2].clone(),
            alpha: key[3].clone(),
            mu: key[4].clone(),
            variant: key[5].clone(),
            runs: collapses.len(),
            collapsed: collapses.iter().filter(|c| c.is_some()).count(),
            median_collapse_step: median_collapse,
            median_final_entropy: median(&entropies).unwrap_or(f64::NAN),
        });
    }
    Ok(out)
}

/// Fixed-width table for terminal output.
pub fn render_table(groups: &[GroupSummary]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14} {:<9} {:>3} {:>6} {:>5} {:>8} {:>5}/{:<5} {:>14} {:>14}\n",
        "estimator",
        "optimizer",
        "G",
        "alpha",
        "mu",
        "variant",
        "coll",
        "runs",
        "median_step",
        "median_entropy"
    ));
    for g in groups {
        let median = g
            .median_collapse_step
            .map(|m| format!("{m:.1}"))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<14} {:<9} {:>3} {:>6} {:>5} {:>8} {:>5}/{:<5} {:>14} {:>14.4}\n",
            g.estimator,
            g.optimizer,
            g.group_size,
            g.alpha,
            g.mu,
            if g.variant.is_empty() {
                "-"
            } else {
                &g.variant
            },
            g.collapsed,
            g.runs,
            median,
            g.median_final_entropy
        ));
    }
    out
}

fn render_summary_report(groups: &[GroupSummary]) -> String {
    let mut out = String::from(
        "estimator,optimizer,G,alpha,mu,variant,runs,collapsed,median_collapse_step,median_final_entropy\n",
    );
    for g in groups {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            g.estimator,
            g.optimizer,
            g.group_size,
            g.alpha,
            g.mu,
            g.variant,
            g.runs,
            g.collapsed,
            g.median_collapse_step.map(format_float).unwrap_or_default(),
            format_float(g.median_final_entropy)
        ));
    }
    out
}

/// Per-step median across the seeds of one group, for each numeric
/// column of the run CSVs; written as `median_<group>.csv`.
fn write_median_curves(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut by_group: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if !name.ends_with(".csv") {
            continue;
        }
        if let Some(split) = name.rfind("_seed") {
            by_group
                .entry(name[..split].to_string())
                .or_default()
                .push(entry.path());
        }
    }

    let mut written = Vec::new();
    for (group, mut paths) in by_group {
        paths.sort();
        let mut header: Option<Vec<String>> = None;
        // columns[step][column] = values across seeds
        let mut columns: Vec<Vec<Vec<f64>>> = Vec::new();
        for path in &paths {
            let (h, rows) = read_csv(path)?;
            if let Some(prev) = &header {
                if *prev != h {
                    return Err(Error::Config(format!(
                        "inconsistent run headers within group `{group}`"
                    )));
                }
            } else {
                header = Some(h);
            }
            for (t, row) in rows.iter().enumerate() {
                if columns.len() <= t {
                    columns.push(vec![Vec::new(); row.len()]);
                }
                for (c, field) in row.iter().enumerate() {
                    let v = field.parse::<f64>().map_err(|e| {
                        Error::Config(format!("{}: bad numeric field: {e}", path.display()))
                    })?;
                    columns[t][c].push(v);
                }
            }
        }
        let header = header.expect("group has at least one run");
        let mut out = header.join(",");
        out.push('\n');
        for per_step in &columns {
            let fields: Vec<String> = per_step
                .iter()
                .map(|vals| format_float(median(vals).unwrap_or(f64::NAN)))
                .collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        let path = dir.join(format!("median_{group}.csv"));
        std::fs::write(&path, out).map_err(|e| Error::io(path.display().to_string(), e))?;
        written.push(path);
    }
    Ok(written)
}

/// Build the report artifacts for an output directory: aggregate table
/// (returned for printing), `report_summary.csv`, and per-group median
/// curves.
pub fn write_report(dir: &Path) -> Result<(Vec<GroupSummary>, Vec<PathBuf>)> {
    let groups = summarize(dir)?;
    let mut written = Vec::new();
    let summary_path = dir.join("report_summary.csv");
    std::fs::write(&summary_path, render_summary_report(&groups))
        .map_err(|e| Error::io(summary_path.display().to_string(), e))?;
    written.push(summary_path);
    written.extend(write_median_curves(dir)?);
    Ok((groups, written))
}
