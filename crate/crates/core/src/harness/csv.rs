//! CSV emission: one file per run plus a summary per experiment.
//!
//! UTF-8, LF line endings, and shortest-round-trip float formatting, so
//! re-reading a file reproduces the stored series exactly and re-running
//! a config with the same seeds is byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::runner::RunRecord;

/// Shortest decimal representation that round-trips through `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x}")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Deterministic per-run file name from the run's identity.
pub fn run_filename(record: &RunRecord) -> String {
    let meta = &record.meta;
    let variant = meta
        .variant
        .map(|v| format!("_{}", v.name()))
        .unwrap_or_default();
    format!(
        "{}_{}_{}_g{}_a{}_mu{}{}_seed{}.csv",
        meta.experiment.name(),
        meta.estimator.name(),
        meta.optimizer.name(),
        meta.group_size,
        format_float(meta.iac_alpha),
        format_float(meta.dlc_mu),
        variant,
        meta.seed
    )
}

/// Group key shared by every seed of one grid cell (the run file name
/// minus its seed suffix).
pub fn group_key(record: &RunRecord) -> String {
    let name = run_filename(record);
    match name.rfind("_seed") {
        Some(i) => name[..i].to_string(),
        None => name,
    }
}

/// Render one run's time series:
/// `step,<query.mode columns>,entropy,z_prime,collapse_flag`.
pub fn render_run_csv(record: &RunRecord) -> String {
    let mut out = String::new();
    out.push_str("step");
    for name in &record.tracked_names {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",entropy,z_prime,collapse_flag\n");
    for row in &record.rows {
        let _ = write!(out, "{}", row.step);
        for &p in &row.tracked_probs {
            let _ = write!(out, ",{}", format_float(p));
        }
        let flag = match record.collapse_step {
            Some(t) if row.step >= t => 1,
            _ => 0,
        };
        let _ = writeln!(
            out,
            ",{},{},{flag}",
            format_float(row.entropy),
            format_float(row.z_prime)
        );
    }
    out
}

pub fn write_run_csv(record: &RunRecord, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(run_filename(record));
    write_file(&path, &render_run_csv(record))?;
    Ok(path)
}

pub const SUMMARY_HEADER: &str =
    "seed,estimator,optimizer,G,alpha,mu,variant,collapse_step,winner,final_entropy";

/// Render the summary table; rows sorted by seed, then grid position.
pub fn render_summary_csv(records: &[RunRecord]) -> String {
    let mut order: Vec<&RunRecord> = records.iter().collect();
    order.sort_by_key(|r| (r.meta.seed, r.meta.grid_index));
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in order {
        let meta = &r.meta;
        let collapse = meta_collapse_field(r);
        let variant = meta.variant.map(|v| v.name()).unwrap_or("");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            meta.seed,
            meta.estimator.name(),
            meta.optimizer.name(),
            meta.group_size,
            format_float(meta.iac_alpha),
            format_float(meta.dlc_mu),
            variant,
            collapse,
            r.winner,
            format_float(r.final_entropy)
        );
    }
    out
}

fn meta_collapse_field(record: &RunRecord) -> String {
    record
        .collapse_step
        .map(|s| s.to_string())
        .unwrap_or_default()
}

pub fn write_summary_csv(records: &[RunRecord], dir: &Path) -> Result<PathBuf> {
    let path = dir.join("summary.csv");
    write_file(&path, &render_summary_csv(records))?;
    Ok(path)
}

/// Write every per-run CSV plus the summary; returns the written paths.
pub fn emit_csv(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut paths = Vec::with_capacity(records.len() + 1);
    for record in records {
        paths.push(write_run_csv(record, dir)?);
    }
    paths.push(write_summary_csv(records, dir)?);
    Ok(paths)
}

/// Minimal CSV reader for the files this crate writes (no quoting).
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{}: empty CSV", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{ExperimentConfig, ExperimentKind};
    use crate::harness::runner::run_experiment;

    #[test]
    fn run_csv_has_header_plus_one_line_per_step() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::SamplingBias);
        cfg.steps = 17;
        let records = run_experiment(&cfg, 1).unwrap();
        let text = render_run_csv(&records[0]);
        assert_eq!(text.lines().count(), 18);
        assert!(text.starts_with("step,persian.cat,persian.persian,entropy,z_prime,collapse_flag"));
    }

    #[test]
    fn run_csv_round_trips_exactly() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::SamplingBias);
        cfg.steps = 30;
        cfg.seeds = vec![11];
        let records = run_experiment(&cfg, 1).unwrap();
        let dir = std::env::temp_dir().join("sharplab_csv_roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = write_run_csv(&records[0], &dir).unwrap();
        let (header, rows) = read_csv(&path).unwrap();
        assert_eq!(header.len(), 6);
        assert_eq!(rows.len(), 30);
        for (row, step) in rows.iter().zip(&records[0].rows) {
            assert_eq!(row[0].parse::<usize>().unwrap(), step.step);
            for (text, &p) in row[1..3].iter().zip(&step.tracked_probs) {
                assert_eq!(text.parse::<f64>().unwrap(), p);
            }
            assert_eq!(row[3].parse::<f64>().unwrap(), step.entropy);
            assert_eq!(row[4].parse::<f64>().unwrap(), step.z_prime);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn summary_has_one_row_per_run() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::SamplingBias);
        cfg.steps = 10;
        cfg.seeds = vec![0, 1, 2];
        let records = run_experiment(&cfg, 2).unwrap();
        let text = render_summary_csv(&records);
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with(SUMMARY_HEADER));
    }

    #[test]
    fn filenames_are_deterministic() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::SamplingBias);
        cfg.steps = 3;
        let records = run_experiment(&cfg, 1).unwrap();
        assert_eq!(
            run_filename(&records[0]),
            "sampling_bias_raw_sgd_g8_a0_mu0_seed0.csv"
        );
        assert_eq!(group_key(&records[0]), "sampling_bias_raw_sgd_g8_a0_mu0");
    }
}
