//! CSV tables and JSON-lines logs.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use proprio_core::benchmark::{AblationRow, SelectionReport};
use serde::Serialize;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Write `header` then `rows`, one record per row.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const ABLATION_HEADER: [&str; 4] = ["range", "preference_rate", "mean_plausible_score", "mean_corrupted_score"];

pub fn ablation_rows(rows: &[AblationRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.preference_rate.to_string(),
                r.mean_plausible.to_string(),
                r.mean_corrupted.to_string(),
            ]
        })
        .collect()
}

pub const SELECTION_HEADER: [&str; 4] = ["method", "mean_metric", "ci_low", "ci_high"];

pub fn selection_rows(report: &SelectionReport) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.method.name().to_string(),
                r.mean_metric.to_string(),
                r.ci.lo.to_string(),
                r.ci.hi.to_string(),
            ]
        })
        .collect();
    let d = report.motion_minus_random;
    rows.push(vec![
        "proprio-motion-minus-random".into(),
        d.mean.to_string(),
        d.lo.to_string(),
        d.hi.to_string(),
    ]);
    rows
}
