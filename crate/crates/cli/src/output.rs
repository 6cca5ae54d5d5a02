//! CSV and JSON emission.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use gnes::solver::{IterRecord, SolverTrace};
use tempfile::NamedTempFile;

use crate::error::CliError;

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Iterations a full-length run keeps under `decimation`.
pub fn kept_iterations(max_iters: usize, decimation: usize) -> Vec<usize> {
    let d = decimation.max(1);
    (0..max_iters).filter(|&k| k % d == 0 || k + 1 == max_iters).collect()
}

/// Last record at or before `k`; runs that stopped early hold their final value.
fn at_or_before(records: &[IterRecord], k: usize) -> Option<&IterRecord> {
    let n = records.partition_point(|r| r.k <= k);
    n.checked_sub(1).map(|i| &records[i])
}

fn last_res(records: &[IterRecord], k: usize) -> Option<f64> {
    let n = records.partition_point(|r| r.k <= k);
    records[..n].iter().rev().find_map(|r| r.res)
}

fn envelope(values: &[f64]) -> Option<(f64, f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((mean, min, max))
}

fn push_envelope(s: &mut String, e: Option<(f64, f64, f64)>) {
    match e {
        Some((a, b, c)) => {
            let _ = write!(s, ",{a},{b},{c}");
        }
        None => s.push_str(",,,"),
    }
}

/// Per-iteration mean and min/max envelope of `res` and `r_psi` across replications.
///
/// Columns: `k,res_mean,res_min,res_max,r_psi_mean,r_psi_min,r_psi_max`.
pub fn aggregate_csv(traces: &[&SolverTrace], iterations: &[usize]) -> String {
    let mut s = String::from("k,res_mean,res_min,res_max,r_psi_mean,r_psi_min,r_psi_max\n");
    for &k in iterations {
        let res: Vec<f64> = traces.iter().filter_map(|t| last_res(&t.records, k)).collect();
        let r_psi: Vec<f64> = traces
            .iter()
            .filter_map(|t| at_or_before(&t.records, k).map(|r| r.r_psi))
            .collect();
        let _ = write!(s, "{k}");
        push_envelope(&mut s, envelope(&res));
        push_envelope(&mut s, envelope(&r_psi));
        s.push('\n');
    }
    s
}

pub const COMPARE_HEADER: &str = "variant,replication,k,res,r_psi\n";

/// Appends one family's rows to a long-format comparison table.
pub fn push_compare_rows(s: &mut String, label: &str, replication: usize, trace: &SolverTrace) {
    for r in &trace.records {
        let res = r.res.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{label},{replication},{},{res},{}", r.k, r.r_psi);
    }
}
