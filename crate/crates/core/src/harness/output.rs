use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::run::{ReplicateRecord, ScenarioResult, SummaryRow, SummaryTable};
use super::HarnessError;

pub const SUMMARY_HEADER: &str =
    "scenario,design,axis,axis_value,bias,variance,rmse,ci_length,coverage,fallback_rate,mean_draws,seconds";

fn io_error(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes through a sibling temporary file and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| io_error(&tmp, e))?;
    f.write_all(bytes).map_err(|e| io_error(&tmp, e))?;
    f.sync_all().map_err(|e| io_error(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_error(path, e))
}

fn csv_bytes<T: serde::Serialize>(items: &[T]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for item in items {
        w.serialize(item).map_err(|e| HarnessError::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| HarnessError::Format(e.to_string()))
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<String, HarnessError> {
    let bytes = csv_bytes(rows)?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>, HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .collect::<Result<Vec<SummaryRow>, _>>()
        .map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))
}

pub fn summary_json(table: &SummaryTable) -> String {
    serde_json::to_string_pretty(table).expect("summary serializes")
}

pub fn parse_summary_json(text: &str) -> Result<SummaryTable, HarnessError> {
    let table: SummaryTable = serde_json::from_str(text).map_err(|e| HarnessError::Format(e.to_string()))?;
    if table.schema_version != super::run::SCHEMA_VERSION {
        return Err(HarnessError::Format(format!(
            "unsupported summary schema version {}",
            table.schema_version
        )));
    }
    Ok(table)
}

/// Writes `<name>.summary.csv` and `<name>.summary.json` into `dir`, plus
/// `<name>.details.csv` and per-design trajectories when requested. Returns
/// the written paths.
pub fn emit_outputs(
    result: &ScenarioResult,
    dir: &Path,
    detail: bool,
    trajectories: bool,
) -> Result<Vec<PathBuf>, HarnessError> {
    if result.table.rows.is_empty() {
        return Err(HarnessError::Degenerate("summary table is empty".into()));
    }
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let name = &result.table.scenario;
    let mut written = Vec::new();

    let csv_path = dir.join(format!("{name}.summary.csv"));
    write_atomic(&csv_path, summary_csv(&result.table.rows)?.as_bytes())?;
    written.push(csv_path);

    let json_path = dir.join(format!("{name}.summary.json"));
    write_atomic(&json_path, summary_json(&result.table).as_bytes())?;
    written.push(json_path);

    if detail {
        let path = dir.join(format!("{name}.details.csv"));
        write_atomic(&path, &csv_bytes::<ReplicateRecord>(&result.details)?)?;
        written.push(path);
    }
    if trajectories && !result.trajectories.is_empty() {
        let sub = dir.join(format!("{name}.trajectories"));
        fs::create_dir_all(&sub).map_err(|e| io_error(&sub, e))?;
        for saved in &result.trajectories {
            let path = sub.join(format!("g{}_{}.json", saved.grid_index, saved.design));
            write_atomic(&path, saved.trajectory.to_json().as_bytes())?;
            written.push(path);
        }
    }
    Ok(written)
}
