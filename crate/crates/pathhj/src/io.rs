//! CSV and JSON artifacts.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use pathhj_core::characteristics::CharacteristicPair;
use pathhj_core::classical::ClassicalSolution;
use pathhj_core::{GridSpec, PathGrid};
use serde::Serialize;

use crate::RunError;

fn csv_err(e: csv::Error) -> RunError {
    RunError::Io(e.to_string())
}

/// `t` rounded to 12 significant digits, printed in shortest form.
pub fn format_time(t: f64) -> String {
    let rounded: f64 = format!("{t:.11e}").parse().expect("formatted float parses");
    // avoid "-0"
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded}")
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

/// `time,x1,...,xn`, one row per node.
pub fn write_path_csv<W: Write>(w: W, path: &PathGrid) -> Result<(), RunError> {
    let spec = path.spec();
    let mut out = csv::Writer::from_writer(w);
    let header: Vec<String> = std::iter::once("time".to_string()).chain(numbered("x", spec.n)).collect();
    out.write_record(&header).map_err(csv_err)?;
    for i in 0..spec.node_count() {
        let row: Vec<String> = std::iter::once(format_time(spec.time(i))).chain(path.node(i).iter().map(|v| v.to_string())).collect();
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(|e| RunError::Io(e.to_string()))
}

/// Inverse of [`write_path_csv`] on a known grid.
pub fn read_path_csv<R: Read>(r: R, spec: GridSpec) -> Result<PathGrid, RunError> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.len() != spec.n + 1 || &header[0] != "time" {
        return Err(RunError::Config(format!("path csv: expected time and {} coordinates, got {:?}", spec.n, header)));
    }
    let mut samples = Vec::with_capacity(spec.node_count() * spec.n);
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let t: f64 = rec[0].parse().map_err(|_| RunError::Config(format!("path csv row {}: bad time", i + 1)))?;
        if i >= spec.node_count() || (t - spec.time(i)).abs() > 1e-9 {
            return Err(RunError::Config(format!("path csv row {}: time {t} is not node {i} of the grid", i + 1)));
        }
        for k in 1..rec.len() {
            samples.push(rec[k].parse().map_err(|_| RunError::Config(format!("path csv row {}: bad value", i + 1)))?);
        }
    }
    PathGrid::from_samples(spec, samples).map_err(|e| RunError::Config(format!("path csv: {e}")))
}

/// `time,y1..yn,z`.
pub fn write_characteristic_csv<W: Write>(w: W, pair: &CharacteristicPair) -> Result<(), RunError> {
    let spec = pair.y.spec();
    let mut out = csv::Writer::from_writer(w);
    let header: Vec<String> =
        std::iter::once("time".to_string()).chain(numbered("y", spec.n)).chain(std::iter::once("z".to_string())).collect();
    out.write_record(&header).map_err(csv_err)?;
    for i in 0..spec.node_count() {
        let row: Vec<String> = std::iter::once(format_time(spec.time(i)))
            .chain(pair.y.node(i).iter().map(|v| v.to_string()))
            .chain(std::iter::once(pair.z_at(i).to_string()))
            .collect();
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(|e| RunError::Io(e.to_string()))
}

/// `t,x1..xn,phi` for every stored time slice and mesh node.
pub fn write_grid_csv<W: Write>(w: W, solution: &ClassicalSolution) -> Result<(), RunError> {
    let n = solution.mesh.n();
    let mut out = csv::Writer::from_writer(w);
    let header: Vec<String> =
        std::iter::once("t".to_string()).chain(numbered("x", n)).chain(std::iter::once("phi".to_string())).collect();
    out.write_record(&header).map_err(csv_err)?;
    for (t, x, phi) in solution.rows() {
        let row: Vec<String> =
            std::iter::once(format_time(t)).chain(x.iter().map(|v| v.to_string())).chain(std::iter::once(phi.to_string())).collect();
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(|e| RunError::Io(e.to_string()))
}

/// A plain numeric table.
pub fn write_table_csv<W: Write>(w: W, header: &[String], rows: &[Vec<f64>]) -> Result<(), RunError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header).map_err(csv_err)?;
    for r in rows {
        if r.len() != header.len() {
            return Err(RunError::Io(format!("row has {} fields, header has {}", r.len(), header.len())));
        }
        out.write_record(r.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    out.flush().map_err(|e| RunError::Io(e.to_string()))
}

pub fn create(path: &Path) -> Result<File, RunError> {
    File::create(path).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| RunError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_time_rounds_to_twelve_digits() {
        assert_eq!(format_time(0.30000000000000004), "0.3");
        assert_eq!(format_time(2.0 / 3.0), "0.666666666667");
        assert_eq!(format_time(-0.0), "0");
    }

    #[test]
    fn json_has_trailing_newline() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        write_json(&p, &serde_json::json!({ "x": 1 })).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "{\n  \"x\": 1\n}\n");
    }
}
