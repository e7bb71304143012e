//! CSV and JSON writers. Every file carries the manifest of the run that
//! produced it: CSV files as a leading `# manifest: {json}` comment line, JSON
//! files as a top-level `manifest` field.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::Sweep;
use crate::control::PulseSchedule;
use crate::error::{Error, Result};

/// Artifact version stamped into every manifest.
pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), "/", env!("CARGO_PKG_VERSION"));

const MANIFEST_PREFIX: &str = "# manifest: ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            version: VERSION.to_string(),
            command: command.to_string(),
            config: config.clone(),
            sweep: None,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes `rows` with a header derived from `T`'s field names. Floats use
/// the shortest representation that round-trips exactly.
pub fn write_csv<T: Serialize>(path: &Path, manifest: &Manifest, rows: &[T]) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "{MANIFEST_PREFIX}{}", serde_json::to_string(manifest)?)?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_csv`].
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<(Manifest, Vec<T>)> {
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    let json = first
        .trim_end()
        .strip_prefix(MANIFEST_PREFIX)
        .ok_or_else(|| Error::InvalidConfig(format!("{} has no manifest line", path.display())))?;
    let manifest = serde_json::from_str(json)?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok((manifest, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub manifest: Manifest,
    pub schedule: PulseSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_fidelity: Option<f64>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn read_schedule(path: &Path) -> Result<ScheduleFile> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ideal_rect;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        x: f64,
        label: String,
        flag: bool,
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.csv");
        let manifest = Manifest::new("test", &RunConfig::default());
        let rows = vec![
            Row { x: 0.1 + 0.2, label: "a,b".into(), flag: true },
            Row { x: std::f64::consts::PI / 3.0, label: "c".into(), flag: false },
            Row { x: 1e-300, label: String::new(), flag: true },
        ];
        write_csv(&path, &manifest, &rows).unwrap();
        let (m, back): (Manifest, Vec<Row>) = read_csv(&path).unwrap();
        assert_eq!(m, manifest);
        assert_eq!(back, rows);
    }

    #[test]
    fn schedule_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let file = ScheduleFile {
            manifest: Manifest::new("optimize", &RunConfig::default()),
            schedule: ideal_rect(20.0, std::f64::consts::PI / 10.0, std::f64::consts::PI).unwrap(),
            final_fidelity: Some(0.5),
        };
        write_json(&path, &file).unwrap();
        assert_eq!(read_schedule(&path).unwrap(), file);
    }
}
