//! On-disk formats: header-row CSV matrices, the cohort manifest, and JSON
//! documents. Every write goes to a temporary file in the target directory
//! and is renamed into place, so a failed run leaves no partial files.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{HeadMotion, SubjectBundle, MOTION_COLUMNS};
use crate::qcmetrics::{FcMatrix, Parcellation};
use crate::regress::{DesignMatrix, SignalMatrix, Source};

pub const SCHEMA_VERSION: &str = "1.0";
pub const PARCELLATION_HEADER: [&str; 4] = ["roi", "x_mm", "y_mm", "z_mm"];

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Malformed { path: PathBuf, message: String },
}

impl FormatError {
    fn malformed(path: &Path, message: impl Into<String>) -> Self {
        FormatError::Malformed {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn path(&self) -> &Path {
        match self {
            FormatError::Io { path, .. } | FormatError::Malformed { path, .. } => path,
        }
    }
}

pub type FormatResult<T> = std::result::Result<T, FormatError>;

/// Writes `bytes` to `path` through a temporary sibling file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> FormatResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| FormatError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| FormatError::io(path, e))?;
    tmp.persist(path).map_err(|e| FormatError::io(path, e.error))?;
    Ok(())
}

/// 17 significant digits: enough to round-trip any f64 exactly.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn matrix_to_csv(header: &[String], values: &DMatrix<f64>) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in values.row_iter() {
        let cells: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, header: &[String], values: &DMatrix<f64>) -> FormatResult<()> {
    write_atomic(path, matrix_to_csv(header, values).as_bytes())
}

/// Reads a numeric CSV with one header row. Returns the header and the
/// timepoints × columns matrix.
pub fn read_matrix_csv(path: &Path) -> FormatResult<(Vec<String>, DMatrix<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let width = header.len();
    let mut flat = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != width {
            return Err(FormatError::malformed(
                path,
                format!("row {} has {} fields, header has {width}", i + 1, record.len()),
            ));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                FormatError::malformed(path, format!("row {}, column `{}`: not a number: `{field}`", i + 1, header[j]))
            })?;
            if !v.is_finite() {
                return Err(FormatError::malformed(
                    path,
                    format!("row {}, column `{}`: non-finite value", i + 1, header[j]),
                ));
            }
            flat.push(v);
        }
        rows += 1;
    }
    Ok((header, DMatrix::from_row_slice(rows, width, &flat)))
}

fn csv_error(path: &Path, e: csv::Error) -> FormatError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => FormatError::io(path, io),
            other => FormatError::malformed(path, format!("{other:?}")),
        }
    } else {
        FormatError::malformed(path, e.to_string())
    }
}

pub fn read_signal_csv(path: &Path) -> FormatResult<SignalMatrix> {
    let (header, values) = read_matrix_csv(path)?;
    SignalMatrix::new(values, header).map_err(|e| FormatError::malformed(path, e.to_string()))
}

pub fn write_signal_csv(path: &Path, signals: &SignalMatrix) -> FormatResult<()> {
    write_matrix_csv(path, signals.labels(), signals.values())
}

pub fn read_design_csv(path: &Path, source: Source) -> FormatResult<DesignMatrix> {
    let (header, values) = read_matrix_csv(path)?;
    DesignMatrix::new(values, header, source).map_err(|e| FormatError::malformed(path, e.to_string()))
}

pub fn write_design_csv(path: &Path, design: &DesignMatrix) -> FormatResult<()> {
    write_matrix_csv(path, design.column_labels(), design.values())
}

pub fn read_motion_csv(path: &Path) -> FormatResult<HeadMotion> {
    let (header, values) = read_matrix_csv(path)?;
    if header != MOTION_COLUMNS {
        return Err(FormatError::malformed(
            path,
            format!("motion header must be {}, found {}", MOTION_COLUMNS.join(","), header.join(",")),
        ));
    }
    HeadMotion::new(values).map_err(|e| FormatError::malformed(path, e.to_string()))
}

pub fn write_motion_csv(path: &Path, motion: &HeadMotion) -> FormatResult<()> {
    let header: Vec<String> = MOTION_COLUMNS.iter().map(|s| s.to_string()).collect();
    write_matrix_csv(path, &header, motion.params())
}

pub fn read_parcellation_csv(path: &Path) -> FormatResult<Parcellation> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != PARCELLATION_HEADER {
        return Err(FormatError::malformed(
            path,
            format!("parcellation header must be {}", PARCELLATION_HEADER.join(",")),
        ));
    }
    let mut labels = Vec::new();
    let mut centroids = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != 4 {
            return Err(FormatError::malformed(path, format!("row {} needs 4 fields", i + 1)));
        }
        let mut xyz = [0.0; 3];
        for (k, slot) in xyz.iter_mut().enumerate() {
            *slot = record[k + 1]
                .parse()
                .map_err(|_| FormatError::malformed(path, format!("row {}: bad coordinate", i + 1)))?;
        }
        labels.push(record[0].to_string());
        centroids.push(xyz);
    }
    Parcellation::new(labels, centroids).map_err(|e| FormatError::malformed(path, e.to_string()))
}

pub fn write_parcellation_csv(path: &Path, parcellation: &Parcellation) -> FormatResult<()> {
    let mut out = PARCELLATION_HEADER.join(",");
    out.push('\n');
    for (label, c) in parcellation.roi_labels().iter().zip(parcellation.centroids()) {
        out.push_str(&format!("{label},{},{},{}\n", format_f64(c[0]), format_f64(c[1]), format_f64(c[2])));
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_fc_csv(path: &Path, fc: &FcMatrix) -> FormatResult<()> {
    write_matrix_csv(path, fc.roi_labels(), fc.values())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> FormatResult<T> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        FormatError::malformed(path, format!("field `{field}`: {}", e.inner()))
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> FormatResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| FormatError::malformed(path, e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Paths in a manifest are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSubject {
    pub subject_id: String,
    pub ts: String,
    pub motion: String,
    /// `None` when the subject has no AROMA components.
    pub aroma: Option<String>,
    pub physio: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortManifest {
    pub schema_version: String,
    pub parcellation_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_fc_path: Option<String>,
    pub subjects: Vec<ManifestSubject>,
}

/// A manifest together with the directory its paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: CohortManifest,
    pub base_dir: PathBuf,
}

impl LoadedManifest {
    /// Parses and checks the manifest: known schema version, unique subject
    /// ids, every referenced file present.
    pub fn load(path: &Path) -> FormatResult<Self> {
        let manifest: CohortManifest = read_json(path)?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(FormatError::malformed(
                path,
                format!("unsupported schema_version `{}` (expected {SCHEMA_VERSION})", manifest.schema_version),
            ));
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut seen = HashSet::new();
        for s in &manifest.subjects {
            if !seen.insert(s.subject_id.as_str()) {
                return Err(FormatError::malformed(path, format!("duplicate subject_id `{}`", s.subject_id)));
            }
        }
        let loaded = Self { manifest, base_dir };
        let mut referenced = vec![loaded.manifest.parcellation_path.as_str()];
        for s in &loaded.manifest.subjects {
            referenced.extend([s.ts.as_str(), s.motion.as_str(), s.physio.as_str()]);
            referenced.extend(s.aroma.as_deref());
        }
        for rel in referenced {
            if !loaded.resolve(rel).is_file() {
                return Err(FormatError::malformed(path, format!("referenced file `{rel}` does not exist")));
            }
        }
        Ok(loaded)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn subjects(&self) -> &[ManifestSubject] {
        &self.manifest.subjects
    }

    pub fn load_parcellation(&self) -> FormatResult<Parcellation> {
        read_parcellation_csv(&self.resolve(&self.manifest.parcellation_path))
    }

    pub fn load_motion(&self, subject: &ManifestSubject) -> FormatResult<HeadMotion> {
        read_motion_csv(&self.resolve(&subject.motion))
    }

    /// Reads all four files of a subject. `ts_override` replaces the
    /// manifest's timeseries path (used for corrected outputs).
    pub fn load_bundle(
        &self,
        subject: &ManifestSubject,
        ts_override: Option<&Path>,
    ) -> FormatResult<SubjectBundle> {
        let ts_path = ts_override.map(Path::to_path_buf).unwrap_or_else(|| self.resolve(&subject.ts));
        let ts = read_signal_csv(&ts_path)?;
        let motion_path = self.resolve(&subject.motion);
        let motion = read_motion_csv(&motion_path)?;
        let n = ts.n_timepoints();
        let aroma = match &subject.aroma {
            Some(rel) => read_design_csv(&self.resolve(rel), Source::Aroma)?,
            None => DesignMatrix::empty(n, Source::Aroma)
                .map_err(|e| FormatError::malformed(&ts_path, e.to_string()))?,
        };
        let physio_path = self.resolve(&subject.physio);
        let physio = read_design_csv(&physio_path, Source::Physio)?;
        for (path, rows) in [
            (&motion_path, motion.n_timepoints()),
            (&physio_path, physio.n_timepoints()),
        ] {
            if rows != n {
                return Err(FormatError::malformed(
                    path,
                    format!("has {rows} timepoints, timeseries has {n}"),
                ));
            }
        }
        SubjectBundle::new(subject.subject_id.clone(), ts, motion, aroma, physio)
            .map_err(|e| FormatError::malformed(&ts_path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let values = DMatrix::from_row_slice(2, 3, &[0.1, -1e-300, 123456.789, 1.0 / 3.0, 0.0, -7.5e12]);
        let header = vec!["a".to_string(), "b".into(), "c".into()];
        write_matrix_csv(&path, &header, &values).unwrap();
        let (h, v) = read_matrix_csv(&path).unwrap();
        assert_eq!(h, header);
        assert_eq!(v, values);
    }

    #[test]
    fn motion_header_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("motion.csv");
        fs::write(&path, "a,b,c,d,e,f\n0,0,0,0,0,0\n0,0,0,0,0,0\n").unwrap();
        let err = read_motion_csv(&path).unwrap_err();
        assert!(err.to_string().contains("dx_mm"), "{err}");
    }

    #[test]
    fn ragged_rows_are_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        fs::write(&path, "a,b\n1,2\n3\n").unwrap();
        assert!(matches!(read_matrix_csv(&path), Err(FormatError::Malformed { .. })));
        fs::write(&path, "a,b\n1,2\n3,zz\n").unwrap();
        let err = read_matrix_csv(&path).unwrap_err();
        assert!(err.to_string().contains("zz"));
    }

    #[test]
    fn json_errors_name_the_field() {
        #[derive(Debug, Deserialize)]
        #[allow(dead_code)]
        struct Cfg {
            n_subjects: usize,
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"n_subjects": -4}"#).unwrap();
        let err = read_json::<Cfg>(&path).unwrap_err();
        assert!(err.to_string().contains("n_subjects"), "{err}");
    }
}
