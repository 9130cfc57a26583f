//! Command implementations behind the `omnireg` binary.
//!
//! Exit codes:
//!
//! | code | meaning                                                   |
//! |------|-----------------------------------------------------------|
//! | 0    | success                                                   |
//! | 1    | unexpected internal failure                               |
//! | 2    | bad arguments, config, manifest, or report schema         |
//! | 3    | output location not writable                              |
//! | 4    | malformed or inconsistent subject file                    |
//! | 5    | QC not computable (too few subjects, constant mFD, ...)   |

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::io::{
    self, format_f64, write_atomic, write_design_csv, write_fc_csv, write_json, write_motion_csv,
    write_parcellation_csv, write_signal_csv, CohortManifest, LoadedManifest,
    ManifestSubject, SCHEMA_VERSION,
};
use crate::phantom::{generate_cohort, PhantomConfig};
use crate::pipeline::{run_pipeline, Pipeline};
use crate::qcmetrics::{
    distance_dependence, edge_lengths, fc_matrix, framewise_displacement, mean_fd, qcfc, Histogram,
    DEFAULT_HEAD_RADIUS_MM,
};
use crate::regress::SignalMatrix;

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_OUTPUT: u8 = 3;
pub const EXIT_SUBJECT: u8 = 4;
pub const EXIT_QC: u8 = 5;

/// Default number of QC-FC histogram bins over [-1, 1].
pub const DEFAULT_BINS: usize = 50;

/// File written next to corrected timeseries, recording how they were made.
pub const CORRECTION_MARKER: &str = "correction.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T = ()> = std::result::Result<T, CliError>;

fn usage(e: impl fmt::Display) -> CliError {
    CliError::new(EXIT_USAGE, e.to_string())
}

fn output(e: impl fmt::Display) -> CliError {
    CliError::new(EXIT_OUTPUT, e.to_string())
}

fn subject_err(id: &str, e: impl fmt::Display) -> CliError {
    CliError::new(EXIT_SUBJECT, format!("subject {id}: {e}"))
}

fn out_line(out: &mut dyn Write, line: &str) -> CliResult {
    writeln!(out, "{line}").map_err(|e| CliError::new(EXIT_INTERNAL, e.to_string()))
}

fn ensure_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| output(format!("{}: {e}", dir.display())))
}

fn load_manifest(path: &Path) -> CliResult<LoadedManifest> {
    LoadedManifest::load(path).map_err(usage)
}

/// `phantom --config <json> --out <dir>`
pub fn cmd_phantom(config_path: &Path, out_dir: &Path, out: &mut dyn Write) -> CliResult {
    let cfg: PhantomConfig = io::read_json(config_path).map_err(usage)?;
    cfg.validate().map_err(usage)?;
    let cohort = generate_cohort(&cfg).map_err(|e| CliError::new(EXIT_INTERNAL, e.to_string()))?;

    ensure_dir(out_dir)?;
    write_parcellation_csv(&out_dir.join("parcellation.csv"), &cohort.parcellation).map_err(output)?;
    write_fc_csv(&out_dir.join("truth_fc.csv"), &cohort.truth_fc).map_err(output)?;

    let mut subjects = Vec::with_capacity(cohort.bundles.len());
    for b in &cohort.bundles {
        let id = &b.subject_id;
        let dir = out_dir.join(id);
        ensure_dir(&dir)?;
        write_signal_csv(&dir.join("ts.csv"), &b.ts).map_err(output)?;
        write_motion_csv(&dir.join("motion.csv"), &b.motion).map_err(output)?;
        let aroma = if b.aroma.is_empty() {
            None
        } else {
            write_design_csv(&dir.join("aroma.csv"), &b.aroma).map_err(output)?;
            Some(format!("{id}/aroma.csv"))
        };
        write_design_csv(&dir.join("physio.csv"), &b.physio).map_err(output)?;
        subjects.push(ManifestSubject {
            subject_id: id.clone(),
            ts: format!("{id}/ts.csv"),
            motion: format!("{id}/motion.csv"),
            aroma,
            physio: format!("{id}/physio.csv"),
        });
    }
    let manifest = CohortManifest {
        schema_version: SCHEMA_VERSION.to_string(),
        parcellation_path: "parcellation.csv".into(),
        truth_fc_path: Some("truth_fc.csv".into()),
        subjects,
    };
    write_json(&out_dir.join("manifest.json"), &manifest).map_err(output)?;

    let amps = &cohort.per_subject_motion_amplitude;
    let (lo, hi) = amps
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    out_line(
        out,
        &format!(
            "phantom cohort: {} subjects, {} ROIs, {} timepoints, {} AROMA components, seed {}",
            cfg.n_subjects, cfg.n_rois, cfg.n_timepoints, cfg.n_aroma_components, cfg.seed
        ),
    )?;
    out_line(out, &format!("motion amplitude: {lo:.6} .. {hi:.6} mm"))?;
    out_line(out, &format!("wrote {}", out_dir.join("manifest.json").display()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionMarker {
    pub schema_version: String,
    pub pipeline: Pipeline,
    pub subjects: Vec<String>,
}

/// Where corrected timeseries of a subject are written.
pub fn corrected_path(dir: &Path, subject_id: &str) -> PathBuf {
    dir.join(format!("{subject_id}.csv"))
}

/// `correct --manifest <json> --pipeline <name> --out <dir>`
pub fn cmd_correct(
    manifest_path: &Path,
    pipeline: Pipeline,
    out_dir: &Path,
    out: &mut dyn Write,
) -> CliResult {
    let manifest = load_manifest(manifest_path)?;
    let corrected: Vec<CliResult<SignalMatrix>> = manifest
        .subjects()
        .par_iter()
        .map(|s| {
            let bundle = manifest
                .load_bundle(s, None)
                .map_err(|e| subject_err(&s.subject_id, e))?;
            run_pipeline(&bundle, pipeline).map_err(|e| subject_err(&s.subject_id, e))
        })
        .collect();
    let corrected: Vec<SignalMatrix> = corrected.into_iter().collect::<CliResult<_>>()?;

    ensure_dir(out_dir)?;
    for (s, ts) in manifest.subjects().iter().zip(&corrected) {
        write_signal_csv(&corrected_path(out_dir, &s.subject_id), ts).map_err(output)?;
    }
    let marker = CorrectionMarker {
        schema_version: SCHEMA_VERSION.into(),
        pipeline,
        subjects: manifest.subjects().iter().map(|s| s.subject_id.clone()).collect(),
    };
    write_json(&out_dir.join(CORRECTION_MARKER), &marker).map_err(output)?;
    out_line(
        out,
        &format!(
            "{pipeline}: corrected {} subjects into {}",
            corrected.len(),
            out_dir.display()
        ),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_center: f64,
    pub count: usize,
}

/// Summary of one pipeline's QC run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: String,
    pub pipeline: String,
    pub n_subjects: usize,
    pub n_edges: usize,
    pub undefined_edge_count: usize,
    pub median_abs_qcfc: f64,
    pub dist_dependence_rho: f64,
    pub dist_dependence_p: f64,
    pub bin_width: f64,
    pub histogram: Vec<HistogramBin>,
}

/// Which timeseries `qc` reads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QcInput {
    /// The uncorrected timeseries named in the manifest.
    Raw,
    /// Output directory of `correct`.
    Corrected(PathBuf),
}

/// Path of the histogram CSV written alongside a report.
pub fn histogram_path(report_path: &Path) -> PathBuf {
    let stem = report_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    report_path.with_file_name(format!("{stem}.histogram.csv"))
}

fn qc_error(e: Error) -> CliError {
    match e {
        Error::Degenerate(_) => CliError::new(EXIT_QC, e.to_string()),
        Error::Schema(_) | Error::Dimension(_) => CliError::new(EXIT_SUBJECT, e.to_string()),
        other => CliError::new(EXIT_INTERNAL, other.to_string()),
    }
}

/// Computes the QC-FC report for a cohort without touching the filesystem
/// beyond reading inputs.
pub fn compute_report(manifest: &LoadedManifest, input: &QcInput, bins: usize) -> CliResult<RunReport> {
    let subjects = manifest.subjects();
    if subjects.len() < 3 {
        return Err(CliError::new(
            EXIT_QC,
            format!("QC-FC needs at least 3 subjects, manifest has {}", subjects.len()),
        ));
    }
    let parcellation = manifest.load_parcellation().map_err(usage)?;

    let pipeline = match input {
        QcInput::Raw => Pipeline::Baseline.name().to_string(),
        QcInput::Corrected(dir) => {
            let marker = dir.join(CORRECTION_MARKER);
            if marker.is_file() {
                let m: CorrectionMarker = io::read_json(&marker).map_err(usage)?;
                m.pipeline.name().to_string()
            } else {
                dir.file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "corrected".into())
            }
        }
    };

    let per_subject: Vec<CliResult<(crate::qcmetrics::FcMatrix, f64)>> = subjects
        .par_iter()
        .map(|s| {
            let id = &s.subject_id;
            let ts_path = match input {
                QcInput::Raw => manifest.resolve(&s.ts),
                QcInput::Corrected(dir) => corrected_path(dir, id),
            };
            let ts = io::read_signal_csv(&ts_path).map_err(|e| subject_err(id, e))?;
            let motion = manifest.load_motion(s).map_err(|e| subject_err(id, e))?;
            if motion.n_timepoints() != ts.n_timepoints() {
                return Err(subject_err(
                    id,
                    format!(
                        "{}: {} motion rows for {} timepoints",
                        s.motion,
                        motion.n_timepoints(),
                        ts.n_timepoints()
                    ),
                ));
            }
            if ts.labels() != parcellation.roi_labels() {
                return Err(subject_err(id, "ROI labels do not match the parcellation"));
            }
            let fd = framewise_displacement(&motion, DEFAULT_HEAD_RADIUS_MM).map_err(|e| subject_err(id, e))?;
            let mfd = mean_fd(&fd).map_err(|e| subject_err(id, e))?;
            let fc = fc_matrix(&ts).map_err(|e| CliError::new(EXIT_QC, format!("subject {id}: {e}")))?;
            Ok((fc, mfd))
        })
        .collect();
    let (fcs, mfds): (Vec<_>, Vec<_>) = per_subject.into_iter().collect::<CliResult<Vec<_>>>()?.into_iter().unzip();

    let mut report = qcfc(&fcs, &mfds).map_err(qc_error)?;
    let dd = distance_dependence(&mut report, &edge_lengths(&parcellation)).map_err(qc_error)?;
    let hist = Histogram::new(&report.defined_qcfc(), bins, -1.0, 1.0).map_err(usage)?;
    let histogram = hist
        .centers()
        .into_iter()
        .zip(&hist.counts)
        .map(|(bin_center, &count)| HistogramBin { bin_center, count })
        .collect();

    Ok(RunReport {
        schema_version: SCHEMA_VERSION.into(),
        pipeline,
        n_subjects: report.n_subjects,
        n_edges: report.edge_qcfc.len(),
        undefined_edge_count: report.undefined_edge_count,
        median_abs_qcfc: report.median_abs_qcfc,
        dist_dependence_rho: dd.r,
        dist_dependence_p: dd.p,
        bin_width: hist.bin_width,
        histogram,
    })
}

/// `qc --manifest <json> [--corrected <dir> | --raw] --report <json>`
pub fn cmd_qc(
    manifest_path: &Path,
    input: &QcInput,
    report_path: &Path,
    bins: usize,
    out: &mut dyn Write,
) -> CliResult {
    let manifest = load_manifest(manifest_path)?;
    let report = compute_report(&manifest, input, bins)?;

    if let Some(dir) = report_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let mut csv = String::from("bin_center,count\n");
    for b in &report.histogram {
        csv.push_str(&format!("{},{}\n", format_f64(b.bin_center), b.count));
    }
    write_atomic(&histogram_path(report_path), csv.as_bytes()).map_err(output)?;
    write_json(report_path, &report).map_err(output)?;

    out_line(out, &format!("pipeline: {}", report.pipeline))?;
    out_line(out, &format!("subjects: {}", report.n_subjects))?;
    out_line(
        out,
        &format!("edges: {} ({} undefined)", report.n_edges, report.undefined_edge_count),
    )?;
    out_line(out, &format!("median |QC-FC|: {:.6}", report.median_abs_qcfc))?;
    out_line(out, &format!("distance dependence rho: {:.6}", report.dist_dependence_rho))?;
    out_line(out, &format!("distance dependence p: {:.6}", report.dist_dependence_p))
}

fn read_report(path: &Path) -> CliResult<RunReport> {
    let report: RunReport = io::read_json(path).map_err(usage)?;
    if report.schema_version != SCHEMA_VERSION {
        return Err(usage(format!(
            "{}: schema_version `{}` does not match {SCHEMA_VERSION}",
            path.display(),
            report.schema_version
        )));
    }
    Ok(report)
}

/// One CSV row per report: pipeline, subjects, median |QC-FC|, rho, p.
pub fn comparison_csv(reports: &[RunReport]) -> String {
    let mut csv = String::from(
        "pipeline,n_subjects,median_abs_qcfc,dist_dependence_rho,dist_dependence_p,undefined_edge_count\n",
    );
    for r in reports {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.pipeline,
            r.n_subjects,
            format_f64(r.median_abs_qcfc),
            format_f64(r.dist_dependence_rho),
            format_f64(r.dist_dependence_p),
            r.undefined_edge_count
        ));
    }
    csv
}

/// Side-by-side text table. The concatenated pipeline is starred.
pub fn comparison_table(reports: &[RunReport]) -> String {
    let mut t = format!(
        "  {:<22} {:>8} {:>14} {:>12} {:>14}\n",
        "pipeline", "subjects", "median|QC-FC|", "rho", "p"
    );
    for r in reports {
        let mark = if r.pipeline == Pipeline::ConcatAll.name() { '*' } else { ' ' };
        t.push_str(&format!(
            "{mark} {:<22} {:>8} {:>14.6} {:>12.6} {:>14.6}\n",
            r.pipeline, r.n_subjects, r.median_abs_qcfc, r.dist_dependence_rho, r.dist_dependence_p
        ));
    }
    t
}

/// `report <json>... [--csv <path>]`. Without `--csv` the CSV follows the
/// table on standard output.
pub fn cmd_report(report_paths: &[PathBuf], csv_path: Option<&Path>, out: &mut dyn Write) -> CliResult {
    if report_paths.is_empty() {
        return Err(usage("report needs at least one report file"));
    }
    let reports = report_paths
        .iter()
        .map(|p| read_report(p))
        .collect::<CliResult<Vec<_>>>()?;
    let csv = comparison_csv(&reports);
    out.write_all(comparison_table(&reports).as_bytes())
        .map_err(|e| CliError::new(EXIT_INTERNAL, e.to_string()))?;
    match csv_path {
        Some(path) => {
            write_atomic(path, csv.as_bytes()).map_err(output)?;
            out_line(out, &format!("wrote {}", path.display()))
        }
        None => {
            out_line(out, "")?;
            out.write_all(csv.as_bytes())
                .map_err(|e| CliError::new(EXIT_INTERNAL, e.to_string()))
        }
    }
}
