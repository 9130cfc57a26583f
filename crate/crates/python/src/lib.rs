//! Python bindings. Matrices cross the boundary as lists of rows.

use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use omnireg_core as core;
use omnireg_core::qcmetrics::DEFAULT_HEAD_RADIUS_MM;
use omnireg_core::{DesignMatrix, HeadMotion, Pipeline, SignalMatrix, Source, SubjectBundle};

type Rows = Vec<Vec<f64>>;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: &Rows) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != k) {
        return Err(value_error(format!("row {i} has {} values, row 0 has {k}", rows[i].len())));
    }
    Ok(DMatrix::from_fn(n, k, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn signals(rows: &Rows) -> PyResult<SignalMatrix> {
    SignalMatrix::from_values(to_matrix(rows)?).map_err(value_error)
}

fn design(rows: &Rows, source: Source) -> PyResult<DesignMatrix> {
    DesignMatrix::from_values(to_matrix(rows)?, source).map_err(value_error)
}

fn pipeline(name: &str) -> PyResult<Pipeline> {
    name.parse().map_err(value_error)
}

fn report_dict<'py>(py: Python<'py>, r: &core::QcFcReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("edge_qcfc", r.edge_qcfc.clone())?;
    d.set_item("edge_pvalues", r.edge_pvalues.clone())?;
    d.set_item("median_abs_qcfc", r.median_abs_qcfc)?;
    d.set_item("undefined_edge_count", r.undefined_edge_count)?;
    d.set_item("n_subjects", r.n_subjects)?;
    d.set_item("dist_dependence_rho", r.dist_dependence_rho)?;
    d.set_item("dist_dependence_p", r.dist_dependence_p)?;
    Ok(d)
}

/// Residuals of `y` after OLS on `x`, both demeaned first.
#[pyfunction]
fn ols_residualize(y: Rows, x: Rows) -> PyResult<Rows> {
    let e = core::ols_residualize(&signals(&y)?, &design(&x, Source::Mixed)?).map_err(value_error)?;
    Ok(to_rows(e.values()))
}

/// Regresses the blocks out one after another, in the given order.
#[pyfunction]
fn sequential_residualize(y: Rows, blocks: Vec<Rows>) -> PyResult<Rows> {
    let blocks = blocks
        .iter()
        .map(|b| design(b, Source::Mixed))
        .collect::<PyResult<Vec<_>>>()?;
    let e = core::sequential_residualize(&signals(&y)?, &blocks).map_err(value_error)?;
    Ok(to_rows(e.values()))
}

/// Regresses all blocks out in one projection.
#[pyfunction]
fn concat_residualize(y: Rows, blocks: Vec<Rows>) -> PyResult<Rows> {
    let y = signals(&y)?;
    let blocks = blocks
        .iter()
        .map(|b| design(b, Source::Mixed))
        .collect::<PyResult<Vec<_>>>()?;
    let all = core::concat_designs(y.n_timepoints(), &blocks).map_err(value_error)?;
    let e = core::ols_residualize(&y, &all).map_err(value_error)?;
    Ok(to_rows(e.values()))
}

#[pyfunction]
fn max_abs_correlation(e: Rows, x: Rows) -> PyResult<f64> {
    core::max_abs_correlation(&signals(&e)?, &design(&x, Source::Mixed)?).map_err(value_error)
}

/// HMP-24 expansion of a timepoints × 6 motion table.
#[pyfunction]
fn expand_hmp24(motion: Rows) -> PyResult<Rows> {
    let motion = HeadMotion::new(to_matrix(&motion)?).map_err(value_error)?;
    let x = core::expand_hmp24(&motion).map_err(value_error)?;
    Ok(to_rows(x.values()))
}

/// Runs a named pipeline on one subject. `aroma` may have zero columns.
#[pyfunction]
#[pyo3(signature = (ts, motion, aroma, physio, pipeline_name))]
fn run_pipeline(ts: Rows, motion: Rows, aroma: Rows, physio: Rows, pipeline_name: &str) -> PyResult<Rows> {
    let ts = signals(&ts)?;
    let n = ts.n_timepoints();
    let aroma = if aroma.iter().all(Vec::is_empty) {
        DesignMatrix::empty(n, Source::Aroma).map_err(value_error)?
    } else {
        design(&aroma, Source::Aroma)?
    };
    let bundle = SubjectBundle::new(
        "subject",
        ts,
        HeadMotion::new(to_matrix(&motion)?).map_err(value_error)?,
        aroma,
        design(&physio, Source::Physio)?,
    )
    .map_err(value_error)?;
    let out = core::run_pipeline(&bundle, pipeline(pipeline_name)?).map_err(value_error)?;
    Ok(to_rows(out.values()))
}

#[pyfunction]
#[pyo3(signature = (motion, head_radius_mm = DEFAULT_HEAD_RADIUS_MM))]
fn framewise_displacement(motion: Rows, head_radius_mm: f64) -> PyResult<Vec<f64>> {
    let motion = HeadMotion::new(to_matrix(&motion)?).map_err(value_error)?;
    core::framewise_displacement(&motion, head_radius_mm).map_err(value_error)
}

#[pyfunction]
fn mean_fd(fd: Vec<f64>) -> PyResult<f64> {
    core::mean_fd(&fd).map_err(value_error)
}

/// Returns `(r, p)`.
#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64)> {
    let c = core::pearson(&x, &y).map_err(value_error)?;
    Ok((c.r, c.p))
}

/// Returns `(rho, p)`.
#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64)> {
    let c = core::spearman(&x, &y).map_err(value_error)?;
    Ok((c.r, c.p))
}

#[pyfunction]
fn fc_matrix(ts: Rows) -> PyResult<Rows> {
    let fc = core::fc_matrix(&signals(&ts)?).map_err(value_error)?;
    Ok(to_rows(fc.values()))
}

/// QC-FC over a cohort of corrected timeseries. With `centroids` the
/// distance-dependence fields are filled in.
#[pyfunction]
#[pyo3(signature = (timeseries, mean_fds, centroids = None))]
fn qcfc<'py>(
    py: Python<'py>,
    timeseries: Vec<Rows>,
    mean_fds: Vec<f64>,
    centroids: Option<Vec<[f64; 3]>>,
) -> PyResult<Bound<'py, PyDict>> {
    let fcs = timeseries
        .iter()
        .map(|ts| core::fc_matrix(&signals(ts)?).map_err(value_error))
        .collect::<PyResult<Vec<_>>>()?;
    let mut report = core::qcfc(&fcs, &mean_fds).map_err(value_error)?;
    if let Some(c) = centroids {
        let labels = fcs[0].roi_labels().to_vec();
        let parcellation = core::Parcellation::new(labels, c).map_err(value_error)?;
        core::distance_dependence(&mut report, &core::edge_lengths(&parcellation)).map_err(value_error)?;
    }
    report_dict(py, &report)
}

/// Generator settings for the synthetic cohort.
#[pyclass(name = "PhantomConfig", get_all, set_all, from_py_object)]
#[derive(Clone)]
struct PyPhantomConfig {
    n_subjects: usize,
    n_rois: usize,
    n_timepoints: usize,
    motion_amplitude_range: (f64, f64),
    artifact_gain: f64,
    artifact_length_scale: f64,
    n_aroma_components: usize,
    aroma_hmp_mixing: f64,
    seed: u64,
}

impl From<&PyPhantomConfig> for core::PhantomConfig {
    fn from(c: &PyPhantomConfig) -> Self {
        Self {
            n_subjects: c.n_subjects,
            n_rois: c.n_rois,
            n_timepoints: c.n_timepoints,
            motion_amplitude_range: c.motion_amplitude_range,
            artifact_gain: c.artifact_gain,
            artifact_length_scale: c.artifact_length_scale,
            n_aroma_components: c.n_aroma_components,
            aroma_hmp_mixing: c.aroma_hmp_mixing,
            seed: c.seed,
        }
    }
}

#[pymethods]
impl PyPhantomConfig {
    /// Starts from the reference settings; keyword arguments override fields.
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let r = core::PhantomConfig::reference();
        let mut cfg = Self {
            n_subjects: r.n_subjects,
            n_rois: r.n_rois,
            n_timepoints: r.n_timepoints,
            motion_amplitude_range: r.motion_amplitude_range,
            artifact_gain: r.artifact_gain,
            artifact_length_scale: r.artifact_length_scale,
            n_aroma_components: r.n_aroma_components,
            aroma_hmp_mixing: r.aroma_hmp_mixing,
            seed: r.seed,
        };
        if let Some(kw) = overrides {
            for (key, value) in kw.iter() {
                let key: String = key.extract()?;
                match key.as_str() {
                    "n_subjects" => cfg.n_subjects = value.extract()?,
                    "n_rois" => cfg.n_rois = value.extract()?,
                    "n_timepoints" => cfg.n_timepoints = value.extract()?,
                    "motion_amplitude_range" => cfg.motion_amplitude_range = value.extract()?,
                    "artifact_gain" => cfg.artifact_gain = value.extract()?,
                    "artifact_length_scale" => cfg.artifact_length_scale = value.extract()?,
                    "n_aroma_components" => cfg.n_aroma_components = value.extract()?,
                    "aroma_hmp_mixing" => cfg.aroma_hmp_mixing = value.extract()?,
                    "seed" => cfg.seed = value.extract()?,
                    other => return Err(value_error(format!("unknown field {other}"))),
                }
            }
        }
        Ok(cfg)
    }

    fn validate(&self) -> PyResult<()> {
        core::PhantomConfig::from(self).validate().map_err(value_error)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", core::PhantomConfig::from(self))
    }
}

/// A generated cohort with its ground truth.
#[pyclass(name = "PhantomCohort", frozen)]
struct PyPhantomCohort {
    inner: core::PhantomCohort,
}

#[pymethods]
impl PyPhantomCohort {
    #[getter]
    fn n_subjects(&self) -> usize {
        self.inner.bundles.len()
    }

    #[getter]
    fn subject_ids(&self) -> Vec<String> {
        self.inner.bundles.iter().map(|b| b.subject_id.clone()).collect()
    }

    #[getter]
    fn roi_labels(&self) -> Vec<String> {
        self.inner.parcellation.roi_labels().to_vec()
    }

    #[getter]
    fn centroids(&self) -> Vec<[f64; 3]> {
        self.inner.parcellation.centroids().to_vec()
    }

    #[getter]
    fn truth_fc(&self) -> Rows {
        to_rows(self.inner.truth_fc.values())
    }

    #[getter]
    fn motion_amplitudes(&self) -> Vec<f64> {
        self.inner.per_subject_motion_amplitude.clone()
    }

    /// Inputs of subject `index` as a dict of row lists.
    fn subject<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyDict>> {
        let b = self
            .inner
            .bundles
            .get(index)
            .ok_or_else(|| value_error(format!("subject index {index} out of range")))?;
        let d = PyDict::new(py);
        d.set_item("subject_id", &b.subject_id)?;
        d.set_item("ts", to_rows(b.ts.values()))?;
        d.set_item("motion", to_rows(b.motion.params()))?;
        d.set_item("aroma", to_rows(b.aroma.values()))?;
        d.set_item("physio", to_rows(b.physio.values()))?;
        d.set_item("contamination", to_rows(&self.inner.contamination[index]))?;
        Ok(d)
    }

    /// Corrected timeseries of subject `index`.
    fn correct(&self, index: usize, pipeline_name: &str) -> PyResult<Rows> {
        let b = self
            .inner
            .bundles
            .get(index)
            .ok_or_else(|| value_error(format!("subject index {index} out of range")))?;
        let out = core::run_pipeline(b, pipeline(pipeline_name)?).map_err(value_error)?;
        Ok(to_rows(out.values()))
    }

    /// QC-FC report of one pipeline over the whole cohort, plus the mean
    /// absolute error of the group-mean FC against the truth.
    fn evaluate<'py>(&self, py: Python<'py>, pipeline_name: &str) -> PyResult<Bound<'py, PyDict>> {
        let p = pipeline(pipeline_name)?;
        let (outputs, report) = py
            .detach(|| core::evaluate_pipeline(&self.inner.bundles, &self.inner.parcellation, p))
            .map_err(value_error)?;
        let fcs = outputs
            .iter()
            .map(core::fc_matrix)
            .collect::<core::Result<Vec<_>>>()
            .map_err(value_error)?;
        let group = core::qcmetrics::mean_fc(&fcs).map_err(value_error)?;
        let d = report_dict(py, &report)?;
        d.set_item("pipeline", p.name())?;
        d.set_item("truth_error", core::truth_error(&group, &self.inner.truth_fc).map_err(value_error)?)?;
        Ok(d)
    }
}

#[pyfunction]
#[pyo3(signature = (config = None))]
fn generate_cohort(py: Python<'_>, config: Option<PyPhantomConfig>) -> PyResult<PyPhantomCohort> {
    let cfg = match config {
        Some(c) => core::PhantomConfig::from(&c),
        None => core::PhantomConfig::reference(),
    };
    let inner = py.detach(|| core::generate_cohort(&cfg)).map_err(value_error)?;
    Ok(PyPhantomCohort { inner })
}

#[pyfunction]
fn pipeline_names() -> Vec<&'static str> {
    Pipeline::ALL.iter().map(|p| p.name()).collect()
}

#[pymodule]
fn omnireg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPhantomConfig>()?;
    m.add_class::<PyPhantomCohort>()?;
    m.add_function(wrap_pyfunction!(ols_residualize, m)?)?;
    m.add_function(wrap_pyfunction!(sequential_residualize, m)?)?;
    m.add_function(wrap_pyfunction!(concat_residualize, m)?)?;
    m.add_function(wrap_pyfunction!(max_abs_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(expand_hmp24, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(framewise_displacement, m)?)?;
    m.add_function(wrap_pyfunction!(mean_fd, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(fc_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(qcfc, m)?)?;
    m.add_function(wrap_pyfunction!(generate_cohort, m)?)?;
    m.add_function(wrap_pyfunction!(pipeline_names, m)?)?;
    Ok(())
}
