//! Nuisance blocks and the four correction pipelines.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcmetrics::{
    distance_dependence, edge_lengths, fc_matrix, framewise_displacement, mean_fd, qcfc, FcMatrix,
    Parcellation, QcFcReport, DEFAULT_HEAD_RADIUS_MM,
};
use crate::regress::{
    concat_designs, ols_residualize, sequential_residualize, DesignMatrix, SignalMatrix, Source,
};

/// Column names of the six rigid-body parameters, in file order.
pub const MOTION_COLUMNS: [&str; 6] = ["dx_mm", "dy_mm", "dz_mm", "rx_rad", "ry_rad", "rz_rad"];

const HMP_NAMES: [&str; 6] = ["dx", "dy", "dz", "rx", "ry", "rz"];

/// Per-timepoint rigid-body realignment parameters: three translations in mm
/// followed by three rotations in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMotion {
    params: DMatrix<f64>,
}

impl HeadMotion {
    pub fn new(params: DMatrix<f64>) -> Result<Self> {
        if params.ncols() != 6 {
            return Err(Error::Dimension(format!(
                "head motion needs 6 columns, got {}",
                params.ncols()
            )));
        }
        if params.nrows() < 2 {
            return Err(Error::Dimension(format!(
                "head motion needs at least 2 timepoints, got {}",
                params.nrows()
            )));
        }
        if let Some(idx) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "head motion at row {}, column {}",
                idx % params.nrows(),
                MOTION_COLUMNS[idx / params.nrows()]
            )));
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &DMatrix<f64> {
        &self.params
    }

    pub fn n_timepoints(&self) -> usize {
        self.params.nrows()
    }
}

/// Which correction is applied to a subject's ROI timeseries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pipeline {
    /// Demeaning only; the uncorrected reference.
    #[serde(rename = "baseline")]
    Baseline,
    /// HMP > AROMA > Physio.
    #[serde(rename = "seq-hmp-aroma-physio")]
    SeqHmpAromaPhysio,
    /// AROMA > HMP > Physio.
    #[serde(rename = "seq-aroma-hmp-physio")]
    SeqAromaHmpPhysio,
    /// [AROMA, HMP, Physio] in a single regression.
    #[serde(rename = "concat")]
    ConcatAll,
}

impl Pipeline {
    pub const ALL: [Pipeline; 4] = [
        Pipeline::Baseline,
        Pipeline::SeqHmpAromaPhysio,
        Pipeline::SeqAromaHmpPhysio,
        Pipeline::ConcatAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Baseline => "baseline",
            Pipeline::SeqHmpAromaPhysio => "seq-hmp-aroma-physio",
            Pipeline::SeqAromaHmpPhysio => "seq-aroma-hmp-physio",
            Pipeline::ConcatAll => "concat",
        }
    }

    pub fn is_correction(self) -> bool {
        self != Pipeline::Baseline
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Pipeline::ALL.iter().map(|p| p.name()).collect();
                Error::validation("pipeline", format!("unknown `{s}`, expected one of {}", names.join(", ")))
            })
    }
}

/// Everything needed to correct one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectBundle {
    pub subject_id: String,
    pub ts: SignalMatrix,
    pub motion: HeadMotion,
    pub aroma: DesignMatrix,
    pub physio: DesignMatrix,
}

impl SubjectBundle {
    pub fn new(
        subject_id: impl Into<String>,
        ts: SignalMatrix,
        motion: HeadMotion,
        aroma: DesignMatrix,
        physio: DesignMatrix,
    ) -> Result<Self> {
        let bundle = Self {
            subject_id: subject_id.into(),
            ts,
            motion,
            aroma: aroma.with_source(Source::Aroma),
            physio: physio.with_source(Source::Physio),
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn n_timepoints(&self) -> usize {
        self.ts.n_timepoints()
    }

    fn validate(&self) -> Result<()> {
        let n = self.ts.n_timepoints();
        for (what, rows) in [
            ("motion", self.motion.n_timepoints()),
            ("aroma", self.aroma.n_timepoints()),
            ("physio", self.physio.n_timepoints()),
        ] {
            if rows != n {
                return Err(Error::Dimension(format!(
                    "subject {}: {what} has {rows} timepoints, timeseries has {n}",
                    self.subject_id
                )));
            }
        }
        if self.physio.n_regressors() != 2 {
            return Err(Error::Dimension(format!(
                "subject {}: physio needs 2 columns, got {}",
                self.subject_id,
                self.physio.n_regressors()
            )));
        }
        Ok(())
    }
}

/// The three nuisance blocks of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceBlocks {
    pub hmp: DesignMatrix,
    pub aroma: DesignMatrix,
    pub physio: DesignMatrix,
}

/// The 24-parameter motion expansion. Column order: the 6 parameters, their 6
/// backward differences (first row 0), the 6 squared parameters, the 6
/// squared differences.
pub fn expand_hmp24(motion: &HeadMotion) -> Result<DesignMatrix> {
    let p = motion.params();
    let n = p.nrows();
    let mut out = DMatrix::zeros(n, 24);
    for c in 0..6 {
        for t in 0..n {
            let v = p[(t, c)];
            let d = if t == 0 { 0.0 } else { v - p[(t - 1, c)] };
            out[(t, c)] = v;
            out[(t, 6 + c)] = d;
            out[(t, 12 + c)] = v * v;
            out[(t, 18 + c)] = d * d;
        }
    }
    let labels = HMP_NAMES
        .iter()
        .map(|s| s.to_string())
        .chain(HMP_NAMES.iter().map(|s| format!("{s}_deriv")))
        .chain(HMP_NAMES.iter().map(|s| format!("{s}_sq")))
        .chain(HMP_NAMES.iter().map(|s| format!("{s}_deriv_sq")))
        .collect();
    DesignMatrix::new(out, labels, Source::Hmp)
}

pub fn build_blocks(bundle: &SubjectBundle) -> Result<NuisanceBlocks> {
    bundle.validate()?;
    Ok(NuisanceBlocks {
        hmp: expand_hmp24(&bundle.motion)?,
        aroma: bundle.aroma.clone().with_source(Source::Aroma),
        physio: bundle.physio.clone().with_source(Source::Physio),
    })
}

/// Runs one pipeline on one subject. The output keeps the ROI labels and
/// every column has zero mean.
pub fn run_pipeline(bundle: &SubjectBundle, pipeline: Pipeline) -> Result<SignalMatrix> {
    if pipeline == Pipeline::Baseline {
        return Ok(bundle.ts.demeaned());
    }
    let NuisanceBlocks { hmp, aroma, physio } = build_blocks(bundle)?;
    match pipeline {
        Pipeline::Baseline => unreachable!(),
        Pipeline::SeqHmpAromaPhysio => sequential_residualize(&bundle.ts, &[hmp, aroma, physio]),
        Pipeline::SeqAromaHmpPhysio => sequential_residualize(&bundle.ts, &[aroma, hmp, physio]),
        Pipeline::ConcatAll => {
            let all = concat_designs(bundle.n_timepoints(), &[aroma, hmp, physio])?;
            ols_residualize(&bundle.ts, &all)
        }
    }
}

/// Corrected outputs of every subject plus the cohort QC-FC report, with the
/// distance-dependence fields filled in.
pub fn evaluate_pipeline(
    bundles: &[SubjectBundle],
    parcellation: &Parcellation,
    pipeline: Pipeline,
) -> Result<(Vec<SignalMatrix>, QcFcReport)> {
    let per_subject: Vec<(SignalMatrix, FcMatrix, f64)> = bundles
        .par_iter()
        .map(|b| {
            let out = run_pipeline(b, pipeline)?;
            let fc = fc_matrix(&out)?;
            let mfd = mean_fd(&framewise_displacement(&b.motion, DEFAULT_HEAD_RADIUS_MM)?)?;
            Ok((out, fc, mfd))
        })
        .collect::<Result<_>>()?;
    let mut outputs = Vec::with_capacity(per_subject.len());
    let mut fcs = Vec::with_capacity(per_subject.len());
    let mut mfds = Vec::with_capacity(per_subject.len());
    for (out, fc, mfd) in per_subject {
        outputs.push(out);
        fcs.push(fc);
        mfds.push(mfd);
    }
    let mut report = qcfc(&fcs, &mfds)?;
    distance_dependence(&mut report, &edge_lengths(parcellation))?;
    Ok((outputs, report))
}
