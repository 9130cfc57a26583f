//! Seeded synthetic cohort with known ground-truth connectivity.
//!
//! Each subject's ROI timeseries is a latent-factor neural signal plus two
//! kinds of contamination:
//!
//! * a motion artifact emitted by a few point sources inside the head. Every
//!   ROI picks up each source's driver weighted by `exp(-distance / length
//!   scale)`, scaled by `artifact_gain * motion amplitude`. Nearby ROIs share
//!   artifact, so short edges inflate for high-motion subjects.
//! * two smooth physiological confounds with small per-ROI gains.
//!
//! Every contamination term is built from the subject's own HMP-24, AROMA
//! and physio columns, so it lies exactly in their joint span.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{expand_hmp24, HeadMotion, SubjectBundle};
use crate::qcmetrics::{euclidean, FcMatrix, Parcellation, DEFAULT_HEAD_RADIUS_MM};
use crate::regress::{demean_columns, DesignMatrix, SignalMatrix, Source};

/// Radius of the sphere ROI centroids are drawn from (mm).
pub const HEAD_SPHERE_RADIUS_MM: f64 = 70.0;

/// Low-pass cutoff of motion and physio traces, as a fraction of the
/// Nyquist frequency index.
pub const LOWPASS_FRACTION: f64 = 0.1;

/// Weight of the driver shared by all artifact sources.
const SHARED_DRIVER_WEIGHT: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub n_subjects: usize,
    pub n_rois: usize,
    pub n_timepoints: usize,
    /// Per-subject motion amplitude is drawn uniformly from `[low, high)`:
    /// the standard deviation of each translation trace in mm.
    pub motion_amplitude_range: (f64, f64),
    pub artifact_gain: f64,
    /// Spatial decay of artifact coupling (mm).
    pub artifact_length_scale: f64,
    pub n_aroma_components: usize,
    /// 0 gives AROMA stand-ins independent of motion, 1 makes them pure
    /// combinations of the HMP-24 regressors.
    pub aroma_hmp_mixing: f64,
    pub seed: u64,
}

impl PhantomConfig {
    /// 60 subjects, 100 ROIs, 200 timepoints, gain 1, mixing 0.6, seed 42.
    pub fn reference() -> Self {
        Self {
            n_subjects: 60,
            n_rois: 100,
            n_timepoints: 200,
            motion_amplitude_range: (0.05, 1.0),
            artifact_gain: 1.0,
            artifact_length_scale: 35.0,
            n_aroma_components: 11,
            aroma_hmp_mixing: 0.6,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 3 {
            return Err(Error::validation("n_subjects", format!("must be at least 3, got {}", self.n_subjects)));
        }
        if self.n_rois < 4 {
            return Err(Error::validation("n_rois", format!("must be at least 4, got {}", self.n_rois)));
        }
        if self.n_timepoints < 24 {
            return Err(Error::validation(
                "n_timepoints",
                format!("must be at least 24, got {}", self.n_timepoints),
            ));
        }
        let (lo, hi) = self.motion_amplitude_range;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
            return Err(Error::validation(
                "motion_amplitude_range",
                format!("need 0 <= low < high, got ({lo}, {hi})"),
            ));
        }
        if !(self.artifact_gain.is_finite() && self.artifact_gain >= 0.0) {
            return Err(Error::validation("artifact_gain", "must be finite and >= 0"));
        }
        if !(self.artifact_length_scale.is_finite() && self.artifact_length_scale > 0.0) {
            return Err(Error::validation("artifact_length_scale", "must be finite and > 0"));
        }
        if !(0.0..=1.0).contains(&self.aroma_hmp_mixing) {
            return Err(Error::validation("aroma_hmp_mixing", "must lie in [0, 1]"));
        }
        Ok(())
    }

    fn n_factors(&self) -> usize {
        (self.n_rois / 10).max(1)
    }

    fn n_sources(&self) -> usize {
        (self.n_rois / 25).max(2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCohort {
    pub bundles: Vec<SubjectBundle>,
    pub parcellation: Parcellation,
    pub truth_fc: FcMatrix,
    pub per_subject_motion_amplitude: Vec<f64>,
    /// Injected artifact plus physio confound per subject (timepoints × ROIs).
    pub contamination: Vec<DMatrix<f64>>,
}

/// Mean absolute difference over upper-triangle edges.
pub fn truth_error(corrected_fc: &FcMatrix, truth_fc: &FcMatrix) -> Result<f64> {
    if corrected_fc.roi_labels() != truth_fc.roi_labels() {
        return Err(Error::Schema("FC matrices have different ROI labels".into()));
    }
    let a = corrected_fc.edges();
    let b = truth_fc.edges();
    if a.is_empty() {
        return Err(Error::Degenerate("FC matrix has no edges".into()));
    }
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

pub fn roi_label(i: usize) -> String {
    format!("roi-{i:03}")
}

pub fn subject_id(i: usize) -> String {
    format!("sub-{:03}", i + 1)
}

/// Draws the cohort. The random stream is consumed in a fixed order and no
/// draw depends on `artifact_gain` or `aroma_hmp_mixing`, so changing either
/// keeps every other random quantity the same.
pub fn generate_cohort(cfg: &PhantomConfig) -> Result<PhantomCohort> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let r = cfg.n_rois;
    let n = cfg.n_timepoints;

    let centroids: Vec<[f64; 3]> = (0..r).map(|_| point_in_ball(&mut rng, HEAD_SPHERE_RADIUS_MM)).collect();
    let labels: Vec<String> = (0..r).map(roi_label).collect();
    let parcellation = Parcellation::new(labels.clone(), centroids.clone())?;

    let (loadings, unique_sd) = latent_loadings(&mut rng, r, cfg.n_factors());
    let truth_fc = truth_from_loadings(&loadings, labels.clone())?;

    let sources: Vec<usize> = sample(&mut rng, r, cfg.n_sources()).into_vec();
    let coupling = DMatrix::from_fn(r, sources.len(), |i, s| {
        (-euclidean(&centroids[i], &centroids[sources[s]]) / cfg.artifact_length_scale).exp()
    });
    let physio_gain = DMatrix::from_fn(r, 2, |_, _| rng.random_range(0.1..0.3));
    let roi_offset: Vec<f64> = (0..r).map(|_| rng.random_range(50.0..150.0)).collect();

    let mut bundles = Vec::with_capacity(cfg.n_subjects);
    let mut amplitudes = Vec::with_capacity(cfg.n_subjects);
    let mut contamination = Vec::with_capacity(cfg.n_subjects);
    let (lo, hi) = cfg.motion_amplitude_range;

    for s in 0..cfg.n_subjects {
        let amplitude = rng.random_range(lo..hi);

        let mut motion = DMatrix::zeros(n, 6);
        for c in 0..6 {
            let scale = if c < 3 { amplitude } else { amplitude / DEFAULT_HEAD_RADIUS_MM };
            let trace = standardize(&lowpass_noise(&mut rng, n));
            motion.set_column(c, &(trace * scale));
        }
        let motion = HeadMotion::new(motion)?;
        let hmp = standardize_columns(expand_hmp24(&motion)?.values());

        let p = cfg.n_aroma_components;
        let mut aroma = DMatrix::zeros(n, p);
        for j in 0..p {
            let motion_part = standardize(&(&hmp * gaussian_vector(&mut rng, 24)));
            let noise_part = standardize(&gaussian_vector(&mut rng, n));
            let comp = motion_part * cfg.aroma_hmp_mixing + noise_part * (1.0 - cfg.aroma_hmp_mixing);
            aroma.set_column(j, &comp);
        }
        let aroma_std = standardize_columns(&aroma);

        let shared = driver(&mut rng, &hmp, &aroma_std);
        let mut drivers = DMatrix::zeros(n, sources.len());
        for k in 0..sources.len() {
            let own = driver(&mut rng, &hmp, &aroma_std);
            let d = &shared * SHARED_DRIVER_WEIGHT + own * (1.0 - SHARED_DRIVER_WEIGHT.powi(2)).sqrt();
            drivers.set_column(k, &d);
        }
        let artifact = &drivers * coupling.transpose() * (cfg.artifact_gain * amplitude);

        let mut physio = DMatrix::zeros(n, 2);
        for c in 0..2 {
            physio.set_column(c, &standardize(&lowpass_noise(&mut rng, n)));
        }
        let physio_part = &physio * physio_gain.transpose();

        let factors = DMatrix::from_fn(n, loadings.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let unique = DMatrix::from_fn(n, r, |_, i| rng.sample::<f64, _>(StandardNormal) * unique_sd[i]);
        let neural = &factors * loadings.transpose() + unique;

        let contam = &artifact + &physio_part;
        let ts = DMatrix::from_fn(n, r, |t, i| neural[(t, i)] + contam[(t, i)] + roi_offset[i]);

        let aroma_labels = (0..p).map(|j| format!("ic{:02}", j + 1)).collect();
        let bundle = SubjectBundle::new(
            subject_id(s),
            SignalMatrix::new(ts, labels.clone())?,
            motion,
            DesignMatrix::new(aroma, aroma_labels, Source::Aroma)?,
            DesignMatrix::new(physio, vec!["wm".into(), "nonbrain".into()], Source::Physio)?,
        )?;
        bundles.push(bundle);
        amplitudes.push(amplitude);
        contamination.push(contam);
    }

    Ok(PhantomCohort {
        bundles,
        parcellation,
        truth_fc,
        per_subject_motion_amplitude: amplitudes,
        contamination,
    })
}

fn point_in_ball(rng: &mut ChaCha8Rng, radius: f64) -> [f64; 3] {
    loop {
        let p = [
            rng.random_range(-radius..radius),
            rng.random_range(-radius..radius),
            rng.random_range(-radius..radius),
        ];
        if p.iter().map(|v| v * v).sum::<f64>() <= radius * radius {
            return p;
        }
    }
}

/// Sparse loadings: one primary factor per ROI, sometimes a weak second one.
/// Rows have squared norm below 1; the remainder is unique variance.
fn latent_loadings(rng: &mut ChaCha8Rng, r: usize, k: usize) -> (DMatrix<f64>, Vec<f64>) {
    let mut l: DMatrix<f64> = DMatrix::zeros(r, k);
    for i in 0..r {
        let primary = rng.random_range(0..k);
        let sign = if rng.random_bool(0.85) { 1.0 } else { -1.0 };
        l[(i, primary)] = sign * rng.random_range(0.45..0.8);
        if k > 1 && rng.random_bool(0.3) {
            let second = (primary + rng.random_range(1..k)) % k;
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            l[(i, second)] = sign * rng.random_range(0.1..0.3);
        }
    }
    let unique_sd: Vec<f64> = (0..r)
        .map(|i| (1.0 - l.row(i).norm_squared()).sqrt())
        .collect();
    (l, unique_sd)
}

fn truth_from_loadings(l: &DMatrix<f64>, labels: Vec<String>) -> Result<FcMatrix> {
    let mut c = l * l.transpose();
    let r = c.nrows();
    for i in 0..r {
        c[(i, i)] = 1.0;
        for j in 0..i {
            c[(i, j)] = c[(j, i)];
        }
    }
    FcMatrix::new(c, labels)
}

/// Gaussian noise restricted to the lowest `LOWPASS_FRACTION` of the
/// frequency band: a random-phase sum of the retained Fourier modes.
fn lowpass_noise(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let cutoff = ((LOWPASS_FRACTION * (n / 2) as f64).floor() as usize).max(1);
    let coeffs: Vec<(f64, f64)> = (0..cutoff)
        .map(|_| (rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    DVector::from_fn(n, |t, _| {
        coeffs
            .iter()
            .enumerate()
            .map(|(f, (a, b))| {
                let w = std::f64::consts::TAU * (f + 1) as f64 * t as f64 / n as f64;
                a * w.cos() + b * w.sin()
            })
            .sum()
    })
}

fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Zero mean, unit sample standard deviation. Constant input maps to zeros.
fn standardize(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len() as f64;
    let centered = v.add_scalar(-v.sum() / n);
    let sd = (centered.norm_squared() / (n - 1.0)).sqrt();
    if sd > 0.0 {
        centered / sd
    } else {
        centered * 0.0
    }
}

fn standardize_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = demean_columns(m);
    let n = m.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let sd = (col.norm_squared() / (n - 1.0)).sqrt();
        if sd > 0.0 {
            col /= sd;
        } else {
            col.fill(0.0);
        }
    }
    out
}

/// A unit-variance random combination of the motion regressors and, when
/// present, the AROMA components.
fn driver(rng: &mut ChaCha8Rng, hmp: &DMatrix<f64>, aroma: &DMatrix<f64>) -> DVector<f64> {
    let from_hmp = standardize(&(hmp * gaussian_vector(rng, hmp.ncols())));
    if aroma.ncols() == 0 {
        return from_hmp;
    }
    let from_aroma = standardize(&(aroma * gaussian_vector(rng, aroma.ncols())));
    standardize(&(from_hmp + from_aroma))
}
