//! Framewise displacement, functional connectivity, and the QC-FC metrics.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::pipeline::HeadMotion;
use crate::regress::{demean_columns, is_negligible, SignalMatrix};

/// Head radius used to turn rotations into arc length at the cortex.
pub const DEFAULT_HEAD_RADIUS_MM: f64 = 50.0;

/// Number of unordered ROI pairs.
pub fn n_edges(n_rois: usize) -> usize {
    n_rois * n_rois.saturating_sub(1) / 2
}

/// Framewise displacement per timepoint, in mm. `FD[0]` is 0.
pub fn framewise_displacement(motion: &HeadMotion, radius_mm: f64) -> Result<Vec<f64>> {
    if !(radius_mm.is_finite() && radius_mm > 0.0) {
        return Err(Error::validation("radius_mm", format!("must be positive, got {radius_mm}")));
    }
    let p = motion.params();
    let mut fd = vec![0.0; p.nrows()];
    for t in 1..p.nrows() {
        let mut trans = 0.0;
        let mut rot = 0.0;
        for c in 0..3 {
            trans += (p[(t, c)] - p[(t - 1, c)]).abs();
            rot += (p[(t, c + 3)] - p[(t - 1, c + 3)]).abs();
        }
        fd[t] = trans + radius_mm * rot;
    }
    Ok(fd)
}

/// Mean FD over every timepoint, the leading zero included.
pub fn mean_fd(fd: &[f64]) -> Result<f64> {
    if fd.is_empty() {
        return Err(Error::Degenerate("mean of an empty FD trace".into()));
    }
    Ok(fd.iter().sum::<f64>() / fd.len() as f64)
}

/// A correlation coefficient with its two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p: f64,
}

/// Two-sided p-value of a sample correlation under the t approximation with
/// `m - 2` degrees of freedom. With `t^2 = df r^2 / (1 - r^2)` the tail mass
/// `I_{df/(df+t^2)}(df/2, 1/2)` simplifies to `I_{1-r^2}(df/2, 1/2)`.
pub fn correlation_p_value(r: f64, m: usize) -> f64 {
    let df = (m - 2) as f64;
    let x = (1.0 - r * r).clamp(0.0, 1.0);
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "correlation inputs have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::Degenerate(format!(
            "correlation needs at least 3 observations, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation input".into()));
    }
    Ok(())
}

/// Sample Pearson r, or `None` when either side is constant.
fn pearson_r(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    let amax = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    if is_negligible(sxx.sqrt(), amax(x), x.len()) || is_negligible(syy.sqrt(), amax(y), y.len())
    {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pair(x, y)?;
    let r = pearson_r(x, y)
        .ok_or_else(|| Error::Degenerate("constant input to Pearson correlation".into()))?;
    Ok(Correlation {
        r,
        p: correlation_p_value(r, x.len()),
    })
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

/// Spearman's rho: Pearson on average ranks, same t-approximation p-value.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pair(x, y)?;
    let r = pearson_r(&average_ranks(x), &average_ranks(y))
        .ok_or_else(|| Error::Degenerate("constant input to Spearman correlation".into()))?;
    Ok(Correlation {
        r,
        p: correlation_p_value(r, x.len()),
    })
}

/// Median, averaging the two central values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    })
}

/// ROI × ROI Pearson connectivity. Symmetric with an exact unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct FcMatrix {
    values: DMatrix<f64>,
    roi_labels: Vec<String>,
}

impl FcMatrix {
    /// Validates shape, symmetry, diagonal and range.
    pub fn new(values: DMatrix<f64>, roi_labels: Vec<String>) -> Result<Self> {
        let r = values.nrows();
        if values.ncols() != r || roi_labels.len() != r {
            return Err(Error::Dimension(format!(
                "FC matrix is {}x{} with {} labels",
                r,
                values.ncols(),
                roi_labels.len()
            )));
        }
        for i in 0..r {
            if values[(i, i)] != 1.0 {
                return Err(Error::validation("fc diagonal", format!("entry {i} is not 1")));
            }
            for j in i + 1..r {
                let (a, b) = (values[(i, j)], values[(j, i)]);
                if !a.is_finite() || !(-1.0..=1.0).contains(&a) || (a - b).abs() > 1e-12 {
                    return Err(Error::validation(
                        "fc entries",
                        format!("({i}, {j}) is {a} / {b}"),
                    ));
                }
            }
        }
        Ok(Self { values, roi_labels })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn roi_labels(&self) -> &[String] {
        &self.roi_labels
    }

    pub fn n_rois(&self) -> usize {
        self.values.nrows()
    }

    /// Upper-triangle entries, row-major: (0,1), (0,2), ..., (1,2), ...
    pub fn edges(&self) -> Vec<f64> {
        upper_triangle(&self.values)
    }
}

pub fn upper_triangle(m: &DMatrix<f64>) -> Vec<f64> {
    let r = m.nrows();
    let mut out = Vec::with_capacity(n_edges(r));
    for i in 0..r {
        for j in i + 1..r {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Pairwise Pearson correlation between ROI timeseries.
pub fn fc_matrix(ts: &SignalMatrix) -> Result<FcMatrix> {
    if ts.n_timepoints() < 3 {
        return Err(Error::Degenerate(format!(
            "FC needs at least 3 timepoints, got {}",
            ts.n_timepoints()
        )));
    }
    let mut z = demean_columns(ts.values());
    for (c, mut col) in z.column_iter_mut().enumerate() {
        let norm = col.norm();
        if is_negligible(norm, ts.values().column(c).amax(), col.len()) {
            return Err(Error::Degenerate(format!(
                "ROI `{}` has a constant timeseries",
                ts.labels()[c]
            )));
        }
        col /= norm;
    }
    let mut fc = z.tr_mul(&z);
    let r = fc.nrows();
    for i in 0..r {
        fc[(i, i)] = 1.0;
        for j in i + 1..r {
            let v = fc[(i, j)].clamp(-1.0, 1.0);
            fc[(i, j)] = v;
            fc[(j, i)] = v;
        }
    }
    Ok(FcMatrix {
        values: fc,
        roi_labels: ts.labels().to_vec(),
    })
}

/// Element-wise mean of subject FC matrices sharing one set of ROI labels.
pub fn mean_fc(fcs: &[FcMatrix]) -> Result<FcMatrix> {
    let first = fcs
        .first()
        .ok_or_else(|| Error::Degenerate("mean of zero FC matrices".into()))?;
    let mut sum = DMatrix::zeros(first.n_rois(), first.n_rois());
    for fc in fcs {
        if fc.roi_labels() != first.roi_labels() {
            return Err(Error::Schema("FC matrices have different ROI labels".into()));
        }
        sum += &fc.values;
    }
    sum /= fcs.len() as f64;
    let r = sum.nrows();
    for i in 0..r {
        sum[(i, i)] = 1.0;
        for j in 0..i {
            sum[(i, j)] = sum[(j, i)];
        }
    }
    FcMatrix::new(sum, first.roi_labels().to_vec())
}

/// ROI labels and centroid coordinates (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct Parcellation {
    roi_labels: Vec<String>,
    centroids: Vec<[f64; 3]>,
}

impl Parcellation {
    pub fn new(roi_labels: Vec<String>, centroids: Vec<[f64; 3]>) -> Result<Self> {
        if roi_labels.len() < 2 {
            return Err(Error::validation("parcellation", "needs at least 2 ROIs"));
        }
        if roi_labels.len() != centroids.len() {
            return Err(Error::Dimension(format!(
                "{} ROI labels for {} centroids",
                roi_labels.len(),
                centroids.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &roi_labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::validation("parcellation", format!("duplicate ROI label `{l}`")));
            }
        }
        if centroids.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parcellation centroids".into()));
        }
        Ok(Self {
            roi_labels,
            centroids,
        })
    }

    pub fn roi_labels(&self) -> &[String] {
        &self.roi_labels
    }

    pub fn centroids(&self) -> &[[f64; 3]] {
        &self.centroids
    }

    pub fn n_rois(&self) -> usize {
        self.roi_labels.len()
    }
}

pub fn euclidean(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Centroid distances in the same upper-triangle order as [`FcMatrix::edges`].
pub fn edge_lengths(parcellation: &Parcellation) -> Vec<f64> {
    let c = parcellation.centroids();
    let mut out = Vec::with_capacity(n_edges(c.len()));
    for i in 0..c.len() {
        for j in i + 1..c.len() {
            out.push(euclidean(&c[i], &c[j]));
        }
    }
    out
}

/// Per-edge association between FC and subject motion.
///
/// Edges whose FC value does not vary across subjects have no defined
/// correlation; they are stored as `None`, counted, and left out of the
/// median and of the distance-dependence test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcFcReport {
    pub edge_qcfc: Vec<Option<f64>>,
    pub edge_pvalues: Vec<Option<f64>>,
    pub median_abs_qcfc: f64,
    pub undefined_edge_count: usize,
    pub n_subjects: usize,
    pub dist_dependence_rho: Option<f64>,
    pub dist_dependence_p: Option<f64>,
}

impl QcFcReport {
    pub fn defined_qcfc(&self) -> Vec<f64> {
        self.edge_qcfc.iter().flatten().copied().collect()
    }
}

/// QC-FC: for each edge, Pearson r between subjects' FC values and their mFD.
pub fn qcfc(fc_per_subject: &[FcMatrix], mfd_per_subject: &[f64]) -> Result<QcFcReport> {
    let n_subjects = fc_per_subject.len();
    if n_subjects != mfd_per_subject.len() {
        return Err(Error::Dimension(format!(
            "{n_subjects} FC matrices for {} mFD values",
            mfd_per_subject.len()
        )));
    }
    if n_subjects < 3 {
        return Err(Error::Degenerate(format!(
            "QC-FC needs at least 3 subjects, got {n_subjects}"
        )));
    }
    let labels = fc_per_subject[0].roi_labels();
    for fc in &fc_per_subject[1..] {
        if fc.roi_labels() != labels {
            return Err(Error::Schema("FC matrices have different ROI labels".into()));
        }
    }
    if pearson_r(mfd_per_subject, mfd_per_subject).is_none() {
        return Err(Error::Degenerate("mean FD is constant across subjects".into()));
    }
    if mfd_per_subject.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mean FD".into()));
    }

    let r = labels.len();
    let pairs: Vec<(usize, usize)> = (0..r)
        .flat_map(|i| (i + 1..r).map(move |j| (i, j)))
        .collect();
    let per_edge: Vec<Option<Correlation>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let values: Vec<f64> = fc_per_subject.iter().map(|fc| fc.values[(i, j)]).collect();
            pearson_r(&values, mfd_per_subject).map(|r| Correlation {
                r,
                p: correlation_p_value(r, n_subjects),
            })
        })
        .collect();

    let edge_qcfc: Vec<Option<f64>> = per_edge.iter().map(|c| c.map(|c| c.r)).collect();
    let edge_pvalues: Vec<Option<f64>> = per_edge.iter().map(|c| c.map(|c| c.p)).collect();
    let abs: Vec<f64> = edge_qcfc.iter().flatten().map(|r| r.abs()).collect();
    let undefined_edge_count = edge_qcfc.len() - abs.len();
    let median_abs_qcfc = median(&abs)
        .ok_or_else(|| Error::Degenerate("every edge is constant across subjects".into()))?;

    Ok(QcFcReport {
        edge_qcfc,
        edge_pvalues,
        median_abs_qcfc,
        undefined_edge_count,
        n_subjects,
        dist_dependence_rho: None,
        dist_dependence_p: None,
    })
}

/// Spearman correlation between per-edge QC-FC and edge length, over the
/// defined edges. The result is also stored in `report`.
pub fn distance_dependence(report: &mut QcFcReport, lengths: &[f64]) -> Result<Correlation> {
    if lengths.len() != report.edge_qcfc.len() {
        return Err(Error::Dimension(format!(
            "{} edge lengths for {} QC-FC edges",
            lengths.len(),
            report.edge_qcfc.len()
        )));
    }
    let (q, d): (Vec<f64>, Vec<f64>) = report
        .edge_qcfc
        .iter()
        .zip(lengths)
        .filter_map(|(q, &d)| q.map(|q| (q, d)))
        .unzip();
    if q.len() < 3 {
        return Err(Error::Degenerate(format!(
            "distance dependence needs at least 3 defined edges, got {}",
            q.len()
        )));
    }
    let c = spearman(&q, &d)?;
    report.dist_dependence_rho = Some(c.r);
    report.dist_dependence_p = Some(c.p);
    Ok(c)
}

/// Fixed-width histogram over `[lo, hi]`. Values at `hi` land in the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::validation("bins", "need at least one bin over a non-empty range"));
        }
        let bin_width = (hi - lo) / bins as f64;
        let mut counts = vec![0; bins];
        for &v in values {
            if !(lo..=hi).contains(&v) {
                continue;
            }
            let idx = (((v - lo) / bin_width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        Ok(Self {
            lo,
            bin_width,
            counts,
        })
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.counts.len())
            .map(|i| self.lo + (i as f64 + 0.5) * self.bin_width)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn motion(rows: &[[f64; 6]]) -> HeadMotion {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        HeadMotion::new(DMatrix::from_row_slice(rows.len(), 6, &flat)).unwrap()
    }

    #[test]
    fn fd_worked_example() {
        let m = motion(&[[0.0; 6], [0.1, -0.2, 0.3, 0.002, 0.0, -0.001]]);
        let fd = framewise_displacement(&m, DEFAULT_HEAD_RADIUS_MM).unwrap();
        assert_eq!(fd[0], 0.0);
        assert!((fd[1] - 0.75).abs() < 1e-12, "{}", fd[1]);
    }

    #[test]
    fn fd_constant_trace_is_zero() {
        let m = motion(&[[1.0, 2.0, 3.0, 0.1, 0.2, 0.3]; 5]);
        let fd = framewise_displacement(&m, 50.0).unwrap();
        assert!(fd.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fd_rotation_scales_with_radius() {
        let m = motion(&[[0.0; 6], [0.0, 0.0, 0.0, 0.01, -0.02, 0.005], [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]]);
        let a = framewise_displacement(&m, 50.0).unwrap();
        let b = framewise_displacement(&m, 100.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(2.0 * x, *y);
        }
        assert!(framewise_displacement(&m, 0.0).is_err());
    }

    #[test]
    fn mean_fd_examples() {
        assert_eq!(mean_fd(&[0.0; 4]).unwrap(), 0.0);
        assert_eq!(mean_fd(&[0.0, 1.0, 1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(mean_fd(&[0.0]).unwrap(), 0.0);
        assert!(matches!(mean_fd(&[]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn pearson_exact_relations() {
        let c = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((c.r - 1.0).abs() < 1e-15);
        assert!(c.p < 1e-12);
        let c = pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert!((c.r + 1.0).abs() < 1e-15);
        assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::Degenerate(_))));
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn spearman_monotone_and_ties() {
        let c = spearman(&[1.0, 2.0, 3.0], &[1.0, 8.0, 27.0]).unwrap();
        assert!((c.r - 1.0).abs() < 1e-15);
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        let c = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 3.0, 5.0]).unwrap();
        assert!((c.r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_correlation_has_unit_p() {
        let c = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, -1.0, -1.0, 1.0]).unwrap();
        assert!(c.r.abs() < 1e-15);
        assert!((c.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn fc_examples() {
        let ts = SignalMatrix::from_values(DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0, 5.0, 5.0]))
            .unwrap();
        assert_eq!(fc_matrix(&ts).unwrap().values()[(0, 1)], 1.0);

        let ts = SignalMatrix::from_values(DMatrix::from_row_slice(4, 2, &[1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0]))
            .unwrap();
        assert!(fc_matrix(&ts).unwrap().values()[(0, 1)].abs() < 1e-12);

        let ts = SignalMatrix::new(
            DMatrix::from_row_slice(3, 2, &[1.0, 4.0, 2.0, 4.0, 3.0, 4.0]),
            vec!["a".into(), "flat".into()],
        )
        .unwrap();
        let err = fc_matrix(&ts).unwrap_err();
        assert!(err.to_string().contains("flat"), "{err}");
    }

    #[test]
    fn edge_length_examples() {
        let p = Parcellation::new(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec![[0.0, 0.0, 0.0], [3.0, 4.0, 0.0], [3.0, 4.0, 0.0], [0.0, 0.0, 1.0]],
        )
        .unwrap();
        let l = edge_lengths(&p);
        // (0,1),(0,2),(0,3),(1,2),(1,3),(2,3)
        assert_eq!(l.len(), 6);
        assert_eq!(l[0], 5.0);
        assert_eq!(l[3], 0.0);
        assert_eq!(l[2], 1.0);
        assert!(Parcellation::new(vec!["a".into(), "a".into()], vec![[0.0; 3]; 2]).is_err());
    }

    #[test]
    fn histogram_edges() {
        let h = Histogram::new(&[-1.0, 0.0, 0.99, 1.0], 50, -1.0, 1.0).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 4);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[49], 2);
        assert!((h.centers()[0] + 0.98).abs() < 1e-15);
    }
}
