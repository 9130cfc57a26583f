//! Least-squares residualization against nuisance design matrices.
//!
//! Every fit demeans both the signals and the design columns first, which is
//! the same as fitting with an implicit intercept. The solver is a
//! column-pivoted Householder QR, so rank-deficient designs (for example
//! AROMA components that duplicate a motion regressor) are handled without
//! forming normal equations.

mod qr;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use qr::HouseholderQr;

/// Where a block of nuisance regressors came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Source {
    Hmp,
    Aroma,
    Physio,
    Mixed,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Hmp => "HMP",
            Source::Aroma => "AROMA",
            Source::Physio => "PHYSIO",
            Source::Mixed => "MIXED",
        })
    }
}

/// Timepoints × signals. Each column is one voxel or ROI timeseries.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix {
    values: DMatrix<f64>,
    labels: Vec<String>,
}

impl SignalMatrix {
    pub fn new(values: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::Dimension("signal matrix has no timepoints".into()));
        }
        if labels.len() != values.ncols() {
            return Err(Error::Dimension(format!(
                "{} labels for {} signal columns",
                labels.len(),
                values.ncols()
            )));
        }
        check_finite(&values, "signal matrix")?;
        Ok(Self { values, labels })
    }

    /// Builds a matrix with generated labels `s000`, `s001`, ...
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let labels = (0..values.ncols()).map(|i| format!("s{i:03}")).collect();
        Self::new(values, labels)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_timepoints(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_signals(&self) -> usize {
        self.values.ncols()
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Same labels, every column shifted to zero mean.
    pub fn demeaned(&self) -> Self {
        Self {
            values: demean_columns(&self.values),
            labels: self.labels.clone(),
        }
    }

    fn with_values(&self, values: DMatrix<f64>) -> Self {
        Self {
            values,
            labels: self.labels.clone(),
        }
    }
}

/// Timepoints × regressors, tagged with the block it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    column_labels: Vec<String>,
    source: Source,
}

impl DesignMatrix {
    pub fn new(values: DMatrix<f64>, column_labels: Vec<String>, source: Source) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::Dimension(format!(
                "design matrix needs at least 2 timepoints, got {}",
                values.nrows()
            )));
        }
        if column_labels.len() != values.ncols() {
            return Err(Error::Dimension(format!(
                "{} labels for {} design columns",
                column_labels.len(),
                values.ncols()
            )));
        }
        check_finite(&values, &format!("{source} design matrix"))?;
        Ok(Self {
            values,
            column_labels,
            source,
        })
    }

    /// A design with generated labels `<source>_00`, `<source>_01`, ...
    pub fn from_values(values: DMatrix<f64>, source: Source) -> Result<Self> {
        let prefix = source.to_string().to_lowercase();
        let labels = (0..values.ncols())
            .map(|i| format!("{prefix}_{i:02}"))
            .collect();
        Self::new(values, labels, source)
    }

    /// An `n × 0` design; regressing on it only demeans.
    pub fn empty(n_timepoints: usize, source: Source) -> Result<Self> {
        Self::new(DMatrix::zeros(n_timepoints, 0), Vec::new(), source)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_labels(&self) -> &[String] {
        &self.column_labels
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn n_timepoints(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_regressors(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    pub fn demeaned(&self) -> Self {
        Self {
            values: demean_columns(&self.values),
            column_labels: self.column_labels.clone(),
            source: self.source,
        }
    }

    pub(crate) fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }
}

fn check_finite(values: &DMatrix<f64>, what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(idx) => {
            let (row, col) = (idx % values.nrows(), idx / values.nrows());
            Err(Error::NonFinite(format!("{what} at row {row}, column {col}")))
        }
    }
}

/// Subtracts each column's mean. A second pass removes the rounding left by
/// the first, so the column sums are zero to within a few ulps.
pub fn demean_columns(values: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = values.clone();
    let n = out.nrows();
    if n == 0 {
        return out;
    }
    for mut col in out.column_iter_mut() {
        for _ in 0..2 {
            let mean = col.sum() / n as f64;
            if mean != 0.0 {
                col.add_scalar_mut(-mean);
            }
        }
    }
    out
}

/// A factorized nuisance design that can residualize any number of signals.
#[derive(Debug, Clone)]
pub struct LeastSquaresFit {
    qr: HouseholderQr,
    n_timepoints: usize,
    n_regressors: usize,
}

impl LeastSquaresFit {
    /// Demeans `design` and factorizes it.
    pub fn new(design: &DesignMatrix) -> Self {
        let centered = demean_columns(design.values());
        Self {
            qr: HouseholderQr::pivoted(centered),
            n_timepoints: design.n_timepoints(),
            n_regressors: design.n_regressors(),
        }
    }

    /// Numerical rank of the demeaned design.
    pub fn rank(&self) -> usize {
        self.qr.rank()
    }

    /// `E = Y - X beta` for demeaned `Y` and `X`. Columns whose residual is at
    /// rounding level relative to the demeaned input (constant signals, or
    /// signals lying in the design's span) come back as exact zeros.
    pub fn residualize(&self, signals: &SignalMatrix) -> Result<SignalMatrix> {
        self.check_rows(signals.n_timepoints())?;
        let mut out = demean_columns(signals.values());
        let n = out.nrows();
        let floor = n as f64 * f64::EPSILON;
        for mut col in out.column_iter_mut() {
            let before = col.norm();
            let slice = col.as_mut_slice();
            self.qr.project_out(slice);
            let after = col.norm();
            if after <= floor * before {
                col.fill(0.0);
            }
        }
        Ok(signals.with_values(out))
    }

    /// Minimum-norm coefficients, one column per signal (`k × m`).
    pub fn coefficients(&self, signals: &SignalMatrix) -> Result<DMatrix<f64>> {
        self.check_rows(signals.n_timepoints())?;
        let centered = demean_columns(signals.values());
        let mut beta = DMatrix::zeros(self.n_regressors, centered.ncols());
        for (j, col) in centered.column_iter().enumerate() {
            let b: DVector<f64> = self.qr.min_norm_solve(col.as_slice());
            beta.set_column(j, &b);
        }
        Ok(beta)
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if rows != self.n_timepoints {
            return Err(Error::Dimension(format!(
                "signals have {rows} timepoints, design has {}",
                self.n_timepoints
            )));
        }
        Ok(())
    }
}

/// Residuals of `signals` after least-squares regression on `design`.
pub fn ols_residualize(signals: &SignalMatrix, design: &DesignMatrix) -> Result<SignalMatrix> {
    if signals.n_timepoints() != design.n_timepoints() {
        return Err(Error::Dimension(format!(
            "signals have {} timepoints, design has {}",
            signals.n_timepoints(),
            design.n_timepoints()
        )));
    }
    if design.is_empty() {
        return Ok(signals.demeaned());
    }
    LeastSquaresFit::new(design).residualize(signals)
}

/// Stacks blocks side by side into one `MIXED` design. Labels are prefixed
/// with their block's source (`HMP:dx`); blocks that are already `MIXED` keep
/// their labels as they are.
pub fn concat_designs(n_timepoints: usize, blocks: &[DesignMatrix]) -> Result<DesignMatrix> {
    for b in blocks {
        if b.n_timepoints() != n_timepoints {
            return Err(Error::Dimension(format!(
                "{} block has {} timepoints, expected {n_timepoints}",
                b.source(),
                b.n_timepoints()
            )));
        }
    }
    let k: usize = blocks.iter().map(DesignMatrix::n_regressors).sum();
    let mut values = DMatrix::zeros(n_timepoints, k);
    let mut labels = Vec::with_capacity(k);
    let mut offset = 0;
    for b in blocks {
        let w = b.n_regressors();
        values.columns_mut(offset, w).copy_from(b.values());
        offset += w;
        for label in b.column_labels() {
            labels.push(match b.source() {
                Source::Mixed => label.clone(),
                s => format!("{s}:{label}"),
            });
        }
    }
    DesignMatrix::new(values, labels, Source::Mixed)
}

/// Regresses the blocks out one after another, each step acting on the
/// previous step's residuals.
///
/// Only the last block is guaranteed orthogonal to the output. Earlier blocks
/// can leak back in when later blocks are correlated with them.
pub fn sequential_residualize(
    signals: &SignalMatrix,
    blocks: &[DesignMatrix],
) -> Result<SignalMatrix> {
    let mut current = signals.demeaned();
    for block in blocks {
        current = ols_residualize(&current, block)?;
    }
    Ok(current)
}

/// Largest `|Pearson r|` between any signal column and any design column.
/// Constant columns on either side are skipped.
pub fn max_abs_correlation(signals: &SignalMatrix, design: &DesignMatrix) -> Result<f64> {
    if signals.n_timepoints() != design.n_timepoints() {
        return Err(Error::Dimension(format!(
            "signals have {} timepoints, design has {}",
            signals.n_timepoints(),
            design.n_timepoints()
        )));
    }
    let left = unit_centered_columns(signals.values());
    let right = unit_centered_columns(design.values());
    if left.is_empty() || right.is_empty() {
        return Err(Error::Degenerate(
            "every column is constant on at least one side".into(),
        ));
    }
    let mut best: f64 = 0.0;
    for a in &left {
        for b in &right {
            best = best.max(a.dot(b).abs());
        }
    }
    Ok(best.min(1.0))
}

/// Centered, unit-norm versions of the non-constant columns.
fn unit_centered_columns(values: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let centered = demean_columns(values);
    centered
        .column_iter()
        .zip(values.column_iter())
        .filter_map(|(c, raw)| {
            let norm = c.norm();
            if is_negligible(norm, raw.amax(), c.len()) {
                None
            } else {
                Some(c / norm)
            }
        })
        .collect()
}

/// True when a centered norm is zero up to rounding of the raw values.
pub(crate) fn is_negligible(centered_norm: f64, raw_max_abs: f64, n: usize) -> bool {
    centered_norm <= 4.0 * (n as f64).sqrt() * f64::EPSILON * raw_max_abs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> SignalMatrix {
        SignalMatrix::from_values(DMatrix::from_column_slice(v.len(), 1, v)).unwrap()
    }

    fn design(rows: usize, cols: usize, v: &[f64], source: Source) -> DesignMatrix {
        DesignMatrix::from_values(DMatrix::from_row_slice(rows, cols, v), source).unwrap()
    }

    #[test]
    fn demean_examples() {
        assert_eq!(col(&[1.0, 2.0, 3.0]).demeaned().values().as_slice(), &[-1.0, 0.0, 1.0]);
        assert_eq!(col(&[0.0, 0.0, 0.0]).demeaned().values().as_slice(), &[0.0, 0.0, 0.0]);
        assert_eq!(col(&[5.0; 4]).demeaned().values().as_slice(), &[0.0; 4]);
    }

    #[test]
    fn demeaned_mean_is_tiny_for_awkward_values() {
        let v: Vec<f64> = (0..97).map(|i| 1e6 + 0.1 * i as f64 + (i as f64).sin()).collect();
        let d = col(&v).demeaned();
        let mean = d.values().sum() / v.len() as f64;
        assert!(mean.abs() < 1e-12, "{mean}");
    }

    #[test]
    fn non_finite_rejected() {
        let m = DMatrix::from_column_slice(3, 1, &[1.0, f64::NAN, 2.0]);
        assert!(matches!(SignalMatrix::from_values(m.clone()), Err(Error::NonFinite(_))));
        assert!(matches!(
            DesignMatrix::from_values(m, Source::Hmp),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn row_mismatch_is_a_dimension_error() {
        let y = col(&[1.0, 2.0, 3.0, 4.0]);
        let x = design(3, 1, &[1.0, 0.0, 2.0], Source::Hmp);
        assert!(matches!(ols_residualize(&y, &x), Err(Error::Dimension(_))));
    }

    #[test]
    fn empty_design_only_demeans() {
        let y = col(&[1.0, 4.0, 2.0, 9.0]);
        let x = DesignMatrix::empty(4, Source::Aroma).unwrap();
        assert_eq!(ols_residualize(&y, &x).unwrap(), y.demeaned());
    }

    #[test]
    fn signal_in_span_gives_zero_residual() {
        let x = design(5, 2, &[1.0, 0.0, 2.0, 1.0, 0.0, 3.0, 4.0, -1.0, 1.0, 1.0], Source::Hmp);
        let y: Vec<f64> = (0..5)
            .map(|i| 2.0 * x.values()[(i, 0)] - 0.5 * x.values()[(i, 1)] + 7.0)
            .collect();
        let e = ols_residualize(&col(&y), &x).unwrap();
        assert!(e.values().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn constant_signal_gives_zero_column() {
        let x = design(4, 1, &[1.0, 3.0, 2.0, 5.0], Source::Physio);
        let e = ols_residualize(&col(&[0.1; 4]), &x).unwrap();
        assert!(e.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn concat_widths_and_labels() {
        let n = 6;
        let mk = |k: usize, s| DesignMatrix::from_values(DMatrix::from_element(n, k, 1.0), s).unwrap();
        let blocks = [mk(24, Source::Hmp), mk(11, Source::Aroma), mk(2, Source::Physio)];
        let c = concat_designs(n, &blocks).unwrap();
        assert_eq!(c.n_regressors(), 37);
        assert_eq!(c.source(), Source::Mixed);
        assert_eq!(c.column_labels()[0], "HMP:hmp_00");
        assert_eq!(c.column_labels()[36], "PHYSIO:physio_01");

        let single = concat_designs(n, &blocks[1..2]).unwrap();
        assert_eq!(single.values(), blocks[1].values());

        let empty = concat_designs(n, &[]).unwrap();
        assert_eq!(empty.n_regressors(), 0);
        assert_eq!(empty.n_timepoints(), n);

        assert!(matches!(concat_designs(n + 1, &blocks), Err(Error::Dimension(_))));
    }

    #[test]
    fn single_block_sequential_matches_ols() {
        let x = design(5, 1, &[1.0, -1.0, 2.0, 0.0, 3.0], Source::Hmp);
        let y = col(&[0.3, 1.0, -2.0, 4.0, 0.5]);
        assert_eq!(
            sequential_residualize(&y, &[x.clone()]).unwrap(),
            ols_residualize(&y, &x).unwrap()
        );
    }

    #[test]
    fn max_abs_correlation_examples() {
        let x = design(4, 1, &[1.0, 2.0, 4.0, 3.0], Source::Hmp);
        let same = SignalMatrix::from_values(x.values().clone()).unwrap();
        assert!((max_abs_correlation(&same, &x).unwrap() - 1.0).abs() < 1e-15);

        let e = ols_residualize(&col(&[2.0, -1.0, 0.5, 3.0]), &x).unwrap();
        assert!(max_abs_correlation(&e, &x).unwrap() <= 1e-10);

        let flat = design(4, 1, &[2.0; 4], Source::Hmp);
        assert!(matches!(max_abs_correlation(&same, &flat), Err(Error::Degenerate(_))));
    }

    #[test]
    fn coefficients_recover_full_rank_fit() {
        let x = design(5, 2, &[1.0, 0.0, 2.0, 1.0, 0.0, 3.0, 4.0, -1.0, 1.0, 1.0], Source::Hmp);
        let y: Vec<f64> = (0..5)
            .map(|i| 2.0 * x.values()[(i, 0)] - 0.5 * x.values()[(i, 1)] + 1.0)
            .collect();
        let beta = LeastSquaresFit::new(&x).coefficients(&col(&y)).unwrap();
        assert!((beta[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((beta[(1, 0)] + 0.5).abs() < 1e-12);
    }
}
