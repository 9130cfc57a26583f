use nalgebra::{DMatrix, DVector};

/// Householder QR stored LAPACK-style: `R` on and above the diagonal, the
/// reflector tails (with an implicit leading 1) below it.
#[derive(Debug, Clone)]
pub(crate) struct HouseholderQr {
    packed: DMatrix<f64>,
    tau: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
}

impl HouseholderQr {
    /// Column-pivoted factorization. Elimination stops at the first pivot whose
    /// trailing column norm is at or below `max(n, k) * eps * |R[0, 0]|`; the
    /// number of reflectors taken is the numerical rank.
    pub(crate) fn pivoted(a: DMatrix<f64>) -> Self {
        Self::factor(a, true)
    }

    /// Plain factorization for matrices known to have full column rank.
    pub(crate) fn unpivoted(a: DMatrix<f64>) -> Self {
        Self::factor(a, false)
    }

    fn factor(mut a: DMatrix<f64>, pivot: bool) -> Self {
        let (n, k) = a.shape();
        let steps = n.min(k);
        let rel_tol = n.max(k) as f64 * f64::EPSILON;
        let mut perm: Vec<usize> = (0..k).collect();
        let mut tau = Vec::with_capacity(steps);
        let mut threshold: Option<f64> = None;

        for j in 0..steps {
            if pivot {
                // Trailing norms are recomputed rather than downdated; k is small.
                let mut best = j;
                let mut best_norm = -1.0;
                for c in j..k {
                    let norm = trailing_norm(&a, j, c);
                    if norm > best_norm {
                        best = c;
                        best_norm = norm;
                    }
                }
                if best != j {
                    a.swap_columns(j, best);
                    perm.swap(j, best);
                }
                let limit = *threshold.get_or_insert(rel_tol * best_norm);
                if best_norm <= limit || best_norm == 0.0 {
                    break;
                }
            }

            let norm = trailing_norm(&a, j, j);
            if norm == 0.0 {
                tau.push(0.0);
                continue;
            }
            let x0 = a[(j, j)];
            let beta = -x0.signum() * norm;
            let t = (beta - x0) / beta;
            let scale = 1.0 / (x0 - beta);
            for i in j + 1..n {
                a[(i, j)] *= scale;
            }
            a[(j, j)] = beta;
            tau.push(t);

            for c in j + 1..k {
                let mut w = a[(j, c)];
                for i in j + 1..n {
                    w += a[(i, j)] * a[(i, c)];
                }
                w *= t;
                a[(j, c)] -= w;
                for i in j + 1..n {
                    let vi = a[(i, j)];
                    a[(i, c)] -= w * vi;
                }
            }
        }

        let rank = tau.len();
        Self {
            packed: a,
            tau,
            perm,
            rank,
        }
    }

    pub(crate) fn rank(&self) -> usize {
        self.rank
    }

    fn reflect(&self, j: usize, y: &mut [f64]) {
        let t = self.tau[j];
        if t == 0.0 {
            return;
        }
        let v = self.packed.column(j);
        let n = y.len();
        let mut w = y[j];
        for i in j + 1..n {
            w += v[i] * y[i];
        }
        w *= t;
        y[j] -= w;
        for i in j + 1..n {
            y[i] -= w * v[i];
        }
    }

    /// `y <- Q^T y`, using the first `rank` reflectors.
    pub(crate) fn apply_qt(&self, y: &mut [f64]) {
        for j in 0..self.rank {
            self.reflect(j, y);
        }
    }

    /// `y <- Q y`, using the first `rank` reflectors.
    pub(crate) fn apply_q(&self, y: &mut [f64]) {
        for j in (0..self.rank).rev() {
            self.reflect(j, y);
        }
    }

    /// Replaces `y` with its component orthogonal to the numerical column space.
    pub(crate) fn project_out(&self, y: &mut [f64]) {
        self.apply_qt(y);
        for v in y.iter_mut().take(self.rank) {
            *v = 0.0;
        }
        self.apply_q(y);
    }

    /// Minimum-norm least-squares coefficients for `y`, in the original column
    /// order. Rank-deficient systems go through a second QR of `[R11 R12]^T`
    /// (complete orthogonal decomposition).
    pub(crate) fn min_norm_solve(&self, y: &[f64]) -> DVector<f64> {
        let k = self.packed.ncols();
        let r = self.rank;
        let mut w = y.to_vec();
        self.apply_qt(&mut w);

        let z = if r == k {
            let mut z = vec![0.0; k];
            for i in (0..r).rev() {
                let mut s = w[i];
                for l in i + 1..r {
                    s -= self.packed[(i, l)] * z[l];
                }
                z[i] = s / self.packed[(i, i)];
            }
            z
        } else {
            let mut m = DMatrix::zeros(k, r);
            for i in 0..r {
                for j in i..k {
                    m[(j, i)] = self.packed[(i, j)];
                }
            }
            let second = HouseholderQr::unpivoted(m);
            let mut u = vec![0.0; k];
            for i in 0..r {
                let mut s = w[i];
                for l in 0..i {
                    s -= second.packed[(l, i)] * u[l];
                }
                u[i] = s / second.packed[(i, i)];
            }
            second.apply_q(&mut u);
            u
        };

        let mut beta = DVector::zeros(k);
        for (i, &col) in self.perm.iter().enumerate() {
            beta[col] = z[i];
        }
        beta
    }
}

fn trailing_norm(a: &DMatrix<f64>, row: usize, col: usize) -> f64 {
    a.column(col).rows_range(row..).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_rank_reconstructs_columns() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 7.0, 1.0, 0.0]);
        let qr = HouseholderQr::pivoted(a.clone());
        assert_eq!(qr.rank(), 2);
        for c in 0..2 {
            let mut col: Vec<f64> = a.column(c).iter().copied().collect();
            qr.project_out(&mut col);
            assert!(col.iter().all(|v| v.abs() < 1e-12), "{col:?}");
        }
    }

    #[test]
    fn duplicated_column_detected_as_rank_deficient() {
        let a = DMatrix::from_row_slice(
            5,
            3,
            &[
                1.0, 2.0, 1.0, //
                0.0, 1.0, 0.0, //
                3.0, -1.0, 3.0, //
                2.0, 2.0, 2.0, //
                -1.0, 0.5, -1.0,
            ],
        );
        let qr = HouseholderQr::pivoted(a);
        assert_eq!(qr.rank(), 2);
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let qr = HouseholderQr::pivoted(DMatrix::zeros(6, 3));
        assert_eq!(qr.rank(), 0);
        let mut y = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        qr.project_out(&mut y);
        assert_eq!(y, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn min_norm_splits_weight_over_duplicates() {
        // y = 2 * x with x duplicated: the minimum-norm answer is (1, 1).
        let x = [1.0, -2.0, 0.5, 3.0];
        let mut a = DMatrix::zeros(4, 2);
        for i in 0..4 {
            a[(i, 0)] = x[i];
            a[(i, 1)] = x[i];
        }
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let beta = HouseholderQr::pivoted(a).min_norm_solve(&y);
        assert!((beta[0] - 1.0).abs() < 1e-12 && (beta[1] - 1.0).abs() < 1e-12, "{beta}");
    }
}
