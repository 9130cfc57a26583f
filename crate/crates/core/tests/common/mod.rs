#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use omnireg_core::{DesignMatrix, HeadMotion, SignalMatrix, Source, SubjectBundle};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Smooth random walk, the usual shape of realignment traces.
pub fn random_motion(rng: &mut ChaCha8Rng, n: usize, amplitude: f64) -> HeadMotion {
    let mut m = DMatrix::zeros(n, 6);
    for c in 0..6 {
        let scale = if c < 3 { amplitude } else { amplitude / 50.0 };
        let mut level = 0.0;
        let mut velocity = 0.0;
        for t in 0..n {
            let kick: f64 = rng.sample(StandardNormal);
            velocity = 0.9 * velocity + 0.1 * kick;
            level += velocity;
            m[(t, c)] = level * scale * 0.1;
        }
    }
    HeadMotion::new(m).unwrap()
}

/// A subject whose AROMA block is partly a mixture of its HMP-24 columns, so
/// the blocks are deliberately non-orthogonal. The timeseries carry noise plus
/// contributions from every block.
pub fn random_bundle(rng: &mut ChaCha8Rng, n: usize, r: usize, p: usize, mixing: f64) -> SubjectBundle {
    let amplitude = rng.random_range(0.1..1.0);
    let motion = random_motion(rng, n, amplitude);
    let hmp = omnireg_core::expand_hmp24(&motion).unwrap();
    let hmp_std = standardize_columns(hmp.values());
    let mut aroma = DMatrix::zeros(n, p);
    for j in 0..p {
        let w = DVector::from_fn(24, |_, _| rng.sample(StandardNormal));
        let motion_part = standardize(&(&hmp_std * w));
        let noise = standardize(&DVector::from_fn(n, |_, _| rng.sample(StandardNormal)));
        aroma.set_column(j, &(motion_part * mixing + noise * (1.0 - mixing)));
    }
    let physio = gaussian(rng, n, 2);
    let mut ts = gaussian(rng, n, r);
    let hw = gaussian(rng, 24, r) * 0.3;
    let aw = gaussian(rng, p, r) * 0.5;
    let pw = gaussian(rng, 2, r) * 0.3;
    ts += &hmp_std * hw + &aroma * aw + &physio * pw;
    SubjectBundle::new(
        "sub-rand",
        SignalMatrix::from_values(ts).unwrap(),
        motion,
        DesignMatrix::from_values(aroma, Source::Aroma).unwrap(),
        DesignMatrix::from_values(physio, Source::Physio).unwrap(),
    )
    .unwrap()
}

pub fn standardize(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len() as f64;
    let c = v.add_scalar(-v.sum() / n);
    let sd = (c.norm_squared() / (n - 1.0)).sqrt();
    c / sd
}

pub fn standardize_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let v = standardize(&col.clone_owned());
        col.copy_from(&v);
    }
    out
}

pub fn center(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

/// Residuals from the textbook normal equations on centered data.
pub fn normal_equations_residual(y: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let (yc, xc) = (center(y), center(x));
    let gram_inv = (xc.transpose() * &xc).try_inverse().expect("full-rank design");
    &yc - &xc * (gram_inv * (xc.transpose() * &yc))
}

/// Plain two-pass sample Pearson r.
pub fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..x.len() {
        cov += (x[i] - mx) * (y[i] - my);
        vx += (x[i] - mx).powi(2);
        vy += (y[i] - my).powi(2);
    }
    (cov / (n - 1.0)) / ((vx / (n - 1.0)).sqrt() * (vy / (n - 1.0)).sqrt())
}

/// Average ranks by counting smaller and equal values.
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    brute_pearson(&brute_ranks(x), &brute_ranks(y))
}

/// Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Two-sided p of a correlation from Simpson integration of the Student t
/// density with `m - 2` degrees of freedom.
pub fn integrated_t_pvalue(r: f64, m: usize) -> f64 {
    let df = (m - 2) as f64;
    let t = (r * (df / (1.0 - r * r)).sqrt()).abs();
    let log_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let density = |s: f64| (log_c - (df + 1.0) / 2.0 * (1.0 + s * s / df).ln()).exp();
    let steps = 20_000;
    let h = t / steps as f64;
    let mut acc = density(0.0) + density(t);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * density(i as f64 * h);
    }
    (1.0 - 2.0 * acc * h / 3.0).max(0.0)
}

/// Framewise displacement straight from its definition.
pub fn brute_fd(motion: &DMatrix<f64>, radius: f64) -> Vec<f64> {
    (0..motion.nrows())
        .map(|t| {
            if t == 0 {
                return 0.0;
            }
            (0..6)
                .map(|c| {
                    let d = (motion[(t, c)] - motion[(t - 1, c)]).abs();
                    if c < 3 { d } else { radius * d }
                })
                .sum()
        })
        .collect()
}

pub fn brute_median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = s.len();
    if k % 2 == 1 { s[k / 2] } else { 0.5 * (s[k / 2 - 1] + s[k / 2]) }
}
