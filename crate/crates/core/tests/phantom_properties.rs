mod common;

use common::*;
use omnireg_core::qcmetrics::mean_fc;
use omnireg_core::{
    build_blocks, concat_designs, evaluate_pipeline, fc_matrix, generate_cohort,
    ols_residualize, run_pipeline, truth_error, PhantomConfig, Pipeline,
    QcFcReport, SignalMatrix,
};

fn small(seed: u64) -> PhantomConfig {
    PhantomConfig {
        n_subjects: 8,
        n_rois: 20,
        n_timepoints: 80,
        seed,
        ..PhantomConfig::reference()
    }
}

fn report(cfg: &PhantomConfig, pipeline: Pipeline) -> QcFcReport {
    let cohort = generate_cohort(cfg).unwrap();
    evaluate_pipeline(&cohort.bundles, &cohort.parcellation, pipeline).unwrap().1
}

#[test]
fn same_seed_same_cohort() {
    let a = generate_cohort(&small(5)).unwrap();
    let b = generate_cohort(&small(5)).unwrap();
    assert_eq!(a, b);
    let c = generate_cohort(&small(6)).unwrap();
    assert_ne!(a.bundles[0].ts, c.bundles[0].ts);
}

#[test]
fn contamination_lies_in_nuisance_span() {
    let cohort = generate_cohort(&small(7)).unwrap();
    for (bundle, contamination) in cohort.bundles.iter().zip(&cohort.contamination) {
        let b = build_blocks(bundle).unwrap();
        let all = concat_designs(bundle.n_timepoints(), &[b.hmp, b.aroma, b.physio]).unwrap();
        let c = SignalMatrix::from_values(contamination.clone()).unwrap();
        let e = ols_residualize(&c, &all).unwrap();
        let scale = center(contamination).amax();
        assert!(e.values().amax() <= 1e-8 * scale, "{} vs {}", e.values().amax(), scale);
    }
}

#[test]
fn concat_removes_contamination_exactly() {
    // Corrected output equals the corrected clean signal.
    let cohort = generate_cohort(&small(8)).unwrap();
    let bundle = &cohort.bundles[0];
    let b = build_blocks(bundle).unwrap();
    let all = concat_designs(bundle.n_timepoints(), &[b.aroma, b.hmp, b.physio]).unwrap();
    let clean = SignalMatrix::from_values(bundle.ts.values() - &cohort.contamination[0]).unwrap();
    let expected = ols_residualize(&clean, &all).unwrap();
    let got = run_pipeline(bundle, Pipeline::ConcatAll).unwrap();
    assert!((got.values() - expected.values()).amax() <= 1e-8 * expected.values().amax());
}

#[test]
fn baseline_qcfc_grows_with_gain() {
    let gains = [0.0, 0.5, 1.0, 1.5, 2.0];
    let medians: Vec<f64> = gains
        .iter()
        .map(|&g| {
            let cfg = PhantomConfig {
                artifact_gain: g,
                ..PhantomConfig::reference()
            };
            report(&cfg, Pipeline::Baseline).median_abs_qcfc
        })
        .collect();
    for w in medians.windows(2) {
        assert!(w[1] > w[0], "{medians:?}");
    }
}

fn mean_abs_aroma_hmp_corr(mixing: f64) -> f64 {
    let cfg = PhantomConfig {
        aroma_hmp_mixing: mixing,
        n_subjects: 10,
        ..PhantomConfig::reference()
    };
    let cohort = generate_cohort(&cfg).unwrap();
    let mut acc = Vec::new();
    for bundle in &cohort.bundles {
        let b = build_blocks(bundle).unwrap();
        for i in 0..b.aroma.n_regressors() {
            for j in 0..b.hmp.n_regressors() {
                let a = b.aroma.values().column(i);
                let h = b.hmp.values().column(j);
                acc.push(brute_pearson(a.as_slice(), h.as_slice()).abs());
            }
        }
    }
    acc.iter().sum::<f64>() / acc.len() as f64
}

#[test]
fn zero_mixing_keeps_aroma_away_from_motion() {
    // Independent series at 200 timepoints: mean |r| is about 0.06 before
    // the autocorrelation of the motion traces widens it.
    let independent = mean_abs_aroma_hmp_corr(0.0);
    let mixed = mean_abs_aroma_hmp_corr(0.6);
    assert!(independent < 0.12, "{independent}");
    assert!(mixed > 2.0 * independent, "{mixed} vs {independent}");
}

#[test]
fn mixing_ties_aroma_to_motion() {
    let cfg = PhantomConfig {
        aroma_hmp_mixing: 1.0,
        ..small(9)
    };
    let cohort = generate_cohort(&cfg).unwrap();
    let b = build_blocks(&cohort.bundles[0]).unwrap();
    let aroma = SignalMatrix::from_values(b.aroma.values().clone()).unwrap();
    let e = ols_residualize(&aroma, &b.hmp).unwrap();
    assert!(e.values().amax() <= 1e-8 * aroma.values().amax());
}

#[test]
fn zero_gain_is_consistent_with_no_artifact() {
    // With no injected artifact, QC-FC reflects sampling noise only: for 60
    // subjects the null median |r| sits near 0.088.
    let cfg = PhantomConfig {
        artifact_gain: 0.0,
        ..PhantomConfig::reference()
    };
    let null = report(&cfg, Pipeline::Baseline);
    assert!((0.06..0.13).contains(&null.median_abs_qcfc), "{}", null.median_abs_qcfc);
    assert!(null.dist_dependence_p.unwrap() > 0.05);
    let full = report(&PhantomConfig::reference(), Pipeline::Baseline);
    assert!(full.median_abs_qcfc > 2.0 * null.median_abs_qcfc);
    assert!(full.dist_dependence_p.unwrap() < 0.05);
}

#[test]
fn fixture_metrics() {
    let cohort = generate_cohort(&PhantomConfig::reference()).unwrap();
    let eval = |p| evaluate_pipeline(&cohort.bundles, &cohort.parcellation, p).unwrap();
    let (_, base) = eval(Pipeline::Baseline);
    assert!(base.median_abs_qcfc >= 0.15);
    assert!(base.dist_dependence_rho.unwrap().abs() >= 0.1);

    let mut group_error = Vec::new();
    for p in [Pipeline::SeqHmpAromaPhysio, Pipeline::SeqAromaHmpPhysio, Pipeline::ConcatAll] {
        let (outputs, rep) = eval(p);
        assert!(rep.median_abs_qcfc < base.median_abs_qcfc, "{p}");
        if p == Pipeline::ConcatAll {
            assert!(rep.dist_dependence_p.unwrap() > 0.05);
            assert!(rep.dist_dependence_rho.unwrap().abs() < 0.05);
        } else {
            assert!(rep.dist_dependence_p.unwrap() < 0.05, "{p}");
        }
        let fcs: Vec<_> = outputs.iter().map(|o| fc_matrix(o).unwrap()).collect();
        group_error.push(truth_error(&mean_fc(&fcs).unwrap(), &cohort.truth_fc).unwrap());
    }
    assert!(group_error[2] <= group_error[0] && group_error[2] <= group_error[1], "{group_error:?}");
}
