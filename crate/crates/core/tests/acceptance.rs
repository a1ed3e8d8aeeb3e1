//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line with the measured values. Criterion 13 is diagnostic-only and
//! logs without gating. Run with `cargo test --test acceptance`
//! (`-- --nocapture` to see every line).

use foliation_lab::cocycle::{
    cocycle_identity_check, hl_separated, hr_check, integrate_local, integrate_synthetic,
    lyapunov_estimate, Form, SyntheticCurrent,
};
use foliation_lab::dimension::{
    closed_form, default_radii, fit_from_masses, jouanolou_dimension, local_dimension,
    measure_decay_check, ratio_aligned_radii, sample_transversal_global, Ifs,
    TransversalMeasureSample,
};
use foliation_lab::geometry::{eigen_data, find_singularities, FoliationSpec};
use foliation_lab::hyperbolic::{dynkin_check, plane_entropy, DynkinTestFn, StepControl};
use foliation_lab::local_model::{angular_domain, holonomy_log_derivative, LinearSingularity};
use foliation_lab::numeric::path_rng;
use foliation_lab::tracker::{
    build_covering, calibrate_density_floor, calibrate_zeta, continue_leaf, crossing_ratios,
    germ_loop_multiplier, Covering, CoveringParams, Gauge, State, TrackerContext, WalkParams,
};
use num_complex::Complex64;
use num_rational::Rational64;
use rand::Rng;

type C = Complex64;
const TAU: f64 = 2.0 * std::f64::consts::PI;

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

fn verdict(id: u32, pass: bool, detail: &str) -> bool {
    let word = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id:02} {word}: {detail}");
    pass
}

static COVERING: std::sync::OnceLock<Covering> = std::sync::OnceLock::new();

/// Shared Jouanolou covering with calibrated density floor and zeta
/// (zeta from 1000 calibration segments).
fn jouanolou_covering() -> &'static Covering {
    COVERING.get_or_init(|| {
        let ctx = TrackerContext::new(FoliationSpec::jouanolou(2)).unwrap();
        let mut cov = build_covering(ctx, &CoveringParams::default()).unwrap();
        calibrate_density_floor(&mut cov, 60, 0x5eed);
        calibrate_zeta(&mut cov, 1000, 0xca11b, WalkParams::default()).unwrap();
        cov
    })
}

#[test]
fn criterion_01_exact_constants() {
    let c2 = closed_form(2).unwrap();
    let c5 = closed_form(5).unwrap();
    let j = jouanolou_dimension();
    let pass = c2.lyapunov == Rational64::new(-4, 1)
        && c2.brunella_bound == Rational64::new(1, 4)
        && c5.lyapunov == Rational64::new(-7, 4)
        && c5.brunella_bound == Rational64::new(4, 7)
        && j.dimension == Rational64::new(1, 4);
    assert!(verdict(
        1,
        pass,
        &format!(
            "closed_form(2) = ({}, {}), closed_form(5) = ({}, {}), jouanolou_dimension = {}",
            c2.lyapunov, c2.brunella_bound, c5.lyapunov, c5.brunella_bound, j.dimension
        )
    ));
}

#[test]
fn criterion_02_jouanolou_singularities() {
    let spec = FoliationSpec::jouanolou(2);
    let points = find_singularities(&spec, 1e-12).unwrap();
    let s3 = 3f64.sqrt();
    let mut hyperbolic = 0usize;
    let mut max_err: f64 = 0.0;
    for p in &points {
        let d = eigen_data(&spec, p, 1e-9).unwrap();
        if d.hyperbolic {
            hyperbolic += 1;
        }
        // Normalized eigenvalues must be the positive-real-part pair
        // {2 - i sqrt3, 2 + i sqrt3} (the stated -2 +- i sqrt3 times -1).
        let err_direct = (d.a - c(2.0, -s3)).norm().max((d.b - c(2.0, s3)).norm());
        let err_swapped = (d.a - c(2.0, s3)).norm().max((d.b - c(2.0, -s3)).norm());
        max_err = max_err.max(err_direct.min(err_swapped));
    }
    let pass = points.len() == 7 && hyperbolic == 7 && max_err < 1e-9;
    assert!(verdict(
        2,
        pass,
        &format!(
            "{} singular points, {} hyperbolic, eigenvalue deviation {:.2e} (tol 1e-9)",
            points.len(),
            hyperbolic,
            max_err
        )
    ));
}

#[test]
fn criterion_03_plane_entropy() {
    let rep = plane_entropy(20.0, 100_000, StepControl::default(), 2024).unwrap();
    let pass = (0.90..=1.10).contains(&rep.estimate) && rep.stderr < 0.03;
    assert!(verdict(
        3,
        pass,
        &format!(
            "plane entropy {:.4} +- {:.4} (band [0.90, 1.10], stderr < 0.03); raw functional {:.4}",
            rep.estimate, rep.stderr, rep.raw_estimate
        )
    ));
}

#[test]
fn criterion_04_separated_set_entropy() {
    let horizons = [5.0, 10.0, 15.0, 20.0];
    let samples: Vec<usize> = horizons.iter().map(|n| (100_000.0 / n) as usize).collect();
    let rep = hl_separated(&horizons, &samples, 1.0, StepControl::default(), 404).unwrap();
    let pass = (0.85..=1.15).contains(&rep.rate);
    assert!(verdict(
        4,
        pass,
        &format!(
            "separated-set growth rate {:.4} +- {:.4} (band [0.85, 1.15])",
            rep.rate, rep.rate_stderr
        )
    ));
}

#[test]
fn criterion_05_local_holonomy_exactness() {
    let s = LinearSingularity::new(c(1.0, 0.0), c(1.0, 1.0)).unwrap();
    let u0 = c(-8.0, 0.0);
    let du = c(0.0, TAU) / s.a;
    let analytic = holonomy_log_derivative(&s, u0, u0 + du).unwrap();
    let err_analytic = (analytic + TAU).abs();

    // Two-leaf finite-difference oracle through the numerical integrator.
    let ctx = {
        use foliation_lab::geometry::HomPoly;
        let p = HomPoly { terms: vec![([1, 0, 0], s.a)] };
        let q = HomPoly { terms: vec![([0, 1, 0], s.b)] };
        let r = HomPoly { terms: vec![] };
        TrackerContext::new(FoliationSpec::new(1, [p, q, r]).unwrap()).unwrap()
    };
    let y0 = c(1e-4, 0.0);
    let delta = c(1e-7, 0.0);
    let run = |y: C| {
        let start = State { chart: 2, z: (c(0.5, 0.0), y) };
        continue_leaf(&ctx, start, &[(du, Gauge::Chart(2))], false)
            .unwrap()
            .end()
            .z
            .1
    };
    let fd = (run(y0 + delta) - run(y0)) / delta;
    let rel = (fd.norm().ln() - analytic).abs() / analytic.abs();
    let pass = err_analytic < 1e-6 && rel < 1e-4;
    assert!(verdict(
        5,
        pass,
        &format!(
            "closed-loop log-derivative {analytic:.9} (err {err_analytic:.2e}, tol 1e-6); \
             two-leaf oracle relative error {rel:.2e} (tol 1e-4)"
        )
    ));
}

#[test]
fn criterion_06_global_local_consistency() {
    let cov = jouanolou_covering();
    let sing = 0;
    let s = &cov.ctx.singularities[sing];
    let r_box = s.linearization_radius;
    let start_eigen = (c(0.70 * r_box, 0.0), c(1e-5 * r_box, 0.0));
    let z = s.from_eigen(start_eigen);
    let start = State { chart: s.chart, z };
    let du = c(0.0, TAU) / s.a;
    let segments: Vec<(C, Gauge)> =
        (0..8).map(|_| (du / 8.0, Gauge::Singularity(sing))).collect();
    let path = continue_leaf(&cov.ctx, start, &segments, true).unwrap();
    let germ = germ_loop_multiplier(cov, &path).unwrap();
    let expected = (c(0.0, TAU) * s.b / s.a).exp();
    let rel = (germ.derivative - expected).norm() / expected.norm();
    let pass = rel < 1e-3;
    assert!(verdict(
        6,
        pass,
        &format!(
            "separatrix-loop germ derivative {:.6}{:+.6}i vs exp(2 pi i b/a) {:.6}{:+.6}i, \
             relative error {rel:.2e} (tol 1e-3)",
            germ.derivative.re, germ.derivative.im, expected.re, expected.im
        )
    ));
}

#[test]
fn criterion_07_cocycle_additivity() {
    let s = LinearSingularity::new(c(1.0, 0.0), c(1.0, 1.0)).unwrap();
    let dom = angular_domain(&s);
    let mut rng = path_rng(7007, 0);
    let mut worst: f64 = 0.0;
    let mut paths = 0usize;
    for pid in 0..5000u64 {
        let segments: Vec<C> = (0..8)
            .map(|_| {
                dom.point_at(rng.gen_range(0.2..0.8), rng.gen_range(0.5..2.0))
                    * 0.1
                    * rng.gen_range(0.2..1.0)
            })
            .collect();
        for form in [Form::EtaM, Form::EtaMPr, Form::GsLength] {
            worst = worst.max(
                integrate_local(&s, form, &segments, pid)
                    .unwrap()
                    .additivity_defect(),
            );
        }
        paths += 1;
    }
    let current = SyntheticCurrent::mixture();
    for pid in 0..5000u64 {
        for form in [Form::Beta, Form::GsLength] {
            worst = worst.max(
                integrate_synthetic(
                    &current,
                    c(0.1, 0.0),
                    form,
                    2.0,
                    StepControl::default(),
                    7979,
                    pid,
                )
                .unwrap()
                .additivity_defect(),
            );
        }
        paths += 1;
    }
    let pass = worst < 1e-9;
    assert!(verdict(
        7,
        pass,
        &format!("worst additivity defect {worst:.2e} over {paths} split paths, all four forms (tol 1e-9)")
    ));
}

#[test]
fn criterion_08_limit_theorem_identity() {
    let cal = dynkin_check(DynkinTestFn::LogBoundary, 4.0, 20_000, StepControl::default(), 88)
        .unwrap();
    let mut all = true;
    let mut details = Vec::new();
    for name in SyntheticCurrent::BUILTINS {
        let current = SyntheticCurrent::builtin(name).unwrap();
        let rep =
            cocycle_identity_check(&current, 2.0, 20_000, cal.c, StepControl::default(), 888)
                .unwrap();
        all &= rep.pass;
        details.push(format!(
            "{name}: |diff| {:.4} vs 3 x stderr {:.4}",
            rep.diff.abs(),
            3.0 * rep.diff_stderr
        ));
    }
    let pass = all;
    assert!(verdict(
        8,
        pass,
        &format!("calibrated c = {:.4}; {}", cal.c, details.join("; "))
    ));
}

#[test]
fn criterion_09_harnack() {
    let mut all = true;
    let mut details = Vec::new();
    for name in SyntheticCurrent::BUILTINS {
        let current = SyntheticCurrent::builtin(name).unwrap();
        let v = current.harnack_violations(100_000, 99);
        all &= v == 0;
        details.push(format!("{name}: {v} violations"));
    }
    assert!(verdict(
        9,
        all,
        &format!("{} over 100000 triples each", details.join("; "))
    ));
}

#[test]
fn criterion_10_kaimanovich_inequality() {
    let mut all = true;
    let mut details = Vec::new();
    for name in SyntheticCurrent::BUILTINS {
        let current = SyntheticCurrent::builtin(name).unwrap();
        let rep = hr_check(&current, 2.0, 20_000, StepControl::default(), 1010).unwrap();
        all &= rep.pass_nonnegative;
        details.push(format!("{name}: h_R {:.4} +- {:.4}", rep.estimate, rep.stderr));
    }
    assert!(verdict(10, all, &format!("{} (each >= -3 stderr)", details.join("; "))));
}

#[test]
fn criterion_11_crossing_bound() {
    let cov = jouanolou_covering();
    let zeta = cov.constants.zeta.expect("calibrated in the shared covering");
    let holdout = crossing_ratios(cov, 10_000, 0x601d, WalkParams::default()).unwrap();
    let violations = holdout
        .iter()
        .filter(|(q, d)| *q > zeta * d.max(1e-9))
        .count();
    let pass = violations == 0;
    assert!(verdict(
        11,
        pass,
        &format!(
            "zeta = {zeta:.3} (1000-segment calibration); {violations} violations over {} held-out segments",
            holdout.len()
        )
    ));
}

#[test]
fn criterion_12_dimension_oracles() {
    // Uniform disc: streamed counts, slope 2.00 +- 0.05.
    let radii = default_radii(0.5);
    let n: usize = 60_000_000;
    let mut rng = path_rng(1212, 0);
    let mut masses = vec![0.0f64; radii.len()];
    let mut in_largest = 0usize;
    for _ in 0..n {
        let r = rng.gen_range(0.0..1.0f64).sqrt();
        if r < radii[0] {
            in_largest += 1;
            for (k, rad) in radii.iter().enumerate() {
                if r < *rad {
                    masses[k] += 1.0;
                } else {
                    break;
                }
            }
        }
    }
    let uniform =
        fit_from_masses(&masses, in_largest, n as f64, n, c(0.0, 0.0), &radii, 5).unwrap();

    // Cantor and ratio-1/4 self-similar measures, center-averaged.
    let mean_slope = |ifs: &Ifs, n_lo: usize, count: usize, seed: u64| -> f64 {
        let pts = ifs.sample(400_000, seed);
        let sample = TransversalMeasureSample {
            transversal: 0,
            hits: pts.iter().map(|(z, _)| (z.re, z.im, 1.0)).collect(),
            total_time: 0.0,
            burn_in: 0.0,
            seed,
        };
        let radii = ratio_aligned_radii(ifs, n_lo, count);
        pts[..32]
            .iter()
            .map(|(center, _)| local_dimension(&sample, *center, &radii, seed).unwrap().slope)
            .sum::<f64>()
            / 32.0
    };
    let cantor = mean_slope(&Ifs::cantor(), 2, 10, 121);
    let quarter = mean_slope(&Ifs::two_maps(0.25), 2, 8, 122);
    let decay = measure_decay_check(&Ifs::cantor(), 3, 9, 200_000, 123).unwrap();

    let cantor_expect = 2f64.ln() / 3f64.ln();
    let pass = (uniform.slope - 2.0).abs() < 0.05
        && (cantor - cantor_expect).abs() < 0.03
        && (quarter - 0.5).abs() < 0.03
        && (decay.exponent - decay.h_star).abs() < 0.05;
    assert!(verdict(
        12,
        pass,
        &format!(
            "uniform slope {:.4} (2.00 +- 0.05); cantor {:.4} ({:.4} +- 0.03); \
             ifs-1/4 {:.4} (0.50 +- 0.03); decay exponent {:.4} (h* {:.4} +- 0.05)",
            uniform.slope, cantor, cantor_expect, quarter, decay.exponent, decay.h_star
        )
    ));
}

#[test]
fn criterion_13_global_diagnostics_non_gating() {
    // Explicitly NOT pass/fail: the leafwise Poincare metric approximation
    // is uncontrolled, so the Lyapunov band and the transversal dimension
    // are logged with the analytic targets for inspection.
    let cov = jouanolou_covering();
    let (rep, target) =
        lyapunov_estimate(cov, 20.0, 120, WalkParams::default(), 1313).unwrap();
    let negative_95 = rep.estimate + 1.96 * rep.stderr < 0.0;
    println!(
        "criterion 13 DIAG: lyapunov estimate {:.4} +- {:.4} (approximate metric), \
         negative at 95%: {negative_95}, analytic target {target}",
        rep.estimate, rep.stderr
    );

    let box_id = cov
        .boxes
        .iter()
        .position(|b| matches!(b.kind, foliation_lab::tracker::BoxKind::Regular { .. }))
        .expect("regular box");
    match sample_transversal_global(
        cov,
        box_id,
        200,
        120.0,
        20.0,
        WalkParams::default(),
        131313,
    ) {
        Ok(sample) => {
            let positions = sample.positions();
            let center = positions[positions.len() / 2];
            let r_max = cov.boxes[box_id].trans_radius * 0.8;
            let radii: Vec<f64> =
                (0..12).map(|k| r_max * (-3.0 * k as f64 / 11.0).exp()).collect();
            match local_dimension(&sample, center, &radii, 13) {
                Ok(fit) => println!(
                    "criterion 13 DIAG: transversal local dimension {:.4} (CI [{:.4}, {:.4}], \
                     {} hits) vs analytic 0.25",
                    fit.slope, fit.ci_lo, fit.ci_hi, fit.hits_in_largest
                ),
                Err(e) => println!(
                    "criterion 13 DIAG: dimension regression unavailable at this sample size: {e}"
                ),
            }
        }
        Err(e) => println!("criterion 13 DIAG: transversal sampling failed: {e}"),
    }
    // The diagnostic must run to completion; its values are not gated.
    println!("criterion 13 PASS: diagnostics completed (non-gating)");
}
