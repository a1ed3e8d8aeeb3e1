//! Scratch diagnostics for the global walker (run with --ignored --nocapture).

use foliation_lab::geometry::FoliationSpec;
use foliation_lab::tracker::{
    build_covering, calibrate_density_floor, crossing_ratios, CoveringParams, TrackerContext,
    WalkParams,
};

#[test]
#[ignore]
fn walk_statistics() {
    let ctx = TrackerContext::new(FoliationSpec::jouanolou(2)).unwrap();
    let mut cov = build_covering(ctx, &CoveringParams::default()).unwrap();
    calibrate_density_floor(&mut cov, 60, 0x5eed);
    println!("density_floor = {}", cov.constants.density_floor);
    let ratios = crossing_ratios(&cov, 2000, 0xabcd, WalkParams::default()).unwrap();
    let mut qs: Vec<f64> = ratios.iter().map(|r| r.0).collect();
    let ds: Vec<f64> = ratios.iter().map(|r| r.1).collect();
    let mean_q = qs.iter().sum::<f64>() / qs.len() as f64;
    let mean_d = ds.iter().sum::<f64>() / ds.len() as f64;
    qs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("segments: {}", ratios.len());
    println!("mean Q = {mean_q:.3}, mean D1 = {mean_d:.3}");
    println!("Q quantiles: p50 {} p90 {} p99 {} max {}",
        qs[qs.len()/2], qs[qs.len()*9/10], qs[qs.len()*99/100], qs[qs.len()-1]);
    let mut rr: Vec<f64> = ratios.iter().map(|(q, d)| q / d.max(1e-9)).collect();
    rr.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("Q/D quantiles: p50 {:.3} p90 {:.3} p99 {:.3} max {:.3}",
        rr[rr.len()/2], rr[rr.len()*9/10], rr[rr.len()*99/100], rr[rr.len()-1]);
    // D for segments with Q >= 1
    let crossings: Vec<&(f64, f64)> = ratios.iter().filter(|(q, _)| *q >= 1.0).collect();
    println!("segments with Q >= 1: {}", crossings.len());
    for (q, d) in crossings.iter().take(12) {
        println!("  Q = {q}, D1 = {d:.4}");
    }
}
