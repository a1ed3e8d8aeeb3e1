//! Closed-form degree constants, transversal hitting measures,
//! local-dimension regression and self-similar decay oracles.

use crate::cocycle::SyntheticCurrent;
use crate::numeric::path_rng;
use crate::tracker::{Covering, GlobalWalker, TrackerError, WalkParams};
use num_complex::Complex64;
use num_rational::Rational64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

type C = Complex64;
const TAU: f64 = 2.0 * std::f64::consts::PI;

#[derive(Error, Debug)]
pub enum DimensionError {
    #[error("degree must be >= 2, got {0}")]
    DegreeTooSmall(usize),
    #[error("zero usable hits (burn-in {0} >= total time {1}, or box never visited)")]
    NoHits(f64, f64),
    #[error("need at least {0} hits within the largest radius, found {1}")]
    TooFewHits(usize, usize),
    #[error("empty annuli dominate the inner radii; grid too fine for the sample")]
    EmptyAnnuli,
    #[error("iterated function system images overlap")]
    OverlappingImages,
    #[error(transparent)]
    Tracker(#[from] TrackerError),
}

// ---------------------------------------------------------------------------
// Closed-form constants
// ---------------------------------------------------------------------------

/// Exact rational constants attached to a degree-d foliation of the
/// projective plane.
#[derive(Clone, Debug, Serialize)]
pub struct DegreeConstants {
    pub degree: usize,
    /// Lyapunov exponent -(d+2)/(d-1).
    pub lyapunov: Rational64,
    /// Dimension bound (d-1)/(d+2).
    pub brunella_bound: Rational64,
}

/// Exact constants for degree d >= 2.
pub fn closed_form(d: usize) -> Result<DegreeConstants, DimensionError> {
    if d < 2 {
        return Err(DimensionError::DegreeTooSmall(d));
    }
    let di = d as i64;
    Ok(DegreeConstants {
        degree: d,
        lyapunov: -Rational64::new(di + 2, di - 1),
        brunella_bound: Rational64::new(di - 1, di + 2),
    })
}

/// Derivation record of the degree-2 Jouanolou transverse dimension.
#[derive(Clone, Debug, Serialize)]
pub struct JouanolouDimension {
    pub dimension: Rational64,
    pub leaf_entropy: Rational64,
    pub lyapunov_abs: Rational64,
    /// Why h_D = h_L applies.
    pub entropy_equality_justification: &'static str,
    /// Why h_L = 1 applies.
    pub leaf_entropy_justification: &'static str,
}

/// The degree-2 Jouanolou dimension 1/4 with its derivation chain:
/// h_L = 1 (simply connected leaves), h_D = h_L (discrete holonomy
/// pseudogroup), |lambda| = 4.
pub fn jouanolou_dimension() -> JouanolouDimension {
    let lyap = closed_form(2).expect("degree 2 is valid").lyapunov;
    JouanolouDimension {
        dimension: Rational64::new(1, 4),
        leaf_entropy: Rational64::new(1, 1),
        lyapunov_abs: -lyap,
        entropy_equality_justification: "discrete holonomy pseudogroup",
        leaf_entropy_justification: "simply connected generic leaves",
    }
}

// ---------------------------------------------------------------------------
// Transversal hitting measures
// ---------------------------------------------------------------------------

/// Weighted hit positions on a transversal disc.
#[derive(Clone, Debug, Serialize)]
pub struct TransversalMeasureSample {
    pub transversal: usize,
    /// (re, im, weight) of each recorded hit.
    pub hits: Vec<(f64, f64, f64)>,
    pub total_time: f64,
    pub burn_in: f64,
    pub seed: u64,
}

impl TransversalMeasureSample {
    pub fn positions(&self) -> Vec<C> {
        self.hits.iter().map(|h| C::new(h.0, h.1)).collect()
    }
}

/// Sample the transverse measure of a synthetic product box: paths carry
/// their nu-distributed transverse coordinate, recorded once per integer
/// time unit.
pub fn sample_transversal_synthetic(
    current: &SyntheticCurrent,
    n_paths: usize,
    total_time: f64,
    burn_in: f64,
    seed: u64,
) -> Result<TransversalMeasureSample, DimensionError> {
    if burn_in >= total_time {
        return Err(DimensionError::NoHits(burn_in, total_time));
    }
    let per_path = (total_time - burn_in).floor() as usize;
    let mut hits = Vec::new();
    for i in 0..n_paths as u64 {
        let mut rng = path_rng(seed, i);
        let t = match &current.nu {
            crate::cocycle::NuSpec::UniformDisc => {
                let r = rng.gen_range(0.0..1.0f64).sqrt();
                C::from_polar(r, rng.gen_range(0.0..TAU))
            }
            crate::cocycle::NuSpec::Atoms(atoms) => {
                let total: f64 = atoms.iter().map(|a| a.2).sum();
                let mut u = rng.gen_range(0.0..total);
                let mut chosen = atoms[0];
                for a in atoms {
                    if u <= a.2 {
                        chosen = *a;
                        break;
                    }
                    u -= a.2;
                }
                C::new(chosen.0, chosen.1)
            }
        };
        for _ in 0..per_path.max(1) {
            hits.push((t.re, t.im, 1.0));
        }
    }
    if hits.is_empty() {
        return Err(DimensionError::NoHits(burn_in, total_time));
    }
    Ok(TransversalMeasureSample { transversal: 0, hits, total_time, burn_in, seed })
}

/// Sample the transverse hitting measure of a global foliation: at integer
/// times past burn-in, when the path lies in the chosen box the first
/// integral records the transversal coordinate with weight 1.
pub fn sample_transversal_global(
    cov: &Covering,
    box_id: usize,
    n_paths: usize,
    total_time: f64,
    burn_in: f64,
    params: WalkParams,
    seed: u64,
) -> Result<TransversalMeasureSample, DimensionError> {
    if burn_in >= total_time {
        return Err(DimensionError::NoHits(burn_in, total_time));
    }
    let units = (total_time - burn_in).floor() as usize;
    let rows: Result<Vec<Vec<(f64, f64, f64)>>, TrackerError> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let start = crate::tracker::default_start(cov);
            let rng = path_rng(seed, i);
            let mut w = GlobalWalker::new(cov, start, params, rng);
            w.run_to(burn_in, None)?;
            let mut out = Vec::new();
            for _ in 0..units {
                w.run_to(w.t + 1.0, None)?;
                if cov.contains_point(box_id, w.state.chart, w.state.z) {
                    if let Ok((t, _)) = cov.first_integral(box_id, w.state.chart, w.state.z) {
                        out.push((t.re, t.im, 1.0));
                    }
                }
            }
            Ok(out)
        })
        .collect();
    let hits: Vec<(f64, f64, f64)> = rows?.into_iter().flatten().collect();
    if hits.is_empty() {
        return Err(DimensionError::NoHits(burn_in, total_time));
    }
    Ok(TransversalMeasureSample { transversal: box_id, hits, total_time, burn_in, seed })
}

// ---------------------------------------------------------------------------
// Local-dimension regression
// ---------------------------------------------------------------------------

/// Least-squares local dimension fit over a geometric radii grid.
#[derive(Clone, Debug, Serialize)]
pub struct DimensionFit {
    pub center: (f64, f64),
    pub radii: Vec<f64>,
    pub log_measure: Vec<f64>,
    /// Slope over the inner half of the grid.
    pub slope: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub fit_residual: f64,
    /// Whether the outer half departs from the inner-slope line (box
    /// geometry contaminating large radii).
    pub saturation_flag: bool,
    pub hits_in_largest: usize,
}

/// Default geometric grid: 12 radii from r_max down to r_max e^{-6}.
pub fn default_radii(r_max: f64) -> Vec<f64> {
    (0..12)
        .map(|k| r_max * (-6.0 * k as f64 / 11.0).exp())
        .collect()
}

/// Radii grid aligned to an IFS contraction ratio, starting at the
/// n_lo-th generation scale.
pub fn ratio_aligned_radii(ifs: &Ifs, n_lo: usize, count: usize) -> Vec<f64> {
    let ratio = ifs.maps[0].ratio;
    (0..count).map(|k| ratio.powi(n_lo as i32 + k as i32)).collect()
}

/// Weighted counts inside each radius (radii in decreasing order).
fn radial_masses(hits: &[(f64, f64, f64)], center: C, radii: &[f64]) -> (Vec<f64>, usize) {
    let mut masses = vec![0.0f64; radii.len()];
    let mut in_largest = 0usize;
    for h in hits {
        let d = (C::new(h.0, h.1) - center).norm();
        if d < radii[0] {
            in_largest += 1;
        }
        for (k, r) in radii.iter().enumerate() {
            if d < *r {
                masses[k] += h.2;
            } else {
                break;
            }
        }
    }
    (masses, in_largest)
}

fn slope_of(radii: &[f64], masses: &[f64], from: usize) -> (f64, f64) {
    let xs: Vec<f64> = radii[from..].iter().map(|r| r.ln()).collect();
    // Normalizing by the outermost inner-half mass makes the slope exactly
    // invariant under rescaling all weights by a common factor.
    let m_ref = masses[from].max(1e-300);
    let ys: Vec<f64> = masses[from..]
        .iter()
        .map(|m| (m.max(1e-300) / m_ref).ln())
        .collect();
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let resid = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let f = ybar + slope * (x - xbar);
            (y - f) * (y - f)
        })
        .sum::<f64>()
        / n;
    (slope, resid.sqrt())
}

/// Local dimension of a weighted sample at a center: log-measure versus
/// log-radius slope over the inner half of the grid, bootstrap CI over
/// the hit histogram.
pub fn local_dimension(
    sample: &TransversalMeasureSample,
    center: C,
    radii: &[f64],
    seed: u64,
) -> Result<DimensionFit, DimensionError> {
    let (masses, in_largest) = radial_masses(&sample.hits, center, radii);
    let total: f64 = sample.hits.iter().map(|h| h.2).sum();
    fit_from_masses(
        &masses,
        in_largest,
        total,
        sample.hits.len(),
        center,
        radii,
        seed,
    )
}

/// Core regression from precomputed radial masses (lets huge oracle
/// samples stream their counts instead of storing hits).
pub fn fit_from_masses(
    masses: &[f64],
    in_largest: usize,
    total: f64,
    n_hits: usize,
    center: C,
    radii: &[f64],
    seed: u64,
) -> Result<DimensionFit, DimensionError> {
    if in_largest < 100 {
        return Err(DimensionError::TooFewHits(100, in_largest));
    }
    let inner_from = radii.len() / 2;
    // An all-atom sample at the center gives constant mass: slope 0. Empty
    // inner annuli with nonempty outer ones mean the grid outran the data.
    let inner_empty = masses[inner_from..].iter().filter(|&&m| m == 0.0).count();
    if inner_empty * 2 > radii.len() - inner_from {
        return Err(DimensionError::EmptyAnnuli);
    }
    let (slope, resid) = slope_of(radii, masses, inner_from);
    // Bootstrap over the hit histogram: multinomial resampling of the
    // per-shell increments.
    let mut increments = Vec::with_capacity(radii.len() + 1);
    let mut prev = total;
    for m in masses {
        increments.push(prev - m);
        prev = *m;
    }
    increments.push(prev);
    let mut slopes = Vec::with_capacity(200);
    let mut rng = path_rng(seed, 0xb00);
    for _ in 0..200 {
        // Resample counts proportionally to the increments.
        let mut remaining = n_hits;
        let mut weight_left: f64 = increments.iter().sum();
        let mut boot = vec![0.0f64; increments.len()];
        for (k, inc) in increments.iter().enumerate() {
            if weight_left <= 0.0 || remaining == 0 {
                break;
            }
            let p = (inc / weight_left).clamp(0.0, 1.0);
            let draw = binomial(&mut rng, remaining, p);
            boot[k] = draw as f64 * (total / n_hits as f64);
            remaining -= draw;
            weight_left -= inc;
        }
        let mut masses_b = vec![0.0f64; radii.len()];
        let mut acc = 0.0;
        for k in (0..radii.len()).rev() {
            acc += boot[k + 1];
            masses_b[k] = acc;
        }
        if masses_b[inner_from..].iter().all(|&m| m > 0.0) {
            let (s, _) = slope_of(radii, &masses_b, inner_from);
            slopes.push(s);
        }
    }
    slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (ci_lo, ci_hi) = if slopes.len() >= 40 {
        (slopes[slopes.len() / 40], slopes[slopes.len() - 1 - slopes.len() / 40])
    } else {
        (slope, slope)
    };
    let (outer_slope, _) = slope_of(&radii[..inner_from.max(2)], &masses[..inner_from.max(2)], 0);
    let masses = masses.to_vec();
    Ok(DimensionFit {
        center: (center.re, center.im),
        radii: radii.to_vec(),
        log_measure: masses.iter().map(|m| m.max(1e-300).ln()).collect(),
        slope,
        ci_lo,
        ci_hi,
        fit_residual: resid,
        saturation_flag: (outer_slope - slope).abs() > 0.5,
        hits_in_largest: in_largest,
    })
}

fn binomial(rng: &mut impl Rng, n: usize, p: f64) -> usize {
    // Gaussian approximation for large n, exact draw for small n.
    if n > 200 {
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        let u1: f64 = rng.gen_range(1e-300..1.0);
        let u2: f64 = rng.gen_range(0.0..TAU);
        let g = (-2.0 * u1.ln()).sqrt() * u2.cos();
        (mean + sd * g).round().clamp(0.0, n as f64) as usize
    } else {
        (0..n).filter(|_| rng.gen_range(0.0..1.0) < p).count()
    }
}

/// Uniform-measure oracle: FS hits on the unit disc, streamed.
pub fn uniform_disc_sample(n: usize, seed: u64) -> TransversalMeasureSample {
    let mut rng = path_rng(seed, 0);
    let hits = (0..n)
        .map(|_| {
            let r = rng.gen_range(0.0..1.0f64).sqrt();
            let a = rng.gen_range(0.0..TAU);
            (r * a.cos(), r * a.sin(), 1.0)
        })
        .collect();
    TransversalMeasureSample { transversal: 0, hits, total_time: n as f64, burn_in: 0.0, seed }
}

// ---------------------------------------------------------------------------
// Self-similar oracles
// ---------------------------------------------------------------------------

/// Contracting similarity `z -> ratio e^{i rot} z + shift`.
#[derive(Clone, Debug, Serialize)]
pub struct IfsMap {
    pub ratio: f64,
    pub rotation: f64,
    pub shift: (f64, f64),
}

impl IfsMap {
    fn apply(&self, z: C) -> C {
        C::from_polar(self.ratio, self.rotation) * z + C::new(self.shift.0, self.shift.1)
    }
}

/// Self-similar measure on the disc from an IFS with probability weights.
#[derive(Clone, Debug, Serialize)]
pub struct Ifs {
    pub maps: Vec<IfsMap>,
    pub weights: Vec<f64>,
}

impl Ifs {
    /// Middle-thirds Cantor measure on [0, 1] embedded in the disc.
    pub fn cantor() -> Self {
        Ifs {
            maps: vec![
                IfsMap { ratio: 1.0 / 3.0, rotation: 0.0, shift: (0.0, 0.0) },
                IfsMap { ratio: 1.0 / 3.0, rotation: 0.0, shift: (2.0 / 3.0, 0.0) },
            ],
            weights: vec![0.5, 0.5],
        }
    }

    /// Two maps of a given ratio with uniform weights, placed apart.
    pub fn two_maps(ratio: f64) -> Self {
        Ifs {
            maps: vec![
                IfsMap { ratio, rotation: 0.0, shift: (-0.5, 0.0) },
                IfsMap { ratio, rotation: 0.0, shift: (0.5, 0.0) },
            ],
            weights: vec![0.5, 0.5],
        }
    }

    pub fn one_map() -> Self {
        Ifs {
            maps: vec![IfsMap { ratio: 0.4, rotation: 0.0, shift: (0.1, 0.0) }],
            weights: vec![1.0],
        }
    }

    /// Uniform contraction log-rate (all ratios equal for the oracles).
    pub fn lambda_star(&self) -> f64 {
        self.maps[0].ratio.ln()
    }

    /// Shannon entropy of the weights.
    pub fn h_star(&self) -> f64 {
        -self
            .weights
            .iter()
            .filter(|w| **w > 0.0)
            .map(|w| w * w.ln())
            .sum::<f64>()
    }

    /// Check that the map images of the attractor are disjoint, by the
    /// minimal distance between sampled image sets.
    fn check_disjoint(&self) -> Result<(), DimensionError> {
        if self.maps.len() < 2 {
            return Ok(());
        }
        let attractor: Vec<C> = self.sample(256, 0x1f5).into_iter().map(|s| s.0).collect();
        for i in 0..self.maps.len() {
            for j in (i + 1)..self.maps.len() {
                let mut min_d = f64::INFINITY;
                for a in &attractor {
                    let fa = self.maps[i].apply(*a);
                    for b in &attractor {
                        let fb = self.maps[j].apply(*b);
                        min_d = min_d.min((fa - fb).norm());
                    }
                }
                if min_d < 0.02 {
                    return Err(DimensionError::OverlappingImages);
                }
            }
        }
        Ok(())
    }

    /// Sample the self-similar measure by digit expansion to depth 60.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<(C, Vec<u8>)> {
        let depth = 60;
        (0..n as u64)
            .map(|i| {
                let mut rng = path_rng(seed, i);
                let digits: Vec<u8> = (0..depth)
                    .map(|_| {
                        let mut u = rng.gen_range(0.0..1.0f64);
                        let mut pick = 0u8;
                        for (k, w) in self.weights.iter().enumerate() {
                            if u <= *w {
                                pick = k as u8;
                                break;
                            }
                            u -= w;
                        }
                        pick
                    })
                    .collect();
                let mut z = C::new(0.0, 0.0);
                for &d in digits.iter().rev() {
                    z = self.maps[d as usize].apply(z);
                }
                (z, digits)
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayCheckReport {
    pub h_star: f64,
    pub lambda_star: f64,
    /// Fitted decay exponent of `nu(D(e^{n lambda*}))` over the n range.
    pub exponent: f64,
    pub exponent_stderr: f64,
    /// Local-dimension slope from the regression pipeline.
    pub dimension_slope: f64,
    pub dimension_expected: f64,
    pub n_range: (usize, usize),
    pub seed: u64,
}

/// Two-sided decay oracle for self-similar measures: at generic centers
/// the measure of balls of radius e^{n lambda*} decays with exponent
/// h*, and the local-dimension slope is h*/|lambda*|.
pub fn measure_decay_check(
    ifs: &Ifs,
    n_lo: usize,
    n_hi: usize,
    n_samples: usize,
    seed: u64,
) -> Result<DecayCheckReport, DimensionError> {
    ifs.check_disjoint()?;
    let h_star = ifs.h_star();
    let lambda_star = ifs.lambda_star();
    let samples = ifs.sample(n_samples, seed);
    let points: Vec<C> = samples.iter().map(|s| s.0).collect();
    // Decay exponent at generic centers: the dimension statement holds at
    // almost every point, and individual centers carry bounded
    // lacunarity fluctuations, so the oracle averages log-masses over a
    // batch of sampled centers.
    let centers = &points[..48.min(points.len())];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for n in n_lo..=n_hi {
        let r = (n as f64 * lambda_star).exp();
        let mut mean_log_mass = 0.0;
        let mut used = 0usize;
        for c in centers {
            let count = points.iter().filter(|p| (*p - c).norm() < r).count();
            if count > 0 {
                mean_log_mass += (count as f64 / points.len() as f64).ln();
                used += 1;
            }
        }
        if used * 2 >= centers.len() {
            xs.push(n as f64);
            ys.push(mean_log_mass / used as f64);
        }
    }
    if xs.len() < 3 {
        return Err(DimensionError::EmptyAnnuli);
    }
    let n_pts = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n_pts;
    let ybar = ys.iter().sum::<f64>() / n_pts;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope_n = sxy / sxx;
    let resid: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let f = ybar + slope_n * (x - xbar);
            (y - f) * (y - f)
        })
        .sum();
    let exp_se = if xs.len() > 2 {
        (resid / (n_pts - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    // The decay exponent against n is slope_n = lambda* x local dimension;
    // the paper states it as the rate against e^{-n}, i.e. -slope_n -> h*.
    let exponent = -slope_n;

    // Local-dimension pipeline on the same sample.
    let sample = TransversalMeasureSample {
        transversal: 0,
        hits: points.iter().map(|p| (p.re, p.im, 1.0)).collect(),
        total_time: n_samples as f64,
        burn_in: 0.0,
        seed,
    };
    let dim_slope = if ifs.maps.len() == 1 {
        // Atomic limit: all mass at the fixed point.
        0.0
    } else {
        // Radii aligned with the contraction ratio (no lacunarity bias),
        // slope averaged over the center batch.
        let radii = ratio_aligned_radii(ifs, n_lo, 10);
        let mut acc = 0.0;
        let mut used = 0usize;
        for c in centers.iter().take(32) {
            if let Ok(fit) = local_dimension(&sample, *c, &radii, seed) {
                acc += fit.slope;
                used += 1;
            }
        }
        if used == 0 {
            return Err(DimensionError::EmptyAnnuli);
        }
        acc / used as f64
    };
    Ok(DecayCheckReport {
        h_star,
        lambda_star,
        exponent,
        exponent_stderr: exp_se,
        dimension_slope: dim_slope,
        dimension_expected: h_star / lambda_star.abs(),
        n_range: (n_lo, n_hi),
        seed,
    })
}
