//! Leafwise Brownian motion on a global foliation: isotropic steps in the
//! complex-time coordinate of the active chart (the g_s gauge), with the
//! hyperbolic clock advanced through an approximate leafwise Poincare
//! density.
//!
//! The density is the angular-sector formula inside linearization
//! bidiscs (pushed through the eigen normalization) and a floor constant
//! outside, calibrated once per covering from extension-radius probes.
//! The approximation is uncontrolled in theory; estimators built on it
//! are labeled approximate and used as diagnostics.

use super::covering::{sample_p2, Covering};
use super::integrator::{integrate_ray, Gauge, LeafPath, State, TracePoint};
use super::TrackerError;
use crate::local_model::{angular_domain, sector_density, LinearSingularity};
use crate::numeric::path_rng;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type C = Complex64;
const TAU: f64 = 2.0 * std::f64::consts::PI;

#[derive(Clone, Copy, Debug)]
pub struct WalkParams {
    /// Cap on the hyperbolic length of one step.
    pub step_cap: f64,
    /// Burn-in time discarded before estimators sample the path.
    pub burn_in: f64,
    pub max_steps: u64,
}

impl Default for WalkParams {
    fn default() -> Self {
        WalkParams { step_cap: 0.12, burn_in: 20.0, max_steps: 50_000_000 }
    }
}

/// Approximate leafwise Poincare density at a point, with respect to the
/// active-chart time gauge |du|.
///
/// Deep inside a linearization core the local leaf is the angular sector
/// and its Poincare density (which decays like 1/depth, consistent with
/// g_P ~ rho^{-1} g_s) is the model; near the rim the sector density
/// diverges at the time-domain boundary even though the actual leaf
/// continues smoothly out of the box, so the calibrated floor takes over
/// there.
pub fn leaf_density(cov: &Covering, chart: usize, z: (C, C)) -> f64 {
    let floor = cov.constants.density_floor;
    for (i, s) in cov.ctx.singularities.iter().enumerate() {
        let Some(w) = cov.ctx.eigen_of(i, chart, z) else { continue };
        let r_box = cov.sector_radius[i];
        let sup = w.0.norm().max(w.1.norm());
        if sup >= r_box || sup == 0.0 {
            continue;
        }
        let (mx, my) = (w.0.norm().max(1e-300), w.1.norm().max(1e-300));
        // Complex time of the local leaf through w relative to the box of
        // radius r_box: solve Re(a u) = log |x|/r, Re(b u) = log |y|/r.
        let lin = LinearSingularity { a: s.a, b: s.b };
        let dom = angular_domain(&lin);
        let (ra, ia) = (s.a.re, s.a.im);
        let (rb, ib) = (s.b.re, s.b.im);
        let det = -ra * ib + ia * rb;
        if det.abs() < 1e-12 {
            continue;
        }
        let gx = (mx / r_box).ln();
        let gy = (my / r_box).ln();
        // [ra, -ia; rb, -ib] [re u; im u] = [gx; gy]
        let re_u = (-ib * gx + ia * gy) / det;
        let im_u = (-rb * gx + ra * gy) / det;
        let u = C::new(re_u, im_u);
        if !dom.contains(u) || dom.dist_to_boundary(u) < 1.0 {
            continue;
        }
        // sector_density is the density w.r.t. |du| in the eigen-normalized
        // gauge; the chart gauge differs by the normalization factor.
        let lam = sector_density(&dom, u) * s.normalization_factor.norm();
        if lam.is_finite() && lam > 0.0 {
            return lam;
        }
    }
    floor
}

/// The global leafwise Brownian walker.
pub struct GlobalWalker<'a> {
    pub cov: &'a Covering,
    pub state: State,
    /// Hyperbolic (Poincare) time of the walk.
    pub t: f64,
    /// Accumulated g_s length (traced |du|).
    pub gs_length: f64,
    pub steps: u64,
    pub params: WalkParams,
    rng: ChaCha8Rng,
}

impl<'a> GlobalWalker<'a> {
    pub fn new(cov: &'a Covering, state: State, params: WalkParams, rng: ChaCha8Rng) -> Self {
        GlobalWalker { cov, state, t: 0.0, gs_length: 0.0, steps: 0, params, rng }
    }

    /// One isotropic step in the active-chart time coordinate; returns the
    /// hyperbolic time increment. Deep inside a linearization core the
    /// step runs in the singularity gauge (the linear-model handoff), so
    /// rare deep excursions never trip the excluded-ball guard meant for
    /// unprotected tracking.
    pub fn step(&mut self, t_remaining: f64) -> Result<f64, TrackerError> {
        let lambda = leaf_density(self.cov, self.state.chart, self.state.z);
        let mut ell = self.params.step_cap;
        let mut dt = ell * ell / 4.0;
        if dt > t_remaining {
            ell = (4.0 * t_remaining).sqrt();
            dt = t_remaining;
        }
        let du_len = ell / lambda;
        let gauge = match self.cov.ctx.nearest_singularity(self.state.chart, self.state.z) {
            Some((i, sup)) if sup < 0.5 * self.cov.sector_radius[i] => Gauge::Singularity(i),
            _ => Gauge::Canonical,
        };
        let dir = C::from_polar(1.0, self.rng.gen_range(0.0..TAU));
        let ray = integrate_ray(
            &self.cov.ctx,
            self.state,
            dir,
            du_len,
            gauge,
            self.gs_length,
            false,
        )?;
        self.state = ray.state;
        self.gs_length += ray.gs_length;
        self.t += dt;
        self.steps += 1;
        Ok(dt)
    }

    /// Run to the given hyperbolic time, optionally recording every step
    /// (itineraries need trace spacing below the box overlap width).
    pub fn run_to(
        &mut self,
        t_target: f64,
        record: Option<&mut Vec<TracePoint>>,
    ) -> Result<(), TrackerError> {
        let mut rec = record;
        while self.t < t_target - 1e-12 {
            if self.steps >= self.params.max_steps {
                return Err(TrackerError::StepUnderflow(0.0));
            }
            self.step(t_target - self.t)?;
            if let Some(trace) = &mut rec {
                trace.push(TracePoint {
                    chart: self.state.chart,
                    z: self.state.z,
                    s: self.gs_length,
                });
            }
        }
        Ok(())
    }

    /// Walk one unit of hyperbolic time and return the traced segment as a
    /// LeafPath, recording every step (the trace is what crossing counts
    /// and germs consume).
    pub fn unit_segment(&mut self) -> Result<LeafPath, TrackerError> {
        let mut trace = vec![TracePoint {
            chart: self.state.chart,
            z: self.state.z,
            s: self.gs_length,
        }];
        let gs0 = self.gs_length;
        let t_target = self.t + 1.0;
        while self.t < t_target - 1e-12 {
            if self.steps >= self.params.max_steps {
                return Err(TrackerError::StepUnderflow(0.0));
            }
            self.step(t_target - self.t)?;
            trace.push(TracePoint {
                chart: self.state.chart,
                z: self.state.z,
                s: self.gs_length,
            });
        }
        Ok(LeafPath {
            segments: Vec::new(),
            trace,
            gs_length: self.gs_length - gs0,
            integrator_error: 0.0,
        })
    }
}

/// Calibrate the density floor from extension-radius probes: at sampled
/// regular points, the largest complex-time disc radius over which the
/// leaf continues without entering a singular core, probed along rays;
/// the density proxy is 2 / R*.
pub fn calibrate_density_floor(cov: &mut Covering, n_points: usize, seed: u64) {
    let mut rng = path_rng(seed, 0);
    let mut probes = Vec::new();
    let r_cap = 2.0;
    'points: while probes.len() < n_points {
        let (chart, z) = sample_p2(&mut rng);
        // Regular region only.
        if let Some((i, sup)) = cov.ctx.nearest_singularity(chart, z) {
            if sup < 1.2 * cov.sector_radius[i] {
                continue 'points;
            }
        }
        let st = State { chart, z };
        let hits_core = |r: f64| -> bool {
            for k in 0..6 {
                let dir = C::from_polar(1.0, TAU * k as f64 / 6.0);
                match integrate_ray(&cov.ctx, st, dir, r, Gauge::Canonical, 0.0, true) {
                    Ok(ray) => {
                        for p in &ray.trace {
                            if let Some((i, sup)) = cov.ctx.nearest_singularity(p.chart, p.z) {
                                if sup < 0.8 * cov.sector_radius[i] {
                                    return true;
                                }
                            }
                        }
                    }
                    Err(_) => return true,
                }
            }
            false
        };
        let mut lo = 0.0;
        let mut hi = r_cap;
        if !hits_core(r_cap) {
            probes.push(2.0 / r_cap);
            continue;
        }
        for _ in 0..8 {
            let mid = 0.5 * (lo + hi);
            if hits_core(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let r_star = 0.5 * (lo + hi);
        if r_star > 1e-3 {
            probes.push(2.0 / r_star);
        }
    }
    probes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = probes[probes.len() / 2];
    cov.constants.density_floor = median.max(0.5);
}

/// Calibrate zeta on a batch of Brownian unit segments: the smallest
/// constant with `Q <= zeta * D_1^{g_s}` on the batch, doubled as a
/// safety margin (the inequality's constant is a uniform geometric bound,
/// not a sample maximum).
pub fn calibrate_zeta(
    cov: &mut Covering,
    n_segments: usize,
    seed: u64,
    params: WalkParams,
) -> Result<f64, TrackerError> {
    let ratios = crossing_ratios(cov, n_segments, seed, params)?;
    let max = ratios.iter().fold(0.0f64, |a, &(q, d)| {
        if d > 1e-6 {
            a.max(q / d)
        } else {
            a
        }
    });
    let zeta = 2.0 * max.max(0.1);
    cov.constants.zeta = Some(zeta);
    Ok(zeta)
}

/// (Q, D_1^{g_s}) on Brownian unit segments; segments are consecutive
/// along longer paths after burn-in, several per path.
pub fn crossing_ratios(
    cov: &Covering,
    n_segments: usize,
    seed: u64,
    params: WalkParams,
) -> Result<Vec<(f64, f64)>, TrackerError> {
    use rayon::prelude::*;
    let segs_per_path = 10usize;
    let n_paths = n_segments.div_ceil(segs_per_path);
    let start = default_start(cov);
    let out: Result<Vec<Vec<(f64, f64)>>, TrackerError> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let rng = path_rng(seed, i);
            let mut w = GlobalWalker::new(cov, start, params, rng);
            w.run_to(params.burn_in, None)?;
            let mut out = Vec::with_capacity(segs_per_path);
            for _ in 0..segs_per_path {
                let seg = w.unit_segment()?;
                let q = super::covering::crossing_count(cov, &seg)?;
                out.push((q as f64, seg.gs_length));
            }
            Ok(out)
        })
        .collect();
    let mut flat: Vec<(f64, f64)> = out?.into_iter().flatten().collect();
    flat.truncate(n_segments);
    Ok(flat)
}

/// A fixed regular start point for walks: a covering sample away from the
/// singular cores.
pub fn default_start(cov: &Covering) -> State {
    let mut rng = path_rng(0xa11ce, 0);
    loop {
        let (chart, z) = sample_p2(&mut rng);
        if let Some((i, sup)) = cov.ctx.nearest_singularity(chart, z) {
            if sup < 1.5 * cov.sector_radius[i] {
                continue;
            }
        }
        return State { chart, z };
    }
}
