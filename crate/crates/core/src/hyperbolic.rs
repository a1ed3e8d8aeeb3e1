//! Hyperbolic geometry of curvature -1 on the disc, half-plane and
//! angular-sector models; Brownian motion with generator the full
//! Laplacian; the radial heat kernel as a quadrature oracle; entropy and
//! Dynkin-formula calibration.
//!
//! Conventions. The disc carries `2 |dz| / (1 - |z|^2)`, so distances obey
//! `d(0, z) = 2 artanh |z|`. The diffusion generator is the Laplacian
//! `Delta` itself, not `Delta/2`: radial drift `coth r -> 1` and plane
//! entropy 1, which is what pins the convention.

use crate::numeric::{gauss_legendre, mean_stderr, path_rng};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

type C = Complex64;

const TAU: f64 = 2.0 * std::f64::consts::PI;
const PI: f64 = std::f64::consts::PI;

#[derive(Error, Debug)]
pub enum HyperbolicError {
    #[error("point {0} lies on or outside the boundary of the {1:?} model")]
    OutsideModel(C, Model),
    #[error("points belong to different models: {0:?} vs {1:?}")]
    ModelMismatch(Model, Model),
    #[error("time horizon must be positive, got {0}")]
    BadHorizon(f64),
    #[error("path count must be positive")]
    NoPaths,
    #[error("step budget {0} exhausted before reaching the horizon")]
    StepBudget(u64),
    #[error("degenerate denominator in the Dynkin ratio (|E int Delta phi| = {0:.3e})")]
    DegenerateDenominator(f64),
    #[error("quadrature failed for (t, r) = ({0}, {1})")]
    Quadrature(f64, f64),
}

/// Curvature -1 model domains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Model {
    Disc,
    HalfPlane,
    /// Sector of the given opening with vertex at 0, `arg z` in `(0, opening)`.
    Sector { opening: f64 },
}

/// A point strictly inside one of the model domains.
#[derive(Clone, Copy, Debug)]
pub struct HypPoint {
    pub model: Model,
    pub z: C,
}

impl HypPoint {
    pub fn disc(z: C) -> Self {
        HypPoint { model: Model::Disc, z }
    }
    pub fn half_plane(z: C) -> Self {
        HypPoint { model: Model::HalfPlane, z }
    }
    pub fn sector(opening: f64, z: C) -> Self {
        HypPoint { model: Model::Sector { opening }, z }
    }
}

pub fn halfplane_density(z: C) -> f64 {
    1.0 / z.im
}

/// Conformal density of the curvature -1 metric in the model coordinate.
pub fn poincare_density(p: &HypPoint) -> Result<f64, HyperbolicError> {
    let bad = || HyperbolicError::OutsideModel(p.z, p.model);
    match p.model {
        Model::Disc => {
            if p.z.norm() >= 1.0 {
                return Err(bad());
            }
            Ok(2.0 / (1.0 - p.z.norm_sqr()))
        }
        Model::HalfPlane => {
            if p.z.im <= 0.0 {
                return Err(bad());
            }
            Ok(halfplane_density(p.z))
        }
        Model::Sector { opening } => {
            let phi = p.z.arg();
            if p.z.norm() == 0.0 || phi <= 0.0 || phi >= opening {
                return Err(bad());
            }
            let pw = PI / opening;
            let r = p.z.norm();
            Ok(pw * r.powf(pw - 1.0) / (r.powf(pw) * (pw * phi).sin()))
        }
    }
}

/// Euclidean distance to the model boundary (used for boundary-safe steps).
fn boundary_dist(p: &HypPoint) -> f64 {
    match p.model {
        Model::Disc => 1.0 - p.z.norm(),
        Model::HalfPlane => p.z.im,
        Model::Sector { opening } => {
            let ray = |psi: f64| {
                let w = p.z * C::from_polar(1.0, -psi);
                if w.re >= 0.0 {
                    w.im.abs()
                } else {
                    p.z.norm()
                }
            };
            ray(0.0).min(ray(opening))
        }
    }
}

fn halfplane_distance(z: C, w: C) -> f64 {
    2.0 * ((z - w).norm() / (2.0 * (z.im * w.im).sqrt())).asinh()
}

/// Geodesic distance for the curvature -1 metric.
pub fn hyp_distance(p: &HypPoint, q: &HypPoint) -> Result<f64, HyperbolicError> {
    if p.model != q.model {
        return Err(HyperbolicError::ModelMismatch(p.model, q.model));
    }
    poincare_density(p)?;
    poincare_density(q)?;
    match p.model {
        Model::Disc => {
            let m = ((p.z - q.z) / (C::new(1.0, 0.0) - p.z.conj() * q.z)).norm();
            // 2 artanh m, in a form stable near m = 1.
            Ok((2.0 * m / (1.0 - m)).ln_1p())
        }
        Model::HalfPlane => Ok(halfplane_distance(p.z, q.z)),
        Model::Sector { opening } => {
            let pw = PI / opening;
            let lift = |z: C| C::from_polar(z.norm().powf(pw), pw * z.arg());
            Ok(halfplane_distance(lift(p.z), lift(q.z)))
        }
    }
}

// ---------------------------------------------------------------------------
// Brownian motion
// ---------------------------------------------------------------------------

/// Discretization controls for the Euclidean-increment walk.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StepControl {
    /// Base Euclidean step; the actual step is `base * boundary_dist`.
    pub base: f64,
    /// Cap on the hyperbolic length of a single step.
    pub cap: f64,
    pub max_steps: u64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl { base: 0.05, cap: 0.2, max_steps: 200_000_000 }
    }
}

/// A sampled Brownian path (thinned trace).
#[derive(Clone, Debug)]
pub struct BMPath {
    pub model: Model,
    pub start: C,
    /// (hyperbolic time, model coordinate) samples, times strictly increasing.
    pub samples: Vec<(f64, C)>,
    pub step_control: StepControl,
    pub seed: u64,
}

/// Streaming walker on the disc from the origin, kept in geodesic polar
/// coordinates `(r, theta)` so that paths of hyperbolic radius ~700 stay
/// in floating range. While `r < 5` the walk uses the exact disc
/// coordinate; beyond that the polar update from the hyperbolic law of
/// cosines takes over with the same step law.
pub struct DiscWalker {
    pub r: f64,
    pub theta: f64,
    z_small: Option<C>,
    pub t: f64,
    pub steps: u64,
    control: StepControl,
    rng: ChaCha8Rng,
}

const POLAR_SWITCH: f64 = 5.0;

impl DiscWalker {
    pub fn from_origin(control: StepControl, rng: ChaCha8Rng) -> Self {
        DiscWalker {
            r: 0.0,
            theta: 0.0,
            z_small: Some(C::new(0.0, 0.0)),
            t: 0.0,
            steps: 0,
            control,
            rng,
        }
    }

    /// One isotropic step; returns the hyperbolic time increment.
    pub fn step(&mut self, t_remaining: f64) -> f64 {
        // Hyperbolic step length: lambda * base * (1 - |z|) = 2 base / (1 + |z|),
        // capped. Shrink further to land exactly at the horizon.
        let zr = (self.r / 2.0).tanh();
        let mut ell = (2.0 * self.control.base / (1.0 + zr)).min(self.control.cap);
        let dt_full = ell * ell / 4.0;
        if dt_full > t_remaining {
            ell = (4.0 * t_remaining).sqrt();
        }
        let dt = ell * ell / 4.0;
        let psi = self.rng.gen_range(0.0..TAU);
        if let Some(z) = self.z_small {
            // Exact disc-coordinate step: Euclidean increment of length
            // ell / lambda(z) in a uniform direction.
            let h = ell * (1.0 - z.norm_sqr()) / 2.0;
            let z_new = z + C::from_polar(h, psi);
            let m = z_new.norm();
            self.r = (2.0 * m / (1.0 - m)).ln_1p();
            self.theta = z_new.arg();
            if self.r >= POLAR_SWITCH {
                self.z_small = None;
            } else {
                self.z_small = Some(z_new);
            }
        } else {
            // Law of cosines: cosh r' = cosh r cosh l + sinh r sinh l cos psi.
            let (c_ell, s_ell) = (ell.cosh(), ell.sinh());
            let cos_psi = psi.cos();
            let r_new = if self.r < 30.0 {
                let arg = self.r.cosh() * c_ell + self.r.sinh() * s_ell * cos_psi;
                arg.acosh()
            } else {
                // cosh r' = cosh r (cosh l + tanh r sinh l cos psi); tanh r ~ 1.
                self.r + (c_ell + s_ell * cos_psi).ln()
            };
            // Law of sines for the angular displacement; steps are short
            // relative to r here, so the asin branch is the correct one.
            let s = (s_ell * psi.sin() / r_new.sinh()).clamp(-1.0, 1.0);
            self.theta += s.asin();
            self.r = r_new;
            if self.r < POLAR_SWITCH {
                self.z_small = Some(C::from_polar((self.r / 2.0).tanh(), self.theta));
            }
        }
        self.t += dt;
        self.steps += 1;
        dt
    }

    /// Advance to hyperbolic time `t_target`.
    pub fn run_to(&mut self, t_target: f64) -> Result<(), HyperbolicError> {
        while self.t < t_target - 1e-15 {
            if self.steps >= self.control.max_steps {
                return Err(HyperbolicError::StepBudget(self.control.max_steps));
            }
            self.step(t_target - self.t);
        }
        Ok(())
    }

    pub fn position(&self) -> C {
        match self.z_small {
            Some(z) => z,
            None => C::from_polar((self.r / 2.0).tanh(), self.theta),
        }
    }
}

/// Generic walker for half-plane and sector models (coordinates stay in
/// range because those models are unbounded domains).
struct CoordWalker {
    p: HypPoint,
    t: f64,
    steps: u64,
    control: StepControl,
    rng: ChaCha8Rng,
}

impl CoordWalker {
    fn step(&mut self, t_remaining: f64) -> f64 {
        let lambda = poincare_density(&self.p).expect("walker stays inside");
        let mut h = self.control.base * boundary_dist(&self.p);
        if lambda * h > self.control.cap {
            h = self.control.cap / lambda;
        }
        let mut dt = (lambda * h) * (lambda * h) / 4.0;
        if dt > t_remaining {
            h = (4.0 * t_remaining).sqrt() / lambda;
            dt = t_remaining;
        }
        let psi = self.rng.gen_range(0.0..TAU);
        self.p.z += C::from_polar(h, psi);
        self.t += dt;
        self.steps += 1;
        dt
    }
}

/// Sample one Brownian path run to time `t`; the trace is thinned to at
/// most `max_samples` entries (endpoints always kept).
pub fn sample_bm(
    start: &HypPoint,
    t: f64,
    control: StepControl,
    seed: u64,
    max_samples: usize,
) -> Result<BMPath, HyperbolicError> {
    if t < 0.0 {
        return Err(HyperbolicError::BadHorizon(t));
    }
    poincare_density(start)?;
    let mut samples = vec![(0.0, start.z)];
    if t == 0.0 {
        return Ok(BMPath {
            model: start.model,
            start: start.z,
            samples,
            step_control: control,
            seed,
        });
    }
    let keep_every = {
        // Rough step count to size the thinning stride.
        let est = (t / (control.base * control.base)).ceil() as usize;
        (est / max_samples.max(2)).max(1)
    };
    let rng = path_rng(seed, 0);
    match start.model {
        Model::Disc if start.z.norm() == 0.0 => {
            let mut w = DiscWalker::from_origin(control, rng);
            while w.t < t - 1e-15 {
                if w.steps >= control.max_steps {
                    return Err(HyperbolicError::StepBudget(control.max_steps));
                }
                w.step(t - w.t);
                if w.steps % keep_every as u64 == 0 || w.t >= t - 1e-15 {
                    samples.push((w.t, w.position()));
                }
            }
        }
        _ => {
            let mut w = CoordWalker { p: *start, t: 0.0, steps: 0, control, rng };
            while w.t < t - 1e-15 {
                if w.steps >= control.max_steps {
                    return Err(HyperbolicError::StepBudget(control.max_steps));
                }
                w.step(t - w.t);
                if w.steps % keep_every as u64 == 0 || w.t >= t - 1e-15 {
                    samples.push((w.t, w.p.z));
                }
            }
        }
    }
    Ok(BMPath { model: start.model, start: start.z, samples, step_control: control, seed })
}

// ---------------------------------------------------------------------------
// Heat kernel
// ---------------------------------------------------------------------------

/// Radial heat kernel oracle for the generator-Delta diffusion on the
/// curvature -1 plane, via the McKean integral representation
/// `p(t,r) = sqrt(2) e^{-t/4} (4 pi t)^{-3/2}
///           int_r^inf s e^{-s^2/(4t)} / sqrt(cosh s - cosh r) ds`,
/// evaluated after the substitution `s = r + v^2` which removes the
/// endpoint singularity, with the large-r exponential factored out.
pub struct HeatKernel {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Default for HeatKernel {
    fn default() -> Self {
        Self::new()
    }
}

impl HeatKernel {
    pub fn new() -> Self {
        let (nodes, weights) = gauss_legendre(32);
        HeatKernel { nodes, weights }
    }

    /// log p(t, r); stable for all radii the walkers can reach.
    pub fn log_density(&self, t: f64, r: f64) -> Result<f64, HyperbolicError> {
        if t <= 0.0 || r < 0.0 {
            return Err(HyperbolicError::Quadrature(t, r));
        }
        // Reduced integrand: 2 v (r + v^2) e^{-v^2 (2r + v^2)/(4t)}
        //                    / sqrt((e^{v^2}-1)/2 - e^{-2r}(1-e^{-v^2})/2).
        let f = |v: f64| -> f64 {
            let v2 = v * v;
            let red = 0.5 * (v2.exp_m1() - (-2.0 * r).exp() * (-(-v2).exp_m1()));
            if red <= 0.0 {
                return if v == 0.0 { 2.0 * r / (r.exp() * 0.0 + 1.0) } else { 0.0 };
            }
            2.0 * v * (r + v2) * (-(v2 * (2.0 * r + v2)) / (4.0 * t)).exp() / red.sqrt()
        };
        // Integration limit: exponent <= ~70 covers everything that matters;
        // the sqrt factor only speeds the decay.
        let vmax = (((r * r + 280.0 * t).sqrt() - r).max(1e-9)).sqrt() + 1.0;
        let mut total = 0.0;
        let panels = 14;
        for p in 0..panels {
            let lo = vmax * p as f64 / panels as f64;
            let hi = vmax * (p + 1) as f64 / panels as f64;
            let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            let mut acc = 0.0;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                acc += w * f(c + h * x);
            }
            total += acc * h;
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(HyperbolicError::Quadrature(t, r));
        }
        Ok(0.5 * 2f64.ln() - t / 4.0 - 1.5 * (4.0 * PI * t).ln() - r * r / (4.0 * t) - r / 2.0
            + total.ln())
    }

    pub fn density(&self, t: f64, r: f64) -> Result<f64, HyperbolicError> {
        Ok(self.log_density(t, r)?.exp())
    }

    fn radial_extent(t: f64) -> f64 {
        t + 14.0 * t.sqrt() + 25.0
    }

    /// `int f(r) p(t, r) dvol` over the plane by composite Gauss-Legendre.
    pub fn radial_integral(
        &self,
        t: f64,
        f: &dyn Fn(f64) -> f64,
    ) -> Result<f64, HyperbolicError> {
        let r_max = Self::radial_extent(t);
        let panels = 600;
        let step = r_max / panels as f64;
        let mut acc = 0.0;
        for p in 0..panels {
            let (lo, hi) = (p as f64 * step, (p + 1) as f64 * step);
            let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                let r = c + h * x;
                acc += w * h * f(r) * self.density(t, r)? * TAU * r.sinh();
            }
        }
        Ok(acc)
    }

    /// `int p(t, r) dvol` over the plane; equals 1 up to quadrature error.
    pub fn total_mass(&self, t: f64) -> Result<f64, HyperbolicError> {
        self.radial_integral(t, &|_| 1.0)
    }

    /// Exact mean of `d(x, X_t)` under the kernel law.
    pub fn mean_radius(&self, t: f64) -> Result<f64, HyperbolicError> {
        self.radial_integral(t, &|r| r)
    }

    /// Radial CDF of `d(x, X_t)` on a grid, for KS tests and inverse
    /// sampling.
    pub fn radial_cdf(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>), HyperbolicError> {
        let r_max = Self::radial_extent(t);
        let panels = 800;
        let step = r_max / panels as f64;
        let mut grid = Vec::with_capacity(panels + 1);
        let mut cdf = Vec::with_capacity(panels + 1);
        grid.push(0.0);
        cdf.push(0.0);
        let mut acc = 0.0;
        for p in 0..panels {
            let (lo, hi) = (p as f64 * step, (p + 1) as f64 * step);
            let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                let r = c + h * x;
                acc += w * h * self.density(t, r)? * TAU * r.sinh();
            }
            grid.push(hi);
            cdf.push(acc);
        }
        let total = *cdf.last().unwrap();
        for c in cdf.iter_mut() {
            *c /= total;
        }
        Ok((grid, cdf))
    }

    /// Chapman-Kolmogorov defect: relative error of
    /// `int p(s, d(x,y)) p(t, d(y,z)) dvol(y)` against `p(s+t, d(x,z))`.
    pub fn semigroup_defect(&self, s: f64, t: f64, r_xz: f64) -> Result<f64, HyperbolicError> {
        let r_max = (s.max(t) + 12.0 * s.max(t).sqrt() + 15.0) + r_xz;
        let nr = 260;
        let na = 160;
        let mut acc = 0.0;
        for i in 0..nr {
            let r = r_max * (i as f64 + 0.5) / nr as f64;
            let pr = self.density(s, r)?;
            for j in 0..na {
                let phi = TAU * (j as f64 + 0.5) / na as f64;
                let cosh_d = r.cosh() * r_xz.cosh() - r.sinh() * r_xz.sinh() * phi.cos();
                let d = cosh_d.max(1.0).acosh();
                acc += pr * self.density(t, d)? * r.sinh();
            }
        }
        acc *= (r_max / nr as f64) * (TAU / na as f64);
        let target = self.density(s + t, r_xz)?;
        Ok((acc - target).abs() / target)
    }
}

// ---------------------------------------------------------------------------
// Entropy of the plane
// ---------------------------------------------------------------------------

/// Report of the plane-entropy estimator.
#[derive(Clone, Debug, Serialize)]
pub struct PlaneEntropyReport {
    /// Time-differenced Kaimanovich estimate over the window [t/2, t].
    pub estimate: f64,
    pub stderr: f64,
    /// Raw functional -(1/t) E[log p(t, d(x, X_t))]; carries an O(log t / t)
    /// positive bias and is reported for diagnostics.
    pub raw_estimate: f64,
    pub raw_stderr: f64,
    pub n: usize,
    pub t: f64,
    pub seed: u64,
}

/// Monte Carlo estimate of the entropy of the hyperbolic plane.
///
/// The limit of `-(1/t) E[log p(t, d(x, X_t))]` is 1, but the approach is
/// slow (the gap is `~(0.5 log t + 4)/t`, still 0.29 at t = 20). The
/// estimator therefore reports the differenced functional
/// `(S(t) - S(t/2)) / (t/2)` with `S(u) = -E[log p(u, d(x, X_u))]`, which
/// has the same limit with the additive bias cancelled; the raw value is
/// included alongside.
pub fn plane_entropy(
    t: f64,
    n_paths: usize,
    control: StepControl,
    seed: u64,
) -> Result<PlaneEntropyReport, HyperbolicError> {
    if n_paths == 0 {
        return Err(HyperbolicError::NoPaths);
    }
    if t <= 0.0 {
        return Err(HyperbolicError::BadHorizon(t));
    }
    let kernel = HeatKernel::new();
    let half = t / 2.0;
    let per_path: Result<Vec<(f64, f64)>, HyperbolicError> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let rng = path_rng(seed, i);
            let mut w = DiscWalker::from_origin(control, rng);
            w.run_to(half)?;
            let r_half = w.r;
            w.run_to(t)?;
            let r_full = w.r;
            let s_half = -kernel.log_density(half, r_half)?;
            let s_full = -kernel.log_density(t, r_full)?;
            Ok((s_full, s_half))
        })
        .collect();
    let per_path = per_path?;
    let diffs: Vec<f64> = per_path.iter().map(|(f, h)| (f - h) / half).collect();
    let raws: Vec<f64> = per_path.iter().map(|(f, _)| f / t).collect();
    let (estimate, stderr) = mean_stderr(&diffs);
    let (raw_estimate, raw_stderr) = mean_stderr(&raws);
    Ok(PlaneEntropyReport {
        estimate,
        stderr,
        raw_estimate,
        raw_stderr,
        n: n_paths,
        t,
        seed,
    })
}

// ---------------------------------------------------------------------------
// Dynkin calibration
// ---------------------------------------------------------------------------

/// Built-in test functions with closed-form Laplacians on the disc.
#[derive(Clone, Copy, Debug, Serialize)]
pub enum DynkinTestFn {
    /// phi = -log(1 - |z|^2) = 2 log cosh(r/2), with Delta phi = 1.
    LogBoundary,
    /// phi = r^2, with Delta phi = 2 + 2 r coth r.
    RadiusSquared,
    /// Constant function; both sides of the formula vanish.
    Constant,
}

impl DynkinTestFn {
    fn phi(&self, r: f64) -> f64 {
        match self {
            DynkinTestFn::LogBoundary => 2.0 * (r / 2.0).cosh().ln(),
            DynkinTestFn::RadiusSquared => r * r,
            DynkinTestFn::Constant => 1.0,
        }
    }

    fn laplacian(&self, r: f64) -> f64 {
        match self {
            DynkinTestFn::LogBoundary => 1.0,
            DynkinTestFn::RadiusSquared => {
                if r < 1e-8 {
                    4.0
                } else {
                    2.0 + 2.0 * r / r.tanh()
                }
            }
            DynkinTestFn::Constant => 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DynkinReport {
    /// Least-squares factor c with E[phi(X_t)] - phi(x) = c E[int Delta phi].
    pub c: f64,
    pub stderr: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub n: usize,
    pub t: f64,
    pub seed: u64,
}

/// Calibrate the generator convention: with the sampler's generator equal
/// to the full Laplacian the factor is 1; a generator Delta/2 sampler
/// would return 1/2.
pub fn dynkin_check(
    test_fn: DynkinTestFn,
    t: f64,
    n_paths: usize,
    control: StepControl,
    seed: u64,
) -> Result<DynkinReport, HyperbolicError> {
    if n_paths == 0 {
        return Err(HyperbolicError::NoPaths);
    }
    if t <= 0.0 {
        return Err(HyperbolicError::BadHorizon(t));
    }
    let per_path: Result<Vec<(f64, f64)>, HyperbolicError> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let rng = path_rng(seed, i);
            let mut w = DiscWalker::from_origin(control, rng);
            let mut integral = 0.0;
            let mut lap_prev = test_fn.laplacian(0.0);
            while w.t < t - 1e-15 {
                let dt = w.step(t - w.t);
                let lap = test_fn.laplacian(w.r);
                integral += 0.5 * (lap_prev + lap) * dt;
                lap_prev = lap;
            }
            Ok((test_fn.phi(w.r) - test_fn.phi(0.0), integral))
        })
        .collect();
    let per_path = per_path?;
    let ys: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let zs: Vec<f64> = per_path.iter().map(|p| p.1).collect();
    let (lhs, _) = mean_stderr(&ys);
    let (rhs, _) = mean_stderr(&zs);
    if rhs.abs() < 1e-12 {
        return Err(HyperbolicError::DegenerateDenominator(rhs.abs()));
    }
    let c = lhs / rhs;
    let resid: Vec<f64> = per_path.iter().map(|(y, z)| y - c * z).collect();
    let (_, resid_se) = mean_stderr(&resid);
    let stderr = resid_se / rhs.abs();
    Ok(DynkinReport { c, stderr, lhs, rhs, n: n_paths, t, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    #[test]
    fn density_values() {
        assert_abs_diff_eq!(
            poincare_density(&HypPoint::disc(c(0.0, 0.0))).unwrap(),
            2.0
        );
        // Cayley transfer of the disc formula gives 1/Im z on the half-plane.
        assert_abs_diff_eq!(
            poincare_density(&HypPoint::half_plane(c(0.0, 1.0))).unwrap(),
            1.0
        );
        // Sector of opening pi is the half-plane.
        let p_sector = HypPoint::sector(PI, c(0.3, 1.0));
        let p_half = HypPoint::half_plane(c(0.3, 1.0));
        assert_abs_diff_eq!(
            poincare_density(&p_sector).unwrap(),
            poincare_density(&p_half).unwrap(),
            epsilon = 1e-12
        );
        assert!(poincare_density(&HypPoint::disc(c(1.0, 0.0))).is_err());
    }

    #[test]
    fn disc_distance_values() {
        let o = HypPoint::disc(c(0.0, 0.0));
        assert_abs_diff_eq!(hyp_distance(&o, &o).unwrap(), 0.0);
        // d(0, 0.5) = log 3 from the radial integral of 2/(1-s^2).
        let p = HypPoint::disc(c(0.5, 0.0));
        assert_abs_diff_eq!(hyp_distance(&o, &p).unwrap(), 3f64.ln(), epsilon = 1e-14);
        // Rotational isometry.
        let rot = C::from_polar(1.0, 1.234);
        let (z, w) = (c(0.3, -0.1), c(-0.2, 0.6));
        let d1 = hyp_distance(&HypPoint::disc(z), &HypPoint::disc(w)).unwrap();
        let d2 = hyp_distance(&HypPoint::disc(rot * z), &HypPoint::disc(rot * w)).unwrap();
        assert_abs_diff_eq!(d1, d2, epsilon = 1e-14);
        assert!(hyp_distance(&o, &HypPoint::half_plane(c(0.0, 1.0))).is_err());
    }

    #[test]
    fn sector_distance_agrees_with_halfplane_at_opening_pi() {
        let (z, w) = (c(0.4, 0.9), c(-1.3, 0.2));
        // Shift w into the upper half plane.
        let w = c(w.re, w.im.abs() + 0.1);
        let d_half =
            hyp_distance(&HypPoint::half_plane(z), &HypPoint::half_plane(w)).unwrap();
        let d_sector =
            hyp_distance(&HypPoint::sector(PI, z), &HypPoint::sector(PI, w)).unwrap();
        assert_abs_diff_eq!(d_half, d_sector, epsilon = 1e-12);
    }

    #[test]
    fn heat_kernel_normalizes_to_one() {
        let k = HeatKernel::new();
        for t in [0.5, 2.0, 10.0] {
            let mass = k.total_mass(t).unwrap();
            assert!(
                (mass - 1.0).abs() < 1e-6,
                "total mass at t={t} was {mass}"
            );
        }
    }

    #[test]
    fn heat_kernel_decreases_in_radius() {
        let k = HeatKernel::new();
        for t in [0.5, 2.0, 10.0] {
            let mut prev = f64::INFINITY;
            for i in 0..60 {
                let r = i as f64 * 0.5;
                let v = k.log_density(t, r).unwrap();
                assert!(v < prev, "kernel must decrease in r at t={t}");
                prev = v;
            }
        }
    }

    #[test]
    fn heat_kernel_semigroup_property() {
        let k = HeatKernel::new();
        for r in [0.5, 2.0] {
            let defect = k.semigroup_defect(1.0, 1.0, r).unwrap();
            assert!(defect < 0.01, "semigroup defect {defect} at r={r}");
        }
    }

    #[test]
    fn bm_zero_horizon_is_constant() {
        let path = sample_bm(
            &HypPoint::disc(c(0.2, 0.1)),
            0.0,
            StepControl::default(),
            9,
            100,
        )
        .unwrap();
        assert_eq!(path.samples.len(), 1);
        assert_eq!(path.samples[0].1, c(0.2, 0.1));
    }

    #[test]
    fn bm_radial_mean_matches_kernel_quadrature() {
        // The finite-t mean radius sits above t (E[r]/t = 1.138 at t = 10,
        // tending to 1); the sampler must match the kernel-law quadrature
        // at the same t, and the asymptotic drift band at large t.
        let t = 10.0;
        let n = 4000u64;
        let control = StepControl::default();
        let mean_r: f64 = (0..n)
            .into_par_iter()
            .map(|i| {
                let rng = path_rng(31, i);
                let mut w = DiscWalker::from_origin(control, rng);
                w.run_to(t).unwrap();
                w.r
            })
            .sum::<f64>()
            / n as f64;
        let exact = HeatKernel::new().mean_radius(t).unwrap();
        assert!(
            (mean_r - exact).abs() < 0.02 * exact,
            "sampled mean radius {mean_r} vs quadrature {exact}"
        );
    }

    #[test]
    fn bm_radial_drift_tends_to_one() {
        let t = 50.0;
        let n = 1200u64;
        let control = StepControl::default();
        let mean_r: f64 = (0..n)
            .into_par_iter()
            .map(|i| {
                let rng = path_rng(33, i);
                let mut w = DiscWalker::from_origin(control, rng);
                w.run_to(t).unwrap();
                w.r
            })
            .sum::<f64>()
            / n as f64;
        let drift = mean_r / t;
        assert!(
            (drift - 1.0).abs() < 0.05,
            "radial drift {drift} should be within 1 +- 0.05 at t = {t}"
        );
    }

    #[test]
    fn bm_endpoint_angles_are_uniform() {
        // Chi-square over 16 bins at t = 2.
        let n = 8000u64;
        let bins = 16usize;
        let control = StepControl::default();
        let counts: Vec<usize> = {
            let mut counts = vec![0usize; bins];
            let angles: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let rng = path_rng(77, i);
                    let mut w = DiscWalker::from_origin(control, rng);
                    w.run_to(2.0).unwrap();
                    w.theta.rem_euclid(TAU)
                })
                .collect();
            for a in angles {
                counts[((a / TAU) * bins as f64) as usize % bins] += 1;
            }
            counts
        };
        let expect = n as f64 / bins as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&k| (k as f64 - expect).powi(2) / expect)
            .sum();
        // 15 dof: 99.9% quantile is 37.7.
        assert!(chi2 < 37.7, "chi2 = {chi2}, angle distribution not uniform");
    }

    #[test]
    fn bm_endpoint_radii_match_kernel_law() {
        // KS distance between sampled radii and the kernel radial CDF.
        let t = 2.0;
        let n = 20000u64;
        let control = StepControl::default();
        let mut radii: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let rng = path_rng(513, i);
                let mut w = DiscWalker::from_origin(control, rng);
                w.run_to(t).unwrap();
                w.r
            })
            .collect();
        radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (grid, cdf) = HeatKernel::new().radial_cdf(t).unwrap();
        let interp = |r: f64| -> f64 {
            match grid.binary_search_by(|g| g.partial_cmp(&r).unwrap()) {
                Ok(i) => cdf[i],
                Err(0) => 0.0,
                Err(i) if i >= grid.len() => 1.0,
                Err(i) => {
                    let w = (r - grid[i - 1]) / (grid[i] - grid[i - 1]);
                    cdf[i - 1] * (1.0 - w) + cdf[i] * w
                }
            }
        };
        let mut ks: f64 = 0.0;
        for (idx, r) in radii.iter().enumerate() {
            let f = interp(*r);
            let lo = idx as f64 / n as f64;
            let hi = (idx + 1) as f64 / n as f64;
            ks = ks.max((f - lo).abs()).max((f - hi).abs());
        }
        assert!(ks < 0.015, "KS distance {ks} too large at t={t}");
    }

    #[test]
    fn plane_entropy_trivial_errors() {
        assert!(matches!(
            plane_entropy(10.0, 0, StepControl::default(), 1),
            Err(HyperbolicError::NoPaths)
        ));
        assert!(plane_entropy(-1.0, 10, StepControl::default(), 1).is_err());
    }

    #[test]
    fn plane_entropy_small_run_lands_near_one() {
        let rep = plane_entropy(12.0, 3000, StepControl::default(), 4).unwrap();
        assert!(
            (rep.estimate - 1.0).abs() < 0.12,
            "estimate {} +- {}",
            rep.estimate,
            rep.stderr
        );
        // Raw functional sits above the limit at finite t.
        assert!(rep.raw_estimate > rep.estimate);
    }

    #[test]
    fn entropy_estimates_decrease_from_t5_to_t20() {
        let e5 = plane_entropy(5.0, 1500, StepControl::default(), 11).unwrap();
        let e20 = plane_entropy(20.0, 1500, StepControl::default(), 11).unwrap();
        // Monotone approach recorded, not asserted as a strict direction:
        // allow 3 stderr of slack.
        assert!(e5.estimate <= e20.estimate + 3.0 * (e5.stderr + e20.stderr) + 0.35);
        assert!(e5.raw_estimate > e20.raw_estimate);
    }

    #[test]
    fn dynkin_factor_is_one_for_generator_delta() {
        for tf in [DynkinTestFn::LogBoundary, DynkinTestFn::RadiusSquared] {
            let rep = dynkin_check(tf, 4.0, 20000, StepControl::default(), 3).unwrap();
            assert!(
                (rep.c - 1.0).abs() < 0.02,
                "{:?}: c = {} +- {}",
                tf,
                rep.c,
                rep.stderr
            );
        }
    }

    #[test]
    fn dynkin_degenerate_cases_error() {
        assert!(matches!(
            dynkin_check(DynkinTestFn::Constant, 2.0, 100, StepControl::default(), 1),
            Err(HyperbolicError::DegenerateDenominator(_))
        ));
        assert!(dynkin_check(
            DynkinTestFn::LogBoundary,
            0.0,
            100,
            StepControl::default(),
            1
        )
        .is_err());
    }

    #[test]
    fn halving_the_step_moves_entropy_less_than_two_stderr() {
        let coarse = StepControl { base: 0.08, ..StepControl::default() };
        let fine = StepControl { base: 0.04, ..StepControl::default() };
        let e1 = plane_entropy(8.0, 2000, coarse, 21).unwrap();
        let e2 = plane_entropy(8.0, 2000, fine, 21).unwrap();
        assert!(
            (e1.estimate - e2.estimate).abs() < 2.0 * (e1.stderr + e2.stderr) + 0.02,
            "step halving shifted the estimate too much: {} vs {}",
            e1.estimate,
            e2.estimate
        );
    }
}
