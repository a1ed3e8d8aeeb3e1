//! Additive cocycles along leafwise Brownian paths and the estimators
//! built from them: the Lyapunov exponent of holonomy derivatives, the
//! Furstenberg-entropy identity checks on synthetic harmonic currents,
//! the separated-set leaf entropy, and the relative-entropy inequality.

use crate::hyperbolic::{DiscWalker, HeatKernel, HyperbolicError, StepControl};
use crate::local_model::LinearSingularity;
use crate::numeric::{mean_stderr, pairwise_sum, path_rng};
use crate::tracker::{crossing_count, germ_along, Covering, GlobalWalker, TrackerError, WalkParams};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

type C = Complex64;
const TAU: f64 = 2.0 * std::f64::consts::PI;

#[derive(Error, Debug)]
pub enum CocycleError {
    #[error(transparent)]
    Hyperbolic(#[from] HyperbolicError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error("form {0:?} needs a context that provides it")]
    MissingContext(Form),
    #[error("path count must be positive")]
    NoPaths,
    #[error("horizon must be positive, got {0}")]
    BadHorizon(f64),
    #[error("too few distinct horizons ({0}); the growth-rate fit needs at least 3")]
    TooFewHorizons(usize),
}

/// Labeled leafwise 1-forms whose path integrals the estimators track.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Form {
    /// d log of the holonomy-derivative cocycle for the metric `|omega|`.
    EtaM,
    /// Same for the projection-pulled product metric.
    EtaMPr,
    /// d log tau of a harmonic current (Radon-Nikodym cocycle).
    Beta,
    /// Traced g_s length (a nonnegative subadditive cocycle).
    GsLength,
}

/// Accumulated cocycle values of one path at the midpoint and horizon,
/// recorded so additivity under splitting is checkable exactly.
#[derive(Clone, Debug, Serialize)]
pub struct CocycleSample {
    pub path_id: u64,
    pub seed: u64,
    pub horizon: f64,
    pub form: Form,
    /// H over [0, t/2].
    pub first_half: f64,
    /// H over [t/2, t] computed from the midpoint state (the shifted path).
    pub second_half: f64,
    /// H over [0, t] computed independently end to end.
    pub full: f64,
}

impl CocycleSample {
    /// Splitting defect |H_t - (H_{t/2} + H_{t/2} o sigma)|.
    pub fn additivity_defect(&self) -> f64 {
        (self.full - (self.first_half + self.second_half)).abs()
    }
}

// ---------------------------------------------------------------------------
// Synthetic harmonic currents
// ---------------------------------------------------------------------------

/// Per-plaque positive harmonic density of a synthetic current.
#[derive(Clone, Debug, Serialize)]
pub enum TauSpec {
    /// tau = 1: closed current, vanishing dynamical entropy.
    Uniform,
    /// Poisson kernel at one boundary point (a Busemann exponential).
    Poisson { boundary_angle: f64 },
    /// Convex mixture of Poisson kernels.
    Mixture { angles: Vec<f64>, weights: Vec<f64> },
    /// Poisson kernel whose boundary point depends on the transverse
    /// coordinate (Radon-Nikodym tests need genuine t-dependence).
    Rotating { speed: f64 },
}

/// Transverse measure of the synthetic box.
#[derive(Clone, Debug, Serialize)]
pub enum NuSpec {
    UniformDisc,
    /// Atoms (re, im, weight).
    Atoms(Vec<(f64, f64, f64)>),
}

/// Product foliation box D x D with a per-plaque positive harmonic
/// density against a transverse measure.
#[derive(Clone, Debug, Serialize)]
pub struct SyntheticCurrent {
    pub tau: TauSpec,
    pub nu: NuSpec,
}

fn poisson(z: C, angle: f64) -> f64 {
    let zeta = C::from_polar(1.0, angle);
    (1.0 - z.norm_sqr()) / (zeta - z).norm_sqr()
}

/// d/dz of log P(z, e^{i angle}) = -conj(z)/(1-|z|^2) + 1/(zeta - z).
fn dz_log_poisson(z: C, angle: f64) -> C {
    let zeta = C::from_polar(1.0, angle);
    -z.conj() / (1.0 - z.norm_sqr()) + 1.0 / (zeta - z)
}

impl SyntheticCurrent {
    pub fn uniform() -> Self {
        SyntheticCurrent { tau: TauSpec::Uniform, nu: NuSpec::UniformDisc }
    }

    pub fn poisson() -> Self {
        SyntheticCurrent { tau: TauSpec::Poisson { boundary_angle: 0.0 }, nu: NuSpec::UniformDisc }
    }

    pub fn mixture() -> Self {
        SyntheticCurrent {
            tau: TauSpec::Mixture {
                angles: vec![0.0, std::f64::consts::PI],
                weights: vec![0.5, 0.5],
            },
            nu: NuSpec::UniformDisc,
        }
    }

    pub fn rotating() -> Self {
        SyntheticCurrent { tau: TauSpec::Rotating { speed: 2.0 }, nu: NuSpec::UniformDisc }
    }

    pub const BUILTINS: [&'static str; 3] = ["uniform", "poisson", "mixture"];

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "uniform" => Some(Self::uniform()),
            "poisson" => Some(Self::poisson()),
            "mixture" => Some(Self::mixture()),
            "rotating" => Some(Self::rotating()),
            _ => None,
        }
    }

    /// Density on the plaque over transverse coordinate `t`.
    pub fn tau(&self, z: C, t: C) -> f64 {
        match &self.tau {
            TauSpec::Uniform => 1.0,
            TauSpec::Poisson { boundary_angle } => poisson(z, *boundary_angle),
            TauSpec::Mixture { angles, weights } => angles
                .iter()
                .zip(weights)
                .map(|(a, w)| w * poisson(z, *a))
                .sum(),
            TauSpec::Rotating { speed } => poisson(z, speed * t.re),
        }
    }

    pub fn log_tau(&self, z: C, t: C) -> f64 {
        self.tau(z, t).ln()
    }

    /// Complex derivative of log tau on the plaque.
    pub fn dz_log_tau(&self, z: C, t: C) -> C {
        match &self.tau {
            TauSpec::Uniform => C::new(0.0, 0.0),
            TauSpec::Poisson { boundary_angle } => dz_log_poisson(z, *boundary_angle),
            TauSpec::Mixture { angles, weights } => {
                let tau = self.tau(z, t);
                let mut acc = C::new(0.0, 0.0);
                for (a, w) in angles.iter().zip(weights) {
                    acc += w * poisson(z, *a) * dz_log_poisson(z, *a);
                }
                acc / tau
            }
            TauSpec::Rotating { speed } => dz_log_poisson(z, speed * t.re),
        }
    }

    /// Leafwise Poincare Laplacian of log tau: tau is harmonic, so
    /// `Delta_gP log tau = -|grad log tau|^2_gP = -(1-|z|^2)^2 |d_z log tau|^2`.
    pub fn laplace_gp_log_tau(&self, z: C, t: C) -> f64 {
        let g = self.dz_log_tau(z, t);
        let f = 1.0 - z.norm_sqr();
        -(f * f) * g.norm_sqr()
    }

    /// Harnack check over sampled pairs on sampled plaques: counts
    /// violations of `e^{-d_P} <= tau(z)/tau(w) <= e^{d_P}`.
    pub fn harnack_violations(&self, n_triples: usize, seed: u64) -> usize {
        let mut rng = path_rng(seed, 0);
        let mut violations = 0usize;
        for _ in 0..n_triples {
            let t = C::from_polar(rng.gen_range(0.0..0.95f64), rng.gen_range(0.0..TAU));
            let z = C::from_polar(rng.gen_range(0.0..0.995f64), rng.gen_range(0.0..TAU));
            let w = C::from_polar(rng.gen_range(0.0..0.995f64), rng.gen_range(0.0..TAU));
            let d = crate::hyperbolic::hyp_distance(
                &crate::hyperbolic::HypPoint::disc(z),
                &crate::hyperbolic::HypPoint::disc(w),
            )
            .expect("points inside the disc");
            let ratio = self.tau(z, t) / self.tau(w, t);
            if ratio > d.exp() * (1.0 + 1e-12) || ratio < (-d).exp() * (1.0 - 1e-12) {
                violations += 1;
            }
        }
        violations
    }

    /// Relative mean-value defect of tau on a plaque circle.
    pub fn mean_value_defect(&self, t: C, center: C, radius: f64) -> f64 {
        let n = 512;
        let mut acc = 0.0;
        for k in 0..n {
            let z = center + C::from_polar(radius, TAU * k as f64 / n as f64);
            acc += self.tau(z, t);
        }
        (acc / n as f64 - self.tau(center, t)).abs() / self.tau(center, t)
    }
}

// ---------------------------------------------------------------------------
// Cocycle integration
// ---------------------------------------------------------------------------

/// Closed-form local-model increment along a straight time segment.
pub fn local_increment(s: &LinearSingularity, form: Form, du: C) -> Result<f64, CocycleError> {
    match form {
        Form::EtaM => Ok(((s.a + s.b) * du).re),
        // The projection-pulled metric only sees the winding of the
        // boundary coordinate: phase-window transitions multiply
        // transversal offsets by e^{i b dphi / a}.
        Form::EtaMPr => Ok(-(s.b / s.a).im * (s.a * du).im),
        Form::GsLength => Ok(du.norm()),
        Form::Beta => Err(CocycleError::MissingContext(Form::Beta)),
    }
}

/// Integrate a form along a local-model polyline, splitting at the middle
/// segment boundary.
pub fn integrate_local(
    s: &LinearSingularity,
    form: Form,
    segments: &[C],
    path_id: u64,
) -> Result<CocycleSample, CocycleError> {
    let mid = segments.len() / 2;
    let mut first = 0.0;
    let mut second = 0.0;
    for (k, du) in segments.iter().enumerate() {
        let inc = local_increment(s, form, *du)?;
        if k < mid {
            first += inc;
        } else {
            second += inc;
        }
    }
    // Full value recomputed independently from the total displacement
    // (closed forms depend only on endpoints within the domain), except
    // for the length cocycle where the increments are the definition.
    let full = match form {
        Form::GsLength => segments.iter().map(|du| du.norm()).sum(),
        _ => {
            let total: C = segments.iter().sum();
            local_increment(s, form, total)?
        }
    };
    Ok(CocycleSample {
        path_id,
        seed: 0,
        horizon: segments.len() as f64,
        form,
        first_half: first,
        second_half: second,
        full,
    })
}

/// Synthetic-context integration: Brownian on one plaque; beta integrates
/// exactly as log tau differences, the length cocycle accumulates
/// hyperbolic step lengths.
pub fn integrate_synthetic(
    current: &SyntheticCurrent,
    t_slot: C,
    form: Form,
    horizon: f64,
    control: StepControl,
    seed: u64,
    path_id: u64,
) -> Result<CocycleSample, CocycleError> {
    if horizon < 0.0 {
        return Err(CocycleError::BadHorizon(horizon));
    }
    let half = horizon / 2.0;
    let rng = path_rng(seed, path_id);
    let mut w = DiscWalker::from_origin(control, rng);
    let mut gs_first = 0.0;
    let mut gs_second = 0.0;
    let mut prev = w.position();
    let mut z_mid = prev;
    while w.t < horizon - 1e-15 {
        let target = if w.t < half - 1e-15 { half } else { horizon };
        w.step(target - w.t);
        let z = w.position();
        let ell = crate::hyperbolic::hyp_distance(
            &crate::hyperbolic::HypPoint::disc(prev),
            &crate::hyperbolic::HypPoint::disc(z),
        )
        .unwrap_or(0.0);
        if w.t <= half + 1e-15 {
            gs_first += ell;
            z_mid = z;
        } else {
            gs_second += ell;
        }
        prev = z;
    }
    let z_end = w.position();
    let origin = C::new(0.0, 0.0);
    let (first, second, full) = match form {
        Form::Beta => (
            current.log_tau(z_mid, t_slot) - current.log_tau(origin, t_slot),
            current.log_tau(z_end, t_slot) - current.log_tau(z_mid, t_slot),
            current.log_tau(z_end, t_slot) - current.log_tau(origin, t_slot),
        ),
        // The product foliation has no normal-metric variation.
        Form::EtaM | Form::EtaMPr => (0.0, 0.0, 0.0),
        Form::GsLength => (gs_first, gs_second, gs_first + gs_second),
    };
    Ok(CocycleSample { path_id, seed, horizon, form, first_half: first, second_half: second, full })
}

/// Global-context integration: germ-derivative cocycle and traced length
/// along a walker path, split at the midpoint.
pub fn integrate_global(
    cov: &Covering,
    form: Form,
    horizon: f64,
    params: WalkParams,
    seed: u64,
    path_id: u64,
) -> Result<CocycleSample, CocycleError> {
    if horizon <= 0.0 {
        return Err(CocycleError::BadHorizon(horizon));
    }
    if form == Form::Beta {
        return Err(CocycleError::MissingContext(form));
    }
    let start = crate::tracker::default_start(cov);
    let rng = path_rng(seed, path_id);
    let mut w = GlobalWalker::new(cov, start, params, rng);
    w.run_to(params.burn_in, None)?;
    let seg1 = walk_trace(&mut w, horizon / 2.0)?;
    let seg2 = walk_trace(&mut w, horizon / 2.0)?;
    let (first, second, full) = match form {
        Form::GsLength => (seg1.gs_length, seg2.gs_length, seg1.gs_length + seg2.gs_length),
        Form::EtaMPr | Form::EtaM => {
            let g1 = germ_along(cov, &seg1)?;
            let g2 = germ_along(cov, &seg2)?;
            let joint = concat_traces(&seg1, &seg2);
            let gj = germ_along(cov, &joint)?;
            (
                g1.derivative_modulus.ln(),
                g2.derivative_modulus.ln(),
                gj.derivative_modulus.ln(),
            )
        }
        Form::Beta => unreachable!(),
    };
    Ok(CocycleSample { path_id, seed, horizon, form, first_half: first, second_half: second, full })
}

fn walk_trace(
    w: &mut GlobalWalker,
    duration: f64,
) -> Result<crate::tracker::LeafPath, TrackerError> {
    let mut trace = vec![crate::tracker::TracePoint {
        chart: w.state.chart,
        z: w.state.z,
        s: w.gs_length,
    }];
    let gs0 = w.gs_length;
    let t_target = w.t + duration;
    while w.t < t_target - 1e-12 {
        w.step(t_target - w.t)?;
        trace.push(crate::tracker::TracePoint {
            chart: w.state.chart,
            z: w.state.z,
            s: w.gs_length,
        });
    }
    Ok(crate::tracker::LeafPath {
        segments: Vec::new(),
        trace,
        gs_length: w.gs_length - gs0,
        integrator_error: 0.0,
    })
}

fn concat_traces(
    a: &crate::tracker::LeafPath,
    b: &crate::tracker::LeafPath,
) -> crate::tracker::LeafPath {
    let mut trace = a.trace.clone();
    trace.extend(b.trace.iter().skip(1).cloned());
    crate::tracker::LeafPath {
        segments: Vec::new(),
        trace,
        gs_length: a.gs_length + b.gs_length,
        integrator_error: a.integrator_error + b.integrator_error,
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Generic Monte Carlo estimator report.
#[derive(Clone, Debug, Serialize)]
pub struct EstimatorReport {
    pub estimate: f64,
    pub stderr: f64,
    pub n: usize,
    pub t: f64,
    pub seed: u64,
    /// Running means at up to ten checkpoints (convergence trace).
    pub convergence: Vec<f64>,
    pub notes: String,
}

pub(crate) fn report_from(values: &[f64], t: f64, seed: u64, notes: &str) -> EstimatorReport {
    let (estimate, stderr) = mean_stderr(values);
    let mut convergence = Vec::new();
    let k = (values.len() / 10).max(1);
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if (i + 1) % k == 0 {
            convergence.push(acc / (i + 1) as f64);
        }
    }
    EstimatorReport {
        estimate,
        stderr,
        n: values.len(),
        t,
        seed,
        convergence,
        notes: notes.to_string(),
    }
}

/// Lyapunov estimate along global Brownian paths: the mean rate of the
/// germ-derivative cocycle between projection-pulled sections. The
/// leafwise Poincare metric driving the clock is approximate, so the
/// report is a diagnostic; the analytic target -(d+2)/(d-1) is attached.
pub fn lyapunov_estimate(
    cov: &Covering,
    t: f64,
    n_paths: usize,
    params: WalkParams,
    seed: u64,
) -> Result<(EstimatorReport, f64), CocycleError> {
    if n_paths == 0 {
        return Err(CocycleError::NoPaths);
    }
    if t <= 0.0 {
        return Err(CocycleError::BadHorizon(t));
    }
    let rates: Result<Vec<f64>, CocycleError> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let start = crate::tracker::default_start(cov);
            let rng = path_rng(seed, i);
            let mut w = GlobalWalker::new(cov, start, params, rng);
            w.run_to(params.burn_in, None)?;
            let seg = walk_trace(&mut w, t)?;
            let germ = germ_along(cov, &seg)?;
            Ok(germ.derivative_modulus.ln() / t)
        })
        .collect();
    let rates = rates?;
    let d = cov.spec().degree as f64;
    let target = -(d + 2.0) / (d - 1.0);
    Ok((
        report_from(&rates, t, seed, "approximate leafwise Poincare metric; diagnostic only"),
        target,
    ))
}

/// Lyapunov of the synthetic product foliation: the normal direction is
/// metrically trivial, so every path contributes exactly zero.
pub fn lyapunov_synthetic(n_paths: usize, t: f64, seed: u64) -> EstimatorReport {
    let values = vec![0.0; n_paths.max(1)];
    report_from(&values, t, seed, "product foliation: eta_m vanishes identically")
}

/// Both sides of the averaged Dynkin identity for log tau along plaque
/// Brownian motion, with the calibration factor applied.
#[derive(Clone, Debug, Serialize)]
pub struct IdentityCheckReport {
    pub lhs: f64,
    pub rhs: f64,
    pub c: f64,
    pub diff: f64,
    pub diff_stderr: f64,
    pub pass: bool,
    pub n: usize,
    pub t: f64,
    pub seed: u64,
}

/// Verify `E[log tau(X_t) - log tau(x)] = c E[int_0^t Delta_gP log tau]`
/// on a synthetic current, with c from the Dynkin calibration.
pub fn cocycle_identity_check(
    current: &SyntheticCurrent,
    t: f64,
    n_paths: usize,
    c: f64,
    control: StepControl,
    seed: u64,
) -> Result<IdentityCheckReport, CocycleError> {
    if n_paths == 0 {
        return Err(CocycleError::NoPaths);
    }
    if t <= 0.0 {
        return Err(CocycleError::BadHorizon(t));
    }
    let t_slot = C::new(0.0, 0.0);
    let per_path: Vec<(f64, f64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let rng = path_rng(seed, i);
            let mut w = DiscWalker::from_origin(control, rng);
            let mut integral = 0.0;
            let mut prev_lap = current.laplace_gp_log_tau(w.position(), t_slot);
            while w.t < t - 1e-15 {
                let dt = w.step(t - w.t);
                let lap = current.laplace_gp_log_tau(w.position(), t_slot);
                integral += 0.5 * (prev_lap + lap) * dt;
                prev_lap = lap;
            }
            let y = current.log_tau(w.position(), t_slot)
                - current.log_tau(C::new(0.0, 0.0), t_slot);
            (y, integral)
        })
        .collect();
    let ys: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let zs: Vec<f64> = per_path.iter().map(|p| p.1).collect();
    let diffs: Vec<f64> = per_path.iter().map(|(y, z)| y - c * z).collect();
    let lhs = pairwise_sum(&ys) / n_paths as f64;
    let rhs = pairwise_sum(&zs) / n_paths as f64;
    let (diff, diff_stderr) = mean_stderr(&diffs);
    Ok(IdentityCheckReport {
        lhs,
        rhs,
        c,
        diff,
        diff_stderr,
        pass: diff.abs() <= (3.0 * diff_stderr).max(1e-12),
        n: n_paths,
        t,
        seed,
    })
}

/// Relative-entropy estimate via tau-weighted transition densities.
#[derive(Clone, Debug, Serialize)]
pub struct HrReport {
    /// Time-differenced estimate of h_R.
    pub estimate: f64,
    pub stderr: f64,
    /// Raw (undifferenced) functional at the horizon, for diagnostics.
    pub raw_full: f64,
    pub pass_nonnegative: bool,
    pub n: usize,
    pub t: f64,
    pub seed: u64,
}

/// Estimate `h_R = lim -(1/t) E[w log(p w)]` with `w = tau(X_t)/tau(x)`,
/// using the heat kernel as the density oracle, time-differenced over
/// [t/2, t]; asserts nonnegativity within 3 standard errors.
pub fn hr_check(
    current: &SyntheticCurrent,
    t: f64,
    n_paths: usize,
    control: StepControl,
    seed: u64,
) -> Result<HrReport, CocycleError> {
    if n_paths == 0 {
        return Err(CocycleError::NoPaths);
    }
    if t <= 0.0 {
        return Err(CocycleError::BadHorizon(t));
    }
    let kernel = HeatKernel::new();
    let t_slot = C::new(0.0, 0.0);
    let half = t / 2.0;
    let tau0 = current.tau(C::new(0.0, 0.0), t_slot);
    let per_path: Result<Vec<(f64, f64)>, CocycleError> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let rng = path_rng(seed, i);
            let mut w = DiscWalker::from_origin(control, rng);
            w.run_to(half)?;
            let (r_half, z_half) = (w.r, w.position());
            w.run_to(t)?;
            let (r_full, z_full) = (w.r, w.position());
            let w_half = current.tau(z_half, t_slot) / tau0;
            let w_full = current.tau(z_full, t_slot) / tau0;
            let s_half = -w_half * (kernel.log_density(half, r_half)? + w_half.ln());
            let s_full = -w_full * (kernel.log_density(t, r_full)? + w_full.ln());
            Ok((s_full, s_half))
        })
        .collect();
    let per_path = per_path?;
    let diffs: Vec<f64> = per_path.iter().map(|(f, h)| (f - h) / half).collect();
    let raws: Vec<f64> = per_path.iter().map(|(f, _)| f / t).collect();
    let (estimate, stderr) = mean_stderr(&diffs);
    let (raw_full, _) = mean_stderr(&raws);
    Ok(HrReport {
        estimate,
        stderr,
        raw_full,
        pass_nonnegative: estimate >= -3.0 * stderr,
        n: n_paths,
        t,
        seed,
    })
}

// ---------------------------------------------------------------------------
// Separated-set leaf entropy
// ---------------------------------------------------------------------------

/// Per-horizon data of the separated-set estimator.
#[derive(Clone, Debug, Serialize)]
pub struct SeparatedLevel {
    pub n: f64,
    pub samples: usize,
    pub net_cells: usize,
    /// Cells holding the top half of the empirical mass (literal count).
    pub halfmass_cells: usize,
    /// log of the undersampling-corrected half-mass cell count.
    pub log_count: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeparatedEntropyReport {
    pub rate: f64,
    pub rate_stderr: f64,
    pub separation: f64,
    pub levels: Vec<SeparatedLevel>,
    pub seed: u64,
}

/// Growth rate of separated endpoint positions on the hyperbolic plane.
///
/// A greedy C-net is built over the Brownian endpoints at each horizon;
/// the number of net cells holding the top half of the mass is counted
/// with an inverse-probability correction. A sampled cell's mass is the
/// larger of its empirical share beyond the discovering sample
/// (Good-Turing style) and the heat-kernel mass of a C/2-ball at its
/// center, so the count neither saturates at the sample size at large
/// times nor overcounts degenerate clouds. The fitted slope of the
/// log-count over the horizon estimates the leaf entropy.
pub fn hl_separated(
    horizons: &[f64],
    samples_at: &[usize],
    separation: f64,
    control: StepControl,
    seed: u64,
) -> Result<SeparatedEntropyReport, CocycleError> {
    if horizons.len() < 3 {
        return Err(CocycleError::TooFewHorizons(horizons.len()));
    }
    let kernel = HeatKernel::new();
    let cell_area = TAU * ((separation / 2.0).cosh() - 1.0);
    let mut levels = Vec::new();
    for (li, (&n, &n_samples)) in horizons.iter().zip(samples_at).enumerate() {
        if n_samples == 0 {
            return Err(CocycleError::NoPaths);
        }
        let endpoints: Vec<(f64, f64)> = (0..n_samples as u64)
            .into_par_iter()
            .map(|i| {
                let rng = path_rng(seed, ((li as u64) << 32) | i);
                let mut w = DiscWalker::from_origin(control, rng);
                w.run_to(n).expect("step budget");
                (w.r, w.theta)
            })
            .collect();
        levels.push(separated_level(&kernel, &endpoints, n, separation, cell_area));
    }
    let xs: Vec<f64> = levels.iter().map(|l| l.n).collect();
    let ys: Vec<f64> = levels.iter().map(|l| l.log_count).collect();
    let (rate, rate_stderr) = lsq_slope(&xs, &ys);
    Ok(SeparatedEntropyReport { rate, rate_stderr, separation, levels, seed })
}

/// Net plus corrected count for one endpoint cloud in geodesic polar
/// coordinates; exposed for oracle tests with synthetic endpoint sets.
pub fn separated_level(
    kernel: &HeatKernel,
    endpoints: &[(f64, f64)],
    n: f64,
    separation: f64,
    cell_area: f64,
) -> SeparatedLevel {
    let n_samples = endpoints.len();
    let dist = |a: &(f64, f64), b: &(f64, f64)| -> f64 {
        let c = a.0.cosh() * b.0.cosh() - a.0.sinh() * b.0.sinh() * (a.1 - b.1).cos();
        c.max(1.0).acosh()
    };
    // Greedy net in input order (deterministic).
    let mut centers: Vec<(f64, f64)> = Vec::new();
    let mut assignment = vec![0usize; n_samples];
    for (i, p) in endpoints.iter().enumerate() {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (ci, c) in centers.iter().enumerate() {
            let d = dist(p, c);
            if d < best_d {
                best_d = d;
                best = ci;
            }
        }
        if best_d > separation {
            centers.push(*p);
            assignment[i] = centers.len() - 1;
        } else {
            assignment[i] = best;
        }
    }
    let mut counts = vec![0usize; centers.len()];
    for &a in &assignment {
        counts[a] += 1;
    }
    // Per-cell mass model: kernel mass of a C/2 ball, floored by the
    // empirical share beyond the discovering sample.
    let mass: Vec<f64> = centers
        .iter()
        .zip(&counts)
        .map(|(c, &k)| {
            let kernel_mass = kernel
                .log_density(n, c.0)
                .map(|lp| (lp + cell_area.ln()).exp())
                .unwrap_or(0.0);
            let empirical = k.saturating_sub(1) as f64 / n_samples as f64;
            kernel_mass.max(empirical).max(1e-300)
        })
        .collect();
    // Cells sorted by empirical count (ties by modeled mass), cumulated to
    // half the samples.
    let mut order: Vec<usize> = (0..centers.len()).collect();
    order.sort_by(|&a, &b| {
        counts[b]
            .cmp(&counts[a])
            .then(mass[b].partial_cmp(&mass[a]).unwrap())
    });
    let mut cum = 0usize;
    let mut halfmass_cells = 0usize;
    let mut ipw = 0.0;
    for &j in &order {
        if cum * 2 >= n_samples {
            break;
        }
        cum += counts[j];
        halfmass_cells += 1;
        ipw += counts[j] as f64 / (n_samples as f64 * mass[j]);
    }
    SeparatedLevel {
        n,
        samples: n_samples,
        net_cells: centers.len(),
        halfmass_cells,
        log_count: ipw.max(1e-300).ln(),
    }
}

fn lsq_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let resid: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let fit = ybar + slope * (x - xbar);
            (y - fit) * (y - fit)
        })
        .sum();
    let se = if xs.len() > 2 { (resid / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    (slope, se)
}

// ---------------------------------------------------------------------------
// Integrability diagnostics
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct IntegrabilityReport {
    pub n_segments: usize,
    pub mean_rho: f64,
    pub mean_gs_length: f64,
    pub mean_q: f64,
    /// Relative fluctuation of the running mean of Q over the last half.
    pub q_running_fluctuation: f64,
    pub heavy_tail_flag: bool,
    /// Fitted constants of the rough bound
    /// `D_1^{g_s} <= c' rho exp(c D_1^{g_P})` and holdout violations.
    pub fit_c: f64,
    pub fit_c_prime: f64,
    pub holdout_violations: usize,
    pub seed: u64,
}

/// Global rho: logarithmic pole depth at the nearest singularity, floored
/// at 1 away from the singular set.
pub fn global_rho(cov: &Covering, chart: usize, z: (C, C)) -> f64 {
    let mut best = 1.0f64;
    for i in 0..cov.ctx.singularities.len() {
        if let Some(w) = cov.ctx.eigen_of(i, chart, z) {
            let m =
                (w.0.norm_sqr() + w.1.norm_sqr()) / (cov.sector_radius[i] * cov.sector_radius[i]);
            if m > 0.0 {
                best = best.max(-m.ln());
            }
        }
    }
    best.max(1.0)
}

/// Empirical integrability diagnostics over shifted unit segments:
/// Birkhoff means of rho, segment length and crossing count, and a
/// fit-then-verify check of the rough bound on held-out segments.
pub fn integrability_diag(
    cov: &Covering,
    horizon: f64,
    n_paths: usize,
    params: WalkParams,
    seed: u64,
) -> Result<IntegrabilityReport, CocycleError> {
    if n_paths == 0 {
        return Err(CocycleError::NoPaths);
    }
    let segs_per_path = horizon.max(1.0) as usize;
    let data: Result<Vec<Vec<(f64, f64, f64, f64)>>, CocycleError> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let start = crate::tracker::default_start(cov);
            let rng = path_rng(seed, i);
            let mut w = GlobalWalker::new(cov, start, params, rng);
            w.run_to(params.burn_in, None)?;
            let mut rows = Vec::with_capacity(segs_per_path);
            for _ in 0..segs_per_path {
                let rho0 = global_rho(cov, w.state.chart, w.state.z);
                let seg = w.unit_segment()?;
                let q = crossing_count(cov, &seg)? as f64;
                // Coarse-chord proxy of the Poincare length of the unit
                // segment: approximate density times g_s chord lengths at
                // a pinned resolution of 8 chords per unit time.
                let mut dp = 0.0;
                let stride = (seg.trace.len() / 8).max(1);
                let pts: Vec<_> = seg.trace.iter().step_by(stride).collect();
                for pair in pts.windows(2) {
                    let lam = crate::tracker::leaf_density(cov, pair[0].chart, pair[0].z);
                    dp += lam * (pair[1].s - pair[0].s).abs();
                }
                rows.push((rho0, seg.gs_length, q, dp));
            }
            Ok(rows)
        })
        .collect();
    let rows: Vec<(f64, f64, f64, f64)> = data?.into_iter().flatten().collect();
    let n = rows.len();
    let rhos: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let lens: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let qs: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let (mean_rho, _) = mean_stderr(&rhos);
    let (mean_gs, _) = mean_stderr(&lens);
    let (mean_q, _) = mean_stderr(&qs);
    let mut acc = 0.0;
    let mut running = Vec::with_capacity(n);
    for (i, q) in qs.iter().enumerate() {
        acc += q;
        running.push(acc / (i + 1) as f64);
    }
    let last_half = &running[n / 2..];
    let (lo, hi) = last_half
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let q_fluct = (hi - lo) / mean_q.max(1e-9);
    // Fit c on the first half (slope of log(D^{g_s}/rho) against the
    // Poincare-length proxy), c' as the max ratio with a 20% margin, then
    // verify on the second half.
    let half = n / 2;
    let xs: Vec<f64> = rows[..half].iter().map(|r| r.3).collect();
    let ys: Vec<f64> = rows[..half].iter().map(|r| (r.1.max(1e-12) / r.0).ln()).collect();
    let (c_fit, _) = lsq_slope(&xs, &ys);
    let c = c_fit.max(0.0);
    let mut c_prime: f64 = 0.0;
    for r in &rows[..half] {
        c_prime = c_prime.max(r.1 / (r.0 * (c * r.3).exp()));
    }
    c_prime *= 1.2;
    let violations = rows[half..]
        .iter()
        .filter(|r| r.1 > c_prime * r.0 * (c * r.3).exp())
        .count();
    Ok(IntegrabilityReport {
        n_segments: n,
        mean_rho,
        mean_gs_length: mean_gs,
        mean_q,
        q_running_fluctuation: q_fluct,
        heavy_tail_flag: q_fluct > 0.5,
        fit_c: c,
        fit_c_prime: c_prime,
        holdout_violations: violations,
        seed,
    })
}
