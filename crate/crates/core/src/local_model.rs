//! The linearized hyperbolic singularity `V = a x d/dx + b y d/dy`:
//! leaves through the unit torus, the angular domain of complex times,
//! the exit projection onto the boundary bidisc and the closed-form
//! holonomy cocycle.

use crate::hyperbolic;
use crate::numeric::path_rng;
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

type C = Complex64;

const TAU: f64 = 2.0 * std::f64::consts::PI;
const PI: f64 = std::f64::consts::PI;

#[derive(Error, Debug)]
pub enum LocalModelError {
    #[error("eigenvalues must have positive real part, got a={0}, b={1}")]
    BadEigenvalues(C, C),
    #[error("complex time {0} lies outside the closure of the angular domain")]
    OutsideAngularDomain(C),
    #[error("path leaves the closure of the angular domain at {0}")]
    PathExitsDomain(C),
    #[error("rho is undefined at the origin")]
    RhoAtOrigin,
    #[error("base point must lie on the unit torus, got moduli ({0}, {1})")]
    BaseOffTorus(f64, f64),
    #[error("too few deep samples ({0}); widen the depth range or the sector")]
    TooFewSamples(usize),
}

/// Linear model `a x d/dx + b y d/dy` with Re(a) > 0 and Re(b) > 0.
#[derive(Clone, Copy, Debug)]
pub struct LinearSingularity {
    pub a: C,
    pub b: C,
}

impl LinearSingularity {
    pub fn new(a: C, b: C) -> Result<Self, LocalModelError> {
        if a.re <= 0.0 || b.re <= 0.0 {
            return Err(LocalModelError::BadEigenvalues(a, b));
        }
        Ok(LinearSingularity { a, b })
    }

    pub fn hyperbolic(&self) -> bool {
        (self.a / self.b).im != 0.0
    }
}

/// The sector `A = { u : Re(a u) < 0 and Re(b u) < 0 }` of complex times
/// whose leaf point stays in the unit bidisc. Stored as the arc of
/// directions `arg u` in `(start, start + opening)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AngularDomain {
    /// Argument of the first boundary ray.
    pub start: f64,
    /// Opening angle, in (0, pi].
    pub opening: f64,
}

impl AngularDomain {
    /// Angular offset of `arg u` past `start`, reduced to `[0, 2 pi)`.
    fn offset(&self, u: C) -> f64 {
        let mut d = (u.arg() - self.start) % TAU;
        if d < 0.0 {
            d += TAU;
        }
        if d >= TAU - 1e-15 {
            d = 0.0;
        }
        d
    }

    pub fn contains(&self, u: C) -> bool {
        if u.norm() == 0.0 {
            return false;
        }
        let d = self.offset(u);
        d > 0.0 && d < self.opening
    }

    pub fn contains_closure(&self, u: C, tol: f64) -> bool {
        if u.norm() == 0.0 {
            return true;
        }
        let d = self.offset(u);
        let slack = tol / u.norm().max(tol);
        d <= self.opening + slack || d >= TAU - slack
    }

    /// Euclidean distance from `u` to the two boundary rays.
    pub fn dist_to_boundary(&self, u: C) -> f64 {
        let ray = |psi: f64| -> f64 {
            let w = u * C::from_polar(1.0, -psi);
            if w.re >= 0.0 {
                w.im.abs()
            } else {
                u.norm()
            }
        };
        ray(self.start).min(ray(self.start + self.opening))
    }

    /// Direction of the sector bisector.
    pub fn bisector(&self) -> f64 {
        self.start + 0.5 * self.opening
    }

    /// Point at angular fraction `s` in (0,1) of the opening, modulus `r`.
    pub fn point_at(&self, s: f64, r: f64) -> C {
        C::from_polar(r, self.start + s * self.opening)
    }
}

/// Leaf coordinate: base point on the unit torus plus a complex time in A.
#[derive(Clone, Copy, Debug)]
pub struct LeafCoord {
    pub x0: C,
    pub y0: C,
    pub u: C,
}

impl LeafCoord {
    pub fn new(x0: C, y0: C, u: C) -> Result<Self, LocalModelError> {
        let (mx, my) = (x0.norm(), y0.norm());
        if (mx - 1.0).abs() > 1e-9 || (my - 1.0).abs() > 1e-9 {
            return Err(LocalModelError::BaseOffTorus(mx, my));
        }
        Ok(LeafCoord { x0, y0, u })
    }
}

/// The angular domain of a linear singularity. Independent of the base
/// point; the arc is the intersection of the two half-planes
/// `Re(a u) < 0` and `Re(b u) < 0`.
pub fn angular_domain(s: &LinearSingularity) -> AngularDomain {
    let (pa, pb) = (s.a.arg(), s.b.arg());
    let (lo, hi) = (pa.min(pb), pa.max(pb));
    AngularDomain {
        start: PI / 2.0 - lo,
        opening: PI - (hi - lo),
    }
}

/// The bidisc point `(x0 e^{a u}, y0 e^{b u})` of the model leaf.
pub fn leaf_point(s: &LinearSingularity, c: &LeafCoord) -> Result<(C, C), LocalModelError> {
    let dom = angular_domain(s);
    if !dom.contains_closure(c.u, 1e-9) {
        return Err(LocalModelError::OutsideAngularDomain(c.u));
    }
    Ok(((s.a * c.u).exp() * c.x0, (s.b * c.u).exp() * c.y0))
}

/// `rho(x, y) = -log(|x|^2 + |y|^2)`.
pub fn rho(point: (C, C)) -> Result<f64, LocalModelError> {
    let m = point.0.norm_sqr() + point.1.norm_sqr();
    if m == 0.0 {
        return Err(LocalModelError::RhoAtOrigin);
    }
    Ok(-m.ln())
}

/// `rho` at the model leaf point of time `u`, computed in log form so that
/// points deep in the angular domain (where `|x|, |y|` underflow) stay
/// finite: `-logsumexp(2 Re(a u), 2 Re(b u))`.
pub fn rho_of_time(s: &LinearSingularity, u: C) -> f64 {
    let ea = 2.0 * (s.a * u).re;
    let eb = 2.0 * (s.b * u).re;
    let m = ea.max(eb);
    -(m + ((ea - m).exp() + (eb - m).exp()).ln())
}

/// Exit data of the real-flow projection: the exit time `v0 + i Im(u)`,
/// the straight path to it, and the exit point on the boundary bidisc.
#[derive(Clone, Debug)]
pub struct ExitProjection {
    pub v0: f64,
    pub exit_time: C,
    pub pi_point: (C, C),
}

impl ExitProjection {
    /// The leafwise path `Lambda(zeta) = Gamma((1-zeta) u + zeta (v0 + i w))`.
    pub fn path_point(&self, s: &LinearSingularity, c: &LeafCoord, zeta: f64) -> (C, C) {
        let u = c.u * (1.0 - zeta) + self.exit_time * zeta;
        ((s.a * u).exp() * c.x0, (s.b * u).exp() * c.y0)
    }
}

/// First exit point in the boundary of the bidisc of the real part of V,
/// starting from the leaf point of `c`. The sup-modulus is strictly
/// increasing along the real flow direction, so the exit time on the line
/// `v + i Im(u)` solves per coordinate and takes the smaller root.
pub fn exit_projection(
    s: &LinearSingularity,
    c: &LeafCoord,
) -> Result<ExitProjection, LocalModelError> {
    let dom = angular_domain(s);
    if !dom.contains_closure(c.u, 1e-9) {
        return Err(LocalModelError::OutsideAngularDomain(c.u));
    }
    let w = c.u.im;
    // Re(a (v + i w)) = 0  =>  v = Im(a) w / Re(a).
    let va = s.a.im * w / s.a.re;
    let vb = s.b.im * w / s.b.re;
    let v0 = va.min(vb);
    let exit_time = C::new(v0, w);
    let pi_point = ((s.a * exit_time).exp() * c.x0, (s.b * exit_time).exp() * c.y0);
    Ok(ExitProjection { v0, exit_time, pi_point })
}

/// Log of the holonomy derivative in the metric `m = |a x dy - b y dx|`
/// along the leafwise straight path from `u0` to `u1`:
/// `Re((a + b)(u1 - u0))`, the path integral of `Re((a+b)/a dx/x)` on the
/// leaf where `dx/x = a du`.
pub fn holonomy_log_derivative(
    s: &LinearSingularity,
    u0: C,
    u1: C,
) -> Result<f64, LocalModelError> {
    let dom = angular_domain(s);
    for k in 0..=32 {
        let u = u0 + (u1 - u0) * (k as f64 / 32.0);
        if !dom.contains_closure(u, 1e-9) {
            return Err(LocalModelError::PathExitsDomain(u));
        }
    }
    Ok(((s.a + s.b) * (u1 - u0)).re)
}

/// Complex transversal multiplier of the holonomy along `u -> u + du`:
/// the return map between `{x = const}` transversals scales y-offsets by
/// `e^{b du}`. Used by the finite-difference oracle.
pub fn holonomy_multiplier(s: &LinearSingularity, du: C) -> C {
    (s.b * du).exp()
}

// ---------------------------------------------------------------------------
// Metric-comparison report
// ---------------------------------------------------------------------------

/// Min/max/mean summary of a sampled ratio.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RatioStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl RatioStats {
    fn from(xs: &[f64]) -> Self {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &x in xs {
            min = min.min(x);
            max = max.max(x);
            sum += x;
        }
        RatioStats { min, max, mean: sum / xs.len() as f64 }
    }
}

/// Sector metric comparisons over points deep in A:
/// (i) Poincare depth vs log Euclidean depth,
/// (ii) rho at the leaf point vs Euclidean depth,
/// (iii) sector Poincare density (leaf gauge, g_s-unit speed |du|) vs 1/rho.
#[derive(Clone, Debug, Serialize)]
pub struct SectorMetricReport {
    pub n_samples: usize,
    pub depth_threshold: f64,
    pub ratio_poincare_vs_log_depth: RatioStats,
    pub ratio_rho_vs_depth: RatioStats,
    pub ratio_density_vs_inv_rho: RatioStats,
}

/// Poincare density of the sector at `u` (curvature -1), via the
/// half-plane uniformization `w = u^{pi/theta}` after rotating the sector
/// to `arg in (0, theta)`.
pub fn sector_density(dom: &AngularDomain, u: C) -> f64 {
    let theta = dom.opening;
    let p = PI / theta;
    let rotated = u * C::from_polar(1.0, -dom.start);
    let r = rotated.norm();
    let phi = rotated.arg().rem_euclid(TAU);
    let im_w = r.powf(p) * (p * phi).sin();
    p * r.powf(p - 1.0) / im_w
}

/// Poincare distance inside the sector from `u` to the unit-depth locus
/// `{ d_e(., boundary) = 1 }`, computed in the uniformized half-plane by
/// minimizing over a discretization of the image curve. This is the depth
/// functional the local comparison lemmas measure against `log d_e`.
pub fn sector_depth_poincare(dom: &AngularDomain, u: C) -> f64 {
    let theta = dom.opening;
    let p = PI / theta;
    let rotated = u * C::from_polar(1.0, -dom.start);
    let to_h = |z: C| -> C {
        let r = z.norm();
        let phi = z.arg().rem_euclid(TAU);
        C::from_polar(r.powf(p), p * phi)
    };
    let w0 = to_h(rotated);
    // Dividing by |w0| is a hyperbolic isometry of the half-plane; it keeps
    // everything in floating range for very deep points.
    let scale = w0.norm();
    let w0 = w0 / scale;
    let d_h = |w1: C, w2: C| -> f64 {
        2.0 * ((w1 - w2).norm() / (2.0 * (w1.im * w2.im).sqrt())).asinh()
    };
    // The unit-depth curve has two wings hugging the rays (radius sin(delta)
    // = 1) and an inner arc near the vertex. Sample wings in log-radius.
    let mut best = f64::INFINITY;
    let r_hi = (rotated.norm() * 400.0).max(50.0);
    let n = 600;
    for k in 0..=n {
        let radius = (r_hi.ln() * (k as f64 / n as f64)).exp();
        if radius < 1.0 {
            continue;
        }
        let delta = (1.0 / radius).min(1.0).asin();
        for phi in [delta, theta - delta] {
            if !(0.0..=theta).contains(&phi) {
                continue;
            }
            let w = to_h(C::from_polar(radius, phi)) / scale;
            if w.im > 0.0 {
                best = best.min(d_h(w0, w));
            }
        }
    }
    // Inner arc where both rays are at distance >= 1.
    let m = 200;
    for k in 1..m {
        let phi = theta * k as f64 / m as f64;
        let s = phi.sin().min((theta - phi).sin());
        if s <= 1e-12 {
            continue;
        }
        let radius = 1.0 / s;
        if radius > r_hi {
            continue;
        }
        let w = to_h(C::from_polar(radius, phi)) / scale;
        if w.im > 0.0 {
            best = best.min(d_h(w0, w));
        }
    }
    best
}

/// Sample points deep in the angular domain and report the three metric
/// comparison ratios.
pub fn sector_metric_checks(
    s: &LinearSingularity,
    n_samples: usize,
    depth_threshold: f64,
    seed: u64,
) -> Result<SectorMetricReport, LocalModelError> {
    let dom = angular_domain(s);
    let mut rng = path_rng(seed, 0);
    let mut r1 = Vec::new();
    let mut r2 = Vec::new();
    let mut r3 = Vec::new();
    let mut attempts = 0usize;
    while r1.len() < n_samples && attempts < 100 * n_samples {
        attempts += 1;
        // Direction in the middle 80% of the opening; log-uniform target
        // depth from the threshold up to e^4 times deeper.
        let frac = rng.gen_range(0.1..0.9);
        let depth_target = depth_threshold * rng.gen_range(0.0f64..4.0).exp();
        let dir = dom.point_at(frac, 1.0);
        let unit_depth = dom.dist_to_boundary(dir);
        if unit_depth <= 0.0 {
            continue;
        }
        let u = dir * (depth_target / unit_depth);
        let d_e = dom.dist_to_boundary(u);
        if d_e < depth_threshold {
            continue;
        }
        let rho_q = rho_of_time(s, u);
        let d_p = sector_depth_poincare(&dom, u);
        r1.push(d_p / d_e.ln());
        r2.push(rho_q / d_e);
        r3.push(sector_density(&dom, u) * rho_q);
    }
    if r1.len() < 10 {
        return Err(LocalModelError::TooFewSamples(r1.len()));
    }
    Ok(SectorMetricReport {
        n_samples: r1.len(),
        depth_threshold,
        ratio_poincare_vs_log_depth: RatioStats::from(&r1),
        ratio_rho_vs_depth: RatioStats::from(&r2),
        ratio_density_vs_inv_rho: RatioStats::from(&r3),
    })
}

/// The sector of opening pi is the half-plane; densities must agree there.
pub fn halfplane_consistency(u: C) -> (f64, f64) {
    let dom = AngularDomain { start: 0.0, opening: PI };
    let sector = sector_density(&dom, u);
    let half = hyperbolic::halfplane_density(u);
    (sector, half)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    fn model(a: (f64, f64), b: (f64, f64)) -> LinearSingularity {
        LinearSingularity::new(c(a.0, a.1), c(b.0, b.1)).unwrap()
    }

    #[test]
    fn angular_domain_of_equal_eigenvalues_is_left_halfplane() {
        let s = model((1.0, 0.0), (1.0, 0.0));
        let dom = angular_domain(&s);
        assert_abs_diff_eq!(dom.opening, PI, epsilon = 1e-12);
        assert_abs_diff_eq!(dom.start, PI / 2.0, epsilon = 1e-12);
        assert!(dom.contains(c(-1.0, 0.3)));
        assert!(!dom.contains(c(1.0, 0.3)));
    }

    #[test]
    fn angular_domain_of_1_and_1_plus_i() {
        // Intersection of Re(u) < 0 and Re((1+i)u) < 0:
        // arg u in (pi/2, 5pi/4), opening 3pi/4.
        let s = model((1.0, 0.0), (1.0, 1.0));
        let dom = angular_domain(&s);
        assert_abs_diff_eq!(dom.opening, 3.0 * PI / 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dom.start, PI / 2.0, epsilon = 1e-12);
        for frac in [0.05, 0.5, 0.95] {
            let u = dom.point_at(frac, 1.0);
            assert!((s.a * u).re < 0.0 && (s.b * u).re < 0.0);
        }
        let just_outside = C::from_polar(1.0, dom.start - 0.01);
        assert!((s.a * just_outside).re >= 0.0 || (s.b * just_outside).re >= 0.0);
    }

    #[test]
    fn jouanolou_domain_is_symmetric_about_negative_reals() {
        let s3 = 3f64.sqrt();
        let s = model((2.0, -s3), (2.0, s3));
        let dom = angular_domain(&s);
        assert!(dom.opening < PI);
        assert_abs_diff_eq!(dom.bisector(), PI, epsilon = 1e-12);
        assert!(dom.contains(c(-1.0, 0.0)));
    }

    #[test]
    fn angular_domain_is_scaling_invariant() {
        let s = model((1.0, 0.5), (2.0, -0.3));
        let scaled = model((3.0, 1.5), (6.0, -0.9));
        let (d1, d2) = (angular_domain(&s), angular_domain(&scaled));
        assert_abs_diff_eq!(d1.start, d2.start, epsilon = 1e-12);
        assert_abs_diff_eq!(d1.opening, d2.opening, epsilon = 1e-12);
    }

    #[test]
    fn leaf_point_closed_form() {
        let s = model((1.0, 0.0), (1.0, 1.0));
        let coord = LeafCoord::new(c(1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0)).unwrap();
        let (x, y) = leaf_point(&s, &coord).unwrap();
        assert!((x - c((-1.0f64).exp(), 0.0)).norm() < 1e-15);
        let want = (c(1.0, 1.0) * c(-1.0, 0.0)).exp(); // e^{-1-i}
        assert!((y - want).norm() < 1e-15);

        // u = 0 keeps the torus base on the bidisc boundary.
        let coord = LeafCoord::new(c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)).unwrap();
        let (x, y) = leaf_point(&s, &coord).unwrap();
        assert!((x - c(1.0, 0.0)).norm() < 1e-15 && (y - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn leaf_point_moduli_identity_on_random_samples() {
        let s = model((1.3, -0.4), (0.8, 0.9));
        let dom = angular_domain(&s);
        let mut rng = path_rng(42, 0);
        for _ in 0..200 {
            let u = dom.point_at(rng.gen_range(0.01..0.99), rng.gen_range(0.1..8.0));
            let x0 = C::from_polar(1.0, rng.gen_range(0.0..TAU));
            let y0 = C::from_polar(1.0, rng.gen_range(0.0..TAU));
            let coord = LeafCoord::new(x0, y0, u).unwrap();
            let (x, y) = leaf_point(&s, &coord).unwrap();
            assert_abs_diff_eq!(x.norm().ln(), (s.a * u).re, epsilon = 1e-10);
            assert_abs_diff_eq!(y.norm().ln(), (s.b * u).re, epsilon = 1e-10);
        }
    }

    #[test]
    fn rho_values() {
        assert_abs_diff_eq!(rho((c(1.0, 0.0), c(0.0, 0.0))).unwrap(), 0.0);
        assert_abs_diff_eq!(
            rho((c((-1.0f64).exp(), 0.0), c(0.0, 0.0))).unwrap(),
            2.0,
            epsilon = 1e-14
        );
        assert!(matches!(
            rho((c(0.0, 0.0), c(0.0, 0.0))),
            Err(LocalModelError::RhoAtOrigin)
        ));
    }

    #[test]
    fn exit_projection_lands_on_boundary() {
        // (a,b) = (1,1), base (1,1), u = -2: exit at v0 = 0, point (1,1).
        let s = model((1.0, 0.0), (1.0, 0.0));
        let coord = LeafCoord::new(c(1.0, 0.0), c(1.0, 0.0), c(-2.0, 0.0)).unwrap();
        let exit = exit_projection(&s, &coord).unwrap();
        assert_abs_diff_eq!(exit.v0, 0.0, epsilon = 1e-14);
        assert!((exit.pi_point.0 - c(1.0, 0.0)).norm() < 1e-14);
        assert!((exit.pi_point.1 - c(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn exit_projection_sup_modulus_is_monotone_and_exact() {
        let s = model((1.0, 0.2), (1.4, -0.8));
        let dom = angular_domain(&s);
        let mut rng = path_rng(101, 0);
        for _ in 0..100 {
            let u = dom.point_at(rng.gen_range(0.05..0.95), rng.gen_range(0.2..5.0));
            let coord = LeafCoord::new(c(1.0, 0.0), c(1.0, 0.0), u).unwrap();
            let exit = exit_projection(&s, &coord).unwrap();
            let sup = |p: (C, C)| p.0.norm().max(p.1.norm());
            assert_abs_diff_eq!(sup(exit.pi_point), 1.0, epsilon = 1e-12);
            let mut prev = 0.0;
            for k in 0..=20 {
                let m = sup(exit.path_point(&s, &coord, k as f64 / 20.0));
                assert!(m >= prev - 1e-12, "sup-modulus must increase along Lambda");
                prev = m;
            }
            // A point already on the boundary exits immediately.
            let on_boundary = LeafCoord::new(c(1.0, 0.0), c(1.0, 0.0), exit.exit_time).unwrap();
            let again = exit_projection(&s, &on_boundary).unwrap();
            assert_abs_diff_eq!(again.v0, exit.v0, epsilon = 1e-12);
        }
    }

    #[test]
    fn holonomy_log_derivative_closed_loop() {
        // Loop u -> u + 2 pi i / a around the x-separatrix with
        // (a,b) = (1, 1+i): Re((a+b) 2 pi i / a) = -2 pi.
        let s = model((1.0, 0.0), (1.0, 1.0));
        let u0 = c(-8.0, 0.0);
        let du = c(0.0, TAU) / s.a;
        let val = holonomy_log_derivative(&s, u0, u0 + du).unwrap();
        assert_abs_diff_eq!(val, -TAU, epsilon = 1e-12);
        let mult = holonomy_multiplier(&s, du);
        assert_abs_diff_eq!(mult.norm(), (-TAU).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(mult.norm(), 1.8674e-3, epsilon = 1e-7);
    }

    #[test]
    fn holonomy_log_derivative_is_additive_and_zero_on_constants() {
        let s = model((1.2, -0.7), (0.9, 1.1));
        let dom = angular_domain(&s);
        let u0 = dom.point_at(0.3, 3.0);
        let u1 = dom.point_at(0.5, 5.0);
        let u2 = dom.point_at(0.7, 2.0);
        let v01 = holonomy_log_derivative(&s, u0, u1).unwrap();
        let v12 = holonomy_log_derivative(&s, u1, u2).unwrap();
        let v02 = holonomy_log_derivative(&s, u0, u2).unwrap();
        assert_abs_diff_eq!(v01 + v12, v02, epsilon = 1e-12);
        assert_abs_diff_eq!(holonomy_log_derivative(&s, u0, u0).unwrap(), 0.0);
    }

    #[test]
    fn holonomy_loop_matches_two_leaf_finite_difference() {
        // Finite-difference oracle: displace a second leaf by delta on the
        // transversal {x = x(u0)} and transport both along the loop; the
        // offset ratio is the closed-form multiplier.
        let s = model((1.0, 0.0), (1.0, 1.0));
        let u0 = c(-6.0, 0.0);
        let du = c(0.0, TAU) / s.a;
        let x0 = c(1.0, 0.0);
        let y0 = c(1.0, 0.0);
        let base = leaf_point(&s, &LeafCoord::new(x0, y0, u0).unwrap()).unwrap();
        let delta = c(1e-6, 0.0);
        let y_near_start = base.1 + delta;
        // Transport both leaves by the same time increment.
        let end_base_y = (s.b * du).exp() * base.1;
        let end_near_y = (s.b * du).exp() * y_near_start;
        let ratio = (end_near_y - end_base_y) / delta;
        let analytic = holonomy_multiplier(&s, du);
        assert!(
            (ratio - analytic).norm() / analytic.norm() < 1e-6,
            "finite-difference {ratio} vs analytic {analytic}"
        );
        let log_d = holonomy_log_derivative(&s, u0, u0 + du).unwrap();
        assert_abs_diff_eq!(ratio.norm().ln(), log_d, epsilon = 1e-6);
    }

    #[test]
    fn sector_metric_ratios_for_1_1_plus_i() {
        let s = model((1.0, 0.0), (1.0, 1.0));
        let report = sector_metric_checks(&s, 150, (5.0f64).exp(), 7).unwrap();
        let r1 = report.ratio_poincare_vs_log_depth;
        assert!(
            r1.min > 0.9 && r1.max < 1.1,
            "Poincare depth vs log depth out of band: {r1:?}"
        );
        let r2 = report.ratio_rho_vs_depth;
        assert!(
            r2.min > 0.25 && r2.max < 4.0,
            "rho vs depth ratio out of [1/4, 4]: {r2:?}"
        );
        let r3 = report.ratio_density_vs_inv_rho;
        assert!(
            r3.min > 0.1 && r3.max < 10.0,
            "density vs 1/rho unbounded: {r3:?}"
        );
    }

    #[test]
    fn sector_opening_pi_matches_halfplane_density() {
        let u = c(0.3, 1.7);
        let (sector, half) = halfplane_consistency(u);
        assert_abs_diff_eq!(sector, half, epsilon = 1e-12);
    }

    #[test]
    fn path_exiting_domain_is_an_error() {
        let s = model((1.0, 0.0), (1.0, 1.0));
        assert!(matches!(
            holonomy_log_derivative(&s, c(-1.0, 0.0), c(1.0, 0.0)),
            Err(LocalModelError::PathExitsDomain(_))
        ));
    }
}
