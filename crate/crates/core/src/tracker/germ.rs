//! Holonomy germs along traced paths: compositions of per-box transition
//! maps between transversal sections, with a certified radius maintained
//! by the Koebe / Cauchy shrinking scheme, and the derivative as the
//! product of transition derivatives.

use super::covering::{itinerary, Covering};
use super::integrator::{shoot_to_section, LeafPath};
use super::TrackerError;
use num_complex::Complex64;
use serde::Serialize;

type C = Complex64;

/// One crossing of the composed germ: evaluation data for re-applying the
/// germ at nearby transversal points.
#[derive(Clone, Debug)]
pub struct Crossing {
    pub from_box: usize,
    pub to_box: usize,
    /// Transversal coordinate of the base path on the source section.
    pub w_base: C,
    /// Transversal coordinate on the target section.
    pub w_next: C,
    /// Flow time from the source section point to the target section.
    pub u_guess: C,
    /// Transition derivative at the base coordinate.
    pub derivative: C,
}

/// Composed holonomy germ between the first and last box sections of an
/// itinerary.
#[derive(Clone, Debug, Serialize)]
pub struct HolonomyGerm {
    pub source_box: usize,
    pub target_box: usize,
    /// Transversal coordinate of the path start on the source section.
    #[serde(skip)]
    pub value_start: C,
    /// Transversal coordinate of the path end on the target section.
    #[serde(skip)]
    pub value_end: C,
    /// Derivative of the composed germ at the base point.
    #[serde(skip)]
    pub derivative: C,
    pub derivative_modulus: f64,
    /// Certified radius on the source transversal.
    pub guaranteed_radius: f64,
    pub crossings: usize,
    #[serde(skip)]
    pub chain: Vec<Crossing>,
}

/// Koebe distortion radius: a univalent map on a disc of radius R has
/// `|f'(t)/f'(0)|` within `e^{+-eps}` for `|t| <= r_eps(eps) R`.
/// From `(1+s)/(1-s)^3 = e^eps`, solved by bisection.
pub fn koebe_radius(eps: f64) -> f64 {
    let f = |s: f64| (1.0 + s) / (1.0 - s).powi(3);
    let target = eps.exp();
    let (mut lo, mut hi) = (0.0, 0.5);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Transition map of a single crossing: transversal coordinate `w` on the
/// source section, shot to the target section.
fn transition_eval(
    cov: &Covering,
    from_box: usize,
    to_box: usize,
    w: C,
    u_guess: C,
) -> Result<C, TrackerError> {
    let p = cov.section_point(from_box, w)?;
    let sec = cov.section(to_box);
    let (landed, _) = shoot_to_section(
        &cov.ctx,
        p,
        sec.chart,
        &sec.ell,
        sec.gauge,
        u_guess,
        cov.boxes[to_box].u_reach + cov.boxes[from_box].u_reach,
        1e-12,
    )?;
    Ok(sec.tcoord.eval(landed.z))
}

/// Holomorphic derivative of the transition by the four-point stencil
/// (averaging the real and imaginary central differences cancels the
/// second-order term of each).
fn transition_derivative_at(
    cov: &Covering,
    from_box: usize,
    to_box: usize,
    w: C,
    u_guess: C,
    scale: f64,
) -> Result<C, TrackerError> {
    let d = (scale * 1e-3).max(1e-7);
    let re = (transition_eval(cov, from_box, to_box, w + C::new(d, 0.0), u_guess)?
        - transition_eval(cov, from_box, to_box, w - C::new(d, 0.0), u_guess)?)
        / C::new(2.0 * d, 0.0);
    let im = (transition_eval(cov, from_box, to_box, w + C::new(0.0, d), u_guess)?
        - transition_eval(cov, from_box, to_box, w - C::new(0.0, d), u_guess)?)
        / C::new(0.0, 2.0 * d);
    Ok((re + im) / 2.0)
}

/// Distortion tolerance used by the certified-radius recursion.
pub const GERM_EPS: f64 = 0.1;

/// Compose the holonomy germ along the traced path.
///
/// The itinerary is segmented minimally; at each crossing the composed
/// map's image disc must fit inside the Koebe core `delta0 * r_eps` of
/// the next transition's domain. The certified radius shrinks exactly
/// when that constraint binds; the running sup-bound on the composed
/// derivative is the base-point derivative inflated by the accumulated
/// Koebe factor, capped by the Cauchy bound `e^theta` per crossing.
pub fn germ_along(cov: &Covering, path: &LeafPath) -> Result<HolonomyGerm, TrackerError> {
    let segs = itinerary(cov, path)?;
    let first_box = segs[0].0;
    let start = &path.trace[0];
    let (w0, _) = cov.first_integral(first_box, start.chart, start.z)?;

    let r_eps = koebe_radius(GERM_EPS);
    let delta0 = cov.constants.delta0.max(1e-9);
    let theta = cov.constants.theta;
    let cauchy = theta.exp();
    let radius_floor = 1e-12;

    // Certified radius on the source transversal and running bounds.
    let mut radius = cov.boxes[first_box].trans_radius * 0.5;
    let mut deriv = C::new(1.0, 0.0);
    let mut eps_sum = 0.0f64;
    let mut w_cur = w0;
    let mut chain = Vec::new();

    for win in segs.windows(2) {
        let (from_box, _, cross_idx) = win[0];
        let (to_box, _, _) = win[1];
        let q = &path.trace[cross_idx];
        // Flow-time guess: base-point times to both sections.
        let (_, u_from) = cov.first_integral(from_box, q.chart, q.z)?;
        let (_, u_to) = cov.first_integral(to_box, q.chart, q.z)?;
        let u_guess = u_to - u_from;

        let w_next = transition_eval(cov, from_box, to_box, w_cur, u_guess)?;
        let d = transition_derivative_at(
            cov,
            from_box,
            to_box,
            w_cur,
            u_guess,
            cov.boxes[from_box].trans_radius,
        )?;

        // Certified-radius bookkeeping. Image radius bound of the composed
        // germ on D(radius): |deriv| e^{eps_sum} radius, required to fit in
        // the Koebe core of the next domain and in the Cauchy half-disc.
        let sup_bound = (deriv.norm() * eps_sum.exp()).min(cauchy_power(cauchy, chain.len()));
        let img = sup_bound * radius;
        let allowed = delta0 * r_eps.min(0.5);
        if img > allowed {
            radius *= allowed / img;
            if radius < radius_floor {
                return Err(TrackerError::RadiusCollapse {
                    step: chain.len(),
                    floor: radius_floor,
                });
            }
        }
        eps_sum += GERM_EPS;

        chain.push(Crossing {
            from_box,
            to_box,
            w_base: w_cur,
            w_next,
            u_guess,
            derivative: d,
        });
        deriv *= d;
        w_cur = w_next;
    }

    let last_box = segs.last().expect("nonempty itinerary").0;
    Ok(HolonomyGerm {
        source_box: first_box,
        target_box: last_box,
        value_start: w0,
        value_end: w_cur,
        derivative: deriv,
        derivative_modulus: deriv.norm(),
        guaranteed_radius: radius,
        crossings: chain.len(),
        chain,
    })
}

fn cauchy_power(cauchy: f64, n: usize) -> f64 {
    // e^{theta n}, saturating to avoid overflow on long chains.
    (cauchy.ln() * n.min(600) as f64).exp()
}

/// Apply the composed germ to a transversal offset: re-shoot every
/// crossing starting from `value_start + dw` on the source section.
pub fn germ_apply(cov: &Covering, germ: &HolonomyGerm, dw: C) -> Result<C, TrackerError> {
    let mut w = germ.value_start + dw;
    for cr in &germ.chain {
        w = transition_eval(cov, cr.from_box, cr.to_box, w, cr.u_guess)?;
    }
    Ok(w)
}

/// Evaluate the crossing chain at an arbitrary source coordinate,
/// returning the final coordinate and the derivative product along the
/// orbit (stencil-differenced per crossing).
fn chain_eval(
    cov: &Covering,
    chain: &[Crossing],
    w0: C,
    scale: f64,
) -> Result<(C, C), TrackerError> {
    let mut w = w0;
    let mut deriv = C::new(1.0, 0.0);
    for cr in chain {
        let d = transition_derivative_at(cov, cr.from_box, cr.to_box, w, cr.u_guess, scale)?;
        let next = transition_eval(cov, cr.from_box, cr.to_box, w, cr.u_guess)?;
        deriv *= d;
        w = next;
    }
    Ok((w, deriv))
}

/// Multiplier of a closed leafwise loop: the derivative of the return map
/// at its fixed point on the source transversal.
///
/// The base path rides a leaf near the separatrix, but the invariant
/// curve itself is curved in eigen coordinates, so the fixed point sits
/// at a distance O(radius^2) from the coordinate axis; a Newton iteration
/// on `F(w) - w` locates it and the chain is re-differenced there. For a
/// linearizable singularity the multiplier equals `exp(2 pi i b / a)`
/// exactly.
pub fn germ_loop_multiplier(cov: &Covering, path: &LeafPath) -> Result<HolonomyGerm, TrackerError> {
    let mut germ = germ_along_loop(cov, path)?;
    let scale = cov.boxes[germ.source_box].trans_radius;
    let mut w = germ.value_start;
    for _ in 0..16 {
        let (val, der) = chain_eval(cov, &germ.chain, w, scale)?;
        let g = val - w;
        let denom = der - C::new(1.0, 0.0);
        if g.norm() < 1e-12 * scale || denom.norm() < 1e-9 {
            germ.derivative = der;
            germ.derivative_modulus = der.norm();
            germ.value_start = w;
            germ.value_end = val;
            return Ok(germ);
        }
        w -= g / denom;
    }
    let (val, der) = chain_eval(cov, &germ.chain, w, scale)?;
    germ.derivative = der;
    germ.derivative_modulus = der.norm();
    germ.value_start = w;
    germ.value_end = val;
    Ok(germ)
}

/// Germ of a closed leafwise loop as a return map on the source section:
/// when the greedy itinerary ends in a different (overlapping) box, one
/// closing transition back to the source section is appended at the end
/// point, so the derivative is measured transversal-to-itself.
pub fn germ_along_loop(cov: &Covering, path: &LeafPath) -> Result<HolonomyGerm, TrackerError> {
    let mut germ = germ_along(cov, path)?;
    if germ.target_box == germ.source_box {
        return Ok(germ);
    }
    let end = path.trace.last().expect("nonempty trace");
    let (_, u_from) = cov.first_integral(germ.target_box, end.chart, end.z)?;
    let (_, u_to) = cov.first_integral(germ.source_box, end.chart, end.z)?;
    let u_guess = u_to - u_from;
    let w_next = transition_eval(cov, germ.target_box, germ.source_box, germ.value_end, u_guess)?;
    let d = transition_derivative_at(
        cov,
        germ.target_box,
        germ.source_box,
        germ.value_end,
        u_guess,
        cov.boxes[germ.target_box].trans_radius,
    )?;
    germ.chain.push(Crossing {
        from_box: germ.target_box,
        to_box: germ.source_box,
        w_base: germ.value_end,
        w_next,
        u_guess,
        derivative: d,
    });
    germ.derivative *= d;
    germ.derivative_modulus = germ.derivative.norm();
    germ.value_end = w_next;
    germ.target_box = germ.source_box;
    germ.crossings = germ.chain.len();
    Ok(germ)
}
