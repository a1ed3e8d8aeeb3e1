//! Finite coverings of the regular part by foliation boxes: chart
//! polydiscs with transverse sections away from the singularities, and
//! exit-classified sector boxes (projection-pulled first integrals)
//! inside each linearization bidisc.

use super::integrator::{shoot_to_section, Gauge, LeafPath, LinearFn, State};
use super::{TrackerContext, TrackerError};
use crate::geometry::{FoliationSpec, ProjPoint};
use crate::numeric::path_rng;
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

type C = Complex64;
const TAU: f64 = 2.0 * std::f64::consts::PI;

/// Sector boxes extend past their section radius by this factor; the exit
/// classification degrades gracefully there while the first integrals
/// stay exact (they shoot the true leaf).
const SECTOR_MEMBERSHIP_FACTOR: f64 = 1.5;

/// Smallest admissible regular-box radius; the repair loop relies on
/// boxes not degenerating, and the sector collars guarantee this floor.
const MIN_BOX_RADIUS: f64 = 0.025;

/// Which boundary face of the linearization bidisc a local leaf exits
/// through first under the real flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Face {
    X,
    Y,
}

#[derive(Clone, Debug, Serialize)]
pub enum BoxKind {
    /// Chart polydisc with a straight coordinate section.
    Regular {
        chart: usize,
        #[serde(skip)]
        center: (C, C),
        radius: f64,
        /// 0 if the section fixes the first coordinate, 1 for the second.
        section_axis: usize,
    },
    /// Exit-sector box inside a singularity's linearization bidisc; the
    /// first integral is the projection-pulled boundary coordinate.
    SingularSector {
        sing: usize,
        face: Face,
        /// Center of the exit-phase window on the boundary circle.
        phase: f64,
        /// Half-width of the window (windows overlap).
        halfwidth: f64,
    },
}

/// One foliation box of the covering.
#[derive(Clone, Debug, Serialize)]
pub struct CovBox {
    pub id: usize,
    pub kind: BoxKind,
    /// Chart in which the section lives.
    pub chart: usize,
    /// Transverse radius of the section disc (in the section coordinate).
    pub trans_radius: f64,
    /// Bound on the shooting time from a member point to the section.
    pub u_reach: f64,
}

/// Section data: the zero locus `ell = 0` with transversal coordinate
/// `tcoord`, both affine in the chart coordinates.
#[derive(Clone, Copy, Debug)]
pub struct Section {
    pub chart: usize,
    pub ell: LinearFn,
    pub tcoord: LinearFn,
    pub gauge: Gauge,
}

/// Estimated covering constants.
#[derive(Clone, Debug, Serialize)]
pub struct CoveringConstants {
    /// Overlap safety radius in transversal coordinates.
    pub delta0: f64,
    /// Cauchy bound: |h'| <= e^theta for transition germs on overlaps.
    pub theta: f64,
    /// Minimal g_s radius of a plaque inside its box.
    pub rho0: f64,
    /// Crossing/length calibration: Q <= zeta * D_1^{g_s}; None until
    /// calibrated against Brownian paths.
    pub zeta: Option<f64>,
    /// Reference Poincare density outside the singular boxes (from the
    /// extension-radius probe).
    pub density_floor: f64,
}

#[derive(Clone, Debug)]
struct RegularIndexEntry {
    id: usize,
    chart: usize,
    center: (C, C),
    radius: f64,
}

/// Uniform 4-d grid hash over regular-box polydiscs, one per chart.
#[derive(Clone, Debug, Default)]
struct SpatialHash {
    cells: std::collections::HashMap<(usize, i16, i16, i16, i16), Vec<u32>>,
}

const HASH_CELL: f64 = 0.35;

impl SpatialHash {
    fn key_of(v: f64) -> i16 {
        (v / HASH_CELL).floor() as i16
    }

    fn insert(&mut self, entry_idx: u32, e: &RegularIndexEntry) {
        let lo0r = Self::key_of(e.center.0.re - e.radius);
        let hi0r = Self::key_of(e.center.0.re + e.radius);
        let lo0i = Self::key_of(e.center.0.im - e.radius);
        let hi0i = Self::key_of(e.center.0.im + e.radius);
        let lo1r = Self::key_of(e.center.1.re - e.radius);
        let hi1r = Self::key_of(e.center.1.re + e.radius);
        let lo1i = Self::key_of(e.center.1.im - e.radius);
        let hi1i = Self::key_of(e.center.1.im + e.radius);
        for a in lo0r..=hi0r {
            for b in lo0i..=hi0i {
                for c in lo1r..=hi1r {
                    for d in lo1i..=hi1i {
                        self.cells
                            .entry((e.chart, a, b, c, d))
                            .or_default()
                            .push(entry_idx);
                    }
                }
            }
        }
    }

    fn candidates(&self, chart: usize, z: (C, C)) -> Option<&Vec<u32>> {
        self.cells.get(&(
            chart,
            Self::key_of(z.0.re),
            Self::key_of(z.0.im),
            Self::key_of(z.1.re),
            Self::key_of(z.1.im),
        ))
    }
}

#[derive(Clone, Debug)]
pub struct Covering {
    pub ctx: TrackerContext,
    pub boxes: Vec<CovBox>,
    pub constants: CoveringConstants,
    /// Adjacency pairs (i < j) with sampled overlap witnesses.
    pub nerve: Vec<(usize, usize)>,
    /// Section radius of each singularity's sector family.
    pub sector_radius: Vec<f64>,
    /// Per singularity and face: (box id, phase, halfwidth).
    sector_windows: Vec<[Vec<(usize, f64, f64)>; 2]>,
    regular_index: Vec<RegularIndexEntry>,
    hash: SpatialHash,
}

#[derive(Clone, Debug)]
pub struct CoveringParams {
    /// Exit-phase windows per face.
    pub phases_per_face: usize,
    /// Coordinate radius of regular boxes.
    pub box_radius: f64,
    /// Points per construction / repair cloud.
    pub cloud: usize,
    /// Points per verification pass.
    pub verify_cloud: usize,
    /// Maximal number of repair passes before reporting a gap.
    pub max_repair_passes: usize,
    pub seed: u64,
}

impl Default for CoveringParams {
    fn default() -> Self {
        CoveringParams {
            phases_per_face: 6,
            box_radius: 0.35,
            cloud: 20000,
            verify_cloud: 150000,
            max_repair_passes: 60,
            seed: 0xC0FE,
        }
    }
}

impl Covering {
    pub fn spec(&self) -> &FoliationSpec {
        &self.ctx.spec
    }

    fn push_box(&mut self, mut b: CovBox) -> usize {
        let id = self.boxes.len();
        b.id = id;
        match &b.kind {
            BoxKind::Regular { chart, center, radius, .. } => {
                let entry = RegularIndexEntry {
                    id,
                    chart: *chart,
                    center: *center,
                    radius: *radius,
                };
                let idx = self.regular_index.len() as u32;
                self.hash.insert(idx, &entry);
                self.regular_index.push(entry);
            }
            BoxKind::SingularSector { sing, face, phase, halfwidth } => {
                let f = if *face == Face::X { 0 } else { 1 };
                self.sector_windows[*sing][f].push((id, *phase, *halfwidth));
            }
        }
        self.boxes.push(b);
        id
    }

    /// Linear-model exit data of the local leaf through eigen point `w`
    /// relative to the section radius: (face, exit phase, real exit time).
    /// Valid (by extrapolation) slightly outside the bidisc as well.
    fn linear_exit(&self, sing: usize, w: (C, C), radius: f64) -> Option<(Face, f64, f64)> {
        let s = &self.ctx.singularities[sing];
        let (mx, my) = (w.0.norm(), w.1.norm());
        if mx == 0.0 && my == 0.0 {
            return None;
        }
        if mx == 0.0 {
            return Some((Face::Y, w.1.arg(), (radius / my).ln() / s.b.re));
        }
        if my == 0.0 {
            return Some((Face::X, w.0.arg(), (radius / mx).ln() / s.a.re));
        }
        let va = (radius / mx).ln() / s.a.re;
        let vb = (radius / my).ln() / s.b.re;
        if va <= vb {
            Some((Face::X, w.0.arg() + s.a.im * va, va))
        } else {
            Some((Face::Y, w.1.arg() + s.b.im * vb, vb))
        }
    }

    /// Membership test for a single box.
    pub fn contains(&self, b: &CovBox, chart: usize, z: (C, C)) -> bool {
        match &b.kind {
            BoxKind::Regular { chart: bc, center, radius, .. } => {
                let Some(zz) = to_chart(chart, z, *bc) else { return false };
                (zz.0 - center.0).norm() < *radius && (zz.1 - center.1).norm() < *radius
            }
            BoxKind::SingularSector { sing, face, phase, halfwidth } => {
                let Some(w) = self.ctx.eigen_of(*sing, chart, z) else { return false };
                let r_box = self.sector_radius[*sing];
                let sup = w.0.norm().max(w.1.norm());
                if sup >= SECTOR_MEMBERSHIP_FACTOR * r_box || sup == 0.0 {
                    return false;
                }
                match self.linear_exit(*sing, w, r_box) {
                    Some((f, ph, _)) if f == *face => angle_dist(ph, *phase) < *halfwidth,
                    _ => false,
                }
            }
        }
    }

    pub fn contains_point(&self, box_id: usize, chart: usize, z: (C, C)) -> bool {
        self.contains(&self.boxes[box_id], chart, z)
    }

    /// All boxes containing the point. One eigen solve per singularity and
    /// one chart conversion per chart, shared across boxes.
    pub fn boxes_containing(&self, chart: usize, z: (C, C)) -> Vec<usize> {
        let mut out = Vec::new();
        let p = ProjPoint::from_chart(chart, z).ok();
        let mut coords: [Option<(C, C)>; 3] = [None, None, None];
        coords[chart] = Some(z);
        if let Some(p) = &p {
            for (k, slot) in coords.iter_mut().enumerate() {
                if k != chart {
                    *slot = p.chart_coords(k).ok();
                }
            }
        }
        for (si, windows) in self.sector_windows.iter().enumerate() {
            let s = &self.ctx.singularities[si];
            let Some(zc) = coords[s.chart] else { continue };
            let w = s.to_eigen(zc);
            let r_box = self.sector_radius[si];
            let sup = w.0.norm().max(w.1.norm());
            if sup >= SECTOR_MEMBERSHIP_FACTOR * r_box || sup == 0.0 {
                continue;
            }
            if let Some((face, ph, _)) = self.linear_exit(si, w, r_box) {
                let f = if face == Face::X { 0 } else { 1 };
                for &(bid, phase, halfwidth) in &windows[f] {
                    if angle_dist(ph, phase) < halfwidth {
                        out.push(bid);
                    }
                }
            }
        }
        for (k, zz) in coords.iter().enumerate() {
            let Some(zz) = zz else { continue };
            let Some(cands) = self.hash.candidates(k, *zz) else { continue };
            for &ci in cands {
                let rb = &self.regular_index[ci as usize];
                if (zz.0 - rb.center.0).norm() < rb.radius
                    && (zz.1 - rb.center.1).norm() < rb.radius
                {
                    out.push(rb.id);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// The section of box `id`.
    pub fn section(&self, id: usize) -> Section {
        let b = &self.boxes[id];
        match &b.kind {
            BoxKind::Regular { chart, center, section_axis, .. } => {
                let (ell, tcoord) = if *section_axis == 0 {
                    (
                        LinearFn { a0: C::new(1.0, 0.0), a1: C::new(0.0, 0.0), b: -center.0 },
                        LinearFn { a0: C::new(0.0, 0.0), a1: C::new(1.0, 0.0), b: -center.1 },
                    )
                } else {
                    (
                        LinearFn { a0: C::new(0.0, 0.0), a1: C::new(1.0, 0.0), b: -center.1 },
                        LinearFn { a0: C::new(1.0, 0.0), a1: C::new(0.0, 0.0), b: -center.0 },
                    )
                };
                Section { chart: *chart, ell, tcoord, gauge: Gauge::Chart(*chart) }
            }
            BoxKind::SingularSector { sing, face, phase, .. } => {
                let s = &self.ctx.singularities[*sing];
                let r_box = self.sector_radius[*sing];
                // Section {x_eigen = r e^{i phase}} (or the Y analogue),
                // expressed through affine functions of the chart
                // coordinates.
                let e = &s.eigvecs;
                let det = e[0][0] * e[1][1] - e[0][1] * e[1][0];
                let p = s.location.chart_coords(s.chart).expect("own chart");
                let row_x = (e[1][1] / det, -e[0][1] / det);
                let row_y = (-e[1][0] / det, e[0][0] / det);
                let const_x = -(row_x.0 * p.0 + row_x.1 * p.1);
                let const_y = -(row_y.0 * p.0 + row_y.1 * p.1);
                let target = C::from_polar(r_box, *phase);
                let (ell, tcoord) = match face {
                    Face::X => (
                        LinearFn { a0: row_x.0, a1: row_x.1, b: const_x - target },
                        LinearFn { a0: row_y.0, a1: row_y.1, b: const_y },
                    ),
                    Face::Y => (
                        LinearFn { a0: row_y.0, a1: row_y.1, b: const_y - target },
                        LinearFn { a0: row_x.0, a1: row_x.1, b: const_x },
                    ),
                };
                Section { chart: s.chart, ell, tcoord, gauge: Gauge::Singularity(*sing) }
            }
        }
    }

    /// First integral of box `id` at a member point: shoot to the section
    /// and return the transversal coordinate, along with the flow time.
    pub fn first_integral(
        &self,
        id: usize,
        chart: usize,
        z: (C, C),
    ) -> Result<(C, C), TrackerError> {
        let sec = self.section(id);
        let guess = self.shoot_guess(id, chart, z);
        let st = State { chart, z };
        let b = &self.boxes[id];
        let (landed, u) = shoot_to_section(
            &self.ctx,
            st,
            sec.chart,
            &sec.ell,
            sec.gauge,
            guess,
            b.u_reach,
            1e-12,
        )?;
        Ok((sec.tcoord.eval(landed.z), u))
    }

    /// Initial flow-time guess for shooting onto the box section.
    fn shoot_guess(&self, id: usize, chart: usize, z: (C, C)) -> C {
        let b = &self.boxes[id];
        match &b.kind {
            BoxKind::Regular { .. } => C::new(0.0, 0.0),
            BoxKind::SingularSector { sing, face, phase, .. } => {
                // Linear-model time to the face section:
                // e^{a u} x = r e^{i phase} => u = (log(r/|x|) + i dphase)/a.
                let Some(w) = self.ctx.eigen_of(*sing, chart, z) else {
                    return C::new(0.0, 0.0);
                };
                let s = &self.ctx.singularities[*sing];
                let r_box = self.sector_radius[*sing];
                let (eig, coord) = match face {
                    Face::X => (s.a, w.0),
                    Face::Y => (s.b, w.1),
                };
                if coord.norm() == 0.0 {
                    return C::new(0.0, 0.0);
                }
                let mut dphase = (phase - coord.arg()).rem_euclid(TAU);
                if dphase > std::f64::consts::PI {
                    dphase -= TAU;
                }
                C::new((r_box / coord.norm()).ln(), dphase) / eig
            }
        }
    }

    /// The point of box `id`'s section with transversal coordinate `w`.
    pub fn section_point(&self, id: usize, w: C) -> Result<State, TrackerError> {
        let b = &self.boxes[id];
        match &b.kind {
            BoxKind::Regular { chart, center, section_axis, .. } => {
                let z = if *section_axis == 0 {
                    (center.0, center.1 + w)
                } else {
                    (center.0 + w, center.1)
                };
                Ok(State { chart: *chart, z })
            }
            BoxKind::SingularSector { sing, face, phase, .. } => {
                let s = &self.ctx.singularities[*sing];
                let r_box = self.sector_radius[*sing];
                let target = C::from_polar(r_box, *phase);
                let eigen = match face {
                    Face::X => (target, w),
                    Face::Y => (w, target),
                };
                Ok(State { chart: s.chart, z: s.from_eigen(eigen) })
            }
        }
    }
}

fn to_chart(chart: usize, z: (C, C), target: usize) -> Option<(C, C)> {
    if chart == target {
        return Some(z);
    }
    let p = ProjPoint::from_chart(chart, z).ok()?;
    p.chart_coords(target).ok()
}

fn angle_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

fn box_muller(rng: &mut impl Rng) -> (f64, f64) {
    let u1: f64 = rng.gen_range(1e-300..1.0);
    let u2: f64 = rng.gen_range(0.0..TAU);
    let m = (-2.0 * u1.ln()).sqrt();
    (m * u2.cos(), m * u2.sin())
}

/// Fubini-Study-uniform sample of P^2 as (chart, coords) in the canonical
/// chart.
pub(crate) fn sample_p2(rng: &mut impl Rng) -> (usize, (C, C)) {
    let mut coords = [C::new(0.0, 0.0); 3];
    for c in coords.iter_mut() {
        let (re, im) = box_muller(rng);
        *c = C::new(re, im);
    }
    let p = ProjPoint::new(coords).expect("gaussian point");
    let chart = p.canonical_chart();
    (chart, p.chart_coords(chart).expect("canonical chart"))
}

/// Build a covering of the regular part by foliation boxes.
pub fn build_covering(
    ctx: TrackerContext,
    params: &CoveringParams,
) -> Result<Covering, TrackerError> {
    let (cov, gaps) = build_covering_lenient(ctx, params)?;
    if gaps > 0 {
        return Err(TrackerError::CoverageGap(gaps, params.verify_cloud));
    }
    Ok(cov)
}

/// Covering construction that reports residual gaps instead of failing
/// (diagnostics and parameter tuning).
pub fn build_covering_lenient(
    ctx: TrackerContext,
    params: &CoveringParams,
) -> Result<(Covering, usize), TrackerError> {
    if ctx.singularities.iter().any(|s| !s.hyperbolic) {
        return Err(TrackerError::NotHyperbolic);
    }
    // Sector bidiscs extend past the strict linearization radius: first
    // integrals are exact leaf shoots, and the linear model only
    // classifies exit faces, which tolerates a larger remainder. Cap by
    // the distance to the other singularities.
    let sector_radius: Vec<f64> = (0..ctx.singularities.len())
        .map(|i| {
            let s = &ctx.singularities[i];
            let mut r = crate::geometry::remainder_radius(&ctx.spec, s, 0.35);
            for (j, other) in ctx.singularities.iter().enumerate() {
                if i == j {
                    continue;
                }
                if let Ok(zc) = other.location.chart_coords(s.chart) {
                    let w = s.to_eigen(zc);
                    r = r.min(0.35 * w.0.norm().max(w.1.norm()));
                }
            }
            r.max(1e-3)
        })
        .collect();

    let n_sings = ctx.singularities.len();
    let mut cov = Covering {
        ctx,
        boxes: Vec::new(),
        constants: CoveringConstants {
            delta0: 0.0,
            theta: 0.0,
            rho0: 0.0,
            zeta: None,
            density_floor: 1.0,
        },
        nerve: Vec::new(),
        sector_radius,
        sector_windows: vec![[Vec::new(), Vec::new()]; n_sings],
        regular_index: Vec::new(),
        hash: SpatialHash::default(),
    };

    // Sector boxes: overlapping phase windows per face.
    let m = params.phases_per_face;
    let halfwidth = (TAU / m as f64) * 0.75;
    for si in 0..n_sings {
        let chart = cov.ctx.singularities[si].chart;
        let trans_radius = cov.sector_radius[si];
        for face in [Face::X, Face::Y] {
            for k in 0..m {
                let phase = TAU * k as f64 / m as f64;
                cov.push_box(CovBox {
                    id: 0,
                    kind: BoxKind::SingularSector { sing: si, face, phase, halfwidth },
                    chart,
                    trans_radius,
                    u_reach: 400.0,
                });
            }
        }
    }

    // Regular boxes: flood-fill from a construction cloud. Every
    // uncovered sample seeds a tiling of its whole gap component (each
    // new box enqueues candidate centers just outside itself), so a
    // component is finished once any cloud point lands in it.
    let mut stream = 1u64;
    {
        let mut rng = path_rng(params.seed, stream);
        stream += 1;
        for _ in 0..params.cloud {
            let (chart, z) = sample_p2(&mut rng);
            flood_cover(&mut cov, chart, z, params.box_radius);
        }
    }
    // Repair until three consecutive verification passes are clean; each
    // discovered gap floods its whole component away, so the residual
    // measure drops geometrically with the number of passes.
    let mut consecutive_clean = 0usize;
    for _pass in 0..params.max_repair_passes {
        let mut rng = path_rng(params.seed, stream);
        stream += 1;
        let mut gaps = 0usize;
        for _ in 0..params.verify_cloud {
            let (chart, z) = sample_p2(&mut rng);
            if cov.boxes_containing(chart, z).is_empty() {
                gaps += 1;
                flood_cover(&mut cov, chart, z, params.box_radius);
            }
        }
        if gaps == 0 {
            consecutive_clean += 1;
            if consecutive_clean >= 3 {
                break;
            }
        } else {
            consecutive_clean = 0;
        }
    }
    let clean = consecutive_clean >= 3;
    let mut residual = 0usize;
    if !clean {
        // Count the residual gap honestly on a fresh cloud.
        let mut rng = path_rng(params.seed, stream);
        for _ in 0..params.verify_cloud {
            let (chart, z) = sample_p2(&mut rng);
            if cov.boxes_containing(chart, z).is_empty() {
                residual += 1;
            }
        }
    }

    estimate_constants(&mut cov, params)?;
    Ok((cov, residual))
}

/// Tile the gap component around an uncovered point: add a box there,
/// then recursively probe centers just outside each added box.
fn flood_cover(cov: &mut Covering, chart: usize, z: (C, C), radius: f64) {
    let mut queue = vec![(chart, z)];
    let mut budget = 30000usize;
    while let Some((chart, z)) = queue.pop() {
        if budget == 0 {
            break;
        }
        budget -= 1;
        if z.0.norm() > 1.45 || z.1.norm() > 1.45 {
            continue;
        }
        if !cov.boxes_containing(chart, z).is_empty() {
            continue;
        }
        let Some(b) = cover_point(cov, chart, z, radius) else { continue };
        let r = b.trans_radius * 1.05;
        let (bc, center) = match &b.kind {
            BoxKind::Regular { chart, center, .. } => (*chart, *center),
            _ => unreachable!("cover_point returns regular boxes"),
        };
        cov.push_box(b);
        // Probe the full surrounding grid of the new box so gap components
        // cannot hide in diagonal shadows.
        let step = 0.9 * r;
        for a in -1i32..=1 {
            for bb in -1i32..=1 {
                for cc in -1i32..=1 {
                    for dd in -1i32..=1 {
                        if a == 0 && bb == 0 && cc == 0 && dd == 0 {
                            continue;
                        }
                        let dz0 = C::new(a as f64, bb as f64) * step;
                        let dz1 = C::new(cc as f64, dd as f64) * step;
                        queue.push((bc, (center.0 + dz0, center.1 + dz1)));
                    }
                }
            }
        }
    }
}

/// Final radius a regular box would get at this center (diagnostics).
pub fn regular_box_radius(cov: &Covering, chart: usize, z: (C, C), radius: f64) -> Option<f64> {
    make_regular_box(cov, chart, z, radius).map(|b| b.trans_radius)
}

/// Candidate regular box centered at the point; the section axis fixes
/// the coordinate with the larger field component (which is then bounded
/// away from zero on the box).
fn make_regular_box(cov: &Covering, chart: usize, z: (C, C), radius: f64) -> Option<CovBox> {
    make_regular_box_inner(cov, chart, z, radius, 0.25, MIN_BOX_RADIUS)
}

fn make_regular_box_inner(
    cov: &Covering,
    chart: usize,
    z: (C, C),
    radius: f64,
    transversality: f64,
    min_radius: f64,
) -> Option<CovBox> {
    // Keep centers in a moderate chart domain; points near the chart
    // boundary are picked up in their own canonical chart.
    if z.0.norm() > 1.3 || z.1.norm() > 1.3 {
        return None;
    }
    let f = cov.ctx.spec.affine_fields[chart].eval(z);
    let fnorm = f.0.norm().max(f.1.norm());
    if fnorm < 1e-9 {
        return None;
    }
    // Boxes must keep clear of the sector cores (the sectors own
    // everything below half their radius); eigen margins convert to chart
    // units through the smallest singular value of the eigenbasis.
    let mut r = radius;
    for (si, s) in cov.ctx.singularities.iter().enumerate() {
        let Some(w) = cov.ctx.eigen_of(si, chart, z) else { continue };
        let sup = w.0.norm().max(w.1.norm());
        let r_core = cov.sector_radius[si];
        if sup > 4.0 * r_core {
            continue;
        }
        let sigma = s.eigvec_sigma_min().max(0.2);
        let margin = 0.7 * sigma * (sup - 0.35 * r_core);
        if margin <= 0.0 {
            return None;
        }
        r = r.min(margin);
    }
    if r < min_radius {
        return None;
    }
    // Transversality on the whole box: the section-normal field component
    // must stay bounded below; probe a fixed polydisc grid, shrinking the
    // box until the probes pass. If one axis degenerates (its component
    // has a nearby zero curve), the other axis takes over.
    let preferred = if f.0.norm() >= f.1.norm() { 0 } else { 1 };
    for section_axis in [preferred, 1 - preferred] {
        let mut ra = r;
        let ok = 'outer: loop {
            for i in 0..8 {
                for &(s0, s1) in &[(1.0, 0.3), (0.3, 1.0), (1.0, 1.0)] {
                    let phase = TAU * i as f64 / 8.0;
                    let dz =
                        (C::from_polar(ra * s0, phase), C::from_polar(ra * s1, phase * 2.3));
                    let fz = cov.ctx.spec.affine_fields[chart].eval((z.0 + dz.0, z.1 + dz.1));
                    let comp = if section_axis == 0 { fz.0 } else { fz.1 };
                    if comp.norm() < transversality * fnorm {
                        ra *= 0.6;
                        if ra < min_radius {
                            break 'outer false;
                        }
                        continue 'outer;
                    }
                }
            }
            break true;
        };
        if ok {
            return Some(CovBox {
                id: 0,
                kind: BoxKind::Regular { chart, center: z, radius: ra, section_axis },
                chart,
                trans_radius: ra,
                u_reach: 6.0 * ra / fnorm.min(1.0),
            });
        }
    }
    None
}

/// Box covering the target point, searching nearby centers when the point
/// itself does not admit one (e.g. right on a field-component zero curve).
fn cover_point(cov: &Covering, chart: usize, z: (C, C), radius: f64) -> Option<CovBox> {
    if let Some(b) = make_regular_box(cov, chart, z, radius) {
        return Some(b);
    }
    for dist in [0.02, 0.05, 0.1, 0.18] {
        for k in 0..8 {
            let phase = TAU * k as f64 / 8.0;
            for dz in [
                (C::from_polar(dist, phase), C::new(0.0, 0.0)),
                (C::new(0.0, 0.0), C::from_polar(dist, phase)),
                (C::from_polar(dist, phase), C::from_polar(dist, phase * 1.7)),
            ] {
                let center = (z.0 + dz.0, z.1 + dz.1);
                if let Some(b) = make_regular_box(cov, chart, center, radius) {
                    if cov.contains(&b, chart, z) {
                        return Some(b);
                    }
                }
            }
        }
    }
    // Last resort near field-component zero curves: accept a weakly
    // transverse section on a small box.
    make_regular_box_inner(cov, chart, z, radius, 0.08, 0.008)
}

/// Estimate delta0, theta, rho0 and the nerve from sampled overlaps.
fn estimate_constants(cov: &mut Covering, params: &CoveringParams) -> Result<(), TrackerError> {
    let mut rng = path_rng(params.seed, 100);
    let mut witnesses: std::collections::HashMap<(usize, usize), Vec<(usize, (C, C))>> =
        std::collections::HashMap::new();
    for _ in 0..params.verify_cloud / 2 {
        let (chart, z) = sample_p2(&mut rng);
        let ids = cov.boxes_containing(chart, z);
        for i in 0..ids.len() {
            for j in (i + 1)..ids.len() {
                let key = (ids[i].min(ids[j]), ids[i].max(ids[j]));
                let w = witnesses.entry(key).or_default();
                if w.len() < 4 {
                    w.push((chart, z));
                }
            }
        }
    }
    cov.nerve = witnesses.keys().copied().collect();
    cov.nerve.sort_unstable();

    // delta0: transitions stay defined on discs of this radius around
    // overlap coordinates because each box sits inside a 30%-enlarged
    // chart box; a quarter of the smallest transversal radius is the
    // enlargement gap.
    let min_trans = cov
        .boxes
        .iter()
        .map(|b| b.trans_radius)
        .fold(f64::INFINITY, f64::min);
    cov.constants.delta0 = 0.25 * min_trans;

    // theta: Cauchy bound on transition derivatives over sampled pairs.
    let mut theta_max: f64 = 0.0;
    let mut checked = 0usize;
    let stride = (cov.nerve.len() / 200).max(1);
    for &(i, j) in cov.nerve.iter().step_by(stride) {
        if checked > 250 {
            break;
        }
        let Some(ws) = witnesses.get(&(i, j)) else { continue };
        if let Some(&(chart, z)) = ws.first() {
            checked += 1;
            if let Ok(d) = transition_derivative(cov, i, j, chart, z) {
                if d.norm() > 0.0 {
                    theta_max = theta_max.max(d.norm().ln().abs());
                }
            }
        }
    }
    cov.constants.theta = theta_max * 1.1 + 0.05;

    // rho0: minimal g_s radius of a plaque, approximated by coordinate
    // radius over the maximal field modulus on sampled boxes.
    let mut rho0 = f64::INFINITY;
    for b in cov.boxes.iter().take(300) {
        if let BoxKind::Regular { chart, center, radius, .. } = &b.kind {
            let f = cov.ctx.spec.affine_fields[*chart].eval(*center);
            let fmax = f.0.norm().max(f.1.norm()).max(1e-6);
            rho0 = rho0.min(radius / (2.0 * fmax));
        }
    }
    cov.constants.rho0 = if rho0.is_finite() { rho0 } else { 0.05 };
    Ok(())
}

/// Derivative of the transition map t_j o t_i^{-1} at the witness point's
/// coordinate, by holomorphic 4-point differencing through the sections.
pub fn transition_derivative(
    cov: &Covering,
    i: usize,
    j: usize,
    chart: usize,
    z: (C, C),
) -> Result<C, TrackerError> {
    let (ti, _) = cov.first_integral(i, chart, z)?;
    let eval = |w: C| -> Result<C, TrackerError> {
        let p = cov.section_point(i, w)?;
        let (tj, _) = cov.first_integral(j, p.chart, p.z)?;
        Ok(tj)
    };
    let delta = (cov.boxes[i].trans_radius * 1e-3).max(1e-7);
    let dre = (eval(ti + C::new(delta, 0.0))? - eval(ti - C::new(delta, 0.0))?)
        / C::new(2.0 * delta, 0.0);
    let dim = (eval(ti + C::new(0.0, delta))? - eval(ti - C::new(0.0, delta))?)
        / C::new(0.0, 2.0 * delta);
    Ok((dre + dim) / 2.0)
}

// ---------------------------------------------------------------------------
// Itineraries and crossing counts
// ---------------------------------------------------------------------------

/// Assign a minimal box itinerary to a traced path: greedy farthest-reach
/// segmentation over the trace (optimal interval cover). Returns segments
/// of (box id, first trace index, last trace index).
pub fn itinerary(
    cov: &Covering,
    path: &LeafPath,
) -> Result<Vec<(usize, usize, usize)>, TrackerError> {
    let pts = &path.trace;
    if pts.is_empty() {
        return Ok(Vec::new());
    }
    // Residual coverage slivers have measure ~1e-5; a trace point landing
    // in one is dropped rather than failing the whole path, but a trace
    // that is substantially uncovered is a genuine gap.
    let mut sets: Vec<Vec<usize>> = Vec::with_capacity(pts.len());
    let mut kept: Vec<usize> = Vec::with_capacity(pts.len());
    let mut dropped = 0usize;
    for (i, p) in pts.iter().enumerate() {
        let s = cov.boxes_containing(p.chart, p.z);
        if s.is_empty() {
            dropped += 1;
        } else {
            sets.push(s);
            kept.push(i);
        }
    }
    if sets.is_empty() || dropped * 20 > pts.len() {
        return Err(TrackerError::TraceUncovered(dropped));
    }
    let n = sets.len();
    let mut segments: Vec<(usize, usize, usize)> = Vec::new();
    let mut start = 0usize;
    loop {
        let mut best_end = start;
        let mut best_box = sets[start][0];
        for &b in &sets[start] {
            let mut end = start;
            while end + 1 < n && sets[end + 1].contains(&b) {
                end += 1;
            }
            if end > best_end {
                best_end = end;
                best_box = b;
            }
        }
        segments.push((best_box, kept[start], kept[best_end]));
        if best_end >= n - 1 {
            break;
        }
        // Transitions happen at a trace point shared by both boxes; if two
        // consecutive points share no box (coarse trace), force progress
        // and accept the extra crossing.
        start = if best_end == start { start + 1 } else { best_end };
    }
    Ok(segments)
}

/// Minimal number of box changes over itineraries of the traced path.
/// A path inside a single box has Q = 0.
pub fn crossing_count(cov: &Covering, path: &LeafPath) -> Result<usize, TrackerError> {
    let segs = itinerary(cov, path)?;
    Ok(segs.len().saturating_sub(1))
}
