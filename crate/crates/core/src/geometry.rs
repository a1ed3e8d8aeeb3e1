//! Degree-d polynomial foliations of the projective plane: affine chart
//! fields, singularity location and eigenvalue normalization.

use crate::numeric::{format_complex, parse_complex, path_rng};
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

type C = Complex64;

#[derive(Error, Debug)]
pub enum GeometryError {
    #[error("chart index {0} out of range (expected 0, 1 or 2)")]
    ChartOutOfRange(usize),
    #[error("point lies outside the domain of chart {0}")]
    OutsideChart(usize),
    #[error("root finder did not converge: {0}")]
    RootFinding(String),
    #[error("non-isolated singularity suspected: {0}")]
    NonIsolated(String),
    #[error("degenerate or zero linear part at the singularity")]
    DegenerateLinearPart,
    #[error("point is not a singularity (field modulus {0:.3e})")]
    NotSingular(f64),
    #[error("invalid foliation spec: {0}")]
    InvalidSpec(String),
    #[error("spec parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

// ---------------------------------------------------------------------------
// Projective points
// ---------------------------------------------------------------------------

/// Point of P^2 in normalized homogeneous coordinates: the representative is
/// divided by the max-modulus coordinate, which therefore equals 1.
#[derive(Clone, Copy, Debug)]
pub struct ProjPoint {
    pub homogeneous: [C; 3],
}

impl ProjPoint {
    pub fn new(coords: [C; 3]) -> Result<Self, GeometryError> {
        let max = coords
            .iter()
            .map(|c| c.norm())
            .fold(0.0f64, f64::max);
        if max == 0.0 || !max.is_finite() {
            return Err(GeometryError::InvalidSpec(
                "projective point needs a nonzero finite coordinate".into(),
            ));
        }
        let k = Self::argmax(&coords);
        let pivot = coords[k];
        Ok(ProjPoint {
            homogeneous: [coords[0] / pivot, coords[1] / pivot, coords[2] / pivot],
        })
    }

    fn argmax(coords: &[C; 3]) -> usize {
        let mut k = 0;
        for i in 1..3 {
            if coords[i].norm() > coords[k].norm() {
                k = i;
            }
        }
        k
    }

    /// Chart in which this point has its max-modulus coordinate.
    pub fn canonical_chart(&self) -> usize {
        Self::argmax(&self.homogeneous)
    }

    /// Affine coordinates in chart `k`: `(c_{k+1}/c_k, c_{k+2}/c_k)`.
    pub fn chart_coords(&self, chart: usize) -> Result<(C, C), GeometryError> {
        if chart > 2 {
            return Err(GeometryError::ChartOutOfRange(chart));
        }
        let ck = self.homogeneous[chart];
        if ck.norm() < 1e-13 {
            return Err(GeometryError::OutsideChart(chart));
        }
        Ok((
            self.homogeneous[(chart + 1) % 3] / ck,
            self.homogeneous[(chart + 2) % 3] / ck,
        ))
    }

    pub fn from_chart(chart: usize, z: (C, C)) -> Result<Self, GeometryError> {
        if chart > 2 {
            return Err(GeometryError::ChartOutOfRange(chart));
        }
        let mut coords = [C::new(0.0, 0.0); 3];
        coords[chart] = C::new(1.0, 0.0);
        coords[(chart + 1) % 3] = z.0;
        coords[(chart + 2) % 3] = z.1;
        ProjPoint::new(coords)
    }

    /// Fubini-Study chordal distance, scale invariant in both arguments.
    pub fn dist(&self, other: &ProjPoint) -> f64 {
        let (u, v) = (&self.homogeneous, &other.homogeneous);
        let inner: C = u[0] * v[0].conj() + u[1] * v[1].conj() + u[2] * v[2].conj();
        let nu: f64 = u.iter().map(|c| c.norm_sqr()).sum();
        let nv: f64 = v.iter().map(|c| c.norm_sqr()).sum();
        (1.0 - (inner.norm_sqr() / (nu * nv)).min(1.0)).max(0.0).sqrt()
    }
}

// ---------------------------------------------------------------------------
// Polynomials
// ---------------------------------------------------------------------------

/// Homogeneous polynomial in (X, Y, Z) stored as a sparse exponent table.
#[derive(Clone, Debug, Default)]
pub struct HomPoly {
    pub terms: Vec<([u8; 3], C)>,
}

impl HomPoly {
    pub fn eval(&self, p: [C; 3]) -> C {
        let mut acc = C::new(0.0, 0.0);
        for (e, c) in &self.terms {
            acc += c * p[0].powu(e[0] as u32) * p[1].powu(e[1] as u32) * p[2].powu(e[2] as u32);
        }
        acc
    }

    fn is_homogeneous_of(&self, d: usize) -> bool {
        self.terms
            .iter()
            .all(|(e, _)| (e[0] as usize + e[1] as usize + e[2] as usize) == d)
    }
}

/// Bivariate polynomial with complex coefficients, used for the affine
/// chart fields and their Jacobians.
#[derive(Clone, Debug, Default)]
pub struct Poly2 {
    pub terms: Vec<([u8; 2], C)>,
}

impl Poly2 {
    pub fn eval(&self, z: (C, C)) -> C {
        let mut acc = C::new(0.0, 0.0);
        for (e, c) in &self.terms {
            acc += c * z.0.powu(e[0] as u32) * z.1.powu(e[1] as u32);
        }
        acc
    }

    pub fn d_du(&self) -> Poly2 {
        let mut terms = Vec::new();
        for (e, c) in &self.terms {
            if e[0] > 0 {
                terms.push(([e[0] - 1, e[1]], c * C::new(e[0] as f64, 0.0)));
            }
        }
        Poly2 { terms }
    }

    pub fn d_dv(&self) -> Poly2 {
        let mut terms = Vec::new();
        for (e, c) in &self.terms {
            if e[1] > 0 {
                terms.push(([e[0], e[1] - 1], c * C::new(e[1] as f64, 0.0)));
            }
        }
        Poly2 { terms }
    }

    fn push(&mut self, e: [u8; 2], c: C) {
        if c.norm() == 0.0 {
            return;
        }
        for (e0, c0) in self.terms.iter_mut() {
            if *e0 == e {
                *c0 += c;
                return;
            }
        }
        self.terms.push((e, c));
    }
}

// ---------------------------------------------------------------------------
// Foliation specs
// ---------------------------------------------------------------------------

/// Affine vector field in one chart, with precomputed Jacobian entries.
#[derive(Clone, Debug)]
pub struct AffineField {
    pub f: [Poly2; 2],
    pub jac: [[Poly2; 2]; 2],
}

impl AffineField {
    fn from_components(f0: Poly2, f1: Poly2) -> Self {
        let jac = [
            [f0.d_du(), f0.d_dv()],
            [f1.d_du(), f1.d_dv()],
        ];
        AffineField { f: [f0, f1], jac }
    }

    pub fn eval(&self, z: (C, C)) -> (C, C) {
        (self.f[0].eval(z), self.f[1].eval(z))
    }

    pub fn jacobian(&self, z: (C, C)) -> [[C; 2]; 2] {
        [
            [self.jac[0][0].eval(z), self.jac[0][1].eval(z)],
            [self.jac[1][0].eval(z), self.jac[1][1].eval(z)],
        ]
    }
}

/// Degree-d polynomial foliation of P^2 given by three homogeneous
/// components `(P, Q, R)` of the defining field `P dX + Q dY + R dZ`.
#[derive(Clone, Debug)]
pub struct FoliationSpec {
    pub degree: usize,
    pub homogeneous_field: [HomPoly; 3],
    pub affine_fields: [AffineField; 3],
}

impl FoliationSpec {
    pub fn new(degree: usize, hom: [HomPoly; 3]) -> Result<Self, GeometryError> {
        if degree < 1 {
            return Err(GeometryError::InvalidSpec("degree must be >= 1".into()));
        }
        for (i, h) in hom.iter().enumerate() {
            if !h.is_homogeneous_of(degree) {
                return Err(GeometryError::InvalidSpec(format!(
                    "component {i} is not homogeneous of degree {degree}"
                )));
            }
        }
        let affine = [
            Self::affine_field(&hom, 0),
            Self::affine_field(&hom, 1),
            Self::affine_field(&hom, 2),
        ];
        Ok(FoliationSpec {
            degree,
            homogeneous_field: hom,
            affine_fields: affine,
        })
    }

    /// In chart k with coordinates (u, v) = (c_{k+1}/c_k, c_{k+2}/c_k) the
    /// field is (H_{k+1} - u H_k, H_{k+2} - v H_k) evaluated at the point
    /// with 1 in slot k.
    fn affine_field(hom: &[HomPoly; 3], chart: usize) -> AffineField {
        let expand = |h: &HomPoly, extra: Option<usize>| -> Poly2 {
            // Substitute slot `chart` = 1, slot chart+1 = u, slot chart+2 = v,
            // then optionally multiply by u (extra=0) or v (extra=1).
            let mut out = Poly2::default();
            for (e, c) in &h.terms {
                let mut eu = e[(chart + 1) % 3];
                let mut ev = e[(chart + 2) % 3];
                match extra {
                    Some(0) => eu += 1,
                    Some(1) => ev += 1,
                    _ => {}
                }
                out.push([eu, ev], *c);
            }
            out
        };
        let h_k = &hom[chart];
        let h_u = &hom[(chart + 1) % 3];
        let h_v = &hom[(chart + 2) % 3];
        let mut f0 = expand(h_u, None);
        for (e, c) in expand(h_k, Some(0)).terms {
            f0.push(e, -c);
        }
        let mut f1 = expand(h_v, None);
        for (e, c) in expand(h_k, Some(1)).terms {
            f1.push(e, -c);
        }
        AffineField::from_components(f0, f1)
    }

    /// The Jouanolou foliation of degree d: `y^d dx + z^d dy + x^d dz`.
    pub fn jouanolou(d: usize) -> Self {
        let p = HomPoly { terms: vec![([0, d as u8, 0], C::new(1.0, 0.0))] };
        let q = HomPoly { terms: vec![([0, 0, d as u8], C::new(1.0, 0.0))] };
        let r = HomPoly { terms: vec![([d as u8, 0, 0], C::new(1.0, 0.0))] };
        FoliationSpec::new(d, [p, q, r]).expect("jouanolou spec is valid")
    }

    /// Random dense spec of degree d with coefficients in the unit bidisc,
    /// for Bezout-count oracles.
    pub fn random(d: usize, seed: u64) -> Self {
        let mut rng = path_rng(seed, 0);
        let mut comp = Vec::new();
        for _ in 0..3 {
            let mut terms = Vec::new();
            for i in 0..=d {
                for j in 0..=(d - i) {
                    let k = d - i - j;
                    let c = C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    terms.push(([i as u8, j as u8, k as u8], c));
                }
            }
            comp.push(HomPoly { terms });
        }
        let hom: [HomPoly; 3] = [comp[0].clone(), comp[1].clone(), comp[2].clone()];
        FoliationSpec::new(d, hom).expect("random spec is valid")
    }

    // -- structured-text serialization --------------------------------------

    pub fn to_text(&self) -> String {
        let mut out = format!("degree = {}\n", self.degree);
        let names = ["P", "Q", "R"];
        for (name, h) in names.iter().zip(&self.homogeneous_field) {
            let mut terms = h.terms.clone();
            terms.sort_by_key(|(e, _)| *e);
            for (e, c) in terms {
                out.push_str(&format!(
                    "{}[{},{},{}] = {}\n",
                    name, e[0], e[1], e[2],
                    format_complex(c)
                ));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, GeometryError> {
        let mut degree: Option<usize> = None;
        let mut comps: [Vec<([u8; 3], C)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |msg: &str| GeometryError::Parse { line: lineno + 1, msg: msg.into() };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (lhs, rhs) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`"))?;
            let (lhs, rhs) = (lhs.trim(), rhs.trim());
            if lhs == "degree" {
                degree = Some(rhs.parse().map_err(|_| err("bad degree"))?);
                continue;
            }
            let comp = match lhs.chars().next() {
                Some('P') => 0,
                Some('Q') => 1,
                Some('R') => 2,
                _ => return Err(err("expected P[..], Q[..] or R[..]")),
            };
            let inner = lhs
                .strip_prefix(['P', 'Q', 'R'])
                .and_then(|s| s.strip_prefix('['))
                .and_then(|s| s.strip_suffix(']'))
                .ok_or_else(|| err("expected exponents like P[2,0,0]"))?;
            let exps: Vec<u8> = inner
                .split(',')
                .map(|s| s.trim().parse::<u8>())
                .collect::<Result<_, _>>()
                .map_err(|_| err("bad exponent"))?;
            if exps.len() != 3 {
                return Err(err("expected three exponents"));
            }
            let c = parse_complex(rhs).ok_or_else(|| err("bad complex coefficient"))?;
            comps[comp].push(([exps[0], exps[1], exps[2]], c));
        }
        let degree = degree.ok_or(GeometryError::InvalidSpec("missing degree".into()))?;
        let hom = [
            HomPoly { terms: comps[0].clone() },
            HomPoly { terms: comps[1].clone() },
            HomPoly { terms: comps[2].clone() },
        ];
        FoliationSpec::new(degree, hom)
    }

    /// Generic number of singular points: d^2 + d + 1.
    pub fn expected_singularity_count(&self) -> usize {
        self.degree * self.degree + self.degree + 1
    }
}

/// Value of the affine field of `spec` in `chart` at `point`.
pub fn eval_field(
    spec: &FoliationSpec,
    chart: usize,
    point: (C, C),
) -> Result<(C, C), GeometryError> {
    if chart > 2 {
        return Err(GeometryError::ChartOutOfRange(chart));
    }
    Ok(spec.affine_fields[chart].eval(point))
}

// ---------------------------------------------------------------------------
// Singularities
// ---------------------------------------------------------------------------

/// Location, normalized eigenvalues and linearization data of a singular
/// point.
#[derive(Clone, Debug, Serialize)]
pub struct SingularityData {
    #[serde(skip)]
    pub location: ProjPoint,
    /// Chart the data is expressed in (the singularity's canonical chart).
    pub chart: usize,
    /// Eigenvalues after normalization: Re(a) > 0 and Re(b) > 0.
    #[serde(serialize_with = "ser_c")]
    pub a: C,
    #[serde(serialize_with = "ser_c")]
    pub b: C,
    pub hyperbolic: bool,
    /// Radius of the linearization bidisc in eigen-coordinates.
    pub linearization_radius: f64,
    /// Complex factor c with (a, b) = c * (raw eigenvalues).
    #[serde(serialize_with = "ser_c")]
    pub normalization_factor: C,
    /// Eigenvector basis (columns), in the chart's affine coordinates.
    #[serde(skip)]
    pub eigvecs: [[C; 2]; 2],
}

fn ser_c<S: serde::Serializer>(z: &C, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format_complex(*z))
}

impl SingularityData {
    /// Ratio a/b; the singularity is hyperbolic iff this is non-real.
    pub fn ratio(&self) -> C {
        self.a / self.b
    }

    /// Map a point of the chart to eigen-coordinates centered at the
    /// singularity.
    pub fn to_eigen(&self, z: (C, C)) -> (C, C) {
        let p = self.location.chart_coords(self.chart).expect("own chart");
        let d = (z.0 - p.0, z.1 - p.1);
        let e = &self.eigvecs;
        let det = e[0][0] * e[1][1] - e[0][1] * e[1][0];
        (
            (e[1][1] * d.0 - e[0][1] * d.1) / det,
            (-e[1][0] * d.0 + e[0][0] * d.1) / det,
        )
    }

    /// Smallest singular value of the eigenvector matrix: chart distance
    /// is at least this factor times the eigen-coordinate distance.
    pub fn eigvec_sigma_min(&self) -> f64 {
        let e = &self.eigvecs;
        let c1 = (e[0][0], e[1][0]);
        let c2 = (e[0][1], e[1][1]);
        let n1 = c1.0.norm_sqr() + c1.1.norm_sqr();
        let n2 = c2.0.norm_sqr() + c2.1.norm_sqr();
        let inner = c1.0.conj() * c2.0 + c1.1.conj() * c2.1;
        let tr = n1 + n2;
        let det = (e[0][0] * e[1][1] - e[0][1] * e[1][0]).norm_sqr();
        let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
        let _ = inner;
        (0.5 * (tr - disc)).max(0.0).sqrt()
    }

    /// Inverse of [`Self::to_eigen`].
    pub fn from_eigen(&self, w: (C, C)) -> (C, C) {
        let p = self.location.chart_coords(self.chart).expect("own chart");
        let e = &self.eigvecs;
        (
            p.0 + e[0][0] * w.0 + e[0][1] * w.1,
            p.1 + e[1][0] * w.0 + e[1][1] * w.1,
        )
    }
}

fn newton_2x2(field: &AffineField, start: (C, C), tol: f64) -> Option<(C, C)> {
    let mut z = start;
    for _ in 0..60 {
        let f = field.eval(z);
        let res = f.0.norm() + f.1.norm();
        if !res.is_finite() || z.0.norm() > 50.0 || z.1.norm() > 50.0 {
            return None;
        }
        let j = field.jacobian(z);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.norm() < 1e-14 * (1.0 + res) {
            return None;
        }
        let dz0 = (j[1][1] * f.0 - j[0][1] * f.1) / det;
        let dz1 = (-j[1][0] * f.0 + j[0][0] * f.1) / det;
        z = (z.0 - dz0, z.1 - dz1);
        if dz0.norm() + dz1.norm() < tol {
            let f = field.eval(z);
            if f.0.norm() + f.1.norm() < 1e-9 {
                return Some(z);
            }
        }
    }
    None
}

/// All singular points of the spec, found by multi-start Newton in every
/// chart and deduplicated in homogeneous coordinates.
pub fn find_singularities(
    spec: &FoliationSpec,
    tol: f64,
) -> Result<Vec<ProjPoint>, GeometryError> {
    let mut roots: Vec<ProjPoint> = Vec::new();
    let mut rng = path_rng(0x5eed_0001, 7);
    // Grid plus random starts; chart domains overlap so every point of P^2
    // is reached with |coords| <= ~1.2 in some chart.
    let mut starts: Vec<(C, C)> = Vec::new();
    let grid = [-0.9, -0.45, 0.0, 0.45, 0.9];
    for &re0 in &grid {
        for &im0 in &grid {
            for &re1 in &grid {
                for &im1 in &grid {
                    starts.push((C::new(re0, im0), C::new(re1, im1)));
                }
            }
        }
    }
    for _ in 0..400 {
        starts.push((
            C::new(rng.gen_range(-1.3..1.3), rng.gen_range(-1.3..1.3)),
            C::new(rng.gen_range(-1.3..1.3), rng.gen_range(-1.3..1.3)),
        ));
    }
    for chart in 0..3 {
        let field = &spec.affine_fields[chart];
        for &s in &starts {
            if let Some(z) = newton_2x2(field, s, tol) {
                if z.0.norm() > 1.6 || z.1.norm() > 1.6 {
                    // Rediscovered in another chart closer to its own.
                    continue;
                }
                let p = ProjPoint::from_chart(chart, z)?;
                if roots.iter().all(|r| r.dist(&p) > 1e-7) {
                    roots.push(p);
                }
            }
        }
    }
    if roots.is_empty() {
        return Err(GeometryError::RootFinding(
            "no singular point found from any start".into(),
        ));
    }
    let expected = spec.expected_singularity_count();
    if roots.len() > expected {
        return Err(GeometryError::NonIsolated(format!(
            "{} distinct roots exceed the Bezout count {}",
            roots.len(),
            expected
        )));
    }
    // Deterministic order: by chart then lexicographic on coordinates.
    roots.sort_by(|p, q| {
        let key = |r: &ProjPoint| {
            let h = r.homogeneous;
            (
                r.canonical_chart(),
                (h[0].re * 1e9) as i64,
                (h[0].im * 1e9) as i64,
                (h[1].re * 1e9) as i64,
                (h[1].im * 1e9) as i64,
            )
        };
        key(p).cmp(&key(q))
    });
    Ok(roots)
}

/// Eigenvalue data at a singular point `p` of `spec`, with the paper's
/// positive-real-part normalization.
pub fn eigen_data(
    spec: &FoliationSpec,
    p: &ProjPoint,
    tol: f64,
) -> Result<SingularityData, GeometryError> {
    let chart = p.canonical_chart();
    let z = p.chart_coords(chart)?;
    let field = &spec.affine_fields[chart];
    let f = field.eval(z);
    let fnorm = f.0.norm() + f.1.norm();
    if fnorm > 1e-6 {
        return Err(GeometryError::NotSingular(fnorm));
    }
    let j = field.jacobian(z);
    let tr = j[0][0] + j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let disc = (tr * tr - 4.0 * det).sqrt();
    let mu1 = (tr + disc) / 2.0;
    let mu2 = (tr - disc) / 2.0;
    if mu1.norm() < 1e-10 || mu2.norm() < 1e-10 || disc.norm() < 1e-10 * tr.norm().max(1.0) {
        return Err(GeometryError::DegenerateLinearPart);
    }

    // Unimodular normalization: maximize min(Re(c mu1), Re(c mu2)) over
    // phases c = e^{i theta}. Candidates: each eigenvalue phase-aligned, and
    // the two balanced angles where both rotated real parts agree.
    let (r1, phi1) = (mu1.norm(), mu1.arg());
    let (r2, phi2) = (mu2.norm(), mu2.arg());
    let mut cands = vec![-phi1, -phi2];
    let num = r1 * phi1.cos() - r2 * phi2.cos();
    let den = r1 * phi1.sin() - r2 * phi2.sin();
    if num.abs() + den.abs() > 0.0 {
        let th = num.atan2(den);
        cands.push(th);
        cands.push(th + std::f64::consts::PI);
    }
    let score = |th: f64| {
        let m1 = r1 * (th + phi1).cos();
        let m2 = r2 * (th + phi2).cos();
        m1.min(m2)
    };
    let mut best = cands[0];
    for &th in &cands[1..] {
        let (s_new, s_best) = (score(th), score(best));
        let better = s_new > s_best + 1e-15
            || ((s_new - s_best).abs() <= 1e-15
                && (C::from_polar(1.0, th) * mu1).im.abs()
                    < (C::from_polar(1.0, best) * mu1).im.abs());
        if better {
            best = th;
        }
    }
    if score(best) <= 0.0 {
        return Err(GeometryError::DegenerateLinearPart);
    }
    let c = C::from_polar(1.0, best);
    let (a, b) = (c * mu1, c * mu2);
    let hyperbolic = (a / b).im.abs() > tol;

    // Eigenvectors of the 2x2 Jacobian.
    let eigvec = |mu: C| -> [C; 2] {
        let v1 = [j[0][1], mu - j[0][0]];
        let v2 = [mu - j[1][1], j[1][0]];
        let pick = if v1[0].norm() + v1[1].norm() >= v2[0].norm() + v2[1].norm() { v1 } else { v2 };
        let n = (pick[0].norm_sqr() + pick[1].norm_sqr()).sqrt();
        [pick[0] / n, pick[1] / n]
    };
    let e1 = eigvec(mu1);
    let e2 = eigvec(mu2);
    let eigvecs = [[e1[0], e2[0]], [e1[1], e2[1]]];

    let mut data = SingularityData {
        location: *p,
        chart,
        a,
        b,
        hyperbolic,
        linearization_radius: 0.0,
        normalization_factor: c,
        eigvecs,
    };
    data.linearization_radius = linearization_radius(spec, &data);
    Ok(data)
}

/// Largest r <= 0.5 such that the nonlinear remainder of the eigen-coordinate
/// field stays below 10% of the linear part on the bidisc of radius r,
/// estimated by boundary sampling.
fn linearization_radius(spec: &FoliationSpec, s: &SingularityData) -> f64 {
    remainder_radius(spec, s, 0.10)
}

/// Largest r <= 0.5 with the nonlinear remainder below `threshold` times
/// the linear part on the eigen-coordinate bidisc of radius r.
pub fn remainder_radius(spec: &FoliationSpec, s: &SingularityData, threshold: f64) -> f64 {
    let field = &spec.affine_fields[s.chart];
    let lin_ok = |r: f64| -> bool {
        let m = 24;
        for i in 0..m {
            for jdx in 0..m {
                let w = (
                    C::from_polar(r, 2.0 * std::f64::consts::PI * i as f64 / m as f64),
                    C::from_polar(r, 2.0 * std::f64::consts::PI * jdx as f64 / m as f64),
                );
                let z = s.from_eigen(w);
                let f = field.eval(z);
                // Pull back to eigen coordinates and apply the normalization.
                let e = &s.eigvecs;
                let det = e[0][0] * e[1][1] - e[0][1] * e[1][0];
                let g = (
                    s.normalization_factor * (e[1][1] * f.0 - e[0][1] * f.1) / det,
                    s.normalization_factor * (-e[1][0] * f.0 + e[0][0] * f.1) / det,
                );
                let lin = (s.a * w.0, s.b * w.1);
                let rem = ((g.0 - lin.0).norm_sqr() + (g.1 - lin.1).norm_sqr()).sqrt();
                let lin_norm = (lin.0.norm_sqr() + lin.1.norm_sqr()).sqrt();
                if rem > threshold * lin_norm {
                    return false;
                }
            }
        }
        true
    };
    let mut lo = 0.0f64;
    let mut hi = 0.5f64;
    if lin_ok(hi) {
        return hi;
    }
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if lin_ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo.max(1e-3)
}
