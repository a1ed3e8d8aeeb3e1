//! Global leaf continuation on the projective plane: complex-time
//! integration of the defining field with automatic chart switching,
//! finite coverings by foliation boxes, holonomy germs with certified
//! radii, crossing counts and the leafwise Brownian walker.

mod covering;
mod germ;
mod integrator;
mod walk;

pub use covering::{
    build_covering, build_covering_lenient, crossing_count, itinerary, regular_box_radius,
    BoxKind, CovBox, Covering, CoveringConstants, CoveringParams, Face, Section,
};
pub use germ::{
    germ_along, germ_along_loop, germ_apply, germ_loop_multiplier, koebe_radius, HolonomyGerm,
    GERM_EPS,
};
pub use integrator::{
    continue_leaf, integrate_ray, shoot_to_section, Gauge, LeafPath, LinearFn, State, TracePoint,
};
pub use walk::{
    calibrate_density_floor, calibrate_zeta, crossing_ratios, default_start, leaf_density,
    GlobalWalker, WalkParams,
};

use crate::geometry::{eigen_data, find_singularities, FoliationSpec, GeometryError, SingularityData};
use num_complex::Complex64;
use thiserror::Error;

type C = Complex64;

#[derive(Error, Debug)]
pub enum TrackerError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("integrator step underflow at |h| = {0:.3e} (stiff or singular region)")]
    StepUnderflow(f64),
    #[error("trajectory entered the excluded ball of singularity {0} without a linear-model handoff")]
    ExcludedBall(usize),
    #[error("coordinates left the working domain of chart {0}")]
    ChartDomain(usize),
    #[error("shooting to a section did not converge after {0} iterations (residual {1:.3e})")]
    ShootingFailed(usize, f64),
    #[error("covering has a gap: {0} of {1} test points uncovered")]
    CoverageGap(usize, usize),
    #[error("certified holonomy radius collapsed below {floor:.3e} at crossing {step}")]
    RadiusCollapse { step: usize, floor: f64 },
    #[error("trace point {0} lies outside every covering box")]
    TraceUncovered(usize),
    #[error("non-hyperbolic singularity: covering construction requires all singularities hyperbolic")]
    NotHyperbolic,
    #[error("path count must be positive")]
    NoPaths,
}

/// Foliation spec together with its classified singularities; shared by
/// every tracker operation.
#[derive(Clone, Debug)]
pub struct TrackerContext {
    pub spec: FoliationSpec,
    pub singularities: Vec<SingularityData>,
    /// Exclusion radius around singular points, as a fraction of the
    /// linearization radius in eigen coordinates.
    pub excluded_fraction: f64,
}

impl TrackerContext {
    pub fn new(spec: FoliationSpec) -> Result<Self, TrackerError> {
        let points = find_singularities(&spec, 1e-12)?;
        let singularities = points
            .iter()
            .map(|p| eigen_data(&spec, p, 1e-9))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TrackerContext { spec, singularities, excluded_fraction: 1e-4 })
    }

    /// Eigen-coordinate coordinates of a point relative to singularity `i`,
    /// converting charts as needed. Returns None when the point does not
    /// lie in the singularity's chart domain.
    pub fn eigen_of(&self, i: usize, chart: usize, z: (C, C)) -> Option<(C, C)> {
        let s = &self.singularities[i];
        if chart == s.chart {
            return Some(s.to_eigen(z));
        }
        let p = crate::geometry::ProjPoint::from_chart(chart, z).ok()?;
        let zc = p.chart_coords(s.chart).ok()?;
        Some(s.to_eigen(zc))
    }

    /// Index and eigen-coordinate sup modulus of the closest singularity.
    pub fn nearest_singularity(&self, chart: usize, z: (C, C)) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.singularities.len() {
            let Some(w) = self.eigen_of(i, chart, z) else { continue };
            let sup = w.0.norm().max(w.1.norm());
            if best.is_none_or(|(_, d)| sup < d) {
                best = Some((i, sup));
            }
        }
        best
    }
}
