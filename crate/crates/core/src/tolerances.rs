//! Numerical thresholds shared across modules.

/// ‖P − Pᵗ‖_max for a valid projector.
pub const PROJECTOR_SYMMETRY: f64 = 1e-12;
/// ‖P² − P‖_max for a valid projector.
pub const PROJECTOR_IDEMPOTENCE: f64 = 1e-10;
/// |tr P − d| for a valid projector.
pub const PROJECTOR_TRACE: f64 = 1e-10;
/// Minimum Gram determinant of a spanning set.
pub const GRAM_DETERMINANT_MIN: f64 = 1e-12;
/// Minimum |det Df| of a pushforward map.
pub const MAP_DETERMINANT_MIN: f64 = 1e-12;
/// Tolerance on the box and Lipschitz constraints of a bounded-Lipschitz certificate.
pub const BL_FEASIBILITY: f64 = 1e-9;
/// Barrier values at or below this are treated as zero.
pub const BARRIER_ZERO: f64 = 1e-14;
/// Minimum separation of advected mesh vertices.
pub const VERTEX_COLLISION: f64 = 1e-10;
/// Safety factor applied to grid-sampled sup norms.
pub const NORM_SAFETY_FACTOR: f64 = 1.05;
/// Default cap on the combined support size of a bounded-Lipschitz problem.
pub const BL_SUPPORT_CAP: usize = 2000;
/// Default Monte Carlo sample count per volume query.
pub const MC_SAMPLES: usize = 100_000;

/// Runtime-adjustable copy of the thresholds above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub projector_symmetry: f64,
    pub projector_idempotence: f64,
    pub projector_trace: f64,
    pub gram_determinant_min: f64,
    pub map_determinant_min: f64,
    pub bl_feasibility: f64,
    pub barrier_zero: f64,
    pub vertex_collision: f64,
    pub norm_safety_factor: f64,
    pub bl_support_cap: usize,
    pub mc_samples: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            projector_symmetry: PROJECTOR_SYMMETRY,
            projector_idempotence: PROJECTOR_IDEMPOTENCE,
            projector_trace: PROJECTOR_TRACE,
            gram_determinant_min: GRAM_DETERMINANT_MIN,
            map_determinant_min: MAP_DETERMINANT_MIN,
            bl_feasibility: BL_FEASIBILITY,
            barrier_zero: BARRIER_ZERO,
            vertex_collision: VERTEX_COLLISION,
            norm_safety_factor: NORM_SAFETY_FACTOR,
            bl_support_cap: BL_SUPPORT_CAP,
            mc_samples: MC_SAMPLES,
        }
    }
}
