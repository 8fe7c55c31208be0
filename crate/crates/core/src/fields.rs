//! Test functions φ(x, t) and vector fields X(x) with analytic derivatives.

use nalgebra::{DMatrix, DVector};

pub trait ScalarField: Sync {
    fn value(&self, x: &DVector<f64>, t: f64) -> f64;
    fn gradient(&self, x: &DVector<f64>, t: f64) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64>;
    fn time_derivative(&self, _x: &DVector<f64>, _t: f64) -> f64 {
        0.0
    }
    /// Declared bound on ‖φ‖_∞ + ‖Dφ‖_∞, if known.
    fn c1_norm(&self) -> Option<f64> {
        None
    }
    /// Declared bound on ‖φ‖_∞ + ‖Dφ‖_∞ + ‖D²φ‖_∞, if known.
    fn c2_norm(&self) -> Option<f64> {
        None
    }
    /// Declared bound on ‖D²φ‖_∞, if known.
    fn hessian_sup(&self) -> Option<f64> {
        None
    }
}

pub trait VectorField: Sync {
    fn value(&self, x: &DVector<f64>) -> DVector<f64>;
    /// (∂Xᵢ/∂xⱼ)ᵢⱼ.
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// φ ≡ c.
#[derive(Debug, Clone, Copy)]
pub struct ConstantField(pub f64);

impl ScalarField for ConstantField {
    fn value(&self, _x: &DVector<f64>, _t: f64) -> f64 {
        self.0
    }
    fn gradient(&self, x: &DVector<f64>, _t: f64) -> DVector<f64> {
        DVector::zeros(x.len())
    }
    fn hessian(&self, x: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }
    fn c1_norm(&self) -> Option<f64> {
        Some(self.0.abs())
    }
    fn c2_norm(&self) -> Option<f64> {
        Some(self.0.abs())
    }
    fn hessian_sup(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// φ(x) = |x|².
#[derive(Debug, Clone, Copy)]
pub struct SquaredNorm;

impl ScalarField for SquaredNorm {
    fn value(&self, x: &DVector<f64>, _t: f64) -> f64 {
        x.norm_squared()
    }
    fn gradient(&self, x: &DVector<f64>, _t: f64) -> DVector<f64> {
        x * 2.0
    }
    fn hessian(&self, x: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        DMatrix::identity(x.len(), x.len()) * 2.0
    }
    fn hessian_sup(&self) -> Option<f64> {
        Some(2.0)
    }
}

/// Compactly supported C³ bump
/// φ(x, t) = A (1 + g t) (1 − |x − c|²/r²)⁴ on B(c, r), zero outside.
#[derive(Debug, Clone)]
pub struct Bump {
    pub center: DVector<f64>,
    pub radius: f64,
    pub amplitude: f64,
    pub growth: f64,
}

impl Bump {
    pub fn new(center: DVector<f64>, radius: f64, amplitude: f64) -> Self {
        Self { center, radius, amplitude, growth: 0.0 }
    }

    pub fn with_growth(mut self, growth: f64) -> Self {
        self.growth = growth;
        self
    }

    fn time_factor(&self, t: f64) -> f64 {
        1.0 + self.growth * t
    }

    fn max_time_factor(&self) -> f64 {
        self.time_factor(0.0).abs().max(self.time_factor(1.0).abs())
    }
}

impl ScalarField for Bump {
    fn value(&self, x: &DVector<f64>, t: f64) -> f64 {
        let u = (x - &self.center).norm_squared() / (self.radius * self.radius);
        if u >= 1.0 {
            return 0.0;
        }
        self.amplitude * self.time_factor(t) * (1.0 - u).powi(4)
    }
    fn gradient(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        let r2 = self.radius * self.radius;
        let z = x - &self.center;
        let u = z.norm_squared() / r2;
        if u >= 1.0 {
            return DVector::zeros(x.len());
        }
        z * (self.amplitude * self.time_factor(t) * (-8.0 / r2) * (1.0 - u).powi(3))
    }
    fn hessian(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64> {
        let n = x.len();
        let r2 = self.radius * self.radius;
        let z = x - &self.center;
        let u = z.norm_squared() / r2;
        if u >= 1.0 {
            return DMatrix::zeros(n, n);
        }
        let a = self.amplitude * self.time_factor(t);
        &z * z.transpose() * (a * 48.0 / (r2 * r2) * (1.0 - u).powi(2))
            - DMatrix::identity(n, n) * (a * 8.0 / r2 * (1.0 - u).powi(3))
    }
    fn time_derivative(&self, x: &DVector<f64>, _t: f64) -> f64 {
        let u = (x - &self.center).norm_squared() / (self.radius * self.radius);
        if u >= 1.0 {
            return 0.0;
        }
        self.amplitude * self.growth * (1.0 - u).powi(4)
    }
    fn c1_norm(&self) -> Option<f64> {
        let (v, g, _) = self.profile_sups();
        Some(v + g)
    }
    fn c2_norm(&self) -> Option<f64> {
        let (v, g, h) = self.profile_sups();
        Some(v + g + h)
    }
    fn hessian_sup(&self) -> Option<f64> {
        Some(self.profile_sups().2)
    }
}

impl Bump {
    /// Sup norms of value, gradient and Hessian (operator norm), over t ∈ [0, 1].
    fn profile_sups(&self) -> (f64, f64, f64) {
        let a = self.amplitude.abs() * self.max_time_factor();
        let r = self.radius;
        let samples = 4096;
        let (mut g, mut h) = (0.0f64, 0.0f64);
        for i in 0..=samples {
            let s = r * i as f64 / samples as f64;
            let u = (s / r).powi(2);
            let w = 1.0 - u;
            g = g.max(a * 8.0 * s / (r * r) * w.powi(3));
            // Hessian eigenvalues: radial and tangential.
            let tangential = a * 8.0 / (r * r) * w.powi(3);
            let radial = (a * 48.0 * s * s / r.powi(4) * w.powi(2) - tangential).abs();
            h = h.max(tangential).max(radial);
        }
        let safety = crate::tolerances::NORM_SAFETY_FACTOR;
        (a, g * safety, h * safety)
    }
}

/// X(x) = A x + b.
#[derive(Debug, Clone)]
pub struct AffineField {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineField {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Self {
        Self { matrix, offset }
    }
}

impl VectorField for AffineField {
    fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + &self.offset
    }
    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }
}

/// X(x) = φ(x) e_j for a scalar field φ.
pub struct ScalarTimesAxis<'a> {
    pub scalar: &'a dyn ScalarField,
    pub axis: usize,
}

impl VectorField for ScalarTimesAxis<'_> {
    fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut v = DVector::zeros(x.len());
        v[self.axis] = self.scalar.value(x, 0.0);
        v
    }
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let g = self.scalar.gradient(x, 0.0);
        let mut j = DMatrix::zeros(n, n);
        j.set_row(self.axis, &g.transpose());
        j
    }
}

/// Centered finite-difference gradient of a scalar field.
pub fn fd_gradient(field: &dyn ScalarField, x: &DVector<f64>, t: f64, step: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += step;
        xm[i] -= step;
        (field.value(&xp, t) - field.value(&xm, t)) / (2.0 * step)
    })
}

/// Centered finite-difference Hessian (differences of the analytic gradient).
pub fn fd_hessian(field: &dyn ScalarField, x: &DVector<f64>, t: f64, step: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let col = (field.gradient(&xp, t) - field.gradient(&xm, t)) / (2.0 * step);
        h.set_column(j, &col);
    }
    h
}

/// Centered finite-difference Jacobian of a vector field.
pub fn fd_jacobian(field: &dyn VectorField, x: &DVector<f64>, step: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let col = (field.value(&xp) - field.value(&xm)) / (2.0 * step);
        jac.set_column(j, &col);
    }
    jac
}
