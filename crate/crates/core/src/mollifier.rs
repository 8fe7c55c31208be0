//! The smoothing kernel Φ_ε and the regularized curvature h_ε.
//!
//! For an atomic varifold V = Σ mᵢ δ_{(xᵢ, Sᵢ)}:
//!
//! ```text
//! (‖V‖ * Φ_ε)(y)  = Σ mᵢ Φ_ε(y − xᵢ)
//! (δV * Φ_ε)(y)   = −Σ mᵢ Sᵢ ∇Φ_ε(y − xᵢ)
//! h̃_ε(y)          = −(δV * Φ_ε)(y) / ((‖V‖ * Φ_ε)(y) + ε)
//! h_ε(x)          = ∫ Φ_ε(x − y) h̃_ε(y) dy
//! ```
//!
//! The inner convolutions are exact sums over atoms found through a spatial
//! hash (the kernel has compact support). The outer convolution is a
//! tensor-grid quadrature of spacing ε/q centered at the query point.
//!
//! Kernel: Φ_ε(z) = c ε⁻ⁿ exp(−|z|²/2ε²) (1 − |z|²/(kε)²)³ for |z| < kε,
//! zero outside, with c fixed numerically so that ∫Φ_ε = 1. The cutoff
//! factor vanishes to third order at the boundary, so Φ_ε is C².

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::fields::VectorField;
use crate::spatial::SpatialHash;
use crate::varifold::DiscreteVarifold;

/// Volume of the unit ball in ℝⁿ.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => std::f64::consts::TAU / n as f64 * unit_ball_volume(n - 2),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelParams {
    /// Support radius in units of ε.
    pub cutoff: f64,
    /// Quadrature refinement q (spacing ε/q).
    pub refinement: usize,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self { cutoff: 4.0, refinement: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mollifier {
    dim: usize,
    eps: f64,
    cutoff: f64,
    /// c ε⁻ⁿ.
    scale: f64,
}

impl Mollifier {
    pub fn new(dim: usize, eps: f64, cutoff: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidKernel(format!("eps = {eps} must lie in (0, 1)")));
        }
        if !(cutoff >= 3.0 && cutoff.is_finite()) {
            return Err(Error::InvalidKernel(format!("cutoff multiple {cutoff} must be >= 3")));
        }
        if dim == 0 {
            return Err(Error::InvalidKernel("ambient dimension must be positive".into()));
        }
        let c = 1.0 / (dim as f64 * unit_ball_volume(dim) * radial_moment(dim, cutoff));
        Ok(Self { dim, eps, cutoff, scale: c * eps.powi(-(dim as i32)) })
    }

    pub fn with_params(dim: usize, eps: f64, params: KernelParams) -> Result<Self> {
        Self::new(dim, eps, params.cutoff)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// k ε.
    pub fn support_radius(&self) -> f64 {
        self.cutoff * self.eps
    }

    /// c ε⁻ⁿ, the value Φ_ε(0).
    pub fn peak(&self) -> f64 {
        self.scale
    }

    /// (G(u), G'(u)) with u = |z|²/ε², Φ_ε(z) = scale·G(u).
    #[inline]
    fn profile(&self, u: f64) -> (f64, f64) {
        let k2 = self.cutoff * self.cutoff;
        let a = 1.0 - u / k2;
        if a <= 0.0 {
            return (0.0, 0.0);
        }
        let e = (-0.5 * u).exp();
        let a2 = a * a;
        (e * a2 * a, e * (-0.5 * a2 * a - 3.0 / k2 * a2))
    }

    #[inline]
    fn profile_second(&self, u: f64) -> f64 {
        let k2 = self.cutoff * self.cutoff;
        let a = 1.0 - u / k2;
        if a <= 0.0 {
            return 0.0;
        }
        (-0.5 * u).exp() * (0.25 * a * a * a + 3.0 / k2 * a * a + 6.0 / (k2 * k2) * a)
    }

    #[inline]
    pub fn value(&self, z: &[f64]) -> f64 {
        let u = z.iter().map(|c| c * c).sum::<f64>() / (self.eps * self.eps);
        self.scale * self.profile(u).0
    }

    /// Writes ∇Φ_ε(z) into `grad` and returns Φ_ε(z).
    #[inline]
    pub fn value_and_gradient(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let inv_e2 = 1.0 / (self.eps * self.eps);
        let u = z.iter().map(|c| c * c).sum::<f64>() * inv_e2;
        let (g, dg) = self.profile(u);
        let f = self.scale * dg * 2.0 * inv_e2;
        for (o, c) in grad.iter_mut().zip(z) {
            *o = f * c;
        }
        self.scale * g
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(z.len());
        self.value_and_gradient(z.as_slice(), g.as_mut_slice());
        g
    }

    pub fn hessian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let n = z.len();
        let inv_e2 = 1.0 / (self.eps * self.eps);
        let u = z.norm_squared() * inv_e2;
        let (_, dg) = self.profile(u);
        let d2g = self.profile_second(u);
        z * z.transpose() * (self.scale * d2g * 4.0 * inv_e2 * inv_e2)
            + DMatrix::identity(n, n) * (self.scale * dg * 2.0 * inv_e2)
    }
}

/// ∫₀ᵏ sⁿ⁻¹ g(s) ds by composite Simpson.
fn radial_moment(n: usize, k: f64) -> f64 {
    let g = |s: f64| {
        let a = 1.0 - (s / k).powi(2);
        if a <= 0.0 {
            0.0
        } else {
            s.powi(n as i32 - 1) * (-0.5 * s * s).exp() * a * a * a
        }
    };
    let m = 20_000;
    let h = k / m as f64;
    let mut acc = g(0.0) + g(k);
    for i in 1..m {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
    }
    acc * h / 3.0
}

/// Axis-aligned node set `center + η·k`, |kₐ| ≤ half_nodes[a], with equal weights ηⁿ.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    center: Vec<f64>,
    spacing: f64,
    refinement: usize,
    half_nodes: Vec<usize>,
}

impl QuadratureGrid {
    /// Smallest grid of spacing ε/q centered at `center` that covers B(center, radius).
    pub fn ball(center: &[f64], radius: f64, eps: f64, refinement: usize) -> Self {
        let spacing = eps / refinement.max(1) as f64;
        let k = (radius / spacing).ceil() as usize;
        Self { center: center.to_vec(), spacing, refinement, half_nodes: vec![k; center.len()] }
    }

    /// Grid of spacing ε/q covering the box [lo, hi].
    pub fn bounding_box(lo: &[f64], hi: &[f64], eps: f64, refinement: usize) -> Self {
        let spacing = eps / refinement.max(1) as f64;
        let center: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let half_nodes = lo.iter().zip(hi).map(|(a, b)| (0.5 * (b - a) / spacing).ceil() as usize).collect();
        Self { center, spacing, refinement, half_nodes }
    }

    /// Grid covering the support of ‖V‖ * Φ_ε.
    pub fn covering_support(v: &DiscreteVarifold, mollifier: &Mollifier, refinement: usize) -> Self {
        let n = v.ambient_dim();
        let r = mollifier.support_radius();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for x in v.positions() {
            for a in 0..n {
                lo[a] = lo[a].min(x[a] - r);
                hi[a] = hi[a].max(x[a] + r);
            }
        }
        if v.is_empty() {
            lo = vec![0.0; n];
            hi = vec![0.0; n];
        }
        Self::bounding_box(&lo, &hi, mollifier.eps(), refinement)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn refinement(&self) -> usize {
        self.refinement
    }

    pub fn weight(&self) -> f64 {
        self.spacing.powi(self.dim() as i32)
    }

    pub fn node_count(&self) -> usize {
        self.half_nodes.iter().map(|k| 2 * k + 1).product()
    }

    /// Volume of the union of the cells around the nodes.
    pub fn covered_volume(&self) -> f64 {
        self.half_nodes.iter().map(|&k| (2 * k + 1) as f64 * self.spacing).product()
    }

    pub fn total_weight(&self) -> f64 {
        self.node_count() as f64 * self.weight()
    }

    /// Writes node `index` into `out`.
    #[inline]
    pub fn node_into(&self, index: usize, out: &mut [f64]) {
        let mut rem = index;
        for a in 0..self.dim() {
            let width = 2 * self.half_nodes[a] + 1;
            let k = (rem % width) as f64 - self.half_nodes[a] as f64;
            rem /= width;
            out[a] = self.center[a] + k * self.spacing;
        }
    }

    pub fn node(&self, index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.node_into(index, &mut out);
        out
    }

    /// Whether the node box contains B(x, r).
    pub fn covers_ball(&self, x: &[f64], r: f64) -> bool {
        let slack = 1e-9 * self.spacing;
        (0..self.dim()).all(|a| (x[a] - self.center[a]).abs() + r <= self.half_nodes[a] as f64 * self.spacing + slack)
    }

    fn check_refinement(&self) -> Result<()> {
        if self.refinement < 2 {
            return Err(Error::GridTooCoarse(self.refinement));
        }
        Ok(())
    }
}

/// Flattened view of a varifold together with a neighbor index, for
/// repeated kernel-field evaluation on one snapshot.
#[derive(Debug, Clone)]
pub struct KernelFields {
    mollifier: Mollifier,
    dim: usize,
    positions: Vec<f64>,
    masses: Vec<f64>,
    projections: Vec<f64>,
    hash: SpatialHash,
    exec: Execution,
}

impl KernelFields {
    pub fn new(v: &DiscreteVarifold, mollifier: &Mollifier) -> Self {
        let n = v.ambient_dim();
        assert_eq!(n, mollifier.dim(), "kernel and varifold dimensions differ");
        let mut positions = Vec::with_capacity(v.len() * n);
        let mut masses = Vec::with_capacity(v.len());
        let mut projections = Vec::with_capacity(v.len() * n * n);
        for a in v.atoms() {
            positions.extend_from_slice(a.position.as_slice());
            masses.push(a.mass);
            projections.extend_from_slice(a.plane.projection().as_slice());
        }
        let hash = SpatialHash::with_reach(n, &positions, mollifier.support_radius(), if n <= 3 { 2 } else { 1 });
        Self { mollifier: mollifier.clone(), dim: n, positions, masses, projections, hash, exec: Execution::default() }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn mollifier(&self) -> &Mollifier {
        &self.mollifier
    }

    pub fn atom_count(&self) -> usize {
        self.masses.len()
    }

    /// Returns (‖V‖ * Φ_ε)(y) and writes (δV * Φ_ε)(y) into `w`.
    pub fn smoothed_pair(&self, y: &[f64], w: &mut [f64], scratch: &mut Vec<usize>) -> f64 {
        self.hash.candidates(y, scratch);
        self.accumulate(y, w, scratch).0
    }

    /// Kernel sums over the atoms in `indices` (which must include every atom
    /// within the support radius of `y`). Also returns how many contributed.
    fn accumulate(&self, y: &[f64], w: &mut [f64], indices: &[usize]) -> (f64, usize) {
        let n = self.dim;
        let r2 = self.mollifier.support_radius().powi(2);
        w.iter_mut().for_each(|c| *c = 0.0);
        let mut rho = 0.0;
        let mut hits = 0;
        let mut z = [0.0f64; 8];
        let mut g = [0.0f64; 8];
        let mut zv = vec![0.0; if n > 8 { n } else { 0 }];
        let mut gv = vec![0.0; if n > 8 { n } else { 0 }];
        for &i in indices {
            let xi = &self.positions[i * n..(i + 1) * n];
            let (z, g) = if n <= 8 { (&mut z[..n], &mut g[..n]) } else { (&mut zv[..], &mut gv[..]) };
            let mut d2 = 0.0;
            for a in 0..n {
                z[a] = y[a] - xi[a];
                d2 += z[a] * z[a];
            }
            if d2 >= r2 {
                continue;
            }
            hits += 1;
            let m = self.masses[i];
            rho += m * self.mollifier.value_and_gradient(z, g);
            // w −= m S ∇Φ; S is symmetric and stored column-major.
            let s = &self.projections[i * n * n..(i + 1) * n * n];
            for (col, &gc) in g.iter().enumerate() {
                if gc == 0.0 {
                    continue;
                }
                let sc = &s[col * n..(col + 1) * n];
                for a in 0..n {
                    w[a] -= m * sc[a] * gc;
                }
            }
        }
        (rho, hits)
    }

    pub fn smoothed_mass(&self, y: &[f64]) -> f64 {
        let mut w = vec![0.0; self.dim];
        self.smoothed_pair(y, &mut w, &mut Vec::new())
    }

    pub fn smoothed_first_variation(&self, y: &[f64]) -> DVector<f64> {
        let mut w = DVector::zeros(self.dim);
        self.smoothed_pair(y, w.as_mut_slice(), &mut Vec::new());
        w
    }

    /// Writes h̃_ε(y) into `out`; returns false when it vanishes identically
    /// (no atom within the kernel support).
    fn h_tilde_into(&self, y: &[f64], out: &mut [f64], indices: &[usize]) -> bool {
        let (rho, hits) = self.accumulate(y, out, indices);
        if hits == 0 {
            return false;
        }
        let denom = rho + self.mollifier.eps();
        out.iter_mut().for_each(|c| *c = -*c / denom);
        true
    }

    pub fn h_tilde(&self, y: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        let mut near = Vec::new();
        self.hash.candidates(y, &mut near);
        self.h_tilde_into(y, out.as_mut_slice(), &near);
        out
    }

    /// h_ε(x) and, when requested, its Jacobian (∂hᵢ/∂xⱼ).
    pub fn h_eps_on_grid(
        &self,
        x: &[f64],
        grid: &QuadratureGrid,
        with_jacobian: bool,
    ) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        grid.check_refinement()?;
        let n = self.dim;
        let r = self.mollifier.support_radius();
        if grid.dim() != n || !grid.covers_ball(x, r) {
            return Err(Error::GridDoesNotCover);
        }
        let weight = grid.weight();
        let r2 = r * r;
        let mut h = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, n);
        let mut y = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut gphi = vec![0.0; n];
        let mut ht = vec![0.0; n];
        // Every node used lies within r of x, so its atoms lie within 2r of x.
        let mut near = Vec::new();
        self.hash.candidates_within(x, 2.0 * r, &mut near);
        near.retain(|&i| {
            let xi = &self.positions[i * n..(i + 1) * n];
            xi.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() < 4.0 * r2
        });
        for idx in 0..grid.node_count() {
            grid.node_into(idx, &mut y);
            let mut d2 = 0.0;
            for a in 0..n {
                z[a] = x[a] - y[a];
                d2 += z[a] * z[a];
            }
            if d2 >= r2 {
                continue;
            }
            if !self.h_tilde_into(&y, &mut ht, &near) {
                continue;
            }
            let phi = self.mollifier.value_and_gradient(&z, &mut gphi) * weight;
            for a in 0..n {
                h[a] += phi * ht[a];
            }
            if with_jacobian {
                for j in 0..n {
                    let gj = gphi[j] * weight;
                    for i in 0..n {
                        jac[(i, j)] += gj * ht[i];
                    }
                }
            }
        }
        Ok((h, with_jacobian.then_some(jac)))
    }

    /// h_ε(x) and ∇h_ε(x) with a grid of refinement `q` centered at `x`.
    pub fn h_eps_with_jacobian(&self, x: &[f64], refinement: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let grid = QuadratureGrid::ball(x, self.mollifier.support_radius(), self.mollifier.eps(), refinement);
        let (h, j) = self.h_eps_on_grid(x, &grid, true)?;
        Ok((h, j.expect("jacobian requested")))
    }

    /// h_ε and ∇h_ε at many points, evaluated independently per point.
    pub fn velocity_at(&self, points: &[DVector<f64>], refinement: usize) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
        exec::try_map_indexed(self.exec, points.len(), |i| self.h_eps_with_jacobian(points[i].as_slice(), refinement))
    }

    /// ∫ |δV * Φ_ε|² / (‖V‖ * Φ_ε + ε) dy over `grid`.
    pub fn dissipation(&self, grid: &QuadratureGrid) -> Result<f64> {
        grid.check_refinement()?;
        if grid.dim() != self.dim {
            return Err(Error::GridDoesNotCover);
        }
        let r = self.mollifier.support_radius();
        for i in 0..self.atom_count() {
            if !grid.covers_ball(&self.positions[i * self.dim..(i + 1) * self.dim], r) {
                return Err(Error::GridDoesNotCover);
            }
        }
        let eps = self.mollifier.eps();
        let n = self.dim;
        let sum = exec::chunked_sum(self.exec, grid.node_count(), 2048, |idx| {
            thread_local! {
                static BUF: std::cell::RefCell<(Vec<f64>, Vec<f64>, Vec<usize>)> =
                    const { std::cell::RefCell::new((Vec::new(), Vec::new(), Vec::new())) };
            }
            BUF.with(|b| {
                let (y, w, scratch) = &mut *b.borrow_mut();
                y.resize(n, 0.0);
                w.resize(n, 0.0);
                grid.node_into(idx, y);
                self.hash.candidates(y, scratch);
                let (rho, hits) = self.accumulate(y, w, scratch);
                if hits == 0 {
                    return 0.0;
                }
                w.iter().map(|c| c * c).sum::<f64>() / (rho + eps)
            })
        });
        Ok(sum * grid.weight())
    }
}

/// h_ε(·, V) as a vector field, with per-query centered quadrature.
#[derive(Debug, Clone)]
pub struct CurvatureField {
    pub fields: KernelFields,
    pub refinement: usize,
}

impl CurvatureField {
    pub fn new(v: &DiscreteVarifold, mollifier: &Mollifier, refinement: usize) -> Self {
        Self { fields: KernelFields::new(v, mollifier), refinement }
    }
}

impl VectorField for CurvatureField {
    fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        self.fields.h_eps_with_jacobian(x.as_slice(), self.refinement).expect("valid curvature grid").0
    }
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.fields.h_eps_with_jacobian(x.as_slice(), self.refinement).expect("valid curvature grid").1
    }
}

/// (‖V‖ * Φ_ε)(y).
pub fn smoothed_mass(v: &DiscreteVarifold, mollifier: &Mollifier, y: &DVector<f64>) -> f64 {
    KernelFields::new(v, mollifier).smoothed_mass(y.as_slice())
}

/// (δV * Φ_ε)(y) = −Σ mᵢ Sᵢ ∇Φ_ε(y − xᵢ).
pub fn smoothed_first_variation(v: &DiscreteVarifold, mollifier: &Mollifier, y: &DVector<f64>) -> DVector<f64> {
    KernelFields::new(v, mollifier).smoothed_first_variation(y.as_slice())
}

/// h̃_ε(y, V).
pub fn h_tilde(v: &DiscreteVarifold, mollifier: &Mollifier, y: &DVector<f64>) -> DVector<f64> {
    KernelFields::new(v, mollifier).h_tilde(y.as_slice())
}

/// h_ε(x, V) by quadrature on `grid`, which must cover B(x, kε).
pub fn h_eps(v: &DiscreteVarifold, mollifier: &Mollifier, grid: &QuadratureGrid, x: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(KernelFields::new(v, mollifier).h_eps_on_grid(x.as_slice(), grid, false)?.0)
}

/// ∇h_ε(x, V), (∂hᵢ/∂xⱼ)ᵢⱼ.
pub fn grad_h_eps(v: &DiscreteVarifold, mollifier: &Mollifier, grid: &QuadratureGrid, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    Ok(KernelFields::new(v, mollifier).h_eps_on_grid(x.as_slice(), grid, true)?.1.expect("jacobian requested"))
}

/// ∫ |δV * Φ_ε|² / (‖V‖ * Φ_ε + ε) dy, which equals −δV(h_ε(·, V)).
pub fn dissipation(v: &DiscreteVarifold, mollifier: &Mollifier, domain: &QuadratureGrid) -> Result<f64> {
    KernelFields::new(v, mollifier).dissipation(domain)
}
