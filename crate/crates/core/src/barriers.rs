//! Sphere barriers ψ(x, t) = γ(|x − a|² + 2dt) and monitors that compare
//! flow traces against them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::fields::ScalarField;
use crate::flow::{FlowTrace, Interpolation};
use crate::mollifier::unit_ball_volume;
use crate::tolerances;
use crate::varifold::{DiscreteVarifold, GrassmannElement};
use crate::verdict::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// γ(r) = (R² − r)^β for r < R²; keeps flows out of the shrinking ball.
    External,
    /// γ(r) = (r − R²)^β for r > R²; keeps flows inside the shrinking ball.
    Internal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierFunction {
    pub center: DVector<f64>,
    pub radius: f64,
    pub beta: f64,
    /// Dimension d of the moving varifold.
    pub dim: usize,
    pub orientation: Orientation,
}

impl BarrierFunction {
    pub fn new(center: DVector<f64>, radius: f64, beta: f64, dim: usize, orientation: Orientation) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidConfig(format!("barrier radius must be positive, got {radius}")));
        }
        if !(beta > 0.0) {
            return Err(Error::InvalidConfig(format!("barrier exponent must be positive, got {beta}")));
        }
        if dim == 0 || dim >= center.len() {
            return Err(Error::InvalidConfig(format!("varifold dimension {dim} invalid in ℝ^{}", center.len())));
        }
        Ok(Self { center, radius, beta, dim, orientation })
    }

    pub fn external(center: DVector<f64>, radius: f64, dim: usize) -> Result<Self> {
        Self::new(center, radius, 4.0, dim, Orientation::External)
    }

    /// ψ and γ are C² when β > 2.
    pub fn is_c2(&self) -> bool {
        self.beta > 2.0
    }

    /// s = R² − r (external) or r − R² (internal), and ds/dr.
    fn base(&self, r: f64) -> (f64, f64) {
        let r2 = self.radius * self.radius;
        match self.orientation {
            Orientation::External => (r2 - r, -1.0),
            Orientation::Internal => (r - r2, 1.0),
        }
    }

    /// γ⁽ᵏ⁾(r) for k = 0..=3.
    pub fn gamma_derivatives(&self, r: f64) -> [f64; 4] {
        let (s, sign) = self.base(r);
        if s <= 0.0 {
            return [0.0; 4];
        }
        let b = self.beta;
        [
            s.powf(b),
            sign * b * s.powf(b - 1.0),
            b * (b - 1.0) * s.powf(b - 2.0),
            sign * b * (b - 1.0) * (b - 2.0) * s.powf(b - 3.0),
        ]
    }

    pub fn gamma(&self, r: f64) -> f64 {
        self.gamma_derivatives(r)[0]
    }

    fn argument(&self, x: &DVector<f64>, t: f64) -> f64 {
        (x - &self.center).norm_squared() + 2.0 * self.dim as f64 * t
    }

    /// max over `samples` radii in the support of (γ′)² − 4γγ″; ≤ 0 means the axiom holds.
    pub fn axiom_violation(&self, samples: usize) -> f64 {
        let r2 = self.radius * self.radius;
        let (lo, hi) = match self.orientation {
            Orientation::External => (0.0, r2),
            Orientation::Internal => (r2, 4.0 * r2 + 4.0),
        };
        (1..samples)
            .map(|i| {
                let r = lo + (hi - lo) * i as f64 / samples as f64;
                let [g, g1, g2, _] = self.gamma_derivatives(r);
                g1 * g1 - 4.0 * g * g2
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Time at which the ball B(a, √(R² − 2dt)) vanishes.
    pub fn extinction_time(&self) -> f64 {
        self.radius * self.radius / (2.0 * self.dim as f64)
    }

    /// √(R² − 2dt), or None after extinction.
    pub fn radius_at(&self, t: f64) -> Option<f64> {
        let r2 = self.radius * self.radius - 2.0 * self.dim as f64 * t;
        (r2 > 0.0).then(|| r2.sqrt())
    }

    /// Sup norms of spacetime derivatives of order 0..=3 of ψ (Frobenius norm
    /// of the derivative tensors in (x, t)) over the support, sampled radially
    /// at t = 0 with spacing R/256 and multiplied by the safety factor. Every
    /// γ⁽ᵏ⁾ is monotone in its argument, so t = 0 realizes the sup.
    pub fn derivative_sups(&self) -> Result<[f64; 4]> {
        if self.orientation != Orientation::External {
            return Err(Error::PreconditionViolated("derivative norms need the compactly supported external barrier".into()));
        }
        let n = self.center.len();
        let m = n + 1;
        let d = self.dim as f64;
        let mut sups = [0.0f64; 4];
        let steps = 256;
        for i in 0..=steps {
            let s = self.radius * i as f64 / steps as f64;
            let [g0, g1, g2, g3] = self.gamma_derivatives(s * s);
            // ρ(x, t) = |x − a|² + 2dt at x − a = s e₁; g = Dρ, H = D²ρ.
            let mut g = vec![0.0; m];
            g[0] = 2.0 * s;
            g[n] = 2.0 * d;
            let h = |i: usize, j: usize| if i == j && i < n { 2.0 } else { 0.0 };
            let first: f64 = g.iter().map(|c| (g1 * c).powi(2)).sum::<f64>().sqrt();
            let mut second = 0.0;
            let mut third = 0.0;
            for i in 0..m {
                for j in 0..m {
                    second += (g2 * g[i] * g[j] + g1 * h(i, j)).powi(2);
                    for k in 0..m {
                        let v = g3 * g[i] * g[j] * g[k] + g2 * (h(i, j) * g[k] + h(i, k) * g[j] + h(j, k) * g[i]);
                        third += v * v;
                    }
                }
            }
            let vals = [g0.abs(), first, second.sqrt(), third.sqrt()];
            for (s, v) in sups.iter_mut().zip(vals) {
                *s = s.max(v);
            }
        }
        Ok(sups.map(|v| v * tolerances::NORM_SAFETY_FACTOR))
    }

    /// ‖ψ‖_{C³}: the sum of the derivative sups.
    pub fn c3_norm(&self) -> Result<f64> {
        Ok(self.derivative_sups()?.iter().sum())
    }

    /// ‖∇ψ(·, 0)‖_{L²(ℝⁿ)} by radial Simpson quadrature, times the safety factor.
    pub fn gradient_l2_norm(&self) -> Result<f64> {
        if self.orientation != Orientation::External {
            return Err(Error::PreconditionViolated("L² norm needs the compactly supported external barrier".into()));
        }
        let n = self.center.len();
        let sphere = n as f64 * unit_ball_volume(n);
        let steps = 256;
        let h = self.radius / steps as f64;
        let f = |s: f64| {
            let g1 = self.gamma_derivatives(s * s)[1];
            4.0 * g1 * g1 * s * s * sphere * s.powi(n as i32 - 1)
        };
        let mut sum = f(0.0) + f(self.radius);
        for i in 1..steps {
            sum += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        Ok((sum * h / 3.0).sqrt() * tolerances::NORM_SAFETY_FACTOR)
    }
}

impl ScalarField for BarrierFunction {
    fn value(&self, x: &DVector<f64>, t: f64) -> f64 {
        self.gamma(self.argument(x, t))
    }
    fn gradient(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        let g1 = self.gamma_derivatives(self.argument(x, t))[1];
        (x - &self.center) * (2.0 * g1)
    }
    fn hessian(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64> {
        let n = x.len();
        let z = x - &self.center;
        let [_, g1, g2, _] = self.gamma_derivatives(self.argument(x, t));
        &z * z.transpose() * (4.0 * g2) + DMatrix::identity(n, n) * (2.0 * g1)
    }
    fn time_derivative(&self, x: &DVector<f64>, t: f64) -> f64 {
        2.0 * self.dim as f64 * self.gamma_derivatives(self.argument(x, t))[1]
    }
}

/// RHS − LHS of −|h|²φ + S⊥∇φ·h ≤ ¼|S∇φ|²/φ + ∇φ·h.
pub fn technical_gap(h: &DVector<f64>, phi: f64, grad_phi: &DVector<f64>, plane: &GrassmannElement) -> Result<f64> {
    if !(phi > 0.0) {
        return Err(Error::NonpositiveWeight(phi));
    }
    let s_grad = plane.project(grad_phi);
    let perp_grad = plane.complement() * grad_phi;
    let lhs = -h.norm_squared() * phi + perp_grad.dot(h);
    let rhs = 0.25 * s_grad.norm_squared() / phi + grad_phi.dot(h);
    Ok(rhs - lhs)
}

/// ¼|S∇ψ|²/ψ − S:∇²ψ + ∂ₜψ at (x, t).
pub fn barrier_defect(psi: &BarrierFunction, x: &DVector<f64>, plane: &GrassmannElement, t: f64) -> Result<f64> {
    let value = psi.value(x, t);
    if value <= tolerances::BARRIER_ZERO {
        return Err(Error::ZeroBarrier(value));
    }
    let s_grad = plane.project(&psi.gradient(x, t));
    let s_hess = plane.projection().dot(&psi.hessian(x, t));
    Ok(0.25 * s_grad.norm_squared() / value - s_hess + psi.time_derivative(x, t))
}

/// Smallest technical gap over `samples` random (h, φ, ∇φ, S) in ℝⁿ with
/// d-planes, φ ∈ [0.1, 10] log-uniform and unit-box vectors; every fourth sample sits on the equality case h = −½S∇φ/φ.
pub fn technical_gap_sweep(n: usize, d: usize, samples: usize, seed: u64, exec: Execution) -> Result<f64> {
    if d == 0 || d >= n {
        return Err(Error::InvalidConfig(format!("plane dimension {d} invalid in ℝ^{n}")));
    }
    let chunk = 4096;
    let parts = exec::try_map_indexed(exec, samples.div_ceil(chunk), |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut min = f64::INFINITY;
        for i in k * chunk..((k + 1) * chunk).min(samples) {
            let s = GrassmannElement::random(n, d, &mut rng);
            let phi = 10f64.powf(rng.gen_range(-1.0..1.0));
            let g = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let h = if i % 4 == 0 { s.project(&g) * (-0.5 / phi) } else { DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)) };
            min = min.min(technical_gap(&h, phi, &g, &s)?);
        }
        Ok::<_, Error>(min)
    })?;
    Ok(parts.into_iter().fold(f64::INFINITY, f64::min))
}

/// Largest barrier defect over a `per_axis`ⁿ grid of the box around B(a, R),
/// `per_axis` times in [0, R²/4d], and `planes` random d-planes. Points with
/// ψ ≤ the zero threshold are skipped.
pub fn barrier_defect_sweep(psi: &BarrierFunction, per_axis: usize, planes: usize, seed: u64, exec: Execution) -> Result<f64> {
    let n = psi.center.len();
    if per_axis < 2 || planes == 0 {
        return Err(Error::InvalidConfig("defect sweep needs at least 2 points per axis and one plane".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let set: Vec<GrassmannElement> = (0..planes).map(|_| GrassmannElement::random(n, psi.dim, &mut rng)).collect();
    let t_max = psi.radius * psi.radius / (4.0 * psi.dim as f64);
    let coord = |i: usize| psi.radius * (2.0 * i as f64 / (per_axis - 1) as f64 - 1.0);
    let nodes = per_axis.pow(n as u32);
    let worst = exec::map_indexed(exec, per_axis, |ti| {
        let t = t_max * ti as f64 / (per_axis - 1) as f64;
        let mut worst = f64::NEG_INFINITY;
        for k in 0..nodes {
            let mut rest = k;
            let x = DVector::from_fn(n, |j, _| {
                let c = psi.center[j] + coord(rest % per_axis);
                rest /= per_axis;
                c
            });
            if psi.value(&x, t) <= tolerances::BARRIER_ZERO {
                continue;
            }
            for s in &set {
                if let Ok(v) = barrier_defect(psi, &x, s, t) {
                    worst = worst.max(v);
                }
            }
        }
        worst
    });
    Ok(worst.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorSample {
    pub time: f64,
    /// Radius of the shrinking sphere, None once it has vanished.
    pub radius: Option<f64>,
    pub value: Option<f64>,
}

fn sphere_radius(r: f64, dim: usize, t: f64) -> Option<f64> {
    let r2 = r * r - 2.0 * dim as f64 * t;
    (r2 > 0.0).then(|| r2.sqrt())
}

/// Mass of V(tᵢ) inside B(a, √(R² − 2dtᵢ)).
pub fn external_sphere_monitor(trace: &FlowTrace, center: &DVector<f64>, radius: f64) -> Vec<MonitorSample> {
    trace
        .snapshots
        .iter()
        .map(|s| {
            let rad = sphere_radius(radius, s.varifold.dim(), s.time);
            let value =
                rad.map(|r| s.varifold.atoms().iter().filter(|a| (&a.position - center).norm() < r).map(|a| a.mass).sum());
            MonitorSample { time: s.time, radius: rad, value }
        })
        .collect()
}

/// maxᵢ |xᵢ − a| − √(R² − 2dt) per snapshot.
pub fn internal_sphere_monitor(trace: &FlowTrace, center: &DVector<f64>, radius: f64) -> Vec<MonitorSample> {
    trace
        .snapshots
        .iter()
        .map(|s| {
            let rad = sphere_radius(radius, s.varifold.dim(), s.time);
            let value = rad.map(|r| {
                let far = s.varifold.positions().map(|x| (x - center).norm()).fold(f64::NEG_INFINITY, f64::max);
                if s.varifold.is_empty() {
                    f64::NEG_INFINITY
                } else {
                    far - r
                }
            });
            MonitorSample { time: s.time, radius: rad, value }
        })
        .collect()
}

/// Distance from `x` to the convex hull of `points` (Wolfe's minimum-norm-point method).
pub fn distance_to_hull(points: &[DVector<f64>], x: &DVector<f64>) -> f64 {
    if points.is_empty() {
        return f64::INFINITY;
    }
    let p: Vec<DVector<f64>> = points.iter().map(|q| q - x).collect();
    min_norm_point(&p).norm()
}

/// Point of minimal norm in conv(p).
pub fn min_norm_point(p: &[DVector<f64>]) -> DVector<f64> {
    let scale = p.iter().map(|q| q.norm_squared()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tol = 1e-28 * scale;
    let start = (0..p.len()).min_by(|&a, &b| p[a].norm_squared().total_cmp(&p[b].norm_squared())).unwrap();
    let mut set = vec![start];
    let mut lambda = vec![1.0];
    let mut x = p[start].clone();
    for _ in 0..1000 {
        if x.norm_squared() <= tol {
            break;
        }
        let (j, best) = (0..p.len()).map(|i| (i, x.dot(&p[i]))).min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        if best >= x.norm_squared() - 1e-12 * x.norm() * scale.sqrt() || set.contains(&j) {
            break;
        }
        set.push(j);
        lambda.push(0.0);
        while let Some(mu) = affine_min_norm(p, &set) {
            if mu.iter().all(|&m| m > 1e-15) {
                if set.len() > p[0].len() {
                    // A full-dimensional simplex with the origin in its interior.
                    return DVector::zeros(p[0].len());
                }
                lambda = mu;
                break;
            }
            let theta = lambda
                .iter()
                .zip(&mu)
                .filter(|(_, m)| **m <= 1e-15)
                .map(|(l, m)| l / (l - m))
                .fold(f64::INFINITY, f64::min)
                .clamp(0.0, 1.0);
            for (l, m) in lambda.iter_mut().zip(&mu) {
                *l += theta * (m - *l);
            }
            let keep: Vec<bool> = lambda.iter().map(|&l| l > 1e-15).collect();
            let mut k = 0;
            set.retain(|_| {
                k += 1;
                keep[k - 1]
            });
            lambda.retain(|&l| l > 1e-15);
            let total: f64 = lambda.iter().sum();
            lambda.iter_mut().for_each(|l| *l /= total);
            if set.len() <= 1 {
                break;
            }
        }
        x = set.iter().zip(&lambda).fold(DVector::zeros(p[0].len()), |acc, (&i, &l)| acc + &p[i] * l);
    }
    x
}

/// Weights μ (Σμ = 1) of the min-norm point of the affine hull of p[set].
fn affine_min_norm(p: &[DVector<f64>], set: &[usize]) -> Option<Vec<f64>> {
    let k = set.len();
    let mut m = DMatrix::zeros(k + 1, k + 1);
    for a in 0..k {
        for b in 0..k {
            m[(a, b)] = p[set[a]].dot(&p[set[b]]);
        }
        m[(a, k)] = 1.0;
        m[(k, a)] = 1.0;
    }
    let mut rhs = DVector::zeros(k + 1);
    rhs[k] = 1.0;
    let sol = m.lu().solve(&rhs)?;
    Some(sol.iter().take(k).copied().collect())
}

/// Per snapshot, the largest distance of an atom to conv(supp ‖V₀‖).
pub fn convex_hull_monitor(trace: &FlowTrace) -> Vec<f64> {
    let initial: Vec<DVector<f64>> = trace.snapshots[0].varifold.positions().cloned().collect();
    trace.snapshots.iter().map(|s| s.varifold.positions().map(|x| distance_to_hull(&initial, x)).fold(0.0, f64::max)).collect()
}

fn min_distance(a: &DiscreteVarifold, b: &DiscreteVarifold) -> f64 {
    a.positions().flat_map(|x| b.positions().map(move |y| (x - y).norm())).fold(f64::INFINITY, f64::min)
}

/// Minimal atom distance between two flows at each common time.
pub fn avoidance_distance(a: &FlowTrace, b: &FlowTrace) -> Result<Vec<f64>> {
    if a.times() != b.times() {
        return Err(Error::GridMismatch);
    }
    Ok(a.snapshots.iter().zip(&b.snapshots).map(|(s, t)| min_distance(&s.varifold, &t.varifold)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LscReport {
    pub constant: f64,
    /// ‖V(tᵢ)‖(ψ) − C tᵢ.
    pub values: Vec<f64>,
    pub max_increase: f64,
    pub slack: f64,
    pub pass: bool,
}

/// Checks that tᵢ ↦ ‖V(tᵢ)‖(ψ) − C tᵢ is nonincreasing up to `tol`·δ per step,
/// with C = ‖∇²ψ‖_∞ ‖V₀‖(ℝⁿ) unless `constant` is given.
pub fn lsc_monitor(trace: &FlowTrace, psi: &dyn ScalarField, constant: Option<f64>, tol: f64) -> Result<LscReport> {
    let c = match constant {
        Some(c) => c,
        None => {
            let h =
                psi.hessian_sup().ok_or_else(|| Error::PreconditionViolated("test function declares no Hessian bound".into()))?;
            h * trace.snapshots[0].varifold.total_mass()
        }
    };
    let values: Vec<f64> = trace.snapshots.iter().map(|s| s.varifold.mass_integral(psi, s.time) - c * s.time).collect();
    let max_increase = values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let slack = tol * trace.max_gap();
    let pass = values.len() < 2 || max_increase <= slack;
    Ok(LscReport { constant: c, values, max_increase, slack, pass })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateParams {
    /// c₅ in c₅ δ(𝒯) ε⁻⁸ ≤ ε.
    pub c5: f64,
    /// Upper limit ε₀ for ε.
    pub eps0: f64,
}

impl Default for CertificateParams {
    fn default() -> Self {
        Self { c5: 1.0, eps0: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierCertificate {
    pub c3_norm: f64,
    pub gradient_l2: f64,
    pub c: f64,
    pub c7: f64,
    pub bound: f64,
    /// max over t₁ ≤ t₂ of ‖V(t₂)‖(ψ(·,t₂)) − ‖V(t₁)‖(ψ(·,t₁)).
    pub max_increase: f64,
    pub worst_pair: (f64, f64),
    pub pass: bool,
}

impl BarrierCertificate {
    pub fn verdict(&self) -> Verdict {
        Verdict::new(
            "eps-sphere-barrier",
            "epsilon sphere barrier: psi-mass increase <= c7 eps^(1/6)",
            self.bound,
            self.max_increase,
            self.pass,
        )
    }
}

/// ψ-mass increase along a piecewise trace versus c₇ ε^{1/6},
/// c₇ = c(10M + 9), c = 2 max{‖ψ‖_{C³}, ‖∇ψ‖_{L²}, 1}.
pub fn epsilon_barrier_certificate(
    trace: &FlowTrace,
    psi: &BarrierFunction,
    params: &CertificateParams,
) -> Result<BarrierCertificate> {
    let cfg = &trace.config;
    let eps = cfg.eps;
    if cfg.mode != Interpolation::Piecewise {
        return Err(Error::PreconditionViolated("trace must use the piecewise mode".into()));
    }
    let delta = trace.max_gap();
    let lhs = params.c5 * delta * eps.powi(-8);
    if lhs > eps {
        return Err(Error::PreconditionViolated(format!("c5·δ·ε⁻⁸ = {lhs:e} exceeds ε = {eps}")));
    }
    if !(eps < params.eps0) {
        return Err(Error::PreconditionViolated(format!("ε = {eps} is not below ε₀ = {}", params.eps0)));
    }
    let c3_norm = psi.c3_norm()?;
    let gradient_l2 = psi.gradient_l2_norm()?;
    let c = 2.0 * c3_norm.max(gradient_l2).max(1.0);
    let c7 = c * (10.0 * cfg.mass_bound + 9.0);
    let bound = c7 * eps.powf(1.0 / 6.0);

    let mut max_increase = f64::NEG_INFINITY;
    let mut worst_pair = (0.0, 0.0);
    let mut running_min = (f64::INFINITY, 0.0);
    for s in &trace.snapshots {
        let value = s.varifold.mass_integral(psi, s.time);
        if value < running_min.0 {
            running_min = (value, s.time);
        }
        if value - running_min.0 > max_increase {
            max_increase = value - running_min.0;
            worst_pair = (running_min.1, s.time);
        }
    }
    Ok(BarrierCertificate { c3_norm, gradient_l2, c, c7, bound, max_increase, worst_pair, pass: max_increase <= bound })
}
