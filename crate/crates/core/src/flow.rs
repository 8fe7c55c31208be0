//! Varifold pushforward and the time-discrete approximate mean curvature flow.
//!
//! One step pushes V forward by f = Id + Δt·h_ε(·, V). For an atomic
//! varifold this is exact: each atom (x, S, m) maps to
//! (f(x), Df(x)(S), m·J_S f(x)), with Df = I + Δt·∇h_ε frozen from the
//! pre-step varifold. Only h_ε and ∇h_ε at atom positions (and at optional
//! passive tracer points, used to advect partition meshes) are needed.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::fields::ScalarField;
use crate::mollifier::{KernelFields, KernelParams, Mollifier, QuadratureGrid};
use crate::tolerances;
use crate::varifold::{symmetrize, Atom, DiscreteVarifold, GrassmannElement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    /// V(t) = V(tᵢ) on [tᵢ, tᵢ₊₁).
    #[default]
    Piecewise,
    /// V(t) = [Id + (t − tᵢ) h_ε(·, V(tᵢ))]_# V(tᵢ).
    Interpolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Schedule {
    Uniform { dt: f64, end: f64 },
    Nodes { times: Vec<f64> },
}

impl Schedule {
    pub fn uniform(dt: f64, end: f64) -> Self {
        Schedule::Uniform { dt, end }
    }

    /// Subdivision nodes t₀ = 0 < t₁ < … < t_m.
    pub fn times(&self) -> Result<Vec<f64>> {
        let times = match self {
            Schedule::Uniform { dt, end } => {
                if *end == 0.0 {
                    return Ok(vec![0.0]);
                }
                if !(*dt > 0.0 && *end > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "uniform schedule needs dt > 0, end >= 0 (dt = {dt}, end = {end})"
                    )));
                }
                let steps = (end / dt).round();
                if ((steps * dt - end) / end).abs() > 1e-9 {
                    return Err(Error::InvalidConfig(format!("end time {end} is not a multiple of dt = {dt}")));
                }
                let steps = steps as usize;
                (0..=steps).map(|i| if i == steps { *end } else { i as f64 * dt }).collect::<Vec<_>>()
            }
            Schedule::Nodes { times } => times.clone(),
        };
        if times.first() != Some(&0.0) {
            return Err(Error::InvalidConfig("subdivision must start at t = 0".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig("subdivision times must be strictly increasing".into()));
        }
        Ok(times)
    }

    /// δ(𝒯) = maxᵢ (tᵢ − tᵢ₋₁).
    pub fn max_gap(&self) -> Result<f64> {
        Ok(self.times()?.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub eps: f64,
    /// M ≥ 1 with ‖V₀‖(ℝⁿ) ≤ M.
    pub mass_bound: f64,
    pub schedule: Schedule,
    /// c₃ in the step gate c₃ δ(𝒯) ≤ (M+1)⁻³ ε⁸.
    pub gate_constant: f64,
    pub enforce_gate: bool,
    pub kernel: KernelParams,
    pub mode: Interpolation,
    pub record_dissipation: bool,
}

impl FlowConfig {
    pub fn new(eps: f64, mass_bound: f64, schedule: Schedule) -> Self {
        Self {
            eps,
            mass_bound,
            schedule,
            gate_constant: 1.0,
            enforce_gate: true,
            kernel: KernelParams::default(),
            mode: Interpolation::Piecewise,
            record_dissipation: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidConfig(format!("eps = {} must lie in (0, 1)", self.eps)));
        }
        if !(self.mass_bound >= 1.0) {
            return Err(Error::InvalidConfig(format!("mass bound M = {} must be >= 1", self.mass_bound)));
        }
        if !(self.gate_constant > 0.0) {
            return Err(Error::InvalidConfig("gate constant must be positive".into()));
        }
        let times = self.schedule.times()?;
        if *times.last().unwrap() > 1.0 {
            return Err(Error::InvalidConfig("end time must not exceed 1".into()));
        }
        if self.kernel.refinement < 2 {
            return Err(Error::GridTooCoarse(self.kernel.refinement));
        }
        Ok(())
    }

    /// (c₃ δ(𝒯), (M+1)⁻³ ε⁸).
    pub fn gate_sides(&self) -> Result<(f64, f64)> {
        let lhs = self.gate_constant * self.schedule.max_gap()?;
        let rhs = (self.mass_bound + 1.0).powi(-3) * self.eps.powi(8);
        Ok((lhs, rhs))
    }

    pub fn check_gate(&self) -> Result<()> {
        if !self.enforce_gate {
            return Ok(());
        }
        let (lhs, rhs) = self.gate_sides()?;
        if lhs > rhs {
            return Err(Error::GateViolated { lhs, rhs });
        }
        Ok(())
    }

    pub fn mollifier(&self, dim: usize) -> Result<Mollifier> {
        Mollifier::with_params(dim, self.eps, self.kernel)
    }
}

/// J_S f = det(YᵗY)^½ with Y = Df·S̃ᵗ for an orthonormal basis S̃ of S.
pub fn tangential_jacobian(df: &DMatrix<f64>, plane: &GrassmannElement) -> Result<f64> {
    Ok(map_plane(df, plane)?.1)
}

/// Df(S) = Y(YᵗY)⁻¹Yᵗ.
pub fn plane_image(df: &DMatrix<f64>, plane: &GrassmannElement) -> Result<GrassmannElement> {
    Ok(map_plane(df, plane)?.0)
}

/// (Df(S), J_S f) sharing one basis computation.
pub fn map_plane(df: &DMatrix<f64>, plane: &GrassmannElement) -> Result<(GrassmannElement, f64)> {
    let det = df.determinant();
    if !(det.abs() > tolerances::MAP_DETERMINANT_MIN) {
        return Err(Error::SingularMap { det });
    }
    let basis = plane.orthonormal_basis();
    let y = df * basis;
    let gram = y.transpose() * &y;
    let gram_det = gram.determinant();
    let inv = gram.clone().try_inverse().ok_or(Error::SingularMap { det })?;
    let p = symmetrize(&y * inv * y.transpose());
    Ok((GrassmannElement::from_projection_unchecked(p, plane.dim()), gram_det.sqrt()))
}

/// A C¹ map with its differential.
pub trait DiffeoMap: Sync {
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
    fn differential(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// x ↦ A x + b.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineMap {
    pub fn translation(offset: DVector<f64>) -> Self {
        let n = offset.len();
        Self { matrix: DMatrix::identity(n, n), offset }
    }

    pub fn scaling(n: usize, factor: f64) -> Self {
        Self { matrix: DMatrix::identity(n, n) * factor, offset: DVector::zeros(n) }
    }
}

impl DiffeoMap for AffineMap {
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + &self.offset
    }
    fn differential(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }
}

/// x ↦ x + τ X(x).
pub struct DisplacementMap<'a> {
    pub field: &'a dyn crate::fields::VectorField,
    pub tau: f64,
}

impl DiffeoMap for DisplacementMap<'_> {
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        x + self.field.value(x) * self.tau
    }
    fn differential(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        DMatrix::identity(n, n) + self.field.jacobian(x) * self.tau
    }
}

/// f_# V.
pub fn pushforward(v: &DiscreteVarifold, f: &dyn DiffeoMap) -> Result<DiscreteVarifold> {
    let atoms = v
        .atoms()
        .iter()
        .map(|a| {
            let (plane, jac) = map_plane(&f.differential(&a.position), &a.plane)?;
            Ok(Atom { position: f.apply(&a.position), plane, mass: a.mass * jac })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiscreteVarifold::from_atoms_unchecked(v.ambient_dim(), v.dim(), atoms))
}

/// Pushforward by x ↦ x + τ·velocity, with per-atom precomputed (h, ∇h).
fn displace_atoms(
    v: &DiscreteVarifold,
    fields: &[(DVector<f64>, DMatrix<f64>)],
    tau: f64,
    exec: Execution,
) -> Result<(DiscreteVarifold, Vec<f64>)> {
    let n = v.ambient_dim();
    let mapped = exec::try_map_indexed(exec, v.len(), |i| {
        let a = &v.atoms()[i];
        let (h, jh) = &fields[i];
        let df = DMatrix::identity(n, n) + jh * tau;
        let (plane, jac) = map_plane(&df, &a.plane)?;
        Ok::<_, Error>((Atom { position: &a.position + h * tau, plane, mass: a.mass * jac }, jac))
    })?;
    let (atoms, jacs): (Vec<_>, Vec<_>) = mapped.into_iter().unzip();
    Ok((DiscreteVarifold::from_atoms_unchecked(v.ambient_dim(), v.dim(), atoms), jacs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub dt: f64,
    pub mass_before: f64,
    pub mass_after: f64,
    /// ∫ |δV * Φ_ε|²/(‖V‖ * Φ_ε + ε) of the pre-step varifold, if recorded.
    pub dissipation: Option<f64>,
    /// δV(h_ε(·, V)) evaluated from the per-atom fields.
    pub first_variation_of_curvature: f64,
    pub max_curvature: f64,
    pub min_tangential_jacobian: f64,
    pub max_tangential_jacobian_deviation: f64,
    /// ‖f − Id‖_∞ over atoms and tracers.
    pub max_displacement: f64,
    /// ‖det Df − 1‖_∞ over atoms and tracers.
    pub max_volume_jacobian_deviation: f64,
}

/// Per-step data: the pre-step fields at atoms, used for interpolation and
/// residual accounting.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub velocity: Vec<DVector<f64>>,
    pub velocity_jacobian: Vec<DMatrix<f64>>,
    pub diagnostics: StepDiagnostics,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub time: f64,
    pub varifold: DiscreteVarifold,
    /// Passive points advected by the same maps as the atoms.
    pub tracers: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub config: FlowConfig,
    pub snapshots: Vec<Snapshot>,
    /// `steps[i]` maps `snapshots[i]` to `snapshots[i + 1]`.
    pub steps: Vec<StepRecord>,
}

impl FlowTrace {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.varifold.total_mass()).collect()
    }

    pub fn start(&self) -> f64 {
        self.snapshots.first().map(|s| s.time).unwrap_or(0.0)
    }

    pub fn end(&self) -> f64 {
        self.snapshots.last().map(|s| s.time).unwrap_or(0.0)
    }

    pub fn max_gap(&self) -> f64 {
        self.snapshots.windows(2).map(|w| w[1].time - w[0].time).fold(0.0, f64::max)
    }

    pub fn last(&self) -> &DiscreteVarifold {
        &self.snapshots.last().expect("trace has at least one snapshot").varifold
    }

    /// The sub-flow of atoms with indices in `range` (atom order is preserved by the flow).
    pub fn restrict(&self, range: std::ops::Range<usize>) -> FlowTrace {
        FlowTrace {
            config: self.config.clone(),
            snapshots: self
                .snapshots
                .iter()
                .map(|s| Snapshot { time: s.time, varifold: s.varifold.restrict(range.clone()), tracers: Vec::new() })
                .collect(),
            steps: self
                .steps
                .iter()
                .map(|r| StepRecord {
                    velocity: r.velocity.get(range.clone()).map(<[_]>::to_vec).unwrap_or_default(),
                    velocity_jacobian: r.velocity_jacobian.get(range.clone()).map(<[_]>::to_vec).unwrap_or_default(),
                    diagnostics: r.diagnostics.clone(),
                })
                .collect(),
        }
    }

    /// Index i with tᵢ ≤ t < tᵢ₊₁ (the last index when t = t_m).
    fn locate(&self, t: f64) -> Result<usize> {
        let (start, end) = (self.start(), self.end());
        if !(t >= start && t <= end) {
            return Err(Error::OutOfSpan { t, start, end });
        }
        let idx = self.snapshots.partition_point(|s| s.time <= t);
        Ok(idx.saturating_sub(1))
    }
}

/// Output of a single step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub varifold: DiscreteVarifold,
    pub tracers: Vec<DVector<f64>>,
    pub record: StepRecord,
}

/// One step V ↦ (Id + Δt h_ε(·, V))_# V. Checks the gate and the M + 1 mass bound.
pub fn advance(v: &DiscreteVarifold, config: &FlowConfig, dt: f64) -> Result<DiscreteVarifold> {
    config.validate()?;
    config.check_gate()?;
    let mollifier = config.mollifier(v.ambient_dim())?;
    Ok(step(v, &[], config, &mollifier, dt, Execution::default())?.varifold)
}

/// Fields at the tracers; a tracer sitting exactly on an atom reuses that atom's field.
fn tracer_velocities(
    fields: &KernelFields,
    positions: &[DVector<f64>],
    atom_fields: &[(DVector<f64>, DMatrix<f64>)],
    tracers: &[DVector<f64>],
    q: usize,
) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
    let key = |x: &DVector<f64>| x.iter().map(|c| c.to_bits()).collect::<Vec<u64>>();
    let index: HashMap<Vec<u64>, usize> = positions.iter().enumerate().map(|(i, x)| (key(x), i)).collect();
    let hits: Vec<Option<usize>> = tracers.iter().map(|x| index.get(&key(x)).copied()).collect();
    let fresh: Vec<DVector<f64>> = tracers.iter().zip(&hits).filter(|(_, h)| h.is_none()).map(|(x, _)| x.clone()).collect();
    let mut computed = fields.velocity_at(&fresh, q)?.into_iter();
    Ok(hits
        .into_iter()
        .map(|h| match h {
            Some(i) => atom_fields[i].clone(),
            None => computed.next().expect("one field per fresh tracer"),
        })
        .collect())
}

pub(crate) fn step(
    v: &DiscreteVarifold,
    tracers: &[DVector<f64>],
    config: &FlowConfig,
    mollifier: &Mollifier,
    dt: f64,
    exec: Execution,
) -> Result<StepOutcome> {
    let mass_before = v.total_mass();
    let limit = config.mass_bound + 1.0;
    if mass_before > limit {
        return Err(Error::MassBoundExceeded { mass: mass_before, limit });
    }
    let n = v.ambient_dim();
    let q = config.kernel.refinement;
    let fields = KernelFields::new(v, mollifier).with_execution(exec);
    let positions: Vec<DVector<f64>> = v.positions().cloned().collect();
    let atom_fields = fields.velocity_at(&positions, q)?;
    let tracer_fields = tracer_velocities(&fields, &positions, &atom_fields, tracers, q)?;

    let dissipation = if config.record_dissipation {
        Some(fields.dissipation(&QuadratureGrid::covering_support(v, mollifier, q))?)
    } else {
        None
    };
    let first_variation_of_curvature: f64 =
        v.atoms().iter().zip(&atom_fields).map(|(a, (_, jh))| a.mass * a.plane.projection().dot(jh)).sum();

    let (next, jacs) = if dt == 0.0 { (v.clone(), vec![1.0; v.len()]) } else { displace_atoms(v, &atom_fields, dt, exec)? };
    let mut max_vol_dev = 0.0f64;
    for (_, jh) in atom_fields.iter().chain(&tracer_fields) {
        let det = (DMatrix::identity(n, n) + jh * dt).determinant();
        if !(det > tolerances::MAP_DETERMINANT_MIN) {
            return Err(Error::SingularMap { det });
        }
        max_vol_dev = max_vol_dev.max((det - 1.0).abs());
    }
    let new_tracers: Vec<DVector<f64>> = tracers.iter().zip(&tracer_fields).map(|(x, (h, _))| x + h * dt).collect();
    let max_curvature = atom_fields.iter().map(|(h, _)| h.norm()).fold(0.0, f64::max);
    let max_tracer_speed = tracer_fields.iter().map(|(h, _)| h.norm()).fold(0.0, f64::max);

    let diagnostics = StepDiagnostics {
        dt,
        mass_before,
        mass_after: next.total_mass(),
        dissipation,
        first_variation_of_curvature,
        max_curvature,
        min_tangential_jacobian: jacs.iter().copied().fold(f64::INFINITY, f64::min),
        max_tangential_jacobian_deviation: jacs.iter().map(|j| (j - 1.0).abs()).fold(0.0, f64::max),
        max_displacement: dt * max_curvature.max(max_tracer_speed),
        max_volume_jacobian_deviation: max_vol_dev,
    };
    let (velocity, velocity_jacobian) = atom_fields.into_iter().unzip();
    Ok(StepOutcome { varifold: next, tracers: new_tracers, record: StepRecord { velocity, velocity_jacobian, diagnostics } })
}

/// Iterates [`advance`] over the subdivision.
pub fn run(v0: &DiscreteVarifold, config: &FlowConfig) -> Result<FlowTrace> {
    run_with_tracers(v0, &[], config, Execution::default())
}

/// As [`run`], additionally advecting `tracers` by every step map.
pub fn run_with_tracers(
    v0: &DiscreteVarifold,
    tracers: &[DVector<f64>],
    config: &FlowConfig,
    exec: Execution,
) -> Result<FlowTrace> {
    config.validate()?;
    config.check_gate()?;
    let m0 = v0.total_mass();
    if m0 > config.mass_bound {
        return Err(Error::MassBoundExceeded { mass: m0, limit: config.mass_bound });
    }
    let mollifier = config.mollifier(v0.ambient_dim())?;
    let times = config.schedule.times()?;
    let mut snapshots = vec![Snapshot { time: 0.0, varifold: v0.clone(), tracers: tracers.to_vec() }];
    let mut steps = Vec::with_capacity(times.len().saturating_sub(1));
    for w in times.windows(2) {
        let current = snapshots.last().unwrap();
        let out = step(&current.varifold, &current.tracers, config, &mollifier, w[1] - w[0], exec)?;
        steps.push(out.record);
        snapshots.push(Snapshot { time: w[1], varifold: out.varifold, tracers: out.tracers });
    }
    Ok(FlowTrace { config: config.clone(), snapshots, steps })
}

/// V(t) in the requested interpolation mode.
pub fn sample(trace: &FlowTrace, t: f64, mode: Interpolation) -> Result<DiscreteVarifold> {
    let i = trace.locate(t)?;
    let snap = &trace.snapshots[i];
    if t == snap.time || mode == Interpolation::Piecewise || i >= trace.steps.len() {
        return Ok(snap.varifold.clone());
    }
    let rec = &trace.steps[i];
    if rec.velocity.len() != snap.varifold.len() {
        return Err(Error::InvalidConfig("trace carries no per-atom fields for interpolation".into()));
    }
    let fields: Vec<(DVector<f64>, DMatrix<f64>)> =
        rec.velocity.iter().cloned().zip(rec.velocity_jacobian.iter().cloned()).collect();
    Ok(displace_atoms(&snap.varifold, &fields, t - snap.time, Execution::default())?.0)
}

/// δ(V, φ(·, t))(h) + ‖V‖(∂ₜφ(·, t)) with h given per atom.
fn brakke_integrand(v: &DiscreteVarifold, rec: &StepRecord, phi: &dyn ScalarField, t: f64) -> f64 {
    v.atoms()
        .iter()
        .zip(rec.velocity.iter().zip(&rec.velocity_jacobian))
        .map(|(a, (h, jh))| {
            let x = &a.position;
            let div = a.plane.projection().dot(jh);
            a.mass * (phi.value(x, t) * div + phi.gradient(x, t).dot(h) + phi.time_derivative(x, t))
        })
        .sum()
}

/// |‖V(t₂)‖(φ(·,t₂)) − ‖V(t₁)‖(φ(·,t₁)) − ∫δ(V,φ)(h_ε) dt − ∫∫∂ₜφ d‖V‖ dt|
/// on the piecewise-constant flow, time integrals by left-endpoint rectangles.
pub fn brakke_residual(trace: &FlowTrace, phi: &dyn ScalarField, t1: f64, t2: f64) -> Result<f64> {
    if t1 > t2 {
        return Err(Error::OutOfSpan { t: t1, start: trace.start(), end: t2 });
    }
    let i1 = trace.locate(t1)?;
    let i2 = trace.locate(t2)?;
    let end_value = trace.snapshots[i2].varifold.mass_integral(phi, t2);
    let start_value = trace.snapshots[i1].varifold.mass_integral(phi, t1);
    let mut integral = 0.0;
    for i in i1..trace.steps.len() {
        let a = trace.snapshots[i].time.max(t1);
        let b = trace.snapshots[i + 1].time.min(t2);
        if b <= a {
            if trace.snapshots[i].time >= t2 {
                break;
            }
            continue;
        }
        integral += (b - a) * brakke_integrand(&trace.snapshots[i].varifold, &trace.steps[i], phi, a);
    }
    Ok((end_value - start_value - integral).abs())
}

/// ∫₀ᵀ ∫ |δV(t) * Φ_ε|²/(‖V(t)‖ * Φ_ε + ε) dy dt by left rectangles.
/// Steps recorded without dissipation are evaluated on demand.
pub fn dissipation_budget(trace: &FlowTrace) -> Result<f64> {
    let mut total = 0.0;
    for (i, rec) in trace.steps.iter().enumerate() {
        let d = match rec.diagnostics.dissipation {
            Some(d) => d,
            None => {
                let v = &trace.snapshots[i].varifold;
                let m = trace.config.mollifier(v.ambient_dim())?;
                let q = trace.config.kernel.refinement;
                KernelFields::new(v, &m).dissipation(&QuadratureGrid::covering_support(v, &m, q))?
            }
        };
        total += rec.diagnostics.dt * d;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AffineField, Bump, ConstantField, ScalarField};
    use crate::scenarios;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rotation2(th: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()])
    }

    fn loose_config(eps: f64, dt: f64, end: f64, mass_bound: f64) -> FlowConfig {
        let mut c = FlowConfig::new(eps, mass_bound, Schedule::uniform(dt, end));
        c.gate_constant = 1e-12;
        c
    }

    #[test]
    fn tangential_jacobian_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s1 = GrassmannElement::random(3, 1, &mut rng);
        let s2 = GrassmannElement::random(3, 2, &mut rng);
        let id = DMatrix::identity(3, 3);
        assert_abs_diff_eq!(tangential_jacobian(&id, &s1).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tangential_jacobian(&(&id * 2.0), &s1).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tangential_jacobian(&(&id * 2.0), &s2).unwrap(), 4.0, epsilon = 1e-12);
        let r = rotation2(0.7);
        let line = GrassmannElement::random(2, 1, &mut rng);
        assert_abs_diff_eq!(tangential_jacobian(&r, &line).unwrap(), 1.0, epsilon = 1e-12);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(tangential_jacobian(&singular, &line), Err(Error::SingularMap { .. })));
    }

    #[test]
    fn plane_image_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = GrassmannElement::random(2, 1, &mut rng);
        let img = plane_image(&DMatrix::identity(2, 2), &s).unwrap();
        assert_abs_diff_eq!(img.projection().clone(), s.projection().clone(), epsilon = 1e-12);
        let r = rotation2(-1.1);
        let img = plane_image(&r, &s).unwrap();
        assert_abs_diff_eq!(img.projection().clone(), &r * s.projection() * r.transpose(), epsilon = 1e-12);

        // Gram-Schmidt oracle on Df·sᵢ and independence of the basis choice.
        for _ in 0..20 {
            let s = GrassmannElement::random(4, 2, &mut rng);
            let df = DMatrix::identity(4, 4) + DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-0.3..0.3));
            let img = plane_image(&df, &s).unwrap();
            img.validate(&crate::tolerances::Tolerances::default()).unwrap();
            let basis = s.orthonormal_basis();
            let mix = rotation2(rng.gen_range(0.0..6.0));
            let other = &basis * mix;
            let images: Vec<DVector<f64>> = (0..2).map(|i| &df * other.column(i)).collect();
            let oracle = GrassmannElement::from_basis(&images).unwrap();
            assert!((img.projection() - oracle.projection()).amax() <= 1e-10);
        }
    }

    #[test]
    fn pushforward_examples() {
        let v = scenarios::circle(2.0_f64.sqrt() * 0.5, 64, DVector::zeros(2)).unwrap();
        let shift = DVector::from_vec(vec![0.3, -2.0]);
        let moved = pushforward(&v, &AffineMap::translation(shift.clone())).unwrap();
        for (a, b) in v.atoms().iter().zip(moved.atoms()) {
            assert_abs_diff_eq!(&a.position + &shift, b.position.clone(), epsilon = 1e-15);
            assert_abs_diff_eq!(a.plane.projection().clone(), b.plane.projection().clone(), epsilon = 1e-14);
            assert_abs_diff_eq!(a.mass, b.mass, epsilon = 1e-15);
        }
        let doubled = pushforward(&v, &AffineMap::scaling(2, 2.0)).unwrap();
        assert_abs_diff_eq!(doubled.total_mass(), 2.0 * v.total_mass(), epsilon = 1e-12);

        // Two-route evaluation of ‖f_# V‖(φ).
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-0.4..0.4));
        let field = AffineField::new(a, DVector::from_vec(vec![0.1, 0.2]));
        let map = DisplacementMap { field: &field, tau: 0.5 };
        let pushed = pushforward(&v, &map).unwrap();
        let phi = Bump::new(DVector::from_vec(vec![0.2, 0.1]), 1.5, 1.0);
        let direct: f64 = v
            .atoms()
            .iter()
            .map(|at| {
                let df = map.differential(&at.position);
                let b = at.plane.orthonormal_basis();
                let y = &df * b;
                let j = (y.transpose() * &y).determinant().sqrt();
                at.mass * j * phi.value(&map.apply(&at.position), 0.0)
            })
            .sum();
        assert_abs_diff_eq!(pushed.mass_integral(&phi, 0.0), direct, epsilon = 1e-12);
    }

    #[test]
    fn first_variation_matches_pushforward_difference_quotient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let atoms = (0..5)
                .map(|_| {
                    Atom::new(
                        DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)),
                        GrassmannElement::random(2, 1, &mut rng),
                        rng.gen_range(0.1..1.0),
                    )
                    .unwrap()
                })
                .collect();
            let v = DiscreteVarifold::from_atoms(2, 1, atoms).unwrap();
            let field = AffineField::new(
                DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0)),
                DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)),
            );
            let exact = v.first_variation(&field);
            let err = |tau: f64| {
                let pushed = pushforward(&v, &DisplacementMap { field: &field, tau }).unwrap();
                ((pushed.total_mass() - v.total_mass()) / tau - exact).abs()
            };
            let (e4, e5) = (err(1e-4), err(1e-5));
            assert!(e5 < 1e-3, "{e5}");
            // Linear decrease with τ (until roundoff).
            assert!(e5 < 0.2 * e4 || e5 < 1e-8, "e4 = {e4}, e5 = {e5}");

            let phi = Bump::new(DVector::zeros(2), 2.0, 1.0);
            let weighted = v.weighted_first_variation(&phi, &field, 0.0);
            let tau = 1e-5;
            let plus = pushforward(&v, &DisplacementMap { field: &field, tau }).unwrap().mass_integral(&phi, 0.0);
            let minus = pushforward(&v, &DisplacementMap { field: &field, tau: -tau }).unwrap().mass_integral(&phi, 0.0);
            assert_abs_diff_eq!((plus - minus) / (2.0 * tau), weighted, epsilon = 1e-6);
        }
    }

    #[test]
    fn schedule_and_gate() {
        assert_eq!(Schedule::uniform(0.1, 0.0).times().unwrap(), vec![0.0]);
        assert_eq!(Schedule::uniform(0.25, 1.0).times().unwrap().len(), 5);
        assert!(Schedule::uniform(0.3, 1.0).times().is_err());
        assert!(Schedule::Nodes { times: vec![0.0, 0.2, 0.1] }.times().is_err());
        let c = FlowConfig::new(0.1, 1.0, Schedule::uniform(0.01, 0.1));
        assert!(matches!(c.check_gate(), Err(Error::GateViolated { .. })));
        let mut ok = c.clone();
        ok.schedule = Schedule::uniform(1e-12, 1e-11);
        ok.check_gate().unwrap();
        let mut off = c;
        off.enforce_gate = false;
        off.check_gate().unwrap();
    }

    #[test]
    fn advance_examples() {
        let lone = DiscreteVarifold::from_atoms(
            2,
            1,
            vec![Atom::new(DVector::zeros(2), GrassmannElement::line(&DVector::from_vec(vec![1.0, 0.0])).unwrap(), 1.0).unwrap()],
        )
        .unwrap();
        let cfg = loose_config(0.1, 1e-3, 1e-3, 1.0);
        let out = advance(&lone, &cfg, 1e-3).unwrap();
        // A lone atom does not move; it only contracts along its own line.
        assert!((&out.atoms()[0].position - &lone.atoms()[0].position).amax() < 1e-10);
        assert!(out.total_mass() < 1.0);

        let circle = scenarios::circle(1.0, 200, DVector::zeros(2)).unwrap();
        let cfg = loose_config(0.1, 2e-3, 2e-3, 7.0);
        let next = advance(&circle, &cfg, 2e-3).unwrap();
        for (a, b) in circle.atoms().iter().zip(next.atoms()) {
            assert!(b.position.norm() < a.position.norm());
        }
        assert!(next.total_mass() <= circle.total_mass() + 2e-3);

        let heavy = loose_config(0.1, 1e-3, 1e-3, 1.0);
        assert!(matches!(advance(&circle, &heavy, 1e-3), Err(Error::MassBoundExceeded { .. })));
        let strict = FlowConfig::new(0.1, 7.0, Schedule::uniform(1e-3, 1e-3));
        assert!(matches!(advance(&circle, &strict, 1e-3), Err(Error::GateViolated { .. })));
    }

    #[test]
    fn run_and_sample() {
        let circle = scenarios::circle(1.0, 120, DVector::zeros(2)).unwrap();
        let zero = run(&circle, &loose_config(0.2, 0.01, 0.0, 7.0)).unwrap();
        assert_eq!(zero.snapshots.len(), 1);
        assert!(zero.steps.is_empty());

        let trace = run(&circle, &loose_config(0.2, 0.01, 0.05, 7.0)).unwrap();
        assert_eq!(trace.snapshots.len(), 6);
        for w in trace.masses().windows(2).zip(trace.times().windows(2)) {
            assert!(w.0[1] <= w.0[0] + (w.1[1] - w.1[0]));
        }
        for (i, s) in trace.snapshots.iter().enumerate() {
            for mode in [Interpolation::Piecewise, Interpolation::Interpolated] {
                assert_eq!(sample(&trace, s.time, mode).unwrap(), trace.snapshots[i].varifold);
            }
        }
        let mid = 0.025;
        let pw = sample(&trace, mid, Interpolation::Piecewise).unwrap();
        assert_eq!(pw, trace.snapshots[2].varifold);
        let it = sample(&trace, mid, Interpolation::Interpolated).unwrap();
        assert!(it.total_mass() <= trace.snapshots[2].varifold.total_mass() + (mid - 0.02));
        assert!(matches!(sample(&trace, 0.2, Interpolation::Piecewise), Err(Error::OutOfSpan { .. })));
        assert!(matches!(brakke_residual(&trace, &ConstantField(1.0), 0.0, 0.3), Err(Error::OutOfSpan { .. })));

        // Positive Jacobians, approaching 1 as Δt shrinks.
        let fine = run(&circle, &loose_config(0.2, 0.005, 0.05, 7.0)).unwrap();
        let dev = |t: &FlowTrace| t.steps.iter().map(|s| s.diagnostics.max_tangential_jacobian_deviation).fold(0.0, f64::max);
        assert!(trace.steps.iter().all(|s| s.diagnostics.min_tangential_jacobian > 0.0));
        let ratio = dev(&trace) / dev(&fine);
        assert!((1.5..=3.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn degenerate_step_is_identity() {
        let circle = scenarios::circle(1.0, 50, DVector::zeros(2)).unwrap();
        let cfg = loose_config(0.2, 0.01, 0.01, 7.0);
        let m = cfg.mollifier(2).unwrap();
        let out = step(&circle, &[], &cfg, &m, 0.0, Execution::Sequential).unwrap();
        assert_eq!(out.varifold, circle);
    }

    #[test]
    fn flat_interior_is_stationary() {
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let atoms = (0..301)
            .map(|k| {
                let x = DVector::from_vec(vec![-3.0 + 0.02 * k as f64, 0.0]);
                Atom::new(x, GrassmannElement::line(&e1).unwrap(), 0.02).unwrap()
            })
            .collect();
        let line = DiscreteVarifold::from_atoms(2, 1, atoms).unwrap();
        let cfg = loose_config(0.1, 1e-3, 5e-3, 7.0);
        let trace = run(&line, &cfg).unwrap();
        let phi = Bump::new(DVector::zeros(2), 1.0, 1.0);
        assert!(brakke_residual(&trace, &phi, 0.0, 5e-3).unwrap() < 1e-10);
        let recorded = dissipation_budget(&trace).unwrap();
        let mut lazy = trace.clone();
        for s in &mut lazy.steps {
            s.diagnostics.dissipation = None;
        }
        assert_abs_diff_eq!(dissipation_budget(&lazy).unwrap(), recorded, epsilon = 1e-14);
        assert!(recorded > 0.0);
    }
}
