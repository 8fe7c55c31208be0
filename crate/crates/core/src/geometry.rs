//! Closed boundary meshes of open partitions in ℝ² and ℝ³, enclosed and
//! clipped volumes, and the volume-change and nontriviality certificates.
//!
//! Orientation: a segment a → b has its `inner` region on the left; a
//! triangle (a, b, c) has its `inner` region opposite to (b − a) × (c − a).
//! Label 0 is reserved for the unbounded region.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::flow::FlowTrace;
use crate::mollifier::unit_ball_volume;
use crate::spatial::SpatialHash;
use crate::tolerances;
use crate::varifold::{Atom, DiscreteVarifold, GrassmannElement};
use crate::verdict::Verdict;

pub const UNBOUNDED: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMesh {
    dim: usize,
    vertices: Vec<DVector<f64>>,
    simplices: Vec<Vec<usize>>,
    /// [inner, outer] region label per simplex.
    labels: Vec<[usize; 2]>,
}

impl SurfaceMesh {
    pub fn new(vertices: Vec<DVector<f64>>, simplices: Vec<Vec<usize>>, labels: Vec<[usize; 2]>) -> Result<Self> {
        let dim = vertices.first().map(|v| v.len()).unwrap_or(2);
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidConfig(format!("meshes live in ℝ² or ℝ³, got ℝ^{dim}")));
        }
        if let Some(v) = vertices.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: v.len() });
        }
        if vertices.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinitePosition);
        }
        if simplices.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: simplices.len(), found: labels.len() });
        }
        for (i, s) in simplices.iter().enumerate() {
            if s.len() != dim || s.iter().any(|&k| k >= vertices.len()) {
                return Err(Error::OpenMesh(format!("simplex {i} has invalid vertex indices")));
            }
        }
        Ok(Self { dim, vertices, simplices, labels })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    pub fn simplices(&self) -> &[Vec<usize>] {
        &self.simplices
    }

    pub fn labels(&self) -> &[[usize; 2]] {
        &self.labels
    }

    /// Bounded region labels present in the mesh, sorted.
    pub fn regions(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.labels.iter().flatten().copied().filter(|&l| l != UNBOUNDED).collect();
        r.sort_unstable();
        r.dedup();
        r
    }

    /// Same connectivity, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<DVector<f64>>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch { expected: self.vertices.len(), found: vertices.len() });
        }
        Self::new(vertices, self.simplices.clone(), self.labels.clone())
    }

    /// Orientation-reversed copy (inner and outer swapped).
    pub fn reversed(&self) -> Self {
        let mut m = self.clone();
        for s in &mut m.simplices {
            s.swap(0, 1);
        }
        m
    }

    /// Closed with consistent orientation: in ℝ² every vertex used has one
    /// outgoing and one incoming segment; in ℝ³ every directed edge is matched
    /// by its reverse exactly once.
    pub fn check_closed(&self) -> Result<()> {
        if self.simplices.is_empty() {
            return Err(Error::OpenMesh("mesh has no simplices".into()));
        }
        if self.dim == 2 {
            let mut out = vec![0usize; self.vertices.len()];
            let mut inc = vec![0usize; self.vertices.len()];
            for s in &self.simplices {
                out[s[0]] += 1;
                inc[s[1]] += 1;
            }
            for v in 0..self.vertices.len() {
                if out[v] + inc[v] > 0 && (out[v] != 1 || inc[v] != 1) {
                    return Err(Error::OpenMesh(format!("vertex {v} has {} outgoing and {} incoming segments", out[v], inc[v])));
                }
            }
        } else {
            let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
            for s in &self.simplices {
                for k in 0..3 {
                    *edges.entry((s[k], s[(k + 1) % 3])).or_default() += 1;
                }
            }
            for (&(a, b), &count) in &edges {
                if count != 1 || edges.get(&(b, a)) != Some(&1) {
                    return Err(Error::OpenMesh(format!("edge ({a}, {b}) is not shared by exactly two triangles")));
                }
            }
        }
        Ok(())
    }

    fn simplex_points(&self, i: usize) -> Vec<&DVector<f64>> {
        self.simplices[i].iter().map(|&k| &self.vertices[k]).collect()
    }

    /// Length or area of simplex `i`.
    pub fn simplex_measure(&self, i: usize) -> f64 {
        let p = self.simplex_points(i);
        if self.dim == 2 {
            (p[1] - p[0]).norm()
        } else {
            let a = Vector3::from_iterator((p[1] - p[0]).iter().copied());
            let b = Vector3::from_iterator((p[2] - p[0]).iter().copied());
            0.5 * a.cross(&b).norm()
        }
    }

    pub fn total_measure(&self) -> f64 {
        (0..self.simplices.len()).map(|i| self.simplex_measure(i)).sum()
    }

    /// (1/n) det[v₀ … v_{n−1}], the signed cone volume over simplex `i`.
    fn cone_volume(&self, i: usize) -> f64 {
        let p = self.simplex_points(i);
        if self.dim == 2 {
            0.5 * (p[0][0] * p[1][1] - p[1][0] * p[0][1])
        } else {
            let m = DMatrix::from_columns(&[p[0].clone(), p[1].clone(), p[2].clone()]);
            m.determinant() / 6.0
        }
    }

    /// ℒⁿ of region `label` by the divergence theorem.
    pub fn region_volume(&self, label: usize) -> Result<f64> {
        self.check_closed()?;
        Ok((0..self.simplices.len())
            .map(|i| {
                let [inner, outer] = self.labels[i];
                let c = self.cone_volume(i);
                (if inner == label { c } else { 0.0 }) - (if outer == label { c } else { 0.0 })
            })
            .sum())
    }

    /// Winding number of the boundary of region `label` around `x`.
    pub fn winding_number(&self, label: usize, x: &[f64]) -> f64 {
        let mut w = 0.0;
        for (i, s) in self.simplices.iter().enumerate() {
            let [inner, outer] = self.labels[i];
            let sign = (inner == label) as i32 - (outer == label) as i32;
            if sign == 0 {
                continue;
            }
            let contribution = if self.dim == 2 {
                crossing(&self.vertices[s[0]], &self.vertices[s[1]], x)
            } else {
                solid_angle(&self.vertices[s[0]], &self.vertices[s[1]], &self.vertices[s[2]], x) / (4.0 * PI)
            };
            w += sign as f64 * contribution;
        }
        w
    }

    pub fn contains(&self, label: usize, x: &[f64]) -> bool {
        self.winding_number(label, x) > 0.5
    }

    /// Smallest distance from `x` to the mesh.
    pub fn distance_to(&self, x: &DVector<f64>) -> f64 {
        (0..self.simplices.len())
            .map(|i| {
                let p = self.simplex_points(i);
                if self.dim == 2 {
                    point_segment_distance(x, p[0], p[1])
                } else {
                    point_triangle_distance(x, p[0], p[1], p[2])
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Signed crossing count of the upward ray-free winding test (Sunday's rule).
fn crossing(a: &DVector<f64>, b: &DVector<f64>, x: &[f64]) -> f64 {
    let left = (b[0] - a[0]) * (x[1] - a[1]) - (x[0] - a[0]) * (b[1] - a[1]);
    if a[1] <= x[1] {
        if b[1] > x[1] && left > 0.0 {
            return 1.0;
        }
    } else if b[1] <= x[1] && left < 0.0 {
        return -1.0;
    }
    0.0
}

/// Signed solid angle of triangle (a, b, c) seen from x (Van Oosterom–Strackee).
fn solid_angle(a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>, x: &[f64]) -> f64 {
    let p = Vector3::new(x[0], x[1], x[2]);
    let ra = Vector3::new(a[0], a[1], a[2]) - p;
    let rb = Vector3::new(b[0], b[1], b[2]) - p;
    let rc = Vector3::new(c[0], c[1], c[2]) - p;
    let (la, lb, lc) = (ra.norm(), rb.norm(), rc.norm());
    let num = ra.dot(&rb.cross(&rc));
    let den = la * lb * lc + ra.dot(&rb) * lc + ra.dot(&rc) * lb + rb.dot(&rc) * la;
    2.0 * num.atan2(den)
}

fn point_segment_distance(x: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let e = b - a;
    let s = if e.norm_squared() > 0.0 { ((x - a).dot(&e) / e.norm_squared()).clamp(0.0, 1.0) } else { 0.0 };
    (x - (a + e * s)).norm()
}

fn point_triangle_distance(x: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>) -> f64 {
    let e1 = b - a;
    let e2 = c - a;
    let g = DMatrix::from_row_slice(2, 2, &[e1.dot(&e1), e1.dot(&e2), e1.dot(&e2), e2.dot(&e2)]);
    let rhs = DVector::from_vec(vec![(x - a).dot(&e1), (x - a).dot(&e2)]);
    if let Some(uv) = g.lu().solve(&rhs) {
        if uv[0] >= 0.0 && uv[1] >= 0.0 && uv[0] + uv[1] <= 1.0 {
            return (x - (a + &e1 * uv[0] + &e2 * uv[1])).norm();
        }
    }
    point_segment_distance(x, a, b).min(point_segment_distance(x, b, c)).min(point_segment_distance(x, c, a))
}

/// Open partition: bounded regions and their common boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenPartition {
    pub boundary: SurfaceMesh,
    /// Bounded region labels; 0 is always the unbounded region.
    pub regions: Vec<usize>,
}

impl OpenPartition {
    pub fn new(boundary: SurfaceMesh) -> Result<Self> {
        boundary.check_closed()?;
        let regions = boundary.regions();
        Ok(Self { boundary, regions })
    }

    pub fn region_count(&self) -> usize {
        self.regions.len() + 1
    }

    /// Label of the region containing x (0 if in none of the bounded ones).
    pub fn region_of(&self, x: &[f64]) -> usize {
        self.regions.iter().copied().find(|&r| self.boundary.contains(r, x)).unwrap_or(UNBOUNDED)
    }
}

/// The varifold of the mesh: `samples` atoms per simplex, each with the
/// simplex plane and an equal share of its measure.
pub fn mesh_to_varifold(mesh: &SurfaceMesh, samples: usize) -> Result<DiscreteVarifold> {
    if samples == 0 {
        return Err(Error::InvalidConfig("samples per simplex must be at least 1".into()));
    }
    let n = mesh.dim;
    let mut atoms = Vec::with_capacity(mesh.simplices.len() * samples);
    for i in 0..mesh.simplices.len() {
        let measure = mesh.simplex_measure(i);
        if !(measure > 1e-14) {
            return Err(Error::DegenerateSimplex { index: i, measure });
        }
        let p = mesh.simplex_points(i);
        let mass = measure / samples as f64;
        if n == 2 {
            let plane = GrassmannElement::line(&(p[1] - p[0]))?;
            for j in 0..samples {
                let s = (j as f64 + 0.5) / samples as f64;
                atoms.push(Atom::new(p[0] + (p[1] - p[0]) * s, plane.clone(), mass)?);
            }
        } else {
            let plane = GrassmannElement::from_basis(&[p[1] - p[0], p[2] - p[0]])?;
            for (u, v) in triangle_points(samples) {
                atoms.push(Atom::new(p[0] + (p[1] - p[0]) * u + (p[2] - p[0]) * v, plane.clone(), mass)?);
            }
        }
    }
    DiscreteVarifold::from_atoms(n, n - 1, atoms)
}

/// Barycentric (u, v) sample points: the centroid, then a folded R₂ sequence.
fn triangle_points(count: usize) -> Vec<(f64, f64)> {
    if count == 1 {
        return vec![(1.0 / 3.0, 1.0 / 3.0)];
    }
    let g = 1.324_717_957_244_746_f64;
    let (a1, a2) = (1.0 / g, 1.0 / (g * g));
    (0..count)
        .map(|j| {
            let u = (0.5 + a1 * j as f64).fract();
            let v = (0.5 + a2 * j as f64).fract();
            if u + v > 1.0 {
                (1.0 - u, 1.0 - v)
            } else {
                (u, v)
            }
        })
        .collect()
}

/// Signed volume enclosed by a single closed surface with labels [1, 0].
pub fn enclosed_volume(mesh: &SurfaceMesh) -> Result<f64> {
    mesh.check_closed()?;
    Ok((0..mesh.simplices.len()).map(|i| mesh.cone_volume(i)).sum())
}

/// Vertices mapped by `f`, connectivity kept; rejects vertex collisions.
pub fn advect_mesh(mesh: &SurfaceMesh, f: &dyn Fn(&DVector<f64>) -> DVector<f64>) -> Result<SurfaceMesh> {
    let moved: Vec<DVector<f64>> = mesh.vertices.iter().map(f).collect();
    check_vertex_collisions(&moved)?;
    mesh.with_vertices(moved)
}

pub fn check_vertex_collisions(vertices: &[DVector<f64>]) -> Result<()> {
    let Some(first) = vertices.first() else {
        return Ok(());
    };
    let n = first.len();
    let tol = tolerances::VERTEX_COLLISION;
    let flat: Vec<f64> = vertices.iter().flat_map(|v| v.iter().copied()).collect();
    let hash = SpatialHash::build(n, &flat, tol.max(1e-9));
    let mut near = Vec::new();
    for (a, v) in vertices.iter().enumerate() {
        hash.candidates(v.as_slice(), &mut near);
        for &b in &near {
            if b > a && (v - &vertices[b]).norm() <= tol {
                return Err(Error::SelfIntersectionSuspected { a, b });
            }
        }
    }
    Ok(())
}

/// c₈ = ω_n Rⁿ + max{2ⁿ ω_n, 2n ω_n (R + 1)ⁿ⁻¹}.
pub fn volume_change_constant(n: usize, radius: f64) -> f64 {
    let w = unit_ball_volume(n);
    let ni = n as i32;
    w * radius.powi(ni) + (2f64.powi(ni) * w).max(2.0 * n as f64 * w * (radius + 1.0).powi(ni - 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeChange {
    pub measured: f64,
    pub standard_error: f64,
    pub delta: f64,
    pub c8: f64,
    pub bound: f64,
    pub pass: bool,
}

impl VolumeChange {
    pub fn verdict(&self) -> Verdict {
        Verdict::new(
            "volume-change",
            "volume change of a region inside a ball <= c8 delta",
            self.bound + 3.0 * self.standard_error,
            self.measured,
            self.pass,
        )
    }
}

/// Monte Carlo settings; stream `k` of the seeded ChaCha8 generator feeds chunk `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub samples: usize,
    pub seed: u64,
    pub chunk: usize,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        Self { samples: tolerances::MC_SAMPLES, seed: 0, chunk: 4096 }
    }
}

/// Uniform point in B(a, R): Gaussian direction, radius R·U^{1/n}.
fn ball_point(rng: &mut ChaCha8Rng, center: &[f64], radius: f64, out: &mut [f64]) {
    let n = center.len();
    let mut norm2 = 0.0;
    for o in out.iter_mut() {
        *o = crate::varifold::rand_distr_normal::standard_normal(rng);
        norm2 += *o * *o;
    }
    let r = radius * rng.gen::<f64>().powf(1.0 / n as f64) / norm2.sqrt();
    for (o, c) in out.iter_mut().zip(center) {
        *o = c + *o * r;
    }
}

/// Mean and standard error of g over uniform samples of B(a, R), with common
/// random numbers for every call that shares `mc`.
pub fn ball_average(
    center: &[f64],
    radius: f64,
    mc: &MonteCarlo,
    exec: Execution,
    g: &(dyn Fn(&[f64]) -> f64 + Sync),
) -> (f64, f64) {
    let chunks = mc.samples.div_ceil(mc.chunk.max(1));
    let parts = exec::map_indexed(exec, chunks, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
        rng.set_stream(k as u64);
        let count = mc.chunk.min(mc.samples - k * mc.chunk);
        let mut x = vec![0.0; center.len()];
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..count {
            ball_point(&mut rng, center, radius, &mut x);
            let v = g(&x);
            s += v;
            s2 += v * v;
        }
        (s, s2)
    });
    let (s, s2) = parts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let n = mc.samples as f64;
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// |ℒⁿ(B ∩ E_after) − ℒⁿ(B ∩ E_before)| for region `label`, against c₈ δ.
#[allow(clippy::too_many_arguments)]
pub fn clipped_volume_change(
    before: &SurfaceMesh,
    after: &SurfaceMesh,
    label: usize,
    center: &DVector<f64>,
    radius: f64,
    delta: f64,
    mc: &MonteCarlo,
    exec: Execution,
) -> Result<VolumeChange> {
    if !(delta < 1.0) {
        return Err(Error::DeltaTooLarge(delta));
    }
    if before.dim != after.dim || before.dim != center.len() {
        return Err(Error::DimensionMismatch { expected: before.dim, found: center.len() });
    }
    before.check_closed()?;
    after.check_closed()?;
    let n = center.len();
    let ball = unit_ball_volume(n) * radius.powi(n as i32);
    let (mean, se) = ball_average(center.as_slice(), radius, mc, exec, &|x| {
        after.contains(label, x) as i32 as f64 - before.contains(label, x) as i32 as f64
    });
    let measured = (mean * ball).abs();
    let standard_error = se * ball;
    let c8 = volume_change_constant(n, radius);
    let bound = c8 * delta;
    Ok(VolumeChange { measured, standard_error, delta, c8, bound, pass: measured <= bound + 3.0 * standard_error })
}

/// [`clipped_volume_change`] for every step of a trace whose tracers are the
/// vertices of `mesh`, with δ = max{‖f − Id‖_∞, ‖Jf − 1‖_∞} from the step
/// diagnostics. Step k uses Monte Carlo seed `mc.seed + k`.
#[allow(clippy::too_many_arguments)]
pub fn volume_change_series(
    trace: &FlowTrace,
    mesh: &SurfaceMesh,
    label: usize,
    center: &DVector<f64>,
    radius: f64,
    mc: &MonteCarlo,
    exec: Execution,
) -> Result<Vec<VolumeChange>> {
    let meshes = trace
        .snapshots
        .iter()
        .map(|s| {
            if s.tracers.len() != mesh.vertices.len() {
                return Err(Error::DimensionMismatch { expected: mesh.vertices.len(), found: s.tracers.len() });
            }
            mesh.with_vertices(s.tracers.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    trace
        .steps
        .iter()
        .enumerate()
        .map(|(k, rec)| {
            let d = &rec.diagnostics;
            let delta = d.max_displacement.max(d.max_volume_jacobian_deviation);
            let step_mc = MonteCarlo { seed: mc.seed.wrapping_add(k as u64), ..*mc };
            clipped_volume_change(&meshes[k], &meshes[k + 1], label, center, radius, delta, &step_mc, exec)
        })
        .collect()
}

/// n ω_n^{1/n}: the sharp constant in Per(E) ≥ c_n ℒⁿ(E)^{(n−1)/n}.
pub fn sharp_isoperimetric_constant(n: usize) -> f64 {
    n as f64 * unit_ball_volume(n).powf(1.0 / n as f64)
}

/// ω_{n−1} / (ω_n / 2)^{(n−1)/n}: perimeter-to-volume ratio of a half ball
/// cut through its center, used as the default relative constant.
pub fn half_ball_relative_constant(n: usize) -> f64 {
    unit_ball_volume(n - 1) / (unit_ball_volume(n) / 2.0).powf((n as f64 - 1.0) / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NontrivialityReport {
    pub t0: f64,
    pub omega_tilde: f64,
    pub isoperimetric_constant: f64,
    pub min_mass: f64,
    pub checked_snapshots: usize,
    pub pass: bool,
}

impl NontrivialityReport {
    pub fn verdict(&self) -> Verdict {
        Verdict::new(
            "nontriviality",
            "total mass >= isoperimetric lower bound on [0, R^2/8d] (relative to the configured c_n)",
            self.omega_tilde,
            self.min_mass,
            self.pass,
        )
    }
}

/// ‖V(t)‖(ℝⁿ) ≥ ω̃ = c_n (¼ ℒⁿ(B(a, R/2)))^{(n−1)/n} for all snapshots with t ≤ R²/8d.
pub fn nontriviality_certificate(
    trace: &FlowTrace,
    partition: &OpenPartition,
    center: &DVector<f64>,
    radius: f64,
    isoperimetric_constant: f64,
) -> Result<NontrivialityReport> {
    let region = partition.region_of(center.as_slice());
    if region == UNBOUNDED {
        return Err(Error::BallNotInterior("ball center lies in the unbounded region".into()));
    }
    let clearance = partition.boundary.distance_to(center);
    if clearance < radius {
        return Err(Error::BallNotInterior(format!("boundary is {clearance} from the center, radius is {radius}")));
    }
    let n = center.len();
    let d = (n - 1) as f64;
    let t0 = radius * radius / (8.0 * d);
    let quarter = 0.25 * unit_ball_volume(n) * (radius / 2.0).powi(n as i32);
    let omega_tilde = isoperimetric_constant * quarter.powf((n as f64 - 1.0) / n as f64);
    let window: Vec<f64> = trace.snapshots.iter().filter(|s| s.time <= t0 + 1e-12).map(|s| s.varifold.total_mass()).collect();
    let min_mass = window.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = !window.is_empty() && min_mass >= omega_tilde;
    Ok(NontrivialityReport {
        t0,
        omega_tilde,
        isoperimetric_constant,
        min_mass: if window.is_empty() { 0.0 } else { min_mass },
        checked_snapshots: window.len(),
        pass,
    })
}

// Builders.

/// Regular polygon with `count` vertices, counterclockwise, region 1 inside.
pub fn regular_polygon(count: usize, radius: f64, center: &DVector<f64>) -> Result<SurfaceMesh> {
    polygon_loop(count, radius, center, [1, UNBOUNDED], 0.0)
}

fn polygon_loop(count: usize, radius: f64, center: &DVector<f64>, labels: [usize; 2], phase: f64) -> Result<SurfaceMesh> {
    if count < 3 {
        return Err(Error::InvalidConfig("a polygon needs at least 3 vertices".into()));
    }
    let vertices = (0..count)
        .map(|k| {
            let th = phase + TAU * k as f64 / count as f64;
            DVector::from_vec(vec![center[0] + radius * th.cos(), center[1] + radius * th.sin()])
        })
        .collect();
    let simplices = (0..count).map(|k| vec![k, (k + 1) % count]).collect();
    SurfaceMesh::new(vertices, simplices, vec![labels; count])
}

/// Counterclockwise closed polyline through `points`.
pub fn polyline_loop(points: Vec<DVector<f64>>, labels: [usize; 2]) -> Result<SurfaceMesh> {
    let count = points.len();
    if count < 3 {
        return Err(Error::InvalidConfig("a loop needs at least 3 vertices".into()));
    }
    SurfaceMesh::new(points, (0..count).map(|k| vec![k, (k + 1) % count]).collect(), vec![labels; count])
}

/// Axis-aligned square of side `side` with `per_side` segments per edge.
pub fn square(side: f64, per_side: usize, center: &DVector<f64>) -> Result<SurfaceMesh> {
    let h = side / 2.0;
    let corners = [(-h, -h), (h, -h), (h, h), (-h, h)];
    let mut pts = Vec::new();
    for c in 0..4 {
        let (a, b) = (corners[c], corners[(c + 1) % 4]);
        for j in 0..per_side.max(1) {
            let s = j as f64 / per_side.max(1) as f64;
            pts.push(DVector::from_vec(vec![center[0] + a.0 + (b.0 - a.0) * s, center[1] + a.1 + (b.1 - a.1) * s]));
        }
    }
    polyline_loop(pts, [1, UNBOUNDED])
}

/// Concatenates meshes (indices shifted).
pub fn merge(meshes: &[SurfaceMesh]) -> Result<SurfaceMesh> {
    let mut vertices = Vec::new();
    let mut simplices = Vec::new();
    let mut labels = Vec::new();
    for m in meshes {
        let offset = vertices.len();
        vertices.extend(m.vertices.iter().cloned());
        simplices.extend(m.simplices.iter().map(|s| s.iter().map(|k| k + offset).collect::<Vec<_>>()));
        labels.extend_from_slice(&m.labels);
    }
    SurfaceMesh::new(vertices, simplices, labels)
}

/// Two concentric circles: region 1 inside the inner one, region 2 the annulus.
pub fn concentric_partition(inner: f64, outer: f64, count: usize) -> Result<SurfaceMesh> {
    let c = DVector::zeros(2);
    merge(&[polygon_loop(count, inner, &c, [1, 2], 0.0)?, polygon_loop(count, outer, &c, [2, UNBOUNDED], 0.0)?])
}

/// Two disjoint disks of radius `radius` centered at (±offset, 0), regions 1 and 2.
pub fn two_disk_partition(radius: f64, offset: f64, count: usize) -> Result<SurfaceMesh> {
    if !(offset > radius) {
        return Err(Error::InvalidConfig("disks overlap".into()));
    }
    merge(&[
        polygon_loop(count, radius, &DVector::from_vec(vec![-offset, 0.0]), [1, UNBOUNDED], 0.0)?,
        polygon_loop(count, radius, &DVector::from_vec(vec![offset, 0.0]), [2, UNBOUNDED], 0.0)?,
    ])
}

/// Icosahedron refined `levels` times and projected to the sphere; outward orientation.
pub fn icosphere(levels: usize, radius: f64, center: &DVector<f64>) -> Result<SurfaceMesh> {
    let t = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let vertices: Vec<DVector<f64>> = verts
        .iter()
        .map(|v| DVector::from_vec(vec![center[0] + radius * v.x, center[1] + radius * v.y, center[2] + radius * v.z]))
        .collect();
    let mesh = SurfaceMesh::new(vertices, faces.iter().map(|f| f.to_vec()).collect(), vec![[1, UNBOUNDED]; faces.len()])?;
    Ok(if enclosed_volume(&mesh)? < 0.0 { mesh.reversed() } else { mesh })
}
