//! Bounded-Lipschitz distance between finitely supported measures.
//!
//! For measures on a finite set Z, Δ(μ, ν) = sup Σ (ν_k − μ_k) φ_k over
//! |φ_k| ≤ 1, |φ_k − φ_l| ≤ |z_k − z_l|; every such φ extends to a
//! 1-bounded 1-Lipschitz function on ℝⁿ, so this is exact. The linear
//! program is solved through its dual, an uncapacitated min-cost flow on Z
//! plus a ground node g with φ_g = 0 (arcs z ↔ g of cost 1). The optimal φ
//! is read off shortest-path distances in the final residual graph and
//! checked independently.

use std::collections::HashMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{self, FlowTrace};
use crate::tolerances;
use crate::varifold::DiscreteVarifold;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: points.len(), found: weights.len() });
        }
        if let Some(&w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidMass(w));
        }
        if let Some(first) = points.first() {
            let n = first.len();
            if let Some(p) = points.iter().find(|p| p.len() != n) {
                return Err(Error::DimensionMismatch { expected: n, found: p.len() });
            }
            if points.iter().any(|p| p.iter().any(|c| !c.is_finite())) {
                return Err(Error::NonFinitePosition);
            }
        }
        Ok(Self { points, weights })
    }

    pub fn dirac(point: DVector<f64>, weight: f64) -> Result<Self> {
        Self::new(vec![point], vec![weight])
    }

    /// The mass measure ‖V‖.
    pub fn from_varifold(v: &DiscreteVarifold) -> Self {
        Self {
            points: v.atoms().iter().map(|a| a.position.clone()).collect(),
            weights: v.atoms().iter().map(|a| a.mass).collect(),
        }
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// μ + ν as a measure (supports concatenated).
    pub fn sum(&self, other: &DiscreteMeasure) -> DiscreteMeasure {
        let mut s = self.clone();
        s.points.extend(other.points.iter().cloned());
        s.weights.extend_from_slice(&other.weights);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverStatus {
    pub augmentations: usize,
    pub support_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BLResult {
    pub distance: f64,
    /// Union support, with coincident points merged.
    pub support: Vec<DVector<f64>>,
    /// Optimal test function values on `support`.
    pub potentials: Vec<f64>,
    /// Cost of the optimal flow; equals `distance` up to roundoff.
    pub dual_cost: f64,
    pub status: SolverStatus,
}

/// Δ(μ, ν) with the default support cap.
pub fn bounded_lipschitz(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<BLResult> {
    bounded_lipschitz_capped(mu, nu, tolerances::BL_SUPPORT_CAP)
}

pub fn bounded_lipschitz_capped(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cap: usize) -> Result<BLResult> {
    if let (Some(a), Some(b)) = (mu.points.first(), nu.points.first()) {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
        }
    }
    // Merge coincident points; b = ν − μ on the union support.
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut support: Vec<DVector<f64>> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    for (measure, sign) in [(mu, -1.0), (nu, 1.0)] {
        for (p, &w) in measure.points.iter().zip(&measure.weights) {
            let key: Vec<u64> = p.iter().map(|c| (c + 0.0).to_bits()).collect();
            let k = *index.entry(key).or_insert_with(|| {
                support.push(p.clone());
                b.push(0.0);
                support.len() - 1
            });
            b[k] += sign * w;
        }
    }
    let size = support.len();
    if size > cap {
        return Err(Error::SupportTooLarge { size, cap });
    }
    let scale = mu.total() + nu.total();
    if size == 0 || scale == 0.0 {
        return Ok(BLResult {
            distance: 0.0,
            potentials: vec![0.0; size],
            support,
            dual_cost: 0.0,
            status: SolverStatus { augmentations: 0, support_size: size },
        });
    }
    let mut solver = FlowSolver::new(&support, &b);
    let augmentations = solver.solve(scale)?;
    let phi = solver.potentials_from_ground();
    let distance: f64 = b.iter().zip(&phi).map(|(bk, pk)| bk * pk).sum();
    let dual_cost = solver.cost();
    verify_feasible(&support, &phi)?;
    let gap = (distance - dual_cost).abs();
    if gap > 1e-9 * scale.max(1.0) {
        return Err(Error::SolverFailure(format!("duality gap {gap:e} (primal {distance}, dual {dual_cost})")));
    }
    Ok(BLResult {
        distance: distance.max(0.0),
        support,
        potentials: phi,
        dual_cost,
        status: SolverStatus { augmentations, support_size: size },
    })
}

/// Re-checks |φ_k| ≤ 1 and |φ_k − φ_l| ≤ |z_k − z_l| with the feasibility tolerance.
pub fn verify_feasible(support: &[DVector<f64>], phi: &[f64]) -> Result<()> {
    let tol = tolerances::BL_FEASIBILITY;
    for (k, p) in phi.iter().enumerate() {
        if p.abs() > 1.0 + tol {
            return Err(Error::SolverFailure(format!("|φ_{k}| = {} exceeds 1", p.abs())));
        }
        for l in 0..k {
            let d = (&support[k] - &support[l]).norm();
            if (p - phi[l]).abs() > d + tol {
                return Err(Error::SolverFailure(format!("Lipschitz bound violated between {k} and {l}")));
            }
        }
    }
    Ok(())
}

/// Dense successive-shortest-path solver. Node `size` is the ground.
struct FlowSolver {
    size: usize,
    /// Arc costs on Z × Z; arcs with cost ≥ 2 are dominated by the ground route.
    dist: Vec<f64>,
    flow: Vec<f64>,
    excess: Vec<f64>,
    potential: Vec<f64>,
}

const NO_ARC: f64 = f64::INFINITY;

impl FlowSolver {
    fn new(support: &[DVector<f64>], b: &[f64]) -> Self {
        let size = support.len();
        let nodes = size + 1;
        let mut dist = vec![NO_ARC; nodes * nodes];
        for k in 0..size {
            for l in 0..size {
                if k != l {
                    let d = (&support[k] - &support[l]).norm();
                    if d < 2.0 {
                        dist[k * nodes + l] = d;
                    }
                }
            }
            dist[k * nodes + size] = 1.0;
            dist[size * nodes + k] = 1.0;
        }
        let mut excess = b.to_vec();
        excess.push(-b.iter().sum::<f64>());
        Self { size, dist, flow: vec![0.0; nodes * nodes], excess, potential: vec![0.0; nodes] }
    }

    fn nodes(&self) -> usize {
        self.size + 1
    }

    /// Cheapest residual arc u → v: a reverse arc (cancelling flow v → u)
    /// or a forward arc.
    fn residual_cost(&self, u: usize, v: usize) -> f64 {
        let n = self.nodes();
        if self.flow[v * n + u] > 0.0 {
            -self.dist[v * n + u]
        } else {
            self.dist[u * n + v]
        }
    }

    /// Dijkstra on reduced costs from `source`; stops at the first settled
    /// node with deficit below −`threshold` if `stop_at_deficit`.
    fn shortest_paths(&self, source: usize, threshold: f64, stop_at_deficit: bool) -> (Vec<f64>, Vec<usize>, Option<usize>) {
        let n = self.nodes();
        let mut d = vec![f64::INFINITY; n];
        let mut pred = vec![usize::MAX; n];
        let mut done = vec![false; n];
        d[source] = 0.0;
        let mut target = None;
        for _ in 0..n {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..n {
                if !done[v] && d[v] < best {
                    best = d[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if stop_at_deficit && self.excess[u] < -threshold {
                target = Some(u);
                break;
            }
            for v in 0..n {
                if done[v] || v == u {
                    continue;
                }
                let c = self.residual_cost(u, v);
                if c == NO_ARC {
                    continue;
                }
                let reduced = (c + self.potential[u] - self.potential[v]).max(0.0);
                if d[u] + reduced < d[v] {
                    d[v] = d[u] + reduced;
                    pred[v] = u;
                }
            }
        }
        (d, pred, target)
    }

    fn solve(&mut self, scale: f64) -> Result<usize> {
        let n = self.nodes();
        let threshold = 1e-14 * scale;
        let mut augmentations = 0;
        let limit = 64 * n * n + 1000;
        while let Some(s) = (0..n).find(|&u| self.excess[u] > threshold) {
            let (d, pred, target) = self.shortest_paths(s, threshold, true);
            let t = target.ok_or_else(|| Error::SolverFailure("supply left with no reachable demand".into()))?;
            let cap = d[t];
            for v in 0..n {
                self.potential[v] += d[v].min(cap);
            }
            let mut amount = self.excess[s].min(-self.excess[t]);
            let mut v = t;
            while v != s {
                let u = pred[v];
                if self.flow[v * n + u] > 0.0 {
                    amount = amount.min(self.flow[v * n + u]);
                }
                v = u;
            }
            let mut v = t;
            while v != s {
                let u = pred[v];
                if self.flow[v * n + u] > 0.0 {
                    let f = &mut self.flow[v * n + u];
                    *f = if *f == amount { 0.0 } else { *f - amount };
                } else {
                    self.flow[u * n + v] += amount;
                }
                v = u;
            }
            self.excess[s] = if self.excess[s] == amount { 0.0 } else { self.excess[s] - amount };
            self.excess[t] = if -self.excess[t] == amount { 0.0 } else { self.excess[t] + amount };
            augmentations += 1;
            if augmentations > limit {
                return Err(Error::SolverFailure("augmentation limit reached".into()));
            }
        }
        Ok(augmentations)
    }

    fn cost(&self) -> f64 {
        self.flow.iter().zip(&self.dist).filter(|(f, _)| **f > 0.0).map(|(f, c)| f * c).sum()
    }

    /// φ = −(shortest residual distance from the ground), so φ_g = 0.
    fn potentials_from_ground(&self) -> Vec<f64> {
        let g = self.size;
        let (d, _, _) = self.shortest_paths(g, 0.0, false);
        (0..self.size)
            .map(|v| {
                let true_dist = d[v] + self.potential[v] - self.potential[g];
                (-true_dist).clamp(-1.0, 1.0)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub time: f64,
    pub initial_distance: f64,
    pub measured: f64,
    pub bound: Option<f64>,
    pub pass: Option<bool>,
}

/// Δ(‖V_A(t)‖, ‖V_B(t)‖) next to Δ₀ e^{t c₆ ε^{−n−7}} + c₆ t δ ε^{−n−11} e^{t c₆ ε^{−n−7}}.
pub fn stability_certificate(a: &FlowTrace, b: &FlowTrace, t: f64, c6: Option<f64>) -> Result<StabilityReport> {
    if a.config.eps != b.config.eps {
        return Err(Error::InvalidConfig(format!("traces use different eps ({} vs {})", a.config.eps, b.config.eps)));
    }
    let va = flow::sample(a, t, a.config.mode)?;
    let vb = flow::sample(b, t, b.config.mode)?;
    let initial = bounded_lipschitz(
        &DiscreteMeasure::from_varifold(&a.snapshots[0].varifold),
        &DiscreteMeasure::from_varifold(&b.snapshots[0].varifold),
    )?
    .distance;
    let measured = bounded_lipschitz(&DiscreteMeasure::from_varifold(&va), &DiscreteMeasure::from_varifold(&vb))?.distance;
    let (bound, pass) = match c6 {
        Some(c6) => {
            let eps = a.config.eps;
            let n = va.ambient_dim() as i32;
            let delta = a.max_gap().max(b.max_gap());
            let growth = (t * c6 * eps.powi(-n - 7)).exp();
            let bound = initial * growth + c6 * t * delta * eps.powi(-n - 11) * growth;
            (Some(bound), Some(measured <= bound))
        }
        None => (None, None),
    };
    Ok(StabilityReport { time: t, initial_distance: initial, measured, bound, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(c: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(c)
    }

    /// max φ_y − φ_x over a grid of feasible pairs.
    fn dirac_oracle(d: f64) -> f64 {
        let steps = 400;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=steps {
            for j in 0..=steps {
                let px = -1.0 + 2.0 * i as f64 / steps as f64;
                let py = -1.0 + 2.0 * j as f64 / steps as f64;
                if (px - py).abs() <= d + 1e-12 {
                    best = best.max(py - px);
                }
            }
        }
        best
    }

    #[test]
    fn dirac_pairs() {
        for d in [0.5, 1.0, 5.0] {
            let mu = DiscreteMeasure::dirac(pt(&[0.0, 0.0]), 1.0).unwrap();
            let nu = DiscreteMeasure::dirac(pt(&[d, 0.0]), 1.0).unwrap();
            let r = bounded_lipschitz(&mu, &nu).unwrap();
            assert_abs_diff_eq!(r.distance, d.min(2.0), epsilon = 1e-12);
            assert_abs_diff_eq!(r.distance, dirac_oracle(d), epsilon = 1e-9);
        }
    }

    #[test]
    fn identical_and_empty() {
        let mu = DiscreteMeasure::new(vec![pt(&[0.0]), pt(&[0.3])], vec![0.5, 2.0]).unwrap();
        assert_eq!(bounded_lipschitz(&mu, &mu).unwrap().distance, 0.0);
        let empty = DiscreteMeasure::new(vec![], vec![]).unwrap();
        assert_abs_diff_eq!(bounded_lipschitz(&mu, &empty).unwrap().distance, 2.5, epsilon = 1e-12);
    }

    #[test]
    fn far_small_mass_costs_its_weight() {
        let mu = DiscreteMeasure::new(vec![pt(&[0.0, 0.0]), pt(&[0.5, 0.0])], vec![1.0, 1.0]).unwrap();
        let extra = DiscreteMeasure::dirac(pt(&[5.0, 5.0]), 1e-3).unwrap();
        let r = bounded_lipschitz(&mu, &mu.sum(&extra)).unwrap();
        assert_abs_diff_eq!(r.distance, 1e-3, epsilon = 1e-12);
    }

    fn random_measure(rng: &mut ChaCha8Rng, k: usize) -> DiscreteMeasure {
        let points = (0..k).map(|_| pt(&[rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)])).collect();
        let weights = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
        DiscreteMeasure::new(points, weights).unwrap()
    }

    #[test]
    fn symmetric_and_triangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..40 {
            let (a, b, c) = (random_measure(&mut rng, 6), random_measure(&mut rng, 5), random_measure(&mut rng, 7));
            let ab = bounded_lipschitz(&a, &b).unwrap().distance;
            let ba = bounded_lipschitz(&b, &a).unwrap().distance;
            let bc = bounded_lipschitz(&b, &c).unwrap().distance;
            let ac = bounded_lipschitz(&a, &c).unwrap().distance;
            assert_abs_diff_eq!(ab, ba, epsilon = 1e-8);
            assert!(ac <= ab + bc + 1e-8);
        }
    }

    #[test]
    fn matches_grid_search_on_three_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let mu = random_measure(&mut rng, 2);
            let nu = DiscreteMeasure::dirac(pt(&[rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)]), rng.gen_range(0.0..1.0))
                .unwrap();
            let r = bounded_lipschitz(&mu, &nu).unwrap();
            let z: Vec<DVector<f64>> = mu.points().iter().chain(nu.points()).cloned().collect();
            let b = [-mu.weights()[0], -mu.weights()[1], nu.weights()[0]];
            let steps = 80;
            let val = |i: usize| -1.0 + 2.0 * i as f64 / steps as f64;
            let mut best = f64::NEG_INFINITY;
            for i in 0..=steps {
                for j in 0..=steps {
                    for k in 0..=steps {
                        let phi = [val(i), val(j), val(k)];
                        let ok = (0..3).all(|p| (0..p).all(|q| (phi[p] - phi[q]).abs() <= (&z[p] - &z[q]).norm()));
                        if ok {
                            best = best.max(b.iter().zip(&phi).map(|(x, y)| x * y).sum());
                        }
                    }
                }
            }
            // Grid value is a lower bound within one grid cell of the optimum.
            assert!(best <= r.distance + 1e-9);
            assert!(r.distance - best <= 2.0 * 3.0 / steps as f64 * 2.0, "{} vs {best}", r.distance);
        }
    }

    #[test]
    fn certificate_is_feasible_and_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (a, b) = (random_measure(&mut rng, 30), random_measure(&mut rng, 30));
        let r = bounded_lipschitz(&a, &b).unwrap();
        verify_feasible(&r.support, &r.potentials).unwrap();
        assert_abs_diff_eq!(r.distance, r.dual_cost, epsilon = 1e-10);
    }

    #[test]
    fn support_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_measure(&mut rng, 6);
        assert!(matches!(bounded_lipschitz_capped(&a, &a, 5), Err(Error::SupportTooLarge { size: 6, cap: 5 })));
    }
}
