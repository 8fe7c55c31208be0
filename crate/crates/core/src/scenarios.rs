//! Sampled varifolds of simple curves and surfaces.

use std::f64::consts::{PI, TAU};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::varifold::{Atom, DiscreteVarifold, GrassmannElement};

fn check_count(count: usize, min: usize) -> Result<()> {
    if count < min {
        return Err(Error::InvalidConfig(format!("need at least {min} samples, got {count}")));
    }
    Ok(())
}

/// Circle of radius `radius` in the plane, `count` equally spaced atoms
/// of mass 2πr/count with tangent lines.
pub fn circle(radius: f64, count: usize, center: DVector<f64>) -> Result<DiscreteVarifold> {
    let e1 = DVector::from_vec(vec![1.0, 0.0]);
    let e2 = DVector::from_vec(vec![0.0, 1.0]);
    if center.len() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: center.len() });
    }
    circle_in_plane(radius, count, &center, &e1, &e2, 0.0)
}

/// Circle {c + r(cos θ u + sin θ v)} in ℝⁿ for orthonormal u, v, starting at angle `phase`.
pub fn circle_in_plane(
    radius: f64,
    count: usize,
    center: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
    phase: f64,
) -> Result<DiscreteVarifold> {
    check_count(count, 3)?;
    if !(radius > 0.0) {
        return Err(Error::InvalidConfig(format!("radius must be positive, got {radius}")));
    }
    let n = center.len();
    let mass = TAU * radius / count as f64;
    let atoms = (0..count)
        .map(|k| {
            let th = phase + TAU * k as f64 / count as f64;
            let x = center + (u * th.cos() + v * th.sin()) * radius;
            let tangent = v * th.cos() - u * th.sin();
            Atom::new(x, GrassmannElement::line(&tangent)?, mass)
        })
        .collect::<Result<Vec<_>>>()?;
    DiscreteVarifold::from_atoms(n, 1, atoms)
}

/// Two concentric circles; atoms of the inner circle come first.
pub fn concentric_circles(inner: f64, outer: f64, count: usize) -> Result<DiscreteVarifold> {
    if !(inner < outer) {
        return Err(Error::InvalidConfig("inner radius must be smaller than outer radius".into()));
    }
    let c = DVector::zeros(2);
    circle(inner, count, c.clone())?.union(&circle(outer, count, c)?)
}

/// Sphere of radius `radius` in ℝ³ sampled by a Fibonacci lattice, tangent planes, equal masses.
pub fn sphere(radius: f64, count: usize, center: DVector<f64>) -> Result<DiscreteVarifold> {
    check_count(count, 4)?;
    if center.len() != 3 {
        return Err(Error::DimensionMismatch { expected: 3, found: center.len() });
    }
    let golden = PI * (3.0 - 5.0_f64.sqrt());
    let mass = 4.0 * PI * radius * radius / count as f64;
    let atoms = (0..count)
        .map(|k| {
            let z = 1.0 - (2.0 * k as f64 + 1.0) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let th = golden * k as f64;
            let normal = DVector::from_vec(vec![r * th.cos(), r * th.sin(), z]);
            Atom::new(&center + &normal * radius, GrassmannElement::hyperplane(&normal)?, mass)
        })
        .collect::<Result<Vec<_>>>()?;
    DiscreteVarifold::from_atoms(3, 2, atoms)
}

/// Two linked unit-ish circles in ℝ³: one in the xy-plane about the origin,
/// one in the xz-plane about (radius, 0, 0).
pub fn enlaced_circles(radius: f64, count: usize) -> Result<DiscreteVarifold> {
    let e = |i: usize| DVector::from_fn(3, |j, _| if i == j { 1.0 } else { 0.0 });
    let first = circle_in_plane(radius, count, &DVector::zeros(3), &e(0), &e(1), 0.0)?;
    let mut c2 = DVector::zeros(3);
    c2[0] = radius;
    // Phase offset keeps atoms off the other circle.
    let second = circle_in_plane(radius, count, &c2, &e(0), &e(2), PI / count as f64)?;
    first.union(&second)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn circle_mass_and_tangents() {
        let v = circle(0.7, 100, DVector::from_vec(vec![1.0, -1.0])).unwrap();
        assert_abs_diff_eq!(v.total_mass(), TAU * 0.7, epsilon = 1e-12);
        for a in v.atoms() {
            let radial = &a.position - DVector::from_vec(vec![1.0, -1.0]);
            assert_abs_diff_eq!(radial.norm(), 0.7, epsilon = 1e-12);
            assert!(a.plane.project(&radial).norm() < 1e-12);
        }
    }

    #[test]
    fn sphere_mass_and_normals() {
        let v = sphere(2.0, 300, DVector::zeros(3)).unwrap();
        assert_abs_diff_eq!(v.total_mass(), 16.0 * PI, epsilon = 1e-10);
        for a in v.atoms() {
            assert!(a.plane.project(&a.position).norm() < 1e-10);
        }
    }

    #[test]
    fn enlaced_circles_stay_apart() {
        let v = enlaced_circles(1.0, 64).unwrap();
        let (a, b) = v.atoms().split_at(64);
        let min = a.iter().flat_map(|p| b.iter().map(move |q| (&p.position - &q.position).norm())).fold(f64::INFINITY, f64::min);
        assert!(min > 0.01);
    }
}
