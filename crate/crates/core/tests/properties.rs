use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use varifold_flow::barriers::technical_gap;
use varifold_flow::exec::Execution;
use varifold_flow::fields::{AffineField, ScalarField, ScalarTimesAxis, VectorField};
use varifold_flow::flow::{pushforward, AffineMap};
use varifold_flow::io;
use varifold_flow::metrics::{bounded_lipschitz, DiscreteMeasure};
use varifold_flow::mollifier::{KernelFields, Mollifier};
use varifold_flow::varifold::{Atom, DiscreteVarifold, GrassmannElement};

fn random_varifold(seed: u64, n: usize, d: usize, count: usize) -> DiscreteVarifold {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atoms = (0..count)
        .map(|_| {
            let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            Atom::new(x, GrassmannElement::random(n, d, &mut rng), rng.gen_range(0.05..1.0)).unwrap()
        })
        .collect();
    DiscreteVarifold::from_atoms(n, d, atoms).unwrap()
}

fn measure(points: &[(f64, f64, f64)]) -> DiscreteMeasure {
    DiscreteMeasure::new(points.iter().map(|p| DVector::from_vec(vec![p.0, p.1])).collect(), points.iter().map(|p| p.2).collect())
        .unwrap()
}

/// y ↦ Φ_ε(y₀ − y) as a test function.
struct ShiftedKernel<'a> {
    kernel: &'a Mollifier,
    center: DVector<f64>,
}

impl ScalarField for ShiftedKernel<'_> {
    fn value(&self, x: &DVector<f64>, _t: f64) -> f64 {
        self.kernel.value((&self.center - x).as_slice())
    }
    fn gradient(&self, x: &DVector<f64>, _t: f64) -> DVector<f64> {
        -self.kernel.gradient(&(&self.center - x))
    }
    fn hessian(&self, x: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        self.kernel.hessian(&(&self.center - x))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projector_invariants(seed in 0u64..10_000, n in 2usize..6, d_off in 0usize..4) {
        let d = 1 + d_off % (n - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = GrassmannElement::random(n, d, &mut rng);
        let p = s.projection();
        prop_assert!((p - p.transpose()).amax() <= 1e-12);
        prop_assert!((p * p - p).amax() <= 1e-10);
        prop_assert!((p.trace() - d as f64).abs() <= 1e-10);
    }

    #[test]
    fn first_variation_is_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let v = random_varifold(seed, 3, 2, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        use rand::Rng;
        let mut affine = || AffineField::new(
            DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0)),
            DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0)),
        );
        let x = affine();
        let y = affine();
        let combo = AffineField::new(&x.matrix * a + &y.matrix * b, &x.offset * a + &y.offset * b);
        let lhs = v.first_variation(&combo);
        let rhs = a * v.first_variation(&x) + b * v.first_variation(&y);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs().max(rhs.abs())));
    }

    #[test]
    fn translation_preserves_mass_and_planes(seed in 0u64..10_000, dx in -5.0f64..5.0, dy in -5.0f64..5.0) {
        let v = random_varifold(seed, 2, 1, 10);
        let shift = DVector::from_vec(vec![dx, dy]);
        let w = pushforward(&v, &AffineMap::translation(shift.clone())).unwrap();
        prop_assert!((w.total_mass() - v.total_mass()).abs() <= 1e-12 * v.total_mass());
        for (a, b) in v.atoms().iter().zip(w.atoms()) {
            prop_assert!((&b.position - &a.position - &shift).amax() <= 1e-12);
            prop_assert!((b.plane.projection() - a.plane.projection()).amax() <= 1e-12);
        }
    }

    #[test]
    fn smoothed_first_variation_matches_first_variation(seed in 0u64..10_000, y0 in -0.5f64..0.5, y1 in -0.5f64..0.5) {
        let v = random_varifold(seed, 2, 1, 15);
        let kernel = Mollifier::new(2, 0.3, 4.0).unwrap();
        let y = DVector::from_vec(vec![y0, y1]);
        let w = KernelFields::new(&v, &kernel).smoothed_first_variation(y.as_slice());
        let phi = ShiftedKernel { kernel: &kernel, center: y.clone() };
        for j in 0..2 {
            let x = ScalarTimesAxis { scalar: &phi, axis: j };
            let direct = v.first_variation(&x);
            prop_assert!((w[j] - direct).abs() <= 1e-10 * (1.0 + direct.abs()), "{} vs {}", w[j], direct);
        }
    }

    #[test]
    fn technical_gap_is_nonnegative(
        seed in 0u64..10_000,
        phi in 0.05f64..20.0,
        h in prop::collection::vec(-3.0f64..3.0, 3),
        g in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = GrassmannElement::random(3, 1, &mut rng);
        let gap = technical_gap(&DVector::from_vec(h), phi, &DVector::from_vec(g), &s).unwrap();
        prop_assert!(gap >= -1e-12);
    }

    #[test]
    fn bounded_lipschitz_is_a_metric(
        a in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0.1f64..2.0), 1..6),
        b in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0.1f64..2.0), 1..6),
        c in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0.1f64..2.0), 1..6),
    ) {
        let (ma, mb, mc) = (measure(&a), measure(&b), measure(&c));
        let ab = bounded_lipschitz(&ma, &mb).unwrap().distance;
        let ba = bounded_lipschitz(&mb, &ma).unwrap().distance;
        let ac = bounded_lipschitz(&ma, &mc).unwrap().distance;
        let cb = bounded_lipschitz(&mc, &mb).unwrap().distance;
        prop_assert!((ab - ba).abs() <= 1e-9);
        prop_assert!(ab <= ac + cb + 1e-8);
        prop_assert!(ab <= ma.total() + mb.total() + 1e-9);
        prop_assert!(ab >= (ma.total() - mb.total()).abs() - 1e-9);
        prop_assert!(bounded_lipschitz(&ma, &ma).unwrap().distance.abs() <= 1e-12);
    }

    #[test]
    fn csv_round_trip_is_exact(seed in 0u64..10_000, count in 0usize..20) {
        let v = random_varifold(seed, 3, 1, count.max(1));
        let text = io::varifold_to_csv(&v);
        prop_assert_eq!(io::varifold_from_csv(&text, "mem").unwrap(), v);
    }
}

#[test]
fn parallel_fields_match_sequential_bitwise() {
    let v = random_varifold(3, 2, 1, 60);
    let kernel = Mollifier::new(2, 0.2, 4.0).unwrap();
    let points: Vec<DVector<f64>> = v.positions().cloned().collect();
    let seq = KernelFields::new(&v, &kernel).with_execution(Execution::Sequential).velocity_at(&points, 4).unwrap();
    let par = KernelFields::new(&v, &kernel).with_execution(Execution::Parallel).velocity_at(&points, 4).unwrap();
    for ((h1, j1), (h2, j2)) in seq.iter().zip(&par) {
        assert!(h1.iter().zip(h2.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(j1.iter().zip(j2.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn affine_field_jacobian_is_its_matrix() {
    let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    let f = AffineField::new(m.clone(), DVector::from_vec(vec![0.5, -0.5]));
    assert_eq!(f.jacobian(&DVector::from_vec(vec![7.0, 8.0])), m);
}
