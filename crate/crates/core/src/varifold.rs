//! Atomic varifolds: finite sums of weighted Dirac masses on ℝⁿ × 𝔾(d, n).
//!
//! A plane S ∈ 𝔾(d, n) is stored as its orthogonal projection matrix. All
//! integrals against an atomic varifold are exact finite sums evaluated in
//! atom-index order.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fields::{ScalarField, VectorField};
use crate::tolerances::{self, Tolerances};

/// A d-dimensional linear subspace of ℝⁿ, represented by its orthogonal projector.
#[derive(Debug, Clone, PartialEq)]
pub struct GrassmannElement {
    projection: DMatrix<f64>,
    dim: usize,
}

impl GrassmannElement {
    /// Projector onto the span of `vectors`.
    pub fn from_basis(vectors: &[DVector<f64>]) -> Result<Self> {
        let d = vectors.len();
        let n = vectors.first().map(|v| v.len()).unwrap_or(0);
        if d == 0 || n == 0 {
            return Err(Error::DegenerateBasis { gram_det: 0.0 });
        }
        if d >= n {
            return Err(Error::InvalidProjector(format!("subspace dimension {d} must be below ambient dimension {n}")));
        }
        for v in vectors {
            if v.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: v.len() });
            }
        }
        let basis = DMatrix::from_columns(vectors);
        let gram = basis.transpose() * &basis;
        let gram_det = gram.determinant();
        if !(gram_det > tolerances::GRAM_DETERMINANT_MIN) {
            return Err(Error::DegenerateBasis { gram_det });
        }
        let q = orthonormalize(&basis);
        Ok(Self::from_orthonormal(&q))
    }

    /// Projector QQᵗ for a matrix with orthonormal columns.
    pub(crate) fn from_orthonormal(q: &DMatrix<f64>) -> Self {
        let p = q * q.transpose();
        Self { projection: symmetrize(p), dim: q.ncols() }
    }

    pub(crate) fn from_projection_unchecked(p: DMatrix<f64>, dim: usize) -> Self {
        Self { projection: p, dim }
    }

    /// Wraps a projection matrix after checking symmetry, idempotence and trace.
    pub fn from_projection(p: DMatrix<f64>) -> Result<Self> {
        let n = p.nrows();
        if p.ncols() != n {
            return Err(Error::InvalidProjector("matrix is not square".into()));
        }
        let trace = p.trace();
        let d = trace.round();
        if !(d >= 1.0 && (d as usize) < n) {
            return Err(Error::InvalidProjector(format!("trace {trace} out of range for n = {n}")));
        }
        let g = Self { projection: p, dim: d as usize };
        g.validate(&Tolerances::default())?;
        Ok(g)
    }

    /// The line spanned by `direction`.
    pub fn line(direction: &DVector<f64>) -> Result<Self> {
        Self::from_basis(std::slice::from_ref(direction))
    }

    /// The hyperplane orthogonal to `normal`.
    pub fn hyperplane(normal: &DVector<f64>) -> Result<Self> {
        let n = normal.len();
        let norm = normal.norm();
        if !(norm > 0.0) || n < 2 {
            return Err(Error::DegenerateBasis { gram_det: 0.0 });
        }
        let u = normal / norm;
        let p = DMatrix::identity(n, n) - &u * u.transpose();
        Ok(Self { projection: symmetrize(p), dim: n - 1 })
    }

    /// Uniformly random plane (Haar measure) drawn from Gaussian spanning vectors.
    pub fn random<R: rand::Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Self {
        use rand_distr_normal::standard_normal;
        loop {
            let vs: Vec<DVector<f64>> = (0..d).map(|_| DVector::from_fn(n, |_, _| standard_normal(rng))).collect();
            if let Ok(g) = Self::from_basis(&vs) {
                return g;
            }
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    /// I − S.
    pub fn complement(&self) -> DMatrix<f64> {
        let n = self.ambient_dim();
        DMatrix::identity(n, n) - &self.projection
    }

    /// An orthonormal basis of the subspace as the columns of an n×d matrix.
    pub fn orthonormal_basis(&self) -> DMatrix<f64> {
        // Pivoted Gram-Schmidt on the columns of P, which span S.
        let n = self.ambient_dim();
        let mut residual = self.projection.clone();
        let mut q = DMatrix::<f64>::zeros(n, self.dim);
        for k in 0..self.dim {
            let (best, _) =
                (0..n)
                    .map(|j| (j, residual.column(j).norm_squared()))
                    .fold((0, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
            let mut v = residual.column(best).into_owned();
            for _ in 0..2 {
                for i in 0..k {
                    let qi = q.column(i);
                    let c = qi.dot(&v);
                    v -= qi * c;
                }
            }
            v /= v.norm();
            for j in 0..n {
                let c = v.dot(&residual.column(j));
                let mut col = residual.column_mut(j);
                col -= &v * c;
            }
            q.set_column(k, &v);
        }
        q
    }

    /// S·v.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.projection * v
    }

    pub fn validate(&self, tol: &Tolerances) -> Result<()> {
        let p = &self.projection;
        let sym = (p - p.transpose()).amax();
        if sym > tol.projector_symmetry {
            return Err(Error::InvalidProjector(format!("asymmetry {sym:e}")));
        }
        let idem = (p * p - p).amax();
        if idem > tol.projector_idempotence {
            return Err(Error::InvalidProjector(format!("idempotence defect {idem:e}")));
        }
        let tr = (p.trace() - self.dim as f64).abs();
        if tr > tol.projector_trace {
            return Err(Error::InvalidProjector(format!("trace defect {tr:e}")));
        }
        Ok(())
    }
}

pub(crate) fn symmetrize(p: DMatrix<f64>) -> DMatrix<f64> {
    (&p + p.transpose()) * 0.5
}

/// Modified Gram-Schmidt with one reorthogonalization pass.
pub(crate) fn orthonormalize(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q = basis.clone();
    for k in 0..q.ncols() {
        let mut v = q.column(k).into_owned();
        for _ in 0..2 {
            for i in 0..k {
                let qi = q.column(i);
                let c = qi.dot(&v);
                v -= qi * c;
            }
        }
        let norm = v.norm();
        q.set_column(k, &(v / norm));
    }
    q
}

/// Minimal Box-Muller sampler so that only `rand` is needed.
pub(crate) mod rand_distr_normal {
    pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// S : J = tr(S Jᵗ), the tangential divergence of a field with Jacobian J.
pub fn tangential_divergence(plane: &GrassmannElement, jacobian: &DMatrix<f64>) -> f64 {
    plane.projection.dot(jacobian)
}

/// Builds the projector onto the span of `vectors`.
pub fn grassmann_from_basis(vectors: &[DVector<f64>]) -> Result<GrassmannElement> {
    GrassmannElement::from_basis(vectors)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub position: DVector<f64>,
    pub plane: GrassmannElement,
    pub mass: f64,
}

impl Atom {
    pub fn new(position: DVector<f64>, plane: GrassmannElement, mass: f64) -> Result<Self> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::InvalidMass(mass));
        }
        if position.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinitePosition);
        }
        if position.len() != plane.ambient_dim() {
            return Err(Error::DimensionMismatch { expected: plane.ambient_dim(), found: position.len() });
        }
        Ok(Self { position, plane, mass })
    }
}

/// V = Σᵢ mᵢ δ_{(xᵢ, Sᵢ)}.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteVarifold {
    ambient: usize,
    dim: usize,
    atoms: Vec<Atom>,
}

impl DiscreteVarifold {
    pub fn empty(ambient: usize, dim: usize) -> Self {
        Self { ambient, dim, atoms: Vec::new() }
    }

    pub fn from_atoms(ambient: usize, dim: usize, atoms: Vec<Atom>) -> Result<Self> {
        let mut v = Self::empty(ambient, dim);
        v.atoms.reserve(atoms.len());
        for a in atoms {
            v.push(a)?;
        }
        Ok(v)
    }

    pub fn push(&mut self, atom: Atom) -> Result<()> {
        if atom.position.len() != self.ambient {
            return Err(Error::DimensionMismatch { expected: self.ambient, found: atom.position.len() });
        }
        if atom.plane.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: atom.plane.dim() });
        }
        if !(atom.mass.is_finite() && atom.mass > 0.0) {
            return Err(Error::InvalidMass(atom.mass));
        }
        self.atoms.push(atom);
        Ok(())
    }

    /// Concatenation of two varifolds of the same type.
    pub fn union(&self, other: &DiscreteVarifold) -> Result<Self> {
        let mut v = self.clone();
        for a in &other.atoms {
            v.push(a.clone())?;
        }
        Ok(v)
    }

    pub(crate) fn from_atoms_unchecked(ambient: usize, dim: usize, atoms: Vec<Atom>) -> Self {
        Self { ambient, dim, atoms }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// ‖V‖(ℝⁿ).
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    /// ‖V‖(φ(·, t)).
    pub fn mass_integral(&self, phi: &dyn ScalarField, t: f64) -> f64 {
        self.atoms.iter().map(|a| a.mass * phi.value(&a.position, t)).sum()
    }

    /// δV(X) = Σᵢ mᵢ Sᵢ : ∇X(xᵢ).
    pub fn first_variation(&self, field: &dyn VectorField) -> f64 {
        self.atoms.iter().map(|a| a.mass * tangential_divergence(&a.plane, &field.jacobian(&a.position))).sum()
    }

    /// δ(V, φ)(X) = Σᵢ mᵢ [φ(xᵢ) Sᵢ:∇X(xᵢ) + ∇φ(xᵢ)·X(xᵢ)].
    pub fn weighted_first_variation(&self, phi: &dyn ScalarField, field: &dyn VectorField, t: f64) -> f64 {
        self.atoms
            .iter()
            .map(|a| {
                let x = &a.position;
                let div = tangential_divergence(&a.plane, &field.jacobian(x));
                a.mass * (phi.value(x, t) * div + phi.gradient(x, t).dot(&field.value(x)))
            })
            .sum()
    }

    /// Atoms with indices in `range`, for splitting a joint flow into components.
    pub fn restrict(&self, range: std::ops::Range<usize>) -> Self {
        Self { ambient: self.ambient, dim: self.dim, atoms: self.atoms[range].to_vec() }
    }

    pub fn positions(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.atoms.iter().map(|a| &a.position)
    }

    /// Image under the rigid motion x ↦ Rx + b (R orthogonal); masses unchanged.
    pub fn rigid_motion(&self, rotation: &DMatrix<f64>, shift: &DVector<f64>) -> Self {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                position: rotation * &a.position + shift,
                plane: GrassmannElement {
                    projection: symmetrize(rotation * a.plane.projection() * rotation.transpose()),
                    dim: a.plane.dim(),
                },
                mass: a.mass,
            })
            .collect();
        Self { ambient: self.ambient, dim: self.dim, atoms }
    }
}

/// ‖V‖(ℝⁿ).
pub fn total_mass(v: &DiscreteVarifold) -> f64 {
    v.total_mass()
}

/// ‖V‖(φ(·, t)).
pub fn mass_integral(v: &DiscreteVarifold, phi: &dyn ScalarField, t: f64) -> f64 {
    v.mass_integral(phi, t)
}

/// δV(X).
pub fn first_variation(v: &DiscreteVarifold, field: &dyn VectorField) -> f64 {
    v.first_variation(field)
}

/// δ(V, φ)(X).
pub fn weighted_first_variation(v: &DiscreteVarifold, phi: &dyn ScalarField, field: &dyn VectorField, t: f64) -> f64 {
    v.weighted_first_variation(phi, field, t)
}
