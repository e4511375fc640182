//! Geometry of the probability simplex.
//!
//! Strategies live on Δ_n = {x : x_i ≥ 0, Σ x_i = 1}; score vectors reach the
//! simplex through the softmax map σ. Reduced-coordinate analysis needs an
//! orthonormal basis of the tangent space Z = {z : Σ z_i = 0}, built here by a
//! Householder reflection so the basis is deterministic for every n.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::rng::SplitMix64;

/// Tolerance for simplex membership after construction/renormalization.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// How far off the simplex raw input may be before construction refuses to
/// renormalize it. ODE output drifts at integrator-tolerance scale, well
/// inside this.
const CONSTRUCTION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimplexError {
    #[error("input contains a non-finite entry")]
    NonFinite,
    #[error("need at least 2 strategies, got {0}")]
    TooFewStrategies(usize),
    #[error("vector is not on the simplex: {0}")]
    NotOnSimplex(String),
}

/// A point of the probability simplex. Entries are nonnegative and sum to 1
/// within [`SIMPLEX_TOL`]; construction renormalizes and clamps tiny negative
/// drift away.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint {
    x: DVector<f64>,
}

impl SimplexPoint {
    pub fn new(x: DVector<f64>) -> Result<Self, SimplexError> {
        if x.len() < 2 {
            return Err(SimplexError::TooFewStrategies(x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimplexError::NonFinite);
        }
        if let Some(neg) = x.iter().find(|&&v| v < -CONSTRUCTION_TOL) {
            return Err(SimplexError::NotOnSimplex(alloc::format!(
                "negative entry {neg}"
            )));
        }
        let mut x = x;
        for v in x.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let sum: f64 = x.iter().sum();
        if (sum - 1.0).abs() > CONSTRUCTION_TOL {
            return Err(SimplexError::NotOnSimplex(alloc::format!(
                "entries sum to {sum}"
            )));
        }
        x /= sum;
        Ok(Self { x })
    }

    pub fn from_slice(x: &[f64]) -> Result<Self, SimplexError> {
        Self::new(DVector::from_column_slice(x))
    }

    /// Uniform distribution over n strategies.
    pub fn uniform(n: usize) -> Self {
        assert!(n >= 2, "need at least 2 strategies");
        Self {
            x: DVector::from_element(n, 1.0 / n as f64),
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn as_slice(&self) -> &[f64] {
        self.x.as_slice()
    }

    /// True when every entry is strictly positive.
    pub fn is_interior(&self) -> bool {
        self.x.iter().all(|&v| v > 0.0)
    }

    /// Euclidean distance to another point.
    pub fn distance(&self, other: &SimplexPoint) -> f64 {
        (&self.x - &other.x).norm()
    }
}

/// Orthonormal basis of the tangent space Z, stored as an n×(n−1) matrix with
/// orthonormal columns orthogonal to the all-ones vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentBasis {
    n: DMatrix<f64>,
}

impl TangentBasis {
    /// Number of strategies n (rows of the basis matrix).
    pub fn dim(&self) -> usize {
        self.n.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.n
    }

    /// Reduce a square n×n matrix to tangent coordinates: N^T M N.
    pub fn reduce(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.n.transpose() * m * &self.n
    }

    /// Lift reduced coordinates back to the tangent space: N y.
    pub fn lift(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.n * y
    }

    /// Wrap a caller-supplied basis matrix, checking orthonormality and
    /// tangency. Used by basis-independence tests; everyday code should call
    /// [`tangent_basis`].
    pub fn from_matrix(n: DMatrix<f64>) -> Result<Self, SimplexError> {
        let rows = n.nrows();
        if rows < 2 || n.ncols() != rows - 1 {
            return Err(SimplexError::TooFewStrategies(rows));
        }
        let gram = n.transpose() * &n;
        let eye = DMatrix::identity(rows - 1, rows - 1);
        if (gram - eye).amax() > SIMPLEX_TOL {
            return Err(SimplexError::NotOnSimplex(String::from(
                "columns not orthonormal",
            )));
        }
        let ones = DVector::from_element(rows, 1.0);
        if (n.transpose() * ones).amax() > SIMPLEX_TOL {
            return Err(SimplexError::NotOnSimplex(String::from(
                "columns not orthogonal to the ones vector",
            )));
        }
        Ok(Self { n })
    }
}

/// Softmax map σ(v)_i = exp(v_i)/Σ_j exp(v_j), evaluated with max-subtraction
/// so entries up to ±700 cannot overflow.
pub fn softmax(v: &DVector<f64>) -> Result<SimplexPoint, SimplexError> {
    if v.len() < 2 {
        return Err(SimplexError::TooFewStrategies(v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(SimplexError::NonFinite);
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut exps = DVector::from_iterator(v.len(), v.iter().map(|&x| libm::exp(x - max)));
    let sum: f64 = exps.iter().sum();
    exps /= sum;
    Ok(SimplexPoint { x: exps })
}

/// Jacobian of softmax at score v: diag(σ(v)) − σ(v)σ(v)^T. Symmetric PSD
/// with the ones vector in its kernel.
pub fn softmax_jacobian(v: &DVector<f64>) -> Result<DMatrix<f64>, SimplexError> {
    let s = softmax(v)?;
    Ok(softmax_jacobian_at(&s))
}

/// Softmax Jacobian expressed through its output x: diag(x) − x x^T.
pub fn softmax_jacobian_at(x: &SimplexPoint) -> DMatrix<f64> {
    let n = x.dim();
    let v = x.as_vector();
    let mut q = DMatrix::from_fn(n, n, |i, j| -v[i] * v[j]);
    for i in 0..n {
        q[(i, i)] += v[i];
    }
    q
}

/// Deterministic orthonormal basis of the tangent space, from the Householder
/// reflection that maps the first coordinate axis onto the normalized ones
/// vector: the remaining n−1 columns of the reflector span Z.
pub fn tangent_basis(n: usize) -> Result<TangentBasis, SimplexError> {
    if n < 2 {
        return Err(SimplexError::TooFewStrategies(n));
    }
    let inv_sqrt_n = 1.0 / libm::sqrt(n as f64);
    // w = e_1 − 1/√n · 1
    let mut w = DVector::from_element(n, -inv_sqrt_n);
    w[0] += 1.0;
    let beta = 2.0 / w.dot(&w);
    let basis = DMatrix::from_fn(n, n - 1, |i, j| {
        let col = j + 1;
        let delta = if i == col { 1.0 } else { 0.0 };
        delta - beta * w[i] * w[col]
    });
    Ok(TangentBasis { n: basis })
}

/// Remove the mean: v − mean(v)·1. Softmax is invariant under this shift, so
/// projecting score drifts keeps states bounded without changing strategies.
pub fn project_zero_mean(v: &DVector<f64>) -> DVector<f64> {
    let mean = v.mean();
    v.map(|x| x - mean)
}

/// Relative entropy D(p‖q) = Σ p_i log(p_i/q_i). Requires q interior wherever
/// p has mass; conserved along standard replicator orbits of lossless games,
/// which makes it the non-convergence oracle.
pub fn relative_entropy(p: &SimplexPoint, q: &SimplexPoint) -> f64 {
    assert_eq!(p.dim(), q.dim());
    let mut d = 0.0;
    for (pi, qi) in p.as_slice().iter().zip(q.as_slice()) {
        if *pi > 0.0 {
            d += pi * libm::log(pi / qi);
        }
    }
    d
}

/// Interior point drawn from the flat Dirichlet(1,…,1): normalized unit
/// exponentials.
pub fn sample_interior(n: usize, rng: &mut SplitMix64) -> SimplexPoint {
    assert!(n >= 2);
    let draws: Vec<f64> = (0..n).map(|_| -libm::log(rng.next_f64())).collect();
    let sum: f64 = draws.iter().sum();
    SimplexPoint {
        x: DVector::from_iterator(n, draws.into_iter().map(|e| e / sum)),
    }
}

/// Random unit vector in the tangent space (zero-sum, norm 1).
pub fn sample_tangent_unit(n: usize, rng: &mut SplitMix64) -> DVector<f64> {
    assert!(n >= 2);
    loop {
        // Box-Muller normals, projected and normalized.
        let v = DVector::from_fn(n, |_, _| {
            let u1 = rng.next_f64();
            let u2 = rng.next_f64();
            libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
        });
        let z = project_zero_mean(&v);
        let norm = z.norm();
        if norm > 1e-8 {
            return z / norm;
        }
    }
}
