//! Population games: payoff maps on the simplex.
//!
//! A game maps a strategy distribution to a payoff vector. Matrix games get
//! exact machinery (constant Jacobian, bordered-system interior Nash solve);
//! black-box payoff maps get finite-difference Jacobians and sampled
//! contractiveness evidence.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::rng::SplitMix64;
use crate::simplex::{sample_interior, tangent_basis, SimplexPoint};

/// Tolerance for exact (linear-algebra) verdicts.
pub const EXACT_TOL: f64 = 1e-10;
/// Tolerance for sampled (evidence-only) verdicts.
pub const SAMPLED_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GameError {
    #[error("payoff matrix must be square with at least 2 strategies")]
    BadMatrix,
    #[error("payoff matrix contains a non-finite entry")]
    NonFinite,
    #[error("payoff evaluation failed: {0}")]
    PayoffFailure(String),
    #[error("bordered equilibrium system is singular: no unique interior candidate")]
    SingularEquilibriumSystem,
    #[error("interior candidate has a nonpositive component (boundary equilibrium, out of scope): {0:?}")]
    BoundaryEquilibrium(Vec<f64>),
    #[error("dimension mismatch: game has {game} strategies, input has {input}")]
    DimensionMismatch { game: usize, input: usize },
}

/// A payoff map F: Δ_n → R^n. `payoff_vector` accepts raw coordinates so the
/// default finite-difference Jacobian can probe just off the simplex.
pub trait PopulationGame {
    fn strategy_count(&self) -> usize;

    /// Payoff at raw coordinates (callers pass simplex points or points a
    /// finite-difference step away from them).
    fn payoff_vector(&self, x: &[f64]) -> Result<DVector<f64>, GameError>;

    /// Payoff Jacobian ∇F(x). The default is a central finite difference
    /// with step 1e-6.
    fn payoff_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, GameError> {
        let n = self.strategy_count();
        if x.len() != n {
            return Err(GameError::DimensionMismatch {
                game: n,
                input: x.len(),
            });
        }
        let h = 1e-6;
        let mut jac = DMatrix::zeros(n, n);
        let mut probe = x.to_vec();
        for j in 0..n {
            probe[j] = x[j] + h;
            let fp = self.payoff_vector(&probe)?;
            probe[j] = x[j] - h;
            let fm = self.payoff_vector(&probe)?;
            probe[j] = x[j];
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        Ok(jac)
    }

    /// Constant Jacobian, when the game has one. Lets generic code take the
    /// exact path for matrix games.
    fn constant_jacobian(&self) -> Option<DMatrix<f64>> {
        None
    }

    /// Payoff at a simplex point.
    fn payoff(&self, x: &SimplexPoint) -> Result<DVector<f64>, GameError> {
        self.payoff_vector(x.as_slice())
    }
}

/// Linear population game p = F x.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixGame {
    f: DMatrix<f64>,
    symmetric: bool,
}

impl MatrixGame {
    pub fn new(f: DMatrix<f64>) -> Result<Self, GameError> {
        if !f.is_square() || f.nrows() < 2 {
            return Err(GameError::BadMatrix);
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(GameError::NonFinite);
        }
        let symmetric = (&f - f.transpose()).amax() <= 1e-12;
        Ok(Self { f, symmetric })
    }

    pub fn from_rows(n: usize, rows: &[f64]) -> Result<Self, GameError> {
        if rows.len() != n * n {
            return Err(GameError::BadMatrix);
        }
        Self::new(DMatrix::from_row_slice(n, n, rows))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }
}

impl PopulationGame for MatrixGame {
    fn strategy_count(&self) -> usize {
        self.f.nrows()
    }

    fn payoff_vector(&self, x: &[f64]) -> Result<DVector<f64>, GameError> {
        if x.len() != self.f.nrows() {
            return Err(GameError::DimensionMismatch {
                game: self.f.nrows(),
                input: x.len(),
            });
        }
        Ok(&self.f * DVector::from_column_slice(x))
    }

    fn payoff_jacobian(&self, _x: &[f64]) -> Result<DMatrix<f64>, GameError> {
        Ok(self.f.clone())
    }

    fn constant_jacobian(&self) -> Option<DMatrix<f64>> {
        Some(self.f.clone())
    }
}

/// Payoff map given as a closure, with an optional analytic Jacobian.
pub struct BlackBoxGame<P, J = fn(&[f64]) -> Result<DMatrix<f64>, GameError>>
where
    P: Fn(&[f64]) -> Result<DVector<f64>, GameError>,
    J: Fn(&[f64]) -> Result<DMatrix<f64>, GameError>,
{
    n: usize,
    payoff: P,
    jacobian: Option<J>,
}

impl<P> BlackBoxGame<P>
where
    P: Fn(&[f64]) -> Result<DVector<f64>, GameError>,
{
    pub fn new(n: usize, payoff: P) -> Self {
        Self {
            n,
            payoff,
            jacobian: None,
        }
    }
}

impl<P, J> BlackBoxGame<P, J>
where
    P: Fn(&[f64]) -> Result<DVector<f64>, GameError>,
    J: Fn(&[f64]) -> Result<DMatrix<f64>, GameError>,
{
    pub fn with_jacobian(n: usize, payoff: P, jacobian: J) -> Self {
        Self {
            n,
            payoff,
            jacobian: Some(jacobian),
        }
    }
}

impl<P, J> PopulationGame for BlackBoxGame<P, J>
where
    P: Fn(&[f64]) -> Result<DVector<f64>, GameError>,
    J: Fn(&[f64]) -> Result<DMatrix<f64>, GameError>,
{
    fn strategy_count(&self) -> usize {
        self.n
    }

    fn payoff_vector(&self, x: &[f64]) -> Result<DVector<f64>, GameError> {
        let p = (self.payoff)(x)?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(GameError::PayoffFailure(format!(
                "non-finite payoff at {x:?}"
            )));
        }
        Ok(p)
    }

    fn payoff_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, GameError> {
        match &self.jacobian {
            Some(j) => j(x),
            None => {
                // Fall back to the trait's finite-difference default.
                FiniteDifferenceView { game: self }.payoff_jacobian(x)
            }
        }
    }
}

/// Helper so BlackBoxGame can reach the trait's default finite-difference
/// implementation from its own override.
struct FiniteDifferenceView<'a, G: PopulationGame + ?Sized> {
    game: &'a G,
}

impl<G: PopulationGame + ?Sized> PopulationGame for FiniteDifferenceView<'_, G> {
    fn strategy_count(&self) -> usize {
        self.game.strategy_count()
    }
    fn payoff_vector(&self, x: &[f64]) -> Result<DVector<f64>, GameError> {
        self.game.payoff_vector(x)
    }
}

/// How a game's payoff map contracts on the tangent space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Contractiveness {
    StrictlyContractive,
    Contractive,
    Lossless,
    NotContractive,
}

/// Eigenvalue summary of the symmetrized tangent-space Jacobian. For matrix
/// games (`exact = true`, one sample) this is a certificate; for black-box
/// games it is sampled evidence only.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ContractivenessReport {
    pub verdict: Contractiveness,
    pub max_tangent_eig: f64,
    pub min_tangent_eig: f64,
    pub sample_count: usize,
    pub exact: bool,
}

fn classify(max_eig: f64, min_eig: f64, tol: f64) -> Contractiveness {
    if max_eig < -tol {
        Contractiveness::StrictlyContractive
    } else if max_eig.abs() <= tol && min_eig.abs() <= tol {
        Contractiveness::Lossless
    } else if max_eig <= tol {
        Contractiveness::Contractive
    } else {
        Contractiveness::NotContractive
    }
}

/// Classify contractiveness from tangent-space eigenvalues of the symmetrized
/// Jacobian N^T((∇F+∇F^T)/2)N.
///
/// Matrix games are decided exactly from their constant Jacobian; other games
/// are probed at `samples` interior Dirichlet points drawn from the seeded
/// generator and the verdict is evidence, not a certificate.
pub fn contractiveness<G: PopulationGame + ?Sized>(
    game: &G,
    samples: usize,
    seed: u64,
) -> Result<ContractivenessReport, GameError> {
    assert!(samples >= 1, "need at least one sample");
    let n = game.strategy_count();
    let basis = tangent_basis(n).expect("n >= 2 by game construction");

    let tangent_eigs = |jac: &DMatrix<f64>| -> (f64, f64) {
        let sym = (jac + jac.transpose()) * 0.5;
        let reduced = basis.reduce(&sym);
        let eigs = reduced.symmetric_eigenvalues();
        let max = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        (max, min)
    };

    if let Some(jac) = game.constant_jacobian() {
        let (max, min) = tangent_eigs(&jac);
        return Ok(ContractivenessReport {
            verdict: classify(max, min, EXACT_TOL),
            max_tangent_eig: max,
            min_tangent_eig: min,
            sample_count: 1,
            exact: true,
        });
    }

    let mut rng = SplitMix64::new(seed);
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for _ in 0..samples {
        let x = sample_interior(n, &mut rng);
        let jac = game.payoff_jacobian(x.as_slice())?;
        let (hi, lo) = tangent_eigs(&jac);
        max = max.max(hi);
        min = min.min(lo);
    }
    Ok(ContractivenessReport {
        verdict: classify(max, min, SAMPLED_TOL),
        max_tangent_eig: max,
        min_tangent_eig: min,
        sample_count: samples,
        exact: false,
    })
}

/// Interior Nash equilibrium of a matrix game, with its payoff level.
///
/// Solves the bordered system [[F, −1],[1^T, 0]]·(x, α) = (0,…,0,1): an
/// interior equilibrium must equalize payoffs, F x* = α·1.
pub fn interior_nash(game: &MatrixGame) -> Result<(SimplexPoint, f64), GameError> {
    let n = game.strategy_count();
    let f = game.matrix();
    let mut sys = DMatrix::zeros(n + 1, n + 1);
    sys.view_mut((0, 0), (n, n)).copy_from(f);
    for i in 0..n {
        sys[(i, n)] = -1.0;
        sys[(n, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or(GameError::SingularEquilibriumSystem)?;
    let x = sol.rows(0, n).into_owned();
    let alpha = sol[n];

    // Reject ill-conditioned "solutions" the LU did not flag.
    let residual = (f * &x - DVector::from_element(n, alpha)).norm();
    let closure = (x.sum() - 1.0).abs();
    if !residual.is_finite() || residual > EXACT_TOL || closure > EXACT_TOL {
        return Err(GameError::SingularEquilibriumSystem);
    }
    if x.iter().any(|&v| v <= 0.0) {
        return Err(GameError::BoundaryEquilibrium(x.iter().cloned().collect()));
    }
    let point = SimplexPoint::new(x).map_err(|_| GameError::SingularEquilibriumSystem)?;
    Ok((point, alpha))
}

/// Best-response advantage max_i F(x)_i − x^T F(x). Nonnegative; zero exactly
/// at Nash equilibria.
pub fn nash_gap<G: PopulationGame + ?Sized>(game: &G, x: &SimplexPoint) -> Result<f64, GameError> {
    let p = game.payoff(x)?;
    let best = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let value = x.as_vector().dot(&p);
    Ok(best - value)
}

/// Rock–paper–scissors: lossless, unique interior equilibrium at the
/// barycenter.
pub fn rps_example() -> MatrixGame {
    MatrixGame::from_rows(3, &[0.0, -1.0, 1.0, 1.0, 0.0, -1.0, -1.0, 1.0, 0.0]).unwrap()
}

/// Three-route congestion game with payoffs p = −c(x),
/// c(x) = (3x₁+x₃, 2x₂+x₃, x₁+x₂+3x₃): symmetric and negative definite on
/// the tangent space, hence strictly contractive.
pub fn congestion_example() -> MatrixGame {
    MatrixGame::from_rows(3, &[-3.0, 0.0, -1.0, 0.0, -2.0, -1.0, -1.0, -1.0, -3.0]).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rps_is_lossless() {
        let report = contractiveness(&rps_example(), 1, 0).unwrap();
        assert_eq!(report.verdict, Contractiveness::Lossless);
        assert!(report.exact);
        assert_eq!(report.sample_count, 1);
    }

    #[test]
    fn congestion_is_strictly_contractive() {
        let report = contractiveness(&congestion_example(), 1, 0).unwrap();
        assert_eq!(report.verdict, Contractiveness::StrictlyContractive);
        assert!(report.max_tangent_eig < -0.5);
    }

    #[test]
    fn identity_game_is_not_contractive() {
        let game = MatrixGame::new(DMatrix::identity(3, 3)).unwrap();
        let report = contractiveness(&game, 1, 0).unwrap();
        assert_eq!(report.verdict, Contractiveness::NotContractive);
    }

    #[test]
    fn contractive_but_not_strict_matrix() {
        // Rank-deficient negative semidefinite on the tangent space:
        // F = −N₁N₁^T for a single tangent direction leaves the orthogonal
        // tangent direction lossless.
        let basis = tangent_basis(3).unwrap();
        let n1 = basis.matrix().column(0).into_owned();
        let f = -&n1 * n1.transpose();
        let game = MatrixGame::new(f).unwrap();
        let report = contractiveness(&game, 1, 0).unwrap();
        assert_eq!(report.verdict, Contractiveness::Contractive);
    }

    #[test]
    fn definitional_pairwise_test_agrees_with_eigenvalues() {
        let mut rng = SplitMix64::new(17);
        for (game, strict) in [(congestion_example(), true), (rps_example(), false)] {
            for _ in 0..200 {
                let x = sample_interior(3, &mut rng);
                let y = sample_interior(3, &mut rng);
                let dx = x.as_vector() - y.as_vector();
                let dp = game.payoff(&x).unwrap() - game.payoff(&y).unwrap();
                let form = dx.dot(&dp);
                if strict {
                    if dx.norm() > 1e-9 {
                        assert!(form < 0.0, "strictly contractive game violated: {form}");
                    }
                } else {
                    assert!(form.abs() <= 1e-10, "lossless game violated: {form}");
                }
            }
        }
    }

    #[test]
    fn sampled_contractiveness_for_black_box_game() {
        // Wrap the congestion payoff as a black box; evidence should match
        // the exact verdict.
        let f = congestion_example();
        let payoff = move |x: &[f64]| f.payoff_vector(x);
        let game = BlackBoxGame::new(3, payoff);
        let report = contractiveness(&game, 50, 42).unwrap();
        assert!(!report.exact);
        assert_eq!(report.sample_count, 50);
        assert_eq!(report.verdict, Contractiveness::StrictlyContractive);
        // Finite-difference Jacobian of a linear map is exact to ~1e-9.
        assert_abs_diff_eq!(
            report.max_tangent_eig,
            contractiveness(&congestion_example(), 1, 0)
                .unwrap()
                .max_tangent_eig,
            epsilon = 1e-7
        );
    }

    #[test]
    fn interior_nash_rps() {
        let (x, alpha) = interior_nash(&rps_example()).unwrap();
        for &v in x.as_slice() {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(alpha, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn interior_nash_congestion() {
        let (x, alpha) = interior_nash(&congestion_example()).unwrap();
        assert_abs_diff_eq!(x.as_slice()[0], 4.0 / 11.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x.as_slice()[1], 6.0 / 11.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x.as_slice()[2], 1.0 / 11.0, epsilon = 1e-12);
        assert_abs_diff_eq!(alpha, -13.0 / 11.0, epsilon = 1e-12);
        // Residual of the equalized-payoff condition.
        let p = congestion_example().payoff(&x).unwrap();
        let residual = (p - DVector::from_element(3, alpha)).norm();
        assert!(residual <= 1e-10);
    }

    #[test]
    fn interior_nash_rejects_zero_matrix() {
        let game = MatrixGame::new(DMatrix::zeros(3, 3)).unwrap();
        assert!(matches!(
            interior_nash(&game),
            Err(GameError::SingularEquilibriumSystem)
        ));
    }

    #[test]
    fn interior_nash_reports_boundary_candidates() {
        // Payoffs equalize only at x = (0, 1), on the boundary.
        let game = MatrixGame::from_rows(2, &[1.0, 0.0, 2.0, 0.0]).unwrap();
        match interior_nash(&game) {
            Err(GameError::BoundaryEquilibrium(_)) => {}
            other => panic!("expected boundary error, got {other:?}"),
        }
    }

    #[test]
    fn nash_gap_at_equilibria_and_vertices() {
        let rps = rps_example();
        let (x, _) = interior_nash(&rps).unwrap();
        assert!(nash_gap(&rps, &x).unwrap() <= 1e-10);

        let congestion = congestion_example();
        let (x, _) = interior_nash(&congestion).unwrap();
        assert!(nash_gap(&congestion, &x).unwrap() <= 1e-12);

        let vertex = SimplexPoint::from_slice(&[1.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(nash_gap(&rps, &vertex).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn interior_nash_satisfies_nash_gap() {
        for game in [rps_example(), congestion_example()] {
            let (x, _) = interior_nash(&game).unwrap();
            assert!(nash_gap(&game, &x).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn congestion_route_costs_at_vertex() {
        // c(x) = −F x; at x = e₁ the route costs are (3, 0, 1).
        let game = congestion_example();
        let p = game.payoff_vector(&[1.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(-p[0], 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(-p[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(-p[2], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn builtin_matrices_match_printed_values() {
        let rps = rps_example();
        let expect =
            DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 1.0, 1.0, 0.0, -1.0, -1.0, 1.0, 0.0]);
        assert_eq!(rps.matrix(), &expect);
        assert!(!rps.is_symmetric());
        assert!(congestion_example().is_symmetric());
    }

    #[test]
    fn tangent_classification_is_basis_invariant() {
        // Rotating the tangent basis must not move the eigenvalues.
        let game = congestion_example();
        let basis = tangent_basis(3).unwrap();
        let theta: f64 = 0.73;
        let rot =
            DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
        let rotated = crate::simplex::TangentBasis::from_matrix(basis.matrix() * rot).unwrap();
        let sym = (game.matrix() + game.matrix().transpose()) * 0.5;
        let mut e1: Vec<f64> = basis
            .reduce(&sym)
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .collect();
        let mut e2: Vec<f64> = rotated
            .reduce(&sym)
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .collect();
        e1.sort_by(|a, b| a.partial_cmp(b).unwrap());
        e2.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in e1.iter().zip(&e2) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }
}
