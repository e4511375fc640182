//! Convergence certificates and diagnostics for the closed loop.
//!
//! Everything here works in reduced tangent coordinates: strategies move on
//! the simplex, so the loop is linearized through an orthonormal tangent
//! basis and judged by the spectrum of the reduced matrices. Three kinds of
//! evidence are produced:
//!
//! * exact local evidence — eigenvalues of the reduced linearization at an
//!   interior equilibrium;
//! * exact frequency-domain evidence for symmetric matrix games — the
//!   Hermitian part of H(jω) = −g(jω)·F̃ decides between exponential and
//!   asymptotic convergence of the cascade loop;
//! * sampled/empirical evidence — frozen-state variational spectra and
//!   trajectory-pair contraction probes. These are labeled as evidence, not
//!   certificates: no common quadratic storage matrix is searched for.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{Complex, DMatrix, DVector};

use crate::dynamics::{integrate, ClosedLoopSystem, DynamicsError, IntegratorSettings};
use crate::games::{interior_nash, GameError, MatrixGame, PopulationGame};
use crate::lti::{frequency_grid, passivity_report, realize, LtiError, TransferFunction};
use crate::simplex::{
    softmax, softmax_jacobian_at, tangent_basis, SimplexError, SimplexPoint, TangentBasis,
};

/// Eigenvalue magnitude below which a mode counts as marginal.
pub const MARGINAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Lti(#[from] LtiError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Simplex(#[from] SimplexError),
    #[error("sample state {0} is not strictly interior")]
    BoundaryState(usize),
    #[error("damping must lie in (0, 1], got {0}")]
    BadDamping(f64),
    #[error("fixed-point iteration did not reach tolerance after {iterations} iterations; last residual {last_residual:.3e}")]
    FixedPointDiverged {
        iterations: usize,
        last_residual: f64,
        residual_history: Vec<f64>,
    },
    #[error("internal consistency check failed: {0}")]
    Inconsistent(String),
}

#[cfg(feature = "serde")]
fn serialize_eigenvalues<S: serde::Serializer>(
    eigs: &[Complex<f64>],
    s: S,
) -> Result<S::Ok, S::Error> {
    use serde::Serialize;
    let pairs: Vec<[f64; 2]> = eigs.iter().map(|e| [e.re, e.im]).collect();
    pairs.serialize(s)
}

#[cfg(feature = "serde")]
fn serialize_simplex_point<S: serde::Serializer>(
    x: &SimplexPoint,
    s: S,
) -> Result<S::Ok, S::Error> {
    use serde::Serialize;
    x.as_slice().serialize(s)
}

#[cfg(feature = "serde")]
fn serialize_dvector<S: serde::Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
    use serde::Serialize;
    v.as_slice().serialize(s)
}

/// Spectrum of the reduced closed-loop linearization at an interior
/// equilibrium.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct LinearizationReport {
    pub reduced_dims: usize,
    /// Sorted by (re, im) descending.
    #[cfg_attr(feature = "serde", serde(serialize_with = "serialize_eigenvalues"))]
    pub eigenvalues: Vec<Complex<f64>>,
    pub max_real_part: f64,
    /// Smallest eigenvalue of the reduced softmax Jacobian; positive at
    /// interior points.
    pub q_tilde_min_eig: f64,
    /// Largest eigenvalue of the reduced symmetrized payoff Jacobian;
    /// negative for strictly contractive games.
    pub f_tilde_max_eig: f64,
}

fn sort_eigenvalues(eigs: &mut [Complex<f64>]) {
    eigs.sort_by(|a, b| {
        (b.re, b.im)
            .partial_cmp(&(a.re, a.im))
            .expect("eigenvalues are finite")
    });
}

/// A ⊗ I_k, materialized. The reduced matrices here stay below ~60×60.
fn kron_identity(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (r, c) = a.shape();
    let mut out = DMatrix::zeros(r * k, c * k);
    for i in 0..r {
        for j in 0..c {
            let v = a[(i, j)];
            if v != 0.0 {
                for t in 0..k {
                    out[(i * k + t, j * k + t)] = v;
                }
            }
        }
    }
    out
}

/// Linearize the higher-order replicator loop (or standard replicator for
/// `h = None`) around the game's interior equilibrium, in tangent
/// coordinates, and report the spectrum.
pub fn linearize_higher_order(
    game: &MatrixGame,
    h: Option<&TransferFunction>,
) -> Result<LinearizationReport, AnalysisError> {
    let basis = tangent_basis(game.strategy_count())?;
    linearize_higher_order_with_basis(game, h, &basis)
}

/// Same as [`linearize_higher_order`] with a caller-supplied tangent basis.
/// The spectrum is basis-independent; reduced coordinates are not.
pub fn linearize_higher_order_with_basis(
    game: &MatrixGame,
    h: Option<&TransferFunction>,
    basis: &TangentBasis,
) -> Result<LinearizationReport, AnalysisError> {
    let n = game.strategy_count();
    let k = n - 1;
    let (x_star, _alpha) = interior_nash(game)?;

    let q = softmax_jacobian_at(&x_star);
    let q_tilde = basis.reduce(&q);
    let f_tilde = basis.reduce(game.matrix());
    let f_sym = (game.matrix() + game.matrix().transpose()) * 0.5;
    let f_tilde_sym = basis.reduce(&f_sym);

    let q_tilde_min_eig = q_tilde
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let f_tilde_max_eig = f_tilde_sym
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);

    let fq = &f_tilde * &q_tilde;
    let reduced = match h {
        None => fq,
        Some(h) => {
            let r = realize(h)?;
            let m = r.dim();
            let a_t = kron_identity(r.a(), k);
            let b_t = kron_identity(&DMatrix::from_column_slice(m, 1, r.b().as_slice()), k);
            let c_t = kron_identity(&DMatrix::from_row_slice(1, m, r.c().as_slice()), k);
            let dim = (m + 1) * k;
            let mut block = DMatrix::zeros(dim, dim);
            let fqc = &fq * &c_t;
            let bfq = &b_t * &fq;
            block.view_mut((0, 0), (k, k)).copy_from(&fq);
            block.view_mut((0, k), (k, m * k)).copy_from(&fqc);
            block.view_mut((k, 0), (m * k, k)).copy_from(&bfq);
            block
                .view_mut((k, k), (m * k, m * k))
                .copy_from(&(&a_t + &b_t * &fqc));
            block
        }
    };

    let mut eigenvalues: Vec<Complex<f64>> =
        reduced.complex_eigenvalues().iter().cloned().collect();
    sort_eigenvalues(&mut eigenvalues);
    let max_real_part = eigenvalues
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(LinearizationReport {
        reduced_dims: reduced.nrows(),
        eigenvalues,
        max_real_part,
        q_tilde_min_eig,
        f_tilde_max_eig,
    })
}

/// Outcome of the frequency-domain convergence certificate.
///
/// `Asymptotic` verdicts additionally assume the invariant-set condition of
/// the underlying LaSalle argument (observability of the lifted pair); that
/// hypothesis is not algorithmically checked here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ConvergenceVerdict {
    Exponential,
    Asymptotic,
    None,
}

/// Frequency-domain convergence certificate for the cascade loop in a
/// symmetric strictly contractive matrix game.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct GlobalConvergenceCertificate {
    pub game_symmetric: bool,
    pub game_strictly_contractive: bool,
    pub g_passive: bool,
    pub g_strictly_passive: bool,
    /// inf over the sampled grid of λ_min(H(jω) + H(jω)*), H = −g(jω)·F̃.
    pub min_herm_eig_over_omega: f64,
    pub verdict: ConvergenceVerdict,
}

/// Evaluate the convergence certificate: symmetry and strict contractiveness
/// of the game, passivity of g, and the Hermitian-part condition on
/// H(jω) = −g(jω)·F̃ over the frequency grid.
///
/// A game that violates the hypotheses is refused with verdict `None` and the
/// failing flags set; that is a verdict about applicability, not an error.
pub fn global_convergence_certificate(
    game: &MatrixGame,
    g: &TransferFunction,
    omega_max: f64,
    samples: usize,
) -> Result<GlobalConvergenceCertificate, AnalysisError> {
    if !g.is_strictly_proper() {
        return Err(AnalysisError::Lti(LtiError::NotStrictlyProper));
    }
    let basis = tangent_basis(game.strategy_count())?;
    let f_tilde = basis.reduce(game.matrix());
    let game_symmetric = game.is_symmetric();

    let f_sym = (game.matrix() + game.matrix().transpose()) * 0.5;
    let game_strictly_contractive = basis
        .reduce(&f_sym)
        .symmetric_eigenvalues()
        .iter()
        .all(|&e| e < -MARGINAL_TOL);

    let g_report = passivity_report(g, omega_max, samples)?;

    // λ_min of the Hermitian part of −g(jω)F̃ over the grid. For symmetric
    // games this is −2·Re(g(jω))·λ(F̃) eigenvalue-wise; in general it needs a
    // Hermitian eigensolve. Pole frequencies of g are skipped.
    let grid = frequency_grid(omega_max, samples)?;
    let f_eigs: Option<Vec<f64>> =
        game_symmetric.then(|| f_tilde.symmetric_eigenvalues().iter().cloned().collect());
    let k = f_tilde.nrows();
    let mut min_herm = f64::INFINITY;
    for &omega in &grid {
        let s = Complex::new(0.0, omega);
        let den_scale: f64 = g
            .den()
            .iter()
            .rev()
            .enumerate()
            .map(|(p, &c)| (c * libm::pow(omega, p as f64)).abs())
            .sum();
        let den_val = {
            let mut acc = Complex::new(0.0, 0.0);
            for &c in g.den() {
                acc = acc * s + c;
            }
            acc
        };
        if den_val.norm() <= 1e-9 * den_scale.max(1e-300) {
            continue;
        }
        let gv = g.evaluate(s);
        let local_min = match &f_eigs {
            Some(eigs) => eigs
                .iter()
                .map(|&lambda| -2.0 * gv.re * lambda)
                .fold(f64::INFINITY, f64::min),
            None => {
                let herm = DMatrix::from_fn(k, k, |i, j| {
                    -gv * f_tilde[(i, j)] - (-gv * f_tilde[(j, i)]).conj()
                });
                herm.symmetric_eigenvalues()
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min)
            }
        };
        min_herm = min_herm.min(local_min);
    }

    let verdict = if game_symmetric && game_strictly_contractive && g_report.strictly_passive {
        ConvergenceVerdict::Exponential
    } else if game_symmetric && game_strictly_contractive && g_report.passive {
        ConvergenceVerdict::Asymptotic
    } else {
        ConvergenceVerdict::None
    };

    match verdict {
        ConvergenceVerdict::Exponential if min_herm <= 0.0 || min_herm.is_nan() => {
            return Err(AnalysisError::Inconsistent(format!(
                "exponential verdict but min Hermitian eigenvalue {min_herm:.3e} over the grid"
            )));
        }
        ConvergenceVerdict::Asymptotic if min_herm < -MARGINAL_TOL => {
            return Err(AnalysisError::Inconsistent(format!(
                "asymptotic verdict but min Hermitian eigenvalue {min_herm:.3e} over the grid"
            )));
        }
        _ => {}
    }

    Ok(GlobalConvergenceCertificate {
        game_symmetric,
        game_strictly_contractive,
        g_passive: g_report.passive,
        g_strictly_passive: g_report.strictly_passive,
        min_herm_eig_over_omega: min_herm,
        verdict,
    })
}

/// Strategy-space distance record of a trajectory pair, with a monotonicity
/// onset and an exponential-rate fit when the decay is clean enough to
/// support one.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct IncrementalReport {
    pub t: Vec<f64>,
    pub distances: Vec<f64>,
    /// Time after which the distance is nonincreasing (1e-9 slack).
    pub monotone_after: f64,
    /// Least-squares slope of log distance over the fit window, 1/s. Only
    /// reported when the fit's R² is at least 0.99.
    pub fitted_rate: Option<f64>,
    pub fit_r_squared: Option<f64>,
    pub initial_distance: f64,
    pub final_distance: f64,
}

/// Integrate two initial states of the same closed loop on a shared time
/// grid and measure how the strategy-space gap evolves.
pub fn incremental_probe<G: PopulationGame>(
    sys: &ClosedLoopSystem<G>,
    state0_a: &[f64],
    state0_b: &[f64],
    settings: &IntegratorSettings,
) -> Result<IncrementalReport, AnalysisError> {
    let traj_a = integrate(sys, state0_a, settings)?;
    let traj_b = integrate(sys, state0_b, settings)?;
    debug_assert_eq!(traj_a.t, traj_b.t);

    let distances: Vec<f64> = traj_a
        .x
        .iter()
        .zip(&traj_b.x)
        .map(|(a, b)| a.distance(b))
        .collect();
    let t = traj_a.t;
    let len = distances.len();

    let mut onset_idx = 0;
    for i in 1..len {
        if distances[i] > distances[i - 1] + 1e-9 {
            onset_idx = i;
        }
    }
    let monotone_after = t[onset_idx];

    // Fit window: the last half of the samples past the monotone onset,
    // dropping values too small to carry log information.
    let fit_start = onset_idx + (len - onset_idx) / 2;
    let points: Vec<(f64, f64)> = (fit_start..len)
        .filter(|&i| distances[i] > 1e-250)
        .map(|i| (t[i], libm::log(distances[i])))
        .collect();

    let (fitted_rate, fit_r_squared) = fit_line(&points);

    Ok(IncrementalReport {
        initial_distance: distances[0],
        final_distance: *distances.last().expect("nonempty trajectory"),
        t,
        distances,
        monotone_after,
        fitted_rate,
        fit_r_squared,
    })
}

/// Least-squares slope and R² of y over x; slope reported only when R² ≥
/// 0.99 and the window holds at least 5 points.
fn fit_line(points: &[(f64, f64)]) -> (Option<f64>, Option<f64>) {
    if points.len() < 5 {
        return (None, None);
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return (None, None);
    }
    let slope = sxy / sxx;
    let r_squared = (sxy * sxy) / (sxx * syy);
    if r_squared >= 0.99 {
        (Some(slope), Some(r_squared))
    } else {
        (None, Some(r_squared))
    }
}

/// Frozen-state variational spectra: necessary evidence for the common-storage
/// hypothesis behind incremental stability, not a certificate (no common
/// quadratic storage matrix is searched for).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct VariationalEvidence {
    pub per_sample_abscissa: Vec<f64>,
    pub max_abscissa: f64,
    pub sample_count: usize,
}

/// At each interior sample state, freeze the softmax Jacobian, assemble the
/// reduced cascade linearization Ã + B̃·F̃·Q̃(x̄)·C̃, and report its spectral
/// abscissa.
pub fn variational_sample_check(
    game: &MatrixGame,
    g: &TransferFunction,
    sample_states: &[SimplexPoint],
) -> Result<VariationalEvidence, AnalysisError> {
    let n = game.strategy_count();
    let k = n - 1;
    let basis = tangent_basis(n)?;
    let f_tilde = basis.reduce(game.matrix());
    let r = realize(g)?;
    let m = r.dim();
    let a_t = kron_identity(r.a(), k);
    let b_t = kron_identity(&DMatrix::from_column_slice(m, 1, r.b().as_slice()), k);
    let c_t = kron_identity(&DMatrix::from_row_slice(1, m, r.c().as_slice()), k);

    let mut per_sample = Vec::with_capacity(sample_states.len());
    for (idx, x_bar) in sample_states.iter().enumerate() {
        if !x_bar.is_interior() {
            return Err(AnalysisError::BoundaryState(idx));
        }
        if x_bar.dim() != n {
            return Err(AnalysisError::Game(GameError::DimensionMismatch {
                game: n,
                input: x_bar.dim(),
            }));
        }
        let q_tilde = basis.reduce(&softmax_jacobian_at(x_bar));
        let frozen = &a_t + &b_t * (&f_tilde * &q_tilde) * &c_t;
        let abscissa = frozen
            .complex_eigenvalues()
            .iter()
            .map(|e| e.re)
            .fold(f64::NEG_INFINITY, f64::max);
        per_sample.push(abscissa);
    }
    let max_abscissa = per_sample.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(VariationalEvidence {
        sample_count: per_sample.len(),
        per_sample_abscissa: per_sample,
        max_abscissa,
    })
}

/// Rest point of exponential replicator dynamics: score solving z = F·σ(z),
/// with the strategy it induces. Distinct from the Nash equilibrium unless
/// the payoff level vanishes.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ExRdFixedPoint {
    #[cfg_attr(feature = "serde", serde(serialize_with = "serialize_simplex_point"))]
    pub x_dagger: SimplexPoint,
    #[cfg_attr(feature = "serde", serde(serialize_with = "serialize_dvector"))]
    pub score: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Damped fixed-point iteration z ← (1−d)·z + d·F·σ(z) from z = 0, run to
/// residual ‖z − F·σ(z)‖ ≤ 1e-12 (at most 10⁵ iterations).
pub fn fixed_point_exrd(game: &MatrixGame, damping: f64) -> Result<ExRdFixedPoint, AnalysisError> {
    if damping.is_nan() || damping <= 0.0 || damping > 1.0 {
        return Err(AnalysisError::BadDamping(damping));
    }
    let n = game.strategy_count();
    let mut z = DVector::zeros(n);
    let mut history = Vec::new();
    const MAX_ITERS: usize = 100_000;
    for iter in 0..MAX_ITERS {
        let x = softmax(&z)?;
        let fz = game.payoff(&x)?;
        let residual = (&z - &fz).norm();
        history.push(residual);
        if residual <= 1e-12 {
            return Ok(ExRdFixedPoint {
                x_dagger: x,
                score: z,
                residual,
                iterations: iter,
            });
        }
        z = &z * (1.0 - damping) + fz * damping;
    }
    let last = *history.last().expect("at least one iteration ran");
    // Thin the history so the error stays readable.
    let thinned: Vec<f64> = history
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 1000 == 0 || *i == MAX_ITERS - 1)
        .map(|(_, &r)| r)
        .collect();
    Err(AnalysisError::FixedPointDiverged {
        iterations: MAX_ITERS,
        last_residual: last,
        residual_history: thinned,
    })
}
