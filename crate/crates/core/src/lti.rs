//! SISO rational transfer functions and their certificates.
//!
//! The learning rules downstream are built from strictly proper h(s) or g(s):
//! this module realizes them in controllable canonical form, lifts them to n
//! parallel channels, decides asymptotic stability from denominator roots,
//! and certifies passivity two independent ways — a sampled frequency-response
//! grid and an exact sign test on the even polynomial
//! P(ω²) = Re{num(jω)·conj(den(jω))}, which carries the sign of Re h(jω).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Complex, DMatrix, DVector, RowDVector};

/// Default top of the certification frequency grid, rad/s. Four decades above
/// every pole/zero scale used by the built-in examples.
pub const DEFAULT_OMEGA_MAX: f64 = 1e4;
/// Default number of logarithmic grid points.
pub const DEFAULT_FREQ_SAMPLES: usize = 2000;

/// Verdict tolerance shared by the stability and passivity tests.
pub const VERDICT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LtiError {
    #[error("coefficients contain a non-finite value")]
    NonFinite,
    #[error("denominator polynomial is zero")]
    ZeroDenominator,
    #[error(
        "transfer function is improper: numerator degree {num} exceeds denominator degree {den}"
    )]
    Improper { num: usize, den: usize },
    #[error("operation requires a strictly proper transfer function (direct feedthrough would close an algebraic loop)")]
    NotStrictlyProper,
    #[error("frequency grid needs omega_max > 0 and at least 100 samples")]
    BadFrequencyGrid,
    #[error("sampled grid and exact certificate disagree: {0}")]
    VerdictMismatch(String),
    #[error("cannot parse transfer function: {0}")]
    Parse(String),
}

/// SISO rational function num(s)/den(s), coefficients in descending powers of
/// s. The denominator is normalized to monic on construction and the function
/// must be proper.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    num: Vec<f64>,
    den: Vec<f64>,
}

fn trim_leading_zeros(c: &[f64]) -> &[f64] {
    let start = c.iter().position(|&v| v != 0.0).unwrap_or(c.len());
    &c[start..]
}

/// Horner evaluation of descending coefficients at complex s.
fn poly_eval(coeffs: &[f64], s: Complex<f64>) -> Complex<f64> {
    let mut acc = Complex::new(0.0, 0.0);
    for &c in coeffs {
        acc = acc * s + c;
    }
    acc
}

/// Convolution of descending coefficient lists.
fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// Sum of descending coefficient lists.
fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    let mut out = vec![0.0; n];
    for (i, &ai) in a.iter().rev().enumerate() {
        out[n - 1 - i] += ai;
    }
    for (i, &bi) in b.iter().rev().enumerate() {
        out[n - 1 - i] += bi;
    }
    out
}

/// Roots of a real polynomial (descending coefficients) via companion-matrix
/// eigenvalues. Leading near-zero coefficients are trimmed relative to the
/// largest magnitude.
fn poly_roots(coeffs: &[f64]) -> Vec<Complex<f64>> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let start = coeffs
        .iter()
        .position(|&c| c.abs() > 1e-14 * scale)
        .unwrap_or(coeffs.len());
    let c = &coeffs[start..];
    let deg = c.len().saturating_sub(1);
    if deg == 0 {
        return Vec::new();
    }
    let lead = c[0];
    // Companion matrix of the monic polynomial, bottom row −a_0 … −a_{deg−1}
    // in ascending order.
    let comp = DMatrix::from_fn(deg, deg, |i, j| {
        if i == deg - 1 {
            -c[deg - j] / lead
        } else if j == i + 1 {
            1.0
        } else {
            0.0
        }
    });
    comp.complex_eigenvalues().iter().cloned().collect()
}

impl TransferFunction {
    /// Build from descending-power coefficient lists; normalizes the
    /// denominator to monic and rejects improper ratios.
    pub fn new(num: &[f64], den: &[f64]) -> Result<Self, LtiError> {
        if num.iter().chain(den.iter()).any(|c| !c.is_finite()) {
            return Err(LtiError::NonFinite);
        }
        let den = trim_leading_zeros(den);
        if den.is_empty() {
            return Err(LtiError::ZeroDenominator);
        }
        let num = trim_leading_zeros(num);
        let num: Vec<f64> = if num.is_empty() {
            vec![0.0]
        } else {
            num.to_vec()
        };
        if num.len() > den.len() {
            return Err(LtiError::Improper {
                num: num.len() - 1,
                den: den.len() - 1,
            });
        }
        let lead = den[0];
        Ok(Self {
            num: num.iter().map(|c| c / lead).collect(),
            den: den.iter().map(|c| c / lead).collect(),
        })
    }

    /// The integrator 1/s.
    pub fn integrator() -> Self {
        Self {
            num: vec![1.0],
            den: vec![1.0, 0.0],
        }
    }

    pub fn num(&self) -> &[f64] {
        &self.num
    }

    pub fn den(&self) -> &[f64] {
        &self.den
    }

    /// Denominator degree; the dimension of a minimal-candidate realization.
    pub fn degree(&self) -> usize {
        self.den.len() - 1
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.num.len() < self.den.len()
    }

    /// Evaluate num(s)/den(s).
    pub fn evaluate(&self, s: Complex<f64>) -> Complex<f64> {
        poly_eval(&self.num, s) / poly_eval(&self.den, s)
    }

    /// Parallel interconnection: self + other as a single rational function.
    pub fn parallel(&self, other: &Self) -> Result<Self, LtiError> {
        let num = poly_add(
            &poly_mul(&self.num, &other.den),
            &poly_mul(&other.num, &self.den),
        );
        let den = poly_mul(&self.den, &other.den);
        Self::new(&num, &den)
    }

    /// Denominator roots.
    pub fn poles(&self) -> Vec<Complex<f64>> {
        poly_roots(&self.den)
    }

    /// True when some pole sits on the imaginary axis (|Re| ≤ tolerance).
    pub fn has_imaginary_axis_pole(&self) -> bool {
        self.poles().iter().any(|p| p.re.abs() <= VERDICT_TOL)
    }

    /// Parse the text form `num=2,3 den=1,3,2`, descending powers.
    pub fn parse(text: &str) -> Result<Self, LtiError> {
        let mut num: Option<Vec<f64>> = None;
        let mut den: Option<Vec<f64>> = None;
        for token in text.split_whitespace() {
            let (key, list) = token
                .split_once('=')
                .ok_or_else(|| LtiError::Parse(format!("expected key=values, got `{token}`")))?;
            let coeffs: Result<Vec<f64>, _> =
                list.split(',').map(str::trim).map(str::parse).collect();
            let coeffs = coeffs
                .map_err(|e| LtiError::Parse(format!("bad coefficient in `{token}`: {e}")))?;
            match key {
                "num" => num = Some(coeffs),
                "den" => den = Some(coeffs),
                other => return Err(LtiError::Parse(format!("unknown key `{other}`"))),
            }
        }
        match (num, den) {
            (Some(n), Some(d)) => Self::new(&n, &d),
            (None, _) => Err(LtiError::Parse(String::from("missing `num=`"))),
            (_, None) => Err(LtiError::Parse(String::from("missing `den=`"))),
        }
    }
}

impl core::fmt::Display for TransferFunction {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let join = |c: &[f64]| {
            let mut s = String::new();
            for (i, v) in c.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                s.push_str(&format!("{v}"));
            }
            s
        };
        write!(f, "num={} den={}", join(&self.num), join(&self.den))
    }
}

/// State-space triple (A, B, C) with D = 0, realizing a strictly proper
/// transfer function.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceRealization {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: RowDVector<f64>,
}

impl StateSpaceRealization {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &RowDVector<f64> {
        &self.c
    }

    /// C(sI − A)^{-1}B via a complex linear solve.
    pub fn frequency_response(&self, s: Complex<f64>) -> Complex<f64> {
        let m = self.dim();
        let mut sys = DMatrix::from_fn(m, m, |i, j| Complex::new(-self.a[(i, j)], 0.0));
        for i in 0..m {
            sys[(i, i)] += s;
        }
        let rhs = DVector::from_iterator(m, self.b.iter().map(|&v| Complex::new(v, 0.0)));
        let w = sys
            .lu()
            .solve(&rhs)
            .expect("probe frequency coincides with a system eigenvalue");
        self.c.iter().zip(w.iter()).map(|(&ci, wi)| wi * ci).sum()
    }
}

/// Controllable canonical (companion) realization of a strictly proper
/// transfer function. Dimension equals the denominator degree.
pub fn realize(tf: &TransferFunction) -> Result<StateSpaceRealization, LtiError> {
    if !tf.is_strictly_proper() {
        return Err(LtiError::NotStrictlyProper);
    }
    let m = tf.degree();
    // den is monic: s^m + a_{m−1}s^{m−1} + … + a_0 with a_k = den[m−k].
    let a = DMatrix::from_fn(m, m, |i, j| {
        if i == m - 1 {
            -tf.den[m - j]
        } else if j == i + 1 {
            1.0
        } else {
            0.0
        }
    });
    let mut b = DVector::zeros(m);
    b[m - 1] = 1.0;
    // Ascending numerator coefficients padded to length m.
    let p = tf.num.len();
    let c = RowDVector::from_fn(m, |_, k| if k < p { tf.num[p - 1 - k] } else { 0.0 });
    Ok(StateSpaceRealization { a, b, c })
}

/// Asymptotic stability: every denominator root has real part below
/// −[`VERDICT_TOL`].
pub fn is_stable(tf: &TransferFunction) -> bool {
    tf.poles().iter().all(|p| p.re < -VERDICT_TOL)
}

/// Passivity verdicts for a SISO transfer function.
///
/// `passive`/`strictly_passive` come from the exact even-polynomial
/// certificate; `min_real_part`/`worst_frequency` summarize the sampled grid,
/// and construction fails if the two routes disagree.
/// `uniformly_strictly_passive` is the stricter matrix-definition reading
/// (Re bounded away from zero for all ω); it is decided from the certificate
/// degrees and is unreachable for strictly proper functions.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct PassivityReport {
    pub stable: bool,
    pub passive: bool,
    pub strictly_passive: bool,
    pub uniformly_strictly_passive: bool,
    pub min_real_part: f64,
    pub worst_frequency: f64,
}

/// Sign pattern of the even certificate polynomial on [0, ∞).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HalflineSign {
    Positive,
    NonnegativeWithZeros,
    IdenticallyZero,
    TakesNegative,
}

/// Coefficients (ascending in u = ω²) of P(u) with
/// P(ω²) = Re{num(jω)·conj(den(jω))}.
fn real_part_certificate_poly(tf: &TransferFunction) -> Vec<f64> {
    let num: Vec<f64> = tf.num.iter().rev().cloned().collect(); // ascending
    let den: Vec<f64> = tf.den.iter().rev().cloned().collect();
    let max_power = (num.len() - 1) + (den.len() - 1);
    let mut p = vec![0.0; max_power / 2 + 1];
    for (k, &ck) in num.iter().enumerate() {
        for (l, &dl) in den.iter().enumerate() {
            // Re[j^k · (−j)^l] = Re[j^{k−l}]: 0 for odd k−l, ±1 for even.
            let diff = k as i64 - l as i64;
            if diff.rem_euclid(2) != 0 {
                continue;
            }
            let sign = if diff.rem_euclid(4) == 0 { 1.0 } else { -1.0 };
            p[(k + l) / 2] += sign * ck * dl;
        }
    }
    p
}

/// Evaluate an ascending-coefficient polynomial and the magnitude scale of
/// that evaluation (sum of term magnitudes), used for relative sign tests.
fn eval_with_scale(p: &[f64], u: f64) -> (f64, f64) {
    let mut val = 0.0;
    let mut scale = 0.0;
    let mut pow = 1.0;
    for &c in p {
        val += c * pow;
        scale += (c * pow).abs();
        pow *= u;
    }
    (val, scale.max(1e-300))
}

/// Decide the sign of P on [0, ∞) by evaluating at 0, at the nonnegative real
/// parts of the roots of P and P', and beyond the largest candidate. Any dip
/// below zero has its minimum at a derivative root, so this finds it; a
/// touching zero evaluates to ~0 at its own root.
fn classify_halfline(p: &[f64]) -> HalflineSign {
    let scale = p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return HalflineSign::IdenticallyZero;
    }
    // Trim high-order coefficients that are zero relative to the rest.
    let mut coeffs: Vec<f64> = p.to_vec();
    while coeffs.len() > 1 && coeffs.last().unwrap().abs() <= 1e-14 * scale {
        coeffs.pop();
    }
    if coeffs.len() == 1 {
        return if coeffs[0] > 0.0 {
            HalflineSign::Positive
        } else if coeffs[0] < 0.0 {
            HalflineSign::TakesNegative
        } else {
            HalflineSign::IdenticallyZero
        };
    }
    if *coeffs.last().unwrap() < 0.0 {
        // Negative leading coefficient: negative for large u.
        return HalflineSign::TakesNegative;
    }
    let descending: Vec<f64> = coeffs.iter().rev().cloned().collect();
    // Descending coefficients of dP/du.
    let derivative: Vec<f64> = coeffs[1..]
        .iter()
        .enumerate()
        .map(|(i, &c)| (i + 1) as f64 * c)
        .rev()
        .collect();
    let mut candidates = vec![0.0f64];
    for root in poly_roots(&descending)
        .into_iter()
        .chain(if derivative.len() > 1 {
            poly_roots(&derivative)
        } else {
            Vec::new()
        })
    {
        if root.re > 0.0 {
            candidates.push(root.re);
        }
    }
    let far = candidates.iter().cloned().fold(0.0f64, f64::max) + 1.0;
    candidates.push(far);

    let mut touches_zero = false;
    for &u in &candidates {
        let (val, eval_scale) = eval_with_scale(&coeffs, u);
        let tol = 1e-12 * eval_scale;
        if val < -tol {
            return HalflineSign::TakesNegative;
        }
        if val <= tol {
            touches_zero = true;
        }
    }
    if touches_zero {
        HalflineSign::NonnegativeWithZeros
    } else {
        HalflineSign::Positive
    }
}

/// {0} ∪ logarithmic grid from 10⁻³ rad/s up to omega_max (by default seven
/// decades), so both the unit-scale dynamics of the examples and the
/// high-frequency tail are sampled.
pub fn frequency_grid(omega_max: f64, samples: usize) -> Result<Vec<f64>, LtiError> {
    if !omega_max.is_finite() || omega_max <= 1e-3 || samples < 100 {
        return Err(LtiError::BadFrequencyGrid);
    }
    let lg_min = -3.0;
    let lg_max = libm::log10(omega_max);
    let mut grid = Vec::with_capacity(samples + 1);
    grid.push(0.0);
    for k in 0..samples {
        let t = k as f64 / (samples - 1) as f64;
        grid.push(libm::pow(10.0, lg_min + t * (lg_max - lg_min)));
    }
    Ok(grid)
}

/// Certify passivity of a proper transfer function.
///
/// Re h(jω) is sampled on the frequency grid (pole frequencies skipped) and
/// independently sign-tested through the exact even-polynomial certificate;
/// the verdicts must agree or an error is returned.
pub fn passivity_report(
    tf: &TransferFunction,
    omega_max: f64,
    samples: usize,
) -> Result<PassivityReport, LtiError> {
    let grid = frequency_grid(omega_max, samples)?;
    let stable = is_stable(tf);

    let mut min_real = f64::INFINITY;
    let mut worst = 0.0;
    for &omega in &grid {
        let s = Complex::new(0.0, omega);
        let den_val = poly_eval(&tf.den, s);
        // Magnitude scale of the denominator evaluation, for pole detection.
        let den_scale: f64 = tf
            .den
            .iter()
            .rev()
            .enumerate()
            .map(|(k, &c)| (c * libm::pow(omega, k as f64)).abs())
            .sum();
        if den_val.norm() <= 1e-9 * den_scale.max(1e-300) {
            continue; // imaginary-axis pole: Re h undefined here
        }
        let re = (poly_eval(&tf.num, s) / den_val).re;
        if re < min_real {
            min_real = re;
            worst = omega;
        }
    }

    let cert = classify_halfline(&real_part_certificate_poly(tf));
    let cert_passive = !matches!(cert, HalflineSign::TakesNegative);
    let cert_strict = matches!(cert, HalflineSign::Positive);

    let grid_passive = min_real >= -VERDICT_TOL;
    let grid_strict = min_real > VERDICT_TOL && !tf.has_imaginary_axis_pole();

    if grid_passive != cert_passive || grid_strict != cert_strict {
        return Err(LtiError::VerdictMismatch(format!(
            "grid(passive={grid_passive}, strict={grid_strict}, min_re={min_real:.3e} at ω={worst:.3e}) \
             vs certificate(passive={cert_passive}, strict={cert_strict})"
        )));
    }

    // Uniform strict passivity needs Re h(jω) bounded away from 0 as ω → ∞,
    // i.e. deg P = deg |den|² in u. Strictly proper functions always fall
    // short by at least one degree.
    let p = real_part_certificate_poly(tf);
    let p_scale = p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let p_deg = p
        .iter()
        .rposition(|c| c.abs() > 1e-14 * p_scale.max(1e-300))
        .unwrap_or(0);
    let uniform = cert_strict && p_deg == tf.degree();

    Ok(PassivityReport {
        stable,
        passive: cert_passive,
        strictly_passive: cert_strict,
        uniformly_strictly_passive: uniform,
        min_real_part: min_real,
        worst_frequency: worst,
    })
}

/// Passivity report at the default grid.
pub fn passivity_report_default(tf: &TransferFunction) -> Result<PassivityReport, LtiError> {
    passivity_report(tf, DEFAULT_OMEGA_MAX, DEFAULT_FREQ_SAMPLES)
}

/// A realization lifted to n identical channels: (A⊗I_n, B⊗I_n, C⊗I_n).
/// The Kronecker blocks are never materialized; states are laid out as m
/// state blocks of n channels each.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedRealization {
    base: StateSpaceRealization,
    channels: usize,
}

impl LiftedRealization {
    pub fn base(&self) -> &StateSpaceRealization {
        &self.base
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Total lifted state dimension m·n.
    pub fn state_dim(&self) -> usize {
        self.base.dim() * self.channels
    }

    /// out = (A⊗I_n)·state + (B⊗I_n)·input.
    pub fn derivative(&self, state: &[f64], input: &[f64], out: &mut [f64]) {
        let m = self.base.dim();
        let n = self.channels;
        debug_assert_eq!(state.len(), m * n);
        debug_assert_eq!(input.len(), n);
        debug_assert_eq!(out.len(), m * n);
        for i in 0..m {
            for c in 0..n {
                let mut acc = self.base.b[i] * input[c];
                for j in 0..m {
                    let aij = self.base.a[(i, j)];
                    if aij != 0.0 {
                        acc += aij * state[j * n + c];
                    }
                }
                out[i * n + c] = acc;
            }
        }
    }

    /// out = (C⊗I_n)·state.
    pub fn output(&self, state: &[f64], out: &mut [f64]) {
        let m = self.base.dim();
        let n = self.channels;
        debug_assert_eq!(state.len(), m * n);
        debug_assert_eq!(out.len(), n);
        for c in 0..n {
            let mut acc = 0.0;
            for j in 0..m {
                acc += self.base.c[j] * state[j * n + c];
            }
            out[c] = acc;
        }
    }

    /// Per-channel frequency response; every channel equals the base h(s).
    pub fn frequency_response(&self, s: Complex<f64>) -> Complex<f64> {
        self.base.frequency_response(s)
    }
}

/// Lift a strictly proper transfer function to n parallel channels.
pub fn lift(tf: &TransferFunction, n: usize) -> Result<LiftedRealization, LtiError> {
    let base = realize(tf)?;
    Ok(LiftedRealization { base, channels: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use approx::assert_abs_diff_eq;

    fn tf(num: &[f64], den: &[f64]) -> TransferFunction {
        TransferFunction::new(num, den).unwrap()
    }

    #[test]
    fn construction_normalizes_to_monic() {
        let t = tf(&[4.0, 6.0], &[2.0, 6.0, 4.0]);
        assert_eq!(t.den(), &[1.0, 3.0, 2.0]);
        assert_eq!(t.num(), &[2.0, 3.0]);
    }

    #[test]
    fn construction_rejects_improper_and_zero_den() {
        assert!(matches!(
            TransferFunction::new(&[1.0, 0.0, 0.0], &[1.0, 1.0]),
            Err(LtiError::Improper { .. })
        ));
        assert!(matches!(
            TransferFunction::new(&[1.0], &[0.0, 0.0]),
            Err(LtiError::ZeroDenominator)
        ));
    }

    #[test]
    fn realize_first_order() {
        let r = realize(&tf(&[1.0], &[1.0, 1.0])).unwrap();
        assert_eq!(r.dim(), 1);
        assert_abs_diff_eq!(r.a()[(0, 0)], -1.0);
        assert_abs_diff_eq!(r.b()[0], 1.0);
        assert_abs_diff_eq!(r.c()[0], 1.0);
    }

    #[test]
    fn realize_integrator() {
        let r = realize(&TransferFunction::integrator()).unwrap();
        assert_abs_diff_eq!(r.a()[(0, 0)], 0.0);
        assert_abs_diff_eq!(r.b()[0], 1.0);
        assert_abs_diff_eq!(r.c()[0], 1.0);
    }

    #[test]
    fn realize_rejects_feedthrough() {
        assert_eq!(
            realize(&tf(&[1.0, 1.0], &[1.0, 2.0])),
            Err(LtiError::NotStrictlyProper)
        );
    }

    #[test]
    fn realization_matches_frequency_response() {
        let t = tf(&[2.0, 3.0], &[1.0, 3.0, 2.0]);
        let r = realize(&t).unwrap();
        assert_eq!(r.dim(), 2);
        let s = Complex::new(0.0, 1.0);
        assert!((t.evaluate(s) - r.frequency_response(s)).norm() <= 1e-12);
    }

    #[test]
    fn realization_round_trip_random_stable() {
        let mut rng = SplitMix64::new(2024);
        for _ in 0..20 {
            let deg = 1 + (rng.next_u64() % 4) as usize;
            // Poles in [−5, −0.1], numerator one degree short.
            let mut den = vec![1.0];
            for _ in 0..deg {
                den = poly_mul(&den, &[1.0, rng.next_range(0.1, 5.0)]);
            }
            let num: Vec<f64> = (0..deg).map(|_| rng.next_range(-2.0, 2.0)).collect();
            let t = tf(&num, &den);
            let r = realize(&t).unwrap();
            for k in 0..20 {
                let s = Complex::new(0.2 * k as f64, 0.5 + 0.3 * k as f64);
                assert!(
                    (t.evaluate(s) - r.frequency_response(s)).norm() <= 1e-9,
                    "mismatch at probe {k} for {t}"
                );
            }
        }
    }

    #[test]
    fn parallel_sum_matches_pointwise() {
        let h = tf(&[2.0, 3.0], &[1.0, 3.0, 2.0]);
        let g = TransferFunction::integrator().parallel(&h).unwrap();
        for k in 1..=20 {
            let s = Complex::new(0.1 * k as f64, 0.7 * k as f64);
            let expect = Complex::new(1.0, 0.0) / s + h.evaluate(s);
            assert!((g.evaluate(s) - expect).norm() <= 1e-9);
        }
        // 1/s + (2s+3)/(s²+3s+2) = (3s²+3.5·… ) — the Fig-style cascade den.
        assert_eq!(g.den(), &[1.0, 3.0, 2.0, 0.0]);
    }

    #[test]
    fn stability_verdicts() {
        assert!(is_stable(&tf(&[2.0, 3.0], &[1.0, 3.0, 2.0])));
        assert!(!is_stable(&TransferFunction::integrator()));
        assert!(!is_stable(&tf(&[1.0], &[1.0, -1.0])));
    }

    #[test]
    fn stability_agrees_with_root_signs() {
        let mut rng = SplitMix64::new(99);
        for _ in 0..50 {
            let deg = 1 + (rng.next_u64() % 4) as usize;
            let den: Vec<f64> = core::iter::once(1.0)
                .chain((0..deg).map(|_| rng.next_range(-3.0, 3.0)))
                .collect();
            let t = match TransferFunction::new(&[1.0], &den) {
                Ok(t) => t,
                Err(_) => continue,
            };
            let by_roots = t.poles().iter().all(|p| p.re < -VERDICT_TOL);
            assert_eq!(is_stable(&t), by_roots);
        }
    }

    #[test]
    fn strictly_passive_examples() {
        let report = passivity_report_default(&tf(&[2.0, 3.0], &[1.0, 3.0, 2.0])).unwrap();
        assert!(report.stable && report.passive && report.strictly_passive);
        assert!(!report.uniformly_strictly_passive);

        let report = passivity_report_default(&tf(&[1.0], &[1.0, 1.0])).unwrap();
        assert!(report.strictly_passive);
    }

    #[test]
    fn integrator_is_passive_not_strict() {
        let report = passivity_report_default(&TransferFunction::integrator()).unwrap();
        assert!(!report.stable);
        assert!(report.passive);
        assert!(!report.strictly_passive);
        assert_abs_diff_eq!(report.min_real_part, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn integrator_plus_lead_lag_is_passive_not_strict() {
        // (2s² + 3.5s + 2)/(s³ + 3s² + 2s): certificate polynomial u + 2.5u²
        // vanishes at u = 0, under the integrator pole.
        let g = tf(&[2.0, 3.5, 2.0], &[1.0, 3.0, 2.0, 0.0]);
        let report = passivity_report_default(&g).unwrap();
        assert!(report.passive);
        assert!(!report.strictly_passive);
    }

    #[test]
    fn sign_indefinite_function_is_not_passive() {
        // 1/(s−1): Re = −1/(1+ω²) < 0.
        let report = passivity_report_default(&tf(&[1.0], &[1.0, -1.0])).unwrap();
        assert!(!report.passive && !report.strictly_passive);
        assert!(report.min_real_part < -0.5);
    }

    #[test]
    fn certificate_polynomial_matches_hand_expansion() {
        // (2s+3)/(s²+3s+2): Re{num(jω)conj(den(jω))} = 6 + 3ω².
        let p = real_part_certificate_poly(&tf(&[2.0, 3.0], &[1.0, 3.0, 2.0]));
        assert_eq!(p.len(), 2);
        assert_abs_diff_eq!(p[0], 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn touching_zero_is_passive_not_strict() {
        // Direct check of the halfline classifier on (u−1)².
        let class = classify_halfline(&[1.0, -2.0, 1.0]);
        assert_eq!(class, HalflineSign::NonnegativeWithZeros);
        assert_eq!(classify_halfline(&[1.0, 1.0]), HalflineSign::Positive);
        assert_eq!(classify_halfline(&[-1.0, 1.0]), HalflineSign::TakesNegative);
        assert_eq!(classify_halfline(&[0.0]), HalflineSign::IdenticallyZero);
    }

    #[test]
    fn grid_and_certificate_agree_on_random_tfs() {
        let mut rng = SplitMix64::new(7);
        let mut seen_passive = 0;
        let mut seen_not = 0;
        for _ in 0..50 {
            let deg = 1 + (rng.next_u64() % 3) as usize;
            let mut den = vec![1.0];
            for _ in 0..deg {
                den = poly_mul(&den, &[1.0, rng.next_range(0.1, 5.0)]);
            }
            let mut num: Vec<f64> = (0..deg).map(|_| rng.next_range(-2.0, 2.0)).collect();
            // Keep the leading coefficient away from zero so the tail sign of
            // Re h(jω) is decided well above grid tolerance.
            if num[0].abs() < 0.5 {
                num[0] = if num[0] < 0.0 { -0.5 } else { 0.5 };
            }
            let t = tf(&num, &den);
            let report =
                passivity_report_default(&t).unwrap_or_else(|e| panic!("mismatch for {t}: {e}"));
            if report.passive {
                seen_passive += 1;
            } else {
                seen_not += 1;
            }
        }
        assert!(seen_passive > 0 && seen_not > 0, "population too one-sided");
    }

    #[test]
    fn random_positive_residue_sums_are_strictly_passive() {
        // Σ k_i/(s+p_i) with k_i, p_i > 0 has Re = Σ k_i p_i/(p_i²+ω²) > 0.
        let mut rng = SplitMix64::new(13);
        for _ in 0..20 {
            let terms = 1 + (rng.next_u64() % 3) as usize;
            let mut acc = TransferFunction::new(&[0.0], &[1.0]).unwrap();
            for _ in 0..terms {
                let k = rng.next_range(0.5, 5.0);
                let p = rng.next_range(0.5, 5.0);
                acc = acc.parallel(&tf(&[k], &[1.0, p])).unwrap();
            }
            let report = passivity_report_default(&acc).unwrap();
            assert!(report.strictly_passive, "not strict: {acc}");
            assert!(report.stable);
        }
    }

    #[test]
    fn lift_acts_channelwise() {
        let lifted = lift(&tf(&[1.0], &[1.0, 1.0]), 3).unwrap();
        assert_eq!(lifted.state_dim(), 3);
        let state = [1.0, 2.0, 3.0];
        let input = [0.5, 0.5, 0.5];
        let mut out = [0.0; 3];
        lifted.derivative(&state, &input, &mut out);
        // A = [−1]: each channel evolves as −x + u.
        assert_abs_diff_eq!(out[0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], -1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(out[2], -2.5, epsilon = 1e-15);
    }

    #[test]
    fn lift_constant_input_keeps_channels_equal() {
        let lifted = lift(&tf(&[2.0, 3.0], &[1.0, 3.0, 2.0]), 4).unwrap();
        let mut state = vec![0.0; lifted.state_dim()];
        let input = [0.7; 4];
        let mut deriv = vec![0.0; lifted.state_dim()];
        // Euler-march a few steps; channel symmetry must be preserved.
        for _ in 0..100 {
            lifted.derivative(&state, &input, &mut deriv);
            for (s, d) in state.iter_mut().zip(&deriv) {
                *s += 0.01 * d;
            }
        }
        for block in 0..2 {
            for c in 1..4 {
                assert_abs_diff_eq!(state[block * 4 + c], state[block * 4], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn lifted_frequency_response_is_scalar_response() {
        let t = tf(&[2.0, 3.0], &[1.0, 3.0, 2.0]);
        let lifted = lift(&t, 3).unwrap();
        let s = Complex::new(0.0, 1.0);
        assert!((lifted.frequency_response(s) - t.evaluate(s)).norm() <= 1e-12);
    }

    #[test]
    fn parse_round_trip() {
        let t = TransferFunction::parse("num=2,3 den=1,3,2").unwrap();
        assert_eq!(t.num(), &[2.0, 3.0]);
        assert_eq!(t.den(), &[1.0, 3.0, 2.0]);
        let text = alloc::format!("{t}");
        assert_eq!(TransferFunction::parse(&text).unwrap(), t);
        assert!(TransferFunction::parse("num=1").is_err());
        assert!(TransferFunction::parse("num=a den=1,1").is_err());
    }
}
