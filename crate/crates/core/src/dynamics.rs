//! Closed-loop learning dynamics and their integration.
//!
//! Three rule families close the loop with a population game:
//!
//! * standard replicator: score integrates the payoff, strategy is softmax of
//!   the score;
//! * payoff-driven higher-order replicator: an extra strictly proper LTI
//!   block, driven by the payoff, adds a prediction signal to the score;
//! * cascade: a single strictly proper g(s) lifted to n channels feeds
//!   softmax directly (covers exponential replicator dynamics and the
//!   integrator-plus-filter forms).
//!
//! Score drifts are zero-mean-projected by default: softmax ignores the
//! all-ones direction and the raw score grows linearly along it at interior
//! equilibria, so projecting keeps states bounded on long horizons without
//! changing the strategy path.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DVector;

use crate::games::{GameError, PopulationGame};
use crate::lti::{is_stable, lift, realize, LiftedRealization, LtiError, TransferFunction};
use crate::simplex::{project_zero_mean, softmax, SimplexError, SimplexPoint};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Simplex(#[from] SimplexError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Lti(#[from] LtiError),
    #[error("rule needs at least 2 strategies, got {0}")]
    TooFewStrategies(usize),
    #[error("rule is for {rule} strategies but the game has {game}")]
    StrategyCountMismatch { rule: usize, game: usize },
    #[error("state length {got} does not match layout dimension {expected}")]
    StateLengthMismatch { expected: usize, got: usize },
    #[error("payoff became non-finite at t = {t}; state snapshot attached")]
    NonFinitePayoff { t: f64, state: Vec<f64> },
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("adaptive step size underflowed at t = {t}; last valid time {t}")]
    StepSizeUnderflow { t: f64 },
    #[error("cascade rules take a full initial state, not an initial strategy")]
    InitialStrategyNotApplicable,
    #[error("strategy component {0} is too small to take a log of")]
    StrategyTooSmall(usize),
    #[error("internal dynamics matrix is singular; no rest state exists")]
    SingularInternalDynamics,
    #[error("bad integrator settings: {0}")]
    BadSettings(String),
}

/// Which learning rule closes the loop.
#[derive(Debug, Clone, PartialEq)]
pub enum RuleKind {
    /// ż = p, x = σ(z).
    StandardRd,
    /// Score integrator in parallel with a strictly proper h(s) driven by the
    /// payoff; strategy is softmax of their sum.
    HigherOrderRd { h: TransferFunction },
    /// Strictly proper g(s) lifted to n channels, cascaded with softmax.
    Cascade { g: TransferFunction },
}

/// A learning rule for n strategies. Construction checks strict properness of
/// the LTI part and records (without enforcing) its asymptotic stability:
/// rest points coincide with Nash equilibria only when the recorded flag is
/// true.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningRule {
    kind: RuleKind,
    n: usize,
    lti_stable: Option<bool>,
}

impl LearningRule {
    pub fn standard_rd(n: usize) -> Result<Self, DynamicsError> {
        if n < 2 {
            return Err(DynamicsError::TooFewStrategies(n));
        }
        Ok(Self {
            kind: RuleKind::StandardRd,
            n,
            lti_stable: None,
        })
    }

    pub fn higher_order(n: usize, h: TransferFunction) -> Result<Self, DynamicsError> {
        if n < 2 {
            return Err(DynamicsError::TooFewStrategies(n));
        }
        if !h.is_strictly_proper() {
            return Err(DynamicsError::Lti(LtiError::NotStrictlyProper));
        }
        let stable = is_stable(&h);
        Ok(Self {
            kind: RuleKind::HigherOrderRd { h },
            n,
            lti_stable: Some(stable),
        })
    }

    pub fn cascade(n: usize, g: TransferFunction) -> Result<Self, DynamicsError> {
        if n < 2 {
            return Err(DynamicsError::TooFewStrategies(n));
        }
        if !g.is_strictly_proper() {
            return Err(DynamicsError::Lti(LtiError::NotStrictlyProper));
        }
        let stable = is_stable(&g);
        Ok(Self {
            kind: RuleKind::Cascade { g },
            n,
            lti_stable: Some(stable),
        })
    }

    pub fn kind(&self) -> &RuleKind {
        &self.kind
    }

    pub fn strategy_count(&self) -> usize {
        self.n
    }

    /// Recorded asymptotic stability of the LTI part; None for standard RD.
    pub fn lti_stable(&self) -> Option<bool> {
        self.lti_stable
    }

    /// Dimension m of the LTI part's scalar state (0 for standard RD).
    pub fn internal_dim(&self) -> usize {
        match &self.kind {
            RuleKind::StandardRd => 0,
            RuleKind::HigherOrderRd { h } => h.degree(),
            RuleKind::Cascade { g } => g.degree(),
        }
    }

    pub fn state_layout(&self) -> StateLayout {
        let n = self.n;
        let m = self.internal_dim();
        let blocks = match &self.kind {
            RuleKind::StandardRd => vec![StateBlock {
                name: "score",
                start: 0,
                len: n,
            }],
            RuleKind::HigherOrderRd { .. } => vec![
                StateBlock {
                    name: "score",
                    start: 0,
                    len: n,
                },
                StateBlock {
                    name: "lti_state",
                    start: n,
                    len: m * n,
                },
            ],
            RuleKind::Cascade { .. } => vec![StateBlock {
                name: "cascade_state",
                start: 0,
                len: m * n,
            }],
        };
        StateLayout::new(blocks)
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            RuleKind::StandardRd => String::from("standard_rd"),
            RuleKind::HigherOrderRd { h } => format!("higher_order_rd({h})"),
            RuleKind::Cascade { g } => format!("cascade({g})"),
        }
    }
}

/// One named block of the flattened state vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateBlock {
    pub name: &'static str,
    pub start: usize,
    pub len: usize,
}

impl StateBlock {
    pub fn range(&self) -> core::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Index map over the flattened state vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateLayout {
    blocks: Vec<StateBlock>,
    dim: usize,
}

impl StateLayout {
    fn new(blocks: Vec<StateBlock>) -> Self {
        let dim = blocks.iter().map(|b| b.len).sum();
        Self { blocks, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[StateBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<core::ops::Range<usize>> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .map(StateBlock::range)
    }
}

/// Learning rule in feedback with a game: the simulated object.
#[derive(Debug, Clone)]
pub struct ClosedLoopSystem<G: PopulationGame> {
    rule: LearningRule,
    game: G,
    layout: StateLayout,
    lifted: Option<LiftedRealization>,
    project_score_drift: bool,
}

impl<G: PopulationGame> ClosedLoopSystem<G> {
    pub fn new(rule: LearningRule, game: G) -> Result<Self, DynamicsError> {
        if rule.strategy_count() != game.strategy_count() {
            return Err(DynamicsError::StrategyCountMismatch {
                rule: rule.strategy_count(),
                game: game.strategy_count(),
            });
        }
        let lifted = match rule.kind() {
            RuleKind::StandardRd => None,
            RuleKind::HigherOrderRd { h } => Some(lift(h, rule.strategy_count())?),
            RuleKind::Cascade { g } => Some(lift(g, rule.strategy_count())?),
        };
        let layout = rule.state_layout();
        Ok(Self {
            rule,
            game,
            layout,
            lifted,
            project_score_drift: true,
        })
    }

    /// Disable the zero-mean projection of the score drift (used by the
    /// equivalence tests; strategies are unchanged by the projection).
    pub fn with_score_projection(mut self, enabled: bool) -> Self {
        self.project_score_drift = enabled;
        self
    }

    pub fn rule(&self) -> &LearningRule {
        &self.rule
    }

    pub fn game(&self) -> &G {
        &self.game
    }

    pub fn state_layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn state_dim(&self) -> usize {
        self.layout.dim()
    }

    /// All-zero state: rest state of the LTI parts, uniform strategy.
    pub fn zero_state(&self) -> Vec<f64> {
        vec![0.0; self.state_dim()]
    }

    /// Initial state realizing a given interior strategy: score = log x0
    /// (zero-mean), internal LTI state zero. Cascade rules have no score
    /// block, so the strategy does not determine a state there.
    pub fn initial_state(&self, x0: &SimplexPoint) -> Result<Vec<f64>, DynamicsError> {
        let n = self.rule.strategy_count();
        if x0.dim() != n {
            return Err(DynamicsError::StrategyCountMismatch {
                rule: n,
                game: x0.dim(),
            });
        }
        match self.rule.kind() {
            RuleKind::Cascade { .. } => Err(DynamicsError::InitialStrategyNotApplicable),
            _ => {
                let score = init_score_at(x0, None)?;
                let mut state = self.zero_state();
                state[..n].copy_from_slice(score.as_slice());
                Ok(state)
            }
        }
    }

    /// The score vector z whose softmax is the current strategy.
    fn score(&self, state: &[f64]) -> DVector<f64> {
        let n = self.rule.strategy_count();
        match self.rule.kind() {
            RuleKind::StandardRd => DVector::from_column_slice(&state[..n]),
            RuleKind::HigherOrderRd { .. } => {
                let lifted = self.lifted.as_ref().unwrap();
                let mut prediction = vec![0.0; n];
                lifted.output(&state[n..], &mut prediction);
                DVector::from_fn(n, |i, _| state[i] + prediction[i])
            }
            RuleKind::Cascade { .. } => {
                let lifted = self.lifted.as_ref().unwrap();
                let mut z = vec![0.0; n];
                lifted.output(state, &mut z);
                DVector::from_column_slice(&z)
            }
        }
    }

    /// Strategy and payoff induced by a state.
    pub fn observe(&self, state: &[f64]) -> Result<(SimplexPoint, DVector<f64>), DynamicsError> {
        self.check_state_len(state)?;
        let x = softmax(&self.score(state))?;
        let p = self.game.payoff(&x)?;
        Ok((x, p))
    }

    fn check_state_len(&self, state: &[f64]) -> Result<(), DynamicsError> {
        if state.len() != self.state_dim() {
            return Err(DynamicsError::StateLengthMismatch {
                expected: self.state_dim(),
                got: state.len(),
            });
        }
        Ok(())
    }

    /// Time derivative of the flattened state.
    pub fn vector_field(&self, state: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        let mut out = vec![0.0; self.state_dim()];
        self.vector_field_into(state, &mut out)?;
        Ok(out)
    }

    fn vector_field_into(&self, state: &[f64], out: &mut [f64]) -> Result<(), DynamicsError> {
        self.check_state_len(state)?;
        let n = self.rule.strategy_count();
        let x = softmax(&self.score(state))?;
        let p = self.game.payoff(&x)?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinitePayoff {
                t: f64::NAN,
                state: state.to_vec(),
            });
        }
        match self.rule.kind() {
            RuleKind::StandardRd => {
                let drift = if self.project_score_drift {
                    project_zero_mean(&p)
                } else {
                    p
                };
                out.copy_from_slice(drift.as_slice());
            }
            RuleKind::HigherOrderRd { .. } => {
                let drift = if self.project_score_drift {
                    project_zero_mean(&p)
                } else {
                    p.clone()
                };
                out[..n].copy_from_slice(drift.as_slice());
                let lifted = self.lifted.as_ref().unwrap();
                lifted.derivative(&state[n..], p.as_slice(), &mut out[n..]);
            }
            RuleKind::Cascade { .. } => {
                let lifted = self.lifted.as_ref().unwrap();
                lifted.derivative(state, p.as_slice(), out);
            }
        }
        Ok(())
    }
}

/// Rest state of the higher-order rule's internal LTI block at payoff level
/// alpha: the state −α(A⁻¹B)⊗1_n and the prediction signal −α(CA⁻¹B)·1_n it
/// produces. Plugged in at score log x* the closed loop is stationary.
pub fn equilibrium_internal_state(
    h: &TransferFunction,
    alpha: f64,
    n: usize,
) -> Result<(Vec<f64>, DVector<f64>), DynamicsError> {
    let r = realize(h)?;
    let m = r.dim();
    let y = r
        .a()
        .clone()
        .lu()
        .solve(r.b())
        .ok_or(DynamicsError::SingularInternalDynamics)?;
    let mut state = vec![0.0; m * n];
    for i in 0..m {
        for c in 0..n {
            state[i * n + c] = -alpha * y[i];
        }
    }
    let gain: f64 = r.c().iter().zip(y.iter()).map(|(ci, yi)| ci * yi).sum();
    let prediction = DVector::from_element(n, -alpha * gain);
    Ok((state, prediction))
}

/// Score vector whose softmax equals the given interior strategy:
/// log x + c·1, with c defaulting to the zero-mean choice.
pub fn init_score_at(x: &SimplexPoint, c: Option<f64>) -> Result<DVector<f64>, DynamicsError> {
    if let Some(i) = x.as_slice().iter().position(|&v| v <= 1e-300) {
        return Err(DynamicsError::StrategyTooSmall(i));
    }
    let logs = DVector::from_iterator(x.dim(), x.as_slice().iter().map(|&v| libm::log(v)));
    let c = c.unwrap_or_else(|| -logs.mean());
    Ok(logs.map(|v| v + c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum IntegrationMethod {
    Rk4,
    Rk45,
}

/// Integration settings. `dt` is the fixed step for RK4 and the initial step
/// for RK45; `output_stride` is the model-time spacing of stored samples.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IntegratorSettings {
    pub method: IntegrationMethod,
    pub dt: f64,
    pub t_final: f64,
    pub output_stride: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            method: IntegrationMethod::Rk45,
            dt: 1e-2,
            t_final: 100.0,
            output_stride: 0.1,
            rtol: 1e-8,
            atol: 1e-10,
        }
    }
}

/// Simulation output: time grid with per-sample state, strategy, and payoff.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub x: Vec<SimplexPoint>,
    pub p: Vec<DVector<f64>>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn final_strategy(&self) -> &SimplexPoint {
        self.x
            .last()
            .expect("trajectory has at least the t=0 sample")
    }
}

/// Descriptors and counters attached to a trajectory.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct TrajectoryMeta {
    pub rule: String,
    pub strategy_count: usize,
    pub settings: IntegratorSettings,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    pub derivative_evals: usize,
}

// Dormand–Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Fifth-order solution weights are DP_A[6]; error weights are b5 − b4.
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct StepCounters {
    accepted: usize,
    rejected: usize,
    evals: usize,
}

/// Integrate the closed loop from `state0` and sample the result every
/// `output_stride` of model time.
pub fn integrate<G: PopulationGame>(
    sys: &ClosedLoopSystem<G>,
    state0: &[f64],
    settings: &IntegratorSettings,
) -> Result<Trajectory, DynamicsError> {
    for (value, name) in [
        (settings.dt, "dt"),
        (settings.t_final, "t_final"),
        (settings.output_stride, "output_stride"),
    ] {
        if !value.is_finite() || value <= 0.0 {
            return Err(DynamicsError::BadSettings(format!(
                "{name} must be finite and > 0"
            )));
        }
    }
    if sys.state_dim() != state0.len() {
        return Err(DynamicsError::StateLengthMismatch {
            expected: sys.state_dim(),
            got: state0.len(),
        });
    }

    // Output grid: multiples of the stride, plus t_final if it is not one.
    let strides = libm::floor(settings.t_final / settings.output_stride + 1e-9) as usize;
    let mut output_times: Vec<f64> = (0..=strides)
        .map(|k| k as f64 * settings.output_stride)
        .collect();
    if settings.t_final - output_times[strides] > 1e-9 * settings.output_stride {
        output_times.push(settings.t_final);
    }

    let mut counters = StepCounters {
        accepted: 0,
        rejected: 0,
        evals: 0,
    };
    let mut t = Vec::with_capacity(output_times.len());
    let mut states = Vec::with_capacity(output_times.len());
    let mut xs = Vec::with_capacity(output_times.len());
    let mut ps = Vec::with_capacity(output_times.len());

    let mut record = |time: f64, state: &[f64]| -> Result<(), DynamicsError> {
        let (x, p) = sys.observe(state)?;
        t.push(time);
        states.push(state.to_vec());
        xs.push(x);
        ps.push(p);
        Ok(())
    };

    let mut state = state0.to_vec();
    record(0.0, &state)?;

    let mut h_adaptive = settings.dt;
    for window in output_times.windows(2) {
        let (t_start, t_end) = (window[0], window[1]);
        match settings.method {
            IntegrationMethod::Rk4 => {
                rk4_segment(sys, &mut state, t_start, t_end, settings.dt, &mut counters)?
            }
            IntegrationMethod::Rk45 => rk45_segment(
                sys,
                &mut state,
                t_start,
                t_end,
                &mut h_adaptive,
                settings,
                &mut counters,
            )?,
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFiniteState { t: t_end });
        }
        record(t_end, &state)?;
    }

    Ok(Trajectory {
        t,
        states,
        x: xs,
        p: ps,
        meta: TrajectoryMeta {
            rule: sys.rule().describe(),
            strategy_count: sys.rule().strategy_count(),
            settings: settings.clone(),
            steps_accepted: counters.accepted,
            steps_rejected: counters.rejected,
            derivative_evals: counters.evals,
        },
    })
}

fn eval_field<G: PopulationGame>(
    sys: &ClosedLoopSystem<G>,
    t: f64,
    state: &[f64],
    out: &mut [f64],
    counters: &mut StepCounters,
) -> Result<(), DynamicsError> {
    counters.evals += 1;
    sys.vector_field_into(state, out).map_err(|e| match e {
        DynamicsError::NonFinitePayoff { state, .. } => DynamicsError::NonFinitePayoff { t, state },
        other => other,
    })
}

fn rk4_segment<G: PopulationGame>(
    sys: &ClosedLoopSystem<G>,
    state: &mut [f64],
    t_start: f64,
    t_end: f64,
    dt: f64,
    counters: &mut StepCounters,
) -> Result<(), DynamicsError> {
    let span = t_end - t_start;
    let steps = libm::ceil(span / dt - 1e-12).max(1.0) as usize;
    let h = span / steps as f64;
    let dim = state.len();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    for step in 0..steps {
        let t = t_start + step as f64 * h;
        eval_field(sys, t, state, &mut k1, counters)?;
        for i in 0..dim {
            tmp[i] = state[i] + 0.5 * h * k1[i];
        }
        eval_field(sys, t + 0.5 * h, &tmp, &mut k2, counters)?;
        for i in 0..dim {
            tmp[i] = state[i] + 0.5 * h * k2[i];
        }
        eval_field(sys, t + 0.5 * h, &tmp, &mut k3, counters)?;
        for i in 0..dim {
            tmp[i] = state[i] + h * k3[i];
        }
        eval_field(sys, t + h, &tmp, &mut k4, counters)?;
        for i in 0..dim {
            state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        counters.accepted += 1;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn rk45_segment<G: PopulationGame>(
    sys: &ClosedLoopSystem<G>,
    state: &mut [f64],
    t_start: f64,
    t_end: f64,
    h_adaptive: &mut f64,
    settings: &IntegratorSettings,
    counters: &mut StepCounters,
) -> Result<(), DynamicsError> {
    let dim = state.len();
    let mut k: [Vec<f64>; 7] = core::array::from_fn(|_| vec![0.0; dim]);
    let mut y_new = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];

    let mut t = t_start;
    // First stage; FSAL makes later steps reuse the last stage.
    eval_field(sys, t, state, &mut k[0], counters)?;

    while t < t_end - 1e-12 * t_end.max(1.0) {
        let remaining = t_end - t;
        let landing = *h_adaptive >= remaining;
        let h = if landing { remaining } else { *h_adaptive };
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(DynamicsError::StepSizeUnderflow { t });
        }

        for stage in 1..7 {
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(stage) {
                    let a = DP_A[stage][j];
                    if a != 0.0 {
                        acc += a * kj[i];
                    }
                }
                tmp[i] = state[i] + h * acc;
            }
            let (prev, rest) = k.split_at_mut(stage);
            let _ = prev;
            eval_field(sys, t + DP_C[stage] * h, &tmp, &mut rest[0], counters)?;
        }
        // Stage 7 input is the fifth-order solution itself.
        y_new.copy_from_slice(&tmp);

        let mut err_sq = 0.0;
        for i in 0..dim {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                if DP_E[j] != 0.0 {
                    e += DP_E[j] * kj[i];
                }
            }
            e *= h;
            let scale = settings.atol + settings.rtol * state[i].abs().max(y_new[i].abs());
            err_sq += (e / scale) * (e / scale);
        }
        let err = libm::sqrt(err_sq / dim as f64);

        if err <= 1.0 {
            t = if landing { t_end } else { t + h };
            state.copy_from_slice(&y_new);
            k.swap(0, 6); // FSAL: last stage is the next first stage
            counters.accepted += 1;
            if state.iter().any(|v| !v.is_finite()) {
                return Err(DynamicsError::NonFiniteState { t });
            }
        } else {
            counters.rejected += 1;
        }
        let factor = if err > 0.0 {
            0.9 * libm::pow(err, -0.2)
        } else {
            5.0
        };
        let new_h = h * factor.clamp(0.2, 5.0);
        // Never let a landing step shrink the cruising step size.
        *h_adaptive = if landing && err <= 1.0 {
            (*h_adaptive).max(new_h)
        } else {
            new_h
        };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{congestion_example, interior_nash, rps_example};
    use approx::assert_abs_diff_eq;

    fn hord_rule() -> LearningRule {
        let h = TransferFunction::new(&[2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        LearningRule::higher_order(3, h).unwrap()
    }

    #[test]
    fn layouts() {
        let standard = LearningRule::standard_rd(3).unwrap();
        assert_eq!(standard.state_layout().dim(), 3);
        assert_eq!(standard.state_layout().block("score"), Some(0..3));

        let hord = hord_rule();
        let layout = hord.state_layout();
        assert_eq!(layout.dim(), 3 + 2 * 3);
        assert_eq!(layout.block("score"), Some(0..3));
        assert_eq!(layout.block("lti_state"), Some(3..9));

        let g = TransferFunction::new(&[1.0], &[1.0, 1.0]).unwrap();
        let cascade = LearningRule::cascade(3, g).unwrap();
        assert_eq!(cascade.state_layout().block("cascade_state"), Some(0..3));
    }

    #[test]
    fn rule_construction_contracts() {
        assert!(matches!(
            LearningRule::standard_rd(1),
            Err(DynamicsError::TooFewStrategies(1))
        ));
        let feedthrough = TransferFunction::new(&[1.0, 1.0], &[1.0, 2.0]).unwrap();
        assert!(LearningRule::higher_order(3, feedthrough.clone()).is_err());
        assert!(LearningRule::cascade(3, feedthrough).is_err());

        // Unstable h is recorded, not rejected.
        let unstable = TransferFunction::new(&[1.0], &[1.0, -1.0]).unwrap();
        let rule = LearningRule::higher_order(3, unstable).unwrap();
        assert_eq!(rule.lti_stable(), Some(false));
        assert_eq!(hord_rule().lti_stable(), Some(true));
    }

    #[test]
    fn standard_rd_is_stationary_at_rps_equilibrium() {
        let sys =
            ClosedLoopSystem::new(LearningRule::standard_rd(3).unwrap(), rps_example()).unwrap();
        let x_star = SimplexPoint::uniform(3);
        let state = sys.initial_state(&x_star).unwrap();
        let drift = sys.vector_field(&state).unwrap();
        assert!(drift.iter().all(|d| d.abs() <= 1e-12));
    }

    #[test]
    fn higher_order_rest_state_is_stationary() {
        // Congestion has a nonzero payoff level, so the internal rest state
        // matters.
        let h = TransferFunction::new(&[1.0, 0.5], &[1.0, 3.0, 2.0]).unwrap();
        let game = congestion_example();
        let (x_star, alpha) = interior_nash(&game).unwrap();
        let rule = LearningRule::higher_order(3, h.clone()).unwrap();
        let sys = ClosedLoopSystem::new(rule, game).unwrap();

        let (internal, prediction) = equilibrium_internal_state(&h, alpha, 3).unwrap();
        // The prediction signal is a multiple of the ones vector, so softmax
        // absorbs it: score = log x* + c·1 suffices.
        let r = init_score_at(&x_star, None).unwrap();
        let mut state = sys.zero_state();
        state[..3].copy_from_slice(r.as_slice());
        state[3..].copy_from_slice(&internal);

        let (x, _) = sys.observe(&state).unwrap();
        assert!(x.distance(&x_star) <= 1e-12);
        let offset = prediction[0];
        for &v in prediction.as_slice() {
            assert_abs_diff_eq!(v, offset, epsilon = 1e-15);
        }

        let drift = sys.vector_field(&state).unwrap();
        let norm = libm::sqrt(drift.iter().map(|d| d * d).sum::<f64>());
        assert!(norm <= 1e-10, "stationarity residual {norm}");
    }

    #[test]
    fn equilibrium_internal_state_closed_forms() {
        // Zero payoff level: rest state vanishes.
        let h = TransferFunction::new(&[2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        let (state, prediction) = equilibrium_internal_state(&h, 0.0, 3).unwrap();
        assert!(state.iter().all(|v| v.abs() <= 1e-15));
        assert!(prediction.amax() <= 1e-15);

        // First-order lag: −A⁻¹B = 1 and C·1 = 1.
        let h = TransferFunction::new(&[1.0], &[1.0, 1.0]).unwrap();
        let (state, prediction) = equilibrium_internal_state(&h, 1.0, 2).unwrap();
        assert_eq!(state, alloc::vec![1.0, 1.0]);
        assert_abs_diff_eq!(prediction[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(prediction[1], 1.0, epsilon = 1e-15);

        // Integrator: A singular.
        assert!(matches!(
            equilibrium_internal_state(&TransferFunction::integrator(), 1.0, 2),
            Err(DynamicsError::SingularInternalDynamics)
        ));
    }

    #[test]
    fn cascade_drift_at_zero_state() {
        let g = TransferFunction::new(&[1.0], &[1.0, 1.0]).unwrap();
        let sys = ClosedLoopSystem::new(LearningRule::cascade(3, g).unwrap(), congestion_example())
            .unwrap();
        let drift = sys.vector_field(&sys.zero_state()).unwrap();
        // ξ = 0 → x uniform → p = −(4/3, 1, 5/3); B = [1] so ξ̇ = p.
        assert_abs_diff_eq!(drift[0], -4.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(drift[1], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(drift[2], -5.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn init_score_round_trips() {
        let uniform = SimplexPoint::uniform(4);
        let score = init_score_at(&uniform, None).unwrap();
        assert!(score.amax() <= 1e-15);

        let x = SimplexPoint::from_slice(&[0.5, 0.25, 0.25]).unwrap();
        let score = init_score_at(&x, None).unwrap();
        assert_abs_diff_eq!(score.mean(), 0.0, epsilon = 1e-15);
        let back = softmax(&score).unwrap();
        assert!(back.distance(&x) <= 1e-15);

        let x_star = SimplexPoint::from_slice(&[4.0 / 11.0, 6.0 / 11.0, 1.0 / 11.0]).unwrap();
        let back = softmax(&init_score_at(&x_star, None).unwrap()).unwrap();
        assert!(back.distance(&x_star) <= 1e-14);

        let boundary = SimplexPoint::from_slice(&[1.0, 0.0]).unwrap();
        assert!(matches!(
            init_score_at(&boundary, None),
            Err(DynamicsError::StrategyTooSmall(1))
        ));
    }

    #[test]
    fn integrate_validates_settings() {
        let sys =
            ClosedLoopSystem::new(LearningRule::standard_rd(3).unwrap(), rps_example()).unwrap();
        let state = sys.zero_state();
        let bad = IntegratorSettings {
            dt: 0.0,
            ..IntegratorSettings::default()
        };
        assert!(matches!(
            integrate(&sys, &state, &bad),
            Err(DynamicsError::BadSettings(_))
        ));
        assert!(matches!(
            integrate(&sys, &state[..2], &IntegratorSettings::default()),
            Err(DynamicsError::StateLengthMismatch { .. })
        ));
    }

    #[test]
    fn trajectory_grid_and_validity() {
        let sys =
            ClosedLoopSystem::new(LearningRule::standard_rd(3).unwrap(), rps_example()).unwrap();
        let x0 = SimplexPoint::from_slice(&[0.5, 0.3, 0.2]).unwrap();
        let state0 = sys.initial_state(&x0).unwrap();
        let settings = IntegratorSettings {
            t_final: 5.0,
            ..IntegratorSettings::default()
        };
        let traj = integrate(&sys, &state0, &settings).unwrap();
        assert_eq!(traj.len(), 51);
        assert_abs_diff_eq!(traj.t[50], 5.0, epsilon = 1e-12);
        for k in 1..traj.len() {
            assert!(traj.t[k] > traj.t[k - 1]);
        }
        // Strategies stay valid simplex points throughout.
        for x in &traj.x {
            let sum: f64 = x.as_slice().iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
        }
        assert!(traj.x[0].distance(&x0) <= 1e-15);
    }

    #[test]
    fn rk4_and_rk45_agree_on_smooth_loop() {
        let sys = ClosedLoopSystem::new(hord_rule(), rps_example()).unwrap();
        let x0 = SimplexPoint::from_slice(&[0.5, 0.3, 0.2]).unwrap();
        let state0 = sys.initial_state(&x0).unwrap();
        let fine = IntegratorSettings {
            method: IntegrationMethod::Rk4,
            dt: 1e-3,
            t_final: 10.0,
            ..IntegratorSettings::default()
        };
        let adaptive = IntegratorSettings {
            method: IntegrationMethod::Rk45,
            t_final: 10.0,
            rtol: 1e-10,
            atol: 1e-12,
            ..IntegratorSettings::default()
        };
        let a = integrate(&sys, &state0, &fine).unwrap();
        let b = integrate(&sys, &state0, &adaptive).unwrap();
        assert!(a.final_strategy().distance(b.final_strategy()) <= 1e-8);
    }

    #[test]
    fn projection_toggle_leaves_strategies_unchanged() {
        let game = rps_example();
        let sys = ClosedLoopSystem::new(hord_rule(), game.clone()).unwrap();
        let unprojected = ClosedLoopSystem::new(hord_rule(), game)
            .unwrap()
            .with_score_projection(false);
        let x0 = SimplexPoint::from_slice(&[0.5, 0.3, 0.2]).unwrap();
        let state0 = sys.initial_state(&x0).unwrap();
        let settings = IntegratorSettings {
            t_final: 50.0,
            ..IntegratorSettings::default()
        };
        let a = integrate(&sys, &state0, &settings).unwrap();
        let b = integrate(&unprojected, &state0, &settings).unwrap();
        for (xa, xb) in a.x.iter().zip(&b.x) {
            assert!(xa.distance(xb) <= 1e-8);
        }
    }

    /// Payoff 1/(1 − x₁): finite on the interior, infinite at the vertex the
    /// loop is drawn toward. Does not self-validate, so the dynamics-level
    /// guard must fire.
    struct ExplodingGame;

    impl PopulationGame for ExplodingGame {
        fn strategy_count(&self) -> usize {
            2
        }
        fn payoff_vector(&self, x: &[f64]) -> Result<DVector<f64>, GameError> {
            Ok(DVector::from_column_slice(&[1.0 / (1.0 - x[0]), 0.0]))
        }
    }

    #[test]
    fn vector_field_reports_non_finite_payoff() {
        let sys =
            ClosedLoopSystem::new(LearningRule::standard_rd(2).unwrap(), ExplodingGame).unwrap();
        // Score so lopsided that x = (1, 0) exactly in floating point.
        let err = sys.vector_field(&[800.0, 0.0]).unwrap_err();
        match err {
            DynamicsError::NonFinitePayoff { state, .. } => assert_eq!(state, &[800.0, 0.0]),
            other => panic!("expected NonFinitePayoff, got {other:?}"),
        }
    }

    #[test]
    fn integration_fails_cleanly_on_finite_time_blowup() {
        let sys =
            ClosedLoopSystem::new(LearningRule::standard_rd(2).unwrap(), ExplodingGame).unwrap();
        let settings = IntegratorSettings {
            t_final: 50.0,
            ..IntegratorSettings::default()
        };
        let err = integrate(&sys, &sys.zero_state(), &settings).unwrap_err();
        assert!(
            matches!(
                err,
                DynamicsError::NonFinitePayoff { .. }
                    | DynamicsError::NonFiniteState { .. }
                    | DynamicsError::StepSizeUnderflow { .. }
            ),
            "unexpected failure mode: {err:?}"
        );
    }
}
