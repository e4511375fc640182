//! Scenario configuration: the JSON document accepted by `--config` and
//! mirrored one-to-one by command-line flags.

use serde::{Deserialize, Serialize};

use replab_core::dynamics::{IntegrationMethod, IntegratorSettings, LearningRule};
use replab_core::games::MatrixGame;
use replab_core::lti::TransferFunction;
use replab_core::simplex::SimplexPoint;

/// A configuration error carries the name of the offending field.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub game: GameSpec,
    pub rule: RuleSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state0: Option<Vec<f64>>,
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub seed: u64,
}

/// Game selector: exactly one of `builtin` or `matrix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
}

impl GameSpec {
    pub fn build(&self) -> Result<MatrixGame, ConfigError> {
        match (&self.builtin, &self.matrix) {
            (Some(name), None) => builtin_game(name).ok_or_else(|| {
                ConfigError::new(
                    "game.builtin",
                    format!("unknown builtin `{name}` (see list-builtins)"),
                )
            }),
            (None, Some(rows)) => {
                let n = rows.len();
                if n < 2 || rows.iter().any(|r| r.len() != n) {
                    return Err(ConfigError::new(
                        "game.matrix",
                        "must be square with at least 2 rows",
                    ));
                }
                let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
                MatrixGame::from_rows(n, &flat)
                    .map_err(|e| ConfigError::new("game.matrix", e.to_string()))
            }
            (None, None) => Err(ConfigError::new(
                "game",
                "one of `builtin` or `matrix` is required",
            )),
            (Some(_), Some(_)) => Err(ConfigError::new(
                "game",
                "`builtin` and `matrix` are mutually exclusive",
            )),
        }
    }
}

pub fn builtin_game(name: &str) -> Option<MatrixGame> {
    match name {
        "rps" => Some(replab_core::games::rps_example()),
        "congestion" => Some(replab_core::games::congestion_example()),
        _ => None,
    }
}

pub const BUILTIN_NAMES: &[&str] = &["rps", "congestion"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RuleKindSpec {
    /// Standard replicator dynamics.
    Standard,
    /// Payoff-driven higher-order replicator dynamics (needs num/den for h).
    Hord,
    /// Cascade of g(s)·I with softmax (needs num/den for g).
    Cascade,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub kind: RuleKindSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub den: Option<Vec<f64>>,
}

impl RuleSpec {
    pub fn transfer_function(&self) -> Result<Option<TransferFunction>, ConfigError> {
        match self.kind {
            RuleKindSpec::Standard => {
                if self.num.is_some() || self.den.is_some() {
                    return Err(ConfigError::new(
                        "rule.num",
                        "standard replicator dynamics takes no transfer function",
                    ));
                }
                Ok(None)
            }
            RuleKindSpec::Hord | RuleKindSpec::Cascade => {
                let num = self
                    .num
                    .as_ref()
                    .ok_or_else(|| ConfigError::new("rule.num", "required for this rule"))?;
                let den = self
                    .den
                    .as_ref()
                    .ok_or_else(|| ConfigError::new("rule.den", "required for this rule"))?;
                TransferFunction::new(num, den)
                    .map(Some)
                    .map_err(|e| ConfigError::new("rule.num/den", e.to_string()))
            }
        }
    }

    pub fn build(&self, n: usize) -> Result<LearningRule, ConfigError> {
        let tf = self.transfer_function()?;
        let rule = match self.kind {
            RuleKindSpec::Standard => LearningRule::standard_rd(n),
            RuleKindSpec::Hord => LearningRule::higher_order(n, tf.unwrap()),
            RuleKindSpec::Cascade => LearningRule::cascade(n, tf.unwrap()),
        };
        rule.map_err(|e| ConfigError::new("rule", e.to_string()))
    }
}

fn default_method() -> IntegrationMethod {
    IntegrationMethod::Rk45
}
fn default_dt() -> f64 {
    1e-2
}
fn default_stride() -> f64 {
    0.1
}
fn default_rtol() -> f64 {
    1e-8
}
fn default_atol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "default_method")]
    pub method: IntegrationMethod,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_stride")]
    pub stride: f64,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
}

impl IntegratorConfig {
    pub fn settings(&self) -> IntegratorSettings {
        IntegratorSettings {
            method: self.method,
            dt: self.dt,
            t_final: self.t_final,
            output_stride: self.stride,
            rtol: self.rtol,
            atol: self.atol,
        }
    }
}

impl ScenarioConfig {
    /// Resolve the initial state: explicit `state0`, or `x0` through the
    /// rule's score construction, or the zero state.
    pub fn initial_state(
        &self,
        sys: &replab_core::dynamics::ClosedLoopSystem<MatrixGame>,
    ) -> Result<Vec<f64>, ConfigError> {
        match (&self.x0, &self.state0) {
            (Some(_), Some(_)) => Err(ConfigError::new(
                "x0",
                "`x0` and `state0` are mutually exclusive",
            )),
            (None, Some(state)) => {
                if state.len() != sys.state_dim() {
                    return Err(ConfigError::new(
                        "state0",
                        format!(
                            "has {} entries but the state dimension is {}",
                            state.len(),
                            sys.state_dim()
                        ),
                    ));
                }
                Ok(state.clone())
            }
            (Some(x0), None) => {
                let point = SimplexPoint::from_slice(x0)
                    .map_err(|e| ConfigError::new("x0", e.to_string()))?;
                sys.initial_state(&point)
                    .map_err(|e| ConfigError::new("x0", e.to_string()))
            }
            (None, None) => Ok(sys.zero_state()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        let json = r#"{
            "game": {"builtin": "rps"},
            "rule": {"kind": "hord", "num": [2.0, 3.0], "den": [1.0, 3.0, 2.0]},
            "x0": [0.5, 0.3, 0.2],
            "integrator": {"method": "rk45", "t_final": 200.0},
            "seed": 7
        }"#;
        let config: ScenarioConfig = serde_json::from_str(json).unwrap();
        let text = serde_json::to_string(&config).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let json = r#"{
            "game": {"builtin": "rps"},
            "rule": {"kind": "standard"},
            "integrator": {"t_final": 1.0},
            "does_not_exist": 1
        }"#;
        let err = serde_json::from_str::<ScenarioConfig>(json).unwrap_err();
        assert!(err.to_string().contains("does_not_exist"));
    }

    fn by_name(name: &str) -> GameSpec {
        GameSpec {
            builtin: Some(name.into()),
            matrix: None,
        }
    }

    #[test]
    fn game_spec_validation() {
        assert!(GameSpec {
            builtin: None,
            matrix: None
        }
        .build()
        .is_err());
        assert!(by_name("nope").build().is_err());
        assert!(by_name("congestion").build().is_ok());
        let ragged = GameSpec {
            builtin: None,
            matrix: Some(vec![vec![0.0, 1.0], vec![1.0]]),
        };
        assert!(ragged.build().is_err());
    }

    #[test]
    fn rule_spec_validation() {
        let spec = RuleSpec {
            kind: RuleKindSpec::Hord,
            num: Some(vec![2.0, 3.0]),
            den: None,
        };
        let err = spec.build(3).unwrap_err();
        assert_eq!(err.field, "rule.den");

        let spec = RuleSpec {
            kind: RuleKindSpec::Standard,
            num: Some(vec![1.0]),
            den: None,
        };
        assert!(spec.build(3).is_err());
    }
}
