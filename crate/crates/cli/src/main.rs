//! `replab` — closed-loop learning-dynamics laboratory.
//!
//! Subcommands: `simulate` (trajectory CSV + metadata JSON), `certify`
//! (passivity / game-convergence certificates), `analyze` (equilibria,
//! linearization spectra, contraction probes, fixed points), and
//! `list-builtins`.
//!
//! Exit codes: 0 success / property holds, 1 usage or malformed config,
//! 2 integration or iteration failure, 3 property fails, 4 analysis
//! inapplicable to the inputs.

mod config;
mod output;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use replab_core::analysis::{
    fixed_point_exrd, global_convergence_certificate, incremental_probe, linearize_higher_order,
    AnalysisError, ConvergenceVerdict,
};
use replab_core::dynamics::{
    integrate, ClosedLoopSystem, DynamicsError, IntegrationMethod, IntegratorSettings,
};
use replab_core::games::{
    contractiveness, interior_nash, nash_gap, GameError, MatrixGame, PopulationGame,
};
use replab_core::lti::{passivity_report, TransferFunction};
use replab_core::rng::SplitMix64;

use config::{
    builtin_game, ConfigError, GameSpec, IntegratorConfig, RuleKindSpec, RuleSpec, ScenarioConfig,
    BUILTIN_NAMES,
};
use output::{to_json_string, write_trajectory_csv};

const EXIT_USAGE: u8 = 1;
const EXIT_INTEGRATION: u8 = 2;
const EXIT_PROPERTY: u8 = 3;
const EXIT_INAPPLICABLE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "replab",
    version,
    about = "Simulate and certify learning dynamics in population games"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a learning rule against a game; emit trajectory CSV.
    Simulate(SimulateArgs),
    /// Passivity certificates for a transfer function, optionally the
    /// convergence certificate against a matrix game.
    Certify(CertifyArgs),
    /// Convergence analyses, emitted as JSON reports.
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCommand,
    },
    /// List built-in games with their payoff matrices.
    ListBuiltins,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum MethodFlag {
    Rk4,
    Rk45,
}

impl From<MethodFlag> for IntegrationMethod {
    fn from(m: MethodFlag) -> Self {
        match m {
            MethodFlag::Rk4 => IntegrationMethod::Rk4,
            MethodFlag::Rk45 => IntegrationMethod::Rk45,
        }
    }
}

#[derive(Args)]
struct GameArgs {
    /// Built-in game name (`rps` or `congestion`).
    #[arg(long)]
    builtin: Option<String>,
    /// Payoff matrix as JSON rows, e.g. '[[0,-1,1],[1,0,-1],[-1,1,0]]'.
    #[arg(long, allow_hyphen_values = true)]
    matrix: Option<String>,
}

impl GameArgs {
    fn spec(&self) -> Result<GameSpec, Failure> {
        let matrix = match &self.matrix {
            None => None,
            Some(text) => Some(serde_json::from_str::<Vec<Vec<f64>>>(text).map_err(|e| {
                Failure::usage(format!(
                    "config field `game.matrix`: not valid JSON rows: {e}"
                ))
            })?),
        };
        Ok(GameSpec {
            builtin: self.builtin.clone(),
            matrix,
        })
    }

    fn build(&self) -> Result<MatrixGame, Failure> {
        Ok(self.spec()?.build()?)
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Full scenario document (JSON); mutually exclusive with scenario flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    game: GameArgs,
    /// Learning rule.
    #[arg(long, value_enum)]
    rule: Option<RuleKindSpec>,
    /// Transfer-function numerator, descending powers, comma-separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    num: Option<Vec<f64>>,
    /// Transfer-function denominator, descending powers, comma-separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    den: Option<Vec<f64>>,
    /// Initial strategy (simplex point), comma-separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    /// Full initial state, comma-separated (see the rule's state layout).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    state0: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    method: Option<MethodFlag>,
    /// Fixed step (rk4) / initial step (rk45).
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    /// Model-time spacing of CSV samples.
    #[arg(long)]
    stride: Option<f64>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metadata JSON path (defaults to `<out>.meta.json` when --out is set).
    #[arg(long)]
    meta: Option<PathBuf>,
}

impl SimulateArgs {
    fn has_scenario_flags(&self) -> bool {
        self.game.builtin.is_some()
            || self.game.matrix.is_some()
            || self.rule.is_some()
            || self.num.is_some()
            || self.den.is_some()
            || self.x0.is_some()
            || self.state0.is_some()
            || self.method.is_some()
            || self.dt.is_some()
            || self.t_final.is_some()
            || self.stride.is_some()
            || self.rtol.is_some()
            || self.atol.is_some()
            || self.seed.is_some()
    }

    fn scenario(&self) -> Result<ScenarioConfig, Failure> {
        if let Some(path) = &self.config {
            if self.has_scenario_flags() {
                return Err(Failure::usage(
                    "--config is mutually exclusive with scenario flags".into(),
                ));
            }
            let text = fs::read_to_string(path).map_err(|e| {
                Failure::usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            return serde_json::from_str(&text)
                .map_err(|e| Failure::usage(format!("malformed config: {e}")));
        }
        let rule = self
            .rule
            .ok_or_else(|| Failure::usage("missing --rule (or use --config)".into()))?;
        let t_final = self
            .t_final
            .ok_or_else(|| Failure::usage("missing --t-final (or use --config)".into()))?;
        Ok(ScenarioConfig {
            game: self.game.spec()?,
            rule: RuleSpec {
                kind: rule,
                num: self.num.clone(),
                den: self.den.clone(),
            },
            x0: self.x0.clone(),
            state0: self.state0.clone(),
            integrator: IntegratorConfig {
                method: self
                    .method
                    .map(Into::into)
                    .unwrap_or(IntegrationMethod::Rk45),
                dt: self.dt.unwrap_or(1e-2),
                t_final,
                stride: self.stride.unwrap_or(0.1),
                rtol: self.rtol.unwrap_or(1e-8),
                atol: self.atol.unwrap_or(1e-10),
            },
            seed: self.seed.unwrap_or(0),
        })
    }
}

#[derive(Args)]
struct CertifyArgs {
    /// Numerator coefficients, descending powers.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    num: Vec<f64>,
    /// Denominator coefficients, descending powers.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    den: Vec<f64>,
    /// Require strict passivity for exit code 0.
    #[arg(long)]
    strict: bool,
    /// Built-in game for the convergence certificate.
    #[arg(long)]
    game: Option<String>,
    /// Payoff matrix JSON for the convergence certificate.
    #[arg(long, allow_hyphen_values = true)]
    matrix: Option<String>,
    #[arg(long, default_value_t = 1e4)]
    omega_max: f64,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Interior Nash equilibrium of a matrix game.
    Nash(GameArgs),
    /// Spectrum of the reduced closed-loop linearization at the interior
    /// equilibrium (standard replicator or higher-order rule).
    Linearize(LinearizeArgs),
    /// Contraction probe: integrate two initial states, report distances and
    /// the fitted decay rate.
    Incremental(IncrementalArgs),
    /// Rest point of exponential replicator dynamics (score fixed point).
    ExrdFixedPoint(ExrdArgs),
    /// Contractiveness classification of a game.
    Contractiveness(ContractivenessArgs),
}

#[derive(Args)]
struct LinearizeArgs {
    #[command(flatten)]
    game: GameArgs,
    #[arg(long, value_enum, default_value_t = RuleKindSpec::Standard)]
    rule: RuleKindSpec,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    num: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    den: Option<Vec<f64>>,
}

#[derive(Args)]
struct IncrementalArgs {
    #[command(flatten)]
    game: GameArgs,
    #[arg(long, value_enum)]
    rule: RuleKindSpec,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    num: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    den: Option<Vec<f64>>,
    /// First initial state; drawn from --seed when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    state0_a: Option<Vec<f64>>,
    /// Second initial state; drawn from --seed when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    state0_b: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20.0)]
    t_final: f64,
    #[arg(long, default_value_t = 0.1)]
    stride: f64,
    #[arg(long, default_value_t = 1e-2)]
    dt: f64,
    #[arg(long, default_value_t = 1e-8)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-10)]
    atol: f64,
    #[arg(long, value_enum, default_value_t = MethodFlag::Rk45)]
    method: MethodFlag,
}

#[derive(Args)]
struct ExrdArgs {
    #[command(flatten)]
    game: GameArgs,
    #[arg(long, default_value_t = 0.5)]
    damping: f64,
}

#[derive(Args)]
struct ContractivenessArgs {
    #[command(flatten)]
    game: GameArgs,
    /// Sample count for black-box games; matrix games are exact.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// A failed command: exit code plus a message for stderr.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: String) -> Self {
        Self {
            code: EXIT_USAGE,
            message,
        }
    }

    fn inapplicable(message: String) -> Self {
        Self {
            code: EXIT_INAPPLICABLE,
            message,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::usage(e.to_string())
    }
}

impl From<DynamicsError> for Failure {
    fn from(e: DynamicsError) -> Self {
        let code = match &e {
            DynamicsError::NonFinitePayoff { .. }
            | DynamicsError::NonFiniteState { .. }
            | DynamicsError::StepSizeUnderflow { .. }
            | DynamicsError::Game(_)
            | DynamicsError::Simplex(_) => EXIT_INTEGRATION,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        let code = match &e {
            AnalysisError::Game(GameError::SingularEquilibriumSystem)
            | AnalysisError::Game(GameError::BoundaryEquilibrium(_))
            | AnalysisError::BoundaryState(_) => EXIT_INAPPLICABLE,
            AnalysisError::FixedPointDiverged { .. } => EXIT_INTEGRATION,
            AnalysisError::Dynamics(d) => return Failure::from(d.clone()),
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: format!("serialization failed: {e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Certify(args) => cmd_certify(&args),
        Command::Analyze { what } => cmd_analyze(&what),
        Command::ListBuiltins => cmd_list_builtins(),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

#[derive(Serialize)]
struct SimulateResult {
    final_time: f64,
    final_x: Vec<f64>,
    final_nash_gap: f64,
    steps_accepted: usize,
    steps_rejected: usize,
    derivative_evals: usize,
}

#[derive(Serialize)]
struct SimulateMeta<'a> {
    config: &'a ScenarioConfig,
    result: SimulateResult,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8, Failure> {
    let scenario = args.scenario()?;
    let game = scenario.game.build()?;
    let rule = scenario.rule.build(game.strategy_count())?;
    let sys = ClosedLoopSystem::new(rule, game).map_err(|e| Failure::usage(e.to_string()))?;
    let state0 = scenario.initial_state(&sys)?;
    let settings = scenario.integrator.settings();

    let traj = integrate(&sys, &state0, &settings)?;

    let final_gap =
        nash_gap(sys.game(), traj.final_strategy()).map_err(|e| Failure::usage(e.to_string()))?;
    let meta = SimulateMeta {
        config: &scenario,
        result: SimulateResult {
            final_time: *traj.t.last().expect("nonempty trajectory"),
            final_x: traj.final_strategy().as_slice().to_vec(),
            final_nash_gap: final_gap,
            steps_accepted: traj.meta.steps_accepted,
            steps_rejected: traj.meta.steps_rejected,
            derivative_evals: traj.meta.derivative_evals,
        },
    };

    match &args.out {
        Some(path) => {
            let mut buffer = Vec::new();
            write_trajectory_csv(&traj, &mut buffer)
                .map_err(|e| Failure::usage(format!("cannot format CSV: {e}")))?;
            fs::write(path, &buffer)
                .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))?;
            let meta_path = args.meta.clone().unwrap_or_else(|| meta_sidecar_path(path));
            fs::write(&meta_path, to_json_string(&meta)?).map_err(|e| {
                Failure::usage(format!("cannot write {}: {e}", meta_path.display()))
            })?;
        }
        None => {
            let stdout = std::io::stdout();
            write_trajectory_csv(&traj, stdout.lock())
                .map_err(|e| Failure::usage(format!("cannot write CSV: {e}")))?;
            if let Some(meta_path) = &args.meta {
                fs::write(meta_path, to_json_string(&meta)?).map_err(|e| {
                    Failure::usage(format!("cannot write {}: {e}", meta_path.display()))
                })?;
            }
        }
    }
    Ok(0)
}

fn meta_sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_os_string();
    name.push(".meta.json");
    PathBuf::from(name)
}

#[derive(Serialize)]
struct CertifyOutput {
    transfer_function: String,
    passivity: replab_core::lti::PassivityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    game: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    certificate: Option<replab_core::analysis::GlobalConvergenceCertificate>,
}

fn cmd_certify(args: &CertifyArgs) -> Result<u8, Failure> {
    if args.num.is_empty() {
        return Err(Failure::usage("missing --num".into()));
    }
    if args.den.is_empty() {
        return Err(Failure::usage("missing --den".into()));
    }
    let tf =
        TransferFunction::new(&args.num, &args.den).map_err(|e| Failure::usage(e.to_string()))?;
    let report = passivity_report(&tf, args.omega_max, args.samples)
        .map_err(|e| Failure::usage(e.to_string()))?;

    let game = match (&args.game, &args.matrix) {
        (None, None) => None,
        (Some(name), None) => Some((
            name.clone(),
            builtin_game(name).ok_or_else(|| {
                Failure::usage(format!("unknown builtin game `{name}` (see list-builtins)"))
            })?,
        )),
        (None, Some(text)) => {
            let rows: Vec<Vec<f64>> = serde_json::from_str(text).map_err(|e| {
                Failure::usage(format!(
                    "config field `game.matrix`: not valid JSON rows: {e}"
                ))
            })?;
            let spec = GameSpec {
                builtin: None,
                matrix: Some(rows),
            };
            Some(("matrix".into(), spec.build()?))
        }
        (Some(_), Some(_)) => {
            return Err(Failure::usage(
                "--game and --matrix are mutually exclusive".into(),
            ))
        }
    };

    let (certificate, game_name) = match game {
        None => (None, None),
        Some((name, game)) => {
            let cert = global_convergence_certificate(&game, &tf, args.omega_max, args.samples)?;
            (Some(cert), Some(name))
        }
    };

    let holds = match &certificate {
        Some(cert) => cert.verdict != ConvergenceVerdict::None,
        None => {
            if args.strict {
                report.strictly_passive
            } else {
                report.passive
            }
        }
    };

    let out = CertifyOutput {
        transfer_function: tf.to_string(),
        passivity: report,
        game: game_name,
        certificate,
    };
    println!("{}", to_json_string(&out)?);
    Ok(if holds { 0 } else { EXIT_PROPERTY })
}

#[derive(Serialize)]
struct NashOutput {
    x: Vec<f64>,
    alpha: f64,
    residual: f64,
    nash_gap: f64,
}

fn cmd_analyze(what: &AnalyzeCommand) -> Result<u8, Failure> {
    match what {
        AnalyzeCommand::Nash(game_args) => {
            let game = game_args.build()?;
            let (x, alpha) = interior_nash(&game).map_err(map_equilibrium_error)?;
            let payoff = game.payoff(&x).map_err(|e| Failure::usage(e.to_string()))?;
            let residual = payoff
                .iter()
                .map(|p| (p - alpha) * (p - alpha))
                .sum::<f64>()
                .sqrt();
            let gap = nash_gap(&game, &x).map_err(|e| Failure::usage(e.to_string()))?;
            let out = NashOutput {
                x: x.as_slice().to_vec(),
                alpha,
                residual,
                nash_gap: gap,
            };
            println!("{}", to_json_string(&out)?);
            Ok(0)
        }
        AnalyzeCommand::Linearize(args) => {
            let game = args.game.build()?;
            if args.rule == RuleKindSpec::Cascade {
                return Err(Failure::inapplicable(
                    "linearize covers standard and hord rules; cascade loops are assessed by `certify --game`".into(),
                ));
            }
            let spec = RuleSpec {
                kind: args.rule,
                num: args.num.clone(),
                den: args.den.clone(),
            };
            let tf = spec.transfer_function()?;
            let report = linearize_higher_order(&game, tf.as_ref())?;
            let hurwitz = report.max_real_part < 0.0;
            println!("{}", to_json_string(&report)?);
            Ok(if hurwitz { 0 } else { EXIT_PROPERTY })
        }
        AnalyzeCommand::Incremental(args) => {
            let game = args.game.build()?;
            let spec = RuleSpec {
                kind: args.rule,
                num: args.num.clone(),
                den: args.den.clone(),
            };
            let rule = spec.build(game.strategy_count())?;
            let sys =
                ClosedLoopSystem::new(rule, game).map_err(|e| Failure::usage(e.to_string()))?;
            let mut rng = SplitMix64::new(args.seed);
            let mut draw =
                |dim: usize| -> Vec<f64> { (0..dim).map(|_| rng.next_range(-1.0, 1.0)).collect() };
            let state_a = match &args.state0_a {
                Some(s) => s.clone(),
                None => draw(sys.state_dim()),
            };
            let state_b = match &args.state0_b {
                Some(s) => s.clone(),
                None => draw(sys.state_dim()),
            };
            let settings = IntegratorSettings {
                method: args.method.into(),
                dt: args.dt,
                t_final: args.t_final,
                output_stride: args.stride,
                rtol: args.rtol,
                atol: args.atol,
            };
            let report = incremental_probe(&sys, &state_a, &state_b, &settings)?;
            let contracted = report.final_distance <= report.initial_distance;
            println!("{}", to_json_string(&report)?);
            Ok(if contracted { 0 } else { EXIT_PROPERTY })
        }
        AnalyzeCommand::ExrdFixedPoint(args) => {
            let game = args.game.build()?;
            let fp = fixed_point_exrd(&game, args.damping)?;
            println!("{}", to_json_string(&fp)?);
            Ok(0)
        }
        AnalyzeCommand::Contractiveness(args) => {
            let game = args.game.build()?;
            let report = contractiveness(&game, args.samples.max(1), args.seed)
                .map_err(|e| Failure::usage(e.to_string()))?;
            println!("{}", to_json_string(&report)?);
            Ok(0)
        }
    }
}

fn map_equilibrium_error(e: GameError) -> Failure {
    match e {
        GameError::SingularEquilibriumSystem | GameError::BoundaryEquilibrium(_) => {
            Failure::inapplicable(e.to_string())
        }
        other => Failure::usage(other.to_string()),
    }
}

#[derive(Serialize)]
struct BuiltinEntry {
    name: &'static str,
    strategies: usize,
    symmetric: bool,
    matrix: Vec<Vec<f64>>,
}

fn cmd_list_builtins() -> Result<u8, Failure> {
    let mut entries = Vec::new();
    for &name in BUILTIN_NAMES {
        let game = builtin_game(name).expect("listed builtins exist");
        let n = game.strategy_count();
        let matrix = (0..n)
            .map(|i| (0..n).map(|j| game.matrix()[(i, j)]).collect())
            .collect();
        entries.push(BuiltinEntry {
            name,
            strategies: n,
            symmetric: game.is_symmetric(),
            matrix,
        });
    }
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    writeln!(lock, "{}", to_json_string(&entries)?)
        .map_err(|e| Failure::usage(format!("cannot write: {e}")))?;
    Ok(0)
}
