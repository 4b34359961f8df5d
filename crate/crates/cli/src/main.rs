use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use gamora::control::{decide, gamora as run_gamora, ControlError};
use gamora::experiment::{
    compare, default_horizon, prepare_output_dir, run_experiment, write_outputs, Comparison,
    ExperimentError, ExperimentSpec, DEFAULT_RUNS,
};
use gamora::io::{self, IoError};
use gamora::model::{profile_violations, ValidationReport};
use gamora::sim::EstimationMode;
use gamora::stability::{stability, StabilityError};
use gamora::stats::{Estimate, DEFAULT_BIN_WIDTH_S};
use gamora::{ControlInput, ControllerPolicy, LineConfig, Rate, RateProfile};

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "gamora", version, about = "Boarding control for cable-car and gondola lines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-station stability thresholds and the bottleneck block partition.
    Stability(StabilityArgs),
    /// One controller decision for an observed line state.
    Control(ControlArgs),
    /// Seeded replications of one controller; writes stats and traces.
    Simulate(SimulateArgs),
    /// No control, static reservations and Gamora under identical seeds.
    Compare(CompareArgs),
}

#[derive(Args)]
struct StabilityArgs {
    #[arg(long)]
    config: PathBuf,
    /// Rate profile; station shares are read at `--at-s`.
    #[arg(long, conflicts_with = "nu")]
    profile: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    at_s: f64,
    /// Explicit station shares (or rates), comma separated.
    #[arg(long, value_delimiter = ',', required_unless_present = "profile")]
    nu: Option<Vec<f64>>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ControlArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    state: PathBuf,
    /// none | gamora | static:<eta_1,...,eta_M>
    #[arg(long, default_value = "gamora")]
    controller: String,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    profile: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RUNS)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_BIN_WIDTH_S)]
    bin_width_s: f64,
    /// Defaults to the profile's last breakpoint.
    #[arg(long)]
    horizon_s: Option<f64>,
    #[arg(long)]
    estimate_lambda: bool,
    #[arg(long)]
    estimate_sigma: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value = "gamora")]
    controller: String,
    /// Output directory; must be empty or absent.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Static caps to include, e.g. `--static 6,8`; repeatable. Defaults to
    /// one and two seats reserved at station 1.
    #[arg(long = "static")]
    statics: Vec<String>,
    /// Optional directory for `compare.json` and `compare.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<ValidationReport> for Failure {
    fn from(e: ValidationReport) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<StabilityError> for Failure {
    fn from(e: StabilityError) -> Self {
        Failure::Validation(e.to_string())
    }
}

fn load_config(path: &Path) -> Result<LineConfig, Failure> {
    let text = io::read_file(path)?;
    io::parse_line_config(&text).map_err(|e| with_path(path, e))
}

fn load_profile(path: &Path, config: &LineConfig) -> Result<RateProfile, Failure> {
    let text = io::read_file(path)?;
    let profile = io::parse_rate_profile(&text).map_err(|e| with_path(path, e))?;
    let violations = profile_violations(&profile, Some(config.n_stations()));
    if !violations.is_empty() {
        return Err(Failure::Validation(format!(
            "{}: {}",
            path.display(),
            ValidationReport { violations }
        )));
    }
    Ok(profile)
}

fn with_path(path: &Path, e: IoError) -> Failure {
    match Failure::from(e) {
        Failure::Validation(m) => Failure::Validation(format!("{}: {m}", path.display())),
        Failure::Runtime(m) => Failure::Runtime(m),
    }
}

fn parse_eta_list(text: &str) -> Result<Vec<u32>, Failure> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| Failure::Validation(format!("bad static cap `{s}` in `{text}`")))
        })
        .collect()
}

fn parse_controller(text: &str, config: &LineConfig) -> Result<ControllerPolicy, Failure> {
    let policy = match text {
        "none" => ControllerPolicy::NoControl,
        "gamora" => ControllerPolicy::Gamora,
        _ => match text.strip_prefix("static:") {
            Some(list) => ControllerPolicy::Static(parse_eta_list(list)?),
            None => {
                return Err(Failure::Validation(format!(
                    "unknown controller `{text}` (expected none, gamora or static:<eta list>)"
                )))
            }
        },
    };
    policy
        .check(config.n_stations(), config.gamma)
        .map_err(|e| Failure::Validation(e.to_string()))?;
    Ok(policy)
}

fn rate_json(r: &Rate<f64>) -> Value {
    match r {
        Rate::Finite(x) => json!(x),
        Rate::Infinite => json!("inf"),
    }
}

fn rate_text(r: &Rate<f64>) -> String {
    match r {
        Rate::Finite(x) => format!("{x:.6}"),
        Rate::Infinite => "inf".to_string(),
    }
}

fn cmd_stability(args: &StabilityArgs) -> Result<String, Failure> {
    let config = load_config(&args.config)?;
    let n = config.n_stations();
    let rates = match (&args.nu, &args.profile) {
        (Some(nu), _) => nu.clone(),
        (None, Some(path)) => load_profile(path, &config)?.rates_at(args.at_s),
        (None, None) => unreachable!("clap requires one of --nu and --profile"),
    };
    if rates.len() != n {
        return Err(Failure::Validation(format!(
            "need {n} station shares, got {}",
            rates.len()
        )));
    }
    if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Failure::Validation("station shares must be finite and >= 0".into()));
    }
    let total: f64 = rates.iter().sum();
    if total <= 0.0 {
        return Err(Failure::Validation("station shares sum to zero".into()));
    }
    let nu: Vec<f64> = rates.iter().map(|r| r / total).collect();
    let sigma = config.sigmas();
    let thresholds = stability(&config.r0_mean, &nu, &sigma, &config.beta, config.gamma)?;
    let decision = run_gamora(&ControlInput {
        r0: config.r0_mean,
        lambda_in: nu.clone(),
        sigma: sigma.clone(),
        beta: config.beta,
        gamma: config.gamma,
    })
    .map_err(|e| Failure::Validation(e.to_string()))?;

    if args.json {
        let doc = json!({
            "nu": nu,
            "thresholds": thresholds.values.iter().map(rate_json).collect::<Vec<_>>(),
            "degenerate_stations": thresholds.degenerate.iter().map(|m| m + 1).collect::<Vec<_>>(),
            "blocks": decision.blocks.bounds,
            "block_thresholds": decision.thresholds.iter().map(rate_json).collect::<Vec<_>>(),
        });
        return Ok(serde_json::to_string_pretty(&doc).expect("json") + "\n");
    }
    let mut out = String::new();
    let _ = writeln!(out, "{:<12} {:>8} {:>8} {:>14}", "station", "nu", "sigma", "threshold");
    for (m, st) in config.stations.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:<12} {:>8.4} {:>8.4} {:>14}",
            st.name,
            nu[m],
            sigma[m],
            rate_text(&thresholds.values[m])
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<8} {:>10} {:>14}", "block", "stations", "threshold");
    for (i, range) in decision.blocks.ranges().enumerate() {
        let _ = writeln!(
            out,
            "{:<8} {:>10} {:>14}",
            i + 1,
            format!("{}-{}", range.start + 1, range.end),
            rate_text(&decision.thresholds[i])
        );
    }
    Ok(out)
}

fn cmd_control(args: &ControlArgs) -> Result<String, Failure> {
    let config = load_config(&args.config)?;
    let state_text = io::read_file(&args.state)?;
    let state = io::parse_state(&state_text, &config).map_err(|e| with_path(&args.state, e))?;
    let policy = parse_controller(&args.controller, &config)?;
    if policy == ControllerPolicy::Gamora {
        let lambda_in = gamora::control::feedback_input(&state.queues, &config.beta, &state.lambda_hat);
        let input = ControlInput {
            r0: state.r0_hat,
            lambda_in,
            sigma: state.sigma_hat.clone(),
            beta: config.beta,
            gamma: config.gamma,
        };
        match run_gamora(&input) {
            Err(ControlError::NoDemand) => {}
            Err(e) => return Err(Failure::Validation(e.to_string())),
            Ok(_) => {}
        }
    }
    let decision = decide(&policy, &state, &config);
    if args.json {
        let doc = json!({
            "controller": policy.label(),
            "eta": decision.eta,
            "blocks": decision.blocks.bounds,
            "block_thresholds": decision.thresholds.iter().map(rate_json).collect::<Vec<_>>(),
        });
        return Ok(serde_json::to_string_pretty(&doc).expect("json") + "\n");
    }
    let mut out = String::new();
    let _ = writeln!(out, "controller {}", policy.label());
    let _ = writeln!(out, "eta        {}", join(&decision.eta));
    let _ = writeln!(out, "blocks     {}", join(&decision.blocks.bounds));
    let _ = writeln!(
        out,
        "thresholds {}",
        decision.thresholds.iter().map(rate_text).collect::<Vec<_>>().join(",")
    );
    Ok(out)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn base_spec(
    run: &RunArgs,
    profile: &RateProfile,
    controller: ControllerPolicy,
) -> Result<ExperimentSpec, Failure> {
    let horizon = match run.horizon_s {
        Some(h) => h,
        None => default_horizon(profile).ok_or(ExperimentError::Horizon)?,
    };
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Failure::Validation("--horizon-s must be > 0".into()));
    }
    if !(run.bin_width_s > 0.0 && run.bin_width_s.is_finite()) {
        return Err(Failure::Validation("--bin-width-s must be > 0".into()));
    }
    if run.runs == 0 {
        return Err(ExperimentError::Runs.into());
    }
    Ok(ExperimentSpec {
        controller,
        runs: run.runs,
        seed: run.seed,
        bin_width: run.bin_width_s,
        horizon,
        estimation: EstimationMode::estimated(run.estimate_lambda, run.estimate_sigma),
    })
}

fn estimate_text(e: &Option<Estimate>) -> String {
    match e {
        None => "-".to_string(),
        Some(Estimate { mean, half_width: Some(h), .. }) => format!("{mean:.1} ± {h:.1}"),
        Some(Estimate { mean, half_width: None, .. }) => format!("{mean:.1}"),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<String, Failure> {
    let config = load_config(&args.run.config)?;
    let profile = load_profile(&args.run.profile, &config)?;
    let policy = parse_controller(&args.controller, &config)?;
    let spec = base_spec(&args.run, &profile, policy)?;
    prepare_output_dir(&args.out)?;
    let result = run_experiment(&config, &profile, &spec)?;
    for (i, t) in result.traces.iter().enumerate() {
        let problems = t.verify();
        if !problems.is_empty() {
            return Err(Failure::Runtime(format!("run {i}: {}", problems.join("; "))));
        }
    }
    let written = write_outputs(&args.out, &spec, &result, true)?;
    if args.run.json {
        let doc = json!({
            "controller": spec.controller.label(),
            "runs": spec.runs,
            "horizon_s": spec.horizon,
            "files": written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        });
        return Ok(serde_json::to_string_pretty(&doc).expect("json") + "\n");
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} runs of {} over {} s; {} files in {}",
        spec.runs,
        spec.controller.label(),
        spec.horizon,
        written.len(),
        args.out.display()
    );
    for st in &result.stats.stations {
        let waits: Vec<f64> = st.bins.iter().filter_map(|b| b.wait.as_ref().map(|e| e.mean)).collect();
        let mean = (!waits.is_empty()).then(|| waits.iter().sum::<f64>() / waits.len() as f64);
        let _ = writeln!(
            out,
            "{:<12} time-averaged wait {}",
            config.stations[st.station].name,
            mean.map_or("-".to_string(), |w| format!("{w:.1} s"))
        );
    }
    Ok(out)
}

const COMPARE_HEADER: &str = "controller,station,mean_wait_s,wait_ci95_s,imbalance_s,imbalance_ci95_s";

fn compare_csv(c: &Comparison) -> String {
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    let cells = |e: &Option<Estimate>| match e {
        Some(e) => (e.mean.to_string(), e.half_width.map(|h| h.to_string()).unwrap_or_default()),
        None => (String::new(), String::new()),
    };
    for s in &c.controllers {
        let (j, jh) = cells(&s.imbalance);
        for (m, w) in s.waits.iter().enumerate() {
            let (w, wh) = cells(w);
            let _ = writeln!(out, "{},{},{w},{wh},{j},{jh}", s.controller, m + 1);
        }
    }
    out
}

fn cmd_compare(args: &CompareArgs) -> Result<String, Failure> {
    let config = load_config(&args.run.config)?;
    let profile = load_profile(&args.run.profile, &config)?;
    let n = config.n_stations();
    let statics: Vec<Vec<u32>> = if args.statics.is_empty() {
        if n < 2 {
            Vec::new()
        } else {
            [1, 2]
                .iter()
                .map(|&s| match ControllerPolicy::reserve_at_first(s, n, config.gamma) {
                    ControllerPolicy::Static(eta) => eta,
                    _ => unreachable!(),
                })
                .collect()
        }
    } else {
        args.statics.iter().map(|s| parse_eta_list(s)).collect::<Result<_, _>>()?
    };
    for eta in &statics {
        ControllerPolicy::Static(eta.clone())
            .check(n, config.gamma)
            .map_err(|e| Failure::Validation(e.to_string()))?;
    }
    let base = base_spec(&args.run, &profile, ControllerPolicy::Gamora)?;
    if let Some(dir) = &args.out {
        prepare_output_dir(dir)?;
    }
    let comparison = compare(&config, &profile, &statics, &base)?;
    let doc = serde_json::to_string_pretty(&comparison).expect("json") + "\n";
    if let Some(dir) = &args.out {
        io::write_file(&dir.join("compare.json"), &doc)?;
        io::write_file(&dir.join("compare.csv"), &compare_csv(&comparison))?;
    }
    if args.run.json {
        return Ok(doc);
    }
    let mut out = String::new();
    let _ = write!(out, "{:<16}", "controller");
    for st in &config.stations {
        let _ = write!(out, " {:>18}", st.name);
    }
    let _ = writeln!(out, " {:>18}", "J");
    for s in &comparison.controllers {
        let _ = write!(out, "{:<16}", s.controller);
        for w in &s.waits {
            let _ = write!(out, " {:>18}", estimate_text(w));
        }
        let j = match &s.imbalance {
            None => "undefined".to_string(),
            some => estimate_text(some),
        };
        let _ = writeln!(out, " {j:>18}");
    }
    let _ = writeln!(out);
    for p in &comparison.gamora_vs {
        let verdict = match p.mean_difference {
            None => "not comparable".to_string(),
            Some(d) => format!(
                "J({}) - J(gamora) = {d:.1} s, gamora smaller at 95%: {}",
                p.other,
                if p.gamora_better { "yes" } else { "no" }
            ),
        };
        let _ = writeln!(out, "{verdict}");
    }
    Ok(out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Stability(a) => cmd_stability(a),
        Command::Control(a) => cmd_control(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
