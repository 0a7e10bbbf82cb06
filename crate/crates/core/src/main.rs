//! Command-line front end: simulate scenarios, run the estimator over logs,
//! and evaluate estimate traces against ground truth.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error. The environment
//! variable `CENTROIDAL_EKF_LOG` sets log verbosity (error|warn|info|debug).

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::SVector;

use centroidal_ekf::contact::{ContactDetector, ContactDetectorConfig};
use centroidal_ekf::estimator::{
    measure, nees, CentroidalEkf, Matrix9, NoiseConfig, Vector9,
};
use centroidal_ekf::kinodynamics::{ContactSet, GeneralizedState};
use centroidal_ekf::metrics::{compute_metrics, Metrics, TraceData};
use centroidal_ekf::model::{default_quadruped, load_model, RobotModel};
use centroidal_ekf::simlab::{
    build_scenario, inject_noise, read_log, simulate_with_references, write_log, ControllerGains,
    Log, NoiseInjection, Scenario, ScenarioKind,
};

#[derive(Parser)]
#[command(
    name = "centroidal-ekf",
    version,
    about = "Torque-driven centroidal state estimation for legged robots"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write ground-truth and noisy logs.
    Simulate(SimulateArgs),
    /// Run the EKF over a log and write the estimate trace.
    Estimate(EstimateArgs),
    /// Compare an estimate trace against ground truth.
    Evaluate(EvaluateArgs),
}

fn parse_scenario(s: &str) -> Result<ScenarioKind, String> {
    ScenarioKind::parse(s)
        .ok_or_else(|| format!("unknown scenario '{s}' (expected balance_base, trot, or jump)"))
}

#[derive(Args)]
struct SimulateArgs {
    /// Robot model file; the built-in quadruped when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// One of: balance_base, trot, jump.
    #[arg(long, value_parser = parse_scenario)]
    scenario: ScenarioKind,
    /// Simulated time, s.
    #[arg(long, default_value_t = 5.0)]
    duration: f64,
    /// Simulation step, s.
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Noise preset ("default", "none") or a JSON file path.
    #[arg(long, default_value = "default")]
    noise: String,
    /// Seed for the noise generator.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output base path; writes `<out>.truth.csv` and `<out>.noisy.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Gait cycle period, s.
    #[arg(long)]
    step_period: Option<f64>,
    /// Stance fraction of the gait cycle.
    #[arg(long)]
    stance_ratio: Option<f64>,
    /// Base motion amplitude (balance) or stride length (trot), m.
    #[arg(long)]
    amplitude: Option<f64>,
    /// Jump apex height, m.
    #[arg(long)]
    apex: Option<f64>,
    /// Joint PD proportional gain.
    #[arg(long)]
    kp: Option<f64>,
    /// Joint PD derivative gain.
    #[arg(long)]
    kd: Option<f64>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Input log (CSV).
    #[arg(long)]
    log: PathBuf,
    /// Robot model file; the built-in quadruped when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Continuous process covariance: 1, 3, or 9 comma-separated diagonal
    /// values, or a JSON file path.
    #[arg(long)]
    qc: Option<String>,
    /// Continuous measurement covariance, same format as --qc.
    #[arg(long)]
    rc: Option<String>,
    /// Filter period, s; the log sample period when omitted.
    #[arg(long)]
    dt: Option<f64>,
    /// Contact source: "detect" (torque-based) or "log" (truth flags).
    #[arg(long, default_value = "detect")]
    contacts: ContactSource,
    /// Output trace path (CSV).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ContactSource {
    Detect,
    Log,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Estimate trace (CSV) from `estimate`.
    #[arg(long)]
    trace: PathBuf,
    /// Ground-truth log (CSV) from `simulate`.
    #[arg(long)]
    truth: PathBuf,
    /// Samples before this time are excluded, s.
    #[arg(long, default_value_t = 0.2)]
    warmup: f64,
    /// Metrics JSON output path; `<trace>.metrics.json` when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Model(#[from] centroidal_ekf::model::ModelError),
    #[error(transparent)]
    Sim(#[from] centroidal_ekf::simlab::SimError),
    #[error(transparent)]
    Estimator(#[from] centroidal_ekf::estimator::EstimatorError),
    #[error(transparent)]
    Metrics(#[from] centroidal_ekf::metrics::MetricsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

fn main() {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("CENTROIDAL_EKF_LOG", "warn"),
    )
    .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn load_model_arg(path: &Option<PathBuf>) -> Result<RobotModel, CliError> {
    match path {
        Some(p) => Ok(load_model(p)?),
        None => Ok(default_quadruped()),
    }
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    base.with_file_name(name)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let model = load_model_arg(&args.model)?;
    let mut scenario = Scenario::new(args.scenario, args.duration);
    scenario.dt_sim = args.dt;
    if let Some(v) = args.step_period {
        scenario.step_period = v;
    }
    if let Some(v) = args.stance_ratio {
        scenario.stance_ratio = v;
    }
    if let Some(v) = args.amplitude {
        scenario.base_amplitude = v;
    }
    if let Some(v) = args.apex {
        scenario.jump_apex = v;
    }
    let mut gains = ControllerGains::default();
    if let Some(v) = args.kp {
        gains.kp = v;
    }
    if let Some(v) = args.kd {
        gains.kd = v;
    }

    let noise = parse_noise(&args.noise, args.seed)?;

    let refs = build_scenario(&model, &scenario)?;
    let log = simulate_with_references(&model, &scenario, &gains, &refs)?;
    let noisy = inject_noise(&log, &noise)?;

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    let truth_path = with_suffix(&args.out, ".truth.csv");
    let noisy_path = with_suffix(&args.out, ".noisy.csv");
    write_log(&log, &truth_path)?;
    write_log(&noisy, &noisy_path)?;

    println!(
        "scenario: {}  duration: {} s  dt: {} s  frames: {}",
        scenario.kind.name(),
        scenario.duration,
        scenario.dt_sim,
        log.len()
    );
    let fractions = refs.stance_fractions();
    let switches = refs.switch_counts();
    let names: Vec<&str> = model.foot_frames().iter().map(|f| f.name.as_str()).collect();
    let summary: Vec<String> = names
        .iter()
        .zip(fractions.iter().zip(&switches))
        .map(|(name, (frac, sw))| format!("{name} {:.1}% ({sw} switches)", 100.0 * frac))
        .collect();
    println!("contact schedule: {}", summary.join(", "));
    println!(
        "wrote {} ({} frames), {}",
        truth_path.display(),
        log.len(),
        noisy_path.display()
    );
    Ok(())
}

fn parse_noise(spec: &str, seed: u64) -> Result<NoiseInjection, CliError> {
    match spec {
        "default" => Ok(NoiseInjection::default_preset(seed)),
        "none" | "off" => Ok(NoiseInjection::none(seed)),
        path => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: PathBuf::from(path),
                source,
            })?;
            let noise: NoiseInjection = serde_json::from_str(&text)
                .map_err(|e| CliError::Invalid(format!("noise file '{path}': {e}")))?;
            Ok(noise)
        }
    }
}

/// Parse a covariance spec: 1, 3, or 9 comma-separated diagonal values, or a
/// JSON file containing an array of 9 values or {"diag": [...]}.
fn parse_covariance(spec: &str) -> Result<Matrix9, CliError> {
    let try_inline: Option<Vec<f64>> = {
        let parts: Vec<&str> = spec.split(',').collect();
        let parsed: Result<Vec<f64>, _> = parts.iter().map(|p| p.trim().parse()).collect();
        parsed.ok()
    };
    let diag = if let Some(values) = try_inline {
        values
    } else {
        let text = std::fs::read_to_string(spec).map_err(|source| CliError::Io {
            path: PathBuf::from(spec),
            source,
        })?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Invalid(format!("covariance file '{spec}': {e}")))?;
        let arr = value
            .as_array()
            .cloned()
            .or_else(|| value.get("diag").and_then(|d| d.as_array()).cloned())
            .ok_or_else(|| {
                CliError::Invalid(format!(
                    "covariance file '{spec}' must be a JSON array or {{\"diag\": [...]}}"
                ))
            })?;
        arr.iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| CliError::Invalid(format!("non-numeric entry in '{spec}'")))
            })
            .collect::<Result<Vec<f64>, _>>()?
    };
    let expanded: Vec<f64> = match diag.len() {
        1 => vec![diag[0]; 9],
        3 => diag.iter().flat_map(|v| [*v, *v, *v]).collect(),
        9 => diag,
        other => {
            return Err(CliError::Invalid(format!(
                "covariance spec needs 1, 3, or 9 values, got {other}"
            )))
        }
    };
    Ok(Matrix9::from_diagonal(&SVector::<f64, 9>::from_column_slice(
        &expanded,
    )))
}

fn cmd_estimate(args: EstimateArgs) -> Result<(), CliError> {
    let model = load_model_arg(&args.model)?;
    let log = read_log(&args.log)?;
    if log.n_joints != model.n_joints() || log.n_feet != model.n_feet() {
        return Err(CliError::Invalid(format!(
            "log/model dimension mismatch: log has {} joints, {} feet; model has {}, {}",
            log.n_joints,
            log.n_feet,
            model.n_joints(),
            model.n_feet()
        )));
    }
    if log.is_empty() {
        return Err(CliError::Invalid("log has no frames".into()));
    }
    let dt = args.dt.unwrap_or_else(|| log.dt());
    if !(dt > 0.0) {
        return Err(CliError::Invalid(format!("filter period must be positive, got {dt}")));
    }

    let default = NoiseConfig::default_tuning();
    let q_c = match &args.qc {
        Some(spec) => parse_covariance(spec)?,
        None => default.q_c,
    };
    let r_c = match &args.rc {
        Some(spec) => parse_covariance(spec)?,
        None => default.r_c,
    };
    let noise = NoiseConfig::new(q_c, r_c, dt)
        .map_err(|e| CliError::Invalid(format!("invalid covariance: {e}")))?;

    let model = std::sync::Arc::new(model);
    let first_state = GeneralizedState::new(log.frames[0].q.clone(), log.frames[0].v.clone())
        .map_err(|e| CliError::Invalid(format!("frame 0: {e}")))?;
    let mut filter = CentroidalEkf::from_first_frame(model.clone(), noise, &first_state);
    let mut detector = ContactDetector::new(
        ContactDetectorConfig::default(),
        ContactSet::from_flags(&log.frames[0].contact_truth),
    );

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    let file = std::fs::File::create(&args.out).map_err(|source| CliError::Io {
        path: args.out.clone(),
        source,
    })?;
    let mut out = std::io::BufWriter::new(file);
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((0..9).map(|i| format!("y{i}")));
    header.extend((0..9).map(|i| format!("mean{i}")));
    header.extend((0..9).map(|i| format!("var{i}")));
    header.extend((0..9).map(|i| format!("innov{i}")));
    header.extend((0..log.n_feet).map(|i| format!("c{i}")));
    header.push("nis".into());
    header.push("nees".into());
    let io_err = |source: std::io::Error| CliError::Io {
        path: args.out.clone(),
        source,
    };
    writeln!(out, "{}", header.join(",")).map_err(io_err)?;

    for (k, frame) in log.frames.iter().enumerate() {
        let state = GeneralizedState::new(frame.q.clone(), frame.v.clone())
            .map_err(|e| CliError::Invalid(format!("frame {k}: {e}")))?;
        let contacts = match args.contacts {
            ContactSource::Log => ContactSet::from_flags(&frame.contact_truth),
            ContactSource::Detect => detector.update(&model, &state, &frame.tau),
        };
        let y = measure(&model, &state);
        let (innovation, nis) = if k == 0 {
            (Vector9::zeros(), 0.0)
        } else {
            let diag = filter.step(&frame.tau, &state, &contacts)?;
            (diag.innovation, diag.nis)
        };
        let belief = filter.belief();
        let nees_value = nees(belief, &frame.x_truth).unwrap_or(f64::NAN);

        let mut fields: Vec<String> = Vec::with_capacity(38 + log.n_feet);
        fields.push(format!("{}", frame.t));
        let yv = y.to_vector();
        fields.extend(yv.iter().map(|x| format!("{x}")));
        fields.extend(belief.mean.iter().map(|x| format!("{x}")));
        fields.extend((0..9).map(|i| format!("{}", belief.cov[(i, i)])));
        fields.extend(innovation.iter().map(|x| format!("{x}")));
        for f in 0..log.n_feet {
            fields.push(if contacts.contains(f) { "1".into() } else { "0".into() });
        }
        fields.push(format!("{nis}"));
        fields.push(format!("{nees_value}"));
        writeln!(out, "{}", fields.join(",")).map_err(io_err)?;
    }
    out.flush().map_err(io_err)?;
    println!(
        "estimated {} frames from {} -> {}",
        log.len(),
        args.log.display(),
        args.out.display()
    );
    Ok(())
}

/// Parsed estimate trace.
struct Trace {
    t: Vec<f64>,
    raw: Vec<[f64; 9]>,
    filtered: Vec<[f64; 9]>,
    nis: Vec<f64>,
    nees: Vec<f64>,
}

fn read_trace(path: &Path) -> Result<Trace, CliError> {
    let file = std::fs::File::open(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader
        .read_line(&mut header)
        .map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let names: Vec<String> = header.trim_end().split(',').map(|s| s.to_string()).collect();
    let col = |name: &str| -> Result<usize, CliError> {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| CliError::Invalid(format!("trace is missing column '{name}'")))
    };
    let t_col = col("t")?;
    let y0 = col("y0")?;
    let mean0 = col("mean0")?;
    let nis_col = col("nis")?;
    let nees_col = col("nees")?;

    let mut trace = Trace {
        t: vec![],
        raw: vec![],
        filtered: vec![],
        nis: vec![],
        nees: vec![],
    };
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        let get = |c: usize| -> Result<f64, CliError> {
            fields
                .get(c)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::Invalid(format!("trace line {}: bad field {c}", idx + 2)))
        };
        trace.t.push(get(t_col)?);
        let mut raw = [0.0; 9];
        let mut filtered = [0.0; 9];
        for i in 0..9 {
            raw[i] = get(y0 + i)?;
            filtered[i] = get(mean0 + i)?;
        }
        trace.raw.push(raw);
        trace.filtered.push(filtered);
        trace.nis.push(get(nis_col)?);
        trace.nees.push(get(nees_col)?);
    }
    Ok(trace)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let trace = read_trace(&args.trace)?;
    let truth_log: Log = read_log(&args.truth)?;
    if trace.t.len() != truth_log.len() {
        return Err(CliError::Invalid(format!(
            "trace and truth lengths differ: {} vs {}",
            trace.t.len(),
            truth_log.len()
        )));
    }

    let keep: Vec<usize> = (0..trace.t.len())
        .filter(|k| trace.t[*k] >= args.warmup)
        .collect();
    let data = TraceData {
        raw: keep.iter().map(|&k| trace.raw[k]).collect(),
        filtered: keep.iter().map(|&k| trace.filtered[k]).collect(),
        truth: keep
            .iter()
            .map(|&k| {
                let v = truth_log.frames[k].x_truth.to_vector();
                let mut row = [0.0; 9];
                row.copy_from_slice(v.as_slice());
                row
            })
            .collect(),
        nees: keep
            .iter()
            .map(|&k| trace.nees[k])
            .filter(|x| x.is_finite())
            .collect(),
        nis: keep
            .iter()
            .map(|&k| trace.nis[k])
            .filter(|x| x.is_finite())
            .collect(),
    };
    let metrics = compute_metrics(&data)?;
    print_metrics(&metrics);

    let out_path = args
        .out
        .clone()
        .unwrap_or_else(|| with_suffix(&args.trace, ".metrics.json"));
    let json = serde_json::to_string_pretty(&metrics)
        .map_err(|e| CliError::Invalid(format!("metrics serialization: {e}")))?;
    std::fs::write(&out_path, &json).map_err(|source| CliError::Io {
        path: out_path.clone(),
        source,
    })?;
    println!("wrote {}", out_path.display());
    Ok(())
}

fn print_metrics(metrics: &Metrics) {
    let labels = ["cx", "cy", "cz", "lx", "ly", "lz", "kx", "ky", "kz"];
    println!("samples evaluated: {}", metrics.samples_evaluated);
    for (i, label) in labels.iter().enumerate() {
        println!("rmse {label}: {}", metrics.rmse[i]);
    }
    let momentum = &labels[3..9];
    for (i, label) in momentum.iter().enumerate() {
        println!(
            "{label}: lag {} samples, noise reduction {}",
            metrics.lag_samples[i], metrics.noise_reduction[i]
        );
    }
    println!("mean nees: {}", metrics.mean_nees);
    println!("mean nis: {}", metrics.mean_nis);
    println!(
        "max step jump raw: {}  filtered: {}",
        metrics.max_step_jump_raw, metrics.max_step_jump_filtered
    );
}
