use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Parser, Subcommand};
use ddce_core::config::{ExperimentConfig, SweepKind};
use ddce_core::ddce::PredictorKind;
use ddce_core::neural::{make_dataset_pair, MlpPair};
use ddce_core::sim::{self, FlopParams};
use ddce_core::Error;

#[derive(Parser, Debug)]
#[command(name = "ddce", version, about = "Decision-directed MIMO channel estimation link simulator")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write a training dataset (true-channel windows and targets) as CSV.
    GenData,
    /// Train the real and imaginary predictor networks and save them to `model_path`.
    Train,
    /// BER against SNR for every scenario and predictor.
    Simulate,
    /// Run the sweep selected by the `sweep` key.
    Sweep,
    /// Per-sample true and predicted channel for one packet.
    Track,
    /// Flop count of one prediction; all predictors when `--predictor` is omitted.
    Flops {
        #[arg(long)]
        predictor: Option<String>,
        #[arg(long, default_value_t = 2)]
        nt: u32,
        #[arg(long, default_value_t = 2)]
        nr: u32,
        #[arg(long, default_value_t = 2)]
        nx: u32,
        #[arg(long, default_value_t = 10)]
        np: u32,
    },
    /// Add binomial standard deviation and 95% interval columns to a BER CSV.
    Report {
        input: PathBuf,
    },
}

/// Exit status 2 for configuration problems, 3 for failures while running.
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn config_err(e: Error) -> Failure {
    Failure::Config(e.to_string())
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
            ExperimentConfig::parse(&text).map_err(config_err)?
        }
        None => ExperimentConfig::default(),
    };
    for item in &cli.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got {item:?}")))?;
        cfg.set(key.trim(), value.trim()).map_err(config_err)?;
    }
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn require_model_path(cfg: &ExperimentConfig, why: &str) -> Result<PathBuf, Failure> {
    cfg.model_path
        .clone()
        .ok_or_else(|| Failure::Config(format!("missing config key `model_path` ({why})")))
}

/// Loads the model when some configured predictor needs it.
fn load_model(cfg: &ExperimentConfig) -> Result<Option<MlpPair>, Failure> {
    let needs = match cfg.sweep {
        SweepKind::Flops => false,
        SweepKind::Tracking => cfg.predictors.first() == Some(&PredictorKind::DlDd),
        _ => cfg.predictors.contains(&PredictorKind::DlDd),
    };
    if !needs {
        return Ok(None);
    }
    let path = require_model_path(cfg, "predictor dl-dd needs a trained model")?;
    let model = MlpPair::load(&path).map_err(|e| Failure::Runtime(format!("loading model {}: {e}", path.display())))?;
    let dims = cfg.dims();
    if model.dims != dims {
        return Err(Failure::Config(format!(
            "model {} was trained for {:?}, configuration needs {:?}",
            path.display(),
            model.dims,
            dims
        )));
    }
    Ok(Some(model))
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

fn manifest(cfg: &ExperimentConfig, command: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# ddce run manifest");
    let _ = writeln!(out, "# command = {command}");
    let _ = writeln!(out, "# version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "# git = {}", git_describe());
    let _ = writeln!(out, "# base_seed = {}", cfg.seed);
    let _ = writeln!(out, "# trial_seed = base_seed xor trial_index");
    out.push_str(&cfg.echo());
    out
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest");
    PathBuf::from(name)
}

/// Writes `body` to `out_path` with a manifest beside it, or to stdout.
fn emit(cfg: &ExperimentConfig, command: &str, body: &str) -> Result<(), Failure> {
    match &cfg.out_path {
        Some(path) => {
            fs::write(path, body).map_err(Error::from)?;
            fs::write(manifest_path(path), manifest(cfg, command)).map_err(Error::from)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{body}"),
    }
    Ok(())
}

fn gen_data(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let dims = cfg.dims();
    let train = cfg.train_config();
    let (re, im) = make_dataset_pair(&train, dims, train.seed.wrapping_add(1))?;
    let mut out = String::from("part,row");
    for i in 0..re.u {
        let _ = write!(out, ",x{i}");
    }
    for i in 0..re.v {
        let _ = write!(out, ",t{i}");
    }
    out.push('\n');
    for (part, data) in [("re", &re), ("im", &im)] {
        for row in 0..data.len() {
            let _ = write!(out, "{part},{row}");
            for v in data.input(row).iter().chain(data.target(row)) {
                let _ = write!(out, ",{v:.10e}");
            }
            out.push('\n');
        }
    }
    emit(cfg, "gen-data", &out)
}

fn train(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let path = require_model_path(cfg, "train writes the model there")?;
    let tc = cfg.train_config();
    eprintln!(
        "training {} samples for {} epochs, rho in [{}, {}]",
        tc.n_samples, tc.epochs, tc.rho_range.rho_min, tc.rho_range.rho_max
    );
    let (pair, rep_re, rep_im) = MlpPair::train(cfg.dims(), &tc)?;
    pair.save(&path)?;
    fs::write(manifest_path(&path), manifest(cfg, "train")).map_err(Error::from)?;
    eprintln!(
        "saved {} (final validation loss re {:.5}, im {:.5})",
        path.display(),
        rep_re.val_loss.last().copied().unwrap_or(f64::NAN),
        rep_im.val_loss.last().copied().unwrap_or(f64::NAN)
    );
    let mut curve = String::from("epoch,train_loss_re,val_loss_re,train_loss_im,val_loss_im\n");
    for e in 0..rep_re.train_loss.len() {
        let _ = writeln!(
            curve,
            "{e},{:.6e},{:.6e},{:.6e},{:.6e}",
            rep_re.train_loss[e], rep_re.val_loss[e], rep_im.train_loss[e], rep_im.val_loss[e]
        );
    }
    if cfg.out_path.is_some() {
        emit(cfg, "train", &curve)?;
    }
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, command: &str) -> Result<(), Failure> {
    let model = load_model(cfg)?;
    let out = sim::run_sweep(cfg, model.as_ref())?;
    if let sim::SweepOutput::PacketLength(p) = &out {
        for n_b in &p.skipped {
            eprintln!("warning: nb = {n_b} carries no data, skipped");
        }
    }
    emit(cfg, command, &out.csv())
}

fn flops(predictor: Option<String>, p: FlopParams) -> Result<(), Failure> {
    p.validate().map_err(config_err)?;
    match predictor {
        Some(name) => {
            let n = sim::flops(&name, p).map_err(config_err)?;
            println!("{n}");
        }
        None => print!("{}", sim::flops_csv(p)?),
    }
    Ok(())
}

fn report(cfg: &ExperimentConfig, input: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(input).map_err(|e| Failure::Runtime(format!("reading {}: {e}", input.display())))?;
    let out = sim::report(&text)?;
    emit(cfg, "report", &out)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Cmd::Flops { predictor, nt, nr, nx, np } = cli.command {
        return flops(
            predictor,
            FlopParams {
                n_t: nt,
                n_r: nr,
                n_x: nx,
                n_p: np,
            },
        );
    }
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Cmd::GenData => gen_data(&cfg),
        Cmd::Train => train(&cfg),
        Cmd::Simulate => {
            cfg.sweep = SweepKind::SnrBer;
            sweep(&cfg, "simulate")
        }
        Cmd::Sweep => sweep(&cfg, "sweep"),
        Cmd::Track => {
            cfg.sweep = SweepKind::Tracking;
            sweep(&cfg, "track")
        }
        Cmd::Report { input } => report(&cfg, input),
        Cmd::Flops { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
