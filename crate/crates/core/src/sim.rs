//! Monte Carlo BER sweeps, harness calibration, flop counts and CSV output.
//!
//! Trial `t` of every sweep point draws its Doppler rate, channel, bits and
//! noise from the seed `base_seed ^ t`, so all predictors and SNR points see
//! the same packets and worker count cannot change the totals.

use std::fmt::Write as _;
use std::sync::OnceLock;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Scenario, SweepKind};
use crate::ddce::{Pipeline, PipelineConfig, PredictorKind};
use crate::decoder::DecoderKind;
use crate::error::{Error, Result};
use crate::fading::{generate_trace, ChannelTrace, DopplerRangeSpec, FadingSpec};
use crate::modulation::{noise_variance, random_bits, Constellation, StbcCode};
use crate::neural::MlpPair;

pub const BER_HEADER: &str = "scenario,snr_db,predictor,code,trials,total_bits,bit_errors,ber,wall_time_s";

#[derive(Clone, Debug, PartialEq)]
pub struct BerRecord {
    pub scenario: String,
    pub snr_db: f64,
    pub predictor: String,
    pub code: String,
    pub trials: usize,
    pub total_bits: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub wall_time_s: f64,
}

impl BerRecord {
    /// Binomial standard deviation of the BER estimate.
    pub fn std(&self) -> f64 {
        binomial_std(self.ber, self.total_bits)
    }

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.6e},{:.3}",
            self.scenario,
            self.snr_db,
            self.predictor,
            self.code,
            self.trials,
            self.total_bits,
            self.bit_errors,
            self.ber,
            self.wall_time_s
        )
    }
}

pub fn binomial_std(p: f64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

pub fn ber_csv(records: &[BerRecord]) -> String {
    let mut out = format!("{BER_HEADER}\n");
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PacketLengthRecord {
    pub record: BerRecord,
    pub n_b: usize,
    pub packet_len: usize,
    /// Pilot fraction `n_p / L`.
    pub r: f64,
}

pub fn packet_length_csv(records: &[PacketLengthRecord]) -> String {
    let mut out = format!("{BER_HEADER},n_b,packet_len,r\n");
    for p in records {
        let _ = writeln!(out, "{},{},{},{:.6}", p.record.csv_row(), p.n_b, p.packet_len, p.r);
    }
    out
}

/// `Q(x) = erfc(x/√2)/2`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Inputs of one Monte Carlo trial.
pub struct Trial {
    pub rho: f64,
    pub trace: ChannelTrace,
    pub bits: Vec<u8>,
    pub noise_seed: u64,
}

pub fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    base_seed ^ trial as u64
}

/// Draws the Doppler rate, channel, payload and noise seed of a trial.
pub fn draw_trial(
    cfg: &PipelineConfig,
    fading: impl Fn(f64) -> FadingSpec,
    range: DopplerRangeSpec,
    seed: u64,
) -> Result<Trial> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = range.sample(&mut rng);
    let trace_seed: u64 = rng.random();
    let noise_seed: u64 = rng.random();
    let bits = random_bits(cfg.bits_per_packet(), &mut rng);
    let trace = generate_trace(&fading(rho), cfg.code.n_t(), cfg.n_r, cfg.packet_len(), trace_seed)?;
    Ok(Trial {
        rho,
        trace,
        bits,
        noise_seed,
    })
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start {workers} workers: {e}")))
}

/// Total bit errors of `trials` packets through one pipeline.
fn count_errors(
    pipeline: &Pipeline<'_>,
    fading: &(impl Fn(f64) -> FadingSpec + Sync),
    range: DopplerRangeSpec,
    base_seed: u64,
    trials: usize,
    workers: &rayon::ThreadPool,
) -> Result<u64> {
    workers.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|t| {
                let trial = draw_trial(pipeline.config(), fading, range, trial_seed(base_seed, t))?;
                let res = pipeline.run_packet_with(&trial.trace, &trial.bits, trial.rho, trial.noise_seed)?;
                Ok(res.bit_errors)
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))
    })
}

fn check_model(cfg: &ExperimentConfig, model: Option<&MlpPair>) -> Result<()> {
    if cfg.predictors.contains(&PredictorKind::DlDd) && model.is_none() {
        return Err(Error::MissingModel);
    }
    Ok(())
}

fn ber_point(
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    snr_db: f64,
    predictor: PredictorKind,
    model: Option<&MlpPair>,
    workers: &rayon::ThreadPool,
) -> Result<BerRecord> {
    let pcfg = cfg.pipeline(predictor, scenario.range, snr_db)?;
    let total_bits = (pcfg.bits_per_packet() * cfg.trials) as u64;
    let pipeline = Pipeline::new(pcfg, model)?;
    let started = Instant::now();
    let fading = |rho| cfg.fading(rho);
    let bit_errors = count_errors(&pipeline, &fading, scenario.range, cfg.seed, cfg.trials, workers)?;
    Ok(BerRecord {
        scenario: scenario.name.clone(),
        snr_db,
        predictor: predictor.name().to_string(),
        code: cfg.code.name(),
        trials: cfg.trials,
        total_bits,
        bit_errors,
        ber: if total_bits == 0 { 0.0 } else { bit_errors as f64 / total_bits as f64 },
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// BER for every (scenario, SNR, predictor), after the calibration gate.
pub fn run_ber_sweep(cfg: &ExperimentConfig, model: Option<&MlpPair>) -> Result<Vec<BerRecord>> {
    cfg.validate()?;
    check_model(cfg, model)?;
    calibration_gate()?;
    let workers = pool(cfg.workers)?;
    let mut records = Vec::new();
    for scenario in &cfg.scenarios {
        for &snr in &cfg.snr_db {
            for &p in &cfg.predictors {
                records.push(ber_point(cfg, scenario, snr, p, model, &workers)?);
            }
        }
    }
    Ok(records)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PacketLengthSweep {
    pub records: Vec<PacketLengthRecord>,
    /// Block counts that carry no data and were skipped.
    pub skipped: Vec<usize>,
}

/// BER against packet length for every block count in `cfg.nb_list`.
pub fn run_packet_length_sweep(cfg: &ExperimentConfig, model: Option<&MlpPair>) -> Result<PacketLengthSweep> {
    cfg.validate()?;
    check_model(cfg, model)?;
    calibration_gate()?;
    let workers = pool(cfg.workers)?;
    let mut out = PacketLengthSweep::default();
    for &n_b in &cfg.nb_list {
        if n_b == 0 {
            out.skipped.push(n_b);
            continue;
        }
        let sub = ExperimentConfig { n_b, ..cfg.clone() };
        let packet_len = sub.n_p + n_b * sub.code.n_x();
        for scenario in &sub.scenarios {
            for &snr in &sub.snr_db {
                for &p in &sub.predictors {
                    out.records.push(PacketLengthRecord {
                        record: ber_point(&sub, scenario, snr, p, model, &workers)?,
                        n_b,
                        packet_len,
                        r: sub.n_p as f64 / packet_len as f64,
                    });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub snr_db: f64,
    pub total_bits: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub expected: f64,
}

impl Calibration {
    pub fn relative_error(&self) -> f64 {
        (self.ber - self.expected).abs() / self.expected
    }
}

/// Genie-CSI QPSK over a static unit SISO channel at 10 dB.
pub fn calibrate(base_seed: u64, packets: usize, workers: usize) -> Result<Calibration> {
    let snr_db = 10.0;
    let cfg = PipelineConfig {
        code: StbcCode::SpatialMux { n_t: 1 },
        constellation: Constellation::qam(4)?,
        n_r: 1,
        predictor: PredictorKind::Genie,
        decoder: DecoderKind::LsEuclidean,
        n_p: 1,
        n_b: 1000,
        rho_range: DopplerRangeSpec { rho_min: 0.0, rho_max: 0.0 },
        rho_true: 0.0,
        fading: FadingSpec::rayleigh(0.0),
        sigma_w2: noise_variance(snr_db),
        wiener_full_history: false,
        seed: base_seed,
    };
    let trace = ChannelTrace::constant(1, 1, cfg.packet_len(), Complex64::new(1.0, 0.0));
    let bits_per_packet = cfg.bits_per_packet();
    let pipeline = Pipeline::new(cfg, None)?;
    let bit_errors = pool(workers)?.install(|| {
        (0..packets)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(base_seed, t));
                let bits = random_bits(bits_per_packet, &mut rng);
                let res = pipeline.run_packet_with(&trace, &bits, 0.0, rng.random())?;
                Ok::<u64, Error>(res.bit_errors)
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))
    })?;
    let total_bits = (bits_per_packet * packets) as u64;
    Ok(Calibration {
        snr_db,
        total_bits,
        bit_errors,
        ber: bit_errors as f64 / total_bits as f64,
        expected: q_function(10f64.powf(snr_db / 20.0)),
    })
}

pub const CALIBRATION_TOLERANCE: f64 = 0.2;

/// Runs the calibration point once per process and fails if it is off by
/// more than 20%.
pub fn calibration_gate() -> Result<Calibration> {
    static GATE: OnceLock<std::result::Result<Calibration, String>> = OnceLock::new();
    let cached = GATE.get_or_init(|| {
        let workers = rayon::current_num_threads();
        match calibrate(0x5eed, 2000, workers) {
            Ok(c) if c.relative_error() <= CALIBRATION_TOLERANCE => Ok(c),
            Ok(c) => Err(format!(
                "genie QPSK BER {:.4e} vs expected {:.4e} at {} dB over {} bits",
                c.ber, c.expected, c.snr_db, c.total_bits
            )),
            Err(e) => Err(e.to_string()),
        }
    });
    cached.clone().map_err(Error::CalibrationFailed)
}

/// One packet's tracking CSV for the first scenario, SNR and predictor.
pub fn run_tracking(cfg: &ExperimentConfig, model: Option<&MlpPair>) -> Result<String> {
    cfg.validate()?;
    let predictor = cfg.predictors[0];
    if predictor == PredictorKind::DlDd && model.is_none() {
        return Err(Error::MissingModel);
    }
    let scenario = &cfg.scenarios[0];
    let pcfg = cfg.pipeline(predictor, scenario.range, cfg.snr_db[0])?;
    let pipeline = Pipeline::new(pcfg.clone(), model)?;
    let trial = draw_trial(&pcfg, |rho| cfg.fading(rho), scenario.range, trial_seed(cfg.seed, 0))?;
    let res = pipeline.run_packet_with(&trial.trace, &trial.bits, trial.rho, trial.noise_seed)?;
    Ok(res.tracking_csv(&trial.trace, pcfg.n_p, pcfg.code.n_x()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlopParams {
    pub n_t: u32,
    pub n_r: u32,
    pub n_x: u32,
    pub n_p: u32,
}

impl FlopParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_t == 0 || self.n_r == 0 || self.n_x == 0 || self.n_p == 0 {
            return Err(Error::InvalidParameter(format!("flop parameters must be >= 1, got {self:?}")));
        }
        Ok(())
    }
}

pub const FLOP_PREDICTORS: [&str; 4] = ["dd-wiener", "dd-cc", "dd-ar1", "dl-dd"];

/// Flop count of one multi-step prediction for the named predictor.
pub fn flops(name: &str, p: FlopParams) -> Result<i128> {
    p.validate()?;
    let (nt, nr, nx, np) = (p.n_t as i128, p.n_r as i128, p.n_x as i128, p.n_p as i128);
    // shared polynomial of the windowed-MMSE family, minus its one varying term
    let base = 3 * np + 2 * np * nt - 2 * nr * nt + 4 * np * nt * nt + 6 * np * np * nt + 3 * np * np + 1;
    match name {
        "dd-wiener" => {
            let q = np - 1;
            let g = q * q * (6 * nt - 2) + q;
            Ok(nr * nx * (g + 3 * g * g * g + 5 * g * g + 4 * q * nt + 6 * nt * q * q * q + 4 * nt * q * q - 2 * nt * q))
        }
        "dd-cc" => Ok(np * (base + 6 * np * nr * nt)),
        "dd-ar1" => Ok(np * (base + 6 * np * nr * nx + nr * nt * nt)),
        "dl-dd" => Ok(np * (base + 6 * np * nr * np) + 512 * (nt * nr * (nx + np) + 128)),
        other => Err(Error::UnknownPredictor(other.to_string())),
    }
}

pub fn flops_csv(p: FlopParams) -> Result<String> {
    let mut out = String::from("predictor,n_t,n_r,n_x,n_p,flops\n");
    for name in FLOP_PREDICTORS {
        let _ = writeln!(out, "{name},{},{},{},{},{}", p.n_t, p.n_r, p.n_x, p.n_p, flops(name, p)?);
    }
    Ok(out)
}

/// Everything a sweep can produce.
#[derive(Clone, Debug, PartialEq)]
pub enum SweepOutput {
    Ber(Vec<BerRecord>),
    PacketLength(PacketLengthSweep),
    Tracking(String),
    Flops(String),
}

impl SweepOutput {
    pub fn csv(&self) -> String {
        match self {
            Self::Ber(r) => ber_csv(r),
            Self::PacketLength(p) => packet_length_csv(&p.records),
            Self::Tracking(s) | Self::Flops(s) => s.clone(),
        }
    }
}

/// Runs the sweep selected by `cfg.sweep`.
pub fn run_sweep(cfg: &ExperimentConfig, model: Option<&MlpPair>) -> Result<SweepOutput> {
    match cfg.sweep {
        SweepKind::SnrBer => Ok(SweepOutput::Ber(run_ber_sweep(cfg, model)?)),
        SweepKind::PacketLength => Ok(SweepOutput::PacketLength(run_packet_length_sweep(cfg, model)?)),
        SweepKind::KFactor => {
            let mut all = Vec::new();
            for &k in &cfg.k_list {
                let sub = ExperimentConfig { k_factor: k, ..cfg.clone() };
                for mut r in run_ber_sweep(&sub, model)? {
                    r.scenario = format!("{}@K={k}", r.scenario);
                    all.push(r);
                }
            }
            Ok(SweepOutput::Ber(all))
        }
        SweepKind::ModOrder => {
            let mut all = Vec::new();
            for &m in &cfg.order_list {
                let sub = ExperimentConfig {
                    constellation_order: m,
                    ..cfg.clone()
                };
                for mut r in run_ber_sweep(&sub, model)? {
                    r.scenario = format!("{}@M={m}", r.scenario);
                    all.push(r);
                }
            }
            Ok(SweepOutput::Ber(all))
        }
        SweepKind::Tracking => Ok(SweepOutput::Tracking(run_tracking(cfg, model)?)),
        SweepKind::Flops => {
            let p = FlopParams {
                n_t: cfg.code.n_t() as u32,
                n_r: cfg.n_r as u32,
                n_x: cfg.code.n_x() as u32,
                n_p: cfg.n_p as u32,
            };
            Ok(SweepOutput::Flops(flops_csv(p)?))
        }
    }
}

/// Adds `ber_std,ci95_low,ci95_high` to a BER CSV, one output row per record.
pub fn report(csv: &str) -> Result<String> {
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or_default();
    let cols: Vec<&str> = header.split(',').collect();
    let find = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::InvalidParameter(format!("report input lacks column {name:?}")))
    };
    let (i_bits, i_ber) = (find("total_bits")?, find("ber")?);
    let mut out = format!("{header},ber_std,ci95_low,ci95_high\n");
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse_err = || Error::InvalidParameter(format!("report row {}: malformed {line:?}", n + 1));
        let bits: u64 = fields.get(i_bits).and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
        let ber: f64 = fields.get(i_ber).and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
        let std = binomial_std(ber, bits);
        let _ = writeln!(
            out,
            "{line},{std:.6e},{:.6e},{:.6e}",
            (ber - 1.96 * std).max(0.0),
            (ber + 1.96 * std).min(1.0)
        );
    }
    Ok(out)
}
