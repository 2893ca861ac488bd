//! Flat `key = value` experiment configuration with `#` comments.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::ddce::{PipelineConfig, PredictorKind};
use crate::decoder::DecoderKind;
use crate::error::{Error, Result};
use crate::fading::{DopplerRangeSpec, FadingKind, FadingSpec};
use crate::modulation::{noise_variance, Constellation, StbcCode};
use crate::neural::{Activation, AdamConfig, PredictorDims, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    SnrBer,
    PacketLength,
    KFactor,
    ModOrder,
    Tracking,
    Flops,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::SnrBer => "snr-ber",
            Self::PacketLength => "packet-length",
            Self::KFactor => "k-factor",
            Self::ModOrder => "mod-order",
            Self::Tracking => "tracking",
            Self::Flops => "flops",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Self::SnrBer,
            Self::PacketLength,
            Self::KFactor,
            Self::ModOrder,
            Self::Tracking,
            Self::Flops,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub range: DopplerRangeSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub code: StbcCode,
    pub constellation_order: usize,
    pub decoder: DecoderKind,
    /// Transmit antennas; only free for spatial multiplexing.
    pub n_t: usize,
    pub n_r: usize,
    pub n_p: usize,
    pub n_b: usize,
    /// Block counts for the packet-length sweep.
    pub nb_list: Vec<usize>,
    pub predictors: Vec<PredictorKind>,
    pub scenarios: Vec<Scenario>,
    pub k_factor: f64,
    pub k_list: Vec<f64>,
    pub order_list: Vec<usize>,
    pub f_los: Option<f64>,
    pub alpha0: f64,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub workers: usize,
    pub model_path: Option<PathBuf>,
    pub out_path: Option<PathBuf>,
    pub sweep: SweepKind,
    pub wiener_full_history: bool,
    pub train: TrainConfig,
    /// Keys explicitly present in the file or overrides, in order.
    pub keys_set: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            code: StbcCode::Alamouti,
            constellation_order: 4,
            decoder: DecoderKind::LsEuclidean,
            n_t: 2,
            n_r: 2,
            n_p: 10,
            n_b: 45,
            nb_list: vec![20, 45, 95],
            predictors: vec![PredictorKind::DlDd, PredictorKind::KalmanAr1, PredictorKind::ConstantChannel],
            scenarios: ["pedestrians", "cars", "trains"]
                .into_iter()
                .map(|n| Scenario {
                    name: n.to_string(),
                    range: DopplerRangeSpec::named(n).unwrap(),
                })
                .collect(),
            k_factor: 0.0,
            k_list: vec![0.0, 1.0, 5.0],
            order_list: vec![4, 16],
            f_los: None,
            alpha0: 0.0,
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            trials: 2000,
            seed: 1,
            workers: 1,
            model_path: None,
            out_path: None,
            sweep: SweepKind::SnrBer,
            wiener_full_history: false,
            train: TrainConfig::default(),
            keys_set: Vec::new(),
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::InvalidParameter(format!("{key} = {value:?}: {what}"))
}

fn list<T>(key: &str, value: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(s).ok_or_else(|| bad(key, s, "unrecognized value")))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(bad(key, value, "empty list"));
    }
    Ok(items)
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, "not a number"))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidParameter(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.keys_set.iter().any(|k| k == key)
    }

    /// Applies one `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "code" => {
                self.code = StbcCode::parse(value, self.n_t).ok_or_else(|| bad(key, value, "unknown code"))?;
                self.n_t = self.code.n_t();
            }
            "constellation_order" => self.constellation_order = num(key, value)?,
            "predictor" => {
                self.predictors = list(key, value, |s| PredictorKind::parse(s).ok())?;
            }
            "decoder" => self.decoder = DecoderKind::parse(value).ok_or_else(|| bad(key, value, "unknown decoder"))?,
            "nt" => {
                self.n_t = num(key, value)?;
                if let StbcCode::SpatialMux { .. } = self.code {
                    self.code = StbcCode::SpatialMux { n_t: self.n_t };
                }
            }
            "nr" => self.n_r = num(key, value)?,
            "np" => self.n_p = num(key, value)?,
            "nb" => self.n_b = num(key, value)?,
            "nb_list" => self.nb_list = list(key, value, |s| s.parse().ok())?,
            "rho_min" | "rho_max" => {
                let v: f64 = num(key, value)?;
                let current = self.custom_range();
                let (lo, hi) = if key == "rho_min" {
                    (v, current.rho_max.max(v))
                } else {
                    (current.rho_min.min(v), v)
                };
                self.scenarios = vec![Scenario {
                    name: "custom".into(),
                    range: DopplerRangeSpec { rho_min: lo, rho_max: hi },
                }];
            }
            "scenarios" => {
                self.scenarios = list(key, value, |s| {
                    DopplerRangeSpec::named(s).map(|range| Scenario {
                        name: s.to_string(),
                        range,
                    })
                })?;
            }
            "k_factor" => self.k_factor = num(key, value)?,
            "k_list" => self.k_list = list(key, value, |s| s.parse().ok())?,
            "order_list" => self.order_list = list(key, value, |s| s.parse().ok())?,
            "f_los" => self.f_los = Some(num(key, value)?),
            "alpha0" => self.alpha0 = num(key, value)?,
            "snr_db" => self.snr_db = list(key, value, |s| s.parse().ok())?,
            "trials" => self.trials = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "workers" => self.workers = num(key, value)?,
            "model_path" => self.model_path = Some(PathBuf::from(value)),
            "out_path" => self.out_path = Some(PathBuf::from(value)),
            "sweep" => self.sweep = SweepKind::parse(value).ok_or_else(|| bad(key, value, "unknown sweep"))?,
            "wiener_full_history" => {
                self.wiener_full_history = value.parse().map_err(|_| bad(key, value, "expected true/false"))?
            }
            "train_samples" => self.train.n_samples = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "learning_rate" => {
                self.train.adam = AdamConfig {
                    lr: num(key, value)?,
                    ..self.train.adam
                }
            }
            "activation" => {
                self.train.activation = Activation::parse(value).ok_or_else(|| bad(key, value, "unknown activation"))?
            }
            _ => return Err(Error::InvalidParameter(format!("unknown config key {key:?}"))),
        }
        self.keys_set.push(key.to_string());
        Ok(())
    }

    fn custom_range(&self) -> DopplerRangeSpec {
        match self.scenarios.as_slice() {
            [only] if only.name == "custom" => only.range,
            _ => DopplerRangeSpec { rho_min: 0.0, rho_max: 0.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidParameter("workers must be >= 1".into()));
        }
        if self.n_t != self.code.n_t() && !matches!(self.code, StbcCode::SpatialMux { .. }) {
            return Err(Error::InvalidParameter(format!(
                "code {} uses {} transmit antennas, nt = {}",
                self.code,
                self.code.n_t(),
                self.n_t
            )));
        }
        for s in &self.scenarios {
            DopplerRangeSpec::new(s.range.rho_min, s.range.rho_max)?;
        }
        Constellation::qam(self.constellation_order)?;
        for &m in &self.order_list {
            Constellation::qam(m)?;
        }
        if self.k_factor < 0.0 || self.k_list.iter().any(|k| *k < 0.0) {
            return Err(Error::InvalidParameter("K-factor must be >= 0".into()));
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn dims(&self) -> PredictorDims {
        PredictorDims {
            n_t: self.code.n_t(),
            n_r: self.n_r,
            n_p: self.n_p,
            n_x: self.code.n_x(),
        }
    }

    /// Training configuration; the Doppler range is `rho_min`/`rho_max` when
    /// given and the full supported range otherwise.
    pub fn train_config(&self) -> TrainConfig {
        let rho_range = if self.is_set("rho_min") || self.is_set("rho_max") {
            self.custom_range()
        } else {
            self.train.rho_range
        };
        TrainConfig {
            rho_range,
            k_factor: self.k_factor,
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn fading(&self, rho: f64) -> FadingSpec {
        if self.k_factor > 0.0 {
            FadingSpec {
                rho,
                kind: FadingKind::Rician {
                    k_factor: self.k_factor,
                    f_los: self.f_los,
                    alpha0: self.alpha0,
                },
                sigma_h2: 1.0,
            }
        } else {
            FadingSpec::rayleigh(rho)
        }
    }

    pub fn pipeline(&self, predictor: PredictorKind, range: DopplerRangeSpec, snr_db: f64) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            code: self.code,
            constellation: Constellation::qam(self.constellation_order)?,
            n_r: self.n_r,
            predictor,
            decoder: self.decoder,
            n_p: self.n_p,
            n_b: self.n_b,
            rho_range: range,
            rho_true: range.midpoint(),
            fading: self.fading(range.midpoint()),
            sigma_w2: noise_variance(snr_db),
            wiener_full_history: self.wiener_full_history,
            seed: self.seed,
        })
    }

    /// Echo of the effective configuration, one `key = value` per line.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let join = |v: Vec<String>| v.join(",");
        let _ = writeln!(out, "code = {}", self.code);
        let _ = writeln!(out, "constellation_order = {}", self.constellation_order);
        let _ = writeln!(out, "predictor = {}", join(self.predictors.iter().map(|p| p.name().to_string()).collect()));
        let _ = writeln!(out, "decoder = {}", self.decoder.name());
        let _ = writeln!(out, "nt = {}", self.code.n_t());
        let _ = writeln!(out, "nr = {}", self.n_r);
        let _ = writeln!(out, "np = {}", self.n_p);
        let _ = writeln!(out, "nb = {}", self.n_b);
        let _ = writeln!(out, "nb_list = {}", join(self.nb_list.iter().map(usize::to_string).collect()));
        for s in &self.scenarios {
            let _ = writeln!(out, "# scenario {} = [{}, {}]", s.name, s.range.rho_min, s.range.rho_max);
        }
        let _ = writeln!(out, "k_factor = {}", self.k_factor);
        if let Some(f) = self.f_los {
            let _ = writeln!(out, "f_los = {f}");
        }
        let _ = writeln!(out, "alpha0 = {}", self.alpha0);
        let _ = writeln!(out, "snr_db = {}", join(self.snr_db.iter().map(f64::to_string).collect()));
        let _ = writeln!(out, "trials = {}", self.trials);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "workers = {}", self.workers);
        let _ = writeln!(out, "sweep = {}", self.sweep.name());
        if let Some(p) = &self.model_path {
            let _ = writeln!(out, "model_path = {}", p.display());
        }
        if let Some(p) = &self.out_path {
            let _ = writeln!(out, "out_path = {}", p.display());
        }
        out
    }
}
