//! Decision-directed channel estimation over one packet: pilot
//! initialization, multi-step prediction, block decoding and the windowed
//! MMSE re-estimation that feeds the next prediction.
//!
//! Time indices are 0-based. The window used to predict data block `i`
//! (0-based) covers `i·n_x .. i·n_x + n_p`, so block 0 is predicted from the
//! pilot region and every prediction targets the `n_x` samples right after
//! its window.

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::decoder::{BlockDecoder, DecoderKind, DEFAULT_SEARCH_BUDGET};
use crate::error::{Error, Result};
use crate::fading::{Autocorrelation, ChannelTrace, DopplerRangeSpec, FadingSpec};
use crate::linalg::{CMatrix, CVector};
use crate::modulation::{apply_channel, build_packet, Constellation, Received, StbcCode};
use crate::neural::MlpPair;
use crate::predictors::{cc_predict, kalman_window_predict, WienerContext};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PredictorKind {
    /// Learned multi-step predictor; knows only the Doppler range.
    DlDd,
    /// Finite-window Wiener predictor with the exact Doppler rate.
    WienerNp,
    /// AR(1) Kalman predictor with the exact Doppler rate.
    KalmanAr1,
    /// Hold of the last windowed MMSE estimate.
    ConstantChannel,
    /// True channel; used for calibration.
    Genie,
}

impl PredictorKind {
    pub const ALL: [Self; 5] = [Self::DlDd, Self::WienerNp, Self::KalmanAr1, Self::ConstantChannel, Self::Genie];

    pub fn name(self) -> &'static str {
        match self {
            Self::DlDd => "dl-dd",
            Self::WienerNp => "dd-wiener",
            Self::KalmanAr1 => "dd-ar1",
            Self::ConstantChannel => "dd-cc",
            Self::Genie => "genie",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownPredictor(s.to_string()))
    }
}

/// What the receiver is told about the Doppler rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DopplerKnowledge {
    Range(DopplerRangeSpec),
    Exact(f64),
}

impl DopplerKnowledge {
    /// The rate plugged into correlation models.
    pub fn design_rho(&self) -> f64 {
        match self {
            Self::Range(r) => r.midpoint(),
            Self::Exact(rho) => *rho,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub code: StbcCode,
    pub constellation: Constellation,
    pub n_r: usize,
    pub predictor: PredictorKind,
    pub decoder: DecoderKind,
    pub n_p: usize,
    pub n_b: usize,
    /// Range known to the learned predictor.
    pub rho_range: DopplerRangeSpec,
    /// Rate handed to the model-based baselines.
    pub rho_true: f64,
    /// Fading family used for correlation models; its `rho` is overridden.
    pub fading: FadingSpec,
    pub sigma_w2: f64,
    /// Condition the Wiener predictor on the whole past instead of `n_p` samples.
    pub wiener_full_history: bool,
    /// Noise seed for the packet.
    pub seed: u64,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let n_t = self.code.n_t();
        if self.n_p < n_t {
            return Err(Error::InvalidParameter(format!("n_p = {} must be >= n_t = {n_t}", self.n_p)));
        }
        if self.n_r == 0 {
            return Err(Error::InvalidParameter("n_r must be >= 1".into()));
        }
        if !(self.sigma_w2 >= 0.0) {
            return Err(Error::InvalidParameter(format!("sigma_w2 = {} must be >= 0", self.sigma_w2)));
        }
        if self.decoder == DecoderKind::AlamoutiLs && self.code != StbcCode::Alamouti {
            return Err(Error::WrongCode(self.code.name()));
        }
        Ok(())
    }

    pub fn packet_len(&self) -> usize {
        self.n_p + self.n_b * self.code.n_x()
    }

    pub fn bits_per_packet(&self) -> usize {
        self.n_b * self.code.n_s() * self.constellation.bits_per_symbol()
    }

    /// Doppler information available to the configured predictor. The learned
    /// predictor never sees `rho_true`.
    pub fn knowledge(&self) -> DopplerKnowledge {
        knowledge(self.predictor, self.rho_range, self.rho_true)
    }
}

fn knowledge(predictor: PredictorKind, range: DopplerRangeSpec, rho_true: f64) -> DopplerKnowledge {
    match predictor {
        PredictorKind::DlDd => DopplerKnowledge::Range(range),
        _ => DopplerKnowledge::Exact(rho_true),
    }
}

/// Channel estimates over `n_p` consecutive time indices, time-major, then
/// receive antenna, then transmit antenna.
#[derive(Clone, Debug, PartialEq)]
pub struct SlidingWindow {
    pub start: usize,
    pub n_t: usize,
    pub n_r: usize,
    pub estimates: CVector,
}

impl SlidingWindow {
    pub fn len(&self) -> usize {
        self.estimates.len() / (self.n_t * self.n_r)
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    /// Stacked estimate at window position `j`.
    pub fn at(&self, j: usize) -> &[Complex64] {
        let w = self.n_t * self.n_r;
        &self.estimates[j * w..(j + 1) * w]
    }

    pub fn last(&self) -> &[Complex64] {
        self.at(self.len() - 1)
    }
}

/// Windowed MMSE estimate of every channel coefficient at indices
/// `start .. start + decided.cols()` from the received samples there.
pub fn rmmse_update(
    received: &Received,
    start: usize,
    decided: &CMatrix,
    r: &impl Autocorrelation,
    sigma_w2: f64,
) -> Result<SlidingWindow> {
    let (n_t, n_p, n_r) = (decided.rows(), decided.cols(), received.n_r());
    if start + n_p > received.len() {
        return Err(Error::DimMismatch(format!(
            "window {start}..{} exceeds {} received samples",
            start + n_p,
            received.len()
        )));
    }
    let targets: Vec<i64> = (0..n_p as i64).collect();
    let ctx = WienerContext::with_targets(r, decided, sigma_w2, &targets)?;
    let mut estimates = vec![Complex64::new(0.0, 0.0); n_p * n_r * n_t];
    for n in 0..n_r {
        let h = ctx.predict(received.rx_window(n, start, n_p))?;
        for j in 0..n_p {
            for m in 0..n_t {
                estimates[(j * n_r + n) * n_t + m] = h[j * n_t + m];
            }
        }
    }
    Ok(SlidingWindow {
        start,
        n_t,
        n_r,
        estimates,
    })
}

/// Window for the first block: the MMSE estimate over the pilot region.
pub fn init_from_pilot(received: &Received, pilot: &CMatrix, r: &impl Autocorrelation, sigma_w2: f64) -> Result<SlidingWindow> {
    if pilot.cols() < pilot.rows() {
        return Err(Error::InvalidParameter(format!(
            "pilot length {} shorter than {} antennas",
            pilot.cols(),
            pilot.rows()
        )));
    }
    rmmse_update(received, 0, pilot, r, sigma_w2)
}

/// The learned prediction: real parts through one network, imaginary parts
/// through the other, recombined as `x + i·z`.
pub fn dl_predict(model: &MlpPair, window: &SlidingWindow) -> Result<CVector> {
    let re: Vec<f64> = window.estimates.iter().map(|h| h.re).collect();
    let im: Vec<f64> = window.estimates.iter().map(|h| h.im).collect();
    let x = model.real.forward(&re)?;
    let z = model.imag.forward(&im)?;
    Ok(x.into_iter().zip(z).map(|(a, b)| Complex64::new(a, b)).collect())
}

/// The last window estimate repeated for every slot of the block.
pub fn hold_predict(window: &SlidingWindow, n_x: usize) -> CVector {
    let last = cc_predict(window.last());
    (0..n_x).flat_map(|_| last.iter().copied()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PacketResult {
    pub bits_tx: Vec<u8>,
    pub bits_rx: Vec<u8>,
    pub bit_errors: u64,
    /// Per block: the predicted channel block `Υ` used by the decoder.
    pub predictions: Vec<CVector>,
    /// Per block: the window after re-estimation (absent for predictors that
    /// work from raw observations, and for the genie).
    pub updates: Vec<Option<SlidingWindow>>,
    pub metrics: Vec<f64>,
}

impl PacketResult {
    /// Mean squared prediction error of each block against the true channel.
    pub fn block_mse(&self, trace: &ChannelTrace, n_p: usize, n_x: usize) -> Vec<f64> {
        self.predictions
            .iter()
            .enumerate()
            .map(|(i, pred)| {
                let truth = block_truth(trace, n_p + i * n_x, n_x);
                truth.iter().zip(pred).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / truth.len() as f64
            })
            .collect()
    }

    /// CSV with header
    /// `k,rx,tx,true_re,true_im,pred_re,pred_im,amp_true,amp_pred,phase_true,phase_pred`.
    pub fn tracking_csv(&self, trace: &ChannelTrace, n_p: usize, n_x: usize) -> String {
        let (n_t, n_r) = (trace.n_t(), trace.n_r());
        let mut out = String::from("k,rx,tx,true_re,true_im,pred_re,pred_im,amp_true,amp_pred,phase_true,phase_pred\n");
        for (i, pred) in self.predictions.iter().enumerate() {
            for q in 0..n_x {
                let k = n_p + i * n_x + q;
                for n in 0..n_r {
                    for m in 0..n_t {
                        let t = trace.get(n, m, k);
                        let p = pred[(q * n_r + n) * n_t + m];
                        let _ = writeln!(
                            out,
                            "{k},{n},{m},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
                            t.re,
                            t.im,
                            p.re,
                            p.im,
                            t.norm(),
                            p.norm(),
                            t.arg(),
                            p.arg()
                        );
                    }
                }
            }
        }
        out
    }
}

fn block_truth(trace: &ChannelTrace, k0: usize, n_x: usize) -> CVector {
    (0..n_x).flat_map(|q| trace.stacked(k0 + q)).collect()
}

/// Reusable pieces for many packets with the same code and constellation.
#[derive(Clone, Debug)]
pub struct Pipeline<'m> {
    cfg: PipelineConfig,
    decoder: BlockDecoder,
    model: Option<&'m MlpPair>,
}

impl<'m> Pipeline<'m> {
    pub fn new(cfg: PipelineConfig, model: Option<&'m MlpPair>) -> Result<Self> {
        cfg.validate()?;
        if cfg.predictor == PredictorKind::DlDd {
            let m = model.ok_or(Error::MissingModel)?;
            let d = m.dims;
            if (d.n_t, d.n_r, d.n_p, d.n_x) != (cfg.code.n_t(), cfg.n_r, cfg.n_p, cfg.code.n_x()) {
                return Err(Error::ShapeMismatch(format!(
                    "model trained for n_t={} n_r={} n_p={} n_x={}, pipeline needs n_t={} n_r={} n_p={} n_x={}",
                    d.n_t,
                    d.n_r,
                    d.n_p,
                    d.n_x,
                    cfg.code.n_t(),
                    cfg.n_r,
                    cfg.n_p,
                    cfg.code.n_x()
                )));
            }
        }
        let decoder = BlockDecoder::new(cfg.code, &cfg.constellation, DEFAULT_SEARCH_BUDGET)?;
        Ok(Self { cfg, decoder, model })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// Transmits `bits` through `trace` and runs the estimation loop with the
    /// configured Doppler rate and noise seed.
    pub fn run_packet(&self, trace: &ChannelTrace, bits: &[u8]) -> Result<PacketResult> {
        self.run_packet_with(trace, bits, self.cfg.rho_true, self.cfg.seed)
    }

    /// As [`Self::run_packet`] with a per-packet Doppler rate and noise seed.
    pub fn run_packet_with(&self, trace: &ChannelTrace, bits: &[u8], rho_true: f64, seed: u64) -> Result<PacketResult> {
        let cfg = &self.cfg;
        let (n_t, n_x, n_p) = (cfg.code.n_t(), cfg.code.n_x(), cfg.n_p);
        if trace.n_t() != n_t || trace.n_r() != cfg.n_r || trace.len() < cfg.packet_len() {
            return Err(Error::DimMismatch(format!(
                "trace is {}x{} over {} samples, packet needs {}x{} over {}",
                trace.n_r(),
                trace.n_t(),
                trace.len(),
                cfg.n_r,
                n_t,
                cfg.packet_len()
            )));
        }
        let packet = build_packet(cfg.code, &cfg.constellation, cfg.n_b, n_p, bits)?;
        let received = apply_channel(&packet.c, trace, cfg.sigma_w2, seed)?;
        let corr = cfg.fading.with_rho(knowledge(cfg.predictor, cfg.rho_range, rho_true).design_rho());

        // decided symbols: pilots up front, filled in block by block
        let mut decided = CMatrix::zeros(n_t, packet.len());
        for m in 0..n_t {
            for k in 0..n_p {
                decided[(m, k)] = packet.pilot[(m, k)];
            }
        }
        let uses_window = matches!(cfg.predictor, PredictorKind::DlDd | PredictorKind::ConstantChannel);
        let mut window = if uses_window {
            Some(init_from_pilot(&received, &packet.pilot, &corr, cfg.sigma_w2)?)
        } else {
            None
        };

        let mut result = PacketResult {
            bits_tx: bits.to_vec(),
            bits_rx: Vec::with_capacity(bits.len()),
            bit_errors: 0,
            predictions: Vec::with_capacity(cfg.n_b),
            updates: Vec::with_capacity(cfg.n_b),
            metrics: Vec::with_capacity(cfg.n_b),
        };
        for i in 0..cfg.n_b {
            let w0 = i * n_x;
            let k0 = n_p + w0;
            if let Some(w) = &window {
                assert_eq!((w.start, w.len()), (w0, n_p), "window out of step at block {i}");
            }
            let upsilon = match cfg.predictor {
                PredictorKind::Genie => block_truth(trace, k0, n_x),
                PredictorKind::DlDd => dl_predict(self.model.ok_or(Error::MissingModel)?, window.as_ref().unwrap())?,
                PredictorKind::ConstantChannel => hold_predict(window.as_ref().unwrap(), n_x),
                PredictorKind::WienerNp => {
                    let start = if cfg.wiener_full_history { 0 } else { w0 };
                    self.raw_predict(&received, &decided, start, k0, |ctx_decided, y| {
                        let ctx = WienerContext::new(&corr, ctx_decided, cfg.sigma_w2, n_x)?;
                        ctx.predict(y)
                    })?
                }
                PredictorKind::KalmanAr1 => {
                    let power = corr.autocorr(0).re;
                    let a = corr.autocorr(1) / power;
                    self.raw_predict(&received, &decided, w0, k0, |ctx_decided, y| {
                        kalman_window_predict(a, power, cfg.sigma_w2, ctx_decided, y, n_x)
                    })?
                }
            };

            let y_tilde: CVector = (0..n_x).flat_map(|q| received.at(k0 + q)).collect();
            let decision = self.decoder.decode(cfg.decoder, &y_tilde, &upsilon, cfg.sigma_w2.max(1e-300))?;
            let chosen = &self.decoder.candidates()[decision.candidate];
            for q in 0..n_x {
                for m in 0..n_t {
                    decided[(m, k0 + q)] = chosen[(m, q)];
                }
            }
            for &label in &decision.labels {
                result.bits_rx.extend(cfg.constellation.label_bits(label));
            }
            result.metrics.push(decision.metric);
            result.predictions.push(upsilon);

            if uses_window {
                let start = w0 + n_x;
                let next = rmmse_update(&received, start, &decided.columns(start, n_p), &corr, cfg.sigma_w2)?;
                result.updates.push(Some(next.clone()));
                window = Some(next);
            } else {
                result.updates.push(None);
            }
        }
        result.bit_errors = result
            .bits_tx
            .iter()
            .zip(&result.bits_rx)
            .filter(|(a, b)| a != b)
            .count() as u64;
        Ok(result)
    }

    /// Runs a per-antenna predictor on raw observations over `start..k0` and
    /// restacks its target-major, tx-minor output into `Υ` order.
    fn raw_predict(
        &self,
        received: &Received,
        decided: &CMatrix,
        start: usize,
        k0: usize,
        predict: impl Fn(&CMatrix, &[Complex64]) -> Result<CVector>,
    ) -> Result<CVector> {
        let (n_t, n_r, n_x) = (self.cfg.code.n_t(), self.cfg.n_r, self.cfg.code.n_x());
        let window = decided.columns(start, k0 - start);
        let mut upsilon = vec![Complex64::new(0.0, 0.0); n_x * n_r * n_t];
        for n in 0..n_r {
            let g = predict(&window, received.rx_window(n, start, k0 - start))?;
            for q in 0..n_x {
                for m in 0..n_t {
                    upsilon[(q * n_r + n) * n_t + m] = g[q * n_t + m];
                }
            }
        }
        Ok(upsilon)
    }
}

/// One-shot convenience wrapper around [`Pipeline`].
pub fn run_packet(cfg: &PipelineConfig, trace: &ChannelTrace, bits: &[u8], model: Option<&MlpPair>) -> Result<PacketResult> {
    Pipeline::new(cfg.clone(), model)?.run_packet(trace, bits)
}
