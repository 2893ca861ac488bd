//! Time-varying MIMO fading with a Jakes (Bessel-J0) temporal autocorrelation.
//!
//! Packet-length traces are drawn by Cholesky-colouring white complex
//! Gaussian noise with the exact Toeplitz correlation matrix. Traces longer
//! than [`CHOLESKY_MAX_LEN`] (used only for statistics checks and tracking
//! plots) are synthesised spectrally: every antenna pair gets its own set of
//! DFT bins with deterministic Jakes bin powers and independent uniform
//! phases, which keeps the time-averaged statistics ergodic and makes distinct
//! pairs exactly orthogonal over one period.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_4, PI};
use std::fmt::Write as _;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector, Cholesky};

/// Largest Doppler rate the predictors are designed for.
pub const RHO_LIMIT: f64 = 0.1;

/// Longest trace generated by exact Cholesky colouring.
pub const CHOLESKY_MAX_LEN: usize = 1024;

/// Speed of light used in the speed-to-Doppler conversion (m/s).
pub const LIGHT_SPEED: f64 = 3e8;

/// Bessel function of the first kind, order zero.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x <= 16.0 {
        // power series; the largest term near x = 16 is ~2e5, so the
        // cancellation error stays around 1e-11
        let q = x * x / 4.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..200 {
            let kf = k as f64;
            term *= -q / (kf * kf);
            sum += term;
            if term.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        sum
    } else {
        // Hankel asymptotic expansion, truncated at its smallest term
        let mut p = 0.0;
        let mut q = 0.0;
        // b_k = 1²·3²·…·(2k-1)² / (k!·(8x)^k)
        let mut b = 1.0;
        let mut prev = f64::INFINITY;
        for k in 0..60 {
            if k > 0 {
                let odd = (2 * k - 1) as f64;
                b *= odd * odd / (k as f64 * 8.0 * x);
            }
            if b > prev {
                break;
            }
            prev = b;
            match k % 4 {
                0 => p += b,
                1 => q -= b,
                2 => p -= b,
                _ => q += b,
            }
            if b < 1e-17 {
                break;
            }
        }
        let chi = x - FRAC_PI_4;
        (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
    }
}

/// Anything that can serve as the temporal autocorrelation
/// `E{h[k+lag] h[k]^*}` of one antenna pair.
pub trait Autocorrelation {
    fn autocorr(&self, lag: i64) -> Complex64;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FadingKind {
    Rayleigh,
    Rician {
        k_factor: f64,
        /// LOS Doppler per sample; `None` uses the Doppler rate.
        f_los: Option<f64>,
        /// LOS arrival angle (radians).
        alpha0: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FadingSpec {
    pub rho: f64,
    pub kind: FadingKind,
    /// NLOS average power.
    pub sigma_h2: f64,
}

impl FadingSpec {
    pub fn rayleigh(rho: f64) -> Self {
        Self {
            rho,
            kind: FadingKind::Rayleigh,
            sigma_h2: 1.0,
        }
    }

    pub fn rician(rho: f64, k_factor: f64) -> Self {
        Self {
            rho,
            kind: FadingKind::Rician {
                k_factor,
                f_los: None,
                alpha0: 0.0,
            },
            sigma_h2: 1.0,
        }
    }

    pub fn with_rho(self, rho: f64) -> Self {
        Self { rho, ..self }
    }

    pub fn k_factor(&self) -> f64 {
        match self.kind {
            FadingKind::Rayleigh => 0.0,
            FadingKind::Rician { k_factor, .. } => k_factor,
        }
    }

    /// Per-sample phase increment of the LOS phasor, `2π·f_los·cos(α0)`.
    fn los_phase_step(&self) -> f64 {
        match self.kind {
            FadingKind::Rayleigh => 0.0,
            FadingKind::Rician { f_los, alpha0, .. } => 2.0 * PI * f_los.unwrap_or(self.rho) * alpha0.cos(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=RHO_LIMIT).contains(&self.rho) {
            return Err(Error::InvalidParameter(format!(
                "Doppler rate {} outside [0, {RHO_LIMIT}]",
                self.rho
            )));
        }
        if !(self.sigma_h2 > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma_h2 must be positive, got {}", self.sigma_h2)));
        }
        if !(self.k_factor() >= 0.0) {
            return Err(Error::InvalidParameter(format!("K-factor must be >= 0, got {}", self.k_factor())));
        }
        Ok(())
    }
}

impl Autocorrelation for FadingSpec {
    fn autocorr(&self, lag: i64) -> Complex64 {
        jakes_autocorr(self, lag)
    }
}

/// First-order Gauss-Markov correlation `a^|lag|`.
#[derive(Clone, Copy, Debug)]
pub struct Ar1Autocorr {
    pub coeff: f64,
}

impl Autocorrelation for Ar1Autocorr {
    fn autocorr(&self, lag: i64) -> Complex64 {
        Complex64::new(self.coeff.powi(lag.unsigned_abs() as i32), 0.0)
    }
}

/// `K/(K+1)·e^{-i2π f_los cos(α0) lag} + σ_h²/(K+1)·J0(2πρ|lag|)`.
pub fn jakes_autocorr(spec: &FadingSpec, lag: i64) -> Complex64 {
    let k = spec.k_factor();
    let nlos = spec.sigma_h2 / (k + 1.0) * bessel_j0(2.0 * PI * spec.rho * lag.unsigned_abs() as f64);
    let los = if k > 0.0 {
        Complex64::from_polar(k / (k + 1.0), -spec.los_phase_step() * lag as f64)
    } else {
        Complex64::new(0.0, 0.0)
    };
    los + nlos
}

/// Hermitian Toeplitz matrix with entry `(i, j) = R(i - j)`.
pub fn corr_matrix(r: &impl Autocorrelation, n: usize) -> CMatrix {
    let lags: Vec<Complex64> = (0..n as i64).map(|l| r.autocorr(l)).collect();
    CMatrix::from_fn(n, n, |i, j| if i >= j { lags[i - j] } else { lags[j - i].conj() })
}

/// `[R(v), R(v-1), …, R(u)]` (descending lag).
pub fn corr_vector(r: &impl Autocorrelation, u: i64, v: i64) -> CVector {
    assert!(u <= v, "corr_vector needs u <= v");
    (u..=v).rev().map(|lag| r.autocorr(lag)).collect()
}

/// Range of Doppler rates a receiver is told about.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DopplerRangeSpec {
    pub rho_min: f64,
    pub rho_max: f64,
}

impl DopplerRangeSpec {
    pub fn new(rho_min: f64, rho_max: f64) -> Result<Self> {
        if !(0.0 <= rho_min && rho_min <= rho_max && rho_max <= RHO_LIMIT) {
            return Err(Error::InvalidParameter(format!(
                "Doppler range [{rho_min}, {rho_max}] must satisfy 0 <= min <= max <= {RHO_LIMIT}"
            )));
        }
        Ok(Self { rho_min, rho_max })
    }

    /// `ρ = v·f_c·T_c / C` applied to both ends of a speed range.
    pub fn from_speeds(v_min: f64, v_max: f64, carrier_hz: f64, sample_time_s: f64) -> Result<Self> {
        let conv = carrier_hz * sample_time_s / LIGHT_SPEED;
        Self::new(v_min * conv, v_max * conv)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.rho_min + self.rho_max)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.rho_max > self.rho_min {
            rng.random_range(self.rho_min..=self.rho_max)
        } else {
            self.rho_min
        }
    }

    pub fn pedestrians() -> Self {
        Self { rho_min: 0.0, rho_max: 0.001 }
    }

    pub fn cars() -> Self {
        Self { rho_min: 0.001, rho_max: 0.03 }
    }

    pub fn trains() -> Self {
        Self { rho_min: 0.03, rho_max: 0.1 }
    }

    pub fn named(name: &str) -> Option<Self> {
        match name {
            "pedestrians" => Some(Self::pedestrians()),
            "cars" => Some(Self::cars()),
            "trains" => Some(Self::trains()),
            _ => None,
        }
    }
}

/// Complex fading coefficients for every (rx, tx, time) triple.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelTrace {
    n_t: usize,
    n_r: usize,
    len: usize,
    h: Vec<Complex64>,
    pub rho_used: f64,
}

impl ChannelTrace {
    /// A trace built from explicit coefficients, laid out as
    /// `[(rx · n_t + tx) · len + k]`.
    pub fn from_coefficients(n_t: usize, n_r: usize, len: usize, h: Vec<Complex64>, rho_used: f64) -> Result<Self> {
        if h.len() != n_t * n_r * len {
            return Err(Error::BadLength {
                expected: n_t * n_r * len,
                got: h.len(),
            });
        }
        Ok(Self { n_t, n_r, len, h, rho_used })
    }

    /// Every coefficient equal to `value`.
    pub fn constant(n_t: usize, n_r: usize, len: usize, value: Complex64) -> Self {
        Self {
            n_t,
            n_r,
            len,
            h: vec![value; n_t * n_r * len],
            rho_used: 0.0,
        }
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Coefficient from tx `m` to rx `n` at time `k` (all zero-based).
    pub fn get(&self, n: usize, m: usize, k: usize) -> Complex64 {
        self.h[(n * self.n_t + m) * self.len + k]
    }

    pub fn pair_series(&self, n: usize, m: usize) -> &[Complex64] {
        let start = (n * self.n_t + m) * self.len;
        &self.h[start..start + self.len]
    }

    /// Channels from all transmit antennas to rx `n` at time `k`.
    pub fn rx_vector(&self, n: usize, k: usize) -> CVector {
        (0..self.n_t).map(|m| self.get(n, m, k)).collect()
    }

    /// All `n_t·n_r` coefficients at time `k`, rx-major then tx.
    pub fn stacked(&self, k: usize) -> CVector {
        (0..self.n_r)
            .flat_map(|n| (0..self.n_t).map(move |m| (n, m)))
            .map(|(n, m)| self.get(n, m, k))
            .collect()
    }

    /// CSV with header `rx,tx,k,re,im`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rx,tx,k,re,im\n");
        for n in 0..self.n_r {
            for m in 0..self.n_t {
                for k in 0..self.len {
                    let h = self.get(n, m, k);
                    let _ = writeln!(out, "{n},{m},{k},{:.17e},{:.17e}", h.re, h.im);
                }
            }
        }
        out
    }
}

pub(crate) fn complex_gaussian(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

type FactorKey = (u64, usize);

fn factor_cache() -> &'static Mutex<HashMap<FactorKey, Arc<Cholesky>>> {
    static CACHE: OnceLock<Mutex<HashMap<FactorKey, Arc<Cholesky>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

const FACTOR_CACHE_CAP: usize = 64;

/// Cholesky factor of the unit-power J0 Toeplitz matrix, with jitter
/// escalation for the rank-deficient small-ρ cases.
fn unit_jakes_factor(rho: f64, len: usize) -> Result<Arc<Cholesky>> {
    let key = (rho.to_bits(), len);
    if let Some(f) = factor_cache().lock().unwrap().get(&key) {
        return Ok(Arc::clone(f));
    }
    let r = corr_matrix(&FadingSpec::rayleigh(rho), len);
    let mut last = None;
    let mut factor = None;
    for rel in [1e-12, 1e-10, 1e-8, 1e-6] {
        match Cholesky::new(&r, rel) {
            Ok(f) => {
                factor = Some(Arc::new(f));
                break;
            }
            Err(e) => last = Some(e),
        }
    }
    let factor = match factor {
        Some(f) => f,
        None => return Err(last.expect("at least one attempt")),
    };
    let mut cache = factor_cache().lock().unwrap();
    if cache.len() >= FACTOR_CACHE_CAP {
        cache.clear();
    }
    cache.insert(key, Arc::clone(&factor));
    Ok(factor)
}

/// Unit-power Jakes sequence by Cholesky colouring.
fn cholesky_series(factor: &Cholesky, rng: &mut impl Rng) -> Vec<Complex64> {
    let len = factor.dim();
    let z: Vec<Complex64> = (0..len).map(|_| complex_gaussian(rng)).collect();
    let l = factor.factor();
    (0..len)
        .map(|i| l.row(i)[..=i].iter().zip(&z).map(|(a, b)| a * b).sum())
        .collect()
}

/// Unit-power Jakes sequence from the DFT bins `j ≡ offset (mod stride)`.
fn spectral_series(rho: f64, len: usize, offset: usize, stride: usize, rng: &mut impl Rng) -> Vec<Complex64> {
    // Jakes spectrum CDF on (-0.5, 0.5]
    let cdf = |f: f64| -> f64 {
        if rho == 0.0 {
            return if f >= 0.0 { 1.0 } else { 0.0 };
        }
        0.5 + (f / rho).clamp(-1.0, 1.0).asin() / PI
    };
    let n = len as f64;
    let half_width = stride as f64 / (2.0 * n);
    let mut bins = vec![Complex64::new(0.0, 0.0); len];
    for j in (offset..len).step_by(stride) {
        let f = if j <= len / 2 { j as f64 / n } else { j as f64 / n - 1.0 };
        let power = cdf(f + half_width) - cdf(f - half_width);
        if power > 0.0 {
            let phase = rng.random::<f64>() * 2.0 * PI;
            bins[j] = Complex64::from_polar(power.sqrt(), phase);
        }
    }
    FftPlanner::new().plan_fft_inverse(len).process(&mut bins);
    bins
}

/// Draws a trace for every (rx, tx) pair from independent random streams.
pub fn generate_trace(spec: &FadingSpec, n_t: usize, n_r: usize, len: usize, seed: u64) -> Result<ChannelTrace> {
    spec.validate()?;
    if len == 0 || n_t == 0 || n_r == 0 {
        return Err(Error::BadDims(format!("trace needs n_t, n_r, len >= 1 (got {n_t}, {n_r}, {len})")));
    }
    let k = spec.k_factor();
    let nlos_amp = (spec.sigma_h2 / (k + 1.0)).sqrt();
    let los_amp = (k / (k + 1.0)).sqrt();
    let step = spec.los_phase_step();
    let pairs = n_t * n_r;

    let factor = if len <= CHOLESKY_MAX_LEN {
        Some(unit_jakes_factor(spec.rho, len)?)
    } else {
        None
    };

    let mut h = Vec::with_capacity(pairs * len);
    for pair in 0..pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(pair as u64);
        let series = match &factor {
            Some(f) => cholesky_series(f, &mut rng),
            None => spectral_series(spec.rho, len, pair, pairs, &mut rng),
        };
        h.extend(series.into_iter().enumerate().map(|(t, x)| {
            let los = if k > 0.0 {
                Complex64::from_polar(los_amp, -step * t as f64)
            } else {
                Complex64::new(0.0, 0.0)
            };
            x * nlos_amp + los
        }));
    }
    Ok(ChannelTrace {
        n_t,
        n_r,
        len,
        h,
        rho_used: spec.rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // J0 reference values from an independent evaluation (scipy.special.j0).
    const J0_REF: &[(f64, f64)] = &[
        (0.31416, 0.975_477_660_095_790_5),
        (0.628_318_530_717_958_6, 0.903_712_642_092_466_3),
        (std::f64::consts::FRAC_PI_2, 0.472_001_215_768_234_7),
        (5.0, -0.177_596_771_314_338_3),
        (12.0, 0.047_689_310_796_833_35),
        (15.9, -0.164_970_499_485_670_75),
        (16.1, -0.183_023_692_465_310_42),
        (25.0, 0.096_266_783_275_958_01),
        (100.0, 0.019_985_850_304_223_33),
        (628.3, 0.022_082_741_293_624_086),
    ];

    #[test]
    fn bessel_matches_reference() {
        assert_eq!(bessel_j0(0.0), 1.0);
        for &(x, want) in J0_REF {
            let got = bessel_j0(x);
            assert!((got - want).abs() < 1e-10, "J0({x}) = {got}, want {want}");
        }
    }

    #[test]
    fn autocorr_examples() {
        let s = FadingSpec::rayleigh(0.05);
        assert_eq!(jakes_autocorr(&s, 0), Complex64::new(1.0, 0.0));
        // two-term series 1 - x²/4 + x⁴/64 - x⁶/2304 at x = 0.1π
        let x: f64 = 0.1 * PI;
        let series = 1.0 - x.powi(2) / 4.0 + x.powi(4) / 64.0 - x.powi(6) / 2304.0;
        assert!((jakes_autocorr(&s, 1).re - series).abs() < 1e-8);
        assert!((jakes_autocorr(&s, 1).re - 0.975_478).abs() < 1e-6);

        let mut r = FadingSpec::rician(0.05, 2.0);
        r.kind = FadingKind::Rician {
            k_factor: 2.0,
            f_los: Some(0.0),
            alpha0: 0.0,
        };
        let want = 2.0 / 3.0 + bessel_j0(PI / 2.0) / 3.0;
        assert!((jakes_autocorr(&r, 5) - Complex64::new(want, 0.0)).norm() < 1e-14);
        assert!((want - 0.824_000_405_256_078_2).abs() < 1e-10);
    }

    #[test]
    fn corr_matrix_examples() {
        assert_eq!(corr_matrix(&FadingSpec::rayleigh(0.05), 1), CMatrix::identity(1));
        let m = corr_matrix(&FadingSpec::rayleigh(0.05), 2);
        let r1 = bessel_j0(0.1 * PI);
        assert!((m[(0, 1)].re - r1).abs() < 1e-15 && (m[(1, 0)].re - r1).abs() < 1e-15);
        let m = corr_matrix(&FadingSpec::rayleigh(0.0), 3);
        assert!(m.data().iter().all(|&x| x == Complex64::new(1.0, 0.0)));
        assert!(corr_matrix(&FadingSpec::rician(0.03, 3.0), 6).is_hermitian(1e-12));
    }

    #[test]
    fn corr_vector_examples() {
        assert_eq!(corr_vector(&FadingSpec::rayleigh(0.0), 1, 1), vec![Complex64::new(1.0, 0.0)]);
        let v = corr_vector(&FadingSpec::rayleigh(0.05), 1, 2);
        assert!((v[0].re - bessel_j0(0.2 * PI)).abs() < 1e-15);
        assert!((v[1].re - bessel_j0(0.1 * PI)).abs() < 1e-15);
        assert_eq!(corr_vector(&FadingSpec::rayleigh(0.05), 2, 4).len(), 3);
    }

    #[test]
    fn static_channel_is_constant() {
        let t = generate_trace(&FadingSpec::rayleigh(0.0), 2, 2, 100, 7).unwrap();
        for n in 0..2 {
            for m in 0..2 {
                let s = t.pair_series(n, m);
                assert!(s.iter().all(|x| (x - s[0]).norm() < 1e-5));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = FadingSpec::rician(0.04, 1.5);
        let a = generate_trace(&spec, 2, 2, 100, 42).unwrap();
        let b = generate_trace(&spec, 2, 2, 100, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_trace(&spec, 2, 2, 100, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_out_of_range_doppler() {
        assert!(generate_trace(&FadingSpec::rayleigh(0.2), 1, 1, 10, 0).is_err());
        assert!(DopplerRangeSpec::new(0.05, 0.01).is_err());
    }

    #[test]
    fn speed_conversion() {
        // 60 m/s at 10 GHz with 50 µs sampling: 60·1e10·5e-5/3e8 = 0.1
        let r = DopplerRangeSpec::from_speeds(1.0, 60.0, 1e10, 5e-5).unwrap();
        assert!((r.rho_max - 0.1).abs() < 1e-15);
        assert!((r.midpoint() - (0.1 + 0.1 / 60.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let t = ChannelTrace::constant(1, 2, 2, Complex64::new(1.0, -0.5));
        let csv = t.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "rx,tx,k,re,im");
        assert_eq!(lines.len(), 1 + 4);
        assert!(lines[1].starts_with("0,0,0,"));
    }
}
