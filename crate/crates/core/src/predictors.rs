//! Model-based channel predictors: finite-window Wiener (one- and multi-step),
//! the AR(1) Kalman filter, and the constant-channel hold.
//!
//! Observations for one receive antenna over a window of `W` consecutive
//! samples are `y_j = Σ_m Ĉ[m, j]·h_m(j) + w_j`. Targets default to the
//! `steps` channel vectors immediately after the window; outputs are ordered
//! target-major then by transmit antenna.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fading::Autocorrelation;
use crate::linalg::{default_jitter, CMatrix, CVector, Cholesky};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Linear-MMSE predictor for a fixed decided-symbol window. The gain depends
/// only on `Ĉ`, the correlation and the noise level, so one context serves
/// every receive antenna.
#[derive(Clone, Debug)]
pub struct WienerContext {
    n_t: usize,
    window: usize,
    steps: usize,
    /// Window positions whose decided column is non-zero.
    kept: Vec<usize>,
    /// `(steps·n_t) × kept.len()`.
    gain: CMatrix,
    /// `(steps·n_t)²` joint prediction-error covariance.
    error_cov: CMatrix,
    u: CMatrix,
}

impl WienerContext {
    /// `decided` is `n_t × W`, column `j` being what was sent at window slot `j`.
    pub fn new(r: &impl Autocorrelation, decided: &CMatrix, sigma_w2: f64, steps: usize) -> Result<Self> {
        let w = decided.cols() as i64;
        let targets: Vec<i64> = (w..w + steps as i64).collect();
        Self::with_targets(r, decided, sigma_w2, &targets)
    }

    /// Conditional mean of the channel at arbitrary times (relative to the
    /// window start) given the window; times inside the window smooth.
    pub fn with_targets(r: &impl Autocorrelation, decided: &CMatrix, sigma_w2: f64, targets: &[i64]) -> Result<Self> {
        let (n_t, window, steps) = (decided.rows(), decided.cols(), targets.len());
        if window == 0 || steps == 0 || n_t == 0 {
            return Err(Error::BadDims(format!(
                "wiener needs a non-empty window and targets (n_t={n_t}, window={window}, targets={steps})"
            )));
        }
        let kept: Vec<usize> = (0..window)
            .filter(|&j| (0..n_t).any(|m| decided[(m, j)] != ZERO))
            .collect();
        let lag = |a: usize, b: usize| r.autocorr(a as i64 - b as i64);
        let n_obs = kept.len();

        let u = CMatrix::from_fn(n_obs, n_t * window, |a, col| {
            let (m, j) = (col / window, col % window);
            if j == kept[a] {
                decided[(m, j)]
            } else {
                ZERO
            }
        });
        // U·R^d·Uᴴ + σ²I with R^d = I_{n_t} ⊗ R_W, written out entrywise
        let mut cov_y = CMatrix::from_fn(n_obs, n_obs, |a, b| {
            let (ja, jb) = (kept[a], kept[b]);
            let corr = lag(ja, jb);
            (0..n_t).map(|m| decided[(m, ja)] * decided[(m, jb)].conj()).sum::<Complex64>() * corr
        });
        cov_y.add_diagonal(sigma_w2);

        let n_out = steps * n_t;
        // E{g yᴴ}: target (s, m) against observation b
        let cross = CMatrix::from_fn(n_out, n_obs, |row, b| {
            let (s, m) = (row / n_t, row % n_t);
            let jb = kept[b];
            decided[(m, jb)].conj() * r.autocorr(targets[s] - jb as i64)
        });
        let prior = CMatrix::from_fn(n_out, n_out, |a, b| {
            let (sa, ma) = (a / n_t, a % n_t);
            let (sb, mb) = (b / n_t, b % n_t);
            if ma == mb {
                r.autocorr(targets[sa] - targets[sb])
            } else {
                ZERO
            }
        });

        let (gain, error_cov) = if n_obs == 0 {
            (CMatrix::zeros(n_out, 0), prior)
        } else {
            // noiseless windows can be rank deficient (static channel)
            let chol = match Cholesky::new(&cov_y, 0.0) {
                Ok(ch) => ch,
                Err(_) if sigma_w2 == 0.0 => Cholesky::new(&cov_y, default_jitter(&cov_y))?,
                Err(e) => return Err(e),
            };
            // M⁻¹·crossᴴ, so gain = (M⁻¹·crossᴴ)ᴴ since M is Hermitian
            let solved = chol.solve(&cross.adjoint());
            let gain = solved.adjoint();
            let error_cov = &prior - &(&cross * &solved);
            (gain, error_cov)
        };
        Ok(Self {
            n_t,
            window,
            steps,
            kept,
            gain,
            error_cov,
            u,
        })
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// The stacked observation matrix `[diag(Ĉ_1) … diag(Ĉ_{n_t})]` with
    /// dropped rows removed.
    pub fn observation_matrix(&self) -> &CMatrix {
        &self.u
    }

    /// Estimates at the target times (each `n_t` long) from one antenna's `W`
    /// observations.
    pub fn predict(&self, y_window: &[Complex64]) -> Result<CVector> {
        if y_window.len() != self.window {
            return Err(Error::BadLength {
                expected: self.window,
                got: y_window.len(),
            });
        }
        let y: CVector = self.kept.iter().map(|&j| y_window[j]).collect();
        Ok(self.gain.mul_vec(&y))
    }

    /// Joint error covariance of all predicted coefficients.
    pub fn error_cov(&self) -> &CMatrix {
        &self.error_cov
    }
}

/// One-step Wiener prediction of `h(W)` for one receive antenna.
pub fn wiener_one_step(ctx: &WienerContext, y_window: &[Complex64]) -> Result<CVector> {
    let full = ctx.predict(y_window)?;
    Ok(full[..ctx.n_t].to_vec())
}

/// Joint prediction of the next `ctx.steps()` channel vectors.
pub fn wiener_k_step(ctx: &WienerContext, y_window: &[Complex64]) -> Result<CVector> {
    ctx.predict(y_window)
}

/// `n_t × n_t` error covariance of the one-step prediction.
pub fn wiener_mmse_cov(ctx: &WienerContext) -> CMatrix {
    let n = ctx.n_t;
    CMatrix::from_fn(n, n, |i, j| ctx.error_cov[(i, j)])
}

/// Kalman predictor for `h_{k+1} = a·h_k + v_k` observed through
/// `y_k = cᵀh_k + w_k`, one instance per receive antenna.
#[derive(Clone, Debug)]
pub struct KalmanState {
    /// `ĥ_{k|k-1}`.
    pub h_hat: CVector,
    pub sigma: CMatrix,
    pub a: Complex64,
    pub sigma_w2: f64,
    /// Stationary per-coefficient channel power.
    pub power: f64,
}

impl KalmanState {
    /// Zero-mean stationary prior.
    pub fn stationary(n_t: usize, a: Complex64, power: f64, sigma_w2: f64) -> Self {
        Self {
            h_hat: vec![ZERO; n_t],
            sigma: CMatrix::identity(n_t).scale(Complex64::new(power, 0.0)),
            a,
            sigma_w2,
            power,
        }
    }

    pub fn from_estimate(h_hat: CVector, sigma: CMatrix, a: Complex64, power: f64, sigma_w2: f64) -> Self {
        Self {
            h_hat,
            sigma,
            a,
            sigma_w2,
            power,
        }
    }

    pub fn n_t(&self) -> usize {
        self.h_hat.len()
    }
}

/// One predict-update cycle with gain `K = a·Σc*/(cᵀΣc* + σ²)` and process
/// noise `(1 - |a|²)·power·I`.
pub fn kalman_predict_update(state: &KalmanState, y: Complex64, decided_c: &[Complex64]) -> Result<KalmanState> {
    let n = state.n_t();
    if decided_c.len() != n {
        return Err(Error::BadLength {
            expected: n,
            got: decided_c.len(),
        });
    }
    let a = state.a;
    let cc: CVector = decided_c.iter().map(Complex64::conj).collect();
    let sc = state.sigma.mul_vec(&cc);
    let s = decided_c.iter().zip(&sc).map(|(c, v)| c * v).sum::<Complex64>().re + state.sigma_w2;
    if !(s > 0.0) {
        if decided_c.iter().all(|&c| c == ZERO) {
            // nothing observed: pure time update
            let h_hat = state.h_hat.iter().map(|h| a * h).collect();
            let mut sigma = state.sigma.scale(Complex64::new(a.norm_sqr(), 0.0));
            sigma.add_diagonal((1.0 - a.norm_sqr()) * state.power);
            return Ok(KalmanState {
                h_hat,
                sigma,
                ..state.clone()
            });
        }
        return Err(Error::NotPositiveDefinite { row: 0, pivot: s });
    }
    let innov = y - decided_c.iter().zip(&state.h_hat).map(|(c, h)| c * h).sum::<Complex64>();
    let h_hat = state
        .h_hat
        .iter()
        .zip(&sc)
        .map(|(h, v)| a * (h + v * innov / s))
        .collect();
    // Σ' = |a|²(Σ − Σc*cᵀΣ/S) + (1 − |a|²)·power·I, using Σc*(Σc*)ᴴ for the rank-1 term
    let a2 = a.norm_sqr();
    let mut sigma = CMatrix::from_fn(n, n, |i, j| (state.sigma[(i, j)] - sc[i] * sc[j].conj() / s) * a2);
    sigma.add_diagonal((1.0 - a2) * state.power);
    Ok(KalmanState {
        h_hat,
        sigma,
        ..state.clone()
    })
}

/// Fixed-window Kalman prediction: run a fresh filter over the window from
/// the stationary prior and extrapolate `ĥ_{W+s} = a^s·ĥ_{W|W-1}`. Output
/// layout matches [`WienerContext::predict`].
pub fn kalman_window_predict(
    a: Complex64,
    power: f64,
    sigma_w2: f64,
    decided: &CMatrix,
    y_window: &[Complex64],
    steps: usize,
) -> Result<CVector> {
    if y_window.len() != decided.cols() {
        return Err(Error::BadLength {
            expected: decided.cols(),
            got: y_window.len(),
        });
    }
    let mut state = KalmanState::stationary(decided.rows(), a, power, sigma_w2);
    for (j, &y) in y_window.iter().enumerate() {
        state = kalman_predict_update(&state, y, &decided.column(j))?;
    }
    let mut out = Vec::with_capacity(steps * state.n_t());
    let mut scale = Complex64::new(1.0, 0.0);
    for _ in 0..steps {
        out.extend(state.h_hat.iter().map(|h| scale * h));
        scale *= a;
    }
    Ok(out)
}

/// Zero-order hold: the next block reuses the last estimate.
pub fn cc_predict(last_block_estimate: &[Complex64]) -> CVector {
    last_block_estimate.to_vec()
}
