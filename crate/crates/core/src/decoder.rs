//! Exhaustive-search STBC block decoders driven by per-slot channel
//! predictions.
//!
//! A block observation `ỹ` is slot-major then receive antenna (`n_r·n_x`
//! entries); the channel block `Υ` is slot-major, then receive antenna, then
//! transmit antenna (`n_t·n_r·n_x` entries).

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::modulation::{stbc_encode, Constellation, StbcCode};

pub const DEFAULT_SEARCH_BUDGET: u128 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DecoderKind {
    /// Zero-mean Gaussian metric `ỹᴴΓ⁻¹ỹ + ln|Γ|`.
    MlGaussian,
    /// `‖ỹ - E(s)·Υ‖²`.
    LsEuclidean,
    /// Conjugate-rearranged least squares, Alamouti only.
    AlamoutiLs,
}

impl DecoderKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::MlGaussian => "ml-gaussian",
            Self::LsEuclidean => "ls-euclidean",
            Self::AlamoutiLs => "alamouti-ls",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ml-gaussian" => Some(Self::MlGaussian),
            "ls-euclidean" => Some(Self::LsEuclidean),
            "alamouti-ls" => Some(Self::AlamoutiLs),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    /// Enumeration index of the winning candidate.
    pub candidate: usize,
    /// Constellation label of each information symbol.
    pub labels: Vec<usize>,
    pub symbols: Vec<Complex64>,
    pub metric: f64,
}

/// `bdiag_q(I_{n_r} ⊗ C[:, q]ᵀ)`, so that `E·Υ` is the noiseless observation.
pub fn build_block_matrix(code_matrix: &CMatrix, n_r: usize) -> CMatrix {
    let (n_t, n_x) = (code_matrix.rows(), code_matrix.cols());
    let mut e = CMatrix::zeros(n_r * n_x, n_t * n_r * n_x);
    for q in 0..n_x {
        for n in 0..n_r {
            for m in 0..n_t {
                e[(q * n_r + n, q * n_r * n_t + n * n_t + m)] = code_matrix[(m, q)];
            }
        }
    }
    e
}

/// Number of candidates an exhaustive search visits.
pub fn search_size(code: StbcCode, constellation: &Constellation) -> u128 {
    (constellation.order() as u128).saturating_pow(code.n_s() as u32)
}

/// All candidate code matrices for one code and constellation, enumerated with
/// the first symbol as the most significant digit.
#[derive(Clone, Debug)]
pub struct BlockDecoder {
    code: StbcCode,
    order: usize,
    points: Vec<Complex64>,
    candidates: Vec<CMatrix>,
}

impl BlockDecoder {
    pub fn new(code: StbcCode, constellation: &Constellation, budget: u128) -> Result<Self> {
        let size = search_size(code, constellation);
        if size > budget {
            return Err(Error::SearchBudgetExceeded {
                candidates: size,
                budget,
            });
        }
        let order = constellation.order();
        let points = constellation.points().to_vec();
        let n_s = code.n_s();
        let candidates = (0..size as usize)
            .map(|c| {
                let s: Vec<Complex64> = candidate_labels(c, order, n_s).into_iter().map(|l| points[l]).collect();
                stbc_encode(code, &s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            code,
            order,
            points,
            candidates,
        })
    }

    pub fn code(&self) -> StbcCode {
        self.code
    }

    pub fn candidates(&self) -> &[CMatrix] {
        &self.candidates
    }

    fn check(&self, y_tilde: &[Complex64], upsilon: &[Complex64]) -> Result<usize> {
        let (n_t, n_x) = (self.code.n_t(), self.code.n_x());
        if y_tilde.len() % n_x != 0 || y_tilde.is_empty() {
            return Err(Error::BadLength {
                expected: n_x * (y_tilde.len() / n_x).max(1),
                got: y_tilde.len(),
            });
        }
        let n_r = y_tilde.len() / n_x;
        if upsilon.len() != n_t * n_r * n_x {
            return Err(Error::BadLength {
                expected: n_t * n_r * n_x,
                got: upsilon.len(),
            });
        }
        Ok(n_r)
    }

    /// `E(s)·Υ` without forming `E`.
    fn mean(&self, c: &CMatrix, upsilon: &[Complex64], n_r: usize, out: &mut Vec<Complex64>) {
        let n_t = c.rows();
        out.clear();
        for q in 0..c.cols() {
            for n in 0..n_r {
                let base = q * n_r * n_t + n * n_t;
                out.push((0..n_t).map(|m| c[(m, q)] * upsilon[base + m]).sum());
            }
        }
    }

    fn argmin(&self, mut metric: impl FnMut(&CMatrix) -> f64) -> Decision {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.candidates.iter().enumerate() {
            let v = metric(c);
            if v < best.1 {
                best = (i, v);
            }
        }
        let labels = candidate_labels(best.0, self.order, self.code.n_s());
        Decision {
            candidate: best.0,
            symbols: labels.iter().map(|&l| self.points[l]).collect(),
            labels,
            metric: best.1,
        }
    }

    /// Minimizes `ỹᴴΓ⁻¹ỹ + ln|Γ|` with `Γ = μμᴴ + σ²I`, `μ = E(s)·Υ`, using
    /// the rank-one inverse and determinant identities.
    pub fn ml_gaussian(&self, y_tilde: &[Complex64], upsilon: &[Complex64], sigma_w2: f64) -> Result<Decision> {
        let n_r = self.check(y_tilde, upsilon)?;
        if !(sigma_w2 > 0.0) {
            return Err(Error::InvalidParameter(format!("Gaussian metric needs sigma_w2 > 0, got {sigma_w2}")));
        }
        let dim = y_tilde.len() as f64;
        let y2: f64 = y_tilde.iter().map(Complex64::norm_sqr).sum();
        let mut mu = Vec::with_capacity(y_tilde.len());
        Ok(self.argmin(|c| {
            self.mean(c, upsilon, n_r, &mut mu);
            let m2: f64 = mu.iter().map(Complex64::norm_sqr).sum();
            let proj: Complex64 = mu.iter().zip(y_tilde).map(|(a, y)| a.conj() * y).sum();
            let quad = (y2 - proj.norm_sqr() / (sigma_w2 + m2)) / sigma_w2;
            quad + dim * sigma_w2.ln() + (m2 / sigma_w2).ln_1p()
        }))
    }

    pub fn ls_euclidean(&self, y_tilde: &[Complex64], upsilon: &[Complex64]) -> Result<Decision> {
        let n_r = self.check(y_tilde, upsilon)?;
        let mut mu = Vec::with_capacity(y_tilde.len());
        Ok(self.argmin(|c| {
            self.mean(c, upsilon, n_r, &mut mu);
            mu.iter().zip(y_tilde).map(|(a, y)| (y - a).norm_sqr()).sum()
        }))
    }

    /// Per receive antenna, `y̆ = [y₁; y₂*]` against
    /// `B = [[h₁(1), h₂(1)], [h₂(2)*, -h₁(2)*]]`, minimizing `‖y̆ - B·s‖²`.
    pub fn alamouti_ls(&self, y_tilde: &[Complex64], upsilon: &[Complex64]) -> Result<Decision> {
        if self.code != StbcCode::Alamouti {
            return Err(Error::WrongCode(self.code.name()));
        }
        let n_r = self.check(y_tilde, upsilon)?;
        let mut y_breve = Vec::with_capacity(2 * n_r);
        let mut b = Vec::with_capacity(2 * n_r);
        for n in 0..n_r {
            let h1 = |q: usize| upsilon[q * n_r * 2 + n * 2];
            let h2 = |q: usize| upsilon[q * n_r * 2 + n * 2 + 1];
            y_breve.push(y_tilde[n]);
            b.push([h1(0), h2(0)]);
            y_breve.push(y_tilde[n_r + n].conj());
            b.push([h2(1).conj(), -h1(1).conj()]);
        }
        let (order, points) = (self.order, &self.points);
        let mut best = (0, f64::INFINITY);
        for c in 0..order * order {
            let s = [points[c / order], points[c % order]];
            let v: f64 = y_breve
                .iter()
                .zip(&b)
                .map(|(y, row)| (y - row[0] * s[0] - row[1] * s[1]).norm_sqr())
                .sum();
            if v < best.1 {
                best = (c, v);
            }
        }
        let labels = candidate_labels(best.0, order, 2);
        Ok(Decision {
            candidate: best.0,
            symbols: labels.iter().map(|&l| points[l]).collect(),
            labels,
            metric: best.1,
        })
    }

    pub fn decode(
        &self,
        kind: DecoderKind,
        y_tilde: &[Complex64],
        upsilon: &[Complex64],
        sigma_w2: f64,
    ) -> Result<Decision> {
        match kind {
            DecoderKind::MlGaussian => self.ml_gaussian(y_tilde, upsilon, sigma_w2),
            DecoderKind::LsEuclidean => self.ls_euclidean(y_tilde, upsilon),
            DecoderKind::AlamoutiLs => self.alamouti_ls(y_tilde, upsilon),
        }
    }
}

/// Constellation labels of candidate `index`, first symbol most significant.
pub fn candidate_labels(index: usize, order: usize, n_s: usize) -> Vec<usize> {
    let mut labels = vec![0; n_s];
    let mut rest = index;
    for slot in labels.iter_mut().rev() {
        *slot = rest % order;
        rest /= order;
    }
    labels
}

pub fn decode_ml_gaussian(
    y_tilde: &[Complex64],
    upsilon: &[Complex64],
    sigma_w2: f64,
    code: StbcCode,
    constellation: &Constellation,
) -> Result<Decision> {
    BlockDecoder::new(code, constellation, DEFAULT_SEARCH_BUDGET)?.ml_gaussian(y_tilde, upsilon, sigma_w2)
}

pub fn decode_ls_euclidean(
    y_tilde: &[Complex64],
    upsilon: &[Complex64],
    code: StbcCode,
    constellation: &Constellation,
) -> Result<Decision> {
    BlockDecoder::new(code, constellation, DEFAULT_SEARCH_BUDGET)?.ls_euclidean(y_tilde, upsilon)
}

pub fn decode_alamouti_ls(
    y_tilde: &[Complex64],
    upsilon: &[Complex64],
    code: StbcCode,
    constellation: &Constellation,
) -> Result<Decision> {
    if code != StbcCode::Alamouti {
        return Err(Error::WrongCode(code.name()));
    }
    BlockDecoder::new(code, constellation, DEFAULT_SEARCH_BUDGET)?.alamouti_ls(y_tilde, upsilon)
}
