//! Gray-mapped square QAM, the space-time block codes, pilots and packets.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt::{self, Write as _};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fading::{complex_gaussian, ChannelTrace};
use crate::linalg::{CMatrix, CVector};

/// Square QAM with unit average energy and a per-axis Gray labelling.
///
/// A label's first half of bits selects the in-phase level, the second half
/// the quadrature level. Bit `0` on an axis maps to the most positive level,
/// so 4-QAM is `(b0, b1) → ((1 - 2·b0) + i·(1 - 2·b1)) / √2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Constellation {
    order: usize,
    bits_per_symbol: usize,
    points: Vec<Complex64>,
}

impl Constellation {
    pub fn qam(order: usize) -> Result<Self> {
        let bits_per_symbol = order.trailing_zeros() as usize;
        if !order.is_power_of_two() || bits_per_symbol == 0 || bits_per_symbol % 2 != 0 {
            return Err(Error::InvalidParameter(format!("unsupported QAM order {order}")));
        }
        let half = bits_per_symbol / 2;
        let side = 1usize << half;
        let norm = (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
        let level = |gray: usize| {
            let idx = gray_to_binary(gray);
            (side as f64 - 1.0 - 2.0 * idx as f64) / norm
        };
        let points = (0..order)
            .map(|label| Complex64::new(level(label >> half), level(label & (side - 1))))
            .collect();
        Ok(Self {
            order,
            bits_per_symbol,
            points,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    /// Points indexed by their integer label.
    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn label_bits(&self, label: usize) -> impl Iterator<Item = u8> + '_ {
        (0..self.bits_per_symbol).rev().map(move |i| ((label >> i) & 1) as u8)
    }

    pub fn nearest_label(&self, z: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    pub fn label_of(&self, point: Complex64) -> usize {
        self.nearest_label(point)
    }
}

fn gray_to_binary(mut g: usize) -> usize {
    let mut b = 0;
    while g != 0 {
        b ^= g;
        g >>= 1;
    }
    b
}

pub fn qam_mod(constellation: &Constellation, bits: &[u8]) -> Result<Vec<Complex64>> {
    let k = constellation.bits_per_symbol();
    if bits.len() % k != 0 {
        return Err(Error::BadLength {
            expected: bits.len().div_ceil(k) * k,
            got: bits.len(),
        });
    }
    Ok(bits
        .chunks(k)
        .map(|chunk| {
            let label = chunk.iter().fold(0usize, |acc, &b| (acc << 1) | usize::from(b & 1));
            constellation.points[label]
        })
        .collect())
}

pub fn qam_demod_hard(constellation: &Constellation, symbols: &[Complex64]) -> Vec<u8> {
    symbols
        .iter()
        .flat_map(|&z| constellation.label_bits(constellation.nearest_label(z)).collect::<Vec<_>>())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StbcCode {
    /// Rate-1 two-antenna orthogonal design.
    Alamouti,
    /// Rate-3/4 three-antenna design with √2-scaled entries.
    Tarokh34,
    /// Rate-3/4 three-antenna design with unscaled entries.
    Rate34,
    /// One independent symbol per antenna per slot.
    SpatialMux { n_t: usize },
}

impl StbcCode {
    pub fn n_t(&self) -> usize {
        match self {
            Self::Alamouti => 2,
            Self::Tarokh34 | Self::Rate34 => 3,
            Self::SpatialMux { n_t } => *n_t,
        }
    }

    /// Time slots per block.
    pub fn n_x(&self) -> usize {
        match self {
            Self::Alamouti => 2,
            Self::Tarokh34 | Self::Rate34 => 4,
            Self::SpatialMux { .. } => 1,
        }
    }

    /// Information symbols per block.
    pub fn n_s(&self) -> usize {
        match self {
            Self::Alamouti => 2,
            Self::Tarokh34 | Self::Rate34 => 3,
            Self::SpatialMux { n_t } => *n_t,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Alamouti => "alamouti".into(),
            Self::Tarokh34 => "tarokh34".into(),
            Self::Rate34 => "rate34".into(),
            Self::SpatialMux { n_t } => format!("smux{n_t}"),
        }
    }

    pub fn parse(name: &str, n_t: usize) -> Option<Self> {
        match name {
            "alamouti" => Some(Self::Alamouti),
            "tarokh34" => Some(Self::Tarokh34),
            "rate34" => Some(Self::Rate34),
            "smux" | "spatial-mux" => Some(Self::SpatialMux { n_t }),
            _ => {
                let n_t: usize = name.strip_prefix("smux")?.parse().ok()?;
                (n_t > 0).then_some(Self::SpatialMux { n_t })
            }
        }
    }
}

impl fmt::Display for StbcCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Maps `N_s` symbols to the `n_t × n_x` code matrix; column `q` is what the
/// antennas send in slot `q`.
pub fn stbc_encode(code: StbcCode, s: &[Complex64]) -> Result<CMatrix> {
    if s.len() != code.n_s() {
        return Err(Error::BadLength {
            expected: code.n_s(),
            got: s.len(),
        });
    }
    let z = Complex64::new(0.0, 0.0);
    // rows below are slots (the transposed layout), transposed at the end
    let slots: Vec<Vec<Complex64>> = match code {
        StbcCode::Alamouti => {
            let (s1, s2) = (s[0], s[1]);
            vec![vec![s1, s2], vec![-s2.conj(), s1.conj()]]
        }
        StbcCode::Tarokh34 => {
            let (s1, s2, s3) = (s[0], s[1], s[2]);
            let r = FRAC_1_SQRT_2;
            vec![
                vec![s1, s2, s3 * r],
                vec![-s2.conj(), s1.conj(), s3 * r],
                vec![s3.conj() * r, s3.conj() * r, (-s1 - s1.conj() + s2 - s2.conj()) * 0.5],
                vec![s3.conj() * r, -s3.conj() * r, (s2 + s2.conj() + s1 - s1.conj()) * 0.5],
            ]
        }
        StbcCode::Rate34 => {
            let (s1, s2, s3) = (s[0], s[1], s[2]);
            vec![
                vec![s1, s2, s3],
                vec![-s2.conj(), s1.conj(), z],
                vec![s3.conj(), z, s1.conj()],
                vec![z, -s3.conj(), s2.conj()],
            ]
        }
        StbcCode::SpatialMux { .. } => vec![s.to_vec()],
    };
    Ok(CMatrix::from_rows(&slots).transpose())
}

/// Rows `⌊m·n_p/n_t⌋` of the `n_p`-point DFT matrix, so `P·Pᴴ = n_p·I`.
///
/// Spreading the rows across the DFT puts each antenna's pilot at its own
/// frequency offset. Adjacent rows would shift antenna 2 by only `1/n_p`,
/// which overlaps the Doppler band of antenna 1 once `ρ > 1/(2·n_p)`.
pub fn build_pilot(n_t: usize, n_p: usize) -> Result<CMatrix> {
    if n_p < n_t {
        return Err(Error::BadDims(format!("pilot length {n_p} shorter than {n_t} antennas")));
    }
    Ok(CMatrix::from_fn(n_t, n_p, |m, k| {
        let row = m * n_p / n_t;
        let phase = -2.0 * PI * ((row * k) % n_p) as f64 / n_p as f64;
        let mut p = Complex64::from_polar(1.0, phase);
        // snap the exact ±1, ±i cases so small pilots are exact
        for v in [&mut p.re, &mut p.im] {
            if v.abs() < 1e-15 {
                *v = 0.0;
            }
        }
        p
    }))
}

#[derive(Clone, Debug)]
pub struct Packet {
    pub code: StbcCode,
    /// `n_t × L` transmitted matrix `[P, C̄_1, …, C̄_{n_b}]`.
    pub c: CMatrix,
    pub pilot: CMatrix,
    pub blocks: Vec<CMatrix>,
    pub symbols: Vec<Vec<Complex64>>,
    pub bits: Vec<u8>,
}

impl Packet {
    pub fn n_p(&self) -> usize {
        self.pilot.cols()
    }

    pub fn n_b(&self) -> usize {
        self.blocks.len()
    }

    pub fn len(&self) -> usize {
        self.c.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.c.cols() == 0
    }

    /// CSV with header `tx,k,re,im`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tx,k,re,im\n");
        for m in 0..self.c.rows() {
            for k in 0..self.c.cols() {
                let v = self.c[(m, k)];
                let _ = writeln!(out, "{m},{k},{:.17e},{:.17e}", v.re, v.im);
            }
        }
        out
    }
}

pub fn bits_per_packet(code: StbcCode, constellation: &Constellation, n_b: usize) -> usize {
    n_b * code.n_s() * constellation.bits_per_symbol()
}

pub fn random_bits(n: usize, rng: &mut impl Rng) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..2u8)).collect()
}

pub fn build_packet(
    code: StbcCode,
    constellation: &Constellation,
    n_b: usize,
    n_p: usize,
    bits: &[u8],
) -> Result<Packet> {
    let expected = bits_per_packet(code, constellation, n_b);
    if bits.len() != expected {
        return Err(Error::BadLength {
            expected,
            got: bits.len(),
        });
    }
    let pilot = build_pilot(code.n_t(), n_p)?;
    let symbols_flat = qam_mod(constellation, bits)?;
    let symbols: Vec<Vec<Complex64>> = symbols_flat.chunks(code.n_s()).map(<[_]>::to_vec).collect();
    let blocks = symbols
        .iter()
        .map(|s| stbc_encode(code, s))
        .collect::<Result<Vec<_>>>()?;
    let len = n_p + n_b * code.n_x();
    let mut c = CMatrix::zeros(code.n_t(), len);
    for m in 0..code.n_t() {
        for k in 0..n_p {
            c[(m, k)] = pilot[(m, k)];
        }
        for (i, b) in blocks.iter().enumerate() {
            for q in 0..code.n_x() {
                c[(m, n_p + i * code.n_x() + q)] = b[(m, q)];
            }
        }
    }
    Ok(Packet {
        code,
        c,
        pilot,
        blocks,
        symbols,
        bits: bits.to_vec(),
    })
}

/// Baseband samples `y[n][k]` at every receive antenna.
#[derive(Clone, Debug, PartialEq)]
pub struct Received {
    n_r: usize,
    len: usize,
    y: Vec<Complex64>,
}

impl Received {
    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, n: usize, k: usize) -> Complex64 {
        self.y[n * self.len + k]
    }

    /// All receive antennas at time `k`.
    pub fn at(&self, k: usize) -> CVector {
        (0..self.n_r).map(|n| self.get(n, k)).collect()
    }

    /// `y[n][k0 .. k0 + count]`.
    pub fn rx_window(&self, n: usize, k0: usize, count: usize) -> &[Complex64] {
        &self.y[n * self.len + k0..n * self.len + k0 + count]
    }
}

/// Noise variance for an SNR in dB with unit average symbol energy.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// `y_k^(n) = C[:,k]ᵀ·h_k^(n) + w_k^(n)` with `w ~ CN(0, σ_w²)`.
pub fn apply_channel(c: &CMatrix, trace: &ChannelTrace, sigma_w2: f64, seed: u64) -> Result<Received> {
    if trace.n_t() != c.rows() || trace.len() < c.cols() {
        return Err(Error::DimMismatch(format!(
            "packet is {}x{}, trace has {} tx and {} samples",
            c.rows(),
            c.cols(),
            trace.n_t(),
            trace.len()
        )));
    }
    let (n_r, len) = (trace.n_r(), c.cols());
    let sigma = sigma_w2.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Vec::with_capacity(n_r * len);
    for n in 0..n_r {
        for k in 0..len {
            let clean: Complex64 = (0..c.rows()).map(|m| c[(m, k)] * trace.get(n, m, k)).sum();
            let w = if sigma > 0.0 {
                complex_gaussian(&mut rng) * sigma
            } else {
                Complex64::new(0.0, 0.0)
            };
            y.push(clean + w);
        }
    }
    Ok(Received { n_r, len, y })
}
