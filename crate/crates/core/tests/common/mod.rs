//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use ddce_core::decoder::{BlockDecoder, DEFAULT_SEARCH_BUDGET};
use ddce_core::linalg::CMatrix;
use ddce_core::modulation::{stbc_encode, Constellation, StbcCode};
use ddce_core::neural::{Activation, MlpModel, Normalization};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type C = Complex64;

pub fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

pub fn max_abs_diff(a: &[C], b: &[C]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Conditional mean of `h_m(t)` at `targets` given `y_j = Σ_m C[m, j]·h_m(j) + w_j`
/// for `j` in `0..W`, built from the full latent covariance with nalgebra.
/// Output is target-major, transmit-minor.
pub fn condition_gaussian(
    r: &dyn Fn(i64) -> C,
    decided: &CMatrix,
    sigma_w2: f64,
    targets: &[i64],
    y: &[C],
) -> (Vec<C>, DMatrix<C>) {
    let (n_t, w) = (decided.rows(), decided.cols());
    // latent times: window first, then targets
    let times: Vec<i64> = (0..w as i64).chain(targets.iter().copied()).collect();
    let n_z = n_t * times.len();
    let idx = |m: usize, slot: usize| slot * n_t + m;
    let k = DMatrix::from_fn(n_z, n_z, |a, b| {
        let (ma, sa) = (a % n_t, a / n_t);
        let (mb, sb) = (b % n_t, b / n_t);
        if ma == mb {
            r(times[sa] - times[sb])
        } else {
            c(0.0, 0.0)
        }
    });
    let mut obs = DMatrix::<C>::zeros(w, n_z);
    for j in 0..w {
        for m in 0..n_t {
            obs[(j, idx(m, j))] = decided[(m, j)];
        }
    }
    let mut sel = DMatrix::<C>::zeros(targets.len() * n_t, n_z);
    for s in 0..targets.len() {
        for m in 0..n_t {
            sel[(s * n_t + m, idx(m, w + s))] = c(1.0, 0.0);
        }
    }
    let cov_y = &obs * &k * obs.adjoint() + DMatrix::<C>::identity(w, w) * c(sigma_w2, 0.0);
    let cov_gy = &sel * &k * obs.adjoint();
    let inv = cov_y.try_inverse().expect("observation covariance is invertible");
    let gain = &cov_gy * &inv;
    let yv = DMatrix::from_column_slice(w, 1, y);
    let mean = &gain * yv;
    let err = &sel * &k * sel.adjoint() - &gain * cov_gy.adjoint();
    (mean.iter().copied().collect(), err)
}

/// Exhaustive decoding by direct metric evaluation on every label tuple.
pub struct NaiveDecision {
    pub labels: Vec<usize>,
    pub metric: f64,
    pub metrics: HashMap<Vec<usize>, f64>,
}

pub fn label_tuples(order: usize, n_s: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n_s {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..order).map(move |l| {
                    let mut q = p.clone();
                    q.push(l);
                    q
                })
            })
            .collect();
    }
    out
}

/// `h[n][m][q]` channel, `y[q][n]` observations.
fn noiseless_mean(code: StbcCode, cons: &Constellation, labels: &[usize], h: &[Vec<Vec<C>>]) -> Vec<Vec<C>> {
    let s: Vec<C> = labels.iter().map(|&l| cons.points()[l]).collect();
    let cm = stbc_encode(code, &s).unwrap();
    let n_r = h.len();
    (0..code.n_x())
        .map(|q| {
            (0..n_r)
                .map(|n| (0..code.n_t()).map(|m| cm[(m, q)] * h[n][m][q]).sum())
                .collect()
        })
        .collect()
}

pub fn naive_decode(
    code: StbcCode,
    cons: &Constellation,
    y: &[Vec<C>],
    h: &[Vec<Vec<C>>],
    gaussian_sigma: Option<f64>,
) -> NaiveDecision {
    let mut metrics = HashMap::new();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for labels in label_tuples(cons.order(), code.n_s()) {
        let mu = noiseless_mean(code, cons, &labels, h);
        let flat_mu: Vec<C> = mu.iter().flatten().copied().collect();
        let flat_y: Vec<C> = y.iter().flatten().copied().collect();
        let metric = match gaussian_sigma {
            None => flat_mu.iter().zip(&flat_y).map(|(a, b)| (a - b).norm_sqr()).sum(),
            Some(s2) => {
                let d = flat_y.len();
                let m = DMatrix::from_column_slice(d, 1, &flat_mu);
                let gamma = &m * m.adjoint() + DMatrix::<C>::identity(d, d) * c(s2, 0.0);
                let yv = DMatrix::from_column_slice(d, 1, &flat_y);
                let quad = (yv.adjoint() * gamma.clone().try_inverse().unwrap() * &yv)[(0, 0)].re;
                quad + gamma.determinant().re.ln()
            }
        };
        metrics.insert(labels.clone(), metric);
        if best.as_ref().is_none_or(|(_, b)| metric < *b) {
            best = Some((labels, metric));
        }
    }
    let (labels, metric) = best.unwrap();
    NaiveDecision { labels, metric, metrics }
}

/// Evaluates an integer polynomial over named variables. Grammar: sums and
/// differences of products of factors; a factor is an integer, a variable, or
/// a parenthesized expression, optionally raised to a small integer power.
pub fn eval_poly(expr: &str, vars: &HashMap<&str, i128>) -> i128 {
    let tokens: Vec<char> = expr.chars().filter(|c| !c.is_whitespace()).collect();
    let mut pos = 0;
    let v = sum(&tokens, &mut pos, vars);
    assert_eq!(pos, tokens.len(), "trailing input in {expr:?}");
    v
}

fn sum(t: &[char], pos: &mut usize, vars: &HashMap<&str, i128>) -> i128 {
    let mut acc = product(t, pos, vars);
    while *pos < t.len() && (t[*pos] == '+' || t[*pos] == '-') {
        let op = t[*pos];
        *pos += 1;
        let rhs = product(t, pos, vars);
        acc = if op == '+' { acc + rhs } else { acc - rhs };
    }
    acc
}

fn product(t: &[char], pos: &mut usize, vars: &HashMap<&str, i128>) -> i128 {
    let mut acc = power(t, pos, vars);
    while *pos < t.len() && t[*pos] == '*' {
        *pos += 1;
        acc *= power(t, pos, vars);
    }
    acc
}

fn power(t: &[char], pos: &mut usize, vars: &HashMap<&str, i128>) -> i128 {
    let base = atom(t, pos, vars);
    if *pos < t.len() && t[*pos] == '^' {
        *pos += 1;
        let e = atom(t, pos, vars);
        return base.pow(e as u32);
    }
    base
}

fn atom(t: &[char], pos: &mut usize, vars: &HashMap<&str, i128>) -> i128 {
    let ch = t[*pos];
    if ch == '(' {
        *pos += 1;
        let v = sum(t, pos, vars);
        assert_eq!(t[*pos], ')');
        *pos += 1;
        v
    } else if ch.is_ascii_digit() {
        let start = *pos;
        while *pos < t.len() && t[*pos].is_ascii_digit() {
            *pos += 1;
        }
        t[start..*pos].iter().collect::<String>().parse().unwrap()
    } else {
        let start = *pos;
        while *pos < t.len() && (t[*pos].is_ascii_alphanumeric() || t[*pos] == '_') {
            *pos += 1;
        }
        let name: String = t[start..*pos].iter().collect();
        *vars.get(name.as_str()).unwrap_or_else(|| panic!("unknown variable {name}"))
    }
}

/// Table formulas transcribed as text; `g` is bound separately.
pub const FLOP_TEXT: [(&str, &str); 4] = [
    (
        "dd-wiener",
        "nr*nx*(g + 3*g^3 + 5*g^2 + 4*(np-1)*nt + 6*nt*(np-1)^3 + 4*nt*(np-1)^2 - 2*nt*(np-1))",
    ),
    (
        "dd-cc",
        "np*(3*np + 2*np*nt - 2*nr*nt + 4*np*nt^2 + 6*np^2*nt + 3*np^2 + 6*np*nr*nt + 1)",
    ),
    (
        "dd-ar1",
        "np*(3*np + 2*np*nt - 2*nr*nt + 4*np*nt^2 + 6*np^2*nt + 3*np^2 + 6*np*nr*nx + nr*nt*nt + 1)",
    ),
    (
        "dl-dd",
        "np*(3*np + 2*np*nt - 2*nr*nt + 4*np*nt^2 + 6*np^2*nt + 3*np^2 + 6*np*nr*np + 1) + 512*(nt*nr*(nx+np)+128)",
    ),
];

pub fn flop_oracle(name: &str, nt: i128, nr: i128, nx: i128, np: i128) -> i128 {
    let mut vars: HashMap<&str, i128> = [("nt", nt), ("nr", nr), ("nx", nx), ("np", np)].into_iter().collect();
    let g = eval_poly("(np-1)^2*(6*nt-2)+(np-1)", &vars);
    vars.insert("g", g);
    let text = FLOP_TEXT.iter().find(|(n, _)| *n == name).unwrap().1;
    eval_poly(text, &vars)
}

pub fn cgauss(rng: &mut impl Rng, var: f64) -> C {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    c(re * s, im * s)
}

pub fn qpsk(rng: &mut impl Rng) -> C {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    c(if rng.random() { h } else { -h }, if rng.random() { h } else { -h })
}

/// Runs both exhaustive decoders on random noisy blocks and compares them with
/// [`naive_decode`]. Ties (the Gaussian metric cannot tell `s` from `-s`) are
/// accepted when the metrics agree.
pub fn decoder_agreement(code: StbcCode, order: usize, blocks: usize, seed: u64) -> Result<(), String> {
    let cons = Constellation::qam(order).unwrap();
    let dec = BlockDecoder::new(code, &cons, DEFAULT_SEARCH_BUDGET).unwrap();
    let (n_t, n_x, n_r) = (code.n_t(), code.n_x(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..blocks {
        let h: Vec<Vec<Vec<C>>> = (0..n_r)
            .map(|_| (0..n_t).map(|_| (0..n_x).map(|_| cgauss(&mut rng, 1.0)).collect()).collect())
            .collect();
        let sigma = rng.random_range(0.05..1.0);
        let labels: Vec<usize> = (0..code.n_s()).map(|_| rng.random_range(0..order)).collect();
        let s: Vec<C> = labels.iter().map(|&l| cons.points()[l]).collect();
        let cm = stbc_encode(code, &s).unwrap();
        let y: Vec<Vec<C>> = (0..n_x)
            .map(|q| {
                (0..n_r)
                    .map(|n| (0..n_t).map(|m| cm[(m, q)] * h[n][m][q]).sum::<C>() + cgauss(&mut rng, sigma))
                    .collect()
            })
            .collect();
        let y_tilde: Vec<C> = y.iter().flatten().copied().collect();
        let upsilon: Vec<C> = (0..n_x)
            .flat_map(|q| (0..n_r).flat_map(move |n| (0..n_t).map(move |m| (q, n, m))))
            .map(|(q, n, m)| h[n][m][q])
            .collect();
        for gaussian in [None, Some(sigma)] {
            let naive = naive_decode(code, &cons, &y, &h, gaussian);
            let got = match gaussian {
                None => dec.ls_euclidean(&y_tilde, &upsilon).unwrap(),
                Some(s2) => dec.ml_gaussian(&y_tilde, &upsilon, s2).unwrap(),
            };
            let got_metric = naive.metrics[&got.labels];
            let tol = 1e-9 * naive.metric.abs().max(1.0);
            if got.labels != naive.labels && (got_metric - naive.metric).abs() >= tol {
                return Err(format!(
                    "{code} gaussian={gaussian:?}: {:?} ({got_metric}) vs naive {:?} ({})",
                    got.labels, naive.labels, naive.metric
                ));
            }
        }
    }
    Ok(())
}

fn param_mut(model: &mut MlpModel, layer: usize, which: usize, i: usize) -> &mut f64 {
    if which == 0 {
        &mut model.layers[layer].w[i]
    } else {
        &mut model.layers[layer].b[i]
    }
}

fn loss(model: &MlpModel, x: &[f64], t: &[f64]) -> f64 {
    let y = model.forward(x).unwrap();
    0.5 * y.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
}

/// Central differences against backprop on random models, rejecting inputs
/// whose hidden pre-activations sit within `margin` of a kink.
pub fn gradient_check(models: usize, act: Activation, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = 1e-5;
    let margin = 1e-3;
    let mut worst: f64 = 0.0;
    for _ in 0..models {
        let dims = vec![
            rng.random_range(2..8),
            rng.random_range(3..12),
            rng.random_range(3..12),
            rng.random_range(1..5),
        ];
        let norm = Normalization {
            shift: rng.random_range(-1.0..1.0),
            scale: rng.random_range(0.5..2.0),
        };
        let mut model = MlpModel::new(&dims, act, norm, &mut rng).unwrap();
        let (x, t) = loop {
            let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
            let pre = model.hidden_preactivations(&x).unwrap();
            let clear = pre.iter().flatten().all(|a| act.kinks().iter().all(|k| (a - k).abs() > margin));
            if clear {
                let t: Vec<f64> = (0..dims[3]).map(|_| rng.random_range(-1.0..1.0)).collect();
                break (x, t);
            }
        };
        let (_, grads) = model.backward(&x, &t).unwrap();
        for l in 0..model.layers.len() {
            for which in 0..2 {
                let count = if which == 0 { model.layers[l].w.len() } else { model.layers[l].b.len() };
                for i in 0..count {
                    let orig = *param_mut(&mut model, l, which, i);
                    *param_mut(&mut model, l, which, i) = orig + step;
                    let up = loss(&model, &x, &t);
                    *param_mut(&mut model, l, which, i) = orig - step;
                    let down = loss(&model, &x, &t);
                    *param_mut(&mut model, l, which, i) = orig;
                    let numeric = (up - down) / (2.0 * step);
                    let analytic = if which == 0 { grads.w[l][i] } else { grads.b[l][i] };
                    let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                    worst = worst.max(rel);
                }
            }
        }
    }
    worst
}

