use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub fn relu<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter().map(|&v| relu_scalar(v)).collect()
}

#[inline]
pub(crate) fn relu_scalar<S: Scalar>(v: S) -> S {
    // NaN passes through so divergence stays visible downstream
    if v < S::zero() {
        S::zero()
    } else {
        v
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax<S: Scalar>(x: &[S]) -> Vec<S> {
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    out
}

pub(crate) fn softmax_in_place<S: Scalar>(x: &mut [S]) {
    let max = x.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in x.iter_mut() {
        *v /= total;
    }
}

/// `log Σ exp(x)`, or `-inf` for an empty slice.
pub(crate) fn log_sum_exp<S: Scalar>(x: impl Iterator<Item = S> + Clone) -> S {
    let max = x.clone().fold(S::neg_infinity(), S::max);
    if max == S::neg_infinity() {
        return max;
    }
    let total: S = x.map(|v| (v - max).exp()).sum();
    max + total.ln()
}

/// `log(exp(a) + exp(b))`.
#[inline]
pub(crate) fn log_add_exp<S: Scalar>(a: S, b: S) -> S {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == S::neg_infinity() {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

pub(crate) fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Inverted-dropout keep mask: each entry is `0` with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub(crate) fn dropout_mask<S: Scalar, R: Rng + ?Sized>(
    len: usize,
    rate: f64,
    rng: &mut R,
) -> Vec<S> {
    let keep = S::lit(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| {
            if rate > 0.0 && rng.random::<f64>() < rate {
                S::zero()
            } else {
                keep
            }
        })
        .collect()
}

/// Inverted dropout; identity in eval mode.
pub fn dropout<S: Scalar, R: Rng + ?Sized>(
    x: &[S],
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<S>> {
    check_dropout_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.to_vec());
    }
    let mask: Vec<S> = dropout_mask(x.len(), rate, rng);
    Ok(x.iter().zip(&mask).map(|(&v, &m)| v * m).collect())
}
