//! Supervised contrastive loss over a labelled batch of embeddings.
//!
//! For each anchor `i` the loss term is
//!
//! ```text
//! t_i = log( Σ_{j∈P(i)} exp(sim_ij / τ) / ( Σ_{k∈N(i)} exp(sim_ik / τ) + ε ) )
//! L   = -(1/N) Σ_i t_i
//! ```
//!
//! where `P(i)` are the other same-class rows, `N(i)` the different-class rows
//! and `sim` is cosine similarity. Only negatives appear in the denominator, so
//! the loss can be negative. Anchors without positives contribute `t_i = 0` but
//! still count towards `N`. With no negatives the denominator is exactly `ε`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::{log_add_exp, log_sum_exp};
use crate::nn::Matrix;
use crate::scalar::Scalar;

/// Norm below which an embedding is treated as zero (similarity 0).
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupConConfig {
    /// Temperature.
    pub tau: f64,
    /// Stability constant added to the negative sum.
    pub eps: f64,
}

impl Default for SupConConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            eps: 1e-8,
        }
    }
}

impl SupConConfig {
    pub fn new(tau: f64, eps: f64) -> Result<Self> {
        let cfg = Self { tau, eps };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Cosine similarity; `0` when either vector has (near-)zero norm.
pub fn cosine_sim<S: Scalar>(u: &[S], v: &[S]) -> Result<S> {
    if u.len() != v.len() {
        return Err(Error::Dimension(format!(
            "cosine similarity of lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = norm(u);
    let nv = norm(v);
    let tiny = S::lit(ZERO_NORM);
    if nu < tiny || nv < tiny {
        return Ok(S::zero());
    }
    let d: S = u.iter().zip(v).map(|(&a, &b)| a * b).sum();
    Ok((d / (nu * nv)).max(-S::one()).min(S::one()))
}

fn norm<S: Scalar>(x: &[S]) -> S {
    x.iter().map(|&v| v * v).sum::<S>().sqrt()
}

/// Positive and negative index sets for one anchor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSets {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

pub fn pair_sets(labels: &[usize], i: usize) -> PairSets {
    let anchor = labels[i];
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (j, &l) in labels.iter().enumerate() {
        if l != anchor {
            negatives.push(j);
        } else if j != i {
            positives.push(j);
        }
    }
    PairSets {
        positives,
        negatives,
    }
}

fn validate_batch<S: Scalar>(z: &Matrix<S>, labels: &[usize]) -> Result<()> {
    if z.rows() < 2 {
        return Err(Error::Batch(format!(
            "contrastive loss needs at least 2 samples, got {}",
            z.rows()
        )));
    }
    if labels.len() != z.rows() {
        return Err(Error::Dimension(format!(
            "{} labels for {} embeddings",
            labels.len(),
            z.rows()
        )));
    }
    if !z.is_finite() {
        return Err(Error::Numeric("non-finite embedding in batch".into()));
    }
    Ok(())
}

/// Unit rows plus original norms; zero-norm rows stay zero.
fn normalize_rows<S: Scalar>(z: &Matrix<S>) -> (Matrix<S>, Vec<S>) {
    let tiny = S::lit(ZERO_NORM);
    let mut unit = z.clone();
    let mut norms = Vec::with_capacity(z.rows());
    for r in 0..z.rows() {
        let n = norm(z.row(r));
        norms.push(n);
        let row = unit.row_mut(r);
        if n < tiny {
            row.iter_mut().for_each(|v| *v = S::zero());
        } else {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    (unit, norms)
}

fn similarity_matrix<S: Scalar>(unit: &Matrix<S>) -> Matrix<S> {
    let n = unit.rows();
    let mut sim = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let s: S = unit
                .row(i)
                .iter()
                .zip(unit.row(j))
                .map(|(&a, &b)| a * b)
                .sum();
            let s = s.max(-S::one()).min(S::one());
            sim.set(i, j, s);
            sim.set(j, i, s);
        }
    }
    sim
}

struct TermParts<S> {
    /// log-sum-exp over positives of sim/τ.
    log_pos: S,
    /// log(Σ_neg exp(sim/τ) + ε).
    log_den: S,
}

fn term_parts<S: Scalar>(
    sim: &Matrix<S>,
    ps: &PairSets,
    inv_tau: S,
    log_eps: S,
    i: usize,
) -> TermParts<S> {
    let row = sim.row(i);
    let log_pos = log_sum_exp(ps.positives.iter().map(|&j| row[j] * inv_tau));
    let log_neg = log_sum_exp(ps.negatives.iter().map(|&k| row[k] * inv_tau));
    TermParts {
        log_pos,
        log_den: log_add_exp(log_neg, log_eps),
    }
}

/// Loss value only.
pub fn supcon_loss<S: Scalar>(z: &Matrix<S>, labels: &[usize], cfg: &SupConConfig) -> Result<S> {
    supcon_impl(z, labels, cfg, false).map(|(l, _)| l)
}

/// Loss value and its gradient with respect to every embedding row.
pub fn supcon_loss_and_grad<S: Scalar>(
    z: &Matrix<S>,
    labels: &[usize],
    cfg: &SupConConfig,
) -> Result<(S, Matrix<S>)> {
    supcon_impl(z, labels, cfg, true).map(|(l, g)| (l, g.expect("gradient requested")))
}

fn supcon_impl<S: Scalar>(
    z: &Matrix<S>,
    labels: &[usize],
    cfg: &SupConConfig,
    want_grad: bool,
) -> Result<(S, Option<Matrix<S>>)> {
    cfg.validate()?;
    validate_batch(z, labels)?;
    let n = z.rows();
    let inv_tau = S::lit(1.0 / cfg.tau);
    let log_eps = S::lit(cfg.eps.ln());
    let inv_n = S::one() / S::lit(n as f64);
    let (unit, norms) = normalize_rows(z);
    let sim = similarity_matrix(&unit);

    let mut total = S::zero();
    // coeff[i][j] = dL/dsim_ij contributed by anchor i.
    let mut coeff = if want_grad {
        Some(Matrix::zeros(n, n))
    } else {
        None
    };
    for i in 0..n {
        let ps = pair_sets(labels, i);
        if ps.positives.is_empty() {
            continue;
        }
        let parts = term_parts(&sim, &ps, inv_tau, log_eps, i);
        total += parts.log_pos - parts.log_den;
        if let Some(c) = coeff.as_mut() {
            let row = sim.row(i).to_vec();
            for &j in &ps.positives {
                let p = (row[j] * inv_tau - parts.log_pos).exp();
                c.set(i, j, -inv_n * inv_tau * p);
            }
            for &k in &ps.negatives {
                let q = (row[k] * inv_tau - parts.log_den).exp();
                c.set(i, k, inv_n * inv_tau * q);
            }
        }
    }
    let loss = S::zero() - total * inv_n;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("contrastive loss is {loss}")));
    }

    let grad = coeff.map(|c| {
        let tiny = S::lit(ZERO_NORM);
        let dim = z.cols();
        let mut g = Matrix::zeros(n, dim);
        for i in 0..n {
            if norms[i] < tiny {
                continue;
            }
            let inv_norm = S::one() / norms[i];
            for j in 0..n {
                if j == i || norms[j] < tiny {
                    continue;
                }
                let w = c.get(i, j) + c.get(j, i);
                if w == S::zero() {
                    continue;
                }
                let s = sim.get(i, j);
                // ∂sim(z_i, z_j)/∂z_i = (ẑ_j - sim·ẑ_i) / ‖z_i‖
                let ui = unit.row(i);
                let uj = unit.row(j);
                let gi = g.row_mut(i);
                for d in 0..dim {
                    gi[d] += w * (uj[d] - s * ui[d]) * inv_norm;
                }
            }
        }
        g
    });
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    /// Direct transcription of the loss with plain exponentials.
    fn brute_force(z: &Matrix<f64>, labels: &[usize], tau: f64, eps: f64) -> f64 {
        let n = z.rows();
        let mut total = 0.0;
        for i in 0..n {
            let mut num = 0.0;
            let mut den = 0.0;
            let mut has_pos = false;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let (a, b) = (z.row(i), z.row(j));
                let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                let s = if na < 1e-12 || nb < 1e-12 {
                    0.0
                } else {
                    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
                };
                if labels[j] == labels[i] {
                    has_pos = true;
                    num += (s / tau).exp();
                } else {
                    den += (s / tau).exp();
                }
            }
            if has_pos {
                total += (num / (den + eps)).ln();
            }
        }
        -total / n as f64
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = cosine_sim(&[1.0f64, 1.0], &[1.0, 0.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine_sim(&[1.0], &[1.0, 2.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn pair_set_examples() {
        let p = pair_sets(&[0, 0, 1], 0);
        assert_eq!(p.positives, vec![1]);
        assert_eq!(p.negatives, vec![2]);
        let p = pair_sets(&[0, 1, 2], 1);
        assert!(p.positives.is_empty());
        assert_eq!(p.negatives, vec![0, 2]);
        let p = pair_sets(&[3, 3, 3, 3], 2);
        assert!(p.negatives.is_empty());
        assert_eq!(p.positives.len(), 3);
    }

    #[test]
    fn hand_values() {
        let cfg = SupConConfig::new(1.0, 1e-8).unwrap();
        let z = m(&[&[1.0, 0.0], &[0.3, -0.7]]);
        assert_eq!(supcon_loss(&z, &[0, 1], &cfg).unwrap(), 0.0);

        let z = m(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let l = supcon_loss(&z, &[0, 0, 1], &cfg).unwrap();
        assert!((l + 0.666_666_7).abs() < 1e-6, "{l}");

        let z = m(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let l = supcon_loss(&z, &[0, 0], &cfg).unwrap();
        assert!((l + 19.4207).abs() < 1e-3, "{l}");
    }

    #[test]
    fn batch_and_numeric_errors() {
        let cfg = SupConConfig::default();
        let z = m(&[&[1.0, 0.0]]);
        assert!(matches!(supcon_loss(&z, &[0], &cfg), Err(Error::Batch(_))));
        let z = m(&[&[1.0, f64::NAN], &[1.0, 0.0]]);
        assert!(matches!(
            supcon_loss(&z, &[0, 0], &cfg),
            Err(Error::Numeric(_))
        ));
        assert!(SupConConfig::new(0.0, 1e-8).is_err());
        assert!(SupConConfig::new(0.1, 0.0).is_err());
    }

    #[test]
    fn zero_norm_rows_do_not_poison() {
        let cfg = SupConConfig::default();
        let z = m(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]]);
        let (l, g) = supcon_loss_and_grad(&z, &[0, 0, 1, 1], &cfg).unwrap();
        assert!(l.is_finite());
        assert!(g.is_finite());
        assert!(g.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let cfg = SupConConfig::new(0.5, 1e-8).unwrap();
        let z = m(&[
            &[0.3, -1.2, 0.8],
            &[1.1, 0.4, -0.2],
            &[-0.5, 0.9, 0.7],
            &[0.2, 0.2, -1.4],
            &[0.9, -0.3, 0.1],
        ]);
        let labels = [0, 1, 0, 1, 2];
        let (_, g) = supcon_loss_and_grad(&z, &labels, &cfg).unwrap();
        let h = 1e-5;
        for k in 0..z.len() {
            let mut zp = z.clone();
            zp.as_mut_slice()[k] += h;
            let mut zm = z.clone();
            zm.as_mut_slice()[k] -= h;
            let num = (supcon_loss(&zp, &labels, &cfg).unwrap()
                - supcon_loss(&zm, &labels, &cfg).unwrap())
                / (2.0 * h);
            let a = g.as_slice()[k];
            let rel = (a - num).abs() / (a.abs() + num.abs()).max(1e-8);
            assert!(rel < 1e-6, "entry {k}: analytic {a} numeric {num}");
        }
    }

    fn batch_strategy() -> impl Strategy<Value = (Matrix<f64>, Vec<usize>, f64)> {
        (2usize..=8, 1usize..=4).prop_flat_map(|(n, d)| {
            (
                proptest::collection::vec(-2.0f64..2.0, n * d),
                proptest::collection::vec(0usize..3, n),
                0.05f64..1.0,
            )
                .prop_map(move |(data, labels, tau)| {
                    (Matrix::from_vec(n, d, data).unwrap(), labels, tau)
                })
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force((z, labels, tau) in batch_strategy()) {
            let cfg = SupConConfig::new(tau, 1e-8).unwrap();
            let fast = supcon_loss(&z, &labels, &cfg).unwrap();
            let slow = brute_force(&z, &labels, tau, 1e-8);
            prop_assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(1.0), "{fast} vs {slow}");
        }

        #[test]
        fn permutation_invariant((z, labels, tau) in batch_strategy(), seed in 0u64..1000) {
            let cfg = SupConConfig::new(tau, 1e-8).unwrap();
            let n = z.rows();
            let mut perm: Vec<usize> = (0..n).collect();
            // deterministic shuffle driven by the seed
            for i in (1..n).rev() {
                let j = ((seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64)) >> 33) as usize % (i + 1);
                perm.swap(i, j);
            }
            let zp = z.select_rows(&perm);
            let lp: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
            let a = supcon_loss(&z, &labels, &cfg).unwrap();
            let b = supcon_loss(&zp, &lp, &cfg).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }

        #[test]
        fn scale_invariant((z, labels, tau) in batch_strategy(), row in 0usize..8, scale in 0.01f64..50.0) {
            let cfg = SupConConfig::new(tau, 1e-8).unwrap();
            let row = row % z.rows();
            let mut zs = z.clone();
            zs.row_mut(row).iter_mut().for_each(|v| *v *= scale);
            // scaling a vector across the zero-norm threshold changes its similarity
            let n = z.row(row).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assume!(n * scale.min(1.0) > 1e-9);
            let a = supcon_loss(&z, &labels, &cfg).unwrap();
            let b = supcon_loss(&zs, &labels, &cfg).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn closer_positive_never_increases_loss() {
        let cfg = SupConConfig::new(0.3, 1e-8).unwrap();
        let labels = [0, 0, 1];
        let neg = [0.0, 0.0, 1.0];
        let mut last = f64::INFINITY;
        // rotate the positive towards the anchor inside the plane orthogonal to the negative
        for step in 0..=20 {
            let angle = std::f64::consts::PI * (1.0 - step as f64 / 20.0);
            let z = m(&[&[1.0, 0.0, 0.0], &[angle.cos(), angle.sin(), 0.0], &neg]);
            let l = supcon_loss(&z, &labels, &cfg).unwrap();
            assert!(l <= last + 1e-12, "step {step}: {l} > {last}");
            last = l;
        }
    }
}
