//! Minimal deterministic neural-network engine.

pub mod adam;
pub mod gradcheck;
pub mod layer;
pub mod matrix;
pub mod ops;
pub mod tape;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layer::{dense_forward, DenseLayer, LayerId, ParamStore};
pub use matrix::Matrix;
pub use ops::{dropout, relu, softmax, Mode};
pub use tape::{Gradients, NodeId, Tape};

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_forward_examples() {
        let layer = DenseLayer::new(Matrix::identity(2), vec![0.0, 0.0]).unwrap();
        assert_eq!(dense_forward(&[1.0, 2.0], &layer).unwrap(), vec![1.0, 2.0]);
        let layer = DenseLayer::new(Matrix::from_rows(&[[1.0, 1.0]]).unwrap(), vec![-2.0]).unwrap();
        assert_eq!(dense_forward(&[1.0, 1.0], &layer).unwrap(), vec![0.0]);
        assert!(dense_forward(&[1.0], &layer).is_err());
    }

    #[test]
    fn dense_forward_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let layer: DenseLayer<f64> = DenseLayer::glorot(5, 3, &mut rng);
        let mut layer = layer;
        for b in layer.bias.iter_mut() {
            *b = rng.random_range(-1.0..1.0);
        }
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let fast = dense_forward(&x, &layer).unwrap();
        for o in 0..3 {
            let mut acc = layer.bias[o];
            for i in 0..5 {
                acc += layer.weight.get(o, i) * x[i];
            }
            assert!((fast[o] - acc).abs() <= 1e-12);
        }
    }

    #[test]
    fn glorot_respects_limit_and_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l: DenseLayer<f64> = DenseLayer::glorot(10, 6, &mut rng);
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(l.weight.as_slice().iter().all(|w| w.abs() <= limit));
        assert!(l.bias.iter().all(|&b| b == 0.0));
    }
}
