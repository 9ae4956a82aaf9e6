use rand::Rng;

use super::matrix::{axpy, dot, Matrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Affine map `W·x + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<S> {
    pub weight: Matrix<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> DenseLayer<S> {
    pub fn new(weight: Matrix<S>, bias: Vec<S>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::Dimension(format!(
                "weight has {} rows but bias has {} entries",
                weight.rows(),
                bias.len()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![S::zero(); out_dim],
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (in + out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| S::lit(rng.random_range(-limit..=limit)))
            .collect();
        Self {
            weight: Matrix::from_vec(out_dim, in_dim, data).expect("sized above"),
            bias: vec![S::zero(); out_dim],
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Row-wise `X·Wᵀ + b` over a batch.
    pub fn forward_batch(&self, x: &Matrix<S>) -> Result<Matrix<S>> {
        if x.cols() != self.in_dim() {
            return Err(Error::Dimension(format!(
                "dense layer expects {} inputs, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        let mut out = Matrix::zeros(x.rows(), self.out_dim());
        for n in 0..x.rows() {
            let xr = x.row(n);
            let yr = out.row_mut(n);
            for (o, y) in yr.iter_mut().enumerate() {
                *y = dot(self.weight.row(o), xr) + self.bias[o];
            }
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    pub(crate) fn backward_batch(
        &self,
        x: &Matrix<S>,
        dy: &Matrix<S>,
        grad: &mut DenseLayer<S>,
    ) -> Matrix<S> {
        let mut dx = Matrix::zeros(x.rows(), self.in_dim());
        for n in 0..x.rows() {
            let xr = x.row(n);
            let dyr = dy.row(n);
            for (o, &g) in dyr.iter().enumerate() {
                if g == S::zero() {
                    continue;
                }
                axpy(g, xr, grad.weight.row_mut(o));
                grad.bias[o] += g;
                axpy(g, self.weight.row(o), dx.row_mut(n));
            }
        }
        dx
    }

    /// Flat view: weights (row-major) followed by biases.
    pub(crate) fn get_flat(&self, k: usize) -> S {
        let nw = self.weight.len();
        if k < nw {
            self.weight.as_slice()[k]
        } else {
            self.bias[k - nw]
        }
    }

    pub(crate) fn flat_mut(&mut self, k: usize) -> &mut S {
        let nw = self.weight.len();
        if k < nw {
            &mut self.weight.as_mut_slice()[k]
        } else {
            &mut self.bias[k - nw]
        }
    }
}

/// Single-vector dense forward, `W·x + b`.
pub fn dense_forward<S: Scalar>(x: &[S], layer: &DenseLayer<S>) -> Result<Vec<S>> {
    if x.len() != layer.in_dim() {
        return Err(Error::Dimension(format!(
            "dense layer expects {} inputs, got {}",
            layer.in_dim(),
            x.len()
        )));
    }
    Ok((0..layer.out_dim())
        .map(|o| dot(layer.weight.row(o), x) + layer.bias[o])
        .collect())
}

/// Index of a layer inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LayerId(pub usize);

/// Named collection of every trainable dense layer of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    names: Vec<String>,
    layers: Vec<DenseLayer<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            layers: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, layer: DenseLayer<S>) -> LayerId {
        self.names.push(name.into());
        self.layers.push(layer);
        LayerId(self.layers.len() - 1)
    }

    #[inline]
    pub fn layer(&self, id: LayerId) -> &DenseLayer<S> {
        &self.layers[id.0]
    }

    #[inline]
    pub fn layer_mut(&mut self, id: LayerId) -> &mut DenseLayer<S> {
        &mut self.layers[id.0]
    }

    pub fn name(&self, id: LayerId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<LayerId> {
        self.names.iter().position(|n| n == name).map(LayerId)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = LayerId> {
        (0..self.layers.len()).map(LayerId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (LayerId, &str, &DenseLayer<S>)> {
        self.layers
            .iter()
            .zip(&self.names)
            .enumerate()
            .map(|(i, (l, n))| (LayerId(i), n.as_str(), l))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Zero-filled layers with the same shapes, for gradient or moment buffers.
    pub fn zeros_like(&self) -> Vec<DenseLayer<S>> {
        self.layers
            .iter()
            .map(|l| DenseLayer::zeros(l.in_dim(), l.out_dim()))
            .collect()
    }
}
