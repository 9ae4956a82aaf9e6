//! Recorded forward pass over a closed set of batch operations, with exact
//! reverse-mode gradients.

use rand::Rng;

use super::layer::{DenseLayer, LayerId, ParamStore};
use super::matrix::Matrix;
use super::ops::{check_dropout_rate, dropout_mask, relu_scalar, softmax_in_place, Mode};
use crate::contrastive::{supcon_loss_and_grad, SupConConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<S> {
    Input,
    Dense {
        input: NodeId,
        layer: LayerId,
    },
    Relu {
        input: NodeId,
    },
    Dropout {
        input: NodeId,
        mask: Matrix<S>,
    },
    Concat {
        inputs: Vec<NodeId>,
    },
    Softmax {
        input: NodeId,
    },
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Matrix<S>,
    },
    SupCon {
        input: NodeId,
        grad: Matrix<S>,
    },
    SquaredError {
        input: NodeId,
        target: Matrix<S>,
    },
    SumAll {
        input: NodeId,
    },
    Sum {
        inputs: Vec<(NodeId, S)>,
    },
}

#[derive(Debug)]
struct Node<S> {
    op: Op<S>,
    value: Matrix<S>,
}

/// Parameter gradients, one optional buffer per layer of the store.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    layers: Vec<Option<DenseLayer<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn empty(store: &ParamStore<S>) -> Self {
        Self {
            layers: vec![None; store.len()],
        }
    }

    /// Gradient for a layer, or `None` when the loss does not depend on it.
    pub fn get(&self, id: LayerId) -> Option<&DenseLayer<S>> {
        self.layers.get(id.0).and_then(Option::as_ref)
    }

    /// Flat gradient entry; zero for untouched layers.
    pub fn flat(&self, id: LayerId, k: usize) -> S {
        self.get(id).map(|g| g.get_flat(k)).unwrap_or_else(S::zero)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    fn slot(&mut self, id: LayerId, shape_of: &DenseLayer<S>) -> &mut DenseLayer<S> {
        self.layers[id.0]
            .get_or_insert_with(|| DenseLayer::zeros(shape_of.in_dim(), shape_of.out_dim()))
    }
}

/// Forward recorder bound to a parameter store.
pub struct Tape<'p, S> {
    params: &'p ParamStore<S>,
    nodes: Vec<Node<S>>,
    relu_passthrough: bool,
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new(params: &'p ParamStore<S>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            relu_passthrough: false,
        }
    }

    /// Deliberately wrong ReLU backward (gradient passed through unmasked).
    /// Only used as a negative control for gradient checking.
    #[doc(hidden)]
    pub fn with_broken_relu_grad(mut self, broken: bool) -> Self {
        self.relu_passthrough = broken;
        self
    }

    pub fn params(&self) -> &'p ParamStore<S> {
        self.params
    }

    fn push(&mut self, op: Op<S>, value: Matrix<S>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Matrix<S> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest `|x|` fed into any ReLU on the tape, `None` without ReLUs.
    pub fn relu_margin(&self) -> Option<S> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu { input } => Some(input),
                _ => None,
            })
            .flat_map(|i| self.value(i).as_slice().iter().map(|v| v.abs()))
            .reduce(|a, b| if b < a { b } else { a })
    }

    pub fn input(&mut self, value: Matrix<S>) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn dense(&mut self, input: NodeId, layer: LayerId) -> Result<NodeId> {
        let value = self.params.layer(layer).forward_batch(self.value(input))?;
        Ok(self.push(Op::Dense { input, layer }, value))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(relu_scalar);
        self.push(Op::Relu { input }, value)
    }

    /// Dense layer followed by ReLU.
    pub fn dense_relu(&mut self, input: NodeId, layer: LayerId) -> Result<NodeId> {
        let pre = self.dense(input, layer)?;
        Ok(self.relu(pre))
    }

    /// Inverted dropout; eval mode (or rate 0) records nothing.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: NodeId,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<NodeId> {
        check_dropout_rate(rate)?;
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(input);
        }
        let x = self.value(input);
        let mask = Matrix::from_vec(x.rows(), x.cols(), dropout_mask(x.len(), rate, rng))?;
        let mut value = x.clone();
        for (v, &m) in value.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            *v *= m;
        }
        Ok(self.push(Op::Dropout { input, mask }, value))
    }

    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::Input("concat of zero inputs".into()));
        }
        let parts: Vec<&Matrix<S>> = inputs.iter().map(|&i| self.value(i)).collect();
        let value = Matrix::hconcat(&parts)?;
        Ok(self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            value,
        ))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, input: NodeId) -> NodeId {
        let mut value = self.value(input).clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        self.push(Op::Softmax { input }, value)
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let x = self.value(logits);
        if labels.len() != x.rows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} rows",
                labels.len(),
                x.rows()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::Batch("cross-entropy over an empty batch".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= x.cols()) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {} classes",
                x.cols()
            )));
        }
        let mut probs = x.clone();
        let mut total = S::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = x.row(r);
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
            total += lse - row[label];
            softmax_in_place(probs.row_mut(r));
        }
        let value = Matrix::scalar(total / S::lit(labels.len() as f64));
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            value,
        ))
    }

    /// Supervised contrastive loss over the rows of `input`.
    pub fn supcon(
        &mut self,
        input: NodeId,
        labels: &[usize],
        cfg: &SupConConfig,
    ) -> Result<NodeId> {
        let (loss, grad) = supcon_loss_and_grad(self.value(input), labels, cfg)?;
        Ok(self.push(Op::SupCon { input, grad }, Matrix::scalar(loss)))
    }

    /// `½ Σ (x - target)²`.
    pub fn squared_error(&mut self, input: NodeId, target: Matrix<S>) -> Result<NodeId> {
        let x = self.value(input);
        if x.shape() != target.shape() {
            return Err(Error::Dimension(format!(
                "target {:?} vs input {:?}",
                target.shape(),
                x.shape()
            )));
        }
        let half = S::lit(0.5);
        let loss = x
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(&a, &b)| half * (a - b) * (a - b))
            .sum();
        Ok(self.push(Op::SquaredError { input, target }, Matrix::scalar(loss)))
    }

    pub fn sum_all(&mut self, input: NodeId) -> NodeId {
        let total = self.value(input).as_slice().iter().copied().sum();
        self.push(Op::SumAll { input }, Matrix::scalar(total))
    }

    /// Sum of scalar nodes.
    pub fn sum(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let weighted: Vec<(NodeId, S)> = inputs.iter().map(|&i| (i, S::one())).collect();
        self.weighted_sum(&weighted)
    }

    /// `sum_k w_k * x_k` over scalar nodes.
    pub fn weighted_sum(&mut self, inputs: &[(NodeId, S)]) -> Result<NodeId> {
        let mut total = S::zero();
        for &(i, w) in inputs {
            total += w * self.value(i).item()?;
        }
        Ok(self.push(
            Op::Sum {
                inputs: inputs.to_vec(),
            },
            Matrix::scalar(total),
        ))
    }

    /// Reverse pass from the scalar node `loss`, seeded with `seed`.
    pub fn backward(&self, loss: NodeId, seed: S) -> Result<Gradients<S>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::State(
                "backward called before a forward pass was recorded".into(),
            ));
        }
        self.value(loss).item()?;
        let mut adj: Vec<Option<Matrix<S>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Matrix::scalar(seed));
        let mut grads = Gradients::empty(self.params);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Dense { input, layer } => {
                    let l = self.params.layer(*layer);
                    let slot = grads.slot(*layer, l);
                    let dx = l.backward_batch(self.value(*input), &g, slot);
                    accumulate(&mut adj, *input, dx);
                }
                Op::Relu { input } => {
                    let mut dx = g;
                    if !self.relu_passthrough {
                        for (d, &y) in dx.as_mut_slice().iter_mut().zip(node.value.as_slice()) {
                            if y <= S::zero() {
                                *d = S::zero();
                            }
                        }
                    }
                    accumulate(&mut adj, *input, dx);
                }
                Op::Dropout { input, mask } => {
                    let mut dx = g;
                    for (d, &m) in dx.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                        *d *= m;
                    }
                    accumulate(&mut adj, *input, dx);
                }
                Op::Concat { inputs } => {
                    let mut offset = 0;
                    for &i in inputs {
                        let w = self.value(i).cols();
                        accumulate(&mut adj, i, g.column_slice(offset, w)?);
                        offset += w;
                    }
                }
                Op::Softmax { input } => {
                    let y = &node.value;
                    let mut dx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let inner: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d = yr[c] * (gr[c] - inner);
                        }
                    }
                    accumulate(&mut adj, *input, dx);
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let scale = g.item()? / S::lit(labels.len() as f64);
                    let mut dx = probs.clone();
                    for (r, &l) in labels.iter().enumerate() {
                        let row = dx.row_mut(r);
                        row[l] -= S::one();
                        row.iter_mut().for_each(|v| *v *= scale);
                    }
                    accumulate(&mut adj, *logits, dx);
                }
                Op::SupCon { input, grad } => {
                    let scale = g.item()?;
                    accumulate(&mut adj, *input, grad.map(|v| v * scale));
                }
                Op::SquaredError { input, target } => {
                    let scale = g.item()?;
                    let x = self.value(*input);
                    let mut dx = x.clone();
                    for (d, &t) in dx.as_mut_slice().iter_mut().zip(target.as_slice()) {
                        *d = (*d - t) * scale;
                    }
                    accumulate(&mut adj, *input, dx);
                }
                Op::SumAll { input } => {
                    let scale = g.item()?;
                    let x = self.value(*input);
                    accumulate(
                        &mut adj,
                        *input,
                        Matrix::from_vec(x.rows(), x.cols(), vec![scale; x.len()])?,
                    );
                }
                Op::Sum { inputs } => {
                    for &(i, w) in inputs {
                        accumulate(&mut adj, i, g.map(|v| v * w));
                    }
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate<S: Scalar>(adj: &mut [Option<Matrix<S>>], id: NodeId, g: Matrix<S>) {
    match &mut adj[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with(layers: Vec<DenseLayer<f64>>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (i, l) in layers.into_iter().enumerate() {
            s.push(format!("l{i}"), l);
        }
        s
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let store = store_with(vec![DenseLayer::zeros(2, 2)]);
        let tape = Tape::new(&store);
        assert!(matches!(
            tape.backward(NodeId(0), 1.0),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn linear_sum_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let store = store_with(vec![DenseLayer::glorot(3, 2, &mut rng)]);
        let x = [0.5, -1.0, 2.0];
        let mut tape = Tape::new(&store);
        let xi = tape.input(Matrix::from_rows(&[x]).unwrap());
        let y = tape.dense(xi, LayerId(0)).unwrap();
        let loss = tape.sum_all(y);
        let g = tape.backward(loss, 1.0).unwrap();
        let gw = g.get(LayerId(0)).unwrap();
        for o in 0..2 {
            assert_eq!(gw.weight.row(o), &x);
            assert_eq!(gw.bias[o], 1.0);
        }
    }

    #[test]
    fn relu_blocks_negative_preactivations() {
        let mut w = Matrix::zeros(2, 1);
        w.set(0, 0, 1.0);
        w.set(1, 0, -1.0);
        let store = store_with(vec![DenseLayer::new(w, vec![0.0, 0.0]).unwrap()]);
        let mut tape = Tape::new(&store);
        let xi = tape.input(Matrix::from_rows(&[[2.0]]).unwrap());
        let h = tape.dense_relu(xi, LayerId(0)).unwrap();
        let loss = tape.sum_all(h);
        let g = tape.backward(loss, 1.0).unwrap();
        let gw = g.get(LayerId(0)).unwrap();
        assert_eq!(gw.weight.get(0, 0), 2.0);
        assert_eq!(gw.weight.get(1, 0), 0.0);
        assert_eq!(gw.bias[1], 0.0);
    }

    fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn dense_squared_loss_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let store = store_with(vec![DenseLayer::glorot(4, 3, &mut rng)]);
        let x = random_batch(&mut rng, 5, 4);
        let t = random_batch(&mut rng, 5, 3);
        let res = grad_check(&store, &store.ids().collect::<Vec<_>>(), 1e-5, |p| {
            let mut tape = Tape::new(p);
            let xi = tape.input(x.clone());
            let y = tape.dense(xi, LayerId(0))?;
            let loss = tape.squared_error(y, t.clone())?;
            Ok((tape.value(loss).item()?, tape.backward(loss, 1.0)?))
        })
        .unwrap();
        assert!(res.max_rel_error <= 1e-6, "{res:?}");
    }

    #[test]
    fn composed_graph_gradcheck() {
        // concat, relu, fixed dropout mask, softmax, cross-entropy and sum nodes together
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let store = store_with(vec![
            DenseLayer::glorot(3, 4, &mut rng),
            DenseLayer::glorot(2, 4, &mut rng),
            DenseLayer::glorot(8, 3, &mut rng),
        ]);
        let a = random_batch(&mut rng, 6, 3);
        let b = random_batch(&mut rng, 6, 2);
        let labels = [0, 1, 2, 0, 1, 2];
        let weights = random_batch(&mut rng, 6, 3);
        let res = grad_check(&store, &store.ids().collect::<Vec<_>>(), 1e-5, |p| {
            let mut tape = Tape::new(p);
            let mut drop_rng = ChaCha8Rng::seed_from_u64(99);
            let ai = tape.input(a.clone());
            let bi = tape.input(b.clone());
            let ha = tape.dense_relu(ai, LayerId(0))?;
            let hb = tape.dense_relu(bi, LayerId(1))?;
            let cat = tape.concat(&[ha, hb])?;
            let cat = tape.dropout(cat, 0.25, Mode::Train, &mut drop_rng)?;
            let logits = tape.dense(cat, LayerId(2))?;
            let ce = tape.cross_entropy(logits, &labels)?;
            let probs = tape.softmax(logits);
            let weighted = tape.squared_error(probs, weights.clone())?;
            let loss = tape.sum(&[ce, weighted])?;
            Ok((tape.value(loss).item()?, tape.backward(loss, 1.0)?))
        })
        .unwrap();
        assert!(res.max_rel_error <= 1e-4, "{res:?}");
    }

    #[test]
    fn supcon_node_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let store = store_with(vec![DenseLayer::glorot(4, 3, &mut rng)]);
        let x = random_batch(&mut rng, 6, 4);
        let labels = [0, 0, 1, 1, 2, 2];
        let cfg = SupConConfig::new(0.5, 1e-8).unwrap();
        let res = grad_check(&store, &[LayerId(0)], 1e-5, |p| {
            let mut tape = Tape::new(p);
            let xi = tape.input(x.clone());
            let z = tape.dense(xi, LayerId(0))?;
            let loss = tape.supcon(z, &labels, &cfg)?;
            Ok((tape.value(loss).item()?, tape.backward(loss, 1.0)?))
        })
        .unwrap();
        assert!(res.max_rel_error <= 1e-4, "{res:?}");
    }
}
