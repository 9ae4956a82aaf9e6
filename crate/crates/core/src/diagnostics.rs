//! Finite-difference gradient checks over the five trainable subgraphs of a
//! tiny random model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::contrastive::SupConConfig;
use crate::error::Result;
use crate::features::affect::AFFECT_DIM;
use crate::model::{FusionSource, ModelDims, ModelParams, ParamGroup};
use crate::nn::{grad_check, GradCheckReport, LayerId, Matrix, Mode, NodeId, ParamStore, Tape};

/// Relative-error bound every subgraph must meet.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const GRADCHECK_STEP: f64 = 1e-5;

pub const SUBGRAPHS: [&str; 5] = [
    "stage1+supcon",
    "stage2+supcon",
    "es+supcon",
    "cp+supcon",
    "classifier+ce",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl SubgraphCheck {
    pub fn passes(&self) -> bool {
        self.report.passes(GRADCHECK_TOLERANCE)
    }
}

/// Widths of the model used by [`run_gradcheck_suite`].
pub fn gradcheck_dims() -> ModelDims {
    ModelDims {
        input_dim: 6,
        caption_dim: 5,
        proj_dim: 6,
        cross_dim: 6,
        aux_dim: 6,
        encoder_depth: 1,
        classifier_widths: vec![8, 8, 6, 5],
        classes: 3,
        dropout: 0.3,
        fusion: FusionSource::Encoder,
    }
}

fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix<f64> {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape matches data")
}

/// Smallest ReLU input magnitude a fixture may have; keeps every probe of
/// the central difference on one side of the kink.
const RELU_MARGIN: f64 = 1e-3;
const MAX_DRAWS: usize = 1000;

struct Fixture {
    params: ModelParams<f64>,
    labels: Vec<usize>,
    image: Matrix<f64>,
    text: Matrix<f64>,
    audio: Matrix<f64>,
    affect: Matrix<f64>,
    caption: Matrix<f64>,
    fused: Matrix<f64>,
    dropout_seed: u64,
    cfg: SupConConfig,
}

impl Fixture {
    fn draw<R: Rng>(rng: &mut R) -> Result<Self> {
        let dims = gradcheck_dims();
        let mut params = ModelParams::<f64>::init(dims.clone(), rng)?;
        let ids: Vec<LayerId> = params.store.ids().collect();
        for id in ids {
            for b in params.store.layer_mut(id).bias.iter_mut() {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        let n = 12;
        let d = dims.input_dim;
        Ok(Self {
            labels: (0..n).map(|i| i % 3).collect(),
            image: random_matrix(n, d, rng),
            text: random_matrix(n, d, rng),
            audio: random_matrix(n, d, rng),
            affect: random_matrix(n, AFFECT_DIM, rng),
            caption: random_matrix(n, dims.caption_dim, rng),
            fused: random_matrix(n, dims.fusion_dim(), rng),
            dropout_seed: rng.random(),
            cfg: SupConConfig::default(),
            params,
        })
    }

    fn layers(&self, k: usize) -> Vec<LayerId> {
        let p = &self.params;
        match k {
            0 => p.group(ParamGroup::StageOne),
            1 => p.group(ParamGroup::Cross),
            2 => p
                .aux
                .enc_es
                .iter()
                .copied()
                .chain([p.aux.proj_es])
                .collect(),
            3 => p
                .aux
                .enc_cp
                .iter()
                .copied()
                .chain([p.aux.proj_cp])
                .collect(),
            _ => p.group(ParamGroup::Head),
        }
    }

    /// Records subgraph `k` against `store` and returns its loss node.
    fn record<'s>(
        &self,
        k: usize,
        store: &'s ParamStore<f64>,
        broken_relu: bool,
    ) -> Result<(Tape<'s, f64>, NodeId)> {
        let p = &self.params;
        let lab = &self.labels;
        let mut t = Tape::new(store).with_broken_relu_grad(broken_relu);
        let loss = match k {
            0 | 1 => {
                let i = t.input(self.image.clone());
                let x = t.input(self.text.clone());
                let a = t.input(self.audio.clone());
                if k == 0 {
                    let s1 = p.stage1_graph(&mut t, i, x, a)?;
                    t.supcon(s1.z_ita, lab, &self.cfg)?
                } else {
                    let c = p.stage2_graph(&mut t, i, x, a)?;
                    let mut terms = Vec::new();
                    for pair in [c.it, c.ia, c.ta] {
                        terms.push(t.supcon(pair.z_cross, lab, &self.cfg)?);
                    }
                    t.sum(&terms)?
                }
            }
            2 | 3 => {
                let e = t.input(self.affect.clone());
                let c = t.input(self.caption.clone());
                let aux = p.aux_graph(&mut t, e, c)?;
                let z = if k == 2 { aux.z_es } else { aux.z_cp };
                t.supcon(z, lab, &self.cfg)?
            }
            _ => {
                let f = t.input(self.fused.clone());
                // same dropout masks at every probe
                let mut drop_rng = ChaCha8Rng::seed_from_u64(self.dropout_seed);
                let logits = p.classifier_graph(&mut t, f, Mode::Train, &mut drop_rng)?;
                t.cross_entropy(logits, lab)?
            }
        };
        Ok((t, loss))
    }

    fn clear_of_kinks(&self) -> Result<bool> {
        for k in 0..SUBGRAPHS.len() {
            let (t, _) = self.record(k, &self.params.store, false)?;
            if t.relu_margin().is_some_and(|m| m < RELU_MARGIN) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Runs all five checks. `broken_relu` swaps in a wrong ReLU backward.
pub fn run_gradcheck_suite(seed: u64, broken_relu: bool) -> Result<Vec<SubgraphCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fx = Fixture::draw(&mut rng)?;
    for _ in 1..MAX_DRAWS {
        if fx.clear_of_kinks()? {
            break;
        }
        fx = Fixture::draw(&mut rng)?;
    }
    let fx = &fx;
    (0..SUBGRAPHS.len())
        .map(|k| {
            let objective = |store: &ParamStore<f64>| {
                let (t, loss) = fx.record(k, store, broken_relu)?;
                Ok((t.value(loss).item()?, t.backward(loss, 1.0)?))
            };
            let report = grad_check(&fx.params.store, &fx.layers(k), GRADCHECK_STEP, objective)?;
            Ok(SubgraphCheck {
                name: SUBGRAPHS[k],
                report,
            })
        })
        .collect()
}
