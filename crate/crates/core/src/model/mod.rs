//! Model graph: stage-one modality encoders with the shared image/text/audio
//! projection, emotion-sentiment and caption encoders, stage-two cross encoders
//! with per-pair projection heads, the fusion vector and the classifier head.

pub mod checkpoint;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contrastive::SupConConfig;
use crate::error::{Error, Result};
use crate::features::affect::AFFECT_DIM;
use crate::nn::{DenseLayer, LayerId, Matrix, Mode, NodeId, ParamStore, Tape};
use crate::scalar::Scalar;

/// Which representations enter the fusion vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionSource {
    /// Cross-encoder outputs and ES/CP encoder outputs (pre-projection).
    #[default]
    Encoder,
    /// The projected embeddings used by the contrastive losses.
    Projected,
}

/// Every width of the architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    /// Modality feature width.
    pub input_dim: usize,
    /// Caption feature width.
    pub caption_dim: usize,
    /// Projection output width.
    pub proj_dim: usize,
    /// Cross-encoder output width.
    pub cross_dim: usize,
    /// ES/CP encoder output width.
    pub aux_dim: usize,
    /// Dense+ReLU layers per encoder.
    pub encoder_depth: usize,
    pub classifier_widths: Vec<usize>,
    pub classes: usize,
    pub dropout: f64,
    pub fusion: FusionSource,
}

impl ModelDims {
    /// Default widths for a given input, caption width and class count.
    pub fn new(input_dim: usize, caption_dim: usize, classes: usize) -> Self {
        Self {
            input_dim,
            caption_dim,
            proj_dim: 256,
            cross_dim: input_dim,
            aux_dim: 128,
            encoder_depth: 1,
            classifier_widths: vec![512, 256, 128, 64],
            classes,
            dropout: 0.3,
            fusion: FusionSource::Encoder,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("proj_dim", self.proj_dim),
            ("cross_dim", self.cross_dim),
            ("aux_dim", self.aux_dim),
            ("encoder_depth", self.encoder_depth),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        if !(2..=3).contains(&self.classes) {
            return Err(Error::Config(format!(
                "classes must be 2 or 3, got {}",
                self.classes
            )));
        }
        if self.classifier_widths.contains(&0) {
            return Err(Error::Config("classifier widths must be > 0".into()));
        }
        crate::nn::ops::check_dropout_rate(self.dropout)?;
        Ok(())
    }

    /// Width of the joint stage-one representation, `3d`.
    pub fn joint_dim(&self) -> usize {
        3 * self.input_dim
    }

    pub fn fusion_dim(&self) -> usize {
        match self.fusion {
            FusionSource::Encoder => 6 * self.cross_dim + 2 * self.aux_dim,
            FusionSource::Projected => 8 * self.proj_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOneEncoders {
    pub enc_ii: Vec<LayerId>,
    pub enc_tt: Vec<LayerId>,
    pub enc_aa: Vec<LayerId>,
    pub proj_ita: LayerId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxEncoders {
    pub enc_es: Vec<LayerId>,
    pub proj_es: LayerId,
    pub enc_cp: Vec<LayerId>,
    pub proj_cp: LayerId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEncoders {
    pub enc_it: Vec<LayerId>,
    pub enc_ti: Vec<LayerId>,
    pub enc_ia: Vec<LayerId>,
    pub enc_ai: Vec<LayerId>,
    pub enc_ta: Vec<LayerId>,
    pub enc_at: Vec<LayerId>,
    pub proj_it: LayerId,
    pub proj_ia: LayerId,
    pub proj_ta: LayerId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub hidden: Vec<LayerId>,
    pub output: LayerId,
}

/// Groups of layers trained together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    StageOne,
    Aux,
    Cross,
    Head,
}

/// All trainable weights plus the layer layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    pub dims: ModelDims,
    pub store: ParamStore<S>,
    pub stage1: StageOneEncoders,
    pub aux: AuxEncoders,
    pub cross: CrossEncoders,
    pub head: ClassifierHead,
}

struct Builder<'a, S, F> {
    store: ParamStore<S>,
    make: &'a mut F,
}

impl<S: Scalar, F: FnMut(usize, usize) -> DenseLayer<S>> Builder<'_, S, F> {
    fn layer(&mut self, name: String, in_dim: usize, out_dim: usize) -> LayerId {
        let l = (self.make)(in_dim, out_dim);
        self.store.push(name, l)
    }

    fn stack(&mut self, prefix: &str, in_dim: usize, out_dim: usize, depth: usize) -> Vec<LayerId> {
        (0..depth)
            .map(|k| {
                let i = if k == 0 { in_dim } else { out_dim };
                self.layer(format!("{prefix}.{k}"), i, out_dim)
            })
            .collect()
    }
}

impl<S: Scalar> ModelParams<S> {
    /// Glorot-initialized parameters, drawn in a fixed layer order.
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        Self::build(dims, |i, o| DenseLayer::glorot(i, o, rng))
    }

    /// All-zero parameters with the right shapes.
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        Self::build(dims, DenseLayer::zeros)
    }

    fn build(dims: ModelDims, mut make: impl FnMut(usize, usize) -> DenseLayer<S>) -> Result<Self> {
        dims.validate()?;
        let mut b = Builder {
            store: ParamStore::new(),
            make: &mut make,
        };
        let d = dims.input_dim;
        let depth = dims.encoder_depth;
        let stage1 = StageOneEncoders {
            enc_ii: b.stack("stage1.enc_ii", d, d, depth),
            enc_tt: b.stack("stage1.enc_tt", d, d, depth),
            enc_aa: b.stack("stage1.enc_aa", d, d, depth),
            proj_ita: b.layer("stage1.proj_ita".into(), dims.joint_dim(), dims.proj_dim),
        };
        let aux = AuxEncoders {
            enc_es: b.stack("aux.enc_es", AFFECT_DIM, dims.aux_dim, depth),
            proj_es: b.layer("aux.proj_es".into(), dims.aux_dim, dims.proj_dim),
            enc_cp: b.stack("aux.enc_cp", dims.caption_dim.max(1), dims.aux_dim, depth),
            proj_cp: b.layer("aux.proj_cp".into(), dims.aux_dim, dims.proj_dim),
        };
        let x = dims.cross_dim;
        let cross = CrossEncoders {
            enc_it: b.stack("cross.enc_it", d, x, depth),
            enc_ti: b.stack("cross.enc_ti", d, x, depth),
            enc_ia: b.stack("cross.enc_ia", d, x, depth),
            enc_ai: b.stack("cross.enc_ai", d, x, depth),
            enc_ta: b.stack("cross.enc_ta", d, x, depth),
            enc_at: b.stack("cross.enc_at", d, x, depth),
            proj_it: b.layer("cross.proj_it".into(), x, dims.proj_dim),
            proj_ia: b.layer("cross.proj_ia".into(), x, dims.proj_dim),
            proj_ta: b.layer("cross.proj_ta".into(), x, dims.proj_dim),
        };
        let mut width = dims.fusion_dim();
        let mut hidden = Vec::new();
        for (k, &w) in dims.classifier_widths.iter().enumerate() {
            hidden.push(b.layer(format!("head.fc{}", k + 1), width, w));
            width = w;
        }
        let output = b.layer("head.out".into(), width, dims.classes);
        let head = ClassifierHead { hidden, output };
        let params = Self {
            dims,
            store: b.store,
            stage1,
            aux,
            cross,
            head,
        };
        params.check_shapes()?;
        Ok(params)
    }

    /// Verifies the wiring constraints between layers.
    pub fn check_shapes(&self) -> Result<()> {
        let d = self.dims.input_dim;
        let proj = self.store.layer(self.stage1.proj_ita);
        if proj.in_dim() != 3 * d {
            return Err(Error::Dimension(format!(
                "joint projection takes {} inputs but 3d = {}",
                proj.in_dim(),
                3 * d
            )));
        }
        for stack in [
            &self.stage1.enc_ii,
            &self.stage1.enc_tt,
            &self.stage1.enc_aa,
        ] {
            let first = self.store.layer(stack[0]);
            let last = self.store.layer(*stack.last().expect("non-empty stack"));
            if first.in_dim() != d || last.out_dim() != d {
                return Err(Error::Dimension(format!(
                    "stage-one encoder maps {} -> {}, expected {d} -> {d}",
                    first.in_dim(),
                    last.out_dim()
                )));
            }
        }
        let fc_in = self
            .head
            .hidden
            .first()
            .copied()
            .unwrap_or(self.head.output);
        if self.store.layer(fc_in).in_dim() != self.dims.fusion_dim() {
            return Err(Error::Dimension(format!(
                "classifier takes {} inputs but fusion vector has {}",
                self.store.layer(fc_in).in_dim(),
                self.dims.fusion_dim()
            )));
        }
        Ok(())
    }

    pub fn group(&self, group: ParamGroup) -> Vec<LayerId> {
        match group {
            ParamGroup::StageOne => {
                let s = &self.stage1;
                let mut v: Vec<LayerId> = [&s.enc_ii, &s.enc_tt, &s.enc_aa]
                    .into_iter()
                    .flatten()
                    .copied()
                    .collect();
                v.push(s.proj_ita);
                v
            }
            ParamGroup::Aux => {
                let a = &self.aux;
                let mut v = a.enc_es.clone();
                v.push(a.proj_es);
                v.extend(&a.enc_cp);
                v.push(a.proj_cp);
                v
            }
            ParamGroup::Cross => {
                let c = &self.cross;
                let mut v: Vec<LayerId> = [
                    &c.enc_it, &c.enc_ti, &c.enc_ia, &c.enc_ai, &c.enc_ta, &c.enc_at,
                ]
                .into_iter()
                .flatten()
                .copied()
                .collect();
                v.extend([c.proj_it, c.proj_ia, c.proj_ta]);
                v
            }
            ParamGroup::Head => {
                let mut v = self.head.hidden.clone();
                v.push(self.head.output);
                v
            }
        }
    }
}

/// Model inputs for a batch, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<S> {
    pub image: Matrix<S>,
    pub text: Matrix<S>,
    pub audio: Matrix<S>,
    /// `[e, s]` affect rows.
    pub affect: Matrix<S>,
    pub caption: Matrix<S>,
    pub labels: Vec<usize>,
}

impl<S: Scalar> Batch<S> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            image: self.image.select_rows(rows),
            text: self.text.select_rows(rows),
            audio: self.audio.select_rows(rows),
            affect: self.affect.select_rows(rows),
            caption: self.caption.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    pub fn validate(&self, dims: &ModelDims) -> Result<()> {
        let n = self.labels.len();
        for (name, m, w) in [
            ("image", &self.image, dims.input_dim),
            ("text", &self.text, dims.input_dim),
            ("audio", &self.audio, dims.input_dim),
            ("affect", &self.affect, AFFECT_DIM),
            ("caption", &self.caption, dims.caption_dim.max(1)),
        ] {
            if m.rows() != n {
                return Err(Error::Input(format!(
                    "{name} has {} rows for {n} labels",
                    m.rows()
                )));
            }
            if m.cols() != w {
                return Err(Error::Input(format!(
                    "{name} features have width {}, model expects {w}",
                    m.cols()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StageOneNodes {
    pub f_ii: NodeId,
    pub f_tt: NodeId,
    pub f_aa: NodeId,
    pub f_ita: NodeId,
    pub z_ita: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct AuxNodes {
    pub g_es: NodeId,
    pub z_es: NodeId,
    pub g_cp: NodeId,
    pub z_cp: NodeId,
}

/// One modality pair of the cross stage.
#[derive(Debug, Clone, Copy)]
pub struct PairNodes {
    pub f_xy: NodeId,
    pub f_yx: NodeId,
    pub z_xy: NodeId,
    pub z_yx: NodeId,
    pub z_cross: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct CrossNodes {
    pub it: PairNodes,
    pub ia: PairNodes,
    pub ta: PairNodes,
}

fn stack_forward<S: Scalar>(
    tape: &mut Tape<'_, S>,
    mut x: NodeId,
    stack: &[LayerId],
) -> Result<NodeId> {
    for &l in stack {
        x = tape.dense_relu(x, l)?;
    }
    Ok(x)
}

impl<S: Scalar> ModelParams<S> {
    /// Records stage one: three modality encoders, concatenation, projection.
    pub fn stage1_graph(
        &self,
        tape: &mut Tape<'_, S>,
        image: NodeId,
        text: NodeId,
        audio: NodeId,
    ) -> Result<StageOneNodes> {
        let f_ii = stack_forward(tape, image, &self.stage1.enc_ii)?;
        let f_tt = stack_forward(tape, text, &self.stage1.enc_tt)?;
        let f_aa = stack_forward(tape, audio, &self.stage1.enc_aa)?;
        let f_ita = tape.concat(&[f_ii, f_tt, f_aa])?;
        let z_ita = tape.dense_relu(f_ita, self.stage1.proj_ita)?;
        Ok(StageOneNodes {
            f_ii,
            f_tt,
            f_aa,
            f_ita,
            z_ita,
        })
    }

    pub fn aux_graph(
        &self,
        tape: &mut Tape<'_, S>,
        affect: NodeId,
        caption: NodeId,
    ) -> Result<AuxNodes> {
        let g_es = stack_forward(tape, affect, &self.aux.enc_es)?;
        let z_es = tape.dense_relu(g_es, self.aux.proj_es)?;
        let g_cp = stack_forward(tape, caption, &self.aux.enc_cp)?;
        let z_cp = tape.dense_relu(g_cp, self.aux.proj_cp)?;
        Ok(AuxNodes {
            g_es,
            z_es,
            g_cp,
            z_cp,
        })
    }

    fn pair_graph(
        &self,
        tape: &mut Tape<'_, S>,
        x: NodeId,
        y: NodeId,
        enc_xy: &[LayerId],
        enc_yx: &[LayerId],
        proj: LayerId,
    ) -> Result<PairNodes> {
        let f_xy = stack_forward(tape, x, enc_xy)?;
        let f_yx = stack_forward(tape, y, enc_yx)?;
        let z_xy = tape.dense_relu(f_xy, proj)?;
        let z_yx = tape.dense_relu(f_yx, proj)?;
        let z_cross = tape.concat(&[z_xy, z_yx])?;
        Ok(PairNodes {
            f_xy,
            f_yx,
            z_xy,
            z_yx,
            z_cross,
        })
    }

    /// Records stage two on top of stage-one outputs (which may be tape inputs).
    pub fn stage2_graph(
        &self,
        tape: &mut Tape<'_, S>,
        f_ii: NodeId,
        f_tt: NodeId,
        f_aa: NodeId,
    ) -> Result<CrossNodes> {
        let c = &self.cross;
        let it = self.pair_graph(tape, f_ii, f_tt, &c.enc_it, &c.enc_ti, c.proj_it)?;
        let ia = self.pair_graph(tape, f_ii, f_aa, &c.enc_ia, &c.enc_ai, c.proj_ia)?;
        let ta = self.pair_graph(tape, f_tt, f_aa, &c.enc_ta, &c.enc_at, c.proj_ta)?;
        Ok(CrossNodes { it, ia, ta })
    }

    /// Fusion vector `F = [f_IT, f_IA, f_TI, f_TA, f_AI, f_AT, g_ES, g_CP]`
    /// (or the projected counterparts).
    pub fn fusion_graph(
        &self,
        tape: &mut Tape<'_, S>,
        cross: &CrossNodes,
        aux: &AuxNodes,
    ) -> Result<NodeId> {
        let parts = match self.dims.fusion {
            FusionSource::Encoder => [
                cross.it.f_xy,
                cross.ia.f_xy,
                cross.it.f_yx,
                cross.ta.f_xy,
                cross.ia.f_yx,
                cross.ta.f_yx,
                aux.g_es,
                aux.g_cp,
            ],
            FusionSource::Projected => [
                cross.it.z_xy,
                cross.ia.z_xy,
                cross.it.z_yx,
                cross.ta.z_xy,
                cross.ia.z_yx,
                cross.ta.z_yx,
                aux.z_es,
                aux.z_cp,
            ],
        };
        tape.concat(&parts)
    }

    /// Classifier logits: ReLU + dropout after every hidden layer, then the output layer.
    pub fn classifier_graph<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, S>,
        fused: NodeId,
        mode: Mode,
        rng: &mut R,
    ) -> Result<NodeId> {
        let mut x = fused;
        for &l in &self.head.hidden {
            x = tape.dense_relu(x, l)?;
            x = tape.dropout(x, self.dims.dropout, mode, rng)?;
        }
        tape.dense(x, self.head.output)
    }
}

/// Stage-one outputs for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOneOutput<S> {
    pub f_ii: Matrix<S>,
    pub f_tt: Matrix<S>,
    pub f_aa: Matrix<S>,
    pub z_ita: Matrix<S>,
}

pub fn stage1_forward<S: Scalar>(
    batch: &Batch<S>,
    params: &ModelParams<S>,
) -> Result<StageOneOutput<S>> {
    batch.validate(&params.dims)?;
    let mut tape = Tape::new(&params.store);
    let i = tape.input(batch.image.clone());
    let t = tape.input(batch.text.clone());
    let a = tape.input(batch.audio.clone());
    let n = params.stage1_graph(&mut tape, i, t, a)?;
    Ok(StageOneOutput {
        f_ii: tape.value(n.f_ii).clone(),
        f_tt: tape.value(n.f_tt).clone(),
        f_aa: tape.value(n.f_aa).clone(),
        z_ita: tape.value(n.z_ita).clone(),
    })
}

/// Outputs of the three cross-encoder pairs, in IT, IA, TA order.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossOutput<S> {
    /// `[f_IT, f_IA, f_TI, f_TA, f_AI, f_AT]`.
    pub features: [Matrix<S>; 6],
    /// `z_cross` for the IT, IA and TA pairs.
    pub z_cross: [Matrix<S>; 3],
    /// Projected `[z_IT, z_IA, z_TI, z_TA, z_AI, z_AT]`.
    pub projected: [Matrix<S>; 6],
}

pub fn stage2_forward<S: Scalar>(
    f_ii: &Matrix<S>,
    f_tt: &Matrix<S>,
    f_aa: &Matrix<S>,
    params: &ModelParams<S>,
) -> Result<CrossOutput<S>> {
    let d = params.dims.input_dim;
    for (name, m) in [("f_II", f_ii), ("f_TT", f_tt), ("f_AA", f_aa)] {
        if m.cols() != d {
            return Err(Error::Config(format!(
                "{name} has width {}, cross encoders expect {d}",
                m.cols()
            )));
        }
    }
    let mut tape = Tape::new(&params.store);
    let i = tape.input(f_ii.clone());
    let t = tape.input(f_tt.clone());
    let a = tape.input(f_aa.clone());
    let c = params.stage2_graph(&mut tape, i, t, a)?;
    let v = |id| tape.value(id).clone();
    Ok(CrossOutput {
        features: [
            v(c.it.f_xy),
            v(c.ia.f_xy),
            v(c.it.f_yx),
            v(c.ta.f_xy),
            v(c.ia.f_yx),
            v(c.ta.f_yx),
        ],
        z_cross: [v(c.it.z_cross), v(c.ia.z_cross), v(c.ta.z_cross)],
        projected: [
            v(c.it.z_xy),
            v(c.ia.z_xy),
            v(c.it.z_yx),
            v(c.ta.z_xy),
            v(c.ia.z_yx),
            v(c.ta.z_yx),
        ],
    })
}

/// Column offsets of each component inside `F`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionLayout {
    pub offsets: Vec<(usize, usize)>,
}

/// Concatenates the eight fusion components in the given order.
pub fn fuse_features<S: Scalar>(parts: &[&Matrix<S>]) -> Result<(Matrix<S>, FusionLayout)> {
    if parts.len() != 8 {
        return Err(Error::Input(format!(
            "fusion needs 8 components, got {}",
            parts.len()
        )));
    }
    if let Some(k) = parts.iter().position(|p| !p.is_finite()) {
        return Err(Error::Input(format!("fusion component {k} is not finite")));
    }
    let mut offsets = Vec::with_capacity(8);
    let mut at = 0;
    for p in parts {
        offsets.push((at, p.cols()));
        at += p.cols();
    }
    Ok((Matrix::hconcat(parts)?, FusionLayout { offsets }))
}

/// Class probabilities for each row of `F`.
pub fn classify<S: Scalar, R: Rng + ?Sized>(
    fused: &Matrix<S>,
    params: &ModelParams<S>,
    mode: Mode,
    rng: &mut R,
) -> Result<Matrix<S>> {
    if fused.cols() != params.dims.fusion_dim() {
        return Err(Error::Config(format!(
            "fusion vector has width {}, classifier expects {}",
            fused.cols(),
            params.dims.fusion_dim()
        )));
    }
    let mut tape = Tape::new(&params.store);
    let f = tape.input(fused.clone());
    let logits = params.classifier_graph(&mut tape, f, mode, rng)?;
    let y = tape.softmax(logits);
    Ok(tape.value(y).clone())
}

/// Argmax with ties broken towards the lowest index.
pub fn predict_label<S: Scalar>(y: &[S]) -> usize {
    let mut best = 0;
    for (k, &v) in y.iter().enumerate().skip(1) {
        if v > y[best] {
            best = k;
        }
    }
    best
}

/// Full eval-mode forward pass from raw batch to fusion vector.
pub fn fused_features<S: Scalar>(batch: &Batch<S>, params: &ModelParams<S>) -> Result<Matrix<S>> {
    batch.validate(&params.dims)?;
    let mut tape = Tape::new(&params.store);
    let i = tape.input(batch.image.clone());
    let t = tape.input(batch.text.clone());
    let a = tape.input(batch.audio.clone());
    let e = tape.input(batch.affect.clone());
    let c = tape.input(batch.caption.clone());
    let s1 = params.stage1_graph(&mut tape, i, t, a)?;
    let aux = params.aux_graph(&mut tape, e, c)?;
    let cross = params.stage2_graph(&mut tape, s1.f_ii, s1.f_tt, s1.f_aa)?;
    let f = params.fusion_graph(&mut tape, &cross, &aux)?;
    Ok(tape.value(f).clone())
}

/// Losses of the composite contrastive objective on one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveTerms<S> {
    pub stage1: S,
    pub es: S,
    pub cp: S,
    /// Sum over the IT, IA and TA pairs.
    pub stage2: S,
}

/// Evaluates every contrastive term on a batch in eval mode.
pub fn contrastive_terms<S: Scalar>(
    batch: &Batch<S>,
    params: &ModelParams<S>,
    cfg: &SupConConfig,
) -> Result<ContrastiveTerms<S>> {
    batch.validate(&params.dims)?;
    let mut tape = Tape::new(&params.store);
    let i = tape.input(batch.image.clone());
    let t = tape.input(batch.text.clone());
    let a = tape.input(batch.audio.clone());
    let e = tape.input(batch.affect.clone());
    let c = tape.input(batch.caption.clone());
    let s1 = params.stage1_graph(&mut tape, i, t, a)?;
    let aux = params.aux_graph(&mut tape, e, c)?;
    let cross = params.stage2_graph(&mut tape, s1.f_ii, s1.f_tt, s1.f_aa)?;
    let l = &batch.labels;
    let l1 = tape.supcon(s1.z_ita, l, cfg)?;
    let les = tape.supcon(aux.z_es, l, cfg)?;
    let lcp = tape.supcon(aux.z_cp, l, cfg)?;
    let mut stage2 = S::zero();
    for pair in [cross.it, cross.ia, cross.ta] {
        let n = tape.supcon(pair.z_cross, l, cfg)?;
        stage2 += tape.value(n).item()?;
    }
    Ok(ContrastiveTerms {
        stage1: tape.value(l1).item()?,
        es: tape.value(les).item()?,
        cp: tape.value(lcp).item()?,
        stage2,
    })
}
