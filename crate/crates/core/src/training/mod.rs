//! Two-stage contrastive training followed by the classifier fit.

pub mod batch;
pub mod data;
pub mod plan;
pub mod split;

pub use batch::make_batches;
pub use data::{build_dataset, Dataset};
pub use plan::{
    Task, TrainPlan, DIVERGENCE_LIMIT, GRID_BATCH_SIZES, GRID_EPOCHS, GRID_LEARNING_RATES,
};
pub use split::{make_splits, SplitName, SplitSpec, Splits};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contrastive::SupConConfig;
use crate::error::{Error, Result};
use crate::eval::{confusion, metrics, MetricsReport};
use crate::model::{
    classify, contrastive_terms, fused_features, predict_label, stage1_forward, Batch, ModelParams,
    ParamGroup,
};
use crate::nn::{AdamConfig, AdamState, DenseLayer, Gradients, LayerId, Matrix, Mode, Tape};
use crate::scalar::Scalar;

const STREAM_INIT: u64 = 1;
const STREAM_EVAL_BATCHES: u64 = 2;
const STREAM_STAGE1: u64 = 11;
const STREAM_STAGE2: u64 = 12;
const STREAM_CLASSIFIER: u64 = 13;
const STREAM_DROPOUT: u64 = 14;

/// Independent deterministic stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// RNG used to initialize model parameters for a run seed.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, STREAM_INIT)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    Stage2,
    Classifier,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
            Stage::Classifier => "classifier",
        }
    }
}

/// Per-epoch loss ledger; `L_total` is the sum of the four contrastive terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "L_stage1")]
    pub stage1: f64,
    /// Sum over the IT, IA and TA pairs.
    #[serde(rename = "L_stage2")]
    pub stage2: f64,
    #[serde(rename = "L_sup_ES")]
    pub sup_es: f64,
    #[serde(rename = "L_sup_CP")]
    pub sup_cp: f64,
    #[serde(rename = "L_total")]
    pub total: f64,
    /// Classifier cross-entropy, only during the classifier stage.
    #[serde(rename = "L_ce")]
    pub ce: Option<f64>,
}

impl LossBreakdown {
    pub fn new(stage1: f64, stage2: f64, sup_es: f64, sup_cp: f64, ce: Option<f64>) -> Self {
        Self {
            stage1,
            stage2,
            sup_es,
            sup_cp,
            total: stage1 + stage2 + sup_es + sup_cp,
            ce,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    /// 1-based within the stage.
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    pub val_macro_f1: Option<f64>,
}

fn check_loss(stage: Stage, epoch: usize, loss: f64) -> Result<()> {
    if !loss.is_finite() || loss.abs() > DIVERGENCE_LIMIT {
        log::error!("{} diverged at epoch {epoch}: loss {loss}", stage.as_str());
        return Err(Error::Divergence {
            stage: stage.as_str().into(),
            epoch,
            loss,
        });
    }
    Ok(())
}

/// Training data, settings and the epoch log shared by all stages.
pub struct TrainContext<'a, S> {
    pub plan: &'a TrainPlan,
    pub supcon: SupConConfig,
    pub train: Batch<S>,
    pub val: Batch<S>,
    eval_batches: Vec<Vec<usize>>,
    pub log: Vec<EpochRecord>,
}

impl<'a, S: Scalar> TrainContext<'a, S> {
    pub fn new(
        plan: &'a TrainPlan,
        supcon: SupConConfig,
        train: Batch<S>,
        val: Batch<S>,
    ) -> Result<Self> {
        plan.validate()?;
        supcon.validate()?;
        if train.len() < 2 {
            return Err(Error::Batch(format!(
                "training needs at least 2 samples, got {}",
                train.len()
            )));
        }
        let seed: u64 = stream_rng(plan.seed, STREAM_EVAL_BATCHES).random();
        let eval_batches = make_batches(&train.labels, plan.batch_size, seed)?;
        Ok(Self {
            plan,
            supcon,
            train,
            val,
            eval_batches,
            log: Vec::new(),
        })
    }

    /// Mean of each contrastive term over the fixed evaluation batches.
    pub fn term_means(&self, params: &ModelParams<S>) -> Result<[f64; 4]> {
        let mut sums = [0.0; 4];
        let mut count = 0usize;
        for idx in self.eval_batches.iter().filter(|b| b.len() >= 2) {
            let t = contrastive_terms(&self.train.select(idx), params, &self.supcon)?;
            for (s, v) in sums.iter_mut().zip([t.stage1, t.stage2, t.es, t.cp]) {
                *s += v.to_f64_lossy();
            }
            count += 1;
        }
        let n = count.max(1) as f64;
        Ok(sums.map(|s| s / n))
    }

    fn record(
        &mut self,
        stage: Stage,
        epoch: usize,
        params: &ModelParams<S>,
        ce: Option<f64>,
        val_macro_f1: Option<f64>,
    ) -> Result<()> {
        let [s1, s2, es, cp] = self.term_means(params)?;
        let losses = LossBreakdown::new(s1, s2, es, cp, ce);
        check_loss(stage, epoch, losses.total)?;
        log::info!(
            "{} epoch {epoch}: L_stage1={s1:.5} L_stage2={s2:.5} L_sup_ES={es:.5} L_sup_CP={cp:.5} L_total={:.5}{}{}",
            stage.as_str(),
            losses.total,
            ce.map(|c| format!(" L_ce={c:.5}")).unwrap_or_default(),
            val_macro_f1.map(|f| format!(" val_macro_f1={f:.4}")).unwrap_or_default(),
        );
        self.log.push(EpochRecord {
            stage,
            epoch,
            losses,
            val_macro_f1,
        });
        Ok(())
    }

    fn training_batches(&self, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>> {
        let mut batches = make_batches(&self.train.labels, self.plan.batch_size, rng.random())?;
        batches.retain(|b| b.len() >= 2);
        Ok(batches)
    }

    fn adam(&self, params: &ModelParams<S>) -> Result<AdamState<S>> {
        AdamState::new(
            &params.store,
            AdamConfig::with_alpha(self.plan.learning_rate),
        )
    }
}

fn scalar_loss<S: Scalar>(tape: &Tape<'_, S>, node: crate::nn::NodeId) -> Result<f64> {
    Ok(tape.value(node).item()?.to_f64_lossy())
}

/// Stage one: encoders II/TT/AA, the joint projection, and the ES/CP
/// encoders, on `L_stage1 + L_sup_ES + L_sup_CP`.
pub fn train_stage1<S: Scalar>(
    params: &mut ModelParams<S>,
    ctx: &mut TrainContext<'_, S>,
) -> Result<()> {
    let mut layers = params.group(ParamGroup::StageOne);
    layers.extend(params.group(ParamGroup::Aux));
    let mut adam = ctx.adam(params)?;
    let mut rng = stream_rng(ctx.plan.seed, STREAM_STAGE1);
    for epoch in 1..=ctx.plan.stage1_epochs {
        for idx in ctx.training_batches(&mut rng)? {
            let b = ctx.train.select(&idx);
            let grads = {
                let mut tape = Tape::new(&params.store);
                let i = tape.input(b.image);
                let t = tape.input(b.text);
                let a = tape.input(b.audio);
                let e = tape.input(b.affect);
                let c = tape.input(b.caption);
                let s1 = params.stage1_graph(&mut tape, i, t, a)?;
                let aux = params.aux_graph(&mut tape, e, c)?;
                let terms = [
                    tape.supcon(s1.z_ita, &b.labels, &ctx.supcon)?,
                    tape.supcon(aux.z_es, &b.labels, &ctx.supcon)?,
                    tape.supcon(aux.z_cp, &b.labels, &ctx.supcon)?,
                ];
                let loss = tape.sum(&terms)?;
                check_loss(Stage::Stage1, epoch, scalar_loss(&tape, loss)?)?;
                tape.backward(loss, S::one())?
            };
            adam.step(&mut params.store, &grads, &layers)?;
        }
        ctx.record(Stage::Stage1, epoch, params, None, None)?;
    }
    Ok(())
}

/// Gradients of one stage-two step on frozen stage-one outputs.
pub fn stage2_gradients<S: Scalar>(
    params: &ModelParams<S>,
    f: [&Matrix<S>; 3],
    labels: &[usize],
    supcon: &SupConConfig,
) -> Result<(f64, Gradients<S>)> {
    let mut tape = Tape::new(&params.store);
    let i = tape.input(f[0].clone());
    let t = tape.input(f[1].clone());
    let a = tape.input(f[2].clone());
    let cross = params.stage2_graph(&mut tape, i, t, a)?;
    let mut terms = Vec::with_capacity(3);
    for pair in [cross.it, cross.ia, cross.ta] {
        terms.push(tape.supcon(pair.z_cross, labels, supcon)?);
    }
    let loss = tape.sum(&terms)?;
    Ok((scalar_loss(&tape, loss)?, tape.backward(loss, S::one())?))
}

/// Stage two: cross encoders and pair projections on `L_stage2`, with every
/// stage-one weight frozen.
pub fn train_stage2<S: Scalar>(
    params: &mut ModelParams<S>,
    ctx: &mut TrainContext<'_, S>,
) -> Result<()> {
    let layers = params.group(ParamGroup::Cross);
    let mut adam = ctx.adam(params)?;
    let mut rng = stream_rng(ctx.plan.seed, STREAM_STAGE2);
    let frozen = stage1_forward(&ctx.train, params)?;
    for epoch in 1..=ctx.plan.stage2_epochs {
        for idx in ctx.training_batches(&mut rng)? {
            let f = [
                frozen.f_ii.select_rows(&idx),
                frozen.f_tt.select_rows(&idx),
                frozen.f_aa.select_rows(&idx),
            ];
            let labels: Vec<usize> = idx.iter().map(|&r| ctx.train.labels[r]).collect();
            let (loss, grads) =
                stage2_gradients(params, [&f[0], &f[1], &f[2]], &labels, &ctx.supcon)?;
            check_loss(Stage::Stage2, epoch, loss)?;
            adam.step(&mut params.store, &grads, &layers)?;
        }
        ctx.record(Stage::Stage2, epoch, params, None, None)?;
    }
    Ok(())
}

/// Outcome of the classifier stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierFit {
    /// Epoch whose head was kept (best validation macro-F1, earliest on ties).
    pub best_epoch: Option<usize>,
    pub best_val_macro_f1: Option<f64>,
}

/// Labels predicted in eval mode.
pub fn predict<S: Scalar>(params: &ModelParams<S>, inputs: &Batch<S>) -> Result<Vec<usize>> {
    let fused = fused_features(inputs, params)?;
    predict_fused(params, &fused)
}

fn predict_fused<S: Scalar>(params: &ModelParams<S>, fused: &Matrix<S>) -> Result<Vec<usize>> {
    // eval mode never draws from the RNG
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let y = classify(fused, params, Mode::Eval, &mut unused)?;
    Ok((0..y.rows()).map(|r| predict_label(y.row(r))).collect())
}

pub fn evaluate<S: Scalar>(
    params: &ModelParams<S>,
    inputs: &Batch<S>,
    task: Task,
) -> Result<MetricsReport> {
    let pred = predict(params, inputs)?;
    let cm = confusion(&inputs.labels, &pred, task.classes())?;
    Ok(metrics(&cm)?.with_class_names(task.class_names()))
}

fn macro_f1_of(gold: &[usize], pred: &[usize], classes: usize) -> Result<f64> {
    Ok(metrics(&confusion(gold, pred, classes)?)?.macro_f1)
}

type HeadSnapshot<S> = Vec<(LayerId, DenseLayer<S>)>;

/// Classifier head on mean cross-entropy over `F`, keeping the epoch with the
/// best validation macro-F1. With `joint_lambda` every encoder is also
/// updated on `L_ce + lambda * L_total`.
pub fn train_classifier<S: Scalar>(
    params: &mut ModelParams<S>,
    ctx: &mut TrainContext<'_, S>,
) -> Result<ClassifierFit> {
    let joint = ctx.plan.joint_lambda;
    let layers: Vec<LayerId> = if joint.is_some() {
        params.store.ids().collect()
    } else {
        params.group(ParamGroup::Head)
    };
    let mut adam = ctx.adam(params)?;
    let mut rng = stream_rng(ctx.plan.seed, STREAM_CLASSIFIER);
    let mut drop_rng = stream_rng(ctx.plan.seed, STREAM_DROPOUT);
    let classes = params.dims.classes;
    let frozen_train = match joint {
        None => Some(fused_features(&ctx.train, params)?),
        Some(_) => None,
    };
    let frozen_val = match joint {
        None if !ctx.val.is_empty() => Some(fused_features(&ctx.val, params)?),
        _ => None,
    };
    let mut best: Option<(usize, f64, HeadSnapshot<S>)> = None;
    for epoch in 1..=ctx.plan.classifier_epochs {
        let mut ce_sum = 0.0;
        let mut seen = 0usize;
        for idx in ctx.training_batches(&mut rng)? {
            let labels: Vec<usize> = idx.iter().map(|&r| ctx.train.labels[r]).collect();
            let (ce, grads) = {
                let mut tape = Tape::new(&params.store);
                let (fused, extra) = match (&frozen_train, joint) {
                    (Some(f), _) => (tape.input(f.select_rows(&idx)), None),
                    (None, lambda) => {
                        let b = ctx.train.select(&idx);
                        let i = tape.input(b.image);
                        let t = tape.input(b.text);
                        let a = tape.input(b.audio);
                        let e = tape.input(b.affect);
                        let c = tape.input(b.caption);
                        let s1 = params.stage1_graph(&mut tape, i, t, a)?;
                        let aux = params.aux_graph(&mut tape, e, c)?;
                        let cross = params.stage2_graph(&mut tape, s1.f_ii, s1.f_tt, s1.f_aa)?;
                        let mut terms = vec![
                            tape.supcon(s1.z_ita, &labels, &ctx.supcon)?,
                            tape.supcon(aux.z_es, &labels, &ctx.supcon)?,
                            tape.supcon(aux.z_cp, &labels, &ctx.supcon)?,
                        ];
                        for pair in [cross.it, cross.ia, cross.ta] {
                            terms.push(tape.supcon(pair.z_cross, &labels, &ctx.supcon)?);
                        }
                        let f = params.fusion_graph(&mut tape, &cross, &aux)?;
                        (f, Some((terms, S::lit(lambda.unwrap_or(0.0)))))
                    }
                };
                let logits =
                    params.classifier_graph(&mut tape, fused, Mode::Train, &mut drop_rng)?;
                let ce = tape.cross_entropy(logits, &labels)?;
                let loss = match extra {
                    None => ce,
                    Some((terms, lambda)) => {
                        let mut weighted = vec![(ce, S::one())];
                        weighted.extend(terms.into_iter().map(|t| (t, lambda)));
                        tape.weighted_sum(&weighted)?
                    }
                };
                check_loss(Stage::Classifier, epoch, scalar_loss(&tape, loss)?)?;
                (scalar_loss(&tape, ce)?, tape.backward(loss, S::one())?)
            };
            adam.step(&mut params.store, &grads, &layers)?;
            ce_sum += ce * idx.len() as f64;
            seen += idx.len();
        }
        let val_f1 = if ctx.val.is_empty() {
            None
        } else {
            let pred = match &frozen_val {
                Some(f) => predict_fused(params, f)?,
                None => predict(params, &ctx.val)?,
            };
            Some(macro_f1_of(&ctx.val.labels, &pred, classes)?)
        };
        if let Some(f1) = val_f1 {
            if best.as_ref().is_none_or(|(_, b, _)| f1 > *b) {
                let snapshot = layers
                    .iter()
                    .map(|&id| (id, params.store.layer(id).clone()))
                    .collect();
                best = Some((epoch, f1, snapshot));
            }
        }
        let ce_mean = if seen > 0 {
            ce_sum / seen as f64
        } else {
            f64::NAN
        };
        ctx.record(Stage::Classifier, epoch, params, Some(ce_mean), val_f1)?;
    }
    Ok(match best {
        Some((epoch, f1, snapshot)) => {
            for (id, layer) in snapshot {
                *params.store.layer_mut(id) = layer;
            }
            ClassifierFit {
                best_epoch: Some(epoch),
                best_val_macro_f1: Some(f1),
            }
        }
        None => ClassifierFit {
            best_epoch: None,
            best_val_macro_f1: None,
        },
    })
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput<S> {
    pub params: ModelParams<S>,
    pub splits: Splits,
    pub sample_ids: Vec<String>,
    pub log: Vec<EpochRecord>,
    pub fit: ClassifierFit,
    pub val_report: MetricsReport,
    pub test_report: MetricsReport,
}

/// Split, stage one, stage two, classifier, then test evaluation.
pub fn run_pipeline<S: Scalar>(
    config: &crate::config::RunConfig,
    store: &crate::features::FeatureStore,
    lexicon: &crate::features::AffectLexicon,
) -> Result<PipelineOutput<S>> {
    let cfg = config;
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let plan = &cfg.plan;
    let data: Dataset<S> =
        build_dataset(store, lexicon, plan.task).map_err(|e| e.in_stage("load"))?;
    let splits =
        make_splits(&data.raw_labels, &cfg.split, plan.seed).map_err(|e| e.in_stage("split"))?;
    let dims = cfg
        .model
        .dims(store.dim, store.caption_dim, plan.task.classes())
        .map_err(|e| e.in_stage("config"))?;
    let mut params =
        ModelParams::<S>::init(dims, &mut init_rng(plan.seed)).map_err(|e| e.in_stage("init"))?;
    log::info!(
        "{} samples: train {} / val {} / test {}; {} parameters",
        data.len(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        params.store.param_count()
    );
    if !plan.in_reference_grid() {
        log::info!("plan lies outside the reference hyperparameter grid");
    }
    let mut ctx = TrainContext::new(
        plan,
        cfg.supcon,
        data.select(&splits.train),
        data.select(&splits.val),
    )
    .map_err(|e| e.in_stage("config"))?;
    train_stage1(&mut params, &mut ctx).map_err(|e| e.in_stage("stage1"))?;
    train_stage2(&mut params, &mut ctx).map_err(|e| e.in_stage("stage2"))?;
    let fit = train_classifier(&mut params, &mut ctx).map_err(|e| e.in_stage("classifier"))?;
    let val_report = evaluate(&params, &ctx.val, plan.task).map_err(|e| e.in_stage("evaluate"))?;
    let test_report = evaluate(&params, &data.select(&splits.test), plan.task)
        .map_err(|e| e.in_stage("evaluate"))?;
    log::info!(
        "test macro-F1 {:.4}, accuracy {:.4}",
        test_report.macro_f1,
        test_report.accuracy
    );
    Ok(PipelineOutput {
        params,
        splits,
        sample_ids: data.ids,
        log: ctx.log,
        fit,
        val_report,
        test_report,
    })
}

#[cfg(test)]
mod tests;
