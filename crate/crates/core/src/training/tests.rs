use super::*;
use crate::config::{ModelConfig, RunConfig};
use crate::features::AffectLexicon;
use crate::model::{ModelDims, ModelParams};
use crate::synthgen::{generate, SynthSpec};

fn spec(per_class: usize) -> SynthSpec {
    SynthSpec {
        per_class: vec![per_class; 3],
        dim: 8,
        caption_dim: 4,
        ..SynthSpec::default()
    }
}

fn plan(lr: f64) -> TrainPlan {
    TrainPlan {
        seed: 5,
        batch_size: 16,
        learning_rate: lr,
        epochs: 12,
        stage1_epochs: 4,
        stage2_epochs: 3,
        classifier_epochs: 5,
        ..TrainPlan::default()
    }
}

fn model_config() -> ModelConfig {
    ModelConfig {
        proj_dim: 16,
        aux_dim: 8,
        classifier_widths: vec![32, 16],
        ..ModelConfig::default()
    }
}

struct Setup {
    params: ModelParams<f64>,
    train: Batch<f64>,
    val: Batch<f64>,
}

fn setup(per_class: usize, task: Task) -> Setup {
    setup_with(spec(per_class), task)
}

fn setup_with(spec: SynthSpec, task: Task) -> Setup {
    let store = generate(&spec).unwrap();
    let data: Dataset<f64> = build_dataset(&store, &AffectLexicon::toy(), task).unwrap();
    let n = data.len();
    let splits = make_splits(
        &data.raw_labels,
        &SplitSpec::with_counts(n * 2 / 3, n / 6, n - n * 2 / 3 - n / 6),
        1,
    )
    .unwrap();
    let dims = model_config().dims(8, 4, task.classes()).unwrap();
    Setup {
        params: ModelParams::init(dims, &mut init_rng(5)).unwrap(),
        train: data.select(&splits.train),
        val: data.select(&splits.val),
    }
}

fn snapshot(p: &ModelParams<f64>, group: ParamGroup) -> Vec<DenseLayer<f64>> {
    p.group(group)
        .into_iter()
        .map(|id| p.store.layer(id).clone())
        .collect()
}

#[test]
fn zero_learning_rate_is_a_no_op() {
    let s = setup(12, Task::Multiclass);
    let plan = plan(0.0);
    let mut p = s.params.clone();
    let mut ctx = TrainContext::new(&plan, SupConConfig::default(), s.train, s.val).unwrap();
    train_stage1(&mut p, &mut ctx).unwrap();
    train_stage2(&mut p, &mut ctx).unwrap();
    train_classifier(&mut p, &mut ctx).unwrap();
    assert_eq!(p, s.params);
}

#[test]
fn stage_one_reduces_its_loss_deterministically() {
    let run = || {
        let s = setup(16, Task::Multiclass);
        let plan = TrainPlan {
            stage1_epochs: 6,
            epochs: 14,
            ..plan(1e-3)
        };
        let mut p = s.params.clone();
        let mut ctx = TrainContext::new(&plan, SupConConfig::default(), s.train, s.val).unwrap();
        train_stage1(&mut p, &mut ctx).unwrap();
        (ctx.log, p)
    };
    let (log, p) = run();
    assert_eq!(log.len(), 6);
    assert!(log.last().unwrap().losses.stage1 < log[0].losses.stage1);
    let (again, q) = run();
    assert_eq!(log, again);
    assert_eq!(p, q);
}

#[test]
fn stage_two_freezes_stage_one() {
    let s = setup(12, Task::Multiclass);
    let plan = TrainPlan {
        stage2_epochs: 5,
        epochs: 14,
        ..plan(1e-3)
    };
    let mut p = s.params.clone();
    let mut ctx =
        TrainContext::new(&plan, SupConConfig::default(), s.train.clone(), s.val).unwrap();
    train_stage1(&mut p, &mut ctx).unwrap();
    let s1 = snapshot(&p, ParamGroup::StageOne);
    let aux = snapshot(&p, ParamGroup::Aux);
    let frozen = stage1_forward(&s.train, &p).unwrap();
    let rows: Vec<usize> = (0..8).collect();
    let f = [
        frozen.f_ii.select_rows(&rows),
        frozen.f_tt.select_rows(&rows),
        frozen.f_aa.select_rows(&rows),
    ];
    let labels: Vec<usize> = rows.iter().map(|&r| s.train.labels[r]).collect();
    let (_, grads) =
        stage2_gradients(&p, [&f[0], &f[1], &f[2]], &labels, &SupConConfig::default()).unwrap();
    for id in p
        .group(ParamGroup::StageOne)
        .into_iter()
        .chain(p.group(ParamGroup::Aux))
    {
        assert!(grads.get(id).is_none(), "{}", p.store.name(id));
    }
    train_stage2(&mut p, &mut ctx).unwrap();
    assert_eq!(snapshot(&p, ParamGroup::StageOne), s1);
    assert_eq!(snapshot(&p, ParamGroup::Aux), aux);
    let stage2: Vec<f64> = ctx
        .log
        .iter()
        .filter(|r| r.stage == Stage::Stage2)
        .map(|r| r.losses.stage2)
        .collect();
    assert!(
        stage2.last().unwrap() < stage2.first().unwrap(),
        "{stage2:?}"
    );
}

#[test]
fn classifier_freezes_encoders_and_selects_best_epoch() {
    let s = setup(12, Task::Multiclass);
    let plan = TrainPlan {
        classifier_epochs: 6,
        epochs: 13,
        ..plan(1e-3)
    };
    let mut p = s.params.clone();
    let mut ctx = TrainContext::new(&plan, SupConConfig::default(), s.train, s.val).unwrap();
    train_stage1(&mut p, &mut ctx).unwrap();
    train_stage2(&mut p, &mut ctx).unwrap();
    let enc = [
        snapshot(&p, ParamGroup::StageOne),
        snapshot(&p, ParamGroup::Aux),
        snapshot(&p, ParamGroup::Cross),
    ];
    let fit = train_classifier(&mut p, &mut ctx).unwrap();
    assert_eq!(
        [
            snapshot(&p, ParamGroup::StageOne),
            snapshot(&p, ParamGroup::Aux),
            snapshot(&p, ParamGroup::Cross)
        ],
        enc
    );
    let f1s: Vec<f64> = ctx
        .log
        .iter()
        .filter(|r| r.stage == Stage::Classifier)
        .map(|r| r.val_macro_f1.unwrap())
        .collect();
    let max = f1s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let first = f1s.iter().position(|&f| f == max).unwrap() + 1;
    assert_eq!(fit.best_epoch, Some(first));
    assert_eq!(fit.best_val_macro_f1, Some(max));
    let val_pred = predict(&p, &ctx.val).unwrap();
    let f1 = metrics(&confusion(&ctx.val.labels, &val_pred, 3).unwrap())
        .unwrap()
        .macro_f1;
    assert_eq!(f1, max);
}

#[test]
fn ledger_identity_and_nulls() {
    let s = setup(10, Task::Multiclass);
    let plan = plan(1e-3);
    let mut p = s.params.clone();
    let mut ctx = TrainContext::new(&plan, SupConConfig::default(), s.train, s.val).unwrap();
    train_stage1(&mut p, &mut ctx).unwrap();
    train_stage2(&mut p, &mut ctx).unwrap();
    train_classifier(&mut p, &mut ctx).unwrap();
    assert_eq!(ctx.log.len(), 12);
    for r in &ctx.log {
        let l = &r.losses;
        assert!((l.total - (l.stage1 + l.stage2 + l.sup_es + l.sup_cp)).abs() <= 1e-12);
        let classifier = r.stage == Stage::Classifier;
        assert_eq!(l.ce.is_some(), classifier);
        assert_eq!(r.val_macro_f1.is_some(), classifier);
    }
    let line = serde_json::to_string(&ctx.log[0]).unwrap();
    let keys = [
        "\"stage\":\"stage1\"",
        "\"epoch\":1",
        "\"L_stage1\"",
        "\"L_stage2\"",
        "\"L_sup_ES\"",
        "\"L_sup_CP\"",
        "\"L_total\"",
        "\"L_ce\":null",
        "\"val_macro_f1\":null",
    ];
    let mut at = 0;
    for k in keys {
        let pos = line[at..]
            .find(k)
            .unwrap_or_else(|| panic!("{k} missing or out of order in {line}"));
        at += pos;
    }
    let back: EpochRecord = serde_json::from_str(&line).unwrap();
    assert_eq!(back, ctx.log[0]);
}

#[test]
fn uniform_head_starts_at_log_three() {
    let dims = ModelDims {
        classifier_widths: vec![4],
        ..ModelDims::new(4, 4, 3)
    };
    let p = ModelParams::<f64>::zeros(dims.clone()).unwrap();
    let mut tape = crate::nn::Tape::new(&p.store);
    let f = tape.input(Matrix::zeros(5, dims.fusion_dim()));
    let logits = p
        .classifier_graph(&mut tape, f, Mode::Train, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    let ce = tape.cross_entropy(logits, &[0, 1, 2, 0, 1]).unwrap();
    assert!((tape.value(ce).item().unwrap() - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn separable_features_reach_perfect_training_accuracy() {
    let s = setup_with(
        SynthSpec {
            delta: 12.0,
            ..spec(16)
        },
        Task::Multiclass,
    );
    let plan = TrainPlan {
        stage1_epochs: 0,
        stage2_epochs: 0,
        classifier_epochs: 300,
        epochs: 300,
        batch_size: 32,
        ..plan(1e-2)
    };
    let mut p = s.params.clone();
    let train = s.train.clone();
    // selecting on the training set itself keeps the restored head at its best fit
    let mut ctx =
        TrainContext::new(&plan, SupConConfig::default(), s.train, train.clone()).unwrap();
    train_classifier(&mut p, &mut ctx).unwrap();
    let pred = predict(&p, &train).unwrap();
    let acc = pred
        .iter()
        .zip(&train.labels)
        .filter(|(a, b)| a == b)
        .count() as f64
        / train.len() as f64;
    assert_eq!(acc, 1.0);
}

#[test]
fn joint_mode_updates_encoders() {
    let s = setup(10, Task::Multiclass);
    let plan = TrainPlan {
        joint_lambda: Some(0.5),
        stage1_epochs: 0,
        stage2_epochs: 0,
        classifier_epochs: 2,
        ..plan(1e-3)
    };
    let mut p = s.params.clone();
    let mut ctx = TrainContext::new(&plan, SupConConfig::default(), s.train, s.val).unwrap();
    train_classifier(&mut p, &mut ctx).unwrap();
    assert_ne!(
        snapshot(&p, ParamGroup::StageOne),
        snapshot(&s.params, ParamGroup::StageOne)
    );
    assert_ne!(
        snapshot(&p, ParamGroup::Cross),
        snapshot(&s.params, ParamGroup::Cross)
    );
}

#[test]
fn divergence_is_reported() {
    let mut s = setup(8, Task::Multiclass);
    let plan = plan(1e-3);
    let id = s.params.stage1.enc_ii[0];
    s.params.store.layer_mut(id).weight.set(0, 0, f64::NAN);
    let mut p = s.params.clone();
    let mut ctx = TrainContext::new(&plan, SupConConfig::default(), s.train, s.val).unwrap();
    let e = train_stage1(&mut p, &mut ctx).unwrap_err();
    assert!(
        matches!(e, Error::Divergence { epoch: 1, .. } | Error::Numeric(_)),
        "{e}"
    );
}

fn run_config(task: Task) -> RunConfig {
    RunConfig {
        plan: TrainPlan { task, ..plan(1e-3) },
        model: model_config(),
        ..RunConfig::default()
    }
}

#[test]
fn binary_task_collapses_hate_labels() {
    let store = generate(&spec(10)).unwrap();
    let data: Dataset<f64> = build_dataset(&store, &AffectLexicon::toy(), Task::Binary).unwrap();
    for (raw, mapped) in data.raw_labels.iter().zip(&data.inputs.labels) {
        assert_eq!(*mapped, usize::from(*raw > 0));
    }
    let out =
        run_pipeline::<f64>(&run_config(Task::Binary), &store, &AffectLexicon::toy()).unwrap();
    assert_eq!(out.params.dims.classes, 2);
    assert_eq!(out.test_report.per_class.len(), 2);
    assert_eq!(out.test_report.per_class[1].class, "hate");
}

#[test]
fn pipeline_is_bit_deterministic() {
    let store = generate(&spec(10)).unwrap();
    let cfg = run_config(Task::Multiclass);
    let a = run_pipeline::<f64>(&cfg, &store, &AffectLexicon::toy()).unwrap();
    let b = run_pipeline::<f64>(&cfg, &store, &AffectLexicon::toy()).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.log, b.log);
    assert_eq!(a.test_report, b.test_report);
    assert_eq!(a.splits, b.splits);
}

#[test]
fn pipeline_errors_name_their_stage() {
    let store = generate(&spec(10)).unwrap();
    let mut cfg = run_config(Task::Multiclass);
    cfg.split = SplitSpec::with_counts(1, 1, 1);
    let e = run_pipeline::<f64>(&cfg, &store, &AffectLexicon::toy()).unwrap_err();
    assert!(matches!(e, Error::Stage { stage: "split", .. }), "{e}");
    assert!(matches!(e.root(), Error::Config(_)));
}
