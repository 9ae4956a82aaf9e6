//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

use std::fs;
use std::path::Path;
use std::time::Instant;

use crossfuse::contrastive::{supcon_loss, SupConConfig};
use crossfuse::diagnostics::run_gradcheck_suite;
use crossfuse::eval::{confusion, metrics, ClassMetrics, ConfusionMatrix, MetricsReport};
use crossfuse::features::affect::tokenize;
use crossfuse::features::{
    build_affect, load_feature_store, write_feature_store, AffectLexicon, FeatureStore,
};
use crossfuse::model::checkpoint::{decode_tensors, encode_checkpoint, params_from_tensors};
use crossfuse::model::stage1_forward;
use crossfuse::nn::Matrix;
use crossfuse::run::{train_run, CHECKPOINT_FILE, REPORT_CSV_FILE, REPORT_JSON_FILE, RUN_LOG_FILE};
use crossfuse::synthgen::{generate, SynthSpec};
use crossfuse::training::{
    build_dataset, make_splits, run_pipeline, PipelineOutput, SplitSpec, TrainPlan,
};
use crossfuse::{ModelConfig, ModelParams64, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let checks = run_gradcheck_suite(0, false).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let worst = checks
        .iter()
        .map(|c| c.report.max_rel_error)
        .fold(0.0, f64::max);
    let all = checks.len() == 5 && checks.iter().all(|c| c.passes());
    check(
        all && worst <= 1e-4 && secs < 60.0,
        format!("5 subgraphs, worst rel. error {worst:.2e}, {secs:.1} s"),
    )
}

fn oracle_cos(u: &[f64], v: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for k in 0..u.len() {
        dot += u[k] * v[k];
        nu += u[k] * u[k];
        nv += v[k] * v[k];
    }
    let (nu, nv) = (nu.sqrt(), nv.sqrt());
    if nu < 1e-12 || nv < 1e-12 {
        0.0
    } else {
        dot / (nu * nv)
    }
}

fn oracle_supcon(z: &[Vec<f64>], labels: &[usize], tau: f64, eps: f64) -> f64 {
    let n = z.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut pos = 0.0;
        let mut neg = 0.0;
        let mut any_pos = false;
        for j in 0..n {
            if j == i {
                continue;
            }
            let e = (oracle_cos(&z[i], &z[j]) / tau).exp();
            if labels[j] == labels[i] {
                pos += e;
                any_pos = true;
            } else {
                neg += e;
            }
        }
        if any_pos {
            total += (pos / (neg + eps)).ln();
        }
    }
    -total / n as f64
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..=8);
        let dim = rng.random_range(1..=4);
        let tau = rng.random_range(0.05..=1.0);
        let classes = rng.random_range(1..=3);
        let z: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let cfg = SupConConfig::new(tau, 1e-8).map_err(|e| e.to_string())?;
        let got = supcon_loss(&Matrix::from_rows(&z).unwrap(), &labels, &cfg)
            .map_err(|e| e.to_string())?;
        worst = worst.max((got - oracle_supcon(&z, &labels, tau, 1e-8)).abs());
    }
    check(
        worst <= 1e-10,
        format!("1000 batches, max |diff| {worst:.2e}"),
    )
}

fn criterion_3() -> Outcome {
    let cfg = SupConConfig::new(1.0, 1e-8).unwrap();
    let loss = |rows: &[[f64; 2]], labels: &[usize]| {
        supcon_loss(&Matrix::from_rows(rows).unwrap(), labels, &cfg).unwrap()
    };
    let a = loss(&[[1.0, 0.0], [0.0, 1.0]], &[0, 1]);
    let b = loss(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], &[0, 0, 1]);
    let c = loss(&[[1.0, 0.0], [1.0, 0.0]], &[0, 0]);
    check(
        a == 0.0 && (b + 0.6666667).abs() <= 1e-6 && (c + 19.4207).abs() <= 1e-3,
        format!("{a}, {b:.7}, {c:.4}"),
    )
}

fn criterion_4() -> Outcome {
    let per_class = [0.8448, 0.6605, 0.5702]
        .iter()
        .enumerate()
        .map(|(k, &f1)| ClassMetrics {
            class: k.to_string(),
            accuracy: 0.0,
            precision: f1,
            recall: f1,
            f1,
            support: 1,
        })
        .collect();
    let m = MetricsReport::from_per_class(per_class, 0.0, 3).macro_f1;
    check((m - 0.6918).abs() <= 1e-4, format!("macro-F1 {m:.4}"))
}

fn default_config(spec: &SynthSpec) -> RunConfig {
    let c = spec.per_class.len();
    let per = spec.per_class[0];
    let test = per / 6 * c;
    RunConfig {
        split: SplitSpec::with_counts(spec.total() - 2 * test, test, test),
        ..RunConfig::default()
    }
}

fn pipeline(spec: &SynthSpec) -> Result<(PipelineOutput<f64>, f64), String> {
    let store = generate(spec).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let out = run_pipeline::<f64>(&default_config(spec), &store, &AffectLexicon::toy())
        .map_err(|e| e.to_string())?;
    Ok((out, start.elapsed().as_secs_f64()))
}

fn criterion_5(easy: &Result<(PipelineOutput<f64>, f64), String>) -> Outcome {
    let (out, secs) = easy.as_ref().map_err(Clone::clone)?;
    let chance_spec = SynthSpec {
        delta: 0.0,
        rho: 0.0,
        ..SynthSpec::default()
    };
    let (chance, _) = pipeline(&chance_spec)?;
    let (f1, blind) = (out.test_report.macro_f1, chance.test_report.macro_f1);
    let epochs = out.log.len();
    check(
        f1 >= 0.95 && blind <= 0.43 && epochs <= 50 && *secs < 120.0,
        format!("test macro-F1 {f1:.4} in {epochs} epochs, {secs:.1} s; chance spec {blind:.4}"),
    )
}

fn criterion_6(easy: &Result<(PipelineOutput<f64>, f64), String>) -> Outcome {
    let (out, _) = easy.as_ref().map_err(Clone::clone)?;
    let store = generate(&SynthSpec::default()).map_err(|e| e.to_string())?;
    let data = build_dataset::<f64>(&store, &AffectLexicon::toy(), Default::default())
        .map_err(|e| e.to_string())?;
    let test = data.select(&out.splits.test);
    // stage-one layers are frozen after stage one, so the final weights are the stage-one weights
    let z = stage1_forward(&test, &out.params)
        .map_err(|e| e.to_string())?
        .z_ita;
    let (mut intra, mut inter) = ((0.0, 0usize), (0.0, 0usize));
    for i in 0..z.rows() {
        for j in i + 1..z.rows() {
            let s = oracle_cos(z.row(i), z.row(j));
            let acc = if test.labels[i] == test.labels[j] {
                &mut intra
            } else {
                &mut inter
            };
            acc.0 += s;
            acc.1 += 1;
        }
    }
    let gap = intra.0 / intra.1 as f64 - inter.0 / inter.1 as f64;
    check(gap >= 0.2, format!("intra minus inter cosine {gap:.4}"))
}

fn criterion_7(easy: &Result<(PipelineOutput<f64>, f64), String>) -> Outcome {
    let (out, _) = easy.as_ref().map_err(Clone::clone)?;
    let worst = out
        .log
        .iter()
        .map(|r| {
            let l = &r.losses;
            (l.total - (l.stage1 + l.stage2 + l.sup_es + l.sup_cp)).abs()
        })
        .fold(0.0, f64::max);
    check(
        !out.log.is_empty() && worst <= 1e-12,
        format!("{} epochs, max residual {worst:.1e}", out.log.len()),
    )
}

fn criterion_8() -> Outcome {
    let labels = |counts: &[usize]| -> Vec<usize> {
        counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect()
    };
    let mut parts = Vec::new();
    let mut ok = true;
    for (counts, want) in [
        (vec![1000, 509, 500], [1283, 325, 401]),
        (vec![652, 386], [662, 166, 210]),
    ] {
        let l = labels(&counts);
        let spec = SplitSpec::with_counts(want[0], want[1], want[2]);
        let a = make_splits(&l, &spec, 7).map_err(|e| e.to_string())?;
        let b = make_splits(&l, &spec, 7).map_err(|e| e.to_string())?;
        let got = [a.train.len(), a.val.len(), a.test.len()];
        ok &= got == want && a == b;
        parts.push(format!("{}/{}/{} of {}", got[0], got[1], got[2], l.len()));
    }
    check(ok, parts.join(", "))
}

fn small_run(dir: &Path) -> Result<(), String> {
    let spec = SynthSpec {
        per_class: vec![12; 3],
        dim: 8,
        caption_dim: 4,
        ..SynthSpec::default()
    };
    let store_dir = dir.join("store");
    crossfuse::synthgen::generate_to_dir(&spec, &store_dir).map_err(|e| e.to_string())?;
    let config = RunConfig {
        store: Some(store_dir),
        out: Some(dir.join("run")),
        plan: TrainPlan {
            seed: 3,
            batch_size: 16,
            learning_rate: 1e-3,
            epochs: 6,
            stage1_epochs: 2,
            stage2_epochs: 2,
            classifier_epochs: 2,
            ..TrainPlan::default()
        },
        split: SplitSpec::with_counts(24, 6, 6),
        model: ModelConfig {
            proj_dim: 16,
            aux_dim: 8,
            classifier_widths: vec![16, 8],
            ..ModelConfig::default()
        },
        ..RunConfig::default()
    };
    train_run(&config).map(|_| ()).map_err(|e| e.to_string())
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    small_run(&a)?;
    small_run(&b)?;
    let mut same = true;
    for f in [
        CHECKPOINT_FILE,
        REPORT_JSON_FILE,
        REPORT_CSV_FILE,
        RUN_LOG_FILE,
    ] {
        let read = |d: &Path| fs::read(d.join("run").join(f)).map_err(|e| e.to_string());
        same &= read(&a)? == read(&b)?;
    }
    let store = generate(&SynthSpec {
        per_class: vec![6; 3],
        ..SynthSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let store_dir = tmp.path().join("roundtrip");
    write_feature_store(&store_dir, &store).map_err(|e| e.to_string())?;
    let store_back = load_feature_store(&store_dir).map_err(|e| e.to_string())?;
    let out = random_params(&store)?;
    let bytes = encode_checkpoint(&out);
    let tensors = decode_tensors(&bytes, "memory").map_err(|e| e.to_string())?;
    let back = params_from_tensors::<f64>(out.dims.clone(), tensors, "memory")
        .map_err(|e| e.to_string())?;
    let ckpt = back == out && encode_checkpoint(&back) == bytes;
    check(
        same && store_back == store && ckpt,
        format!(
            "artifacts identical {same}, store round-trip {}, checkpoint round-trip {ckpt}",
            store_back == store
        ),
    )
}

fn random_params(store: &FeatureStore) -> Result<ModelParams64, String> {
    let dims = ModelConfig::default()
        .dims(store.dim, store.caption_dim, 3)
        .map_err(|e| e.to_string())?;
    ModelParams64::init(dims, &mut ChaCha8Rng::seed_from_u64(9)).map_err(|e| e.to_string())
}

#[derive(Deserialize)]
struct AffectFixture {
    text: String,
    tokens: Vec<String>,
    expected: Vec<f64>,
}

fn criterion_10() -> Outcome {
    let cm = |counts: Vec<Vec<u64>>| metrics(&ConfusionMatrix { counts }).unwrap();
    let half = cm(vec![vec![1, 1], vec![1, 1]]);
    let half_ok = half.accuracy == 0.5
        && half
            .per_class
            .iter()
            .all(|c| c.precision == 0.5 && c.recall == 0.5 && c.f1 == 0.5);
    let perfect = metrics(&confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap()).unwrap();
    let perfect_ok = perfect.accuracy == 1.0
        && perfect.macro_f1 == 1.0
        && perfect
            .per_class
            .iter()
            .all(|c| c.accuracy == 1.0 && c.precision == 1.0 && c.recall == 1.0);
    let off = confusion(&[0, 0], &[1, 1], 2).unwrap();
    let off_ok = off.counts == vec![vec![0, 2], vec![0, 0]];
    let fx: AffectFixture =
        serde_json::from_str(include_str!("fixtures/affect_fixture.json")).unwrap();
    let affect_ok = tokenize(&fx.text) == fx.tokens
        && build_affect(&fx.text, &AffectLexicon::toy()).to_vec() == fx.expected;
    check(
        half_ok && perfect_ok && off_ok && affect_ok,
        format!(
            "metric fixtures {}, affect fixture {affect_ok}",
            half_ok && perfect_ok && off_ok
        ),
    )
}

fn main() {
    // the end-to-end run feeds criteria 5 to 7
    let easy = pipeline(&SynthSpec::default());
    let criteria: [Criterion<'_>; 10] = [
        ("gradient integrity", Box::new(criterion_1)),
        ("supcon oracle equivalence", Box::new(criterion_2)),
        ("supcon hand values", Box::new(criterion_3)),
        ("macro-F1 anchor", Box::new(criterion_4)),
        ("end-to-end separability", Box::new(|| criterion_5(&easy))),
        ("stage-one alignment", Box::new(|| criterion_6(&easy))),
        ("loss ledger identity", Box::new(|| criterion_7(&easy))),
        ("split fidelity", Box::new(criterion_8)),
        ("determinism and persistence", Box::new(criterion_9)),
        ("metric and affect oracles", Box::new(criterion_10)),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail}", k + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
