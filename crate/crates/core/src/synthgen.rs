//! Class-conditional Gaussian feature stores for end-to-end checks without
//! real media or pretrained encoders.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::affect::{tokenize, TOY_LEXICON};
use crate::features::store::{FeatureRecord, FeatureStore, Manifest, LABEL_NAMES};
use crate::features::write_feature_store;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Samples per class; its length is the class count.
    pub per_class: Vec<usize>,
    pub dim: usize,
    pub caption_dim: usize,
    /// Pairwise class-mean distance in units of `noise_std`.
    pub delta: f64,
    /// Correlation of the noise shared across image, text and audio.
    pub rho: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            per_class: vec![300, 300, 300],
            dim: 32,
            caption_dim: 16,
            delta: 4.0,
            rho: 0.9,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn total(&self) -> usize {
        self.per_class.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.classes();
        if !(2..=3).contains(&c) {
            return Err(Error::Config(format!(
                "synthetic stores need 2 or 3 classes, got {c}"
            )));
        }
        if let Some(n) = self.per_class.iter().find(|&&n| n < 4) {
            return Err(Error::Config(format!(
                "each class needs at least 4 samples, got {n}"
            )));
        }
        if self.dim < 2 || self.dim < c {
            return Err(Error::Config(format!(
                "dim must be at least 2 and at least the class count, got {}",
                self.dim
            )));
        }
        if self.caption_dim < c {
            return Err(Error::Config(format!(
                "caption_dim must be at least the class count, got {}",
                self.caption_dim
            )));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!(
                "delta must be >= 0, got {}",
                self.delta
            )));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!(
                "rho must lie in [0, 1], got {}",
                self.rho
            )));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "noise_std must be > 0, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

fn gaussian<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// `classes` means at exact pairwise distance `spacing`: orthonormal
/// directions scaled by `spacing / sqrt 2`.
fn class_means<R: Rng>(rng: &mut R, classes: usize, dim: usize, spacing: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while basis.len() < classes {
        let mut v = gaussian(rng, dim);
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= proj * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let scale = spacing / std::f64::consts::SQRT_2;
    basis
        .into_iter()
        .map(|b| b.into_iter().map(|x| x * scale).collect())
        .collect()
}

const FILLER: [&str; 10] = [
    "the", "we", "our", "today", "video", "people", "with", "this", "is", "and",
];
const CLASS_WORDS: [&[&str]; 3] = [
    &[
        "love",
        "happy",
        "friends",
        "together",
        "peace",
        "share",
        "hope",
        "kind",
        "celebrate",
        "good",
    ],
    &[
        "outsiders",
        "belong",
        "replace",
        "soon",
        "wait",
        "threat",
        "invade",
        "they",
        "them",
        "land",
    ],
    &[
        "hate",
        "kill",
        "disgusting",
        "filth",
        "vermin",
        "destroy",
        "angry",
        "fear",
        "bad",
        "sad",
    ],
];

/// Class-keyed transcript; with `keyed == false` words ignore the class.
fn transcript<R: Rng>(rng: &mut R, class: usize, classes: usize, keyed: bool) -> String {
    let len = rng.random_range(6..=10);
    let words: Vec<&str> = (0..len)
        .map(|_| {
            if rng.random_bool(0.3) {
                *FILLER.choose(rng).expect("non-empty")
            } else {
                let pool = if keyed {
                    class
                } else {
                    rng.random_range(0..classes)
                };
                *CLASS_WORDS[pool].choose(rng).expect("non-empty")
            }
        })
        .collect();
    words.join(" ")
}

/// Generates a store in memory; the same spec always yields the same store.
pub fn generate(spec: &SynthSpec) -> Result<FeatureStore> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.classes();
    let sigma = spec.noise_std;
    let spacing = spec.delta * sigma;
    let means: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|_| class_means(&mut rng, c, spec.dim, spacing))
        .collect();
    let caption_means = class_means(&mut rng, c, spec.caption_dim, spacing);
    let shared = spec.rho;
    let own = (1.0 - spec.rho * spec.rho).max(0.0).sqrt();
    let keyed = spec.delta > 0.0;
    let mut records = Vec::with_capacity(spec.total());
    for (class, &count) in spec.per_class.iter().enumerate() {
        for _ in 0..count {
            let latent = gaussian(&mut rng, spec.dim);
            let modality = |m: usize, rng: &mut ChaCha8Rng| -> Vec<f32> {
                let noise = gaussian(rng, spec.dim);
                (0..spec.dim)
                    .map(|k| {
                        (means[m][class][k] + sigma * (shared * latent[k] + own * noise[k])) as f32
                    })
                    .collect()
            };
            let image = modality(0, &mut rng);
            let text = modality(1, &mut rng);
            let audio = modality(2, &mut rng);
            let caption = gaussian(&mut rng, spec.caption_dim)
                .into_iter()
                .zip(&caption_means[class])
                .map(|(e, m)| (m + sigma * e) as f32)
                .collect();
            let words = transcript(&mut rng, class, c, keyed);
            records.push(FeatureRecord {
                sample_id: format!("s{:05}", records.len()),
                label: class,
                image,
                text,
                audio,
                transcript: Some(words),
                caption_text: None,
                caption: Some(caption),
            });
        }
    }
    Ok(FeatureStore {
        dim: spec.dim,
        caption_dim: spec.caption_dim,
        records,
    })
}

/// Generates and writes a store, its manifest and `lexicon.tsv` under `dir`.
pub fn generate_to_dir(spec: &SynthSpec, dir: &Path) -> Result<Manifest> {
    let store = generate(spec)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = write_feature_store(dir, &store)?;
    let lex = dir.join("lexicon.tsv");
    std::fs::write(&lex, TOY_LEXICON).map_err(|e| Error::io(&lex, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub label: usize,
    pub name: String,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub samples: usize,
    pub dim: usize,
    pub caption_dim: usize,
    pub classes: Vec<ClassSummary>,
    pub mean_transcript_tokens: f64,
    pub with_caption: usize,
}

pub fn describe(store: &FeatureStore) -> Result<CorpusSummary> {
    if store.is_empty() {
        return Err(Error::Input("feature store has no samples".into()));
    }
    let n = store.len();
    let top = store.records.iter().map(|r| r.label).max().unwrap_or(0);
    let classes = (0..=top)
        .map(|label| {
            let count = store.records.iter().filter(|r| r.label == label).count();
            ClassSummary {
                label,
                name: LABEL_NAMES.get(label).copied().unwrap_or("?").to_string(),
                count,
                fraction: count as f64 / n as f64,
            }
        })
        .collect();
    let tokens: usize = store
        .records
        .iter()
        .map(|r| r.transcript.as_deref().map_or(0, |t| tokenize(t).len()))
        .sum();
    Ok(CorpusSummary {
        samples: n,
        dim: store.dim,
        caption_dim: store.caption_dim,
        classes,
        mean_transcript_tokens: tokens as f64 / n as f64,
        with_caption: store.records.iter().filter(|r| r.caption.is_some()).count(),
    })
}

impl CorpusSummary {
    pub fn render(&self) -> String {
        let mut s = format!(
            "samples {}  dim {}  caption dim {}  captions {}  mean transcript tokens {:.2}\n",
            self.samples,
            self.dim,
            self.caption_dim,
            self.with_caption,
            self.mean_transcript_tokens
        );
        for c in &self.classes {
            s.push_str(&format!(
                "{:<10} {:>7} ({:.2}%)\n",
                c.name,
                c.count,
                100.0 * c.fraction
            ));
        }
        s
    }
}
