//! Lexicon-based emotion and sentiment features.
//!
//! Lexicon files are UTF-8 lines of `token<TAB>categories<TAB>valence`, where
//! `categories` is a comma-separated subset of [`EMOTION_CATEGORIES`] (possibly
//! empty) and `valence` a number in `[-4, 4]`. Blank lines and lines starting
//! with `#` are skipped.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Emotion/polarity dimensions, in vector order.
pub const EMOTION_CATEGORIES: [&str; 10] = [
    "anger",
    "anticipation",
    "disgust",
    "fear",
    "joy",
    "negative",
    "positive",
    "sadness",
    "surprise",
    "trust",
];

pub const EMOTION_DIM: usize = EMOTION_CATEGORIES.len();
/// Length of `[e, s]`.
pub const AFFECT_DIM: usize = EMOTION_DIM + 1;

/// Normalisation constant of the compound sentiment score.
pub const SENTIMENT_ALPHA: f64 = 15.0;

/// Small built-in lexicon, also written next to synthetic stores.
pub const TOY_LEXICON: &str = include_str!("../../data/toy_lexicon.tsv");

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffectLexicon {
    emotions: HashMap<String, [bool; EMOTION_DIM]>,
    valences: HashMap<String, f64>,
}

impl AffectLexicon {
    pub fn toy() -> Self {
        Self::parse(TOY_LEXICON).expect("bundled lexicon parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Input(reason) => Error::Load {
                subject: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Input(format!(
                    "line {}: expected 3 tab-separated fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let token = fields[0].trim().to_lowercase();
            if token.is_empty() {
                return Err(Error::Input(format!("line {}: empty token", lineno + 1)));
            }
            let mut flags = [false; EMOTION_DIM];
            for cat in fields[1]
                .split(',')
                .map(str::trim)
                .filter(|c| !c.is_empty())
            {
                let k = category_index(cat).ok_or_else(|| {
                    Error::Input(format!("line {}: unknown category {cat:?}", lineno + 1))
                })?;
                flags[k] = true;
            }
            let valence: f64 = fields[2].trim().parse().map_err(|_| {
                Error::Input(format!("line {}: bad valence {:?}", lineno + 1, fields[2]))
            })?;
            if !valence.is_finite() || valence.abs() > 4.0 {
                return Err(Error::Input(format!(
                    "line {}: valence {valence} outside [-4, 4]",
                    lineno + 1
                )));
            }
            if flags.iter().any(|&f| f) {
                lex.emotions.insert(token.clone(), flags);
            }
            if valence != 0.0 {
                lex.valences.insert(token, valence);
            }
        }
        Ok(lex)
    }

    pub fn insert(&mut self, token: &str, categories: &[&str], valence: f64) -> Result<()> {
        let mut flags = [false; EMOTION_DIM];
        for c in categories {
            let k =
                category_index(c).ok_or_else(|| Error::Input(format!("unknown category {c:?}")))?;
            flags[k] = true;
        }
        let token = token.to_lowercase();
        if flags.iter().any(|&f| f) {
            self.emotions.insert(token.clone(), flags);
        }
        if valence != 0.0 {
            self.valences.insert(token, valence);
        }
        Ok(())
    }

    pub fn categories(&self, token: &str) -> Option<&[bool; EMOTION_DIM]> {
        self.emotions.get(token)
    }

    pub fn valence(&self, token: &str) -> Option<f64> {
        self.valences.get(token).copied()
    }
}

pub fn category_index(name: &str) -> Option<usize> {
    EMOTION_CATEGORIES.iter().position(|&c| c == name)
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Per-category token frequency: tagged tokens over all tokens.
pub fn emotion_vector(text: &str, lex: &AffectLexicon) -> [f64; EMOTION_DIM] {
    let tokens = tokenize(text);
    let mut e = [0.0; EMOTION_DIM];
    if tokens.is_empty() {
        return e;
    }
    let mut counts = [0usize; EMOTION_DIM];
    for t in &tokens {
        if let Some(flags) = lex.categories(t) {
            for (c, &f) in counts.iter_mut().zip(flags) {
                *c += f as usize;
            }
        }
    }
    let total = tokens.len() as f64;
    for (v, &c) in e.iter_mut().zip(&counts) {
        *v = (c as f64 / total).clamp(0.0, 1.0);
    }
    e
}

/// Compound score `S / sqrt(S² + 15)` of the summed token valences.
///
/// Valences are summed in ascending order.
pub fn sentiment_score(text: &str, lex: &AffectLexicon) -> f64 {
    let mut matched: Vec<f64> = tokenize(text)
        .iter()
        .filter_map(|t| lex.valence(t))
        .collect();
    if matched.is_empty() {
        return 0.0;
    }
    // canonical order keeps the float sum independent of token order
    matched.sort_by(f64::total_cmp);
    let sum: f64 = matched.iter().sum();
    sum / (sum * sum + SENTIMENT_ALPHA).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffectVector {
    pub emotions: [f64; EMOTION_DIM],
    pub sentiment: f64,
}

impl AffectVector {
    /// `[e, s]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.emotions.to_vec();
        v.push(self.sentiment);
        v
    }
}

pub fn build_affect(text: &str, lex: &AffectLexicon) -> AffectVector {
    AffectVector {
        emotions: emotion_vector(text, lex),
        sentiment: sentiment_score(text, lex),
    }
}
