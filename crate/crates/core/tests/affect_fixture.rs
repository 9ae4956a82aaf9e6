use crossfuse::features::affect::tokenize;
use crossfuse::features::{build_affect, AffectLexicon, AFFECT_DIM};
use serde::Deserialize;

#[derive(Deserialize)]
struct Fixture {
    text: String,
    tokens: Vec<String>,
    emotion_counts: Vec<usize>,
    token_count: usize,
    valence_sum: f64,
    expected: Vec<f64>,
}

fn fixture() -> Fixture {
    let text = include_str!("fixtures/affect_fixture.json");
    serde_json::from_str(text).unwrap()
}

#[test]
fn tokens_match_hand_count() {
    let f = fixture();
    assert_eq!(tokenize(&f.text), f.tokens);
    assert_eq!(f.tokens.len(), f.token_count);
}

#[test]
fn affect_vector_matches_hand_count() {
    let f = fixture();
    let got = build_affect(&f.text, &AffectLexicon::toy()).to_vec();
    assert_eq!(got.len(), AFFECT_DIM);
    for (k, &c) in f.emotion_counts.iter().enumerate() {
        assert_eq!(got[k], c as f64 / f.token_count as f64, "emotion {k}");
    }
    let s = f.valence_sum / (f.valence_sum * f.valence_sum + 15.0).sqrt();
    assert!((got[AFFECT_DIM - 1] - s).abs() <= 1e-15);
    assert_eq!(got, f.expected);
}
