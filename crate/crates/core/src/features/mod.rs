//! Feature ingestion: the binary feature store, frame pooling and
//! lexicon-based affect features.

pub mod affect;
pub mod frames;
pub mod store;

pub use affect::{
    build_affect, emotion_vector, sentiment_score, AffectLexicon, AffectVector, AFFECT_DIM,
    EMOTION_CATEGORIES,
};
pub use frames::frame_aggregate;
pub use store::{
    load_feature_store, read_manifest, write_feature_store, FeatureRecord, FeatureStore, Manifest,
    ManifestSample, LABEL_NAMES,
};
