use crate::error::{Error, Result};
use crate::features::affect::{build_affect, AffectLexicon};
use crate::features::FeatureStore;
use crate::model::Batch;
use crate::nn::Matrix;
use crate::scalar::Scalar;
use crate::training::plan::Task;

/// Every sample of a store as model inputs, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    pub ids: Vec<String>,
    /// Labels as stored (three-way).
    pub raw_labels: Vec<usize>,
    pub inputs: Batch<S>,
}

impl<S: Scalar> Dataset<S> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Batch<S> {
        self.inputs.select(rows)
    }
}

fn to_matrix<S: Scalar>(rows: Vec<&[f32]>, width: usize, what: &str) -> Result<Matrix<S>> {
    let n = rows.len();
    let mut data = Vec::with_capacity(n * width);
    for (i, r) in rows.into_iter().enumerate() {
        if r.len() != width {
            return Err(Error::Input(format!(
                "row {i}: {what} has width {}, expected {width}",
                r.len()
            )));
        }
        data.extend(r.iter().map(|&v| S::lit(f64::from(v))));
    }
    Matrix::from_vec(n, width, data)
}

/// Builds model inputs; affect features come from `lexicon` applied to each
/// transcript (zeros without one) and missing captions become zero vectors.
pub fn build_dataset<S: Scalar>(
    store: &FeatureStore,
    lexicon: &AffectLexicon,
    task: Task,
) -> Result<Dataset<S>> {
    if store.is_empty() {
        return Err(Error::Input("feature store has no samples".into()));
    }
    let d = store.dim;
    let dc = store.caption_dim.max(1);
    let zeros = vec![0f32; dc];
    let recs = &store.records;
    let image = to_matrix(
        recs.iter().map(|r| r.image.as_slice()).collect(),
        d,
        "image",
    )?;
    let text = to_matrix(recs.iter().map(|r| r.text.as_slice()).collect(), d, "text")?;
    let audio = to_matrix(
        recs.iter().map(|r| r.audio.as_slice()).collect(),
        d,
        "audio",
    )?;
    let caption = to_matrix(
        recs.iter()
            .map(|r| r.caption.as_deref().unwrap_or(&zeros))
            .collect(),
        dc,
        "caption",
    )?;
    let mut affect = Vec::with_capacity(recs.len() * 11);
    for r in recs {
        let v = build_affect(r.transcript.as_deref().unwrap_or(""), lexicon).to_vec();
        affect.extend(v.into_iter().map(S::lit));
    }
    let affect = Matrix::from_vec(recs.len(), crate::features::affect::AFFECT_DIM, affect)?;
    Ok(Dataset {
        ids: recs.iter().map(|r| r.sample_id.clone()).collect(),
        raw_labels: recs.iter().map(|r| r.label).collect(),
        inputs: Batch {
            image,
            text,
            audio,
            affect,
            caption,
            labels: recs.iter().map(|r| task.map_label(r.label)).collect(),
        },
    })
}
