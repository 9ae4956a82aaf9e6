//! On-disk feature store: a JSON manifest plus one small binary matrix per
//! sample and modality.
//!
//! Binary layout (`CFV1`), little-endian throughout:
//!
//! | offset | size | field                 |
//! |--------|------|-----------------------|
//! | 0      | 4    | magic `b"CFV1"`       |
//! | 4      | 4    | row count (u32)       |
//! | 8      | 4    | dim (u32)             |
//! | 12     | 4    | reserved, must be 0   |
//! | 16     | ...  | rows × dim f32, row-major |

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::frames::frame_aggregate;
use crate::error::{Error, Result};
use crate::nn::Matrix;

pub const CFV_MAGIC: &[u8; 4] = b"CFV1";
pub const CFV_HEADER_LEN: usize = 16;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA_VERSION: u32 = 1;

/// Class ids of the three-way task.
pub const LABEL_NAMES: [&str; 3] = ["non-hate", "implicit", "explicit"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub dim_d: usize,
    pub dim_dc: usize,
    pub samples: Vec<ManifestSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSample {
    pub id: String,
    pub label: usize,
    pub image_file: String,
    pub text_file: String,
    pub audio_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_text: Option<String>,
    /// Leading image rows holding real frames; later rows are padding.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_valid_frames: Option<usize>,
}

/// One sample's per-modality feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub sample_id: String,
    /// 0 = non-hate, 1 = implicit, 2 = explicit.
    pub label: usize,
    pub image: Vec<f32>,
    pub text: Vec<f32>,
    pub audio: Vec<f32>,
    pub transcript: Option<String>,
    pub caption_text: Option<String>,
    pub caption: Option<Vec<f32>>,
}

impl FeatureRecord {
    /// Label under the binary task, where implicit and explicit collapse to 1.
    pub fn binary_label(&self) -> usize {
        usize::from(self.label != 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub dim: usize,
    pub caption_dim: usize,
    pub records: Vec<FeatureRecord>,
}

impl FeatureStore {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("feature dim must be > 0".into()));
        }
        for r in &self.records {
            let fail = |reason: String| Error::Load {
                subject: format!("sample {}", r.sample_id),
                reason,
            };
            if r.label > 2 {
                return Err(fail(format!("label {} outside {{0, 1, 2}}", r.label)));
            }
            for (name, v, d) in [
                ("image", &r.image, self.dim),
                ("text", &r.text, self.dim),
                ("audio", &r.audio, self.dim),
            ] {
                if v.len() != d {
                    return Err(fail(format!(
                        "{name} has dim {}, store dim is {d}",
                        v.len()
                    )));
                }
                if !v.iter().all(|x| x.is_finite()) {
                    return Err(fail(format!("{name} contains a non-finite value")));
                }
            }
            if let Some(c) = &r.caption {
                if c.len() != self.caption_dim {
                    return Err(fail(format!(
                        "caption has dim {}, store caption dim is {}",
                        c.len(),
                        self.caption_dim
                    )));
                }
                if !c.iter().all(|x| x.is_finite()) {
                    return Err(fail("caption contains a non-finite value".into()));
                }
            }
        }
        Ok(())
    }
}

/// Raw contents of one binary feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

pub fn encode_cfv(rows: usize, dim: usize, data: &[f32]) -> Result<Vec<u8>> {
    if data.len() != rows * dim {
        return Err(Error::Dimension(format!(
            "{rows}x{dim} feature matrix needs {} values, got {}",
            rows * dim,
            data.len()
        )));
    }
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Dimension(format!("{what} {v} exceeds u32")))
    };
    let mut out = Vec::with_capacity(CFV_HEADER_LEN + data.len() * 4);
    out.extend_from_slice(CFV_MAGIC);
    out.extend_from_slice(&to_u32(rows, "row count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(dim, "dim")?.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses a `CFV1` buffer; `subject` names the file in errors.
pub fn decode_cfv(bytes: &[u8], subject: &str) -> Result<FeatureMatrix> {
    let fail = |reason: String| Error::Load {
        subject: subject.to_string(),
        reason,
    };
    if bytes.len() < CFV_HEADER_LEN {
        return Err(fail(format!(
            "file is {} bytes, shorter than the {CFV_HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..4] != CFV_MAGIC {
        return Err(fail(format!(
            "bad magic {:?}, expected \"CFV1\"",
            &bytes[..4]
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let rows = word(4) as usize;
    let dim = word(8) as usize;
    let reserved = word(12);
    if reserved != 0 {
        return Err(fail(format!(
            "unsupported format version: reserved word is {reserved}, expected 0"
        )));
    }
    let expected = CFV_HEADER_LEN + rows * dim * 4;
    if bytes.len() < expected {
        let row_bytes = (dim * 4).max(1);
        let complete_rows = (bytes.len() - CFV_HEADER_LEN) / row_bytes;
        let offset = CFV_HEADER_LEN + complete_rows * row_bytes;
        return Err(fail(format!(
            "truncated at byte offset {}: row {complete_rows} starts at byte offset {offset} \
             but {rows}x{dim} data needs {expected} bytes",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(fail(format!(
            "{} trailing bytes after byte offset {expected}",
            bytes.len() - expected
        )));
    }
    let data = bytes[CFV_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(FeatureMatrix { rows, dim, data })
}

pub fn write_cfv(path: &Path, rows: usize, dim: usize, data: &[f32]) -> Result<()> {
    let bytes = encode_cfv(rows, dim, data)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_cfv(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::Load {
        subject: path.display().to_string(),
        reason: e.to_string(),
    })?;
    decode_cfv(&bytes, &path.display().to_string())
}

/// Resolves a store directory or manifest path to the manifest file.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let path = manifest_path(path);
    let text = fs::read_to_string(&path).map_err(|e| Error::Load {
        subject: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Load {
        subject: path.display().to_string(),
        reason: format!("invalid manifest: {e}"),
    })?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::Load {
            subject: path.display().to_string(),
            reason: format!(
                "schema_version {} unsupported, expected {SCHEMA_VERSION}",
                manifest.schema_version
            ),
        });
    }
    Ok(manifest)
}

fn load_sample(base: &Path, m: &Manifest, s: &ManifestSample) -> Result<FeatureRecord> {
    let fail = |reason: String| Error::Load {
        subject: format!("sample {}", s.id),
        reason,
    };
    let wrap = |e: Error| match e {
        Error::Load { subject, reason } => fail(format!("{subject}: {reason}")),
        other => other,
    };
    if s.label > 2 {
        return Err(fail(format!("label {} outside {{0, 1, 2}}", s.label)));
    }
    let single_row = |file: &str, dim: usize, what: &str| -> Result<Vec<f32>> {
        let fm = read_cfv(&base.join(file)).map_err(wrap)?;
        if fm.dim != dim {
            return Err(fail(format!(
                "{what} dim {} disagrees with manifest dim {dim}",
                fm.dim
            )));
        }
        if fm.rows != 1 {
            return Err(fail(format!(
                "{what} file has {} rows, expected 1",
                fm.rows
            )));
        }
        check_finite(&fm.data).map_err(|k| fail(format!("{what} value {k} is not finite")))?;
        Ok(fm.data)
    };

    let image_fm = read_cfv(&base.join(&s.image_file)).map_err(wrap)?;
    if image_fm.dim != m.dim_d {
        return Err(fail(format!(
            "image dim {} disagrees with manifest dim {}",
            image_fm.dim, m.dim_d
        )));
    }
    check_finite(&image_fm.data).map_err(|k| fail(format!("image value {k} is not finite")))?;
    let valid = s.image_valid_frames.unwrap_or(image_fm.rows);
    if valid == 0 || valid > image_fm.rows {
        return Err(fail(format!(
            "image_valid_frames {valid} outside 1..={}",
            image_fm.rows
        )));
    }
    let image = if image_fm.rows == 1 {
        image_fm.data
    } else {
        let frames = Matrix::from_vec(
            image_fm.rows,
            image_fm.dim,
            image_fm.data.iter().map(|&v| v as f64).collect(),
        )?;
        let mask: Vec<bool> = (0..image_fm.rows).map(|r| r >= valid).collect();
        frame_aggregate(&frames, &mask)?
            .into_iter()
            .map(|v| v as f32)
            .collect()
    };

    let text = single_row(&s.text_file, m.dim_d, "text")?;
    let audio = single_row(&s.audio_file, m.dim_d, "audio")?;
    let caption = s
        .caption_file
        .as_deref()
        .map(|f| single_row(f, m.dim_dc, "caption"))
        .transpose()?;
    Ok(FeatureRecord {
        sample_id: s.id.clone(),
        label: s.label,
        image,
        text,
        audio,
        transcript: s.transcript.clone(),
        caption_text: s.caption_text.clone(),
        caption,
    })
}

fn check_finite(data: &[f32]) -> std::result::Result<(), usize> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(k) => Err(k),
        None => Ok(()),
    }
}

/// Loads every sample listed in a manifest (directory or file path).
pub fn load_feature_store(path: &Path) -> Result<FeatureStore> {
    let mpath = manifest_path(path);
    let manifest = read_manifest(&mpath)?;
    let base = mpath.parent().unwrap_or_else(|| Path::new("."));
    if manifest.dim_d == 0 {
        return Err(Error::Load {
            subject: mpath.display().to_string(),
            reason: "dim_d must be > 0".into(),
        });
    }
    let records = manifest
        .samples
        .iter()
        .map(|s| load_sample(base, &manifest, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureStore {
        dim: manifest.dim_d,
        caption_dim: manifest.dim_dc,
        records,
    })
}

fn valid_file_stem(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !id.starts_with('.')
}

/// Writes a store as `manifest.json` plus `samples/<id>.<modality>.cfv`.
pub fn write_feature_store(dir: &Path, store: &FeatureStore) -> Result<Manifest> {
    store.validate()?;
    let sample_dir = dir.join("samples");
    fs::create_dir_all(&sample_dir).map_err(|e| Error::io(&sample_dir, e))?;
    let mut samples = Vec::with_capacity(store.records.len());
    for r in &store.records {
        if !valid_file_stem(&r.sample_id) {
            return Err(Error::Input(format!(
                "sample id {:?} is not usable as a file name",
                r.sample_id
            )));
        }
        let file = |modality: &str| format!("samples/{}.{modality}.cfv", r.sample_id);
        let (image_file, text_file, audio_file) = (file("image"), file("text"), file("audio"));
        write_cfv(&dir.join(&image_file), 1, store.dim, &r.image)?;
        write_cfv(&dir.join(&text_file), 1, store.dim, &r.text)?;
        write_cfv(&dir.join(&audio_file), 1, store.dim, &r.audio)?;
        let caption_file = match &r.caption {
            Some(c) => {
                let f = file("caption");
                write_cfv(&dir.join(&f), 1, store.caption_dim, c)?;
                Some(f)
            }
            None => None,
        };
        samples.push(ManifestSample {
            id: r.sample_id.clone(),
            label: r.label,
            image_file,
            text_file,
            audio_file,
            caption_file,
            transcript: r.transcript.clone(),
            caption_text: r.caption_text.clone(),
            image_valid_frames: None,
        });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        dim_d: store.dim,
        dim_dc: store.caption_dim,
        samples,
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
