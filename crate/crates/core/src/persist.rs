//! `.dbm` model files and text exports.
//!
//! Layout (little endian):
//!
//! ```text
//! magic    8 bytes  "DBOOSTM\0"
//! version  u32
//! kind     u8       0 = binary model, 1 = one-vs-all model
//! [kind 1] u32 class count, then per class: u32 length + UTF-8 name
//! models   one or more binary model blocks
//! crc32    u32      over every preceding byte
//! ```
//!
//! A binary model block is the JSON config (u32 length + bytes), the layer
//! count, and per layer the candidate table, the stump table and the
//! composite table. Layer-1 candidates are stored as a single flag when
//! they are the canonical primitive list implied by the config.

use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::boost::StrongClassifier;
use crate::compose::{Composite, FeatureDescriptor, Provenance};
use crate::fsutil::atomic_write;
use crate::gabor::GaborIndex;
use crate::model::{
    primitive_candidates, DeepBoostModel, LayerModel, ModelConfig, ModelError, MulticlassModel,
};
use crate::weaklearner::SigmoidStump;

pub const MAGIC: [u8; 8] = *b"DBOOSTM\0";
pub const FORMAT_VERSION: u32 = 1;

const KIND_BINARY: u8 = 0;
const KIND_MULTICLASS: u8 = 1;
const TAG_PRIMITIVE: u8 = 0;
const TAG_COMPOSITE: u8 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported model file: {0}")]
    VersionMismatch(String),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed model file: {0}")]
    Format(String),
    #[error("model file holds a {found} model, expected {expected}")]
    WrongKind {
        found: &'static str,
        expected: &'static str,
    },
    #[error("invalid model: {0}")]
    Invalid(#[from] ModelError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Content of a model file.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SavedModel {
    Binary(DeepBoostModel),
    Multiclass(MulticlassModel),
}

impl SavedModel {
    fn kind_name(&self) -> &'static str {
        match self {
            SavedModel::Binary(_) => "binary",
            SavedModel::Multiclass(_) => "one-vs-all",
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            SavedModel::Binary(m) => m.validate(),
            SavedModel::Multiclass(m) => m.validate(),
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                PersistError::Format(format!("unexpected end of data at byte {}", self.pos))
            })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], PersistError> {
        Ok(self.take(N)?.try_into().expect("slice length checked"))
    }
    fn u8(&mut self) -> Result<u8, PersistError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, PersistError> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32, PersistError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, PersistError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn usize(&mut self) -> Result<usize, PersistError> {
        usize::try_from(self.u64()?).map_err(|_| PersistError::Format("index exceeds usize".into()))
    }
    fn f64(&mut self) -> Result<f64, PersistError> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn bytes(&mut self) -> Result<&'a [u8], PersistError> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    /// A record count, rejected early if the remaining bytes cannot hold it.
    fn count(&mut self, min_record: usize) -> Result<usize, PersistError> {
        let n = self.usize()?;
        let remaining = self.buf.len() - self.pos;
        if n.saturating_mul(min_record) > remaining {
            return Err(PersistError::Format(format!(
                "count {n} exceeds remaining data"
            )));
        }
        Ok(n)
    }
}

fn write_descriptor(w: &mut Writer, fd: &FeatureDescriptor) {
    match fd.provenance {
        Provenance::Primitive(g) => {
            w.u8(TAG_PRIMITIVE);
            w.u16(g.w);
            w.u16(g.h);
            w.u16(g.alpha);
            w.u16(g.scale);
        }
        Provenance::Composite {
            s,
            t,
            beta_s,
            beta_t,
        } => {
            w.u8(TAG_COMPOSITE);
            w.usize(s);
            w.usize(t);
            w.f64(beta_s);
            w.f64(beta_t);
        }
    }
    w.u32(fd.layer as u32);
    w.u16(fd.row);
    w.u16(fd.col);
}

fn read_descriptor(r: &mut Reader) -> Result<FeatureDescriptor, PersistError> {
    let provenance = match r.u8()? {
        TAG_PRIMITIVE => Provenance::Primitive(GaborIndex {
            w: r.u16()?,
            h: r.u16()?,
            alpha: r.u16()?,
            scale: r.u16()?,
        }),
        TAG_COMPOSITE => Provenance::Composite {
            s: r.usize()?,
            t: r.usize()?,
            beta_s: r.f64()?,
            beta_t: r.f64()?,
        },
        tag => {
            return Err(PersistError::Format(format!(
                "unknown descriptor tag {tag}"
            )))
        }
    };
    Ok(FeatureDescriptor {
        layer: r.u32()? as usize,
        provenance,
        row: r.u16()?,
        col: r.u16()?,
    })
}

fn write_binary(w: &mut Writer, model: &DeepBoostModel) -> Result<(), PersistError> {
    w.bytes(&serde_json::to_vec(&model.config)?);
    w.u32(model.layers.len() as u32);
    for (l, layer) in model.layers.iter().enumerate() {
        let canonical = l == 0 && layer.candidates == primitive_candidates(&model.config.gabor);
        w.u8(canonical as u8);
        if !canonical {
            w.usize(layer.candidates.len());
            for fd in &layer.candidates {
                write_descriptor(w, fd);
            }
        }
        let c = &layer.classifier;
        w.u32(c.layer_index as u32);
        w.usize(c.dims);
        w.usize(c.stumps.len());
        for (s, &err) in c.stumps.iter().zip(&c.stump_train_errors) {
            w.usize(s.dim);
            w.f64(s.threshold);
            w.f64(s.slope);
            w.f64(s.offset);
            w.f64(err);
        }
        w.usize(layer.composites_out.len());
        for comp in &layer.composites_out {
            w.usize(comp.s);
            w.usize(comp.t);
            w.f64(comp.beta_s);
            w.f64(comp.beta_t);
        }
    }
    Ok(())
}

fn read_binary(r: &mut Reader) -> Result<DeepBoostModel, PersistError> {
    let config: ModelConfig = serde_json::from_slice(r.bytes()?)?;
    config.validate()?;
    let layer_count = r.u32()? as usize;
    if layer_count != config.layers() {
        return Err(PersistError::Format(format!(
            "{layer_count} layers stored, config has {}",
            config.layers()
        )));
    }
    let mut layers = Vec::with_capacity(layer_count);
    for l in 0..layer_count {
        let candidates = match r.u8()? {
            1 if l == 0 => primitive_candidates(&config.gabor),
            0 => {
                let n = r.count(13)?;
                (0..n)
                    .map(|_| read_descriptor(r))
                    .collect::<Result<_, _>>()?
            }
            flag => {
                return Err(PersistError::Format(format!(
                    "bad candidate flag {flag} in layer {}",
                    l + 1
                )))
            }
        };
        let layer_index = r.u32()? as usize;
        let dims = r.usize()?;
        let n = r.count(40)?;
        let mut stumps = Vec::with_capacity(n);
        let mut stump_train_errors = Vec::with_capacity(n);
        for _ in 0..n {
            stumps.push(SigmoidStump {
                dim: r.usize()?,
                threshold: r.f64()?,
                slope: r.f64()?,
                offset: r.f64()?,
            });
            stump_train_errors.push(r.f64()?);
        }
        let n = r.count(32)?;
        let composites_out = (0..n)
            .map(|_| {
                Ok(Composite {
                    s: r.usize()?,
                    t: r.usize()?,
                    beta_s: r.f64()?,
                    beta_t: r.f64()?,
                })
            })
            .collect::<Result<_, PersistError>>()?;
        layers.push(LayerModel {
            candidates,
            classifier: StrongClassifier {
                stumps,
                stump_train_errors,
                layer_index,
                dims,
            },
            composites_out,
        });
    }
    Ok(DeepBoostModel { config, layers })
}

/// Encodes a model; the same model always yields the same bytes.
pub fn encode(model: &SavedModel) -> Result<Vec<u8>, PersistError> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&MAGIC);
    w.u32(FORMAT_VERSION);
    match model {
        SavedModel::Binary(m) => {
            w.u8(KIND_BINARY);
            write_binary(&mut w, m)?;
        }
        SavedModel::Multiclass(mc) => {
            w.u8(KIND_MULTICLASS);
            w.u32(mc.class_names.len() as u32);
            for name in &mc.class_names {
                w.bytes(name.as_bytes());
            }
            for b in &mc.binaries {
                write_binary(&mut w, b)?;
            }
        }
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    Ok(w.0)
}

/// Decodes and validates a model; never returns a partially read model.
pub fn decode(bytes: &[u8]) -> Result<SavedModel, PersistError> {
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(PersistError::VersionMismatch(
            "not a model file (bad magic bytes)".into(),
        ));
    }
    if bytes.len() < MAGIC.len() + 4 + 1 + 4 {
        return Err(PersistError::Format("file too short".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(PersistError::VersionMismatch(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(PersistError::ChecksumMismatch { stored, computed });
    }
    let mut r = Reader { buf: body, pos: 12 };
    let model = match r.u8()? {
        KIND_BINARY => SavedModel::Binary(read_binary(&mut r)?),
        KIND_MULTICLASS => {
            let k = r.u32()? as usize;
            let class_names = (0..k)
                .map(|_| {
                    String::from_utf8(r.bytes()?.to_vec())
                        .map_err(|_| PersistError::Format("class name is not UTF-8".into()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let binaries = (0..k)
                .map(|_| read_binary(&mut r))
                .collect::<Result<_, _>>()?;
            SavedModel::Multiclass(MulticlassModel {
                class_names,
                binaries,
            })
        }
        kind => return Err(PersistError::Format(format!("unknown model kind {kind}"))),
    };
    if r.pos != body.len() {
        return Err(PersistError::Format(format!(
            "{} trailing bytes",
            body.len() - r.pos
        )));
    }
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &SavedModel, path: &Path) -> Result<(), PersistError> {
    atomic_write(path, &encode(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SavedModel, PersistError> {
    decode(&fs::read(path)?)
}

pub fn load_multiclass(path: &Path) -> Result<MulticlassModel, PersistError> {
    match load_model(path)? {
        SavedModel::Multiclass(m) => Ok(m),
        other => Err(PersistError::WrongKind {
            found: other.kind_name(),
            expected: "one-vs-all",
        }),
    }
}

/// Lossless JSON rendering of a model for debugging.
pub fn to_json(model: &SavedModel) -> Result<String, PersistError> {
    Ok(serde_json::to_string_pretty(model)?)
}

/// One record of the feature export.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeatureRecord {
    /// Owning class for one-vs-all models.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    pub layer: usize,
    pub index: usize,
    pub provenance: Provenance,
    pub row: u16,
    pub col: u16,
    /// Stumps of this layer's classifier that read the feature.
    pub stumps: Vec<SigmoidStump>,
}

/// Records for the pool of one binary model: every generated (composite)
/// candidate and every selected feature.
pub fn feature_records(model: &DeepBoostModel, class: Option<&str>) -> Vec<FeatureRecord> {
    let mut out = Vec::new();
    for (l, layer) in model.layers.iter().enumerate() {
        for (index, fd) in layer.candidates.iter().enumerate() {
            let stumps: Vec<SigmoidStump> = layer
                .classifier
                .stumps
                .iter()
                .filter(|s| s.dim == index)
                .copied()
                .collect();
            if l == 0 && stumps.is_empty() {
                continue;
            }
            out.push(FeatureRecord {
                class: class.map(str::to_owned),
                layer: l + 1,
                index,
                provenance: fd.provenance,
                row: fd.row,
                col: fd.col,
                stumps,
            });
        }
    }
    out
}

/// JSON Lines export of [`feature_records`] for all binaries of a model.
pub fn export_features(model: &SavedModel) -> Result<String, PersistError> {
    let records: Vec<FeatureRecord> = match model {
        SavedModel::Binary(m) => feature_records(m, None),
        SavedModel::Multiclass(mc) => mc
            .class_names
            .iter()
            .zip(&mc.binaries)
            .flat_map(|(name, b)| feature_records(b, Some(name)))
            .collect(),
    };
    let mut out = String::new();
    for r in &records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}
