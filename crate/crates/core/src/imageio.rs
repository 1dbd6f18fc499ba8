//! Dataset ingestion: decoding, grayscale conversion, canonical resizing and
//! reproducible train/test splits.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use thiserror::Error;

/// Side length of the canonical image lattice.
pub const CANONICAL_SIDE: usize = 120;
/// Number of pixels on the canonical lattice.
pub const CANONICAL_PIXELS: usize = CANONICAL_SIDE * CANONICAL_SIDE;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("{0}: file not found")]
    FileNotFound(PathBuf),
    #[error("{path}: unsupported format ({reason})")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("{path}: corrupt image ({reason})")]
    CorruptImage { path: PathBuf, reason: String },
    #[error("unsupported channel count {0}")]
    UnsupportedChannelCount(u8),
    #[error("degenerate image {width}x{height}: both sides must be at least 2")]
    DegenerateImage { width: usize, height: usize },
    #[error("invalid image buffer: {0}")]
    InvalidBuffer(String),
    #[error("class `{class}` has {available} items, needs more than {required}")]
    InsufficientClassSize {
        class: String,
        available: usize,
        required: usize,
    },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid split spec: {0}")]
    InvalidSplit(String),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Decoded 8-bit raster, row-major, interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    width: usize,
    height: usize,
    channels: u8,
    pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(
        width: usize,
        height: usize,
        channels: u8,
        pixels: Vec<u8>,
    ) -> Result<Self, ImageIoError> {
        if width == 0 || height == 0 {
            return Err(ImageIoError::InvalidBuffer(format!(
                "zero-sized image {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(ImageIoError::UnsupportedChannelCount(channels));
        }
        let expected = width * height * channels as usize;
        if pixels.len() != expected {
            return Err(ImageIoError::InvalidBuffer(format!(
                "expected {expected} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
}

/// A 120x120 grayscale image with intensities in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage120 {
    pixels: Vec<f64>,
}

impl GrayImage120 {
    pub fn from_pixels(pixels: Vec<f64>) -> Result<Self, ImageIoError> {
        if pixels.len() != CANONICAL_PIXELS {
            return Err(ImageIoError::InvalidBuffer(format!(
                "canonical image needs {CANONICAL_PIXELS} values, got {}",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImageIoError::InvalidBuffer(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self { pixels })
    }

    pub fn constant(value: f64) -> Result<Self, ImageIoError> {
        Self::from_pixels(vec![value; CANONICAL_PIXELS])
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * CANONICAL_SIDE + col]
    }

    /// Multiplies every intensity by `factor`; the result must stay in [0, 1].
    pub fn scaled(&self, factor: f64) -> Result<Self, ImageIoError> {
        Self::from_pixels(self.pixels.iter().map(|v| v * factor).collect())
    }
}

/// Reads a PNG, JPEG or PGM file.
pub fn load_image(path: &Path) -> Result<RawImage, ImageIoError> {
    if !path.is_file() {
        return Err(ImageIoError::FileNotFound(path.to_path_buf()));
    }
    let reader = image::ImageReader::open(path)
        .map_err(|source| ImageIoError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| ImageIoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    match reader.format() {
        Some(image::ImageFormat::Png | image::ImageFormat::Jpeg | image::ImageFormat::Pnm) => {}
        Some(other) => {
            return Err(ImageIoError::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: format!("{other:?}"),
            })
        }
        None => {
            return Err(ImageIoError::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: "unrecognized content".into(),
            })
        }
    }
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::Unsupported(u) => ImageIoError::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: u.to_string(),
        },
        other => ImageIoError::CorruptImage {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, pixels) = match decoded {
        image::DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        image::DynamicImage::ImageLuma16(_) | image::DynamicImage::ImageLumaA8(_) => {
            (1, decoded.to_luma8().into_raw())
        }
        other => (3, other.to_rgb8().into_raw()),
    };
    RawImage::new(width, height, channels, pixels)
}

/// BT.601 luminance, rounded half-up. Single-channel input is returned as is.
pub fn to_grayscale(img: &RawImage) -> Result<RawImage, ImageIoError> {
    match img.channels {
        1 => Ok(img.clone()),
        3 => {
            let pixels = img
                .pixels
                .chunks_exact(3)
                .map(|px| {
                    let weighted = 299 * px[0] as u32 + 587 * px[1] as u32 + 114 * px[2] as u32;
                    ((weighted + 500) / 1000) as u8
                })
                .collect();
            RawImage::new(img.width, img.height, 1, pixels)
        }
        other => Err(ImageIoError::UnsupportedChannelCount(other)),
    }
}

/// Corner-aligned bilinear resampling onto the 120x120 lattice, scaled to [0, 1].
pub fn resize_to_canonical(img: &RawImage) -> Result<GrayImage120, ImageIoError> {
    if img.channels != 1 {
        return Err(ImageIoError::UnsupportedChannelCount(img.channels));
    }
    if img.width < 2 || img.height < 2 {
        return Err(ImageIoError::DegenerateImage {
            width: img.width,
            height: img.height,
        });
    }
    let last = (CANONICAL_SIDE - 1) as f64;
    let sx = (img.width - 1) as f64 / last;
    let sy = (img.height - 1) as f64 / last;
    let src = |r: usize, c: usize| img.pixels[r * img.width + c] as f64;
    let mut out = Vec::with_capacity(CANONICAL_PIXELS);
    for row in 0..CANONICAL_SIDE {
        let y = row as f64 * sy;
        let y0 = (y.floor() as usize).min(img.height - 2);
        let fy = y - y0 as f64;
        for col in 0..CANONICAL_SIDE {
            let x = col as f64 * sx;
            let x0 = (x.floor() as usize).min(img.width - 2);
            let fx = x - x0 as f64;
            let top = src(y0, x0) * (1.0 - fx) + src(y0, x0 + 1) * fx;
            let bottom = src(y0 + 1, x0) * (1.0 - fx) + src(y0 + 1, x0 + 1) * fx;
            let v = (top * (1.0 - fy) + bottom * fy) / 255.0;
            out.push(v.clamp(0.0, 1.0));
        }
    }
    GrayImage120::from_pixels(out)
}

/// Full preprocessing chain for one file.
pub fn load_canonical(path: &Path) -> Result<GrayImage120, ImageIoError> {
    let raw = load_image(path)?;
    resize_to_canonical(&to_grayscale(&raw)?)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledItem {
    pub path: PathBuf,
    pub class: usize,
}

/// Images with class indices into an ordered list of class names.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledDataset {
    pub items: Vec<LabeledItem>,
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(items: Vec<LabeledItem>, class_names: Vec<String>) -> Result<Self, ImageIoError> {
        if let Some(item) = items.iter().find(|i| i.class >= class_names.len()) {
            return Err(ImageIoError::InvalidDataset(format!(
                "{} has class index {} but only {} classes exist",
                item.path.display(),
                item.class,
                class_names.len()
            )));
        }
        Ok(Self { items, class_names })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Item counts per class index.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for item in &self.items {
            counts[item.class] += 1;
        }
        counts
    }

    /// Checks the training preconditions: K >= 2 and no empty class.
    pub fn validate_for_training(&self) -> Result<(), ImageIoError> {
        if self.class_names.len() < 2 {
            return Err(ImageIoError::InvalidDataset(format!(
                "need at least 2 classes, found {}",
                self.class_names.len()
            )));
        }
        for (name, count) in self.class_names.iter().zip(self.class_counts()) {
            if count == 0 {
                return Err(ImageIoError::InvalidDataset(format!(
                    "class `{name}` is empty"
                )));
            }
        }
        Ok(())
    }
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "pgm", "pnm"];

/// Scans `root/<class>/<image>`; classes are ordered by directory name and
/// files by path.
pub fn scan_dataset(root: &Path) -> Result<LabeledDataset, ImageIoError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ImageIoError::Io { path, source }
    };
    if !root.is_dir() {
        return Err(ImageIoError::FileNotFound(root.to_path_buf()));
    }
    let mut classes: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        if entry.file_type().map_err(io_err(root))?.is_dir() {
            classes.push((
                entry.file_name().to_string_lossy().into_owned(),
                entry.path(),
            ));
        }
    }
    classes.sort();
    let mut items = Vec::new();
    for (class, (_, dir)) in classes.iter().enumerate() {
        let mut files = Vec::new();
        for entry in fs::read_dir(dir).map_err(io_err(dir))? {
            let path = entry.map_err(io_err(dir))?.path();
            let supported = path
                .extension()
                .and_then(|e| e.to_str())
                .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                .unwrap_or(false);
            if supported && path.is_file() {
                files.push(path);
            }
        }
        files.sort();
        items.extend(files.into_iter().map(|path| LabeledItem { path, class }));
    }
    LabeledDataset::new(items, classes.into_iter().map(|(name, _)| name).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_per_class: usize,
    pub seed: u64,
    pub repeats: usize,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), ImageIoError> {
        if self.train_per_class == 0 {
            return Err(ImageIoError::InvalidSplit(
                "train_per_class must be >= 1".into(),
            ));
        }
        if self.repeats == 0 {
            return Err(ImageIoError::InvalidSplit("repeats must be >= 1".into()));
        }
        Ok(())
    }
}

/// Stream seed for one repeat of a split.
fn split_rng(seed: u64, repeat_index: usize) -> Xoshiro256PlusPlus {
    // Golden-ratio increment keeps repeats of the same seed well separated.
    let mixed = seed
        ^ (repeat_index as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
    Xoshiro256PlusPlus::seed_from_u64(mixed)
}

/// Per-class random split into `train_per_class` training items and the rest
/// for testing. Deterministic in `(spec.seed, repeat_index)`.
pub fn split_dataset(
    ds: &LabeledDataset,
    spec: &SplitSpec,
    repeat_index: usize,
) -> Result<(LabeledDataset, LabeledDataset), ImageIoError> {
    spec.validate()?;
    let mut by_class: BTreeMap<usize, Vec<&LabeledItem>> = BTreeMap::new();
    for item in &ds.items {
        by_class.entry(item.class).or_default().push(item);
    }
    for (class, name) in ds.class_names.iter().enumerate() {
        let available = by_class.get(&class).map_or(0, Vec::len);
        if available <= spec.train_per_class {
            return Err(ImageIoError::InsufficientClassSize {
                class: name.clone(),
                available,
                required: spec.train_per_class,
            });
        }
    }
    let mut rng = split_rng(spec.seed, repeat_index);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        let (tr, te) = members.split_at(spec.train_per_class);
        train.extend(tr.iter().map(|i| (*i).clone()));
        test.extend(te.iter().map(|i| (*i).clone()));
    }
    Ok((
        LabeledDataset::new(train, ds.class_names.clone())?,
        LabeledDataset::new(test, ds.class_names.clone())?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitRole {
    Train,
    Test,
}

impl fmt::Display for SplitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitRole::Train => "train",
            SplitRole::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub relative_path: String,
    pub class: usize,
    pub role: SplitRole,
}

/// Renders `<relative-path>\t<class-index>\t<train|test>` lines.
pub fn format_manifest(
    root: &Path,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<String, ImageIoError> {
    let mut out = String::new();
    for (ds, role) in [(train, SplitRole::Train), (test, SplitRole::Test)] {
        for item in &ds.items {
            let rel = item.path.strip_prefix(root).map_err(|_| {
                ImageIoError::InvalidDataset(format!(
                    "{} is not under {}",
                    item.path.display(),
                    root.display()
                ))
            })?;
            let rel = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            if rel.contains('\t') || rel.contains('\n') {
                return Err(ImageIoError::InvalidDataset(format!(
                    "path `{rel}` contains a tab or newline"
                )));
            }
            out.push_str(&format!("{rel}\t{}\t{role}\n", item.class));
        }
    }
    Ok(out)
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, ImageIoError> {
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| ImageIoError::Manifest {
            line: idx + 1,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad("expected 3 tab-separated fields"));
        }
        let class = fields[1]
            .parse::<usize>()
            .map_err(|_| bad("class index is not an integer"))?;
        let role = match fields[2] {
            "train" => SplitRole::Train,
            "test" => SplitRole::Test,
            _ => return Err(bad("role must be `train` or `test`")),
        };
        entries.push(ManifestEntry {
            relative_path: fields[0].to_string(),
            class,
            role,
        });
    }
    Ok(entries)
}

/// Resolves manifest entries against `root`, keeping those with `role`.
pub fn manifest_subset(
    root: &Path,
    entries: &[ManifestEntry],
    class_names: &[String],
    role: SplitRole,
) -> Result<LabeledDataset, ImageIoError> {
    let items = entries
        .iter()
        .filter(|e| e.role == role)
        .map(|e| LabeledItem {
            path: root.join(&e.relative_path),
            class: e.class,
        })
        .collect();
    LabeledDataset::new(items, class_names.to_vec())
}
