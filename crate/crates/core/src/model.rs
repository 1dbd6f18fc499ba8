//! Layered training, forward evaluation and one-vs-all classification.
//!
//! Layer 1 candidates are all Gabor primitives on the retained lattice.
//! Every layer boosts a strong classifier over its candidates; the distinct
//! features its stumps selected are composed pairwise into the candidates
//! of the next layer. Scoring uses the top layer's classifier.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boost::{
    train_strong_logged, validate_labels, BoostError, RoundRecord, StrongClassifier,
};
use crate::compose::{
    composite_descriptors, composite_responses, pair_candidates, rank_and_cap, ComposeError,
    Composite, CompositionConfig, FeatureDescriptor, Provenance,
};
use crate::gabor::{gabor_index, response_map, FilterBank, GaborConfig, GaborError, ResponseMap};
use crate::imageio::{load_canonical, GrayImage120, ImageIoError, LabeledDataset};
use crate::matrix::FeatureMatrix;
use crate::weaklearner::DEFAULT_QUANTILE_COUNT;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error(transparent)]
    Gabor(#[from] GaborError),
    #[error("layer {layer}: {source}")]
    Boost {
        layer: usize,
        #[source]
        source: BoostError,
    },
    #[error("layer {layer}: {source}")]
    Compose {
        layer: usize,
        #[source]
        source: ComposeError,
    },
    #[error("layer {layer} produced no composite features")]
    NoComposites { layer: usize },
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("layer {layer} out of range 1..={layers}")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("inconsistent model: {0}")]
    Inconsistent(String),
}

/// Everything needed to reproduce a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub gabor: GaborConfig,
    /// Boosting rounds per layer; its length is the layer count.
    pub rounds: Vec<usize>,
    pub composition: CompositionConfig,
    pub quantile_count: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gabor: GaborConfig::default(),
            rounds: vec![1000, 800, 500],
            composition: CompositionConfig::default(),
            quantile_count: DEFAULT_QUANTILE_COUNT,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Reduced preset for quick runs: stride 4 and 100/80/50 rounds.
    pub fn desk_scale() -> Self {
        Self {
            gabor: GaborConfig {
                stride: 4,
                ..GaborConfig::default()
            },
            rounds: vec![100, 80, 50],
            ..Self::default()
        }
    }

    pub fn layers(&self) -> usize {
        self.rounds.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.gabor.validate()?;
        self.composition
            .validate()
            .map_err(|source| ModelError::Compose { layer: 0, source })?;
        if self.rounds.is_empty() {
            return Err(ModelError::InvalidConfig("need at least one layer".into()));
        }
        if self.rounds.contains(&0) {
            return Err(ModelError::InvalidConfig(
                "every layer needs >= 1 round".into(),
            ));
        }
        if self.quantile_count == 0 {
            return Err(ModelError::InvalidConfig(
                "quantile_count must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerModel {
    pub candidates: Vec<FeatureDescriptor>,
    pub classifier: StrongClassifier,
    /// Candidates of the next layer; parents index into `candidates`.
    pub composites_out: Vec<Composite>,
}

/// Binary model for one category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeepBoostModel {
    pub config: ModelConfig,
    pub layers: Vec<LayerModel>,
}

/// One-vs-all collection of binary models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MulticlassModel {
    pub class_names: Vec<String>,
    pub binaries: Vec<DeepBoostModel>,
}

/// Layer-1 candidate list: every retained primitive in feature-index order.
pub fn primitive_candidates(cfg: &GaborConfig) -> Vec<FeatureDescriptor> {
    (0..cfg.num_features())
        .map(|i| FeatureDescriptor::primitive(gabor_index(cfg, i)))
        .collect()
}

/// `N x D1` matrix of layer-1 responses, one row per image.
pub fn layer1_matrix(maps: &[ResponseMap]) -> Result<FeatureMatrix, ModelError> {
    let first = maps
        .first()
        .ok_or_else(|| ModelError::InvalidConfig("no training images".into()))?;
    if let Some(bad) = maps.iter().find(|m| m.config() != first.config()) {
        return Err(ModelError::ConfigMismatch(format!(
            "response maps built with {:?} and {:?}",
            first.config(),
            bad.config()
        )));
    }
    let mut out = FeatureMatrix::zeros(maps.len(), first.responses().len());
    for (d, column) in out.columns_mut().enumerate() {
        for (i, m) in maps.iter().enumerate() {
            column[i] = m.responses()[d];
        }
    }
    Ok(out)
}

/// Training error recorded for each distinct selected dimension: the lowest
/// error among the stumps that used it.
fn selected_errors(classifier: &StrongClassifier) -> BTreeMap<usize, f64> {
    let mut errors = BTreeMap::new();
    for (stump, &err) in classifier.stumps.iter().zip(&classifier.stump_train_errors) {
        errors
            .entry(stump.dim)
            .and_modify(|e: &mut f64| *e = e.min(err))
            .or_insert(err);
    }
    errors
}

/// Composites of the next layer in this layer's dimension space.
fn compose_layer(
    layer: usize,
    candidates: &[FeatureDescriptor],
    classifier: &StrongClassifier,
    cfg: &CompositionConfig,
) -> Result<Vec<Composite>, ModelError> {
    let errors = selected_errors(classifier);
    let dims: Vec<usize> = errors.keys().copied().collect();
    let selected: Vec<FeatureDescriptor> = dims.iter().map(|&d| candidates[d]).collect();
    let wrap = |source| ModelError::Compose { layer, source };
    let pairs = pair_candidates(&selected, cfg).map_err(wrap)?;
    let local_errors: Vec<Option<f64>> = errors.values().map(|&e| Some(e)).collect();
    let composites = rank_and_cap(&pairs, &local_errors, cfg).map_err(wrap)?;
    if composites.is_empty() {
        return Err(ModelError::NoComposites { layer });
    }
    Ok(composites
        .into_iter()
        .map(|c| Composite {
            s: dims[c.s],
            t: dims[c.t],
            ..c
        })
        .collect())
}

/// Runs every layer on a precomputed layer-1 matrix. `labels` are +1/-1.
pub fn train_binary_on(
    layer1: &FeatureMatrix,
    labels: &[f64],
    cfg: &ModelConfig,
) -> Result<(DeepBoostModel, Vec<RoundRecord>), ModelError> {
    cfg.validate()?;
    if layer1.dims() != cfg.gabor.num_features() {
        return Err(ModelError::ConfigMismatch(format!(
            "layer-1 matrix has {} dimensions, config implies {}",
            layer1.dims(),
            cfg.gabor.num_features()
        )));
    }
    validate_labels(labels).map_err(|source| ModelError::Boost { layer: 1, source })?;

    let mut candidates = primitive_candidates(&cfg.gabor);
    let mut owned: Option<FeatureMatrix> = None;
    let mut layers = Vec::with_capacity(cfg.layers());
    let mut log = Vec::new();
    for (index, &rounds) in cfg.rounds.iter().enumerate() {
        let layer = index + 1;
        let matrix = owned.as_ref().unwrap_or(layer1);
        let (classifier, records) =
            train_strong_logged(matrix, labels, rounds, cfg.quantile_count, layer)
                .map_err(|source| ModelError::Boost { layer, source })?;
        log.extend(records);
        let composites_out = if layer < cfg.layers() {
            compose_layer(layer, &candidates, &classifier, &cfg.composition)?
        } else {
            Vec::new()
        };
        let next = if composites_out.is_empty() {
            None
        } else {
            let wrap = |source| ModelError::Compose { layer, source };
            Some((
                composite_descriptors(&candidates, &composites_out).map_err(wrap)?,
                composite_responses(matrix, &composites_out).map_err(wrap)?,
            ))
        };
        log::info!(
            "layer {layer}: {} candidates, {} rounds, {} composites out",
            candidates.len(),
            classifier.len(),
            composites_out.len()
        );
        let this_candidates = match next {
            Some((next_candidates, next_matrix)) => {
                owned = Some(next_matrix);
                std::mem::replace(&mut candidates, next_candidates)
            }
            None => std::mem::take(&mut candidates),
        };
        layers.push(LayerModel {
            candidates: this_candidates,
            classifier,
            composites_out,
        });
    }
    Ok((
        DeepBoostModel {
            config: cfg.clone(),
            layers,
        },
        log,
    ))
}

/// Loads and preprocesses every image of `ds`, in item order.
pub fn load_images(ds: &LabeledDataset) -> Result<Vec<GrayImage120>, ModelError> {
    ds.items
        .par_iter()
        .map(|item| load_canonical(&item.path).map_err(ModelError::from))
        .collect()
}

pub fn response_maps(images: &[GrayImage120], bank: &FilterBank) -> Vec<ResponseMap> {
    images
        .par_iter()
        .map(|img| response_map(img, bank))
        .collect()
}

/// Binary model for `positive_class` against every other class.
pub fn train_binary(
    train: &LabeledDataset,
    positive_class: usize,
    cfg: &ModelConfig,
) -> Result<DeepBoostModel, ModelError> {
    cfg.validate()?;
    let bank = FilterBank::new(cfg.gabor.clone())?;
    let maps = response_maps(&load_images(train)?, &bank);
    let labels: Vec<f64> = train
        .items
        .iter()
        .map(|i| if i.class == positive_class { 1.0 } else { -1.0 })
        .collect();
    Ok(train_binary_on(&layer1_matrix(&maps)?, &labels, cfg)?.0)
}

/// Indices per layer that some stump needs, directly or through a
/// composite; `targets` limits which layers' stumps count.
fn needed_dims(model: &DeepBoostModel, top: usize) -> Vec<BTreeSet<usize>> {
    let mut needed: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); top];
    for l in (0..top).rev() {
        let layer = &model.layers[l];
        let mut set: BTreeSet<usize> = layer.classifier.stumps.iter().map(|s| s.dim).collect();
        if l + 1 < top {
            for &j in &needed[l + 1] {
                if let Provenance::Composite { s, t, .. } =
                    layer_candidate(model, l + 1, j).provenance
                {
                    set.insert(s);
                    set.insert(t);
                }
            }
        }
        needed[l] = set;
    }
    needed
}

fn layer_candidate(model: &DeepBoostModel, layer_index: usize, j: usize) -> &FeatureDescriptor {
    &model.layers[layer_index].candidates[j]
}

/// Materialized values of one layer; only needed indices are present.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerFeatures {
    pub values: BTreeMap<usize, f64>,
}

impl LayerFeatures {
    pub fn get(&self, d: usize) -> Option<f64> {
        self.values.get(&d).copied()
    }
}

impl DeepBoostModel {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// The feature pool: every candidate descriptor of every layer.
    pub fn pool(&self) -> impl Iterator<Item = &FeatureDescriptor> {
        self.layers.iter().flat_map(|l| l.candidates.iter())
    }

    pub fn check_rmap(&self, rmap: &ResponseMap) -> Result<(), ModelError> {
        if rmap.config() != &self.config.gabor {
            return Err(ModelError::ConfigMismatch(format!(
                "model uses {:?}, response map uses {:?}",
                self.config.gabor,
                rmap.config()
            )));
        }
        Ok(())
    }

    /// Structural invariants: stump dims in range, layer chaining, parents
    /// selected by the lower layer.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.config.validate()?;
        if self.layers.len() != self.config.layers() {
            return Err(ModelError::Inconsistent(format!(
                "{} layers stored, config has {}",
                self.layers.len(),
                self.config.layers()
            )));
        }
        if self.layers[0].candidates.len() != self.config.gabor.num_features() {
            return Err(ModelError::Inconsistent("layer-1 candidate count".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let dims = layer.candidates.len();
            if layer.classifier.dims != dims {
                return Err(ModelError::Inconsistent(format!(
                    "layer {} classifier dims",
                    l + 1
                )));
            }
            if layer.classifier.stumps.len() != layer.classifier.stump_train_errors.len() {
                return Err(ModelError::Inconsistent(format!(
                    "layer {} error list",
                    l + 1
                )));
            }
            if let Some(s) = layer.classifier.stumps.iter().find(|s| s.dim >= dims) {
                return Err(ModelError::Inconsistent(format!(
                    "layer {} stump dim {} >= {dims}",
                    l + 1,
                    s.dim
                )));
            }
            let selected: BTreeSet<usize> = layer.classifier.stumps.iter().map(|s| s.dim).collect();
            if layer
                .composites_out
                .iter()
                .any(|c| !selected.contains(&c.s) || !selected.contains(&c.t))
            {
                return Err(ModelError::Inconsistent(format!(
                    "layer {} composes unselected features",
                    l + 1
                )));
            }
            match self.layers.get(l + 1) {
                Some(next) => {
                    let expected = composite_descriptors(&layer.candidates, &layer.composites_out)
                        .map_err(|source| ModelError::Compose {
                            layer: l + 1,
                            source,
                        })?;
                    if expected != next.candidates {
                        return Err(ModelError::Inconsistent(format!(
                            "layer {} candidates differ from layer {} composites",
                            l + 2,
                            l + 1
                        )));
                    }
                }
                None if !layer.composites_out.is_empty() => {
                    return Err(ModelError::Inconsistent("top layer has composites".into()))
                }
                None => {}
            }
        }
        Ok(())
    }

    /// Lazily evaluated feature values for layers `1..=top`.
    fn forward_to(&self, rmap: &ResponseMap, top: usize) -> Result<Vec<LayerFeatures>, ModelError> {
        self.check_rmap(rmap)?;
        let needed = needed_dims(self, top);
        let mut out: Vec<LayerFeatures> = Vec::with_capacity(top);
        for (l, dims) in needed.iter().enumerate() {
            let mut values = BTreeMap::new();
            for &d in dims {
                let v = match self.layers[l].candidates[d].provenance {
                    Provenance::Primitive(_) => rmap.responses()[d],
                    Provenance::Composite {
                        s,
                        t,
                        beta_s,
                        beta_t,
                    } => {
                        let lower = &out[l - 1];
                        beta_s * lower.values[&s] + beta_t * lower.values[&t]
                    }
                };
                values.insert(d, v);
            }
            out.push(LayerFeatures { values });
        }
        Ok(out)
    }

    /// Per-layer values of every feature any layer's classifier depends on.
    pub fn forward_features(&self, rmap: &ResponseMap) -> Result<Vec<LayerFeatures>, ModelError> {
        self.forward_to(rmap, self.layers.len())
    }

    /// Dense evaluation of every candidate of every layer.
    pub fn forward_features_full(&self, rmap: &ResponseMap) -> Result<Vec<Vec<f64>>, ModelError> {
        self.check_rmap(rmap)?;
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let values = layer
                .candidates
                .iter()
                .enumerate()
                .map(|(d, fd)| match fd.provenance {
                    Provenance::Primitive(_) => rmap.responses()[d],
                    Provenance::Composite {
                        s,
                        t,
                        beta_s,
                        beta_t,
                    } => {
                        let lower = out.last().expect("composites above layer 1");
                        beta_s * lower[s] + beta_t * lower[t]
                    }
                })
                .collect();
            out.push(values);
        }
        Ok(out)
    }

    /// `F^l` for a 1-based layer index on a precomputed response map.
    pub fn score_map_at_layer(&self, rmap: &ResponseMap, layer: usize) -> Result<f64, ModelError> {
        if layer == 0 || layer > self.layers.len() {
            return Err(ModelError::LayerOutOfRange {
                layer,
                layers: self.layers.len(),
            });
        }
        let features = self.forward_to(rmap, layer)?;
        let values = &features[layer - 1];
        Ok(self.layers[layer - 1]
            .classifier
            .score_with(|d| values.values[&d]))
    }

    /// Scores of every layer on a precomputed response map.
    pub fn score_map_all_layers(&self, rmap: &ResponseMap) -> Result<Vec<f64>, ModelError> {
        let features = self.forward_features(rmap)?;
        Ok(self
            .layers
            .iter()
            .zip(&features)
            .map(|(layer, values)| layer.classifier.score_with(|d| values.values[&d]))
            .collect())
    }

    pub fn score_map(&self, rmap: &ResponseMap) -> Result<f64, ModelError> {
        self.score_map_at_layer(rmap, self.layers.len())
    }

    pub fn filter_bank(&self) -> Result<FilterBank, ModelError> {
        Ok(FilterBank::new(self.config.gabor.clone())?)
    }

    /// Top-layer score `F^L` of an image.
    pub fn score(&self, img: &GrayImage120) -> Result<f64, ModelError> {
        self.score_map(&response_map(img, &self.filter_bank()?))
    }

    pub fn score_at_layer(&self, img: &GrayImage120, layer: usize) -> Result<f64, ModelError> {
        self.score_map_at_layer(&response_map(img, &self.filter_bank()?), layer)
    }
}

/// Seed of the binary model for `class_name`, independent of class order.
pub fn class_seed(global: u64, class_name: &str) -> u64 {
    // FNV-1a over the name, then a splitmix64 finalizer with the global seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in class_name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ global.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Training log of a multiclass run, one entry per class.
pub type ClassLogs = Vec<(String, Vec<RoundRecord>)>;

/// One-vs-all training on precomputed response maps. Samples are put in
/// canonical order by `keys` so the result does not depend on how the
/// dataset was enumerated.
pub fn train_multiclass_on(
    maps: &[ResponseMap],
    classes: &[usize],
    keys: &[String],
    class_names: &[String],
    cfg: &ModelConfig,
) -> Result<(MulticlassModel, ClassLogs), ModelError> {
    cfg.validate()?;
    if class_names.len() < 2 {
        return Err(ModelError::InvalidConfig(format!(
            "need at least 2 classes, got {}",
            class_names.len()
        )));
    }
    if maps.len() != classes.len() || maps.len() != keys.len() {
        return Err(ModelError::InvalidConfig(
            "maps, classes and keys differ in length".into(),
        ));
    }
    let mut order: Vec<usize> = (0..maps.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]).then(a.cmp(&b)));
    let sorted_maps: Vec<ResponseMap> = order.iter().map(|&i| maps[i].clone()).collect();
    let sorted_classes: Vec<usize> = order.iter().map(|&i| classes[i]).collect();
    let layer1 = layer1_matrix(&sorted_maps)?;
    drop(sorted_maps);

    let results: Vec<(DeepBoostModel, Vec<RoundRecord>)> = class_names
        .par_iter()
        .enumerate()
        .map(|(k, name)| {
            let labels: Vec<f64> = sorted_classes
                .iter()
                .map(|&c| if c == k { 1.0 } else { -1.0 })
                .collect();
            let class_cfg = ModelConfig {
                seed: class_seed(cfg.seed, name),
                ..cfg.clone()
            };
            log::info!("training class `{name}`");
            train_binary_on(&layer1, &labels, &class_cfg)
        })
        .collect::<Result<_, _>>()?;
    let mut binaries = Vec::with_capacity(results.len());
    let mut logs = Vec::with_capacity(results.len());
    for ((model, log), name) in results.into_iter().zip(class_names) {
        binaries.push(model);
        logs.push((name.clone(), log));
    }
    Ok((
        MulticlassModel {
            class_names: class_names.to_vec(),
            binaries,
        },
        logs,
    ))
}

fn path_key(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

pub fn train_multiclass_logged(
    train: &LabeledDataset,
    cfg: &ModelConfig,
) -> Result<(MulticlassModel, ClassLogs), ModelError> {
    cfg.validate()?;
    train.validate_for_training()?;
    let bank = FilterBank::new(cfg.gabor.clone())?;
    let maps = response_maps(&load_images(train)?, &bank);
    let classes: Vec<usize> = train.items.iter().map(|i| i.class).collect();
    let keys: Vec<String> = train.items.iter().map(|i| path_key(&i.path)).collect();
    train_multiclass_on(&maps, &classes, &keys, &train.class_names, cfg)
}

pub fn train_multiclass(
    train: &LabeledDataset,
    cfg: &ModelConfig,
) -> Result<MulticlassModel, ModelError> {
    train_multiclass_logged(train, cfg).map(|(m, _)| m)
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

impl MulticlassModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.class_names.len() < 2 || self.class_names.len() != self.binaries.len() {
            return Err(ModelError::Inconsistent(format!(
                "{} class names for {} binaries",
                self.class_names.len(),
                self.binaries.len()
            )));
        }
        let gabor = &self.binaries[0].config.gabor;
        for b in &self.binaries {
            if &b.config.gabor != gabor {
                return Err(ModelError::ConfigMismatch(
                    "binaries use different filter banks".into(),
                ));
            }
            b.validate()?;
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.binaries
            .iter()
            .map(DeepBoostModel::num_layers)
            .min()
            .unwrap_or(0)
    }

    pub fn gabor_config(&self) -> &GaborConfig {
        &self.binaries[0].config.gabor
    }

    pub fn filter_bank(&self) -> Result<FilterBank, ModelError> {
        Ok(FilterBank::new(self.gabor_config().clone())?)
    }

    /// Top-layer scores of every class on a precomputed response map.
    pub fn scores_map(&self, rmap: &ResponseMap) -> Result<Vec<f64>, ModelError> {
        self.binaries.iter().map(|b| b.score_map(rmap)).collect()
    }

    /// `scores[layer][class]` for every layer.
    pub fn layer_scores_map(&self, rmap: &ResponseMap) -> Result<Vec<Vec<f64>>, ModelError> {
        let per_class: Vec<Vec<f64>> = self
            .binaries
            .iter()
            .map(|b| b.score_map_all_layers(rmap))
            .collect::<Result<_, _>>()?;
        Ok((0..self.num_layers())
            .map(|l| per_class.iter().map(|s| s[l]).collect())
            .collect())
    }

    pub fn predict_map(&self, rmap: &ResponseMap) -> Result<(usize, Vec<f64>), ModelError> {
        let scores = self.scores_map(rmap)?;
        Ok((argmax(&scores), scores))
    }

    pub fn predict(&self, img: &GrayImage120) -> Result<(usize, Vec<f64>), ModelError> {
        self.predict_map(&response_map(img, &self.filter_bank()?))
    }
}
