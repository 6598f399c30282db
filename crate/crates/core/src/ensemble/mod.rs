//! Dual-dimension AAM ensemble: overlapping yaw ranges, each split into
//! clusters of people with similar appearance, one model per (range, cluster)
//! cell.

mod cluster;
mod io;
mod normalize;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aam::{fit_icaam, train_aam, AamModel, AamOptions, CanonicalFrame, FitOptions, FitResult, FitSeed, TrainingSample};
use crate::aam::train_shape_model;
use crate::error::{Error, Result};
use crate::geometry::{Mesh, ShapeInstance};
use crate::imgcore::ImageGrid;
use crate::segment::MomentEllipse;

pub use io::{read_ensemble, write_ensemble, ENSEMBLE_MANIFEST};
pub use normalize::{
    normalize_pair, normalize_prepared, prepare_image, signature_in_range, target_range, NormalizedPair, PreparedImage,
    StageParams,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosePartition {
    /// `(yaw_min, yaw_max)` in degrees; both ends inclusive.
    pub ranges: Vec<(f64, f64)>,
}

impl Default for PosePartition {
    fn default() -> Self {
        Self {
            ranges: vec![(0.0, 45.0), (22.5, 67.5), (45.0, 90.0)],
        }
    }
}

impl PosePartition {
    pub fn validate(&self) -> Result<()> {
        if self.ranges.is_empty() {
            return Err(Error::param("pose partition needs at least one range"));
        }
        if self.ranges.iter().any(|&(a, b)| !(a < b) || a < 0.0 || b > 90.0) {
            return Err(Error::param("each pose range needs 0 <= yaw_min < yaw_max <= 90"));
        }
        let mut sorted = self.ranges.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut reach = 0.0;
        for &(a, b) in &sorted {
            if a > reach {
                return Err(Error::param(format!("pose ranges leave [{reach}, {a}] uncovered")));
            }
            reach = f64::max(reach, b);
        }
        if reach < 90.0 {
            return Err(Error::param(format!("pose ranges leave [{reach}, 90] uncovered")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn centre(&self, i: usize) -> f64 {
        let (a, b) = self.ranges[i];
        0.5 * (a + b)
    }

    /// Every range containing `yaw`.
    pub fn ranges_for(&self, yaw: f64) -> Vec<usize> {
        self.ranges
            .iter()
            .enumerate()
            .filter(|(_, &(a, b))| a <= yaw && yaw <= b)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub partition: PosePartition,
    pub clusters_per_range: usize,
    /// Retained variance of both the shape and the appearance PCA.
    pub variance_keep: f64,
    pub seed: u64,
    /// Model frame size relative to the mean training shape.
    pub frame_scale: f64,
    pub frame_margin: f64,
    /// Size of the per-range signature frame relative to the range mean shape.
    pub signature_scale: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            partition: PosePartition::default(),
            clusters_per_range: 6,
            variance_keep: 0.95,
            seed: 0,
            frame_scale: 0.75,
            frame_margin: 2.0,
            signature_scale: 1.0,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        self.partition.validate()?;
        if self.clusters_per_range == 0 {
            return Err(Error::param("clusters_per_range must be at least 1"));
        }
        if !(self.signature_scale > 0.0 && self.signature_scale.is_finite()) {
            return Err(Error::param("signature_scale must be positive"));
        }
        self.aam_options().validate()
    }

    pub fn aam_options(&self) -> AamOptions {
        AamOptions {
            shape_variance_keep: self.variance_keep,
            appearance_variance_keep: self.variance_keep,
            frame_scale: self.frame_scale,
            frame_margin: self.frame_margin,
        }
    }

    /// Number of models a complete ensemble holds.
    pub fn model_count(&self) -> usize {
        self.partition.len() * self.clusters_per_range
    }
}

/// Training image with identity and pose labels.
#[derive(Debug, Clone)]
pub struct AnnotatedSample {
    pub subject: String,
    pub yaw: f64,
    /// Segmented raw image, used for appearance clustering.
    pub raw: ImageGrid,
    /// Enhanced image, landmarks and segmentation ellipse used for training.
    pub sample: TrainingSample,
}

/// Indices of the samples falling in each range; a sample joins every range
/// containing its yaw.
pub fn partition_by_pose(samples: &[AnnotatedSample], partition: &PosePartition) -> Result<Vec<Vec<usize>>> {
    partition.validate()?;
    let mut out = vec![Vec::new(); partition.len()];
    for (k, s) in samples.iter().enumerate() {
        if !(0.0..=90.0).contains(&s.yaw) {
            return Err(Error::Annotation(format!("sample {k} ({}) has yaw {} outside [0, 90]", s.subject, s.yaw)));
        }
        for i in partition.ranges_for(s.yaw) {
            out[i].push(k);
        }
    }
    Ok(out)
}

/// Mean shape of `shapes` placed in a frame of relative size `scale`.
fn reference_frame(mesh: &Mesh, shapes: &[ShapeInstance], scale: f64, margin: f64) -> Result<CanonicalFrame> {
    let model = train_shape_model(mesh, shapes, 1.0)?;
    CanonicalFrame::fitted(mesh, model.mean_shape(), scale, margin)
}

/// Zero-mean, unit-variance appearance of `image` warped from `shape` into `frame`.
fn appearance_vector(frame: &CanonicalFrame, image: &ImageGrid, shape: &ShapeInstance) -> Result<Vec<f64>> {
    let mut v = frame.sample(image, shape)?;
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let inv = if sd > 0.0 { 1.0 / sd } else { 0.0 };
    v.iter_mut().for_each(|x| *x = (*x - mean) * inv);
    Ok(v)
}

/// Person-level appearance clusters of the samples of one range: k-means on
/// normalised raw appearance in the range reference frame, then every
/// person's samples join that person's majority cluster.
pub fn cluster_appearances(
    samples: &[&AnnotatedSample],
    frame: &CanonicalFrame,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if samples.len() < k {
        return Err(Error::param(format!(
            "clustering into {k} groups needs at least {k} samples, got {}",
            samples.len()
        )));
    }
    let data = samples
        .iter()
        .map(|s| appearance_vector(frame, &s.raw, &s.sample.shape))
        .collect::<Result<Vec<_>>>()?;
    let (labels, centres) = cluster::kmeans(&data, k, seed)?;
    let persons: Vec<&str> = samples.iter().map(|s| s.subject.as_str()).collect();
    Ok(cluster::person_vote(&labels, &persons, &data, &centres))
}

/// Immutable set of trained models keyed by `(range, cluster)`, with one
/// shared signature frame per range.
#[derive(Debug, Clone)]
pub struct Ensemble {
    config: EnsembleConfig,
    models: BTreeMap<(usize, usize), AamModel>,
    frames: Vec<CanonicalFrame>,
    members: BTreeMap<(usize, usize), Vec<String>>,
}

impl Ensemble {
    pub fn new(
        config: EnsembleConfig,
        models: BTreeMap<(usize, usize), AamModel>,
        frames: Vec<CanonicalFrame>,
        members: BTreeMap<(usize, usize), Vec<String>>,
    ) -> Result<Self> {
        config.validate()?;
        if models.len() != config.model_count() {
            return Err(Error::param(format!(
                "ensemble needs {} models, got {}",
                config.model_count(),
                models.len()
            )));
        }
        if models
            .keys()
            .any(|&(i, j)| i >= config.partition.len() || j >= config.clusters_per_range)
        {
            return Err(Error::param("model key outside the configured layout"));
        }
        if frames.len() != config.partition.len() {
            return Err(Error::param("ensemble needs one signature frame per pose range"));
        }
        Ok(Self {
            config,
            models,
            frames,
            members,
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn models(&self) -> &BTreeMap<(usize, usize), AamModel> {
        &self.models
    }

    pub fn model(&self, key: (usize, usize)) -> Option<&AamModel> {
        self.models.get(&key)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Signature frame of pose range `i`.
    pub fn frame(&self, i: usize) -> &CanonicalFrame {
        &self.frames[i]
    }

    pub fn frames(&self) -> &[CanonicalFrame] {
        &self.frames
    }

    /// Subjects whose images trained each cell.
    pub fn members(&self) -> &BTreeMap<(usize, usize), Vec<String>> {
        &self.members
    }
}

/// Partitions by pose, clusters each range and trains one model per cell.
pub fn train_ensemble(samples: &[AnnotatedSample], mesh: &Mesh, config: &EnsembleConfig) -> Result<Ensemble> {
    config.validate()?;
    let parts = partition_by_pose(samples, &config.partition)?;
    let k = config.clusters_per_range;
    let opts = config.aam_options();
    let mut frames = Vec::with_capacity(parts.len());
    let mut cells: Vec<((usize, usize), Vec<usize>)> = Vec::new();
    for (i, idx) in parts.iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::Training {
                range: i,
                cluster: 0,
                reason: format!("range holds {} samples", idx.len()),
            });
        }
        let shapes: Vec<ShapeInstance> = idx.iter().map(|&s| samples[s].sample.shape.clone()).collect();
        let frame = reference_frame(mesh, &shapes, config.signature_scale, config.frame_margin).map_err(|e| {
            Error::Training {
                range: i,
                cluster: 0,
                reason: e.to_string(),
            }
        })?;
        let refs: Vec<&AnnotatedSample> = idx.iter().map(|&s| &samples[s]).collect();
        let labels = cluster_appearances(&refs, &frame, k, config.seed.wrapping_add(i as u64)).map_err(|e| {
            Error::Training {
                range: i,
                cluster: 0,
                reason: e.to_string(),
            }
        })?;
        for j in 0..k {
            let cell: Vec<usize> = idx.iter().zip(&labels).filter(|(_, &l)| l == j).map(|(&s, _)| s).collect();
            cells.push(((i, j), cell));
        }
        frames.push(frame);
    }
    if let Some(((i, j), cell)) = cells.iter().find(|(_, c)| c.len() < 2) {
        return Err(Error::Training {
            range: *i,
            cluster: *j,
            reason: format!("cell holds {} samples, at least 2 are needed", cell.len()),
        });
    }
    let trained = cells
        .par_iter()
        .map(|((i, j), cell)| {
            let train: Vec<TrainingSample> = cell.iter().map(|&s| samples[s].sample.clone()).collect();
            train_aam(&train, mesh, &opts)
                .map(|m| ((*i, *j), m))
                .map_err(|e| Error::Training {
                    range: *i,
                    cluster: *j,
                    reason: e.to_string(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let members = cells
        .iter()
        .map(|(key, cell)| {
            let mut names: Vec<String> = cell.iter().map(|&s| samples[s].subject.clone()).collect();
            names.sort();
            names.dedup();
            (*key, names)
        })
        .collect();
    Ensemble::new(config.clone(), trained.into_iter().collect(), frames, members)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub chosen: (usize, usize),
    pub fit: FitResult,
    /// Final error of every member whose fit did not diverge.
    pub all_errors: BTreeMap<(usize, usize), f64>,
}

impl SelectionResult {
    /// Fitted vertex positions in image coordinates.
    pub fn shape(&self, ensemble: &Ensemble) -> ShapeInstance {
        ensemble.models[&self.chosen].shape_instance(&self.fit.shape_params)
    }
}

/// Fits every member from the ellipse seed and keeps the one with the lowest
/// final error (ties go to the lower `(range, cluster)`).
pub fn select_and_fit(
    ensemble: &Ensemble,
    img: &ImageGrid,
    seed: &MomentEllipse,
    opts: &FitOptions,
) -> Result<SelectionResult> {
    let fits: Vec<((usize, usize), Result<FitResult>)> = ensemble
        .models
        .par_iter()
        .map(|(&key, model)| {
            let fit = model
                .seed_params(&FitSeed::Ellipse(*seed))
                .and_then(|p| fit_icaam(model, img, &p, opts));
            (key, fit)
        })
        .collect();
    let mut best: Option<((usize, usize), FitResult)> = None;
    let mut all_errors = BTreeMap::new();
    let mut failures = Vec::new();
    for (key, fit) in fits {
        match fit {
            Ok(f) => {
                all_errors.insert(key, f.final_error);
                if best.as_ref().is_none_or(|(_, b)| f.final_error < b.final_error) {
                    best = Some((key, f));
                }
            }
            Err(Error::FitDiverged(_)) | Err(Error::WarpDegenerate { .. }) => failures.push(key),
            Err(e) => return Err(e),
        }
    }
    let (chosen, fit) = best.ok_or_else(|| {
        Error::SelectionFailed(format!("all {} ensemble fits diverged", failures.len()))
    })?;
    Ok(SelectionResult {
        chosen,
        fit,
        all_errors,
    })
}

#[cfg(test)]
pub(crate) mod testkit;

#[cfg(test)]
mod tests;
