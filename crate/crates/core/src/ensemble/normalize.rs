use serde::{Deserialize, Serialize};

use super::{select_and_fit, Ensemble, PosePartition, SelectionResult};
use crate::aam::FitOptions;
use crate::enhance::{enhance_detail, DiffusionParams};
use crate::error::{Error, Result};
use crate::imgcore::ImageGrid;
use crate::segment::{segment_face, Segmentation, SegmentationConfig};
use crate::vesselness::{segmented_vesselness, VesselnessMap, VesselnessParams};

/// Per-image stage settings used at query time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageParams {
    pub segmentation: SegmentationConfig,
    pub diffusion: DiffusionParams,
    pub vesselness: VesselnessParams,
    pub fit: FitOptions,
}

impl StageParams {
    pub fn validate(&self) -> Result<()> {
        self.segmentation.validate()?;
        self.diffusion.validate()?;
        self.vesselness.validate()?;
        self.fit.validate()
    }

    /// Segmentation followed by detail enhancement of the segmented image.
    pub fn preprocess(&self, img: &ImageGrid) -> Result<(Segmentation, ImageGrid)> {
        let seg = segment_face(img, &self.segmentation.params_for(img))?;
        let enhanced = enhance_detail(&seg.image, &self.diffusion)?;
        Ok((seg, enhanced))
    }
}

/// Everything the pair normalisation needs from one image.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub segmentation: Segmentation,
    pub enhanced: ImageGrid,
    /// Vesselness of the segmented raw image.
    pub vesselness: VesselnessMap,
    pub selection: SelectionResult,
}

impl PreparedImage {
    /// Pose range of the selected model.
    pub fn range(&self) -> usize {
        self.selection.chosen.0
    }
}

pub fn prepare_image(ensemble: &Ensemble, img: &ImageGrid, params: &StageParams) -> Result<PreparedImage> {
    params.validate()?;
    let (segmentation, enhanced) = params.preprocess(img)?;
    let selection = select_and_fit(ensemble, &enhanced, &segmentation.ellipse, &params.fit)?;
    let vesselness = segmented_vesselness(&segmentation.image, &params.vesselness)?;
    Ok(PreparedImage {
        segmentation,
        enhanced,
        vesselness,
        selection,
    })
}

/// Range whose centre is nearest the mean of the centres of `a` and `b`
/// (ties go to the lower index).
pub fn target_range(partition: &PosePartition, a: usize, b: usize) -> usize {
    let mid = 0.5 * (partition.centre(a) + partition.centre(b));
    let mut best = (0, f64::INFINITY);
    for i in 0..partition.len() {
        let d = (partition.centre(i) - mid).abs();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Vesselness of `img` warped from its fitted shape onto the signature frame
/// of pose range `range`; zero outside the frame mesh.
pub fn signature_in_range(ensemble: &Ensemble, img: &PreparedImage, range: usize) -> Result<ImageGrid> {
    if range >= ensemble.frames().len() {
        return Err(Error::param(format!("pose range {range} does not exist")));
    }
    let frame = ensemble.frame(range);
    let shape = img.selection.shape(ensemble);
    let values: Vec<f64> = frame
        .sample(img.vesselness.values(), &shape)?
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Ok(frame.raster.to_image(&values))
}

/// Two signatures in the frame of a shared pose range.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPair {
    pub range: usize,
    pub a: ImageGrid,
    pub b: ImageGrid,
}

pub fn normalize_prepared(ensemble: &Ensemble, a: &PreparedImage, b: &PreparedImage) -> Result<NormalizedPair> {
    let range = target_range(&ensemble.config().partition, a.range(), b.range());
    Ok(NormalizedPair {
        range,
        a: signature_in_range(ensemble, a, range)?,
        b: signature_in_range(ensemble, b, range)?,
    })
}

/// Brings two raw images to a common intermediate pose frame.
pub fn normalize_pair(
    ensemble: &Ensemble,
    img_a: &ImageGrid,
    img_b: &ImageGrid,
    params: &StageParams,
) -> Result<NormalizedPair> {
    let a = prepare_image(ensemble, img_a, params)?;
    let b = prepare_image(ensemble, img_b, params)?;
    normalize_prepared(ensemble, &a, &b)
}
