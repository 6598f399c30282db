//! Multi-scale Hessian vesselness for bright tubular structures.
//!
//! Per scale `s` with ordered eigenvalues `|l1| <= |l2|` of the
//! scale-normalised Hessian:
//!
//! ```text
//! V_s = 0                                                  if l2 > 0
//! V_s = exp(-R^2 / (2 beta^2)) * (1 - exp(-S^2 / (2 c^2)))  otherwise
//! R = |l1| / |l2|,   S = sqrt(l1^2 + l2^2)
//! ```
//!
//! and the multi-scale map is the pixelwise maximum over scales.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aam::{AamModel, FitResult};
use crate::error::{Error, Result};
use crate::imgcore::{hessian_at_scale_gamma, HessianField, ImageGrid, DEFAULT_GAMMA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VesselnessParams {
    /// Strictly increasing Gaussian scales in pixels.
    pub scales: Vec<f64>,
    pub beta: f64,
    /// Structureness sensitivity; `None` means half the largest Hessian norm
    /// found in the image over all scales.
    pub c: Option<f64>,
    /// Scale-normalisation exponent of the Hessian.
    pub gamma: f64,
}

impl Default for VesselnessParams {
    fn default() -> Self {
        Self {
            scales: vec![3.0, 4.0, 5.0],
            beta: 0.5,
            c: None,
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl VesselnessParams {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::param("vesselness needs at least one scale"));
        }
        if self.scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::param("vesselness scales must be positive"));
        }
        if self.scales.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("vesselness scales must be strictly increasing"));
        }
        check_positive("beta", self.beta)?;
        if let Some(c) = self.c {
            check_positive("c", c)?;
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::param(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        Ok(())
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be positive, got {v}")))
    }
}

/// Vesselness values, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VesselnessMap(ImageGrid);

impl VesselnessMap {
    pub fn values(&self) -> &ImageGrid {
        &self.0
    }

    pub fn into_values(self) -> ImageGrid {
        self.0
    }
}

/// Eigenvalues below this fraction of the peak intensity are roundoff.
const ROUNDOFF_FLOOR: f64 = 1e-10;

fn noise_floor(img: &ImageGrid) -> f64 {
    ROUNDOFF_FLOOR * img.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn vesselness_from_hessian(h: &HessianField, beta: f64, c: f64, floor: f64) -> ImageGrid {
    let (w, hgt) = h.lxx.dims();
    let two_b2 = 2.0 * beta * beta;
    let two_c2 = 2.0 * c * c;
    ImageGrid::from_fn(w, hgt, |x, y| {
        let e = h.eigen_at(x, y);
        if e.lambda2 >= -floor {
            return 0.0;
        }
        let r = e.lambda1.abs() / e.lambda2.abs();
        let s2 = e.lambda1 * e.lambda1 + e.lambda2 * e.lambda2;
        let v = (-r * r / two_b2).exp() * (1.0 - (-s2 / two_c2).exp());
        v.clamp(0.0, 1.0)
    })
}

fn max_structureness(h: &HessianField, floor: f64) -> f64 {
    let (w, hgt) = h.lxx.dims();
    let mut m = 0.0f64;
    for y in 0..hgt {
        for x in 0..w {
            let e = h.eigen_at(x, y);
            m = m.max(e.lambda1.hypot(e.lambda2));
        }
    }
    if m <= floor {
        0.0
    } else {
        m
    }
}

/// Single-scale vesselness with the default scale normalisation.
pub fn vesselness_at_scale(img: &ImageGrid, s: f64, beta: f64, c: f64) -> Result<ImageGrid> {
    check_positive("scale", s)?;
    check_positive("beta", beta)?;
    check_positive("c", c)?;
    let h = hessian_at_scale_gamma(img, s, DEFAULT_GAMMA)?;
    Ok(vesselness_from_hessian(&h, beta, c, noise_floor(img)))
}

/// Pixelwise maximum of single-scale vesselness over `params.scales`; an
/// automatic `c` is resolved once for all scales.
pub fn vesselness_multiscale(img: &ImageGrid, params: &VesselnessParams) -> Result<VesselnessMap> {
    params.validate()?;
    let hessians = params
        .scales
        .par_iter()
        .map(|&s| hessian_at_scale_gamma(img, s, params.gamma))
        .collect::<Result<Vec<_>>>()?;
    let floor = noise_floor(img);
    let c = match params.c {
        Some(c) => c,
        None => {
            let m = hessians.iter().map(|h| max_structureness(h, floor)).fold(0.0, f64::max);
            if m == 0.0 {
                return Ok(VesselnessMap(ImageGrid::zeros(img.width(), img.height())));
            }
            0.5 * m
        }
    };
    let maps: Vec<ImageGrid> = hessians
        .par_iter()
        .map(|h| vesselness_from_hessian(h, params.beta, c, floor))
        .collect();
    let mut out = maps[0].clone();
    for m in &maps[1..] {
        out.data_mut().iter_mut().zip(m.data()).for_each(|(o, v)| *o = o.max(*v));
    }
    Ok(VesselnessMap(out))
}

/// Copy of `img` whose pixels outside `mask` are filled outward from the
/// foreground, one 8-connected layer at a time, each new pixel taking the mean
/// of its already known neighbours.
pub fn extend_foreground(img: &ImageGrid, mask: &[bool]) -> ImageGrid {
    let (w, h) = img.dims();
    let mut out = img.clone();
    let mut known = mask.to_vec();
    if !known.iter().any(|&k| k) {
        return out;
    }
    let neighbours = |i: usize| {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        (-1..=1)
            .flat_map(move |dy| (-1..=1).map(move |dx| (x + dx, y + dy)))
            .filter(move |&(nx, ny)| (nx, ny) != (x, y) && nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize)
            .map(move |(nx, ny)| ny as usize * w + nx as usize)
    };
    let mut frontier: Vec<usize> = (0..w * h)
        .filter(|&i| !known[i] && neighbours(i).any(|n| known[n]))
        .collect();
    while !frontier.is_empty() {
        let values: Vec<f64> = frontier
            .iter()
            .map(|&i| {
                let (sum, n) = neighbours(i)
                    .filter(|&n| known[n])
                    .fold((0.0, 0usize), |(s, c), n| (s + out.data()[n], c + 1));
                sum / n as f64
            })
            .collect();
        for (&i, v) in frontier.iter().zip(values) {
            out.data_mut()[i] = v;
            known[i] = true;
        }
        let mut next: Vec<usize> = frontier.iter().flat_map(|&i| neighbours(i)).filter(|&n| !known[n]).collect();
        next.sort_unstable();
        next.dedup();
        frontier = next;
    }
    out
}

/// Vesselness of a segmented image (background exactly 0). The background
/// is filled by [`extend_foreground`] first so that the segmentation boundary
/// does not register as a ridge, and the response there is set to 0.
pub fn segmented_vesselness(img: &ImageGrid, params: &VesselnessParams) -> Result<VesselnessMap> {
    let mask: Vec<bool> = img.data().iter().map(|&v| v != 0.0).collect();
    let filled = extend_foreground(img, &mask);
    let mut v = vesselness_multiscale(&filled, params)?.into_values();
    v.data_mut().iter_mut().zip(&mask).for_each(|(x, &m)| {
        if !m {
            *x = 0.0
        }
    });
    Ok(VesselnessMap(v))
}

/// Vesselness of the segmented raw image resampled into `model`'s canonical
/// frame at the fitted shape; pixels outside the frame mesh are 0.
pub fn extract_signature(
    img: &ImageGrid,
    fit: &FitResult,
    model: &AamModel,
    params: &VesselnessParams,
) -> Result<VesselnessMap> {
    let v = segmented_vesselness(img, params)?;
    signature_from_vesselness(&v, fit, model)
}

/// Resamples an already computed vesselness map into the canonical frame.
pub fn signature_from_vesselness(v: &VesselnessMap, fit: &FitResult, model: &AamModel) -> Result<VesselnessMap> {
    model
        .check_shape_params(&fit.shape_params)
        .map_err(|e| Error::Precondition(format!("fit does not belong to this model: {e}")))?;
    if !fit.final_error.is_finite() {
        return Err(Error::Precondition("fit has no finite error".into()));
    }
    let values = model.sample_image(v.values(), &fit.shape_params)?;
    let frame = model.frame();
    Ok(VesselnessMap(
        frame.raster.to_image(&values.iter().map(|x| x.clamp(0.0, 1.0)).collect::<Vec<_>>()),
    ))
}
