//! Detail enhancement: anisotropic diffusion followed by subtraction of the
//! diffused image from the original.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::ImageGrid;

/// Edge-stopping function applied to the gradient magnitude `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Conductance {
    /// `exp(-g / k^2)`
    #[default]
    Linear,
    /// `exp(-(g / k)^2)`
    PeronaMalik,
}

/// Whether conductances are computed once from the input or every iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConductanceUpdate {
    #[default]
    Frozen,
    PerStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionParams {
    pub k: f64,
    pub step: f64,
    pub iterations: usize,
    pub conductance: Conductance,
    pub conductance_update: ConductanceUpdate,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        Self {
            k: 20.0,
            step: 0.20,
            iterations: 20,
            conductance: Conductance::Linear,
            conductance_update: ConductanceUpdate::Frozen,
        }
    }
}

impl DiffusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) || !self.k.is_finite() {
            return Err(Error::param(format!("diffusion k must be positive, got {}", self.k)));
        }
        if !(self.step > 0.0 && self.step <= 0.25) {
            return Err(Error::param(format!(
                "diffusion step {} outside (0, 0.25] required for stability",
                self.step
            )));
        }
        if self.iterations == 0 {
            return Err(Error::param("diffusion needs at least one iteration"));
        }
        Ok(())
    }

    #[inline]
    fn conductance(&self, grad_mag: f64) -> f64 {
        match self.conductance {
            Conductance::Linear => (-grad_mag / (self.k * self.k)).exp(),
            Conductance::PeronaMalik => {
                let r = grad_mag / self.k;
                (-r * r).exp()
            }
        }
    }
}

/// Conductances on the edges between horizontal neighbours (`east`, indexed by
/// the left pixel) and vertical neighbours (`south`, indexed by the top pixel).
struct EdgeConductances {
    east: Vec<f64>,
    south: Vec<f64>,
}

fn edge_conductances(img: &ImageGrid, params: &DiffusionParams) -> EdgeConductances {
    let (w, h) = img.dims();
    let d = img.data();
    let at = |x: usize, y: usize| d[y * w + x];
    // central differences with mirrored borders
    let dy = |x: usize, y: usize| {
        let up = if y > 0 { at(x, y - 1) } else { at(x, y) };
        let down = if y + 1 < h { at(x, y + 1) } else { at(x, y) };
        0.5 * (down - up)
    };
    let dx = |x: usize, y: usize| {
        let left = if x > 0 { at(x - 1, y) } else { at(x, y) };
        let right = if x + 1 < w { at(x + 1, y) } else { at(x, y) };
        0.5 * (right - left)
    };
    let mut east = vec![0.0; w * h];
    let mut south = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                let gx = at(x + 1, y) - at(x, y);
                let gy = 0.5 * (dy(x, y) + dy(x + 1, y));
                east[y * w + x] = params.conductance(gx.hypot(gy));
            }
            if y + 1 < h {
                let gy = at(x, y + 1) - at(x, y);
                let gx = 0.5 * (dx(x, y) + dx(x, y + 1));
                south[y * w + x] = params.conductance(gx.hypot(gy));
            }
        }
    }
    EdgeConductances { east, south }
}

fn diffusion_step(cur: &[f64], w: usize, h: usize, c: &EdgeConductances, step: f64) -> Vec<f64> {
    let mut next = cur.to_vec();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut flux = 0.0;
            if x + 1 < w {
                flux += c.east[i] * (cur[i + 1] - cur[i]);
            }
            if x > 0 {
                flux += c.east[i - 1] * (cur[i - 1] - cur[i]);
            }
            if y + 1 < h {
                flux += c.south[i] * (cur[i + w] - cur[i]);
            }
            if y > 0 {
                flux += c.south[i - w] * (cur[i - w] - cur[i]);
            }
            next[i] = cur[i] + step * flux;
        }
    }
    next
}

/// Explicit 4-neighbour scheme for `dI/dt = div(c(|grad I|) grad I)` with
/// conductances on edge midpoints and zero flux across the image border.
pub fn diffuse(img: &ImageGrid, params: &DiffusionParams) -> Result<ImageGrid> {
    params.validate()?;
    let (w, h) = img.dims();
    let mut cur = img.data().to_vec();
    let mut cond = edge_conductances(img, params);
    for it in 0..params.iterations {
        if it > 0 && params.conductance_update == ConductanceUpdate::PerStep {
            cond = edge_conductances(&ImageGrid::from_vec_unchecked(w, h, cur.clone()), params);
        }
        cur = diffusion_step(&cur, w, h, &cond, params.step);
    }
    Ok(ImageGrid::from_vec_unchecked(w, h, cur))
}

/// `I - diffuse(I)`.
pub fn enhance_detail(img: &ImageGrid, params: &DiffusionParams) -> Result<ImageGrid> {
    let d = diffuse(img, params)?;
    Ok(img - &d)
}
