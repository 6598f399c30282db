use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::linalg::dot;
use super::model::AamModel;
use crate::error::{Error, Result};
use crate::geometry::{Affine2, Point, ShapeInstance};
use crate::imgcore::ImageGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Stop once the parameter update norm drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Rebuild the steepest-descent images each iteration from the gradient of
    /// the current appearance estimate instead of the mean appearance alone.
    pub adaptive_template: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 50,
            adaptive_template: true,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::param(format!("fit tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::param("fit needs at least one iteration"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub shape_params: Vec<f64>,
    pub appearance_params: Vec<f64>,
    /// Projected-out residual energy per frame pixel at the final parameters.
    pub final_error: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// `W(x; p) <- W(x; p) o W(x; dp)^-1`: the base vertices displaced by `-B dp`
/// are pushed through the current piecewise affine warp (averaged over the
/// triangles sharing each vertex) and projected back onto the basis.
fn compose_inverse(model: &AamModel, p: &[f64], dp: &[f64]) -> Result<Vec<f64>> {
    let pre = model.pre();
    let base = model.shape_model().mean_shape();
    let current = model.shape_instance(p);
    model.check_nondegenerate(&current)?;
    let tris = model.mesh().triangles();
    let affines: Vec<Affine2> = tris
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let src = [base.points[t[0]], base.points[t[1]], base.points[t[2]]];
            let dst = [current.points[t[0]], current.points[t[1]], current.points[t[2]]];
            Affine2::from_triangles(src, dst).ok_or(Error::WarpDegenerate { triangle: i })
        })
        .collect::<Result<_>>()?;
    let mut moved = base.to_flat();
    for (c, b) in dp.iter().zip(&pre.shape_basis) {
        moved.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
    }
    let mut composed = Vec::with_capacity(moved.len());
    for (v, tri_list) in pre.incident.iter().enumerate() {
        let q = Point::new(moved[2 * v], moved[2 * v + 1]);
        let (mut x, mut y) = (0.0, 0.0);
        for &t in tri_list {
            let r = affines[t].apply(q);
            x += r.x;
            y += r.y;
        }
        let n = tri_list.len().max(1) as f64;
        composed.push(x / n);
        composed.push(y / n);
    }
    model.shape_params(&ShapeInstance::from_flat(&composed))
}

/// Inverse-compositional Gauss-Newton fit with the appearance variation
/// projected out of the steepest-descent images.
pub fn fit_icaam(model: &AamModel, img: &ImageGrid, init: &[f64], opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    model.check_shape_params(init)?;
    if img.is_empty() {
        return Err(Error::param("empty image"));
    }
    let pre = model.pre();
    let n = pre.sd.len();
    let mut p = init.to_vec();
    let mut converged = false;
    let mut iterations = 0;
    let diverged = |e: Error| match e {
        Error::WarpDegenerate { triangle } => Error::FitDiverged(format!("triangle {triangle} collapsed during fitting")),
        other => other,
    };
    for it in 1..=opts.max_iter {
        iterations = it;
        model.check_nondegenerate(&model.shape_instance(&p)).map_err(diverged)?;
        let sampled = model.sample_image(img, &p)?;
        let err: Vec<f64> = sampled.iter().zip(&pre.a0).map(|(s, a)| s - a).collect();
        if err.iter().any(|v| !v.is_finite()) {
            return Err(Error::FitDiverged("non-finite error image".into()));
        }
        let dp = if opts.adaptive_template {
            let mut template = pre.a0.clone();
            for b in &pre.app_basis {
                let c = dot(&err, b);
                template.iter_mut().zip(b).for_each(|(t, v)| *t += c * v);
            }
            let (sd, h_inv) = pre.adapted(model.mesh(), &template);
            h_inv * DVector::from_iterator(n, sd.iter().map(|s| dot(s, &err)))
        } else {
            &pre.h_inv * DVector::from_iterator(n, pre.sd.iter().map(|s| dot(s, &err)))
        };
        let step = dp.norm();
        p = compose_inverse(model, &p, dp.as_slice()).map_err(diverged)?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::FitDiverged("non-finite shape parameters".into()));
        }
        if step < opts.tol {
            converged = true;
            break;
        }
    }
    model.check_nondegenerate(&model.shape_instance(&p)).map_err(diverged)?;
    let (alpha, final_error) = project_appearance(model, img, &p)?;
    if !final_error.is_finite() {
        return Err(Error::FitDiverged("non-finite final error".into()));
    }
    Ok(FitResult {
        shape_params: p,
        appearance_params: alpha,
        final_error,
        converged,
        iterations,
    })
}

/// Appearance parameters of `I(W(x; p))` and the per-pixel energy of the
/// residual outside the appearance span.
pub fn project_appearance(model: &AamModel, img: &ImageGrid, p: &[f64]) -> Result<(Vec<f64>, f64)> {
    let pre = model.pre();
    let sampled = model.sample_image(img, p)?;
    let mut resid: Vec<f64> = sampled.iter().zip(&pre.a0).map(|(s, a)| s - a).collect();
    let mut alpha = Vec::with_capacity(pre.app_basis.len());
    for b in &pre.app_basis {
        let c = dot(&resid, b);
        resid.iter_mut().zip(b).for_each(|(r, v)| *r -= c * v);
        alpha.push(c);
    }
    Ok((alpha, dot(&resid, &resid) / resid.len() as f64))
}
