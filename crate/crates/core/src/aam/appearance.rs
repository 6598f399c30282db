use super::linalg::gram_schmidt;
use super::shape::pca_rows;
use crate::error::{Error, Result};
use crate::geometry::{FrameRaster, Mesh, ShapeInstance};
use crate::imgcore::ImageGrid;

/// Shape-normalised appearance statistics in a canonical frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceModel {
    frame_size: (usize, usize),
    a0: ImageGrid,
    modes: Vec<ImageGrid>,
    variances: Vec<f64>,
}

/// Canonical raster: a base shape rasterized on a fixed pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalFrame {
    pub mesh: Mesh,
    pub base: ShapeInstance,
    pub raster: FrameRaster,
}

impl CanonicalFrame {
    pub fn new(mesh: &Mesh, base: &ShapeInstance, width: usize, height: usize) -> Result<Self> {
        Ok(Self {
            mesh: mesh.clone(),
            base: base.clone(),
            raster: FrameRaster::new(mesh, base, width, height)?,
        })
    }

    /// Frame whose base is `shape` uniformly scaled and shifted so its bounding
    /// box starts at `margin` pixels.
    pub fn fitted(mesh: &Mesh, shape: &ShapeInstance, scale: f64, margin: f64) -> Result<Self> {
        let c = shape.centroid();
        let scaled: Vec<f64> = shape
            .points
            .iter()
            .flat_map(|p| [(p.x - c.x) * scale, (p.y - c.y) * scale])
            .collect();
        let s = ShapeInstance::from_flat(&scaled);
        let (lo, hi) = s.bounds();
        let (dx, dy) = (margin - lo.x, margin - lo.y);
        let base = s.translated(dx, dy);
        let w = (hi.x + dx + margin).ceil() as usize + 1;
        let h = (hi.y + dy + margin).ceil() as usize + 1;
        Self::new(mesh, &base, w, h)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.raster.dims()
    }

    /// Warps `image` from `shape` into this frame; one value per raster pixel.
    pub fn sample(&self, image: &ImageGrid, shape: &ShapeInstance) -> Result<Vec<f64>> {
        shape.check_for(&self.mesh)?;
        Ok(self.raster.sample(image, &self.mesh, shape))
    }
}

pub fn train_appearance_model(
    samples: &[(&ImageGrid, &ShapeInstance)],
    frame: &CanonicalFrame,
    variance_keep: f64,
) -> Result<AppearanceModel> {
    if samples.len() < 2 {
        return Err(Error::param(format!(
            "appearance model needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if !(variance_keep > 0.0 && variance_keep <= 1.0) {
        return Err(Error::param(format!("variance_keep must lie in (0, 1], got {variance_keep}")));
    }
    let vectors = samples
        .iter()
        .map(|(img, shape)| frame.sample(img, shape))
        .collect::<Result<Vec<_>>>()?;
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; frame.raster.len()];
    for v in &vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n;
        }
    }
    let centred: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let (modes, variances) = pca_rows(&centred, variance_keep);
    Ok(AppearanceModel {
        frame_size: frame.dims(),
        a0: frame.raster.to_image(&mean),
        modes: modes.iter().map(|m| frame.raster.to_image(m)).collect(),
        variances,
    })
}

impl AppearanceModel {
    /// Assembles a model; modes are re-orthonormalized over `frame`'s pixels.
    pub fn from_parts(
        frame: &CanonicalFrame,
        a0: ImageGrid,
        modes: Vec<ImageGrid>,
        variances: Vec<f64>,
    ) -> Result<Self> {
        let dims = frame.dims();
        if a0.dims() != dims || modes.iter().any(|m| m.dims() != dims) || variances.len() != modes.len() {
            return Err(Error::param("appearance model dimensions do not match the frame"));
        }
        let count = modes.len();
        let vecs = gram_schmidt(modes.iter().map(|m| frame.raster.gather(m)).collect(), &[], 1e-6);
        if vecs.len() != count {
            return Err(Error::param("appearance modes are linearly dependent"));
        }
        Ok(Self {
            frame_size: dims,
            a0: frame.raster.to_image(&frame.raster.gather(&a0)),
            modes: vecs.iter().map(|v| frame.raster.to_image(v)).collect(),
            variances,
        })
    }

    pub fn frame_size(&self) -> (usize, usize) {
        self.frame_size
    }

    pub fn a0(&self) -> &ImageGrid {
        &self.a0
    }

    pub fn modes(&self) -> &[ImageGrid] {
        &self.modes
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// `a0 + sum_i coeffs[i] * A_i`.
    pub fn reconstruct(&self, coeffs: &[f64]) -> ImageGrid {
        let mut out = self.a0.clone();
        for (c, m) in coeffs.iter().zip(&self.modes) {
            for (o, v) in out.data_mut().iter_mut().zip(m.data()) {
                *o += c * v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aam::linalg::dot;
    use crate::geometry::Point;

    fn frame() -> (CanonicalFrame, ShapeInstance) {
        let mesh = Mesh::default_face();
        let s = ShapeInstance::new(
            mesh.vertices()
                .iter()
                .map(|p| Point::new(p.x * 0.2 + 25.0, p.y * 0.2 + 25.0))
                .collect(),
        )
        .unwrap();
        (CanonicalFrame::new(&mesh, &s, 50, 50).unwrap(), s)
    }

    fn image(k: usize) -> ImageGrid {
        ImageGrid::from_fn(50, 50, |x, y| {
            let (u, v) = (x as f64 / 50.0, y as f64 / 50.0);
            (u * (k as f64 + 1.0)).sin() + (v * v * k as f64) + 0.1 * ((x * y + k * 7) % 5) as f64
        })
    }

    #[test]
    fn identical_appearances_give_zero_modes() {
        let (f, s) = frame();
        let img = image(1);
        let model = train_appearance_model(&[(&img, &s), (&img, &s), (&img, &s)], &f, 0.95).unwrap();
        assert_eq!(model.mode_count(), 0);
        for p in f.raster.pixels() {
            assert!((model.a0().data()[p.index] - img.data()[p.index]).abs() < 1e-12);
        }
    }

    #[test]
    fn two_samples_reconstruct_exactly() {
        let (f, s) = frame();
        let (a, b) = (image(1), image(4));
        let model = train_appearance_model(&[(&a, &s), (&b, &s)], &f, 0.95).unwrap();
        assert_eq!(model.mode_count(), 1);
        let a0 = f.raster.gather(model.a0());
        let m = f.raster.gather(&model.modes()[0]);
        assert!((dot(&m, &m) - 1.0).abs() < 1e-12);
        for img in [&a, &b] {
            let x = f.raster.gather(img);
            let d: Vec<f64> = x.iter().zip(&a0).map(|(p, q)| p - q).collect();
            let c = dot(&d, &m);
            let rec = f.raster.gather(&model.reconstruct(&[c]));
            for (r, v) in rec.iter().zip(&x) {
                assert!((r - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reconstruction_error_bounded_by_discarded_variance() {
        let (f, s) = frame();
        let imgs: Vec<ImageGrid> = (0..10).map(image).collect();
        let pairs: Vec<(&ImageGrid, &ShapeInstance)> = imgs.iter().map(|i| (i, &s)).collect();
        let keep = 0.9;
        let model = train_appearance_model(&pairs, &f, keep).unwrap();
        let a0 = f.raster.gather(model.a0());
        let modes: Vec<Vec<f64>> = model.modes().iter().map(|m| f.raster.gather(m)).collect();
        // total variance by direct computation over the samples
        let xs: Vec<Vec<f64>> = imgs.iter().map(|i| f.raster.gather(i)).collect();
        let total: f64 = xs
            .iter()
            .map(|x| x.iter().zip(&a0).map(|(p, q)| (p - q).powi(2)).sum::<f64>())
            .sum::<f64>()
            / xs.len() as f64;
        let mut resid = 0.0;
        for x in &xs {
            let mut d: Vec<f64> = x.iter().zip(&a0).map(|(p, q)| p - q).collect();
            for m in &modes {
                let c = dot(&d, m);
                d.iter_mut().zip(m).for_each(|(v, w)| *v -= c * w);
            }
            resid += dot(&d, &d);
        }
        resid /= xs.len() as f64;
        assert!(resid <= (1.0 - keep) * total + 1e-9, "{resid} vs {}", (1.0 - keep) * total);
        let explained: f64 = model.variances().iter().sum();
        assert!((explained + resid - total).abs() < 1e-6 * total);
    }
}
