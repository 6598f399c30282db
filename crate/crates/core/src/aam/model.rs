use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::appearance::{train_appearance_model, AppearanceModel, CanonicalFrame};
use super::linalg::{dot, gram_schmidt, pinv_symmetric};
use super::shape::{train_shape_model, ShapeModel};
use crate::error::{Error, Result};
use crate::geometry::{cross, Mesh, Point, ShapeInstance, MIN_TRIANGLE_AREA};
use crate::imgcore::ImageGrid;
use crate::segment::MomentEllipse;

/// Training options shared by every model in an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AamOptions {
    pub shape_variance_keep: f64,
    pub appearance_variance_keep: f64,
    /// Canonical frame size relative to the mean training shape.
    pub frame_scale: f64,
    /// Empty border around the mean shape in the canonical frame, pixels.
    pub frame_margin: f64,
}

impl Default for AamOptions {
    fn default() -> Self {
        Self {
            shape_variance_keep: 0.95,
            appearance_variance_keep: 0.95,
            frame_scale: 0.75,
            frame_margin: 2.0,
        }
    }
}

impl AamOptions {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("shape_variance_keep", self.shape_variance_keep),
            ("appearance_variance_keep", self.appearance_variance_keep),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::param(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if !(self.frame_scale > 0.0 && self.frame_scale.is_finite()) {
            return Err(Error::param(format!("frame_scale must be positive, got {}", self.frame_scale)));
        }
        if !(self.frame_margin >= 0.0 && self.frame_margin.is_finite()) {
            return Err(Error::param(format!("frame_margin must be non-negative, got {}", self.frame_margin)));
        }
        Ok(())
    }
}

/// Relation between a segmentation moment ellipse and the annotated mesh,
/// learned from the training set and used to seed fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedCalibration {
    /// Mesh area divided by the foreground pixel count.
    pub area_ratio: f64,
    /// Mesh vertex centroid minus ellipse centre, in units of `sqrt(pixel_area)`.
    pub offset_x: f64,
    pub offset_y: f64,
}

impl Default for SeedCalibration {
    fn default() -> Self {
        Self {
            area_ratio: 0.6,
            offset_x: 0.0,
            offset_y: 0.0,
        }
    }
}

/// One annotated training image.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    /// Enhanced, segmented image.
    pub image: ImageGrid,
    pub shape: ShapeInstance,
    pub ellipse: Option<MomentEllipse>,
}

/// Starting point for a fit.
#[derive(Debug, Clone)]
pub enum FitSeed {
    /// Mean shape placed on a segmentation ellipse via the model's calibration.
    Ellipse(MomentEllipse),
    /// Explicit vertex positions, projected onto the model's shape basis.
    Shape(ShapeInstance),
    /// Shape parameters in the model's own basis.
    Params(Vec<f64>),
}

/// Shape and appearance model with the precomputed quantities of
/// inverse-compositional fitting.
#[derive(Debug, Clone)]
pub struct AamModel {
    shape: ShapeModel,
    appearance: AppearanceModel,
    calibration: SeedCalibration,
    image_dims: (usize, usize),
    pre: Precomputed,
}

#[derive(Debug, Clone)]
pub(crate) struct Precomputed {
    pub frame: CanonicalFrame,
    /// Similarity modes followed by the orthogonalised PCA modes; each `2 * nv`.
    pub shape_basis: Vec<Vec<f64>>,
    /// Appearance modes then the constant mode, orthonormal over frame pixels.
    pub app_basis: Vec<Vec<f64>>,
    pub a0: Vec<f64>,
    /// Projected-out steepest-descent images, one per shape parameter.
    pub sd: Vec<Vec<f64>>,
    pub h_inv: DMatrix<f64>,
    pub incident: Vec<Vec<usize>>,
    /// Orientation sign of each base triangle.
    pub orientation: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Central differences inside the mask, one-sided at its border.
fn masked_gradient(img: &ImageGrid, mask: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = img.dims();
    let d = img.data();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let inside = |x: isize, y: isize| x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && mask[y as usize * w + x as usize];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            if !mask[i] {
                continue;
            }
            let diff = |dx: isize, dy: isize| -> f64 {
                let fwd = inside(x + dx, y + dy);
                let bwd = inside(x - dx, y - dy);
                let at = |xx: isize, yy: isize| d[yy as usize * w + xx as usize];
                match (fwd, bwd) {
                    (true, true) => 0.5 * (at(x + dx, y + dy) - at(x - dx, y - dy)),
                    (true, false) => at(x + dx, y + dy) - d[i],
                    (false, true) => d[i] - at(x - dx, y - dy),
                    (false, false) => 0.0,
                }
            };
            gx[i] = diff(1, 0);
            gy[i] = diff(0, 1);
        }
    }
    (gx, gy)
}

fn similarity_modes(base: &ShapeInstance) -> Vec<Vec<f64>> {
    let c = base.centroid();
    let n = base.len();
    let centred: Vec<f64> = base.points.iter().flat_map(|p| [p.x - c.x, p.y - c.y]).collect();
    let perp: Vec<f64> = centred.chunks_exact(2).flat_map(|p| [-p[1], p[0]]).collect();
    let tx: Vec<f64> = (0..2 * n).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
    let ty: Vec<f64> = (0..2 * n).map(|i| if i % 2 == 1 { 1.0 } else { 0.0 }).collect();
    gram_schmidt(vec![centred, perp, tx, ty], &[], 1e-12)
}

impl Precomputed {
    fn build(shape: &ShapeModel, appearance: &AppearanceModel) -> Result<Self> {
        let mesh = shape.mesh();
        let base = shape.mean_shape();
        let (fw, fh) = appearance.frame_size();
        let frame = CanonicalFrame::new(mesh, base, fw, fh)?;
        if frame.raster.is_empty() {
            return Err(Error::param("canonical frame contains no mesh pixels"));
        }
        let sim = similarity_modes(base);
        let pca = gram_schmidt(shape.modes().to_vec(), &sim, 1e-3);
        let shape_basis: Vec<Vec<f64>> = sim.into_iter().chain(pca).collect();

        let constant = vec![1.0; frame.raster.len()];
        let mut app_vectors: Vec<Vec<f64>> = appearance.modes().iter().map(|m| frame.raster.gather(m)).collect();
        app_vectors.push(constant);
        let app_basis = gram_schmidt(app_vectors, &[], 1e-9);

        let a0 = frame.raster.gather(appearance.a0());
        let mask = frame.raster.mask();
        let (gx, gy) = masked_gradient(appearance.a0(), &mask);
        let sd = steepest_descent(&frame, mesh, &shape_basis, &app_basis, &gx, &gy);
        let h_inv = hessian_inverse(&sd);
        let tris = mesh.triangles();
        let orientation = tris
            .iter()
            .map(|t| cross(base.points[t[0]], base.points[t[1]], base.points[t[2]]).signum())
            .collect();
        Ok(Self {
            incident: mesh.incident_triangles(),
            frame,
            shape_basis,
            app_basis,
            a0,
            sd,
            h_inv,
            orientation,
            mask,
        })
    }

    /// Projected-out steepest-descent images and inverse Hessian for the
    /// template `a0 + sum_k alpha_k A_k` given over frame pixels.
    pub fn adapted(&self, mesh: &Mesh, template: &[f64]) -> (Vec<Vec<f64>>, DMatrix<f64>) {
        let (gx, gy) = masked_gradient(&self.frame.raster.to_image(template), &self.mask);
        let sd = steepest_descent(&self.frame, mesh, &self.shape_basis, &self.app_basis, &gx, &gy);
        let h_inv = hessian_inverse(&sd);
        (sd, h_inv)
    }
}

fn steepest_descent(
    frame: &CanonicalFrame,
    mesh: &Mesh,
    shape_basis: &[Vec<f64>],
    app_basis: &[Vec<f64>],
    gx: &[f64],
    gy: &[f64],
) -> Vec<Vec<f64>> {
    let tris = mesh.triangles();
    let mut sd: Vec<Vec<f64>> = shape_basis
        .iter()
        .map(|b| {
            frame
                .raster
                .pixels()
                .iter()
                .map(|px| {
                    let t = &tris[px.triangle];
                    let (mut jx, mut jy) = (0.0, 0.0);
                    for k in 0..3 {
                        jx += px.bary[k] * b[2 * t[k]];
                        jy += px.bary[k] * b[2 * t[k] + 1];
                    }
                    gx[px.index] * jx + gy[px.index] * jy
                })
                .collect()
        })
        .collect();
    for s in &mut sd {
        for a in app_basis {
            let c = dot(s, a);
            s.iter_mut().zip(a).for_each(|(x, y)| *x -= c * y);
        }
    }
    sd
}

fn hessian_inverse(sd: &[Vec<f64>]) -> DMatrix<f64> {
    let n = sd.len();
    pinv_symmetric(&DMatrix::from_fn(n, n, |i, j| dot(&sd[i], &sd[j])), 1e-10)
}

/// Trains a single model from annotated, enhanced images.
pub fn train_aam(samples: &[TrainingSample], mesh: &Mesh, opts: &AamOptions) -> Result<AamModel> {
    opts.validate()?;
    if samples.len() < 2 {
        return Err(Error::param(format!("model needs at least 2 training samples, got {}", samples.len())));
    }
    let shapes: Vec<ShapeInstance> = samples.iter().map(|s| s.shape.clone()).collect();
    let shape_px = train_shape_model(mesh, &shapes, opts.shape_variance_keep)?;
    let frame = CanonicalFrame::fitted(mesh, shape_px.mean_shape(), opts.frame_scale, opts.frame_margin)?;
    let s2 = opts.frame_scale * opts.frame_scale;
    let shape = ShapeModel::from_parts(
        mesh.clone(),
        frame.base.clone(),
        shape_px.modes().to_vec(),
        shape_px.variances().iter().map(|v| v * s2).collect(),
    )?;
    let pairs: Vec<(&ImageGrid, &ShapeInstance)> = samples.iter().map(|s| (&s.image, &s.shape)).collect();
    let appearance = train_appearance_model(&pairs, &frame, opts.appearance_variance_keep)?;

    let with_ellipse: Vec<(&ShapeInstance, &MomentEllipse)> =
        samples.iter().filter_map(|s| s.ellipse.as_ref().map(|e| (&s.shape, e))).collect();
    let calibration = if with_ellipse.is_empty() {
        SeedCalibration::default()
    } else {
        let n = with_ellipse.len() as f64;
        let (mut ratio, mut ox, mut oy) = (0.0, 0.0, 0.0);
        for (shape, e) in &with_ellipse {
            let root = e.pixel_area.sqrt();
            let c = shape.centroid();
            ratio += shape.mesh_area(mesh) / e.pixel_area / n;
            ox += (c.x - e.cx) / root / n;
            oy += (c.y - e.cy) / root / n;
        }
        SeedCalibration {
            area_ratio: ratio,
            offset_x: ox,
            offset_y: oy,
        }
    };
    AamModel::from_parts(shape, appearance, calibration, samples[0].image.dims())
}

impl AamModel {
    /// Assembles a model from its persistent parts and precomputes the fitting
    /// quantities.
    pub fn from_parts(
        shape: ShapeModel,
        appearance: AppearanceModel,
        calibration: SeedCalibration,
        image_dims: (usize, usize),
    ) -> Result<Self> {
        let pre = Precomputed::build(&shape, &appearance)?;
        Ok(Self {
            shape,
            appearance,
            calibration,
            image_dims,
            pre,
        })
    }

    pub fn shape_model(&self) -> &ShapeModel {
        &self.shape
    }

    pub fn appearance_model(&self) -> &AppearanceModel {
        &self.appearance
    }

    pub fn calibration(&self) -> SeedCalibration {
        self.calibration
    }

    /// Dimensions of the images the model was trained on.
    pub fn image_dims(&self) -> (usize, usize) {
        self.image_dims
    }

    pub fn mesh(&self) -> &Mesh {
        self.shape.mesh()
    }

    pub fn frame(&self) -> &CanonicalFrame {
        &self.pre.frame
    }

    pub fn frame_size(&self) -> (usize, usize) {
        self.appearance.frame_size()
    }

    /// Number of shape parameters (4 similarity + retained PCA modes).
    pub fn shape_dim(&self) -> usize {
        self.pre.shape_basis.len()
    }

    /// Number of appearance parameters (retained PCA modes + constant).
    pub fn appearance_dim(&self) -> usize {
        self.pre.app_basis.len()
    }

    /// Orthonormal shape basis used by the fitter.
    pub fn shape_basis(&self) -> &[Vec<f64>] {
        &self.pre.shape_basis
    }

    /// Orthonormal appearance basis over frame pixels used by the fitter.
    pub fn appearance_basis(&self) -> &[Vec<f64>] {
        &self.pre.app_basis
    }

    /// Mean appearance over frame pixels.
    pub fn mean_appearance(&self) -> &[f64] {
        &self.pre.a0
    }

    pub(crate) fn pre(&self) -> &Precomputed {
        &self.pre
    }

    pub fn check_shape_params(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.shape_dim() {
            return Err(Error::param(format!(
                "expected {} shape parameters, got {}",
                self.shape_dim(),
                p.len()
            )));
        }
        Ok(())
    }

    pub fn check_appearance_params(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.appearance_dim() {
            return Err(Error::param(format!(
                "expected {} appearance parameters, got {}",
                self.appearance_dim(),
                a.len()
            )));
        }
        Ok(())
    }

    /// Vertex positions `s0 + B p`.
    pub fn shape_instance(&self, p: &[f64]) -> ShapeInstance {
        let mut v = self.shape.mean_shape().to_flat();
        for (c, b) in p.iter().zip(&self.pre.shape_basis) {
            v.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
        }
        ShapeInstance::from_flat(&v)
    }

    /// Least-squares parameters `B^T (s - s0)` of a vertex configuration.
    pub fn shape_params(&self, shape: &ShapeInstance) -> Result<Vec<f64>> {
        shape.check_for(self.mesh())?;
        let d: Vec<f64> = shape
            .to_flat()
            .iter()
            .zip(self.shape.mean_shape().to_flat())
            .map(|(a, b)| a - b)
            .collect();
        Ok(self.pre.shape_basis.iter().map(|b| dot(b, &d)).collect())
    }

    /// Appearance `a0 + sum alpha_i A_i` over frame pixels.
    pub fn appearance_values(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        self.check_appearance_params(alpha)?;
        let mut v = self.pre.a0.clone();
        for (c, b) in alpha.iter().zip(&self.pre.app_basis) {
            v.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
        }
        Ok(v)
    }

    /// Errors if any triangle of `shape` is degenerate or folded relative to the
    /// canonical frame.
    pub(crate) fn check_nondegenerate(&self, shape: &ShapeInstance) -> Result<()> {
        for (i, t) in self.mesh().triangles().iter().enumerate() {
            let a = 0.5 * cross(shape.points[t[0]], shape.points[t[1]], shape.points[t[2]]);
            if !(a * self.pre.orientation[i] >= MIN_TRIANGLE_AREA) {
                return Err(Error::WarpDegenerate { triangle: i });
            }
        }
        Ok(())
    }

    /// Image positions `W(x; p)` of every frame pixel.
    pub fn warped_positions(&self, p: &[f64]) -> Result<Vec<Point>> {
        self.check_shape_params(p)?;
        let shape = self.shape_instance(p);
        Ok(self.pre.frame.raster.mapped_positions(self.mesh(), &shape))
    }

    /// `I(W(x; p))` over frame pixels.
    pub fn sample_image(&self, img: &ImageGrid, p: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .warped_positions(p)?
            .into_iter()
            .map(|q| img.sample_bilinear(q.x, q.y))
            .collect())
    }

    /// Mean-squared model error `sum_x [A0 + sum alpha_i A_i - I(W(x;p))]^2 / N`.
    pub fn model_error(&self, img: &ImageGrid, p: &[f64], alpha: &[f64]) -> Result<f64> {
        let a = self.appearance_values(alpha)?;
        let s = self.sample_image(img, p)?;
        Ok(a.iter().zip(&s).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
    }

    /// Renders the model instance `(p, alpha)` into an image of the training
    /// dimensions.
    pub fn synthesize(&self, p: &[f64], alpha: &[f64]) -> Result<ImageGrid> {
        let values = self.appearance_values(alpha)?;
        self.render_canonical(p, &values, self.image_dims)
    }

    /// Places arbitrary frame-pixel values at shape `p` in an image of size
    /// `dims`. The forward rendering is followed by the minimum-norm correction
    /// that makes bilinear resampling at `W(x; p)` reproduce `values`
    /// exactly, which is possible whenever the warp magnifies the frame.
    pub fn render_canonical(&self, p: &[f64], values: &[f64], dims: (usize, usize)) -> Result<ImageGrid> {
        self.check_shape_params(p)?;
        if values.len() != self.pre.frame.raster.len() {
            return Err(Error::param("value count does not match the frame"));
        }
        let (w, h) = dims;
        if w < 2 || h < 2 {
            return Err(Error::param("output image must be at least 2x2"));
        }
        let target = self.shape_instance(p);
        self.check_nondegenerate(&target)?;
        let mesh = self.mesh();
        let base = self.shape.mean_shape();
        let canonical = self.pre.frame.raster.to_image(values);

        // forward pass: every image pixel inside the target mesh looks up its
        // canonical location
        let image_raster = crate::geometry::FrameRaster::new(mesh, &target, w, h)?;
        let mut out = ImageGrid::zeros(w, h);
        let tris = mesh.triangles();
        for px in image_raster.pixels() {
            let t = &tris[px.triangle];
            let (mut x, mut y) = (0.0, 0.0);
            for k in 0..3 {
                x += px.bary[k] * base.points[t[k]].x;
                y += px.bary[k] * base.points[t[k]].y;
            }
            out.data_mut()[px.index] = canonical.sample_bilinear(x, y);
        }

        // consistency correction: min |I - I0| subject to S I = values
        let stencils: Vec<[(usize, f64); 4]> = self
            .pre
            .frame
            .raster
            .mapped_positions(mesh, &target)
            .into_iter()
            .map(|q| out.bilinear_stencil(q.x, q.y))
            .collect();
        let apply_s = |img: &[f64]| -> Vec<f64> {
            stencils.iter().map(|st| st.iter().map(|&(i, wt)| wt * img[i]).sum()).collect()
        };
        let apply_st = |lam: &[f64]| -> Vec<f64> {
            let mut o = vec![0.0; w * h];
            for (st, l) in stencils.iter().zip(lam) {
                for &(i, wt) in st {
                    o[i] += wt * l;
                }
            }
            o
        };
        let r0: Vec<f64> = values.iter().zip(apply_s(out.data())).map(|(a, b)| a - b).collect();
        let lambda = conjugate_gradient(|v| apply_s(&apply_st(v)), &r0, 1e-15, 4 * values.len() + 100);
        let corr = apply_st(&lambda);
        out.data_mut().iter_mut().zip(corr).for_each(|(o, c)| *o += c);
        Ok(out)
    }

    /// Shape parameters for a fit seed.
    pub fn seed_params(&self, seed: &FitSeed) -> Result<Vec<f64>> {
        match seed {
            FitSeed::Params(p) => {
                self.check_shape_params(p)?;
                Ok(p.clone())
            }
            FitSeed::Shape(s) => self.shape_params(s),
            FitSeed::Ellipse(e) => self.shape_params(&self.seed_shape_from_ellipse(e)?),
        }
    }

    /// Mean shape scaled and translated onto a segmentation ellipse.
    pub fn seed_shape_from_ellipse(&self, e: &MomentEllipse) -> Result<ShapeInstance> {
        if !(e.pixel_area > 0.0) {
            return Err(Error::Precondition("seed ellipse has no area".into()));
        }
        let base = self.shape.mean_shape();
        let area = base.mesh_area(self.mesh());
        let cal = self.calibration;
        let k = (cal.area_ratio * e.pixel_area / area).sqrt();
        let root = e.pixel_area.sqrt();
        let (tx, ty) = (e.cx + cal.offset_x * root, e.cy + cal.offset_y * root);
        let c = base.centroid();
        Ok(ShapeInstance::from_flat(
            &base
                .points
                .iter()
                .flat_map(|p| [(p.x - c.x) * k + tx, (p.y - c.y) * k + ty])
                .collect::<Vec<_>>(),
        ))
    }
}

/// Conjugate gradients for a symmetric positive (semi-)definite operator.
fn conjugate_gradient(op: impl Fn(&[f64]) -> Vec<f64>, b: &[f64], rel_tol: f64, max_iter: usize) -> Vec<f64> {
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let bn = dot(b, b).sqrt();
    if bn == 0.0 {
        return x;
    }
    let mut rr = dot(&r, &r);
    for _ in 0..max_iter {
        if rr.sqrt() <= rel_tol * bn {
            break;
        }
        let ap = op(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let a = rr / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += a * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= a * api);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
    }
    x
}
