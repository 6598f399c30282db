use nalgebra::DMatrix;

use super::linalg::{dot, gram_schmidt, norm};
use crate::error::{Error, Result};
use crate::geometry::{Mesh, Point, ShapeInstance};

/// PCA model of landmark configurations after generalized Procrustes alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel {
    mesh: Mesh,
    mean_shape: ShapeInstance,
    modes: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

/// Optimal scale + rotation taking centred `x` onto centred `reference`.
fn similarity_align(x: &[f64], reference: &[f64]) -> Vec<f64> {
    let nn = dot(x, x);
    if nn == 0.0 {
        return x.to_vec();
    }
    let (mut a, mut b) = (0.0, 0.0);
    for (p, r) in x.chunks_exact(2).zip(reference.chunks_exact(2)) {
        a += p[0] * r[0] + p[1] * r[1];
        b += p[0] * r[1] - p[1] * r[0];
    }
    let (a, b) = (a / nn, b / nn);
    x.chunks_exact(2)
        .flat_map(|p| [a * p[0] - b * p[1], b * p[0] + a * p[1]])
        .collect()
}

fn centred(shape: &ShapeInstance) -> (Vec<f64>, Point) {
    let c = shape.centroid();
    let v = shape.points.iter().flat_map(|p| [p.x - c.x, p.y - c.y]).collect();
    (v, c)
}

fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

/// Generalized Procrustes alignment. Returns the aligned shapes at the mean
/// training size, centred on the mean training centroid.
pub(crate) fn procrustes(shapes: &[ShapeInstance]) -> Vec<Vec<f64>> {
    let (xs, cs): (Vec<Vec<f64>>, Vec<Point>) = shapes.iter().map(centred).unzip();
    let n = xs.len() as f64;
    let mean_size = xs.iter().map(|x| norm(x)).sum::<f64>() / n;
    let cx = cs.iter().map(|c| c.x).sum::<f64>() / n;
    let cy = cs.iter().map(|c| c.y).sum::<f64>() / n;

    let first = norm(&xs[0]);
    let mut reference = scaled(&xs[0], 1.0 / first.max(f64::MIN_POSITIVE));
    for _ in 0..100 {
        let mut mean = vec![0.0; reference.len()];
        for x in &xs {
            for (m, v) in mean.iter_mut().zip(similarity_align(x, &reference)) {
                *m += v / n;
            }
        }
        let mean = similarity_align(&mean, &reference);
        let mn = norm(&mean);
        if mn == 0.0 {
            break;
        }
        let next = scaled(&mean, 1.0 / mn);
        let change: f64 = next.iter().zip(&reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        reference = next;
        if change < 1e-13 {
            break;
        }
    }
    xs.iter()
        .map(|x| {
            similarity_align(x, &reference)
                .chunks_exact(2)
                .flat_map(|p| [p[0] * mean_size + cx, p[1] * mean_size + cy])
                .collect()
        })
        .collect()
}

/// Principal directions of the rows of `data` (already centred), largest
/// first, with per-sample variances (divided by the row count). Signs are
/// fixed so each mode's largest-magnitude entry is positive.
pub(crate) fn pca_rows(data: &[Vec<f64>], variance_keep: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = data.len();
    let dim = data.first().map_or(0, Vec::len);
    if n == 0 || dim == 0 {
        return (Vec::new(), Vec::new());
    }
    // Gram matrix route: n is small compared with the vector dimension.
    let gram = DMatrix::from_fn(n, n, |i, j| dot(&data[i], &data[j]));
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if total <= 1e-24 * (dim as f64) {
        return (Vec::new(), Vec::new());
    }
    let mut modes = Vec::new();
    let mut variances = Vec::new();
    let mut acc = 0.0;
    for &k in &order {
        let lambda = eig.eigenvalues[k];
        if lambda <= 1e-12 * total || acc >= variance_keep * total * (1.0 - 1e-12) {
            break;
        }
        let u = eig.eigenvectors.column(k);
        let mut mode = vec![0.0; dim];
        for (i, row) in data.iter().enumerate() {
            for (m, v) in mode.iter_mut().zip(row) {
                *m += u[i] * v;
            }
        }
        modes.push(mode);
        variances.push(lambda / n as f64);
        acc += lambda;
    }
    let mut modes = gram_schmidt(modes, &[], 1e-9);
    modes.truncate(variances.len());
    variances.truncate(modes.len());
    for m in &mut modes {
        let big = m.iter().copied().fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
        if big < 0.0 {
            m.iter_mut().for_each(|v| *v = -*v);
        }
    }
    (modes, variances)
}

pub fn train_shape_model(mesh: &Mesh, shapes: &[ShapeInstance], variance_keep: f64) -> Result<ShapeModel> {
    if shapes.len() < 2 {
        return Err(Error::param(format!("shape model needs at least 2 shapes, got {}", shapes.len())));
    }
    if !(variance_keep > 0.0 && variance_keep <= 1.0) {
        return Err(Error::param(format!("variance_keep must lie in (0, 1], got {variance_keep}")));
    }
    for s in shapes {
        s.check_for(mesh)?;
    }
    let aligned = procrustes(shapes);
    let n = aligned.len() as f64;
    let dim = aligned[0].len();
    let mut mean = vec![0.0; dim];
    for a in &aligned {
        for (m, v) in mean.iter_mut().zip(a) {
            *m += v / n;
        }
    }
    let centred: Vec<Vec<f64>> = aligned
        .iter()
        .map(|a| a.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let (modes, variances) = pca_rows(&centred, variance_keep);
    ShapeModel::from_parts(mesh.clone(), ShapeInstance::from_flat(&mean), modes, variances)
}

impl ShapeModel {
    /// Assembles a model, re-orthonormalizing the modes.
    pub fn from_parts(
        mesh: Mesh,
        mean_shape: ShapeInstance,
        modes: Vec<Vec<f64>>,
        variances: Vec<f64>,
    ) -> Result<Self> {
        mean_shape.check_for(&mesh)?;
        let dim = 2 * mesh.vertex_count();
        if modes.iter().any(|m| m.len() != dim) || variances.len() != modes.len() {
            return Err(Error::param("shape mode dimensions do not match the mesh"));
        }
        let count = modes.len();
        let modes = gram_schmidt(modes, &[], 1e-6);
        if modes.len() != count {
            return Err(Error::param("shape modes are linearly dependent"));
        }
        Ok(Self {
            mesh,
            mean_shape,
            modes,
            variances,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mean_shape(&self) -> &ShapeInstance {
        &self.mean_shape
    }

    /// Orthonormal vertex-displacement fields, interleaved `x, y`.
    pub fn modes(&self) -> &[Vec<f64>] {
        &self.modes
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn reconstruct(&self, coeffs: &[f64]) -> ShapeInstance {
        let mut v = self.mean_shape.to_flat();
        for (c, m) in coeffs.iter().zip(&self.modes) {
            for (x, d) in v.iter_mut().zip(m) {
                *x += c * d;
            }
        }
        ShapeInstance::from_flat(&v)
    }

    /// Similarity-aligns `shape` to the mean and returns its mode coefficients
    /// with the aligned shape.
    pub fn project(&self, shape: &ShapeInstance) -> Result<(Vec<f64>, ShapeInstance)> {
        shape.check_for(&self.mesh)?;
        let (x, _) = centred(shape);
        let (m, c) = centred(&self.mean_shape);
        let aligned: Vec<f64> = similarity_align(&x, &m)
            .chunks_exact(2)
            .flat_map(|p| [p[0] + c.x, p[1] + c.y])
            .collect();
        let mean = self.mean_shape.to_flat();
        let d: Vec<f64> = aligned.iter().zip(&mean).map(|(a, b)| a - b).collect();
        let coeffs = self.modes.iter().map(|mode| dot(mode, &d)).collect();
        Ok((coeffs, ShapeInstance::from_flat(&aligned)))
    }

    /// Same model with the mean shape uniformly scaled about its centroid by
    /// `scale` and then translated by `(dx, dy)`. Modes are direction fields
    /// and stay unchanged.
    pub fn transformed(&self, scale: f64, dx: f64, dy: f64) -> Self {
        let c = self.mean_shape.centroid();
        let pts = self
            .mean_shape
            .points
            .iter()
            .map(|p| Point::new((p.x - c.x) * scale + c.x + dx, (p.y - c.y) * scale + c.y + dy))
            .collect();
        Self {
            mean_shape: ShapeInstance { points: pts },
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> (Mesh, ShapeInstance) {
        let m = Mesh::default_face();
        let s = ShapeInstance::new(
            m.vertices()
                .iter()
                .map(|p| Point::new(p.x * 0.3 + 50.0, p.y * 0.3 + 60.0))
                .collect(),
        )
        .unwrap();
        (m, s)
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn identical_shapes_give_zero_modes() {
        let (m, s) = base();
        let model = train_shape_model(&m, &[s.clone(), s.clone(), s.clone()], 0.95).unwrap();
        assert_eq!(model.mode_count(), 0);
        assert!(max_diff(&model.mean_shape().to_flat(), &s.to_flat()) < 1e-9);
    }

    #[test]
    fn too_few_shapes_or_bad_keep() {
        let (m, s) = base();
        assert!(matches!(train_shape_model(&m, &[s.clone()], 0.95), Err(Error::Parameter(_))));
        assert!(train_shape_model(&m, &[s.clone(), s.clone()], 0.0).is_err());
        assert!(train_shape_model(&m, &[s.clone(), s], 1.5).is_err());
    }

    /// Zero-mean displacement field orthogonal to the similarity directions of `s`.
    fn nonrigid_field(s: &ShapeInstance) -> Vec<f64> {
        let (c, _) = centred(s);
        let perp: Vec<f64> = c.chunks_exact(2).flat_map(|p| [-p[1], p[0]]).collect();
        let tx: Vec<f64> = (0..c.len()).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let ty: Vec<f64> = (0..c.len()).map(|i| if i % 2 == 1 { 1.0 } else { 0.0 }).collect();
        let raw: Vec<f64> = (0..c.len()).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect();
        let basis = gram_schmidt(vec![c, perp, tx, ty], &[], 1e-12);
        gram_schmidt(vec![raw], &basis, 1e-12).remove(0)
    }

    #[test]
    fn two_shapes_one_mode_exact_reconstruction() {
        let (m, s) = base();
        let d = nonrigid_field(&s);
        let v = s.to_flat();
        let a = ShapeInstance::from_flat(&v.iter().zip(&d).map(|(x, y)| x + 2.0 * y).collect::<Vec<_>>());
        let b = ShapeInstance::from_flat(&v.iter().zip(&d).map(|(x, y)| x - 1.0 * y).collect::<Vec<_>>());
        let model = train_shape_model(&m, &[a.clone(), b.clone()], 0.95).unwrap();
        assert_eq!(model.mode_count(), 1);
        let mean = model.mean_shape().to_flat();
        for aligned in procrustes(&[a, b]) {
            let d: Vec<f64> = aligned.iter().zip(&mean).map(|(x, y)| x - y).collect();
            let c = dot(&model.modes()[0], &d);
            let rec = model.reconstruct(&[c]);
            assert!(max_diff(&rec.to_flat(), &aligned) < 1e-9);
        }
    }

    #[test]
    fn symmetric_displacement_gives_normalised_mode() {
        let (m, s) = base();
        let d = nonrigid_field(&s);
        let v = s.to_flat();
        let plus = ShapeInstance::from_flat(&v.iter().zip(&d).map(|(x, y)| x + 1.5 * y).collect::<Vec<_>>());
        let minus = ShapeInstance::from_flat(&v.iter().zip(&d).map(|(x, y)| x - 1.5 * y).collect::<Vec<_>>());
        let model = train_shape_model(&m, &[plus, minus], 1.0).unwrap();
        assert_eq!(model.mode_count(), 1);
        // eigen-decomposition oracle of the 2-sample covariance: direction d/|d|
        let mode = &model.modes()[0];
        let c = dot(mode, &d).abs();
        assert!((c - 1.0).abs() < 1e-9, "{c}");
        // the Procrustes mean is the base shape up to a uniform scale
        let (mc, _) = centred(model.mean_shape());
        let (vc, _) = centred(&s);
        let k = dot(&mc, &vc) / dot(&vc, &vc);
        assert!(mc.iter().zip(&vc).all(|(x, y)| (x - k * y).abs() < 1e-9));
        assert!((model.mean_shape().centroid().dist(s.centroid())) < 1e-9);
    }

    #[test]
    fn modes_orthonormal_and_invariant_to_similarity() {
        let (m, s) = base();
        let v = s.to_flat();
        let mut shapes = Vec::new();
        for k in 0..8 {
            let w: Vec<f64> = v
                .iter()
                .enumerate()
                .map(|(i, x)| x + ((i * (k + 3) * 31) % 17) as f64 * 0.05)
                .collect();
            // random similarity per sample
            let (ang, sc) = (0.05 * k as f64, 1.0 + 0.03 * k as f64);
            let w: Vec<f64> = w
                .chunks_exact(2)
                .flat_map(|p| {
                    let (x, y) = (p[0] - 50.0, p[1] - 60.0);
                    [sc * (ang.cos() * x - ang.sin() * y) + 3.0 * k as f64, sc * (ang.sin() * x + ang.cos() * y)]
                })
                .collect();
            shapes.push(ShapeInstance::from_flat(&w));
        }
        let model = train_shape_model(&m, &shapes, 0.999).unwrap();
        assert!(model.mode_count() >= 1);
        for (i, a) in model.modes().iter().enumerate() {
            for (j, b) in model.modes().iter().enumerate() {
                let g = dot(a, b);
                assert!((g - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
        let total: f64 = model.variances().iter().sum();
        assert!(model.variances().windows(2).all(|w| w[0] >= w[1]));
        assert!(total > 0.0);
    }
}
