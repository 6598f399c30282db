//! Separable Gaussian scale-space derivatives and the per-pixel Hessian.

use super::eigen::{eigen2x2_ordered, EigenPair};
use super::ImageGrid;
use crate::error::{Error, Result};

/// Default scale-normalisation exponent: responses of order `n` are multiplied
/// by `scale^(gamma * n / 2)`, i.e. `scale^n` for gamma = 2.
pub const DEFAULT_GAMMA: f64 = 2.0;

/// Second-order derivative responses at one scale.
#[derive(Debug, Clone)]
pub struct HessianField {
    pub scale: f64,
    pub lxx: ImageGrid,
    pub lxy: ImageGrid,
    pub lyy: ImageGrid,
}

impl HessianField {
    pub fn eigen_at(&self, x: usize, y: usize) -> EigenPair {
        eigen2x2_ordered(self.lxx.get(x, y), self.lxy.get(x, y), self.lyy.get(x, y))
    }
}

/// Mirror index into `0..n` (half-sample symmetric: `... c b a | a b c ...`).
#[inline]
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Sampled 1-D derivative-of-Gaussian kernel of the given order, indexed from
/// `-radius..=radius`. Moments are corrected so that the discrete kernel is
/// exact on polynomials of degree `order`: unit mass for order 0, unit first
/// moment for order 1, zero mass and second moment of 2 for order 2.
pub(crate) fn derivative_kernel(scale: f64, order: usize) -> Vec<f64> {
    let radius = (4.0 * scale).ceil() as isize;
    let s2 = scale * scale;
    let g: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * s2)).exp())
        .collect();
    let mass: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / mass).collect();
    let offsets = || (-radius..=radius).map(|i| i as f64);
    match order {
        0 => g,
        1 => {
            // k(j) applied as out(i) = sum_j k(j) f(i - j)
            let k: Vec<f64> = offsets().zip(&g).map(|(j, gv)| -j / s2 * gv).collect();
            let m1: f64 = offsets().zip(&k).map(|(j, kv)| -j * kv).sum();
            k.iter().map(|v| v / m1).collect()
        }
        2 => {
            let k: Vec<f64> = offsets()
                .zip(&g)
                .map(|(j, gv)| (j * j / (s2 * s2) - 1.0 / s2) * gv)
                .collect();
            let mean = k.iter().sum::<f64>() / k.len() as f64;
            let k: Vec<f64> = k.iter().map(|v| v - mean).collect();
            let m2: f64 = offsets().zip(&k).map(|(j, kv)| j * j * kv).sum();
            k.iter().map(|v| v * 2.0 / m2).collect()
        }
        _ => unreachable!("derivative order > 2"),
    }
}

fn convolve_rows(img: &ImageGrid, kernel: &[f64]) -> ImageGrid {
    let (w, h) = img.dims();
    let r = (kernel.len() / 2) as isize;
    let src = img.data();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let j = k as isize - r;
                acc += kv * row[reflect_index(x as isize - j, w)];
            }
            out[y * w + x] = acc;
        }
    }
    ImageGrid::from_vec_unchecked(w, h, out)
}

fn convolve_cols(img: &ImageGrid, kernel: &[f64]) -> ImageGrid {
    let (w, h) = img.dims();
    let r = (kernel.len() / 2) as isize;
    let src = img.data();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (k, kv) in kernel.iter().enumerate() {
            let j = k as isize - r;
            let sy = reflect_index(y as isize - j, h);
            let srow = &src[sy * w..(sy + 1) * w];
            let orow = &mut out[y * w..(y + 1) * w];
            for (o, s) in orow.iter_mut().zip(srow) {
                *o += kv * s;
            }
        }
    }
    ImageGrid::from_vec_unchecked(w, h, out)
}

/// Gaussian derivative with an explicit normalisation exponent.
pub fn gaussian_derivative_gamma(
    img: &ImageGrid,
    scale: f64,
    order_x: usize,
    order_y: usize,
    gamma: f64,
) -> Result<ImageGrid> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::param(format!("scale must be positive, got {scale}")));
    }
    if order_x + order_y > 2 {
        return Err(Error::param(format!(
            "derivative order ({order_x}, {order_y}) exceeds 2"
        )));
    }
    if img.is_empty() {
        return Err(Error::param("empty image"));
    }
    let kx = derivative_kernel(scale, order_x);
    let ky = derivative_kernel(scale, order_y);
    let mut out = convolve_cols(&convolve_rows(img, &kx), &ky);
    let order = (order_x + order_y) as f64;
    if order > 0.0 {
        let norm = scale.powf(gamma * order / 2.0);
        out.data_mut().iter_mut().for_each(|v| *v *= norm);
    }
    Ok(out)
}

/// Scale-normalised Gaussian derivative (`scale^(order_x + order_y)` factor),
/// mirror-reflected at the borders, kernels truncated at `ceil(4 * scale)`.
pub fn gaussian_derivative(
    img: &ImageGrid,
    scale: f64,
    order_x: usize,
    order_y: usize,
) -> Result<ImageGrid> {
    gaussian_derivative_gamma(img, scale, order_x, order_y, DEFAULT_GAMMA)
}

pub fn gaussian_smooth(img: &ImageGrid, sigma: f64) -> Result<ImageGrid> {
    gaussian_derivative(img, sigma, 0, 0)
}

pub fn hessian_at_scale_gamma(img: &ImageGrid, scale: f64, gamma: f64) -> Result<HessianField> {
    Ok(HessianField {
        scale,
        lxx: gaussian_derivative_gamma(img, scale, 2, 0, gamma)?,
        lxy: gaussian_derivative_gamma(img, scale, 1, 1, gamma)?,
        lyy: gaussian_derivative_gamma(img, scale, 0, 2, gamma)?,
    })
}

pub fn hessian_at_scale(img: &ImageGrid, scale: f64) -> Result<HessianField> {
    hessian_at_scale_gamma(img, scale, DEFAULT_GAMMA)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs(g: &ImageGrid) -> f64 {
        g.data().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Direct 2-D convolution with the continuous derivative-of-Gaussian
    /// formula, no moment correction, used as an independent reference.
    fn brute_force_derivative(img: &ImageGrid, s: f64, ox: usize, oy: usize, x: usize, y: usize) -> f64 {
        let r = (6.0 * s).ceil() as isize;
        let g = |t: f64, order: usize| {
            let base = (-t * t / (2.0 * s * s)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * s);
            match order {
                0 => base,
                1 => -t / (s * s) * base,
                _ => (t * t / s.powi(4) - 1.0 / (s * s)) * base,
            }
        };
        let mut acc = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let sx = reflect_index(x as isize - dx, img.width());
                let sy = reflect_index(y as isize - dy, img.height());
                acc += g(dx as f64, ox) * g(dy as f64, oy) * img.get(sx, sy);
            }
        }
        acc * s.powi((ox + oy) as i32)
    }

    #[test]
    fn reflect_index_mirrors() {
        let idx: Vec<usize> = (-3..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-7, 1), 0);
    }

    #[test]
    fn constant_image() {
        let img = ImageGrid::filled(20, 15, 3.5);
        let d = gaussian_derivative(&img, 2.0, 1, 0).unwrap();
        assert!(max_abs(&d) < 1e-12);
        let s = gaussian_derivative(&img, 2.0, 0, 0).unwrap();
        assert!(s.data().iter().all(|v| (v - 3.5).abs() < 1e-12));
        let h = hessian_at_scale(&img, 3.0).unwrap();
        assert!(max_abs(&h.lxx) < 1e-12 && max_abs(&h.lxy) < 1e-12 && max_abs(&h.lyy) < 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        let img = ImageGrid::filled(4, 4, 1.0);
        assert!(matches!(gaussian_derivative(&img, 0.0, 1, 0), Err(Error::Parameter(_))));
        assert!(matches!(gaussian_derivative(&img, -1.0, 1, 0), Err(Error::Parameter(_))));
        assert!(gaussian_derivative(&img, 1.0, 2, 1).is_err());
        assert!(gaussian_derivative(&ImageGrid::zeros(0, 0), 1.0, 0, 0).is_err());
    }

    #[test]
    fn ridge_second_derivative_matches_reference() {
        // vertical ridge (along y) of std sigma, centred at x = 32
        let sigma = 3.0;
        let s = 2.5;
        let img = ImageGrid::from_fn(64, 48, |x, _| {
            let d = x as f64 - 32.0;
            (-d * d / (2.0 * sigma * sigma)).exp()
        });
        let lxx = gaussian_derivative(&img, s, 2, 0).unwrap();
        let got = lxx.get(32, 24);
        let brute = brute_force_derivative(&img, s, 2, 0, 32, 24);
        // continuous closed form: -s^2 * sigma / (sigma^2 + s^2)^(3/2)
        let closed = -s * s * sigma / (sigma * sigma + s * s).powf(1.5);
        // the raw truncated kernel loses ~0.3% of its second moment in the tails
        assert!((got - brute).abs() < 1e-2 * brute.abs(), "{got} vs {brute}");
        assert!((got - closed).abs() < 5e-3 * closed.abs(), "{got} vs {closed}");
    }

    #[test]
    fn quadratic_image_hessian() {
        let s = 2.0;
        let img = ImageGrid::from_fn(40, 40, |x, _| {
            let xf = x as f64 - 20.0;
            xf * xf
        });
        let h = hessian_at_scale(&img, s).unwrap();
        let r = (4.0 * s).ceil() as usize;
        for y in r..40 - r {
            for x in r..40 - r {
                assert!((h.lxx.get(x, y) - 2.0 * s * s).abs() < 1e-9);
                assert!(h.lyy.get(x, y).abs() < 1e-9);
                assert!(h.lxy.get(x, y).abs() < 1e-9);
                let b = brute_force_derivative(&img, s, 2, 0, x, y);
                assert!((b - 2.0 * s * s).abs() < 1e-2 * 2.0 * s * s);
            }
        }
    }

    #[test]
    fn rotated_ridge_dominant_eigenvector_is_perpendicular() {
        // ridge along the 45 degree diagonal x = y
        let sigma = 2.5;
        let img = ImageGrid::from_fn(60, 60, |x, y| {
            let d = (x as f64 - y as f64) / 2f64.sqrt();
            (-d * d / (2.0 * sigma * sigma)).exp()
        });
        let h = hessian_at_scale(&img, 3.0).unwrap();
        let (a, b, d) = (h.lxx.get(30, 30), h.lxy.get(30, 30), h.lyy.get(30, 30));
        let m = nalgebra::Matrix2::new(a, b, b, d);
        let eig = m.symmetric_eigen();
        let k = if eig.eigenvalues[0].abs() > eig.eigenvalues[1].abs() { 0 } else { 1 };
        let v = eig.eigenvectors.column(k);
        // ridge direction is (1, 1)/sqrt(2): dominant eigenvector must be orthogonal
        let dot = (v[0] + v[1]) / 2f64.sqrt();
        assert!(dot.abs() < 1e-6, "dot = {dot}");
        let pair = h.eigen_at(30, 30);
        assert!(pair.lambda2 < 0.0);
        assert!((pair.lambda2 - eig.eigenvalues[k]).abs() < 1e-12);
    }
}
