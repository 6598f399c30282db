//! Synthetic thermal face phantoms.
//!
//! A subject is a texture on canonical face coordinates `(u, v)` (the default
//! mesh spans roughly `|u| <= 0.8`, `|v| <= 1`): a smooth base temperature with
//! shared warm and cool regions, plus a subject-unique network of bright
//! ridges. A yaw angle `t` maps the face to the image through
//!
//! ```text
//! x = cx + scale * (c(t) u + d(t) (1 - u^2)),   y = cy + scale * v
//! c(t) = 1 - 0.4 sin t,   d(t) = 0.15 sin t
//! ```
//!
//! and the landmarks are the mesh vertices pushed through the same map.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mesh, Point, ShapeInstance};
use crate::imgcore::ImageGrid;

/// Face support ellipse in canonical units, wider than the mesh outline.
const FACE_SEMI_U: f64 = 1.1;
const FACE_SEMI_V: f64 = 1.25;
const BACKGROUND: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub subjects: usize,
    /// Yaw angles in degrees rendered for every subject.
    pub yaws: Vec<f64>,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Pixels per canonical unit at frontal pose.
    pub scale: f64,
    /// Vessel ridges per subject.
    pub vessels: usize,
    /// Maximum random offset of the face centre, pixels.
    pub jitter: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            subjects: 10,
            yaws: vec![0.0, 22.5, 45.0, 67.5, 90.0],
            noise: 0.01,
            seed: 1,
            width: 128,
            height: 128,
            scale: 40.0,
            vessels: 8,
            jitter: 2.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.yaws.is_empty() {
            return Err(Error::param("synthetic dataset needs at least one subject and one yaw"));
        }
        if self.yaws.iter().any(|y| !(0.0..=90.0).contains(y)) {
            return Err(Error::param("synthetic yaws must lie in [0, 90]"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::param(format!("noise level must be non-negative, got {}", self.noise)));
        }
        if !(self.scale > 0.0) || !(self.jitter >= 0.0) {
            return Err(Error::param("scale must be positive and jitter non-negative"));
        }
        let need_w = 2.0 * (FACE_SEMI_U * self.scale + self.jitter) + 4.0;
        let need_h = 2.0 * (FACE_SEMI_V * self.scale + self.jitter) + 4.0;
        if (self.width as f64) < need_w || (self.height as f64) < need_h {
            return Err(Error::param(format!(
                "image {}x{} too small for face scale {}",
                self.width, self.height, self.scale
            )));
        }
        Ok(())
    }
}

/// One rendered image with its ground truth.
#[derive(Debug, Clone)]
pub struct SynthImage {
    pub subject: usize,
    pub yaw: f64,
    pub image: ImageGrid,
    pub landmarks: ShapeInstance,
}

#[derive(Debug, Clone)]
struct Blob {
    u: f64,
    v: f64,
    sigma: f64,
    amp: f64,
}

impl Blob {
    fn at(&self, u: f64, v: f64) -> f64 {
        let d2 = (u - self.u).powi(2) + (v - self.v).powi(2);
        self.amp * (-d2 / (2.0 * self.sigma * self.sigma)).exp()
    }
}

#[derive(Debug, Clone)]
struct Vessel {
    /// Polyline approximation of a quadratic Bezier curve.
    points: Vec<(f64, f64)>,
    width: f64,
    amp: f64,
}

impl Vessel {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let p0 = (rng.random_range(-0.6..0.6), rng.random_range(-0.8..0.8));
        let ang = rng.random_range(0.0..2.0 * PI);
        let len = rng.random_range(0.5..0.9);
        let p2 = (p0.0 + len * ang.cos(), p0.1 + len * ang.sin());
        let bend = rng.random_range(-0.25..0.25);
        let mid = ((p0.0 + p2.0) / 2.0, (p0.1 + p2.1) / 2.0);
        let p1 = (mid.0 - bend * ang.sin(), mid.1 + bend * ang.cos());
        let points = (0..=32)
            .map(|k| {
                let t = k as f64 / 32.0;
                let a = (1.0 - t) * (1.0 - t);
                let b = 2.0 * t * (1.0 - t);
                let c = t * t;
                (a * p0.0 + b * p1.0 + c * p2.0, a * p0.1 + b * p1.1 + c * p2.1)
            })
            .collect();
        Self {
            points,
            width: rng.random_range(0.05..0.07),
            amp: rng.random_range(0.08..0.14),
        }
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        let mut d2 = f64::INFINITY;
        for w in self.points.windows(2) {
            let (ax, ay) = w[0];
            let (bx, by) = w[1];
            let (dx, dy) = (bx - ax, by - ay);
            let t = (((u - ax) * dx + (v - ay) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
            let (px, py) = (ax + t * dx - u, ay + t * dy - v);
            d2 = d2.min(px * px + py * py);
        }
        self.amp * (-d2 / (2.0 * self.width * self.width)).exp()
    }
}

#[derive(Debug, Clone)]
struct Subject {
    level: f64,
    blobs: Vec<Blob>,
    vessels: Vec<Vessel>,
}

/// Warm eye regions, cool nose and mouth shared by every subject.
fn anatomy() -> [Blob; 4] {
    [
        Blob { u: -0.3, v: -0.2, sigma: 0.12, amp: 0.05 },
        Blob { u: 0.3, v: -0.2, sigma: 0.12, amp: 0.05 },
        Blob { u: 0.0, v: 0.15, sigma: 0.14, amp: -0.05 },
        Blob { u: 0.0, v: 0.55, sigma: 0.15, amp: -0.03 },
    ]
}

impl Subject {
    fn random(rng: &mut ChaCha8Rng, vessels: usize) -> Self {
        let blobs = (0..4)
            .map(|_| Blob {
                u: rng.random_range(-0.7..0.7),
                v: rng.random_range(-0.9..0.9),
                sigma: rng.random_range(0.25..0.4),
                amp: rng.random_range(-0.04..0.04),
            })
            .collect();
        Self {
            level: rng.random_range(0.45..0.6),
            blobs,
            vessels: (0..vessels).map(|_| Vessel::random(rng)).collect(),
        }
    }

    /// Temperature at canonical coordinates, or `None` off the face.
    fn temperature(&self, u: f64, v: f64) -> Option<f64> {
        let r = ((u / FACE_SEMI_U).powi(2) + (v / FACE_SEMI_V).powi(2)).sqrt();
        if r > 1.0 {
            return None;
        }
        let smooth: f64 = self.blobs.iter().chain(anatomy().iter()).map(|b| b.at(u, v)).sum();
        let ridges = self.vessels.iter().map(|c| c.at(u, v)).fold(0.0, f64::max);
        Some(self.level + smooth + ridges)
    }
}

/// Horizontal yaw map and its inverse on canonical coordinates.
#[derive(Debug, Clone, Copy)]
struct YawMap {
    c: f64,
    d: f64,
    scale: f64,
    cx: f64,
    cy: f64,
}

impl YawMap {
    fn new(yaw_deg: f64, scale: f64, cx: f64, cy: f64) -> Self {
        let s = yaw_deg.to_radians().sin();
        Self {
            c: 1.0 - 0.4 * s,
            d: 0.15 * s,
            scale,
            cx,
            cy,
        }
    }

    fn forward(&self, u: f64, v: f64) -> Point {
        Point::new(
            self.cx + self.scale * (self.c * u + self.d * (1.0 - u * u)),
            self.cy + self.scale * v,
        )
    }

    /// Branch with `u < c / (2 d)`, where the map is increasing.
    fn inverse(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let xs = (x - self.cx) / self.scale;
        let v = (y - self.cy) / self.scale;
        if self.d == 0.0 {
            return Some((xs / self.c, v));
        }
        let disc = self.c * self.c - 4.0 * self.d * (xs - self.d);
        if disc < 0.0 {
            return None;
        }
        Some(((self.c - disc.sqrt()) / (2.0 * self.d), v))
    }
}

fn stream(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag.wrapping_mul(1 << 40) ^ (a << 20) ^ b);
    rng
}

/// Renders every subject at every yaw. Identical specs give identical output.
pub fn generate_synthetic_dataset(spec: &SynthSpec) -> Result<Vec<SynthImage>> {
    spec.validate()?;
    let mesh = Mesh::default_face();
    let mut out = Vec::with_capacity(spec.subjects * spec.yaws.len());
    for s in 0..spec.subjects {
        let subject = Subject::random(&mut stream(spec.seed, 1, s as u64, 0), spec.vessels);
        for (k, &yaw) in spec.yaws.iter().enumerate() {
            let mut rng = stream(spec.seed, 2, s as u64, k as u64);
            let cx = spec.width as f64 / 2.0 + rng.random_range(-1.0..=1.0) * spec.jitter;
            let cy = spec.height as f64 / 2.0 + rng.random_range(-1.0..=1.0) * spec.jitter;
            let map = YawMap::new(yaw, spec.scale, cx, cy);
            let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::param(e.to_string()))?;
            let image = ImageGrid::from_fn(spec.width, spec.height, |x, y| {
                let t = map
                    .inverse(x as f64, y as f64)
                    .and_then(|(u, v)| subject.temperature(u, v))
                    .unwrap_or(BACKGROUND);
                if spec.noise > 0.0 {
                    t + noise.sample(&mut rng)
                } else {
                    t
                }
            });
            let landmarks = ShapeInstance::new(
                mesh.vertices()
                    .iter()
                    .map(|p| map.forward(p.x / 100.0, p.y / 100.0))
                    .collect(),
            )?;
            out.push(SynthImage {
                subject: s,
                yaw,
                image,
                landmarks,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            subjects: 2,
            yaws: vec![0.0, 90.0],
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic_dataset(&small()).unwrap();
        let b = generate_synthetic_dataset(&small()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.landmarks, y.landmarks);
        }
    }

    #[test]
    fn noiseless_renders_repeat() {
        let spec = SynthSpec {
            noise: 0.0,
            jitter: 0.0,
            yaws: vec![45.0, 45.0],
            ..small()
        };
        let d = generate_synthetic_dataset(&spec).unwrap();
        assert_eq!(d[0].image, d[1].image);
        assert_ne!(d[0].image, d[2].image);
    }

    #[test]
    fn yaw_map_inverts() {
        for yaw in [0.0, 30.0, 90.0] {
            let m = YawMap::new(yaw, 40.0, 64.0, 60.0);
            for &(u, v) in &[(-1.1, 0.3), (0.0, -1.0), (1.1, 1.2), (0.4, 0.0)] {
                let p = m.forward(u, v);
                let (u2, v2) = m.inverse(p.x, p.y).unwrap();
                assert!((u - u2).abs() < 1e-12 && (v - v2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn landmarks_lie_on_the_face() {
        let d = generate_synthetic_dataset(&small()).unwrap();
        let mesh = Mesh::default_face();
        for s in &d {
            s.landmarks.check_for(&mesh).unwrap();
            for p in &s.landmarks.points {
                assert!(s.image.sample_bilinear(p.x, p.y) > 0.2);
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate_synthetic_dataset(&SynthSpec { subjects: 0, ..small() }).is_err());
        assert!(generate_synthetic_dataset(&SynthSpec { yaws: vec![100.0], ..small() }).is_err());
        assert!(generate_synthetic_dataset(&SynthSpec { width: 50, ..small() }).is_err());
    }
}
