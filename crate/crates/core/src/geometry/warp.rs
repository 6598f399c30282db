use rayon::prelude::*;

use super::mesh::{cross, Mesh, Point, ShapeInstance, MIN_TRIANGLE_AREA};
use crate::error::{Error, Result};
use crate::imgcore::ImageGrid;

/// Barycentric tolerance for point-in-triangle tests.
pub const BARY_EPS: f64 = 1e-9;

/// Row-major 2x3 affine map `[a b c; d e f]`: `(x, y) -> (ax + by + c, dx + ey + f)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2(pub [f64; 6]);

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        let m = &self.0;
        Point::new(m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5])
    }

    /// Map taking `src[k]` to `dst[k]` for k = 0, 1, 2. `None` if `src` is degenerate.
    pub fn from_triangles(src: [Point; 3], dst: [Point; 3]) -> Option<Affine2> {
        let (e1x, e1y) = (src[1].x - src[0].x, src[1].y - src[0].y);
        let (e2x, e2y) = (src[2].x - src[0].x, src[2].y - src[0].y);
        let det = e1x * e2y - e2x * e1y;
        if det.abs() < 2.0 * MIN_TRIANGLE_AREA {
            return None;
        }
        // inverse of [e1 e2]
        let (i00, i01, i10, i11) = (e2y / det, -e2x / det, -e1y / det, e1x / det);
        let (f1x, f1y) = (dst[1].x - dst[0].x, dst[1].y - dst[0].y);
        let (f2x, f2y) = (dst[2].x - dst[0].x, dst[2].y - dst[0].y);
        let a = f1x * i00 + f2x * i10;
        let b = f1x * i01 + f2x * i11;
        let d = f1y * i00 + f2y * i10;
        let e = f1y * i01 + f2y * i11;
        let c = dst[0].x - a * src[0].x - b * src[0].y;
        let f = dst[0].y - d * src[0].x - e * src[0].y;
        Some(Affine2([a, b, c, d, e, f]))
    }
}

/// Barycentric coordinates of `p` in triangle `(a, b, c)`.
#[inline]
pub fn barycentric(p: Point, a: Point, b: Point, c: Point) -> [f64; 3] {
    let area = cross(a, b, c);
    let l1 = cross(p, b, c) / area;
    let l2 = cross(a, p, c) / area;
    [l1, l2, 1.0 - l1 - l2]
}

/// Piecewise affine map from a source shape to a target shape over a mesh.
#[derive(Debug, Clone)]
pub struct PiecewiseAffineWarp {
    mesh: Mesh,
    source: ShapeInstance,
    target: ShapeInstance,
    affines: Vec<Affine2>,
}

fn tri_points(shape: &ShapeInstance, t: &[usize; 3]) -> [Point; 3] {
    [shape.points[t[0]], shape.points[t[1]], shape.points[t[2]]]
}

pub fn build_warp(mesh: &Mesh, source: &ShapeInstance, target: &ShapeInstance) -> Result<PiecewiseAffineWarp> {
    source.check_for(mesh)?;
    target.check_for(mesh)?;
    let mut affines = Vec::with_capacity(mesh.triangles().len());
    for (i, t) in mesh.triangles().iter().enumerate() {
        let dst = tri_points(target, t);
        if (0.5 * cross(dst[0], dst[1], dst[2])).abs() < MIN_TRIANGLE_AREA {
            return Err(Error::WarpDegenerate { triangle: i });
        }
        let a = Affine2::from_triangles(tri_points(source, t), dst).ok_or(Error::WarpDegenerate { triangle: i })?;
        affines.push(a);
    }
    Ok(PiecewiseAffineWarp {
        mesh: mesh.clone(),
        source: source.clone(),
        target: target.clone(),
        affines,
    })
}

impl PiecewiseAffineWarp {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn source(&self) -> &ShapeInstance {
        &self.source
    }

    pub fn target(&self) -> &ShapeInstance {
        &self.target
    }

    pub fn affines(&self) -> &[Affine2] {
        &self.affines
    }

    /// The warp in the opposite direction.
    pub fn inverse(&self) -> Result<PiecewiseAffineWarp> {
        build_warp(&self.mesh, &self.target, &self.source)
    }

    /// Maps a source-frame point; `None` outside the source mesh.
    pub fn map_point(&self, p: Point) -> Option<Point> {
        point_location(self, p).map(|t| self.affines[t].apply(p))
    }
}

/// Index of the lowest-numbered source triangle containing `p`.
pub fn point_location(warp: &PiecewiseAffineWarp, p: Point) -> Option<usize> {
    locate(&warp.mesh, &warp.source, p).map(|(t, _)| t)
}

fn locate(mesh: &Mesh, shape: &ShapeInstance, p: Point) -> Option<(usize, [f64; 3])> {
    mesh.triangles().iter().enumerate().find_map(|(i, t)| {
        let [a, b, c] = tri_points(shape, t);
        let l = barycentric(p, a, b, c);
        l.iter().all(|&v| v >= -BARY_EPS).then_some((i, l))
    })
}

/// One pixel of a rasterized mesh: flat pixel index, triangle and barycentrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePixel {
    pub index: usize,
    pub triangle: usize,
    pub bary: [f64; 3],
}

/// Rasterization of a shape's mesh onto a `width x height` pixel grid, with
/// pixel centres at integer coordinates. Shared edges go to the lowest
/// triangle index.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRaster {
    width: usize,
    height: usize,
    pixels: Vec<FramePixel>,
}

impl FrameRaster {
    pub fn new(mesh: &Mesh, shape: &ShapeInstance, width: usize, height: usize) -> Result<Self> {
        shape.check_for(mesh)?;
        let mut owner: Vec<Option<(usize, [f64; 3])>> = vec![None; width * height];
        for (i, t) in mesh.triangles().iter().enumerate() {
            let [a, b, c] = tri_points(shape, t);
            if cross(a, b, c).abs() < 2.0 * MIN_TRIANGLE_AREA {
                return Err(Error::WarpDegenerate { triangle: i });
            }
            let x0 = a.x.min(b.x).min(c.x).floor().max(0.0) as usize;
            let y0 = a.y.min(b.y).min(c.y).floor().max(0.0) as usize;
            let x1 = (a.x.max(b.x).max(c.x).ceil().max(-1.0) as isize).min(width as isize - 1);
            let y1 = (a.y.max(b.y).max(c.y).ceil().max(-1.0) as isize).min(height as isize - 1);
            for y in y0 as isize..=y1 {
                for x in x0 as isize..=x1 {
                    let idx = y as usize * width + x as usize;
                    if owner[idx].is_some() {
                        continue;
                    }
                    let l = barycentric(Point::new(x as f64, y as f64), a, b, c);
                    if l.iter().all(|&v| v >= -BARY_EPS) {
                        owner[idx] = Some((i, l));
                    }
                }
            }
        }
        let pixels = owner
            .into_iter()
            .enumerate()
            .filter_map(|(index, o)| o.map(|(triangle, bary)| FramePixel { index, triangle, bary }))
            .collect();
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Covered pixels in raster order.
    pub fn pixels(&self) -> &[FramePixel] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.width * self.height];
        for p in &self.pixels {
            m[p.index] = true;
        }
        m
    }

    /// Position of every covered pixel under the mesh deformed to `target`.
    pub fn mapped_positions(&self, mesh: &Mesh, target: &ShapeInstance) -> Vec<Point> {
        let tris = mesh.triangles();
        self.pixels
            .iter()
            .map(|px| {
                let t = &tris[px.triangle];
                let (mut x, mut y) = (0.0, 0.0);
                for k in 0..3 {
                    let q = target.points[t[k]];
                    x += px.bary[k] * q.x;
                    y += px.bary[k] * q.y;
                }
                Point::new(x, y)
            })
            .collect()
    }

    /// Samples `img` at the mapped positions of covered pixels (in raster order).
    pub fn sample(&self, img: &ImageGrid, mesh: &Mesh, target: &ShapeInstance) -> Vec<f64> {
        self.mapped_positions(mesh, target)
            .into_iter()
            .map(|p| img.sample_bilinear(p.x, p.y))
            .collect()
    }

    /// Scatters per-pixel values back onto a zero image.
    pub fn to_image(&self, values: &[f64]) -> ImageGrid {
        let mut data = vec![0.0; self.width * self.height];
        for (p, &v) in self.pixels.iter().zip(values) {
            data[p.index] = v;
        }
        ImageGrid::from_vec_unchecked(self.width, self.height, data)
    }

    /// Gathers the covered pixels of `img` (same dimensions as the raster).
    pub fn gather(&self, img: &ImageGrid) -> Vec<f64> {
        self.pixels.iter().map(|p| img.data()[p.index]).collect()
    }
}

/// Resamples `img` into an `out_size` grid over the warp's source mesh:
/// each covered output pixel `x` takes `img(W(x))`, everything else is 0.
pub fn warp_image(img: &ImageGrid, warp: &PiecewiseAffineWarp, out_size: (usize, usize)) -> Result<ImageGrid> {
    let (w, h) = out_size;
    let raster = FrameRaster::new(&warp.mesh, &warp.source, w, h)?;
    let mut tri_at = vec![usize::MAX; w * h];
    for p in raster.pixels() {
        tri_at[p.index] = p.triangle;
    }
    let mut data = vec![0.0; w * h];
    data.par_chunks_mut(w.max(1)).enumerate().for_each(|(y, row)| {
        for (x, v) in row.iter_mut().enumerate() {
            let t = tri_at[y * w + x];
            if t != usize::MAX {
                let q = warp.affines[t].apply(Point::new(x as f64, y as f64));
                *v = img.sample_bilinear(q.x, q.y);
            }
        }
    });
    Ok(ImageGrid::from_vec_unchecked(w, h, data))
}
