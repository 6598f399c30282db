use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// A 2-D point or displacement.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }
}

/// Twice the signed area of triangle (a, b, c).
#[inline]
pub(crate) fn cross(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Triangulated landmark template.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
}

const DEFAULT_MESH: &str = include_str!("../../assets/face_mesh_58.txt");

/// Minimum |area| for a triangle to count as non-degenerate.
pub const MIN_TRIANGLE_AREA: f64 = 1e-9;

impl Mesh {
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::param("mesh has no triangles"));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::param(format!("triangle {t} references a missing vertex")));
            }
            let area = 0.5 * cross(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if area.abs() < MIN_TRIANGLE_AREA {
                return Err(Error::param(format!("triangle {t} is degenerate")));
            }
        }
        if vertices.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::param("mesh vertex is not finite"));
        }
        Ok(Self { vertices, triangles })
    }

    /// The bundled 58-vertex face mesh; peripheral vertices sit inside the
    /// facial outline and most vertices lie on brows, eyes, nose and mouth.
    pub fn default_face() -> Self {
        Self::parse(DEFAULT_MESH).expect("bundled mesh asset is valid")
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// For every vertex, the triangles that use it (ascending).
    pub fn incident_triangles(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                out[v].push(t);
            }
        }
        out
    }

    /// Parses the text asset format: `MESH <nv> <nt>`, then `nv` lines of
    /// `x y`, then `nt` lines of 0-based `i j k`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::MalformedHeader("empty mesh file".into()))?;
        let mut h = header.split_whitespace();
        if h.next() != Some("MESH") {
            return Err(Error::MalformedHeader(format!("expected MESH header, got {header:?}")));
        }
        let nums: Vec<usize> = h
            .map(|s| s.parse().map_err(|_| Error::MalformedHeader(format!("bad mesh header {header:?}"))))
            .collect::<Result<_>>()?;
        let [nv, nt] = nums[..] else {
            return Err(Error::MalformedHeader(format!("bad mesh header {header:?}")));
        };
        let mut vertices = Vec::with_capacity(nv);
        for i in 0..nv {
            let l = lines.next().ok_or(Error::TruncatedPayload { expected: nv + nt, found: i })?;
            let v: Vec<f64> = l.split_whitespace().filter_map(|s| s.parse().ok()).collect();
            if v.len() != 2 {
                return Err(Error::MalformedHeader(format!("bad vertex line {l:?}")));
            }
            vertices.push(Point::new(v[0], v[1]));
        }
        let mut triangles = Vec::with_capacity(nt);
        for i in 0..nt {
            let l = lines.next().ok_or(Error::TruncatedPayload { expected: nv + nt, found: nv + i })?;
            let v: Vec<usize> = l.split_whitespace().filter_map(|s| s.parse().ok()).collect();
            if v.len() != 3 {
                return Err(Error::MalformedHeader(format!("bad triangle line {l:?}")));
            }
            triangles.push([v[0], v[1], v[2]]);
        }
        Self::new(vertices, triangles)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("MESH {} {}\n", self.vertices.len(), self.triangles.len());
        for p in &self.vertices {
            let _ = writeln!(s, "{} {}", p.x, p.y);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        s
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// One point per mesh vertex, in image (or canonical-frame) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeInstance {
    pub points: Vec<Point>,
}

impl ShapeInstance {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::param("shape point is not finite"));
        }
        Ok(Self { points })
    }

    /// Interleaved `[x0, y0, x1, y1, ...]`.
    pub fn from_flat(v: &[f64]) -> Self {
        Self {
            points: v.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point {
        let n = self.points.len().max(1) as f64;
        let (sx, sy) = self.points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
        Point::new(sx / n, sy / n)
    }

    pub fn check_for(&self, mesh: &Mesh) -> Result<()> {
        if self.points.len() != mesh.vertex_count() {
            return Err(Error::param(format!(
                "shape has {} points, mesh has {} vertices",
                self.points.len(),
                mesh.vertex_count()
            )));
        }
        Ok(())
    }

    /// Total area covered by the mesh triangles in this shape.
    pub fn mesh_area(&self, mesh: &Mesh) -> f64 {
        mesh.triangles()
            .iter()
            .map(|t| 0.5 * cross(self.points[t[0]], self.points[t[1]], self.points[t[2]]).abs())
            .sum()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            points: self.points.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect(),
        }
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Point, Point) {
        self.points.iter().fold(
            (Point::new(f64::INFINITY, f64::INFINITY), Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
            |(lo, hi), p| (Point::new(lo.x.min(p.x), lo.y.min(p.y)), Point::new(hi.x.max(p.x), hi.y.max(p.y))),
        )
    }

    /// Reads the landmark format: first line point count, then `x y` lines.
    pub fn parse_landmarks(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let n: usize = lines
            .next()
            .and_then(|l| l.parse().ok())
            .ok_or_else(|| Error::Annotation("landmark file must start with a point count".into()))?;
        let mut points = Vec::with_capacity(n);
        for l in lines.by_ref().take(n) {
            let v: Vec<f64> = l.split_whitespace().filter_map(|s| s.parse().ok()).collect();
            if v.len() != 2 {
                return Err(Error::Annotation(format!("bad landmark line {l:?}")));
            }
            points.push(Point::new(v[0], v[1]));
        }
        if points.len() != n {
            return Err(Error::Annotation(format!("expected {n} landmarks, found {}", points.len())));
        }
        Self::new(points).map_err(|e| Error::Annotation(e.to_string()))
    }

    pub fn to_landmarks(&self) -> String {
        let mut s = format!("{}\n", self.points.len());
        for p in &self.points {
            let _ = writeln!(s, "{} {}", p.x, p.y);
        }
        s
    }
}
