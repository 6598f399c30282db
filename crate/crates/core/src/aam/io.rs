//! `AAM1` binary model format (little-endian):
//!
//! ```text
//! "AAM1" u32:version
//! u32: vertex count, triangle count, shape modes, appearance modes,
//!      frame width, frame height, image width, image height
//! u32:len  mesh asset text (len bytes)
//! then arrays, each u32:len followed by len f32 values:
//!   mean shape, shape modes, shape variances, a0,
//!   appearance modes, appearance variances, seed calibration
//! ```

use std::path::Path;

use super::appearance::{AppearanceModel, CanonicalFrame};
use super::model::{AamModel, SeedCalibration};
use super::shape::ShapeModel;
use crate::error::{Error, Result};
use crate::geometry::{Mesh, ShapeInstance};
use crate::imgcore::ImageGrid;

const MAGIC: &[u8; 4] = b"AAM1";
pub const AAM_FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_array(out: &mut Vec<u8>, values: impl ExactSizeIterator<Item = f64>) {
    put_u32(out, values.len());
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_aam(model: &AamModel) -> Vec<u8> {
    let shape = model.shape_model();
    let app = model.appearance_model();
    let mesh = model.mesh();
    let (fw, fh) = app.frame_size();
    let (iw, ih) = model.image_dims();
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&AAM_FORMAT_VERSION.to_le_bytes());
    for v in [
        mesh.vertex_count(),
        mesh.triangles().len(),
        shape.mode_count(),
        app.mode_count(),
        fw,
        fh,
        iw,
        ih,
    ] {
        put_u32(&mut out, v);
    }
    let text = mesh.to_text();
    put_u32(&mut out, text.len());
    out.extend_from_slice(text.as_bytes());
    put_array(&mut out, shape.mean_shape().to_flat().into_iter());
    put_array(&mut out, shape.modes().concat().into_iter());
    put_array(&mut out, shape.variances().iter().copied());
    put_array(&mut out, app.a0().data().iter().copied());
    put_array(&mut out, app.modes().iter().flat_map(|m| m.data().iter().copied()).collect::<Vec<_>>().into_iter());
    put_array(&mut out, app.variances().iter().copied());
    let c = model.calibration();
    put_array(&mut out, [c.area_ratio, c.offset_x, c.offset_y].into_iter());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::TruncatedPayload {
            expected: self.pos.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn array(&mut self, expected: usize, what: &str) -> Result<Vec<f64>> {
        let n = self.u32()?;
        if n != expected {
            return Err(Error::MalformedHeader(format!("{what}: expected {expected} values, header says {n}")));
        }
        let b = self.take(n.checked_mul(4).ok_or_else(|| Error::MalformedHeader("array too large".into()))?)?;
        let v: Vec<f64> = b
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::UnsupportedFormat(format!("{what} contains non-finite values")));
        }
        Ok(v)
    }
}

pub fn decode_aam(bytes: &[u8]) -> Result<AamModel> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::UnsupportedFormat("missing AAM1 signature".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()? as u32;
    if version != AAM_FORMAT_VERSION {
        return Err(Error::UnsupportedFormat(format!("AAM1 version {version} is not supported")));
    }
    let mut h = [0usize; 8];
    for v in &mut h {
        *v = r.u32()?;
    }
    let [nv, nt, ns, na, fw, fh, iw, ih] = h;
    let text_len = r.u32()?;
    let text = std::str::from_utf8(r.take(text_len)?)
        .map_err(|_| Error::MalformedHeader("embedded mesh is not text".into()))?;
    let mesh = Mesh::parse(text)?;
    if mesh.vertex_count() != nv || mesh.triangles().len() != nt {
        return Err(Error::MalformedHeader("embedded mesh does not match header counts".into()));
    }
    let npx = fw
        .checked_mul(fh)
        .ok_or_else(|| Error::MalformedHeader("frame dimensions overflow".into()))?;
    let mean = r.array(2 * nv, "mean shape")?;
    let smodes = r.array(ns * 2 * nv, "shape modes")?;
    let svars = r.array(ns, "shape variances")?;
    let a0 = r.array(npx, "mean appearance")?;
    let amodes = r.array(na * npx, "appearance modes")?;
    let avars = r.array(na, "appearance variances")?;
    let cal = r.array(3, "seed calibration")?;

    let bad = |e: Error| Error::UnsupportedFormat(format!("inconsistent model: {e}"));
    let shape = ShapeModel::from_parts(
        mesh.clone(),
        ShapeInstance::from_flat(&mean),
        smodes.chunks(2 * nv).map(<[f64]>::to_vec).collect(),
        svars,
    )
    .map_err(bad)?;
    let frame = CanonicalFrame::new(&mesh, shape.mean_shape(), fw, fh).map_err(bad)?;
    let grid = |v: &[f64]| ImageGrid::new(fw, fh, v.to_vec());
    let appearance = AppearanceModel::from_parts(
        &frame,
        grid(&a0)?,
        amodes.chunks(npx.max(1)).map(grid).collect::<Result<_>>()?,
        avars,
    )
    .map_err(bad)?;
    let calibration = SeedCalibration {
        area_ratio: cal[0],
        offset_x: cal[1],
        offset_y: cal[2],
    };
    AamModel::from_parts(shape, appearance, calibration, (iw, ih)).map_err(bad)
}

pub fn write_aam(model: &AamModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_aam(model)).map_err(|e| Error::io(path, e))
}

pub fn read_aam(path: impl AsRef<Path>) -> Result<AamModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_aam(&bytes)
}
