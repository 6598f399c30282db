//! Foreground face segmentation: dual-threshold band classification refined by
//! morphological opening then closing with a disc whose area is a fixed
//! fraction of the provisional foreground's moment ellipse.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::ImageGrid;

pub const DEFAULT_ELEMENT_AREA_FRACTION: f64 = 0.06;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationParams {
    pub t_low: f64,
    /// May be `f64::INFINITY` for a one-sided band.
    pub t_high: f64,
    pub struct_elem_area_fraction: f64,
}

impl SegmentationParams {
    pub fn new(t_low: f64, t_high: f64) -> Self {
        Self {
            t_low,
            t_high,
            struct_elem_area_fraction: DEFAULT_ELEMENT_AREA_FRACTION,
        }
    }

    /// Otsu split of the image for `t_low`, unbounded `t_high`.
    pub fn otsu(img: &ImageGrid) -> Self {
        Self::new(otsu_threshold(img), f64::INFINITY)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_low.is_nan() || self.t_high.is_nan() || !(self.t_low < self.t_high) {
            return Err(Error::param(format!(
                "segmentation band requires t_low < t_high (got {} / {})",
                self.t_low, self.t_high
            )));
        }
        let f = self.struct_elem_area_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::param(format!("structuring element area fraction {f} outside (0, 1)")));
        }
        Ok(())
    }
}

/// Configured thresholds; an absent `t_low` is chosen per image by Otsu's
/// method and an absent `t_high` leaves the band unbounded above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub t_low: Option<f64>,
    pub t_high: Option<f64>,
    pub struct_elem_area_fraction: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            t_low: None,
            t_high: None,
            struct_elem_area_fraction: DEFAULT_ELEMENT_AREA_FRACTION,
        }
    }
}

impl SegmentationConfig {
    pub fn params_for(&self, img: &ImageGrid) -> SegmentationParams {
        SegmentationParams {
            t_low: self.t_low.unwrap_or_else(|| otsu_threshold(img)),
            t_high: self.t_high.unwrap_or(f64::INFINITY),
            struct_elem_area_fraction: self.struct_elem_area_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = SegmentationParams {
            t_low: self.t_low.unwrap_or(f64::NEG_INFINITY),
            t_high: self.t_high.unwrap_or(f64::INFINITY),
            struct_elem_area_fraction: self.struct_elem_area_fraction,
        };
        p.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::param(format!(
                "mask length {} does not match {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.len() == other.bits.len() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.bits.iter().map(|&b| if b { 255u8 } else { 0 }));
        out
    }

    /// Any non-zero sample counts as foreground.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let img = crate::imgcore::io::decode_pgm(bytes)?;
        Ok(Self::from_fn(img.width(), img.height(), |x, y| img.get(x, y) > 0.0))
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}

/// Ellipse with the same second central moments as a binary region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEllipse {
    pub cx: f64,
    pub cy: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Orientation of the major axis, radians from the +x axis.
    pub angle: f64,
    /// Foreground pixel count.
    pub pixel_area: f64,
}

impl MomentEllipse {
    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.semi_major * self.semi_minor
    }
}

pub fn moment_ellipse(mask: &BinaryMask) -> Option<MomentEllipse> {
    let n = mask.count();
    if n == 0 {
        return None;
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                sx += x as f64;
                sy += y as f64;
            }
        }
    }
    let nf = n as f64;
    let (cx, cy) = (sx / nf, sy / nf);
    let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                cxx += dx * dx;
                cxy += dx * dy;
                cyy += dy * dy;
            }
        }
    }
    // uniform disc-like pixels carry an extra 1/12 variance per axis
    cxx = cxx / nf + 1.0 / 12.0;
    cyy = cyy / nf + 1.0 / 12.0;
    cxy /= nf;
    let half_trace = 0.5 * (cxx + cyy);
    let disc = (0.5 * (cxx - cyy)).hypot(cxy);
    let l1 = half_trace + disc;
    let l2 = (half_trace - disc).max(0.0);
    // a uniform ellipse with semi-axis a has variance a^2 / 4 along that axis
    Some(MomentEllipse {
        cx,
        cy,
        semi_major: 2.0 * l1.sqrt(),
        semi_minor: 2.0 * l2.sqrt(),
        angle: 0.5 * (2.0 * cxy).atan2(cxx - cyy),
        pixel_area: nf,
    })
}

/// Otsu threshold over a 256-bin histogram. A constant image has no
/// foreground: its threshold lies just above the constant.
pub fn otsu_threshold(img: &ImageGrid) -> f64 {
    const BINS: usize = 256;
    let (lo, hi) = img.min_max();
    if !(hi > lo) {
        return hi.next_up();
    }
    let width = (hi - lo) / BINS as f64;
    let mut hist = [0usize; BINS];
    for &v in img.data() {
        let b = (((v - lo) / width) as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let total = img.data().len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_var) = (0, -1.0);
    for (i, &c) in hist.iter().enumerate().take(BINS - 1) {
        w0 += c as f64;
        sum0 += i as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best = i;
        }
    }
    lo + (best + 1) as f64 * width
}

pub fn threshold_band(img: &ImageGrid, params: &SegmentationParams) -> Result<BinaryMask> {
    params.validate()?;
    Ok(BinaryMask {
        width: img.width(),
        height: img.height(),
        bits: img
            .data()
            .iter()
            .map(|&v| params.t_low <= v && v <= params.t_high)
            .collect(),
    })
}

/// Disc of pixels whose centres lie within `radius` of the element centre.
pub fn circular_structuring_element(radius: f64) -> Result<BinaryMask> {
    if !(radius >= 1.0) || !radius.is_finite() {
        return Err(Error::param(format!("structuring element radius must be >= 1, got {radius}")));
    }
    let r = radius.floor() as isize;
    let side = (2 * r + 1) as usize;
    let r2 = radius * radius;
    Ok(BinaryMask::from_fn(side, side, |x, y| {
        let dx = (x as isize - r) as f64;
        let dy = (y as isize - r) as f64;
        dx * dx + dy * dy <= r2
    }))
}

fn element_offsets(elem: &BinaryMask) -> Vec<(isize, isize)> {
    let cx = (elem.width / 2) as isize;
    let cy = (elem.height / 2) as isize;
    let mut out = Vec::new();
    for y in 0..elem.height {
        for x in 0..elem.width {
            if elem.get(x, y) {
                out.push((x as isize - cx, y as isize - cy));
            }
        }
    }
    out
}

fn check_element(mask: &BinaryMask, elem: &BinaryMask) -> Result<()> {
    if elem.width % 2 == 0 || elem.height % 2 == 0 {
        return Err(Error::param("structuring element must have odd side lengths"));
    }
    if elem.width > mask.width || elem.height > mask.height {
        return Err(Error::param(format!(
            "structuring element {}x{} larger than mask {}x{}",
            elem.width, elem.height, mask.width, mask.height
        )));
    }
    Ok(())
}

/// Working buffer padded so that erosion/dilation inside it agree with the
/// operators on the infinite plane where the mask is extended by zeros.
struct Padded {
    w: usize,
    h: usize,
    pad: usize,
    bits: Vec<bool>,
}

impl Padded {
    fn from_mask(mask: &BinaryMask, pad: usize) -> Self {
        let w = mask.width + 2 * pad;
        let h = mask.height + 2 * pad;
        let mut bits = vec![false; w * h];
        for y in 0..mask.height {
            let row = &mask.bits[y * mask.width..(y + 1) * mask.width];
            bits[(y + pad) * w + pad..(y + pad) * w + pad + mask.width].copy_from_slice(row);
        }
        Self { w, h, pad, bits }
    }

    #[inline]
    fn at(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h && self.bits[y as usize * self.w + x as usize]
    }

    fn erode(&self, offsets: &[(isize, isize)]) -> Self {
        self.apply(|x, y| offsets.iter().all(|&(dx, dy)| self.at(x + dx, y + dy)))
    }

    fn dilate(&self, offsets: &[(isize, isize)]) -> Self {
        self.apply(|x, y| offsets.iter().any(|&(dx, dy)| self.at(x - dx, y - dy)))
    }

    fn apply(&self, f: impl Fn(isize, isize) -> bool) -> Self {
        let mut bits = vec![false; self.w * self.h];
        for y in 0..self.h {
            for x in 0..self.w {
                bits[y * self.w + x] = f(x as isize, y as isize);
            }
        }
        Self {
            w: self.w,
            h: self.h,
            pad: self.pad,
            bits,
        }
    }

    fn crop(&self, width: usize, height: usize) -> BinaryMask {
        BinaryMask::from_fn(width, height, |x, y| self.bits[(y + self.pad) * self.w + x + self.pad])
    }
}

fn pad_for(elem: &BinaryMask) -> usize {
    elem.width.max(elem.height) / 2
}

pub fn erode(mask: &BinaryMask, elem: &BinaryMask) -> Result<BinaryMask> {
    check_element(mask, elem)?;
    let p = Padded::from_mask(mask, pad_for(elem));
    Ok(p.erode(&element_offsets(elem)).crop(mask.width, mask.height))
}

pub fn dilate(mask: &BinaryMask, elem: &BinaryMask) -> Result<BinaryMask> {
    check_element(mask, elem)?;
    let p = Padded::from_mask(mask, pad_for(elem));
    Ok(p.dilate(&element_offsets(elem)).crop(mask.width, mask.height))
}

/// Opening: dilation of the erosion.
pub fn morph_open(mask: &BinaryMask, elem: &BinaryMask) -> Result<BinaryMask> {
    check_element(mask, elem)?;
    let offs = element_offsets(elem);
    let p = Padded::from_mask(mask, pad_for(elem));
    Ok(p.erode(&offs).dilate(&offs).crop(mask.width, mask.height))
}

/// Closing: erosion of the dilation.
pub fn morph_close(mask: &BinaryMask, elem: &BinaryMask) -> Result<BinaryMask> {
    check_element(mask, elem)?;
    let offs = element_offsets(elem);
    let p = Padded::from_mask(mask, pad_for(elem));
    Ok(p.dilate(&offs).erode(&offs).crop(mask.width, mask.height))
}

/// Output of [`segment_face`].
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub mask: BinaryMask,
    /// Input with background pixels set to exactly zero.
    pub image: ImageGrid,
    /// Moment ellipse of the final mask.
    pub ellipse: MomentEllipse,
}

pub fn segment_face(img: &ImageGrid, params: &SegmentationParams) -> Result<Segmentation> {
    let provisional = threshold_band(img, params)?;
    let ellipse = moment_ellipse(&provisional)
        .ok_or_else(|| Error::SegmentationFailed("no pixels inside the threshold band".into()))?;
    let radius = (params.struct_elem_area_fraction * ellipse.area() / std::f64::consts::PI)
        .sqrt()
        .max(1.0);
    let elem = circular_structuring_element(radius)?;
    if elem.width > img.width() || elem.height > img.height() {
        return Err(Error::SegmentationFailed(format!(
            "structuring element radius {radius:.1} does not fit the image"
        )));
    }
    let mask = morph_close(&morph_open(&provisional, &elem)?, &elem)?;
    let ellipse = moment_ellipse(&mask)
        .ok_or_else(|| Error::SegmentationFailed("foreground vanished after morphological filtering".into()))?;
    let image = ImageGrid::from_vec_unchecked(
        img.width(),
        img.height(),
        img.data()
            .iter()
            .zip(&mask.bits)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect(),
    );
    Ok(Segmentation { mask, image, ellipse })
}
