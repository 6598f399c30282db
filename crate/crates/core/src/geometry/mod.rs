//! Triangular meshes, shape instances and the piecewise affine warp.

mod mesh;
mod warp;

pub use mesh::{Mesh, Point, ShapeInstance, MIN_TRIANGLE_AREA};
pub(crate) use mesh::cross;
pub use warp::{
    barycentric, build_warp, point_location, warp_image, Affine2, FramePixel, FrameRaster, PiecewiseAffineWarp,
    BARY_EPS,
};
