//! Image container, Gaussian scale-space derivatives, 2x2 eigen-analysis and
//! raster I/O shared by every other module.

mod eigen;
mod gaussian;
mod grid;
pub mod io;

pub use eigen::{eigen2x2_ordered, EigenPair};
pub use gaussian::{
    gaussian_derivative, gaussian_derivative_gamma, gaussian_smooth, hessian_at_scale,
    hessian_at_scale_gamma, HessianField, DEFAULT_GAMMA,
};
pub use grid::ImageGrid;
pub use io::{read_image, write_image};
