//! Dense displacement fields, stationary-velocity integration, cubic B-spline
//! free-form deformations and their regularizers.
//!
//! Displacements are stored in mm. A field `u` maps pixel `x` of the fixed
//! grid to the physical point `x + u(x)` of the moving image.

mod ffd;
mod field;
mod io;

pub use ffd::{FfdTransform, RegularizerWeights, Regularizers};
pub(crate) use ffd::AxisWeights;
pub use field::{
    auto_squarings, integrate_velocity, invert_field, min_jacobian_determinant, warp_image,
    DeformationField, VelocityField,
};
pub use io::{read_ffd, read_field, write_ffd, write_field};
