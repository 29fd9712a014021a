//! Kinematic hand envelopes, skeleton-conditioned occupancy fields and a
//! hand-to-hand intersection loss for refining two-hand 3D poses.
//!
//! Geometry is generic over [`Scalar`] (`f32`, `f64` or a [`dual::Dual`]
//! number for exact Jacobians). The aliases at the crate root fix `f64`.

pub mod dual;
pub mod error;
pub mod geom;
pub mod io;
pub mod kinematics;
pub mod loss;
pub mod mesh;
pub mod occnet;
pub mod refine;
pub mod occupancy;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Vec3 = geom::Vec3<f64>;
pub type HandPose = kinematics::HandPose<f64>;
pub type Skeleton = kinematics::Skeleton<f64>;
pub type PointSet = kinematics::PointSet<f64>;
pub type HandMesh = mesh::HandMesh<f64>;
