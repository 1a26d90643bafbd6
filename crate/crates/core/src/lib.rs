//! Verifiable navigation-environment generation, embodied evaluation and
//! curriculum co-evolution.
//!
//! The geometry and metric kernels are generic over [`Scalar`]; the aliases below
//! fix them to `f64`, which is what the scene store, planner and simulator use.

pub mod agents;
pub mod builder;
pub mod coevolve;
pub mod env;
pub mod geom;
pub mod metrics;
pub mod nav;
pub mod raster;
pub mod scene;
pub mod seed;
pub mod server;
pub mod skills;
pub mod verify;

pub use geom::Scalar;

pub type Vec3 = geom::Vec3<f64>;
pub type Vec3f = geom::Vec3<f32>;
pub type Rotation = geom::Rotation<f64>;
pub type Transform = geom::Transform<f64>;
pub type Aabb = geom::Aabb<f64>;
pub type Aabbf = geom::Aabb<f32>;
pub type TrajectoryRecord = metrics::TrajectoryRecord<f64>;
pub type MetricReport = metrics::MetricReport<f64>;
