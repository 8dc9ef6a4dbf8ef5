//! Batch landmark SLAM with unknown data association and an unknown number
//! of landmarks.
//!
//! [`kslam::outer_solve`] searches over the landmark count `K` with a
//! per-landmark penalty `β`; for each `K` the inner solver alternates
//! k-means clustering of the world-frame measurements with
//! Levenberg-Marquardt refinement of poses and landmarks.

pub mod baselines;
pub mod clustering;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod factor_graph;
pub mod geometry;
pub mod kslam;
mod linalg;

pub use datasets::{Dataset, DatasetConfig, GroundTruth, PoseGraph};
pub use error::{Error, Result};
pub use eval::{ate, EvalReport};
pub use experiment::{run_method, Method, MethodParams, SweepSpec};
pub use factor_graph::{f_slam, LmConfig, Measurement, OdometryFactor, SlamProblem, SolveResult};
pub use geometry::{Dim, Point, Pose, Tangent};
pub use kslam::{outer_solve, KslamConfig, OuterResult};
