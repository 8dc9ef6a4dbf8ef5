//! JSON dataset files and serde helpers for poses and points.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Dataset, DatasetConfig, GroundTruth};
use crate::error::{Error, Result};
use crate::factor_graph::{Measurement, OdometryFactor, SlamProblem};
use crate::geometry::{Dim, Point, Pose};

pub const FORMAT_VERSION: u32 = 1;

/// Pose as stored on disk: translation plus either a heading angle (2D) or
/// a unit quaternion `[qx, qy, qz, qw]` (3D).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoseRecord {
    pub t: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<[f64; 4]>,
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        let t = p.translation();
        match p.dim() {
            Dim::Two => PoseRecord {
                t: vec![t.x, t.y],
                theta: Some(p.heading()),
                q: None,
            },
            Dim::Three => {
                let q = p.quaternion();
                PoseRecord {
                    t: vec![t.x, t.y, t.z],
                    theta: None,
                    q: Some([q.i, q.j, q.k, q.w]),
                }
            }
        }
    }
}

impl TryFrom<PoseRecord> for Pose {
    type Error = Error;

    fn try_from(r: PoseRecord) -> Result<Pose> {
        match (r.t.len(), r.theta, r.q) {
            (2, Some(theta), None) => Ok(Pose::planar(theta, r.t[0], r.t[1])),
            (3, None, Some(q)) => Pose::from_quaternion_xyzw(q, Vector3::new(r.t[0], r.t[1], r.t[2])),
            (n, _, _) => Err(Error::InvalidArgument(format!(
                "pose record needs t of length 2 with theta or length 3 with q, got length {n}"
            ))),
        }
    }
}

fn point_record(p: &Point) -> Vec<f64> {
    if p.z == 0.0 {
        vec![p.x, p.y]
    } else {
        vec![p.x, p.y, p.z]
    }
}

fn point_from_record(v: &[f64]) -> std::result::Result<Point, String> {
    match v.len() {
        2 => Ok(Vector3::new(v[0], v[1], 0.0)),
        3 => Ok(Vector3::new(v[0], v[1], v[2])),
        n => Err(format!("point must have 2 or 3 coordinates, got {n}")),
    }
}

/// Serializes a single point as `[x, y]` or `[x, y, z]`.
pub mod point {
    use super::*;

    pub fn serialize<S: Serializer>(p: &Point, s: S) -> std::result::Result<S::Ok, S::Error> {
        point_record(p).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Point, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        point_from_record(&v).map_err(serde::de::Error::custom)
    }
}

pub mod point_list {
    use super::*;

    pub fn serialize<S: Serializer>(ps: &[Point], s: S) -> std::result::Result<S::Ok, S::Error> {
        ps.iter().map(point_record).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Point>, D::Error> {
        Vec::<Vec<f64>>::deserialize(d)?
            .iter()
            .map(|v| point_from_record(v).map_err(serde::de::Error::custom))
            .collect()
    }
}

pub mod pose_list {
    use super::*;

    pub fn serialize<S: Serializer>(ps: &[Pose], s: S) -> std::result::Result<S::Ok, S::Error> {
        ps.iter().map(PoseRecord::from).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Pose>, D::Error> {
        Vec::<PoseRecord>::deserialize(d)?
            .into_iter()
            .map(|r| Pose::try_from(r).map_err(serde::de::Error::custom))
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct OdometryRecord {
    from: usize,
    to: usize,
    relative: PoseRecord,
    /// Row-major, tangent ordering `[rotation; translation]`.
    sqrt_information: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GroundTruthRecord {
    #[serde(with = "pose_list")]
    trajectory: Vec<Pose>,
    #[serde(with = "point_list")]
    landmarks: Vec<Point>,
    associations: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct DatasetRecord {
    format_version: u32,
    name: String,
    dim: Dim,
    n_poses: usize,
    sigma: f64,
    odometry: Vec<OdometryRecord>,
    measurements: Vec<Measurement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<GroundTruthRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<DatasetConfig>,
}

impl Dataset {
    pub fn to_json(&self) -> Result<String> {
        let p = &self.problem;
        let record = DatasetRecord {
            format_version: FORMAT_VERSION,
            name: self.name.clone(),
            dim: p.dim,
            n_poses: p.n_poses,
            sigma: p.sigma,
            odometry: p
                .odometry
                .iter()
                .map(|o| OdometryRecord {
                    from: o.from,
                    to: o.to,
                    relative: PoseRecord::from(&o.relative),
                    sqrt_information: o.sqrt_info.transpose().as_slice().to_vec(),
                })
                .collect(),
            measurements: p.measurements.clone(),
            ground_truth: self.ground_truth.as_ref().map(|g| GroundTruthRecord {
                trajectory: g.trajectory.clone(),
                landmarks: g.landmarks.clone(),
                associations: g.associations.clone(),
            }),
            config: self.config.clone(),
        };
        Ok(serde_json::to_string_pretty(&record)?)
    }

    pub fn from_json(text: &str) -> Result<Dataset> {
        let r: DatasetRecord = serde_json::from_str(text)?;
        if r.format_version != FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported dataset format_version {} (expected {FORMAT_VERSION})",
                r.format_version
            )));
        }
        let p = r.dim.dof();
        let mut odometry = Vec::with_capacity(r.odometry.len());
        for o in r.odometry {
            if o.sqrt_information.len() != p * p {
                return Err(Error::DimensionMismatch {
                    expected: p * p,
                    found: o.sqrt_information.len(),
                });
            }
            let relative = Pose::try_from(o.relative)?;
            if relative.dim() != r.dim {
                return Err(Error::InvalidArgument("odometry pose dimension differs from dataset".into()));
            }
            odometry.push(OdometryFactor {
                from: o.from,
                to: o.to,
                relative,
                sqrt_info: DMatrix::from_row_slice(p, p, &o.sqrt_information),
            });
        }
        let problem = SlamProblem {
            dim: r.dim,
            n_poses: r.n_poses,
            odometry,
            measurements: r.measurements,
            sigma: r.sigma,
        };
        let ground_truth = r.ground_truth.map(|g| GroundTruth {
            trajectory: g.trajectory,
            landmarks: g.landmarks,
            associations: g.associations,
        });
        let dataset = Dataset {
            name: r.name,
            problem,
            ground_truth,
            config: r.config,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        Dataset::from_json(&fs::read_to_string(path)?)
    }
}
