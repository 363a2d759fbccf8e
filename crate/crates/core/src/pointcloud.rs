//! Per-frame point clouds and the preprocessing front end: voxel-grid
//! downsampling followed by a cylindrical region-of-interest filter.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

/// One sensor frame. Points are sensor-relative, in meters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub frame_id: u64,
    /// Seconds; strictly increasing across the frames of a run.
    pub timestamp: f64,
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(frame_id: u64, timestamp: f64, points: Vec<Point3>) -> Self {
        Self {
            frame_id,
            timestamp,
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Fails on the first point with a NaN or infinite coordinate.
    pub fn validate(&self) -> Result<()> {
        match self
            .points
            .iter()
            .position(|p| !p.coords.iter().all(|c| c.is_finite()))
        {
            Some(index) => Err(Error::NonFinitePoint {
                frame_id: self.frame_id,
                index,
            }),
            None => Ok(()),
        }
    }

    fn with_points(&self, points: Vec<Point3>) -> Self {
        Self {
            frame_id: self.frame_id,
            timestamp: self.timestamp,
            points,
        }
    }
}

/// Parameters for the detection front end (downsampling, ROI, clustering and
/// candidate validation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Voxel side length in meters.
    pub voxel_size: f64,
    /// Horizontal range limit in meters.
    pub d_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    /// DBSCAN neighborhood radius in meters.
    pub dbscan_eps: f64,
    /// DBSCAN core-point threshold, counting the point itself.
    pub dbscan_min_pts: usize,
    /// Largest cluster accepted as a target candidate.
    pub cluster_max_pts: usize,
    /// Largest accepted standard deviation along any principal axis (m).
    pub sigma_max: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.05,
            d_max: 35.0,
            z_min: -5.0,
            z_max: 50.0,
            dbscan_eps: 0.5,
            dbscan_min_pts: 3,
            cluster_max_pts: 50,
            sigma_max: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let positive = [
            ("voxel_size", self.voxel_size),
            ("d_max", self.d_max),
            ("dbscan_eps", self.dbscan_eps),
            ("sigma_max", self.sigma_max),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                problems.push(format!("{name} must be positive and finite, got {value}"));
            }
        }
        if !(self.z_min < self.z_max) {
            problems.push(format!(
                "z_min ({}) must be below z_max ({})",
                self.z_min, self.z_max
            ));
        }
        if self.dbscan_min_pts == 0 {
            problems.push("dbscan_min_pts must be at least 1".into());
        }
        if self.cluster_max_pts == 0 {
            problems.push("cluster_max_pts must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Replaces every occupied voxel of an origin-anchored cubic grid by the
/// centroid of its members. Output is sorted by voxel index.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::config(format!(
            "voxel size must be positive, got {voxel_size}"
        )));
    }
    cloud.validate()?;

    let mut voxels: BTreeMap<[i64; 3], ([f64; 3], usize)> = BTreeMap::new();
    for p in &cloud.points {
        let key = [
            (p.x / voxel_size).floor() as i64,
            (p.y / voxel_size).floor() as i64,
            (p.z / voxel_size).floor() as i64,
        ];
        let (sum, count) = voxels.entry(key).or_insert(([0.0; 3], 0));
        sum[0] += p.x;
        sum[1] += p.y;
        sum[2] += p.z;
        *count += 1;
    }

    let points = voxels
        .into_values()
        .map(|(sum, count)| {
            let n = count as f64;
            Point3::new(sum[0] / n, sum[1] / n, sum[2] / n)
        })
        .collect();
    Ok(cloud.with_points(points))
}

/// True when `p` lies strictly inside the flight envelope.
pub fn in_roi(p: &Point3, cfg: &PipelineConfig) -> bool {
    p.x.hypot(p.y) < cfg.d_max && cfg.z_min < p.z && p.z < cfg.z_max
}

/// Keeps the points strictly inside the cylindrical envelope, in input order.
pub fn roi_filter(cloud: &PointCloud, cfg: &PipelineConfig) -> PointCloud {
    cloud.with_points(
        cloud
            .points
            .iter()
            .filter(|p| in_roi(p, cfg))
            .copied()
            .collect(),
    )
}
