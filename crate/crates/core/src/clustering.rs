//! Target extraction: density-based clustering of the preprocessed cloud and
//! geometric validation of the resulting clusters.

use std::collections::HashMap;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::linalg::max_eigenvalue;
use crate::pointcloud::{roi_filter, voxel_downsample, PipelineConfig, Point3, PointCloud};

/// A set of points from one cloud with its first two moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Indices into the cloud the cluster was extracted from, ascending.
    pub member_indices: Vec<usize>,
    pub centroid: Point3,
    /// Unbiased sample covariance; `None` for single-point clusters.
    pub covariance: Option<Matrix3<f64>>,
}

impl Cluster {
    pub fn from_members(cloud: &PointCloud, mut member_indices: Vec<usize>) -> Self {
        member_indices.sort_unstable();
        let centroid = centroid(cloud, &member_indices).unwrap_or_else(Point3::origin);
        let covariance = sample_covariance(cloud, &member_indices, &centroid).ok();
        Self {
            member_indices,
            centroid,
            covariance,
        }
    }

    pub fn size(&self) -> usize {
        self.member_indices.len()
    }

    /// Largest covariance eigenvalue, `None` for singletons.
    pub fn max_eigenvalue(&self) -> Option<f64> {
        self.covariance.as_ref().map(max_eigenvalue)
    }
}

/// A validated cluster centroid, ready for association.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMeasurement {
    pub position: Point3,
    pub source_cluster: Cluster,
    pub timestamp: f64,
}

impl CandidateMeasurement {
    /// A bare position measurement not backed by a real cluster, e.g. from a
    /// synthetic sensor.
    pub fn point(position: Point3, timestamp: f64) -> Self {
        Self {
            position,
            source_cluster: Cluster {
                member_indices: vec![0],
                centroid: position,
                covariance: None,
            },
            timestamp,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DbscanResult {
    /// Clusters in creation order (ascending index of their seed point).
    pub clusters: Vec<Cluster>,
    pub noise: Vec<usize>,
}

impl DbscanResult {
    /// Per-point labels: `Some(cluster index)` or `None` for noise.
    pub fn labels(&self, n: usize) -> Vec<Option<usize>> {
        let mut labels = vec![None; n];
        for (c, cluster) in self.clusters.iter().enumerate() {
            for &i in &cluster.member_indices {
                labels[i] = Some(c);
            }
        }
        labels
    }
}

/// Uniform grid with cell side `eps`; every ε-neighbor of a point lies in the
/// 27 cells around it.
struct NeighborGrid<'a> {
    points: &'a [Point3],
    eps: f64,
    eps_sq: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> NeighborGrid<'a> {
    fn new(points: &'a [Point3], eps: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, eps)).or_default().push(i);
        }
        Self {
            points,
            eps,
            eps_sq: eps * eps,
            cells,
        }
    }

    fn key(p: &Point3, eps: f64) -> [i64; 3] {
        [
            (p.x / eps).floor() as i64,
            (p.y / eps).floor() as i64,
            (p.z / eps).floor() as i64,
        ]
    }

    /// Closed ε-neighborhood of point `i`, including `i` itself.
    fn neighbors(&self, i: usize, out: &mut Vec<usize>) {
        out.clear();
        let p = &self.points[i];
        let [kx, ky, kz] = Self::key(p, self.eps);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.cells.get(&[kx + dx, ky + dy, kz + dz]) {
                        out.extend(
                            bucket
                                .iter()
                                .copied()
                                .filter(|&j| (self.points[j] - p).norm_squared() <= self.eps_sq),
                        );
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Label {
    Unvisited,
    Noise,
    Cluster(usize),
}

/// DBSCAN over `cloud`. A point is core when its closed ε-neighborhood holds at
/// least `min_pts` points. Points are scanned in ascending index order, so a
/// border point reachable from several clusters joins the one created first.
pub fn dbscan(cloud: &PointCloud, eps: f64, min_pts: usize) -> Result<DbscanResult> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::config(format!("dbscan eps must be positive, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::config("dbscan min_pts must be at least 1"));
    }
    let n = cloud.len();
    if n == 0 {
        return Ok(DbscanResult::default());
    }

    let grid = NeighborGrid::new(&cloud.points, eps);
    let mut labels = vec![Label::Unvisited; n];
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut region = Vec::new();
    let mut frontier = Vec::new();

    for i in 0..n {
        if labels[i] != Label::Unvisited {
            continue;
        }
        grid.neighbors(i, &mut region);
        if region.len() < min_pts {
            labels[i] = Label::Noise;
            continue;
        }

        let id = members.len();
        let mut cluster = vec![i];
        labels[i] = Label::Cluster(id);
        frontier.clear();
        frontier.extend(region.iter().copied().filter(|&j| j != i));

        while let Some(j) = frontier.pop() {
            match labels[j] {
                Label::Cluster(_) => continue,
                Label::Noise => {
                    // border point: was seen before any cluster reached it
                    labels[j] = Label::Cluster(id);
                    cluster.push(j);
                    continue;
                }
                Label::Unvisited => {
                    labels[j] = Label::Cluster(id);
                    cluster.push(j);
                }
            }
            grid.neighbors(j, &mut region);
            if region.len() >= min_pts {
                frontier.extend(
                    region
                        .iter()
                        .copied()
                        .filter(|&k| !matches!(labels[k], Label::Cluster(_))),
                );
            }
        }
        members.push(cluster);
    }

    let noise = (0..n).filter(|&i| labels[i] == Label::Noise).collect();
    let clusters = members
        .into_iter()
        .map(|m| Cluster::from_members(cloud, m))
        .collect();
    Ok(DbscanResult { clusters, noise })
}

fn centroid(cloud: &PointCloud, members: &[usize]) -> Option<Point3> {
    if members.is_empty() {
        return None;
    }
    let sum = members
        .iter()
        .fold(nalgebra::Vector3::zeros(), |acc, &i| acc + cloud.points[i].coords);
    Some(Point3::from(sum / members.len() as f64))
}

fn sample_covariance(
    cloud: &PointCloud,
    members: &[usize],
    mean: &Point3,
) -> Result<Matrix3<f64>> {
    if members.len() < 2 {
        return Err(Error::SingletonCluster(members.len()));
    }
    let mut cov = Matrix3::zeros();
    for &i in members {
        let d = cloud.points[i] - mean;
        for r in 0..3 {
            for c in 0..=r {
                cov[(r, c)] += d[r] * d[c];
            }
        }
    }
    let denom = (members.len() - 1) as f64;
    for r in 0..3 {
        for c in 0..=r {
            cov[(r, c)] /= denom;
            cov[(c, r)] = cov[(r, c)];
        }
    }
    Ok(cov)
}

/// Centroid and unbiased sample covariance of `members`.
///
/// Fails with [`Error::SingletonCluster`] for fewer than two members.
pub fn cluster_stats(cloud: &PointCloud, members: &[usize]) -> Result<(Point3, Matrix3<f64>)> {
    let mean = centroid(cloud, members).ok_or(Error::SingletonCluster(0))?;
    let cov = sample_covariance(cloud, members, &mean)?;
    Ok((mean, cov))
}

/// The size and extent gate applied to every cluster.
pub fn is_valid_candidate(cluster: &Cluster, cfg: &PipelineConfig) -> bool {
    let size = cluster.size();
    if !(2..=cfg.cluster_max_pts).contains(&size) {
        return false;
    }
    matches!(cluster.max_eigenvalue(), Some(l) if l <= cfg.sigma_max * cfg.sigma_max)
}

/// Keeps clusters passing the size and extent gate, ordered by size and then
/// centroid coordinates.
pub fn validate_candidates(
    clusters: &[Cluster],
    cfg: &PipelineConfig,
    timestamp: f64,
) -> Vec<CandidateMeasurement> {
    let mut out: Vec<CandidateMeasurement> = clusters
        .iter()
        .filter(|c| is_valid_candidate(c, cfg))
        .map(|c| CandidateMeasurement {
            position: c.centroid,
            source_cluster: c.clone(),
            timestamp,
        })
        .collect();
    out.sort_by(|a, b| {
        a.source_cluster
            .size()
            .cmp(&b.source_cluster.size())
            .then_with(|| a.position.x.total_cmp(&b.position.x))
            .then_with(|| a.position.y.total_cmp(&b.position.y))
            .then_with(|| a.position.z.total_cmp(&b.position.z))
    });
    out
}

/// Per-cluster line of the detection debug dump.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub cluster_id: usize,
    pub size: usize,
    pub centroid: Point3,
    pub max_eig: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Detection {
    pub candidates: Vec<CandidateMeasurement>,
    pub clusters: Vec<ClusterSummary>,
    /// Cloud after downsampling and ROI filtering; cluster indices refer to it.
    pub filtered: PointCloud,
}

/// Full detection pass with intermediate results kept for inspection.
pub fn detect_target_detailed(raw: &PointCloud, cfg: &PipelineConfig) -> Result<Detection> {
    cfg.validate()?;
    let down = voxel_downsample(raw, cfg.voxel_size)?;
    let roi = roi_filter(&down, cfg);
    let clustered = dbscan(&roi, cfg.dbscan_eps, cfg.dbscan_min_pts)?;
    let clusters = clustered
        .clusters
        .iter()
        .enumerate()
        .map(|(cluster_id, c)| ClusterSummary {
            cluster_id,
            size: c.size(),
            centroid: c.centroid,
            max_eig: c.max_eigenvalue(),
            accepted: is_valid_candidate(c, cfg),
        })
        .collect();
    let candidates = validate_candidates(&clustered.clusters, cfg, raw.timestamp);
    Ok(Detection {
        candidates,
        clusters,
        filtered: roi,
    })
}

/// Downsample, ROI-filter, cluster and validate one frame, returning every
/// candidate that passes the gate.
pub fn detect_target(raw: &PointCloud, cfg: &PipelineConfig) -> Result<Vec<CandidateMeasurement>> {
    Ok(detect_target_detailed(raw, cfg)?.candidates)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(
            0,
            0.0,
            points.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect(),
        )
    }

    #[test]
    fn far_apart_points_are_noise() {
        let r = dbscan(&cloud(&[[0.0; 3], [10.0, 0.0, 0.0]]), 0.5, 3).unwrap();
        assert!(r.clusters.is_empty());
        assert_eq!(r.noise, vec![0, 1]);
    }

    #[test]
    fn collinear_triple_is_one_cluster() {
        let r = dbscan(
            &cloud(&[[0.0; 3], [0.4, 0.0, 0.0], [0.8, 0.0, 0.0]]),
            0.5,
            3,
        )
        .unwrap();
        assert_eq!(r.clusters.len(), 1);
        assert_eq!(r.clusters[0].member_indices, vec![0, 1, 2]);
        assert!(r.noise.is_empty());
    }

    #[test]
    fn border_point_joins_first_cluster() {
        // core groups around x=0 and x=1, border at 0.5 reachable from both
        let r = dbscan(
            &cloud(&[
                [0.0, 0.0, 0.0],
                [-0.1, 0.0, 0.0],
                [-0.2, 0.0, 0.0],
                [0.05, 0.0, 0.0],
                [0.5, 0.0, 0.0],
                [0.95, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [1.1, 0.0, 0.0],
                [1.2, 0.0, 0.0],
            ]),
            0.46,
            4,
        )
        .unwrap();
        assert_eq!(r.clusters.len(), 2);
        assert!(r.clusters[0].member_indices.contains(&4));
        assert!(!r.clusters[1].member_indices.contains(&4));
    }

    #[test]
    fn empty_cloud_has_no_clusters() {
        let r = dbscan(&cloud(&[]), 0.5, 3).unwrap();
        assert!(r.clusters.is_empty() && r.noise.is_empty());
        assert!(dbscan(&cloud(&[]), 0.0, 3).is_err());
        assert!(dbscan(&cloud(&[]), 0.5, 0).is_err());
    }

    #[test]
    fn stats_identical_points() {
        let c = cloud(&[[1.0, 2.0, 3.0]; 4]);
        let (mu, cov) = cluster_stats(&c, &[0, 1, 2, 3]).unwrap();
        assert_eq!(mu, Point3::new(1.0, 2.0, 3.0));
        assert_eq!(cov, Matrix3::zeros());
    }

    #[test]
    fn stats_two_points() {
        let c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        let (mu, cov) = cluster_stats(&c, &[0, 1]).unwrap();
        assert_eq!(mu, Point3::new(0.5, 0.0, 0.0));
        let mut expected = Matrix3::zeros();
        expected[(0, 0)] = 0.5;
        assert_eq!(cov, expected);
    }

    #[test]
    fn stats_singleton_is_error() {
        let c = cloud(&[[0.0; 3]]);
        assert!(matches!(
            cluster_stats(&c, &[0]),
            Err(Error::SingletonCluster(1))
        ));
    }

    #[test]
    fn stats_match_streaming_oracle() {
        let pts = [
            [0.3, -1.2, 4.0],
            [0.1, -1.0, 4.4],
            [0.45, -0.9, 3.7],
            [0.2, -1.3, 4.1],
            [0.05, -1.15, 3.95],
        ];
        let c = cloud(&pts);
        let (mu, cov) = cluster_stats(&c, &[0, 1, 2, 3, 4]).unwrap();

        // Welford streaming update
        let mut mean = [0.0f64; 3];
        let mut m2 = [[0.0f64; 3]; 3];
        for (k, p) in pts.iter().enumerate() {
            let n = (k + 1) as f64;
            let delta: Vec<f64> = (0..3).map(|i| p[i] - mean[i]).collect();
            for i in 0..3 {
                mean[i] += delta[i] / n;
            }
            for i in 0..3 {
                for j in 0..3 {
                    m2[i][j] += delta[i] * (p[j] - mean[j]);
                }
            }
        }
        for i in 0..3 {
            assert!((mu[i] - mean[i]).abs() < 1e-12);
            for j in 0..3 {
                assert!((cov[(i, j)] - m2[i][j] / 4.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn validation_rules() {
        let cfg = PipelineConfig::default();
        let single = Cluster::from_members(&cloud(&[[1.0, 1.0, 1.0]]), vec![0]);
        assert!(validate_candidates(&[single], &cfg, 0.0).is_empty());

        let compact = cloud(&[[10.0, 0.0, 2.0], [10.05, 0.02, 2.0], [10.0, 0.06, 2.03]]);
        let c = Cluster::from_members(&compact, vec![0, 1, 2]);
        let out = validate_candidates(std::slice::from_ref(&c), &cfg, 1.5);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].position, c.centroid);
        assert_eq!(out[0].timestamp, 1.5);

        // variance along x = 4, exceeds 0.25
        let spread = cloud(&[[0.0; 3], [2.0, 0.0, 0.0], [4.0, 0.0, 0.0]]);
        let c = Cluster::from_members(&spread, vec![0, 1, 2]);
        assert!((c.max_eigenvalue().unwrap() - 4.0).abs() < 1e-12);
        assert!(validate_candidates(&[c], &cfg, 0.0).is_empty());
    }

    #[test]
    fn validation_bounds_are_inclusive() {
        let cfg = PipelineConfig {
            cluster_max_pts: 3,
            sigma_max: 1.0,
            ..Default::default()
        };
        // three collinear points with variance exactly 1 along x
        let c = Cluster::from_members(&cloud(&[[-1.0, 0.0, 0.0], [0.0; 3], [1.0, 0.0, 0.0]]), vec![0, 1, 2]);
        assert_eq!(c.max_eigenvalue(), Some(1.0));
        assert!(is_valid_candidate(&c, &cfg));
    }

    #[test]
    fn candidates_are_ordered() {
        let cfg = PipelineConfig::default();
        let pts = cloud(&[
            [5.0, 0.0, 0.0],
            [5.1, 0.0, 0.0],
            [5.0, 0.1, 0.0],
            [1.0, 0.0, 0.0],
            [1.1, 0.0, 0.0],
            [1.0, 0.1, 0.0],
            [8.0, 0.0, 0.0],
            [8.1, 0.0, 0.0],
        ]);
        let clusters = vec![
            Cluster::from_members(&pts, vec![0, 1, 2]),
            Cluster::from_members(&pts, vec![3, 4, 5]),
            Cluster::from_members(&pts, vec![6, 7]),
        ];
        let out = validate_candidates(&clusters, &cfg, 0.0);
        let xs: Vec<f64> = out.iter().map(|c| c.position.x.round()).collect();
        assert_eq!(xs, vec![8.0, 1.0, 5.0]);
    }

    #[test]
    fn detect_empty_frame() {
        let out = detect_target(&cloud(&[]), &PipelineConfig::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn detect_rejects_wall() {
        let cfg = PipelineConfig::default();
        let mut pts = vec![[12.0, 3.0, 4.0], [12.1, 3.05, 4.0], [12.02, 3.1, 4.08]];
        // 200-point wall segment 20 m x 1 m, spaced to survive downsampling
        for i in 0..100 {
            for j in 0..2 {
                pts.push([20.0, -5.0 + 0.1 * i as f64, 2.0 + 0.1 * j as f64]);
            }
        }
        let out = detect_target(&cloud(&pts), &cfg).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0].position - Point3::new(12.04, 3.05, 4.08 / 3.0 + 8.0 / 3.0)).norm() < 1e-9);
    }
}
