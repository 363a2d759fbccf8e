mod common;

use std::collections::BTreeMap;

use aetrack::clustering::{dbscan, detect_target, detect_target_detailed, is_valid_candidate, validate_candidates, Cluster};
use aetrack::pointcloud::{roi_filter, voxel_downsample, PipelineConfig, Point3, PointCloud};
use proptest::prelude::*;

fn arb_cloud(max_n: usize, extent: f64) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec((-extent..extent, -extent..extent, -extent..extent), 0..max_n)
        .prop_map(|v| PointCloud::new(0, 0.0, v.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect()))
}

fn voxel_key(p: &Point3, v: f64) -> [i64; 3] {
    [(p.x / v).floor() as i64, (p.y / v).floor() as i64, (p.z / v).floor() as i64]
}

proptest! {
    #[test]
    fn downsample_stays_inside_member_boxes(cloud in arb_cloud(300, 3.0), v in 0.05f64..1.0) {
        let out = voxel_downsample(&cloud, v).unwrap();
        let mut boxes: BTreeMap<[i64; 3], (Point3, Point3)> = BTreeMap::new();
        for p in &cloud.points {
            let b = boxes.entry(voxel_key(p, v)).or_insert((*p, *p));
            b.0 = b.0.inf(p);
            b.1 = b.1.sup(p);
        }
        prop_assert!(out.len() <= cloud.len());
        prop_assert_eq!(out.len(), boxes.len());
        let slack = 1e-12;
        for q in &out.points {
            let inside = boxes.values().any(|(lo, hi)| {
                (0..3).all(|i| q[i] >= lo[i] - slack && q[i] <= hi[i] + slack)
            });
            prop_assert!(inside, "{q:?} outside every voxel box");
        }
    }

    #[test]
    fn downsample_twice_stays_close(cloud in arb_cloud(300, 3.0), v in 0.05f64..1.0) {
        let once = voxel_downsample(&cloud, v).unwrap();
        let twice = voxel_downsample(&once, v).unwrap();
        prop_assert!(twice.len() <= once.len());
        let reach = v * 3f64.sqrt() + 1e-12;
        for q in &twice.points {
            prop_assert!(once.points.iter().any(|p| (p - q).norm() <= reach));
        }
    }

    #[test]
    fn roi_is_an_idempotent_subset(cloud in arb_cloud(300, 60.0)) {
        let cfg = PipelineConfig::default();
        let once = roi_filter(&cloud, &cfg);
        prop_assert!(once.points.iter().all(|p| cloud.points.contains(p)));
        prop_assert_eq!(roi_filter(&once, &cfg), once);
    }

    #[test]
    fn front_end_is_deterministic(cloud in arb_cloud(200, 4.0)) {
        let cfg = PipelineConfig::default();
        let down = |c: &PointCloud| voxel_downsample(c, cfg.voxel_size).unwrap();
        prop_assert_eq!(down(&cloud), down(&cloud));
        prop_assert_eq!(detect_target_detailed(&cloud, &cfg).unwrap(), detect_target_detailed(&cloud, &cfg).unwrap());
    }

    #[test]
    fn dbscan_matches_oracle(cloud in arb_cloud(40, 1.5), min_pts in 1usize..6, eps in 0.2f64..0.8) {
        let got = dbscan(&cloud, eps, min_pts).unwrap();
        let (want, want_noise) = common::dbscan_oracle(&cloud.points, eps, min_pts);
        let mut noise = got.noise.clone();
        noise.sort_unstable();
        prop_assert_eq!(common::cluster_sets(&got), want);
        prop_assert_eq!(noise, want_noise);
    }

    #[test]
    fn candidates_respect_size_and_spread(cloud in arb_cloud(120, 1.2), max_pts in 2usize..30, sigma in 0.05f64..0.6) {
        let cfg = PipelineConfig { cluster_max_pts: max_pts, sigma_max: sigma, ..Default::default() };
        let det = detect_target_detailed(&cloud, &cfg).unwrap();
        for c in &det.candidates {
            let k = &c.source_cluster;
            prop_assert!(k.size() >= 2 && k.size() <= max_pts);
            prop_assert!(k.max_eigenvalue().unwrap() <= sigma * sigma);
        }
        let accepted = det.clusters.iter().filter(|c| c.accepted).count();
        prop_assert_eq!(accepted, det.candidates.len());
    }
}

#[test]
fn emitted_clusters_reach_min_points_in_unambiguous_clouds() {
    let mut rng = common::rng(21);
    for _ in 0..300 {
        let cloud = common::random_cloud(&mut rng, 30, 2.0);
        let res = dbscan(&cloud, 0.5, 3).unwrap();
        let labels = res.labels(cloud.len());
        // a border point adjacent to cores of two clusters can leave one short
        let ambiguous = (0..cloud.len()).any(|i| {
            let near: std::collections::BTreeSet<usize> = (0..cloud.len())
                .filter(|&j| (cloud.points[i] - cloud.points[j]).norm() <= 0.5)
                .filter_map(|j| labels[j])
                .collect();
            near.len() > 1
        });
        if ambiguous {
            continue;
        }
        for c in &res.clusters {
            assert!(c.size() >= 3, "cluster {:?}", c.member_indices);
        }
    }
}

#[test]
fn noise_points_have_no_core_neighbour() {
    let mut rng = common::rng(22);
    for _ in 0..300 {
        let cloud = common::random_cloud(&mut rng, 30, 2.0);
        let res = dbscan(&cloud, 0.5, 3).unwrap();
        let n = cloud.len();
        let near = |i: usize, j: usize| (cloud.points[i] - cloud.points[j]).norm() <= 0.5;
        let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= 3).collect();
        for &p in &res.noise {
            assert!(!core[p]);
            assert!((0..n).all(|j| !(near(p, j) && core[j])));
        }
    }
}

#[test]
fn labels_survive_permutation_without_border_ties() {
    let mut rng = common::rng(23);
    let mut checked = 0;
    for _ in 0..300 {
        let cloud = common::random_cloud(&mut rng, 30, 2.5);
        let res = dbscan(&cloud, 0.5, 3).unwrap();
        let n = cloud.len();
        // skip clouds where some border point touches cores of two clusters
        let labels = res.labels(n);
        let core: Vec<bool> = (0..n)
            .map(|i| (0..n).filter(|&j| (cloud.points[i] - cloud.points[j]).norm() <= 0.5).count() >= 3)
            .collect();
        let tie = (0..n).any(|i| {
            let owners: std::collections::BTreeSet<_> = (0..n)
                .filter(|&j| core[j] && (cloud.points[i] - cloud.points[j]).norm() <= 0.5)
                .map(|j| labels[j])
                .collect();
            owners.len() > 1
        });
        if tie {
            continue;
        }
        checked += 1;
        // reverse, then map indices back to the original order
        let reversed = PointCloud::new(0, 0.0, cloud.points.iter().rev().copied().collect());
        let back: std::collections::BTreeSet<Vec<usize>> = dbscan(&reversed, 0.5, 3)
            .unwrap()
            .clusters
            .iter()
            .map(|c| {
                let mut v: Vec<usize> = c.member_indices.iter().map(|&i| n - 1 - i).collect();
                v.sort_unstable();
                v
            })
            .collect();
        assert_eq!(common::cluster_sets(&res), back);
    }
    assert!(checked > 100);
}

#[test]
fn border_point_goes_to_the_first_cluster_in_scan_order() {
    // cores at x=0 and x=2 both reach the border point at x=1 with ε = 1
    let pts: Vec<Point3> = vec![
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(-0.5, 0.0, 0.0),
        Point3::new(0.0, -0.5, 0.0),
        Point3::new(1.0, 0.0, 0.0),
        Point3::new(2.0, 0.0, 0.0),
        Point3::new(2.5, 0.0, 0.0),
        Point3::new(2.0, -0.5, 0.0),
    ];
    let res = dbscan(&PointCloud::new(0, 0.0, pts), 1.0, 4).unwrap();
    assert_eq!(res.clusters.len(), 2);
    assert!(res.clusters[0].member_indices.contains(&3));
    assert!(!res.clusters[1].member_indices.contains(&3));
}

#[test]
fn validation_is_inclusive_at_both_bounds() {
    let cfg = PipelineConfig { cluster_max_pts: 4, sigma_max: 0.5, ..Default::default() };
    let cloud = PointCloud::new(
        0,
        0.0,
        vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.5, 0.0, 0.0),
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.5, 0.0, 0.0),
            Point3::new(0.25, 0.0, 0.0),
        ],
    );
    // two points 0.5 apart: unbiased variance 0.125 along x
    let pair = Cluster::from_members(&cloud, vec![0, 1]);
    assert!(is_valid_candidate(&pair, &cfg));
    let four = Cluster::from_members(&cloud, vec![0, 1, 2, 3]);
    assert!(is_valid_candidate(&four, &cfg));
    let five = Cluster::from_members(&cloud, vec![0, 1, 2, 3, 4]);
    assert!(!is_valid_candidate(&five, &cfg));
    let single = Cluster::from_members(&cloud, vec![4]);
    assert!(!is_valid_candidate(&single, &cfg));
    // λmax of the pair is exactly 0.125
    let tight = PipelineConfig { sigma_max: 0.125f64.sqrt(), ..cfg };
    assert!(is_valid_candidate(&pair, &tight));
    assert_eq!(validate_candidates(&[pair, five], &cfg, 1.5).len(), 1);
}

#[test]
fn sparse_target_is_found_among_clutter() {
    let mut rng = common::rng(24);
    let mut cloud = common::random_cloud(&mut rng, 0, 1.0);
    let target = Point3::new(18.0, 2.0, 4.0);
    for d in [[0.0, 0.0, 0.0], [0.08, 0.0, 0.02], [0.0, 0.1, -0.05]] {
        cloud.points.push(target + nalgebra::Vector3::from(d));
    }
    for i in 0..40 {
        cloud.points.push(Point3::new(i as f64 * 0.8, -10.0, 1.0 + (i % 3) as f64 * 3.0));
    }
    let cands = detect_target(&cloud, &PipelineConfig::default()).unwrap();
    assert_eq!(cands.len(), 1);
    assert!((cands[0].position - target).norm() < 0.1);
}

#[test]
fn shared_border_points_can_leave_a_late_cluster_short() {
    // three earlier clusters each claim one border point of the last core
    let mut pts = Vec::new();
    let dirs = [[1.0, 0.0], [-0.5, 0.866], [-0.5, -0.866]];
    for d in &dirs {
        let a = Point3::new(1.9 * d[0], 1.9 * d[1], 0.0);
        pts.push(a);
        pts.push(a + nalgebra::Vector3::new(0.9 * d[0], 0.9 * d[1], 0.3));
        pts.push(a + nalgebra::Vector3::new(0.9 * d[0], 0.9 * d[1], -0.3));
    }
    for d in &dirs {
        pts.push(Point3::new(0.95 * d[0], 0.95 * d[1], 0.0));
    }
    pts.push(Point3::origin());
    let cloud = PointCloud::new(0, 0.0, pts);
    let res = dbscan(&cloud, 1.0, 4).unwrap();
    let (want, _) = common::dbscan_oracle(&cloud.points, 1.0, 4);
    assert_eq!(common::cluster_sets(&res), want);
    assert_eq!(res.clusters.len(), 4);
    assert_eq!(res.clusters[3].member_indices, vec![12]);
}
