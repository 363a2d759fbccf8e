#![allow(dead_code)]

use std::collections::BTreeSet;

use aetrack::clustering::DbscanResult;
use aetrack::pointcloud::{Point3, PointCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force DBSCAN: core flags from all pairwise distances, clusters as the
/// transitive closure of core-core ε-adjacency (Floyd-Warshall style, O(n³)),
/// border points given to the adjacent component whose smallest core index is
/// lowest. Returns clusters as sorted index sets plus the noise set.
pub fn dbscan_oracle(points: &[Point3], eps: f64, min_pts: usize) -> (BTreeSet<Vec<usize>>, Vec<usize>) {
    let n = points.len();
    let near = |i: usize, j: usize| (points[i] - points[j]).norm() <= eps;
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts)
        .collect();

    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            reach[i][j] = core[i] && core[j] && near(i, j);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }

    // component root = smallest core index connected to it
    let root: Vec<Option<usize>> = (0..n)
        .map(|i| core[i].then(|| (0..n).find(|&j| reach[i][j]).unwrap_or(i)))
        .collect();

    let mut owner: Vec<Option<usize>> = root.clone();
    for i in 0..n {
        if !core[i] {
            owner[i] = (0..n).filter(|&j| core[j] && near(i, j)).filter_map(|j| root[j]).min();
        }
    }

    let mut clusters = std::collections::BTreeMap::<usize, Vec<usize>>::new();
    let mut noise = Vec::new();
    for (i, o) in owner.iter().enumerate() {
        match o {
            Some(r) => clusters.entry(*r).or_default().push(i),
            None => noise.push(i),
        }
    }
    (clusters.into_values().collect(), noise)
}

pub fn cluster_sets(result: &DbscanResult) -> BTreeSet<Vec<usize>> {
    result.clusters.iter().map(|c| c.member_indices.clone()).collect()
}

/// Up to `max_n` points in a cube of side `extent`, dense enough that
/// clusters, border points and noise all occur at ε = 0.5.
pub fn random_cloud(rng: &mut ChaCha8Rng, max_n: usize, extent: f64) -> PointCloud {
    let n = rng.random_range(0..=max_n);
    let points = (0..n)
        .map(|_| {
            Point3::new(
                rng.random_range(0.0..extent),
                rng.random_range(0.0..extent),
                rng.random_range(0.0..extent),
            )
        })
        .collect();
    PointCloud::new(0, 0.0, points)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
