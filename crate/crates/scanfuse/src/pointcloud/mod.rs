//! Point-cloud container, exact nearest-neighbour matching, depth images
//! and file I/O.

mod depth;
mod kdtree;
mod ply;

pub use depth::{
    depth_to_cloud, extract_depth_gradient_points, read_depth_binary, write_depth_binary,
    DepthImage, Intrinsics,
};
pub use kdtree::{build_index, SpatialIndex};
pub use ply::{read_ply, write_ply_ascii};

use nalgebra::Vector3;

use crate::exec;
use crate::se3::Pose;

/// Ordered list of 3D points (meters), with optional (row, col) provenance
/// for points that came out of a depth image.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub grid: Option<Vec<(u32, u32)>>,
}

impl PointCloud {
    pub fn new() -> Self {
        PointCloud::default()
    }

    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        PointCloud { points, grid: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Returns the cloud mapped through `pose` (provenance retained).
    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.apply(p)).collect(),
            grid: self.grid.clone(),
        }
    }

    /// Keep-first-per-voxel downsampling with cubic cells of side `voxel`.
    /// Output order follows first occurrence, so the result is deterministic
    /// and independent of thread count.
    pub fn voxel_downsampled(&self, voxel: f64) -> PointCloud {
        if voxel <= 0.0 {
            return self.clone();
        }
        let mut seen = std::collections::HashSet::new();
        let mut points = Vec::new();
        for p in &self.points {
            let key = voxel_key(p, voxel);
            if seen.insert(key) {
                points.push(*p);
            }
        }
        PointCloud { points, grid: None }
    }

    /// Centroid-per-voxel downsampling: averages the points of each cell,
    /// which also averages down uncorrelated sensor noise. Output order
    /// follows first occurrence of each cell.
    pub fn voxel_centroids(&self, voxel: f64) -> PointCloud {
        if voxel <= 0.0 {
            return self.clone();
        }
        let mut slots: std::collections::HashMap<(i64, i64, i64), usize> =
            std::collections::HashMap::new();
        let mut sums: Vec<(Vector3<f64>, f64)> = Vec::new();
        for p in &self.points {
            let key = voxel_key(p, voxel);
            match slots.get(&key) {
                Some(&slot) => {
                    sums[slot].0 += p;
                    sums[slot].1 += 1.0;
                }
                None => {
                    slots.insert(key, sums.len());
                    sums.push((*p, 1.0));
                }
            }
        }
        PointCloud {
            points: sums.into_iter().map(|(s, c)| s / c).collect(),
            grid: None,
        }
    }
}

pub(crate) fn voxel_key(p: &Vector3<f64>, voxel: f64) -> (i64, i64, i64) {
    (
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    )
}

/// A matched pair of points between a source cloud and an indexed target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source_index: usize,
    pub target_index: usize,
    pub squared_distance: f64,
}

/// Matches every source point to its exact nearest neighbour in the target
/// index, keeping only matches within `max_distance`. Output order follows
/// the source cloud; ties inside the index resolve to the lowest target
/// index, so results are identical across runs and thread counts.
pub fn match_closest(
    source: &PointCloud,
    target: &SpatialIndex,
    max_distance: f64,
) -> Vec<Correspondence> {
    let max_d2 = max_distance * max_distance;
    let hits = exec::map_slice(&source.points, |i, p| {
        let (target_index, squared_distance) = target.nearest(p);
        if squared_distance <= max_d2 {
            Some(Correspondence { source_index: i, target_index, squared_distance })
        } else {
            None
        }
    });
    hits.into_iter().flatten().collect()
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_cloud(rng: &mut StdRng, n: usize, extent: f64) -> PointCloud {
        PointCloud::from_points(
            (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-extent..extent),
                        rng.gen_range(-extent..extent),
                        rng.gen_range(-extent..extent),
                    )
                })
                .collect(),
        )
    }

    fn brute_force_nearest(cloud: &PointCloud, q: &Vector3<f64>) -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        for (i, p) in cloud.points.iter().enumerate() {
            let d2 = (p - q).norm_squared();
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        best
    }

    #[test]
    fn single_point_cloud_always_matches_it() {
        let cloud = PointCloud::from_points(vec![Vector3::new(1.0, 2.0, 3.0)]);
        let index = build_index(&cloud).unwrap();
        let (i, d2) = index.nearest(&Vector3::new(-4.0, 0.0, 9.0));
        assert_eq!(i, 0);
        assert!(d2 > 0.0);
    }

    #[test]
    fn query_on_stored_point_returns_zero_distance() {
        let cloud = PointCloud::from_points(vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ]);
        let index = build_index(&cloud).unwrap();
        let (i, d2) = index.nearest(&Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(i, 1);
        assert_eq!(d2, 0.0);
    }

    #[test]
    fn index_matches_linear_scan_on_random_queries() {
        let mut rng = StdRng::seed_from_u64(42);
        let cloud = random_cloud(&mut rng, 1000, 4.0);
        let index = build_index(&cloud).unwrap();
        for _ in 0..100 {
            let q = Vector3::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            );
            let got = index.nearest(&q);
            let want = brute_force_nearest(&cloud, &q);
            assert_eq!(got.0, want.0);
            assert_eq!(got.1, want.1);
        }
    }

    #[test]
    fn ties_break_to_lowest_index() {
        // Two copies of the same point plus a decoy; the query is equidistant
        // from the duplicates.
        let cloud = PointCloud::from_points(vec![
            Vector3::new(5.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 1.0),
            Vector3::new(1.0, 1.0, 1.0),
        ]);
        let index = build_index(&cloud).unwrap();
        let (i, _) = index.nearest(&Vector3::new(1.0, 1.0, 1.2));
        assert_eq!(i, 1);
        // Symmetric pair around the query along one axis.
        let cloud = PointCloud::from_points(vec![
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::new(-2.0, 0.0, 0.0),
        ]);
        let index = build_index(&cloud).unwrap();
        let (i, d2) = index.nearest(&Vector3::zeros());
        assert_eq!(i, 0);
        assert_eq!(d2, 4.0);
    }

    #[test]
    fn match_identical_clouds_is_identity_matching() {
        let mut rng = StdRng::seed_from_u64(9);
        let cloud = random_cloud(&mut rng, 200, 2.0);
        let index = build_index(&cloud).unwrap();
        let matches = match_closest(&cloud, &index, f64::INFINITY);
        assert_eq!(matches.len(), cloud.len());
        for m in &matches {
            assert_eq!(m.source_index, m.target_index);
            assert_eq!(m.squared_distance, 0.0);
        }
    }

    #[test]
    fn distant_clusters_produce_no_matches() {
        let mut rng = StdRng::seed_from_u64(10);
        let a = random_cloud(&mut rng, 50, 0.5);
        let mut b = random_cloud(&mut rng, 50, 0.5);
        for p in &mut b.points {
            p.x += 10.0;
        }
        let index = build_index(&b).unwrap();
        assert!(match_closest(&a, &index, 1.0).is_empty());
    }

    #[test]
    fn match_count_equals_brute_force_count() {
        let mut rng = StdRng::seed_from_u64(11);
        let target = random_cloud(&mut rng, 600, 2.0);
        // Partially overlapping source: shift by 1.2 so roughly 40% overlaps.
        let mut source = target.clone();
        for p in &mut source.points {
            p.x += 1.2;
        }
        let threshold = 0.25;
        let index = build_index(&target).unwrap();
        let matches = match_closest(&source, &index, threshold);
        let expected = source
            .points
            .iter()
            .filter(|q| brute_force_nearest(&target, q).1 <= threshold * threshold)
            .count();
        assert_eq!(matches.len(), expected);
    }

    #[test]
    fn matching_is_deterministic_across_runs() {
        let mut rng = StdRng::seed_from_u64(12);
        let target = random_cloud(&mut rng, 500, 3.0);
        let source = random_cloud(&mut rng, 300, 3.0);
        let a = match_closest(&source, &build_index(&target).unwrap(), 1.0);
        let b = match_closest(&source, &build_index(&target).unwrap(), 1.0);
        assert_eq!(a, b);
    }

    #[test]
    fn voxel_downsampling_keeps_one_point_per_cell() {
        let cloud = PointCloud::from_points(vec![
            Vector3::new(0.01, 0.01, 0.01),
            Vector3::new(0.02, 0.03, 0.04), // same 0.1 m cell
            Vector3::new(0.15, 0.0, 0.0),
        ]);
        let down = cloud.voxel_downsampled(0.1);
        assert_eq!(down.len(), 2);
        assert_eq!(down.points[0], Vector3::new(0.01, 0.01, 0.01));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn index_always_agrees_with_linear_scan(seed in 0u64..1000) {
            let mut rng = StdRng::seed_from_u64(seed);
            let n = rng.gen_range(1..80);
            let cloud = random_cloud(&mut rng, n, 1.0);
            let index = build_index(&cloud).unwrap();
            for _ in 0..20 {
                let q = Vector3::new(
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                );
                proptest::prop_assert_eq!(index.nearest(&q), brute_force_nearest(&cloud, &q));
            }
        }
    }
}
