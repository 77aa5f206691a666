//! Exact nearest-neighbour index over a 3D point set.
//!
//! A plain median-split k-d tree. No approximation: queries return the true
//! nearest neighbour, and equidistant candidates resolve to the lowest point
//! index so matching is reproducible across runs and platforms.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

struct Node {
    /// Index into `points` of the splitting point.
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

const NONE: i32 = -1;

pub struct SpatialIndex {
    points: Vec<Vector3<f64>>,
    nodes: Vec<Node>,
    root: i32,
}

pub fn build_index(cloud: &PointCloud) -> Result<SpatialIndex> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let points = cloud.points.clone();
    let mut order: Vec<u32> = (0..points.len() as u32).collect();
    let mut nodes = Vec::with_capacity(points.len());
    let root = build_recursive(&points, &mut order, &mut nodes);
    Ok(SpatialIndex { points, nodes, root })
}

fn build_recursive(points: &[Vector3<f64>], order: &mut [u32], nodes: &mut Vec<Node>) -> i32 {
    if order.is_empty() {
        return NONE;
    }
    // Split along the axis with the widest extent of this subset.
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        let p = &points[i as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let mut axis = 0;
    for a in 1..3 {
        if hi[a] - lo[a] > hi[axis] - lo[axis] {
            axis = a;
        }
    }
    let mid = order.len() / 2;
    // Tie-break the ordering by point index so the tree layout is unique.
    order.select_nth_unstable_by(mid, |&a, &b| {
        let ka = (points[a as usize][axis], a);
        let kb = (points[b as usize][axis], b);
        ka.partial_cmp(&kb).expect("finite coordinates")
    });
    let point = order[mid];
    let slot = nodes.len();
    nodes.push(Node { point, axis: axis as u8, left: NONE, right: NONE });
    let (left_part, rest) = order.split_at_mut(mid);
    let left = build_recursive(points, left_part, nodes);
    let right = build_recursive(points, &mut rest[1..], nodes);
    nodes[slot].left = left;
    nodes[slot].right = right;
    slot as i32
}

impl SpatialIndex {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The indexed points, in their original order.
    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn point(&self, index: usize) -> &Vector3<f64> {
        &self.points[index]
    }

    /// Exact nearest neighbour of `query`: (point index, squared distance).
    /// Equidistant points resolve to the lowest index.
    pub fn nearest(&self, query: &Vector3<f64>) -> (usize, f64) {
        let mut best = (u32::MAX, f64::INFINITY);
        self.search(self.root, query, &mut best);
        (best.0 as usize, best.1)
    }

    fn search(&self, node: i32, query: &Vector3<f64>, best: &mut (u32, f64)) {
        if node == NONE {
            return;
        }
        let n = &self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        let d2 = (p - query).norm_squared();
        if d2 < best.1 || (d2 == best.1 && n.point < best.0) {
            *best = (n.point, d2);
        }
        let axis = n.axis as usize;
        let diff = query[axis] - p[axis];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.search(near, query, best);
        // The far side may still hold an equally distant, lower-index point;
        // prune only when strictly farther.
        if diff * diff <= best.1 {
            self.search(far, query, best);
        }
    }
}
