//! Point-to-point iterative-closest-point registration.
//!
//! Each iteration matches the transformed source against the target index,
//! solves the matched pairs in closed form (centered cross-covariance SVD
//! with a determinant sign correction), and composes the increment onto the
//! running transform. Iteration stops when the pose increment drops below
//! the tolerances, which is robust to residual plateaus caused by
//! correspondence switching.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::pointcloud::{match_closest, Correspondence, PointCloud, SpatialIndex};
use crate::se3::Pose;

#[derive(Debug, Clone)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Translation norm of the per-iteration increment below which the
    /// registration counts as converged (meters).
    pub translation_tolerance: f64,
    /// Rotation angle of the per-iteration increment below which the
    /// registration counts as converged (radians).
    pub rotation_tolerance: f64,
    /// Matches farther than this are dropped so partially overlapping
    /// clouds do not drag each other (meters).
    pub max_correspondence_distance: f64,
    /// Fewer surviving matches than this aborts with an overlap error.
    pub min_correspondences: usize,
}

impl Default for IcpParams {
    fn default() -> Self {
        IcpParams {
            max_iterations: 50,
            translation_tolerance: 1e-5,
            rotation_tolerance: 1e-5,
            max_correspondence_distance: 1.0,
            min_correspondences: 30,
        }
    }
}

impl IcpParams {
    /// Same parameters with a different iteration cap; used for the coarse
    /// feature-cloud stage.
    pub fn with_max_iterations(&self, max_iterations: usize) -> IcpParams {
        IcpParams { max_iterations, ..self.clone() }
    }
}

/// Outcome of a registration. `transform` maps source-cloud coordinates
/// into the target frame.
#[derive(Debug, Clone)]
pub struct IcpResult {
    pub transform: Pose,
    pub iterations_used: usize,
    /// Mean matched-pair distance after the last solve (meters).
    pub final_mean_residual: f64,
    pub converged: bool,
    /// Matches used by the last solve, indices into the source cloud and
    /// the target index.
    pub correspondences: Vec<Correspondence>,
}

impl IcpResult {
    pub fn correspondences_used(&self) -> usize {
        self.correspondences.len()
    }
}

/// Closed-form rigid solve: the pose minimising the summed squared
/// distances over matched pairs (p_i -> q_i).
///
/// Centers both sides, takes the SVD of the cross-covariance
/// `H = sum (p - Cp)(q - Cq)^T = U S V^T`, and forms
/// `R = V diag(1, 1, det(V U^T)) U^T`, `T = Cq - R Cp`. The determinant
/// factor rules out reflections.
pub fn solve_rigid(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Result<Pose> {
    if pairs.len() < 3 {
        return Err(Error::DegenerateGeometry { rank: 0 });
    }
    let inv_n = 1.0 / pairs.len() as f64;
    let mut centroid_p = Vector3::zeros();
    let mut centroid_q = Vector3::zeros();
    for (p, q) in pairs {
        centroid_p += p;
        centroid_q += q;
    }
    centroid_p *= inv_n;
    centroid_q *= inv_n;

    let mut h = Matrix3::zeros();
    for (p, q) in pairs {
        h += (p - centroid_p) * (q - centroid_q).transpose();
    }

    let svd = h.svd(true, true);
    let sv = &svd.singular_values;
    // Rank below 2 (collinear or coincident points) leaves the rotation
    // underdetermined.
    let rank = sv.iter().filter(|s| **s > 1e-9 * sv.max().max(f64::MIN_POSITIVE)).count();
    if rank < 2 {
        return Err(Error::DegenerateGeometry { rank });
    }
    let u = svd.u.expect("svd with u");
    let v_t = svd.v_t.expect("svd with v_t");
    let v = v_t.transpose();
    let det = (v * u.transpose()).determinant();
    let mut d = Matrix3::identity();
    d[(2, 2)] = if det < 0.0 { -1.0 } else { 1.0 };
    let rotation = v * d * u.transpose();
    let translation = centroid_q - rotation * centroid_p;
    Ok(Pose { rotation, translation })
}

/// Iterative registration of `source` onto the indexed `target`, starting
/// from `initial`.
pub fn icp_register(
    source: &PointCloud,
    target: &SpatialIndex,
    initial: &Pose,
    params: &IcpParams,
) -> Result<IcpResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut transform = *initial;
    let mut converged = false;
    let mut iterations_used = 0;
    let mut final_mean_residual = 0.0;
    let mut correspondences = Vec::new();

    for _ in 0..params.max_iterations {
        iterations_used += 1;
        let moved = source.transformed(&transform);
        let matches = match_closest(&moved, target, params.max_correspondence_distance);
        if matches.len() < params.min_correspondences {
            return Err(Error::InsufficientOverlap {
                found: matches.len(),
                required: params.min_correspondences,
            });
        }
        let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = matches
            .iter()
            .map(|m| (moved.points[m.source_index], *target.point(m.target_index)))
            .collect();
        let delta = solve_rigid(&pairs)?;
        transform = delta.compose(&transform);

        let mut residual = 0.0;
        for (p, q) in &pairs {
            residual += (delta.apply(p) - q).norm();
        }
        final_mean_residual = residual / pairs.len() as f64;
        correspondences = matches;

        if delta.rotation_angle() < params.rotation_tolerance
            && delta.translation.norm() < params.translation_tolerance
        {
            converged = true;
            break;
        }
    }

    Ok(IcpResult { transform, iterations_used, final_mean_residual, converged, correspondences })
}

/// Coarse alignment on depth-gradient feature clouds: a short registration
/// of the sparse features refines the initial pose before the full-cloud
/// stage. Falls back to `initial` when either feature cloud is empty or the
/// features do not overlap.
pub fn coarse_align(
    source_features: &PointCloud,
    target_features: &PointCloud,
    initial: &Pose,
    params: &IcpParams,
) -> Pose {
    if source_features.is_empty() || target_features.is_empty() {
        return *initial;
    }
    let index = match crate::pointcloud::build_index(target_features) {
        Ok(index) => index,
        Err(_) => return *initial,
    };
    // Sparse feature clouds legitimately produce few matches.
    let relaxed = IcpParams {
        min_correspondences: params.min_correspondences.min(8),
        ..params.clone()
    };
    match icp_register(source_features, &index, initial, &relaxed) {
        Ok(result) => result.transform,
        Err(_) => *initial,
    }
}
