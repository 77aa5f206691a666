//! Registration error model: Fisher information of a point-to-point
//! registration, its inverse as the pose-observation covariance, and
//! observability analysis of the matched geometry.
//!
//! For matched target points `q_i` with isotropic sensor noise of standard
//! deviation `sigma`, each residual row is `[A_i, -I3]` with `A_i` the skew
//! matrix of `q_i`. The information matrix is the normal-equation sum of
//! those rows scaled by `1/sigma^2`; its kernel directions are the twists
//! the geometry says nothing about.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::exec;
use crate::se3::{skew, Twist};
use crate::Cov6;

/// Relative eigenvalue threshold below which a direction counts as weak.
pub const DEFAULT_WEAK_THRESHOLD: f64 = 1e-6;

/// Condition-number cutoff beyond which the Fisher matrix is treated as
/// non-invertible and the observation flagged instead of regularised.
pub const DEFAULT_MAX_CONDITION: f64 = 1e12;

/// Eigen-structure of a Fisher matrix: ascending eigenvalues, matching
/// eigenvector twists, and the directions flagged as weak.
#[derive(Debug, Clone)]
pub struct ObservabilityReport {
    /// Eigenvalues in ascending order.
    pub eigenvalues: Vector6<f64>,
    /// Unit eigenvectors, columns matching `eigenvalues`.
    pub eigenvectors: Matrix6<f64>,
    /// Eigenvector twists whose eigenvalue is below `threshold * max`.
    pub weak_directions: Vec<Twist>,
}

impl ObservabilityReport {
    /// Ratio of largest to smallest absolute eigenvalue (infinite when the
    /// smallest vanishes).
    pub fn condition_number(&self) -> f64 {
        let max = self.eigenvalues[5].abs();
        let min = self.eigenvalues[0].abs();
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    /// Number of eigenvalues below `threshold * max` (in absolute value).
    pub fn rank_deficiency(&self, threshold: f64) -> usize {
        let max = self.eigenvalues[5].abs();
        self.eigenvalues.iter().filter(|l| l.abs() < threshold * max).count()
    }
}

fn add3(acc: &mut Matrix6<f64>, row: usize, col: usize, m: &Matrix3<f64>, sign: f64) {
    for i in 0..3 {
        for j in 0..3 {
            acc[(row + i, col + j)] += sign * m[(i, j)];
        }
    }
}

/// Sum of the per-point information blocks, unscaled by the noise.
fn information_sum(target_points: &[Vector3<f64>]) -> Matrix6<f64> {
    exec::chunked_sum(
        target_points,
        Matrix6::zeros(),
        |chunk| {
            let mut acc = Matrix6::zeros();
            for q in chunk {
                let a = skew(q);
                let a2 = a * a;
                // Block form of the normal equations for the row [A, -I3].
                add3(&mut acc, 0, 0, &a2, -1.0);
                add3(&mut acc, 0, 3, &a, 1.0);
                add3(&mut acc, 3, 0, &a, -1.0);
                for i in 0..3 {
                    acc[(3 + i, 3 + i)] += 1.0;
                }
            }
            acc
        },
        |a, b| a + b,
    )
}

/// Fisher information of a registration against the matched target points,
/// expressed over (rotation, translation) twist coordinates. The
/// translational block is exactly `n / sigma^2 * I3`.
pub fn fisher_matrix(target_points: &[Vector3<f64>], sigma: f64) -> Result<Cov6> {
    if target_points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    assert!(sigma > 0.0, "sensor noise must be positive");
    Ok(information_sum(target_points) / (sigma * sigma))
}

/// Pose-observation covariance: the inverse Fisher matrix. Proportional to
/// `sigma^2` exactly (the geometry factor is inverted once, then scaled).
pub fn icp_covariance(target_points: &[Vector3<f64>], sigma: f64) -> Result<Cov6> {
    if target_points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    assert!(sigma > 0.0, "sensor noise must be positive");
    let raw = information_sum(target_points);
    let fisher = raw / (sigma * sigma);
    let geometry_inv = checked_inverse(&raw, &fisher)?;
    Ok(geometry_inv * (sigma * sigma))
}

/// Inverse of an already-computed Fisher matrix, with the same conditioning
/// gate as [`icp_covariance`].
pub fn invert_fisher(fisher: &Cov6) -> Result<Cov6> {
    checked_inverse(fisher, fisher)
}

/// Inverts `raw` after checking the conditioning of `fisher` (the two are
/// scalar multiples, so they share a condition number).
fn checked_inverse(raw: &Matrix6<f64>, fisher: &Matrix6<f64>) -> Result<Cov6> {
    let report = analyze_observability(fisher, DEFAULT_WEAK_THRESHOLD);
    if report.eigenvalues[0] <= 0.0 || report.condition_number() > DEFAULT_MAX_CONDITION {
        return Err(Error::Unobservable(Box::new(report)));
    }
    let inv = raw
        .try_inverse()
        .ok_or_else(|| Error::Unobservable(Box::new(report)))?;
    // Round-off can leave the inverse slightly asymmetric.
    Ok((inv + inv.transpose()) * 0.5)
}

/// Ascending eigen-decomposition of a Fisher matrix with weak directions
/// flagged below `threshold * max_eigenvalue`.
pub fn analyze_observability(fisher: &Cov6, threshold: f64) -> ObservabilityReport {
    let sym = (fisher + fisher.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let mut eigenvalues = Vector6::zeros();
    let mut eigenvectors = Matrix6::zeros();
    for (slot, &src) in order.iter().enumerate() {
        eigenvalues[slot] = eig.eigenvalues[src];
        eigenvectors.set_column(slot, &eig.eigenvectors.column(src));
    }
    let max = eigenvalues[5].abs();
    let mut weak_directions = Vec::new();
    for i in 0..6 {
        if eigenvalues[i] < threshold * max {
            weak_directions.push(Twist::from_vector(&eigenvectors.column(i).into_owned()));
        }
    }
    ObservabilityReport { eigenvalues, eigenvectors, weak_directions }
}

/// Serialises a 6x6 matrix as six CSV rows.
pub fn cov_to_csv(m: &Cov6) -> String {
    let mut out = String::new();
    for i in 0..6 {
        let row: Vec<String> = (0..6).map(|j| format!("{:.17e}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Serialises an observability report: the eigenvector matrix row-major,
/// then one row of ascending eigenvalues.
pub fn report_to_csv(report: &ObservabilityReport) -> String {
    let mut out = cov_to_csv(&report.eigenvectors);
    let row: Vec<String> = (0..6).map(|i| format!("{:.17e}", report.eigenvalues[i])).collect();
    out.push_str(&row.join(","));
    out.push('\n');
    out
}

/// Parses six CSV rows of six values into a 6x6 matrix; blank lines and
/// `#` comments are skipped, extra rows ignored.
pub fn cov_from_csv(text: &str) -> Result<Cov6> {
    let mut m = Matrix6::zeros();
    let mut row = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if row >= 6 {
            break;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                what: "matrix csv",
                line: lineno + 1,
                message: e.to_string(),
            })?;
        if values.len() != 6 {
            return Err(Error::Parse {
                what: "matrix csv",
                line: lineno + 1,
                message: format!("expected 6 values, found {}", values.len()),
            });
        }
        for (j, v) in values.iter().enumerate() {
            m[(row, j)] = *v;
        }
        row += 1;
    }
    if row != 6 {
        return Err(Error::Parse {
            what: "matrix csv",
            line: 0,
            message: format!("expected 6 rows, found {row}"),
        });
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_points(rng: &mut StdRng, n: usize, extent: f64) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-extent..extent),
                    rng.gen_range(-extent..extent),
                    rng.gen_range(-extent..extent),
                )
            })
            .collect()
    }

    /// Independent assembler: stacks the 3n x 6 residual Jacobian and forms
    /// J^T J / sigma^2 with dense matrix products.
    fn stacked_jacobian_fisher(points: &[Vector3<f64>], sigma: f64) -> Matrix6<f64> {
        let mut j = DMatrix::<f64>::zeros(3 * points.len(), 6);
        for (k, q) in points.iter().enumerate() {
            let a = skew(q);
            for r in 0..3 {
                for c in 0..3 {
                    j[(3 * k + r, c)] = a[(r, c)];
                }
                j[(3 * k + r, 3 + r)] = -1.0;
            }
        }
        let jt_j = j.transpose() * &j;
        let mut out = Matrix6::zeros();
        for r in 0..6 {
            for c in 0..6 {
                out[(r, c)] = jt_j[(r, c)] / (sigma * sigma);
            }
        }
        out
    }

    #[test]
    fn single_point_at_origin_is_pure_translation_information() {
        let sigma = 0.25;
        let f = fisher_matrix(&[Vector3::zeros()], sigma).unwrap();
        let mut expected = Matrix6::zeros();
        for i in 0..3 {
            expected[(3 + i, 3 + i)] = 1.0 / (sigma * sigma);
        }
        assert_eq!(f, expected);
    }

    #[test]
    fn matches_stacked_jacobian_oracle() {
        let mut rng = StdRng::seed_from_u64(21);
        let points = random_points(&mut rng, 100, 3.0);
        let sigma = 0.2;
        let f = fisher_matrix(&points, sigma).unwrap();
        let oracle = stacked_jacobian_fisher(&points, sigma);
        let rel = (f - oracle).norm() / oracle.norm();
        assert!(rel < 1e-9, "relative deviation {rel:.3e}");
    }

    #[test]
    fn translational_block_is_count_over_variance_exactly() {
        let mut rng = StdRng::seed_from_u64(22);
        let points = random_points(&mut rng, 57, 2.0);
        let sigma = 0.3;
        let f = fisher_matrix(&points, sigma).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 57.0 / (sigma * sigma) } else { 0.0 };
                assert_eq!(f[(3 + i, 3 + j)], expected);
            }
        }
    }

    #[test]
    fn points_on_an_axis_leave_that_rotation_unobservable() {
        let points: Vec<_> = (1..20).map(|k| Vector3::new(0.0, 0.0, 0.1 * k as f64)).collect();
        let f = fisher_matrix(&points, 0.2).unwrap();
        let report = analyze_observability(&f, DEFAULT_WEAK_THRESHOLD);
        assert!(report.eigenvalues[0].abs() < 1e-9 * report.eigenvalues[5]);
        let kernel = report.eigenvectors.column(0);
        let expected = Vector6::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        let align = kernel.dot(&expected).abs();
        assert!(align > 1.0 - 1e-9, "kernel misaligned: dot {align}");
        assert_eq!(report.weak_directions.len(), 1);
    }

    #[test]
    fn covariance_inverts_fisher() {
        let mut rng = StdRng::seed_from_u64(23);
        let points = random_points(&mut rng, 40, 2.0);
        let sigma = 0.2;
        let f = fisher_matrix(&points, sigma).unwrap();
        let n = icp_covariance(&points, sigma).unwrap();
        let product = f * n;
        assert!((product - Matrix6::identity()).norm() < 1e-6);
    }

    #[test]
    fn covariance_scales_exactly_with_noise_variance() {
        let mut rng = StdRng::seed_from_u64(24);
        let points = random_points(&mut rng, 200, 3.0);
        let sigma = 0.2;
        let n1 = icp_covariance(&points, sigma).unwrap();
        let n2 = icp_covariance(&points, 2.0 * sigma).unwrap();
        let rel = (n2 - n1 * 4.0).norm() / n1.norm();
        assert!(rel <= 1e-12, "scaling deviation {rel:.3e}");
    }

    #[test]
    fn unobservable_cloud_is_rejected_with_report() {
        let points: Vec<_> = (1..30).map(|k| Vector3::new(0.0, 0.0, 0.1 * k as f64)).collect();
        match icp_covariance(&points, 0.2) {
            Err(Error::Unobservable(report)) => {
                assert!(!report.weak_directions.is_empty());
            }
            other => panic!("expected unobservable error, got {other:?}"),
        }
    }

    #[test]
    fn fisher_is_order_invariant_and_additive() {
        let mut rng = StdRng::seed_from_u64(25);
        let a = random_points(&mut rng, 30, 2.0);
        let b = random_points(&mut rng, 45, 2.0);
        let sigma = 0.2;
        let mut shuffled = a.clone();
        shuffled.reverse();
        let fa = fisher_matrix(&a, sigma).unwrap();
        let fs = fisher_matrix(&shuffled, sigma).unwrap();
        assert!((fa - fs).norm() <= 1e-12 * fa.norm());
        let mut joint = a.clone();
        joint.extend_from_slice(&b);
        let sum = fisher_matrix(&a, sigma).unwrap() + fisher_matrix(&b, sigma).unwrap();
        let whole = fisher_matrix(&joint, sigma).unwrap();
        assert!((whole - sum).norm() <= 1e-9 * whole.norm());
    }

    #[test]
    fn quadratic_form_predicts_cost_change() {
        // The linearised registration cost around the optimum grows like
        // sigma^2 * dx^T I dx; check by direct evaluation of the first-order
        // residuals at perturbed twists.
        let mut rng = StdRng::seed_from_u64(26);
        let points = random_points(&mut rng, 120, 2.5);
        let sigma = 0.2;
        let f = fisher_matrix(&points, sigma).unwrap();
        for _ in 0..20 {
            let dx = Vector6::from_fn(|_, _| rng.gen_range(-1e-4..1e-4));
            let t = Twist::from_vector(&dx);
            let cost: f64 = points
                .iter()
                .map(|q| (t.omega.cross(q) + t.mu).norm_squared())
                .sum();
            let quad = (dx.transpose() * f * dx)[(0, 0)] * sigma * sigma;
            let rel = (cost - quad).abs() / quad.abs().max(1e-30);
            assert!(rel < 1e-4, "quadratic form deviation {rel:.3e}");
        }
    }

    #[test]
    fn rank_deficiency_matches_svd_rank() {
        let mut rng = StdRng::seed_from_u64(27);
        for deficient in [false, true] {
            let points = if deficient {
                (1..40).map(|k| Vector3::new(0.0, 0.0, 0.05 * k as f64)).collect()
            } else {
                random_points(&mut rng, 40, 2.0)
            };
            let f = fisher_matrix(&points, 0.2).unwrap();
            let report = analyze_observability(&f, DEFAULT_WEAK_THRESHOLD);
            let svd = f.svd(false, false);
            let smax = svd.singular_values.max();
            let svd_deficiency =
                svd.singular_values.iter().filter(|s| **s < 1e-9 * smax).count();
            assert_eq!(report.rank_deficiency(1e-9), svd_deficiency);
        }
    }

    #[test]
    fn eigen_decomposition_reconstructs_fisher() {
        let mut rng = StdRng::seed_from_u64(28);
        let points = random_points(&mut rng, 64, 2.0);
        let f = fisher_matrix(&points, 0.2).unwrap();
        let report = analyze_observability(&f, DEFAULT_WEAK_THRESHOLD);
        let mut rebuilt = Matrix6::zeros();
        for i in 0..6 {
            let v = report.eigenvectors.column(i);
            rebuilt += report.eigenvalues[i] * v * v.transpose();
        }
        assert!((rebuilt - f).norm() / f.norm() < 1e-9);
    }

    #[test]
    fn identity_fisher_has_no_weak_directions() {
        let report = analyze_observability(&Matrix6::identity(), DEFAULT_WEAK_THRESHOLD);
        assert!(report.weak_directions.is_empty());
    }

    #[test]
    fn csv_roundtrip() {
        let mut rng = StdRng::seed_from_u64(29);
        let points = random_points(&mut rng, 25, 2.0);
        let f = fisher_matrix(&points, 0.2).unwrap();
        let back = cov_from_csv(&cov_to_csv(&f)).unwrap();
        assert_eq!(f, back);
    }
}
