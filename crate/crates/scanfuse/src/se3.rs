//! Rigid-transform arithmetic on SE(3)/SO(3) and its tangent space.
//!
//! A [`Pose`] maps body-frame coordinates to ground-frame coordinates. A
//! [`Twist`] is the 6-vector (omega, mu) of rotational/translational rates
//! or small displacements; [`hat`]/[`vee`] convert between twists and their
//! 4x4 tangent-matrix form. All angles are radians, lengths meters, times
//! seconds; degree conversion happens only at CLI boundaries.

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

/// Angle below which closed-form rotation formulas switch to their Taylor
/// expansions to avoid dividing by the angle.
const SMALL_ANGLE: f64 = 1e-8;

/// Maximum tolerated skew-symmetry violation in [`vee`].
const SKEW_TOL: f64 = 1e-9;

/// Skew matrix of `v`, i.e. the matrix of the cross product `v x .`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    )
}

/// Extracts the vector of an exactly skew-symmetric matrix.
fn unskew(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Tangent-space element: rotational part `omega`, translational part `mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub omega: Vector3<f64>,
    pub mu: Vector3<f64>,
}

impl Twist {
    pub fn new(omega: Vector3<f64>, mu: Vector3<f64>) -> Self {
        Twist { omega, mu }
    }

    pub fn zero() -> Self {
        Twist { omega: Vector3::zeros(), mu: Vector3::zeros() }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Twist {
            omega: Vector3::new(v[0], v[1], v[2]),
            mu: Vector3::new(v[3], v[4], v[5]),
        }
    }

    /// Stacks (omega, mu) into a 6-vector, rotational part first.
    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::new(self.omega.x, self.omega.y, self.omega.z, self.mu.x, self.mu.y, self.mu.z)
    }

    pub fn norm(&self) -> f64 {
        self.as_vector().norm()
    }
}

/// Rigid transformation: `p_ground = rotation * p_body + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    pub fn identity() -> Self {
        Pose { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Group composition: `(self * other)(p) = self(other(p))`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Applies the transform to a point.
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Pose {
        Pose {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    /// Rotation angle in radians, in [0, pi].
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(
            self.rotation,
        ))
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Pose {
        Pose { rotation: q.to_rotation_matrix().into_inner(), translation }
    }

    /// Replaces the rotation block with its nearest orthonormal matrix
    /// (polar factor via SVD). Used as an occasional drift guard on long
    /// integration runs.
    pub fn renormalized(&self) -> Pose {
        let svd = self.rotation.svd(true, true);
        let u = svd.u.expect("3x3 svd");
        let v_t = svd.v_t.expect("3x3 svd");
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Pose { rotation: r, translation: self.translation }
    }
}

/// Tangent-matrix form of a twist: skew(omega) upper-left, mu top-right,
/// zero last row.
pub fn hat(t: &Twist) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&t.omega));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t.mu);
    m
}

/// Inverse of [`hat`]. Rejects matrices whose rotation block is not skew
/// symmetric (beyond 1e-9) or whose last row is nonzero: callers must run
/// [`project_se3`] first if the input is a raw displacement.
pub fn vee(m: &Matrix4<f64>) -> Result<Twist> {
    let mut deviation: f64 = 0.0;
    for i in 0..3 {
        deviation = deviation.max(m[(i, i)].abs());
        for j in (i + 1)..3 {
            deviation = deviation.max((m[(i, j)] + m[(j, i)]).abs());
        }
    }
    for j in 0..4 {
        deviation = deviation.max(m[(3, j)].abs());
    }
    if deviation > SKEW_TOL {
        return Err(Error::NotTangent { deviation });
    }
    let rot = m.fixed_view::<3, 3>(0, 0).into_owned();
    Ok(Twist { omega: unskew(&rot), mu: m.fixed_view::<3, 1>(0, 3).into_owned() })
}

/// Rotation exponential (Rodrigues) for the increment `omega * dt`, with a
/// series fallback below 1e-8 rad.
pub fn exp_rotation(omega: &Vector3<f64>, dt: f64) -> Matrix3<f64> {
    let phi = omega * dt;
    let theta2 = phi.norm_squared();
    let k = skew(&phi);
    let (a, b) = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + a * k + b * (k * k)
}

/// Projects a near-identity 4x4 displacement onto se(3) by skew-symmetrising
/// the rotation block; the translation column passes through unchanged. Acts
/// as the identity on matrices already in se(3), with a remainder that is
/// second order in the displacement.
pub fn project_se3(m: &Matrix4<f64>) -> Matrix4<f64> {
    let a = m.fixed_view::<3, 3>(0, 0).into_owned();
    let mut out = Matrix4::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&((a - a.transpose()) * 0.5));
    out.fixed_view_mut::<3, 1>(0, 3)
        .copy_from(&m.fixed_view::<3, 1>(0, 3).into_owned());
    out
}

/// Body-rate quaternion integration step: `q <- q * exp(omega * dt)`.
///
/// Uses the exact unit-quaternion exponential of the increment rather than a
/// first-order Euler step, so the quaternion path and the rotation-matrix
/// path of [`exp_rotation`] agree to round-off over arbitrarily long
/// integration runs.
pub fn quat_integrate(
    q: &UnitQuaternion<f64>,
    omega: &Vector3<f64>,
    dt: f64,
) -> UnitQuaternion<f64> {
    let step = UnitQuaternion::from_scaled_axis(omega * dt);
    let out = q.into_inner() * step.into_inner();
    UnitQuaternion::from_quaternion(out)
}

/// Ground-frame quaternion correction step: `q <- exp(e_r * dt) * q`.
/// Quaternion analogue of left-multiplying the rotation by
/// `exp_rotation(e_r, dt)`.
pub fn quat_correct(
    q: &UnitQuaternion<f64>,
    e_r: &Vector3<f64>,
    dt: f64,
) -> UnitQuaternion<f64> {
    let step = UnitQuaternion::from_scaled_axis(e_r * dt);
    let out = step.into_inner() * q.into_inner();
    UnitQuaternion::from_quaternion(out)
}

/// Quaternion product of `q` with the pure quaternion `(0, v)`.
#[allow(dead_code)]
pub(crate) fn quat_mul_vec(q: &Quaternion<f64>, v: &Vector3<f64>) -> Quaternion<f64> {
    q * Quaternion::from_parts(0.0, *v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_rotation(rng: &mut StdRng) -> Matrix3<f64> {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let angle = rng.gen_range(-3.0..3.0);
        exp_rotation(&axis, angle)
    }

    fn random_pose(rng: &mut StdRng) -> Pose {
        Pose::new(
            random_rotation(rng),
            Vector3::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            ),
        )
    }

    fn frobenius(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        (a - b).norm()
    }

    #[test]
    fn hat_zero_twist_is_zero_matrix() {
        assert_eq!(hat(&Twist::zero()), Matrix4::zeros());
    }

    #[test]
    fn hat_unit_z_rotation() {
        let m = hat(&Twist::new(Vector3::new(0.0, 0.0, 1.0), Vector3::zeros()));
        assert_eq!(m[(0, 1)], -1.0);
        assert_eq!(m[(1, 0)], 1.0);
        assert_eq!(m[(0, 0)], 0.0);
        assert_eq!(m[(1, 1)], 0.0);
        assert_eq!(m[(2, 2)], 0.0);
        assert_eq!(m[(0, 2)], 0.0);
        assert_eq!(m[(1, 2)], 0.0);
    }

    #[test]
    fn vee_inverts_hat() {
        let t = Twist::new(Vector3::new(0.3, -0.2, 0.7), Vector3::new(1.0, -2.0, 0.5));
        let back = vee(&hat(&t)).unwrap();
        assert_eq!(back, t);
        assert_eq!(vee(&Matrix4::zeros()).unwrap(), Twist::zero());
    }

    #[test]
    fn vee_rejects_symmetric_perturbation() {
        let mut m = hat(&Twist::new(Vector3::new(0.1, 0.2, 0.3), Vector3::zeros()));
        m[(0, 1)] += 1e-6;
        assert!(matches!(vee(&m), Err(Error::NotTangent { .. })));
    }

    #[test]
    fn exp_rotation_identity_and_quarter_turn() {
        assert_eq!(exp_rotation(&Vector3::zeros(), 3.7), Matrix3::identity());
        let r = exp_rotation(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2), 1.0);
        let mapped = r * Vector3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(mapped, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn exp_rotation_matches_truncated_series() {
        // 4th-order truncated matrix exponential as an independent oracle
        // for small increments.
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..200 {
            let omega: Vector3<f64> = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let dt: f64 = rng.gen_range(0.0..0.1) / omega.norm().max(1.0);
            if (omega * dt).norm() > 0.1 {
                continue;
            }
            let k = skew(&(omega * dt));
            // Sixth-order truncation: the remainder is below 1e-10 over the
            // whole increment range, so 1e-9 agreement is meaningful.
            let k2 = k * k;
            let k3 = k2 * k;
            let series = Matrix3::identity()
                + k
                + k2 / 2.0
                + k3 / 6.0
                + (k2 * k2) / 24.0
                + (k3 * k2) / 120.0
                + (k3 * k3) / 720.0;
            assert!(frobenius(&exp_rotation(&omega, dt), &series) < 1e-9);
        }
    }

    #[test]
    fn exp_rotation_stays_orthonormal_near_zero_and_pi() {
        let mut rng = StdRng::seed_from_u64(12);
        for i in 0..200 {
            let axis = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            let angle = match i % 4 {
                0 => rng.gen_range(0.0..1e-7),
                1 => std::f64::consts::PI - rng.gen_range(0.0..1e-6),
                _ => rng.gen_range(0.0..std::f64::consts::PI),
            };
            let r = exp_rotation(&(axis * angle), 1.0);
            assert!(frobenius(&(r.transpose() * r), &Matrix3::identity()) < 1e-9);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn project_zero_and_idempotent_on_tangent() {
        assert_eq!(project_se3(&Matrix4::zeros()), Matrix4::zeros());
        let m = hat(&Twist::new(Vector3::new(0.2, -0.1, 0.4), Vector3::new(1.0, 2.0, 3.0)));
        assert_eq!(project_se3(&m), m);
    }

    #[test]
    fn project_second_order_remainder() {
        // For M = exp(hat(t)) - I with a small twist, the projection differs
        // from hat(t) only at second order.
        let t = Twist::new(
            Vector3::new(0.006, -0.008, 0.0046),
            Vector3::new(0.002, 0.005, -0.004),
        );
        let pose = Pose::new(exp_rotation(&t.omega, 1.0), t.mu);
        let displacement = pose.to_homogeneous() - Matrix4::identity();
        let diff = (project_se3(&displacement) - hat(&t)).norm();
        assert!(diff < 1e-4 * t.norm(), "remainder {diff:.3e} vs twist {:.3e}", t.norm());
    }

    #[test]
    fn quat_integrate_zero_rate_is_identity_step() {
        let q = UnitQuaternion::from_scaled_axis(Vector3::new(0.4, -0.2, 0.9));
        assert_eq!(quat_integrate(&q, &Vector3::zeros(), 0.02), q);
    }

    #[test]
    fn quat_integrate_matches_rotation_exponential() {
        let q = quat_integrate(
            &UnitQuaternion::identity(),
            &Vector3::new(0.0, 0.0, 1.0),
            0.02,
        );
        let r = exp_rotation(&Vector3::new(0.0, 0.0, 1.0), 0.02);
        assert!(frobenius(&q.to_rotation_matrix().into_inner(), &r) < 1e-6);
    }

    #[test]
    fn quat_integrate_full_revolution() {
        let omega = Vector3::new(0.0, 0.0, 0.314);
        let mut q = UnitQuaternion::identity();
        for _ in 0..1000 {
            q = quat_integrate(&q, &omega, 0.02);
        }
        // 1000 * 0.314 * 0.02 = 6.28 rad, i.e. one full turn minus a sliver.
        let residual = q.angle();
        let expected = (2.0 * std::f64::consts::PI - 6.28).abs();
        assert!((residual - expected).abs() < 1e-3, "residual yaw {residual}");
    }

    #[test]
    fn quaternion_and_matrix_paths_agree_over_long_runs() {
        let mut rng = StdRng::seed_from_u64(5);
        let mut r = Matrix3::identity();
        let mut q = UnitQuaternion::identity();
        for _ in 0..1000 {
            let omega = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let omega = if omega.norm() > 1.0 { omega.normalize() } else { omega };
            r *= exp_rotation(&omega, 0.02);
            q = quat_integrate(&q, &omega, 0.02);
        }
        assert!(frobenius(&q.to_rotation_matrix().into_inner(), &r) < 1e-5);
    }

    #[test]
    fn compose_with_identity_and_double_inverse() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            let pi = p.compose(&Pose::identity());
            assert_relative_eq!(pi.translation, p.translation, epsilon = 1e-12);
            assert!(frobenius(&pi.rotation, &p.rotation) < 1e-12);
            let back = p.inverse().inverse();
            assert!(frobenius(&back.rotation, &p.rotation) < 1e-9);
            assert_relative_eq!(back.translation, p.translation, epsilon = 1e-9);
        }
    }

    #[test]
    fn compose_matches_point_mapping() {
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..100 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let p = Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            assert_relative_eq!(a.compose(&b).apply(&p), a.apply(&b.apply(&p)), epsilon = 1e-9);
        }
    }

    #[test]
    fn group_laws_hold_on_random_poses() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..1000 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let c = random_pose(&mut rng);
            // Associativity.
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            assert!(frobenius(&left.rotation, &right.rotation) < 1e-9);
            assert!((left.translation - right.translation).norm() < 1e-9);
            // Inverse law.
            let e = a.compose(&a.inverse());
            assert!(frobenius(&e.rotation, &Matrix3::identity()) < 1e-9);
            assert!(e.translation.norm() < 1e-9);
        }
    }

    proptest::proptest! {
        #[test]
        fn hat_vee_roundtrip(
            wx in -10.0f64..10.0, wy in -10.0f64..10.0, wz in -10.0f64..10.0,
            mx in -10.0f64..10.0, my in -10.0f64..10.0, mz in -10.0f64..10.0,
        ) {
            let t = Twist::new(Vector3::new(wx, wy, wz), Vector3::new(mx, my, mz));
            proptest::prop_assert_eq!(vee(&hat(&t)).unwrap(), t);
        }
    }
}
