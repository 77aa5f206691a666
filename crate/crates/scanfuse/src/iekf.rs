//! Invariant extended Kalman filter on SE(3).
//!
//! Prediction integrates gyro rates into the rotation open loop (the gyro
//! says nothing about translation). At each pose observation the discrete
//! Riccati recursion produces the gain, the pose discrepancy is projected
//! onto a twist in the ground frame, and the correction is applied
//! multiplicatively, so the state never leaves SE(3) and needs no ad-hoc
//! reprojection. The error covariance lives over the ground-frame twist
//! error and evolves independently of the trajectory.

use nalgebra::{Matrix6, Vector3};

use crate::covariance::ObservabilityReport;
use crate::error::{Error, Result};
use crate::icp::IcpResult;
use crate::se3::{exp_rotation, project_se3, vee, Pose, Twist};
use crate::Cov6;

/// 99% quantile of the chi-square distribution with 6 degrees of freedom.
pub const CHI2_6DOF_99: f64 = 16.81;

/// Filter state: estimated body-to-ground pose, twist-error covariance, and
/// the timestamp the state has been propagated to.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub pose: Pose,
    pub p: Cov6,
    /// Time (seconds) the state is valid at; prediction advances it, the
    /// update applies at the current stamp.
    pub time: f64,
}

impl FilterState {
    pub fn new(pose: Pose, p0: Cov6, time: f64) -> Self {
        FilterState { pose, p: p0, time }
    }
}

/// Process and sensor noise levels.
#[derive(Debug, Clone)]
pub struct NoiseConfig {
    /// Motion (process) noise covariance per second, ground frame:
    /// rotational block then translational block.
    pub m: Cov6,
    /// Depth-sensor noise standard deviation (meters) feeding the
    /// observation covariance.
    pub sigma_sensor: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { m: default_motion_noise(), sigma_sensor: 0.2 }
    }
}

/// Default motion prior: isotropic 0.02 rad/s gyro noise, hand-carried
/// translation uncertainty of 0.5 m/s horizontally and 0.25 m/s vertically.
pub fn default_motion_noise() -> Cov6 {
    let mut m = Matrix6::zeros();
    for i in 0..3 {
        m[(i, i)] = 0.02 * 0.02;
    }
    m[(3, 3)] = 0.5 * 0.5;
    m[(4, 4)] = 0.5 * 0.5;
    m[(5, 5)] = 0.25 * 0.25;
    m
}

/// Why an observation was rejected by the gating logic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectionReason {
    NoConvergence,
    ResidualGate,
    MahalanobisGate,
    IllConditioned,
    InsufficientOverlap,
}

impl RejectionReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectionReason::NoConvergence => "no convergence",
            RejectionReason::ResidualGate => "residual gate",
            RejectionReason::MahalanobisGate => "mahalanobis gate",
            RejectionReason::IllConditioned => "ill-conditioned",
            RejectionReason::InsufficientOverlap => "insufficient overlap",
        }
    }
}

/// Validity of a pose observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationStatus {
    Valid,
    Rejected(RejectionReason),
}

impl ObservationStatus {
    pub fn is_valid(&self) -> bool {
        matches!(self, ObservationStatus::Valid)
    }
}

/// Pose observation handed to the filter: the registered pose, its
/// covariance, and the gating verdict.
#[derive(Debug, Clone)]
pub struct Observation {
    pub y: Pose,
    pub n: Cov6,
    pub status: ObservationStatus,
}

/// Which frame the pose discrepancy is formed in before projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorFrame {
    /// Discrepancy `Y * X_hat^-1` (ground frame); the frame the error
    /// dynamics and gain are derived in.
    #[default]
    Ground,
    /// Discrepancy `X_hat^-1 * Y` (body frame); kept for comparison.
    Body,
}

/// Open-loop gyro prediction: right-multiplies the rotation by the rate
/// increment, leaves translation and covariance untouched (covariance
/// growth is folded into the Riccati step at observation time).
pub fn predict(state: &FilterState, omega_m: &Vector3<f64>, dt: f64) -> FilterState {
    assert!(dt > 0.0, "prediction needs a positive time step");
    FilterState {
        pose: Pose {
            rotation: state.pose.rotation * exp_rotation(omega_m, dt),
            translation: state.pose.translation,
        },
        p: state.p,
        time: state.time + dt,
    }
}

/// One step of the discrete Riccati recursion:
/// `K = P (P + N)^-1 / dt`, `P' = M dt + P - P (P + N)^-1 P`,
/// with the posterior re-symmetrised.
pub fn discrete_gain(p: &Cov6, n: &Cov6, m: &Cov6, dt: f64) -> Result<(Matrix6<f64>, Cov6)> {
    assert!(dt > 0.0, "update interval must be positive");
    let s = p + n;
    let s_inv = s.try_inverse().ok_or(Error::Singular("discrete gain (P + N)"))?;
    let p_s_inv = p * s_inv;
    let k = p_s_inv / dt;
    let p_next = m * dt + p - p_s_inv * p;
    Ok((k, (p_next + p_next.transpose()) * 0.5))
}

/// Stationary gain `(M N^-1)^(1/2)` the Riccati recursion converges to for
/// constant noise levels: the principal square root computed through the
/// symmetric eigenbasis of `N`.
pub fn stationary_gain(m: &Cov6, n: &Cov6) -> Result<Matrix6<f64>> {
    let n_eig = ((n + n.transpose()) * 0.5).symmetric_eigen();
    if n_eig.eigenvalues.min() <= 0.0 {
        return Err(Error::Singular("stationary gain (N not positive definite)"));
    }
    let mut sqrt_d = Matrix6::zeros();
    let mut inv_sqrt_d = Matrix6::zeros();
    for i in 0..6 {
        let r = n_eig.eigenvalues[i].sqrt();
        sqrt_d[(i, i)] = r;
        inv_sqrt_d[(i, i)] = 1.0 / r;
    }
    let q = n_eig.eigenvectors;
    let n_sqrt = q * sqrt_d * q.transpose();
    let n_inv_sqrt = q * inv_sqrt_d * q.transpose();
    // M N^-1 is similar to the symmetric matrix S = N^-1/2 M N^-1/2, so its
    // principal root is N^1/2 S^1/2 N^-1/2.
    let s = n_inv_sqrt * m * n_inv_sqrt;
    let s_eig = ((s + s.transpose()) * 0.5).symmetric_eigen();
    let mut sqrt_s = Matrix6::zeros();
    for i in 0..6 {
        sqrt_s[(i, i)] = s_eig.eigenvalues[i].max(0.0).sqrt();
    }
    let s_root = s_eig.eigenvectors * sqrt_s * s_eig.eigenvectors.transpose();
    Ok(n_sqrt * s_root * n_inv_sqrt)
}

/// Twist innovation: the near-identity discrepancy between the observed and
/// estimated poses, skew-projected onto se(3).
pub fn innovation_twist(x_hat: &Pose, y: &Pose, frame: ErrorFrame) -> Twist {
    let d = match frame {
        ErrorFrame::Ground => y.compose(&x_hat.inverse()),
        ErrorFrame::Body => x_hat.inverse().compose(y),
    };
    let displacement = d.to_homogeneous() - nalgebra::Matrix4::identity();
    let projected = project_se3(&displacement);
    vee(&projected).expect("projection output is exactly skew")
}

/// Correction twist `e = K * vee(project(Y X_hat^-1 - I))`; zero whenever
/// the observation agrees with the estimate.
pub fn innovation_correction(x_hat: &Pose, y: &Pose, k: &Matrix6<f64>) -> Twist {
    let z = innovation_twist(x_hat, y, ErrorFrame::Ground);
    Twist::from_vector(&(k * z.as_vector()))
}

/// Result of an update step: the new state plus the applied correction and
/// gain for logging (absent when the observation was rejected).
#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    pub state: FilterState,
    pub correction: Option<Twist>,
    pub gain: Option<Matrix6<f64>>,
}

/// Low-frequency update at an observation. A rejected observation leaves
/// the pose at its prediction and only grows the covariance by `M dt`.
///
/// The gain carries a 1/dt that the correction application cancels, so the
/// applied step is the standard discrete one: `K dt = P (P + N)^-1`.
pub fn update(
    state: &FilterState,
    obs: &Observation,
    m: &Cov6,
    dt: f64,
    frame: ErrorFrame,
) -> Result<UpdateOutcome> {
    assert!(dt > 0.0, "update interval must be positive");
    if !obs.status.is_valid() {
        return Ok(UpdateOutcome {
            state: FilterState { pose: state.pose, p: state.p + m * dt, time: state.time },
            correction: None,
            gain: None,
        });
    }
    let (k, p_next) = discrete_gain(&state.p, &obs.n, m, dt)?;
    let z = innovation_twist(&state.pose, &obs.y, frame);
    let e = Twist::from_vector(&(k * z.as_vector()));
    let pose = apply_correction(&state.pose, &e, dt);
    Ok(UpdateOutcome {
        state: FilterState { pose, p: p_next, time: state.time },
        correction: Some(e),
        gain: Some(k),
    })
}

/// Applies the ground-frame correction twist over `dt`:
/// left-multiplicative rotation step, coupled translation step.
pub fn apply_correction(pose: &Pose, e: &Twist, dt: f64) -> Pose {
    Pose {
        rotation: exp_rotation(&e.omega, dt) * pose.rotation,
        translation: pose.translation + (e.omega.cross(&pose.translation) + e.mu) * dt,
    }
}

/// Observation gating thresholds.
#[derive(Debug, Clone)]
pub struct RejectionGates {
    /// Mean-residual gate as a multiple of the sensor noise.
    pub residual_sigmas: f64,
    /// Innovation Mahalanobis gate (chi-square quantile, 6 dof).
    pub mahalanobis: f64,
    /// Fisher condition-number cutoff.
    pub max_condition: f64,
}

impl Default for RejectionGates {
    fn default() -> Self {
        RejectionGates {
            residual_sigmas: 3.0,
            mahalanobis: CHI2_6DOF_99,
            max_condition: crate::covariance::DEFAULT_MAX_CONDITION,
        }
    }
}

/// Decides whether a registration result may be fused: it must have
/// converged, with a mean residual within the gate, an innovation whose
/// Mahalanobis distance under `P + N` is plausible, and a well-conditioned
/// Fisher matrix.
pub fn reject_observation(
    result: &IcpResult,
    report: &ObservabilityReport,
    innovation: &Twist,
    p: &Cov6,
    n: &Cov6,
    sigma_sensor: f64,
    gates: &RejectionGates,
) -> ObservationStatus {
    if !result.converged {
        return ObservationStatus::Rejected(RejectionReason::NoConvergence);
    }
    if result.final_mean_residual > gates.residual_sigmas * sigma_sensor {
        return ObservationStatus::Rejected(RejectionReason::ResidualGate);
    }
    if report.condition_number() > gates.max_condition {
        return ObservationStatus::Rejected(RejectionReason::IllConditioned);
    }
    let s = p + n;
    match s.try_inverse() {
        Some(s_inv) => {
            let z = innovation.as_vector();
            let d2 = (z.transpose() * s_inv * z)[(0, 0)];
            if d2 > gates.mahalanobis {
                return ObservationStatus::Rejected(RejectionReason::MahalanobisGate);
            }
        }
        None => return ObservationStatus::Rejected(RejectionReason::IllConditioned),
    }
    ObservationStatus::Valid
}

/// Gain trajectory of the discrete Riccati recursion under constant noise,
/// alongside the closed-form stationary gain.
pub struct GainStudy {
    pub gains: Vec<Matrix6<f64>>,
    pub stationary: Matrix6<f64>,
    pub p_final: Cov6,
}

/// Iterates the recursion for `steps` updates of length `dt`.
///
/// The constant pair (M, N) is treated as continuous-time noise densities
/// and fed through the standard discrete conversion (`Q = M dt` inside the
/// recursion, `R = N / dt`), so the recorded gains converge to
/// `stationary_gain(M, N)` as `dt` shrinks.
pub fn gain_study(m: &Cov6, n: &Cov6, dt: f64, steps: usize, p0: &Cov6) -> Result<GainStudy> {
    let stationary = stationary_gain(m, n)?;
    let n_discrete = n / dt;
    let mut p = *p0;
    let mut gains = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (k, p_next) = discrete_gain(&p, &n_discrete, m, dt)?;
        gains.push(k);
        p = p_next;
    }
    Ok(GainStudy { gains, stationary, p_final: p })
}
