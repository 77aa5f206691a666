//! Flat key = value configuration covering every tunable of the pipeline.
//! Unknown keys are errors so typos fail loudly.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::icp::IcpParams;
use crate::iekf::{ErrorFrame, RejectionGates};
use crate::sim::{CameraModel, SensorNoise, SensorRates};
use crate::Cov6;

#[derive(Debug, Clone)]
pub struct Config {
    // icp.*
    pub icp_max_iterations: usize,
    pub icp_translation_tolerance: f64,
    pub icp_rotation_tolerance: f64,
    pub icp_max_correspondence_distance: f64,
    pub icp_min_correspondences: usize,
    pub icp_coarse_max_iterations: usize,
    /// Voxel size for downsampling the source scan before fine
    /// registration; 0 disables.
    pub icp_source_voxel: f64,
    pub icp_gradient_jump_threshold: f64,
    pub icp_vertical_gradients: bool,
    /// Initialise the registration from the gyro prediction in the
    /// icp-only baseline too.
    pub icp_use_gyro_init: bool,

    // iekf.*
    pub iekf_sigma_sensor: f64,
    pub iekf_gyro_noise_std: f64,
    pub iekf_trans_prior_std_xy: f64,
    pub iekf_trans_prior_std_z: f64,
    pub iekf_p0: f64,
    pub iekf_error_frame: ErrorFrame,
    pub iekf_residual_gate_sigmas: f64,
    pub iekf_mahalanobis_gate: f64,
    pub iekf_max_condition: f64,
    /// Rotation renormalisation cadence in prediction steps.
    pub iekf_renorm_interval: usize,

    // cov.*
    pub cov_use_all_map_points: bool,
    pub cov_recenter: bool,
    pub cov_weak_threshold: f64,

    // map.*
    pub map_voxel: f64,
    /// Register against the previous scan instead of the accumulated map.
    pub map_scan_to_scan: bool,

    // sim.*
    pub sim_scene: String,
    pub sim_gyro_hz: f64,
    pub sim_scan_hz: f64,
    pub sim_depth_sigma: f64,
    pub sim_gyro_noise_std: f64,
    pub sim_gyro_bias: Vector3<f64>,
    pub sim_yaw_rate: f64,
    pub sim_speed: f64,
    pub sim_width: usize,
    pub sim_height: usize,
    pub sim_hfov_deg: f64,
    pub sim_max_range: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            icp_max_iterations: 100,
            icp_translation_tolerance: 1e-4,
            icp_rotation_tolerance: 1e-4,
            icp_max_correspondence_distance: 1.0,
            icp_min_correspondences: 30,
            icp_coarse_max_iterations: 10,
            icp_source_voxel: 0.15,
            icp_gradient_jump_threshold: 1.0,
            icp_vertical_gradients: false,
            icp_use_gyro_init: false,
            iekf_sigma_sensor: 0.2,
            iekf_gyro_noise_std: 0.02,
            iekf_trans_prior_std_xy: 0.5,
            iekf_trans_prior_std_z: 0.25,
            iekf_p0: 1e-4,
            iekf_error_frame: ErrorFrame::Ground,
            iekf_residual_gate_sigmas: 3.0,
            iekf_mahalanobis_gate: crate::iekf::CHI2_6DOF_99,
            iekf_max_condition: crate::covariance::DEFAULT_MAX_CONDITION,
            iekf_renorm_interval: 1000,
            cov_use_all_map_points: false,
            cov_recenter: false,
            cov_weak_threshold: crate::covariance::DEFAULT_WEAK_THRESHOLD,
            map_voxel: 0.15,
            map_scan_to_scan: false,
            sim_scene: "box_room".into(),
            sim_gyro_hz: 50.0,
            sim_scan_hz: 2.0,
            sim_depth_sigma: 0.2,
            sim_gyro_noise_std: 0.02,
            sim_gyro_bias: Vector3::zeros(),
            sim_yaw_rate: 0.18,
            sim_speed: 0.5,
            sim_width: 160,
            sim_height: 120,
            sim_hfov_deg: 60.0,
            sim_max_range: 8.0,
        }
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("bad value '{value}' for key {key}"))
}

impl Config {
    /// Applies one key = value override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = |v: &str| v.parse::<f64>().map_err(|_| bad(key, v));
        let u = |v: &str| v.parse::<usize>().map_err(|_| bad(key, v));
        let b = |v: &str| match v {
            "true" | "1" | "on" => Ok(true),
            "false" | "0" | "off" => Ok(false),
            _ => Err(bad(key, v)),
        };
        match key {
            "icp.max_iterations" => self.icp_max_iterations = u(value)?,
            "icp.translation_tolerance" => self.icp_translation_tolerance = f(value)?,
            "icp.rotation_tolerance" => self.icp_rotation_tolerance = f(value)?,
            "icp.max_correspondence_distance" => {
                self.icp_max_correspondence_distance = f(value)?
            }
            "icp.min_correspondences" => self.icp_min_correspondences = u(value)?,
            "icp.coarse_max_iterations" => self.icp_coarse_max_iterations = u(value)?,
            "icp.source_voxel" => self.icp_source_voxel = f(value)?,
            "icp.gradient_jump_threshold" => self.icp_gradient_jump_threshold = f(value)?,
            "icp.vertical_gradients" => self.icp_vertical_gradients = b(value)?,
            "icp.use_gyro_init" => self.icp_use_gyro_init = b(value)?,
            "iekf.sigma_sensor" => self.iekf_sigma_sensor = f(value)?,
            "iekf.gyro_noise_std" => self.iekf_gyro_noise_std = f(value)?,
            "iekf.trans_prior_std_xy" => self.iekf_trans_prior_std_xy = f(value)?,
            "iekf.trans_prior_std_z" => self.iekf_trans_prior_std_z = f(value)?,
            "iekf.p0" => self.iekf_p0 = f(value)?,
            "iekf.error_frame" => {
                self.iekf_error_frame = match value {
                    "ground" => ErrorFrame::Ground,
                    "body" => ErrorFrame::Body,
                    _ => return Err(bad(key, value)),
                }
            }
            "iekf.residual_gate_sigmas" => self.iekf_residual_gate_sigmas = f(value)?,
            "iekf.mahalanobis_gate" => self.iekf_mahalanobis_gate = f(value)?,
            "iekf.max_condition" => self.iekf_max_condition = f(value)?,
            "iekf.renorm_interval" => self.iekf_renorm_interval = u(value)?,
            "cov.use_all_map_points" => self.cov_use_all_map_points = b(value)?,
            "cov.recenter" => self.cov_recenter = b(value)?,
            "cov.weak_threshold" => self.cov_weak_threshold = f(value)?,
            "map.voxel" => self.map_voxel = f(value)?,
            "map.scan_to_scan" => self.map_scan_to_scan = b(value)?,
            "sim.scene" => self.sim_scene = value.to_string(),
            "sim.gyro_hz" => self.sim_gyro_hz = f(value)?,
            "sim.scan_hz" => self.sim_scan_hz = f(value)?,
            "sim.depth_sigma" => self.sim_depth_sigma = f(value)?,
            "sim.gyro_noise_std" => self.sim_gyro_noise_std = f(value)?,
            "sim.gyro_bias_x" => self.sim_gyro_bias.x = f(value)?,
            "sim.gyro_bias_y" => self.sim_gyro_bias.y = f(value)?,
            "sim.gyro_bias_z" => self.sim_gyro_bias.z = f(value)?,
            "sim.yaw_rate" => self.sim_yaw_rate = f(value)?,
            "sim.speed" => self.sim_speed = f(value)?,
            "sim.width" => self.sim_width = u(value)?,
            "sim.height" => self.sim_height = u(value)?,
            "sim.hfov_deg" => self.sim_hfov_deg = f(value)?,
            "sim.max_range" => self.sim_max_range = f(value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parses a config file body: one `key = value` per line, `#` comments.
    pub fn parse(text: &str) -> Result<Config> {
        let mut config = Config::default();
        config.apply(text)?;
        Ok(config)
    }

    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", i + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn icp_params(&self) -> IcpParams {
        IcpParams {
            max_iterations: self.icp_max_iterations,
            translation_tolerance: self.icp_translation_tolerance,
            rotation_tolerance: self.icp_rotation_tolerance,
            max_correspondence_distance: self.icp_max_correspondence_distance,
            min_correspondences: self.icp_min_correspondences,
        }
    }

    /// Motion-noise covariance per second assembled from the configured
    /// standard deviations.
    pub fn motion_noise(&self) -> Cov6 {
        let mut m = Cov6::zeros();
        for i in 0..3 {
            m[(i, i)] = self.iekf_gyro_noise_std * self.iekf_gyro_noise_std;
        }
        m[(3, 3)] = self.iekf_trans_prior_std_xy * self.iekf_trans_prior_std_xy;
        m[(4, 4)] = self.iekf_trans_prior_std_xy * self.iekf_trans_prior_std_xy;
        m[(5, 5)] = self.iekf_trans_prior_std_z * self.iekf_trans_prior_std_z;
        m
    }

    pub fn gates(&self) -> RejectionGates {
        RejectionGates {
            residual_sigmas: self.iekf_residual_gate_sigmas,
            mahalanobis: self.iekf_mahalanobis_gate,
            max_condition: self.iekf_max_condition,
        }
    }

    pub fn sensor_rates(&self) -> SensorRates {
        SensorRates { gyro_hz: self.sim_gyro_hz, scan_hz: self.sim_scan_hz }
    }

    pub fn sensor_noise(&self) -> SensorNoise {
        SensorNoise {
            depth_sigma: self.sim_depth_sigma,
            gyro_noise_std: self.sim_gyro_noise_std,
            gyro_bias: self.sim_gyro_bias,
        }
    }

    pub fn camera_model(&self) -> CameraModel {
        CameraModel::from_fov(
            self.sim_width,
            self.sim_height,
            self.sim_hfov_deg.to_radians(),
            self.sim_max_range,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_known_keys_and_comments() {
        let cfg = Config::parse(
            "# comment\n\
             icp.max_iterations = 7\n\
             iekf.sigma_sensor = 0.15\n\
             map.scan_to_scan = true\n\
             sim.gyro_bias_z = 0.01\n",
        )
        .unwrap();
        assert_eq!(cfg.icp_max_iterations, 7);
        assert_eq!(cfg.iekf_sigma_sensor, 0.15);
        assert!(cfg.map_scan_to_scan);
        assert_eq!(cfg.sim_gyro_bias.z, 0.01);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(matches!(
            Config::parse("icp.max_iter = 7\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            Config::parse("icp.max_iterations = seven\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(Config::parse("just a line\n"), Err(Error::Config(_))));
    }

    #[test]
    fn default_motion_noise_matches_filter_default() {
        let cfg = Config::default();
        assert_eq!(cfg.motion_noise(), crate::iekf::default_motion_noise());
    }
}
