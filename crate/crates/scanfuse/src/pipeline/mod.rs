//! The two-rate fusion loop: open-loop gyro prediction between scans; on
//! each scan a coarse feature alignment, full-cloud registration against
//! the accumulated map, covariance extraction, observation gating, filter
//! update, and map insertion. The icp-only and gyro-only baselines run the
//! same loop with the filter bypassed.

mod config;
mod report;

pub use config::Config;
pub use report::{
    evaluate, format_metrics, load_report_csv, rotation_error_vector, write_filter_log,
    write_report_csv, write_series_csv, ErrorSample, Metrics, RunMode, RunReport, ScanRecord,
};

use std::collections::{HashMap, HashSet};

use nalgebra::{UnitQuaternion, Vector3};

use crate::covariance::{analyze_observability, fisher_matrix, invert_fisher};
use crate::error::{Error, Result};
use crate::icp::{coarse_align, icp_register, IcpResult};
use crate::iekf::{
    predict, reject_observation, update, FilterState, Observation, ObservationStatus,
    RejectionReason,
};
use crate::pointcloud::{
    build_index, depth_to_cloud, extract_depth_gradient_points, voxel_key, write_ply_ascii,
    PointCloud, SpatialIndex,
};
use crate::se3::{quat_correct, quat_integrate, Pose};
use crate::sim::SensorRun;
use crate::Cov6;

/// Accumulated ground-frame map: every inserted point is kept for export,
/// a voxel-downsampled copy (regenerated on every insertion batch) serves
/// as the registration target, and gradient features accumulate alongside
/// for the coarse stage.
pub struct GlobalMap {
    raw: Vec<Vector3<f64>>,
    matching: PointCloud,
    matching_index: Option<SpatialIndex>,
    features: PointCloud,
    feature_index: Option<SpatialIndex>,
    /// Per-voxel accumulator: slot in `matching`, running sum, count.
    cells: HashMap<(i64, i64, i64), (usize, Vector3<f64>, f64)>,
    feature_seen: HashSet<(i64, i64, i64)>,
    voxel: f64,
    /// Replace instead of accumulate: scan-to-previous-scan matching.
    scan_to_scan: bool,
}

impl GlobalMap {
    pub fn new(voxel: f64, scan_to_scan: bool) -> GlobalMap {
        GlobalMap {
            raw: Vec::new(),
            matching: PointCloud::new(),
            matching_index: None,
            features: PointCloud::new(),
            feature_index: None,
            cells: HashMap::new(),
            feature_seen: HashSet::new(),
            voxel,
            scan_to_scan,
        }
    }

    /// Inserts a scan already transformed into the ground frame.
    pub fn insert(&mut self, cloud: &PointCloud, features: &PointCloud) -> Result<()> {
        self.raw.extend_from_slice(&cloud.points);
        if self.scan_to_scan {
            self.matching = cloud.voxel_downsampled(self.voxel);
            self.features = features.clone();
        } else {
            // Matching copy holds the running per-voxel centroid, so the
            // sensor fuzz averages toward the surface as cells are
            // revisited. Slot order is first-seen, which keeps insertion
            // deterministic.
            if self.voxel <= 0.0 {
                self.matching.points.extend_from_slice(&cloud.points);
            } else {
                for p in &cloud.points {
                    let key = voxel_key(p, self.voxel);
                    match self.cells.get_mut(&key) {
                        Some((slot, sum, count)) => {
                            *sum += p;
                            *count += 1.0;
                            self.matching.points[*slot] = *sum / *count;
                        }
                        None => {
                            let slot = self.matching.points.len();
                            self.matching.points.push(*p);
                            self.cells.insert(key, (slot, *p, 1.0));
                        }
                    }
                }
            }
            for p in &features.points {
                if self.voxel <= 0.0 || self.feature_seen.insert(voxel_key(p, self.voxel)) {
                    self.features.points.push(*p);
                }
            }
        }
        self.matching_index =
            if self.matching.is_empty() { None } else { Some(build_index(&self.matching)?) };
        self.feature_index =
            if self.features.is_empty() { None } else { Some(build_index(&self.features)?) };
        Ok(())
    }

    pub fn point_count(&self) -> usize {
        self.raw.len()
    }

    pub fn matching_count(&self) -> usize {
        self.matching.len()
    }

    pub fn matching_index(&self) -> Option<&SpatialIndex> {
        self.matching_index.as_ref()
    }

    pub fn features(&self) -> &PointCloud {
        &self.features
    }

    pub fn raw_points(&self) -> &[Vector3<f64>] {
        &self.raw
    }

    /// Writes every accumulated point as an ASCII PLY file.
    pub fn export_ply(&self, path: &std::path::Path) -> Result<()> {
        write_ply_ascii(&PointCloud::from_points(self.raw.clone()), path)
    }
}

/// Registration outcome for one scan before gating.
struct ScanObservation {
    result: Option<IcpResult>,
    y: Option<Pose>,
    n: Option<Cov6>,
    status: ObservationStatus,
    trace_n: Option<(f64, f64)>,
}

pub fn run_fusion(run: &SensorRun, config: &Config) -> Result<RunReport> {
    run_pipeline(run, config, RunMode::Fused)
}

pub fn run_icp_only(run: &SensorRun, config: &Config) -> Result<RunReport> {
    run_pipeline(run, config, RunMode::IcpOnly)
}

pub fn run_gyro_only(run: &SensorRun, config: &Config) -> Result<RunReport> {
    run_pipeline(run, config, RunMode::GyroOnly)
}

/// Executes the fusion loop (or a baseline) over a sensor run, producing
/// per-scan records in the world frame. The map is exported separately via
/// [`run_pipeline_with_map`].
pub fn run_pipeline(run: &SensorRun, config: &Config, mode: RunMode) -> Result<RunReport> {
    run_pipeline_with_map(run, config, mode).map(|(report, _)| report)
}

pub fn run_pipeline_with_map(
    run: &SensorRun,
    config: &Config,
    mode: RunMode,
) -> Result<(RunReport, GlobalMap)> {
    if run.scans.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let first_scan_t = run.scans[0].0;
    let g0 = *run
        .truth_at(first_scan_t)
        .ok_or(Error::Parse { what: "sensor run", line: 0, message: "no truth at first scan".into() })?;

    let m = config.motion_noise();
    let gates = config.gates();
    let sigma = config.iekf_sigma_sensor;
    let params = config.icp_params();
    let coarse_params = params.with_max_iterations(config.icp_coarse_max_iterations);

    // The first scan defines the filter's ground frame.
    let mut filter = FilterState::new(Pose::identity(), Cov6::identity() * config.iekf_p0, first_scan_t);
    let mut gyro_shadow = Pose::identity();
    let mut quat_shadow = UnitQuaternion::identity();
    let mut icp_pose = Pose::identity();
    let mut gyro_shadow_at_last_scan = gyro_shadow;

    let mut map = GlobalMap::new(config.map_voxel, config.map_scan_to_scan);
    let mut records: Vec<ScanRecord> = Vec::with_capacity(run.scans.len());
    let mut first_cloud: Option<PointCloud> = None;
    let mut last_cloud: Option<PointCloud> = None;
    let mut last_scan_t = first_scan_t;
    let mut last_event_t = f64::NEG_INFINITY;
    let mut steps_since_renorm = 0usize;

    let mut gi = 0usize;
    let mut si = 0usize;
    while gi < run.gyro.len() || si < run.scans.len() {
        let next_gyro = run.gyro.get(gi).map(|(t, _)| *t).unwrap_or(f64::INFINITY);
        let next_scan = run.scans.get(si).map(|(t, _)| *t).unwrap_or(f64::INFINITY);
        // Gyro samples carry the motion up to their timestamp, so at equal
        // stamps the sample applies before the scan update.
        if next_gyro <= next_scan {
            let (t, w) = &run.gyro[gi];
            gi += 1;
            if *t < last_event_t {
                return Err(Error::TimestampOrder { previous: last_event_t, current: *t });
            }
            last_event_t = *t;
            if *t < first_scan_t {
                continue; // before the map is bootstrapped
            }
            let dt = *t - filter.time;
            if dt <= 0.0 {
                continue;
            }
            filter = predict(&filter, w, dt);
            gyro_shadow = Pose {
                rotation: gyro_shadow.rotation * crate::se3::exp_rotation(w, dt),
                translation: gyro_shadow.translation,
            };
            quat_shadow = quat_integrate(&quat_shadow, w, dt);
            steps_since_renorm += 1;
            if config.iekf_renorm_interval > 0
                && steps_since_renorm >= config.iekf_renorm_interval
            {
                filter.pose = filter.pose.renormalized();
                gyro_shadow = gyro_shadow.renormalized();
                steps_since_renorm = 0;
            }
        } else {
            let (t, img) = &run.scans[si];
            si += 1;
            if *t < last_event_t {
                return Err(Error::TimestampOrder { previous: last_event_t, current: *t });
            }
            last_event_t = *t;
            let truth = *run
                .truth_at(*t)
                .ok_or(Error::Parse { what: "sensor run", line: 0, message: format!("no truth at t={t}") })?;

            let cloud_body = depth_to_cloud(img);
            let feats_body = extract_depth_gradient_points(
                img,
                config.icp_gradient_jump_threshold,
                config.icp_vertical_gradients,
            );

            if records.is_empty() {
                // Bootstrap: the first scan is placed at the known initial
                // pose (the identity of the filter frame).
                if cloud_body.is_empty() {
                    return Err(Error::EmptyCloud);
                }
                if mode != RunMode::GyroOnly {
                    map.insert(&cloud_body, &feats_body)?;
                    first_cloud = Some(cloud_body.clone());
                    last_cloud = Some(cloud_body);
                }
                records.push(ScanRecord {
                    time: *t,
                    estimate: g0,
                    icp_pose: None,
                    gyro_pose: g0,
                    truth,
                    innovation: None,
                    residual: 0.0,
                    iterations: 0,
                    correspondences: 0,
                    obs_valid: true,
                    reason: None,
                    trace_p_rot: trace_rot(&filter.p),
                    trace_p_trans: trace_trans(&filter.p),
                    trace_n_rot: None,
                    trace_n_trans: None,
                    k_trace: None,
                    quat_gap: 0.0,
                });
                last_scan_t = *t;
                gyro_shadow_at_last_scan = gyro_shadow;
                continue;
            }

            let dt_update = *t - last_scan_t;
            last_scan_t = *t;

            if mode == RunMode::GyroOnly {
                records.push(ScanRecord {
                    time: *t,
                    estimate: g0.compose(&filter.pose),
                    icp_pose: None,
                    gyro_pose: g0.compose(&gyro_shadow),
                    truth,
                    innovation: None,
                    residual: 0.0,
                    iterations: 0,
                    correspondences: 0,
                    obs_valid: false,
                    reason: None,
                    trace_p_rot: trace_rot(&filter.p),
                    trace_p_trans: trace_trans(&filter.p),
                    trace_n_rot: None,
                    trace_n_trans: None,
                    k_trace: None,
                    quat_gap: quat_gap(&filter.pose, &quat_shadow),
                });
                continue;
            }

            // Registration initial guess.
            let initial = match mode {
                RunMode::Fused => filter.pose,
                RunMode::IcpOnly => {
                    if config.icp_use_gyro_init {
                        let delta = gyro_shadow_at_last_scan.inverse().compose(&gyro_shadow);
                        icp_pose.compose(&delta)
                    } else {
                        icp_pose
                    }
                }
                RunMode::GyroOnly => unreachable!(),
            };
            gyro_shadow_at_last_scan = gyro_shadow;

            let obs = register_scan(
                &cloud_body,
                &feats_body,
                &map,
                &initial,
                &params,
                &coarse_params,
                config,
                &filter,
                sigma,
                &gates,
                mode,
            );

            let (estimate, innovation, k_trace, record_valid) = match mode {
                RunMode::Fused => {
                    let observation = Observation {
                        y: obs.y.unwrap_or(filter.pose),
                        n: obs.n.unwrap_or_else(|| Cov6::identity()),
                        status: obs.status,
                    };
                    let outcome = update(&filter, &observation, &m, dt_update, config.iekf_error_frame)?;
                    filter = outcome.state;
                    if let Some(e) = &outcome.correction {
                        quat_shadow = quat_correct(&quat_shadow, &e.omega, dt_update);
                    }
                    (
                        filter.pose,
                        outcome.correction,
                        outcome.gain.map(|k| k.trace()),
                        observation.status.is_valid(),
                    )
                }
                RunMode::IcpOnly => {
                    if obs.status.is_valid() {
                        icp_pose = obs.y.expect("valid observation has a pose");
                    }
                    (icp_pose, None, None, obs.status.is_valid())
                }
                RunMode::GyroOnly => unreachable!(),
            };

            // Map insertion at the mode's own pose estimate; a rejected
            // observation still inserts (at the prediction), the map is
            // never rolled back.
            if !cloud_body.is_empty() {
                let cloud_ground = cloud_body.transformed(&estimate);
                let feats_ground = feats_body.transformed(&estimate);
                map.insert(&cloud_ground, &feats_ground)?;
                if first_cloud.is_none() {
                    first_cloud = Some(cloud_ground.clone());
                }
                last_cloud = Some(cloud_ground);
            }

            let (result_residual, result_iterations, result_matches) = obs
                .result
                .as_ref()
                .map(|r| (r.final_mean_residual, r.iterations_used, r.correspondences_used()))
                .unwrap_or((f64::NAN, 0, 0));

            records.push(ScanRecord {
                time: *t,
                estimate: g0.compose(&estimate),
                icp_pose: obs.y.map(|y| g0.compose(&y)),
                gyro_pose: g0.compose(&gyro_shadow),
                truth,
                innovation,
                residual: result_residual,
                iterations: result_iterations,
                correspondences: result_matches,
                obs_valid: record_valid,
                reason: match obs.status {
                    ObservationStatus::Valid => None,
                    ObservationStatus::Rejected(r) => Some(r),
                },
                trace_p_rot: trace_rot(&filter.p),
                trace_p_trans: trace_trans(&filter.p),
                trace_n_rot: obs.trace_n.map(|x| x.0),
                trace_n_trans: obs.trace_n.map(|x| x.1),
                k_trace,
                quat_gap: quat_gap(&filter.pose, &quat_shadow),
            });
        }
    }

    let wall_overlap_m = match (&first_cloud, &last_cloud) {
        (Some(first), Some(last)) if records.len() > 1 && !first.is_empty() && !last.is_empty() => {
            Some(median_nn_distance(last, first))
        }
        _ => None,
    };

    Ok((
        RunReport { mode, records, map_points: map.point_count(), wall_overlap_m },
        map,
    ))
}

/// Registers one scan against the map and runs the gating chain.
#[allow(clippy::too_many_arguments)]
fn register_scan(
    cloud_body: &PointCloud,
    feats_body: &PointCloud,
    map: &GlobalMap,
    initial: &Pose,
    params: &crate::icp::IcpParams,
    coarse_params: &crate::icp::IcpParams,
    config: &Config,
    filter: &FilterState,
    sigma: f64,
    gates: &crate::iekf::RejectionGates,
    mode: RunMode,
) -> ScanObservation {
    let rejected = |reason: RejectionReason| ScanObservation {
        result: None,
        y: None,
        n: None,
        status: ObservationStatus::Rejected(reason),
        trace_n: None,
    };

    let Some(index) = map.matching_index() else {
        return rejected(RejectionReason::InsufficientOverlap);
    };
    if cloud_body.is_empty() {
        return rejected(RejectionReason::InsufficientOverlap);
    }

    let coarse = coarse_align(feats_body, map.features(), initial, coarse_params);
    // Centroid downsampling also averages the range noise inside each cell.
    let source = if config.icp_source_voxel > 0.0 {
        cloud_body.voxel_centroids(config.icp_source_voxel)
    } else {
        cloud_body.clone()
    };

    let result = match icp_register(&source, index, &coarse, params) {
        Ok(r) => r,
        Err(Error::InsufficientOverlap { .. }) => {
            return rejected(RejectionReason::InsufficientOverlap)
        }
        Err(Error::DegenerateGeometry { .. }) => {
            return rejected(RejectionReason::IllConditioned)
        }
        Err(_) => return rejected(RejectionReason::IllConditioned),
    };
    let y = result.transform;

    // Covariance from the matched target points of the final iteration
    // (ground frame), optionally from the whole matching map.
    let mut target_points: Vec<Vector3<f64>> = if config.cov_use_all_map_points {
        index.points().to_vec()
    } else {
        result.correspondences.iter().map(|c| *index.point(c.target_index)).collect()
    };
    if config.cov_recenter && !target_points.is_empty() {
        let centroid =
            target_points.iter().sum::<Vector3<f64>>() / target_points.len() as f64;
        for p in &mut target_points {
            *p -= centroid;
        }
    }
    let Ok(fisher) = fisher_matrix(&target_points, sigma) else {
        return rejected(RejectionReason::IllConditioned);
    };
    let observability = analyze_observability(&fisher, config.cov_weak_threshold);
    let n = match invert_fisher(&fisher) {
        Ok(n) => n,
        Err(_) => {
            return ScanObservation {
                result: Some(result),
                y: Some(y),
                n: None,
                status: ObservationStatus::Rejected(RejectionReason::IllConditioned),
                trace_n: None,
            }
        }
    };
    let trace_n = Some((trace_rot(&n), trace_trans(&n)));

    let status = match mode {
        RunMode::Fused => {
            let z = crate::iekf::innovation_twist(&filter.pose, &y, config.iekf_error_frame);
            reject_observation(&result, &observability, &z, &filter.p, &n, sigma, gates)
        }
        // The baseline has no covariance state; gate on registration
        // quality only.
        _ => {
            if !result.converged {
                ObservationStatus::Rejected(RejectionReason::NoConvergence)
            } else if result.final_mean_residual > gates.residual_sigmas * sigma {
                ObservationStatus::Rejected(RejectionReason::ResidualGate)
            } else {
                ObservationStatus::Valid
            }
        }
    };

    ScanObservation { result: Some(result), y: Some(y), n: Some(n), status, trace_n }
}

fn trace_rot(m: &Cov6) -> f64 {
    m[(0, 0)] + m[(1, 1)] + m[(2, 2)]
}

fn trace_trans(m: &Cov6) -> f64 {
    m[(3, 3)] + m[(4, 4)] + m[(5, 5)]
}

fn quat_gap(pose: &Pose, q: &UnitQuaternion<f64>) -> f64 {
    (pose.rotation - q.to_rotation_matrix().into_inner()).norm()
}

/// Median nearest-neighbour distance from `from` points to the `to` cloud.
pub fn median_nn_distance(from: &PointCloud, to: &PointCloud) -> f64 {
    let index = match build_index(to) {
        Ok(i) => i,
        Err(_) => return f64::NAN,
    };
    let mut dists: Vec<f64> =
        from.points.iter().map(|p| index.nearest(p).1.sqrt()).collect();
    if dists.is_empty() {
        return f64::NAN;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    dists[dists.len() / 2]
}
