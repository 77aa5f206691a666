//! On-disk layout of a sensor run: `gyro.csv`, `truth.csv`,
//! `scans/NNNN.depth` and a flat key = value `manifest.txt` carrying the
//! seed, rates, noise and camera model.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::pointcloud::{read_depth_binary, write_depth_binary, Intrinsics};
use crate::se3::Pose;
use crate::sim::{
    CameraModel, ScriptKind, SensorNoise, SensorRates, SensorRun, TrajectoryScript,
};

fn parse_err(what: &'static str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { what, line, message: message.into() }
}

pub fn save_run(run: &SensorRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::create_dir_all(dir.join("scans"))?;

    let mut gyro = String::from("t,wx,wy,wz\n");
    for (t, w) in &run.gyro {
        gyro.push_str(&format!("{:.17e},{:.17e},{:.17e},{:.17e}\n", t, w.x, w.y, w.z));
    }
    fs::write(dir.join("gyro.csv"), gyro)?;

    let mut truth = String::from("t,tx,ty,tz,qw,qx,qy,qz\n");
    for (t, pose) in &run.truth {
        let q = pose.to_quaternion();
        truth.push_str(&format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            t, pose.translation.x, pose.translation.y, pose.translation.z,
            q.w, q.i, q.j, q.k
        ));
    }
    fs::write(dir.join("truth.csv"), truth)?;

    for (j, (_, img)) in run.scans.iter().enumerate() {
        write_depth_binary(img, &dir.join("scans").join(format!("{j:04}.depth")))?;
    }

    let mut manifest = fs::File::create(dir.join("manifest.txt"))?;
    writeln!(manifest, "sim.seed = {}", run.seed)?;
    writeln!(manifest, "sim.scene = {}", run.scene_name)?;
    writeln!(manifest, "sim.script = {}", run.script.kind.as_str())?;
    writeln!(manifest, "sim.duration = {:.17e}", run.script.duration)?;
    writeln!(manifest, "sim.yaw_rate = {:.17e}", run.script.yaw_rate)?;
    writeln!(manifest, "sim.speed = {:.17e}", run.script.speed)?;
    writeln!(manifest, "sim.path_side = {:.17e}", run.script.path_side)?;
    writeln!(manifest, "sim.gyro_hz = {:.17e}", run.rates.gyro_hz)?;
    writeln!(manifest, "sim.scan_hz = {:.17e}", run.rates.scan_hz)?;
    writeln!(manifest, "sim.depth_sigma = {:.17e}", run.noise.depth_sigma)?;
    writeln!(manifest, "sim.gyro_noise_std = {:.17e}", run.noise.gyro_noise_std)?;
    writeln!(
        manifest,
        "sim.gyro_bias = {:.17e} {:.17e} {:.17e}",
        run.noise.gyro_bias.x, run.noise.gyro_bias.y, run.noise.gyro_bias.z
    )?;
    writeln!(manifest, "cam.width = {}", run.camera.width)?;
    writeln!(manifest, "cam.height = {}", run.camera.height)?;
    writeln!(manifest, "cam.fx = {:.17e}", run.camera.intrinsics.fx)?;
    writeln!(manifest, "cam.fy = {:.17e}", run.camera.intrinsics.fy)?;
    writeln!(manifest, "cam.cx = {:.17e}", run.camera.intrinsics.cx)?;
    writeln!(manifest, "cam.cy = {:.17e}", run.camera.intrinsics.cy)?;
    writeln!(manifest, "cam.max_range = {:.17e}", run.camera.max_range)?;
    Ok(())
}

fn manifest_map(text: &str) -> Result<std::collections::HashMap<String, String>> {
    let mut map = std::collections::HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err("manifest", i + 1, "expected key = value"))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn get<T: std::str::FromStr>(
    map: &std::collections::HashMap<String, String>,
    key: &str,
) -> Result<T> {
    map.get(key)
        .ok_or_else(|| parse_err("manifest", 0, format!("missing key {key}")))?
        .parse::<T>()
        .map_err(|_| parse_err("manifest", 0, format!("bad value for {key}")))
}

pub fn load_run(dir: &Path) -> Result<SensorRun> {
    let manifest = manifest_map(&fs::read_to_string(dir.join("manifest.txt"))?)?;
    let seed: u64 = get(&manifest, "sim.seed")?;
    let scene_name: String = get(&manifest, "sim.scene")?;
    let kind = ScriptKind::parse(&get::<String>(&manifest, "sim.script")?)?;
    let script = TrajectoryScript {
        kind,
        duration: get(&manifest, "sim.duration")?,
        yaw_rate: get(&manifest, "sim.yaw_rate")?,
        speed: get(&manifest, "sim.speed")?,
        path_side: get(&manifest, "sim.path_side")?,
    };
    let rates = SensorRates {
        gyro_hz: get(&manifest, "sim.gyro_hz")?,
        scan_hz: get(&manifest, "sim.scan_hz")?,
    };
    let bias_text: String = get(&manifest, "sim.gyro_bias")?;
    let bias_parts: Vec<f64> = bias_text
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err("manifest", 0, e.to_string()))?;
    if bias_parts.len() != 3 {
        return Err(parse_err("manifest", 0, "sim.gyro_bias needs three values"));
    }
    let noise = SensorNoise {
        depth_sigma: get(&manifest, "sim.depth_sigma")?,
        gyro_noise_std: get(&manifest, "sim.gyro_noise_std")?,
        gyro_bias: Vector3::new(bias_parts[0], bias_parts[1], bias_parts[2]),
    };
    let camera = CameraModel {
        width: get(&manifest, "cam.width")?,
        height: get(&manifest, "cam.height")?,
        intrinsics: Intrinsics {
            fx: get(&manifest, "cam.fx")?,
            fy: get(&manifest, "cam.fy")?,
            cx: get(&manifest, "cam.cx")?,
            cy: get(&manifest, "cam.cy")?,
        },
        max_range: get(&manifest, "cam.max_range")?,
    };

    let gyro_text = fs::read_to_string(dir.join("gyro.csv"))?;
    let mut gyro = Vec::new();
    for (i, line) in gyro_text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err("gyro csv", i + 1, e.to_string()))?;
        if v.len() != 4 {
            return Err(parse_err("gyro csv", i + 1, "expected 4 columns"));
        }
        gyro.push((v[0], Vector3::new(v[1], v[2], v[3])));
    }

    let truth_text = fs::read_to_string(dir.join("truth.csv"))?;
    let mut truth = Vec::new();
    for (i, line) in truth_text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err("truth csv", i + 1, e.to_string()))?;
        if v.len() != 8 {
            return Err(parse_err("truth csv", i + 1, "expected 8 columns"));
        }
        let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            v[4], v[5], v[6], v[7],
        ));
        truth.push((v[0], Pose::from_quaternion(&q, Vector3::new(v[1], v[2], v[3]))));
    }

    let mut scans = Vec::new();
    let mut j = 0usize;
    loop {
        let path = dir.join("scans").join(format!("{j:04}.depth"));
        if !path.exists() {
            break;
        }
        let img = read_depth_binary(&path, camera.intrinsics)?;
        let t = j as f64 / rates.scan_hz;
        scans.push((t, img));
        j += 1;
    }

    Ok(SensorRun { gyro, scans, truth, camera, seed, scene_name, script, rates, noise })
}
