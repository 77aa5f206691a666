// temporary scratch, deleted before finishing
use scanfuse::pipeline::{run_pipeline, Config, RunMode};
use scanfuse::sim::{make_run, Scene, ScriptKind, TrajectoryScript};

#[test]
fn dbg_icp_vs_fused_zero_noise() {
    let mut config = Config::default();
    config.sim_depth_sigma = 0.0;
    config.sim_gyro_noise_std = 0.0;
    let scene = Scene::box_room(1);
    let script = TrajectoryScript::new(ScriptKind::Stationary, 3.0, 0.0, 0.0);
    let run = make_run(&scene, &script, &config.sensor_rates(), &config.sensor_noise(), &config.camera_model(), 42);
    let fused = run_pipeline(&run, &config, RunMode::Fused).unwrap();
    let icp = run_pipeline(&run, &config, RunMode::IcpOnly).unwrap();
    for (f, i) in fused.records.iter().zip(icp.records.iter()) {
        println!(
            "t={} rotdiff={:.3e} transdiff={:.3e} fvalid={} ivalid={} freasons={:?} ireasons={:?} f_iters={} i_iters={}",
            f.time,
            (f.estimate.rotation - i.estimate.rotation).norm(),
            (f.estimate.translation - i.estimate.translation).norm(),
            f.obs_valid, i.obs_valid,
            f.reason.map(|r| r.as_str()), i.reason.map(|r| r.as_str()),
            f.iterations, i.iterations,
        );
    }
}
