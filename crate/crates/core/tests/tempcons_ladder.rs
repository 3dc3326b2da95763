use vdepth_core::synth::{corrupt, render_gt, EstimatorSurrogateSpec, SceneSpec, SurrogateKind};
use vdepth_core::tempcons::{temporal_consistency, TempConsOptions};

#[test]
fn distance_grows_with_jitter_amplitude() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenes/plane_orbit.json")).unwrap();
    let spec: SceneSpec = serde_json::from_str(&text).unwrap();
    let scene = render_gt(&spec).unwrap();
    let mut previous = 0.0;
    for amplitude in [0.0, 0.01, 0.02, 0.04, 0.08] {
        let jitter = EstimatorSurrogateSpec {
            jitter_amplitude: amplitude,
            seed: 21,
            ..EstimatorSurrogateSpec::identity(SurrogateKind::StereoJitter)
        };
        let pred = corrupt(&scene.depth, &scene.masks, &jitter).unwrap();
        let d = temporal_consistency(&pred, &scene.track, &scene.correspondences, Some(&scene.masks), TempConsOptions::default())
            .unwrap()
            .mean_distance;
        assert!(d >= previous, "amplitude {amplitude}: {d} < {previous}");
        previous = d;
    }
    assert!(previous > 0.0);
}
