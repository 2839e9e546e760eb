use std::path::PathBuf;

use mvo::config::RunConfig;
use mvo::pipeline::PipelineConfig;
use mvo::sim::{presets, SceneConfig};

fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn check(file: &str, scene: SceneConfig) {
    let loaded = RunConfig::load(&config_dir().join(file)).unwrap();
    let window = PipelineConfig::default().window.min(scene.frames);
    let expected = RunConfig {
        scene,
        pipeline: PipelineConfig {
            window,
            ..PipelineConfig::default()
        },
    };
    assert_eq!(loaded, expected, "{file} drifted from its preset");
}

#[test]
fn shipped_configs_match_presets() {
    check("preset_iv.json", presets::desk());
    check("noise_free.json", presets::desk_noise_free());
    check("frustum_exit.json", presets::frustum_exit());
    check("static.json", presets::static_scene());
}

#[test]
fn window_longer_than_sequence_is_rejected() {
    let text = std::fs::read_to_string(config_dir().join("static.json")).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["pipeline"]["window"] = serde_json::json!(9);
    let err = RunConfig::from_json(&value.to_string()).unwrap_err();
    assert!(err.to_string().contains("pipeline.window"), "{err}");
}
