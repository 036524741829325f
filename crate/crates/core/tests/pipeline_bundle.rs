use std::fs;
use std::path::Path;

use dustcast_core::bundle::{load_bundle, read_manifest, save_bundle, BundleError, MANIFEST_FILE};
use dustcast_core::controller::{directives_for_forecast, ControllerThresholds};
use dustcast_core::explain::{explain_forecast, stage1_rows_from_history, ShapleyMode};
use dustcast_core::forecast::{forecast_pipeline, IrradianceMode, ScenarioSpec};
use dustcast_core::models::joint_inputs;
use dustcast_core::pipeline::{train_pipeline, PipelineConfig, TrainedPipeline};
use dustcast_core::synthetic::{curated_records, SyntheticConfig};

fn trained() -> TrainedPipeline {
    let records = curated_records(&SyntheticConfig {
        days: 400,
        ..SyntheticConfig::default()
    });
    train_pipeline(&records, &PipelineConfig::quick()).unwrap()
}

fn probe_rows(p: &TrainedPipeline) -> Vec<Vec<f64>> {
    let rows = stage1_rows_from_history(&p.history);
    rows.into_iter().cycle().take(50).collect()
}

#[test]
fn bundle_round_trip_preserves_predictions() {
    let p = trained();
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_bundle(&p, dir.path()).unwrap();
    assert_eq!(manifest.blobs.len(), 5);
    let q = load_bundle(dir.path()).unwrap();
    assert_eq!(q, p);
    for row in probe_rows(&p) {
        let a = p.stage1.predict_raw(&row).unwrap();
        let b = q.stage1.predict_raw(&row).unwrap();
        assert!((a - b).abs() <= 1e-9);
    }
    let fa = forecast_pipeline(&p, 30, None, IrradianceMode::HoldLast).unwrap();
    let fb = forecast_pipeline(&q, 30, None, IrradianceMode::HoldLast).unwrap();
    assert_eq!(fa, fb);
}

fn saved() -> (tempfile::TempDir, TrainedPipeline) {
    let p = trained();
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&p, dir.path()).unwrap();
    (dir, p)
}

fn edit_manifest(dir: &Path, f: impl FnOnce(&mut serde_json::Value)) {
    let path = dir.join(MANIFEST_FILE);
    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    f(&mut v);
    fs::write(path, serde_json::to_vec(&v).unwrap()).unwrap();
}

#[test]
fn bundle_load_guards() {
    let (dir, _) = saved();
    edit_manifest(dir.path(), |v| v["schema_version"] = 2.into());
    let err = load_bundle(dir.path()).unwrap_err();
    assert!(matches!(err, BundleError::SchemaVersion { found: 2, expected: 1 }));
    assert!(err.to_string().contains('2') && err.to_string().contains('1'));

    let (dir, _) = saved();
    fs::remove_file(dir.path().join("stage2.json")).unwrap();
    assert!(matches!(load_bundle(dir.path()), Err(BundleError::MissingBlob(_))));

    let (dir, _) = saved();
    let blob = dir.path().join("stage1_head.json");
    let mut bytes = fs::read(&blob).unwrap();
    bytes.push(b' ');
    fs::write(&blob, bytes).unwrap();
    assert!(matches!(load_bundle(dir.path()), Err(BundleError::Checksum { .. })));

    let (dir, _) = saved();
    edit_manifest(dir.path(), |v| v["feature_schema"]["stage2"][0] = "aod".into());
    assert!(matches!(load_bundle(dir.path()), Err(BundleError::FeatureSchema { .. })));

    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(load_bundle(empty.path()), Err(BundleError::MissingManifest(_))));
    assert!(read_manifest(empty.path()).is_err());
}

#[test]
fn forecast_directives_and_attributions_line_up() {
    let p = trained();
    let fc = forecast_pipeline(&p, 30, None, IrradianceMode::HoldLast).unwrap();
    assert_eq!(fc.efficiency_loss_pct.len(), 30);
    let directives = directives_for_forecast(&fc, None, &ControllerThresholds::default()).unwrap();
    assert_eq!(directives.len(), 30);

    for stage in [1u8, 2] {
        let report = explain_forecast(&p, &fc.aod, stage, IrradianceMode::HoldLast, ShapleyMode::Exact).unwrap();
        assert_eq!(report.per_instance_phi.len(), 30);
        for (phi, pred) in report.per_instance_phi.iter().zip(&report.predictions) {
            let total = report.base_value + phi.iter().sum::<f64>();
            assert!((total - pred).abs() <= 1e-6);
        }
    }
    let first = &fc.aod.inputs_log[0];
    let raw = p.stage1.predict_raw(&joint_inputs(&first.static_features, &first.sequence)).unwrap();
    assert_eq!(raw.max(0.0), fc.aod.values[0]);

    let identity = ScenarioSpec::new(0.0, 1.0, "identity").unwrap();
    assert_eq!(forecast_pipeline(&p, 30, Some(&identity), IrradianceMode::HoldLast).unwrap(), fc);
    let stressed = forecast_pipeline(&p, 30, Some(&ScenarioSpec::stress_preset()), IrradianceMode::HoldLast).unwrap();
    assert_eq!(stressed.scenario, Some(ScenarioSpec::stress_preset()));
    assert_ne!(stressed.aod.values, fc.aod.values);
}

#[test]
fn training_is_reproducible() {
    let a = trained();
    let b = trained();
    assert_eq!(a.report, b.report);
    assert_eq!(a.stage1.loss_history, b.stage1.loss_history);
}
