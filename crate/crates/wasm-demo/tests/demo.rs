use dustcast_core::controller::SeverityLevel;
use dustcast_wasm::{attenuation_curve, directive, scenario_projection};

#[test]
fn curve_starts_clear_and_falls() {
    let c = attenuation_curve(1000.0, 24.75, 172, 3.0, 30).unwrap();
    assert_eq!(c.aod.len(), 31);
    assert_eq!(c.irradiance[0], 1000.0);
    assert_eq!(c.efficiency_loss_pct[0], 0.0);
    assert!(c.irradiance.windows(2).all(|w| w[1] < w[0]));
    assert!(c.air_mass >= 1.0);
    assert!(attenuation_curve(1000.0, 24.75, 172, 0.0, 30).is_err());
    assert!(attenuation_curve(1000.0, 24.75, 172, 3.0, 0).is_err());
}

#[test]
fn directive_follows_the_controller() {
    let d = directive(3.5, 50.0, 46.0, false).unwrap();
    assert_eq!(d.severity, SeverityLevel::Severe);
    assert_eq!(d.ro_pressure_delta_pct, -15.0);
    assert!(d.pretreatment);
    assert_eq!(d.grid_import_increase_pct, 25.0);
    let unmeasured = directive(0.2, 80.0, -1.0, false).unwrap();
    assert!(!unmeasured.pretreatment);
    assert!(directive(-0.1, 80.0, -1.0, false).is_err());
}

#[test]
fn projection_of_identity_has_zero_delta() {
    let p = scenario_projection(0.0, 1.0, 10).unwrap();
    assert_eq!(p.dates.len(), 10);
    assert_eq!(p.baseline_aod, p.scenario_aod);
    assert_eq!(p.mean_loss_delta, 0.0);

    let stressed = scenario_projection(1.5, 1.2, 10).unwrap();
    assert_eq!(stressed.baseline_aod, p.baseline_aod);
    assert_ne!(stressed.scenario_aod, stressed.baseline_aod);
    assert!(scenario_projection(0.0, 0.0, 10).is_err());
    assert!(scenario_projection(0.0, 1.0, 0).is_err());
}
