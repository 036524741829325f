//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dustcast_core::bundle::{load_bundle, save_bundle};
use dustcast_core::controller::{decide_directive, PlantState, SeverityLevel, ThroughputMode};
use dustcast_core::explain::{explain_stage1, explain_stage2, shapley_values, stage1_rows_from_history, stage2_rows_from_history, ShapleyMode};
use dustcast_core::features::{seasonal_strength, SequenceFeatures, StaticFeatures};
use dustcast_core::forecast::{apply_scenario, recursive_aod_forecast, replay_inputs_log, AodModel, ScenarioSpec};
use dustcast_core::ingestion::{
    curate, fetch_aod, fetch_meteo, write_aod_csv, write_meteo_csv, DataSource, MergedDailyRecord,
};
use dustcast_core::models::{baseline_configs, evaluate_metrics, run_baseline_comparison, AodPrediction, ModelError, ModelFamily};
use dustcast_core::physics::{attenuate_irradiance, efficiency_loss_pct};
use dustcast_core::pipeline::{predicted_stage2_dataset, train_pipeline, PipelineConfig, TrainedPipeline};
use dustcast_core::synthetic::{generate, SyntheticConfig, SyntheticSite};

type Outcome = Result<String, String>;
type Check = fn(&EndToEnd) -> Outcome;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed <= limit, format!("took {elapsed:?}, limit {limit:?}"))
}

fn metrics_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..40);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let m = evaluate_metrics(&y, &p).map_err(|e| e.to_string())?;

        // naive two-pass reference
        let nf = n as f64;
        let mut sq = Vec::new();
        let mut ab = Vec::new();
        for i in 0..n {
            sq.push((y[i] - p[i]).powi(2));
            ab.push((y[i] - p[i]).abs());
        }
        let rmse = (sq.iter().sum::<f64>() / nf).sqrt();
        let mae = ab.iter().sum::<f64>() / nf;
        let ybar = y.iter().sum::<f64>() / nf;
        let ss_tot: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
        let r2 = 1.0 - sq.iter().sum::<f64>() / ss_tot;
        let r2_got = m.r2.ok_or("r2 undefined on random data")?;
        worst = worst.max((m.rmse - rmse).abs()).max((m.mae - mae).abs()).max((r2_got - r2).abs());
    }
    check(worst <= 1e-9, format!("max deviation {worst:e}"))?;
    let m = evaluate_metrics(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).map_err(|e| e.to_string())?;
    check((m.rmse - (2.0f64 / 3.0).sqrt()).abs() <= 1e-12, format!("rmse {}", m.rmse))?;
    check((m.mae - 2.0 / 3.0).abs() <= 1e-12, format!("mae {}", m.mae))?;
    check(m.r2.is_some_and(|r| r.abs() <= 1e-12), format!("r2 {:?}", m.r2))?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("100 vectors, max deviation {worst:.1e}; worked example exact"))
}

fn physics_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let ic = rng.random_range(1.0..1200.0);
        let m = rng.random_range(1.0..10.0);
        let ia = attenuate_irradiance(ic, 0.0, m).map_err(|e| e.to_string())?;
        check(ia == ic, format!("AOD=0 gave {ia} for {ic}"))?;
    }
    let mut aods: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..5.0)).collect();
    let mut masses: Vec<f64> = (0..100).map(|_| rng.random_range(1.0..10.0)).collect();
    aods.sort_by(f64::total_cmp);
    masses.sort_by(f64::total_cmp);
    aods.dedup();
    masses.dedup();
    let ic = 1000.0;
    let mut worst: f64 = 0.0;
    for (i, a) in aods.iter().enumerate() {
        for (j, m) in masses.iter().enumerate() {
            let v = attenuate_irradiance(ic, *a, *m).map_err(|e| e.to_string())?;
            if i + 1 < aods.len() {
                let next = attenuate_irradiance(ic, aods[i + 1], *m).map_err(|e| e.to_string())?;
                check(next < v, format!("not decreasing in aod at ({a}, {m})"))?;
            }
            if j + 1 < masses.len() {
                let next = attenuate_irradiance(ic, *a, masses[j + 1]).map_err(|e| e.to_string())?;
                check(next < v || (*a == 0.0 && next == v), format!("not decreasing in air mass at ({a}, {m})"))?;
            }
            let loss = efficiency_loss_pct(ic, v).map_err(|e| e.to_string())?;
            worst = worst.max((loss - 100.0 * (1.0 - (-a * m).exp())).abs());
        }
    }
    check(worst <= 1e-9, format!("composition deviation {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("100x100 grid monotone, composition deviation {worst:.1e}"))
}

struct EndToEnd {
    site: SyntheticSite,
    records: Vec<MergedDailyRecord>,
    pipeline: TrainedPipeline,
}

/// Writes the raw synthetic data as exchange-format files and ingests them back.
fn ingest_synthetic(dir: &Path, site: &SyntheticSite, cfg: &SyntheticConfig) -> Result<Vec<MergedDailyRecord>, String> {
    let meteo_path = dir.join("meteo.csv");
    let aod_path = dir.join("aod.csv");
    write_meteo_csv(std::fs::File::create(&meteo_path).map_err(|e| e.to_string())?, &site.meteo).map_err(|e| e.to_string())?;
    write_aod_csv(std::fs::File::create(&aod_path).map_err(|e| e.to_string())?, &site.aod_samples).map_err(|e| e.to_string())?;
    let roi = site.roi(cfg.latitude);
    let (start, end) = (site.meteo[0].date, site.meteo[site.meteo.len() - 1].date);
    let meteo = fetch_meteo(&DataSource::Fixture(meteo_path), &roi, start, end).map_err(|e| e.to_string())?;
    let aod = fetch_aod(&DataSource::Fixture(aod_path), &roi, start, end).map_err(|e| e.to_string())?;
    curate(&meteo, &aod, &roi).map_err(|e| e.to_string())
}

fn synthetic_end_to_end(state: &mut Option<EndToEnd>) -> Outcome {
    let start = Instant::now();
    let cfg = SyntheticConfig::default();
    check(cfg.days >= 1500, "fewer than 1500 synthetic days")?;
    let site = generate(&cfg);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let records = ingest_synthetic(dir.path(), &site, &cfg)?;
    check(records.len() == cfg.days, "ingestion dropped days")?;
    let pipeline = train_pipeline(&records, &PipelineConfig::default()).map_err(|e| e.to_string())?;
    let r1 = pipeline.report.stage1.r2.ok_or("stage-1 r2 undefined")?;
    let r2 = pipeline.report.stage2.r2.ok_or("stage-2 r2 undefined")?;
    let elapsed = start.elapsed();
    let summary = format!("stage-1 R2 {r1:.4} (>= 0.85), stage-2 R2 {r2:.4} (>= 0.95), {:.1}s", elapsed.as_secs_f64());
    *state = Some(EndToEnd { site, records, pipeline });
    check(r1 >= 0.85 && r2 >= 0.95, summary.clone())?;
    within(elapsed, Duration::from_secs(300))?;
    Ok(summary)
}

fn seasonality(e2e: &EndToEnd) -> Outcome {
    let s = seasonal_strength(&e2e.site.seasonal_aod, 30).map_err(|e| e.to_string())?;
    check(s >= 0.9, format!("strength {s:.4}"))?;
    Ok(format!("strength {s:.4} at period 30"))
}

fn baseline_table(e2e: &EndToEnd) -> Outcome {
    let ds = predicted_stage2_dataset(&e2e.pipeline, &e2e.records).map_err(|e| e.to_string())?;
    let families = baseline_configs(&["linear", "random-forest", "svm", "mlp", "xgboost"]).map_err(|e| e.to_string())?;
    let table = run_baseline_comparison(&ds, &families, 0.2, 42).map_err(|e| e.to_string())?;
    println!("{table}");
    check(table.rows.len() == 5, "expected five rows")?;
    for row in &table.rows {
        let m = &row.metrics;
        check(
            m.rmse.is_finite() && m.mae.is_finite() && m.r2.is_none_or(f64::is_finite),
            format!("{} has non-finite metrics", row.family),
        )?;
    }
    check(table.rows.iter().any(|r| r.family == ModelFamily::SupportVector), "SVM row missing")?;
    Ok("5 families, all metrics finite, SVM completed".into())
}

fn shapley_suite(e2e: &EndToEnd) -> Outcome {
    let p = &e2e.pipeline;
    let hist = &p.history;
    let rows1: Vec<Vec<f64>> = stage1_rows_from_history(hist).into_iter().rev().take(10).collect();
    let rows2: Vec<Vec<f64>> = stage2_rows_from_history(hist).into_iter().rev().take(10).collect();
    let r1 = explain_stage1(p, &rows1, &stage1_rows_from_history(hist), ShapleyMode::Exact).map_err(|e| e.to_string())?;
    let r2 = explain_stage2(p, &rows2, &stage2_rows_from_history(hist), ShapleyMode::Exact).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for r in [&r1, &r2] {
        for (phi, pred) in r.per_instance_phi.iter().zip(&r.predictions) {
            worst = worst.max((r.base_value + phi.iter().sum::<f64>() - pred).abs());
        }
    }
    check(worst <= 1e-6, format!("efficiency gap {worst:e}"))?;

    let linear = |x: &[f64]| -> Result<f64, ModelError> { Ok(2.0 * x[0] + 3.0 * x[1]) };
    let lin = shapley_values(linear, &["x1", "x2"], &[vec![1.0, 1.0]], &[vec![0.0, 0.0]], ShapleyMode::Exact).map_err(|e| e.to_string())?;
    check(lin.per_instance_phi[0] == vec![2.0, 3.0], format!("linear fixture {:?}", lin.per_instance_phi[0]))?;

    let dummy = |x: &[f64]| -> Result<f64, ModelError> { Ok(x[0] * x[1] + x[1].sin()) };
    let d = shapley_values(dummy, &["a", "b", "unused"], &[vec![0.7, -1.2, 5.0]], &[vec![0.0, 0.5, 1.0]], ShapleyMode::Exact).map_err(|e| e.to_string())?;
    check(d.per_instance_phi[0][2] == 0.0, "dummy feature got nonzero attribution")?;

    let sampled = shapley_values(
        linear,
        &["x1", "x2"],
        &[vec![1.0, 1.0]],
        &[vec![0.0, 0.0], vec![0.4, -0.2]],
        ShapleyMode::Sampled { n_permutations: 2000, seed: 11 },
    )
    .map_err(|e| e.to_string())?;
    let exact = shapley_values(linear, &["x1", "x2"], &[vec![1.0, 1.0]], &[vec![0.0, 0.0], vec![0.4, -0.2]], ShapleyMode::Exact)
        .map_err(|e| e.to_string())?;
    for j in 0..2 {
        let err = (sampled.per_instance_phi[0][j] - exact.per_instance_phi[0][j]).abs();
        check(err <= 3.0 * sampled.per_instance_se[0][j] + 1e-12, format!("sampled feature {j} off by {err:e}"))?;
    }
    // A nonlinear model, where the sampling error is not identically zero.
    let nonlinear = |x: &[f64]| -> Result<f64, ModelError> { Ok(x[0] * x[1] + (x[2] * x[0]).tanh()) };
    let inst = [vec![1.5, -0.5, 2.0]];
    let bg = [vec![0.0, 0.5, -1.0], vec![0.5, 0.0, 0.0]];
    let s = shapley_values(nonlinear, &["a", "b", "c"], &inst, &bg, ShapleyMode::Sampled { n_permutations: 2000, seed: 5 })
        .map_err(|e| e.to_string())?;
    let e = shapley_values(nonlinear, &["a", "b", "c"], &inst, &bg, ShapleyMode::Exact).map_err(|e| e.to_string())?;
    for j in 0..3 {
        let err = (s.per_instance_phi[0][j] - e.per_instance_phi[0][j]).abs();
        check(err <= 3.0 * s.per_instance_se[0][j] + 1e-12, format!("nonlinear sampled feature {j} off by {err:e}"))?;
    }
    Ok(format!("efficiency gap {worst:.1e} over both stages; linear (2,3); dummy 0; sampled within 3 SE"))
}

fn controller_truth_table() -> Outcome {
    use SeverityLevel::*;
    let start = Instant::now();
    let eps = 1e-9;
    // (aod, severity, pressure delta)
    let aod_rows = [
        (0.0, Low, 0.0),
        (0.7, Low, 0.0),
        (0.7 + eps, Moderate, 0.0),
        (1.5, Moderate, 0.0),
        (1.5 + eps, High, -8.0),
        (3.0, High, -8.0),
        (3.0 + eps, Severe, -15.0),
    ];
    // (efficiency, grid import)
    let eff_rows = [(64.99, 25.0), (65.0, 0.0)];
    // (salinity, pretreatment)
    let sal_rows = [(44.9, false), (45.0, false), (45.1, true)];
    let mut n = 0;
    for (aod, sev, pressure) in aod_rows {
        for (eff, grid) in eff_rows {
            for (sal, pre) in sal_rows {
                let d = decide_directive(&PlantState {
                    predicted_aod: aod,
                    solar_efficiency_pct: eff,
                    salinity_g_l: Some(sal),
                    sustained_high_dust: true,
                })
                .map_err(|e| e.to_string())?;
                let label = format!("state ({aod}, {eff}, {sal})");
                check(d.severity == sev, format!("{label}: severity {}", d.severity))?;
                check(d.ro_pressure_delta_pct == pressure, format!("{label}: pressure {}", d.ro_pressure_delta_pct))?;
                check(d.grid_import_increase_pct == grid, format!("{label}: grid {}", d.grid_import_increase_pct))?;
                check(d.pretreatment == pre, format!("{label}: pretreatment {}", d.pretreatment))?;
                check(d.robotic_cleaning == (sev == Severe), format!("{label}: robotic cleaning"))?;
                check(d.chemical_cleaning_deferral_h == if sev == High { 24 } else { 0 }, format!("{label}: deferral"))?;
                let maximized = matches!(sev, Low | Moderate);
                check((d.throughput_mode == ThroughputMode::Maximized) == maximized, format!("{label}: throughput"))?;
                n += 1;
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("{n} states match"))
}

struct Constant(f64);

impl AodModel for Constant {
    fn predict_aod(&self, _: &StaticFeatures, _: &SequenceFeatures) -> Result<AodPrediction, ModelError> {
        Ok(AodPrediction {
            value: self.0,
            clamped: false,
        })
    }
}

fn recursive_forecast(e2e: &EndToEnd) -> Outcome {
    let hist = &e2e.pipeline.history;
    let c = 0.63;
    let fc = recursive_aod_forecast(&Constant(c), hist, 30).map_err(|e| e.to_string())?;
    check(fc.values.len() == 30 && fc.values.iter().all(|v| *v == c), "constant predictor drifted")?;

    let fc = recursive_aod_forecast(&e2e.pipeline.stage1, hist, 30).map_err(|e| e.to_string())?;
    let replay = replay_inputs_log(&e2e.pipeline.stage1, &fc).map_err(|e| e.to_string())?;
    check(replay.iter().zip(&fc.values).all(|(a, b)| a.to_bits() == b.to_bits()), "replay differs")?;
    for k in 0..29 {
        check(fc.inputs_log[k + 1].sequence.aod_lag1 == fc.values[k], format!("lag1 bookkeeping at step {k}"))?;
    }

    let preset = ScenarioSpec::stress_preset();
    check(preset.delta_t2m == 1.5 && preset.aod_multiplier == 1.2, "preset values")?;
    let probe: Vec<MergedDailyRecord> = (1..=200)
        .map(|k| MergedDailyRecord {
            aod: k as f64 * 0.02,
            ..hist[0].clone()
        })
        .collect();
    let stressed = apply_scenario(&probe, &preset).map_err(|e| e.to_string())?;
    let (ic, m) = (1000.0, 1.3);
    for (a, b) in probe.iter().zip(&stressed) {
        let base = efficiency_loss_pct(ic, attenuate_irradiance(ic, a.aod, m).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let hot = efficiency_loss_pct(ic, attenuate_irradiance(ic, b.aod, m).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        check(hot > base, format!("loss did not increase at aod {}", a.aod))?;
        check(b.t2m == a.t2m + 1.5, "temperature shift")?;
    }
    Ok("fixed point holds; replay bit-exact; stress preset raises loss at all 200 probes".into())
}

fn persistence(e2e: &EndToEnd) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    save_bundle(&e2e.pipeline, dir.path()).map_err(|e| e.to_string())?;
    let loaded = load_bundle(dir.path()).map_err(|e| e.to_string())?;
    let rows1: Vec<Vec<f64>> = stage1_rows_from_history(&e2e.records).into_iter().rev().take(50).collect();
    let rows2: Vec<Vec<f64>> = stage2_rows_from_history(&e2e.records).into_iter().rev().take(50).collect();
    check(rows1.len() == 50 && rows2.len() == 50, "probe too small")?;
    let mut worst: f64 = 0.0;
    for (r1, r2) in rows1.iter().zip(&rows2) {
        let a = e2e.pipeline.stage1.predict_raw(r1).map_err(|e| e.to_string())?;
        let b = loaded.stage1.predict_raw(r1).map_err(|e| e.to_string())?;
        let c = e2e.pipeline.stage2.predict(r2).map_err(|e| e.to_string())?;
        let d = loaded.stage2.predict(r2).map_err(|e| e.to_string())?;
        worst = worst.max((a - b).abs()).max((c - d).abs());
    }
    check(worst <= 1e-9, format!("max deviation {worst:e}"))?;
    Ok(format!("50-row probe, max deviation {worst:.1e}"))
}

fn main() {
    let mut failures = 0;
    let mut report = |name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("PASS  {name}: {detail}"),
        Err(why) => {
            failures += 1;
            println!("FAIL  {name}: {why}");
        }
    };

    report("metrics-oracle", metrics_oracle());
    report("physics-suite", physics_suite());
    let mut e2e = None;
    report("synthetic-end-to-end", synthetic_end_to_end(&mut e2e));
    let dependent: [(&str, Check); 5] = [
        ("seasonal-strength", seasonality),
        ("baseline-table", baseline_table),
        ("shapley-suite", shapley_suite),
        ("recursive-forecast", recursive_forecast),
        ("persistence", persistence),
    ];
    report("controller-truth-table", controller_truth_table());
    for (name, f) in dependent {
        match &e2e {
            Some(state) => report(name, f(state)),
            None => report(name, Err("end-to-end run did not produce a model".into())),
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
