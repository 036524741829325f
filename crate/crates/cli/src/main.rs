use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use dustcast_core::bundle::{load_bundle, save_bundle};
use dustcast_core::config::{AppConfig, IrradianceChoice};
use dustcast_core::controller::{directives_for_forecast, ControllerThresholds, SeverityLevel};
use dustcast_core::explain::{attribution_summary, explain_forecast, write_summary_csv, ShapleyMode};
use dustcast_core::forecast::{compare_scenario, forecast_pipeline, IrradianceMode, PipelineForecast, ScenarioSpec};
use dustcast_core::ingestion::{curate, fetch_aod, fetch_meteo, load_merged, read_meteo_csv, write_aod_csv, write_meteo_csv, write_merged_csv, DataSource, RegionOfInterest};
use dustcast_core::models::{baseline_configs, run_baseline_comparison, RegressorConfig};
use dustcast_core::pipeline::{predicted_stage2_dataset, train_pipeline, PipelineConfig};
use dustcast_core::synthetic::{generate, SyntheticConfig};
use dustcast_service::{router, AppState, ServiceSettings};

#[derive(Parser)]
#[command(name = "dustcast", version, about = "Dust-aware AOD and solar efficiency forecasting")]
struct Cli {
    /// TOML config supplying the site, data paths and defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch raw meteorology and AOD, then curate them into one daily table.
    Ingest(IngestArgs),
    /// Train both stages and write a model bundle.
    Train(TrainArgs),
    /// Compare baseline regressors on the efficiency-loss task.
    Evaluate(EvaluateArgs),
    /// Forecast AOD and efficiency loss from a bundle.
    Forecast(ForecastArgs),
    /// Shapley attributions for a forecast.
    Explain(ExplainArgs),
    /// Turn a saved forecast into daily plant directives.
    Control(ControlArgs),
    /// Compare a stress scenario against the baseline forecast.
    Scenario(ScenarioArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Write a synthetic raw dataset for demos and tests.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SiteArgs {
    /// Site latitude in degrees north.
    #[arg(long, allow_negative_numbers = true)]
    lat: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    lon: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    radius_km: f64,
    #[arg(long, default_value = "site")]
    site_name: String,
}

#[derive(Args)]
struct IngestArgs {
    /// Meteorology source: a CSV path or an http(s) URL.
    #[arg(long)]
    meteo: Option<String>,
    /// AOD pixel source: a CSV path or an http(s) URL.
    #[arg(long)]
    aod: Option<String>,
    #[arg(long)]
    start: Option<NaiveDate>,
    #[arg(long)]
    end: Option<NaiveDate>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    site: SiteArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Curated daily CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Bundle directory to create.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Small, fast settings for smoke runs.
    #[arg(long)]
    quick: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Bundle whose stage-1 model supplies predicted AOD.
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Comma-separated families, e.g. `linear,svm,xgboost`.
    #[arg(long, value_delimiter = ',')]
    baselines: Vec<String>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Irradiance {
    HoldLast,
    BeerLambert,
}

#[derive(Args)]
struct ForecastOpts {
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, value_enum)]
    irradiance: Option<Irradiance>,
    /// Latitude for the Beer-Lambert irradiance mode.
    #[arg(long, allow_negative_numbers = true)]
    latitude: Option<f64>,
}

#[derive(Args)]
struct ForecastArgs {
    #[command(flatten)]
    opts: ForecastOpts,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    opts: ForecastOpts,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    stage: u8,
    /// Use the permutation estimator with this many permutations.
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Summary CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full per-day report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ControlArgs {
    /// Forecast JSON written by `forecast`.
    #[arg(long)]
    forecast: PathBuf,
    /// Feed-water salinity in g/L, applied to every day.
    #[arg(long)]
    salinity: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArgs {
    #[command(flatten)]
    opts: ForecastOpts,
    /// Named scenario from the config; `paper` is always available.
    #[arg(long, conflicts_with_all = ["delta_t2m", "aod_multiplier"])]
    preset: Option<String>,
    #[arg(long, allow_negative_numbers = true, requires = "aod_multiplier")]
    delta_t2m: Option<f64>,
    #[arg(long, requires = "delta_t2m")]
    aod_multiplier: Option<f64>,
    /// Full comparison JSON, including both forecasts.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Bundle to serve. Without one the forecast endpoints answer 409.
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(long)]
    bind: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    days: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Missing inputs that neither a flag nor the config supplied; exits 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn required<T>(value: Option<T>, what: &str) -> anyhow::Result<T> {
    value.ok_or_else(|| Usage(format!("{what} is required (pass the flag or set it in --config)")).into())
}

struct Ctx {
    config: Option<AppConfig>,
}

impl Ctx {
    fn bundle(&self, flag: Option<PathBuf>) -> anyhow::Result<PathBuf> {
        required(flag.or_else(|| self.config.as_ref()?.data.bundle.clone()), "--bundle")
    }

    fn thresholds(&self) -> ControllerThresholds {
        self.config.as_ref().map(|c| c.controller.clone()).unwrap_or_default()
    }

    fn horizon(&self, flag: Option<usize>) -> anyhow::Result<usize> {
        let h = flag.or_else(|| Some(self.config.as_ref()?.forecast.horizon)).unwrap_or(30);
        if h == 0 {
            return Err(Usage("--horizon must be at least 1".into()).into());
        }
        Ok(h)
    }

    fn irradiance(&self, opts: &ForecastOpts) -> anyhow::Result<IrradianceMode> {
        let choice = match opts.irradiance {
            Some(Irradiance::HoldLast) => IrradianceChoice::HoldLast,
            Some(Irradiance::BeerLambert) => IrradianceChoice::BeerLambert,
            None => self.config.as_ref().map(|c| c.forecast.irradiance).unwrap_or_default(),
        };
        Ok(match choice {
            IrradianceChoice::HoldLast => IrradianceMode::HoldLast,
            IrradianceChoice::BeerLambert => IrradianceMode::BeerLambert {
                latitude: required(
                    opts.latitude.or_else(|| Some(self.config.as_ref()?.site.latitude)),
                    "--latitude",
                )?,
            },
        })
    }

    fn forecast(&self, opts: &ForecastOpts, scenario: Option<&ScenarioSpec>) -> anyhow::Result<PipelineForecast> {
        let dir = self.bundle(opts.bundle.clone())?;
        let pipeline = load_bundle(&dir).with_context(|| format!("loading bundle {}", dir.display()))?;
        Ok(forecast_pipeline(&pipeline, self.horizon(opts.horizon)?, scenario, self.irradiance(opts)?)?)
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn emit_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            let mut w = create(path)?;
            serde_json::to_writer_pretty(&mut w, value)?;
            w.flush()?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, value)?;
            writeln!(stdout)?;
        }
    }
    Ok(())
}

fn ingest(ctx: &Ctx, args: IngestArgs) -> anyhow::Result<()> {
    let cfg = ctx.config.as_ref();
    let roi = match (args.site.lat, args.site.lon) {
        (Some(lat), Some(lon)) => RegionOfInterest::new(args.site.site_name, lat, lon, args.site.radius_km)?,
        (None, None) => required(cfg.map(|c| c.site.roi()), "--lat/--lon")?,
        _ => bail!(Usage("--lat and --lon must be given together".into())),
    };
    let path_source = |p: &PathBuf| p.display().to_string();
    let meteo = required(args.meteo.or_else(|| cfg?.data.meteo.as_ref().map(path_source)), "--meteo")?;
    let aod = required(args.aod.or_else(|| cfg?.data.aod.as_ref().map(path_source)), "--aod")?;
    let out = required(args.out.or_else(|| cfg?.data.merged.clone()), "--out")?;
    let remote = [&meteo, &aod].iter().any(|s| matches!(DataSource::parse(s), DataSource::Http(_)));
    if remote && (args.start.is_none() || args.end.is_none()) {
        bail!(Usage("--start and --end are required for http sources".into()));
    }
    let (start, end) = match (args.start, args.end) {
        (Some(s), Some(e)) => (s, e),
        // A meteorology file defaults to the span it covers.
        (s, e) => {
            let all = read_meteo_csv(File::open(&meteo).with_context(|| format!("opening {meteo}"))?)?;
            let first = all.iter().map(|r| r.date).min().context("meteorology file is empty")?;
            let last = all.iter().map(|r| r.date).max().context("meteorology file is empty")?;
            (s.unwrap_or(first), e.unwrap_or(last))
        }
    };

    let meteo = fetch_meteo(&DataSource::parse(&meteo), &roi, start, end)?;
    let samples = fetch_aod(&DataSource::parse(&aod), &roi, start, end)?;
    let records = curate(&meteo, &samples, &roi)?;
    let mut w = create(&out)?;
    write_merged_csv(&mut w, &records)?;
    w.flush()?;
    eprintln!(
        "wrote {} days ({} .. {}) to {}",
        records.len(),
        records[0].date,
        records[records.len() - 1].date,
        out.display()
    );
    Ok(())
}

fn train(ctx: &Ctx, args: TrainArgs) -> anyhow::Result<()> {
    let cfg = ctx.config.as_ref();
    let data = required(args.data.or_else(|| cfg?.data.merged.clone()), "--data")?;
    let out = required(args.out.or_else(|| cfg?.data.bundle.clone()), "--out")?;
    let mut pc = if args.quick {
        PipelineConfig::quick()
    } else {
        cfg.map(|c| c.pipeline.clone()).unwrap_or_default()
    };
    if let Some(seed) = args.seed {
        pc.seed = seed;
    }
    let records = load_merged(&data)?;
    let pipeline = train_pipeline(&records, &pc)?;
    save_bundle(&pipeline, &out)?;
    let r = &pipeline.report;
    emit_json(
        &json!({
            "bundle": out,
            "train_start": r.train_start,
            "test_start": r.test_start,
            "test_end": r.test_end,
            "stage1": r.stage1,
            "stage2": r.stage2,
        }),
        None,
    )
}

fn evaluate(ctx: &Ctx, args: EvaluateArgs) -> anyhow::Result<()> {
    let cfg = ctx.config.as_ref();
    let data = required(args.data.or_else(|| cfg?.data.merged.clone()), "--data")?;
    let pipeline = load_bundle(&ctx.bundle(args.bundle)?)?;
    let families: Vec<RegressorConfig> = if !args.baselines.is_empty() {
        baseline_configs(&args.baselines).map_err(|e| Usage(e.to_string()))?
    } else {
        cfg.map(|c| c.baselines.families.clone())
            .unwrap_or_else(|| baseline_configs(&["linear", "rf", "svm", "mlp", "xgboost"]).expect("known names"))
    };
    let fraction = args.test_fraction.unwrap_or(pipeline.config.test_fraction);
    let seed = args.seed.unwrap_or(pipeline.config.seed);
    let ds = predicted_stage2_dataset(&pipeline, &load_merged(&data)?)?;
    let table = run_baseline_comparison(&ds, &families, fraction, seed)?;
    print!("{table}");
    if let Some(path) = args.csv {
        let mut w = create(&path)?;
        table.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn forecast(ctx: &Ctx, args: ForecastArgs) -> anyhow::Result<()> {
    let fc = ctx.forecast(&args.opts, None)?;
    if let Some(path) = &args.csv {
        let mut w = create(path)?;
        fc.write_csv(&mut w)?;
        w.flush()?;
    }
    emit_json(&fc, args.out.as_deref())
}

fn explain(ctx: &Ctx, args: ExplainArgs) -> anyhow::Result<()> {
    let dir = ctx.bundle(args.opts.bundle.clone())?;
    let pipeline = load_bundle(&dir)?;
    let irradiance = ctx.irradiance(&args.opts)?;
    let fc = forecast_pipeline(&pipeline, ctx.horizon(args.opts.horizon)?, None, irradiance)?;
    let mode = match args.permutations {
        Some(n) => ShapleyMode::Sampled {
            n_permutations: n,
            seed: args.seed,
        },
        None => ShapleyMode::Exact,
    };
    let report = explain_forecast(&pipeline, &fc.aod, args.stage, irradiance, mode)?;
    println!("{:<4} {:<24} {:>12} {:>12}", "rank", "feature", "mean|phi|", "std|phi|");
    for row in attribution_summary(&report) {
        println!("{:<4} {:<24} {:>12.6} {:>12.6}", row.rank, row.feature, row.mean_abs_phi, row.std_abs_phi);
    }
    if let Some(path) = args.out {
        let mut w = create(&path)?;
        write_summary_csv(&mut w, &report)?;
        w.flush()?;
    }
    if let Some(path) = args.report {
        emit_json(&json!({ "dates": fc.aod.dates(), "report": report }), Some(&path))?;
    }
    Ok(())
}

fn control(ctx: &Ctx, args: ControlArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.forecast).with_context(|| format!("reading {}", args.forecast.display()))?;
    let fc: PipelineForecast = serde_json::from_str(&text).with_context(|| format!("parsing {}", args.forecast.display()))?;
    let salinity = args.salinity.map(|s| vec![s; fc.horizon()]);
    let list = directives_for_forecast(&fc, salinity.as_deref(), &ctx.thresholds())?;
    emit_json(&list, args.out.as_deref())
}

fn scenario(ctx: &Ctx, args: ScenarioArgs) -> anyhow::Result<()> {
    let spec = match (&args.preset, args.delta_t2m, args.aod_multiplier) {
        (Some(name), _, _) => {
            let presets = ctx.config.as_ref().map(|c| c.scenarios.clone()).unwrap_or_default();
            match presets.get(name) {
                Some(s) => s.clone(),
                None if name == "paper" => ScenarioSpec::stress_preset(),
                None => bail!(Usage(format!("unknown scenario preset `{name}`"))),
            }
        }
        (None, Some(dt), Some(m)) => ScenarioSpec::new(dt, m, "custom").map_err(|e| Usage(e.to_string()))?,
        _ => bail!(Usage("pass --preset or both --delta-t2m and --aod-multiplier".into())),
    };
    let baseline = ctx.forecast(&args.opts, None)?;
    let stressed = ctx.forecast(&args.opts, Some(&spec))?;
    let thresholds = ctx.thresholds();
    let severe_days = |fc: &PipelineForecast| -> anyhow::Result<usize> {
        let list = directives_for_forecast(fc, None, &thresholds)?;
        Ok(list.iter().filter(|d| d.directive.severity == SeverityLevel::Severe).count())
    };
    let (severe_base, severe_scen) = (severe_days(&baseline)?, severe_days(&stressed)?);
    let cmp = compare_scenario(baseline, stressed)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    emit_json(
        &json!({
            "scenario": spec,
            "horizon": cmp.baseline.horizon(),
            "dates": cmp.baseline.aod.dates(),
            "baseline_aod": cmp.baseline.aod.values,
            "scenario_aod": cmp.scenario.aod.values,
            "aod_delta": cmp.aod_delta,
            "baseline_efficiency_loss_pct": cmp.baseline.efficiency_loss_pct,
            "scenario_efficiency_loss_pct": cmp.scenario.efficiency_loss_pct,
            "efficiency_loss_delta": cmp.efficiency_loss_delta,
            "mean_aod_delta": mean(&cmp.aod_delta),
            "mean_efficiency_loss_delta": cmp.mean_efficiency_loss_delta,
            "severe_days_baseline": severe_base,
            "severe_days_scenario": severe_scen,
        }),
        None,
    )?;
    if let Some(path) = args.out {
        emit_json(&cmp, Some(&path))?;
    }
    Ok(())
}

fn serve(ctx: &Ctx, args: ServeArgs) -> anyhow::Result<()> {
    let bundle = args.bundle.or_else(|| ctx.config.as_ref()?.data.bundle.clone());
    let pipeline = match &bundle {
        Some(dir) => Some(load_bundle(dir).with_context(|| format!("loading bundle {}", dir.display()))?),
        None => None,
    };
    let settings = ServiceSettings {
        default_horizon: ctx.horizon(None)?,
        irradiance: match &ctx.config {
            Some(c) => c.irradiance_mode(),
            None => IrradianceMode::HoldLast,
        },
        thresholds: ctx.thresholds(),
    };
    let bind = args
        .bind
        .or_else(|| Some(ctx.config.as_ref()?.server.bind.clone()))
        .unwrap_or_else(|| "127.0.0.1:8080".into());
    let state = AppState::new(settings, pipeline)?;
    if !state.has_bundle() {
        eprintln!("warning: no bundle loaded; forecast endpoints will answer 409");
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .with_context(|| format!("binding {bind}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state)).await?;
        Ok(())
    })
}

fn synth(args: SynthArgs) -> anyhow::Result<()> {
    let mut cfg = SyntheticConfig::default();
    if let Some(d) = args.days {
        cfg.days = d;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let site = generate(&cfg);
    std::fs::create_dir_all(&args.out)?;
    let mut w = create(&args.out.join("meteo.csv"))?;
    write_meteo_csv(&mut w, &site.meteo)?;
    w.flush()?;
    let mut w = create(&args.out.join("aod.csv"))?;
    write_aod_csv(&mut w, &site.aod_samples)?;
    w.flush()?;
    let roi = site.roi(cfg.latitude);
    eprintln!(
        "wrote {} days to {}; site lat {} lon {} radius {} km",
        cfg.days,
        args.out.display(),
        roi.center_lat,
        roi.center_lon,
        roi.radius_km
    );
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(path) => Some(AppConfig::load(path)?),
        None => None,
    };
    let ctx = Ctx { config };
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Forecast(a) => forecast(&ctx, a),
        Command::Explain(a) => explain(&ctx, a),
        Command::Control(a) => control(&ctx, a),
        Command::Scenario(a) => scenario(&ctx, a),
        Command::Serve(a) => serve(&ctx, a),
        Command::Synth(a) => synth(a),
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<std::io::Error>()
            .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
            || c.downcast_ref::<serde_json::Error>()
                .is_some_and(|j| j.io_error_kind() == Some(std::io::ErrorKind::BrokenPipe))
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Help and version exit 0, usage errors exit 2.
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // The reader went away (e.g. `| head`); nothing left to report to.
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
