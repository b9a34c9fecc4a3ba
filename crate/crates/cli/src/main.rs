//! `mvar`: quality control, training, forecasting and evaluation from the shell.

mod config;
mod error;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mvar_core::data::qc::{run_qc, QcConfig, VariogramChoice};
use mvar_core::data::{
    compute_norm_stats, read_city_csv, read_station_csv, write_city_csv, CityMetadata, CitySeries, MeteoGrid,
    MeteoStats, Timestamp, Variogram,
};
use mvar_core::eval::{
    persistence_baseline, relative_rmse, rmse_buckets, write_bucket_csv, write_step_csv, ForecastSet, Pooling, BUCKETS,
};
use mvar_core::model::{Checkpoint, Mvar};
use mvar_core::scheduler::{forecast_inits, greedy_plan, read_forecast_csv, write_forecast_csv, ForecastPlan, DEFAULT_LEADS};
use mvar_core::synthetic::{generate, SynthConfig};
use mvar_core::train::{build_samples, train, write_loss_log, SampleSpec, Split};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "mvar", version, about = "Multivariate autoregressive air-pollutant forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Station QC: drop sparse stations, fill or drop timesteps, aggregate to cities.
    Qc {
        /// Station CSV (`time,station_id,city_id,lat,lon,<pollutants>`).
        #[arg(long)]
        stations: PathBuf,
        /// Output directory for city.csv, city.json, norm.json and audit.json.
        #[arg(long)]
        out: PathBuf,
        /// `auto` to fit per pollutant, or `sill,range_km[,nugget]`.
        #[arg(long, default_value = "auto")]
        variogram: String,
    },
    /// Train one fixed-lead model.
    Train {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Lead spacing in hours; overrides `lead_hours`.
        #[arg(long)]
        lead: Option<u32>,
        /// Overrides `train.epochs`.
        #[arg(long)]
        epochs: Option<usize>,
        /// Overrides `train.seed`.
        #[arg(long, env = "MVAR_SEED")]
        seed: Option<u64>,
    },
    /// Compose fixed-lead checkpoints into an hourly forecast.
    Forecast {
        /// Directory holding `lead_<h>h.mvck` files.
        #[arg(long)]
        checkpoints: PathBuf,
        /// Init time, e.g. 2021-03-01T00:00:00Z.
        #[arg(long)]
        init: String,
        /// Hours to forecast.
        #[arg(long)]
        horizon: u32,
        /// City CSV with observations up to the init time.
        #[arg(long)]
        history: PathBuf,
        /// Meteorological grid, required by meteorology-coupled checkpoints.
        #[arg(long)]
        meteo: Option<PathBuf>,
        /// Available lead times, largest first.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LEADS)]
        leads: Vec<u32>,
        /// Load `lead_<h>h.best.mvck` instead of the final parameters.
        #[arg(long)]
        best: bool,
        /// Forecast CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Bucketed and per-step RMSE of a forecast CSV against a city CSV.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Directory for buckets.csv and steps.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = PoolingArg::Pooled)]
        pooling: PoolingArg,
        /// Also score persistence from the same init times and report ratios.
        #[arg(long)]
        persistence: bool,
    },
    /// Write a seeded synthetic dataset.
    Synth {
        /// Generator configuration (TOML); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured seed.
        #[arg(long, env = "MVAR_SEED")]
        seed: Option<u64>,
    },
    /// Print the greedy lead decomposition of a horizon.
    Plan {
        #[arg(long)]
        horizon: u32,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LEADS)]
        leads: Vec<u32>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolingArg {
    Pooled,
    MeanOfSteps,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Qc { stations, out, variogram } => qc(&stations, &out, &variogram),
        Command::Train { config, lead, epochs, seed } => train_cmd(&config, lead, epochs, seed),
        Command::Forecast {
            checkpoints,
            init,
            horizon,
            history,
            meteo,
            leads,
            best,
            out,
        } => forecast(&checkpoints, &init, horizon, &history, meteo.as_deref(), &leads, best, &out),
        Command::Evaluate {
            pred,
            truth,
            out,
            pooling,
            persistence,
        } => evaluate(&pred, &truth, &out, pooling, persistence),
        Command::Synth { config, out, seed } => synth(config.as_deref(), &out, seed),
        Command::Plan { horizon, leads } => plan(horizon, &leads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::missing(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn sidecar(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn read_city(path: &Path) -> Result<CitySeries, CliError> {
    let meta: CityMetadata = serde_json::from_reader(open(&sidecar(path))?)
        .map_err(|e| CliError::Input(format!("{}: {e}", sidecar(path).display())))?;
    Ok(read_city_csv(open(path)?, &meta.cities)?)
}

fn parse_variogram(s: &str) -> Result<VariogramChoice, CliError> {
    if s == "auto" {
        return Ok(VariogramChoice::Auto);
    }
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Input(format!("variogram must be auto or sill,range[,nugget], got {s:?}")))?;
    let v = match parts[..] {
        [sill, range] => Variogram::new(sill, range, 0.0)?,
        [sill, range, nugget] => Variogram::new(sill, range, nugget)?,
        _ => return Err(CliError::Input(format!("variogram needs two or three numbers, got {s:?}"))),
    };
    Ok(VariogramChoice::Fixed(v))
}

fn qc(stations: &Path, out: &Path, variogram: &str) -> Result<(), CliError> {
    let cfg = QcConfig {
        variogram: parse_variogram(variogram)?,
        ..QcConfig::default()
    };
    let records = read_station_csv(open(stations)?)?;
    let result = run_qc(&records, &cfg)?;
    if result.series.valid_count() == 0 {
        return Err(CliError::Empty("no city values survived quality control".into()));
    }
    std::fs::create_dir_all(out)?;
    let csv = out.join("city.csv");
    write_city_csv(create(&csv)?, &result.series)?;
    let summary = result.audit.summary();
    let meta = CityMetadata {
        audit: Some(summary.clone()),
        ..CityMetadata::for_series(&result.series)
    };
    write_json(&sidecar(&csv), &meta)?;
    compute_norm_stats(&result.series)?.write_json(create(&out.join("norm.json"))?)?;
    write_json(&out.join("audit.json"), &result.audit)?;
    println!(
        "stations {} removed {} cities {} hours {} dropped {:?} filled {:?}",
        summary.stations_total,
        summary.stations_removed,
        result.series.n_cities(),
        summary.timesteps_total,
        summary.dropped_timesteps,
        summary.filled_values
    );
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(mvar_core::MvarError::from)?;
    w.flush()?;
    Ok(())
}

fn train_cmd(config: &Path, lead: Option<u32>, epochs: Option<usize>, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(l) = lead {
        cfg.lead_hours = l;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    let series = read_city(&cfg.data.city_csv)?;
    let grid = match (&cfg.data.meteo, cfg.model.use_meteo) {
        (Some(p), true) => Some(MeteoGrid::read(open(p)?)?),
        _ => None,
    };
    let n = series.n_times();
    let train_end = (n as f64 * cfg.data.train_fraction).round() as usize;
    let val_end = (n as f64 * (cfg.data.train_fraction + cfg.data.val_fraction)).round() as usize;
    let norm = compute_norm_stats(&series.slice_time(0, train_end)?)?;
    let normalized = norm.normalize(&series)?;
    let meteo_stats = match &grid {
        Some(g) => {
            let idx = |t: usize| {
                g.time_index(series.time(t))
                    .ok_or_else(|| CliError::Input(format!("meteo grid has no frame at {}", series.time(t))))
            };
            Some(MeteoStats::compute(g, idx(0)?, idx(train_end - 1)? + 1)?)
        }
        None => None,
    };
    let hyper = cfg.model.hyper(
        series.n_cities(),
        series.n_pollutants(),
        grid.as_ref().map(|g| (g.n_channels(), g.grid.height, g.grid.width)),
    );
    let model = Mvar::new(hyper, series.cities.clone(), grid.as_ref().map(|g| g.grid))?;
    let frames = grid.as_ref().zip(meteo_stats.as_ref());
    let spec = |from, to| SampleSpec {
        tau: cfg.train.tau,
        lead_hours: cfg.lead_hours,
        stride_hours: cfg.data.stride_hours,
        from,
        to,
    };
    let train_samples = build_samples(&normalized, frames, &spec(0, train_end))?;
    let val_samples = build_samples(&normalized, frames, &spec(train_end, val_end))?;
    if train_samples.is_empty() {
        return Err(CliError::Empty(format!(
            "no complete {}-step training windows at {}h lead",
            cfg.train.tau, cfg.lead_hours
        )));
    }
    let outcome = train(&model, model.init_params(cfg.train.seed), &train_samples, &val_samples, &cfg.train)?;
    std::fs::create_dir_all(&cfg.data.out_dir)?;
    let stem = cfg.data.out_dir.join(format!("lead_{}h", cfg.lead_hours));
    let ck = |params| Checkpoint {
        model: model.clone(),
        params,
        lead_hours: cfg.lead_hours,
        norm: Some(norm.clone()),
        meteo_stats: meteo_stats.clone(),
    };
    ck(outcome.params).save(&stem.with_extension("mvck"))?;
    ck(outcome.best_params).save(&stem.with_extension("best.mvck"))?;
    write_loss_log(create(&stem.with_extension("loss.csv"))?, &outcome.log)?;
    let last = outcome.log.iter().rev().find(|r| r.split == Split::Train).map_or(f64::NAN, |r| r.loss);
    println!(
        "lead {}h: {} train / {} val samples, loss {:.4} -> {:.4}, best epoch {}",
        cfg.lead_hours,
        train_samples.len(),
        val_samples.len(),
        outcome.initial_loss,
        last,
        outcome.best_epoch
    );
    Ok(())
}

fn plan_text(plan: &ForecastPlan) -> String {
    let steps: Vec<String> = plan.steps.iter().map(u32::to_string).collect();
    format!("horizon: {}\nsteps: {}\ninvocations: {}\n", plan.horizon, steps.join(","), plan.invocations)
}

fn plan(horizon: u32, leads: &[u32]) -> Result<(), CliError> {
    print!("{}", plan_text(&greedy_plan(horizon, leads)?));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn forecast(
    dir: &Path,
    init: &str,
    horizon: u32,
    history: &Path,
    meteo: Option<&Path>,
    leads: &[u32],
    best: bool,
    out: &Path,
) -> Result<(), CliError> {
    let init = Timestamp::parse(init).map_err(|e| CliError::Input(e.to_string()))?;
    let plan = greedy_plan(horizon, leads)?;
    // hourly output visits every offset, so every lead its greedy plan uses is needed
    let mut needed = BTreeSet::new();
    for h in 1..=horizon {
        needed.extend(greedy_plan(h, leads)?.steps);
    }
    let mut models = BTreeMap::new();
    for &l in needed.iter().rev() {
        let name = if best { format!("lead_{l}h.best.mvck") } else { format!("lead_{l}h.mvck") };
        let path = dir.join(name);
        if !path.exists() {
            return Err(mvar_core::MvarError::MissingCheckpoint(l).into());
        }
        let ck = Checkpoint::load(&path)?;
        if ck.lead_hours != l {
            return Err(CliError::Input(format!("{} holds a {}h model", path.display(), ck.lead_hours)));
        }
        models.insert(l, ck);
    }
    let series = read_city(history)?;
    let grid = match meteo {
        Some(p) => Some(MeteoGrid::read(open(p)?)?),
        None => None,
    };
    let set = forecast_inits(&models, &series, &[init], horizon as usize, 1, grid.as_ref())?;
    write_forecast_csv(create(out)?, &set.to_rows())?;
    print!("{}", plan_text(&plan));
    println!("leads_loaded: {}", needed.iter().rev().map(u32::to_string).collect::<Vec<_>>().join(","));
    Ok(())
}

fn evaluate(pred: &Path, truth: &Path, out: &Path, pooling: PoolingArg, persistence: bool) -> Result<(), CliError> {
    let truth = read_city(truth)?;
    let rows = read_forecast_csv(open(pred)?)?;
    let ids: Vec<String> = truth.cities.iter().map(|c| c.id.clone()).collect();
    let set = ForecastSet::from_rows(&rows, &ids, &truth.pollutants)?;
    let pooling = match pooling {
        PoolingArg::Pooled => Pooling::Pooled,
        PoolingArg::MeanOfSteps => Pooling::MeanOfSteps,
    };
    let report = rmse_buckets(&set, &truth, pooling)?;
    std::fs::create_dir_all(out)?;
    write_bucket_csv(create(&out.join("buckets.csv"))?, &report)?;
    write_step_csv(create(&out.join("steps.csv"))?, &report)?;
    let labels: Vec<&str> = BUCKETS.iter().map(|b| b.0).collect();
    println!("pollutant,{}", labels.join(","));
    let fmt = |v: &Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    for (p, row) in report.pollutants.iter().zip(&report.bucket_rmse) {
        println!("{p},{}", row.iter().map(fmt).collect::<Vec<_>>().join(","));
    }
    if persistence {
        let base = persistence_baseline(&truth, &set.init_times, set.steps(), set.resolution_hours)?;
        let base_report = rmse_buckets(&base, &truth, pooling)?;
        write_bucket_csv(create(&out.join("persistence_buckets.csv"))?, &base_report)?;
        let rel = relative_rmse(&report, &base_report)?;
        println!("relative to persistence");
        for (p, row) in rel.pollutants.iter().zip(&rel.bucket_ratio) {
            println!("{p},{}", row.iter().map(fmt).collect::<Vec<_>>().join(","));
        }
    }
    Ok(())
}

fn synth(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::missing(format!("{}: {e}", p.display())))?;
            toml::from_str::<SynthConfig>(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let data = generate(&cfg)?;
    data.write_dir(out)?;
    println!(
        "{} cities, {} station rows, {} hours, {} meteo channels on {}x{}",
        cfg.n_cities,
        data.stations.len(),
        data.truth.n_times(),
        data.meteo.n_channels(),
        cfg.grid_height,
        cfg.grid_width
    );
    Ok(())
}
