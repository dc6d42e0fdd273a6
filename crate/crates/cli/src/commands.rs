use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mafn_core::cluster::{kmeans_fit, KMeansParams};
use mafn_core::data::cache::{cache_key, cache_path, WindowCache};
use mafn_core::data::{
    make_windows_with_states, parse_cmapss_str, parse_rul_str, select_sensors, truncate_at_fraction, write_cmapss,
    EngineRecord, SensorRecord, WindowSpec, SELECTED_SENSORS,
};
use mafn_core::error::StageExt;
use mafn_core::evaluate::{evaluate_cutoffs, evaluate_decomposition, evaluate_testset};
use mafn_core::model::{Mafn, MafnDims};
use mafn_core::pipeline::{prepare_training, Predictor, PreparedData};
use mafn_core::strategy::{forecasters, rul_estimators, StrategyContext};
use mafn_core::synth::{synthesize, truth_csv, SynthSpec};
use mafn_core::train::train;
use mafn_core::{Checkpoint, MafnError, TrainConfig};

use crate::output::{read_input, sha256_hex, OutDir, RunManifest};
use crate::plot::{Chart, Marker, Series};
use crate::{CliError, Command, ConfigAction, Mode};

pub const SYNTH_DATA: &str = "train_SYN.txt";
pub const SYNTH_TRUTH: &str = "truth.csv";
pub const CLUSTERS_JSON: &str = "clusters.json";
pub const CLUSTER_REPORT: &str = "cluster_report.csv";
pub const CHECKPOINT: &str = "checkpoint.mafn";
pub const TRAINING_LOG: &str = "training_log.csv";
pub const FORECAST_CSV: &str = "forecast.csv";
pub const FORECAST_SVG: &str = "forecast.svg";
pub const FORECAST_SUMMARY: &str = "forecast_summary.csv";

type CliResult<T> = std::result::Result<T, CliError>;

pub fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synthesize { spec, out, seed } => cmd_synthesize(spec.as_deref(), &out, seed),
        Command::Cluster {
            data,
            config,
            out,
            seed,
            k,
        } => cmd_cluster(&data, config.as_deref(), &out, seed, k),
        Command::Train {
            data,
            config,
            out,
            seed,
            no_cache,
        } => cmd_train(&data, config.as_deref(), &out, seed, no_cache),
        Command::Evaluate {
            checkpoint,
            data,
            out,
            mode,
            rul,
            estimator,
            constant_rul,
        } => cmd_evaluate(&EvaluateArgs {
            checkpoint,
            data,
            out,
            mode,
            rul,
            estimator,
            constant_rul,
        }),
        Command::Forecast {
            checkpoint,
            data,
            out,
            unit,
            cutoff_pct,
            sensor,
            horizon,
            forecaster,
            estimator,
        } => cmd_forecast(&ForecastArgs {
            checkpoint,
            data,
            out,
            unit,
            cutoff_pct,
            sensor,
            horizon,
            forecaster,
            estimator,
        }),
        Command::Config { action } => cmd_config(action),
    }
}

/// Runs `body` against a fresh output directory; on error everything it
/// wrote is removed.
fn in_out_dir(out: &Path, body: impl FnOnce(&mut OutDir) -> CliResult<RunManifest>) -> CliResult<()> {
    let mut dir = OutDir::create(out).stage("create output directory")?;
    match body(&mut dir) {
        Ok(manifest) => {
            let path = dir.finish(manifest).stage("write manifest")?;
            log::info!("wrote {}", path.display());
            Ok(())
        }
        Err(e) => {
            dir.abort();
            Err(e)
        }
    }
}

fn load_config(path: Option<&Path>) -> mafn_core::Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => TrainConfig::from_env(),
    }
}

/// Reads and parses a C-MAPSS file, returning the raw bytes for hashing.
fn read_cmapss(path: &Path) -> mafn_core::Result<(Vec<u8>, Vec<EngineRecord>)> {
    let bytes = read_input(path).stage("read data")?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| MafnError::Data(format!("{}: not UTF-8 text: {e}", path.display())))
        .stage("parse")?;
    let records = parse_cmapss_str(text, &path.display().to_string()).stage("parse")?;
    Ok((bytes, records))
}

/// `1-40, 42` style listing.
pub fn describe_ids(ids: &[u32]) -> String {
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut parts = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[j] + 1 {
            j += 1;
        }
        parts.push(if j == i {
            sorted[i].to_string()
        } else {
            format!("{}-{}", sorted[i], sorted[j])
        });
        i = j + 1;
    }
    parts.join(", ")
}

fn cmd_synthesize(spec_path: Option<&Path>, out: &Path, seed: Option<u64>) -> CliResult<()> {
    let mut spec = match spec_path {
        Some(p) => {
            let bytes = read_input(p).stage("read spec")?;
            let text = String::from_utf8_lossy(&bytes);
            SynthSpec::from_toml_str(&text).stage("spec")?
        }
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate().stage("spec")?;
    let data = synthesize(&spec).stage("synthesize")?;
    in_out_dir(out, |dir| {
        dir.write("data", SYNTH_DATA, write_cmapss(&data.records))?;
        dir.write("truth", SYNTH_TRUTH, truth_csv(&data.truth))?;
        let mut m = RunManifest::new("synthesize");
        m.seed = Some(spec.seed);
        m.config(&spec);
        if let Some(p) = spec_path {
            m.input("spec", p, &read_input(p)?);
        }
        println!(
            "{} engines, {} cycles -> {}",
            spec.engines,
            data.truth.len(),
            dir.path(SYNTH_DATA).display()
        );
        Ok(m)
    })
}

fn cmd_cluster(data: &Path, config: Option<&Path>, out: &Path, seed: Option<u64>, k: Option<usize>) -> CliResult<()> {
    let mut cfg = load_config(config).stage("config")?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(k) = k {
        cfg.num_states = k;
    }
    cfg.validate().stage("config")?;
    let (bytes, records) = read_cmapss(data)?;
    let points: Vec<Vec<f64>> = records
        .iter()
        .flat_map(|r| r.cycles.iter().map(|c| c.settings.to_vec()))
        .collect();
    let params = KMeansParams {
        k: cfg.num_states,
        max_iter: cfg.cluster_max_iter,
        tol: cfg.cluster_tol,
        restarts: cfg.cluster_restarts,
        seed: cfg.seed,
    };
    let fit = kmeans_fit(&points, &params).stage("cluster")?;
    let model = fit.model.relabel_canonical(&points).stage("cluster")?;
    let counts = model.counts(&points).stage("cluster")?;
    in_out_dir(out, |dir| {
        let mut report = String::from("cluster,count,setting_1,setting_2,setting_3\n");
        for (j, (c, n)) in model.centroids.iter().zip(&counts).enumerate() {
            let _ = writeln!(report, "{j},{n},{:?},{:?},{:?}", c[0], c[1], c[2]);
        }
        dir.write(
            "clusters",
            CLUSTERS_JSON,
            serde_json::to_string_pretty(&model).expect("model serializes") + "\n",
        )?;
        dir.write("report", CLUSTER_REPORT, &report)?;
        print!("{report}");
        println!("inertia {:?}", model.inertia);
        let mut m = RunManifest::new("cluster");
        m.seed = Some(cfg.seed);
        m.config(&cfg);
        m.input("data", data, &bytes);
        Ok(m)
    })
}

fn cmd_train(data: &Path, config: Option<&Path>, out: &Path, seed: Option<u64>, no_cache: bool) -> CliResult<()> {
    let mut cfg = load_config(config).stage("config")?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().stage("config")?;
    let config_bytes = config.map(read_input).transpose().stage("read config")?;
    let (bytes, raw) = read_cmapss(data)?;
    let records: Vec<SensorRecord> = raw.iter().map(select_sensors).collect();
    in_out_dir(out, |dir| {
        let key = cache_key(&sha256_hex(&bytes), &WindowSpec::from_config(&cfg), &cfg.hash_hex());
        let cache_file = cache_path(dir.path("").as_path(), &key);
        let cache_name = cache_file
            .file_name()
            .expect("cache file name")
            .to_string_lossy()
            .into_owned();
        let cached = if no_cache {
            None
        } else {
            WindowCache::load_if_fresh(&cache_file, &key).stage("window cache")?
        };
        let prepared = match cached {
            Some(c) => {
                log::info!("reusing {}", cache_file.display());
                dir.adopt("window_cache", &cache_name, false);
                PreparedData::from_cache(c)
            }
            None => {
                let p = prepare_training(&records, &cfg)?;
                if !no_cache {
                    dir.adopt("window_cache", &cache_name, true);
                    p.clone()
                        .into_cache(key.clone())
                        .save(&cache_file)
                        .stage("window cache")?;
                }
                p
            }
        };
        log::info!(
            "{} training windows from {} engines, {} validation windows from {} engines",
            prepared.train.len(),
            prepared.train_units.len(),
            prepared.validation.len(),
            prepared.validation_units.len()
        );
        let dims = MafnDims::from_config(&cfg, prepared.pre.stats.channels());
        let model = Mafn::new(dims.clone()).stage("build model")?;
        let outcome = train(
            &model,
            model.init_params(cfg.seed),
            &prepared.train,
            &prepared.validation,
            &cfg,
        )
        .stage("train")?;
        let ckpt = Checkpoint {
            config: cfg.clone(),
            dims,
            clusters: prepared.pre.clusters.clone(),
            stats: prepared.pre.stats.clone(),
            params: outcome.params,
        };
        dir.write("checkpoint", CHECKPOINT, ckpt.to_bytes().stage("checkpoint")?)?;
        dir.write("training_log", TRAINING_LOG, outcome.log.to_csv())?;
        println!(
            "{} epochs{}; best epoch {} with validation loss {:.6}",
            outcome.log.epochs.len(),
            if outcome.stopped_early { " (early stop)" } else { "" },
            outcome.best_epoch,
            outcome.best_val
        );
        let mut m = RunManifest::new("train");
        m.seed = Some(cfg.seed);
        m.config(&cfg);
        m.input("data", data, &bytes);
        if let (Some(p), Some(b)) = (config, &config_bytes) {
            m.input("config", p, b);
        }
        m.option("validation_units", describe_ids(&prepared.validation_units));
        Ok(m)
    })
}

pub struct EvaluateArgs {
    pub checkpoint: Option<PathBuf>,
    pub data: PathBuf,
    pub out: PathBuf,
    pub mode: Mode,
    pub rul: Option<PathBuf>,
    pub estimator: String,
    pub constant_rul: Option<f64>,
}

fn load_checkpoint(path: &Path) -> mafn_core::Result<(Vec<u8>, Checkpoint)> {
    let bytes = read_input(path).stage("read checkpoint")?;
    let ckpt = Checkpoint::from_bytes(&bytes).stage("read checkpoint")?;
    Ok((bytes, ckpt))
}

fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let ckpt = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let rul_cap = ckpt
        .as_ref()
        .map_or(TrainConfig::default().rul_cap, |(_, c)| c.config.rul_cap);
    let (bytes, raw) = read_cmapss(&a.data)?;
    let records: Vec<SensorRecord> = raw.iter().map(select_sensors).collect();
    let mut manifest = RunManifest::new("evaluate");
    manifest.option("mode", a.mode.as_str());
    manifest.input("data", &a.data, &bytes);
    if let (Some(p), Some((b, _))) = (&a.checkpoint, &ckpt) {
        manifest.input("checkpoint", p, b);
    }
    let mut ctx = StrategyContext {
        checkpoint: ckpt.map(|(_, c)| c),
        lifetimes: BTreeMap::new(),
        rul_cap,
        constant_rul: a.constant_rul.unwrap_or(rul_cap / 2.0),
    };

    let (name, csv) = match a.mode {
        Mode::Cutoffs => {
            ctx.lifetimes = records.iter().map(|r| (r.unit_id, r.len())).collect();
            let est = rul_estimators().build(&a.estimator, &ctx).stage("estimator")?;
            let report = evaluate_cutoffs(est.as_ref(), &records, rul_cap).stage("evaluate")?;
            manifest.option("estimator", &a.estimator);
            ("cutoffs.csv", report.to_csv())
        }
        Mode::Testset => {
            let rul_path = a
                .rul
                .as_deref()
                .ok_or_else(|| CliError::Usage("--mode testset needs --rul <FILE>".into()))?;
            let rul_bytes = read_input(rul_path).stage("read RUL file")?;
            let rul = parse_rul_str(&String::from_utf8_lossy(&rul_bytes), &rul_path.display().to_string())
                .stage("parse RUL file")?;
            manifest.input("rul", rul_path, &rul_bytes);
            ctx.lifetimes = records
                .iter()
                .zip(&rul)
                .map(|(r, &y)| (r.unit_id, r.len() + y.max(0.0).round() as usize))
                .collect();
            let est = rul_estimators().build(&a.estimator, &ctx).stage("estimator")?;
            let row = evaluate_testset(est.as_ref(), &records, &rul, rul_cap).stage("evaluate")?;
            manifest.option("estimator", &a.estimator);
            ("testset.csv", row.to_csv())
        }
        Mode::Decomposition => {
            let ckpt = ctx
                .checkpoint
                .as_ref()
                .ok_or_else(|| CliError::Usage("--mode decomposition needs --checkpoint".into()))?;
            let predictor = Predictor::new(ckpt).stage("load model")?;
            let spec = WindowSpec::from_config(&predictor.config);
            let mut windows = Vec::new();
            for r in &records {
                let (norm, states) = predictor.pre.prepare(r)?;
                windows.extend(make_windows_with_states(&norm, &states, &spec).stage("window")?);
            }
            let report = evaluate_decomposition(&predictor.model, &predictor.params, &windows).stage("evaluate")?;
            ("decomposition.csv", report.to_csv())
        }
    };
    in_out_dir(&a.out, |dir| {
        dir.write("report", name, &csv)?;
        print!("{csv}");
        Ok(manifest)
    })
}

pub struct ForecastArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    pub unit: u32,
    pub cutoff_pct: f64,
    pub sensor: usize,
    pub horizon: Option<usize>,
    pub forecaster: String,
    pub estimator: String,
}

fn cmd_forecast(a: &ForecastArgs) -> CliResult<()> {
    let (ckpt_bytes, ckpt) = load_checkpoint(&a.checkpoint)?;
    let (bytes, raw) = read_cmapss(&a.data)?;
    let records: Vec<SensorRecord> = raw.iter().map(select_sensors).collect();
    let record = records.iter().find(|r| r.unit_id == a.unit).ok_or_else(|| {
        let ids: Vec<u32> = records.iter().map(|r| r.unit_id).collect();
        MafnError::Data(format!(
            "unit {} not in {}; available units: {}",
            a.unit,
            a.data.display(),
            describe_ids(&ids)
        ))
    })?;
    let channel = SELECTED_SENSORS.iter().position(|&s| s == a.sensor).ok_or_else(|| {
        let list: Vec<String> = SELECTED_SENSORS.iter().map(|s| s.to_string()).collect();
        MafnError::Contract(format!(
            "sensor {} is not a model input; choose one of {}",
            a.sensor,
            list.join(", ")
        ))
    })?;
    if !(a.cutoff_pct > 0.0 && a.cutoff_pct < 100.0) {
        return Err(MafnError::Contract(format!(
            "cutoff {}% leaves no remaining cycles to forecast; use a value in (0, 100)",
            a.cutoff_pct
        ))
        .into());
    }
    let window = ckpt.dims.window;
    let cut = truncate_at_fraction(record, a.cutoff_pct / 100.0)?;
    if cut.kept < window {
        return Err(MafnError::Contract(format!(
            "cutoff {}% keeps {} of {} cycles of unit {}; the model window needs {window}",
            a.cutoff_pct,
            cut.kept,
            record.len(),
            a.unit
        ))
        .into());
    }
    let horizon = a.horizon.unwrap_or(ckpt.dims.horizon);
    let stats = ckpt.stats.clone();
    let ctx = StrategyContext {
        lifetimes: records.iter().map(|r| (r.unit_id, r.len())).collect(),
        rul_cap: ckpt.config.rul_cap,
        constant_rul: ckpt.config.rul_cap / 2.0,
        checkpoint: Some(ckpt),
    };
    let forecaster = forecasters().build(&a.forecaster, &ctx).stage("forecaster")?;
    let estimator = rul_estimators().build(&a.estimator, &ctx).stage("estimator")?;
    let history = std::slice::from_ref(&cut.record);
    let predicted = forecaster.forecast(history, horizon).stage("forecast")?.remove(0);
    let rul = estimator.estimate(history).stage("estimate RUL")?[0];

    let norm = |v: f64| stats.normalize(channel, v);
    let kept = cut.kept;
    let hist: Vec<(f64, f64)> = (0..kept)
        .map(|t| ((t + 1) as f64, norm(record.sensors[t][channel])))
        .collect();
    let fc: Vec<(f64, f64)> = predicted
        .iter()
        .enumerate()
        .map(|(h, row)| ((kept + h + 1) as f64, norm(row[channel])))
        .collect();
    let truth: Vec<(f64, f64)> = (kept..record.len())
        .map(|t| ((t + 1) as f64, norm(record.sensors[t][channel])))
        .collect();
    let predicted_ttf = kept as f64 + rul;
    let true_ttf = record.len() as f64;

    let mut csv = String::from("cycle,history,forecast,truth\n");
    for &(c, v) in &hist {
        let _ = writeln!(csv, "{c},{v:?},,");
    }
    for (h, &(c, v)) in fc.iter().enumerate() {
        match truth.get(h) {
            Some(&(_, y)) => {
                let _ = writeln!(csv, "{c},,{v:?},{y:?}");
            }
            None => {
                let _ = writeln!(csv, "{c},,{v:?},");
            }
        }
    }
    let summary = format!(
        "unit,sensor,cutoff_cycle,predicted_rul,true_rul,predicted_ttf,true_ttf\n{},{},{},{:?},{},{:?},{:?}\n",
        a.unit,
        a.sensor,
        kept,
        rul,
        record.len() - kept,
        predicted_ttf,
        true_ttf
    );
    // the truth is drawn from the last history point so the line is continuous
    let mut truth_line = vec![*hist.last().expect("history is non-empty")];
    truth_line.extend(&truth);
    let mut fc_line = vec![*hist.last().expect("history is non-empty")];
    fc_line.extend(&fc);
    let chart = Chart {
        title: format!("Unit {}, sensor {}, cutoff {}%", a.unit, a.sensor, a.cutoff_pct),
        x_label: "cycle".into(),
        y_label: format!("sensor {} (normalized)", a.sensor),
        series: vec![
            Series {
                label: "history".into(),
                color: "#1f77b4",
                points: hist,
            },
            Series {
                label: format!("forecast ({})", a.forecaster),
                color: "#ff7f0e",
                points: fc_line,
            },
            Series {
                label: "truth".into(),
                color: "#2ca02c",
                points: truth_line,
            },
        ],
        markers: vec![
            Marker {
                label: format!("predicted failure {predicted_ttf:.0}"),
                color: "#d62728",
                x: predicted_ttf,
            },
            Marker {
                label: format!("true failure {true_ttf:.0}"),
                color: "#000000",
                x: true_ttf,
            },
        ],
    };
    in_out_dir(&a.out, |dir| {
        dir.write("series", FORECAST_CSV, &csv)?;
        dir.write("summary", FORECAST_SUMMARY, &summary)?;
        dir.write("plot", FORECAST_SVG, chart.to_svg())?;
        print!("{summary}");
        let mut m = RunManifest::new("forecast");
        m.input("checkpoint", &a.checkpoint, &ckpt_bytes);
        m.input("data", &a.data, &bytes);
        m.option("unit", a.unit);
        m.option("cutoff_pct", a.cutoff_pct);
        m.option("sensor", a.sensor);
        m.option("horizon", horizon);
        m.option("forecaster", &a.forecaster);
        m.option("estimator", &a.estimator);
        Ok(m)
    })
}

fn cmd_config(action: ConfigAction) -> CliResult<()> {
    match action {
        ConfigAction::Init { out, force } => {
            let text = TrainConfig::default().to_toml();
            match out {
                None => print!("{text}"),
                Some(p) => {
                    if p.exists() && !force {
                        return Err(CliError::Usage(format!(
                            "{} exists; pass --force to overwrite",
                            p.display()
                        )));
                    }
                    std::fs::write(&p, text).map_err(|e| MafnError::io(&p, e))?;
                }
            }
            Ok(())
        }
        ConfigAction::Show { config } => {
            let cfg = load_config(config.as_deref()).stage("config")?;
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}
