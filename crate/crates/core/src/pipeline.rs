//! Training-data preparation and checkpoint-backed inference.

use crate::checkpoint::Checkpoint;
use crate::cluster::{kmeans_fit, ClusterModel, KMeansParams};
use crate::config::TrainConfig;
use crate::data::cache::{WindowCache, CACHE_FORMAT, CACHE_VERSION};
use crate::data::{make_windows_with_states, NormalizationStats, SensorRecord, WindowSample, WindowSpec};
use crate::error::{MafnError, Result, StageExt};
use crate::model::{clamp_rul, Mafn, MafnDims};
use crate::train::split_engines;
use mafn_tensor::ParamStore;

/// Fitted preprocessing: operating-state clusters and min-max stats.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub clusters: ClusterModel,
    pub stats: NormalizationStats,
}

impl Preprocessor {
    /// Clusters every cycle's operating settings and fits normalization on
    /// `train`.
    pub fn fit(train: &[SensorRecord], cfg: &TrainConfig) -> Result<Self> {
        let points: Vec<Vec<f64>> = train
            .iter()
            .flat_map(|r| r.settings.iter().map(|s| s.to_vec()))
            .collect();
        let params = KMeansParams {
            k: cfg.num_states,
            max_iter: cfg.cluster_max_iter,
            tol: cfg.cluster_tol,
            restarts: cfg.cluster_restarts,
            seed: cfg.seed,
        };
        let fit = kmeans_fit(&points, &params).stage("cluster")?;
        let clusters = fit.model.relabel_canonical(&points).stage("cluster")?;
        let stats = NormalizationStats::fit(train).stage("normalize")?;
        Ok(Self { clusters, stats })
    }

    /// Normalized copy of `record` and the state of each cycle.
    pub fn prepare(&self, record: &SensorRecord) -> Result<(SensorRecord, Vec<usize>)> {
        let states = self.clusters.assign_all(&record.settings).stage("assign states")?;
        let norm = self.stats.apply(record).stage("normalize")?;
        Ok((norm, states))
    }
}

/// Everything `train` needs, with the engine-level validation split.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub pre: Preprocessor,
    pub train_units: Vec<u32>,
    pub validation_units: Vec<u32>,
    pub train: Vec<WindowSample>,
    pub validation: Vec<WindowSample>,
}

/// Split by engine, fit preprocessing on the training engines, window both sides.
pub fn prepare_training(records: &[SensorRecord], cfg: &TrainConfig) -> Result<PreparedData> {
    let ids: Vec<u32> = records.iter().map(|r| r.unit_id).collect();
    let (train_units, validation_units) = split_engines(&ids, cfg.validation_fraction, cfg.seed).stage("split")?;
    let pick = |units: &[u32]| -> Vec<SensorRecord> {
        records
            .iter()
            .filter(|r| units.binary_search(&r.unit_id).is_ok())
            .cloned()
            .collect()
    };
    let train_records = pick(&train_units);
    let val_records = pick(&validation_units);
    let pre = Preprocessor::fit(&train_records, cfg)?;
    let spec = WindowSpec::from_config(cfg);
    let window_all = |recs: &[SensorRecord]| -> Result<Vec<WindowSample>> {
        let mut out = Vec::new();
        for r in recs {
            let (norm, states) = pre.prepare(r)?;
            out.extend(make_windows_with_states(&norm, &states, &spec).stage("window")?);
        }
        Ok(out)
    };
    let train = window_all(&train_records)?;
    let validation = window_all(&val_records)?;
    if train.is_empty() || validation.is_empty() {
        return Err(MafnError::Data(format!(
            "windowing produced {} training and {} validation windows; runs may be shorter than window = {}",
            train.len(),
            validation.len(),
            cfg.window
        )));
    }
    Ok(PreparedData {
        pre,
        train_units,
        validation_units,
        train,
        validation,
    })
}

impl PreparedData {
    pub fn into_cache(self, key: String) -> WindowCache {
        WindowCache {
            format: CACHE_FORMAT.into(),
            version: CACHE_VERSION,
            key,
            clusters: self.pre.clusters,
            stats: self.pre.stats,
            train_units: self.train_units,
            validation_units: self.validation_units,
            train: self.train,
            validation: self.validation,
        }
    }

    pub fn from_cache(c: WindowCache) -> Self {
        Self {
            pre: Preprocessor {
                clusters: c.clusters,
                stats: c.stats,
            },
            train_units: c.train_units,
            validation_units: c.validation_units,
            train: c.train,
            validation: c.validation,
        }
    }
}

/// Model outputs for one history, in sensor units.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    /// `horizon × sensors`, denormalized.
    pub sensors: Vec<Vec<f64>>,
    pub states: Vec<usize>,
    /// Clamped to `[0, rul_cap]`.
    pub rul: f64,
    /// Scalar degradation trend per horizon step.
    pub trend: Vec<f64>,
}

/// A trained network with its preprocessing, ready for raw histories.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub model: Mafn,
    pub params: ParamStore,
    pub pre: Preprocessor,
    pub config: TrainConfig,
}

impl Predictor {
    pub fn new(ckpt: &Checkpoint) -> Result<Self> {
        let model = Mafn::new(ckpt.dims.clone())?;
        model.check_params(&ckpt.params)?;
        if ckpt.stats.channels() != ckpt.dims.sensors {
            return Err(MafnError::Contract(format!(
                "checkpoint normalization has {} channels, model expects {}",
                ckpt.stats.channels(),
                ckpt.dims.sensors
            )));
        }
        Ok(Self {
            model,
            params: ckpt.params.clone(),
            pre: Preprocessor {
                clusters: ckpt.clusters.clone(),
                stats: ckpt.stats.clone(),
            },
            config: ckpt.config.clone(),
        })
    }

    pub fn dims(&self) -> &MafnDims {
        &self.model.dims
    }

    /// Shortest history accepted without error.
    pub fn min_history(&self) -> usize {
        if self.config.pad_short_histories {
            1
        } else {
            self.dims().window
        }
    }

    /// Last `window` cycles, normalized, with their states. Short histories
    /// are left-padded by repeating the first cycle when the config allows.
    pub fn input_window(&self, history: &SensorRecord) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let w = self.dims().window;
        if history.channels() != self.dims().sensors {
            return Err(MafnError::Contract(format!(
                "history has {} sensor channels, checkpoint expects {}",
                history.channels(),
                self.dims().sensors
            )));
        }
        let n = history.len();
        if n == 0 || (n < w && !self.config.pad_short_histories) {
            return Err(MafnError::Contract(format!(
                "history of {n} cycles is shorter than the {w}-cycle window; \
                 set pad_short_histories = true to left-pad with the first cycle"
            )));
        }
        let (norm, states) = self.pre.prepare(history)?;
        let mut x = Vec::with_capacity(w);
        let mut s = Vec::with_capacity(w);
        for _ in n..w {
            x.push(norm.sensors[0].clone());
            s.push(states[0]);
        }
        let start = n.saturating_sub(w);
        x.extend_from_slice(&norm.sensors[start..]);
        s.extend_from_slice(&states[start..]);
        Ok((x, s))
    }

    /// Runs the network on many histories, in chunks.
    pub fn run(&self, histories: &[SensorRecord]) -> Result<Vec<crate::model::MafnOutput>> {
        let windows: Vec<(Vec<Vec<f64>>, Vec<usize>)> =
            histories.iter().map(|h| self.input_window(h)).collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(256) {
            let refs: Vec<(&[Vec<f64>], &[usize])> = chunk.iter().map(|(x, s)| (x.as_slice(), s.as_slice())).collect();
            out.extend(self.model.predict(&self.params, &refs)?);
        }
        Ok(out)
    }

    pub fn predict_rul(&self, history: &SensorRecord) -> Result<f64> {
        Ok(self.predict_rul_many(std::slice::from_ref(history))?[0])
    }

    pub fn predict_rul_many(&self, histories: &[SensorRecord]) -> Result<Vec<f64>> {
        let cap = self.config.rul_cap;
        Ok(self.run(histories)?.iter().map(|o| clamp_rul(o.rul, cap)).collect())
    }

    /// The first `horizon` decoder steps after the history, in one unroll.
    pub fn forecast_trajectory(&self, history: &SensorRecord, horizon: usize) -> Result<Forecast> {
        Ok(self.forecast_many(std::slice::from_ref(history), horizon)?.remove(0))
    }

    pub fn forecast_many(&self, histories: &[SensorRecord], horizon: usize) -> Result<Vec<Forecast>> {
        let h_max = self.dims().horizon;
        if horizon == 0 || horizon > h_max {
            return Err(MafnError::Contract(format!(
                "forecast horizon {horizon} outside 1..={h_max} supported by the checkpoint"
            )));
        }
        let stats = &self.pre.stats;
        Ok(self
            .run(histories)?
            .into_iter()
            .map(|o| Forecast {
                sensors: o.forecast[..horizon]
                    .iter()
                    .map(|row| row.iter().enumerate().map(|(c, &v)| stats.denormalize(c, v)).collect())
                    .collect(),
                states: o.predicted_states[..horizon].to_vec(),
                rul: clamp_rul(o.rul, self.config.rul_cap),
                trend: o.degradation[..horizon].to_vec(),
            })
            .collect())
    }
}
