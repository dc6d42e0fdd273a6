use serde::{Deserialize, Serialize};

use super::cmapss::SensorRecord;
use crate::error::{MafnError, Result};

/// Per-channel min/max fitted on training data only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationStats {
    pub fn fit(train: &[SensorRecord]) -> Result<Self> {
        let channels = train
            .iter()
            .find(|r| !r.is_empty())
            .map(SensorRecord::channels)
            .ok_or_else(|| MafnError::Contract("cannot fit normalization on an empty training set".into()))?;
        let mut min = vec![f64::INFINITY; channels];
        let mut max = vec![f64::NEG_INFINITY; channels];
        for row in train.iter().flat_map(|r| &r.sensors) {
            if row.len() != channels {
                return Err(MafnError::Contract(format!(
                    "row has {} channels, expected {channels}",
                    row.len()
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        let stats = Self { min, max };
        for c in stats.degenerate_channels() {
            log::warn!("sensor channel {c} is constant in the training set; it normalizes to 0");
        }
        Ok(stats)
    }

    pub fn channels(&self) -> usize {
        self.min.len()
    }

    pub fn degenerate_channels(&self) -> Vec<usize> {
        (0..self.channels()).filter(|&c| self.max[c] == self.min[c]).collect()
    }

    /// `(v - min) / (max - min)`, unclipped; 0 for a constant channel.
    pub fn normalize(&self, channel: usize, v: f64) -> f64 {
        let span = self.max[channel] - self.min[channel];
        if span == 0.0 {
            0.0
        } else {
            (v - self.min[channel]) / span
        }
    }

    pub fn denormalize(&self, channel: usize, v: f64) -> f64 {
        let span = self.max[channel] - self.min[channel];
        if span == 0.0 {
            self.min[channel]
        } else {
            self.min[channel] + v * span
        }
    }

    pub fn apply(&self, record: &SensorRecord) -> Result<SensorRecord> {
        if record.channels() != self.channels() && !record.is_empty() {
            return Err(MafnError::Contract(format!(
                "record has {} channels, normalization expects {}",
                record.channels(),
                self.channels()
            )));
        }
        Ok(SensorRecord {
            unit_id: record.unit_id,
            settings: record.settings.clone(),
            sensors: record
                .sensors
                .iter()
                .map(|row| row.iter().enumerate().map(|(c, &v)| self.normalize(c, v)).collect())
                .collect(),
        })
    }
}
