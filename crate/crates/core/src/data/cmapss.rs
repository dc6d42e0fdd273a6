//! C-MAPSS text files: 26 whitespace-separated columns per row
//! (unit, cycle, 3 operating settings, 21 sensors).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{MafnError, Result};

pub const NUM_SETTINGS: usize = 3;
pub const NUM_SENSORS: usize = 21;
pub const NUM_COLUMNS: usize = 2 + NUM_SETTINGS + NUM_SENSORS;

/// 1-based indices of the informative sensors that are kept.
pub const SELECTED_SENSORS: [usize; 11] = [2, 3, 4, 7, 8, 11, 12, 15, 17, 20, 21];
/// 1-based indices of the near-constant sensors that are dropped.
pub const DROPPED_SENSORS: [usize; 10] = [1, 5, 6, 9, 10, 13, 14, 16, 18, 19];

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRow {
    pub cycle: u32,
    pub settings: [f64; NUM_SETTINGS],
    pub sensors: [f64; NUM_SENSORS],
}

/// One unit's run, cycles numbered 1, 2, 3, ...
#[derive(Debug, Clone, PartialEq)]
pub struct EngineRecord {
    pub unit_id: u32,
    pub cycles: Vec<CycleRow>,
}

impl EngineRecord {
    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }
}

/// A record reduced to the selected sensor channels. Also used for
/// normalized data and for synthetic fixtures with fewer channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorRecord {
    pub unit_id: u32,
    pub settings: Vec<[f64; NUM_SETTINGS]>,
    /// `sensors[t][channel]`
    pub sensors: Vec<Vec<f64>>,
}

impl SensorRecord {
    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.sensors.first().map_or(0, Vec::len)
    }

    /// First `n` cycles.
    pub fn prefix(&self, n: usize) -> SensorRecord {
        SensorRecord {
            unit_id: self.unit_id,
            settings: self.settings[..n].to_vec(),
            sensors: self.sensors[..n].to_vec(),
        }
    }
}

pub fn parse_cmapss(path: &Path) -> Result<Vec<EngineRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| MafnError::io(path, e))?;
    parse_cmapss_str(&text, &path.display().to_string())
}

/// Parses C-MAPSS text. Units may appear in any order but each unit's
/// cycles must run 1, 2, 3, ... in file order.
pub fn parse_cmapss_str(text: &str, source: &str) -> Result<Vec<EngineRecord>> {
    let mut units: BTreeMap<u32, Vec<CycleRow>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let err = |message: String| MafnError::Parse {
            path: source.to_string(),
            line: lineno,
            message,
        };
        if fields.len() != NUM_COLUMNS {
            return Err(err(format!("expected {NUM_COLUMNS} columns, found {}", fields.len())));
        }
        let int = |s: &str, what: &str| -> Result<u32> {
            s.parse::<u32>()
                .ok()
                .or_else(|| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.fract() == 0.0 && *v >= 0.0)
                        .map(|v| v as u32)
                })
                .ok_or_else(|| err(format!("bad {what} `{s}`")))
        };
        let unit = int(fields[0], "unit id")?;
        let cycle = int(fields[1], "cycle index")?;
        let mut values = [0.0; NUM_SETTINGS + NUM_SENSORS];
        for (slot, f) in values.iter_mut().zip(&fields[2..]) {
            *slot = f.parse::<f64>().map_err(|_| err(format!("bad number `{f}`")))?;
        }
        let rows = units.entry(unit).or_default();
        let expected = rows.len() as u32 + 1;
        if cycle != expected {
            return Err(MafnError::Data(format!(
                "{source}:{lineno}: unit {unit} has cycle {cycle} where {expected} was expected"
            )));
        }
        let mut settings = [0.0; NUM_SETTINGS];
        settings.copy_from_slice(&values[..NUM_SETTINGS]);
        let mut sensors = [0.0; NUM_SENSORS];
        sensors.copy_from_slice(&values[NUM_SETTINGS..]);
        rows.push(CycleRow {
            cycle,
            settings,
            sensors,
        });
    }
    Ok(units
        .into_iter()
        .map(|(unit_id, cycles)| EngineRecord { unit_id, cycles })
        .collect())
}

/// Writes records back in C-MAPSS layout. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_cmapss(records: &[EngineRecord]) -> String {
    let mut out = String::new();
    for r in records {
        for row in &r.cycles {
            let _ = write!(out, "{} {}", r.unit_id, row.cycle);
            for v in row.settings.iter().chain(row.sensors.iter()) {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
    }
    out
}

/// One true RUL per test engine, in unit order.
pub fn parse_rul_file(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| MafnError::io(path, e))?;
    parse_rul_str(&text, &path.display().to_string())
}

pub fn parse_rul_str(text: &str, source: &str) -> Result<Vec<f64>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|_| MafnError::Parse {
                path: source.to_string(),
                line: i + 1,
                message: format!("bad RUL value `{}`", l.trim()),
            })
        })
        .collect()
}

/// Keeps sensors 2, 3, 4, 7, 8, 11, 12, 15, 17, 20, 21 in that order.
pub fn select_sensors(record: &EngineRecord) -> SensorRecord {
    SensorRecord {
        unit_id: record.unit_id,
        settings: record.cycles.iter().map(|c| c.settings).collect(),
        sensors: record
            .cycles
            .iter()
            .map(|c| SELECTED_SENSORS.iter().map(|&s| c.sensors[s - 1]).collect())
            .collect(),
    }
}
