//! C-MAPSS ingestion and preprocessing.

pub mod cache;
pub mod cmapss;
pub mod normalize;
pub mod window;

pub use cmapss::{
    parse_cmapss, parse_cmapss_str, parse_rul_file, parse_rul_str, select_sensors, write_cmapss, CycleRow,
    EngineRecord, SensorRecord, DROPPED_SENSORS, NUM_COLUMNS, NUM_SENSORS, NUM_SETTINGS, SELECTED_SENSORS,
};
pub use normalize::NormalizationStats;
pub use window::{
    make_windows, make_windows_with_states, truncate_at_fraction, window_count, Truncated, WindowSample, WindowSpec,
};
