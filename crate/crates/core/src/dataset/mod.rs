//! Mortality data ingestion, per-group panels and synthetic oracle data.

mod hmd;
mod panel;
mod synth;

pub use hmd::{parse_hmd_1x1, write_hmd_1x1, MortalityRecord, MortalityTable, Sex};
pub use panel::{build_panel, split_train_test, GroupedPanel, Panel, Preprocessing};
pub use synth::{synthesize, synthesize_with, SyntheticConfig, SyntheticTruth};
