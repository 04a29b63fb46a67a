//! File formats: panel data, configuration documents and outputs.

mod config;
mod output;
mod panel;

pub use config::{read_config, write_config, ConfigDocument, GammaPrior, PartitionSpec, PriorDocument, SimulationSpec};
pub use output::{
    default_ids, read_draws, read_draws_csv, read_latents, read_latents_csv, read_trajectory, read_trajectory_csv,
    write_acceptance_json, write_curve, write_curve_csv, write_draws, write_draws_csv, write_latents,
    write_latents_csv, write_occupancy, write_trajectory, write_trajectory_csv, ChainSummary, DrawTable, CURVE_HEADER,
    DRAWS_HEADER, TRAJECTORY_HEADER,
};
pub use panel::{read_cav_csv, read_panel, read_panel_csv, write_panel, write_panel_csv, PanelData, Terminal, UnitRecord};
