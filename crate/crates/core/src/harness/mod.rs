//! Scenario files, parameter sweeps and file output for the command line.
//!
//! A scenario is a TOML file with an explicit `[params]` table naming all
//! thirteen parameters, a list of `[[actions]]` and optional `[[golden]]`
//! checks. The built-in catalog lives under `scenarios/` at the repository
//! root and is compiled into the library.

mod run;
mod scenario;
mod sweep;

pub use run::{
    equilibria_csv, equilibria_with_stability, exit_code, resolve_out_dir, run_action, run_scenario, ActionOutput,
    EquilibriumRow, Format, GoldenResult, RunConfig, ScenarioReport, SimulationOutput, TolOverrides, DEFAULT_OUT_DIR,
    OUT_DIR_ENV,
};
pub use scenario::{
    catalog, catalog_names, catalog_scenario, load_params, params_from_toml, Action, Continue1Action, Continue2Action, EquilibriaAction, Golden,
    Overrides, ScenarioSpec, SeedSpec, SimulateAction, SweepAction, CATALOG,
};
pub use sweep::{outcome_tag, sweep, Axis, SweepCell, SweepGrid, SweepTable};
