//! Fixtures shared by the criterion benchmarks.

use bsplan_core::dataset::scenario_for_index;
use bsplan_core::encoding::encode_label;
use bsplan_core::planner::plan;
use bsplan_core::{DatasetConfig, Grid, PlannerParams, Result, Scenario};

/// Grid side used by the benchmarks.
pub const GRID: usize = 32;

pub fn scenario_config() -> DatasetConfig {
    DatasetConfig { n1: GRID, n2: GRID, seed_base: 7_000_000, ..DatasetConfig::default() }
}

/// First scenario at or after `index` that the planner solves, with its
/// label density.
pub fn solved_scenario(index: usize) -> Result<(Scenario, Grid)> {
    let config = scenario_config();
    let mut i = index;
    loop {
        let s = scenario_for_index(&config, i)?;
        let planned = plan(&s, &PlannerParams { seed: i as u64, ..config.planner.clone() })?;
        if let Some(path) = planned.path {
            let density = encode_label(&path, s.chi2, GRID, GRID)?;
            return Ok((s, density));
        }
        i += 1;
    }
}
