//! Data exports for inspecting learned update rules: rule grids, the
//! REINFORCE capacity check and the feature-subset ablation.

mod ablation;
mod capacity;
mod grid;

pub use ablation::{run_ablation, write_ablation_csvs, AblationResult, AblationRow};
pub use capacity::{capacity_case, reinforce_capacity_check, CapacityCase, CapacityReport};
pub use grid::{
    export_rule_grid, quadrant_contrast, rule_grid, write_rule_grid_csv, AnalyticSurrogate, Axes, EntryScorer, FixedFeatures,
    RuleGrid, BUDGET_STAGES,
};
