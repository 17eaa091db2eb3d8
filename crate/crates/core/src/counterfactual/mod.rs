//! Counterfactual signal transforms and model-based causal effects.

mod effect;
mod transform;

pub use transform::{
    apply_cf, standard_grid, CfKind, Contrast, CounterfactualSpec, Duration, Exposure,
    InterventionWindow, SignalTransform, TimingShift, DEFAULT_ELEVATION_THRESHOLD,
};
pub use effect::{
    ate_gcomp, cf_effect, effects, save_grid, scenario_grid, summarize, write_grid_csv, write_grid_long_csv,
    AteEstimate, BootstrapConfig, CfEffect,
};

#[cfg(test)]
mod tests;
