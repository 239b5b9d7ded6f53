//! Optimal policy extraction and Monte Carlo evaluation of switching
//! strategies along Euler paths of the state.

mod policy;
mod simulate;
mod strategy;

pub use policy::{extract_policy, Decision, PolicyError, SwitchingPolicy};
pub use simulate::{
    evaluate_fixed_strategy, mean_and_std_error, pairwise_sum, path_rng, policy_path, simulate,
    simulate_path, strategy_path, PathRecord, SimError, SimOptions, StrategyStats, SwitchEvent,
};
pub use strategy::{Side, Strategy, StrategyError, StrategyState, ThresholdRule};
