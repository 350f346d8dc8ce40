//! Physical workloads driven by the protocol: train braking under movement-authority
//! faults and a two-substation monitoring loop under an adaptive delaying attacker.

mod grid;
mod railway;

pub use grid::{smart_grid_run, GridConfig, GridResult, GridSample};
pub use railway::{
    brake_onset, simulate_incorrect_ma, simulate_wenzhou, BrakeParams, MaAttackConfig, MaAttackResult, RailError, Train,
    TrainMode, TrainSample, TrainState, TwoTrainSample, WenzhouConfig, WenzhouResult, WenzhouVariant,
};
