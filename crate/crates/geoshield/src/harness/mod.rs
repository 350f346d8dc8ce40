//! Scenario loading, Monte Carlo runner, parameter sweeps, bandwidth accounting and
//! jitter statistics.

mod accuracy;
mod bandwidth;
mod jitter;
mod mc;
mod scenario;
mod sweep;

pub use accuracy::accuracy_run;
pub use bandwidth::{account_bandwidth, bandwidth_csv, linear_fit, scaling_report, Bandwidth, BandwidthConfig, SizeModel};
pub use jitter::{
    cdf_csv, fraction_below, jitter_cdf, pair_differences, read_latency_csv, synth_latency_trace, write_latency_csv, CdfRow,
    LatencySample,
};
pub use mc::{run_monte_carlo, run_trials, trial_seed, wilson, Estimate, Z95};
pub use scenario::{
    braking_csv, grid_csv, manifest, measure_node_ids, run_scenario, trains_csv, write_artifacts, Artifact, Experiment, RegionSpec,
    Scenario, ScenarioError, Topology, SCHEMA_VERSION,
};
pub use sweep::{
    adaptive_applicable, baseline, dos_suite, sweep_csv, sweep_tgs, DosReport, SweepCell, SweepSpec, ATTACKS, COMPROMISES,
    MONTH_INVOCATIONS,
};
