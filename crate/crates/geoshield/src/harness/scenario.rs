//! Scenario files: a TOML document naming one experiment, its topology, timing and
//! adversary, and the function that turns it into output files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::bandwidth::{bandwidth_csv, scaling_report, BandwidthConfig};
use super::mc::{run_trials, Estimate};
use crate::adversary::{AdversaryError, AttackSpec, StrategyKind};
use crate::casestudies::{simulate_incorrect_ma, simulate_wenzhou, smart_grid_run, GridConfig, MaAttackConfig, WenzhouConfig};
use crate::core::{NodeId, ParamError, RegionId, TimingParams};
use crate::measure::{accuracy, run_measurement, MeasureConfig};
use crate::poc::{run_poc_trial, PocAttack, PocTrialConfig};
use crate::recovery::{audit_csv, run_propagation, PropagationConfig};
use crate::recovery::FaultClass;
use crate::simnet::{InterLinkModel, LinkError};
use crate::tgs::{run_tgs_trial, Compromise, TgsAttack, TgsError, TgsParams, TgsTrialConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("region {region}: {n} nodes cannot tolerate {f} faults (need at least {need})")]
    RegionSize { region: usize, n: usize, f: usize, need: usize },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Timing(#[from] ParamError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Tgs(#[from] TgsError),
    #[error(transparent)]
    Attack(#[from] AdversaryError),
    #[error("run failed: {0}")]
    Run(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub n: usize,
    pub f: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub regions: Vec<RegionSpec>,
}

impl Default for Topology {
    fn default() -> Self {
        Topology { regions: vec![RegionSpec { n: 3, f: 1 }; 2] }
    }
}

fn one() -> u64 {
    1
}

fn default_rounds() -> u64 {
    20
}

fn default_jobs() -> u64 {
    3
}

fn default_invocations() -> u64 {
    super::sweep::MONTH_INVOCATIONS
}

fn default_region_counts() -> Vec<u32> {
    vec![5, 10, 20, 50]
}

fn default_class() -> FaultClass {
    FaultClass::Commission
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    /// Stay-normal probability of one task pair under a dropping attacker.
    Tgs {
        #[serde(default = "default_invocations")]
        invocations: u64,
        late_prob: f64,
        attack: TgsAttack,
        compromise: Compromise,
    },
    /// Latency measurement between the first two regions.
    Measure {
        #[serde(default = "default_rounds")]
        rounds: u64,
    },
    /// Endorsed inter-region messages between the first two regions.
    Poc {
        attack: PocAttack,
        #[serde(default = "default_jobs")]
        jobs: u64,
    },
    /// One fault detected in `detector` against a node of `faulty_region`.
    Propagation {
        detector: u32,
        faulty_region: u32,
        #[serde(default = "default_class")]
        class: FaultClass,
    },
    Bandwidth {
        #[serde(default = "default_region_counts")]
        region_counts: Vec<u32>,
        #[serde(default)]
        model: BandwidthConfig,
    },
    Grid(GridConfig),
    RailwayMa(MaAttackConfig),
    Wenzhou(WenzhouConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub trials: u64,
    #[serde(default)]
    pub topology: Topology,
    #[serde(default)]
    pub timing: TimingParams,
    #[serde(default)]
    pub inter: InterLinkModel,
    #[serde(default)]
    pub tgs: Option<TgsParams>,
    #[serde(default)]
    pub attack: Option<AttackSpec>,
    pub experiment: Experiment,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    fn f_of(&self, r: usize) -> usize {
        self.topology.regions[r].f
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: &str| Err(ScenarioError::Invalid(m.to_string()));
        if self.trials == 0 {
            return invalid("trials must be at least 1");
        }
        if self.topology.regions.len() < 2 {
            return invalid("at least two regions are required");
        }
        for (i, r) in self.topology.regions.iter().enumerate() {
            if r.f == 0 || r.n < 2 * r.f + 1 {
                return Err(ScenarioError::RegionSize { region: i, n: r.n, f: r.f, need: 2 * r.f.max(1) + 1 });
            }
        }
        self.timing.validate()?;
        self.inter.validate(self.timing.inter_jitter)?;
        if let Some(t) = &self.tgs {
            t.validate()?;
        }
        if let Some(a) = &self.attack {
            let f: BTreeMap<RegionId, usize> =
                self.topology.regions.iter().enumerate().map(|(i, r)| (RegionId(i as u32), r.f)).collect();
            a.validate(&f, f.values().sum())?;
        }
        let regions = self.topology.regions.len() as u32;
        match &self.experiment {
            Experiment::Tgs { late_prob, .. } => {
                if !(0.0..1.0).contains(late_prob) {
                    return invalid("late_prob must lie in [0, 1)");
                }
                if self.f_of(0) != self.f_of(1) {
                    return invalid("the task-pair model needs equal f in both regions");
                }
            }
            Experiment::Propagation { detector, faulty_region, .. } => {
                if *detector >= regions || *faulty_region >= regions {
                    return invalid("detector and faulty_region must name configured regions");
                }
                if self.topology.regions.iter().any(|r| r.f != self.f_of(0)) {
                    return invalid("propagation runs need the same f in every region");
                }
            }
            Experiment::Poc { .. } => {
                if self.f_of(0) != self.f_of(1) {
                    return invalid("endorsement runs need equal f in both regions");
                }
            }
            Experiment::Bandwidth { region_counts, .. } => {
                if region_counts.is_empty() || region_counts.iter().any(|r| *r < 2) {
                    return invalid("region_counts needs entries of at least 2");
                }
            }
            Experiment::Measure { rounds } => {
                if *rounds == 0 {
                    return invalid("rounds must be at least 1");
                }
            }
            Experiment::Grid(g) => g.tgs.validate()?,
            Experiment::RailwayMa(_) | Experiment::Wenzhou(_) => {}
        }
        Ok(())
    }
}

/// One named output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

impl Artifact {
    fn new(name: &str, contents: String) -> Self {
        Artifact { name: name.to_string(), contents }
    }
}

/// Plain-text record of what produced a run.
pub fn manifest(s: &Scenario, notes: &[String]) -> String {
    let mut out = format!(
        "schema_version = {SCHEMA_VERSION}\nscenario = {}\nseed = {}\ntrials = {}\ncrate_version = {}\n",
        s.name,
        s.seed,
        s.trials,
        env!("CARGO_PKG_VERSION")
    );
    for n in notes {
        out.push_str(&format!("note = {n}\n"));
    }
    out.push_str("\n[parameters]\n");
    out.push_str(&s.to_toml());
    out
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializes");
    s.push('\n');
    s
}

fn csv_of<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

fn measure_config(s: &Scenario, seed: u64) -> MeasureConfig {
    let mut cfg = MeasureConfig::new(s.timing.clone(), s.f_of(0), s.f_of(1), seed);
    cfg.inter = s.inter;
    if let Some(a) = &s.attack {
        for na in &a.compromised {
            if let StrategyKind::Protocol { attack } = na.strategy {
                if let Some(b) = attack.measure() {
                    cfg.behaviors.insert(na.node, b);
                }
                if let Some(d) = attack.dispute() {
                    cfg.dispute.insert(na.node, d);
                }
            }
        }
    }
    cfg
}

/// Runs the scenario. Outputs depend only on the scenario, including its seed.
pub fn run_scenario(s: &Scenario) -> Result<Vec<Artifact>, ScenarioError> {
    s.validate()?;
    let run_err = |e: &dyn std::fmt::Display| ScenarioError::Run(e.to_string());
    let mut notes = Vec::new();
    let mut out = Vec::new();
    match &s.experiment {
        Experiment::Tgs { invocations, late_prob, attack, compromise } => {
            let base = TgsTrialConfig {
                f: s.f_of(0),
                tgs: s.tgs,
                late_prob: *late_prob,
                invocations: *invocations,
                attack: *attack,
                compromise: *compromise,
                seed: s.seed,
            };
            let rows = run_trials(s.seed, s.trials, true, |i, seed| {
                let r = run_tgs_trial(&TgsTrialConfig { seed, ..base.clone() });
                TgsRow {
                    trial: i,
                    seed,
                    stayed_normal: r.stayed_normal,
                    safe_mode_at: r.safe_mode_at,
                    attacker_flags: r.attacker_flags,
                    correct_flags: r.correct_flags,
                    misbehaviours: r.misbehaviours,
                }
            });
            let est = Estimate::from_outcomes(rows.iter().map(|r| (r.stayed_normal, false)));
            if s.tgs.is_none() {
                notes.push("scoring disabled; replicas are never reassigned".into());
            }
            out.push(Artifact::new("trials.csv", csv_of(&rows)));
            out.push(Artifact::new("summary.json", json(&est)));
        }
        Experiment::Measure { rounds } => {
            let results = run_trials(s.seed, s.trials, true, |_, seed| run_measurement(&measure_config(s, seed), 1..rounds + 1));
            let mut summaries = String::new();
            let mut incidents = String::new();
            let mut stats = Vec::new();
            for (i, r) in results.into_iter().enumerate() {
                let r = r.map_err(|e| run_err(&e))?;
                let csv = r.summaries_csv();
                for (k, line) in csv.lines().enumerate() {
                    if k == 0 && i == 0 {
                        summaries.push_str(&format!("trial,{line}\n"));
                    } else if k > 0 {
                        summaries.push_str(&format!("{i},{line}\n"));
                    }
                }
                incidents.push_str(&r.incidents_jsonl());
                stats.push(accuracy(&s.timing, &r.summaries));
            }
            out.push(Artifact::new("rounds.csv", summaries));
            out.push(Artifact::new("incidents.jsonl", incidents));
            out.push(Artifact::new("accuracy.json", json(&stats)));
        }
        Experiment::Poc { attack, jobs } => {
            let results = run_trials(s.seed, s.trials, true, |_, seed| {
                let mut cfg = PocTrialConfig::new(s.timing.clone(), s.f_of(0), seed, *attack);
                cfg.jobs = *jobs;
                cfg.inter = s.inter;
                run_poc_trial(&cfg)
            });
            let mut summary = String::from("trial,unanimous,forged_accepted,safe_mode_jobs\n");
            for (i, r) in results.iter().enumerate() {
                let r = r.as_ref().map_err(|e| run_err(e))?;
                let safe = r.safe_mode.values().filter(|v| v.is_some()).count();
                summary.push_str(&format!("{i},{},{},{safe}\n", r.unanimous, r.forged_accepted));
                if i == 0 {
                    out.push(Artifact::new("verdicts.csv", r.verdict_csv()));
                }
            }
            out.push(Artifact::new("summary.csv", summary));
        }
        Experiment::Propagation { detector, faulty_region, class } => {
            let regions = s.topology.regions.len() as u32;
            let results = run_trials(s.seed, s.trials, true, |_, seed| {
                let mut cfg =
                    PropagationConfig::new(s.timing.clone(), s.f_of(0), regions, RegionId(*detector), RegionId(*faulty_region), seed);
                cfg.class = *class;
                cfg.inter = s.inter;
                run_propagation(&cfg)
            });
            let mut audit = String::new();
            let mut summary = String::from("trial,bound_met,violations,missing\n");
            for (i, r) in results.iter().enumerate() {
                let r = r.as_ref().map_err(|e| run_err(e))?;
                let csv = audit_csv(r);
                for (k, line) in csv.lines().enumerate() {
                    if k == 0 && i == 0 {
                        audit.push_str(&format!("trial,{line}\n"));
                    } else if k > 0 {
                        audit.push_str(&format!("{i},{line}\n"));
                    }
                }
                summary.push_str(&format!("{i},{},{},{}\n", r.bound_met(), r.violations().len(), r.missing().len()));
            }
            out.push(Artifact::new("audit.csv", audit));
            out.push(Artifact::new("summary.csv", summary));
        }
        Experiment::Bandwidth { region_counts, model } => {
            out.push(Artifact::new("bandwidth.csv", bandwidth_csv(&scaling_report(region_counts, model))));
        }
        Experiment::Grid(g) => {
            let r = smart_grid_run(&GridConfig { seed: s.seed, ..g.clone() }).map_err(|e| run_err(&e))?;
            out.push(Artifact::new("grid.csv", grid_csv(&r.samples)));
        }
        Experiment::RailwayMa(c) => {
            let r = simulate_incorrect_ma(&MaAttackConfig { seed: s.seed, ..c.clone() }).map_err(|e| run_err(&e))?;
            out.push(Artifact::new("braking.csv", braking_csv(&r.trace)));
        }
        Experiment::Wenzhou(c) => {
            let r = simulate_wenzhou(&WenzhouConfig { seed: s.seed, ..c.clone() }).map_err(|e| run_err(&e))?;
            out.push(Artifact::new("trains.csv", trains_csv(&r.trace)));
        }
    }
    out.push(Artifact::new("manifest.txt", manifest(s, &notes)));
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
struct TgsRow {
    trial: u64,
    seed: u64,
    stayed_normal: bool,
    safe_mode_at: Option<u64>,
    attacker_flags: u64,
    correct_flags: u64,
    misbehaviours: u64,
}

/// `t,latency_ms,attacker_delayed,attacker_score,peer_score`.
pub fn grid_csv(samples: &[crate::casestudies::GridSample]) -> String {
    csv_of(samples)
}

/// `t,x,v,mode`.
pub fn braking_csv(trace: &[crate::casestudies::TrainSample]) -> String {
    csv_of(trace)
}

/// `t,x1,x2` with the follower first.
pub fn trains_csv(trace: &[crate::casestudies::TwoTrainSample]) -> String {
    let mut s = String::from("t,x1,x2\n");
    for r in trace {
        s.push_str(&format!("{:.2},{:.3},{:.3}\n", r.t, r.x_follower, r.x_front));
    }
    s
}

pub fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for a in artifacts {
        std::fs::write(dir.join(&a.name), &a.contents)?;
    }
    Ok(())
}

/// Node ids used by the measurement experiment, for writing attack sections.
pub fn measure_node_ids(f_up: usize, f_down: usize) -> (Vec<NodeId>, Vec<NodeId>, Vec<NodeId>) {
    let cfg = MeasureConfig::new(TimingParams::default(), f_up, f_down, 0);
    (cfg.up_nodes(), cfg.down_nodes(), cfg.keeper_nodes())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TGS: &str = r#"
name = "tgs-small"
seed = 3
trials = 6

[tgs]
alpha = 0.1
beta = 5
p_norm = 0.999

[experiment]
kind = "tgs"
invocations = 20000
late_prob = 0.01
attack = "aggressive"
compromise = "both"
"#;

    #[test]
    fn parses_and_runs() {
        let s = Scenario::from_toml(TGS).unwrap();
        let a = run_scenario(&s).unwrap();
        assert_eq!(a.iter().map(|x| x.name.as_str()).collect::<Vec<_>>(), ["trials.csv", "summary.json", "manifest.txt"]);
        assert_eq!(a[0].contents.lines().count(), 7);
        assert_eq!(a, run_scenario(&s).unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = TGS.replace("trials = 6", "trials = 6\ncolour = \"red\"");
        assert!(matches!(Scenario::from_toml(&bad), Err(ScenarioError::Parse(_))));
        let bad = TGS.replace("late_prob = 0.01", "late_prob = 0.01\nspeed = 3");
        assert!(matches!(Scenario::from_toml(&bad), Err(ScenarioError::Parse(_))));
        let bad = TGS.replace("beta = 5", "beta = 5\ngamma = 1");
        assert!(matches!(Scenario::from_toml(&bad), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn region_budget_is_checked() {
        let bad = format!("{TGS}\n[topology]\nregions = [{{ n = 2, f = 1 }}, {{ n = 3, f = 1 }}]\n");
        assert!(matches!(Scenario::from_toml(&bad), Err(ScenarioError::RegionSize { region: 0, .. })));
    }

    #[test]
    fn bad_parameters_are_reported() {
        let bad = TGS.replace("alpha = 0.1", "alpha = 2.0");
        assert!(matches!(Scenario::from_toml(&bad), Err(ScenarioError::Tgs(_))));
        let bad = TGS.replace("late_prob = 0.01", "late_prob = 1.5");
        assert!(matches!(Scenario::from_toml(&bad), Err(ScenarioError::Invalid(_))));
        let bad = format!("{TGS}\n[timing]\nhb_timeout = \"1ms\"\n");
        assert!(matches!(Scenario::from_toml(&bad), Err(ScenarioError::Timing(_))));
    }

    #[test]
    fn case_study_scenarios_parse_with_defaults() {
        for kind in ["railway_ma", "wenzhou", "grid"] {
            let text = format!("name = \"{kind}\"\n[experiment]\nkind = \"{kind}\"\n");
            let s = Scenario::from_toml(&text).unwrap();
            let a = run_scenario(&s).unwrap();
            assert_eq!(a.len(), 2, "{kind}");
        }
        let s = Scenario::from_toml("name = \"m\"\n[experiment]\nkind = \"railway_ma\"\nprotected = false\n").unwrap();
        assert!(matches!(s.experiment, Experiment::RailwayMa(ref c) if !c.protected));
    }

    #[test]
    fn round_trips_through_toml() {
        let s = Scenario::from_toml(TGS).unwrap();
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn attack_section_drives_measurement_behaviour() {
        let text = r#"
name = "measure"
seed = 1
[attack]
compromised = [{ node = 2, region = 1, strategy = { kind = "protocol", attack = "equivocate_accept" } }]
[experiment]
kind = "measure"
rounds = 4
"#;
        let s = Scenario::from_toml(text).unwrap();
        let a = run_scenario(&s).unwrap();
        assert!(a[0].contents.lines().count() == 5, "{}", a[0].contents);
        assert!(!a[1].contents.is_empty(), "the equivocation should produce incidents");
    }
}
