//! `geoshield`: run scenarios, parameter sweeps and case studies from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use geoshield::casestudies::{
    simulate_incorrect_ma, simulate_wenzhou, smart_grid_run, GridConfig, MaAttackConfig, WenzhouConfig, WenzhouVariant,
};
use geoshield::core::SimDuration;
use geoshield::harness::{
    self, cdf_csv, fraction_below, jitter_cdf, pair_differences, read_latency_csv, run_scenario, sweep_csv, sweep_tgs,
    synth_latency_trace, write_artifacts, Scenario, SweepSpec,
};
use geoshield::simnet::InterLinkModel;
use geoshield::tgs::{Compromise, TgsAttack};

#[derive(Parser)]
#[command(name = "geoshield", version, about = "Bounded-time Byzantine recovery simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackArg {
    Aggressive,
    Adaptive,
}

#[derive(Clone, Copy, ValueEnum)]
enum CompromiseArg {
    Upstream,
    Downstream,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Protected,
    Incident,
    GoodNetwork,
}

#[derive(Subcommand)]
enum RailwayCmd {
    /// Forged movement authority sent to a train heading for an obstacle.
    MaAttack {
        /// Check the authority against its endorsement.
        #[arg(long)]
        protected: bool,
        /// Send the correct authority instead of the forged one.
        #[arg(long)]
        no_attack: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Front train loses communication; the follower must not run into it.
    Wenzhou {
        #[arg(long, value_enum, default_value = "protected")]
        variant: VariantArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario file and write its outputs to a directory.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stay-normal probability over a grid of score parameters.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1,0.2,1")]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,10,50")]
        betas: Vec<u32>,
        #[arg(long, value_enum, default_value = "aggressive")]
        attack: AttackArg,
        #[arg(long, value_enum, default_value = "both")]
        compromise: CompromiseArg,
        #[arg(long, default_value_t = 1)]
        f: usize,
        /// Normal-pair probability the scores are tuned for.
        #[arg(long, default_value_t = 0.999)]
        p_norm: f64,
        /// Normal-pair probability the network actually delivers; defaults to `p_norm`.
        #[arg(long)]
        actual_p_norm: Option<f64>,
        #[arg(long, default_value_t = 300)]
        trials: u64,
        #[arg(long, default_value_t = harness::MONTH_INVOCATIONS)]
        invocations: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Railway case studies.
    Railway {
        #[command(subcommand)]
        cmd: RailwayCmd,
    },
    /// Two-substation queries with an adaptive delaying attacker.
    Grid {
        #[arg(long, default_value_t = 1000)]
        queries: u64,
        /// Keep every node correct.
        #[arg(long)]
        no_compromise: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Delay-difference CDF from a `send_ns,recv_ns` trace, or from the link model.
    JitterCdf {
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Message pairs to synthesize when no trace is given.
        #[arg(long, default_value_t = 100_000)]
        pairs: usize,
        #[arg(long, default_value_t = 50)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario file without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), String> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
            }
            std::fs::write(p, text).map_err(|e| format!("{}: {e}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.cmd {
        Cmd::Run { scenario, seed, out } => {
            let mut s = Scenario::load(&scenario).map_err(|e| format!("{}: {e}", scenario.display()))?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let artifacts = run_scenario(&s).map_err(|e| e.to_string())?;
            write_artifacts(&out, &artifacts).map_err(|e| format!("{}: {e}", out.display()))?;
            eprintln!("wrote {} files to {}", artifacts.len(), out.display());
        }
        Cmd::Sweep { alphas, betas, attack, compromise, f, p_norm, actual_p_norm, trials, invocations, seed, out } => {
            let attack = match attack {
                AttackArg::Aggressive => TgsAttack::Aggressive,
                AttackArg::Adaptive => TgsAttack::Adaptive,
            };
            let compromise = match compromise {
                CompromiseArg::Upstream => Compromise::Upstream,
                CompromiseArg::Downstream => Compromise::Downstream,
                CompromiseArg::Both => Compromise::Both,
            };
            if alphas.is_empty() || betas.is_empty() {
                return Err("the grid needs at least one alpha and one beta".into());
            }
            let actual = actual_p_norm.unwrap_or(p_norm);
            if !(0.0..=1.0).contains(&actual) {
                return Err(format!("actual p_norm {actual} is not a probability"));
            }
            let spec = SweepSpec {
                late_prob: 1.0 - actual,
                invocations,
                trials,
                seed,
                alphas,
                betas,
                ..SweepSpec::new(f, p_norm, attack, compromise)
            };
            let cells = sweep_tgs(&spec).map_err(|e| e.to_string())?;
            emit(out.as_deref(), &sweep_csv(&cells))?;
        }
        Cmd::Railway { cmd: RailwayCmd::MaAttack { protected, no_attack, seed, out } } => {
            let cfg = MaAttackConfig {
                protected,
                attacked: !no_attack,
                seed,
                lte_jitter: SimDuration::from_millis(if seed == 0 { 0 } else { 10 }),
                ..Default::default()
            };
            let r = simulate_incorrect_ma(&cfg).map_err(|e| e.to_string())?;
            emit(out.as_deref(), &harness::braking_csv(&r.trace))?;
            let end = r.trace.last().map_or(0.0, |s| s.x);
            match (r.crashed, r.corrected_at) {
                (true, _) => eprintln!("crash at {:.1} m/s", r.crash_speed),
                (false, Some(t)) => eprintln!("corrected authority at {t:.3} s; stopped at {end:.1} m"),
                (false, None) => eprintln!("stopped at {end:.1} m"),
            }
        }
        Cmd::Railway { cmd: RailwayCmd::Wenzhou { variant, seed, out } } => {
            let variant = match variant {
                VariantArg::Protected => WenzhouVariant::Protected,
                VariantArg::Incident => WenzhouVariant::Incident,
                VariantArg::GoodNetwork => WenzhouVariant::GoodNetwork,
            };
            let strike_jitter = if seed == 0 { 0.0 } else { 1.0 };
            let r = simulate_wenzhou(&WenzhouConfig { variant, seed, strike_jitter, ..Default::default() })
                .map_err(|e| e.to_string())?;
            emit(out.as_deref(), &harness::trains_csv(&r.trace))?;
            if r.collided {
                eprintln!("collision");
            } else {
                eprintln!("minimum separation {:.1} m", r.min_separation);
            }
        }
        Cmd::Grid { queries, no_compromise, seed, out } => {
            let mut cfg = GridConfig { queries, seed, ..Default::default() };
            if no_compromise {
                cfg.compromise_at = None;
            }
            let r = smart_grid_run(&cfg).map_err(|e| e.to_string())?;
            emit(out.as_deref(), &harness::grid_csv(&r.samples))?;
            eprintln!("{} delayed answers; steady-state fraction {:.4}", r.delays.len(), r.steady_delay_fraction(13));
        }
        Cmd::JitterCdf { trace, pairs, points, seed, out } => {
            let inter = InterLinkModel::default();
            let samples = match &trace {
                Some(p) => {
                    let f = std::fs::File::open(p).map_err(|e| format!("{}: {e}", p.display()))?;
                    read_latency_csv(f).map_err(|e| format!("{}: {e}", p.display()))?
                }
                None => synth_latency_trace(&inter, pairs, SimDuration::from_millis(10), seed).map_err(|e| e.to_string())?,
            };
            let diffs = pair_differences(&samples, inter.jitter.pair_window);
            emit(out.as_deref(), &cdf_csv(&jitter_cdf(&diffs, points)))?;
            let bound = geoshield::core::TimingParams::default().inter_jitter;
            eprintln!("{} pairs; fraction below {bound}: {:.5}", diffs.len(), fraction_below(&diffs, bound));
        }
        Cmd::Validate { scenario } => {
            let s = Scenario::load(&scenario).map_err(|e| format!("{}: {e}", scenario.display()))?;
            println!("{}: ok ({})", scenario.display(), s.name);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
