//! Train kinematics with movement authorities (MA), service and emergency braking, a
//! driver who brakes on sighting an obstacle, and two scenarios built on the protocol's
//! timing: a forged MA caught by the missing endorsement, and a front train losing
//! communication.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{round_schedule, SimDuration, TimeError, TimingParams};
use crate::poc::poc_round_for;
use crate::simnet::stream_rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RailError {
    #[error("movement authority {ma} m leaves no braking distance at {v} m/s")]
    MaViolated { v: f64, ma: f64 },
    #[error(transparent)]
    Time(#[from] TimeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrakeParams {
    pub a_service: f64,
    pub a_emergency: f64,
    /// Distance at which the driver can see an obstacle.
    pub sight: f64,
    /// Distance kept before the end of the authority.
    pub margin: f64,
    pub on_sight_speed: f64,
    /// Extra deceleration demand tolerated before switching from service to emergency braking.
    pub tolerance: f64,
}

impl Default for BrakeParams {
    fn default() -> Self {
        BrakeParams {
            a_service: 0.6,
            a_emergency: 1.2,
            sight: 3_000.0,
            margin: 91.0,
            on_sight_speed: 20.0 / 3.6,
            tolerance: 1e-3,
        }
    }
}

/// Position at which service braking must start to stop `margin` before `ma`.
pub fn brake_onset(v: f64, ma: f64, a: f64, margin: f64) -> Result<f64, RailError> {
    let onset = ma - v * v / (2.0 * a) - margin;
    if onset < 0.0 {
        return Err(RailError::MaViolated { v, ma });
    }
    Ok(onset)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Normal,
    ServiceBrake,
    EmergencyBrake,
    OnSight,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainState {
    pub x: f64,
    pub v: f64,
    pub mode: TrainMode,
    /// End of the movement authority; `None` while driving without one.
    pub ma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Train {
    pub state: TrainState,
    /// Emergency braking ordered by the driver or by loss of communication.
    forced: bool,
    on_sight: bool,
    decel: f64,
}

impl Train {
    pub fn new(x: f64, v: f64, ma: Option<f64>) -> Self {
        Train { state: TrainState { x, v, mode: TrainMode::Normal, ma }, forced: false, on_sight: false, decel: 0.0 }
    }

    pub fn set_ma(&mut self, ma: Option<f64>) {
        self.state.ma = ma;
    }

    pub fn force_brake(&mut self) {
        self.forced = true;
    }

    /// Manual driving at the on-sight speed, without an authority.
    pub fn go_on_sight(&mut self) {
        self.forced = false;
        self.on_sight = true;
        self.state.ma = None;
    }

    /// Where the train stops if it keeps its current deceleration.
    pub fn stop_point(&self) -> f64 {
        if self.state.v <= 0.0 {
            self.state.x
        } else if self.decel > 0.0 {
            self.state.x + self.state.v * self.state.v / (2.0 * self.decel)
        } else {
            f64::INFINITY
        }
    }

    /// Driver reaction: emergency brake once an obstacle within sight would be overrun.
    pub fn watch(&mut self, obstacle: f64, sight: f64) {
        if self.state.v > 0.0 && obstacle - self.state.x <= sight && self.stop_point() > obstacle {
            self.forced = true;
        }
    }

    fn choose(&mut self, b: &BrakeParams) -> f64 {
        let s = &mut self.state;
        if self.forced {
            s.mode = if s.v > 0.0 { TrainMode::EmergencyBrake } else { TrainMode::Stopped };
            return b.a_emergency;
        }
        if self.on_sight {
            s.mode = TrainMode::OnSight;
            return if s.v > b.on_sight_speed { b.a_service } else { -b.a_service };
        }
        if s.v <= 0.0 {
            s.mode = TrainMode::Stopped;
            return 0.0;
        }
        let Some(ma) = s.ma else {
            s.mode = TrainMode::Normal;
            return 0.0;
        };
        let room = ma - b.margin - s.x;
        if room <= 0.0 {
            s.mode = TrainMode::EmergencyBrake;
            return b.a_emergency;
        }
        let need = s.v * s.v / (2.0 * room);
        s.mode = if need > b.a_service + b.tolerance {
            TrainMode::EmergencyBrake
        } else if need >= b.a_service - b.tolerance || s.mode == TrainMode::ServiceBrake || s.mode == TrainMode::EmergencyBrake {
            TrainMode::ServiceBrake
        } else {
            TrainMode::Normal
        };
        match s.mode {
            TrainMode::EmergencyBrake => b.a_emergency,
            TrainMode::ServiceBrake => b.a_service,
            _ => 0.0,
        }
    }

    /// Advances by `dt` seconds; each step is exact for its constant acceleration.
    pub fn step(&mut self, dt: f64, b: &BrakeParams) {
        let a = self.choose(b);
        self.decel = a.max(0.0);
        let s = &mut self.state;
        if a > 0.0 {
            let t_stop = s.v / a;
            let floor = if self.on_sight && !self.forced { b.on_sight_speed } else { 0.0 };
            if s.v - a * dt <= floor {
                let t = if floor > 0.0 { (s.v - floor) / a } else { t_stop };
                s.x += s.v * t - a * t * t / 2.0 + floor * (dt - t);
                s.v = floor;
            } else {
                s.x += s.v * dt - a * dt * dt / 2.0;
                s.v -= a * dt;
            }
        } else if a < 0.0 {
            let acc = -a;
            let cap = b.on_sight_speed;
            let t = ((cap - s.v) / acc).clamp(0.0, dt);
            s.x += s.v * t + acc * t * t / 2.0 + cap.min(s.v + acc * t) * (dt - t);
            s.v = (s.v + acc * t).min(cap);
        } else {
            s.x += s.v * dt;
        }
        if s.v <= 0.0 {
            s.v = 0.0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainSample {
    pub t: f64,
    pub x: f64,
    pub v: f64,
    pub mode: TrainMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaAttackConfig {
    pub params: TimingParams,
    pub brake: BrakeParams,
    pub v0: f64,
    pub obstacle: f64,
    /// Authority the compromised control-center node sends instead of the obstacle position.
    pub forged_ma: f64,
    /// Instant the authority reaches the train.
    pub ma_at: f64,
    /// One-way train-to-control-center latency.
    pub lte: SimDuration,
    /// Extra uniform latency per hop, drawn from the seed.
    pub lte_jitter: SimDuration,
    pub attacked: bool,
    pub protected: bool,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
}

impl Default for MaAttackConfig {
    fn default() -> Self {
        MaAttackConfig {
            params: TimingParams::default(),
            brake: BrakeParams::default(),
            v0: 90.0,
            obstacle: 10_000.0,
            forged_ma: 20_000.0,
            ma_at: 35.10,
            lte: SimDuration::from_millis(25),
            lte_jitter: SimDuration::ZERO,
            attacked: true,
            protected: true,
            dt: 0.01,
            horizon: 300.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaAttackResult {
    pub trace: Vec<TrainSample>,
    pub crashed: bool,
    pub crash_speed: f64,
    pub stop_x: Option<f64>,
    /// Round whose heartbeat must carry the endorsement of the received authority.
    pub poc_round: u64,
    /// Instant the corrected authority reaches the train, and the train's position then.
    pub corrected_at: Option<f64>,
    pub corrected_x: Option<f64>,
    pub emergency_seconds: f64,
}

/// Runs the forged-authority scenario. Without protection the train follows the forged
/// authority until the driver sees the obstacle. With protection the train expects the
/// endorsement in the heartbeat of the PoC round; its absence is declared to the control
/// center, which returns the correct authority.
pub fn simulate_incorrect_ma(cfg: &MaAttackConfig) -> Result<MaAttackResult, RailError> {
    let p = &cfg.params;
    let mut rng = stream_rng(cfg.seed, &[31]);
    let mut hop = || cfg.lte + SimDuration::from_nanos(rng.random_range(0..=cfg.lte_jitter.as_nanos()));
    let ma_time = crate::core::SimTime::from_secs_f64(cfg.ma_at);
    let poc_round = poc_round_for(ma_time, p)?;
    let hb = round_schedule(poc_round, p)?.t_send;
    // Heartbeat to the train, declaration to the control center, corrected authority back.
    let corrected = hb + hop() + p.dclr_validate_exec + hop() + p.decide_exec + hop();
    let corrected_at = (cfg.attacked && cfg.protected).then(|| corrected.as_secs_f64());

    let sent_ma = if cfg.attacked { cfg.forged_ma } else { cfg.obstacle };
    let mut train = Train::new(0.0, cfg.v0, None);
    let mut out = MaAttackResult {
        trace: Vec::new(),
        crashed: false,
        crash_speed: 0.0,
        stop_x: None,
        poc_round,
        corrected_at,
        corrected_x: None,
        emergency_seconds: 0.0,
    };
    let steps = (cfg.horizon / cfg.dt).round() as u64;
    let (mut got_ma, mut got_fix) = (false, false);
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        if !got_ma && t >= cfg.ma_at - 1e-9 {
            train.set_ma(Some(sent_ma));
            got_ma = true;
        }
        if let Some(fix) = corrected_at {
            if !got_fix && t >= fix - 1e-9 {
                train.set_ma(Some(cfg.obstacle));
                out.corrected_x = Some(train.state.x);
                got_fix = true;
            }
        }
        train.watch(cfg.obstacle, cfg.brake.sight);
        let s = train.state;
        out.trace.push(TrainSample { t, x: s.x, v: s.v, mode: s.mode });
        if s.x >= cfg.obstacle && s.v > 0.0 {
            out.crashed = true;
            out.crash_speed = s.v;
            break;
        }
        if s.v <= 0.0 && got_ma {
            out.stop_x = Some(s.x);
            break;
        }
        train.step(cfg.dt, &cfg.brake);
        if train.state.mode == TrainMode::EmergencyBrake {
            out.emergency_seconds += cfg.dt;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WenzhouVariant {
    /// The control center detects the missing heartbeat and rolls the follower's authority back.
    Protected,
    /// The follower keeps a clear authority until a manual notice.
    Incident,
    /// The follower is told to drive on sight as soon as the front train brakes.
    GoodNetwork,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WenzhouConfig {
    pub params: TimingParams,
    pub brake: BrakeParams,
    pub v0: f64,
    pub gap: f64,
    pub strike_at: f64,
    /// Uniform extra delay of the strike, drawn from the seed.
    pub strike_jitter: f64,
    /// Front-train driver resumes at on-sight speed.
    pub takeover_at: f64,
    /// Manual notice to the follower in the incident variant.
    pub notice_at: f64,
    /// Sight distance during the storm.
    pub storm_sight: f64,
    pub lte: SimDuration,
    pub variant: WenzhouVariant,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
}

impl Default for WenzhouConfig {
    fn default() -> Self {
        WenzhouConfig {
            params: TimingParams::default(),
            brake: BrakeParams::default(),
            v0: 90.0,
            gap: 10_000.0,
            strike_at: 10.0,
            strike_jitter: 0.0,
            takeover_at: 120.0,
            notice_at: 120.0,
            storm_sight: 500.0,
            lte: SimDuration::from_millis(25),
            variant: WenzhouVariant::Protected,
            dt: 0.01,
            horizon: 400.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoTrainSample {
    pub t: f64,
    pub x_follower: f64,
    pub x_front: f64,
    pub mode_follower: TrainMode,
    pub mode_front: TrainMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WenzhouResult {
    pub trace: Vec<TwoTrainSample>,
    pub strike_at: f64,
    pub safe_mode_at: Option<f64>,
    /// Authority given to the follower at safe mode.
    pub rollback_ma: Option<f64>,
    pub min_separation: f64,
    pub collided: bool,
}

/// Runs the two-train scenario. The front train reports its position in every heartbeat;
/// the follower's authority ends at the last reported position.
pub fn simulate_wenzhou(cfg: &WenzhouConfig) -> Result<WenzhouResult, RailError> {
    let p = &cfg.params;
    let mut rng = stream_rng(cfg.seed, &[32]);
    let strike = cfg.strike_at + if cfg.strike_jitter > 0.0 { rng.random_range(0.0..cfg.strike_jitter) } else { 0.0 };
    let period = p.period.as_secs_f64();
    let lte = cfg.lte.as_secs_f64();
    // First heartbeat the front train can no longer send, and the safe-mode instant.
    let lost = (strike / period).ceil().max(1.0) as u64;
    let sched = round_schedule(lost, p)?;
    let safe_at = sched.t_accept.as_secs_f64();

    let mut front = Train::new(cfg.gap, cfg.v0, None);
    let mut follower = Train::new(0.0, cfg.v0, Some(cfg.gap));
    let mut out = WenzhouResult {
        trace: Vec::new(),
        strike_at: strike,
        safe_mode_at: (cfg.variant == WenzhouVariant::Protected).then_some(safe_at),
        rollback_ma: None,
        min_separation: f64::INFINITY,
        collided: false,
    };
    let mut last_report = cfg.gap;
    let mut next_report = 0u64;
    let (mut struck, mut resumed, mut noticed, mut rolled) = (false, false, false, false);
    let steps = (cfg.horizon / cfg.dt).round() as u64;
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        // Position reports ride on heartbeats until the strike.
        while (next_report as f64) * period <= t + 1e-9 && (next_report as f64) * period < strike {
            last_report = front.state.x;
            next_report += 1;
        }
        if !struck && t >= strike - 1e-9 {
            front.force_brake();
            struck = true;
        }
        if struck && !resumed && t >= cfg.takeover_at - 1e-9 && front.state.v <= 0.0 {
            front.go_on_sight();
            resumed = true;
        }
        match cfg.variant {
            WenzhouVariant::Protected => {
                if !rolled && t >= safe_at + lte - 1e-9 {
                    out.rollback_ma = Some(last_report);
                    rolled = true;
                }
                follower.set_ma(Some(if rolled { out.rollback_ma.unwrap_or(last_report) } else { last_report }));
            }
            WenzhouVariant::Incident => {
                if !noticed && t >= cfg.notice_at - 1e-9 {
                    follower.go_on_sight();
                    noticed = true;
                }
                if !noticed {
                    // The section wrongly shows clear, so the authority keeps extending.
                    follower.set_ma(Some(follower.state.x + cfg.gap));
                }
                follower.watch(front.state.x, cfg.storm_sight);
            }
            WenzhouVariant::GoodNetwork => {
                if !noticed && t >= strike + 2.0 * lte - 1e-9 {
                    follower.go_on_sight();
                    noticed = true;
                }
                if !noticed {
                    follower.set_ma(Some(last_report));
                }
                follower.watch(front.state.x, cfg.brake.sight);
            }
        }
        let sep = front.state.x - follower.state.x;
        out.min_separation = out.min_separation.min(sep);
        out.trace.push(TwoTrainSample {
            t,
            x_follower: follower.state.x,
            x_front: front.state.x,
            mode_follower: follower.state.mode,
            mode_front: front.state.mode,
        });
        if sep <= 0.0 {
            out.collided = true;
            break;
        }
        front.step(cfg.dt, &cfg.brake);
        follower.step(cfg.dt, &cfg.brake);
    }
    Ok(out)
}
