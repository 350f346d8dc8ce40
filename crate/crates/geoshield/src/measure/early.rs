//! Exhaustive early-heartbeat attempts on a fine time grid.

use serde::Serialize;

use super::msg::{Heartbeat, SigShare};
use crate::core::{early_bound, round_schedule, Digest, KeyStore, NodeId, RegionId, SimDuration, SimTime, TimeError, TimingParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EarlySweep {
    pub f: usize,
    pub faulty: usize,
    pub attempts: usize,
    /// Earliest grid instant at which the attacker's heartbeat validated.
    pub earliest_valid: Option<SimTime>,
    /// `t_n - t_early`.
    pub bound: SimTime,
}

impl EarlySweep {
    pub fn respects_bound(&self) -> bool {
        self.earliest_valid.is_none_or(|t| t >= self.bound)
    }

    /// The earliest valid attempt lies within `grid` of the bound.
    pub fn is_tight(&self, grid: SimDuration) -> bool {
        self.earliest_valid.is_some_and(|t| t.since(self.bound).is_ok_and(|d| d < grid))
    }
}

/// Worst case for the defender: the `f + 1 - faulty` correct upstream measurers run their
/// clocks `clock_skew` ahead, their shares take the minimum intra-region latency, and the
/// attacker builds in the minimum time. Colluders sign whenever asked, and every correct
/// share of the previous round is replayed.
pub fn early_heartbeat_sweep(
    p: &TimingParams,
    f: usize,
    faulty: usize,
    n: u64,
    window: SimDuration,
    grid: SimDuration,
) -> Result<EarlySweep, TimeError> {
    assert!(faulty >= 1 && faulty <= f, "the attacker is one of at most f faulty measurers");
    let region = RegionId(0);
    let measurers: Vec<NodeId> = (0..=f as u32).map(NodeId).collect();
    let keys = KeyStore::new(n, measurers.iter().copied());
    let attacker = keys.signer(measurers[0]).expect("registered");
    let sched = round_schedule(n, p)?;
    let share_arrival = sched.t_sig.checked_sub(p.clock_skew)? + p.intra_min();
    let build = p.hb_build - p.hb_build_spread;
    let bound = sched.t_send.checked_sub(early_bound(p))?;

    let colluder_sigs: Vec<_> = measurers[..faulty]
        .iter()
        .map(|m| SigShare::new(&keys.signer(*m).expect("registered"), region, n, Digest::default()).sig)
        .collect();
    let correct = &measurers[faulty..];
    let current: Vec<_> = correct
        .iter()
        .map(|m| SigShare::new(&keys.signer(*m).expect("registered"), region, n, Digest::default()).sig)
        .collect();
    let replayed: Vec<_> = correct
        .iter()
        .map(|m| SigShare::new(&keys.signer(*m).expect("registered"), region, n - 1, Digest::default()).sig)
        .collect();

    let verifier = keys.verifier();
    let start = sched.t_send.checked_sub(window)?;
    let mut out = EarlySweep { f, faulty, attempts: 0, earliest_valid: None, bound };
    let mut t = start;
    while t <= sched.t_send {
        out.attempts += 1;
        let mut sigs = colluder_sigs.clone();
        sigs.extend(replayed.iter().copied());
        if t.checked_sub(build).is_ok_and(|ready| ready >= share_arrival) {
            sigs.extend(current.iter().copied());
        }
        let hb = Heartbeat::build(&attacker, region, n, Digest::default(), sigs);
        if hb.validate(&verifier, &measurers, f).is_ok() {
            out.earliest_valid = Some(t);
            break;
        }
        t = t + grid;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_params_bound_is_tight() {
        let p = TimingParams::default();
        let grid = SimDuration::from_micros(1);
        for f in 1..=2 {
            for faulty in 1..=f {
                let s = early_heartbeat_sweep(&p, f, faulty, 7, SimDuration::from_millis(5), grid).unwrap();
                assert!(s.respects_bound(), "{s:?}");
                assert!(s.is_tight(grid), "{s:?}");
            }
        }
    }

    #[test]
    fn bound_is_two_ms_by_default() {
        let p = TimingParams::default();
        let s = early_heartbeat_sweep(&p, 1, 1, 3, SimDuration::from_millis(5), SimDuration::from_micros(1)).unwrap();
        assert_eq!(s.earliest_valid, Some(SimTime::from_nanos(3_000_000_000 - 2_000_000)));
    }
}
