//! Per-round protocol instants.

use serde::{Deserialize, Serialize};

use super::params::TimingParams;
use super::time::{SimDuration, SimTime, TimeError};

/// The five instants of measurement round `n`, in protocol order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSchedule {
    pub n: u64,
    /// Signature exchange starts.
    pub t_sig: SimTime,
    /// Heartbeats are sent.
    pub t_send: SimTime,
    /// Last instant at which a received heartbeat yields a proposal.
    pub t_hb_stop: SimTime,
    /// Accept messages are sent.
    pub t_accept: SimTime,
    /// Accept collection closes and the round is decided.
    pub t_decide: SimTime,
}

/// Computes the schedule of round `n`.
///
/// `t_hb_stop = t_accept - prop_build - intra_delay` leaves exactly enough time for a
/// proposal made at the cutoff to reach every peer by `t_accept`;
/// `t_decide = t_accept + prop_build + intra_delay` covers accept construction and delivery.
pub fn round_schedule(n: u64, p: &TimingParams) -> Result<RoundSchedule, TimeError> {
    let offset = p.period.checked_mul(n)?;
    let t_send = p.epoch.checked_add(offset)?;
    let t_sig = t_send.checked_sub(p.intra_delay.checked_add(p.hb_build)?)?;
    let t_accept = t_send.checked_add(p.hb_timeout)?;
    let slack = p.prop_build.checked_add(p.intra_delay)?;
    let t_hb_stop = t_accept.checked_sub(slack)?;
    let t_decide = t_accept.checked_add(slack)?;
    Ok(RoundSchedule { n, t_sig, t_send, t_hb_stop, t_accept, t_decide })
}

/// How far before `t_send` a valid heartbeat can possibly be sent.
pub fn early_bound(p: &TimingParams) -> SimDuration {
    p.clock_skew + p.intra_spread + p.hb_build_spread
}

impl RoundSchedule {
    pub fn is_ordered(&self) -> bool {
        self.t_sig < self.t_send
            && self.t_send < self.t_hb_stop
            && self.t_hb_stop < self.t_accept
            && self.t_accept < self.t_decide
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base() -> TimingParams {
        TimingParams {
            period: SimDuration::from_secs(1),
            intra_delay: SimDuration::from_millis(2),
            hb_build: SimDuration::from_millis(1),
            hb_timeout: SimDuration::from_millis(200),
            ..TimingParams::default()
        }
    }

    #[test]
    fn round_five_from_zero_epoch() {
        let s = round_schedule(5, &base()).unwrap();
        assert_eq!(s.t_send, SimTime::from_secs_f64(5.0));
        assert_eq!(s.t_sig, SimTime::from_nanos(4_997_000_000));
        assert_eq!(s.t_accept, SimTime::from_nanos(5_200_000_000));
        assert!(s.is_ordered());
    }

    #[test]
    fn round_zero_is_epoch() {
        let p = TimingParams { epoch: SimTime::from_secs_f64(10.0), ..base() };
        assert_eq!(round_schedule(0, &p).unwrap().t_send, SimTime::from_secs_f64(10.0));
    }

    #[test]
    fn railway_round_accept_deadline() {
        let s = round_schedule(35, &base()).unwrap();
        assert_eq!(s.t_accept, SimTime::from_nanos(35_200_000_000));
        let s = round_schedule(36, &base()).unwrap();
        assert_eq!(s.t_accept, SimTime::from_nanos(36_200_000_000));
    }

    #[test]
    fn design_cutoffs() {
        let p = TimingParams::default();
        let s = round_schedule(3, &p).unwrap();
        assert_eq!(s.t_hb_stop, s.t_accept - p.prop_build - p.intra_delay);
        assert_eq!(s.t_decide, s.t_accept + p.prop_build + p.intra_delay);
    }

    #[test]
    fn underflow_and_overflow_are_errors() {
        assert!(round_schedule(0, &base()).is_err());
        assert!(round_schedule(u64::MAX, &base()).is_err());
    }

    #[test]
    fn early_bound_sums_the_spreads() {
        let p = TimingParams::default();
        assert_eq!(early_bound(&p), SimDuration::from_millis(2));
    }

    proptest! {
        #[test]
        fn schedule_identities(
            n in 1u64..100_000,
            period_ms in 50u64..5_000,
            intra_us in 100u64..5_000,
            hb_us in 100u64..5_000,
            prop_us in 100u64..5_000,
            extra_ms in 1u64..500,
        ) {
            let intra = SimDuration::from_micros(intra_us);
            let prop = SimDuration::from_micros(prop_us);
            let p = TimingParams {
                period: SimDuration::from_millis(period_ms),
                intra_delay: intra,
                intra_spread: SimDuration::from_micros(intra_us / 2),
                hb_build: SimDuration::from_micros(hb_us),
                hb_build_spread: SimDuration::from_micros(hb_us / 2),
                prop_build: prop,
                prop_build_spread: SimDuration::from_micros(prop_us / 2),
                hb_timeout: prop + intra + SimDuration::from_millis(extra_ms),
                ..TimingParams::default()
            };
            prop_assume!(p.validate().is_ok());
            let s = round_schedule(n, &p).unwrap();
            let next = round_schedule(n + 1, &p).unwrap();
            prop_assert!(s.is_ordered());
            prop_assert_eq!(s.t_sig + p.intra_delay + p.hb_build, s.t_send);
            prop_assert_eq!(s.t_send, p.epoch + p.period * n);
            prop_assert_eq!(s.t_accept, s.t_send + p.hb_timeout);
            prop_assert!(next.t_sig > s.t_sig && next.t_send > s.t_send);
            prop_assert!(next.t_hb_stop > s.t_hb_stop && next.t_accept > s.t_accept);
            prop_assert!(next.t_decide > s.t_decide);
        }
    }
}
