use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::time::{SimDuration, SimTime};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("duration `{0}` must be positive")]
    NonPositive(&'static str),
    #[error("`{small}` must not exceed `{large}`")]
    Order { small: &'static str, large: &'static str },
    #[error("p_norm must lie strictly between 0 and 1, got {0}")]
    Probability(f64),
    #[error("hb_timeout must exceed prop_build + intra_delay so the heartbeat cutoff follows the send time")]
    Cutoff,
}

/// Timing constants shared by all nodes; known offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingParams {
    /// Heartbeat period.
    pub period: SimDuration,
    /// Time after the send instant at which latency is accepted.
    pub hb_timeout: SimDuration,
    /// Send instant of round 0.
    pub epoch: SimTime,
    /// Maximum intra-region latency.
    pub intra_delay: SimDuration,
    /// Width of the intra-region latency range.
    pub intra_spread: SimDuration,
    /// Heartbeat construction time.
    pub hb_build: SimDuration,
    pub hb_build_spread: SimDuration,
    /// Proposal construction time.
    pub prop_build: SimDuration,
    pub prop_build_spread: SimDuration,
    /// Maximum clock skew between any two nodes.
    pub clock_skew: SimDuration,
    /// Probabilistic inter-region jitter bound.
    pub inter_jitter: SimDuration,
    pub p_norm: f64,
    pub poc_exec: SimDuration,
    pub sig_exec: SimDuration,
    pub hb_exec: SimDuration,
    pub dclr_validate_exec: SimDuration,
    pub log_exchange_exec: SimDuration,
    pub log_validate_exec: SimDuration,
    pub decide_exec: SimDuration,
    /// Spread of fault detection times across nodes.
    pub detect_spread: SimDuration,
    /// Worst-case detection time relative to the affected job's release.
    pub detect_bound: SimDuration,
}

impl Default for TimingParams {
    fn default() -> Self {
        TimingParams {
            period: SimDuration::from_secs(1),
            hb_timeout: SimDuration::from_millis(200),
            epoch: SimTime::ZERO,
            intra_delay: SimDuration::from_millis(2),
            intra_spread: SimDuration::from_micros(500),
            hb_build: SimDuration::from_millis(1),
            hb_build_spread: SimDuration::from_micros(500),
            prop_build: SimDuration::from_millis(2),
            prop_build_spread: SimDuration::from_millis(1),
            clock_skew: SimDuration::from_millis(1),
            inter_jitter: SimDuration::from_micros(2406),
            p_norm: 0.999,
            poc_exec: SimDuration::from_micros(100),
            sig_exec: SimDuration::from_micros(100),
            hb_exec: SimDuration::from_millis(1),
            dclr_validate_exec: SimDuration::from_micros(500),
            log_exchange_exec: SimDuration::from_micros(500),
            log_validate_exec: SimDuration::from_micros(500),
            decide_exec: SimDuration::from_micros(500),
            detect_spread: SimDuration::from_millis(5),
            detect_bound: SimDuration::from_millis(150),
        }
    }
}

impl TimingParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let positive = [
            ("period", self.period),
            ("hb_timeout", self.hb_timeout),
            ("intra_delay", self.intra_delay),
            ("intra_spread", self.intra_spread),
            ("hb_build", self.hb_build),
            ("hb_build_spread", self.hb_build_spread),
            ("prop_build", self.prop_build),
            ("prop_build_spread", self.prop_build_spread),
            ("clock_skew", self.clock_skew),
            ("inter_jitter", self.inter_jitter),
            ("poc_exec", self.poc_exec),
            ("sig_exec", self.sig_exec),
            ("hb_exec", self.hb_exec),
            ("dclr_validate_exec", self.dclr_validate_exec),
            ("log_exchange_exec", self.log_exchange_exec),
            ("log_validate_exec", self.log_validate_exec),
            ("decide_exec", self.decide_exec),
            ("detect_spread", self.detect_spread),
            ("detect_bound", self.detect_bound),
        ];
        for (name, d) in positive {
            if d.is_zero() {
                return Err(ParamError::NonPositive(name));
            }
        }
        let ordered = [
            ("intra_spread", self.intra_spread, "intra_delay", self.intra_delay),
            ("hb_build_spread", self.hb_build_spread, "hb_build", self.hb_build),
            ("prop_build_spread", self.prop_build_spread, "prop_build", self.prop_build),
            ("detect_spread", self.detect_spread, "detect_bound", self.detect_bound),
        ];
        for (small, s, large, l) in ordered {
            if s > l {
                return Err(ParamError::Order { small, large });
            }
        }
        if !(self.p_norm > 0.0 && self.p_norm < 1.0) {
            return Err(ParamError::Probability(self.p_norm));
        }
        if self.hb_timeout <= self.prop_build + self.intra_delay {
            return Err(ParamError::Cutoff);
        }
        Ok(())
    }

    /// Lower edge of the intra-region latency range.
    pub fn intra_min(&self) -> SimDuration {
        self.intra_delay - self.intra_spread
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        TimingParams::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let mut p = TimingParams::default();
        p.intra_spread = SimDuration::from_millis(3);
        assert_eq!(
            p.validate(),
            Err(ParamError::Order { small: "intra_spread", large: "intra_delay" })
        );
        let mut p = TimingParams::default();
        p.p_norm = 1.0;
        assert!(matches!(p.validate(), Err(ParamError::Probability(_))));
        let mut p = TimingParams::default();
        p.clock_skew = SimDuration::ZERO;
        assert_eq!(p.validate(), Err(ParamError::NonPositive("clock_skew")));
        let mut p = TimingParams::default();
        p.hb_timeout = SimDuration::from_millis(4);
        assert_eq!(p.validate(), Err(ParamError::Cutoff));
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let p = TimingParams::default();
        let text = toml::to_string(&p).unwrap();
        let back: TimingParams = toml::from_str(&text).unwrap();
        assert_eq!(back, p);
        assert!(toml::from_str::<TimingParams>("bogus = \"1s\"").is_err());
        let partial: TimingParams = toml::from_str("period = \"500ms\"").unwrap();
        assert_eq!(partial.period, SimDuration::from_millis(500));
    }
}
