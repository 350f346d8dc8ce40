use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::SimDuration;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("intra-region spread exceeds the maximum delay")]
    IntraSpread,
    #[error("base walk bounds are inverted or the initial value lies outside them")]
    WalkBounds,
    #[error("normal jitter spread plus walk step ({0}) must stay below the jitter bound ({1})")]
    JitterTooWide(SimDuration, SimDuration),
    #[error("probability `{0}` out of range")]
    Probability(&'static str),
}

/// Synchronous intra-region link: latency uniform in `[delay - spread, delay]`, never lossy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntraLinkModel {
    pub delay: SimDuration,
    pub spread: SimDuration,
}

impl IntraLinkModel {
    pub fn validate(&self) -> Result<(), LinkError> {
        if self.spread > self.delay {
            return Err(LinkError::IntraSpread);
        }
        Ok(())
    }

    pub fn min(&self) -> SimDuration {
        self.delay - self.spread
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> SimDuration {
        let lo = self.min().as_nanos();
        SimDuration::from_nanos(rng.random_range(lo..=self.delay.as_nanos()))
    }
}

/// Base latency between a region pair: a reflected random walk, constant within each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseWalk {
    pub initial: SimDuration,
    pub min: SimDuration,
    pub max: SimDuration,
    /// Largest change between consecutive epochs.
    pub step: SimDuration,
    pub epoch: SimDuration,
}

impl Default for BaseWalk {
    fn default() -> Self {
        BaseWalk {
            initial: SimDuration::from_millis(40),
            min: SimDuration::from_millis(30),
            max: SimDuration::from_millis(60),
            step: SimDuration::from_micros(200),
            epoch: SimDuration::from_secs(1),
        }
    }
}

impl BaseWalk {
    pub fn constant(latency: SimDuration) -> Self {
        BaseWalk { initial: latency, min: latency, max: latency, step: SimDuration::ZERO, epoch: SimDuration::from_secs(1) }
    }

    /// Next epoch's value given the current one.
    pub fn advance<R: Rng>(&self, cur: SimDuration, rng: &mut R) -> SimDuration {
        if self.step.is_zero() {
            return cur;
        }
        let step = self.step.as_nanos() as i64;
        let lo = self.min.as_nanos() as i64;
        let hi = self.max.as_nanos() as i64;
        let mut next = cur.as_nanos() as i64 + rng.random_range(-step..=step);
        if next < lo {
            next = (2 * lo - next).min(hi);
        }
        if next > hi {
            next = (2 * hi - next).max(lo);
        }
        SimDuration::from_nanos(next as u64)
    }
}

/// Per-message jitter on top of the base latency.
///
/// A message is *normal* with probability `sqrt(p)` and then draws its jitter from
/// `[0, spread)`; otherwise it is an outlier delayed by at least `spread + outlier_gap`.
/// Two normal messages always differ by less than `spread`, so a pair differs by less
/// than the jitter bound with probability at least `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JitterModel {
    pub spread: SimDuration,
    pub p_norm: f64,
    pub outlier_gap: SimDuration,
    pub outlier_mean: SimDuration,
    /// Send-time window within which two messages count as a pair.
    pub pair_window: SimDuration,
}

impl Default for JitterModel {
    fn default() -> Self {
        JitterModel {
            spread: SimDuration::from_millis(2),
            p_norm: 0.999,
            outlier_gap: SimDuration::from_micros(2406),
            outlier_mean: SimDuration::from_millis(5),
            pair_window: SimDuration::from_millis(1),
        }
    }
}

impl JitterModel {
    pub fn outlier_prob(p_norm: f64) -> f64 {
        1.0 - p_norm.sqrt()
    }

    pub fn sample<R: Rng>(&self, p_norm: f64, rng: &mut R) -> SimDuration {
        if rng.random::<f64>() >= Self::outlier_prob(p_norm) {
            SimDuration::from_nanos(rng.random_range(0..self.spread.as_nanos().max(1)))
        } else {
            let u: f64 = rng.random();
            let tail = -(1.0 - u).ln() * self.outlier_mean.as_nanos() as f64;
            self.spread + self.outlier_gap + SimDuration::from_nanos(tail as u64)
        }
    }
}

/// Inter-region link configuration for every region pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterLinkModel {
    pub base: BaseWalk,
    pub jitter: JitterModel,
    pub drop_prob: f64,
    /// Actual pair probability under a DoS overlay, replacing `jitter.p_norm` at run time.
    pub dos_p_norm: Option<f64>,
}

impl Default for InterLinkModel {
    fn default() -> Self {
        InterLinkModel { base: BaseWalk::default(), jitter: JitterModel::default(), drop_prob: 0.0, dos_p_norm: None }
    }
}

impl InterLinkModel {
    pub fn effective_p_norm(&self) -> f64 {
        self.dos_p_norm.unwrap_or(self.jitter.p_norm)
    }

    pub fn validate(&self, jitter_bound: SimDuration) -> Result<(), LinkError> {
        let b = &self.base;
        if b.min > b.max || b.initial < b.min || b.initial > b.max || b.epoch.is_zero() {
            return Err(LinkError::WalkBounds);
        }
        let width = self.jitter.spread + b.step;
        if width >= jitter_bound {
            return Err(LinkError::JitterTooWide(width, jitter_bound));
        }
        let in_unit = |p: f64| (0.0..=1.0).contains(&p);
        if !(self.jitter.p_norm > 0.0 && self.jitter.p_norm < 1.0) {
            return Err(LinkError::Probability("jitter.p_norm"));
        }
        if let Some(p) = self.dos_p_norm {
            if !(p > 0.0 && p < 1.0) {
                return Err(LinkError::Probability("dos_p_norm"));
            }
        }
        if !in_unit(self.drop_prob) {
            return Err(LinkError::Probability("drop_prob"));
        }
        Ok(())
    }
}
