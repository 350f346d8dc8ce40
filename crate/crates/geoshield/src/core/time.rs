//! Integer-nanosecond simulation time.
//!
//! Arithmetic is checked: the `checked_*` methods return [`TimeError`], and the
//! operator impls panic on overflow instead of wrapping.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const NS_PER_US: u64 = 1_000;
const NS_PER_MS: u64 = 1_000_000;
const NS_PER_S: u64 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimeError {
    #[error("simulation time overflow")]
    Overflow,
    #[error("simulation time underflow")]
    Underflow,
    #[error("invalid duration literal `{0}`")]
    Parse(String),
}

/// Absolute simulation time in nanoseconds since the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

/// Non-negative span of simulation time in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimDuration(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn from_secs_f64(s: f64) -> Self {
        SimTime(SimDuration::from_secs_f64(s).0)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NS_PER_S as f64
    }

    /// Offset of this instant from the epoch.
    pub const fn since_epoch(self) -> SimDuration {
        SimDuration(self.0)
    }

    pub fn checked_add(self, d: SimDuration) -> Result<SimTime, TimeError> {
        self.0.checked_add(d.0).map(SimTime).ok_or(TimeError::Overflow)
    }

    pub fn checked_sub(self, d: SimDuration) -> Result<SimTime, TimeError> {
        self.0.checked_sub(d.0).map(SimTime).ok_or(TimeError::Underflow)
    }

    /// `self - earlier`, failing if `earlier` is later than `self`.
    pub fn since(self, earlier: SimTime) -> Result<SimDuration, TimeError> {
        self.0.checked_sub(earlier.0).map(SimDuration).ok_or(TimeError::Underflow)
    }

    /// Signed difference `self - other` in nanoseconds.
    pub fn signed_diff(self, other: SimTime) -> i128 {
        self.0 as i128 - other.0 as i128
    }

    /// Shift by a signed nanosecond offset, failing outside the representable range.
    pub fn offset_by(self, ns: i64) -> Result<SimTime, TimeError> {
        if ns >= 0 {
            self.checked_add(SimDuration(ns as u64))
        } else {
            self.checked_sub(SimDuration(ns.unsigned_abs()))
        }
    }
}

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration(0);

    pub const fn from_nanos(ns: u64) -> Self {
        SimDuration(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimDuration(us * NS_PER_US)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimDuration(ms * NS_PER_MS)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimDuration(s * NS_PER_S)
    }

    /// Rounds to the nearest nanosecond; negative or non-finite input maps to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        if !s.is_finite() || s <= 0.0 {
            return SimDuration::ZERO;
        }
        SimDuration((s * NS_PER_S as f64).round() as u64)
    }

    pub fn from_millis_f64(ms: f64) -> Self {
        Self::from_secs_f64(ms / 1e3)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NS_PER_S as f64
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / NS_PER_MS as f64
    }

    pub fn checked_add(self, d: SimDuration) -> Result<SimDuration, TimeError> {
        self.0.checked_add(d.0).map(SimDuration).ok_or(TimeError::Overflow)
    }

    pub fn checked_sub(self, d: SimDuration) -> Result<SimDuration, TimeError> {
        self.0.checked_sub(d.0).map(SimDuration).ok_or(TimeError::Underflow)
    }

    pub fn checked_mul(self, k: u64) -> Result<SimDuration, TimeError> {
        self.0.checked_mul(k).map(SimDuration).ok_or(TimeError::Overflow)
    }

    pub fn saturating_sub(self, d: SimDuration) -> SimDuration {
        SimDuration(self.0.saturating_sub(d.0))
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl Add<SimDuration> for SimTime {
    type Output = SimTime;
    fn add(self, d: SimDuration) -> SimTime {
        self.checked_add(d).expect("SimTime overflow")
    }
}

impl Sub<SimDuration> for SimTime {
    type Output = SimTime;
    fn sub(self, d: SimDuration) -> SimTime {
        self.checked_sub(d).expect("SimTime underflow")
    }
}

impl Add for SimDuration {
    type Output = SimDuration;
    fn add(self, d: SimDuration) -> SimDuration {
        self.checked_add(d).expect("SimDuration overflow")
    }
}

impl Sub for SimDuration {
    type Output = SimDuration;
    fn sub(self, d: SimDuration) -> SimDuration {
        self.checked_sub(d).expect("SimDuration underflow")
    }
}

impl Mul<u64> for SimDuration {
    type Output = SimDuration;
    fn mul(self, k: u64) -> SimDuration {
        self.checked_mul(k).expect("SimDuration overflow")
    }
}

fn format_nanos(ns: u64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if ns == 0 {
        write!(f, "0s")
    } else if ns.is_multiple_of(NS_PER_S) {
        write!(f, "{}s", ns / NS_PER_S)
    } else if ns.is_multiple_of(NS_PER_MS) {
        write!(f, "{}ms", ns / NS_PER_MS)
    } else if ns.is_multiple_of(NS_PER_US) {
        write!(f, "{}us", ns / NS_PER_US)
    } else {
        write!(f, "{}ns", ns)
    }
}

impl fmt::Display for SimDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        format_nanos(self.0, f)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        format_nanos(self.0, f)
    }
}

/// Parses `<decimal><unit>` with unit in `s`, `ms`, `us`, `ns`, exactly.
impl FromStr for SimDuration {
    type Err = TimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || TimeError::Parse(s.to_string());
        let t = s.trim();
        let split = t
            .find(|c: char| c.is_ascii_alphabetic())
            .ok_or_else(err)?;
        let (num, unit) = t.split_at(split);
        let scale = match unit {
            "s" => NS_PER_S,
            "ms" => NS_PER_MS,
            "us" => NS_PER_US,
            "ns" => 1,
            _ => return Err(err()),
        };
        let (int_part, frac_part) = match num.split_once('.') {
            Some((i, fr)) => (i, fr),
            None => (num, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err());
        }
        let digits_ok = |x: &str| x.chars().all(|c| c.is_ascii_digit());
        if !digits_ok(int_part) || !digits_ok(frac_part) {
            return Err(err());
        }
        let int_val: u64 = if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| err())? };
        let mut total = int_val.checked_mul(scale).ok_or(TimeError::Overflow)?;
        let mut place = scale;
        for c in frac_part.chars() {
            place /= 10;
            let digit = c.to_digit(10).unwrap() as u64;
            if place == 0 {
                if digit != 0 {
                    return Err(err());
                }
                continue;
            }
            total = total.checked_add(digit * place).ok_or(TimeError::Overflow)?;
        }
        Ok(SimDuration(total))
    }
}

impl FromStr for SimTime {
    type Err = TimeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<SimDuration>().map(|d| SimTime(d.0))
    }
}

impl Serialize for SimDuration {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SimDuration {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Serialize for SimTime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SimTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
