//! Delay-difference distribution of message pairs, from a latency trace or from the
//! synthetic link model.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::core::{NodeId, RegionId, SimDuration, SimTime};
use crate::simnet::{InterLinkModel, IntraLinkModel, NetError, Network};

/// One delivered message: `send_ns,recv_ns`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySample {
    pub send_ns: u64,
    pub recv_ns: u64,
}

impl LatencySample {
    pub fn delay(&self) -> u64 {
        self.recv_ns.saturating_sub(self.send_ns)
    }
}

/// Two messages between distinct node pairs of one region pair, sent together every `spacing`.
pub fn synth_latency_trace(
    inter: &InterLinkModel,
    pairs: usize,
    spacing: SimDuration,
    seed: u64,
) -> Result<Vec<LatencySample>, NetError> {
    let placement = [(NodeId(0), RegionId(0)), (NodeId(1), RegionId(0)), (NodeId(2), RegionId(1)), (NodeId(3), RegionId(1))];
    let intra = IntraLinkModel { delay: SimDuration::from_millis(2), spread: SimDuration::from_micros(500) };
    let mut net = Network::new(seed, placement, intra, *inter);
    let mut out = Vec::with_capacity(2 * pairs);
    for k in 0..pairs {
        let at = SimTime::ZERO + spacing * k as u64;
        for (a, b) in [(NodeId(0), NodeId(2)), (NodeId(1), NodeId(3))] {
            if let Some(t) = net.send(a, b, at)?.time() {
                out.push(LatencySample { send_ns: at.as_nanos(), recv_ns: t.as_nanos() });
            }
        }
    }
    Ok(out)
}

/// Absolute delay differences of consecutive messages sent within `window` of each other.
/// Each message joins at most one pair.
pub fn pair_differences(samples: &[LatencySample], window: SimDuration) -> Vec<u64> {
    let mut s = samples.to_vec();
    s.sort_by_key(|x| (x.send_ns, x.recv_ns));
    let mut out = Vec::new();
    let mut i = 0;
    while i + 1 < s.len() {
        if s[i + 1].send_ns - s[i].send_ns <= window.as_nanos() {
            out.push(s[i].delay().abs_diff(s[i + 1].delay()));
            i += 2;
        } else {
            i += 1;
        }
    }
    out
}

pub fn fraction_below(diffs: &[u64], bound: SimDuration) -> f64 {
    if diffs.is_empty() {
        return 1.0;
    }
    diffs.iter().filter(|d| **d < bound.as_nanos()).count() as f64 / diffs.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CdfRow {
    pub jitter_us: f64,
    pub fraction: f64,
}

/// Empirical CDF at `points` evenly spaced thresholds up to the largest difference.
pub fn jitter_cdf(diffs: &[u64], points: usize) -> Vec<CdfRow> {
    let mut d = diffs.to_vec();
    d.sort_unstable();
    let max = d.last().copied().unwrap_or(0);
    (0..=points)
        .map(|i| {
            let x = max as f64 * i as f64 / points.max(1) as f64;
            let below = d.partition_point(|v| (*v as f64) <= x);
            CdfRow { jitter_us: x / 1e3, fraction: if d.is_empty() { 1.0 } else { below as f64 / d.len() as f64 } }
        })
        .collect()
}

pub fn read_latency_csv<R: Read>(r: R) -> csv::Result<Vec<LatencySample>> {
    csv::Reader::from_reader(r).deserialize().collect()
}

pub fn write_latency_csv<W: Write>(w: W, samples: &[LatencySample]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in samples {
        out.serialize(s)?;
    }
    out.flush()?;
    Ok(())
}

/// `jitter_us,fraction`.
pub fn cdf_csv(rows: &[CdfRow]) -> String {
    let mut s = String::from("jitter_us,fraction\n");
    for r in rows {
        s.push_str(&format!("{:.3},{:.6}\n", r.jitter_us, r.fraction));
    }
    s
}
