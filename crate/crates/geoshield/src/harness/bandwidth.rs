//! Per-node byte accounting for the measurement and endorsement traffic of a fully
//! connected deployment. Every message is charged to both its sender and its receiver.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::core::{NodeId, SimDuration};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SizeModel {
    pub signature: u64,
    pub hash: u64,
    pub header: u64,
    /// Round numbers, job ids and latency values.
    pub field: u64,
    /// Application payload of one inter-region task message.
    pub payload: u64,
}

impl Default for SizeModel {
    fn default() -> Self {
        SizeModel { signature: 64, hash: 32, header: 16, field: 8, payload: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BandwidthConfig {
    pub regions: u32,
    pub f: usize,
    pub heartbeats: bool,
    /// Inter-region tasks per ordered region pair.
    pub tasks_per_pair: usize,
    pub rounds: u64,
    pub period: SimDuration,
    pub sizes: SizeModel,
}

impl Default for BandwidthConfig {
    fn default() -> Self {
        BandwidthConfig {
            regions: 5,
            f: 1,
            heartbeats: true,
            tasks_per_pair: 1,
            rounds: 10,
            period: SimDuration::from_secs(1),
            sizes: SizeModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bandwidth {
    pub regions: u32,
    /// Mean per-node rates in kB/s.
    pub intra_kbps: f64,
    pub inter_kbps: f64,
    /// Total bytes per node over the run: (intra, inter).
    pub per_node: BTreeMap<NodeId, (u64, u64)>,
}

struct Tally<'a> {
    cfg: &'a BandwidthConfig,
    bytes: BTreeMap<NodeId, (u64, u64)>,
}

impl Tally<'_> {
    fn node(&self, r: u32, i: usize) -> NodeId {
        NodeId(r * 1000 + i as u32)
    }

    /// The first `f + 1` nodes replicate, the last `f + 1` measure.
    fn replicas(&self, r: u32) -> Vec<NodeId> {
        (0..=self.cfg.f).map(|i| self.node(r, i)).collect()
    }

    fn measurers(&self, r: u32) -> Vec<NodeId> {
        (self.cfg.f..=2 * self.cfg.f).map(|i| self.node(r, i)).collect()
    }

    fn region(&self, r: u32) -> Vec<NodeId> {
        (0..=2 * self.cfg.f).map(|i| self.node(r, i)).collect()
    }

    fn send(&mut self, from: NodeId, to: NodeId, size: u64, inter: bool) {
        for n in [from, to] {
            let e = self.bytes.entry(n).or_insert((0, 0));
            if inter {
                e.1 += size;
            } else {
                e.0 += size;
            }
        }
    }

    fn all_to_all(&mut self, from: &[NodeId], to: &[NodeId], size: u64, inter: bool) {
        for a in from {
            for b in to.iter().filter(|b| *b != a) {
                self.send(*a, *b, size, inter);
            }
        }
    }

    /// One round of the relation from region `u` to region `d`.
    fn relation(&mut self, u: u32, d: u32) {
        let s = self.cfg.sizes;
        let k = (self.cfg.f + 1) as u64;
        let tasks = self.cfg.tasks_per_pair as u64;
        let poc = s.hash + s.field + k * s.signature;
        let heartbeat = s.header + s.field + s.hash + k * s.signature + tasks * poc;
        let (up_rep, up_meas) = (self.replicas(u), self.measurers(u));
        let (down_rep, down_meas, down_all) = (self.replicas(d), self.measurers(d), self.region(d));
        for _ in 0..tasks {
            self.all_to_all(&up_rep, &down_rep, s.header + s.field + s.payload + s.signature, true);
        }
        if !self.cfg.heartbeats {
            return;
        }
        for _ in 0..tasks {
            self.all_to_all(&up_rep, &up_meas, s.header + s.field + s.hash + s.signature, false);
            self.all_to_all(&down_meas, &down_rep, s.header + poc, false);
        }
        self.all_to_all(&up_meas, &up_meas, s.header + s.field + s.signature, false);
        self.all_to_all(&up_meas, &down_meas, heartbeat, true);
        self.all_to_all(&down_meas, &down_all, s.header + 2 * s.field + heartbeat + s.signature, false);
        self.all_to_all(&down_meas, &down_all, s.header + 2 * s.field + s.signature, false);
    }
}

pub fn account_bandwidth(cfg: &BandwidthConfig) -> Bandwidth {
    let mut t = Tally { cfg, bytes: BTreeMap::new() };
    for r in 0..cfg.regions {
        for n in t.region(r) {
            t.bytes.insert(n, (0, 0));
        }
    }
    for _ in 0..cfg.rounds {
        for u in 0..cfg.regions {
            for d in (0..cfg.regions).filter(|d| *d != u) {
                t.relation(u, d);
            }
        }
    }
    let secs = cfg.period.as_secs_f64() * cfg.rounds as f64;
    let nodes = t.bytes.len().max(1) as f64;
    let (intra, inter) = t.bytes.values().fold((0u64, 0u64), |a, b| (a.0 + b.0, a.1 + b.1));
    let rate = |b: u64| if secs > 0.0 { b as f64 / nodes / secs / 1000.0 } else { 0.0 };
    Bandwidth { regions: cfg.regions, intra_kbps: rate(intra), inter_kbps: rate(inter), per_node: t.bytes }
}

/// Least-squares line `y = a + b x`; returns `(a, b, r_squared)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (a, b, r2)
}

pub fn scaling_report(region_counts: &[u32], base: &BandwidthConfig) -> Vec<Bandwidth> {
    region_counts.iter().map(|r| account_bandwidth(&BandwidthConfig { regions: *r, ..base.clone() })).collect()
}

/// `regions,intra_kbps,inter_kbps`.
pub fn bandwidth_csv(rows: &[Bandwidth]) -> String {
    let mut s = String::from("regions,intra_kbps,inter_kbps\n");
    for b in rows {
        s.push_str(&format!("{},{:.3},{:.3}\n", b.regions, b.intra_kbps, b.inter_kbps));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_tasks_and_no_heartbeats_means_no_inter_bytes() {
        let b = account_bandwidth(&BandwidthConfig { heartbeats: false, tasks_per_pair: 0, ..Default::default() });
        assert_eq!(b.inter_kbps, 0.0);
        assert!(b.per_node.values().all(|(_, inter)| *inter == 0));
    }

    #[test]
    fn two_regions_hand_count() {
        // f = 1, no tasks: per direction four 184-byte heartbeats, each charged twice.
        let cfg = BandwidthConfig { regions: 2, tasks_per_pair: 0, rounds: 1, ..Default::default() };
        let b = account_bandwidth(&cfg);
        let inter: u64 = b.per_node.values().map(|v| v.1).sum();
        assert_eq!(inter, 2 * 4 * 184 * 2);
    }

    #[test]
    fn inter_rate_grows_linearly() {
        let rows = scaling_report(&[5, 10, 20, 50], &BandwidthConfig::default());
        let xs: Vec<f64> = rows.iter().map(|b| b.regions as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|b| b.inter_kbps).collect();
        let (_, slope, r2) = linear_fit(&xs, &ys);
        assert!(slope > 0.0 && r2 >= 0.99, "{slope} {r2}");
    }

    #[test]
    fn fit_of_exact_line() {
        let (a, b, r2) = linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]);
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
