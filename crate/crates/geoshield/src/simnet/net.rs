use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use super::link::{InterLinkModel, IntraLinkModel};
use super::rng::{stream_rng, TrialRng};
use crate::core::{NodeId, RegionId, SimDuration, SimTime, TimeError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Time(#[from] TimeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    At(SimTime),
    Dropped,
}

impl Delivery {
    pub fn time(self) -> Option<SimTime> {
        match self {
            Delivery::At(t) => Some(t),
            Delivery::Dropped => None,
        }
    }
}

struct Walk {
    values: Vec<SimDuration>,
    rng: TrialRng,
}

/// Link sampling for one trial. Every directed node pair and every region pair draws
/// from its own random stream, so adding traffic on one link never perturbs another.
pub struct Network {
    seed: u64,
    region_of: BTreeMap<NodeId, RegionId>,
    intra: IntraLinkModel,
    inter: InterLinkModel,
    walks: BTreeMap<(RegionId, RegionId), Walk>,
    links: BTreeMap<(NodeId, NodeId), TrialRng>,
}

impl Network {
    pub fn new(
        seed: u64,
        placement: impl IntoIterator<Item = (NodeId, RegionId)>,
        intra: IntraLinkModel,
        inter: InterLinkModel,
    ) -> Self {
        Network {
            seed,
            region_of: placement.into_iter().collect(),
            intra,
            inter,
            walks: BTreeMap::new(),
            links: BTreeMap::new(),
        }
    }

    pub fn intra(&self) -> &IntraLinkModel {
        &self.intra
    }

    pub fn inter(&self) -> &InterLinkModel {
        &self.inter
    }

    pub fn region_of(&self, node: NodeId) -> Result<RegionId, NetError> {
        self.region_of.get(&node).copied().ok_or(NetError::UnknownNode(node))
    }

    pub fn nodes_in(&self, region: RegionId) -> Vec<NodeId> {
        self.region_of.iter().filter(|(_, r)| **r == region).map(|(n, _)| *n).collect()
    }

    fn link_rng(&mut self, from: NodeId, to: NodeId) -> &mut TrialRng {
        let seed = self.seed;
        self.links
            .entry((from, to))
            .or_insert_with(|| stream_rng(seed, &[1, from.0 as u64, to.0 as u64]))
    }

    /// Base latency between two regions at time `t`.
    pub fn base_latency(&mut self, a: RegionId, b: RegionId, t: SimTime) -> SimDuration {
        let key = if a <= b { (a, b) } else { (b, a) };
        let base = self.inter.base;
        let seed = self.seed;
        let walk = self.walks.entry(key).or_insert_with(|| Walk {
            values: vec![base.initial],
            rng: stream_rng(seed, &[2, key.0 .0 as u64, key.1 .0 as u64]),
        });
        let epoch = (t.as_nanos() / base.epoch.as_nanos()) as usize;
        while walk.values.len() <= epoch {
            let next = base.advance(*walk.values.last().unwrap(), &mut walk.rng);
            walk.values.push(next);
        }
        walk.values[epoch]
    }

    /// Latency that normal messages sent at `t` never exceed.
    pub fn normal_max_latency(&mut self, a: RegionId, b: RegionId, t: SimTime) -> SimDuration {
        self.base_latency(a, b, t) + self.inter.jitter.spread
    }

    /// Samples delivery of a message sent at `at`.
    pub fn send(&mut self, from: NodeId, to: NodeId, at: SimTime) -> Result<Delivery, NetError> {
        let ra = self.region_of(from)?;
        let rb = self.region_of(to)?;
        if ra == rb {
            let intra = self.intra;
            let d = intra.sample(self.link_rng(from, to));
            return Ok(Delivery::At(at.checked_add(d)?));
        }
        let base = self.base_latency(ra, rb, at);
        let inter = self.inter;
        let p = inter.effective_p_norm();
        let rng = self.link_rng(from, to);
        if inter.drop_prob > 0.0 && rng.random::<f64>() < inter.drop_prob {
            return Ok(Delivery::Dropped);
        }
        let j = inter.jitter.sample(p, rng);
        Ok(Delivery::At(at.checked_add(base + j)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::link::{BaseWalk, JitterModel};

    fn net(inter: InterLinkModel) -> Network {
        let intra = IntraLinkModel { delay: SimDuration::from_millis(2), spread: SimDuration::from_micros(500) };
        Network::new(
            9,
            [(NodeId(1), RegionId(0)), (NodeId(2), RegionId(0)), (NodeId(3), RegionId(1)), (NodeId(4), RegionId(1))],
            intra,
            inter,
        )
    }

    #[test]
    fn intra_delivery_within_range_and_never_dropped() {
        let mut n = net(InterLinkModel { drop_prob: 1.0, ..InterLinkModel::default() });
        let t = SimTime::from_secs_f64(1.0);
        for _ in 0..1000 {
            let at = n.send(NodeId(1), NodeId(2), t).unwrap().time().unwrap();
            let d = at.since(t).unwrap();
            assert!(d >= SimDuration::from_micros(1500) && d <= SimDuration::from_millis(2));
        }
    }

    #[test]
    fn constant_inter_link() {
        let inter = InterLinkModel {
            base: BaseWalk::constant(SimDuration::from_millis(40)),
            jitter: JitterModel { spread: SimDuration::from_nanos(1), p_norm: 0.999_999_999, ..JitterModel::default() },
            drop_prob: 0.0,
            dos_p_norm: None,
        };
        let mut n = net(inter);
        let t = SimTime::from_secs_f64(2.0);
        assert_eq!(n.send(NodeId(1), NodeId(3), t).unwrap(), Delivery::At(t + SimDuration::from_millis(40)));
    }

    #[test]
    fn unknown_node_is_an_error() {
        let mut n = net(InterLinkModel::default());
        assert_eq!(n.send(NodeId(1), NodeId(99), SimTime::ZERO), Err(NetError::UnknownNode(NodeId(99))));
    }

    #[test]
    fn base_latency_is_shared_and_order_independent() {
        let mut a = net(InterLinkModel::default());
        let mut b = net(InterLinkModel::default());
        let late = SimTime::from_secs_f64(500.0);
        let early = SimTime::from_secs_f64(3.0);
        let x1 = a.base_latency(RegionId(0), RegionId(1), late);
        let x2 = a.base_latency(RegionId(1), RegionId(0), early);
        let y2 = b.base_latency(RegionId(0), RegionId(1), early);
        let y1 = b.base_latency(RegionId(0), RegionId(1), late);
        assert_eq!((x1, x2), (y1, y2));
    }

    #[test]
    fn same_seed_same_samples() {
        let mut a = net(InterLinkModel::default());
        let mut b = net(InterLinkModel::default());
        for k in 0..100 {
            let t = SimTime::from_nanos(k * 10_000_000);
            assert_eq!(a.send(NodeId(1), NodeId(4), t).unwrap(), b.send(NodeId(1), NodeId(4), t).unwrap());
        }
    }
}
