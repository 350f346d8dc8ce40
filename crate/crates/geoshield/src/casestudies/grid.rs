//! Two substations exchanging measurements once per second. One node of the responding
//! substation turns into an adaptive attacker that delays its answer to the querier.

use serde::{Deserialize, Serialize};

use crate::adversary::{Adaptive, SendAction, SendCtx, Strategy};
use crate::core::{KeyStore, NodeId, RegionId, SimDuration, SimTime, TaskId, TimeError};
use crate::simnet::{BaseWalk, InterLinkModel, IntraLinkModel, JitterModel, NetError, Network};
use crate::tgs::{classify_and_claim, Endpoint, ScoreTable, TgsError, TgsParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub tgs: TgsParams,
    /// Nodes per substation.
    pub nodes: usize,
    pub query_period: SimDuration,
    pub queries: u64,
    /// `None` keeps every node correct.
    pub compromise_at: Option<SimDuration>,
    pub delay: SimDuration,
    pub inter: InterLinkModel,
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            tgs: TgsParams { alpha: 0.2, beta: 3, p_norm: 0.999 },
            nodes: 3,
            query_period: SimDuration::from_secs(1),
            queries: 1_000,
            compromise_at: Some(SimDuration::from_secs(10)),
            delay: SimDuration::from_secs(1),
            inter: InterLinkModel {
                base: BaseWalk::constant(SimDuration::from_millis(20)),
                jitter: JitterModel::default(),
                drop_prob: 0.0,
                dos_p_norm: None,
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSample {
    pub t: f64,
    /// Latency of the compromised node's answer to the querier.
    pub latency_ms: f64,
    pub attacker_delayed: bool,
    pub attacker_score: f64,
    /// Score of a correct node in the responding substation.
    pub peer_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub samples: Vec<GridSample>,
    /// Query indices (seconds) at which the attacker delayed.
    pub delays: Vec<u64>,
    pub attacker_flags: u32,
    /// Flags on correct endpoints, by node.
    pub correct_flags: std::collections::BTreeMap<NodeId, u32>,
}

impl GridResult {
    /// Delayed fraction over queries after the first `skip` seconds of the attack.
    pub fn steady_delay_fraction(&self, from: u64) -> f64 {
        let total = self.samples.iter().filter(|s| s.t >= from as f64).count();
        let delayed = self.delays.iter().filter(|d| **d >= from).count();
        if total == 0 {
            0.0
        } else {
            delayed as f64 / total as f64
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error(transparent)]
    Tgs(#[from] TgsError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Time(#[from] TimeError),
}

pub fn smart_grid_run(cfg: &GridConfig) -> Result<GridResult, GridError> {
    cfg.tgs.validate()?;
    let (ra, rb) = (RegionId(0), RegionId(1));
    let querier_side: Vec<NodeId> = (0..cfg.nodes as u32).map(NodeId).collect();
    let responder_side: Vec<NodeId> = (0..cfg.nodes as u32).map(|i| NodeId(10 + i)).collect();
    let querier = querier_side[0];
    let attacker = responder_side[0];
    let peer = responder_side[1];
    let placement = querier_side.iter().map(|n| (*n, ra)).chain(responder_side.iter().map(|n| (*n, rb)));
    let intra = IntraLinkModel { delay: SimDuration::from_millis(2), spread: SimDuration::from_micros(500) };
    let mut net = Network::new(cfg.seed, placement, intra, cfg.inter);
    let keys = KeyStore::new(cfg.seed, querier_side.iter().copied());
    let task = TaskId(0);
    let ep = |n: NodeId| Endpoint::new(n, task);
    let pairs: Vec<(Endpoint, Endpoint)> =
        responder_side.iter().flat_map(|s| querier_side.iter().map(move |r| (ep(*s), ep(*r)))).collect();

    let mut table = ScoreTable::new(cfg.tgs);
    let mut adv = Adaptive::new(cfg.tgs, 1, Some(cfg.delay));
    let mut out = GridResult { samples: Vec::new(), delays: Vec::new(), attacker_flags: 0, correct_flags: Default::default() };
    for k in 0..cfg.queries {
        let sent = SimTime::ZERO + cfg.query_period * k;
        let compromised = cfg.compromise_at.is_some_and(|c| sent >= SimTime::ZERO + c);
        let deadline = net.normal_max_latency(rb, ra, sent);
        let mut delayed = false;
        let mut latency = SimDuration::ZERO;
        let mut claims = Vec::new();
        for r in &querier_side {
            let mut expected = Vec::new();
            for s in &responder_side {
                let mut arrival = net.send(*s, *r, sent)?.time();
                if compromised && *s == attacker && *r == querier {
                    adv.score = table.score(ep(attacker));
                    let ctx = SendCtx { now: sent, inter_region: true, assigned: true };
                    match adv.on_send(&ctx) {
                        SendAction::Delay(d) => {
                            arrival = arrival.map(|t| t + d);
                            delayed = true;
                        }
                        SendAction::Drop => arrival = None,
                        SendAction::Pass | SendAction::Replace => {}
                    }
                }
                if *s == attacker && *r == querier {
                    latency = arrival.and_then(|t| t.since(sent).ok()).unwrap_or(SimDuration::ZERO);
                }
                expected.push((ep(*s), arrival));
            }
            let signer = keys.signer(*r).expect("registered");
            claims.push(classify_and_claim(&signer, ep(*r), k, sent, deadline, &expected));
        }
        for e in table.apply_round(&pairs, &claims) {
            if e.node == attacker {
                out.attacker_flags += 1;
            } else {
                *out.correct_flags.entry(e.node).or_insert(0) += 1;
            }
            table.init(e);
        }
        if delayed {
            out.delays.push(k);
        }
        out.samples.push(GridSample {
            t: sent.as_secs_f64(),
            latency_ms: latency.as_secs_f64() * 1e3,
            attacker_delayed: delayed,
            attacker_score: table.score(ep(attacker)),
            peer_score: table.score(ep(peer)),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> InterLinkModel {
        let mut inter = GridConfig::default().inter;
        inter.dos_p_norm = Some(1.0 - 1e-12);
        inter
    }

    #[test]
    fn three_back_to_back_delays_then_throttled() {
        let r = smart_grid_run(&GridConfig { inter: quiet(), ..Default::default() }).unwrap();
        assert_eq!(&r.delays[..3], &[10, 11, 12]);
        assert!(r.delays[3] > 60, "{:?}", &r.delays[..5]);
        assert_eq!(r.attacker_flags, 0);
        // Each delay costs a third of the score; three awards per query win it back in about 67 queries.
        let gaps: Vec<u64> = r.delays.windows(2).skip(3).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|g| (66..=68).contains(g)), "{gaps:?}");
    }

    #[test]
    fn no_compromise_keeps_scores_at_max() {
        let cfg = GridConfig { inter: quiet(), compromise_at: None, queries: 200, ..Default::default() };
        let r = smart_grid_run(&cfg).unwrap();
        assert!(r.delays.is_empty());
        assert!(r.samples.iter().all(|s| s.attacker_score == 1.0 && s.peer_score == 1.0));
    }

    #[test]
    fn realistic_network_keeps_the_pattern() {
        let r = smart_grid_run(&GridConfig { seed: 4, ..Default::default() }).unwrap();
        assert_eq!(&r.delays[..3], &[10, 11, 12]);
        let frac = r.steady_delay_fraction(13);
        assert!(frac > 0.005 && frac < 0.03, "{frac}");
        // The querier shares every penalty with the attacker, so ordinary lateness on its
        // other links can flag it; nobody else is touched.
        assert!(r.correct_flags.keys().all(|n| *n == NodeId(0)), "{:?}", r.correct_flags);
    }
}
