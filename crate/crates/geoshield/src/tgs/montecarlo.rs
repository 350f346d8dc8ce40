//! Invocation-level model of one producer/consumer task pair over a long horizon, used
//! for the stay-normal probability experiments.
//!
//! Each invocation every producing replica sends one message to every consuming replica.
//! A message between correct nodes misses its deadline with probability `late_prob`,
//! independently per link. The consumer stays in normal mode as long as, in every
//! invocation, at least one correct consuming replica receives at least one timely
//! message. Rounds in which nothing happens are skipped with geometric draws.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{adaptive_should_drop, TgsParams, SCORE_EPS};
use crate::simnet::{stream_rng, TrialRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TgsAttack {
    /// Drops everything while assigned; as a receiver, claims against every sender.
    Aggressive,
    /// Misbehaves only while its own score would stay positive.
    Adaptive,
}

/// Regions holding compromised nodes (`f` each).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compromise {
    Upstream,
    Downstream,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TgsTrialConfig {
    pub f: usize,
    /// `None` disables scoring: the initial assignment is kept for the whole horizon.
    pub tgs: Option<TgsParams>,
    pub late_prob: f64,
    pub invocations: u64,
    pub attack: TgsAttack,
    pub compromise: Compromise,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct TgsTrialResult {
    pub stayed_normal: bool,
    /// Invocation at which safe mode was entered.
    pub safe_mode_at: Option<u64>,
    pub attacker_flags: u64,
    pub correct_flags: u64,
    pub misbehaviours: u64,
    /// Invocations that were simulated explicitly.
    pub processed: u64,
}

struct Side {
    replicas: Vec<usize>,
    attacker: Vec<bool>,
    counters: Vec<u32>,
    scores: Vec<f64>,
}

impl Side {
    fn new(rng: &mut TrialRng, f: usize, compromised: bool) -> Self {
        let n = 2 * f + 1;
        let replicas = rand::seq::index::sample(rng, n, f + 1).into_vec();
        let mut attacker = vec![false; n];
        if compromised {
            for i in rand::seq::index::sample(rng, n, f) {
                attacker[i] = true;
            }
        }
        Side { replicas, attacker, counters: vec![0; n], scores: vec![TgsParams::S_MAX; n] }
    }

    fn correct_replicas(&self) -> usize {
        self.replicas.iter().filter(|r| !self.attacker[**r]).count()
    }

    fn advance(&mut self, rounds: u64, award: f64) {
        if rounds == 0 {
            return;
        }
        for r in &self.replicas {
            let s = &mut self.scores[*r];
            *s = (*s + rounds as f64 * award).min(TgsParams::S_MAX);
        }
    }

    /// Flags every replica whose score is no longer positive; returns (attacker, correct) counts.
    fn flag_and_replace(&mut self) -> (u64, u64) {
        let (mut bad, mut good) = (0, 0);
        for pos in 0..self.replicas.len() {
            let node = self.replicas[pos];
            if self.scores[node] > SCORE_EPS {
                continue;
            }
            self.counters[node] += 1;
            if self.attacker[node] {
                bad += 1;
            } else {
                good += 1;
            }
            let chosen = (0..self.attacker.len())
                .filter(|c| !self.replicas.contains(c))
                .min_by_key(|c| (self.counters[*c], *c))
                .expect("a region of 2f+1 nodes always has a spare node");
            self.replicas[pos] = chosen;
            self.scores[chosen] = TgsParams::S_MAX;
        }
        (bad, good)
    }
}

/// Failures before the first success of a Bernoulli(`p`) sequence.
fn geometric(rng: &mut TrialRng, p: f64) -> u64 {
    if p <= 0.0 {
        return u64::MAX;
    }
    if p >= 1.0 {
        return 0;
    }
    let u: f64 = rng.random();
    let g = (1.0 - u).ln() / (-p).ln_1p();
    if g >= u64::MAX as f64 {
        u64::MAX
    } else {
        g as u64
    }
}

/// Rounds from a score of `s` until the adaptive attacker, which misbehaves on
/// `messages` messages per round and earns as many awards in a quiet round, acts again.
fn adaptive_wait(s: f64, p: &TgsParams, messages: usize) -> Option<u64> {
    if !adaptive_should_drop(TgsParams::S_MAX, p, messages) {
        return None;
    }
    let per_round = messages as f64 * p.award();
    let at = |j: u64| (s + j as f64 * per_round).min(TgsParams::S_MAX);
    if adaptive_should_drop(s, p, messages) {
        return Some(0);
    }
    let need = messages as f64 * p.penalty() - s;
    let mut j = (need / per_round).ceil().max(1.0) as u64;
    while !adaptive_should_drop(at(j), p, messages) {
        j += 1;
    }
    while j > 0 && adaptive_should_drop(at(j - 1), p, messages) {
        j -= 1;
    }
    Some(j)
}

pub fn run_tgs_trial(cfg: &TgsTrialConfig) -> TgsTrialResult {
    let mut rng = stream_rng(cfg.seed, &[11]);
    let f = cfg.f;
    let up_bad = matches!(cfg.compromise, Compromise::Upstream | Compromise::Both);
    let down_bad = matches!(cfg.compromise, Compromise::Downstream | Compromise::Both);
    let mut up = Side::new(&mut rng, f, up_bad);
    let mut down = Side::new(&mut rng, f, down_bad);
    let q = cfg.late_prob;
    let n = cfg.invocations;
    let mut out = TgsTrialResult::default();

    let Some(params) = cfg.tgs else {
        // Static assignment: attackers misbehave in every invocation.
        let paths = (up.correct_replicas() * down.correct_replicas()) as i32;
        let p_fail = if paths == 0 { 1.0 } else { q.powi(paths) };
        let first = geometric(&mut rng, p_fail);
        out.stayed_normal = first >= n;
        out.safe_mode_at = (!out.stayed_normal).then_some(first);
        return out;
    };

    let width = f + 1;
    let links = width * width;
    let p_any = 1.0 - (1.0 - q).powi(links as i32);
    let mut next_net = geometric(&mut rng, p_any);
    let mut synced = 0u64;
    let award = params.award();
    let round_award = width as f64 * award;
    let penalty = params.penalty();

    loop {
        let mut next = next_net;
        for (side, active) in [(&up, up_bad), (&down, down_bad)] {
            if !active {
                continue;
            }
            for r in side.replicas.iter().filter(|r| side.attacker[**r]) {
                let wait = match cfg.attack {
                    TgsAttack::Aggressive => Some(0),
                    TgsAttack::Adaptive => adaptive_wait(side.scores[*r], &params, width),
                };
                if let Some(w) = wait {
                    next = next.min(synced.saturating_add(w));
                }
            }
        }
        if next >= n {
            break;
        }
        up.advance(next - synced, round_award);
        down.advance(next - synced, round_award);
        let round = next;
        out.processed += 1;

        let misbehaves = |side: &Side, node: usize| {
            side.attacker[node]
                && match cfg.attack {
                    TgsAttack::Aggressive => true,
                    TgsAttack::Adaptive => adaptive_should_drop(side.scores[node], &params, width),
                }
        };
        let drops: Vec<bool> = up.replicas.iter().map(|r| misbehaves(&up, *r)).collect();
        let false_claims: Vec<bool> = down.replicas.iter().map(|r| misbehaves(&down, *r)).collect();
        out.misbehaviours += (drops.iter().filter(|d| **d).count() + false_claims.iter().filter(|d| **d).count()) as u64;

        let mut late = vec![false; links];
        if round == next_net {
            // First late link conditioned on at least one, then the rest independently.
            let u: f64 = rng.random();
            let first = (((1.0 - u * p_any).ln() / (-q).ln_1p()) as usize).min(links - 1);
            late[first] = true;
            for l in late.iter_mut().skip(first + 1) {
                *l = rng.random::<f64>() < q;
            }
            next_net = round + 1 + geometric(&mut rng, p_any);
        }

        let mut timely_to_correct = false;
        let mut suspicious = vec![false; links];
        for i in 0..width {
            for j in 0..width {
                let delivered = !drops[i] && !late[i * width + j];
                if delivered && !down.attacker[down.replicas[j]] {
                    timely_to_correct = true;
                }
                suspicious[i * width + j] = !delivered || false_claims[j];
            }
        }
        if !timely_to_correct {
            out.safe_mode_at = Some(round);
            return out;
        }

        for i in 0..width {
            for j in 0..width {
                let bad = suspicious[i * width + j];
                for s in [&mut up.scores[up.replicas[i]], &mut down.scores[down.replicas[j]]] {
                    *s = if bad { *s - penalty } else { (*s + award).min(TgsParams::S_MAX) };
                }
            }
        }
        for side in [&mut up, &mut down] {
            let (a, c) = side.flag_and_replace();
            out.attacker_flags += a;
            out.correct_flags += c;
        }
        synced = round + 1;
    }
    out.stayed_normal = true;
    out
}
