//! Exhaustive checks of the score recurrence in exact integer arithmetic.
//!
//! With `alpha = a_num / a_den` and `p_norm = p_num / p_den`, scaling every score by
//! `beta * a_num * p_num` makes the maximum, the penalty and the award integers.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExactScores {
    pub max: i64,
    pub penalty: i64,
    pub award: i64,
    alpha: (i64, i64),
    p_norm: (i64, i64),
    beta: i64,
}

impl ExactScores {
    pub fn new(alpha: (u32, u32), beta: u32, p_norm: (u32, u32)) -> Self {
        let (a_num, a_den) = (alpha.0 as i64, alpha.1 as i64);
        let (p_num, p_den) = (p_norm.0 as i64, p_norm.1 as i64);
        assert!(a_num > 0 && a_num <= a_den && p_num > 0 && p_num < p_den && beta > 0);
        let b = beta as i64;
        ExactScores {
            max: b * a_num * p_num,
            penalty: a_num * p_num,
            award: (p_den - p_num) * a_den,
            alpha: (a_num, a_den),
            p_norm: (p_num, p_den),
            beta: b,
        }
    }

    /// One step from `s`; `None` once the score is no longer positive.
    pub fn step(&self, s: i64, suspicious: bool) -> Option<i64> {
        let next = if suspicious { s - self.penalty } else { (s + self.award).min(self.max) };
        (next > 0).then_some(next)
    }

    /// Index of the first flagging slot when starting at `start`.
    pub fn first_flag(&self, start: i64, schedule: impl IntoIterator<Item = bool>) -> Option<usize> {
        let mut s = start;
        for (i, bad) in schedule.into_iter().enumerate() {
            match self.step(s, bad) {
                Some(next) => s = next,
                None => return Some(i),
            }
        }
        None
    }

    /// `normal / total < p'` decided in integers.
    pub fn below_min_fraction(&self, normal: i64, total: i64) -> bool {
        let (a_num, a_den) = self.alpha;
        let (p_num, p_den) = self.p_norm;
        normal * (a_den * (p_den - p_num) + a_num * p_num) < total * a_num * p_num
    }

    /// `beta + k + k * alpha * p / (1 - p)` as a rational `(num, den)`.
    pub fn window(&self, k: i64) -> (i64, i64) {
        let (a_num, a_den) = self.alpha;
        let (p_num, p_den) = self.p_norm;
        let den = a_den * (p_den - p_num);
        ((self.beta + k) * den + k * a_num * p_num, den)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LongTermReport {
    pub max_period: usize,
    /// Periods and suspicious counts of unflagged periodic schedules below the fraction bound.
    pub violations: Vec<(usize, usize)>,
}

/// Searches every periodic schedule with period at most `max_period` for one that stays
/// unflagged from the initial score while its normal fraction is below `p'`.
///
/// An unflagged periodic schedule settles into a cycle. Without a capped award the
/// cycle's drift is zero, so its fraction equals `p'` exactly; otherwise it can be rotated
/// to start right after a capped award, at the maximum score, and return there after one
/// period. The search therefore tracks every reachable `(score, suspicious count)` from
/// the maximum and looks for returns to the maximum.
pub fn long_term_search(ex: &ExactScores, max_period: usize) -> LongTermReport {
    let width = ex.max as usize + 1;
    let mut reach = vec![vec![false; width]; max_period + 1];
    reach[0][ex.max as usize] = true;
    let mut violations = Vec::new();
    for period in 1..=max_period {
        let mut next = vec![vec![false; width]; max_period + 1];
        for (bad, row) in reach.iter().enumerate() {
            for (s, _) in row.iter().enumerate().filter(|(_, r)| **r) {
                if let Some(t) = ex.step(s as i64, false) {
                    next[bad][t as usize] = true;
                }
                if bad < max_period {
                    if let Some(t) = ex.step(s as i64, true) {
                        next[bad + 1][t as usize] = true;
                    }
                }
            }
        }
        reach = next;
        for (bad, row) in reach.iter().enumerate() {
            if row[ex.max as usize] && ex.below_min_fraction((period - bad) as i64, period as i64) {
                violations.push((period, bad));
            }
        }
    }
    LongTermReport { max_period, violations }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShortTermReport {
    pub k: u32,
    pub window: usize,
    pub schedules: u64,
    /// Unflagged schedules with at least `beta + k` suspicious slots.
    pub unflagged: u64,
}

/// Enumerates every binary schedule over `window` slots, starting at the maximum score
/// (any lower start only flags sooner), and counts those with at least `beta + k`
/// suspicious slots that never flag.
pub fn short_term_search(ex: &ExactScores, k: u32, window: usize) -> ShortTermReport {
    assert!(window <= 26, "enumeration over {window} slots is too large");
    let need = ex.beta as u32 + k;
    let mut unflagged = 0;
    let total = 1u64 << window;
    for bits in 0..total {
        if bits.count_ones() < need {
            continue;
        }
        if ex.first_flag(ex.max, (0..window).map(|i| bits >> i & 1 == 1)).is_none() {
            unflagged += 1;
        }
    }
    ShortTermReport { k, window, schedules: total, unflagged }
}

/// Same question answered by dynamic programming, usable for long windows: the largest
/// suspicious count reachable without a flag.
pub fn max_unflagged_suspicious(ex: &ExactScores, window: usize) -> usize {
    let width = ex.max as usize + 1;
    // best[s] = most suspicious slots so far that end at score s
    let mut best: Vec<Option<usize>> = vec![None; width];
    best[ex.max as usize] = Some(0);
    for _ in 0..window {
        let mut next: Vec<Option<usize>> = vec![None; width];
        for (s, b) in best.iter().enumerate() {
            let Some(b) = *b else { continue };
            if let Some(t) = ex.step(s as i64, false) {
                let slot = &mut next[t as usize];
                *slot = Some(slot.map_or(b, |x| x.max(b)));
            }
            if let Some(t) = ex.step(s as i64, true) {
                let slot = &mut next[t as usize];
                *slot = Some(slot.map_or(b + 1, |x| x.max(b + 1)));
            }
        }
        best = next;
    }
    best.into_iter().flatten().max().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `p = 1 / (1 + alpha)` makes `alpha * p / (1 - p) = 1`, so the window is an integer.
    fn integral(alpha: (u32, u32), beta: u32) -> ExactScores {
        ExactScores::new(alpha, beta, (alpha.1, alpha.1 + alpha.0))
    }

    #[test]
    fn scaled_identities_hold() {
        let ex = ExactScores::new((1, 5), 3, (999, 1000));
        assert_eq!(ex.max, 3 * ex.penalty);
        // penalty * (1 - p) == award * alpha * p, cleared of denominators
        assert_eq!(ex.penalty * (1000 - 999) * 5, ex.award * 999);
    }

    #[test]
    fn fresh_node_flags_after_beta_drops() {
        for beta in 1..=6 {
            let ex = ExactScores::new((1, 5), beta, (999, 1000));
            assert_eq!(ex.first_flag(ex.max, std::iter::repeat(true)), Some(beta as usize - 1));
        }
    }

    #[test]
    fn long_term_bound_small_cases() {
        for alpha in [(1, 10), (1, 5), (1, 1)] {
            for beta in [1, 3, 5] {
                for p in [(9, 10), (2, 3)] {
                    let r = long_term_search(&ExactScores::new(alpha, beta, p), 30);
                    assert!(r.violations.is_empty(), "{alpha:?} {beta} {p:?}: {:?}", r.violations);
                }
            }
        }
    }

    #[test]
    fn short_term_bound_integral_windows() {
        for alpha in [(1, 10), (1, 5), (1, 1)] {
            for beta in 1..=5 {
                let ex = integral(alpha, beta);
                for k in 1..=3 {
                    let (num, den) = ex.window(k as i64);
                    assert_eq!(num % den, 0);
                    let w = (num / den) as usize;
                    let r = short_term_search(&ex, k, w);
                    assert_eq!(r.unflagged, 0, "{alpha:?} beta={beta} k={k}");
                    assert!(max_unflagged_suspicious(&ex, w) < (beta + k) as usize);
                }
            }
        }
    }

    #[test]
    fn dp_agrees_with_enumeration() {
        let ex = ExactScores::new((1, 2), 2, (3, 4));
        for w in 1..=14 {
            let dp = max_unflagged_suspicious(&ex, w);
            let mut brute = 0;
            for bits in 0u32..(1 << w) {
                if ex.first_flag(ex.max, (0..w).map(|i| bits >> i & 1 == 1)).is_none() {
                    brute = brute.max(bits.count_ones() as usize);
                }
            }
            assert_eq!(dp, brute, "w={w}");
        }
    }

    #[test]
    fn score_never_exceeds_max() {
        let ex = ExactScores::new((1, 5), 3, (2, 3));
        for bits in 0u32..(1 << 14) {
            let mut s = ex.max;
            for i in 0..14 {
                match ex.step(s, bits >> i & 1 == 1) {
                    Some(t) => {
                        assert!(t <= ex.max);
                        s = t;
                    }
                    None => break,
                }
            }
        }
    }
}
