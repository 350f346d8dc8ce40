use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::core::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("event scheduled at {at} but simulation time is already {now}")]
    Past { at: SimTime, now: SimTime },
}

struct Entry<E> {
    at: SimTime,
    seq: u64,
    ev: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // Reversed so the max-heap pops the earliest (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Min-queue ordered by `(time, insertion sequence)`.
pub struct EventQueue<E> {
    heap: BinaryHeap<Entry<E>>,
    now: SimTime,
    next_seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue { heap: BinaryHeap::new(), now: SimTime::ZERO, next_seq: 0 }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(now: SimTime) -> Self {
        EventQueue { now, ..Self::default() }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, at: SimTime, ev: E) -> Result<(), SimError> {
        if at < self.now {
            return Err(SimError::Past { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { at, seq, ev });
        Ok(())
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.at)
    }

    /// Pops the next event and advances the clock to it.
    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        let e = self.heap.pop()?;
        self.now = e.at;
        Some((e.at, e.ev))
    }

    /// Pops the next event if it fires no later than `t_end`.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<(SimTime, E)> {
        match self.peek_time() {
            Some(t) if t <= t_end => self.pop(),
            _ => None,
        }
    }

    /// Fires every event up to `t_end` through `handler`, then moves the clock to `t_end`.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> Result<(), SimError>
    where
        F: FnMut(&mut Self, SimTime, E) -> Result<(), SimError>,
    {
        while let Some((t, ev)) = self.pop_until(t_end) {
            handler(self, t, ev)?;
        }
        if t_end > self.now {
            self.now = t_end;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_times_fire_in_insertion_order() {
        let mut q = EventQueue::new();
        let t = SimTime::from_nanos(5);
        q.schedule(t, "a").unwrap();
        q.schedule(t, "b").unwrap();
        q.schedule(SimTime::from_nanos(1), "c").unwrap();
        let order: Vec<_> = std::iter::from_fn(|| q.pop().map(|(_, e)| e)).collect();
        assert_eq!(order, vec!["c", "a", "b"]);
    }

    #[test]
    fn scheduling_in_the_past_fails() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_nanos(10), ()).unwrap();
        q.pop();
        assert!(matches!(q.schedule(SimTime::from_nanos(9), ()), Err(SimError::Past { .. })));
    }

    #[test]
    fn empty_run_advances_clock() {
        let mut q: EventQueue<()> = EventQueue::new();
        let mut fired = 0;
        q.run_until(SimTime::from_nanos(100), |_, _, _| {
            fired += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(fired, 0);
        assert_eq!(q.now(), SimTime::from_nanos(100));
    }

    #[test]
    fn handler_may_schedule_follow_ups() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_nanos(1), 3u32).unwrap();
        let mut seen = Vec::new();
        q.run_until(SimTime::from_nanos(100), |q, t, n| {
            seen.push((t.as_nanos(), n));
            if n > 0 {
                q.schedule(t + crate::core::SimDuration::from_nanos(10), n - 1)?;
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![(1, 3), (11, 2), (21, 1), (31, 0)]);
    }

    proptest! {
        #[test]
        fn pops_are_sorted_by_time_then_sequence(times in prop::collection::vec(0u64..50, 0..200)) {
            let mut q = EventQueue::new();
            for (i, t) in times.iter().enumerate() {
                q.schedule(SimTime::from_nanos(*t), i).unwrap();
            }
            let mut expected: Vec<(u64, usize)> = times.iter().copied().zip(0..).collect();
            expected.sort();
            let got: Vec<(u64, usize)> = std::iter::from_fn(|| q.pop().map(|(t, i)| (t.as_nanos(), i))).collect();
            prop_assert_eq!(got, expected);
        }
    }
}
