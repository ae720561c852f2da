//! Maximum-weight resource allocation.
//!
//! The objective `sum_s q_s * M_s` is linear with per-session box constraints
//! `0 <= M_s <= min(q_s, x_s)` and one budget `sum_s M_s <= R`, so filling
//! sessions greedily in decreasing queue order is exact. Ties between equal
//! queues are broken by a uniformly random order, which realises a random
//! choice among the maximizers the greedy can reach.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Queued demand count per session.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QueueVector(pub Vec<u64>);

impl QueueVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

/// Resources allocated to each session for one slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Schedule(pub Vec<u32>);

impl Schedule {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn objective(&self, queues: &[u64]) -> u64 {
        self.0
            .iter()
            .zip(queues)
            .map(|(&m, &q)| u64::from(m) * q)
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&m| u64::from(m)).sum()
    }

    /// Checks the per-session and budget constraints against the queue snapshot.
    pub fn is_feasible(&self, queues: &[u64], caps: &[u32], resources: u32) -> bool {
        if self.0.len() != queues.len() || self.0.len() != caps.len() {
            return false;
        }
        let per_session = self
            .0
            .iter()
            .zip(queues.iter().zip(caps))
            .all(|(&m, (&q, &x))| u64::from(m) <= q.min(u64::from(x)));
        let total_queue: u64 = queues.iter().sum();
        per_session && self.total() <= total_queue.min(u64::from(resources))
    }
}

/// Greedy max-weight scheduler with reusable scratch space.
#[derive(Debug, Default, Clone)]
pub struct MaxWeightScheduler {
    above: Vec<usize>,
    tied: Vec<usize>,
}

impl MaxWeightScheduler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Writes a maximum-weight schedule for `queues` into `out`.
    pub fn schedule_into<R: Rng + ?Sized>(
        &mut self,
        queues: &[u64],
        caps: &[u32],
        resources: u32,
        rng: &mut R,
        out: &mut Schedule,
    ) {
        out.0.clear();
        out.0.resize(queues.len(), 0);
        if resources == 0 {
            return;
        }

        // Threshold: the smallest queue length that can still receive a resource.
        // At most `resources` sessions are served, so only the top `resources`
        // distinct positions matter.
        let Some(threshold) = self.threshold(queues, caps, resources) else {
            return;
        };

        self.above.clear();
        self.tied.clear();
        for (s, &q) in queues.iter().enumerate() {
            if caps[s] == 0 {
                continue;
            }
            if q > threshold {
                self.above.push(s);
            } else if q == threshold {
                self.tied.push(s);
            }
        }

        let mut remaining = resources;
        // Shuffle then stable sort: equal queues stay in random order.
        self.above.shuffle(rng);
        self.above.sort_by(|&a, &b| queues[b].cmp(&queues[a]));
        for &s in &self.above {
            if remaining == 0 {
                return;
            }
            let give = grant(queues[s], caps[s], remaining);
            out.0[s] = give;
            remaining -= give;
        }

        // Partial Fisher-Yates over the tied level, drawn only as far as needed.
        let mut k = 0;
        while remaining > 0 && k < self.tied.len() {
            let pick = rng.random_range(k..self.tied.len());
            self.tied.swap(k, pick);
            let s = self.tied[k];
            let give = grant(queues[s], caps[s], remaining);
            out.0[s] = give;
            remaining -= give;
            k += 1;
        }
    }

    /// Largest value `v > 0` such that the servable sessions with `q >= v` can
    /// absorb the whole budget, or the smallest servable queue if they never can.
    fn threshold(&mut self, queues: &[u64], caps: &[u32], resources: u32) -> Option<u64> {
        self.above.clear();
        self.above
            .extend((0..queues.len()).filter(|&s| queues[s] > 0 && caps[s] > 0));
        if self.above.is_empty() {
            return None;
        }
        let k = (resources as usize).min(self.above.len());
        let (_, kth, _) = self
            .above
            .select_nth_unstable_by(k - 1, |&a, &b| queues[b].cmp(&queues[a]));
        let kth_value = queues[*kth];
        if k < resources as usize {
            // Fewer positive queues than resources: every positive queue may be served.
            return self.above.iter().map(|&s| queues[s]).min();
        }
        // Each served session takes at least one resource, so nobody below the
        // k-th largest queue can be reached.
        Some(kth_value)
    }
}

fn grant(queue: u64, cap: u32, remaining: u32) -> u32 {
    queue.min(u64::from(cap)).min(u64::from(remaining)) as u32
}

/// Convenience wrapper allocating a fresh schedule.
pub fn max_weight_schedule<R: Rng + ?Sized>(
    queues: &QueueVector,
    caps: &[u32],
    resources: u32,
    rng: &mut R,
) -> Schedule {
    let mut out = Schedule::default();
    MaxWeightScheduler::new().schedule_into(&queues.0, caps, resources, rng, &mut out);
    out
}

pub const ENUMERATION_MAX_SESSIONS: usize = 10;
pub const ENUMERATION_MAX_CAP: u32 = 4;
pub const ENUMERATION_MAX_RESOURCES: u32 = 8;

/// Exhaustively enumerates all feasible schedules.
///
/// Returns the optimal objective and every schedule attaining it, in
/// lexicographic order. Reference oracle for [`max_weight_schedule`].
pub fn brute_force_schedule(
    queues: &QueueVector,
    caps: &[u32],
    resources: u32,
) -> Result<(u64, Vec<Schedule>)> {
    let n = queues.0.len();
    if caps.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: caps.len(),
        });
    }
    if n > ENUMERATION_MAX_SESSIONS
        || caps.iter().any(|&x| x > ENUMERATION_MAX_CAP)
        || resources > ENUMERATION_MAX_RESOURCES
    {
        return Err(Error::EnumerationBound(format!(
            "|S| = {n}, max x_s = {}, R = {resources} (limits {ENUMERATION_MAX_SESSIONS}, {ENUMERATION_MAX_CAP}, {ENUMERATION_MAX_RESOURCES})",
            caps.iter().max().copied().unwrap_or(0)
        )));
    }

    let mut best = 0u64;
    let mut maximizers = Vec::new();
    let mut current = vec![0u32; n];
    loop {
        let candidate = Schedule(current.clone());
        if candidate.is_feasible(&queues.0, caps, resources) {
            let value = candidate.objective(&queues.0);
            if value > best || maximizers.is_empty() {
                best = value;
                maximizers.clear();
                maximizers.push(candidate);
            } else if value == best {
                maximizers.push(candidate);
            }
        }
        // Odometer over M_s in 0..=x_s, last coordinate fastest.
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok((best, maximizers));
            }
            pos -= 1;
            if current[pos] < caps[pos] {
                current[pos] += 1;
                break;
            }
            current[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::{Purpose, RngStream};
    use proptest::prelude::*;

    fn rng(seed: u64) -> RngStream {
        RngStream::new(seed, 0, Purpose::Scheduler)
    }

    fn q(v: &[u64]) -> QueueVector {
        QueueVector(v.to_vec())
    }

    #[test]
    fn greedy_examples() {
        let s = max_weight_schedule(&q(&[5, 2, 0]), &[1, 1, 1], 3, &mut rng(0));
        assert_eq!(s.0, vec![1, 1, 0]);
        assert_eq!(s.objective(&[5, 2, 0]), 7);

        let s = max_weight_schedule(&q(&[5, 2]), &[2, 2], 3, &mut rng(0));
        assert_eq!(s.0, vec![2, 1]);
        assert_eq!(s.objective(&[5, 2]), 12);

        let s = max_weight_schedule(&q(&[0, 0, 0]), &[2, 1, 3], 4, &mut rng(0));
        assert_eq!(s.0, vec![0, 0, 0]);
    }

    #[test]
    fn zero_cap_sessions_do_not_consume_budget() {
        let s = max_weight_schedule(&q(&[9, 4]), &[0, 3], 1, &mut rng(0));
        assert_eq!(s.0, vec![0, 1]);
        let s = max_weight_schedule(&q(&[5, 8, 8, 7, 7, 2]), &[1, 0, 1, 1, 2, 1], 2, &mut rng(0));
        assert_eq!(s.objective(&[5, 8, 8, 7, 7, 2]), 15);
    }

    #[test]
    fn queue_limits_allocation() {
        // A session with one queued demand takes one resource even if x_s = 3.
        let s = max_weight_schedule(&q(&[1, 4]), &[3, 1], 3, &mut rng(0));
        assert_eq!(s.0, vec![1, 1]);
    }

    #[test]
    fn brute_force_examples() {
        let (best, set) = brute_force_schedule(&q(&[5, 2, 0]), &[1, 1, 1], 3).unwrap();
        assert_eq!(best, 7);
        assert_eq!(set, vec![Schedule(vec![1, 1, 0])]);

        let (best, set) = brute_force_schedule(&q(&[3, 3]), &[1, 1], 1).unwrap();
        assert_eq!(best, 3);
        assert_eq!(set, vec![Schedule(vec![0, 1]), Schedule(vec![1, 0])]);

        let (best, set) = brute_force_schedule(&q(&[1]), &[1], 0).unwrap();
        assert_eq!(best, 0);
        assert_eq!(set, vec![Schedule(vec![0])]);

        let (best, _) = brute_force_schedule(&q(&[5, 2]), &[2, 2], 3).unwrap();
        assert_eq!(best, 12);
    }

    #[test]
    fn brute_force_rejects_large_instances() {
        assert!(matches!(
            brute_force_schedule(&q(&[1; 11]), &[1; 11], 3),
            Err(Error::EnumerationBound(_))
        ));
        assert!(brute_force_schedule(&q(&[1]), &[5], 3).is_err());
        assert!(brute_force_schedule(&q(&[1]), &[1], 9).is_err());
    }

    #[test]
    fn tie_breaking_is_uniform() {
        let mut r = rng(42);
        let mut sched = MaxWeightScheduler::new();
        let mut out = Schedule::default();
        let trials = 10_000;
        let mut first = 0;
        for _ in 0..trials {
            sched.schedule_into(&[3, 3], &[1, 1], 1, &mut r, &mut out);
            assert_eq!(out.total(), 1);
            first += out.0[0] as usize;
        }
        let freq = first as f64 / trials as f64;
        assert!((freq - 0.5).abs() < 0.02, "freq {freq}");
    }

    #[test]
    fn ties_above_threshold_are_shuffled() {
        // Two sessions tied at the top, x_s = 2, R = 3: one gets 2, the other 1.
        let mut r = rng(3);
        let mut counts = [0usize; 2];
        for _ in 0..2000 {
            let s = max_weight_schedule(&q(&[4, 4, 1]), &[2, 2, 1], 3, &mut r);
            assert_eq!(s.objective(&[4, 4, 1]), 12);
            if s.0[0] == 2 {
                counts[0] += 1;
            } else {
                counts[1] += 1;
            }
        }
        assert!(counts[0] > 800 && counts[1] > 800, "{counts:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn greedy_matches_oracle(
            inst in (1usize..=6).prop_flat_map(|n| (
                proptest::collection::vec(0u64..=10, n),
                proptest::collection::vec(0u32..=3, n),
                0u32..=5,
                any::<u64>(),
            ))
        ) {
            let (queues, caps, resources, seed) = inst;
            let queues = QueueVector(queues);
            let greedy = max_weight_schedule(&queues, &caps, resources, &mut rng(seed));
            prop_assert!(greedy.is_feasible(&queues.0, &caps, resources));
            let (best, set) = brute_force_schedule(&queues, &caps, resources).unwrap();
            prop_assert_eq!(greedy.objective(&queues.0), best);
            prop_assert!(set.contains(&greedy));
        }
    }
}
