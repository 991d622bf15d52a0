//! Deterministic discrete-event kernel.
//!
//! Virtual time is a count of PHY symbol periods (u64); there is no
//! floating-point time anywhere in the scheduling path. Events with equal
//! fire times dispatch in insertion order, and every random draw comes from
//! a per-node ChaCha stream derived from the master seed, so a run is a pure
//! function of (scenario, seed).

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::ops::{Add, AddAssign};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 2.4 GHz O-QPSK PHY: 250 kbps, 4 bits per symbol.
pub const SYMBOL_RATE: u64 = 62_500;
pub const BITS_PER_SYMBOL: u64 = 4;

/// Virtual time in PHY symbol periods since simulation start.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SymbolTime(pub u64);

impl SymbolTime {
    pub const ZERO: SymbolTime = SymbolTime(0);

    pub fn from_secs(s: f64) -> Self {
        SymbolTime((s * SYMBOL_RATE as f64).round() as u64)
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / SYMBOL_RATE as f64
    }

    pub fn saturating_sub(self, rhs: u64) -> Self {
        SymbolTime(self.0.saturating_sub(rhs))
    }
}

impl Add<u64> for SymbolTime {
    type Output = SymbolTime;
    fn add(self, rhs: u64) -> SymbolTime {
        SymbolTime(self.0 + rhs)
    }
}

impl AddAssign<u64> for SymbolTime {
    fn add_assign(&mut self, rhs: u64) {
        self.0 += rhs;
    }
}

impl fmt::Debug for SymbolTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}sym", self.0)
    }
}

impl fmt::Display for SymbolTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.7}", self.as_secs())
    }
}

/// Handle returned by [`EventQueue::schedule`]; allows cancellation.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct EventHandle(u64);

/// Ordered event queue with deterministic tie-breaking by insertion sequence.
pub struct EventQueue<T> {
    heap: BinaryHeap<Reverse<(u64, u64)>>,
    live: HashMap<u64, (u64, T)>,
    next_seq: u64,
    now: SymbolTime,
    scheduled: u64,
    cancelled: u64,
    dispatched: u64,
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            live: HashMap::new(),
            next_seq: 0,
            now: SymbolTime::ZERO,
            scheduled: 0,
            cancelled: 0,
            dispatched: 0,
        }
    }

    pub fn now(&self) -> SymbolTime {
        self.now
    }

    /// Scheduling in the past is a programming error in the MAC logic, not a
    /// recoverable condition; abort loudly.
    pub fn schedule(&mut self, at: SymbolTime, payload: T) -> EventHandle {
        assert!(
            at >= self.now,
            "event scheduled in the past: at={:?} now={:?}",
            at,
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.scheduled += 1;
        self.heap.push(Reverse((at.0, seq)));
        self.live.insert(seq, (at.0, payload));
        EventHandle(seq)
    }

    /// Returns false if the event already fired or was already cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if self.live.remove(&handle.0).is_some() {
            self.cancelled += 1;
            true
        } else {
            false
        }
    }

    /// Pops the next event with fire time <= end, advancing the clock to it.
    pub fn pop_due(&mut self, end: SymbolTime) -> Option<(SymbolTime, T)> {
        while let Some(&Reverse((fire, seq))) = self.heap.peek() {
            if fire > end.0 {
                return None;
            }
            self.heap.pop();
            if let Some((_, payload)) = self.live.remove(&seq) {
                debug_assert!(fire >= self.now.0);
                self.now = SymbolTime(fire);
                self.dispatched += 1;
                return Some((self.now, payload));
            }
            // cancelled entry, skip
        }
        None
    }

    /// Advances the clock to `end` once no more events are due.
    pub fn finish_at(&mut self, end: SymbolTime) {
        assert!(end >= self.now);
        self.now = end;
    }

    /// Dispatches every event with fire_at <= end through `handler`, then
    /// sets the clock to `end`. Returns the number dispatched.
    pub fn run_until(&mut self, end: SymbolTime, mut handler: impl FnMut(SymbolTime, T)) -> u64 {
        let before = self.dispatched;
        while let Some((t, ev)) = self.pop_due(end) {
            handler(t, ev);
        }
        self.finish_at(end);
        self.dispatched - before
    }

    pub fn pending(&self) -> usize {
        self.live.len()
    }

    pub fn counts(&self) -> (u64, u64, u64) {
        (self.scheduled, self.cancelled, self.dispatched)
    }
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node pseudo-random streams. Stream k is ChaCha8 seeded from the
/// master seed on stream id k+1, so adding or removing nodes never perturbs
/// another node's draw sequence.
pub struct RngStreams {
    master_seed: u64,
    streams: Vec<Option<ChaCha8Rng>>,
}

impl RngStreams {
    pub fn new(master_seed: u64) -> Self {
        RngStreams {
            master_seed,
            streams: Vec::new(),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    fn stream(&mut self, stream: usize) -> &mut ChaCha8Rng {
        if stream >= self.streams.len() {
            self.streams.resize_with(stream + 1, || None);
        }
        let seed = self.master_seed;
        self.streams[stream].get_or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream as u64 + 1);
            rng
        })
    }

    /// Uniform draw in [lo, hi]. `lo > hi` is a fatal precondition violation.
    pub fn uniform_int(&mut self, lo: u64, hi: u64, stream: usize) -> u64 {
        assert!(lo <= hi, "uniform_int: lo={lo} > hi={hi}");
        if lo == hi {
            return lo;
        }
        self.stream(stream).gen_range(lo..=hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tie_break_is_insertion_order() {
        let mut q = EventQueue::new();
        q.schedule(SymbolTime(100), "a");
        q.schedule(SymbolTime(100), "b");
        q.schedule(SymbolTime(50), "c");
        let mut order = Vec::new();
        q.run_until(SymbolTime(200), |_, ev| order.push(ev));
        assert_eq!(order, vec!["c", "a", "b"]);
    }

    #[test]
    fn zero_delay_dispatches_after_current() {
        let mut q = EventQueue::new();
        q.schedule(SymbolTime(0), 1u32);
        let mut seen = Vec::new();
        q.run_until(SymbolTime(0), |t, ev| {
            assert_eq!(t, SymbolTime(0));
            seen.push(ev);
        });
        assert_eq!(seen, vec![1]);
    }

    #[test]
    fn cancelled_event_never_dispatches() {
        let mut q = EventQueue::new();
        let h = q.schedule(SymbolTime(10), "x");
        q.schedule(SymbolTime(20), "y");
        assert!(q.cancel(h));
        assert!(!q.cancel(h));
        let mut seen = Vec::new();
        q.run_until(SymbolTime(100), |_, ev| seen.push(ev));
        assert_eq!(seen, vec!["y"]);
    }

    #[test]
    fn run_until_empty_queue_advances_clock() {
        let mut q: EventQueue<()> = EventQueue::new();
        let n = q.run_until(SymbolTime(1000), |_, _| {});
        assert_eq!(n, 0);
        assert_eq!(q.now(), SymbolTime(1000));
    }

    #[test]
    fn run_until_boundary_inclusive() {
        let mut q = EventQueue::new();
        q.schedule(SymbolTime(10), ());
        q.schedule(SymbolTime(10), ());
        q.schedule(SymbolTime(20), ());
        let n = q.run_until(SymbolTime(15), |_, _| {});
        assert_eq!(n, 2);
        assert_eq!(q.now(), SymbolTime(15));
    }

    #[test]
    #[should_panic(expected = "scheduled in the past")]
    fn scheduling_in_the_past_aborts() {
        let mut q = EventQueue::new();
        q.schedule(SymbolTime(5), ());
        q.run_until(SymbolTime(10), |_, _| {});
        q.schedule(SymbolTime(9), ());
    }

    #[test]
    fn same_seed_same_stream_same_sequence() {
        let mut a = RngStreams::new(42);
        let mut b = RngStreams::new(42);
        let sa: Vec<u64> = (0..100).map(|_| a.uniform_int(0, 7, 3)).collect();
        let sb: Vec<u64> = (0..100).map(|_| b.uniform_int(0, 7, 3)).collect();
        assert_eq!(sa, sb);
    }

    #[test]
    fn streams_are_independent_of_each_other() {
        // Drawing from stream 5 first must not change stream 2's sequence.
        let mut a = RngStreams::new(7);
        let _ = a.uniform_int(0, 1000, 5);
        let sa: Vec<u64> = (0..50).map(|_| a.uniform_int(0, 31, 2)).collect();
        let mut b = RngStreams::new(7);
        let sb: Vec<u64> = (0..50).map(|_| b.uniform_int(0, 31, 2)).collect();
        assert_eq!(sa, sb);
    }

    #[test]
    fn uniform_degenerate_range() {
        let mut r = RngStreams::new(1);
        assert_eq!(r.uniform_int(0, 0, 0), 0);
        assert_eq!(r.uniform_int(9, 9, 0), 9);
    }

    #[test]
    #[should_panic(expected = "uniform_int")]
    fn uniform_inverted_range_is_fatal() {
        let mut r = RngStreams::new(1);
        r.uniform_int(3, 2, 0);
    }

    #[test]
    fn uniform_frequencies_within_three_sigma() {
        // 80k draws over {0..7}: each bucket expects 10000, sigma ~ 93.5.
        let mut r = RngStreams::new(0xC0FFEE);
        let mut buckets = [0u64; 8];
        for _ in 0..80_000 {
            buckets[r.uniform_int(0, 7, 1) as usize] += 1;
        }
        let sigma = (80_000f64 * (1.0 / 8.0) * (7.0 / 8.0)).sqrt();
        for (i, &n) in buckets.iter().enumerate() {
            let dev = (n as f64 - 10_000.0).abs();
            assert!(dev <= 3.0 * sigma, "bucket {i}: count {n} deviates {dev:.1}");
        }
    }

    #[test]
    fn symbol_time_second_conversion() {
        assert_eq!(SymbolTime(62_500).as_secs(), 1.0);
        assert_eq!(SymbolTime::from_secs(0.2), SymbolTime(12_500));
    }

    proptest! {
        // Conservation: dispatched == scheduled - cancelled once drained, and
        // dispatch order is non-decreasing in time.
        #[test]
        fn schedule_cancel_conservation(ops in proptest::collection::vec((0u64..1000, any::<bool>()), 1..200)) {
            let mut q = EventQueue::new();
            let mut handles = Vec::new();
            for &(t, cancel) in &ops {
                let h = q.schedule(SymbolTime(t), t);
                if cancel {
                    q.cancel(h);
                } else {
                    handles.push(h);
                }
            }
            let mut times = Vec::new();
            let n = q.run_until(SymbolTime(2000), |t, _| times.push(t.0));
            prop_assert!(times.windows(2).all(|w| w[0] <= w[1]));
            let (scheduled, cancelled, dispatched) = q.counts();
            prop_assert_eq!(dispatched, n);
            prop_assert_eq!(dispatched, scheduled - cancelled);
        }
    }
}
