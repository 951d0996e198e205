//! FIFO transmission buffers, one per output link.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueueError {
    #[error("queue capacity must be positive")]
    ZeroCapacity,
    #[error("packet size must be positive")]
    EmptyPacket,
}

/// Queue entry: a packet handle plus what the queue needs to account for it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub packet: u64,
    pub size_bits: u64,
    pub enqueued_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Accepted,
    Dropped,
}

/// A packet that finished transmission during a service call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Departure {
    pub entry: QueueEntry,
    /// When the first bit went onto the link.
    pub started_at: f64,
    /// When the last bit went onto the link.
    pub departed_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueueCounters {
    pub enqueued: u64,
    pub enqueued_bits: u64,
    pub departed: u64,
    pub departed_bits: u64,
    pub dropped: u64,
    pub dropped_bits: u64,
    pub stalls: u64,
}

/// Normalized backlog `q ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct QueueOccupancy(pub f64);

/// Tail-drop FIFO buffer with bit-accurate backlog.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkQueue {
    capacity_bits: u64,
    backlog_bits: u64,
    fifo: VecDeque<QueueEntry>,
    served_rate_bps: f64,
    /// Bits of the head packet already on the link.
    head_progress_bits: f64,
    head_started_at: Option<f64>,
    counters: QueueCounters,
}

impl LinkQueue {
    pub fn new(capacity_bits: u64, served_rate_bps: f64) -> Result<Self, QueueError> {
        if capacity_bits == 0 {
            return Err(QueueError::ZeroCapacity);
        }
        Ok(Self {
            capacity_bits,
            backlog_bits: 0,
            fifo: VecDeque::new(),
            served_rate_bps,
            head_progress_bits: 0.0,
            head_started_at: None,
            counters: QueueCounters::default(),
        })
    }

    pub fn capacity_bits(&self) -> u64 {
        self.capacity_bits
    }

    pub fn backlog_bits(&self) -> u64 {
        self.backlog_bits
    }

    /// Bits still waiting to go onto the link, head residual included.
    pub fn pending_bits(&self) -> f64 {
        self.backlog_bits as f64 - self.head_progress_bits
    }

    pub fn len(&self) -> usize {
        self.fifo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty()
    }

    pub fn served_rate(&self) -> f64 {
        self.served_rate_bps
    }

    pub fn set_served_rate(&mut self, rate_bps: f64) {
        self.served_rate_bps = rate_bps.max(0.0);
    }

    pub fn counters(&self) -> QueueCounters {
        self.counters
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueueEntry> {
        self.fifo.iter()
    }

    pub fn enqueue(&mut self, entry: QueueEntry) -> Result<EnqueueOutcome, QueueError> {
        if entry.size_bits == 0 {
            return Err(QueueError::EmptyPacket);
        }
        if self.backlog_bits + entry.size_bits > self.capacity_bits {
            self.counters.dropped += 1;
            self.counters.dropped_bits += entry.size_bits;
            return Ok(EnqueueOutcome::Dropped);
        }
        self.backlog_bits += entry.size_bits;
        self.counters.enqueued += 1;
        self.counters.enqueued_bits += entry.size_bits;
        self.fifo.push_back(entry);
        Ok(EnqueueOutcome::Accepted)
    }

    /// Transmit for `dt` seconds starting at `start`.
    ///
    /// A packet never starts before its own `enqueued_at`. A partially sent
    /// head packet keeps its progress for the next call; an idle link does
    /// not bank capacity.
    pub fn service(&mut self, start: f64, dt: f64) -> Vec<Departure> {
        let mut out = Vec::new();
        if self.fifo.is_empty() {
            return out;
        }
        let rate = self.served_rate_bps;
        if !(rate > 0.0) {
            self.counters.stalls += 1;
            return out;
        }
        let end = start + dt;
        let slack = 1e-12 * end.abs().max(1.0);
        let mut t = start;
        while let Some(head) = self.fifo.front().copied() {
            let begin = match self.head_started_at {
                Some(_) => t,
                None => t.max(head.enqueued_at),
            };
            if begin >= end {
                break;
            }
            let remaining = head.size_bits as f64 - self.head_progress_bits;
            let finish = begin + remaining / rate;
            let started_at = *self.head_started_at.get_or_insert(begin);
            if finish <= end + slack {
                self.fifo.pop_front();
                self.backlog_bits -= head.size_bits;
                self.head_progress_bits = 0.0;
                self.head_started_at = None;
                self.counters.departed += 1;
                self.counters.departed_bits += head.size_bits;
                out.push(Departure { entry: head, started_at, departed_at: finish });
                t = finish;
            } else {
                self.head_progress_bits += (end - begin) * rate;
                break;
            }
        }
        out
    }

    /// Remove every queued packet, e.g. when the link fails.
    pub fn flush(&mut self) -> Vec<QueueEntry> {
        let drained: Vec<QueueEntry> = self.fifo.drain(..).collect();
        for e in &drained {
            self.counters.dropped += 1;
            self.counters.dropped_bits += e.size_bits;
        }
        self.backlog_bits = 0;
        self.head_progress_bits = 0.0;
        self.head_started_at = None;
        drained
    }

    pub fn occupancy(&self) -> QueueOccupancy {
        QueueOccupancy((self.backlog_bits as f64 / self.capacity_bits as f64).clamp(0.0, 1.0))
    }
}

/// `backlog / capacity`, clamped to `[0, 1]`.
pub fn occupancy(backlog_bits: u64, capacity_bits: u64) -> Result<QueueOccupancy, QueueError> {
    if capacity_bits == 0 {
        return Err(QueueError::ZeroCapacity);
    }
    Ok(QueueOccupancy((backlog_bits as f64 / capacity_bits as f64).clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn entry(id: u64, size: u64, at: f64) -> QueueEntry {
        QueueEntry { packet: id, size_bits: size, enqueued_at: at }
    }

    #[test]
    fn accepts_into_empty_queue() {
        let mut q = LinkQueue::new(1_000_000_000, 1e9).unwrap();
        assert_eq!(q.enqueue(entry(1, 64_000, 0.0)).unwrap(), EnqueueOutcome::Accepted);
        assert_eq!(q.backlog_bits(), 64_000);
    }

    #[test]
    fn drops_when_full() {
        let mut q = LinkQueue::new(128_000, 1e9).unwrap();
        q.enqueue(entry(1, 64_000, 0.0)).unwrap();
        q.enqueue(entry(2, 64_000, 0.0)).unwrap();
        assert_eq!(q.backlog_bits(), q.capacity_bits());
        assert_eq!(q.enqueue(entry(3, 1, 0.0)).unwrap(), EnqueueOutcome::Dropped);
        assert_eq!(q.counters().dropped, 1);
    }

    #[test]
    fn rejects_zero_capacity_and_empty_packets() {
        assert_eq!(LinkQueue::new(0, 1.0).unwrap_err(), QueueError::ZeroCapacity);
        assert_eq!(occupancy(0, 0).unwrap_err(), QueueError::ZeroCapacity);
        let mut q = LinkQueue::new(10, 1.0).unwrap();
        assert_eq!(q.enqueue(entry(1, 0, 0.0)).unwrap_err(), QueueError::EmptyPacket);
    }

    #[test]
    fn one_packet_departs_in_its_transmission_time() {
        let mut q = LinkQueue::new(1_000_000_000, 1e9).unwrap();
        assert!(q.service(0.0, 1.0).is_empty());
        q.enqueue(entry(1, 64_000, 0.0)).unwrap();
        let out = q.service(0.0, 64e-6);
        assert_eq!(out.len(), 1);
        assert!((out[0].departed_at - 64e-6).abs() < 1e-15);
        assert!(q.is_empty());
    }

    #[test]
    fn partial_transmission_carries_over() {
        let mut q = LinkQueue::new(1_000_000, 1e6).unwrap();
        q.enqueue(entry(1, 1000, 0.0)).unwrap();
        assert!(q.service(0.0, 0.0004).is_empty());
        assert!((q.pending_bits() - 600.0).abs() < 1e-9);
        let out = q.service(0.0004, 0.001);
        assert_eq!(out.len(), 1);
        assert!((out[0].departed_at - 0.001).abs() < 1e-12);
        assert_eq!(out[0].started_at, 0.0);
    }

    #[test]
    fn zero_rate_stalls() {
        let mut q = LinkQueue::new(1_000_000, 0.0).unwrap();
        q.enqueue(entry(1, 1000, 0.0)).unwrap();
        assert!(q.service(0.0, 1.0).is_empty());
        assert_eq!(q.counters().stalls, 1);
    }

    #[test]
    fn occupancy_bounds() {
        let mut q = LinkQueue::new(128_000, 1e9).unwrap();
        assert_eq!(q.occupancy().0, 0.0);
        q.enqueue(entry(1, 64_000, 0.0)).unwrap();
        assert!((q.occupancy().0 - 0.5).abs() < 1e-12);
        q.enqueue(entry(2, 64_000, 0.0)).unwrap();
        assert_eq!(q.occupancy().0, 1.0);
    }

    #[test]
    fn backlog_matches_replayed_ledger() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut q = LinkQueue::new(400_000, 2e6).unwrap();
        // Independent ledger: sizes of accepted packets minus departures.
        let mut ledger: VecDeque<u64> = VecDeque::new();
        let mut t = 0.0;
        for id in 0..100u64 {
            if rng.random_bool(0.6) {
                let size = rng.random_range(1_000..80_000);
                let accepted = q.enqueue(entry(id, size, t)).unwrap() == EnqueueOutcome::Accepted;
                let fits = ledger.iter().sum::<u64>() + size <= 400_000;
                assert_eq!(accepted, fits);
                if accepted {
                    ledger.push_back(size);
                }
            } else {
                let dt = rng.random_range(0.001..0.05);
                for d in q.service(t, dt) {
                    assert_eq!(ledger.pop_front(), Some(d.entry.size_bits));
                }
                t += dt;
            }
            assert_eq!(q.backlog_bits(), ledger.iter().sum::<u64>());
        }
        let c = q.counters();
        assert_eq!(c.enqueued_bits, c.departed_bits + q.backlog_bits());
    }

    #[test]
    fn packets_never_start_before_arrival() {
        let mut q = LinkQueue::new(1_000_000, 1e6).unwrap();
        q.enqueue(entry(1, 1000, 0.5)).unwrap();
        let out = q.service(0.0, 1.0);
        assert_eq!(out[0].started_at, 0.5);
        assert!((out[0].departed_at - 0.501).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn fifo_order_preserved(sizes in proptest::collection::vec(1u64..100_000, 1..40)) {
            let mut q = LinkQueue::new(u64::MAX / 2, 1e7).unwrap();
            for (i, &s) in sizes.iter().enumerate() {
                q.enqueue(entry(i as u64, s, 0.0)).unwrap();
            }
            let mut order = Vec::new();
            let mut t = 0.0;
            while !q.is_empty() {
                order.extend(q.service(t, 0.003).into_iter().map(|d| d.entry.packet));
                t += 0.003;
            }
            let want: Vec<u64> = (0..sizes.len() as u64).collect();
            proptest::prop_assert_eq!(order, want);
        }
    }
}
