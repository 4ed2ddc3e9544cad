//! Live teleoperation: operator pose updates in, solver state out.
//!
//! Pose updates arrive over UDP or the `/ws` WebSocket gateway and land in a
//! single latest-wins slot. The tick loop reads that slot once per tick and
//! publishes a state record to every subscriber through a bounded queue, so
//! a slow client never stalls the solver.

mod service;
pub mod wire;

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

pub use service::{start, ServiceHandle, SessionReport, TeleopConfig};
pub use wire::{ArmState, BusyNotice, PoseUpdateMessage, Record, StateMessage};

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Single-slot mailbox where a newer value replaces an unread older one.
#[derive(Debug)]
pub struct Mailbox<T> {
    slot: Mutex<Option<T>>,
}

impl<T> Default for Mailbox<T> {
    fn default() -> Self {
        Self { slot: Mutex::new(None) }
    }
}

impl<T> Mailbox<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `value`, returning the unread value it displaced.
    pub fn put(&self, value: T) -> Option<T> {
        lock(&self.slot).replace(value)
    }

    pub fn take(&self) -> Option<T> {
        lock(&self.slot).take()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IngestCounters {
    pub accepted: u64,
    /// Sequence number not newer than the last accepted one.
    pub stale: u64,
    pub malformed: u64,
    /// Updates refused because another session holds the payload.
    pub busy: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Ingested {
    Accepted(PoseUpdateMessage),
    Stale,
    Malformed,
    Busy(BusyNotice),
}

/// Validates incoming pose updates for a single operator.
///
/// The first session to send a valid update owns the payload until it has
/// been silent for `session_timeout`. Updates from anyone else in that time
/// get a busy notice.
#[derive(Debug)]
pub struct PoseIngest {
    session_timeout: Duration,
    active: Option<(String, Instant)>,
    last_seq: Option<u64>,
    counters: IngestCounters,
}

impl PoseIngest {
    pub fn new(session_timeout: Duration) -> Self {
        Self {
            session_timeout,
            active: None,
            last_seq: None,
            counters: IngestCounters::default(),
        }
    }

    pub fn counters(&self) -> IngestCounters {
        self.counters
    }

    pub fn active_session(&self) -> Option<&str> {
        self.active.as_ref().map(|(s, _)| s.as_str())
    }

    pub fn ingest(&mut self, bytes: &[u8], now: Instant) -> Ingested {
        let msg = match wire::decode_pose(bytes) {
            Ok(m) => m,
            Err(_) => {
                self.counters.malformed += 1;
                return Ingested::Malformed;
            }
        };
        if let Some((owner, seen)) = &self.active {
            if *owner != msg.session_id {
                if now.saturating_duration_since(*seen) < self.session_timeout {
                    self.counters.busy += 1;
                    return Ingested::Busy(BusyNotice {
                        session_id: msg.session_id,
                        active: owner.clone(),
                    });
                }
                self.active = None;
            }
        }
        if self.active.is_none() {
            self.last_seq = None;
        }
        self.active = Some((msg.session_id.clone(), now));
        if self.last_seq.is_some_and(|last| msg.seq <= last) {
            self.counters.stale += 1;
            return Ingested::Stale;
        }
        self.last_seq = Some(msg.seq);
        self.counters.accepted += 1;
        Ingested::Accepted(msg)
    }
}

/// Bounded queue of encoded state records for one subscriber. When full the
/// oldest record is dropped.
#[derive(Debug)]
pub struct StateQueue {
    inner: Mutex<QueueInner>,
    ready: Condvar,
    capacity: usize,
}

#[derive(Debug, Default)]
struct QueueInner {
    items: VecDeque<Arc<str>>,
    dropped: u64,
    closed: bool,
}

impl StateQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            inner: Mutex::new(QueueInner::default()),
            ready: Condvar::new(),
            capacity: capacity.max(1),
        }
    }

    /// Returns false once the queue is closed.
    pub fn push(&self, item: Arc<str>) -> bool {
        let mut q = lock(&self.inner);
        if q.closed {
            return false;
        }
        if q.items.len() == self.capacity {
            q.items.pop_front();
            q.dropped += 1;
        }
        q.items.push_back(item);
        self.ready.notify_one();
        true
    }

    /// Waits up to `timeout` for the oldest queued record.
    pub fn pop(&self, timeout: Duration) -> Option<Arc<str>> {
        let q = lock(&self.inner);
        let (mut q, _) = self
            .ready
            .wait_timeout_while(q, timeout, |q| q.items.is_empty() && !q.closed)
            .unwrap_or_else(|e| e.into_inner());
        q.items.pop_front()
    }

    pub fn try_pop(&self) -> Option<Arc<str>> {
        lock(&self.inner).items.pop_front()
    }

    pub fn len(&self) -> usize {
        lock(&self.inner).items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        lock(&self.inner).dropped
    }

    pub fn close(&self) {
        lock(&self.inner).closed = true;
        self.ready.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        lock(&self.inner).closed
    }
}

/// Fans state records out to every open subscriber queue.
#[derive(Debug)]
pub struct Hub {
    queues: Mutex<Vec<Arc<StateQueue>>>,
    depth: usize,
    dropped_closed: Mutex<u64>,
}

impl Hub {
    pub fn new(depth: usize) -> Self {
        Self {
            queues: Mutex::new(Vec::new()),
            depth,
            dropped_closed: Mutex::new(0),
        }
    }

    pub fn subscribe(&self) -> Arc<StateQueue> {
        let q = Arc::new(StateQueue::new(self.depth));
        lock(&self.queues).push(q.clone());
        q
    }

    pub fn publish(&self, record: &str) {
        let record: Arc<str> = Arc::from(record);
        let mut queues = lock(&self.queues);
        queues.retain(|q| {
            let open = q.push(record.clone());
            if !open {
                *lock(&self.dropped_closed) += q.dropped();
            }
            open
        });
    }

    pub fn subscribers(&self) -> usize {
        lock(&self.queues).len()
    }

    /// Records dropped for slow subscribers so far.
    pub fn dropped(&self) -> u64 {
        *lock(&self.dropped_closed) + lock(&self.queues).iter().map(|q| q.dropped()).sum::<u64>()
    }

    pub fn close_all(&self) {
        for q in lock(&self.queues).iter() {
            q.close();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Pose;

    fn update(session: &str, seq: u64) -> Vec<u8> {
        PoseUpdateMessage {
            session_id: session.into(),
            seq,
            t_client: seq as f64 * 0.01,
            pose: Pose::from_translation(seq as f64, 0.0, 0.5),
            grab: true,
        }
        .encode()
        .into_bytes()
    }

    #[test]
    fn mailbox_keeps_latest() {
        let m = Mailbox::new();
        assert_eq!(m.put(1), None);
        assert_eq!(m.put(2), Some(1));
        assert_eq!(m.take(), Some(2));
        assert_eq!(m.take(), None);
    }

    #[test]
    fn ingest_orders_by_seq_and_counts_malformed() {
        let mut ingest = PoseIngest::new(Duration::from_secs(2));
        let now = Instant::now();
        assert!(matches!(ingest.ingest(&update("a", 5), now), Ingested::Accepted(_)));
        assert_eq!(ingest.ingest(&update("a", 5), now), Ingested::Stale);
        assert_eq!(ingest.ingest(&update("a", 3), now), Ingested::Stale);
        assert!(matches!(ingest.ingest(&update("a", 6), now), Ingested::Accepted(_)));
        assert_eq!(ingest.ingest(b"type=pose nonsense", now), Ingested::Malformed);
        assert_eq!(
            ingest.counters(),
            IngestCounters {
                accepted: 2,
                stale: 2,
                malformed: 1,
                busy: 0
            }
        );
    }

    #[test]
    fn second_session_is_busy_until_timeout() {
        let mut ingest = PoseIngest::new(Duration::from_secs(2));
        let t0 = Instant::now();
        assert!(matches!(ingest.ingest(&update("a", 1), t0), Ingested::Accepted(_)));
        match ingest.ingest(&update("b", 1), t0 + Duration::from_secs(1)) {
            Ingested::Busy(n) => {
                assert_eq!(n.session_id, "b");
                assert_eq!(n.active, "a");
            }
            other => panic!("{other:?}"),
        }
        // Silence from "a" releases the payload; "b" starts its own sequence.
        assert!(matches!(
            ingest.ingest(&update("b", 1), t0 + Duration::from_secs(4)),
            Ingested::Accepted(_)
        ));
        assert_eq!(ingest.active_session(), Some("b"));
        assert_eq!(ingest.counters().busy, 1);
    }

    #[test]
    fn queue_drops_oldest_when_full() {
        let q = StateQueue::new(2);
        for s in ["1", "2", "3"] {
            assert!(q.push(Arc::from(s)));
        }
        assert_eq!(q.dropped(), 1);
        assert_eq!(q.try_pop().as_deref(), Some("2"));
        assert_eq!(q.pop(Duration::from_millis(1)).as_deref(), Some("3"));
        assert_eq!(q.pop(Duration::from_millis(1)), None);
        q.close();
        assert!(!q.push(Arc::from("4")));
    }

    #[test]
    fn hub_forgets_closed_subscribers() {
        let hub = Hub::new(4);
        let a = hub.subscribe();
        let b = hub.subscribe();
        hub.publish("x");
        b.close();
        hub.publish("y");
        assert_eq!(hub.subscribers(), 1);
        assert_eq!(a.len(), 2);
    }
}
