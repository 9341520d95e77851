use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::model::NodeId;

/// Simulation clock in nanoseconds.
pub type SimTime = u64;

pub const NANOS_PER_SEC: f64 = 1e9;

pub fn to_secs(t: SimTime) -> f64 {
    t as f64 / NANOS_PER_SEC
}

pub fn from_secs(s: f64) -> SimTime {
    (s * NANOS_PER_SEC).round().max(0.0) as SimTime
}

/// Event kinds in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    FaultInject,
    ServiceComplete,
    PacketArrival,
    TimerExpiry,
    Probe,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::FaultInject => "fault",
            EventKind::ServiceComplete => "service",
            EventKind::PacketArrival => "arrive",
            EventKind::TimerExpiry => "timer",
            EventKind::Probe => "probe",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Fault(usize),
    Service {
        node: NodeId,
        link: Option<NodeId>,
        generation: u64,
    },
    Arrival {
        packet: usize,
        from: NodeId,
        to: NodeId,
    },
    Timer {
        watcher: NodeId,
        upstream: NodeId,
        generation: u64,
    },
    Beacon {
        sender: NodeId,
        target: NodeId,
    },
    ProbeRound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: SimTime,
    pub kind: EventKind,
    pub node: NodeId,
    pub seq: u64,
    pub payload: Payload,
}

type Key = (SimTime, EventKind, NodeId, u64);

/// Min-heap of events ordered by `(time, kind, node, insertion sequence)`.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<(Key, usize)>>,
    slots: Vec<Option<Event>>,
    free: Vec<usize>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: SimTime, kind: EventKind, node: NodeId, payload: Payload) {
        let seq = self.next_seq;
        self.next_seq += 1;
        let ev = Event {
            time,
            kind,
            node,
            seq,
            payload,
        };
        let slot = match self.free.pop() {
            Some(i) => {
                self.slots[i] = Some(ev);
                i
            }
            None => {
                self.slots.push(Some(ev));
                self.slots.len() - 1
            }
        };
        self.heap.push(Reverse(((time, kind, node, seq), slot)));
    }

    pub fn pop(&mut self) -> Option<Event> {
        let Reverse((_, slot)) = self.heap.pop()?;
        self.free.push(slot);
        self.slots[slot].take()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }
}
