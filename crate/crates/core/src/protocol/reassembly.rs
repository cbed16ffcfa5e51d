//! Per-peer fragment reassembly with duplicate suppression.
//!
//! Hostile input is expected: every malformed or inconsistent frame is
//! dropped and counted, never trusted.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::time::Duration;

use super::frame::{Frame, FrameError};
use super::Message;

pub const DEDUPE_WINDOW: usize = 1024;
pub const GROUP_EXPIRY: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub dedupe_window: usize,
    pub expiry: Duration,
    pub max_groups: usize,
    /// Cap on payload bytes held in incomplete groups.
    pub max_buffered: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            dedupe_window: DEDUPE_WINDOW,
            expiry: GROUP_EXPIRY,
            max_groups: 256,
            max_buffered: 96 * 1024 * 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DropCounters {
    pub malformed: u64,
    pub inconsistent: u64,
    pub conflicting: u64,
    pub over_capacity: u64,
    pub expired_groups: u64,
    pub duplicate_fragments: u64,
    pub duplicate_messages: u64,
}

impl DropCounters {
    pub fn add(&mut self, o: &DropCounters) {
        self.malformed += o.malformed;
        self.inconsistent += o.inconsistent;
        self.conflicting += o.conflicting;
        self.over_capacity += o.over_capacity;
        self.expired_groups += o.expired_groups;
        self.duplicate_fragments += o.duplicate_fragments;
        self.duplicate_messages += o.duplicate_messages;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Received {
    Complete(Message),
    /// Waiting for more fragments.
    Pending,
    /// First fragment of a message already delivered inside the dedupe
    /// window; the sender is probably retrying.
    Duplicate { msg_id: u32, msg_type: u8 },
    Dropped(DropReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    Malformed(FrameError),
    /// Disagrees with earlier fragments on msg_type or frag_count.
    Inconsistent,
    /// Same fragment index seen before with different bytes.
    Conflicting,
    OverCapacity,
    /// Repeat of a fragment already buffered or delivered.
    Repeat,
}

#[derive(Debug)]
struct Group {
    msg_type: u8,
    frag_count: u16,
    /// Sparse so a hostile fragment count costs nothing up front.
    parts: BTreeMap<u16, Vec<u8>>,
    bytes: usize,
    first_seen: Duration,
}

#[derive(Debug)]
pub struct Reassembler {
    limits: Limits,
    groups: BTreeMap<u32, Group>,
    buffered: usize,
    delivered: VecDeque<u32>,
    delivered_set: HashSet<u32>,
    counters: DropCounters,
}

impl Default for Reassembler {
    fn default() -> Self {
        Self::new(Limits::default())
    }
}

impl Reassembler {
    pub fn new(limits: Limits) -> Self {
        Self {
            limits,
            groups: BTreeMap::new(),
            buffered: 0,
            delivered: VecDeque::new(),
            delivered_set: HashSet::new(),
            counters: DropCounters::default(),
        }
    }

    pub fn counters(&self) -> DropCounters {
        self.counters
    }

    pub fn pending_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn buffered_bytes(&self) -> usize {
        self.buffered
    }

    /// Feed one raw datagram. `now` is any monotonic clock reading.
    pub fn push_datagram(&mut self, datagram: &[u8], now: Duration) -> Received {
        match Frame::parse(datagram) {
            Ok(f) => self.push(f, now),
            Err(e) => {
                self.counters.malformed += 1;
                Received::Dropped(DropReason::Malformed(e))
            }
        }
    }

    pub fn push(&mut self, f: Frame, now: Duration) -> Received {
        self.expire(now);
        if self.delivered_set.contains(&f.msg_id) {
            if f.frag_index == 0 {
                self.counters.duplicate_messages += 1;
                return Received::Duplicate {
                    msg_id: f.msg_id,
                    msg_type: f.msg_type,
                };
            }
            self.counters.duplicate_fragments += 1;
            return Received::Dropped(DropReason::Repeat);
        }
        if f.frag_count == 1 && !self.groups.contains_key(&f.msg_id) {
            self.mark_delivered(f.msg_id);
            return Received::Complete(Message {
                msg_id: f.msg_id,
                msg_type: f.msg_type,
                body: f.payload,
            });
        }

        if let Some(g) = self.groups.get(&f.msg_id) {
            if g.msg_type != f.msg_type || g.frag_count != f.frag_count {
                self.counters.inconsistent += 1;
                return Received::Dropped(DropReason::Inconsistent);
            }
            if let Some(prev) = g.parts.get(&f.frag_index) {
                return if *prev == f.payload {
                    self.counters.duplicate_fragments += 1;
                    Received::Dropped(DropReason::Repeat)
                } else {
                    self.counters.conflicting += 1;
                    Received::Dropped(DropReason::Conflicting)
                };
            }
        } else if self.groups.len() >= self.limits.max_groups {
            self.counters.over_capacity += 1;
            return Received::Dropped(DropReason::OverCapacity);
        }
        if self.buffered + f.payload.len() > self.limits.max_buffered {
            self.counters.over_capacity += 1;
            return Received::Dropped(DropReason::OverCapacity);
        }

        let g = self.groups.entry(f.msg_id).or_insert_with(|| Group {
            msg_type: f.msg_type,
            frag_count: f.frag_count,
            parts: BTreeMap::new(),
            bytes: 0,
            first_seen: now,
        });
        g.bytes += f.payload.len();
        self.buffered += f.payload.len();
        g.parts.insert(f.frag_index, f.payload);
        if g.parts.len() < usize::from(g.frag_count) {
            return Received::Pending;
        }

        let g = self.groups.remove(&f.msg_id).expect("group present");
        self.buffered -= g.bytes;
        self.mark_delivered(f.msg_id);
        let mut body = Vec::with_capacity(g.bytes);
        for p in g.parts.into_values() {
            body.extend_from_slice(&p);
        }
        Received::Complete(Message {
            msg_id: f.msg_id,
            msg_type: g.msg_type,
            body,
        })
    }

    /// Discard incomplete groups older than the expiry.
    pub fn expire(&mut self, now: Duration) {
        let expiry = self.limits.expiry;
        let stale: Vec<u32> = self
            .groups
            .iter()
            .filter(|(_, g)| now.saturating_sub(g.first_seen) > expiry)
            .map(|(&id, _)| id)
            .collect();
        for id in stale {
            if let Some(g) = self.groups.remove(&id) {
                self.buffered -= g.bytes;
                self.counters.expired_groups += 1;
            }
        }
    }

    fn mark_delivered(&mut self, msg_id: u32) {
        self.delivered.push_back(msg_id);
        self.delivered_set.insert(msg_id);
        while self.delivered.len() > self.limits.dedupe_window {
            if let Some(old) = self.delivered.pop_front() {
                self.delivered_set.remove(&old);
            }
        }
    }
}
