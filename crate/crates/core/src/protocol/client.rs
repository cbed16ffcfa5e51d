//! Client side: request retries and a revision-checked scene mirror.

use std::collections::BTreeMap;
use std::time::Duration;

use super::reassembly::{Reassembler, Received};
use super::{
    AckBody, AddDetectionsBody, AddImageBody, EncodeError, ErrBody, EventBody, Message, MsgType, SetPoseBody,
};
use crate::detection::Detection;
use crate::ingest::{ImageRecord, SCHEMA_VERSION};
use crate::projection::ProjectorPose;
use crate::scene::SceneState;

pub const RETRY_INTERVAL: Duration = Duration::from_millis(200);
/// Broadcasts held back while waiting for an earlier revision.
pub const EARLY_EVENT_LIMIT: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub enum ClientEvent {
    Acked { msg_id: u32, revision: u64 },
    Rejected { msg_id: u32, reason: String },
    /// The mirror was replaced by a snapshot.
    Snapshot { revision: u64 },
    /// The mirror advanced by replaying a broadcast mutation.
    Applied { revision: u64, summary: String },
    /// A broadcast arrived ahead of the mirror and was held back. If the
    /// missing revisions do not turn up, `poll` fetches a snapshot.
    Gap { have: u64, seen: u64 },
}

#[derive(Debug)]
struct Pending {
    kind: MsgType,
    datagrams: Vec<Vec<u8>>,
    last_sent: Duration,
}

/// Sans-IO datagram client. Requests are retried until answered; the local
/// mirror only ever moves forward, one revision at a time or by snapshot.
#[derive(Debug)]
pub struct ClientSession {
    next_msg_id: u32,
    reassembler: Reassembler,
    pending: BTreeMap<u32, Pending>,
    mirror: Option<SceneState>,
    early: BTreeMap<u64, EventBody>,
    known_revision: u64,
    behind_since: Option<Duration>,
    outbox: Vec<Vec<u8>>,
    observed: Vec<u64>,
}

impl Default for ClientSession {
    fn default() -> Self {
        Self::new()
    }
}

impl ClientSession {
    pub fn new() -> Self {
        Self::starting_at(1)
    }

    /// Start numbering requests at `first_id`, e.g. to avoid reusing ids a
    /// previous process sent inside the server's dedupe window.
    pub fn starting_at(first_id: u32) -> Self {
        Self {
            next_msg_id: first_id,
            reassembler: Reassembler::default(),
            pending: BTreeMap::new(),
            mirror: None,
            early: BTreeMap::new(),
            known_revision: 0,
            behind_since: None,
            outbox: Vec::new(),
            observed: Vec::new(),
        }
    }

    pub fn mirror(&self) -> Option<&SceneState> {
        self.mirror.as_ref()
    }

    /// Highest server revision seen in any ACK or broadcast.
    pub fn known_revision(&self) -> u64 {
        self.known_revision
    }

    /// Revisions the mirror has moved to, in order.
    pub fn observed_revisions(&self) -> &[u64] {
        &self.observed
    }

    pub fn is_settled(&self) -> bool {
        self.pending.is_empty() && self.mirror.as_ref().is_some_and(|m| m.revision >= self.known_revision)
    }

    pub fn pending_requests(&self) -> usize {
        self.pending.len()
    }

    pub fn drain_outbox(&mut self) -> Vec<Vec<u8>> {
        std::mem::take(&mut self.outbox)
    }

    pub fn send(&mut self, kind: MsgType, body: Vec<u8>, now: Duration) -> Result<u32, EncodeError> {
        let msg_id = self.next_msg_id;
        self.next_msg_id = self.next_msg_id.wrapping_add(1);
        let datagrams = Message::new(msg_id, kind, body).to_datagrams()?;
        self.outbox.extend(datagrams.iter().cloned());
        self.pending.insert(
            msg_id,
            Pending {
                kind,
                datagrams,
                last_sent: now,
            },
        );
        Ok(msg_id)
    }

    pub fn hello(&mut self, now: Duration) -> u32 {
        self.send(MsgType::Hello, Vec::new(), now).expect("empty body")
    }

    pub fn get_scene(&mut self, now: Duration) -> u32 {
        self.send(MsgType::GetScene, Vec::new(), now).expect("empty body")
    }

    pub fn set_pose(&mut self, projector_id: u32, pose: ProjectorPose, now: Duration) -> Result<u32, EncodeError> {
        let body = serde_json::to_vec(&SetPoseBody { projector_id, pose }).expect("serializable");
        self.send(MsgType::SetPose, body, now)
    }

    pub fn add_image(
        &mut self,
        image: ImageRecord,
        pose: Option<ProjectorPose>,
        now: Duration,
    ) -> Result<u32, EncodeError> {
        let body = serde_json::to_vec(&AddImageBody { image, pose }).expect("serializable");
        self.send(MsgType::AddImage, body, now)
    }

    pub fn add_detections(&mut self, detections: Vec<Detection>, now: Duration) -> Result<u32, EncodeError> {
        let body = serde_json::to_vec(&AddDetectionsBody {
            schema_version: SCHEMA_VERSION,
            detections,
        })
        .expect("serializable");
        self.send(MsgType::AddDetections, body, now)
    }

    fn snapshot_pending(&self) -> bool {
        self.pending.values().any(|p| p.kind == MsgType::GetScene)
    }

    fn refetch(&mut self, now: Duration) {
        if !self.snapshot_pending() {
            self.get_scene(now);
        }
    }

    /// Retransmit unanswered requests and catch up when the mirror lags a
    /// revision the server has announced.
    pub fn poll(&mut self, now: Duration) {
        for p in self.pending.values_mut() {
            if now.saturating_sub(p.last_sent) >= RETRY_INTERVAL {
                p.last_sent = now;
                self.outbox.extend(p.datagrams.iter().cloned());
            }
        }
        let behind = self.mirror.as_ref().is_some_and(|m| m.revision < self.known_revision);
        match (behind, self.behind_since) {
            (false, _) => self.behind_since = None,
            (true, None) => self.behind_since = Some(now),
            (true, Some(since)) if now.saturating_sub(since) >= RETRY_INTERVAL => self.refetch(now),
            (true, Some(_)) => {}
        }
    }

    pub fn handle_datagram(&mut self, datagram: &[u8], now: Duration) -> Vec<ClientEvent> {
        match self.reassembler.push_datagram(datagram, now) {
            Received::Complete(m) => self.handle_message(m, now),
            _ => Vec::new(),
        }
    }

    pub fn handle_message(&mut self, m: Message, now: Duration) -> Vec<ClientEvent> {
        let mut out = Vec::new();
        match m.kind() {
            Some(MsgType::Ack) => {
                if let Ok(a) = serde_json::from_slice::<AckBody>(&m.body) {
                    if self.pending.remove(&a.ack).is_some() {
                        out.push(ClientEvent::Acked {
                            msg_id: a.ack,
                            revision: a.revision,
                        });
                    }
                    self.known_revision = self.known_revision.max(a.revision);
                }
            }
            Some(MsgType::Err) => {
                if let Ok(e) = serde_json::from_slice::<ErrBody>(&m.body) {
                    if self.pending.remove(&e.ack).is_some() {
                        out.push(ClientEvent::Rejected {
                            msg_id: e.ack,
                            reason: e.reason,
                        });
                    }
                }
            }
            Some(MsgType::SceneSnapshot) => {
                if let Ok(scene) = SceneState::load(&m.body) {
                    let rev = scene.revision;
                    self.known_revision = self.known_revision.max(rev);
                    if self.mirror.as_ref().is_none_or(|cur| rev > cur.revision) {
                        self.mirror = Some(scene);
                        self.observed.push(rev);
                        out.push(ClientEvent::Snapshot { revision: rev });
                        out.extend(self.drain_early(now));
                    }
                    // A stale answer still ends the request: retrying the
                    // same id would only fetch the same cached reply. The lag
                    // check in `poll` asks again with a fresh id.
                    self.pending.retain(|_, p| p.kind != MsgType::GetScene);
                }
            }
            Some(MsgType::SceneEvent) => {
                if let Ok(ev) = serde_json::from_slice::<EventBody>(&m.body) {
                    self.known_revision = self.known_revision.max(ev.revision);
                    out.extend(self.replay(ev, now));
                    out.extend(self.drain_early(now));
                }
            }
            _ => {}
        }
        out
    }

    /// Apply held-back broadcasts that now follow the mirror directly.
    fn drain_early(&mut self, now: Duration) -> Vec<ClientEvent> {
        let mut out = Vec::new();
        while let Some(have) = self.mirror.as_ref().map(|m| m.revision) {
            self.early = self.early.split_off(&(have + 1));
            let Some(ev) = self.early.remove(&(have + 1)) else { break };
            match self.replay(ev, now) {
                Some(e @ ClientEvent::Applied { .. }) => out.push(e),
                _ => break,
            }
        }
        out
    }

    fn replay(&mut self, ev: EventBody, now: Duration) -> Option<ClientEvent> {
        let Some(cur) = &self.mirror else {
            self.refetch(now);
            return None;
        };
        let have = cur.revision;
        if ev.revision <= have {
            return None;
        }
        if ev.revision > have + 1 {
            let seen = ev.revision;
            if self.early.len() < EARLY_EVENT_LIMIT || self.early.contains_key(&seen) {
                self.early.insert(seen, ev);
            }
            return Some(ClientEvent::Gap { have, seen });
        }
        match cur.apply(&ev.mutation) {
            Ok(applied) if applied.scene.revision == ev.revision => {
                self.mirror = Some(applied.scene);
                self.observed.push(ev.revision);
                Some(ClientEvent::Applied {
                    revision: ev.revision,
                    summary: ev.summary,
                })
            }
            _ => {
                // Mirror disagrees with the server; start over from a snapshot.
                self.refetch(now);
                None
            }
        }
    }
}
