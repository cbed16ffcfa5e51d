//! Scene owner side of the protocol, independent of any transport.

use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::reassembly::{DropCounters, Limits, Reassembler, Received};
use super::{AckBody, AddDetectionsBody, AddImageBody, ErrBody, EventBody, Frame, Message, MsgType, SetPoseBody};
use crate::ingest::SCHEMA_VERSION;
use crate::scene::{Mutation, SceneState};

/// Replies kept per peer so retried requests get the original answer.
const REPLY_CACHE: usize = 16;
const DEFAULT_MAX_PEERS: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound<P> {
    pub to: P,
    pub message: Message,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerStep<P> {
    pub outbound: Vec<Outbound<P>>,
    /// New revision when this step committed a mutation.
    pub committed: Option<u64>,
    pub warnings: Vec<String>,
}

impl<P> Default for ServerStep<P> {
    fn default() -> Self {
        Self {
            outbound: Vec::new(),
            committed: None,
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug)]
struct Peer {
    reassembler: Reassembler,
    replies: VecDeque<(u32, Message)>,
    last_active: Duration,
}

/// The single writer of the scene. Transports hand it datagrams or whole
/// messages tagged with a peer key and send whatever it returns.
#[derive(Debug)]
pub struct ServerCore<P> {
    scene: SceneState,
    peers: BTreeMap<P, Peer>,
    next_msg_id: u32,
    limits: Limits,
    max_peers: usize,
    counters: DropCounters,
}

impl<P: Ord + Clone> ServerCore<P> {
    pub fn new(scene: SceneState) -> Self {
        Self::with_limits(scene, Limits::default(), DEFAULT_MAX_PEERS)
    }

    pub fn with_limits(scene: SceneState, limits: Limits, max_peers: usize) -> Self {
        Self {
            scene,
            peers: BTreeMap::new(),
            next_msg_id: 1,
            limits,
            max_peers: max_peers.max(1),
            counters: DropCounters::default(),
        }
    }

    pub fn scene(&self) -> &SceneState {
        &self.scene
    }

    pub fn peer_count(&self) -> usize {
        self.peers.len()
    }

    /// Drop counters summed over live and evicted peers plus unparseable
    /// datagrams.
    pub fn counters(&self) -> DropCounters {
        let mut c = self.counters;
        for p in self.peers.values() {
            c.add(&p.reassembler.counters());
        }
        c
    }

    pub fn disconnect(&mut self, peer: &P) {
        if let Some(p) = self.peers.remove(peer) {
            self.counters.add(&p.reassembler.counters());
        }
    }

    fn peer(&mut self, key: &P, now: Duration) -> &mut Peer {
        if !self.peers.contains_key(key) && self.peers.len() >= self.max_peers {
            let oldest = self
                .peers
                .iter()
                .min_by_key(|(_, p)| p.last_active)
                .map(|(k, _)| k.clone());
            if let Some(k) = oldest {
                self.disconnect(&k);
            }
        }
        let limits = self.limits;
        let p = self.peers.entry(key.clone()).or_insert_with(|| Peer {
            reassembler: Reassembler::new(limits),
            replies: VecDeque::new(),
            last_active: now,
        });
        p.last_active = now;
        p
    }

    fn alloc_id(&mut self) -> u32 {
        let id = self.next_msg_id;
        self.next_msg_id = self.next_msg_id.wrapping_add(1);
        id
    }

    /// One datagram from a datagram peer.
    pub fn handle_datagram(&mut self, from: &P, datagram: &[u8], now: Duration) -> ServerStep<P> {
        let frame = match Frame::parse(datagram) {
            Ok(f) => f,
            Err(_) => {
                self.counters.malformed += 1;
                return ServerStep::default();
            }
        };
        let received = self.peer(from, now).reassembler.push(frame, now);
        match received {
            Received::Complete(msg) => self.handle_message(from, msg, now),
            Received::Duplicate { msg_id, msg_type } => self.handle_duplicate(from, msg_id, msg_type, now),
            Received::Pending | Received::Dropped(_) => ServerStep::default(),
        }
    }

    fn handle_duplicate(&mut self, from: &P, msg_id: u32, msg_type: u8, now: Duration) -> ServerStep<P> {
        let cached = self
            .peers
            .get(from)
            .and_then(|p| p.replies.iter().find(|(id, _)| *id == msg_id))
            .map(|(_, m)| m.clone());
        if let Some(message) = cached {
            return ServerStep {
                outbound: vec![Outbound {
                    to: from.clone(),
                    message,
                }],
                ..ServerStep::default()
            };
        }
        // Reads are safe to answer again; writes whose reply has been
        // evicted are not re-applied.
        match MsgType::from_code(msg_type) {
            Some(MsgType::Hello | MsgType::GetScene) => self.handle_message(
                from,
                Message {
                    msg_id,
                    msg_type,
                    body: Vec::new(),
                },
                now,
            ),
            _ => ServerStep::default(),
        }
    }

    /// One complete message, from either transport.
    pub fn handle_message(&mut self, from: &P, msg: Message, now: Duration) -> ServerStep<P> {
        self.peer(from, now);
        let mut step = ServerStep::default();
        let reply = match msg.kind() {
            Some(MsgType::Hello) => self.ack(msg.msg_id),
            Some(MsgType::GetScene) => match self.scene.save() {
                Ok(bytes) => {
                    let id = self.alloc_id();
                    Message::new(id, MsgType::SceneSnapshot, bytes)
                }
                Err(e) => self.err(msg.msg_id, e.to_string()),
            },
            Some(MsgType::SetPose) => match body::<SetPoseBody>(&msg.body) {
                Ok(b) => self.commit(
                    msg.msg_id,
                    Mutation::SetProjectorPose {
                        projector_id: b.projector_id,
                        pose: b.pose,
                    },
                    &mut step,
                ),
                Err(reason) => self.err(msg.msg_id, reason),
            },
            Some(MsgType::AddImage) => match body::<AddImageBody>(&msg.body) {
                Ok(b) => self.commit(
                    msg.msg_id,
                    Mutation::AddImage {
                        image: b.image,
                        pose: b.pose,
                    },
                    &mut step,
                ),
                Err(reason) => self.err(msg.msg_id, reason),
            },
            Some(MsgType::AddDetections) => match body::<AddDetectionsBody>(&msg.body) {
                Ok(b) if b.schema_version != SCHEMA_VERSION => self.err(
                    msg.msg_id,
                    format!("schema_version {} unsupported, expected {SCHEMA_VERSION}", b.schema_version),
                ),
                Ok(b) => self.commit(
                    msg.msg_id,
                    Mutation::AddDetections {
                        detections: b.detections,
                    },
                    &mut step,
                ),
                Err(reason) => self.err(msg.msg_id, reason),
            },
            Some(t) => self.err(msg.msg_id, format!("{t:?} is not a request")),
            None => self.err(msg.msg_id, format!("unknown msg_type {}", msg.msg_type)),
        };
        // Retries get byte-identical replies, so a large snapshot can be
        // completed from fragments of several resends.
        if let Some(p) = self.peers.get_mut(from) {
            p.replies.retain(|(id, _)| *id != msg.msg_id);
            p.replies.push_back((msg.msg_id, reply.clone()));
            if p.replies.len() > REPLY_CACHE {
                p.replies.pop_front();
            }
        }
        // The requester hears its reply before the broadcast.
        step.outbound.insert(
            0,
            Outbound {
                to: from.clone(),
                message: reply,
            },
        );
        step
    }

    fn commit(&mut self, request_id: u32, mutation: Mutation, step: &mut ServerStep<P>) -> Message {
        match self.scene.apply(&mutation) {
            Ok(applied) => {
                self.scene = applied.scene;
                let revision = self.scene.revision;
                step.committed = Some(revision);
                step.warnings = applied.warnings;
                let event = EventBody {
                    revision,
                    summary: applied.summary,
                    mutation,
                };
                let id = self.alloc_id();
                let event = Message::new(id, MsgType::SceneEvent, json(&event));
                for peer in self.peers.keys() {
                    step.outbound.push(Outbound {
                        to: peer.clone(),
                        message: event.clone(),
                    });
                }
                self.ack(request_id)
            }
            Err(e) => self.err(request_id, e.to_string()),
        }
    }

    fn ack(&mut self, request_id: u32) -> Message {
        let body = json(&AckBody {
            ack: request_id,
            revision: self.scene.revision,
        });
        let id = self.alloc_id();
        Message::new(id, MsgType::Ack, body)
    }

    fn err(&mut self, request_id: u32, reason: String) -> Message {
        let body = json(&ErrBody {
            ack: request_id,
            reason,
        });
        let id = self.alloc_id();
        Message::new(id, MsgType::Err, body)
    }
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("protocol bodies serialize")
}

fn body<T: DeserializeOwned>(b: &[u8]) -> Result<T, String> {
    let de = &mut serde_json::Deserializer::from_slice(b);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        format!("malformed body at {path}: {}", e.inner())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::{GeoCoord, LocalFrame};
    use crate::ingest::ImageRecord;
    use crate::math::Vec3;
    use crate::projection::ProjectorPose;

    const T0: Duration = Duration::ZERO;

    fn scene_with_image() -> SceneState {
        let frame = LocalFrame::new(GeoCoord::new(48.0, 11.0).unwrap(), 0.0).unwrap();
        let s = SceneState::default().apply(&Mutation::SetFrame { frame }).unwrap().scene;
        let image = ImageRecord {
            image_id: "img".into(),
            source_path: "img.jpg".into(),
            width: 640,
            height: 480,
            geo: GeoCoord::new(48.0, 11.0).unwrap(),
            heading: Some(90.0),
            timestamp: None,
            focal35: None,
            focal_unscaled: false,
            orientation: 1,
        };
        s.apply(&Mutation::AddImage { image, pose: None }).unwrap().scene
    }

    fn request(id: u32, t: MsgType, body: &[u8]) -> Message {
        Message::new(id, t, body.to_vec())
    }

    fn decode<T: DeserializeOwned>(m: &Message) -> T {
        serde_json::from_slice(&m.body).unwrap()
    }

    #[test]
    fn hello_then_snapshot_on_empty_scene() {
        let mut s = ServerCore::<u8>::new(SceneState::default());
        let step = s.handle_message(&1, request(1, MsgType::Hello, b""), T0);
        let ack: AckBody = decode(&step.outbound[0].message);
        assert_eq!(ack, AckBody { ack: 1, revision: 0 });
        let step = s.handle_message(&1, request(2, MsgType::GetScene, b""), T0);
        let m = &step.outbound[0].message;
        assert_eq!(m.kind(), Some(MsgType::SceneSnapshot));
        assert_eq!(SceneState::load(&m.body).unwrap().revision, 0);
    }

    #[test]
    fn set_pose_acks_and_broadcasts() {
        let mut s = ServerCore::<u8>::new(scene_with_image());
        let base = s.scene().revision;
        s.handle_message(&2, request(1, MsgType::Hello, b""), T0);
        let body = serde_json::to_vec(&SetPoseBody {
            projector_id: 0,
            pose: ProjectorPose::new(Vec3::new(1.0, 2.0, 3.0), 45.0, 0.0, 0.0),
        })
        .unwrap();
        let step = s.handle_message(&1, request(7, MsgType::SetPose, &body), T0);
        assert_eq!(step.committed, Some(base + 1));
        let ack: AckBody = decode(&step.outbound[0].message);
        assert_eq!(ack, AckBody { ack: 7, revision: base + 1 });
        let events: Vec<_> = step.outbound[1..].iter().collect();
        assert_eq!(events.len(), 2);
        assert!(events.iter().any(|o| o.to == 2));
        let ev: EventBody = decode(&events[0].message);
        assert_eq!(ev.revision, base + 1);
        assert_eq!(s.scene().projectors[0].pose.yaw, 45.0);
    }

    #[test]
    fn errors_echo_the_request() {
        let mut s = ServerCore::<u8>::new(SceneState::default());
        let step = s.handle_message(&1, request(3, MsgType::SetPose, b"{\"projector_id\": 0}"), T0);
        let err: ErrBody = decode(&step.outbound[0].message);
        assert_eq!(err.ack, 3);
        assert!(err.reason.contains("pose"), "{}", err.reason);
        let step = s.handle_message(&1, Message { msg_id: 4, msg_type: 77, body: vec![] }, T0);
        let err: ErrBody = decode(&step.outbound[0].message);
        assert_eq!((err.ack, err.reason.as_str()), (4, "unknown msg_type 77"));
        let step = s.handle_message(&1, request(5, MsgType::Ack, b"{}"), T0);
        assert_eq!(step.outbound[0].message.kind(), Some(MsgType::Err));
    }

    #[test]
    fn retried_set_pose_applies_once() {
        let mut s = ServerCore::<u8>::new(scene_with_image());
        let base = s.scene().revision;
        let body = serde_json::to_vec(&SetPoseBody {
            projector_id: 0,
            pose: ProjectorPose::new(Vec3::new(0.0, 0.0, 2.0), 10.0, 0.0, 0.0),
        })
        .unwrap();
        let dgrams = request(9, MsgType::SetPose, &body).to_datagrams().unwrap();
        let mut acks = Vec::new();
        for _ in 0..3 {
            for d in &dgrams {
                let step = s.handle_datagram(&1, d, T0);
                acks.extend(
                    step.outbound
                        .into_iter()
                        .filter(|o| o.message.kind() == Some(MsgType::Ack))
                        .map(|o| o.message),
                );
            }
        }
        assert_eq!(s.scene().revision, base + 1);
        assert_eq!(acks.len(), 3);
        assert!(acks.iter().all(|a| *a == acks[0]));
    }

    #[test]
    fn garbage_does_not_register_peers() {
        let mut s = ServerCore::<u8>::new(SceneState::default());
        let step = s.handle_datagram(&1, b"garbage", T0);
        assert!(step.outbound.is_empty());
        assert_eq!(s.peer_count(), 0);
        assert_eq!(s.counters().malformed, 1);
    }

    #[test]
    fn peer_cap_evicts_oldest() {
        let mut s = ServerCore::<u8>::with_limits(SceneState::default(), Limits::default(), 2);
        for (k, t) in [(1u8, 0u64), (2, 1), (3, 2)] {
            s.handle_message(&k, request(1, MsgType::Hello, b""), Duration::from_secs(t));
        }
        assert_eq!(s.peer_count(), 2);
        assert!(!s.peers.contains_key(&1));
    }
}
