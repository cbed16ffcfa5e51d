//! Datagram protocol between the engine and viewers, plus the message codec
//! used over stream connections.
//!
//! Everything here is sans-IO: callers feed bytes and a clock reading in,
//! and get bytes to send back out.

mod client;
mod frame;
mod reassembly;
mod server;

use serde::{Deserialize, Serialize};

use crate::detection::Detection;
use crate::ingest::ImageRecord;
use crate::projection::ProjectorPose;
use crate::scene::Mutation;

pub use client::{ClientEvent, ClientSession, RETRY_INTERVAL};
pub use frame::{encode, EncodeError, Frame, FrameError, HEADER_LEN, MAGIC, MAX_BODY, MAX_FRAGMENTS, MAX_PAYLOAD};
pub use reassembly::{DropCounters, DropReason, Limits, Reassembler, Received, DEDUPE_WINDOW, GROUP_EXPIRY};
pub use server::{Outbound, ServerCore, ServerStep};

pub const DEFAULT_UDP_PORT: u16 = 47701;
pub const DEFAULT_WS_PORT: u16 = 47702;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 1,
    Ack = 2,
    Err = 3,
    GetScene = 4,
    SceneSnapshot = 5,
    SetPose = 6,
    AddImage = 7,
    AddDetections = 8,
    SceneEvent = 9,
}

impl MsgType {
    pub fn from_code(code: u8) -> Option<MsgType> {
        use MsgType::*;
        Some(match code {
            1 => Hello,
            2 => Ack,
            3 => Err,
            4 => GetScene,
            5 => SceneSnapshot,
            6 => SetPose,
            7 => AddImage,
            8 => AddDetections,
            9 => SceneEvent,
            _ => return None,
        })
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

/// A reassembled message: the sender's id, a type code and the raw body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub msg_id: u32,
    pub msg_type: u8,
    pub body: Vec<u8>,
}

impl Message {
    pub fn new(msg_id: u32, t: MsgType, body: Vec<u8>) -> Self {
        Self {
            msg_id,
            msg_type: t.code(),
            body,
        }
    }

    pub fn kind(&self) -> Option<MsgType> {
        MsgType::from_code(self.msg_type)
    }

    /// Fragment into wire datagrams.
    pub fn to_datagrams(&self) -> Result<Vec<Vec<u8>>, EncodeError> {
        Ok(encode(self.msg_id, self.msg_type, &self.body)?
            .iter()
            .map(Frame::to_bytes)
            .collect())
    }

    /// Stream connections carry one message per binary frame:
    /// `[msg_type u8][msg_id u32 BE][body]`.
    pub fn to_stream(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.body.len());
        out.push(self.msg_type);
        out.extend_from_slice(&self.msg_id.to_be_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    pub fn from_stream(b: &[u8]) -> Result<Message, FrameError> {
        if b.len() < 5 {
            return Err(FrameError::Short);
        }
        Ok(Message {
            msg_type: b[0],
            msg_id: u32::from_be_bytes([b[1], b[2], b[3], b[4]]),
            body: b[5..].to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AckBody {
    pub ack: u32,
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrBody {
    pub ack: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetPoseBody {
    pub projector_id: u32,
    pub pose: ProjectorPose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddImageBody {
    pub image: ImageRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<ProjectorPose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddDetectionsBody {
    pub schema_version: u32,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventBody {
    pub revision: u64,
    pub summary: String,
    /// The committed mutation, so a mirror at `revision - 1` can replay it.
    pub mutation: Mutation,
}
