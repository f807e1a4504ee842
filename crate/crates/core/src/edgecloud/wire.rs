//! Binary wire protocol for the guidance link.
//!
//! Frame: magic "FACT", version byte (1), message type byte, 4-byte
//! big-endian payload length, payload. All multi-byte integers are
//! big-endian; images travel as raw RGB (`goal_flag` doubles as the
//! compression indicator and must be 0 or 1 in v1). The decoder never
//! reads past the declared frame and maps every malformed input to a
//! typed error.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

use crate::domain::{Decision, Image, Observation};

pub const MAGIC: [u8; 4] = *b"FACT";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
/// Upper bound on a single frame's payload; anything larger is rejected
/// before allocation.
pub const MAX_PAYLOAD: u32 = 1 << 26;

pub const TYPE_HELLO: u8 = 1;
pub const TYPE_OBS: u8 = 2;
pub const TYPE_GUIDE: u8 = 3;
pub const TYPE_BYE: u8 = 4;
pub const TYPE_ERR: u8 = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown message type {0}")]
    BadType(u8),
    #[error("frame truncated")]
    Truncated,
    #[error("payload length {declared} does not match content ({detail})")]
    LengthMismatch { declared: u32, detail: &'static str },
    #[error("bad decision code {0}")]
    BadDecisionCode(u8),
    #[error("declared payload {0} exceeds the {MAX_PAYLOAD}-byte cap")]
    FrameTooLarge(u32),
    #[error("text field is not valid UTF-8")]
    BadText,
    #[error("image field is malformed")]
    BadImage,
    #[error("unknown optional block tag {0}")]
    BadBlockTag(u8),
    #[error("bad goal flag {0}")]
    BadGoalFlag(u8),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for WireError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            WireError::Truncated
        } else {
            WireError::Io(e.to_string())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HelloPayload {
    pub session_id: u64,
    pub task: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObsPayload {
    pub session_id: u64,
    pub step_index: u32,
    /// camera_id -> image, encoded in ascending id order.
    pub cameras: BTreeMap<u8, Image>,
    pub proprio: Vec<f64>,
    /// Serialized symbolic scene; simulation mode only.
    pub scene_digest: Option<Vec<u8>>,
}

impl ObsPayload {
    pub fn from_observation(session_id: u64, obs: &Observation, digest: Option<Vec<u8>>) -> Self {
        Self {
            session_id,
            step_index: obs.step_index,
            cameras: obs.cameras.clone(),
            proprio: obs.proprio.clone(),
            scene_digest: digest,
        }
    }

    pub fn to_observation(&self) -> Observation {
        Observation {
            step_index: self.step_index,
            timestamp_ms: 0,
            cameras: self.cameras.clone(),
            proprio: self.proprio.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidePayload {
    pub session_id: u64,
    pub plan_step: u32,
    pub decision: Decision,
    pub subtask_text: String,
    pub goal_image: Option<Image>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrPayload {
    pub session_id: u64,
    pub code: u8,
    pub detail: String,
}

pub const ERR_UNKNOWN_SESSION: u8 = 1;
pub const ERR_PROTOCOL: u8 = 2;
pub const ERR_SESSION_STATE: u8 = 3;
pub const ERR_INTERNAL: u8 = 4;

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Hello(HelloPayload),
    Obs(ObsPayload),
    Guide(GuidePayload),
    Bye { session_id: u64 },
    Err(ErrPayload),
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn text16(&mut self, s: &str) {
        debug_assert!(s.len() <= u16::MAX as usize, "text fields are bounded");
        self.u16(s.len() as u16);
        self.bytes(s.as_bytes());
    }

    fn image(&mut self, img: &Image) {
        self.u16(img.width());
        self.u16(img.height());
        self.bytes(img.data());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    declared: u32,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], declared: u32) -> Self {
        Self { buf, pos: 0, declared }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.pos + n > self.buf.len() {
            return Err(WireError::LengthMismatch {
                declared: self.declared,
                detail: "field runs past payload end",
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("len 2")))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("len 4")))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("len 8")))
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_be_bytes(self.take(8)?.try_into().expect("len 8")))
    }

    fn text16(&mut self) -> Result<String, WireError> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| WireError::BadText)
    }

    fn image(&mut self) -> Result<Image, WireError> {
        let w = self.u16()?;
        let h = self.u16()?;
        if w == 0 || h == 0 {
            return Err(WireError::BadImage);
        }
        let n = w as usize * h as usize * Image::CHANNELS;
        let data = self.take(n)?.to_vec();
        Image::new(w, h, data).map_err(|_| WireError::BadImage)
    }

    fn exhausted(&self) -> Result<(), WireError> {
        if self.pos != self.buf.len() {
            return Err(WireError::LengthMismatch {
                declared: self.declared,
                detail: "trailing bytes inside payload",
            });
        }
        Ok(())
    }
}

const DIGEST_TAG: u8 = 1;

fn encode_payload(msg: &Message) -> (u8, Vec<u8>) {
    let mut w = Writer::new();
    let msg_type = match msg {
        Message::Hello(h) => {
            w.u64(h.session_id);
            w.text16(&h.task);
            TYPE_HELLO
        }
        Message::Obs(o) => {
            w.u64(o.session_id);
            w.u32(o.step_index);
            w.u8(o.cameras.len() as u8);
            for (id, img) in &o.cameras {
                w.u8(*id);
                w.image(img);
            }
            w.u16(o.proprio.len() as u16);
            for v in &o.proprio {
                w.bytes(&v.to_be_bytes());
            }
            if let Some(d) = &o.scene_digest {
                w.u8(DIGEST_TAG);
                w.u32(d.len() as u32);
                w.bytes(d);
            }
            TYPE_OBS
        }
        Message::Guide(g) => {
            w.u64(g.session_id);
            w.u32(g.plan_step);
            w.u8(g.decision.code());
            w.text16(&g.subtask_text);
            match &g.goal_image {
                Some(img) => {
                    w.u8(1);
                    w.image(img);
                }
                None => w.u8(0),
            }
            TYPE_GUIDE
        }
        Message::Bye { session_id } => {
            w.u64(*session_id);
            TYPE_BYE
        }
        Message::Err(e) => {
            w.u64(e.session_id);
            w.u8(e.code);
            w.text16(&e.detail);
            TYPE_ERR
        }
    };
    (msg_type, w.buf)
}

/// Serializes a message into one complete frame.
pub fn encode(msg: &Message) -> Vec<u8> {
    let (msg_type, payload) = encode_payload(msg);
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg_type);
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    out
}

fn decode_payload(msg_type: u8, payload: &[u8], declared: u32) -> Result<Message, WireError> {
    let mut r = Reader::new(payload, declared);
    let msg = match msg_type {
        TYPE_HELLO => {
            let session_id = r.u64()?;
            let task = r.text16()?;
            Message::Hello(HelloPayload { session_id, task })
        }
        TYPE_OBS => {
            let session_id = r.u64()?;
            let step_index = r.u32()?;
            let camera_count = r.u8()?;
            let mut cameras = BTreeMap::new();
            for _ in 0..camera_count {
                let id = r.u8()?;
                let img = r.image()?;
                cameras.insert(id, img);
            }
            let proprio_len = r.u16()? as usize;
            let mut proprio = Vec::with_capacity(proprio_len);
            for _ in 0..proprio_len {
                proprio.push(r.f64()?);
            }
            let scene_digest = if r.pos < r.buf.len() {
                let tag = r.u8()?;
                if tag != DIGEST_TAG {
                    return Err(WireError::BadBlockTag(tag));
                }
                let len = r.u32()? as usize;
                Some(r.take(len)?.to_vec())
            } else {
                None
            };
            Message::Obs(ObsPayload { session_id, step_index, cameras, proprio, scene_digest })
        }
        TYPE_GUIDE => {
            let session_id = r.u64()?;
            let plan_step = r.u32()?;
            let code = r.u8()?;
            let decision = Decision::from_code(code).ok_or(WireError::BadDecisionCode(code))?;
            let subtask_text = r.text16()?;
            let goal_image = match r.u8()? {
                0 => None,
                1 => Some(r.image()?),
                other => return Err(WireError::BadGoalFlag(other)),
            };
            Message::Guide(GuidePayload { session_id, plan_step, decision, subtask_text, goal_image })
        }
        TYPE_BYE => Message::Bye { session_id: r.u64()? },
        TYPE_ERR => {
            let session_id = r.u64()?;
            let code = r.u8()?;
            let detail = r.text16()?;
            Message::Err(ErrPayload { session_id, code, detail })
        }
        other => return Err(WireError::BadType(other)),
    };
    r.exhausted()?;
    Ok(msg)
}

/// Decodes one frame from the front of `bytes`, returning the message
/// and the number of bytes consumed. Never touches bytes beyond the
/// declared frame.
pub fn decode_frame(bytes: &[u8]) -> Result<(Message, usize), WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated);
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("len 4");
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(WireError::BadVersion(bytes[4]));
    }
    let msg_type = bytes[5];
    let payload_len = u32::from_be_bytes(bytes[6..10].try_into().expect("len 4"));
    if payload_len > MAX_PAYLOAD {
        return Err(WireError::FrameTooLarge(payload_len));
    }
    let end = HEADER_LEN + payload_len as usize;
    if bytes.len() < end {
        return Err(WireError::Truncated);
    }
    let msg = decode_payload(msg_type, &bytes[HEADER_LEN..end], payload_len)?;
    Ok((msg, end))
}

/// Decodes exactly one frame and rejects trailing garbage.
pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
    let (msg, consumed) = decode_frame(bytes)?;
    if consumed != bytes.len() {
        return Err(WireError::LengthMismatch {
            declared: (bytes.len() - HEADER_LEN) as u32,
            detail: "trailing bytes after frame",
        });
    }
    Ok(msg)
}

/// Reads one frame from a byte stream.
pub fn read_message<R: Read>(reader: &mut R) -> Result<Message, WireError> {
    let mut header = [0u8; HEADER_LEN];
    reader.read_exact(&mut header)?;
    let magic: [u8; 4] = header[0..4].try_into().expect("len 4");
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if header[4] != VERSION {
        return Err(WireError::BadVersion(header[4]));
    }
    let payload_len = u32::from_be_bytes(header[6..10].try_into().expect("len 4"));
    if payload_len > MAX_PAYLOAD {
        return Err(WireError::FrameTooLarge(payload_len));
    }
    let mut payload = vec![0u8; payload_len as usize];
    reader.read_exact(&mut payload)?;
    decode_payload(header[5], &payload, payload_len)
}

/// Writes one frame to a byte stream.
pub fn write_message<W: Write>(writer: &mut W, msg: &Message) -> Result<(), WireError> {
    writer.write_all(&encode(msg))?;
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Decision;

    fn sample_image() -> Image {
        Image::new(2, 2, vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12]).unwrap()
    }

    fn sample_messages() -> Vec<Message> {
        vec![
            Message::Hello(HelloPayload { session_id: 7, task: "clean the table".into() }),
            Message::Obs(ObsPayload {
                session_id: 7,
                step_index: 3,
                cameras: [(0u8, sample_image()), (1u8, sample_image())].into_iter().collect(),
                proprio: vec![0.25, -1.5, 3.0],
                scene_digest: Some(vec![9, 8, 7]),
            }),
            Message::Obs(ObsPayload {
                session_id: 7,
                step_index: 4,
                cameras: [(0u8, sample_image())].into_iter().collect(),
                proprio: vec![],
                scene_digest: None,
            }),
            Message::Guide(GuidePayload {
                session_id: 7,
                plan_step: 2,
                decision: Decision::Advance,
                subtask_text: "pick up the red block".into(),
                goal_image: Some(sample_image()),
            }),
            Message::Guide(GuidePayload {
                session_id: 7,
                plan_step: 5,
                decision: Decision::Done,
                subtask_text: String::new(),
                goal_image: None,
            }),
            Message::Bye { session_id: 7 },
            Message::Err(ErrPayload { session_id: 7, code: ERR_UNKNOWN_SESSION, detail: "no such session".into() }),
        ]
    }

    #[test]
    fn round_trip_all_message_kinds() {
        for msg in sample_messages() {
            let bytes = encode(&msg);
            assert_eq!(decode(&bytes).unwrap(), msg, "{msg:?}");
        }
    }

    #[test]
    fn minimal_done_guide_frame_layout() {
        let msg = Message::Guide(GuidePayload {
            session_id: 1,
            plan_step: 9,
            decision: Decision::Done,
            subtask_text: String::new(),
            goal_image: None,
        });
        let bytes = encode(&msg);
        // header + session(8) + plan_step(4) + decision(1) + text_len(2) + goal_flag(1)
        assert_eq!(bytes.len(), HEADER_LEN + 16);
        assert_eq!(&bytes[0..4], b"FACT");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], TYPE_GUIDE);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = encode(&Message::Bye { session_id: 1 });
        bytes[2] = b'K'; // "FAKT"
        assert_eq!(decode(&bytes).unwrap_err(), WireError::BadMagic(*b"FAKT"));
    }

    #[test]
    fn bad_version_and_type_are_rejected() {
        let mut bytes = encode(&Message::Bye { session_id: 1 });
        bytes[4] = 9;
        assert_eq!(decode(&bytes).unwrap_err(), WireError::BadVersion(9));
        let mut bytes = encode(&Message::Bye { session_id: 1 });
        bytes[5] = 77;
        assert_eq!(decode(&bytes).unwrap_err(), WireError::BadType(77));
    }

    #[test]
    fn truncation_and_length_mismatch_are_distinct() {
        let bytes = encode(&Message::Bye { session_id: 1 });
        assert_eq!(decode(&bytes[..5]).unwrap_err(), WireError::Truncated);
        assert_eq!(decode(&bytes[..bytes.len() - 1]).unwrap_err(), WireError::Truncated);
        // declared payload longer than content
        let mut long = bytes.clone();
        long[9] += 4;
        assert_eq!(decode(&long).unwrap_err(), WireError::Truncated);
        // extra bytes inside the declared payload
        let mut padded = encode(&Message::Bye { session_id: 1 });
        padded[9] += 1;
        padded.push(0);
        assert!(matches!(decode(&padded).unwrap_err(), WireError::LengthMismatch { .. }));
    }

    #[test]
    fn bad_decision_code_is_rejected() {
        let msg = Message::Guide(GuidePayload {
            session_id: 1,
            plan_step: 0,
            decision: Decision::Continue,
            subtask_text: String::new(),
            goal_image: None,
        });
        let mut bytes = encode(&msg);
        bytes[HEADER_LEN + 12] = 7; // decision byte
        assert_eq!(decode(&bytes).unwrap_err(), WireError::BadDecisionCode(7));
    }

    #[test]
    fn oversized_frames_are_rejected_before_allocation() {
        let mut bytes = encode(&Message::Bye { session_id: 1 });
        bytes[6..10].copy_from_slice(&u32::MAX.to_be_bytes());
        assert_eq!(decode(&bytes).unwrap_err(), WireError::FrameTooLarge(u32::MAX));
    }

    #[test]
    fn decode_frame_ignores_bytes_after_the_frame() {
        let msg = Message::Bye { session_id: 3 };
        let mut bytes = encode(&msg);
        let frame_len = bytes.len();
        bytes.extend_from_slice(b"garbage after the frame");
        let (decoded, consumed) = decode_frame(&bytes).unwrap();
        assert_eq!(decoded, msg);
        assert_eq!(consumed, frame_len);
    }

    #[test]
    fn stream_io_round_trips() {
        let msgs = sample_messages();
        let mut buf = Vec::new();
        for m in &msgs {
            write_message(&mut buf, m).unwrap();
        }
        let mut cursor = std::io::Cursor::new(buf);
        for m in &msgs {
            assert_eq!(&read_message(&mut cursor).unwrap(), m);
        }
        assert_eq!(read_message(&mut cursor).unwrap_err(), WireError::Truncated);
    }
}
