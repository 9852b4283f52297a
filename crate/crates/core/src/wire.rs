//! Datagram codecs for the drone side: ASCII commands, `key:value` telemetry
//! and a binary video stub.
//!
//! Command grammar (one command per datagram, no terminator):
//!
//! ```text
//! "command" | "takeoff" | "land" | "emergency" | "rc <a> <b> <c> <d>" | "battery?"
//! ```
//!
//! Telemetry is `key:value` pairs joined by `;` and terminated by `\r\n`:
//!
//! ```text
//! pitch:0;roll:0;yaw:90;vgx:0;vgy:0;vgz:0;bat:87;h:110;seq:42\r\n
//! ```
//!
//! Video stubs carry a 16-byte big-endian header (`frame_id: u32`,
//! `capture_t: u64` ms, `payload_len: u32`) followed by the payload. A frame
//! larger than one datagram is split into fragments whose payload starts with
//! `index: u16, count: u16` (big-endian).

use std::collections::BTreeMap;

use bytes::{BufMut, Bytes, BytesMut};
use thiserror::Error;

use crate::control::RcCommand;

/// Largest stub payload that fits a single datagram.
pub const MAX_FRAME_PAYLOAD: usize = 1400;
pub const FRAME_HEADER_LEN: usize = 16;
pub const FRAGMENT_HEADER_LEN: usize = 4;
pub const MAX_FRAGMENT_CHUNK: usize = MAX_FRAME_PAYLOAD - FRAGMENT_HEADER_LEN;
/// 2.876 Mbps at 30 fps.
pub const DEFAULT_FRAME_BYTES: usize = 11_983;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("empty datagram")]
    Empty,
    #[error("non-ASCII byte 0x{byte:02x} at offset {offset}")]
    NotAscii { offset: usize, byte: u8 },
    #[error("unknown verb {token:?} at offset {offset}")]
    UnknownVerb { token: String, offset: usize },
    #[error("unexpected token {token:?} at offset {offset}")]
    UnexpectedToken { token: String, offset: usize },
    #[error("rc expects 4 values, got {got}")]
    RcArity { got: usize },
    #[error("invalid integer {token:?} at offset {offset}")]
    BadInteger { token: String, offset: usize },
    #[error("rc value {value} out of [-100, 100] at offset {offset}")]
    RcRange { value: i64, offset: usize },
    #[error("telemetry missing \\r\\n terminator")]
    MissingTerminator,
    #[error("telemetry field {token:?} at offset {offset} is not key:value")]
    MalformedPair { token: String, offset: usize },
    #[error("telemetry key {key:?} repeated at offset {offset}")]
    DuplicateKey { key: String, offset: usize },
    #[error("telemetry missing key {0:?}")]
    MissingKey(&'static str),
    #[error("telemetry value {value} for {key:?} violates {rule}")]
    Invariant { key: &'static str, value: i64, rule: &'static str },
    #[error("frame header truncated: {len} of {FRAME_HEADER_LEN} bytes")]
    Truncated { len: usize },
    #[error("frame declares {declared} payload bytes but carries {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("frame payload of {0} bytes exceeds {MAX_FRAME_PAYLOAD}")]
    Oversize(usize),
    #[error("fragment header invalid: index {index} count {count}")]
    BadFragment { index: u16, count: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryKind {
    Battery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CommandMsg {
    /// `command`: enter SDK mode.
    Enter,
    Takeoff,
    Land,
    Emergency,
    Rc(RcCommand),
    Query(QueryKind),
}

impl CommandMsg {
    pub fn verb(&self) -> &'static str {
        match self {
            CommandMsg::Enter => "command",
            CommandMsg::Takeoff => "takeoff",
            CommandMsg::Land => "land",
            CommandMsg::Emergency => "emergency",
            CommandMsg::Rc(_) => "rc",
            CommandMsg::Query(QueryKind::Battery) => "battery?",
        }
    }
}

pub fn encode_command(msg: &CommandMsg) -> Result<Bytes, WireError> {
    let text = match msg {
        CommandMsg::Rc(rc) => {
            for (i, v) in [rc.a, rc.b, rc.c, rc.d].into_iter().enumerate() {
                if !RcCommand::RANGE.contains(&v) {
                    return Err(WireError::RcRange { value: v as i64, offset: i });
                }
            }
            format!("rc {} {} {} {}", rc.a, rc.b, rc.c, rc.d)
        }
        other => other.verb().to_string(),
    };
    Ok(Bytes::from(text))
}

fn ascii(bytes: &[u8]) -> Result<&str, WireError> {
    if let Some((offset, &byte)) = bytes.iter().enumerate().find(|(_, b)| !b.is_ascii()) {
        return Err(WireError::NotAscii { offset, byte });
    }
    Ok(std::str::from_utf8(bytes).expect("ascii is utf-8"))
}

/// Splits on single spaces, keeping each token's byte offset.
fn tokens(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, ch) in text.char_indices() {
        if ch == ' ' {
            out.push((start, &text[start..i]));
            start = i + 1;
        }
    }
    out.push((start, &text[start..]));
    out
}

pub fn parse_command(bytes: &[u8]) -> Result<CommandMsg, WireError> {
    if bytes.is_empty() {
        return Err(WireError::Empty);
    }
    let text = ascii(bytes)?;
    let toks = tokens(text);
    let (verb_offset, verb) = toks[0];
    let simple = match verb {
        "command" => Some(CommandMsg::Enter),
        "takeoff" => Some(CommandMsg::Takeoff),
        "land" => Some(CommandMsg::Land),
        "emergency" => Some(CommandMsg::Emergency),
        "battery?" => Some(CommandMsg::Query(QueryKind::Battery)),
        "rc" => None,
        _ => return Err(WireError::UnknownVerb { token: verb.to_string(), offset: verb_offset }),
    };
    if let Some(msg) = simple {
        if let Some(&(offset, token)) = toks.get(1) {
            return Err(WireError::UnexpectedToken { token: token.to_string(), offset });
        }
        return Ok(msg);
    }
    let args = &toks[1..];
    if args.len() != 4 {
        return Err(WireError::RcArity { got: args.len() });
    }
    let mut vals = [0i32; 4];
    for (slot, &(offset, token)) in vals.iter_mut().zip(args) {
        let v: i64 = token
            .parse()
            .map_err(|_| WireError::BadInteger { token: token.to_string(), offset })?;
        if !(-100..=100).contains(&v) {
            return Err(WireError::RcRange { value: v, offset });
        }
        *slot = v as i32;
    }
    Ok(CommandMsg::Rc(RcCommand::new(vals[0], vals[1], vals[2], vals[3])))
}

/// The subset of SDK state fields the stack consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TelemetryMsg {
    pub pitch: i32,
    pub roll: i32,
    pub yaw: i32,
    /// dm/s
    pub vgx: i32,
    pub vgy: i32,
    pub vgz: i32,
    pub bat: u8,
    /// cm
    pub h: i32,
    pub seq: u64,
}

const TELEMETRY_KEYS: [&str; 9] = ["pitch", "roll", "yaw", "vgx", "vgy", "vgz", "bat", "h", "seq"];

pub fn encode_telemetry(msg: &TelemetryMsg) -> Result<Bytes, WireError> {
    if msg.bat > 100 {
        return Err(WireError::Invariant { key: "bat", value: msg.bat as i64, rule: "0 <= bat <= 100" });
    }
    let text = format!(
        "pitch:{};roll:{};yaw:{};vgx:{};vgy:{};vgz:{};bat:{};h:{};seq:{}\r\n",
        msg.pitch, msg.roll, msg.yaw, msg.vgx, msg.vgy, msg.vgz, msg.bat, msg.h, msg.seq
    );
    Ok(Bytes::from(text))
}

pub fn parse_telemetry(bytes: &[u8]) -> Result<TelemetryMsg, WireError> {
    if bytes.is_empty() {
        return Err(WireError::Empty);
    }
    let text = ascii(bytes)?;
    let body = text.strip_suffix("\r\n").ok_or(WireError::MissingTerminator)?;
    let mut fields: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    let mut offset = 0;
    for pair in body.split(';') {
        let (key, value) = pair
            .split_once(':')
            .ok_or_else(|| WireError::MalformedPair { token: pair.to_string(), offset })?;
        if fields.insert(key, (offset + key.len() + 1, value)).is_some() {
            return Err(WireError::DuplicateKey { key: key.to_string(), offset });
        }
        offset += pair.len() + 1;
    }

    let int = |key: &'static str| -> Result<i64, WireError> {
        let &(offset, token) = fields.get(key).ok_or(WireError::MissingKey(key))?;
        token.parse().map_err(|_| WireError::BadInteger { token: token.to_string(), offset })
    };
    let small = |key: &'static str| -> Result<i32, WireError> {
        let v = int(key)?;
        i32::try_from(v).map_err(|_| WireError::Invariant { key, value: v, rule: "fits in i32" })
    };
    // report the first missing key in canonical order
    for key in TELEMETRY_KEYS {
        if !fields.contains_key(key) {
            return Err(WireError::MissingKey(key));
        }
    }
    let bat = int("bat")?;
    if !(0..=100).contains(&bat) {
        return Err(WireError::Invariant { key: "bat", value: bat, rule: "0 <= bat <= 100" });
    }
    let seq = {
        let &(offset, token) = fields.get("seq").ok_or(WireError::MissingKey("seq"))?;
        match token.parse::<u64>() {
            Ok(v) => v,
            Err(_) => match token.parse::<i64>() {
                Ok(v) => return Err(WireError::Invariant { key: "seq", value: v, rule: "seq >= 0" }),
                Err(_) => return Err(WireError::BadInteger { token: token.to_string(), offset }),
            },
        }
    };
    Ok(TelemetryMsg {
        pitch: small("pitch")?,
        roll: small("roll")?,
        yaw: small("yaw")?,
        vgx: small("vgx")?,
        vgy: small("vgy")?,
        vgz: small("vgz")?,
        bat: bat as u8,
        h: small("h")?,
        seq,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameStub {
    pub frame_id: u32,
    /// Capture time in milliseconds of simulation clock.
    pub capture_t: u64,
    pub payload: Bytes,
}

impl FrameStub {
    pub fn payload_len(&self) -> usize {
        self.payload.len()
    }
}

pub fn encode_frame(stub: &FrameStub) -> Result<Bytes, WireError> {
    if stub.payload.len() > MAX_FRAME_PAYLOAD {
        return Err(WireError::Oversize(stub.payload.len()));
    }
    let mut buf = BytesMut::with_capacity(FRAME_HEADER_LEN + stub.payload.len());
    buf.put_u32(stub.frame_id);
    buf.put_u64(stub.capture_t);
    buf.put_u32(stub.payload.len() as u32);
    buf.put_slice(&stub.payload);
    Ok(buf.freeze())
}

pub fn parse_frame(bytes: &[u8]) -> Result<FrameStub, WireError> {
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(WireError::Truncated { len: bytes.len() });
    }
    let frame_id = u32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes"));
    let capture_t = u64::from_be_bytes(bytes[4..12].try_into().expect("8 bytes"));
    let declared = u32::from_be_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let actual = bytes.len() - FRAME_HEADER_LEN;
    if declared != actual {
        return Err(WireError::LengthMismatch { declared, actual });
    }
    if declared > MAX_FRAME_PAYLOAD {
        return Err(WireError::Oversize(declared));
    }
    Ok(FrameStub { frame_id, capture_t, payload: Bytes::copy_from_slice(&bytes[FRAME_HEADER_LEN..]) })
}

/// One datagram-sized piece of a larger video frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoFragment {
    pub frame_id: u32,
    pub capture_t: u64,
    pub index: u16,
    pub count: u16,
    pub chunk: Bytes,
}

impl VideoFragment {
    pub fn to_stub(&self) -> FrameStub {
        let mut payload = BytesMut::with_capacity(FRAGMENT_HEADER_LEN + self.chunk.len());
        payload.put_u16(self.index);
        payload.put_u16(self.count);
        payload.put_slice(&self.chunk);
        FrameStub { frame_id: self.frame_id, capture_t: self.capture_t, payload: payload.freeze() }
    }

    pub fn from_stub(stub: &FrameStub) -> Result<Self, WireError> {
        if stub.payload.len() < FRAGMENT_HEADER_LEN {
            return Err(WireError::Truncated { len: stub.payload.len() });
        }
        let index = u16::from_be_bytes([stub.payload[0], stub.payload[1]]);
        let count = u16::from_be_bytes([stub.payload[2], stub.payload[3]]);
        if count == 0 || index >= count {
            return Err(WireError::BadFragment { index, count });
        }
        Ok(Self {
            frame_id: stub.frame_id,
            capture_t: stub.capture_t,
            index,
            count,
            chunk: stub.payload.slice(FRAGMENT_HEADER_LEN..),
        })
    }
}

/// Splits `payload` into fragments of at most [`MAX_FRAGMENT_CHUNK`] bytes.
pub fn fragment_frame(frame_id: u32, capture_t: u64, payload: &Bytes) -> Vec<VideoFragment> {
    let count = payload.len().div_ceil(MAX_FRAGMENT_CHUNK).max(1);
    (0..count)
        .map(|i| {
            let start = i * MAX_FRAGMENT_CHUNK;
            let end = (start + MAX_FRAGMENT_CHUNK).min(payload.len());
            VideoFragment {
                frame_id,
                capture_t,
                index: i as u16,
                count: count as u16,
                chunk: payload.slice(start..end),
            }
        })
        .collect()
}

/// A frame whose fragments have all arrived.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompleteFrame {
    pub frame_id: u32,
    pub capture_t: u64,
    pub payload_len: usize,
}

/// Collects fragments per frame; frames more than `window` ids behind the newest are discarded.
#[derive(Debug, Clone)]
pub struct FrameAssembler {
    window: u32,
    partial: BTreeMap<u32, Partial>,
    newest: Option<u32>,
}

#[derive(Debug, Clone)]
struct Partial {
    capture_t: u64,
    count: u16,
    seen: Vec<bool>,
    received: u16,
    bytes: usize,
}

impl Default for FrameAssembler {
    fn default() -> Self {
        Self::new(8)
    }
}

impl FrameAssembler {
    pub fn new(window: u32) -> Self {
        Self { window, partial: BTreeMap::new(), newest: None }
    }

    pub fn push(&mut self, frag: &VideoFragment) -> Option<CompleteFrame> {
        let newest = self.newest.map_or(frag.frame_id, |n| n.max(frag.frame_id));
        self.newest = Some(newest);
        let cutoff = newest.saturating_sub(self.window);
        if frag.frame_id < cutoff {
            return None;
        }
        self.partial = self.partial.split_off(&cutoff);
        let entry = self.partial.entry(frag.frame_id).or_insert_with(|| Partial {
            capture_t: frag.capture_t,
            count: frag.count,
            seen: vec![false; frag.count as usize],
            received: 0,
            bytes: 0,
        });
        if frag.count != entry.count || entry.seen[frag.index as usize] {
            return None;
        }
        entry.seen[frag.index as usize] = true;
        entry.received += 1;
        entry.bytes += frag.chunk.len();
        if entry.received == entry.count {
            let done = self.partial.remove(&frag.frame_id).expect("present");
            return Some(CompleteFrame { frame_id: frag.frame_id, capture_t: done.capture_t, payload_len: done.bytes });
        }
        None
    }
}
