//! The IDRD framed protocol spoken with super-resolution / metric backends.
//!
//! Every frame is
//!
//! ```text
//! magic "IDRD" (4) | version u16 LE | kind u16 LE | payload length u32 LE | payload
//! ```
//!
//! with kinds 1 = HELLO, 2 = UPSCALE_REQ, 3 = UPSCALE_RESP, 4 = METRIC_REQ,
//! 5 = METRIC_RESP, 6 = ERROR. Payload layouts (all integers little endian):
//!
//! * raster: `height u32 | width u32 | channels u8 | h*w*c f32 samples`, row-major, interleaved
//! * HELLO: UTF-8 JSON object (see [`Hello`])
//! * UPSCALE_REQ: `raster | factor u16 | n_samples u16 | seed u64 | id_len u32 | id UTF-8`
//! * UPSCALE_RESP: `sample index u16 (1-based) | raster`, one frame per sample
//! * METRIC_REQ: `name_len u16 | name UTF-8 | pair count u32 | (raster, raster) * count`
//! * METRIC_RESP: `count u32 | f64 * count`
//! * ERROR: `code u16 | message UTF-8`
//!
//! The client opens with HELLO and the server answers with its own HELLO
//! declaring capabilities. After that, requests are answered in order, one
//! in flight per connection.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Raster;

pub const MAGIC: [u8; 4] = *b"IDRD";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 12;
/// Upper bound on a single payload; larger length fields are rejected unread.
pub const MAX_PAYLOAD: u32 = 1 << 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u16)]
pub enum FrameKind {
    Hello = 1,
    UpscaleReq = 2,
    UpscaleResp = 3,
    MetricReq = 4,
    MetricResp = 5,
    Error = 6,
}

impl FrameKind {
    pub fn from_u16(v: u16) -> Option<Self> {
        Some(match v {
            1 => FrameKind::Hello,
            2 => FrameKind::UpscaleReq,
            3 => FrameKind::UpscaleResp,
            4 => FrameKind::MetricReq,
            5 => FrameKind::MetricResp,
            6 => FrameKind::Error,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            FrameKind::Hello => "HELLO",
            FrameKind::UpscaleReq => "UPSCALE_REQ",
            FrameKind::UpscaleResp => "UPSCALE_RESP",
            FrameKind::MetricReq => "METRIC_REQ",
            FrameKind::MetricResp => "METRIC_RESP",
            FrameKind::Error => "ERROR",
        }
    }
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown frame kind {0}")]
    UnknownKind(u16),
    #[error("payload length {0} exceeds limit")]
    Oversize(u32),
    #[error("stream ended inside a frame")]
    Truncated,
    #[error("connection closed")]
    Closed,
    #[error("malformed {kind} payload: {message}")]
    Malformed { kind: &'static str, message: String },
    #[error("expected {expected} frame, got {got}")]
    UnexpectedKind {
        expected: &'static str,
        got: &'static str,
    },
    #[error("backend error {code}: {message}")]
    Remote { code: u16, message: String },
    #[error("capability not declared by backend: {0}")]
    Capability(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl ProtocolError {
    fn malformed(kind: FrameKind, message: impl Into<String>) -> Self {
        ProtocolError::Malformed {
            kind: kind.name(),
            message: message.into(),
        }
    }
}

type PResult<T> = std::result::Result<T, ProtocolError>;

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameKind, payload: Vec<u8>) -> Self {
        Frame { kind, payload }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.kind as u16).to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> PResult<()> {
        w.write_all(&self.to_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| ProtocolError::Io(e.to_string()))
    }

    /// Reads one frame. A clean end of stream before any header byte is `Closed`.
    pub fn read_from(r: &mut impl Read) -> PResult<Frame> {
        let mut header = [0u8; HEADER_LEN];
        let mut filled = 0;
        while filled < HEADER_LEN {
            match r.read(&mut header[filled..]) {
                Ok(0) if filled == 0 => return Err(ProtocolError::Closed),
                Ok(0) => return Err(ProtocolError::Truncated),
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(ProtocolError::Io(e.to_string())),
            }
        }
        let magic: [u8; 4] = header[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(ProtocolError::BadMagic(magic));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != VERSION {
            return Err(ProtocolError::UnsupportedVersion(version));
        }
        let raw_kind = u16::from_le_bytes([header[6], header[7]]);
        let kind = FrameKind::from_u16(raw_kind).ok_or(ProtocolError::UnknownKind(raw_kind))?;
        let len = u32::from_le_bytes(header[8..12].try_into().unwrap());
        if len > MAX_PAYLOAD {
            return Err(ProtocolError::Oversize(len));
        }
        let mut payload = Vec::new();
        let got = r
            .take(len as u64)
            .read_to_end(&mut payload)
            .map_err(|e| ProtocolError::Io(e.to_string()))?;
        if got < len as usize {
            return Err(ProtocolError::Truncated);
        }
        Ok(Frame { kind, payload })
    }
}

struct Cursor<'a> {
    kind: FrameKind,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(kind: FrameKind, buf: &'a [u8]) -> Self {
        Cursor { kind, buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> PResult<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                ProtocolError::malformed(
                    self.kind,
                    format!("need {n} bytes at offset {}, have {}", self.pos, self.buf.len() - self.pos),
                )
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> PResult<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> PResult<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> PResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> PResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> PResult<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn utf8(&mut self, n: usize) -> PResult<String> {
        let kind = self.kind;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| ProtocolError::malformed(kind, "invalid UTF-8"))
    }

    fn raster(&mut self) -> PResult<Raster> {
        let h = self.u32()? as usize;
        let w = self.u32()? as usize;
        let c = self.u8()? as usize;
        if h == 0 || w == 0 || !matches!(c, 1 | 3) {
            return Err(ProtocolError::malformed(
                self.kind,
                format!("bad raster header {h}x{w}x{c}"),
            ));
        }
        let n = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(c))
            .filter(|&v| v.checked_mul(4).is_some())
            .ok_or_else(|| ProtocolError::malformed(self.kind, "raster size overflow"))?;
        let bytes = self.take(n * 4)?;
        let mut data = Vec::with_capacity(n);
        for chunk in bytes.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(ProtocolError::malformed(self.kind, "non-finite sample"));
            }
            data.push(v);
        }
        Ok(Raster::from_clipped(h, w, c, data))
    }

    fn finish(&self) -> PResult<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(ProtocolError::malformed(
                self.kind,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ))
        }
    }
}

pub fn put_raster(out: &mut Vec<u8>, img: &Raster) {
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    out.push(img.channels() as u8);
    for v in img.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Capability declaration exchanged in HELLO frames.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub role: String,
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default)]
    pub factors: Vec<u16>,
    #[serde(default)]
    pub metrics: Vec<String>,
    /// Model / backbone tags, e.g. `{"lpips_backbone": "alex"}`.
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
    /// Free-form backend metadata (optimizer knobs and the like).
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl Hello {
    pub fn client() -> Self {
        Hello {
            role: "client".into(),
            meta: [(
                "client".to_string(),
                serde_json::Value::String(format!("idard {}", env!("CARGO_PKG_VERSION"))),
            )]
            .into_iter()
            .collect(),
            ..Hello::default()
        }
    }

    pub fn encode(&self) -> Frame {
        Frame::new(FrameKind::Hello, serde_json::to_vec(self).expect("hello serializes"))
    }

    pub fn decode(frame: &Frame) -> PResult<Hello> {
        expect_kind(frame, FrameKind::Hello)?;
        serde_json::from_slice(&frame.payload)
            .map_err(|e| ProtocolError::malformed(FrameKind::Hello, e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpscaleRequest {
    pub lr: Raster,
    pub factor: u16,
    pub n_samples: u16,
    pub seed: u64,
    pub image_id: String,
}

impl UpscaleRequest {
    pub fn encode(&self) -> Frame {
        let mut p = Vec::new();
        put_raster(&mut p, &self.lr);
        p.extend_from_slice(&self.factor.to_le_bytes());
        p.extend_from_slice(&self.n_samples.to_le_bytes());
        p.extend_from_slice(&self.seed.to_le_bytes());
        p.extend_from_slice(&(self.image_id.len() as u32).to_le_bytes());
        p.extend_from_slice(self.image_id.as_bytes());
        Frame::new(FrameKind::UpscaleReq, p)
    }

    pub fn decode(frame: &Frame) -> PResult<Self> {
        expect_kind(frame, FrameKind::UpscaleReq)?;
        let mut c = Cursor::new(FrameKind::UpscaleReq, &frame.payload);
        let lr = c.raster()?;
        let factor = c.u16()?;
        let n_samples = c.u16()?;
        let seed = c.u64()?;
        let id_len = c.u32()? as usize;
        let image_id = c.utf8(id_len)?;
        c.finish()?;
        if factor == 0 {
            return Err(ProtocolError::malformed(FrameKind::UpscaleReq, "factor 0"));
        }
        Ok(UpscaleRequest {
            lr,
            factor,
            n_samples,
            seed,
            image_id,
        })
    }
}

pub fn encode_upscale_response(index: u16, img: &Raster) -> Frame {
    let mut p = index.to_le_bytes().to_vec();
    put_raster(&mut p, img);
    Frame::new(FrameKind::UpscaleResp, p)
}

pub fn decode_upscale_response(frame: &Frame) -> PResult<(u16, Raster)> {
    expect_kind(frame, FrameKind::UpscaleResp)?;
    let mut c = Cursor::new(FrameKind::UpscaleResp, &frame.payload);
    let index = c.u16()?;
    let img = c.raster()?;
    c.finish()?;
    Ok((index, img))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRequest {
    pub metric: String,
    pub pairs: Vec<(Raster, Raster)>,
}

impl MetricRequest {
    pub fn encode(&self) -> Frame {
        let mut p = Vec::new();
        p.extend_from_slice(&(self.metric.len() as u16).to_le_bytes());
        p.extend_from_slice(self.metric.as_bytes());
        p.extend_from_slice(&(self.pairs.len() as u32).to_le_bytes());
        for (a, b) in &self.pairs {
            put_raster(&mut p, a);
            put_raster(&mut p, b);
        }
        Frame::new(FrameKind::MetricReq, p)
    }

    pub fn decode(frame: &Frame) -> PResult<Self> {
        expect_kind(frame, FrameKind::MetricReq)?;
        let mut c = Cursor::new(FrameKind::MetricReq, &frame.payload);
        let name_len = c.u16()? as usize;
        let metric = c.utf8(name_len)?;
        let count = c.u32()? as usize;
        let mut pairs = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let a = c.raster()?;
            let b = c.raster()?;
            if !a.same_shape(&b) {
                return Err(ProtocolError::malformed(FrameKind::MetricReq, "pair shapes differ"));
            }
            pairs.push((a, b));
        }
        c.finish()?;
        Ok(MetricRequest { metric, pairs })
    }
}

pub fn encode_metric_response(values: &[f64]) -> Frame {
    let mut p = (values.len() as u32).to_le_bytes().to_vec();
    for v in values {
        p.extend_from_slice(&v.to_le_bytes());
    }
    Frame::new(FrameKind::MetricResp, p)
}

pub fn decode_metric_response(frame: &Frame) -> PResult<Vec<f64>> {
    expect_kind(frame, FrameKind::MetricResp)?;
    let mut c = Cursor::new(FrameKind::MetricResp, &frame.payload);
    let n = c.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let v = c.f64()?;
        if !v.is_finite() {
            return Err(ProtocolError::malformed(FrameKind::MetricResp, "non-finite value"));
        }
        out.push(v);
    }
    c.finish()?;
    Ok(out)
}

pub fn encode_error(code: u16, message: &str) -> Frame {
    let mut p = code.to_le_bytes().to_vec();
    p.extend_from_slice(message.as_bytes());
    Frame::new(FrameKind::Error, p)
}

pub fn decode_error(frame: &Frame) -> PResult<(u16, String)> {
    expect_kind(frame, FrameKind::Error)?;
    let mut c = Cursor::new(FrameKind::Error, &frame.payload);
    let code = c.u16()?;
    let rest = frame.payload.len() - 2;
    Ok((code, c.utf8(rest)?))
}

fn expect_kind(frame: &Frame, kind: FrameKind) -> PResult<()> {
    if frame.kind == kind {
        return Ok(());
    }
    if frame.kind == FrameKind::Error {
        let (code, message) = decode_error(frame)?;
        return Err(ProtocolError::Remote { code, message });
    }
    Err(ProtocolError::UnexpectedKind {
        expected: kind.name(),
        got: frame.kind.name(),
    })
}

/// How to reach a backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transport", rename_all = "lowercase")]
pub enum Endpoint {
    /// Spawn `command` (run through `sh -c`) and speak over its stdin/stdout.
    Stdio { command: String },
    /// Connect to a long-lived server.
    Tcp {
        address: String,
        #[serde(default)]
        timeout_secs: Option<u64>,
    },
}

impl Endpoint {
    /// Parses `stdio:<command>` or `tcp:<host:port>`.
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(cmd) = s.strip_prefix("stdio:") {
            Ok(Endpoint::Stdio {
                command: cmd.to_string(),
            })
        } else if let Some(addr) = s.strip_prefix("tcp:") {
            Ok(Endpoint::Tcp {
                address: addr.to_string(),
                timeout_secs: None,
            })
        } else {
            Err(Error::Config(format!(
                "endpoint `{s}` must start with `stdio:` or `tcp:`"
            )))
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Stdio { command } => write!(f, "stdio:{command}"),
            Endpoint::Tcp { address, .. } => write!(f, "tcp:{address}"),
        }
    }
}

struct Connection {
    reader: Box<dyn Read + Send>,
    writer: Option<Box<dyn Write + Send>>,
    child: Option<Child>,
    broken: bool,
}

impl Connection {
    fn send(&mut self, frame: &Frame) -> PResult<()> {
        if self.broken {
            return Err(ProtocolError::Closed);
        }
        let w = self.writer.as_mut().ok_or(ProtocolError::Closed)?;
        frame.write_to(w).inspect_err(|_| self.broken = true)
    }

    fn recv(&mut self) -> PResult<Frame> {
        if self.broken {
            return Err(ProtocolError::Closed);
        }
        Frame::read_from(&mut self.reader).inspect_err(|_| self.broken = true)
    }

    fn close(&mut self) {
        self.broken = true;
        self.writer = None;
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.writer = None;
        if let Some(mut child) = self.child.take() {
            for _ in 0..20 {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A connected, handshaken backend. Requests are serialized per connection.
pub struct Backend {
    endpoint: String,
    caps: Hello,
    conn: Mutex<Connection>,
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backend")
            .field("endpoint", &self.endpoint)
            .field("caps", &self.caps)
            .finish()
    }
}

impl Backend {
    pub fn connect(endpoint: &Endpoint) -> Result<Backend> {
        let name = endpoint.to_string();
        let unavailable = |e: io::Error| Error::BackendUnavailable {
            endpoint: name.clone(),
            message: e.to_string(),
        };
        match endpoint {
            Endpoint::Stdio { command } => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(command)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(unavailable)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                let conn = Connection {
                    reader: Box::new(BufReader::new(stdout)),
                    writer: Some(Box::new(BufWriter::new(stdin))),
                    child: Some(child),
                    broken: false,
                };
                Backend::handshake(name, conn)
            }
            Endpoint::Tcp {
                address,
                timeout_secs,
            } => {
                let stream = TcpStream::connect(address).map_err(unavailable)?;
                let timeout = timeout_secs.map(Duration::from_secs);
                stream.set_read_timeout(timeout).map_err(unavailable)?;
                stream.set_nodelay(true).map_err(unavailable)?;
                let read_half = stream.try_clone().map_err(unavailable)?;
                let conn = Connection {
                    reader: Box::new(BufReader::new(read_half)),
                    writer: Some(Box::new(BufWriter::new(stream))),
                    child: None,
                    broken: false,
                };
                Backend::handshake(name, conn)
            }
        }
    }

    /// Handshakes over arbitrary byte streams.
    pub fn from_streams(
        name: impl Into<String>,
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
    ) -> Result<Backend> {
        let conn = Connection {
            reader: Box::new(reader),
            writer: Some(Box::new(writer)),
            child: None,
            broken: false,
        };
        Backend::handshake(name.into(), conn)
    }

    fn handshake(endpoint: String, mut conn: Connection) -> Result<Backend> {
        let caps = (|| {
            conn.send(&Hello::client().encode())?;
            let reply = conn.recv()?;
            Hello::decode(&reply)
        })();
        match caps {
            Ok(caps) => Ok(Backend {
                endpoint,
                caps,
                conn: Mutex::new(conn),
            }),
            Err(source) => {
                conn.close();
                Err(Error::Backend {
                    endpoint,
                    kind: "HELLO",
                    source,
                })
            }
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn capabilities(&self) -> &Hello {
        &self.caps
    }

    fn fail(&self, kind: &'static str, source: ProtocolError) -> Error {
        Error::Backend {
            endpoint: self.endpoint.clone(),
            kind,
            source,
        }
    }

    fn exchange<T>(
        &self,
        kind: &'static str,
        f: impl FnOnce(&mut Connection) -> PResult<T>,
    ) -> Result<T> {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut conn).map_err(|e| {
            // Remote ERROR frames terminate the session on the server side too.
            conn.close();
            self.fail(kind, e)
        })
    }

    /// Requests samples `1..=n_samples` of the backend's upscaling of `lr`.
    pub fn upscale(
        &self,
        lr: &Raster,
        factor: u16,
        n_samples: u16,
        seed: u64,
        image_id: &str,
    ) -> Result<Vec<Raster>> {
        if !self.caps.factors.contains(&factor) {
            return Err(self.fail(
                "UPSCALE",
                ProtocolError::Capability(format!(
                    "factor {factor} not in declared {:?}",
                    self.caps.factors
                )),
            ));
        }
        let req = UpscaleRequest {
            lr: lr.clone(),
            factor,
            n_samples,
            seed,
            image_id: image_id.to_string(),
        };
        let (h, w, c) = lr.dims();
        let want = (h * factor as usize, w * factor as usize, c);
        self.exchange("UPSCALE", |conn| {
            conn.send(&req.encode())?;
            (1..=n_samples)
                .map(|i| {
                    let (index, img) = decode_upscale_response(&conn.recv()?)?;
                    if index != i {
                        return Err(ProtocolError::malformed(
                            FrameKind::UpscaleResp,
                            format!("sample index {index}, expected {i}"),
                        ));
                    }
                    if img.dims() != want {
                        return Err(ProtocolError::malformed(
                            FrameKind::UpscaleResp,
                            format!("sample dims {:?}, expected {want:?}", img.dims()),
                        ));
                    }
                    Ok(img)
                })
                .collect()
        })
    }

    /// Scores each `(reference, candidate)` pair with the named metric.
    pub fn metric(&self, metric: &str, pairs: &[(Raster, Raster)]) -> Result<Vec<f64>> {
        if !self.caps.metrics.iter().any(|m| m == metric) {
            return Err(self.fail(
                "METRIC",
                ProtocolError::Capability(format!(
                    "metric `{metric}` not in declared {:?}",
                    self.caps.metrics
                )),
            ));
        }
        let req = MetricRequest {
            metric: metric.to_string(),
            pairs: pairs.to_vec(),
        };
        self.exchange("METRIC", |conn| {
            conn.send(&req.encode())?;
            let values = decode_metric_response(&conn.recv()?)?;
            if values.len() != pairs.len() {
                return Err(ProtocolError::malformed(
                    FrameKind::MetricResp,
                    format!("{} values for {} pairs", values.len(), pairs.len()),
                ));
            }
            Ok(values)
        })
    }
}

/// Reference mock server: bicubic upscaling plus a constant offset of
/// `0.01 * (i mod 3)` for sample `i`, and mean absolute difference as its
/// only metric.
pub mod mock {
    use super::*;
    use crate::resample::{upscale, KernelKind, ScaleFactor};

    pub const METRIC_NAME: &str = "lpips";

    #[derive(Clone, Debug)]
    pub struct MockBackend {
        pub factors: Vec<u16>,
    }

    impl Default for MockBackend {
        fn default() -> Self {
            MockBackend { factors: vec![4, 8] }
        }
    }

    pub fn offset_for(sample: u16) -> f32 {
        0.01 * (sample % 3) as f32
    }

    /// Expected mock output for sample `i`.
    pub fn mock_sample(lr: &Raster, factor: u16, sample: u16) -> Raster {
        let up = upscale(lr, ScaleFactor::new(factor as usize).unwrap(), KernelKind::Bicubic)
            .expect("factor >= 1");
        let off = offset_for(sample);
        up.map(|v| v + off)
    }

    pub fn mean_abs_diff(a: &Raster, b: &Raster) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x as f64 - y as f64).abs())
            .sum::<f64>()
            / a.data().len() as f64
    }

    impl MockBackend {
        pub fn hello(&self) -> Hello {
            Hello {
                role: "server".into(),
                mode: Some("mock".into()),
                factors: self.factors.clone(),
                metrics: vec![METRIC_NAME.into()],
                tags: [("lpips_backbone".to_string(), "mock".to_string())]
                    .into_iter()
                    .collect(),
                meta: Default::default(),
            }
        }

        /// Serves one connection until the peer closes it or sends garbage.
        pub fn serve(&self, reader: &mut impl Read, writer: &mut impl Write) -> PResult<()> {
            loop {
                let frame = match Frame::read_from(reader) {
                    Ok(f) => f,
                    Err(ProtocolError::Closed) => return Ok(()),
                    Err(e) => {
                        let _ = encode_error(1, &e.to_string()).write_to(writer);
                        return Err(e);
                    }
                };
                if let Err(e) = self.answer(&frame, writer) {
                    let _ = encode_error(2, &e.to_string()).write_to(writer);
                    return Err(e);
                }
            }
        }

        fn answer(&self, frame: &Frame, writer: &mut impl Write) -> PResult<()> {
            match frame.kind {
                FrameKind::Hello => {
                    Hello::decode(frame)?;
                    self.hello().encode().write_to(writer)
                }
                FrameKind::UpscaleReq => {
                    let req = UpscaleRequest::decode(frame)?;
                    if !self.factors.contains(&req.factor) {
                        return Err(ProtocolError::Capability(format!("factor {}", req.factor)));
                    }
                    for i in 1..=req.n_samples {
                        encode_upscale_response(i, &mock_sample(&req.lr, req.factor, i)).write_to(writer)?;
                    }
                    Ok(())
                }
                FrameKind::MetricReq => {
                    let req = MetricRequest::decode(frame)?;
                    if req.metric != METRIC_NAME {
                        return Err(ProtocolError::Capability(format!("metric {}", req.metric)));
                    }
                    let values: Vec<f64> = req.pairs.iter().map(|(a, b)| mean_abs_diff(a, b)).collect();
                    encode_metric_response(&values).write_to(writer)
                }
                other => Err(ProtocolError::UnexpectedKind {
                    expected: "request",
                    got: other.name(),
                }),
            }
        }
    }
}
