//! Host side of the length-prefixed stdio protocol that lets an external
//! process act as a [`SegmenterBackend`].
//!
//! The child is stateless per request: capacity, eviction and augmentation
//! all happen in the engine. Exactly one request is in flight per child.

mod wire;

use std::io::{self, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::segmenter::{BackendError, SegmenterBackend};
use crate::support::SupportEntry;
use crate::types::{ProbMask, Slice};

pub use wire::{
    decode_f32, decode_message, decode_u8, encode_f32, encode_u8, read_frame, write_frame,
    BridgeHandshake, BridgeMessage, WireSupport, MAX_FRAME_BYTES, PROTOCOL_VERSION,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BridgeError {
    #[error("failed to start backend process: {0}")]
    SpawnFailure(String),
    #[error("no hello from backend process within {0:?}")]
    HandshakeTimeout(Duration),
    #[error("backend speaks protocol version {got}, expected {expected}")]
    VersionMismatch { expected: u32, got: u32 },
    #[error("backend process exited or closed its pipes: {0}")]
    ChildCrashed(String),
    #[error("malformed message from backend: {0}")]
    MalformedResponse(String),
    #[error("backend returned probability {value} at pixel offset {offset}")]
    OutOfRangeProbability { offset: usize, value: f32 },
    #[error("backend did not answer within {0:?}")]
    Timeout(Duration),
    #[error("backend reported an error: {0}")]
    Remote(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BridgeOptions {
    pub handshake_timeout: Duration,
    pub request_timeout: Duration,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self {
            handshake_timeout: Duration::from_secs(30),
            request_timeout: Duration::from_secs(120),
        }
    }
}

type FrameResult = io::Result<Option<Vec<u8>>>;

pub struct BridgeBackend {
    child: Child,
    stdin: Option<ChildStdin>,
    frames: Receiver<FrameResult>,
    handshake: BridgeHandshake,
    opts: BridgeOptions,
    dead: Option<String>,
}

impl std::fmt::Debug for BridgeBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeBackend")
            .field("pid", &self.child.id())
            .field("handshake", &self.handshake)
            .finish()
    }
}

impl BridgeBackend {
    /// Starts `command_line` (shell-style quoting, no shell) and performs the
    /// hello exchange.
    pub fn spawn(command_line: &str, opts: BridgeOptions) -> Result<Self, BridgeError> {
        let argv = shlex::split(command_line)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| {
                BridgeError::SpawnFailure(format!("cannot parse command line {command_line:?}"))
            })?;
        let mut cmd = Command::new(&argv[0]);
        cmd.args(&argv[1..]);
        Self::spawn_command(cmd, opts)
    }

    pub fn spawn_command(mut cmd: Command, opts: BridgeOptions) -> Result<Self, BridgeError> {
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BridgeError::SpawnFailure(e.to_string()))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");

        let (tx, frames) = mpsc::channel::<FrameResult>();
        thread::Builder::new()
            .name("bridge-reader".into())
            .spawn(move || {
                let mut reader = BufReader::new(stdout);
                loop {
                    let frame = read_frame(&mut reader);
                    let stop = !matches!(frame, Ok(Some(_)));
                    if tx.send(frame).is_err() || stop {
                        break;
                    }
                }
            })
            .map_err(|e| BridgeError::SpawnFailure(e.to_string()))?;

        let mut backend = Self {
            child,
            stdin,
            frames,
            handshake: BridgeHandshake {
                protocol_version: 0,
                backend_name: String::new(),
                required_width: 0,
                required_height: 0,
                max_support: 0,
            },
            opts,
            dead: None,
        };
        backend.handshake = backend.hello()?;
        Ok(backend)
    }

    fn hello(&mut self) -> Result<BridgeHandshake, BridgeError> {
        let hello = BridgeMessage::Hello {
            protocol_version: PROTOCOL_VERSION,
            backend_name: None,
            required_width: None,
            required_height: None,
            max_support: None,
        };
        let _ = self.send(&hello);
        let payload = match self.frames.recv_timeout(self.opts.handshake_timeout) {
            Ok(Ok(Some(p))) => p,
            Ok(Ok(None)) | Err(RecvTimeoutError::Disconnected) => {
                return Err(BridgeError::SpawnFailure(
                    "backend exited before hello".into(),
                ))
            }
            Ok(Err(e)) => return Err(BridgeError::SpawnFailure(format!("reading hello: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(BridgeError::HandshakeTimeout(self.opts.handshake_timeout))
            }
        };
        let msg =
            decode_message(&payload).map_err(|e| BridgeError::MalformedResponse(e.to_string()))?;
        let BridgeMessage::Hello {
            protocol_version,
            backend_name,
            required_width,
            required_height,
            max_support,
        } = msg
        else {
            return Err(BridgeError::MalformedResponse(format!(
                "expected hello, got {msg:?}"
            )));
        };
        if protocol_version != PROTOCOL_VERSION {
            return Err(BridgeError::VersionMismatch {
                expected: PROTOCOL_VERSION,
                got: protocol_version,
            });
        }
        let (w, h) = (required_width.unwrap_or(0), required_height.unwrap_or(0));
        if (w == 0) != (h == 0) {
            return Err(BridgeError::MalformedResponse(format!(
                "required size {w}x{h} must be both zero or both positive"
            )));
        }
        Ok(BridgeHandshake {
            protocol_version,
            backend_name: backend_name.unwrap_or_else(|| "bridge".into()),
            required_width: w,
            required_height: h,
            max_support: max_support.unwrap_or(0),
        })
    }

    pub fn handshake(&self) -> &BridgeHandshake {
        &self.handshake
    }

    fn send(&mut self, msg: &BridgeMessage) -> io::Result<()> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| io::Error::from(io::ErrorKind::BrokenPipe))?;
        write_frame(stdin, msg)
    }

    fn fail(&mut self, err: BridgeError) -> BridgeError {
        if matches!(err, BridgeError::ChildCrashed(_) | BridgeError::Timeout(_)) {
            self.dead = Some(err.to_string());
            let _ = self.child.kill();
        }
        err
    }

    /// One request/response round trip. Inputs must already match the
    /// handshake's required size.
    pub fn segment_raw(
        &mut self,
        query: &Slice,
        support: &[SupportEntry],
    ) -> Result<ProbMask, BridgeError> {
        if let Some(reason) = &self.dead {
            return Err(BridgeError::ChildCrashed(reason.clone()));
        }
        let (w, h) = query.dims();
        let request = BridgeMessage::SegmentRequest {
            w: w as u32,
            h: h as u32,
            query: encode_f32(query.data()),
            support: support
                .iter()
                .map(|e| WireSupport {
                    image: encode_f32(e.image.data()),
                    label: encode_u8(e.label.data()),
                })
                .collect(),
        };
        if let Err(e) = self.send(&request) {
            return Err(self.fail(BridgeError::ChildCrashed(e.to_string())));
        }
        let payload = match self.frames.recv_timeout(self.opts.request_timeout) {
            Ok(Ok(Some(p))) => p,
            Ok(Ok(None)) | Err(RecvTimeoutError::Disconnected) => {
                return Err(self.fail(BridgeError::ChildCrashed("stdout closed".into())))
            }
            Ok(Err(e)) if e.kind() == io::ErrorKind::InvalidData => {
                return Err(self.fail(BridgeError::ChildCrashed(format!("unreadable frame: {e}"))))
            }
            Ok(Err(e)) => return Err(self.fail(BridgeError::ChildCrashed(e.to_string()))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(self.fail(BridgeError::Timeout(self.opts.request_timeout)))
            }
        };
        match decode_message(&payload).map_err(|e| BridgeError::MalformedResponse(e.to_string()))? {
            BridgeMessage::SegmentResponse { prob } => {
                let values = decode_f32(&prob).map_err(BridgeError::MalformedResponse)?;
                if values.len() != w * h {
                    return Err(BridgeError::MalformedResponse(format!(
                        "probability buffer has {} values, expected {}",
                        values.len(),
                        w * h
                    )));
                }
                if let Some(offset) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
                    return Err(BridgeError::OutOfRangeProbability {
                        offset,
                        value: values[offset],
                    });
                }
                Ok(ProbMask::from_parts(w, h, values))
            }
            BridgeMessage::Error { message } => Err(BridgeError::Remote(message)),
            other => Err(BridgeError::MalformedResponse(format!(
                "unexpected {other:?}"
            ))),
        }
    }
}

impl SegmenterBackend for BridgeBackend {
    fn id(&self) -> &str {
        &self.handshake.backend_name
    }

    fn required_size(&self) -> Option<(usize, usize)> {
        self.handshake.required_size()
    }

    fn max_support(&self) -> usize {
        self.handshake.max_support as usize
    }

    fn segment(
        &mut self,
        query: &Slice,
        support: &[SupportEntry],
    ) -> Result<ProbMask, BackendError> {
        Ok(self.segment_raw(query, support)?)
    }
}

impl Drop for BridgeBackend {
    fn drop(&mut self) {
        self.stdin.take();
        let deadline = Instant::now() + Duration::from_millis(500);
        while Instant::now() < deadline {
            match self.child.try_wait() {
                Ok(Some(_)) => return,
                Ok(None) => thread::sleep(Duration::from_millis(10)),
                Err(_) => break,
            }
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A decoded segment request as seen by a child process.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRequest {
    pub width: usize,
    pub height: usize,
    pub query: Vec<f32>,
    pub support: Vec<(Vec<f32>, Vec<u8>)>,
}

fn decode_request(
    w: u32,
    h: u32,
    query: &str,
    support: &[WireSupport],
) -> Result<SegmentRequest, String> {
    let (width, height) = (w as usize, h as usize);
    let query = decode_f32(query)?;
    if query.len() != width * height {
        return Err(format!(
            "query has {} values, expected {}",
            query.len(),
            width * height
        ));
    }
    let support = support
        .iter()
        .map(|s| {
            let image = decode_f32(&s.image)?;
            let label = decode_u8(&s.label)?;
            if image.len() != width * height || label.len() != width * height {
                return Err("support entry size does not match query".to_string());
            }
            Ok((image, label))
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(SegmentRequest {
        width,
        height,
        query,
        support,
    })
}

/// Child-side request loop: answers hello with `handshake`, then calls
/// `handler` once per request until the host closes the stream. Handler
/// errors are sent back as `error` messages and the loop continues.
pub fn serve<R, W, F>(
    handshake: &BridgeHandshake,
    input: R,
    mut output: W,
    mut handler: F,
) -> io::Result<()>
where
    R: Read,
    W: Write,
    F: FnMut(SegmentRequest) -> Result<Vec<f32>, String>,
{
    let mut input = BufReader::new(input);
    while let Some(payload) = read_frame(&mut input)? {
        let reply = match decode_message(&payload) {
            Ok(BridgeMessage::Hello { .. }) => handshake.to_message(),
            Ok(BridgeMessage::SegmentRequest {
                w,
                h,
                query,
                support,
            }) => match decode_request(w, h, &query, &support).and_then(&mut handler) {
                Ok(prob) => BridgeMessage::SegmentResponse {
                    prob: encode_f32(&prob),
                },
                Err(message) => BridgeMessage::Error { message },
            },
            Ok(other) => BridgeMessage::Error {
                message: format!("unexpected message {other:?}"),
            },
            Err(e) => BridgeMessage::Error {
                message: format!("undecodable message: {e}"),
            },
        };
        write_frame(&mut output, &reply)?;
    }
    Ok(())
}
