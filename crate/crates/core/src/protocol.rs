//! Remote value function protocol.
//!
//! Every frame is a u32 big-endian length (payload size + 1), a kind byte
//! (0 = JSON control message, 1 = BAGB buffer) and the payload. A session
//! opens with HELLO / HELLO_ACK, then repeats EVAL_REQUEST + batch buffer,
//! answered by EVAL_REPLY + value map buffer, and ends with BYE. Any
//! violation is answered with ERROR and the connection is closed.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Mode, TransformBatch, ValueFunction, ValueMapBatch, VfContext, VfSpec};
use crate::tensor::Tensor;

pub const PROTOCOL_VERSION: u16 = 1;
pub const MAX_FRAME_LEN: u32 = 256 * 1024 * 1024;

pub const KIND_CONTROL: u8 = 0;
pub const KIND_BINARY: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Message {
    Hello { version: u16 },
    HelloAck { version: u16 },
    EvalRequest { version: u16, mode: Mode, dims: Vec<usize> },
    EvalReply { version: u16, dims: Vec<usize> },
    Error { version: u16, message: String },
    Bye { version: u16 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Frame {
    Control(Message),
    Binary(Vec<u8>),
}

fn protocol_error(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<()> {
    let (kind, payload) = match frame {
        Frame::Control(m) => (
            KIND_CONTROL,
            serde_json::to_vec(m).map_err(|e| protocol_error(e.to_string()))?,
        ),
        Frame::Binary(b) => (KIND_BINARY, b.clone()),
    };
    write_raw_frame(w, kind, &payload)
}

pub fn write_raw_frame(w: &mut impl Write, kind: u8, payload: &[u8]) -> Result<()> {
    let len = u32::try_from(payload.len() + 1)
        .ok()
        .filter(|&l| l <= MAX_FRAME_LEN)
        .ok_or_else(|| protocol_error(format!("frame of {} bytes is too large", payload.len())))?;
    let io = |e: io::Error| protocol_error(format!("write failed: {e}"));
    w.write_all(&len.to_be_bytes()).map_err(io)?;
    w.write_all(&[kind]).map_err(io)?;
    w.write_all(payload).map_err(io)?;
    w.flush().map_err(io)
}

/// Reads one frame; `Ok(None)` on a clean end of stream between frames.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Frame>> {
    let mut header = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(protocol_error("truncated frame header")),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(protocol_error(format!("read failed: {e}"))),
        }
    }
    let len = u32::from_be_bytes(header);
    if len == 0 {
        return Err(protocol_error("frame length 0 has no kind byte"));
    }
    if len > MAX_FRAME_LEN {
        return Err(protocol_error(format!(
            "frame of {len} bytes exceeds the {MAX_FRAME_LEN} byte limit"
        )));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)
        .map_err(|_| protocol_error(format!("truncated frame: expected {len} bytes")))?;
    let payload = body.split_off(1);
    match body[0] {
        KIND_CONTROL => serde_json::from_slice(&payload)
            .map(|m| Some(Frame::Control(m)))
            .map_err(|e| protocol_error(format!("bad control message: {e}"))),
        KIND_BINARY => Ok(Some(Frame::Binary(payload))),
        k => Err(protocol_error(format!("unknown frame kind {k}"))),
    }
}

fn error_message(message: impl Into<String>) -> Frame {
    Frame::Control(Message::Error {
        version: PROTOCOL_VERSION,
        message: message.into(),
    })
}

/// Value function served over the protocol. Requests are strictly
/// sequential on the one connection.
pub struct RemoteVf {
    addr: String,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl RemoteVf {
    pub fn connect(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::ValueFunction(format!("connect {addr}: {e}")))?;
        stream.set_nodelay(true).ok();
        let clone = stream
            .try_clone()
            .map_err(|e| Error::ValueFunction(format!("{addr}: {e}")))?;
        let mut vf = RemoteVf {
            addr: addr.to_string(),
            reader: BufReader::new(stream),
            writer: BufWriter::new(clone),
        };
        write_frame(&mut vf.writer, &Frame::Control(Message::Hello { version: PROTOCOL_VERSION }))?;
        match vf.read_control()? {
            Message::HelloAck { version } if version == PROTOCOL_VERSION => Ok(vf),
            other => Err(Error::ValueFunction(format!("{addr}: unexpected handshake reply {other:?}"))),
        }
    }

    fn read_control(&mut self) -> Result<Message> {
        match read_frame(&mut self.reader)? {
            Some(Frame::Control(Message::Error { message, .. })) => {
                Err(Error::ValueFunction(format!("{}: server error: {message}", self.addr)))
            }
            Some(Frame::Control(m)) => Ok(m),
            Some(Frame::Binary(_)) => Err(Error::ValueFunction(format!("{}: unexpected binary frame", self.addr))),
            None => Err(Error::ValueFunction(format!("{}: connection closed", self.addr))),
        }
    }
}

impl ValueFunction for RemoteVf {
    fn evaluate(&mut self, batch: &TransformBatch) -> Result<ValueMapBatch> {
        let tensor = batch.to_tensor();
        write_frame(
            &mut self.writer,
            &Frame::Control(Message::EvalRequest {
                version: PROTOCOL_VERSION,
                mode: batch.mode,
                dims: tensor.dims.clone(),
            }),
        )?;
        write_raw_frame(&mut self.writer, KIND_BINARY, &tensor.to_bytes())?;
        let dims = match self.read_control()? {
            Message::EvalReply { dims, .. } => dims,
            other => return Err(Error::ValueFunction(format!("{}: expected EVAL_REPLY, got {other:?}", self.addr))),
        };
        let bytes = match read_frame(&mut self.reader)? {
            Some(Frame::Binary(b)) => b,
            _ => return Err(Error::ValueFunction(format!("{}: expected value map buffer", self.addr))),
        };
        let tensor = Tensor::from_bytes(&bytes)?;
        if tensor.dims != dims {
            return Err(Error::ValueFunction(format!(
                "{}: reply declared {dims:?} but buffer is {:?}",
                self.addr, tensor.dims
            )));
        }
        let maps = ValueMapBatch::from_tensor(batch.mode, tensor)?;
        maps.validate(batch)?;
        Ok(maps)
    }

    fn name(&self) -> String {
        format!("remote:{}", self.addr)
    }
}

impl Drop for RemoteVf {
    fn drop(&mut self) {
        let _ = write_frame(&mut self.writer, &Frame::Control(Message::Bye { version: PROTOCOL_VERSION }));
    }
}

/// Serves one connection until BYE, end of stream or a protocol error.
pub fn handle_connection(stream: TcpStream, spec: &VfSpec, ctx: VfContext) -> Result<()> {
    stream.set_nodelay(true).ok();
    let mut reader = BufReader::new(stream.try_clone().map_err(|e| Error::io("socket", e))?);
    let mut writer = BufWriter::new(stream);
    let result = serve_session(&mut reader, &mut writer, spec, ctx);
    if let Err(e) = &result {
        let _ = write_frame(&mut writer, &error_message(e.to_string()));
    }
    result
}

fn serve_session(
    reader: &mut impl Read,
    writer: &mut impl Write,
    spec: &VfSpec,
    ctx: VfContext,
) -> Result<()> {
    match read_frame(reader)? {
        Some(Frame::Control(Message::Hello { version })) if version == PROTOCOL_VERSION => {}
        Some(Frame::Control(Message::Hello { version })) => {
            return Err(protocol_error(format!(
                "version mismatch: client {version}, server {PROTOCOL_VERSION}"
            )))
        }
        None => return Ok(()),
        Some(other) => return Err(protocol_error(format!("expected HELLO, got {other:?}"))),
    }
    write_frame(writer, &Frame::Control(Message::HelloAck { version: PROTOCOL_VERSION }))?;

    let mut rearrange: Option<Box<dyn ValueFunction>> = None;
    let mut lift: Option<Box<dyn ValueFunction>> = None;
    loop {
        let (mode, dims) = match read_frame(reader)? {
            None | Some(Frame::Control(Message::Bye { .. })) => return Ok(()),
            Some(Frame::Control(Message::EvalRequest { mode, dims, .. })) => (mode, dims),
            Some(other) => return Err(protocol_error(format!("expected EVAL_REQUEST, got {other:?}"))),
        };
        let bytes = match read_frame(reader)? {
            Some(Frame::Binary(b)) => b,
            _ => return Err(protocol_error("EVAL_REQUEST must be followed by a binary frame")),
        };
        let tensor = Tensor::from_bytes(&bytes)?;
        if tensor.dims != dims {
            return Err(protocol_error(format!(
                "request declared {dims:?} but buffer is {:?}",
                tensor.dims
            )));
        }
        let batch = TransformBatch::from_tensor(mode, tensor)?;
        let slot = match mode {
            Mode::Rearrange => &mut rearrange,
            Mode::Lift => &mut lift,
        };
        if slot.is_none() {
            *slot = Some(spec.build(mode, ctx)?);
        }
        let maps = slot.as_mut().expect("value function built above").evaluate(&batch)?;
        maps.validate(&batch)?;
        let reply = maps.to_tensor();
        write_frame(
            writer,
            &Frame::Control(Message::EvalReply {
                version: PROTOCOL_VERSION,
                dims: reply.dims.clone(),
            }),
        )?;
        write_raw_frame(writer, KIND_BINARY, &reply.to_bytes())?;
    }
}

/// A listening policy server; each connection is served on its own thread
/// with its own value function instances.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Server {
    pub fn start(bind: impl ToSocketAddrs, spec: VfSpec, ctx: VfContext) -> Result<Server> {
        if matches!(spec, VfSpec::Remote(_)) {
            return Err(Error::InvalidArgument("a server cannot forward to a remote value function".into()));
        }
        let listener = TcpListener::bind(bind).map_err(|e| Error::io("bind", e))?;
        let addr = listener.local_addr().map_err(|e| Error::io("bind", e))?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let spec = spec.clone();
                std::thread::spawn(move || {
                    if let Err(e) = handle_connection(stream, &spec, ctx) {
                        eprintln!("policy server: {e}");
                    }
                });
            }
        });
        Ok(Server {
            addr,
            stop,
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop ends.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Stops accepting connections. Sessions already running finish on
    /// their own.
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_accepting();
        }
    }
}
