//! Client side of the wire protocol, with a pool of serial connections.

use std::fmt;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use super::wire::{self, Frame, FrameReadError};
use super::{OracleError, SegmentationOracle};
use crate::imaging::{Image, LabelMap};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Where an external model lives.
///
/// Textual forms: `tcp://host:port` and `exec:program arg1 arg2 ...`
/// (arguments split on whitespace).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Subprocess { program: String, args: Vec<String> },
}

impl FromStr for Endpoint {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            if addr.is_empty() {
                return Err("empty tcp address".into());
            }
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        if let Some(cmd) = s.strip_prefix("exec:") {
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts.next().ok_or("empty exec command")?;
            return Ok(Endpoint::Subprocess {
                program,
                args: parts.collect(),
            });
        }
        Err(format!("unrecognized endpoint `{s}` (expected tcp://host:port or exec:command)"))
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(a) => write!(f, "tcp://{a}"),
            Endpoint::Subprocess { program, args } => {
                write!(f, "exec:{program}")?;
                for a in args {
                    write!(f, " {a}")?;
                }
                Ok(())
            }
        }
    }
}

type Incoming = Result<Option<Frame>, FrameReadError>;

enum Connection {
    Tcp {
        reader: BufReader<TcpStream>,
        writer: BufWriter<TcpStream>,
    },
    Subprocess {
        child: Child,
        stdin: ChildStdin,
        frames: Receiver<Incoming>,
    },
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Connection::Subprocess { child, .. } = self {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn transport(e: impl fmt::Display) -> OracleError {
    OracleError::Transport(e.to_string())
}

fn map_read(e: FrameReadError, timeout: Duration) -> OracleError {
    match e {
        FrameReadError::Protocol(p) => OracleError::Protocol(p),
        FrameReadError::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
            OracleError::Timeout(timeout)
        }
        FrameReadError::Io(io) => transport(io),
    }
}

impl Connection {
    fn open(endpoint: &Endpoint, timeout: Duration) -> Result<Self, OracleError> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(|e| transport(format!("connect {addr}: {e}")))?;
                stream.set_read_timeout(Some(timeout)).map_err(transport)?;
                stream.set_write_timeout(Some(timeout)).map_err(transport)?;
                stream.set_nodelay(true).map_err(transport)?;
                let reader = BufReader::new(stream.try_clone().map_err(transport)?);
                Ok(Connection::Tcp {
                    reader,
                    writer: BufWriter::new(stream),
                })
            }
            Endpoint::Subprocess { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| transport(format!("spawn {program}: {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                let (tx, rx) = mpsc::channel();
                thread::spawn(move || {
                    let mut reader = BufReader::new(stdout);
                    loop {
                        let item = wire::read_frame(&mut reader);
                        let stop = !matches!(item, Ok(Some(_)));
                        if tx.send(item).is_err() || stop {
                            break;
                        }
                    }
                });
                Ok(Connection::Subprocess {
                    child,
                    stdin,
                    frames: rx,
                })
            }
        }
    }

    fn round_trip(&mut self, request: &[u8], timeout: Duration) -> Result<Frame, OracleError> {
        let incoming = match self {
            Connection::Tcp { reader, writer } => {
                writer.write_all(request).and_then(|_| writer.flush()).map_err(transport)?;
                wire::read_frame(reader)
            }
            Connection::Subprocess { stdin, frames, .. } => {
                stdin.write_all(request).and_then(|_| stdin.flush()).map_err(transport)?;
                match frames.recv_timeout(timeout) {
                    Ok(item) => item,
                    Err(RecvTimeoutError::Timeout) => return Err(OracleError::Timeout(timeout)),
                    Err(RecvTimeoutError::Disconnected) => {
                        return Err(transport("oracle process closed its output"))
                    }
                }
            }
        };
        match incoming {
            Ok(Some(frame)) => Ok(frame),
            Ok(None) => Err(transport("oracle closed the connection")),
            Err(e) => Err(map_read(e, timeout)),
        }
    }
}

/// Oracle reached over the wire protocol.
///
/// Each connection carries one request at a time; concurrent callers each
/// take a connection from the pool, opening a new one when it is empty.
/// Connections that fail are dropped rather than returned.
pub struct RemoteOracle {
    endpoint: Endpoint,
    timeout: Duration,
    pool: Mutex<Vec<Connection>>,
}

impl RemoteOracle {
    pub fn new(endpoint: Endpoint) -> Self {
        Self::with_timeout(endpoint, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(endpoint: Endpoint, timeout: Duration) -> Self {
        Self {
            endpoint,
            timeout,
            pool: Mutex::new(Vec::new()),
        }
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// Opens one connection eagerly so configuration errors surface early.
    pub fn connect(&self) -> Result<(), OracleError> {
        let conn = Connection::open(&self.endpoint, self.timeout)?;
        self.pool.lock().unwrap().push(conn);
        Ok(())
    }

    pub fn remote_segment(&self, img: &Image) -> Result<LabelMap, OracleError> {
        let pooled = self.pool.lock().unwrap().pop();
        let mut conn = match pooled {
            Some(c) => c,
            None => Connection::open(&self.endpoint, self.timeout)?,
        };
        let request = Frame::Request(img.clone()).encode();
        let reply = conn.round_trip(&request, self.timeout)?;
        let result = match reply {
            Frame::Response(map) => {
                if map.height() != img.height() || map.width() != img.width() {
                    Err(OracleError::ShapeMismatch {
                        want_h: img.height(),
                        want_w: img.width(),
                        got_h: map.height(),
                        got_w: map.width(),
                    })
                } else {
                    Ok(map)
                }
            }
            Frame::Error(msg) => Err(OracleError::Remote(msg)),
            Frame::Request(_) => Err(OracleError::Protocol(wire::ProtocolError::BadHeader(
                "oracle sent a request frame".into(),
            ))),
        };
        // The exchange itself completed, so the stream is still in sync.
        self.pool.lock().unwrap().push(conn);
        result
    }
}

impl SegmentationOracle for RemoteOracle {
    fn segment(&self, img: &Image) -> Result<LabelMap, OracleError> {
        self.remote_segment(img)
    }

    fn descriptor(&self) -> String {
        format!("remote[{}]", self.endpoint)
    }
}
