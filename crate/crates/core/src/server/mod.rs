//! The episode environment served over TCP, one client at a time, with the
//! line protocol of [`codec`].
//!
//! A session is `hello` (version check), any number of `reset`/`step`
//! requests, then `close`. Every request gets exactly one response line.
//! Malformed lines get an `error` response and the session continues;
//! only a version mismatch ends it.

pub mod codec;

use std::io::{BufRead, BufReader, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crate::env::{EpisodeConfig, EpisodeEnv, RelayAction, RelayObservation};
use crate::error::{Error, Result};
use crate::feeder::FeederTopology;

pub use codec::{decode, encode, EnvInfo, WireMessage, PROTOCOL_VERSION};

pub const DEFAULT_PORT: u16 = 7455;

/// Lines longer than this are discarded with an error response.
pub const MAX_LINE_BYTES: usize = 1 << 20;

const POLL_INTERVAL: Duration = Duration::from_millis(50);

/// Protocol state of one client connection, independent of the transport.
pub struct Session {
    env: EpisodeEnv,
    greeted: bool,
    closed: bool,
}

impl Session {
    pub fn new(topology: FeederTopology, config: EpisodeConfig) -> Result<Self> {
        Ok(Self {
            env: EpisodeEnv::new(topology, config)?,
            greeted: false,
            closed: false,
        })
    }

    pub fn info(&self) -> EnvInfo {
        EnvInfo {
            relays: self.env.n_relays(),
            state_dim: self.env.config().state_dim(),
            window: self.env.config().window,
        }
    }

    /// True once the session has ended (client `close` or version mismatch).
    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// The response to one raw request line.
    pub fn handle_line(&mut self, line: &[u8]) -> WireMessage {
        match decode(line) {
            Ok(msg) => self.handle(msg),
            Err(e) => WireMessage::error(e.to_string()),
        }
    }

    pub fn handle(&mut self, msg: WireMessage) -> WireMessage {
        match msg {
            WireMessage::Hello { version, .. } => {
                if version != PROTOCOL_VERSION {
                    self.closed = true;
                    return WireMessage::error(format!(
                        "protocol version {version} not supported; server speaks {PROTOCOL_VERSION}"
                    ));
                }
                self.greeted = true;
                WireMessage::Hello {
                    version: PROTOCOL_VERSION,
                    info: Some(self.info()),
                }
            }
            _ if !self.greeted => WireMessage::error("expected hello"),
            WireMessage::Reset { seed } => match self.env.reset(seed) {
                Ok(observations) => WireMessage::Obs {
                    step: 0,
                    observations,
                    rewards: Vec::new(),
                    done: false,
                },
                Err(e) => WireMessage::error(e.to_string()),
            },
            WireMessage::Step { actions } => match self.step(&actions) {
                Ok(m) => m,
                Err(e) => WireMessage::error(e.to_string()),
            },
            WireMessage::Close => {
                self.closed = true;
                WireMessage::Close
            }
            other => WireMessage::error(format!("`{}` is not a request", other.kind())),
        }
    }

    fn step(&mut self, actions: &[usize]) -> Result<WireMessage> {
        if actions.len() != self.env.n_relays() {
            return Err(Error::Usage(format!(
                "expected {} actions, got {}",
                self.env.n_relays(),
                actions.len()
            )));
        }
        let actions = actions
            .iter()
            .map(|a| RelayAction::from_index(*a))
            .collect::<Result<Vec<_>>>()?;
        let res = self.env.step(&actions)?;
        Ok(WireMessage::Obs {
            step: self.env.current_step(),
            observations: res.observations,
            rewards: res.rewards,
            done: res.done,
        })
    }
}

/// Stops a running server from another thread.
#[derive(Debug, Clone, Default)]
pub struct ShutdownHandle(Arc<AtomicBool>);

impl ShutdownHandle {
    pub fn shutdown(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_shutdown(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

pub struct EnvServer {
    listener: TcpListener,
    topology: FeederTopology,
    config: EpisodeConfig,
    shutdown: ShutdownHandle,
}

enum LineRead {
    Line,
    TooLong,
    Eof,
    Shutdown,
}

impl EnvServer {
    pub fn bind(addr: impl ToSocketAddrs, topology: FeederTopology, config: EpisodeConfig) -> Result<Self> {
        config.validate()?;
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        Ok(Self {
            listener,
            topology,
            config,
            shutdown: ShutdownHandle::default(),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn shutdown_handle(&self) -> ShutdownHandle {
        self.shutdown.clone()
    }

    /// Accepts and serves clients one after another until shut down. Later
    /// clients wait in the listen backlog while a session is running.
    pub fn serve(&self) -> Result<()> {
        while !self.shutdown.is_shutdown() {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    // a broken connection ends only that session
                    let _ = self.serve_connection(stream);
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL_INTERVAL),
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }

    pub fn serve_connection(&self, stream: TcpStream) -> Result<()> {
        stream.set_nonblocking(false)?;
        stream.set_read_timeout(Some(POLL_INTERVAL))?;
        stream.set_nodelay(true)?;
        let mut writer = stream.try_clone()?;
        let mut reader = BufReader::new(stream);
        let mut session = Session::new(self.topology.clone(), self.config.clone())?;
        let mut line = Vec::new();
        loop {
            line.clear();
            let response = match self.read_line(&mut reader, &mut line)? {
                LineRead::Line => session.handle_line(&line),
                LineRead::TooLong => WireMessage::error(format!("line exceeds {MAX_LINE_BYTES} bytes")),
                LineRead::Eof => return Ok(()),
                LineRead::Shutdown => {
                    let _ = writer.write_all(encode(&WireMessage::Close).as_bytes());
                    return Ok(());
                }
            };
            writer.write_all(encode(&response).as_bytes())?;
            if session.is_closed() {
                return Ok(());
            }
        }
    }

    /// Reads up to and including `\n`, polling the shutdown flag while idle.
    /// Oversized lines are drained and reported as `TooLong`.
    fn read_line<R: Read>(&self, reader: &mut BufReader<R>, line: &mut Vec<u8>) -> Result<LineRead> {
        let mut too_long = false;
        loop {
            if self.shutdown.is_shutdown() {
                return Ok(LineRead::Shutdown);
            }
            let (consumed, complete) = match reader.fill_buf() {
                Ok([]) => return Ok(LineRead::Eof),
                Ok(buf) => match buf.iter().position(|b| *b == b'\n') {
                    Some(i) => {
                        if !too_long {
                            line.extend_from_slice(&buf[..=i]);
                        }
                        (i + 1, true)
                    }
                    None => {
                        if !too_long {
                            line.extend_from_slice(buf);
                        }
                        (buf.len(), false)
                    }
                },
                Err(e)
                    if matches!(
                        e.kind(),
                        ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted
                    ) =>
                {
                    continue
                }
                Err(e) => return Err(e.into()),
            };
            reader.consume(consumed);
            if line.len() > MAX_LINE_BYTES {
                too_long = true;
                line.clear();
            }
            if complete {
                return Ok(if too_long { LineRead::TooLong } else { LineRead::Line });
            }
        }
    }
}

/// Blocking client for the line protocol.
pub struct EnvClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    info: EnvInfo,
}

impl EnvClient {
    /// Connects and performs the `hello` handshake.
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        let mut client = Self {
            reader: BufReader::new(stream),
            writer,
            info: EnvInfo {
                relays: 0,
                state_dim: 0,
                window: 0,
            },
        };
        match client.request(&WireMessage::Hello {
            version: PROTOCOL_VERSION,
            info: None,
        })? {
            WireMessage::Hello { info: Some(info), .. } => client.info = info,
            other => return Err(unexpected(&other)),
        }
        Ok(client)
    }

    pub fn info(&self) -> EnvInfo {
        self.info
    }

    /// Sends one line and reads one response line.
    pub fn request_raw(&mut self, line: &[u8]) -> Result<WireMessage> {
        self.writer.write_all(line)?;
        let mut response = Vec::new();
        if self.reader.read_until(b'\n', &mut response)? == 0 {
            return Err(Error::Io(std::io::Error::new(
                ErrorKind::UnexpectedEof,
                "server closed the connection",
            )));
        }
        decode(&response)
    }

    pub fn request(&mut self, msg: &WireMessage) -> Result<WireMessage> {
        self.request_raw(encode(msg).as_bytes())
    }

    pub fn reset(&mut self, seed: u64) -> Result<Vec<RelayObservation>> {
        match self.request(&WireMessage::Reset { seed })? {
            WireMessage::Obs { observations, .. } => Ok(observations),
            other => Err(unexpected(&other)),
        }
    }

    /// Returns observations, per-relay rewards and the done flag.
    pub fn step(&mut self, actions: &[RelayAction]) -> Result<(Vec<RelayObservation>, Vec<f64>, bool)> {
        let actions = actions.iter().map(|a| a.index()).collect();
        match self.request(&WireMessage::Step { actions })? {
            WireMessage::Obs {
                observations,
                rewards,
                done,
                ..
            } => Ok((observations, rewards, done)),
            other => Err(unexpected(&other)),
        }
    }

    pub fn close(mut self) -> Result<()> {
        match self.request(&WireMessage::Close)? {
            WireMessage::Close => Ok(()),
            other => Err(unexpected(&other)),
        }
    }
}

fn unexpected(msg: &WireMessage) -> Error {
    match msg {
        WireMessage::Error { message } => Error::Usage(format!("server error: {message}")),
        other => Error::Usage(format!("unexpected `{}` response", other.kind())),
    }
}
