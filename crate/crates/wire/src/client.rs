//! Blocking client used by the CLI script runner and the integration tests.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use splatspace_core::session::{SessionId, SessionState, UserId};

use crate::frame::{self, FrameDecoder, FrameError};
use crate::message::{Body, Message};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("connect failed: {0}")]
    Connect(std::io::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Frame(#[from] FrameError),
    #[error("connection closed by server")]
    Closed,
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("server error {code}: {message}")]
    Server { code: String, message: String },
}

/// Connection state after a successful handshake.
#[derive(Debug, Clone)]
pub struct Welcome {
    pub revision: u64,
    pub full_state: SessionState,
    pub message: Message,
}

pub struct Client {
    stream: TcpStream,
    decoder: FrameDecoder,
    next_seq: u64,
    inbox: VecDeque<Message>,
    mirror: SessionState,
    gaps: u64,
    pub timeout: Duration,
}

impl Client {
    /// Connects and performs the hello/welcome handshake.
    pub fn connect(addr: impl ToSocketAddrs, user: &str, session: &str) -> Result<(Self, Welcome), ClientError> {
        let stream = TcpStream::connect(addr).map_err(ClientError::Connect)?;
        stream.set_nodelay(true)?;
        let mut client = Self {
            stream,
            decoder: FrameDecoder::new(),
            next_seq: 1,
            inbox: VecDeque::new(),
            mirror: SessionState::new(SessionId(session.into()), Default::default()),
            gaps: 0,
            timeout: Duration::from_secs(10),
        };
        client.send(Body::Hello { user: UserId(user.into()), session: SessionId(session.into()) })?;
        let message = client.read_message(client.timeout)?;
        match &message.body {
            Body::Welcome { revision, full_state, .. } => {
                client.mirror = full_state.clone();
                let welcome = Welcome { revision: *revision, full_state: full_state.clone(), message: message.clone() };
                Ok((client, welcome))
            }
            Body::Error { code, message } => Err(ClientError::Server { code: code.clone(), message: message.clone() }),
            other => Err(ClientError::Server { code: "protocol".into(), message: format!("expected welcome, got {}", other.type_name()) }),
        }
    }

    /// Revision of the mirrored state.
    pub fn revision(&self) -> u64 {
        self.mirror.revision
    }

    /// The session as this user sees it: the welcome state with every
    /// received delta applied in order.
    pub fn mirror(&self) -> &SessionState {
        &self.mirror
    }

    /// Deltas that arrived out of sequence and were not applied.
    pub fn gaps(&self) -> u64 {
        self.gaps
    }

    /// Brings the mirror up to date after a gap.
    pub fn resync(&mut self) -> Result<(), ClientError> {
        let from_revision = self.mirror.revision;
        let reply = self.request(Body::Resync { from_revision, revision: None, deltas: None, full_state: None, attachments: vec![] })?;
        match reply.body {
            Body::Resync { .. } => Ok(()),
            Body::Error { code, message } => Err(ClientError::Server { code, message }),
            other => Err(ClientError::Server { code: "protocol".into(), message: format!("expected resync, got {}", other.type_name()) }),
        }
    }

    /// Sends a request with a fresh `seq`, returning it.
    pub fn send(&mut self, body: Body) -> Result<u64, ClientError> {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.send_message(&Message::reply(Some(seq), body))?;
        Ok(seq)
    }

    pub fn send_message(&mut self, message: &Message) -> Result<(), ClientError> {
        let bytes = frame::encode(message)?;
        self.send_raw(&bytes)
    }

    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<(), ClientError> {
        self.stream.write_all(bytes)?;
        Ok(())
    }

    fn observe(&mut self, message: &Message) {
        match &message.body {
            Body::Delta(d) if d.revision == self.mirror.revision + 1 => self.mirror.apply_changes(d.revision, &d.changes),
            Body::Delta(d) if d.revision > self.mirror.revision => self.gaps += 1,
            Body::Resync { full_state: Some(state), .. } => self.mirror = state.clone(),
            Body::Resync { deltas: Some(deltas), .. } => {
                for d in deltas {
                    if d.revision == self.mirror.revision + 1 {
                        self.mirror.apply_changes(d.revision, &d.changes);
                    }
                }
            }
            _ => {}
        }
    }

    fn read_message(&mut self, timeout: Duration) -> Result<Message, ClientError> {
        let deadline = Instant::now() + timeout;
        let mut buf = [0u8; 64 * 1024];
        loop {
            if let Some(message) = self.decoder.next_message()? {
                self.observe(&message);
                return Ok(message);
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(ClientError::Timeout(timeout));
            }
            self.stream.set_read_timeout(Some(left))?;
            match self.stream.read(&mut buf) {
                Ok(0) => return Err(ClientError::Closed),
                Ok(n) => self.decoder.push(&buf[..n]),
                Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                    return Err(ClientError::Timeout(timeout));
                }
                Err(e) if e.kind() == std::io::ErrorKind::ConnectionReset => return Err(ClientError::Closed),
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Next message, queued or from the socket.
    pub fn recv(&mut self, timeout: Duration) -> Result<Message, ClientError> {
        match self.inbox.pop_front() {
            Some(m) => Ok(m),
            None => self.read_message(timeout),
        }
    }

    /// Sends `body` and waits for the reply carrying its `seq`. Other
    /// messages received meanwhile stay queued.
    pub fn request(&mut self, body: Body) -> Result<Message, ClientError> {
        let seq = self.send(body)?;
        let deadline = Instant::now() + self.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let message = self.read_message(left.max(Duration::from_millis(1)))?;
            if message.seq == Some(seq) {
                return Ok(message);
            }
            self.inbox.push_back(message);
        }
    }

    /// Waits for the first queued or incoming message matching `pred`,
    /// removing it from the queue. Non-matching messages stay queued.
    pub fn wait_for(&mut self, timeout: Duration, mut pred: impl FnMut(&Message) -> bool) -> Result<Message, ClientError> {
        if let Some(i) = self.inbox.iter().position(&mut pred) {
            return Ok(self.inbox.remove(i).expect("index in range"));
        }
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(ClientError::Timeout(timeout));
            }
            let message = self.read_message(left)?;
            if pred(&message) {
                return Ok(message);
            }
            self.inbox.push_back(message);
        }
    }

    /// Messages received but not yet consumed.
    pub fn drain_inbox(&mut self) -> Vec<Message> {
        self.inbox.drain(..).collect()
    }
}
