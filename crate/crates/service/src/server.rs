//! Operator slot, connection handling and the [`HumanChannel`] it backs.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use harp_core::deploy::{AssistSession, AttemptOutcome, HumanChannel, HumanReply, SessionStatus, StepUpdate};
use tungstenite::{Message, WebSocket};

use crate::protocol::{
    assist_request, decode_client, encode, proposal_from_wire, snapshot_payload, ClientMessage, CloseOutcome,
    ServerMessage,
};

type Socket = WebSocket<TcpStream>;

const POLL: Duration = Duration::from_millis(20);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeConfig {
    /// How long a session waits for each operator reply (or for an operator to connect).
    pub assist_timeout: Duration,
    /// Pause after every streamed step so a human can follow the game.
    pub step_delay: Duration,
    /// Proposals allowed per session; reported in `assist_request`.
    pub retry_budget: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            assist_timeout: Duration::from_secs(30),
            step_delay: Duration::ZERO,
            retry_budget: 5,
        }
    }
}

/// Listening socket plus the thread that fills the single operator slot.
pub struct Server {
    addr: SocketAddr,
    incoming: Receiver<Socket>,
    occupied: Arc<AtomicBool>,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, incoming) = mpsc::channel();
        let occupied = Arc::new(AtomicBool::new(false));
        let stop = Arc::new(AtomicBool::new(false));
        let acceptor = {
            let occupied = Arc::clone(&occupied);
            let stop = Arc::clone(&stop);
            thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let Some(mut ws) = handshake(stream) else { continue };
                            if occupied.swap(true, Ordering::SeqCst) {
                                let _ = send(
                                    &mut ws,
                                    &ServerMessage::Error {
                                        session: None,
                                        reason: "operator slot taken".into(),
                                    },
                                );
                                let _ = ws.close(None);
                                let _ = ws.flush();
                            } else if tx.send(ws).is_err() {
                                break;
                            }
                        }
                        Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
                        Err(_) => thread::sleep(POLL),
                    }
                }
            })
        };
        Ok(Self {
            addr,
            incoming,
            occupied,
            stop,
            acceptor: Some(acceptor),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn channel(self, config: ServeConfig) -> ServiceChannel {
        ServiceChannel {
            server: self,
            config,
            operator: None,
            episode: 0,
            announced: None,
            close_reason: None,
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

fn handshake(stream: TcpStream) -> Option<Socket> {
    stream.set_nonblocking(false).ok()?;
    stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT)).ok()?;
    stream.set_nodelay(true).ok()?;
    tungstenite::accept(stream).ok()
}

fn send(ws: &mut Socket, msg: &ServerMessage) -> tungstenite::Result<()> {
    ws.send(Message::text(encode(msg)))
}

enum Incoming {
    Message(ClientMessage),
    Malformed(String),
    Nothing,
    Gone,
}

/// [`HumanChannel`] backed by the connected operator, if any.
///
/// Sessions without an operator wait `assist_timeout` for one to connect and
/// are then abandoned. Messages that arrive while no session is open are
/// answered with an error.
pub struct ServiceChannel {
    server: Server,
    config: ServeConfig,
    operator: Option<Socket>,
    episode: u64,
    /// Session whose `assist_request` the current operator has seen.
    announced: Option<u64>,
    close_reason: Option<CloseOutcome>,
}

impl ServiceChannel {
    pub fn local_addr(&self) -> SocketAddr {
        self.server.addr
    }

    pub fn has_operator(&mut self) -> bool {
        self.adopt();
        self.operator.is_some()
    }

    /// Blocks until an operator connects or `timeout` passes.
    pub fn wait_for_operator(&mut self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while !self.has_operator() {
            if Instant::now() >= deadline {
                return false;
            }
            thread::sleep(POLL);
        }
        true
    }

    /// Closes the operator connection, if any.
    pub fn shutdown(&mut self) {
        if let Some(mut ws) = self.operator.take() {
            let _ = ws.close(None);
            let _ = ws.flush();
        }
        self.server.occupied.store(false, Ordering::SeqCst);
    }

    fn adopt(&mut self) {
        if self.operator.is_some() {
            return;
        }
        match self.server.incoming.try_recv() {
            Ok(ws) => {
                self.operator = Some(ws);
                self.announced = None;
            }
            Err(TryRecvError::Empty | TryRecvError::Disconnected) => {}
        }
    }

    fn drop_operator(&mut self) {
        self.operator = None;
        self.announced = None;
        self.server.occupied.store(false, Ordering::SeqCst);
    }

    fn emit(&mut self, msg: &ServerMessage) {
        self.adopt();
        if let Some(ws) = self.operator.as_mut() {
            if send(ws, msg).is_err() {
                self.drop_operator();
            }
        }
    }

    fn receive(&mut self, wait: Duration) -> Incoming {
        let Some(ws) = self.operator.as_mut() else {
            return Incoming::Gone;
        };
        let wait = wait.max(Duration::from_millis(1));
        if ws.get_ref().set_read_timeout(Some(wait)).is_err() {
            self.drop_operator();
            return Incoming::Gone;
        }
        match ws.read() {
            Ok(Message::Text(text)) => match decode_client(&text) {
                Ok(m) => Incoming::Message(m),
                Err(reason) => Incoming::Malformed(reason),
            },
            Ok(Message::Binary(_)) => Incoming::Malformed("binary frames are not supported".into()),
            Ok(Message::Close(_)) => {
                let _ = ws.flush();
                self.drop_operator();
                Incoming::Gone
            }
            Ok(_) => Incoming::Nothing,
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) =>
            {
                Incoming::Nothing
            }
            Err(_) => {
                self.drop_operator();
                Incoming::Gone
            }
        }
    }

    /// Answers whatever the operator sent while no session was open.
    fn drain(&mut self) {
        self.adopt();
        while self.operator.is_some() {
            match self.receive(Duration::from_millis(1)) {
                Incoming::Message(m) => self.emit(&ServerMessage::Error {
                    session: Some(m.session()),
                    reason: "no open session".into(),
                }),
                Incoming::Malformed(reason) => self.emit(&ServerMessage::Error { session: None, reason }),
                Incoming::Nothing | Incoming::Gone => break,
            }
        }
    }
}

impl HumanChannel for ServiceChannel {
    fn request(&mut self, session: &AssistSession) -> HumanReply {
        let deadline = Instant::now() + self.config.assist_timeout;
        loop {
            self.adopt();
            if self.operator.is_some() && self.announced != Some(session.id) {
                let msg = assist_request(self.episode, session, self.config.retry_budget);
                self.emit(&msg);
                self.announced = Some(session.id);
            }
            let now = Instant::now();
            if now >= deadline {
                self.close_reason = Some(CloseOutcome::Timeout);
                return HumanReply::TimedOut;
            }
            if self.operator.is_none() {
                thread::sleep(POLL.min(deadline - now));
                continue;
            }
            match self.receive(POLL.min(deadline - now)) {
                Incoming::Message(ClientMessage::Proposal {
                    session: id,
                    groups,
                    actions,
                }) if id == session.id => match proposal_from_wire(groups, &actions) {
                    Ok(p) => return HumanReply::Propose(p),
                    Err(e) => self.emit(&ServerMessage::Error {
                        session: Some(id),
                        reason: e.to_string(),
                    }),
                },
                Incoming::Message(ClientMessage::Abandon { session: id }) if id == session.id => {
                    self.close_reason = Some(CloseOutcome::Abandoned);
                    return HumanReply::Abandon;
                }
                Incoming::Message(m) => self.emit(&ServerMessage::Error {
                    session: Some(m.session()),
                    reason: "no open session".into(),
                }),
                Incoming::Malformed(reason) => self.emit(&ServerMessage::Error {
                    session: Some(session.id),
                    reason,
                }),
                Incoming::Nothing => {}
                Incoming::Gone => {
                    self.close_reason = Some(CloseOutcome::Disconnected);
                    return HumanReply::Disconnected;
                }
            }
        }
    }

    fn feedback(&mut self, session: &AssistSession, outcome: &AttemptOutcome) {
        let msg = match outcome {
            AttemptOutcome::Scored(v) => ServerMessage::Verdict {
                session: session.id,
                verdict: v.verdict,
                proposal_score: v.proposal_score,
                incumbent_score: v.incumbent_score,
            },
            AttemptOutcome::Invalid(reason) => ServerMessage::Error {
                session: Some(session.id),
                reason: reason.clone(),
            },
        };
        self.emit(&msg);
    }

    fn closed(&mut self, session: &AssistSession) {
        let reason = self.close_reason.take();
        let outcome = match session.status {
            SessionStatus::Accepted => CloseOutcome::Accepted,
            _ => reason.unwrap_or(CloseOutcome::RetryBudgetExhausted),
        };
        self.emit(&ServerMessage::SessionClosed {
            session: session.id,
            outcome,
        });
    }

    fn step_update(&mut self, update: &StepUpdate<'_>) {
        self.episode = update.episode;
        self.drain();
        let msg = ServerMessage::StateUpdate {
            session: None,
            state: snapshot_payload(update.episode, update.state, update.partition, update.report),
        };
        self.emit(&msg);
        if !self.config.step_delay.is_zero() {
            thread::sleep(self.config.step_delay);
        }
    }
}
