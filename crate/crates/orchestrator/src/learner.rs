//! Learner side: a sequential update loop fed by per-connection reader
//! threads through bounded queues. All protocol behavior lives in
//! `LearnerState::handle`, which the in-memory mode drives directly.

use crate::engine::LearnerEngine;
use crate::wire::{decode_from, encode_message, Decoded, WireMessage};
use crate::{OrchError, Result};
use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

#[derive(Debug, Clone)]
pub struct LearnerConfig {
    /// host:port to bind; port 0 picks an ephemeral one.
    pub addr: String,
    /// Environment interactions per update step. 1 requests one update per
    /// collected step; larger values train less often.
    pub steps_per_update: u32,
    /// Inbound frames buffered per connection before its reader blocks.
    pub queue_depth: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig { addr: "127.0.0.1:0".to_string(), steps_per_update: 1, queue_depth: 64 }
    }
}

/// `L2R_LEARNER_ADDR` wins over the configured address when set.
pub fn pick_addr(env_val: Option<String>, cfg_addr: &str) -> String {
    match env_val {
        Some(v) if !v.is_empty() => v,
        _ => cfg_addr.to_string(),
    }
}

pub const ADDR_ENV_VAR: &str = "L2R_LEARNER_ADDR";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub episode_return: f32,
    pub distance: f32,
    pub fell: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearnerStats {
    pub episodes: u64,
    pub transitions_received: u64,
    pub transitions_admitted: u64,
    pub updates_requested: u64,
    pub updates_performed: u64,
    pub weight_requests: u64,
    pub malformed_drops: u64,
    pub eval_results: Vec<EvalRecord>,
}

/// Engine plus protocol bookkeeping. Handling is strictly sequential; one
/// message fully lands (including its update steps) before the next starts,
/// so episodes are never partially inserted.
pub struct LearnerState<E> {
    pub engine: E,
    steps_per_update: u32,
    pub stats: LearnerStats,
    shutdown: bool,
}

impl<E: LearnerEngine> LearnerState<E> {
    pub fn new(engine: E, steps_per_update: u32) -> Result<LearnerState<E>> {
        if steps_per_update == 0 {
            return Err(OrchError::protocol("steps_per_update must be positive"));
        }
        Ok(LearnerState { engine, steps_per_update, stats: LearnerStats::default(), shutdown: false })
    }

    pub fn shutting_down(&self) -> bool {
        self.shutdown
    }

    /// Applies one inbound message; returns the reply to write back, if any.
    /// Episodes are ingested whole, then training runs at the configured
    /// pacing (episode length / steps_per_update). Any weight version is
    /// accepted; staleness is the samplers' business.
    pub fn handle(&mut self, msg: WireMessage) -> Result<Option<WireMessage>> {
        match msg {
            WireMessage::Hello => Ok(None),
            WireMessage::GetWeights => {
                self.stats.weight_requests += 1;
                let (version, checkpoint) = self.engine.snapshot()?;
                Ok(Some(WireMessage::Weights { version, checkpoint }))
            }
            WireMessage::Episode { transitions, .. } => {
                self.stats.episodes += 1;
                self.stats.transitions_received += transitions.len() as u64;
                self.stats.transitions_admitted += self.engine.ingest(&transitions)? as u64;
                let updates = transitions.len() / self.steps_per_update as usize;
                self.stats.updates_requested += updates as u64;
                self.stats.updates_performed += self.engine.train(updates)? as u64;
                Ok(None)
            }
            WireMessage::EvalResult { episode_return, distance, fell } => {
                self.stats.eval_results.push(EvalRecord { episode_return, distance, fell });
                Ok(None)
            }
            WireMessage::Shutdown => {
                self.shutdown = true;
                Ok(None)
            }
            WireMessage::Weights { .. } => {
                Err(OrchError::protocol("WEIGHTS arrived at the learner"))
            }
        }
    }
}

struct Conn {
    rx: Receiver<WireMessage>,
    stream: TcpStream,
    dead: bool,
}

/// A learner serving on its own thread. `join` waits for a SHUTDOWN message
/// to drain the queues; `stop` cuts connections immediately (which is also
/// how tests simulate a crash).
pub struct RunningLearner<E> {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: JoinHandle<Result<LearnerState<E>>>,
}

impl<E> RunningLearner<E> {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn join(self) -> Result<LearnerState<E>> {
        match self.thread.join() {
            Ok(r) => r,
            Err(_) => Err(OrchError::protocol("learner thread panicked")),
        }
    }

    pub fn stop(self) -> Result<LearnerState<E>> {
        self.stop.store(true, Ordering::SeqCst);
        self.join()
    }
}

pub fn serve_learner<E: LearnerEngine + 'static>(
    cfg: &LearnerConfig,
    engine: E,
) -> Result<RunningLearner<E>> {
    let bind_addr = pick_addr(std::env::var(ADDR_ENV_VAR).ok(), &cfg.addr);
    let listener = TcpListener::bind(&bind_addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let state = LearnerState::new(engine, cfg.steps_per_update)?;
    let stop = Arc::new(AtomicBool::new(false));
    let malformed = Arc::new(AtomicU64::new(0));
    let incoming: Arc<Mutex<Vec<Conn>>> = Arc::new(Mutex::new(Vec::new()));
    let queue_depth = cfg.queue_depth.max(1);

    let acceptor = {
        let stop = Arc::clone(&stop);
        let malformed = Arc::clone(&malformed);
        let incoming = Arc::clone(&incoming);
        thread::spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        stream.set_nodelay(true).ok();
                        let (tx, rx) = sync_channel(queue_depth);
                        let reader_stream = match stream.try_clone() {
                            Ok(s) => s,
                            Err(_) => continue,
                        };
                        let malformed = Arc::clone(&malformed);
                        let stop = Arc::clone(&stop);
                        thread::spawn(move || read_frames(reader_stream, tx, malformed, stop));
                        incoming.lock().unwrap().push(Conn { rx, stream, dead: false });
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        thread::sleep(Duration::from_millis(5));
                    }
                    Err(_) => break,
                }
            }
        })
    };

    let loop_stop = Arc::clone(&stop);
    let loop_malformed = Arc::clone(&malformed);
    let thread = thread::spawn(move || {
        let result = update_loop(state, &incoming, &loop_stop, &loop_malformed);
        loop_stop.store(true, Ordering::SeqCst);
        for conn in incoming.lock().unwrap().iter() {
            conn.stream.shutdown(Shutdown::Both).ok();
        }
        acceptor.join().ok();
        result
    });

    Ok(RunningLearner { addr, stop, thread })
}

/// One sweep takes at most one message per live connection, so no sampler
/// can starve the others however fast it submits.
fn update_loop<E: LearnerEngine>(
    mut state: LearnerState<E>,
    incoming: &Mutex<Vec<Conn>>,
    stop: &AtomicBool,
    malformed: &AtomicU64,
) -> Result<LearnerState<E>> {
    let mut conns: Vec<Conn> = Vec::new();
    loop {
        conns.append(&mut incoming.lock().unwrap());
        let mut handled = 0usize;
        for conn in conns.iter_mut() {
            match conn.rx.try_recv() {
                Ok(msg) => {
                    handled += 1;
                    match state.handle(msg) {
                        Ok(None) => {}
                        Ok(Some(reply)) => {
                            if conn.stream.write_all(&encode_message(&reply)).is_err() {
                                conn.stream.shutdown(Shutdown::Both).ok();
                                conn.dead = true;
                            }
                        }
                        Err(OrchError::Protocol(_)) => {
                            malformed.fetch_add(1, Ordering::SeqCst);
                            conn.stream.shutdown(Shutdown::Both).ok();
                            conn.dead = true;
                        }
                        Err(fatal) => return Err(fatal),
                    }
                }
                Err(TryRecvError::Empty) => {}
                Err(TryRecvError::Disconnected) => conn.dead = true,
            }
        }
        conns.retain(|c| !c.dead);
        if stop.load(Ordering::SeqCst) {
            break;
        }
        if handled == 0 {
            if state.shutting_down() {
                break;
            }
            thread::sleep(Duration::from_millis(1));
        }
    }
    state.stats.malformed_drops += malformed.load(Ordering::SeqCst);
    Ok(state)
}

/// Per-connection reader: streaming decode, one queued message at a time.
/// A malformed frame kills just this connection and bumps the shared
/// counter; a clean disconnect is silent.
fn read_frames(
    mut stream: TcpStream,
    tx: std::sync::mpsc::SyncSender<WireMessage>,
    malformed: Arc<AtomicU64>,
    stop: Arc<AtomicBool>,
) {
    stream.set_read_timeout(Some(Duration::from_millis(100))).ok();
    let mut buf: Vec<u8> = Vec::new();
    let mut chunk = [0u8; 16 * 1024];
    while !stop.load(Ordering::SeqCst) {
        loop {
            match decode_from(&buf) {
                Ok(Decoded::Frame(msg, used)) => {
                    buf.drain(..used);
                    if tx.send(msg).is_err() {
                        return;
                    }
                }
                Ok(Decoded::NeedMoreBytes) => break,
                Err(_) => {
                    malformed.fetch_add(1, Ordering::SeqCst);
                    stream.shutdown(Shutdown::Both).ok();
                    return;
                }
            }
        }
        match stream.read(&mut chunk) {
            Ok(0) => return,
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut => {}
            Err(_) => return,
        }
    }
}
