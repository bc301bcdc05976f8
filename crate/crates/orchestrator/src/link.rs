//! Client-side transport. Samplers and evaluators talk through a `Link`;
//! `TcpLink` adds reconnection with exponential backoff, in-memory mode
//! implements the same trait over a `LearnerState`.

use crate::wire::{decode_from, encode_message, Decoded, WireMessage};
use crate::{OrchError, Result};
use std::io::{Read, Write};
use std::net::TcpStream;
use std::thread;
use std::time::Duration;

pub trait Link {
    /// Delivers a message that expects no reply. At-least-once: a send that
    /// dies mid-frame is retried whole on a fresh connection.
    fn send(&mut self, msg: &WireMessage) -> Result<()>;

    /// Requests the current weights; returns (version, checkpoint bytes).
    fn fetch_weights(&mut self) -> Result<(u64, Vec<u8>)>;
}

#[derive(Debug, Clone)]
pub struct Backoff {
    pub base: Duration,
    pub cap: Duration,
    pub max_tries: u32,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff { base: Duration::from_millis(500), cap: Duration::from_secs(30), max_tries: 16 }
    }
}

pub struct TcpLink {
    addr: String,
    backoff: Backoff,
    stream: Option<TcpStream>,
    buf: Vec<u8>,
    connected_once: bool,
    pub reconnects: u64,
}

impl TcpLink {
    pub fn new(addr: String, backoff: Backoff) -> TcpLink {
        TcpLink { addr, backoff, stream: None, buf: Vec::new(), connected_once: false, reconnects: 0 }
    }

    fn ensure_connected(&mut self) -> std::io::Result<()> {
        if self.stream.is_some() {
            return Ok(());
        }
        let mut stream = TcpStream::connect(&self.addr)?;
        stream.set_nodelay(true).ok();
        stream.set_read_timeout(Some(Duration::from_secs(30))).ok();
        // Greet on every (re)connect; leftover reply bytes from a dead
        // connection would desync the framing, so the buffer resets too.
        stream.write_all(&encode_message(&WireMessage::Hello))?;
        self.buf.clear();
        if self.connected_once {
            self.reconnects += 1;
        }
        self.connected_once = true;
        self.stream = Some(stream);
        Ok(())
    }

    fn disconnect(&mut self) {
        self.stream = None;
        self.buf.clear();
    }

    fn try_send(&mut self, frame: &[u8]) -> std::io::Result<()> {
        self.ensure_connected()?;
        self.stream.as_mut().unwrap().write_all(frame)
    }

    fn try_fetch(&mut self) -> Result<(u64, Vec<u8>)> {
        self.try_send(&encode_message(&WireMessage::GetWeights))?;
        let mut chunk = [0u8; 16 * 1024];
        loop {
            match decode_from(&self.buf)? {
                Decoded::Frame(WireMessage::Weights { version, checkpoint }, used) => {
                    self.buf.drain(..used);
                    return Ok((version, checkpoint));
                }
                Decoded::Frame(other, _) => {
                    return Err(OrchError::protocol(format!(
                        "expected WEIGHTS, got {other:?}"
                    )));
                }
                Decoded::NeedMoreBytes => {
                    let n = self.stream.as_mut().unwrap().read(&mut chunk)?;
                    if n == 0 {
                        return Err(std::io::Error::from(std::io::ErrorKind::UnexpectedEof).into());
                    }
                    self.buf.extend_from_slice(&chunk[..n]);
                }
            }
        }
    }

    fn sleep_and_grow(&self, delay: &mut Duration) {
        thread::sleep(*delay);
        *delay = (*delay * 2).min(self.backoff.cap);
    }
}

impl Link for TcpLink {
    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        let frame = encode_message(msg);
        let mut delay = self.backoff.base;
        let mut last: Option<std::io::Error> = None;
        for _ in 0..self.backoff.max_tries.max(1) {
            match self.try_send(&frame) {
                Ok(()) => return Ok(()),
                Err(e) => {
                    self.disconnect();
                    last = Some(e);
                    self.sleep_and_grow(&mut delay);
                }
            }
        }
        Err(last.unwrap().into())
    }

    fn fetch_weights(&mut self) -> Result<(u64, Vec<u8>)> {
        let mut delay = self.backoff.base;
        let mut last: Option<OrchError> = None;
        for _ in 0..self.backoff.max_tries.max(1) {
            match self.try_fetch() {
                Ok(out) => return Ok(out),
                // Protocol violations are not retried; the peer is confused,
                // not unreachable.
                Err(e @ OrchError::Protocol(_)) => return Err(e),
                Err(e) => {
                    self.disconnect();
                    last = Some(e);
                    self.sleep_and_grow(&mut delay);
                }
            }
        }
        Err(last.unwrap())
    }
}
