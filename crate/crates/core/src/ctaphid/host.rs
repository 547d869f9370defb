//! Host side of CTAPHID: channel allocation and request/response
//! transactions, safe to use from several threads on distinct channels.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::RngCore;

use super::frame::{fragment, Assembler, Frame, FrameKind, BROADCAST_CID};
use super::transport::HidTransport;
use super::{cmd, HidError};
use crate::client::{ClientResult, CtapTransport};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3);
const READ_SLICE: Duration = Duration::from_millis(5);

/// A host connection to one device. Reports read on behalf of one channel
/// are parked for the others.
pub struct HidConnection<T> {
    transport: T,
    inbox: Mutex<HashMap<u32, VecDeque<Frame>>>,
}

impl<T: HidTransport> HidConnection<T> {
    pub fn new(transport: T) -> Arc<Self> {
        Arc::new(HidConnection {
            transport,
            inbox: Mutex::new(HashMap::new()),
        })
    }

    fn send(&self, frames: &[Frame]) -> Result<(), HidError> {
        frames
            .iter()
            .try_for_each(|f| self.transport.write_report(f.as_bytes()))
    }

    /// Next frame for `cid`, or `None` once `deadline` passes.
    fn next_frame(&self, cid: u32, deadline: Instant) -> Result<Option<Frame>, HidError> {
        self.next_frame_matching(cid, deadline, |_| true)
    }

    fn next_frame_matching(
        &self,
        cid: u32,
        deadline: Instant,
        accept: impl Fn(&Frame) -> bool,
    ) -> Result<Option<Frame>, HidError> {
        loop {
            let mut inbox = self.inbox.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(queue) = inbox.get_mut(&cid) {
                if let Some(pos) = queue.iter().position(&accept) {
                    return Ok(queue.remove(pos));
                }
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            // Reading under the lock serializes readers; the slice is short so
            // other channels get their turn.
            if let Some(raw) = self.transport.read_report(READ_SLICE.min(deadline - now))? {
                let frame = Frame::from_report(raw);
                if frame.cid() == cid && accept(&frame) {
                    return Ok(Some(frame));
                }
                inbox.entry(frame.cid()).or_default().push_back(frame);
            }
        }
    }

    /// Allocates a channel with a fresh random nonce.
    pub fn open_channel(self: &Arc<Self>) -> Result<HidChannel<T>, HidError> {
        let mut nonce = [0u8; 8];
        rand::thread_rng().fill_bytes(&mut nonce);
        self.open_channel_with_nonce(nonce)
    }

    pub fn open_channel_with_nonce(self: &Arc<Self>, nonce: [u8; 8]) -> Result<HidChannel<T>, HidError> {
        self.send(&fragment(BROADCAST_CID, cmd::INIT, &nonce)?)?;
        let deadline = Instant::now() + DEFAULT_TIMEOUT;
        // Other requesters' grants share the broadcast channel; only ours echoes our nonce.
        let ours = |f: &Frame| {
            matches!(f.kind(), FrameKind::Init { cmd: c, data, .. }
                if (c == cmd::INIT && data[..8] == nonce) || c == cmd::ERROR)
        };
        let frame = self
            .next_frame_matching(BROADCAST_CID, deadline, ours)?
            .ok_or(HidError::Timeout)?;
        match frame.kind() {
            FrameKind::Init {
                cmd: cmd::ERROR, data, ..
            } => Err(HidError::ErrorFrame(data[0])),
            FrameKind::Init { total_len, data, .. } if total_len >= 17 => {
                let cid = u32::from_be_bytes(data[8..12].try_into().unwrap());
                if cid == 0 || cid == BROADCAST_CID {
                    return Err(HidError::UnexpectedResponse("device granted a reserved channel id"));
                }
                Ok(HidChannel {
                    conn: self.clone(),
                    cid,
                    protocol_version: data[12],
                    capabilities: data[16],
                    busy: AtomicBool::new(false),
                    timeout: DEFAULT_TIMEOUT,
                })
            }
            _ => Err(HidError::UnexpectedResponse("short INIT response")),
        }
    }
}

/// An allocated channel. One transaction at a time.
pub struct HidChannel<T> {
    conn: Arc<HidConnection<T>>,
    cid: u32,
    protocol_version: u8,
    capabilities: u8,
    busy: AtomicBool,
    timeout: Duration,
}

struct BusyGuard<'a>(&'a AtomicBool);

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

impl<T: HidTransport> HidChannel<T> {
    pub fn cid(&self) -> u32 {
        self.cid
    }

    pub fn protocol_version(&self) -> u8 {
        self.protocol_version
    }

    pub fn capabilities(&self) -> u8 {
        self.capabilities
    }

    /// Time allowed between response frames; keepalives restart it.
    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    pub fn transact(&self, command: u8, payload: &[u8]) -> Result<Vec<u8>, HidError> {
        if self
            .busy
            .compare_exchange(false, true, Ordering::Acquire, Ordering::Relaxed)
            .is_err()
        {
            return Err(HidError::ChannelBusy);
        }
        let _guard = BusyGuard(&self.busy);
        self.conn.send(&fragment(self.cid, command, payload)?)?;

        let mut deadline = Instant::now() + self.timeout;
        let mut assembler: Option<Assembler> = None;
        loop {
            let frame = self.conn.next_frame(self.cid, deadline)?.ok_or(HidError::Timeout)?;
            deadline = Instant::now() + self.timeout;
            match (frame.kind(), assembler.as_mut()) {
                (
                    FrameKind::Init {
                        cmd: cmd::KEEPALIVE, ..
                    },
                    _,
                ) => continue,
                (
                    FrameKind::Init {
                        cmd: cmd::ERROR, data, ..
                    },
                    _,
                ) => return Err(HidError::ErrorFrame(data[0])),
                (FrameKind::Init { cmd: c, .. }, _) if c != command => {
                    return Err(HidError::UnexpectedResponse("response command differs from request"))
                }
                (FrameKind::Init { .. }, _) => match Assembler::start(&frame)? {
                    Ok((_, data)) => return Ok(data),
                    Err(a) => assembler = Some(a),
                },
                (FrameKind::Cont { .. }, None) => continue,
                (FrameKind::Cont { .. }, Some(a)) => {
                    if let Some((_, data)) = a.push(&frame)? {
                        return Ok(data);
                    }
                }
            }
        }
    }

    pub fn ping(&self, payload: &[u8]) -> Result<Vec<u8>, HidError> {
        self.transact(cmd::PING, payload)
    }

    pub fn cbor(&self, request: &[u8]) -> Result<Vec<u8>, HidError> {
        self.transact(cmd::CBOR, request)
    }
}

impl<T: HidTransport> CtapTransport for HidChannel<T> {
    fn exchange(&mut self, request: &[u8]) -> ClientResult<Vec<u8>> {
        Ok(self.cbor(request)?)
    }
}

impl<T: HidTransport> CtapTransport for &HidChannel<T> {
    fn exchange(&mut self, request: &[u8]) -> ClientResult<Vec<u8>> {
        Ok(self.cbor(request)?)
    }
}
