//! Authenticator side of CTAPHID: channel table, reassembly per channel,
//! and the loop that feeds complete CBOR messages to the authenticator.

use std::collections::HashMap;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::frame::{fragment, Assembler, Frame, FrameKind, BROADCAST_CID, MAX_PAYLOAD};
use super::transport::HidTransport;
use super::{capability, cmd, err, keepalive, HidError, PROTOCOL_VERSION};
use crate::authenticator::{Authenticator, UserPresence};

pub const DEFAULT_KEEPALIVE_INTERVAL: Duration = Duration::from_millis(100);
pub const DEFAULT_MESSAGE_TIMEOUT: Duration = Duration::from_millis(500);
const POLL_INTERVAL: Duration = Duration::from_millis(20);

pub const DEVICE_VERSION: [u8; 3] = [0, 1, 0];

/// A fully received request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub cid: u32,
    pub cmd: u8,
    pub payload: Vec<u8>,
    /// When the initialization frame arrived.
    pub received_at: Instant,
}

#[derive(Debug)]
enum ChannelState {
    Idle,
    Receiving {
        assembler: Assembler,
        started: Instant,
        last_frame: Instant,
    },
}

pub fn error_frame(cid: u32, code: u8) -> Frame {
    Frame::init(cid, cmd::ERROR, 1, &[code])
}

/// Device-side channel table.
#[derive(Debug)]
pub struct ChannelMux {
    channels: HashMap<u32, ChannelState>,
    next_cid: u32,
}

impl Default for ChannelMux {
    fn default() -> Self {
        Self::new()
    }
}

impl ChannelMux {
    pub fn new() -> Self {
        ChannelMux {
            channels: HashMap::new(),
            next_cid: 1,
        }
    }

    pub fn is_allocated(&self, cid: u32) -> bool {
        self.channels.contains_key(&cid)
    }

    fn allocate(&mut self) -> u32 {
        loop {
            let cid = self.next_cid;
            self.next_cid = self.next_cid.wrapping_add(1);
            if cid != 0 && cid != BROADCAST_CID && !self.channels.contains_key(&cid) {
                self.channels.insert(cid, ChannelState::Idle);
                return cid;
            }
        }
    }

    fn init_response(reply_cid: u32, nonce: &[u8; 8], granted: u32) -> Frame {
        let mut data = [0u8; 17];
        data[..8].copy_from_slice(nonce);
        data[8..12].copy_from_slice(&granted.to_be_bytes());
        data[12] = PROTOCOL_VERSION;
        data[13..16].copy_from_slice(&DEVICE_VERSION);
        data[16] = capability::CBOR | capability::NMSG;
        Frame::init(reply_cid, cmd::INIT, data.len(), &data)
    }

    /// Answers an INIT on the broadcast channel by granting a fresh channel.
    pub fn handle_init(&mut self, nonce: [u8; 8]) -> Frame {
        let cid = self.allocate();
        Self::init_response(BROADCAST_CID, &nonce, cid)
    }

    /// Processes one report. Returns a complete message, an immediate reply
    /// (INIT response or error), or nothing.
    pub fn receive(&mut self, frame: &Frame, now: Instant) -> Option<Result<Message, Frame>> {
        let cid = frame.cid();
        match frame.kind() {
            FrameKind::Init {
                cmd: command,
                total_len,
                data,
            } => {
                if command == cmd::INIT {
                    if total_len != 8 {
                        return Some(Err(error_frame(cid, err::INVALID_LEN)));
                    }
                    let nonce: [u8; 8] = data[..8].try_into().unwrap();
                    if cid == BROADCAST_CID {
                        return Some(Err(self.handle_init(nonce)));
                    }
                    // Resynchronize an existing channel.
                    return match self.channels.get_mut(&cid) {
                        Some(state) => {
                            *state = ChannelState::Idle;
                            Some(Err(Self::init_response(cid, &nonce, cid)))
                        }
                        None => Some(Err(error_frame(cid, err::INVALID_CHANNEL))),
                    };
                }
                let Some(state) = self.channels.get_mut(&cid) else {
                    return Some(Err(error_frame(cid, err::INVALID_CHANNEL)));
                };
                if matches!(state, ChannelState::Receiving { .. }) {
                    *state = ChannelState::Idle;
                    return Some(Err(error_frame(cid, err::INVALID_SEQ)));
                }
                if total_len > MAX_PAYLOAD {
                    return Some(Err(error_frame(cid, err::INVALID_LEN)));
                }
                match Assembler::start(frame) {
                    Ok(Ok((cmd, payload))) => Some(Ok(Message {
                        cid,
                        cmd,
                        payload,
                        received_at: now,
                    })),
                    Ok(Err(assembler)) => {
                        *state = ChannelState::Receiving {
                            assembler,
                            started: now,
                            last_frame: now,
                        };
                        None
                    }
                    Err(_) => Some(Err(error_frame(cid, err::INVALID_LEN))),
                }
            }
            FrameKind::Cont { .. } => {
                // Continuations on idle or unknown channels are dropped.
                let state = self.channels.get_mut(&cid)?;
                let ChannelState::Receiving {
                    assembler,
                    started,
                    last_frame,
                } = state
                else {
                    return None;
                };
                match assembler.push(frame) {
                    Ok(Some((cmd, payload))) => {
                        let received_at = *started;
                        *state = ChannelState::Idle;
                        Some(Ok(Message {
                            cid,
                            cmd,
                            payload,
                            received_at,
                        }))
                    }
                    Ok(None) => {
                        *last_frame = now;
                        None
                    }
                    Err(_) => {
                        *state = ChannelState::Idle;
                        Some(Err(error_frame(cid, err::INVALID_SEQ)))
                    }
                }
            }
        }
    }

    /// Aborts receptions that stalled for longer than `timeout`.
    pub fn expire(&mut self, now: Instant, timeout: Duration) -> Vec<Frame> {
        let mut out = Vec::new();
        for (&cid, state) in self.channels.iter_mut() {
            if let ChannelState::Receiving { last_frame, .. } = state {
                if now.duration_since(*last_frame) > timeout {
                    *state = ChannelState::Idle;
                    out.push(error_frame(cid, err::MSG_TIMEOUT));
                }
            }
        }
        out
    }
}

/// One CBOR transaction as seen at the device edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransactionTiming {
    pub cid: u32,
    pub ctap_command: u8,
    pub request_len: usize,
    pub response_len: usize,
    pub response_frames: usize,
    /// First request frame in to last response frame out.
    pub elapsed: Duration,
}

#[derive(Debug, Default)]
pub struct TimingLog {
    entries: Mutex<Vec<TransactionTiming>>,
    cv: Condvar,
}

impl TimingLog {
    fn push(&self, t: TransactionTiming) {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).push(t);
        self.cv.notify_all();
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> Vec<TransactionTiming> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Waits until entry `index` exists. The device records a transaction
    /// only after writing its last frame, which can be after the host returns.
    pub fn wait_for(&self, index: usize, timeout: Duration) -> Option<TransactionTiming> {
        let guard = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        let (guard, _) = self
            .cv
            .wait_timeout_while(guard, timeout, |e| e.len() <= index)
            .unwrap_or_else(|e| e.into_inner());
        guard.get(index).copied()
    }
}

/// Sends UP_NEEDED keepalives while the wrapped presence check blocks.
struct KeepalivePresence<'a, T> {
    inner: &'a (dyn UserPresence + Send + Sync),
    transport: &'a T,
    cid: u32,
    interval: Duration,
}

impl<T: HidTransport> UserPresence for KeepalivePresence<'_, T> {
    fn confirm(&self, rp_id: &str) -> bool {
        let (stop, stopped) = mpsc::channel::<()>();
        thread::scope(|s| {
            s.spawn(move || {
                let frame = Frame::init(self.cid, cmd::KEEPALIVE, 1, &[keepalive::UP_NEEDED]);
                while let Err(RecvTimeoutError::Timeout) = stopped.recv_timeout(self.interval) {
                    if self.transport.write_report(frame.as_bytes()).is_err() {
                        break;
                    }
                }
            });
            let ok = self.inner.confirm(rp_id);
            drop(stop);
            ok
        })
    }
}

pub type SharedPresence = Box<dyn UserPresence + Send + Sync>;

/// An authenticator behind a CTAPHID report transport.
pub struct HidDevice<T> {
    transport: T,
    authenticator: Authenticator,
    presence: SharedPresence,
    mux: ChannelMux,
    keepalive_interval: Duration,
    message_timeout: Duration,
    timings: Arc<TimingLog>,
}

impl<T: HidTransport + 'static> HidDevice<T> {
    pub fn new(transport: T, authenticator: Authenticator, presence: SharedPresence) -> Self {
        HidDevice {
            transport,
            authenticator,
            presence,
            mux: ChannelMux::new(),
            keepalive_interval: DEFAULT_KEEPALIVE_INTERVAL,
            message_timeout: DEFAULT_MESSAGE_TIMEOUT,
            timings: Arc::default(),
        }
    }

    pub fn with_keepalive_interval(mut self, interval: Duration) -> Self {
        self.keepalive_interval = interval;
        self
    }

    pub fn with_message_timeout(mut self, timeout: Duration) -> Self {
        self.message_timeout = timeout;
        self
    }

    pub fn timings(&self) -> Arc<TimingLog> {
        self.timings.clone()
    }

    fn write_all(&self, frames: &[Frame]) -> Result<(), HidError> {
        frames
            .iter()
            .try_for_each(|f| self.transport.write_report(f.as_bytes()))
    }

    /// Serves requests until the transport disconnects, then hands the
    /// authenticator back.
    pub fn run(mut self) -> Authenticator {
        while let Ok(report) = self.transport.read_report(POLL_INTERVAL) {
            let now = Instant::now();
            let stale = self.mux.expire(now, self.message_timeout);
            if self.write_all(&stale).is_err() {
                break;
            }
            let Some(raw) = report else { continue };
            let outcome = match self.mux.receive(&Frame::from_report(raw), now) {
                None => Ok(()),
                Some(Err(reply)) => self.write_all(&[reply]),
                Some(Ok(message)) => self.dispatch(message),
            };
            if outcome.is_err() {
                break;
            }
        }
        self.authenticator
    }

    fn dispatch(&mut self, message: Message) -> Result<(), HidError> {
        let cid = message.cid;
        match message.cmd {
            cmd::PING => self.write_all(&fragment(cid, cmd::PING, &message.payload)?),
            cmd::CBOR if message.payload.is_empty() => self.write_all(&[error_frame(cid, err::INVALID_LEN)]),
            cmd::CBOR => {
                let presence = KeepalivePresence {
                    inner: self.presence.as_ref(),
                    transport: &self.transport,
                    cid,
                    interval: self.keepalive_interval,
                };
                let response = self.authenticator.handle_command(&message.payload, &presence);
                let frames = fragment(cid, cmd::CBOR, &response)?;
                self.write_all(&frames)?;
                self.timings.push(TransactionTiming {
                    cid,
                    ctap_command: message.payload[0],
                    request_len: message.payload.len(),
                    response_len: response.len(),
                    response_frames: frames.len(),
                    elapsed: message.received_at.elapsed(),
                });
                Ok(())
            }
            cmd::CANCEL => Ok(()),
            _ => self.write_all(&[error_frame(cid, err::INVALID_CMD)]),
        }
    }

    pub fn spawn(self) -> DeviceHandle {
        let timings = self.timings.clone();
        let join = thread::Builder::new()
            .name("ctaphid-device".into())
            .spawn(move || self.run())
            .expect("spawn device thread");
        DeviceHandle { join, timings }
    }
}

/// A device loop running on its own thread.
pub struct DeviceHandle {
    join: JoinHandle<Authenticator>,
    pub timings: Arc<TimingLog>,
}

impl DeviceHandle {
    /// Waits for the loop to exit (after the host end is dropped).
    pub fn join(self) -> Authenticator {
        self.join.join().expect("device thread panicked")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn init_request(cid: u32, nonce: [u8; 8]) -> Frame {
        Frame::init(cid, cmd::INIT, 8, &nonce)
    }

    fn granted(reply: &Frame) -> ([u8; 8], u32) {
        let FrameKind::Init {
            cmd: c,
            total_len,
            data,
        } = reply.kind()
        else {
            panic!("expected init frame")
        };
        assert_eq!((c, total_len), (cmd::INIT, 17));
        assert_eq!(data[12], PROTOCOL_VERSION);
        assert_eq!(data[16] & capability::CBOR, capability::CBOR);
        (
            data[..8].try_into().unwrap(),
            u32::from_be_bytes(data[8..12].try_into().unwrap()),
        )
    }

    #[test]
    fn init_grants_distinct_channels_and_echoes_nonce() {
        let mut mux = ChannelMux::new();
        let a = mux.handle_init(*b"nonce-01");
        let b = mux.handle_init(*b"nonce-02");
        assert_eq!(a.cid(), BROADCAST_CID);
        let (na, ca) = granted(&a);
        let (nb, cb) = granted(&b);
        assert_eq!(&na, b"nonce-01");
        assert_eq!(&nb, b"nonce-02");
        assert_ne!(ca, cb);
        for cid in [ca, cb] {
            assert!(cid != 0 && cid != BROADCAST_CID && mux.is_allocated(cid));
        }
    }

    #[test]
    fn init_via_receive() {
        let mut mux = ChannelMux::new();
        let reply = mux
            .receive(&init_request(BROADCAST_CID, [9; 8]), Instant::now())
            .unwrap()
            .unwrap_err();
        let (nonce, cid) = granted(&reply);
        assert_eq!(nonce, [9; 8]);
        // Resync on the allocated channel keeps the id.
        let reply = mux
            .receive(&init_request(cid, [8; 8]), Instant::now())
            .unwrap()
            .unwrap_err();
        assert_eq!(reply.cid(), cid);
        assert_eq!(granted(&reply), ([8; 8], cid));
    }

    #[test]
    fn unallocated_channel_rejected() {
        let mut mux = ChannelMux::new();
        let frame = Frame::init(0x1234, cmd::CBOR, 1, &[4]);
        let reply = mux.receive(&frame, Instant::now()).unwrap().unwrap_err();
        assert_eq!(reply, error_frame(0x1234, err::INVALID_CHANNEL));
        let bcast = Frame::init(BROADCAST_CID, cmd::CBOR, 1, &[4]);
        assert_eq!(
            mux.receive(&bcast, Instant::now()).unwrap().unwrap_err(),
            error_frame(BROADCAST_CID, err::INVALID_CHANNEL)
        );
    }

    #[test]
    fn interleaved_channels_reassemble_independently() {
        let mut mux = ChannelMux::new();
        let (_, a) = granted(&mux.handle_init([1; 8]));
        let (_, b) = granted(&mux.handle_init([2; 8]));
        let pa: Vec<u8> = (0..3000).map(|i| i as u8).collect();
        let pb = vec![0xee; 2420];
        let fa = fragment(a, cmd::CBOR, &pa).unwrap();
        let fb = fragment(b, cmd::CBOR, &pb).unwrap();
        let mut done = Vec::new();
        for i in 0..fa.len().max(fb.len()) {
            for f in [fa.get(i), fb.get(i)].into_iter().flatten() {
                if let Some(r) = mux.receive(f, Instant::now()) {
                    done.push(r.unwrap());
                }
            }
        }
        assert_eq!(done.len(), 2);
        let got_a = done.iter().find(|m| m.cid == a).unwrap();
        let got_b = done.iter().find(|m| m.cid == b).unwrap();
        assert_eq!(got_a.payload, pa);
        assert_eq!(got_b.payload, pb);
    }

    #[test]
    fn out_of_order_continuation_resets_channel() {
        let mut mux = ChannelMux::new();
        let (_, cid) = granted(&mux.handle_init([1; 8]));
        let frames = fragment(cid, cmd::CBOR, &[5; 300]).unwrap();
        assert!(mux.receive(&frames[0], Instant::now()).is_none());
        let reply = mux.receive(&frames[2], Instant::now()).unwrap().unwrap_err();
        assert_eq!(reply, error_frame(cid, err::INVALID_SEQ));
        // Channel is usable again.
        let mut result = None;
        for f in &frames {
            result = mux.receive(f, Instant::now()).or(result);
        }
        assert_eq!(result.unwrap().unwrap().payload, vec![5; 300]);
    }

    #[test]
    fn spurious_continuation_ignored() {
        let mut mux = ChannelMux::new();
        let (_, cid) = granted(&mux.handle_init([1; 8]));
        assert!(mux.receive(&Frame::cont(cid, 0, &[1; 59]), Instant::now()).is_none());
    }

    #[test]
    fn stalled_reception_expires() {
        let mut mux = ChannelMux::new();
        let (_, cid) = granted(&mux.handle_init([1; 8]));
        let frames = fragment(cid, cmd::CBOR, &[5; 300]).unwrap();
        let t0 = Instant::now();
        mux.receive(&frames[0], t0);
        assert!(mux
            .expire(t0 + Duration::from_millis(10), Duration::from_millis(500))
            .is_empty());
        let stale = mux.expire(t0 + Duration::from_secs(1), Duration::from_millis(500));
        assert_eq!(stale, vec![error_frame(cid, err::MSG_TIMEOUT)]);
    }

    #[test]
    fn oversized_declared_length() {
        let mut mux = ChannelMux::new();
        let (_, cid) = granted(&mux.handle_init([1; 8]));
        let reply = mux.receive(&Frame::init(cid, cmd::CBOR, 7610, &[]), Instant::now());
        assert_eq!(reply.unwrap().unwrap_err(), error_frame(cid, err::INVALID_LEN));
    }
}
