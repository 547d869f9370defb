//! CTAPHID: CTAP over 64-byte HID reports.
//!
//! [`frame`] handles fragmentation, [`device`] runs the authenticator side,
//! [`host`] multiplexes client channels, and [`transport`] moves reports.

pub mod device;
pub mod frame;
#[cfg(feature = "hidg")]
pub mod hidg;
pub mod host;
pub mod transport;

use thiserror::Error;

pub use device::{ChannelMux, DeviceHandle, HidDevice, TransactionTiming};
pub use frame::{fragment, reassemble, Frame, FrameKind, BROADCAST_CID, MAX_PAYLOAD, REPORT_LEN};
pub use host::{HidChannel, HidConnection};
pub use transport::{loopback, HidTransport, LoopbackEnd};

/// FIDO HID usage page and usage, as a descriptor would declare them.
pub const FIDO_USAGE_PAGE: u16 = 0xF1D0;
pub const FIDO_USAGE_CTAPHID: u8 = 0x01;

pub const PROTOCOL_VERSION: u8 = 2;

/// Command codes, without the initialization bit.
pub mod cmd {
    pub const PING: u8 = 0x01;
    pub const MSG: u8 = 0x03;
    pub const INIT: u8 = 0x06;
    pub const CBOR: u8 = 0x10;
    pub const CANCEL: u8 = 0x11;
    pub const KEEPALIVE: u8 = 0x3B;
    pub const ERROR: u8 = 0x3F;
}

/// Payload byte of an ERROR response.
pub mod err {
    pub const INVALID_CMD: u8 = 0x01;
    pub const INVALID_PAR: u8 = 0x02;
    pub const INVALID_LEN: u8 = 0x03;
    pub const INVALID_SEQ: u8 = 0x04;
    pub const MSG_TIMEOUT: u8 = 0x05;
    pub const CHANNEL_BUSY: u8 = 0x06;
    pub const INVALID_CHANNEL: u8 = 0x0B;
    pub const OTHER: u8 = 0x7F;
}

/// Payload byte of a KEEPALIVE response.
pub mod keepalive {
    pub const PROCESSING: u8 = 0x01;
    pub const UP_NEEDED: u8 = 0x02;
}

/// Capability flags reported in the INIT response.
pub mod capability {
    pub const WINK: u8 = 0x01;
    pub const CBOR: u8 = 0x04;
    /// Set when CTAPHID_MSG is *not* implemented.
    pub const NMSG: u8 = 0x08;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HidError {
    #[error("payload of {0} bytes exceeds the 7609-byte maximum")]
    PayloadTooLarge(usize),
    #[error("continuation frame out of sequence")]
    InvalidSequence,
    #[error("frame belongs to a different channel")]
    ChannelMismatch,
    #[error("continuation frame without an initialization frame")]
    SpuriousContinuation,
    #[error("HID report must be 64 bytes, got {0}")]
    InvalidReport(usize),
    #[error("message ended before its declared length")]
    Incomplete,
    #[error("no response before the transaction timeout")]
    Timeout,
    #[error("device returned CTAPHID error 0x{0:02X}")]
    ErrorFrame(u8),
    #[error("a transaction is already in flight on this channel")]
    ChannelBusy,
    #[error("transport disconnected")]
    Disconnected,
    #[error("unexpected response: {0}")]
    UnexpectedResponse(&'static str),
    #[error("I/O: {0}")]
    Io(String),
}
