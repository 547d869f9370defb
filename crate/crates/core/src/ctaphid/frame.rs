//! 64-byte CTAPHID reports.
//!
//! Initialization frame: `cid (4) ∥ cmd|0x80 (1) ∥ bcnt (2, big-endian) ∥ data (57)`.
//! Continuation frame: `cid (4) ∥ seq (1, < 0x80) ∥ data (59)`.

use super::HidError;

pub const REPORT_LEN: usize = 64;
pub const INIT_DATA_LEN: usize = REPORT_LEN - 7;
pub const CONT_DATA_LEN: usize = REPORT_LEN - 5;
pub const MAX_SEQ: usize = 128;
/// One initialization frame plus 128 continuation frames.
pub const MAX_PAYLOAD: usize = INIT_DATA_LEN + MAX_SEQ * CONT_DATA_LEN;
pub const BROADCAST_CID: u32 = 0xFFFF_FFFF;

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Frame([u8; REPORT_LEN]);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind<'a> {
    Init { cmd: u8, total_len: usize, data: &'a [u8] },
    Cont { seq: u8, data: &'a [u8] },
}

impl Frame {
    pub fn init(cid: u32, cmd: u8, total_len: usize, data: &[u8]) -> Frame {
        debug_assert!(data.len() <= INIT_DATA_LEN && total_len <= u16::MAX as usize);
        let mut raw = [0u8; REPORT_LEN];
        raw[..4].copy_from_slice(&cid.to_be_bytes());
        raw[4] = cmd | 0x80;
        raw[5..7].copy_from_slice(&(total_len as u16).to_be_bytes());
        raw[7..7 + data.len()].copy_from_slice(data);
        Frame(raw)
    }

    pub fn cont(cid: u32, seq: u8, data: &[u8]) -> Frame {
        debug_assert!(data.len() <= CONT_DATA_LEN && (seq as usize) < MAX_SEQ);
        let mut raw = [0u8; REPORT_LEN];
        raw[..4].copy_from_slice(&cid.to_be_bytes());
        raw[4] = seq & 0x7f;
        raw[5..5 + data.len()].copy_from_slice(data);
        Frame(raw)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Frame, HidError> {
        let raw: [u8; REPORT_LEN] = bytes.try_into().map_err(|_| HidError::InvalidReport(bytes.len()))?;
        Ok(Frame(raw))
    }

    pub fn from_report(raw: [u8; REPORT_LEN]) -> Frame {
        Frame(raw)
    }

    pub fn as_bytes(&self) -> &[u8; REPORT_LEN] {
        &self.0
    }

    pub fn cid(&self) -> u32 {
        u32::from_be_bytes(self.0[..4].try_into().unwrap())
    }

    pub fn is_init(&self) -> bool {
        self.0[4] & 0x80 != 0
    }

    pub fn kind(&self) -> FrameKind<'_> {
        if self.is_init() {
            FrameKind::Init {
                cmd: self.0[4] & 0x7f,
                total_len: u16::from_be_bytes([self.0[5], self.0[6]]) as usize,
                data: &self.0[7..],
            }
        } else {
            FrameKind::Cont {
                seq: self.0[4],
                data: &self.0[5..],
            }
        }
    }
}

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind() {
            FrameKind::Init { cmd, total_len, .. } => {
                write!(
                    f,
                    "Frame::Init(cid={:08x}, cmd=0x{cmd:02x}, len={total_len})",
                    self.cid()
                )
            }
            FrameKind::Cont { seq, .. } => write!(f, "Frame::Cont(cid={:08x}, seq={seq})", self.cid()),
        }
    }
}

/// Number of reports needed for a payload of `len` bytes.
pub fn frame_count(len: usize) -> usize {
    if len <= INIT_DATA_LEN {
        1
    } else {
        1 + (len - INIT_DATA_LEN).div_ceil(CONT_DATA_LEN)
    }
}

/// Splits `payload` into reports for channel `cid`. The last report is zero-padded.
pub fn fragment(cid: u32, cmd: u8, payload: &[u8]) -> Result<Vec<Frame>, HidError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(HidError::PayloadTooLarge(payload.len()));
    }
    let split = payload.len().min(INIT_DATA_LEN);
    let (head, tail) = payload.split_at(split);
    let mut frames = Vec::with_capacity(frame_count(payload.len()));
    frames.push(Frame::init(cid, cmd, payload.len(), head));
    frames.extend(
        tail.chunks(CONT_DATA_LEN)
            .enumerate()
            .map(|(seq, chunk)| Frame::cont(cid, seq as u8, chunk)),
    );
    Ok(frames)
}

/// Incremental reassembly of one message on one channel.
#[derive(Debug, Clone)]
pub struct Assembler {
    cid: u32,
    cmd: u8,
    expected: usize,
    next_seq: u8,
    buf: Vec<u8>,
}

impl Assembler {
    /// Starts from an initialization frame. Returns the finished message
    /// immediately when it fits in one frame.
    pub fn start(frame: &Frame) -> Result<Result<(u8, Vec<u8>), Assembler>, HidError> {
        let FrameKind::Init { cmd, total_len, data } = frame.kind() else {
            return Err(HidError::SpuriousContinuation);
        };
        if total_len > MAX_PAYLOAD {
            return Err(HidError::PayloadTooLarge(total_len));
        }
        if total_len <= INIT_DATA_LEN {
            return Ok(Ok((cmd, data[..total_len].to_vec())));
        }
        let mut buf = Vec::with_capacity(total_len);
        buf.extend_from_slice(data);
        Ok(Err(Assembler {
            cid: frame.cid(),
            cmd,
            expected: total_len,
            next_seq: 0,
            buf,
        }))
    }

    pub fn cid(&self) -> u32 {
        self.cid
    }

    pub fn cmd(&self) -> u8 {
        self.cmd
    }

    /// Feeds a continuation frame; returns the message once complete.
    pub fn push(&mut self, frame: &Frame) -> Result<Option<(u8, Vec<u8>)>, HidError> {
        if frame.cid() != self.cid {
            return Err(HidError::ChannelMismatch);
        }
        let FrameKind::Cont { seq, data } = frame.kind() else {
            return Err(HidError::InvalidSequence);
        };
        if seq != self.next_seq {
            return Err(HidError::InvalidSequence);
        }
        self.next_seq += 1;
        let take = (self.expected - self.buf.len()).min(CONT_DATA_LEN);
        self.buf.extend_from_slice(&data[..take]);
        if self.buf.len() == self.expected {
            Ok(Some((self.cmd, std::mem::take(&mut self.buf))))
        } else {
            Ok(None)
        }
    }
}

/// Reassembles a complete message from its frames.
pub fn reassemble(frames: &[Frame]) -> Result<(u8, Vec<u8>), HidError> {
    let (first, rest) = frames.split_first().ok_or(HidError::Incomplete)?;
    let mut asm = match Assembler::start(first)? {
        Ok(done) => {
            if !rest.is_empty() {
                if rest[0].cid() != first.cid() {
                    return Err(HidError::ChannelMismatch);
                }
                return Err(HidError::InvalidSequence);
            }
            return Ok(done);
        }
        Err(asm) => asm,
    };
    let mut iter = rest.iter();
    for frame in iter.by_ref() {
        if let Some(done) = asm.push(frame)? {
            if iter.next().is_some() {
                return Err(HidError::InvalidSequence);
            }
            return Ok(done);
        }
    }
    Err(HidError::Incomplete)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn payload(len: usize) -> Vec<u8> {
        (0..len).map(|i| (i * 31 + 7) as u8).collect()
    }

    #[test]
    fn ml_dsa_44_signature_needs_42_frames() {
        let frames = fragment(1, 0x10, &payload(2420)).unwrap();
        assert_eq!(frames.len(), 42);
        assert!(frames[0].is_init());
        assert!(frames[1..].iter().all(|f| !f.is_init()));
    }

    #[test]
    fn boundaries() {
        assert_eq!(fragment(1, 0x10, &payload(57)).unwrap().len(), 1);
        assert_eq!(fragment(1, 0x10, &payload(58)).unwrap().len(), 2);
        assert_eq!(fragment(1, 0x10, &payload(116)).unwrap().len(), 2);
        assert_eq!(fragment(1, 0x10, &payload(117)).unwrap().len(), 3);
        assert_eq!(fragment(1, 0x10, &payload(MAX_PAYLOAD)).unwrap().len(), 129);
        assert_eq!(MAX_PAYLOAD, 7609);
        assert_eq!(fragment(1, 0x10, &payload(7610)), Err(HidError::PayloadTooLarge(7610)));
    }

    #[test]
    fn last_frame_zero_padded() {
        let frames = fragment(0x0102_0304, 0x10, &[0xff; 60]).unwrap();
        let last = frames.last().unwrap().as_bytes();
        assert_eq!(&last[..5], &[1, 2, 3, 4, 0]);
        assert_eq!(&last[5..8], &[0xff; 3]);
        assert!(last[8..].iter().all(|&b| b == 0));
    }

    #[test]
    fn header_layout() {
        let frames = fragment(0xaabb_ccdd, 0x10, &payload(300)).unwrap();
        let raw = frames[0].as_bytes();
        assert_eq!(&raw[..7], &[0xaa, 0xbb, 0xcc, 0xdd, 0x90, 0x01, 0x2c]);
        assert_eq!(frames[2].as_bytes()[4], 1);
    }

    #[test]
    fn swapped_continuations_rejected() {
        let mut frames = fragment(1, 0x10, &payload(500)).unwrap();
        frames.swap(2, 3);
        assert_eq!(reassemble(&frames), Err(HidError::InvalidSequence));
    }

    #[test]
    fn continuation_without_init() {
        let frames = fragment(1, 0x10, &payload(500)).unwrap();
        assert_eq!(reassemble(&frames[1..]), Err(HidError::SpuriousContinuation));
    }

    #[test]
    fn mixed_channels_rejected() {
        let mut frames = fragment(1, 0x10, &payload(500)).unwrap();
        frames[3] = fragment(2, 0x10, &payload(500)).unwrap()[3];
        assert_eq!(reassemble(&frames), Err(HidError::ChannelMismatch));
    }

    #[test]
    fn missing_tail_is_incomplete() {
        let frames = fragment(1, 0x10, &payload(500)).unwrap();
        assert_eq!(reassemble(&frames[..frames.len() - 1]), Err(HidError::Incomplete));
        assert_eq!(reassemble(&[]), Err(HidError::Incomplete));
    }

    #[test]
    fn oversized_declared_length() {
        let frame = Frame::init(1, 0x10, 7610, &[]);
        assert_eq!(reassemble(&[frame]), Err(HidError::PayloadTooLarge(7610)));
    }

    #[test]
    fn wrong_report_size() {
        assert_eq!(Frame::from_bytes(&[0; 65]), Err(HidError::InvalidReport(65)));
        assert_eq!(Frame::from_bytes(&[0; 63]), Err(HidError::InvalidReport(63)));
    }

    #[test]
    fn interleaved_channels_stay_separate() {
        let a = fragment(0xa, 0x10, &payload(1000)).unwrap();
        let b = fragment(0xb, 0x10, &[0x42; 700]).unwrap();
        let mut asm_a = Assembler::start(&a[0]).unwrap().unwrap_err();
        let mut asm_b = Assembler::start(&b[0]).unwrap().unwrap_err();
        let (mut done_a, mut done_b) = (None, None);
        let mut ia = a[1..].iter();
        let mut ib = b[1..].iter();
        loop {
            let fa = ia.next();
            let fb = ib.next();
            if fa.is_none() && fb.is_none() {
                break;
            }
            if let Some(f) = fa {
                done_a = asm_a.push(f).unwrap().or(done_a);
            }
            if let Some(f) = fb {
                done_b = asm_b.push(f).unwrap().or(done_b);
            }
        }
        assert_eq!(done_a.unwrap().1, payload(1000));
        assert_eq!(done_b.unwrap().1, vec![0x42; 700]);
    }

    #[test]
    fn exhaustive_small_lengths() {
        for len in (0..=200).chain(7500..=MAX_PAYLOAD) {
            let p = payload(len);
            let frames = fragment(7, 0x10, &p).unwrap();
            assert_eq!(frames.len(), frame_count(len));
            assert_eq!(reassemble(&frames).unwrap(), (0x10, p), "len {len}");
        }
    }

    proptest! {
        #[test]
        fn round_trip(data in proptest::collection::vec(any::<u8>(), 0..=MAX_PAYLOAD), cid in any::<u32>(), cmd in 0u8..0x80) {
            let frames = fragment(cid, cmd, &data).unwrap();
            prop_assert!(frames.iter().all(|f| f.as_bytes().len() == REPORT_LEN && f.cid() == cid));
            prop_assert_eq!(reassemble(&frames).unwrap(), (cmd, data));
        }
    }
}
