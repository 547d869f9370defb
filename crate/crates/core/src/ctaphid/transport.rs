//! Report transports. The loopback pair is two in-memory queues.

use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Mutex;
use std::time::Duration;

use super::frame::REPORT_LEN;
use super::HidError;

/// Moves whole 64-byte reports in one direction each way.
pub trait HidTransport: Send + Sync {
    fn write_report(&self, report: &[u8; REPORT_LEN]) -> Result<(), HidError>;
    /// Waits up to `timeout` for the next report. `Ok(None)` means the wait expired.
    fn read_report(&self, timeout: Duration) -> Result<Option<[u8; REPORT_LEN]>, HidError>;
}

impl<T: HidTransport + ?Sized> HidTransport for std::sync::Arc<T> {
    fn write_report(&self, report: &[u8; REPORT_LEN]) -> Result<(), HidError> {
        (**self).write_report(report)
    }

    fn read_report(&self, timeout: Duration) -> Result<Option<[u8; REPORT_LEN]>, HidError> {
        (**self).read_report(timeout)
    }
}

/// One end of an in-memory report pipe.
#[derive(Debug)]
pub struct LoopbackEnd {
    tx: Sender<[u8; REPORT_LEN]>,
    rx: Mutex<Receiver<[u8; REPORT_LEN]>>,
}

/// Two connected ends: whatever one writes, the other reads.
pub fn loopback() -> (LoopbackEnd, LoopbackEnd) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (
        LoopbackEnd {
            tx: a_tx,
            rx: Mutex::new(a_rx),
        },
        LoopbackEnd {
            tx: b_tx,
            rx: Mutex::new(b_rx),
        },
    )
}

impl HidTransport for LoopbackEnd {
    fn write_report(&self, report: &[u8; REPORT_LEN]) -> Result<(), HidError> {
        self.tx.send(*report).map_err(|_| HidError::Disconnected)
    }

    fn read_report(&self, timeout: Duration) -> Result<Option<[u8; REPORT_LEN]>, HidError> {
        let rx = self.rx.lock().unwrap_or_else(|e| e.into_inner());
        match rx.recv_timeout(timeout) {
            Ok(r) => Ok(Some(r)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(HidError::Disconnected),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pipes_cross_over() {
        let (a, b) = loopback();
        a.write_report(&[1; 64]).unwrap();
        b.write_report(&[2; 64]).unwrap();
        assert_eq!(b.read_report(Duration::from_millis(10)).unwrap(), Some([1; 64]));
        assert_eq!(a.read_report(Duration::from_millis(10)).unwrap(), Some([2; 64]));
        assert_eq!(a.read_report(Duration::from_millis(1)).unwrap(), None);
    }

    #[test]
    fn drop_disconnects() {
        let (a, b) = loopback();
        drop(b);
        assert_eq!(a.write_report(&[0; 64]), Err(HidError::Disconnected));
        assert_eq!(a.read_report(Duration::from_millis(1)), Err(HidError::Disconnected));
    }
}
