//! Reports through a HID gadget character device such as `/dev/hidg0`.
//!
//! Reads block, so a helper thread pulls reports into a queue that
//! [`HidTransport::read_report`] can wait on with a timeout.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use super::frame::REPORT_LEN;
use super::transport::HidTransport;
use super::HidError;

pub struct CharDevice {
    writer: Mutex<File>,
    reports: Mutex<Receiver<Result<[u8; REPORT_LEN], String>>>,
}

impl CharDevice {
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref();
        let writer = OpenOptions::new().write(true).open(path)?;
        let mut reader = File::open(path)?;
        let (tx, rx) = mpsc::sync_channel(256);
        thread::Builder::new().name("hidg-reader".into()).spawn(move || loop {
            let mut report = [0u8; REPORT_LEN];
            let item = reader
                .read_exact(&mut report)
                .map(|_| report)
                .map_err(|e| e.to_string());
            let failed = item.is_err();
            if tx.send(item).is_err() || failed {
                break;
            }
        })?;
        Ok(CharDevice {
            writer: Mutex::new(writer),
            reports: Mutex::new(rx),
        })
    }
}

impl HidTransport for CharDevice {
    fn write_report(&self, report: &[u8; REPORT_LEN]) -> Result<(), HidError> {
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        w.write_all(report)
            .and_then(|_| w.flush())
            .map_err(|e| HidError::Io(e.to_string()))
    }

    fn read_report(&self, timeout: Duration) -> Result<Option<[u8; REPORT_LEN]>, HidError> {
        let rx = self.reports.lock().unwrap_or_else(|e| e.into_inner());
        match rx.recv_timeout(timeout) {
            Ok(Ok(r)) => Ok(Some(r)),
            Ok(Err(e)) => Err(HidError::Io(e)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(HidError::Disconnected),
        }
    }
}
