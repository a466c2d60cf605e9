//! Client for an out-of-process review service.
//!
//! Protocol: one JSON [`ReviewRequest`] per line over TCP, answered by one
//! JSON [`ReviewResponse`] line. One connection per request.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendAssessment, BackendError, ChangeClassification, ReviewBackend};
use crate::diff::{Diff, DiffRecord};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReviewRequest {
    pub diff: DiffRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewResponse {
    pub per_change: Vec<ChangeClassification>,
    pub confidence: u8,
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug)]
pub struct ExternalBackend {
    endpoint: String,
    timeout: Duration,
    slots: Slots,
}

impl ExternalBackend {
    pub fn new(endpoint: String, timeout: Duration, max_in_flight: usize) -> Self {
        Self {
            endpoint,
            timeout,
            slots: Slots {
                free: Mutex::new(max_in_flight.max(1)),
                cv: Condvar::new(),
            },
        }
    }

    fn io_error(e: std::io::Error) -> BackendError {
        match e.kind() {
            ErrorKind::TimedOut | ErrorKind::WouldBlock => BackendError::Timeout,
            _ => BackendError::Unavailable(e.to_string()),
        }
    }

    fn roundtrip(&self, request: &ReviewRequest) -> Result<ReviewResponse, BackendError> {
        let addr = self
            .endpoint
            .to_socket_addrs()
            .map_err(|e| BackendError::Unavailable(format!("{}: {e}", self.endpoint)))?
            .next()
            .ok_or_else(|| BackendError::Unavailable(format!("{}: no address", self.endpoint)))?;
        let stream = TcpStream::connect_timeout(&addr, self.timeout).map_err(Self::io_error)?;
        stream.set_read_timeout(Some(self.timeout)).map_err(Self::io_error)?;
        stream.set_write_timeout(Some(self.timeout)).map_err(Self::io_error)?;

        let mut line = serde_json::to_string(request)
            .map_err(|e| BackendError::Malformed(format!("request: {e}")))?;
        line.push('\n');
        let mut writer = &stream;
        writer.write_all(line.as_bytes()).map_err(Self::io_error)?;
        writer.flush().map_err(Self::io_error)?;

        let mut reply = String::new();
        let n = BufReader::new(&stream)
            .read_line(&mut reply)
            .map_err(Self::io_error)?;
        if n == 0 {
            return Err(BackendError::Unavailable("connection closed without reply".into()));
        }
        serde_json::from_str(reply.trim_end()).map_err(|e| BackendError::Malformed(e.to_string()))
    }
}

impl ReviewBackend for ExternalBackend {
    fn assess(&self, diff: &Diff) -> Result<BackendAssessment, BackendError> {
        let _slot = self.slots.acquire();
        let response = self.roundtrip(&ReviewRequest {
            diff: DiffRecord::from(diff),
        })?;
        Ok(BackendAssessment {
            per_change: response.per_change,
            confidence: response.confidence,
        })
    }
}
