//! One JSON object per handled request.

use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    pub time: f64,
    pub user: Option<u64>,
    pub domain: String,
    pub decision: String,
    pub choice: Option<String>,
    pub bytes: u64,
}

enum Sink {
    Writer(Box<dyn Write + Send>),
    Memory(Arc<Mutex<Vec<u8>>>),
    Off,
}

pub struct RequestLog {
    sink: Mutex<Sink>,
}

impl RequestLog {
    pub fn stdout() -> Self {
        Self { sink: Mutex::new(Sink::Writer(Box::new(io::stdout()))) }
    }

    pub fn file(path: &Path) -> io::Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { sink: Mutex::new(Sink::Writer(Box::new(f))) })
    }

    /// Log into a shared buffer the caller can inspect.
    pub fn memory() -> (Self, Arc<Mutex<Vec<u8>>>) {
        let buf = Arc::new(Mutex::new(Vec::new()));
        (Self { sink: Mutex::new(Sink::Memory(buf.clone())) }, buf)
    }

    pub fn off() -> Self {
        Self { sink: Mutex::new(Sink::Off) }
    }

    pub fn write(&self, record: &LogRecord) {
        let mut line = serde_json::to_vec(record).expect("log records serialize");
        line.push(b'\n');
        let mut sink = self.sink.lock().expect("log lock");
        match &mut *sink {
            Sink::Writer(w) => {
                // a full disk must not take the proxy down
                let _ = w.write_all(&line).and_then(|_| w.flush());
            }
            Sink::Memory(buf) => buf.lock().expect("log buffer lock").extend_from_slice(&line),
            Sink::Off => {}
        }
    }
}
