//! Alert sinks: webhook with retry and spool, append-only file, stdout.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use super::events::LogRecord;

#[derive(Debug, Clone, PartialEq)]
pub enum Delivery {
    Delivered {
        attempts: usize,
    },
    /// Every attempt failed; the payload was appended to the spool.
    Spooled {
        attempts: usize,
        error: String,
    },
    /// Could neither deliver nor spool.
    Lost {
        error: String,
    },
}

pub trait AlertSink: Send {
    fn deliver(&mut self, record: &LogRecord) -> Delivery;
}

pub const DEFAULT_BACKOFF: [Duration; 3] = [Duration::from_millis(500), Duration::from_secs(1), Duration::from_secs(2)];

type Sleeper = Box<dyn FnMut(Duration) + Send>;

/// POSTs each record as JSON. A failed attempt is retried after each
/// backoff delay in turn; once they are used up the payload is spooled.
pub struct WebhookSink {
    url: String,
    agent: ureq::Agent,
    backoff: Vec<Duration>,
    spool: PathBuf,
    sleep: Sleeper,
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(5)))
        .build()
        .into()
}

fn post(agent: &ureq::Agent, url: &str, body: &str) -> Result<(), String> {
    agent
        .post(url)
        .header("Content-Type", "application/json")
        .send(body)
        .map(|_| ())
        .map_err(|e| e.to_string())
}

impl WebhookSink {
    pub fn new(url: impl Into<String>, spool: impl Into<PathBuf>) -> Self {
        Self {
            url: url.into(),
            agent: agent(),
            backoff: DEFAULT_BACKOFF.to_vec(),
            spool: spool.into(),
            sleep: Box::new(std::thread::sleep),
        }
    }

    /// Replaces `thread::sleep` between attempts.
    pub fn with_sleeper(mut self, sleep: impl FnMut(Duration) + Send + 'static) -> Self {
        self.sleep = Box::new(sleep);
        self
    }

    pub fn with_backoff(mut self, backoff: Vec<Duration>) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn spool_path(&self) -> &Path {
        &self.spool
    }
}

impl AlertSink for WebhookSink {
    fn deliver(&mut self, record: &LogRecord) -> Delivery {
        let body = record.to_json();
        let mut attempts = 0;
        let mut error = String::new();
        for delay in std::iter::once(None).chain(self.backoff.iter().copied().map(Some)) {
            if let Some(d) = delay {
                (self.sleep)(d);
            }
            attempts += 1;
            match post(&self.agent, &self.url, &body) {
                Ok(()) => return Delivery::Delivered { attempts },
                Err(e) => error = e,
            }
        }
        log::warn!(
            "alert for event {} not delivered after {attempts} attempts ({error}); spooling",
            record.event_id
        );
        match append_line(&self.spool, &body) {
            Ok(()) => Delivery::Spooled { attempts, error },
            Err(e) => Delivery::Lost {
                error: format!("{error}; spool {}: {e}", self.spool.display()),
            },
        }
    }
}

fn append_line(path: &Path, line: &str) -> io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{line}")?;
    f.flush()
}

/// Appends one JSON line per alert.
pub struct FileSink {
    path: PathBuf,
}

impl FileSink {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }
}

impl AlertSink for FileSink {
    fn deliver(&mut self, record: &LogRecord) -> Delivery {
        match append_line(&self.path, &record.to_json()) {
            Ok(()) => Delivery::Delivered { attempts: 1 },
            Err(e) => Delivery::Lost {
                error: format!("{}: {e}", self.path.display()),
            },
        }
    }
}

pub struct StdoutSink;

impl AlertSink for StdoutSink {
    fn deliver(&mut self, record: &LogRecord) -> Delivery {
        let mut out = io::stdout().lock();
        match writeln!(out, "{}", record.to_json()).and_then(|_| out.flush()) {
            Ok(()) => Delivery::Delivered { attempts: 1 },
            Err(e) => Delivery::Lost { error: e.to_string() },
        }
    }
}

/// Collects records in memory.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub records: std::sync::Arc<std::sync::Mutex<Vec<LogRecord>>>,
}

impl AlertSink for MemorySink {
    fn deliver(&mut self, record: &LogRecord) -> Delivery {
        self.records.lock().expect("sink lock").push(record.clone());
        Delivery::Delivered { attempts: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReplayReport {
    pub delivered: usize,
    pub remaining: usize,
}

/// One POST per spooled payload; payloads that still fail stay in the
/// spool, which is rewritten in place.
pub fn replay_spool(spool: impl AsRef<Path>, url: &str) -> io::Result<ReplayReport> {
    let spool = spool.as_ref();
    if !spool.exists() {
        return Ok(ReplayReport::default());
    }
    let agent = agent();
    let mut kept = Vec::new();
    let mut report = ReplayReport::default();
    for line in BufReader::new(File::open(spool)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match post(&agent, url, &line) {
            Ok(()) => report.delivered += 1,
            Err(e) => {
                log::warn!("replay failed: {e}");
                kept.push(line);
            }
        }
    }
    report.remaining = kept.len();
    let tmp = spool.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        for line in &kept {
            writeln!(f, "{line}")?;
        }
        f.sync_all()?;
    }
    fs::rename(&tmp, spool)?;
    Ok(report)
}
