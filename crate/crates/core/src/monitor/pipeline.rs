//! The staged monitoring loop.

use std::collections::VecDeque;
use std::io::{self, Write};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::backbone::Detector;
use crate::multibox::Detection;

use super::alert::{AlertSink, Delivery};
use super::events::{Hysteresis, LogRecord, RecordKind, Scheduler};
use super::policy::{decide_action, Action, PolicyConfig};
use super::source::Frame;

pub const DEFAULT_QUEUE_DEPTH: usize = 8;

struct QueueState<T> {
    items: VecDeque<T>,
    closed: bool,
    dropped: u64,
}

/// Bounded hand-off queue that evicts its oldest item when full.
pub struct DropOldestQueue<T> {
    capacity: usize,
    state: Mutex<QueueState<T>>,
    ready: Condvar,
    space: Condvar,
}

impl<T> DropOldestQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self {
            capacity,
            state: Mutex::new(QueueState {
                items: VecDeque::with_capacity(capacity),
                closed: false,
                dropped: 0,
            }),
            ready: Condvar::new(),
            space: Condvar::new(),
        }
    }

    /// Returns the evicted item, if any.
    pub fn push(&self, item: T) -> Option<T> {
        let mut s = self.state.lock().expect("queue lock");
        let evicted = if s.items.len() == self.capacity {
            s.dropped += 1;
            s.items.pop_front()
        } else {
            None
        };
        s.items.push_back(item);
        self.ready.notify_one();
        evicted
    }

    /// Waits for room instead of evicting.
    pub fn push_wait(&self, item: T) {
        let mut s = self.state.lock().expect("queue lock");
        while s.items.len() == self.capacity {
            s = self.space.wait(s).expect("queue lock");
        }
        s.items.push_back(item);
        self.ready.notify_one();
    }

    /// Blocks until an item is available; `None` once closed and drained.
    pub fn pop(&self) -> Option<T> {
        let mut s = self.state.lock().expect("queue lock");
        loop {
            if let Some(item) = s.items.pop_front() {
                self.space.notify_one();
                return Some(item);
            }
            if s.closed {
                return None;
            }
            s = self.ready.wait(s).expect("queue lock");
        }
    }

    pub fn close(&self) {
        self.state.lock().expect("queue lock").closed = true;
        self.ready.notify_all();
    }

    pub fn dropped(&self) -> u64 {
        self.state.lock().expect("queue lock").dropped
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("queue lock").items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub policy: PolicyConfig,
    pub queue_depth: usize,
    /// Release frames at their timestamps and drop the oldest queued frame
    /// when detection falls behind. Otherwise ingest waits for detection
    /// and every frame is processed.
    pub realtime: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            policy: PolicyConfig::default(),
            queue_depth: DEFAULT_QUEUE_DEPTH,
            realtime: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineReport {
    pub frames_ingested: u64,
    pub frames_dropped: u64,
    pub frame_errors: u64,
    /// Indices of frames that went through detection, in order.
    pub processed: Vec<u64>,
    pub events_opened: u64,
    pub events_closed: u64,
    pub commands: u64,
    pub alerts_delivered: u64,
    pub alerts_spooled: u64,
    pub alerts_lost: u64,
    pub interrupted: bool,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid policy: {}", .0.join("; "))]
    Policy(Vec<String>),
    #[error("event log: {0}")]
    Log(#[from] io::Error),
}

#[derive(Default)]
struct AlertTally {
    delivered: u64,
    spooled: u64,
    lost: u64,
}

/// Runs ingest, detection/decision, logging and alerting as concurrent
/// stages until the source ends or `shutdown` is set. Events still open at
/// that point are closed. The log is flushed before returning.
pub fn run_pipeline<S>(
    cfg: &PipelineConfig,
    source: S,
    detector: &dyn Detector,
    mut sink: Box<dyn AlertSink>,
    mut log_out: Box<dyn Write + Send>,
    shutdown: &AtomicBool,
) -> Result<PipelineReport, PipelineError>
where
    S: Iterator<Item = Frame> + Send,
{
    let violations = cfg.policy.violations();
    if !violations.is_empty() {
        return Err(PipelineError::Policy(violations));
    }
    let policy = &cfg.policy;
    let queue = DropOldestQueue::new(cfg.queue_depth.max(1));
    let (log_tx, log_rx) = mpsc::channel::<LogRecord>();
    let (alert_tx, alert_rx) = mpsc::channel::<LogRecord>();

    thread::scope(|scope| {
        let queue = &queue;
        let ingest = scope.spawn(move || {
            let start = Instant::now();
            let mut ingested = 0u64;
            for frame in source {
                if shutdown.load(Ordering::SeqCst) {
                    break;
                }
                if cfg.realtime {
                    let due = Duration::from_millis(frame.timestamp_ms);
                    if let Some(wait) = due.checked_sub(start.elapsed()) {
                        thread::sleep(wait);
                    }
                }
                ingested += 1;
                if !cfg.realtime {
                    queue.push_wait(frame);
                } else if let Some(old) = queue.push(frame) {
                    log::debug!("dropped frame {}", old.index);
                }
            }
            queue.close();
            ingested
        });

        let writer = scope.spawn(move || -> io::Result<()> {
            for rec in log_rx {
                writeln!(log_out, "{}", rec.to_json())?;
            }
            log_out.flush()
        });

        let alerter = scope.spawn(move || {
            let mut tally = AlertTally::default();
            for rec in alert_rx {
                match sink.deliver(&rec) {
                    Delivery::Delivered { .. } => tally.delivered += 1,
                    Delivery::Spooled { .. } => tally.spooled += 1,
                    Delivery::Lost { error } => {
                        log::warn!("alert for event {} lost: {error}", rec.event_id);
                        tally.lost += 1;
                    }
                }
            }
            tally
        });

        let mut report = PipelineReport::default();
        let mut hysteresis = Hysteresis::new(policy.hysteresis);
        let mut scheduler = Scheduler::new(policy.deterrent_modes.clone(), policy.cooldown_s);
        let classify = |label: &str| decide_action(policy, label);
        let mut last_ts = 0;
        // A failed send means the receiving stage already stopped; its own
        // error is reported when it is joined.
        let emit = |rec: LogRecord| {
            let _ = log_tx.send(rec);
        };

        while let Some(frame) = queue.pop() {
            let dets = match detector.detect(frame.index, &frame.image) {
                Ok(d) => d,
                Err(e) => {
                    log::warn!("frame {}: detection failed: {e}", frame.index);
                    report.frame_errors += 1;
                    continue;
                }
            };
            report.processed.push(frame.index);
            last_ts = frame.timestamp_ms;
            let tracked: Vec<Detection> = dets
                .into_iter()
                .filter(|d| d.score >= policy.score_threshold && classify(&d.label).1 != Action::Ignore)
                .collect();
            let update = hysteresis.update(frame.index, &tracked, classify);
            for ev in &update.closed {
                report.events_closed += 1;
                emit(LogRecord::for_event(RecordKind::Closed, ev, frame.timestamp_ms));
            }
            for ev in &update.opened {
                report.events_opened += 1;
                emit(LogRecord::for_event(RecordKind::Opened, ev, frame.timestamp_ms));
                if let Some(cmd) = scheduler.schedule(ev, frame.timestamp_ms) {
                    report.commands += 1;
                    emit(LogRecord::for_command(&cmd, ev));
                }
                let alert = LogRecord::for_event(RecordKind::Alert, ev, frame.timestamp_ms);
                let _ = alert_tx.send(alert.clone());
                emit(alert);
            }
        }
        for ev in hysteresis.finish() {
            report.events_closed += 1;
            emit(LogRecord::for_event(RecordKind::Closed, &ev, last_ts));
        }
        drop(log_tx);
        drop(alert_tx);

        report.frames_ingested = ingest.join().expect("ingest stage panicked");
        report.frames_dropped = queue.dropped();
        report.interrupted = shutdown.load(Ordering::SeqCst);
        let tally = alerter.join().expect("alert stage panicked");
        report.alerts_delivered = tally.delivered;
        report.alerts_spooled = tally.spooled;
        report.alerts_lost = tally.lost;
        writer.join().expect("log stage panicked")?;
        Ok(report)
    })
}
