//! Per-class hysteresis, deterrent scheduling and the event log record.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::multibox::Detection;

use super::policy::{Action, HysteresisParams, Tier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorEvent {
    pub id: u64,
    pub label: String,
    pub tier: Tier,
    pub action: Action,
    pub first_frame: u64,
    pub last_frame: u64,
    pub peak_score: f64,
    pub status: EventStatus,
}

#[derive(Debug, Default)]
struct Track {
    /// Last M processed frames: (frame, best score when present).
    window: VecDeque<(u64, Option<f64>)>,
    misses: usize,
    open: Option<MonitorEvent>,
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct HysteresisUpdate {
    pub opened: Vec<MonitorEvent>,
    pub closed: Vec<MonitorEvent>,
}

/// K-of-M event debouncing, one track per class. The window counts
/// processed frames, so frames dropped upstream do not count as misses.
#[derive(Debug)]
pub struct Hysteresis {
    params: HysteresisParams,
    tracks: BTreeMap<String, Track>,
    next_id: u64,
}

impl Hysteresis {
    pub fn new(params: HysteresisParams) -> Self {
        Self {
            params,
            tracks: BTreeMap::new(),
            next_id: 1,
        }
    }

    pub fn open_events(&self) -> impl Iterator<Item = &MonitorEvent> {
        self.tracks.values().filter_map(|t| t.open.as_ref())
    }

    /// Feeds one frame's detections (already filtered by score). `classify`
    /// supplies the tier and action recorded on newly opened events.
    pub fn update(
        &mut self,
        frame: u64,
        detections: &[Detection],
        classify: impl Fn(&str) -> (Tier, Action),
    ) -> HysteresisUpdate {
        let mut present: BTreeMap<&str, f64> = BTreeMap::new();
        for d in detections {
            let s = present.entry(d.label.as_str()).or_insert(d.score);
            *s = s.max(d.score);
        }
        for label in present.keys() {
            if !self.tracks.contains_key(*label) {
                self.tracks.insert(label.to_string(), Track::default());
            }
        }

        let p = self.params;
        let mut out = HysteresisUpdate::default();
        let mut idle = Vec::new();
        for (label, track) in self.tracks.iter_mut() {
            let hit = present.get(label.as_str()).copied();
            track.window.push_back((frame, hit));
            while track.window.len() > p.m {
                track.window.pop_front();
            }
            match (&mut track.open, hit) {
                (Some(ev), Some(score)) => {
                    ev.last_frame = frame;
                    ev.peak_score = ev.peak_score.max(score);
                    track.misses = 0;
                }
                (Some(_), None) => {
                    track.misses += 1;
                    if track.misses >= p.m_clear {
                        let mut ev = track.open.take().expect("checked open");
                        ev.status = EventStatus::Closed;
                        out.closed.push(ev);
                        track.window.clear();
                        track.misses = 0;
                    }
                }
                (None, _) => {
                    let hits: Vec<(u64, f64)> = track.window.iter().filter_map(|(f, s)| s.map(|s| (*f, s))).collect();
                    if hits.len() >= p.k {
                        let (tier, action) = classify(label);
                        let ev = MonitorEvent {
                            id: self.next_id,
                            label: label.clone(),
                            tier,
                            action,
                            first_frame: hits[0].0,
                            last_frame: frame,
                            peak_score: hits.iter().map(|h| h.1).fold(0.0, f64::max),
                            status: EventStatus::Open,
                        };
                        self.next_id += 1;
                        track.misses = 0;
                        out.opened.push(ev.clone());
                        track.open = Some(ev);
                    }
                }
            }
            if track.open.is_none() && track.window.iter().all(|(_, s)| s.is_none()) {
                idle.push(label.clone());
            }
        }
        for label in idle {
            self.tracks.remove(&label);
        }
        out
    }

    /// Closes every open event, in class order.
    pub fn finish(&mut self) -> Vec<MonitorEvent> {
        let mut out = Vec::new();
        for track in self.tracks.values_mut() {
            if let Some(mut ev) = track.open.take() {
                ev.status = EventStatus::Closed;
                out.push(ev);
            }
        }
        self.tracks.clear();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterrenceCommand {
    pub mode: String,
    pub label: String,
    pub issued_ms: u64,
    pub duration_s: f64,
}

#[derive(Debug, Default, Clone, Copy)]
struct Rotation {
    next_mode: usize,
    last_issued_ms: Option<u64>,
}

/// Round-robin deterrent modes per class with a per-class cooldown.
#[derive(Debug)]
pub struct Scheduler {
    modes: Vec<String>,
    cooldown_ms: u64,
    state: BTreeMap<String, Rotation>,
}

impl Scheduler {
    pub fn new(modes: Vec<String>, cooldown_s: f64) -> Self {
        assert!(!modes.is_empty(), "at least one deterrent mode");
        Self {
            modes,
            cooldown_ms: (cooldown_s * 1000.0).round() as u64,
            state: BTreeMap::new(),
        }
    }

    /// `None` for non-deterring actions or while the class is cooling down.
    pub fn schedule(&mut self, event: &MonitorEvent, now_ms: u64) -> Option<DeterrenceCommand> {
        let duration_s = event.action.deterrent_duration_s()?;
        let rot = self.state.entry(event.label.clone()).or_default();
        if let Some(last) = rot.last_issued_ms {
            if now_ms.saturating_sub(last) < self.cooldown_ms {
                return None;
            }
        }
        let mode = self.modes[rot.next_mode % self.modes.len()].clone();
        rot.next_mode = (rot.next_mode + 1) % self.modes.len();
        rot.last_issued_ms = Some(now_ms);
        Some(DeterrenceCommand {
            mode,
            label: event.label.clone(),
            issued_ms: now_ms,
            duration_s,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Opened,
    Closed,
    Command,
    Alert,
}

/// One line of the JSONL event log, also the webhook payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub ts_ms: u64,
    pub kind: RecordKind,
    pub event_id: u64,
    #[serde(rename = "class")]
    pub label: String,
    pub tier: Tier,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_frame: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_frame: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
}

impl LogRecord {
    pub fn for_event(kind: RecordKind, ev: &MonitorEvent, ts_ms: u64) -> Self {
        Self {
            ts_ms,
            kind,
            event_id: ev.id,
            label: ev.label.clone(),
            tier: ev.tier,
            action: ev.action,
            peak_score: Some(ev.peak_score),
            first_frame: Some(ev.first_frame),
            last_frame: Some(ev.last_frame),
            mode: None,
        }
    }

    pub fn for_command(cmd: &DeterrenceCommand, ev: &MonitorEvent) -> Self {
        Self {
            ts_ms: cmd.issued_ms,
            kind: RecordKind::Command,
            event_id: ev.id,
            label: ev.label.clone(),
            tier: ev.tier,
            action: ev.action,
            peak_score: None,
            first_frame: None,
            last_frame: None,
            mode: Some(cmd.mode.clone()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}
