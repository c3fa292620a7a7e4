//! End-to-end demonstration flows with full transcripts.
//!
//! A transcript records every hop, every verification verdict, transport
//! activity, and the remote end's final view or refusal. Scenario drivers
//! mark the transcript `expected` when the outcome matches what the scenario
//! set out to show; attacks being correctly defeated count as expected.

pub mod clickfraud;
pub mod paybuddy;

use std::fmt;
use std::sync::{Arc, Mutex};

use crate::net::{ServerView, Transport, TransportError};

pub use clickfraud::{run_clickfraud, Attack, ClickValidator, ClickVerdict, InputEvent};
pub use paybuddy::{run_paybuddy, PaymentDecision, PurchaseOrder, Tamper};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Hop { from: String, to: String, method: String },
    StatementMade { speaker: String, about: String },
    VerdictNoted { about: String, verdict: String },
    UserDecision { actor: String, approved: bool },
    ClickChecked { verdict: String },
    TransportFrame { bytes: usize },
    ServerAccepted { device_id: String, chain: Vec<String>, reply: String },
    ServerRefused { reason: String },
    Failure { stage: String, error: String },
    Note(String),
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Hop { from, to, method } => write!(f, "{from} -> {to}: {method}"),
            Event::StatementMade { speaker, about } => write!(f, "{speaker} signs {about}"),
            Event::VerdictNoted { about, verdict } => write!(f, "verify {about}: {verdict}"),
            Event::UserDecision { actor, approved } => {
                write!(f, "{actor} user dialog: {}", if *approved { "okay" } else { "cancel" })
            }
            Event::ClickChecked { verdict } => write!(f, "click check: {verdict}"),
            Event::TransportFrame { bytes } => write!(f, "transport frame: {bytes} bytes"),
            Event::ServerAccepted { device_id, chain, reply } => {
                write!(f, "server accepted device={device_id} chain={} reply={reply}", chain.join(","))
            }
            Event::ServerRefused { reason } => write!(f, "server refused: {reason}"),
            Event::Failure { stage, error } => write!(f, "{stage} failed: {error}"),
            Event::Note(text) => f.write_str(text),
        }
    }
}

/// Everything one scenario run produced.
#[derive(Debug, Clone)]
pub struct Transcript {
    pub events: Vec<Event>,
    pub server_views: Vec<ServerView>,
    pub expected: bool,
    pub summary: String,
}

impl Transcript {
    pub fn transport_frames(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, Event::TransportFrame { .. }))
            .count()
    }

    pub fn server_accepts(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, Event::ServerAccepted { .. }))
            .count()
    }

    pub fn click_verdicts(&self) -> Vec<String> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::ClickChecked { verdict } => Some(verdict.clone()),
                _ => None,
            })
            .collect()
    }
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, event) in self.events.iter().enumerate() {
            writeln!(f, "{:>3}. {event}", i + 1)?;
        }
        writeln!(f, "outcome: {}", self.summary)?;
        write!(f, "result: {}", if self.expected { "as expected" } else { "UNEXPECTED" })
    }
}

/// Shared, thread-safe event sink handed to app closures.
#[derive(Clone, Default)]
pub struct Recorder {
    events: Arc<Mutex<Vec<Event>>>,
    views: Arc<Mutex<Vec<ServerView>>>,
}

impl Recorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, event: Event) {
        self.events.lock().unwrap().push(event);
    }

    pub fn record_view(&self, view: ServerView) {
        self.views.lock().unwrap().push(view);
    }

    /// Copy of the events so far; the recorder keeps them.
    pub fn snapshot(&self) -> Vec<Event> {
        self.events.lock().unwrap().clone()
    }

    pub fn views_snapshot(&self) -> Vec<ServerView> {
        self.views.lock().unwrap().clone()
    }

    pub fn finish(self, expected: bool, summary: impl Into<String>) -> Transcript {
        Transcript {
            events: std::mem::take(&mut *self.events.lock().unwrap()),
            server_views: std::mem::take(&mut *self.views.lock().unwrap()),
            expected,
            summary: summary.into(),
        }
    }
}

/// Transport wrapper that notes every frame in the transcript.
pub struct RecordingTransport {
    inner: Arc<dyn Transport>,
    recorder: Recorder,
}

impl RecordingTransport {
    pub fn new(inner: Arc<dyn Transport>, recorder: Recorder) -> Self {
        Self { inner, recorder }
    }
}

impl Transport for RecordingTransport {
    fn round_trip(&self, frame: &[u8]) -> Result<Vec<u8>, TransportError> {
        self.recorder.push(Event::TransportFrame { bytes: frame.len() });
        self.inner.round_trip(frame)
    }
}
