use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use cardkit_core::catalog::Catalog;
use cardkit_core::model::Deck;
use cardkit_core::runtime::{DeckStatus, EventSink, ExecutionEvent, RunOptions, StopHandle};
use cardkit_core::sim::{simulate, SimConfig};
use futures::Stream;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecState {
    Pending,
    Running,
    Completed,
    Stopped,
    Faulted,
}

impl ExecState {
    pub fn is_final(self) -> bool {
        matches!(self, ExecState::Completed | ExecState::Stopped | ExecState::Faulted)
    }
}

impl From<DeckStatus> for ExecState {
    fn from(status: DeckStatus) -> Self {
        match status {
            DeckStatus::Completed => ExecState::Completed,
            DeckStatus::Stopped => ExecState::Stopped,
            DeckStatus::Faulted => ExecState::Faulted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExecutionRecord {
    pub execution_id: String,
    pub deck_id: String,
    pub state: ExecState,
    /// Milliseconds since the Unix epoch.
    pub started_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub trace: Vec<ExecutionEvent>,
}

#[derive(Debug)]
struct Log {
    state: ExecState,
    reason: Option<String>,
    events: Vec<ExecutionEvent>,
}

/// One run of a deck. The event log only grows, so readers can resume at any
/// index.
#[derive(Debug)]
pub struct Execution {
    id: String,
    deck_id: String,
    started_at: u64,
    stop: StopHandle,
    log: Mutex<Log>,
    changed: watch::Sender<usize>,
}

impl Execution {
    pub(crate) fn pending(id: String, deck_id: String) -> Self {
        let started_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Execution {
            id,
            deck_id,
            started_at,
            stop: StopHandle::new(),
            log: Mutex::new(Log {
                state: ExecState::Pending,
                reason: None,
                events: Vec::new(),
            }),
            changed: watch::channel(0).0,
        }
    }

    pub(crate) fn restored(record: ExecutionRecord) -> Self {
        Execution {
            id: record.execution_id,
            deck_id: record.deck_id,
            started_at: record.started_at,
            stop: StopHandle::new(),
            log: Mutex::new(Log {
                state: record.state,
                reason: record.reason,
                events: record.trace,
            }),
            changed: watch::channel(0).0,
        }
    }

    fn log(&self) -> MutexGuard<'_, Log> {
        self.log.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> ExecState {
        self.log().state
    }

    pub fn record(&self) -> ExecutionRecord {
        let log = self.log();
        ExecutionRecord {
            execution_id: self.id.clone(),
            deck_id: self.deck_id.clone(),
            state: log.state,
            started_at: self.started_at,
            reason: log.reason.clone(),
            trace: log.events.clone(),
        }
    }

    /// Requests an e-stop. Repeated or late requests are ignored.
    pub fn estop(&self) {
        let _ = self.stop.trigger("operator e-stop");
    }

    fn push(&self, event: ExecutionEvent) {
        self.log().events.push(event);
        self.changed.send_modify(|n| *n += 1);
    }

    fn set_state(&self, state: ExecState, reason: Option<String>) {
        {
            let mut log = self.log();
            if log.state.is_final() {
                return;
            }
            log.state = state;
            if reason.is_some() {
                log.reason = reason;
            }
        }
        self.changed.send_modify(|n| *n += 1);
    }

    fn events_from(&self, index: usize) -> (Vec<ExecutionEvent>, bool) {
        let log = self.log();
        let batch = log.events.get(index..).map(<[_]>::to_vec).unwrap_or_default();
        (batch, log.state.is_final())
    }

    /// Index of the first event with a sequence number above `seq`.
    pub fn index_after(&self, seq: u64) -> usize {
        self.log().events.partition_point(|e| e.seq <= seq)
    }

    /// Events from `index` on: history first, then live events until the run
    /// finishes.
    pub fn stream(self: Arc<Self>, index: usize) -> impl Stream<Item = ExecutionEvent> + Send + 'static {
        let rx = self.changed.subscribe();
        let seed = (self, index, rx, VecDeque::new());
        futures::stream::unfold(seed, |(exec, mut next, mut rx, mut buf)| async move {
            loop {
                if let Some(event) = buf.pop_front() {
                    return Some((event, (exec, next, rx, buf)));
                }
                rx.borrow_and_update();
                let (batch, done) = exec.events_from(next);
                if !batch.is_empty() {
                    next += batch.len();
                    buf.extend(batch);
                    continue;
                }
                if done || rx.changed().await.is_err() {
                    return None;
                }
            }
        })
    }
}

struct Relay {
    exec: Arc<Execution>,
    ratio: f64,
    start: Instant,
}

impl EventSink for Relay {
    fn on_event(&mut self, event: &ExecutionEvent) {
        self.exec.push(event.clone());
    }

    fn on_tick(&mut self, now: f64) {
        if self.ratio <= 0.0 {
            return;
        }
        let due = self.start + Duration::from_secs_f64(now / self.ratio);
        let wait = due.saturating_duration_since(Instant::now());
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

pub(crate) struct Job {
    pub deck: Deck,
    pub catalog: Arc<Catalog>,
    pub world: SimConfig,
    pub seed: u64,
    pub opts: RunOptions,
    pub ratio: f64,
    pub snapshot: Option<PathBuf>,
}

/// Runs the job on its own thread.
pub(crate) fn spawn(exec: Arc<Execution>, job: Job) {
    std::thread::spawn(move || {
        exec.set_state(ExecState::Running, None);
        let mut relay = Relay {
            exec: exec.clone(),
            ratio: job.ratio,
            start: Instant::now(),
        };
        let result = simulate(&job.deck, &job.catalog, job.world, job.seed, &job.opts, &exec.stop, &mut relay);
        match result {
            Ok((trace, _)) => {
                let reason = trace.events.last().and_then(|e| match &e.kind {
                    cardkit_core::runtime::EventKind::DeckEnded { reason, .. } => reason.clone(),
                    _ => None,
                });
                exec.set_state(trace.status.into(), reason);
            }
            Err(e) => exec.set_state(ExecState::Faulted, Some(e.to_string())),
        }
        if let Some(path) = job.snapshot {
            let text = serde_json::to_string(&exec.record()).expect("records serialize");
            if let Err(e) = std::fs::write(&path, text) {
                eprintln!("snapshot {}: {e}", path.display());
            }
        }
    });
}
