//! Throttled, resumable product retrieval. The hub enforces a per-user
//! request rate toward its long-term archive and products surface some
//! time after being requested; the queue in here respects both while
//! journaling every state change for crash recovery.

pub mod clock;
pub mod client;
pub mod journal;
pub mod mock;
pub mod queue;

use std::time::Duration;

use chrono::{DateTime, Utc};

pub use clock::{Clock, SimClock, SystemClock};
pub use client::{HubClient, RetrieveOutcome};
pub use journal::Journal;
pub use mock::MockHub;
pub use queue::{DownloadQueue, QueueOutcome};

/// Lifecycle of one product retrieval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskState {
    Queued,
    LtaRequested { at: DateTime<Utc> },
    Online,
    Downloading,
    Done,
    Failed { reason: String },
}

impl TaskState {
    pub fn name(&self) -> &'static str {
        match self {
            TaskState::Queued => "queued",
            TaskState::LtaRequested { .. } => "lta_requested",
            TaskState::Online => "online",
            TaskState::Downloading => "downloading",
            TaskState::Done => "done",
            TaskState::Failed { .. } => "failed",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, TaskState::Done | TaskState::Failed { .. })
    }
}

/// The allowed edges of the task lifecycle. Queued tasks may jump
/// straight to Online when the hub already has the product on disk;
/// archive requests may fail on timeout.
pub fn is_valid_transition(from: &TaskState, to: &TaskState) -> bool {
    use TaskState::*;
    matches!(
        (from, to),
        (Queued, LtaRequested { .. })
            | (Queued, Online)
            | (LtaRequested { .. }, Online)
            | (LtaRequested { .. }, Failed { .. })
            | (Online, Downloading)
            | (Downloading, Done)
            | (Downloading, Failed { .. })
    )
}

/// One product retrieval in flight.
#[derive(Debug, Clone)]
pub struct DownloadTask {
    pub product_id: String,
    pub state: TaskState,
    pub attempts: u32,
    pub checksum_expected: Option<String>,
    pub size_bytes: Option<u64>,
}

impl DownloadTask {
    pub fn new(product_id: impl Into<String>) -> Self {
        Self {
            product_id: product_id.into(),
            state: TaskState::Queued,
            attempts: 0,
            checksum_expected: None,
            size_bytes: None,
        }
    }
}

/// Rate limits and patience settings for talking to the hub.
#[derive(Debug, Clone, Copy)]
pub struct ThrottlePolicy {
    /// Minimum spacing between archive retrieval requests.
    pub min_request_interval: Duration,
    /// How long the hub promises to take at most to surface a product.
    pub lta_availability_window: Duration,
    pub poll_interval: Duration,
    pub max_concurrent_downloads: usize,
    /// Upper bound on per-task attempts (transport retries included).
    pub retry_limit: u32,
}

impl Default for ThrottlePolicy {
    fn default() -> Self {
        Self {
            min_request_interval: Duration::from_secs(30 * 60),
            lta_availability_window: Duration::from_secs(24 * 60 * 60),
            poll_interval: Duration::from_secs(5 * 60),
            max_concurrent_downloads: 2,
            retry_limit: 8,
        }
    }
}

impl ThrottlePolicy {
    pub fn validate(&self) -> crate::Result<()> {
        if self.min_request_interval.is_zero()
            || self.lta_availability_window.is_zero()
            || self.poll_interval.is_zero()
        {
            return Err(crate::Error::Validation(
                "throttle durations must be positive".into(),
            ));
        }
        if self.max_concurrent_downloads == 0 {
            return Err(crate::Error::Validation(
                "max_concurrent_downloads must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Deadline after which a pending archive request is abandoned:
    /// 1.5x the availability window, since the window is a promise
    /// rather than a guarantee.
    pub fn lta_deadline(&self) -> Duration {
        self.lta_availability_window + self.lta_availability_window / 2
    }
}

/// What to do with a task waiting on the archive, given the time already
/// spent. Shared by the blocking poller and the queue's event loop.
pub fn poll_decision(
    requested_at: DateTime<Utc>,
    now: DateTime<Utc>,
    policy: &ThrottlePolicy,
    online: bool,
) -> PollDecision {
    if online {
        return PollDecision::GoOnline;
    }
    let waited = (now - requested_at).to_std().unwrap_or(Duration::ZERO);
    if waited >= policy.lta_deadline() {
        PollDecision::TimedOut
    } else {
        PollDecision::KeepWaiting
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PollDecision {
    GoOnline,
    TimedOut,
    KeepWaiting,
}
