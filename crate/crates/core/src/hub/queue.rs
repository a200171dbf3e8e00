//! The retrieval queue: spaces archive requests by the throttle policy,
//! polls pending products until they surface, and runs checksum-verified,
//! resumable transfers. Every state change is journaled first, so a
//! killed run picks up where it stopped.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use md5::{Digest, Md5};

use crate::error::{Error, Result};
use crate::hub::journal::Journal;
use crate::hub::{
    poll_decision, Clock, DownloadTask, HubClient, PollDecision, RetrieveOutcome, TaskState,
    ThrottlePolicy,
};

const BACKOFF_BASE: Duration = Duration::from_secs(10);
const BACKOFF_CAP: Duration = Duration::from_secs(600);
/// Real-time wait per scheduler turn while transfers are in flight.
const COMPLETION_POLL: Duration = Duration::from_millis(10);

fn backoff_delay(attempt: u32) -> Duration {
    let factor = 1u32 << attempt.min(16);
    BACKOFF_BASE.saturating_mul(factor).min(BACKOFF_CAP)
}

/// What a task needs before the queue can run it.
#[derive(Debug, Clone)]
pub struct QueueSeed {
    pub product_id: String,
    pub md5: Option<String>,
    pub size_bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueueOutcome {
    /// Every task reached Done or Failed.
    Completed { done: Vec<String>, failed: Vec<(String, String)> },
    /// The stop flag was raised; state is recoverable from the journal.
    Interrupted,
}

/// The expected dispatch plan for offline products: the i-th archive
/// request goes out no earlier than `start + i * min_request_interval`.
pub fn plan_lta_dispatch(
    offline_ids: &[String],
    policy: &ThrottlePolicy,
    start: DateTime<Utc>,
) -> Vec<(DateTime<Utc>, String)> {
    let interval = chrono::Duration::from_std(policy.min_request_interval).expect("interval in range");
    offline_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (start + interval * (i as i32), id.clone()))
        .collect()
}

/// Blocks until a requested product surfaces or the deadline passes.
pub fn poll_until_online(
    client: &HubClient,
    clock: &dyn Clock,
    policy: &ThrottlePolicy,
    product_id: &str,
    requested_at: DateTime<Utc>,
) -> TaskState {
    let mut unreachable_attempts = 0u32;
    loop {
        let online = match client.status(product_id) {
            Ok(v) => {
                unreachable_attempts = 0;
                v
            }
            Err(Error::HubUnreachable(msg)) => {
                unreachable_attempts += 1;
                if unreachable_attempts > policy.retry_limit {
                    return TaskState::Failed {
                        reason: format!("unreachable: {msg}"),
                    };
                }
                clock.sleep(backoff_delay(unreachable_attempts - 1));
                continue;
            }
            Err(e) => {
                return TaskState::Failed { reason: e.to_string() };
            }
        };
        match poll_decision(requested_at, clock.now(), policy, online) {
            PollDecision::GoOnline => return TaskState::Online,
            PollDecision::TimedOut => {
                return TaskState::Failed {
                    reason: "lta timeout".into(),
                }
            }
            PollDecision::KeepWaiting => clock.sleep(policy.poll_interval),
        }
    }
}

enum TransferError {
    Transport(String),
    Checksum,
    SizeMismatch { got: u64, expected: u64 },
    Other(String),
}

/// One transfer attempt: resume into `<id>.zip.part`, verify, promote to
/// `<id>.zip`. The `.part` file is the resume point; verification hashes
/// the already-present prefix before appending.
fn transfer_once(
    client: &HubClient,
    task: &DownloadTask,
    dest_dir: &Path,
) -> std::result::Result<PathBuf, TransferError> {
    let part_path = dest_dir.join(format!("{}.zip.part", task.product_id));
    let final_path = dest_dir.join(format!("{}.zip", task.product_id));

    std::fs::create_dir_all(dest_dir)
        .map_err(|e| TransferError::Other(format!("create {}: {e}", dest_dir.display())))?;

    let mut hasher = Md5::new();
    let mut offset = 0u64;
    if part_path.exists() {
        let mut existing = File::open(&part_path)
            .map_err(|e| TransferError::Other(format!("open {}: {e}", part_path.display())))?;
        let mut buf = [0u8; 64 * 1024];
        loop {
            match existing.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => {
                    hasher.update(&buf[..n]);
                    offset += n as u64;
                }
                Err(e) => return Err(TransferError::Other(format!("read partial: {e}"))),
            }
        }
    }

    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&part_path)
        .map_err(|e| TransferError::Other(format!("open {}: {e}", part_path.display())))?;

    struct HashingWriter<'a> {
        file: &'a mut File,
        hasher: &'a mut Md5,
        written: u64,
    }
    impl std::io::Write for HashingWriter<'_> {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            let n = self.file.write(buf)?;
            self.hasher.update(&buf[..n]);
            self.written += n as u64;
            Ok(n)
        }
        fn flush(&mut self) -> std::io::Result<()> {
            self.file.flush()
        }
    }
    use std::io::Write as _;

    let mut sink = HashingWriter {
        file: &mut file,
        hasher: &mut hasher,
        written: 0,
    };
    match client.download_to(&task.product_id, offset, &mut sink) {
        Ok(_) => {}
        Err(Error::HubUnreachable(msg)) => {
            let _ = sink.flush();
            return Err(TransferError::Transport(msg));
        }
        Err(e) => return Err(TransferError::Other(e.to_string())),
    }
    sink.flush().map_err(|e| TransferError::Other(e.to_string()))?;
    let total = offset + sink.written;
    drop(file);

    if let Some(expected) = &task.checksum_expected {
        let got = hex::encode(hasher.finalize());
        if &got != expected {
            let _ = std::fs::remove_file(&part_path);
            return Err(TransferError::Checksum);
        }
    } else if let Some(expected_size) = task.size_bytes {
        if total != expected_size {
            let _ = std::fs::remove_file(&part_path);
            return Err(TransferError::SizeMismatch {
                got: total,
                expected: expected_size,
            });
        }
    }

    std::fs::rename(&part_path, &final_path)
        .map_err(|e| TransferError::Other(format!("rename to {}: {e}", final_path.display())))?;
    Ok(final_path)
}

/// Blocking single-product transfer with resume retries, usable outside
/// the queue. `stop` aborts between attempts.
pub fn download_product(
    client: &HubClient,
    clock: &dyn Clock,
    policy: &ThrottlePolicy,
    task: &mut DownloadTask,
    dest_dir: &Path,
    stop: &AtomicBool,
) -> TaskState {
    loop {
        if stop.load(Ordering::SeqCst) {
            return task.state.clone();
        }
        match transfer_once(client, task, dest_dir) {
            Ok(_) => return TaskState::Done,
            Err(TransferError::Checksum) => {
                return TaskState::Failed { reason: "checksum".into() };
            }
            Err(TransferError::SizeMismatch { got, expected }) => {
                return TaskState::Failed {
                    reason: format!("size: got {got}, expected {expected}"),
                };
            }
            Err(TransferError::Transport(msg)) => {
                task.attempts += 1;
                if task.attempts > policy.retry_limit {
                    return TaskState::Failed {
                        reason: format!("transport: {msg}"),
                    };
                }
                clock.sleep(backoff_delay(task.attempts - 1));
            }
            Err(TransferError::Other(msg)) => {
                return TaskState::Failed { reason: msg };
            }
        }
    }
}

struct Completion {
    index: usize,
    result: std::result::Result<(), TransferError>,
    attempts_used: u32,
}

pub struct DownloadQueue {
    client: Arc<HubClient>,
    clock: Arc<dyn Clock>,
    policy: ThrottlePolicy,
    dest_dir: PathBuf,
    journal: Journal,
    tasks: Vec<DownloadTask>,
}

impl DownloadQueue {
    /// Opens (or resumes) a queue whose state lives in `journal_path`.
    pub fn new(
        client: HubClient,
        clock: Arc<dyn Clock>,
        policy: ThrottlePolicy,
        dest_dir: &Path,
        journal_path: &Path,
    ) -> Result<Self> {
        policy.validate()?;
        Ok(Self {
            client: Arc::new(client),
            clock,
            policy,
            dest_dir: dest_dir.to_path_buf(),
            journal: Journal::open(journal_path)?,
            tasks: Vec::new(),
        })
    }

    /// Adds tasks, adopting any state the journal already holds for them.
    pub fn enqueue(&mut self, seeds: &[QueueSeed]) -> Result<()> {
        let recovered = crate::hub::journal::replay(self.journal.path())?;
        for seed in seeds {
            if self.tasks.iter().any(|t| t.product_id == seed.product_id) {
                continue;
            }
            let state = recovered
                .get(&seed.product_id)
                .cloned()
                .unwrap_or(TaskState::Queued);
            self.tasks.push(DownloadTask {
                product_id: seed.product_id.clone(),
                state,
                attempts: 0,
                checksum_expected: seed.md5.clone(),
                size_bytes: seed.size_bytes,
            });
        }
        Ok(())
    }

    pub fn tasks(&self) -> &[DownloadTask] {
        &self.tasks
    }

    fn transition(&mut self, index: usize, to: TaskState) -> Result<()> {
        let task = &self.tasks[index];
        self.journal
            .append(self.clock.now(), &task.product_id, &task.state, &to)?;
        self.tasks[index].state = to;
        Ok(())
    }

    /// Runs every task to a terminal state. Checking `stop` between steps
    /// makes an external kill recoverable: the journal plus partial files
    /// carry everything needed to resume.
    pub fn run(&mut self, stop: &AtomicBool) -> Result<QueueOutcome> {
        // probe tasks the journal says are untouched; already-online
        // products skip the archive queue entirely
        let mut lta_pending: Vec<usize> = Vec::new();
        for i in 0..self.tasks.len() {
            if self.tasks[i].state == TaskState::Queued {
                match self.status_with_backoff(&self.tasks[i].product_id.clone(), stop)? {
                    Some(true) => self.transition(i, TaskState::Online)?,
                    Some(false) => lta_pending.push(i),
                    None => return Ok(QueueOutcome::Interrupted),
                }
            }
            if stop.load(Ordering::SeqCst) {
                return Ok(QueueOutcome::Interrupted);
            }
        }

        let mut next_lta_at = self.clock.now();
        let mut poll_at: HashMap<usize, DateTime<Utc>> = HashMap::new();
        for (i, task) in self.tasks.iter().enumerate() {
            if let TaskState::LtaRequested { .. } = task.state {
                poll_at.insert(i, self.clock.now());
            }
        }
        let mut retry_at: HashMap<usize, DateTime<Utc>> = HashMap::new();
        let mut active: std::collections::HashSet<usize> = std::collections::HashSet::new();
        let mut lta_queue: std::collections::VecDeque<usize> = lta_pending.into();

        let (tx, rx): (Sender<Completion>, Receiver<Completion>) = channel();
        let mut in_flight = 0usize;

        loop {
            // completions first, so worker slots free up
            while let Ok(completion) = rx.try_recv() {
                in_flight -= 1;
                active.remove(&completion.index);
                self.handle_completion(completion, &mut retry_at)?;
            }
            if stop.load(Ordering::SeqCst) {
                // drain without blocking forever: workers own their tasks
                return Ok(QueueOutcome::Interrupted);
            }

            let now = self.clock.now();

            // archive dispatch, one per turn, spaced by the policy
            if !lta_queue.is_empty() && now >= next_lta_at {
                let index = *lta_queue.front().unwrap();
                let id = self.tasks[index].product_id.clone();
                match self.retrieve_with_backoff(&id, stop)? {
                    Some(RetrieveOutcome::AlreadyOnline) => {
                        lta_queue.pop_front();
                        self.transition(index, TaskState::Online)?;
                    }
                    Some(RetrieveOutcome::Accepted) => {
                        lta_queue.pop_front();
                        let at = self.clock.now();
                        self.transition(index, TaskState::LtaRequested { at })?;
                        poll_at.insert(index, at + chrono::Duration::from_std(self.policy.poll_interval).unwrap());
                        next_lta_at = now + chrono::Duration::from_std(self.policy.min_request_interval).unwrap();
                    }
                    None => return Ok(QueueOutcome::Interrupted),
                }
                continue;
            }

            // due status polls
            let mut due: Vec<usize> = poll_at
                .iter()
                .filter(|(_, &t)| now >= t)
                .map(|(&i, _)| i)
                .collect();
            due.sort_unstable();
            for index in due {
                let id = self.tasks[index].product_id.clone();
                let TaskState::LtaRequested { at } = self.tasks[index].state else {
                    poll_at.remove(&index);
                    continue;
                };
                let Some(online) = self.status_with_backoff(&id, stop)? else {
                    return Ok(QueueOutcome::Interrupted);
                };
                match poll_decision(at, self.clock.now(), &self.policy, online) {
                    PollDecision::GoOnline => {
                        poll_at.remove(&index);
                        self.transition(index, TaskState::Online)?;
                    }
                    PollDecision::TimedOut => {
                        poll_at.remove(&index);
                        self.transition(index, TaskState::Failed { reason: "lta timeout".into() })?;
                    }
                    PollDecision::KeepWaiting => {
                        poll_at.insert(
                            index,
                            self.clock.now()
                                + chrono::Duration::from_std(self.policy.poll_interval).unwrap(),
                        );
                    }
                }
                if stop.load(Ordering::SeqCst) {
                    return Ok(QueueOutcome::Interrupted);
                }
            }

            // hand ready tasks to workers; `active` guards against
            // re-dispatching a task whose worker is still running
            for index in 0..self.tasks.len() {
                if in_flight >= self.policy.max_concurrent_downloads {
                    break;
                }
                if active.contains(&index) {
                    continue;
                }
                let dispatch = match self.tasks[index].state {
                    TaskState::Online => true,
                    // recovered mid-transfer from the journal, or due for
                    // a resume retry
                    TaskState::Downloading => retry_at.get(&index).is_none_or(|&t| now >= t),
                    _ => false,
                };
                if !dispatch {
                    continue;
                }
                if matches!(self.tasks[index].state, TaskState::Online) {
                    self.transition(index, TaskState::Downloading)?;
                }
                retry_at.remove(&index);
                active.insert(index);
                let client = Arc::clone(&self.client);
                let task = self.tasks[index].clone();
                let dest = self.dest_dir.clone();
                let tx = tx.clone();
                in_flight += 1;
                std::thread::spawn(move || {
                    let result = transfer_once(&client, &task, &dest).map(|_| ());
                    let _ = tx.send(Completion {
                        index,
                        result,
                        attempts_used: 1,
                    });
                });
            }

            if self.tasks.iter().all(|t| t.state.is_terminal()) && in_flight == 0 {
                break;
            }

            // choose how to wait: pending timed events advance the clock,
            // in-flight transfers are waited on in real time
            let mut next_timed: Option<DateTime<Utc>> = None;
            if !lta_queue.is_empty() {
                next_timed = Some(next_lta_at);
            }
            for &t in poll_at.values() {
                next_timed = Some(next_timed.map_or(t, |cur| cur.min(t)));
            }
            for (&i, &t) in &retry_at {
                if !self.tasks[i].state.is_terminal() {
                    next_timed = Some(next_timed.map_or(t, |cur| cur.min(t)));
                }
            }

            if in_flight > 0 {
                match rx.recv_timeout(COMPLETION_POLL) {
                    Ok(completion) => {
                        in_flight -= 1;
                        active.remove(&completion.index);
                        self.handle_completion(completion, &mut retry_at)?;
                    }
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => {
                        return Err(Error::Download("worker channel closed".into()))
                    }
                }
            } else if let Some(t) = next_timed {
                let now = self.clock.now();
                if t > now {
                    let dur = (t - now).to_std().unwrap_or(Duration::ZERO);
                    self.clock.sleep(dur);
                }
            } else {
                // nothing pending and nothing in flight but not all
                // terminal: should not happen
                return Err(Error::Download("queue stalled with pending tasks".into()));
            }
        }

        let mut done = Vec::new();
        let mut failed = Vec::new();
        for task in &self.tasks {
            match &task.state {
                TaskState::Done => done.push(task.product_id.clone()),
                TaskState::Failed { reason } => {
                    failed.push((task.product_id.clone(), reason.clone()))
                }
                other => {
                    return Err(Error::Download(format!(
                        "task {} ended non-terminal: {}",
                        task.product_id,
                        other.name()
                    )))
                }
            }
        }
        Ok(QueueOutcome::Completed { done, failed })
    }

    fn handle_completion(
        &mut self,
        completion: Completion,
        retry_at: &mut HashMap<usize, DateTime<Utc>>,
    ) -> Result<()> {
        let index = completion.index;
        match completion.result {
            Ok(()) => {
                self.transition(index, TaskState::Done)?;
                retry_at.remove(&index);
            }
            Err(TransferError::Checksum) => {
                self.transition(index, TaskState::Failed { reason: "checksum".into() })?;
            }
            Err(TransferError::SizeMismatch { got, expected }) => {
                self.transition(
                    index,
                    TaskState::Failed {
                        reason: format!("size: got {got}, expected {expected}"),
                    },
                )?;
            }
            Err(TransferError::Transport(msg)) => {
                self.tasks[index].attempts += completion.attempts_used;
                if self.tasks[index].attempts > self.policy.retry_limit {
                    self.transition(
                        index,
                        TaskState::Failed {
                            reason: format!("transport: {msg}"),
                        },
                    )?;
                } else {
                    let delay = backoff_delay(self.tasks[index].attempts - 1);
                    retry_at.insert(
                        index,
                        self.clock.now() + chrono::Duration::from_std(delay).unwrap(),
                    );
                }
            }
            Err(TransferError::Other(msg)) => {
                self.transition(index, TaskState::Failed { reason: msg })?;
            }
        }
        Ok(())
    }

    fn status_with_backoff(&mut self, product_id: &str, stop: &AtomicBool) -> Result<Option<bool>> {
        let mut attempt = 0u32;
        loop {
            match self.client.status(product_id) {
                Ok(v) => return Ok(Some(v)),
                Err(Error::HubUnreachable(msg)) => {
                    attempt += 1;
                    if attempt > self.policy.retry_limit {
                        return Err(Error::HubUnreachable(msg));
                    }
                    if stop.load(Ordering::SeqCst) {
                        return Ok(None);
                    }
                    self.clock.sleep(backoff_delay(attempt - 1));
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn retrieve_with_backoff(
        &mut self,
        product_id: &str,
        stop: &AtomicBool,
    ) -> Result<Option<RetrieveOutcome>> {
        let mut attempt = 0u32;
        loop {
            match self.client.request_retrieval(product_id) {
                Ok(v) => return Ok(Some(v)),
                Err(Error::HubUnreachable(msg)) => {
                    attempt += 1;
                    if attempt > self.policy.retry_limit {
                        return Err(Error::HubUnreachable(msg));
                    }
                    if stop.load(Ordering::SeqCst) {
                        return Ok(None);
                    }
                    self.clock.sleep(backoff_delay(attempt - 1));
                }
                Err(e) => return Err(e),
            }
        }
    }
}
