use std::collections::BTreeMap;
use std::time::Duration;

use feedcap::corpus::PhrasedCaption;
use feedcap::feedback::{
    apply_correction, validate_round, FeedbackRecord, Provenance, Rating, RoundEntry, SnapshotCaption,
};
use serde::{Deserialize, Serialize};

pub const DEFAULT_LEASE: Duration = Duration::from_secs(600);
pub const DEFAULT_MAX_ROUNDS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum BoardError {
    #[error("unknown task {0}")]
    NotFound(u64),
    #[error("task {id}: {reason}")]
    Conflict { id: u64, reason: String },
    #[error(transparent)]
    Invalid(#[from] feedcap::Error),
}

/// What a teacher sees for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskView {
    pub task_id: u64,
    pub image_id: u64,
    /// 1 for the quality rating, 2 for detailed feedback.
    pub round: u8,
    pub caption: PhrasedCaption,
    /// Bracketed phrases, e.g. `( a cat ) ( sitting )`.
    pub rendered: String,
    /// Detailed rounds already given for this image.
    pub rounds_done: usize,
    pub lease_seconds: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    /// The image is finished and its record is ready for the store.
    Completed(FeedbackRecord),
    /// A round-2 task was queued for any teacher.
    Queued(u64),
    /// The caption still has errors: a new round-2 task on the corrected
    /// caption, leased to the same teacher.
    Continued(TaskView),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub images: usize,
    pub completed: usize,
    pub open_round1: usize,
    pub open_round2: usize,
    pub leased: usize,
}

#[derive(Debug)]
struct Task {
    image: usize,
    round: u8,
    caption: PhrasedCaption,
    lease_until: Option<Duration>,
    closed: bool,
}

#[derive(Debug)]
struct Draft {
    image_id: u64,
    caption: PhrasedCaption,
    quality: Option<Rating>,
    rounds: Vec<RoundEntry>,
    done: bool,
}

/// Task queue over one snapshot of captions, with timed leases.
#[derive(Debug)]
pub struct TaskBoard {
    tasks: BTreeMap<u64, Task>,
    drafts: Vec<Draft>,
    next_id: u64,
    lease: Duration,
    max_rounds: usize,
}

impl TaskBoard {
    pub fn new(snapshot: &[SnapshotCaption], lease: Duration, max_rounds: usize) -> feedcap::Result<Self> {
        if max_rounds == 0 || lease.is_zero() {
            return Err(feedcap::Error::Config("lease and max_rounds must be positive".into()));
        }
        let mut board = Self {
            tasks: BTreeMap::new(),
            drafts: Vec::with_capacity(snapshot.len()),
            next_id: 1,
            lease,
            max_rounds,
        };
        for s in snapshot {
            let caption = s.caption();
            if caption.is_empty() {
                return Err(feedcap::Error::validation(
                    "phrases",
                    format!("image {} has an empty caption", s.image_id),
                ));
            }
            caption.validate()?;
            if board.drafts.iter().any(|d| d.image_id == s.image_id) {
                return Err(feedcap::Error::validation(
                    "image_id",
                    format!("duplicate image {}", s.image_id),
                ));
            }
            board.drafts.push(Draft {
                image_id: s.image_id,
                caption: caption.clone(),
                quality: None,
                rounds: vec![],
                done: false,
            });
            board.push_task(board.drafts.len() - 1, 1, caption);
        }
        Ok(board)
    }

    fn push_task(&mut self, image: usize, round: u8, caption: PhrasedCaption) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.tasks.insert(
            id,
            Task {
                image,
                round,
                caption,
                lease_until: None,
                closed: false,
            },
        );
        id
    }

    fn view(&self, id: u64, now: Duration) -> TaskView {
        let t = &self.tasks[&id];
        TaskView {
            task_id: id,
            image_id: self.drafts[t.image].image_id,
            round: t.round,
            rendered: t.caption.render(),
            caption: t.caption.clone(),
            rounds_done: self.drafts[t.image].rounds.len(),
            lease_seconds: t.lease_until.map_or(0, |u| u.saturating_sub(now).as_secs()),
        }
    }

    /// Leases the oldest open task that nobody holds, optionally restricted to
    /// one round.
    pub fn next(&mut self, round: Option<u8>, now: Duration) -> Option<TaskView> {
        let id = self
            .tasks
            .iter()
            .find(|(_, t)| !t.closed && round.is_none_or(|r| r == t.round) && t.lease_until.is_none_or(|u| u <= now))
            .map(|(&id, _)| id)?;
        self.tasks.get_mut(&id).unwrap().lease_until = Some(now + self.lease);
        Some(self.view(id, now))
    }

    pub fn get(&self, id: u64, now: Duration) -> Result<TaskView, BoardError> {
        if !self.tasks.contains_key(&id) {
            return Err(BoardError::NotFound(id));
        }
        Ok(self.view(id, now))
    }

    fn open_task(&self, id: u64, round: u8) -> Result<&Task, BoardError> {
        let t = self.tasks.get(&id).ok_or(BoardError::NotFound(id))?;
        if t.closed {
            return Err(BoardError::Conflict {
                id,
                reason: "task is closed".into(),
            });
        }
        if t.round != round {
            return Err(BoardError::Conflict {
                id,
                reason: format!("task is in round {}", t.round),
            });
        }
        Ok(t)
    }

    fn close(&mut self, id: u64) {
        let t = self.tasks.get_mut(&id).unwrap();
        t.closed = true;
        t.lease_until = None;
    }

    fn finish(&mut self, image: usize) -> Result<Outcome, BoardError> {
        let d = &mut self.drafts[image];
        let record = FeedbackRecord {
            image_id: d.image_id,
            caption: d.caption.clone(),
            quality: d.quality.expect("rated before finishing"),
            rounds: d.rounds.clone(),
            provenance: Provenance::Human,
        };
        record.validate()?;
        d.done = true;
        Ok(Outcome::Completed(record))
    }

    pub fn submit_round1(&mut self, id: u64, quality: Rating, _now: Duration) -> Result<Outcome, BoardError> {
        let t = self.open_task(id, 1)?;
        let (image, caption) = (t.image, t.caption.clone());
        self.close(id);
        self.drafts[image].quality = Some(quality);
        if !quality.needs_feedback() {
            return self.finish(image);
        }
        Ok(Outcome::Queued(self.push_task(image, 2, caption)))
    }

    /// Applies one detailed round. The image is finished once the caption is
    /// rated without errors or the round limit is reached.
    pub fn submit_round2(&mut self, id: u64, entry: RoundEntry, now: Duration) -> Result<Outcome, BoardError> {
        let t = self.open_task(id, 2)?;
        validate_round(&t.caption, &entry, "round")?;
        let corrected = apply_correction(&t.caption, &entry)?;
        if corrected.is_empty() {
            return Err(feedcap::Error::validation("round.span", "the correction leaves an empty caption").into());
        }
        let image = t.image;
        self.close(id);
        let again = entry.post_quality.needs_feedback();
        self.drafts[image].rounds.push(entry);
        if !again || self.drafts[image].rounds.len() >= self.max_rounds {
            return self.finish(image);
        }
        let next = self.push_task(image, 2, corrected);
        self.tasks.get_mut(&next).unwrap().lease_until = Some(now + self.lease);
        Ok(Outcome::Continued(self.view(next, now)))
    }

    pub fn progress(&self, now: Duration) -> Progress {
        let mut p = Progress {
            images: self.drafts.len(),
            completed: self.drafts.iter().filter(|d| d.done).count(),
            open_round1: 0,
            open_round2: 0,
            leased: 0,
        };
        for t in self.tasks.values().filter(|t| !t.closed) {
            if t.lease_until.is_some_and(|u| u > now) {
                p.leased += 1;
            } else if t.round == 1 {
                p.open_round1 += 1;
            } else {
                p.open_round2 += 1;
            }
        }
        p
    }
}
