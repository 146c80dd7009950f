//! HTTP service that hands snapshot captions to teachers, collects round-1
//! ratings and detailed round-2 feedback, and writes finished records to the
//! feedback store.

mod api;
mod board;
mod clock;
mod writer;

pub use api::{router, serve, Hub, HubConfig};
pub use board::{BoardError, Outcome, Progress, TaskBoard, TaskView, DEFAULT_LEASE, DEFAULT_MAX_ROUNDS};
pub use clock::{Clock, ManualClock, SystemClock};
pub use writer::StoreWriter;

/// JSON schema shared with the annotation client.
pub const FEEDBACK_SCHEMA: &str = include_str!("../schema/feedback.schema.json");
