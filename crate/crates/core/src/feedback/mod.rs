//! Feedback records, the scripted teacher, snapshot captions and the
//! append-only feedback store.

mod record;
mod snapshot;
mod store;
mod teacher;

pub use record::{
    apply_correction, validate_round, ErrorType, FeedbackRecord, MistakeCategory, Provenance, Rating, RoundEntry, Span,
};
pub use snapshot::{load_snapshot, save_snapshot, SnapshotCaption};
pub use store::{store_stats, FeedbackStore, StoreFilter, StoreStats};
pub use teacher::{Teacher, TeacherConfig};
