//! Phrase-based caption decoding trained with policy gradients shaped by
//! natural-language feedback.

pub mod captioner;
pub mod corpus;
pub mod error;
pub mod fbn;
pub mod feedback;
pub mod numerics;
pub mod pgtrain;
pub mod rewards;

pub use error::{Error, Result};
