//! Synthetic scenes, ground-truth phrase-chunked captions, vocabulary and
//! dataset persistence.

mod caption;
mod dataset;
mod grammar;
mod scene;
mod vocab;

pub use caption::{chunk_merge, tokenize, Phrase, PhraseLabel, PhrasedCaption, EOS_CLASS, NUM_LABEL_CLASSES};
pub use dataset::{
    append_records, gen_dataset, import_prechunked, load_dataset, save_dataset, CaptionRecord, Dataset, SceneRecord,
    DATASET_VERSION,
};
pub use grammar::{realize_caption, Grammar, LandmarkDet, Slot, TaggedPhrase};
pub use scene::{gen_scene, scene_features, Cell, FeatureGrid, Relation, Scene, SceneConfig, ROLE_DIMS};
pub use vocab::{build_vocab, Vocabulary, WordId, BOS, EOP, RESERVED, UNK};
