//! Text ingestion, vocabularies, embeddings and synthetic tasks.

mod dataset;
mod embeddings;
mod synthetic;
mod text;

pub use dataset::{
    class_count, encode, load_dataset, split_dataset, write_dataset, LabeledSequence, TextExample, TruncateSide,
    Truncation,
};
pub use embeddings::{load_embeddings, EmbeddingTable};
pub use synthetic::{gen_synthetic, majority_label, synthetic_vocabulary, SyntheticTask, FIRST_MARKER, FLAG_WINDOW};
pub use text::{tokenize, Vocabulary, PADDING_ID, PADDING_TOKEN, UNKNOWN_ID, UNKNOWN_TOKEN};
