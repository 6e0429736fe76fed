//! Propagation-tree datasets, tokenization, embeddings and the planted
//! synthetic generator.

mod labels;
mod synth;
mod tree;
mod vocab;

pub use labels::{Stance, Veracity};
pub use synth::{generate_synthetic, SynthConfig};
pub use tree::{load_dataset, parse_dataset, write_dataset, write_dataset_to, PostNode, PropagationTree};
pub use vocab::{split_words, tokenize, Vocabulary, EMPTY, PAD, UNK};
