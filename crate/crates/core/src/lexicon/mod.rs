//! Shared feature substrate: word vectors, n-gram vocabularies, bag-of-n-gram
//! vectors, stemming and the stop-word list.

pub mod glove;
pub mod stem;
pub mod stopwords;
pub mod vocab;

pub use glove::{SentenceEmbedding, WordVectorTable};
pub use stem::porter_stem;
pub use vocab::{bow_vector, build_vocabulary, ngrams, BowVector, Normalization, Vocabulary};
