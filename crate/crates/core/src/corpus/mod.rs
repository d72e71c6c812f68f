//! Dialogue data model, file formats, statistics, splitting and synthesis.

pub mod io;
mod split;
mod stats;
pub mod synth;
mod types;
mod vocab;

pub use io::{
    load_corpus, parse_dialogue, parse_unlabeled_utterance_line, parse_utterance_line, read_corpus, to_jsonl_line,
    write_corpus,
};
pub use split::{split_corpus, Split, DEFAULT_RATIOS};
pub use stats::{corpus_stats, handoff_position_hist, CorpusStats, HandoffHistogram};
pub use synth::{check_planted_rules, synthesize_corpus, SynthSpec, SynthTally};
pub use types::{Dialogue, HandoffLabel, Role, SatisfactionLabel, SentimentLabel, Utterance};
pub use vocab::{
    build_vocab, load_embeddings, random_embeddings, read_embeddings, EmbeddingTable, Vocabulary,
    PAD_INDEX, PAD_TOKEN, UNK_INDEX, UNK_TOKEN,
};
