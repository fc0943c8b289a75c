//! Byte vocabulary, SFT corpora and synthetic task generators.

mod corpus;
mod eval;
mod synthetic;
mod vocab;

pub use corpus::{load_jsonl, Corpus, SftSample};
pub use eval::{exact_match_eval, exact_match_eval_with};
pub use synthetic::{arith_sample, copy_sample, gen_synthetic, kv_sample, reverse_sample, Task, ARROW};
pub use vocab::{detokenize, is_special, render, tokenize, TokenSequence, BOS, EOS, PAD, VOCAB_SIZE};
