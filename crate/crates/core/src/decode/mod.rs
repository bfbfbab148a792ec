//! Decoding, evaluation metrics, the two-pass pipeline and synthetic data.

mod beam;
mod bleu;
mod synthetic;
mod two_pass;

pub use beam::{beam_search, decode_corpus, default_max_out, greedy, translate, Hypothesis};
pub use bleu::{bleu, bleu_tokens, exact_match, BleuStats};
pub use synthetic::{make_synthetic, Permutation, Splits, SyntheticSpec, SyntheticTask};
pub use two_pass::{run_2pt, TwoPassOutput};
