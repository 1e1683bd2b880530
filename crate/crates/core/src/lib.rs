//! Attention-guided versus baseline GRU sequence-to-sequence models on the
//! lookup-table composition task, with the interpretability and ablation
//! tooling used to compare them.

pub mod numcore;
pub mod taskgen;
pub mod util;
pub mod seq2seq;
pub mod analysis;
pub mod ablate;
