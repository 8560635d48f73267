//! Long-form speech translation corpus construction: text preparation,
//! bilingual sentence alignment, biased language models, anchor-based and
//! flexible CTC alignment, quality filtering and balanced splits.

pub mod anchor;
pub mod bitext;
pub mod decode;
pub mod embedding;
pub mod error;
pub mod fsa;
pub mod jsonl;
pub mod lm;
pub mod manifest;
pub mod pipeline;
pub mod posterior;
pub mod quality;
pub mod splits;
pub mod synth;
pub mod textproc;
pub mod vocab;

pub use error::{Error, Result};
