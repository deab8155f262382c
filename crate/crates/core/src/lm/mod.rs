//! Character-level language modelling: vocabulary, stateful batching, the
//! embedding/QRNN/softmax model and bits-per-character evaluation.

mod batch;
mod corpus;
mod eval;
mod model;
mod vocab;

pub use batch::{Batch, BatchStream};
pub use corpus::{read_corpus, synthetic_text, Encoding};
pub use eval::{bpc, evaluate, run_inference, EvalResult, SegmentView};
pub use model::{LmForward, LmModel};
pub use vocab::{CharVocab, UNKNOWN};
