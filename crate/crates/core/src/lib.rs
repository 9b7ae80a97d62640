//! Desk-scale graphemic hybrid ASR toolkit.
//!
//! The crate covers the full classical pipeline for context-dependent
//! grapheme (chenone) and phone (senone) modeling: unit inventories and
//! lexicons, tri-context expansion and alignment graphs, Gaussian sufficient
//! statistics, decision-tree state tying, diagonal-GMM/HMM training with
//! Viterbi forced alignment, prefix-tree beam decoding with an n-gram LM,
//! and WER/CER scoring with tagged-segment analysis.

pub mod am;
pub mod context;
pub mod corpus;
pub mod decode;
pub mod eval;
pub mod stats;
pub mod tree;
pub mod units;

pub use am::{AcousticModel, AlignmentResult, AmError, DiagGaussian, Gmm};
pub use context::{CdConfig, ContextError, HmmTopology, Neighbor, TriContext, UtteranceGraph};
pub use corpus::{CorpusError, Features, Utterance};
pub use decode::{DecodeConfig, DecodeError, Hypothesis, NGramLm, PrefixTree};
pub use eval::{EditOp, EvalError, SegmentPair, TagLabel, TagSpan, WerReport};
pub use stats::{GaussStats, StatsError, StatsTable};
pub use tree::{Question, QuestionSlot, TiedStateMap, TreeConfig, TreeError};
pub use units::{
    CaseMode, Lexicon, LexiconSource, Position, Unit, UnitId, UnitInventory, UnitKind, UnitsError,
};
