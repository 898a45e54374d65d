//! Relation extraction with a ranking convolutional network, trained from
//! distantly supervised data and refined through expert feedback on the
//! trigrams the model relies on.
//!
//! The modules follow the data flow: [`corpus`] and [`kb`] read inputs,
//! [`align`] produces distantly labeled examples, [`model`] and [`train`]
//! fit the network, [`trigrams`] explains it, [`feedback`] filters the
//! training data and [`eval`] scores the result.

pub mod align;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod feedback;
pub mod kb;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod train;
pub mod trigrams;
pub mod workspace;

pub use align::{align, build_bags, Alignment, Bag, BagKey};
pub use checkpoint::Checkpoint;
pub use corpus::{
    encode, read_corpus, read_tagged, write_tagged, Direction, EncodedExample, EntitySpan, Role, Sentence,
    TaggedExample, Token, Vocabulary,
};
pub use error::{Error, Result};
pub use eval::{evaluate, ClassMetrics, MetricsReport};
pub use feedback::{apply_verdicts, BannedSet, BannedTrigram, Decision, RoundRecord, Verdict, VerdictSet};
pub use kb::{clean_triples, ClassSet, RelationSchema, Triple};
pub use model::{forward, predict, Activation, Hyperparams, ModelParams, OtherMode};
pub use pipeline::{fit, fit_bags};
pub use trigrams::{top_trigrams, Trigram, TrigramAttribution};
pub use workspace::{JobStatus, Workspace, WorkspaceConfig};
