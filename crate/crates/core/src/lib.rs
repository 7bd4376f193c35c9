//! Citation field extraction: synthetic citation generation, a BiLSTM-CRF
//! labeler, leave-one-out anchor scoring, anchor-guided masked pre-training
//! and field/token level evaluation.

pub mod anchor;
pub mod config;
pub mod error;
pub mod ingest;
pub mod io;
pub mod labeler;
pub mod metrics;
pub mod modelfile;
pub mod nn;
pub mod pipeline;
pub mod pretrain;
pub mod styler;
pub mod subword;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use ingest::{BibRecord, Pages, Person};
pub use labeler::{predict, LabelerModel, ModelMeta};
pub use styler::{CitationStyle, RenderedCitation};
pub use subword::{SubwordSequence, SubwordVocab};
pub use types::{
    spans_from_labels, validate_citation, FieldLabel, FieldSpan, LabeledCitation, Origin, Token,
};
