//! Dialog datasets, ontologies, paraphrase candidates and span replacement.

mod candidates;
mod dataset;
mod ontology;
mod sites;
mod tokenize;

pub use candidates::{
    load_candidates, Candidate, CandidateSource, CandidateStore, MAX_PARAPHRASE_SPAN,
};
pub use dataset::{
    load_dataset, load_ontology, Corpus, DialogState, Dialogue, Split, Turn, TurnLabel,
};
pub use ontology::{Ontology, NONE_VALUE, UNSWAPPABLE_VALUES};
pub use sites::{apply_replacement, index_sites, AugmentationSite, Span, SpanGroups};
pub use tokenize::{detokenize, normalize, tokenize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("no ontology in dataset and none supplied")]
    MissingOntology,
    #[error("invalid ontology: {0}")]
    InvalidOntology(String),
    #[error("dialogue {dialogue} turn {turn}: unknown slot {slot:?}")]
    UnknownSlot {
        dialogue: String,
        turn: usize,
        slot: String,
    },
    #[error("dialogue {dialogue} turn {turn}: unknown value {value:?} for slot {slot:?}")]
    UnknownValue {
        dialogue: String,
        turn: usize,
        slot: String,
        value: String,
    },
    #[error("dialogue {dialogue} turn {turn}: {message}")]
    Invariant {
        dialogue: String,
        turn: usize,
        message: String,
    },
    #[error("candidate file line {line}: {message}")]
    CandidateRow { line: usize, message: String },
    #[error("no candidate entry matches the training data")]
    EmptyStore,
    #[error("candidate {candidate:?} is not in the candidate set of span {span:?}")]
    CandidateNotInSite { candidate: String, span: String },
    #[error("dialogue {dialogue} turn {turn}: span {span:?} does not match the turn")]
    SiteMismatch {
        dialogue: String,
        turn: usize,
        span: String,
    },
}
