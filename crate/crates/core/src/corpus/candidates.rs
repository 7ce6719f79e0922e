use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::Corpus;
use super::ontology::{Ontology, UNSWAPPABLE_VALUES};
use super::tokenize::{detokenize, tokenize};
use super::CorpusError;

/// Longest span (in tokens) eligible for paraphrase lookup.
pub const MAX_PARAPHRASE_SPAN: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CandidateSource {
    /// The span itself, kept in its own candidate set.
    Original,
    Paraphrase,
    /// Swap to another value of `slot`; the turn label follows the text.
    SlotValue { slot: String, value: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub tokens: Vec<String>,
    #[serde(flatten)]
    pub source: CandidateSource,
}

impl Candidate {
    pub fn new(text: &str, source: CandidateSource) -> Self {
        let tokens = tokenize(text);
        Self {
            text: detokenize(&tokens),
            tokens,
            source,
        }
    }

    pub fn original(span_text: &str) -> Self {
        Self::new(span_text, CandidateSource::Original)
    }

    pub fn is_original(&self) -> bool {
        self.source == CandidateSource::Original
    }
}

/// Span text → replacement candidates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CandidateStore {
    entries: BTreeMap<String, Vec<Candidate>>,
    rejected_rows: usize,
}

impl CandidateStore {
    pub fn get(&self, span: &str) -> Option<&[Candidate]> {
        self.entries.get(span).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Candidate])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Rows dropped because the span had more than three tokens.
    pub fn rejected_rows(&self) -> usize {
        self.rejected_rows
    }

    /// Longest key length in tokens.
    pub fn max_span_len(&self) -> usize {
        self.entries
            .keys()
            .map(|k| k.split(' ').count())
            .max()
            .unwrap_or(0)
    }

    /// Every token appearing in a key or candidate.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().flat_map(|(k, cs)| {
            k.split(' ')
                .chain(cs.iter().flat_map(|c| c.tokens.iter().map(String::as_str)))
        })
    }

    /// Builds the store from TSV text (`span<TAB>candidate[<TAB>score]`, `#` comments).
    ///
    /// Paraphrase rows survive only when the span is a 1–3 token n-gram of some
    /// training user utterance. Slot values occurring verbatim in a labeled
    /// training utterance additionally map to the other values of their slot.
    pub fn from_tsv(
        text: &str,
        ontology: &Ontology,
        train: &Corpus,
    ) -> Result<CandidateStore, CorpusError> {
        let ngrams = train_ngrams(train, MAX_PARAPHRASE_SPAN);
        let mut entries: BTreeMap<String, Vec<Candidate>> = BTreeMap::new();
        let mut rejected_rows = 0;

        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if !(2..=3).contains(&fields.len()) {
                return Err(CorpusError::CandidateRow {
                    line: lineno + 1,
                    message: format!("expected 2 or 3 tab-separated fields, got {}", fields.len()),
                });
            }
            let span = tokenize(fields[0]);
            let cand = Candidate::new(fields[1], CandidateSource::Paraphrase);
            if span.is_empty() || cand.tokens.is_empty() {
                return Err(CorpusError::CandidateRow {
                    line: lineno + 1,
                    message: "empty span or candidate".into(),
                });
            }
            if span.len() > MAX_PARAPHRASE_SPAN {
                rejected_rows += 1;
                continue;
            }
            let key = detokenize(&span);
            if cand.text == key || !ngrams.contains(&key) {
                continue;
            }
            let list = entries.entry(key).or_default();
            if !list.iter().any(|c| c.text == cand.text) {
                list.push(cand);
            }
        }

        for turn in train.turns() {
            for (slot, value) in turn.turn_label.iter() {
                if UNSWAPPABLE_VALUES.contains(&value) {
                    continue;
                }
                let value_tokens: Vec<&str> = value.split(' ').collect();
                if !contains_seq(&turn.user, &value_tokens) {
                    continue;
                }
                let Some(values) = ontology.values(slot) else { continue };
                let list = entries.entry(value.to_string()).or_default();
                for other in values {
                    if other == value || UNSWAPPABLE_VALUES.contains(&other.as_str()) {
                        continue;
                    }
                    let cand = Candidate::new(
                        other,
                        CandidateSource::SlotValue {
                            slot: slot.to_string(),
                            value: other.clone(),
                        },
                    );
                    // A label-consistent swap replaces a same-text paraphrase.
                    match list.iter_mut().find(|c| c.text == cand.text) {
                        Some(existing) if existing.source == CandidateSource::Paraphrase => {
                            *existing = cand
                        }
                        Some(_) => {}
                        None => list.push(cand),
                    }
                }
            }
        }

        entries.retain(|_, v| !v.is_empty());
        if entries.is_empty() {
            return Err(CorpusError::EmptyStore);
        }
        Ok(CandidateStore {
            entries,
            rejected_rows,
        })
    }
}

/// Reads the candidate TSV at `path`; see [`CandidateStore::from_tsv`].
pub fn load_candidates(
    path: &Path,
    ontology: &Ontology,
    train: &Corpus,
) -> Result<CandidateStore, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    CandidateStore::from_tsv(&text, ontology, train)
}

fn train_ngrams(train: &Corpus, max_len: usize) -> BTreeSet<String> {
    let mut set = BTreeSet::new();
    for turn in train.turns() {
        for start in 0..turn.user.len() {
            for n in 1..=max_len.min(turn.user.len() - start) {
                set.insert(detokenize(&turn.user[start..start + n]));
            }
        }
    }
    set
}

fn contains_seq(haystack: &[String], needle: &[&str]) -> bool {
    !needle.is_empty()
        && haystack
            .windows(needle.len())
            .any(|w| w.iter().zip(needle).all(|(a, b)| a == b))
}
