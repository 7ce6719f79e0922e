use std::collections::BTreeMap;

use super::tokenize::normalize;
use super::CorpusError;

/// Reserved value meaning "slot unconstrained".
pub const NONE_VALUE: &str = "none";

/// Values never used as slot-value swap spans or swap targets.
pub const UNSWAPPABLE_VALUES: &[&str] = &[NONE_VALUE, "do n't care", "dontcare", "dont care"];

/// Slot name → admissible values, including the reserved `none`.
///
/// Values are stored in normalized (tokenized, space-joined) form and sorted,
/// so iteration order is also the tie-break order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ontology {
    slots: BTreeMap<String, Vec<String>>,
}

impl Ontology {
    pub fn new(raw: BTreeMap<String, Vec<String>>) -> Result<Self, CorpusError> {
        if raw.is_empty() {
            return Err(CorpusError::InvalidOntology("no slots".into()));
        }
        let mut slots = BTreeMap::new();
        for (slot, values) in raw {
            let slot = normalize(&slot);
            if values.is_empty() {
                return Err(CorpusError::InvalidOntology(format!(
                    "slot {slot:?} has no values"
                )));
            }
            let mut norm: Vec<String> = values.iter().map(|v| normalize(v)).collect();
            norm.sort();
            if let Some(w) = norm.windows(2).find(|w| w[0] == w[1]) {
                return Err(CorpusError::InvalidOntology(format!(
                    "slot {slot:?} lists value {:?} twice",
                    w[0]
                )));
            }
            if !norm.iter().any(|v| v == NONE_VALUE) {
                norm.push(NONE_VALUE.to_string());
                norm.sort();
            }
            if slots.insert(slot.clone(), norm).is_some() {
                return Err(CorpusError::InvalidOntology(format!(
                    "slot {slot:?} listed twice"
                )));
            }
        }
        Ok(Self { slots })
    }

    pub fn slots(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn values(&self, slot: &str) -> Option<&[String]> {
        self.slots.get(slot).map(Vec::as_slice)
    }

    pub fn contains(&self, slot: &str, value: &str) -> bool {
        self.values(slot)
            .is_some_and(|vs| vs.binary_search_by(|v| v.as_str().cmp(value)).is_ok())
    }

    /// Every (slot, value) pair in slot-then-value order.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.slots
            .iter()
            .flat_map(|(s, vs)| vs.iter().map(move |v| (s.as_str(), v.as_str())))
    }

    pub fn num_pairs(&self) -> usize {
        self.slots.values().map(Vec::len).sum()
    }

    pub fn as_map(&self) -> &BTreeMap<String, Vec<String>> {
        &self.slots
    }
}
