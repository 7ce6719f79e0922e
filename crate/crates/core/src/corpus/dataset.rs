use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ontology::{Ontology, NONE_VALUE};
use super::tokenize::{detokenize, normalize, tokenize};
use super::CorpusError;

/// Slot → value assignment. An absent slot means `none`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DialogState(BTreeMap<String, String>);

impl DialogState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, slot: &str) -> Option<&str> {
        self.0.get(slot).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(s, v)| (s.as_str(), v.as_str()))
    }

    /// Returns the state with `slot` overwritten; `none` leaves the slot untouched.
    pub fn with(&self, slot: &str, value: &str) -> Self {
        let mut next = self.clone();
        if value != NONE_VALUE {
            next.0.insert(slot.to_string(), value.to_string());
        }
        next
    }

    /// Overwrites every slot named in `label`, skipping `none`.
    pub fn updated(&self, label: &TurnLabel) -> Self {
        let mut next = self.clone();
        for (slot, value) in label.iter() {
            if value != NONE_VALUE {
                next.0.insert(slot.to_string(), value.to_string());
            }
        }
        next
    }
}

impl FromIterator<(String, String)> for DialogState {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        Self(
            iter.into_iter()
                .filter(|(_, v)| v != NONE_VALUE)
                .collect(),
        )
    }
}

/// Slot-value pairs introduced at one turn; at most one value per slot.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TurnLabel(BTreeMap<String, String>);

impl TurnLabel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, slot: &str) -> Option<&str> {
        self.0.get(slot).map(String::as_str)
    }

    pub fn insert(&mut self, slot: impl Into<String>, value: impl Into<String>) -> Option<String> {
        self.0.insert(slot.into(), value.into())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(s, v)| (s.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The label with `none` entries dropped.
    pub fn informative(&self) -> BTreeMap<&str, &str> {
        self.iter().filter(|(_, v)| *v != NONE_VALUE).collect()
    }
}

impl FromIterator<(String, String)> for TurnLabel {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Turn {
    pub system: Vec<String>,
    pub user: Vec<String>,
    pub turn_label: TurnLabel,
    pub gold_state: DialogState,
}

impl Turn {
    pub fn user_text(&self) -> String {
        detokenize(&self.user)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    /// Whether every gold state equals the previous one updated with the turn label.
    pub fn replay_holds(&self) -> bool {
        let mut state = DialogState::new();
        self.turns.iter().all(|t| {
            state = state.updated(&t.turn_label);
            state == t.gold_state
        })
    }

    /// Copy with turn `index` replaced and every later gold state replayed.
    pub fn with_replaced_turn(&self, index: usize, turn: Turn) -> Dialogue {
        let mut out = self.clone();
        out.turns[index] = turn;
        let mut state = if index == 0 {
            DialogState::new()
        } else {
            out.turns[index - 1].gold_state.clone()
        };
        for t in &mut out.turns[index..] {
            state = state.updated(&t.turn_label);
            t.gold_state = state.clone();
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

/// One split of a labeled dialog dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub split: Split,
    pub ontology: Arc<Ontology>,
    pub dialogues: Vec<Dialogue>,
}

impl Corpus {
    pub fn turns(&self) -> impl Iterator<Item = &Turn> {
        self.dialogues.iter().flat_map(|d| d.turns.iter())
    }

    pub fn num_turns(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.num_turns() == 0
    }

    /// Uniform subsample of whole dialogues without replacement, keeping
    /// at least one dialogue. Original order is preserved.
    pub fn subsample<R: Rng + ?Sized>(&self, ratio: f64, rng: &mut R) -> Corpus {
        let n = self.dialogues.len();
        let k = ((n as f64 * ratio).round() as usize).clamp(n.min(1), n);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let mut keep = idx[..k].to_vec();
        keep.sort_unstable();
        Corpus {
            split: self.split,
            ontology: Arc::clone(&self.ontology),
            dialogues: keep.into_iter().map(|i| self.dialogues[i].clone()).collect(),
        }
    }

    pub fn from_json_str(
        text: &str,
        ontology: Option<Arc<Ontology>>,
        split: Split,
    ) -> Result<Corpus, CorpusError> {
        let raw: RawDataset = serde_json::from_str(text).map_err(|e| CorpusError::Parse {
            path: String::new(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let ontology = match (ontology, raw.ontology) {
            (Some(o), _) => o,
            (None, Some(raw_o)) => Arc::new(Ontology::new(raw_o)?),
            (None, None) => return Err(CorpusError::MissingOntology),
        };
        let dialogues = raw
            .dialogues
            .into_iter()
            .map(|d| build_dialogue(d, &ontology))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Corpus {
            split,
            ontology,
            dialogues,
        })
    }

    /// Dataset JSON for this split, embedding the ontology.
    pub fn to_json(&self) -> serde_json::Value {
        let raw = RawDataset {
            ontology: Some(self.ontology.as_map().clone()),
            dialogues: self.dialogues.iter().map(raw_dialogue).collect(),
        };
        serde_json::to_value(raw).expect("dataset serializes")
    }
}

pub(crate) fn raw_dialogue(d: &Dialogue) -> RawDialogue {
    RawDialogue {
        id: d.id.clone(),
        turns: d
            .turns
            .iter()
            .map(|t| RawTurn {
                system: detokenize(&t.system),
                user: detokenize(&t.user),
                turn_label: t
                    .turn_label
                    .iter()
                    .map(|(s, v)| (s.to_string(), v.to_string()))
                    .collect(),
            })
            .collect(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawDataset {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ontology: Option<BTreeMap<String, Vec<String>>>,
    pub dialogues: Vec<RawDialogue>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawDialogue {
    pub id: String,
    pub turns: Vec<RawTurn>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawTurn {
    #[serde(default)]
    pub system: String,
    pub user: String,
    #[serde(default)]
    pub turn_label: Vec<(String, String)>,
}

fn build_dialogue(raw: RawDialogue, ontology: &Ontology) -> Result<Dialogue, CorpusError> {
    let mut state = DialogState::new();
    let mut turns = Vec::with_capacity(raw.turns.len());
    for (t, rt) in raw.turns.into_iter().enumerate() {
        let mut label = TurnLabel::new();
        for (slot, value) in rt.turn_label {
            let (slot, value) = (normalize(&slot), normalize(&value));
            if ontology.values(&slot).is_none() {
                return Err(CorpusError::UnknownSlot {
                    dialogue: raw.id.clone(),
                    turn: t,
                    slot,
                });
            }
            if !ontology.contains(&slot, &value) {
                return Err(CorpusError::UnknownValue {
                    dialogue: raw.id.clone(),
                    turn: t,
                    slot,
                    value,
                });
            }
            if let Some(prev) = label.insert(slot.clone(), value.clone()) {
                return Err(CorpusError::Invariant {
                    dialogue: raw.id.clone(),
                    turn: t,
                    message: format!("slot {slot:?} labeled twice ({prev:?}, {value:?})"),
                });
            }
        }
        state = state.updated(&label);
        turns.push(Turn {
            system: tokenize(&rt.system),
            user: tokenize(&rt.user),
            turn_label: label,
            gold_state: state.clone(),
        });
    }
    Ok(Dialogue { id: raw.id, turns })
}

fn read_to_string(path: &Path) -> Result<String, CorpusError> {
    std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads an ontology from either a bare `{slot: [values]}` map or a dataset
/// file carrying an `"ontology"` key.
pub fn load_ontology(path: &Path) -> Result<Ontology, CorpusError> {
    let text = read_to_string(path)?;
    let locate = |e: serde_json::Error| CorpusError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(locate)?;
    let map = match value.get("ontology") {
        Some(inner) if value.get("dialogues").is_some() => inner.clone(),
        _ => value,
    };
    let raw: BTreeMap<String, Vec<String>> = serde_json::from_value(map).map_err(locate)?;
    Ontology::new(raw)
}

/// Loads one dataset split. An explicit ontology file takes precedence over
/// the ontology embedded in the dataset.
pub fn load_dataset(
    path: &Path,
    ontology_path: Option<&Path>,
    split: Split,
) -> Result<Corpus, CorpusError> {
    let ontology = ontology_path.map(load_ontology).transpose()?.map(Arc::new);
    let text = read_to_string(path)?;
    Corpus::from_json_str(&text, ontology, split).map_err(|e| match e {
        CorpusError::Parse {
            line,
            column,
            message,
            ..
        } => CorpusError::Parse {
            path: path.display().to_string(),
            line,
            column,
            message,
        },
        other => other,
    })
}
