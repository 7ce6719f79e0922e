//! Fixture corpora with known structure.
//!
//! `Rule` corpora mention ontology values verbatim, so a tracker can reach
//! near-perfect accuracy. `Planted` corpora mention every value through one of
//! three surface forms: two interchangeable forms, and a third form that is
//! never itself replaced. The candidate list maps each interchangeable form to
//! its twin (label-preserving) and to the third form of another value of the
//! same slot (label-flipping, since paraphrases keep the turn label).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, Ontology};
use crate::numerics::SeedTree;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Rule,
    Planted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub dialogues: usize,
    /// Fraction of dialogues in the train / validation split; the rest is test.
    pub train_share: f64,
    pub validation_share: f64,
    /// Fraction of the train split actually kept.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::Planted,
            dialogues: 300,
            train_share: 0.6,
            validation_share: 0.2,
            train_fraction: 1.0,
            seed: 0,
        }
    }
}

/// Generated splits as dataset JSON, plus the ontology and candidate TSV.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub ontology: BTreeMap<String, Vec<String>>,
    pub train: serde_json::Value,
    pub validation: serde_json::Value,
    pub test: serde_json::Value,
    pub candidates: String,
    /// `(span, label-preserving candidate, label-flipping candidate)`; empty
    /// for rule corpora.
    pub planted: Vec<(String, String, String)>,
}

struct SlotSpec {
    slot: &'static str,
    values: &'static [(&'static str, [&'static str; 3])],
    templates: &'static [&'static str],
    question: &'static str,
}

const SLOTS: &[SlotSpec] = &[
    SlotSpec {
        slot: "food",
        values: &[
            ("italian", ["pasta", "trattoria", "pizzeria"]),
            ("chinese", ["dim sum", "noodle bar", "wok"]),
            ("indian", ["curry", "tandoori", "masala"]),
            ("cuban", ["havana", "mojito", "caribbean"]),
        ],
        templates: &["i want {} food", "find me a {} restaurant", "how about {}"],
        question: "what kind of food would you like ?",
    },
    SlotSpec {
        slot: "area",
        values: &[
            ("north", ["uptown", "northside", "upper district"]),
            ("south", ["downtown", "southside", "lower district"]),
            ("east", ["eastside", "riverside", "harbor"]),
            ("west", ["westside", "hillside", "old town"]),
        ],
        templates: &["somewhere {} please", "it should be {}", "in the {} part of town"],
        question: "which part of town ?",
    },
    SlotSpec {
        slot: "price",
        values: &[
            ("cheap", ["inexpensive", "budget", "low cost"]),
            ("expensive", ["pricey", "upscale", "high end"]),
            ("moderate", ["mid range", "reasonable", "fair priced"]),
        ],
        templates: &["something {}", "i would like {} prices", "make it {}"],
        question: "what price range do you want ?",
    },
];

const FILLERS: &[&str] = &["thank you", "that is all", "okay great", "sounds good"];
const OPENINGS: &[&str] = &["hello , how can i help ?", "welcome , what are you looking for ?"];

pub fn ontology_map() -> BTreeMap<String, Vec<String>> {
    SLOTS
        .iter()
        .map(|s| {
            (
                s.slot.to_string(),
                s.values.iter().map(|(v, _)| v.to_string()).collect(),
            )
        })
        .collect()
}

pub fn ontology() -> Result<Ontology, CorpusError> {
    Ontology::new(ontology_map())
}

/// Planted mentions use the third form half of the time.
fn surface(kind: SyntheticKind, value: &'static str, forms: &[&'static str; 3], rng: &mut impl Rng) -> &'static str {
    match kind {
        SyntheticKind::Rule => value,
        SyntheticKind::Planted => forms[[0, 1, 2, 2][rng.gen_range(0..4)]],
    }
}

fn dialogue(kind: SyntheticKind, id: usize, rng: &mut impl Rng) -> serde_json::Value {
    let mut slots: Vec<&SlotSpec> = SLOTS.iter().collect();
    slots.shuffle(rng);
    let mentioned = rng.gen_range(1..=slots.len());
    let mut turns = Vec::new();
    let mut system = OPENINGS[rng.gen_range(0..OPENINGS.len())].to_string();
    let mut i = 0;
    while i < mentioned {
        // Occasionally two slots share one utterance.
        let take = if i + 1 < mentioned && rng.gen_bool(0.3) { 2 } else { 1 };
        let mut parts = Vec::new();
        let mut label = Vec::new();
        for spec in &slots[i..i + take] {
            let (value, forms) = spec.values[rng.gen_range(0..spec.values.len())];
            let template = spec.templates[rng.gen_range(0..spec.templates.len())];
            parts.push(template.replace("{}", surface(kind, value, &forms, rng)));
            label.push((spec.slot, value));
        }
        turns.push(serde_json::json!({
            "system": system,
            "user": parts.join(" and "),
            "turn_label": label,
        }));
        i += take;
        system = slots.get(i).map_or("anything else ?", |s| s.question).to_string();
    }
    if rng.gen_bool(0.5) {
        turns.push(serde_json::json!({
            "system": system,
            "user": FILLERS[rng.gen_range(0..FILLERS.len())],
            "turn_label": [],
        }));
    }
    serde_json::json!({ "id": format!("d{id:04}"), "turns": turns })
}

/// Label-preserving and label-flipping candidates for the two
/// interchangeable forms of every value.
fn planted_pairs() -> Vec<(String, String, String)> {
    let mut out = Vec::new();
    for spec in SLOTS {
        let n = spec.values.len();
        for (vi, (_, forms)) in spec.values.iter().enumerate() {
            let other = spec.values[(vi + 1) % n].1;
            for fi in 0..2 {
                out.push((
                    forms[fi].to_string(),
                    forms[1 - fi].to_string(),
                    other[2].to_string(),
                ));
            }
        }
    }
    out
}

pub fn generate(spec: &SyntheticSpec) -> SyntheticCorpus {
    let tree = SeedTree::new(spec.seed);
    let mut rng = tree.stream("dialogues");
    let all: Vec<serde_json::Value> = (0..spec.dialogues).map(|i| dialogue(spec.kind, i, &mut rng)).collect();
    let n_train = (spec.dialogues as f64 * spec.train_share).round() as usize;
    let n_val = (spec.dialogues as f64 * spec.validation_share).round() as usize;
    let n_val = n_val.min(spec.dialogues - n_train.min(spec.dialogues));
    let n_train = n_train.min(spec.dialogues);
    let kept = ((n_train as f64 * spec.train_fraction).round() as usize).clamp(n_train.min(1), n_train);
    let ontology = ontology_map();
    let wrap = |ds: &[serde_json::Value]| serde_json::json!({ "ontology": ontology, "dialogues": ds });

    let (planted, mut candidates) = match spec.kind {
        SyntheticKind::Planted => (planted_pairs(), String::new()),
        SyntheticKind::Rule => (Vec::new(), String::new()),
    };
    candidates.push_str("# span\tcandidate\n");
    for (span, good, bad) in &planted {
        let _ = writeln!(candidates, "{span}\t{good}");
        let _ = writeln!(candidates, "{span}\t{bad}");
    }
    if spec.kind == SyntheticKind::Rule {
        for (a, b) in [("i want", "i would like"), ("please", "if possible"), ("find me", "look for")] {
            let _ = writeln!(candidates, "{a}\t{b}");
        }
    }
    SyntheticCorpus {
        train: wrap(&all[..kept]),
        validation: wrap(&all[n_train..n_train + n_val]),
        test: wrap(&all[n_train + n_val..]),
        ontology,
        candidates,
        planted,
    }
}
