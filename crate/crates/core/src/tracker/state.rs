use std::collections::BTreeMap;

use crate::corpus::{DialogState, Dialogue, Turn, NONE_VALUE};

use super::TrackerError;

/// Probabilities for one slot, plus its argmax.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotPrediction {
    /// (value, probability) in lexicographic value order.
    pub values: Vec<(String, f64)>,
    pub chosen: String,
    pub chosen_probability: f64,
}

/// Per-slot value probabilities for a single turn.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TurnPrediction {
    pub slots: BTreeMap<String, SlotPrediction>,
}

impl TurnPrediction {
    /// Builds a prediction from per-slot `(value, probability)` lists. The
    /// argmax breaks ties towards the lexicographically smallest value.
    pub fn from_probabilities(slots: BTreeMap<String, Vec<(String, f64)>>) -> Self {
        let slots = slots
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(slot, mut values)| {
                values.sort_by(|a, b| a.0.cmp(&b.0));
                let (chosen, p) = values
                    .iter()
                    .fold(None::<&(String, f64)>, |best, cur| match best {
                        Some(b) if b.1 >= cur.1 => Some(b),
                        _ => Some(cur),
                    })
                    .cloned()
                    .expect("nonempty");
                (
                    slot,
                    SlotPrediction {
                        values,
                        chosen,
                        chosen_probability: p,
                    },
                )
            })
            .collect();
        Self { slots }
    }

    pub fn probability(&self, slot: &str, value: &str) -> Option<f64> {
        self.slots
            .get(slot)?
            .values
            .iter()
            .find(|(v, _)| v == value)
            .map(|(_, p)| *p)
    }

    /// Slot values the prediction asserts at this turn: argmax above
    /// `threshold` and not `none`.
    pub fn new_slot_values(&self, threshold: f64) -> BTreeMap<&str, &str> {
        self.slots
            .iter()
            .filter(|(_, p)| p.chosen_probability > threshold && p.chosen != NONE_VALUE)
            .map(|(s, p)| (s.as_str(), p.chosen.as_str()))
            .collect()
    }
}

/// Anything that can score a turn.
pub trait TurnPredictor {
    fn predict_turn(&self, turn: &Turn) -> TurnPrediction;
}

/// Overwrites each slot whose argmax clears `threshold` and is not `none`.
pub fn update_state(prev: &DialogState, pred: &TurnPrediction, threshold: f64) -> DialogState {
    pred.new_slot_values(threshold)
        .into_iter()
        .fold(prev.clone(), |s, (slot, value)| s.with(slot, value))
}

/// Whether the predicted new slot values differ from the turn label.
pub fn mispredicts_label(pred: &TurnPrediction, turn: &Turn, threshold: f64) -> bool {
    pred.new_slot_values(threshold) != turn.turn_label.informative()
}

/// Fraction of turns whose tracked state equals the gold state. The state
/// starts empty for every dialogue and is threaded through [`update_state`].
pub fn joint_goal_accuracy<P: TurnPredictor + ?Sized>(
    predictor: &P,
    dialogues: &[Dialogue],
    threshold: f64,
) -> Result<f64, TrackerError> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for d in dialogues {
        let mut state = DialogState::new();
        for turn in &d.turns {
            state = update_state(&state, &predictor.predict_turn(turn), threshold);
            correct += usize::from(state == turn.gold_state);
            total += 1;
        }
    }
    if total == 0 {
        return Err(TrackerError::EmptyInput("joint goal accuracy over zero turns"));
    }
    Ok(correct as f64 / total as f64)
}
