use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::{Corpus, DialogState, Dialogue, Span, Split, Turn, TurnLabel};
use crate::numerics::{check_gradients, Gradients, SeedTree};

const SMALL: TrackerConfig = TrackerConfig {
    embedding_dim: 6,
    encoder_dim: 8,
    scorer_hidden: 7,
    dropout: 0.2,
    learning_rate: 1e-2,
    batch_size: 4,
    threshold: 0.5,
    clip_norm: 5.0,
};

fn corpus() -> Corpus {
    let text = r#"{
      "ontology": {"food": ["italian", "chinese"], "area": ["north", "south"]},
      "dialogues": [
        {"id": "a", "turns": [
          {"system": "hello", "user": "i want italian food", "turn_label": [["food", "italian"]]},
          {"system": "which area ?", "user": "the north please", "turn_label": [["area", "north"]]}]},
        {"id": "b", "turns": [
          {"user": "chinese in the south", "turn_label": [["food", "chinese"], ["area", "south"]]},
          {"system": "ok", "user": "thanks", "turn_label": []}]}
      ]}"#;
    Corpus::from_json_str(text, None, Split::Train).unwrap()
}

fn model(seed: u64) -> TrackerModel<f64> {
    let c = corpus();
    let vocab = build_vocab(&c, None);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TrackerModel::new(SMALL, vocab, Arc::clone(&c.ontology), seed, &mut rng).unwrap()
}

fn pred(entries: &[(&str, &[(&str, f64)])]) -> TurnPrediction {
    TurnPrediction::from_probabilities(
        entries
            .iter()
            .map(|(s, vs)| {
                (
                    s.to_string(),
                    vs.iter().map(|(v, p)| (v.to_string(), *p)).collect(),
                )
            })
            .collect(),
    )
}

fn state(entries: &[(&str, &str)]) -> DialogState {
    entries
        .iter()
        .map(|(s, v)| (s.to_string(), v.to_string()))
        .collect()
}

#[test]
fn update_below_threshold_keeps_state() {
    let prev = state(&[("food", "italian")]);
    let p = pred(&[("food", &[("chinese", 0.4), ("none", 0.3)]), ("area", &[("north", 0.5)])]);
    assert_eq!(update_state(&prev, &p, 0.5), prev);
}

#[test]
fn update_sets_confident_value() {
    let p = pred(&[("food", &[("italian", 0.9), ("none", 0.1)])]);
    assert_eq!(update_state(&DialogState::new(), &p, 0.5), state(&[("food", "italian")]));
}

#[test]
fn update_overwrites_and_skips_none() {
    let prev = state(&[("food", "italian")]);
    let p = pred(&[
        ("food", &[("chinese", 0.8), ("italian", 0.1)]),
        ("area", &[("none", 0.9), ("north", 0.2)]),
    ]);
    let next = update_state(&prev, &p, 0.5);
    assert_eq!(next, state(&[("food", "chinese")]));
    assert_eq!(prev, state(&[("food", "italian")]));
}

#[test]
fn argmax_ties_break_lexicographically() {
    let p = pred(&[("food", &[("thai", 0.5), ("cuban", 0.5), ("none", 0.5)])]);
    assert_eq!(p.slots["food"].chosen, "cuban");
}

#[test]
fn zeroed_output_layer_gives_half_everywhere() {
    let mut m = model(1);
    m.zero_output_layer();
    let c = corpus();
    for turn in c.turns() {
        let p = m.predict_turn(turn);
        assert_eq!(p.slots.len(), 2);
        for (slot, sp) in &p.slots {
            assert!(sp.values.iter().all(|(_, q)| *q == 0.5));
            assert_eq!(&sp.chosen, &c.ontology.values(slot).unwrap()[0]);
        }
        // nothing clears the threshold, so every labeled turn is mispredicted
        assert_eq!(m.is_large_loss(turn), !turn.turn_label.is_empty());
    }
}

#[test]
fn probabilities_lie_strictly_inside_unit_interval() {
    let m = model(2);
    for turn in corpus().turns() {
        for sp in m.predict_turn(turn).slots.values() {
            assert!(sp.values.iter().all(|(_, p)| *p > 0.0 && *p < 1.0));
        }
    }
}

#[test]
fn argmax_invariant_under_positive_logit_scaling() {
    let m = model(3);
    let mut scaled = m.clone();
    scaled.scale_logits(3.7);
    for turn in corpus().turns() {
        let a = m.predict_turn(turn);
        let b = scaled.predict_turn(turn);
        for (slot, sp) in &a.slots {
            assert_eq!(sp.chosen, b.slots[slot].chosen);
        }
    }
}

#[test]
fn jga_two_turn_half() {
    struct Fixed;
    impl TurnPredictor for Fixed {
        fn predict_turn(&self, _turn: &Turn) -> TurnPrediction {
            pred(&[("food", &[("italian", 0.9)])])
        }
    }
    let c = corpus();
    let acc = joint_goal_accuracy(&Fixed, &c.dialogues[..1], 0.5).unwrap();
    assert_eq!(acc, 0.5);
}

struct Perfect;
impl TurnPredictor for Perfect {
    fn predict_turn(&self, turn: &Turn) -> TurnPrediction {
        let mut slots: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        for (s, v) in turn.turn_label.iter() {
            slots.entry(s.to_string()).or_default().push((v.to_string(), 0.99));
        }
        TurnPrediction::from_probabilities(slots)
    }
}

#[test]
fn perfect_predictor_scores_one() {
    assert_eq!(joint_goal_accuracy(&Perfect, &corpus().dialogues, 0.5).unwrap(), 1.0);
}

#[test]
fn jga_of_nothing_is_an_error() {
    assert!(matches!(
        joint_goal_accuracy(&Perfect, &[], 0.5),
        Err(TrackerError::EmptyInput(_))
    ));
    let empty = Dialogue { id: "e".into(), turns: vec![] };
    assert!(joint_goal_accuracy(&Perfect, &[empty], 0.5).is_err());
}

#[test]
fn encode_span_means_hidden_states() {
    let m = model(4);
    let c = corpus();
    let turn = &c.dialogues[0].turns[0];
    let states = m.user_states(turn).unwrap();
    assert_eq!(states.len(), 4);
    assert_eq!(m.encode_span(turn, Span::new(2, 3)).unwrap(), states[2]);
    let two = m.encode_span(turn, Span::new(1, 3)).unwrap();
    for k in 0..8 {
        assert!((two[k] - (states[1][k] + states[2][k]) / 2.0).abs() < 1e-15);
    }
    let full = m.encode_span(turn, Span::new(0, 4)).unwrap();
    for k in 0..8 {
        let mean = states.iter().map(|s| s[k]).sum::<f64>() / 4.0;
        assert!((full[k] - mean).abs() < 1e-15);
    }
    assert!(matches!(
        m.encode_span(turn, Span::new(3, 5)),
        Err(TrackerError::SpanOutOfBounds { .. })
    ));
    assert!(m.encode_span(turn, Span::new(2, 2)).is_err());
}

#[test]
fn scorer_gradients_match_finite_differences() {
    let c = corpus();
    for seed in 0..5 {
        let mut m = model(seed);
        for turn in c.turns() {
            let mut grads = Gradients::zeros_like(m.params());
            m.turn_loss_and_grads(turn, &mut grads, None).unwrap();
            let probe = m.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let mut params = m.params().clone();
            let report = check_gradients(&mut params, &grads, 15, 1e-4, &mut rng, |p| {
                let mut q = probe.clone();
                q.params_mut().load_from(p).unwrap();
                q.turn_loss(turn).unwrap()
            });
            assert!(report.max_relative_error < 1e-4, "{report:?}");
            m.params_mut().load_from(&params).unwrap();
        }
    }
}

#[test]
fn training_reduces_loss_and_zero_epochs_is_identity() {
    let c = corpus();
    let m = model(5);
    let turns: Vec<&Turn> = c.turns().collect();
    let mut rng = SeedTree::new(5).stream("train");
    let (same, metrics) = m.train(&turns, None, 0, &mut rng).unwrap();
    assert_eq!(same, m);
    assert!(metrics.is_empty());

    let before: f64 = turns.iter().map(|t| m.turn_loss(t).unwrap()).sum();
    let (trained, metrics) = m.train(&turns, Some(&c.dialogues), 30, &mut rng).unwrap();
    let after: f64 = turns.iter().map(|t| trained.turn_loss(t).unwrap()).sum();
    assert!(after < before, "{before} -> {after}");
    assert_eq!(metrics.len(), 30);
    let best = metrics
        .iter()
        .filter_map(|e| e.validation_accuracy)
        .fold(f64::MIN, f64::max);
    assert_eq!(joint_goal_accuracy(&trained, &c.dialogues, 0.5).unwrap(), best);
}

#[test]
fn training_on_nothing_is_an_error() {
    let mut rng = SeedTree::new(0).stream("x");
    assert!(matches!(
        model(0).train(&[], None, 3, &mut rng),
        Err(TrackerError::EmptyInput(_))
    ));
}

#[test]
fn fine_tune_leaves_snapshot_untouched() {
    let c = corpus();
    let m = model(6);
    let snapshot = m.clone();
    let bag: Vec<&Turn> = c.turns().collect();
    let tree = SeedTree::new(6);
    let zero = m.fine_tune(&bag, 0, 0.01, &mut tree.stream("ft")).unwrap();
    assert_eq!(zero, m);
    let a = m.fine_tune(&bag, 1, 0.01, &mut tree.stream("ft")).unwrap();
    let b = m.fine_tune(&bag, 1, 0.01, &mut tree.stream("ft")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, m);
    assert_eq!(m, snapshot);
    assert!(matches!(
        m.fine_tune(&[], 1, 0.01, &mut tree.stream("ft")),
        Err(TrackerError::EmptyInput(_))
    ));
}

#[test]
fn fine_tune_pass_budget() {
    let c = corpus();
    let m = model(7);
    let turns: Vec<&Turn> = c.turns().collect();
    let bag: Vec<&Turn> = (0..25).map(|i| turns[i % turns.len()]).collect();
    let (_, count) = m
        .fine_tune_counted(&bag, 1, 0.01, &mut SeedTree::new(7).stream("ft"))
        .unwrap();
    assert!(count.forward + count.backward <= 2 * 25);
    assert_eq!(count.forward, 25);
}

#[test]
fn checkpoint_round_trip() {
    let m = model(8);
    let mut bytes = Vec::new();
    m.save(&mut bytes).unwrap();
    let back = TrackerModel::<f64>::load(bytes.as_slice()).unwrap();
    assert_eq!(back, m);
    let mut again = Vec::new();
    back.save(&mut again).unwrap();
    assert_eq!(bytes, again);
}

#[test]
fn trained_checkpoint_resumes_identically() {
    let c = corpus();
    let turns: Vec<&Turn> = c.turns().collect();
    let (m, _) = model(6).train(&turns, None, 3, &mut SeedTree::new(6).stream("a")).unwrap();
    assert!(m.optimizer_steps() > 0);
    let mut bytes = Vec::new();
    m.save(&mut bytes).unwrap();
    let back = TrackerModel::<f64>::load(bytes.as_slice()).unwrap();
    assert_eq!(back.optimizer_steps(), m.optimizer_steps());
    let (x, _) = m.train(&turns, None, 2, &mut SeedTree::new(6).stream("b")).unwrap();
    let (y, _) = back.train(&turns, None, 2, &mut SeedTree::new(6).stream("b")).unwrap();
    assert_eq!(x, y);
}

#[test]
fn pretrained_embeddings_overwrite_rows() {
    let mut m = model(9);
    let n = m
        .load_embeddings("italian 1 2 3 4 5 6\nzzz_unknown 0 0 0 0 0 0\n")
        .unwrap();
    assert_eq!(n, 1);
    assert_eq!(
        m.phrase_embedding(&["italian".to_string()]),
        vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    );
    assert!(m.load_embeddings("italian 1 2\n").is_err());
}

#[test]
fn large_loss_flags_label_disagreement() {
    let c = corpus();
    let turns: Vec<&Turn> = c.turns().collect();
    let mut rng = SeedTree::new(10).stream("train");
    let (trained, _) = model(10).train(&turns, None, 150, &mut rng).unwrap();
    let fitted = turns.iter().filter(|t| !trained.is_large_loss(t)).count();
    assert_eq!(fitted, turns.len());
    let mut wrong = turns[0].clone();
    wrong.turn_label = TurnLabel::from_iter([("food".to_string(), "chinese".to_string())]);
    assert!(trained.is_large_loss(&wrong));
}

#[test]
fn frozen_predictions_are_deterministic_across_threads() {
    let m = model(11);
    let c = corpus();
    let turn = c.dialogues[0].turns[0].clone();
    let here = m.predict_turn(&turn);
    let there = std::thread::scope(|s| s.spawn(|| m.predict_turn(&turn)).join().unwrap());
    assert_eq!(here, there);
}
