//! Acceptance report. Every criterion prints one `PASS` or `FAIL` line on
//! stderr (outside the test harness's capture) together with the measured
//! value, its pinned tolerance and the wall time. A `FAIL` line does not fail
//! the test run; harness errors do.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rda_core::corpus::{index_sites, load_candidates, CandidateStore, Corpus, SpanGroups, Split};
use rda_core::generator::{
    candidate_distribution, featurize, reinitialize_policy, site_states, Instance, PolicyNet,
    PolicyState, StateCache,
};
use rda_core::numerics::{check_gradients, Gradients, SeedTree};
use rda_core::rewards::{bag_rewards, instance_reward, RewardRecord};
use rda_core::tracker::{build_vocab, joint_goal_accuracy, TrackerConfig, TrackerModel};
use rda_core::trainloop::{
    generator_learning_epoch, pretrain_tracker, sample_bag, GeneratorContext, RdaData, TrainConfig,
};


fn report(name: &str, pass: bool, detail: &str, elapsed: Duration) {
    emit(if pass { "PASS" } else { "FAIL" }, name, detail, elapsed);
}

fn emit(status: &str, name: &str, detail: &str, elapsed: Duration) {
    let line = format!("\n{status} {name}: {detail} [{:.1}s]\n", elapsed.as_secs_f64());
    std::io::stderr().write_all(line.as_bytes()).unwrap();
}

fn rda_bin(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_rda"))
        .arg("--quiet")
        .args(args)
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn p(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

/// Tracker size used by the learning criteria.
const DIMS: [&str; 8] = [
    "--embedding-dim", "16", "--encoder-dim", "32", "--scorer-hidden", "32", "--learning-rate", "0.005",
];

fn tracker_config() -> TrackerConfig {
    TrackerConfig {
        embedding_dim: 16,
        encoder_dim: 32,
        scorer_hidden: 32,
        learning_rate: 0.005,
        ..TrackerConfig::default()
    }
}

fn make_synthetic(dir: &Path, dialogues: usize, train_fraction: f64, seed: u64) -> PathBuf {
    let out = dir.join(format!("planted-{seed}"));
    rda_bin(&[
        "make-synthetic", "--kind", "planted",
        "--dialogues", &dialogues.to_string(),
        "--train-fraction", &train_fraction.to_string(),
        "--seed", &seed.to_string(),
        "--out", &p(&out),
    ]);
    out
}

fn load(dir: &Path) -> (RdaData, Vec<(String, String, String)>) {
    let read = |f: &str| fs::read_to_string(dir.join(f)).unwrap();
    let train = Corpus::from_json_str(&read("train.json"), None, Split::Train).unwrap();
    let onto = Some(Arc::clone(&train.ontology));
    let validation = Corpus::from_json_str(&read("validation.json"), onto.clone(), Split::Validation).unwrap();
    let test = Corpus::from_json_str(&read("test.json"), onto, Split::Test).unwrap();
    let store = load_candidates(&dir.join("candidates.tsv"), &train.ontology, &train).unwrap();
    let planted: Vec<serde_json::Value> = serde_json::from_str(&read("planted.json")).unwrap();
    let planted = planted
        .iter()
        .map(|v| {
            let s = |k: &str| v[k].as_str().unwrap().to_string();
            (s("span"), s("good"), s("bad"))
        })
        .collect();
    (RdaData { train, validation, test: Some(test), store }, planted)
}

#[test]
fn rewards_exact() {
    let t = Instant::now();
    let mut ok = true;
    ok &= bag_rewards(&[0.45, 0.55]).unwrap() == vec![-1.0, 1.0];
    ok &= bag_rewards(&[0.5, 0.6, 0.7]).unwrap() == vec![-1.0, 0.0, 1.0];
    ok &= bag_rewards(&[0.6, 0.6]).unwrap() == vec![0.0, 0.0];
    // Instance table for c = 0.5: LI doubles the magnitude, sign follows R^B.
    let table = [
        (0.7, true, 0.5),
        (0.7, false, 0.25),
        (-0.7, true, -0.5),
        (-0.7, false, -0.25),
    ];
    for (rb, li, want) in table {
        ok &= instance_reward(rb, li, 0.5).to_bits() == f64::to_bits(want);
    }
    let degenerate = RewardRecord::new(vec![0.6, 0.6], vec![vec![true, false], vec![false]], 0.5).unwrap();
    ok &= degenerate.totals().unwrap().iter().flatten().all(|r| *r == 0.0);
    let elapsed = t.elapsed();
    ok &= elapsed < Duration::from_secs(1);
    report("reward formulas", ok, "bag and instance reward tables reproduced bit-exactly, limit 1s", elapsed);
}

#[test]
fn gradients_match_finite_differences() {
    let t = Instant::now();
    let mut worst_policy = 0.0f64;
    let mut worst_tracker = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sets: Vec<Vec<PolicyState<f64>>> = (0..4)
            .map(|k| {
                let ctx: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let emb: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
                (0..2 + k % 3)
                    .map(|_| {
                        let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
                        featurize(&ctx, &emb, &c).unwrap()
                    })
                    .collect()
            })
            .collect();
        let policy = PolicyNet::<f64>::new(18, 7, &mut rng);
        let instances: Vec<Instance<'_, f64>> = sets
            .iter()
            .enumerate()
            .map(|(i, s)| Instance { states: s, chosen: i % s.len(), reward: [1.0, -0.5, 0.25, -1.0][i] })
            .collect();
        let mut grads = Gradients::zeros_like(policy.params());
        policy.reinforce_loss_and_grads(&instances, 2, &mut grads).unwrap();
        let mut params = policy.params().clone();
        let r = check_gradients(&mut params, &grads, 40, 1e-5, &mut rng, |ps| {
            let mut q = policy.clone();
            q.params_mut().load_from(ps).unwrap();
            q.reinforce_loss_and_grads(&instances, 2, &mut Gradients::zeros_like(q.params())).unwrap()
        });
        worst_policy = worst_policy.max(r.max_relative_error);

        let text = oracle::DATA;
        let corpus = Corpus::from_json_str(text, None, Split::Train).unwrap();
        let config = TrackerConfig { embedding_dim: 6, encoder_dim: 8, scorer_hidden: 7, ..TrackerConfig::default() };
        let model = TrackerModel::<f64>::new(
            config,
            build_vocab(&corpus, None),
            Arc::clone(&corpus.ontology),
            seed,
            &mut rng,
        )
        .unwrap();
        for turn in corpus.turns().take(4) {
            let mut grads = Gradients::zeros_like(model.params());
            model.turn_loss_and_grads(turn, &mut grads, None).unwrap();
            let mut params = model.params().clone();
            let r = check_gradients(&mut params, &grads, 15, 1e-4, &mut rng, |ps| {
                let mut q = model.clone();
                q.params_mut().load_from(ps).unwrap();
                q.turn_loss(turn).unwrap()
            });
            worst_tracker = worst_tracker.max(r.max_relative_error);
        }
    }
    let elapsed = t.elapsed();
    let ok = worst_policy < 1e-4 && worst_tracker < 1e-4 && elapsed < Duration::from_secs(30);
    report(
        "gradient correctness",
        ok,
        &format!("max relative error policy {worst_policy:.2e}, tracker {worst_tracker:.2e} over 5 seeds, limit 1e-4 and 30s"),
        elapsed,
    );
}

#[test]
fn distributions() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = load(&make_synthetic(dir.path(), 400, 1.0, 11));
    let mut rng = SeedTree::new(11).stream("tracker");
    let tracker = TrackerModel::<f64>::new(
        tracker_config(),
        build_vocab(&data.train, Some(&data.store)),
        Arc::clone(&data.train.ontology),
        11,
        &mut rng,
    )
    .unwrap();
    let sites = index_sites(&data.train, &data.store);
    let mut worst_sum = 0.0f64;
    let mut checked = 0;
    for k in 0..1000 {
        let policy = reinitialize_policy::<f64, _>(32, 16, 8, &mut SeedTree::new(k as u64).stream("p"));
        let site = &sites[k % sites.len()];
        let d = candidate_distribution(&policy, site, &data.train, &tracker).unwrap();
        worst_sum = worst_sum.max((d.iter().map(|x| x.1).sum::<f64>() - 1.0).abs());
        checked += 1;
    }

    // Sample frequencies on a site whose probabilities are far from uniform.
    let mut policy = reinitialize_policy::<f64, _>(32, 16, 8, &mut SeedTree::new(5).stream("p"));
    for tensor in policy.params_mut().iter_mut() {
        tensor.data_mut().iter_mut().for_each(|x| *x *= 6.0);
    }
    let site = sites.iter().max_by_key(|s| s.candidates.len()).unwrap();
    let states = site_states(&tracker, &data.train, site).unwrap();
    let probs = policy.distribution(&states).unwrap();
    let mut counts = vec![0usize; probs.len()];
    let mut draw = SeedTree::new(5).stream("draws");
    for _ in 0..10_000 {
        counts[policy.sample(&states, &mut draw).unwrap().0] += 1;
    }
    let worst_freq = counts
        .iter()
        .zip(&probs)
        .map(|(c, q)| (*c as f64 / 10_000.0 - q).abs())
        .fold(0.0, f64::max);

    // Span-first sampling: a 1-site group against a 99-site group.
    let mut text = String::from(r#"{"ontology": {"food": ["italian"]}, "dialogues": ["#);
    for i in 0..100 {
        let word = if i == 0 { "alpha" } else { "beta" };
        let sep = if i < 99 { "," } else { "" };
        text.push_str(&format!(r#"{{"id": "d{i}", "turns": [{{"user": "{word} food", "turn_label": []}}]}}{sep}"#));
    }
    text.push_str("]}");
    let corpus = Corpus::from_json_str(&text, None, Split::Train).unwrap();
    let store = CandidateStore::from_tsv("alpha\tgamma\nbeta\tdelta\n", &corpus.ontology, &corpus).unwrap();
    let skewed = index_sites(&corpus, &store);
    let groups = SpanGroups::new(&skewed);
    let alpha = skewed.iter().position(|s| s.span_text == "alpha").unwrap();
    let bag = sample_bag(&groups, 10_000, &mut SeedTree::new(3).stream("bags")).unwrap();
    let share = bag.sites.iter().filter(|&&s| s == alpha).count() as f64 / 10_000.0;

    let elapsed = t.elapsed();
    let ok = checked == 1000 && worst_sum <= 1e-9 && worst_freq <= 0.02 && (share - 0.5).abs() <= 0.02;
    report(
        "distributions",
        ok,
        &format!(
            "sum error {worst_sum:.1e} on 1000 sites (limit 1e-9); frequency error {worst_freq:.4} at 10000 draws \
             over {} candidates (limit 0.02); 1-site group share {share:.4} (limit 0.50±0.02)",
            probs.len()
        ),
        elapsed,
    );
}

/// Planted fixture: 800 dialogues with 37.5% of the training split kept.
const PLANTED_DIALOGUES: usize = 800;
const PLANTED_TRAIN_FRACTION: f64 = 0.375;

#[test]
fn planted_policy_prefers_label_preserving_candidates() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut gaps = Vec::new();
    let mut good_is_max = Vec::new();
    let mut good_over_bad = Vec::new();
    for seed in 0..10u64 {
        let (data, planted) = load(&make_synthetic(dir.path(), PLANTED_DIALOGUES, PLANTED_TRAIN_FRACTION, seed));
        let config = TrainConfig {
            seed,
            generator_epochs: 200,
            bag_resamples: 2,
            bag_size: 25,
            tracker: tracker_config(),
            ..TrainConfig::default()
        };
        let (tracker, _) = pretrain_tracker::<f64>(&data, &config).unwrap();
        let sites = index_sites(&data.train, &data.store);
        let tree = SeedTree::new(seed).child("epoch-1");
        let validation = data
            .validation
            .subsample(config.validation_ratio, &mut tree.stream("validation-subsample"))
            .dialogues;
        let cache = StateCache::new(&tracker, &data.train, &sites);
        let mut ctx = GeneratorContext::new(&tracker, cache, validation).unwrap();
        let fresh = reinitialize_policy(
            tracker.encoder_dim(),
            tracker.embedding_dim(),
            config.policy_hidden,
            &mut SeedTree::new(seed).stream("policy-init"),
        );
        let (policy, _) = generator_learning_epoch(&mut ctx, fresh, &config, 1, &tree).unwrap();

        let (mut good, mut bad, mut max_hits, mut beats) = (0.0, 0.0, 0usize, 0usize);
        for site in &sites {
            let (_, g, b) = planted.iter().find(|x| x.0 == site.span_text).expect("planted span");
            let d = candidate_distribution(&policy, site, &data.train, &tracker).unwrap();
            let top = d.iter().map(|x| x.1).fold(f64::MIN, f64::max);
            let prob = |t: &str| d.iter().find(|x| x.0.text == t).map_or(0.0, |x| x.1);
            beats += usize::from(prob(g) > prob(b));
            for (c, q) in &d {
                if &c.text == g {
                    good += q;
                    max_hits += usize::from(*q == top);
                } else if &c.text == b {
                    bad += q;
                }
            }
        }
        let n = sites.len() as f64;
        gaps.push((good - bad) / n);
        good_is_max.push(max_hits as f64 / n);
        good_over_bad.push(beats as f64 / n);
    }
    let elapsed = t.elapsed();
    let hits = gaps.iter().filter(|g| **g >= 0.1).count();
    let fmt = |v: &[f64]| v.iter().map(|g| format!("{g:+.3}")).collect::<Vec<_>>().join(" ");
    report(
        "planted policy learning",
        hits >= 8 && elapsed < Duration::from_secs(300),
        &format!(
            "good minus bad mean probability >= 0.1 on {hits}/10 seeds (need 8, limit 300s); gaps {}",
            fmt(&gaps)
        ),
        elapsed,
    );
    let flagged = good_is_max.iter().filter(|f| **f >= 0.8).count();
    report(
        "inspect-policy planted oracle",
        flagged == 10,
        &format!(
            "share of sites with the good candidate flagged max (need 0.80): {}; share ranking good above bad: {}",
            fmt(&good_is_max),
            fmt(&good_over_bad)
        ),
        elapsed,
    );
}

/// Scarce-data comparison: 10% of the training split.
const E2E_DIALOGUES: usize = 1000;
const E2E_TRAIN_FRACTION: f64 = 0.1;

fn train_rda_cli(data: &Path, pretrained: &Path, out: &Path, seed: u64, da_only: bool) -> f64 {
    let mut args: Vec<String> = [
        "train-rda", "--train", &p(&data.join("train.json")),
        "--validation", &p(&data.join("validation.json")),
        "--test", &p(&data.join("test.json")),
        "--candidates", &p(&data.join("candidates.tsv")),
        "--pretrained", &p(pretrained),
        "--out", &p(out),
        "--alternate-epochs", "3", "--generator-epochs", "100",
        "--seed", &seed.to_string(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    args.extend(DIMS.iter().map(|s| s.to_string()));
    if da_only {
        args.push("--da-only".into());
    }
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let summary: serde_json::Value = serde_json::from_slice(&rda_bin(&refs)).unwrap();
    summary["best_test_accuracy"].as_f64().unwrap()
}

#[test]
fn rda_beats_uniform_augmentation() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut diffs = Vec::new();
    for seed in 0..10u64 {
        let data = make_synthetic(dir.path(), E2E_DIALOGUES, E2E_TRAIN_FRACTION, seed);
        let trk = dir.path().join(format!("tracker-{seed}"));
        let mut args: Vec<String> = [
            "train-tracker", "--train", &p(&data.join("train.json")),
            "--validation", &p(&data.join("validation.json")),
            "--candidates", &p(&data.join("candidates.tsv")),
            "--out", &p(&trk), "--seed", &seed.to_string(),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        args.extend(DIMS.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        rda_bin(&refs);
        let pre = trk.join("tracker.bin");
        let rda = train_rda_cli(&data, &pre, &dir.path().join(format!("rda-{seed}")), seed, false);
        let da = train_rda_cli(&data, &pre, &dir.path().join(format!("da-{seed}")), seed, true);
        diffs.push(rda - da);
    }
    let elapsed = t.elapsed();
    let wins = diffs.iter().filter(|d| **d > 0.0).count();
    let worst = diffs.iter().copied().fold(f64::INFINITY, f64::min);
    let ok = wins >= 7 && worst >= -0.01 && elapsed < Duration::from_secs(900);
    report(
        "end-to-end RDA over DA",
        ok,
        &format!(
            "RDA wins {wins}/10 paired seeds on held-out joint goal accuracy (need 7), worst loss {:.3} (limit 0.010, 900s); diffs {}",
            0.0f64.max(-worst),
            diffs.iter().map(|d| format!("{d:+.3}")).collect::<Vec<_>>().join(" ")
        ),
        elapsed,
    );
}

#[test]
fn tracker_oracle_equivalence() {
    let t = Instant::now();
    let corpus = Corpus::from_json_str(oracle::DATA, None, Split::Test).unwrap();
    let script = oracle::script();
    let (hits, total) = oracle::replay(&corpus, &script);
    let jga = joint_goal_accuracy(&oracle::Scripted(script), &corpus.dialogues, 0.5).unwrap();
    let ok = corpus.dialogues.len() == 5 && jga == hits as f64 / total as f64;
    report(
        "tracker oracle equivalence",
        ok,
        &format!("joint goal accuracy {jga} vs replay {hits}/{total}, exact equality"),
        t.elapsed(),
    );
}

#[test]
fn cli_runs_are_byte_identical() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = make_synthetic(dir.path(), 120, 1.0, 21);
    let run = |name: &str| {
        let root = dir.path().join(name);
        let trk = root.join("tracker");
        let mut args: Vec<String> = [
            "train-tracker", "--train", &p(&data.join("train.json")),
            "--validation", &p(&data.join("validation.json")),
            "--test", &p(&data.join("test.json")),
            "--candidates", &p(&data.join("candidates.tsv")),
            "--out", &p(&trk), "--seed", "21", "--epochs", "5",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        args.extend(DIMS.iter().map(|s| s.to_string()));
        rda_bin(&args.iter().map(String::as_str).collect::<Vec<_>>());
        let rda = root.join("rda");
        let mut args: Vec<String> = [
            "train-rda", "--train", &p(&data.join("train.json")),
            "--validation", &p(&data.join("validation.json")),
            "--test", &p(&data.join("test.json")),
            "--candidates", &p(&data.join("candidates.tsv")),
            "--pretrained", &p(&trk.join("tracker.bin")),
            "--out", &p(&rda), "--seed", "21",
            "--alternate-epochs", "2", "--generator-epochs", "20",
            "--augmentation-multiplier", "1", "--retrain-epochs", "1",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        args.extend(DIMS.iter().map(|s| s.to_string()));
        rda_bin(&args.iter().map(String::as_str).collect::<Vec<_>>());
        root
    };
    let a = run("a");
    let b = run("b");
    let files = [
        "tracker/metrics.jsonl", "tracker/tracker.bin", "rda/metrics.jsonl", "rda/rewards.jsonl",
        "rda/best.bin", "rda/checkpoints/epoch_0.bin", "rda/checkpoints/epoch_1.bin",
        "rda/checkpoints/epoch_2.bin", "rda/checkpoints/policy_1.bin", "rda/checkpoints/policy_2.bin",
    ];
    let same = files
        .iter()
        .filter(|f| fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap())
        .count();
    report(
        "determinism",
        same == files.len(),
        &format!("{same}/{} metrics and checkpoint files byte-identical across repeated CLI runs", files.len()),
        t.elapsed(),
    );
}

#[test]
fn paper_scale_tables() {
    // The published tables need the full corpora, pre-trained vectors and
    // the original tracker; they are covered by the criteria above instead.
    emit(
        "N/A",
        "paper-scale tables",
        "not reproducible at desk scale; replaced by the property criteria in this report",
        Duration::ZERO,
    );
}
