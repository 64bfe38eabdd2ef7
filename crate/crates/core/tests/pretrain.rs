use mlmkit::bpe::{train_bpe, TrainerConfig};
use mlmkit::model::{load_model, EncoderModel, ModelConfig};
use mlmkit::pretrain::{
    accumulate_gradients, lr_at, mask_batch, pretrain, pretrain_to_dir, MaskingPolicy, MaskingVocab, OptimizerConfig,
    PretrainConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: MaskingVocab = MaskingVocab {
    mask_id: 5,
    first_regular: 6,
    vocab_size: 1000,
};

fn windows(n: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(4..20);
            let mut w = vec![0];
            w.extend((0..len).map(|_| rng.random_range(6..1000u32)));
            w.push(2);
            w
        })
        .collect()
}

fn one_step(micro: usize) -> EncoderModel {
    let mut model = EncoderModel::init(ModelConfig::tiny(1000).without_dropout(), 7).unwrap();
    let cfg = PretrainConfig {
        optimizer: OptimizerConfig {
            peak_lr: 1e-3,
            warmup_steps: 0,
            total_steps: 10,
            ..OptimizerConfig::pretrain_base()
        },
        logical_batch: 32,
        micro_batch: micro,
        steps: 1,
        ..PretrainConfig::tiny()
    };
    pretrain(&mut model, &windows(40, 3), &VOCAB, 1, &cfg, &mut |_| Ok(()), &mut |_, _| Ok(())).unwrap();
    model
}

fn relative_distance<'a>(a: impl Iterator<Item = &'a [f32]>, b: impl Iterator<Item = &'a [f32]>) -> f64 {
    let (mut d2, mut n2) = (0.0f64, 0.0f64);
    for (x, y) in a.zip(b) {
        for (&p, &q) in x.iter().zip(y) {
            d2 += ((p - q) as f64).powi(2);
            n2 += (p as f64).powi(2);
        }
    }
    (d2 / n2).sqrt()
}

#[test]
fn micro_batching_leaves_the_step_unchanged() {
    let (a, b) = (one_step(32), one_step(8));
    let rel = relative_distance(a.params.tensors().map(|t| t.data()), b.params.tensors().map(|t| t.data()));
    assert!(rel < 1e-6, "{rel:e}");
}

#[test]
fn accumulated_gradient_matches_single_pass() {
    let model = EncoderModel::init(ModelConfig::tiny(1000).without_dropout(), 1).unwrap();
    let seqs = windows(12, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (inputs, labels) = mask_batch(&seqs, &MaskingPolicy::default(), &VOCAB, &mut rng);
    let whole = accumulate_gradients(&model, &inputs, &labels, 12, 1, 0).unwrap();
    for micro in [1, 3, 4] {
        let split = accumulate_gradients(&model, &inputs, &labels, micro, 1, 0).unwrap();
        assert_eq!(split.masked_tokens, whole.masked_tokens);
        assert!((split.loss - whole.loss).abs() < 1e-5 * whole.loss);
        let rel = relative_distance(whole.grads.iter().map(|t| t.data()), split.grads.iter().map(|t| t.data()));
        assert!(rel < 1e-5, "micro {micro}: {rel:e}");
    }
}

#[test]
fn runs_are_reproducible_and_logged() {
    let dir = tempfile::tempdir().unwrap();
    let corpus: Vec<String> = (0..30).map(|i| format!("regel {i} van de kleine test")).collect();
    let lines: Vec<&str> = corpus.iter().map(String::as_str).collect();
    let tok = train_bpe(lines.iter().copied(), &TrainerConfig { target_vocab_size: 300, ..Default::default() }).unwrap();
    let cfg = PretrainConfig {
        logical_batch: 4,
        micro_batch: 2,
        steps: 3,
        max_len: 16,
        checkpoint_every: Some(2),
        ..PretrainConfig::tiny()
    };
    let run = |out: &std::path::Path| {
        let mut m = EncoderModel::init(ModelConfig::tiny(tok.vocab_size()), 5).unwrap();
        let log = pretrain_to_dir(&mut m, &lines, &tok, &cfg, out).unwrap();
        (m, log)
    };
    let (m1, log1) = run(&dir.path().join("a"));
    let (m2, log2) = run(&dir.path().join("b"));
    assert_eq!(log1, log2);
    assert_eq!(log1.len(), 3);
    for ((_, x), (_, y)) in m1.params.iter().zip(m2.params.iter()) {
        assert_eq!(x.data(), y.data());
    }
    let csv = std::fs::read_to_string(dir.path().join("a/loss_log.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "step,lr,loss,tokens_seen");
    assert_eq!(csv.lines().count(), 4);
    assert!(dir.path().join("a/checkpoints/step-2").join("model.toml").exists());
    let last = load_model(&dir.path().join("a/checkpoints/step-3")).unwrap();
    for ((_, x), (_, y)) in last.params.iter().zip(m1.params.iter()) {
        assert_eq!(x.data(), y.data());
    }
    assert!(!dir.path().join("a/checkpoints/step-1").exists());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masking_only_touches_labeled_regular_tokens(
        seqs in prop::collection::vec(prop::collection::vec(0u32..1000, 0..40), 1..6),
        seed in any::<u64>(),
        select in 0.0f64..=1.0,
    ) {
        let policy = MaskingPolicy { select_prob: select, ..Default::default() };
        let (inputs, labels) = mask_batch(&seqs, &policy, &VOCAB, &mut ChaCha8Rng::seed_from_u64(seed));
        for ((s, inp), lab) in seqs.iter().zip(&inputs).zip(&labels) {
            prop_assert_eq!(inp.len(), s.len());
            for i in 0..s.len() {
                match lab[i] {
                    None => prop_assert_eq!(inp[i], s[i]),
                    Some(t) => {
                        prop_assert_eq!(t, s[i]);
                        prop_assert!(t >= VOCAB.first_regular);
                        prop_assert!(inp[i] == VOCAB.mask_id || inp[i] >= VOCAB.first_regular);
                    }
                }
            }
        }
    }

    #[test]
    fn schedule_is_bounded_and_peaks_after_warmup(warmup in 0u64..50, extra in 0u64..200, step in 0u64..400) {
        let c = OptimizerConfig { warmup_steps: warmup, total_steps: warmup + extra, ..OptimizerConfig::linear(1e-4, 0, 0, 1e-8) };
        let lr = lr_at(step, &c);
        prop_assert!((0.0..=c.peak_lr).contains(&lr));
        if step > 0 && step <= warmup {
            prop_assert!(lr_at(step - 1, &c) <= lr);
        }
        if step >= warmup && step < warmup + extra {
            prop_assert!(lr_at(step + 1, &c) <= lr);
        }
    }
}
