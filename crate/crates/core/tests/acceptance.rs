//! Acceptance suite: one line per criterion, non-zero exit if any fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::oracles::{auc_pairs, bpe_merges, masked_occurrences, span_prf};
use common::{diedat_fixture, mlm_problem, overfit_corpus, tagging_task, SAMPLE_LINES};
use mlmkit::autodiff::{grad_check_with, GradCheckOptions, Precision};
use mlmkit::bpe::{pretokenize, train_bpe, SpecialRole, TokenizerModel, TrainerConfig};
use mlmkit::data::{build_diedat, ZeroR, DIEDAT_WORDS, MASK_SLOT};
use mlmkit::fairness::{dpr, eo_diff, FairnessRecord};
use mlmkit::finetune::{
    learning_curve, tagged_examples, Duration, FinetuneSpec, LearningCurveSpec, SelectionMetric, TaskDataset, TaskKind,
    Warmup,
};
use mlmkit::metrics::{accuracy_ci, roc, span_f1_conll};
use mlmkit::model::{count_parameters, EncoderModel, ModelConfig};
use mlmkit::pretrain::{
    mask_batch, masked_accuracy, masking_vocab, pack_corpus, pretrain, MaskingPolicy, MaskingVocab, OptimizerConfig,
    PretrainConfig,
};
use mlmkit::zeroshot::{eval_zeroshot, MlmScorer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one criterion: whether it held and what was measured.
struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 12] = [
        ("CI reproduction", ci_reproduction),
        ("parameter count", parameter_count),
        ("gradient correctness", gradient_correctness),
        ("accumulation equivalence", accumulation_equivalence),
        ("masking statistics", masking_statistics),
        ("overfit sanity", overfit_sanity),
        ("die/dat construction oracle", diedat_oracle),
        ("span-F1 oracle", span_f1_oracle),
        ("fairness metric oracles", fairness_oracles),
        ("ZeroR", zeror_rate),
        ("learning-curve harness", learning_curve_harness),
        ("tokenizer properties", tokenizer_properties),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!v.pass);
        println!(
            "criterion {:>2} {:<28} {}  {} [{:.1}s]",
            i + 1,
            name,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ci_reproduction() -> Verdict {
    let ci = accuracy_ci(2116, 2224).unwrap();
    let ok = (ci.lower - 0.9425).abs() <= 1e-4 && (ci.upper - 0.9604).abs() <= 1e-4;
    verdict(ok, format!("acc {:.5} interval ({:.5}, {:.5})", ci.accuracy, ci.lower, ci.upper))
}

fn parameter_count() -> Verdict {
    let cfg = ModelConfig::base();
    let counted = count_parameters(&cfg);
    let registered = EncoderModel::init(cfg, 0).unwrap().num_parameters();
    let ok = (115_500_000..=118_500_000).contains(&counted) && counted == registered;
    verdict(ok, format!("counted {counted}, registered {registered}"))
}

fn gradient_correctness() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..5 {
        let (f, inputs) = mlm_problem(seed);
        let opts = GradCheckOptions {
            step: 1e-3,
            max_coords_per_input: Some(8),
            analytic_precision: Precision::F32,
            numeric_precision: Precision::F64,
            seed,
        };
        let r = grad_check_with(&f, &inputs, &opts).unwrap();
        worst = worst.max(r.max_rel_error);
        checked += r.coords_checked;
    }
    verdict(worst < 1e-3, format!("max rel error {worst:.2e} over {checked} coordinates, 5 seeds"))
}

fn accumulation_equivalence() -> Verdict {
    const VOCAB: MaskingVocab = MaskingVocab {
        mask_id: 5,
        first_regular: 6,
        vocab_size: 1000,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let windows: Vec<Vec<u32>> = (0..32)
        .map(|_| {
            let len = rng.random_range(4..30);
            std::iter::once(0)
                .chain((0..len).map(|_| rng.random_range(6..1000u32)))
                .chain(std::iter::once(2))
                .collect()
        })
        .collect();
    let run = |micro: usize| {
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
            seed: 11,
            ..PretrainConfig::tiny()
        };
        pretrain(&mut model, &windows, &VOCAB, 1, &cfg, &mut |_| Ok(()), &mut |_, _| Ok(())).unwrap();
        model
    };
    let (a, b) = (run(32), run(8));
    let (mut d2, mut n2) = (0.0f64, 0.0f64);
    for (x, y) in a.params.tensors().zip(b.params.tensors()) {
        for (&p, &q) in x.data().iter().zip(y.data()) {
            d2 += ((p - q) as f64).powi(2);
            n2 += (p as f64).powi(2);
        }
    }
    let rel = (d2 / n2).sqrt();
    verdict(rel < 1e-6, format!("‖θ₁ − θ₄ₓ₈‖ / ‖θ₁‖ = {rel:.2e}"))
}

fn masking_statistics() -> Verdict {
    let vocab = MaskingVocab {
        mask_id: 5,
        first_regular: 6,
        vocab_size: 50_000,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seqs: Vec<Vec<u32>> = (0..1000)
        .map(|_| (0..1100).map(|_| rng.random_range(6..50_000u32)).collect())
        .collect();
    let (inputs, labels) = mask_batch(&seqs, &MaskingPolicy::default(), &vocab, &mut rng);
    let (mut selected, mut masked, mut random, mut kept) = (0usize, 0usize, 0usize, 0usize);
    let positions = seqs.len() * 1100;
    for ((s, inp), lab) in seqs.iter().zip(&inputs).zip(&labels) {
        for i in 0..s.len() {
            if lab[i].is_none() {
                continue;
            }
            selected += 1;
            if inp[i] == vocab.mask_id {
                masked += 1;
            } else if inp[i] == s[i] {
                kept += 1;
            } else {
                random += 1;
            }
        }
    }
    let frac = selected as f64 / positions as f64;
    let split = [masked, random, kept].map(|c| c as f64 / selected as f64);
    let ok = (frac - 0.15).abs() <= 0.005
        && (split[0] - 0.8).abs() <= 0.01
        && (split[1] - 0.1).abs() <= 0.01
        && (split[2] - 0.1).abs() <= 0.01;
    verdict(
        ok,
        format!(
            "{positions} positions, selected {frac:.4}, split {:.4}/{:.4}/{:.4}",
            split[0], split[1], split[2]
        ),
    )
}

fn overfit_sanity() -> Verdict {
    let corpus = overfit_corpus();
    let lines: Vec<&str> = corpus.iter().map(String::as_str).collect();
    let tok = train_bpe(
        lines.iter().copied(),
        &TrainerConfig {
            target_vocab_size: 320,
            ..Default::default()
        },
    )
    .unwrap();
    let cfg = PretrainConfig {
        max_len: 32,
        logical_batch: 16,
        micro_batch: 16,
        steps: 2000,
        checkpoint_every: Some(250),
        ..PretrainConfig::tiny()
    };
    let windows = pack_corpus(lines.iter().copied(), &tok, cfg.max_len).unwrap();
    let vocab = masking_vocab(&tok).unwrap();
    let pad = tok.require_special(SpecialRole::Pad).unwrap();
    let eval_windows: Vec<Vec<u32>> = windows.iter().cycle().take(windows.len() * 10).cloned().collect();
    let policy = MaskingPolicy::default();
    let mut model = EncoderModel::init(ModelConfig::tiny(tok.vocab_size()), 0).unwrap();
    let mut reached: Option<u64> = None;
    let mut last = 0.0;
    pretrain(&mut model, &windows, &vocab, pad, &cfg, &mut |_| Ok(()), &mut |step, m| {
        last = masked_accuracy(m, &eval_windows, &vocab, pad, &policy, 99)?;
        if last >= 0.95 && reached.is_none() {
            reached = Some(step);
        }
        Ok(())
    })
    .unwrap();
    let examples = build_diedat(&lines, lines.len(), 0, &DIEDAT_WORDS).unwrap().train;
    let report = eval_zeroshot(
        &MlmScorer {
            model: &model,
            tokenizer: &tok,
        },
        &examples,
    )
    .unwrap();
    let zs = report.accuracy.accuracy;
    let ok = reached.is_some() && zs == 1.0;
    verdict(
        ok,
        format!(
            "masked top-1 {last:.4} after 2000 steps (>= 0.95 first at step {}), zero-shot {}/{}",
            reached.map_or("never".to_string(), |s| s.to_string()),
            report.correct,
            examples.len()
        ),
    )
}

fn diedat_oracle() -> Verdict {
    let lines = diedat_fixture(1000, 17);
    let d = build_diedat(&lines, 700, 300, &DIEDAT_WORDS).unwrap();
    let oracle = |range: std::ops::Range<usize>| -> Vec<(String, String)> {
        range
            .flat_map(|i| masked_occurrences(&lines[i], &DIEDAT_WORDS, MASK_SLOT))
            .collect()
    };
    let got = |xs: &[mlmkit::data::MaskedChoiceExample]| -> Vec<(String, String)> {
        xs.iter().map(|e| (e.masked_text.clone(), e.gold_word().to_string())).collect()
    };
    let (train, test) = (got(&d.train), got(&d.test));
    let ok = train == oracle(0..700) && test == oracle(700..1000) && d.skipped_lines == 0;
    verdict(ok, format!("{} train + {} test examples", train.len(), test.len()))
}

fn random_bio(rng: &mut ChaCha8Rng, len: usize) -> Vec<String> {
    const TYPES: [&str; 2] = ["PER", "LOC"];
    let mut tags: Vec<String> = Vec::with_capacity(len);
    for _ in 0..len {
        let ty = TYPES[rng.random_range(0..2)];
        let tag = match rng.random_range(0..3) {
            0 => "O".to_string(),
            1 => format!("B-{ty}"),
            _ => {
                let continues = tags.last().is_some_and(|p| p.len() > 2 && &p[2..] == ty);
                if continues {
                    format!("I-{ty}")
                } else {
                    format!("B-{ty}")
                }
            }
        };
        tags.push(tag);
    }
    tags
}

fn span_f1_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..4);
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        for _ in 0..n {
            let len = rng.random_range(0..8);
            gold.push(random_bio(&mut rng, len));
            pred.push(random_bio(&mut rng, len));
        }
        let s = span_f1_conll(&pred, &gold).unwrap().overall.scores;
        if (s.precision, s.recall, s.f1) != span_prf(&pred, &gold) {
            mismatches += 1;
        }
    }
    let t = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let gold = vec![t("B-PER I-PER O B-LOC"), t("B-ORG O")];
    let pred = vec![t("B-PER I-PER O O"), t("O B-MISC")];
    let h = span_f1_conll(&pred, &gold).unwrap().overall.scores;
    let hand = h.precision == 0.5 && (h.recall - 1.0 / 3.0).abs() < 1e-15 && (h.f1 - 0.4).abs() < 1e-15;
    verdict(
        mismatches == 0 && hand,
        format!(
            "{mismatches} of 200 random instances differ; fixture P {:.3} R {:.3} F1 {:.3}",
            h.precision, h.recall, h.f1
        ),
    )
}

fn records(a: bool, y: bool, n: usize, pos: usize) -> Vec<FairnessRecord> {
    (0..n)
        .map(|i| FairnessRecord {
            id: format!("{a}{y}{i}"),
            y,
            score: if i < pos { 1.0 } else { -1.0 },
            a: Some(a),
        })
        .collect()
}

fn fairness_oracles() -> Verdict {
    let mut notes = Vec::new();
    let fixture = [records(false, true, 10, 7), records(true, true, 10, 10)].concat();
    let d = dpr(&fixture, 0.0, true).unwrap();
    let dpr_ok = d == 0.7 / 1.0;
    notes.push(format!("dpr {d}"));
    let eo_fixture = [records(false, true, 10, 9), records(true, true, 10, 8), records(true, false, 4, 1)].concat();
    let e = eo_diff(&eo_fixture, 0.0, true, true).unwrap();
    let eo_ok = e == 9.0 / 10.0 - 8.0 / 10.0;
    notes.push(format!("eo {e:.3}"));
    let perfect = [
        records(false, true, 7, 7),
        records(true, true, 5, 5),
        records(false, false, 3, 0),
        records(true, false, 9, 0),
    ]
    .concat();
    let perfect_ok = eo_diff(&perfect, 0.0, true, true).unwrap() == 0.0;

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let synthetic: Vec<FairnessRecord> = (0..100_000)
        .map(|i| {
            let a = rng.random_bool(0.4);
            let y = rng.random_bool(if a { 0.6 } else { 0.3 });
            let yhat = rng.random_bool(if y { 0.8 } else { 0.2 });
            FairnessRecord {
                id: i.to_string(),
                y,
                score: if yhat { rng.random_range(0.01..1.0) } else { -rng.random_range(0.01..1.0) },
                a: Some(a),
            }
        })
        .collect();
    let indep = eo_diff(&synthetic, 0.0, true, true).unwrap();
    notes.push(format!("independent eo {indep:.4}"));

    let mut auc_mismatch = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=50);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 4.0).collect();
        if roc(&scores, &labels).unwrap().auc != auc_pairs(&scores, &labels) {
            auc_mismatch += 1;
        }
    }
    notes.push(format!("{auc_mismatch} AUC mismatches"));
    let ok = dpr_ok && eo_ok && perfect_ok && indep.abs() < 0.02 && auc_mismatch == 0;
    verdict(ok, notes.join(", "))
}

fn zeror_rate() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..60);
        let eval: Vec<u8> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let mut counts = BTreeMap::new();
        for l in &eval {
            *counts.entry(*l).or_insert(0usize) += 1;
        }
        let majority = *counts.values().max().unwrap();
        let z = ZeroR::fit(&eval).unwrap();
        if z.accuracy(&eval).unwrap() != majority as f64 / n as f64 {
            bad += 1;
        }
    }
    verdict(bad == 0, format!("{bad} of 200 random sets differ from the majority rate"))
}

fn learning_curve_harness() -> Verdict {
    let train = tagging_task(600, 1);
    let dev = tagging_task(60, 2);
    let test = tagging_task(300, 3);
    let text: Vec<String> = train.iter().map(|s| s.words.join(" ")).collect();
    let tok = train_bpe(text.iter().map(String::as_str), &TrainerConfig::default()).unwrap();
    let labels: Vec<String> = ["NOUN", "VERB", "ADJ", "ADV", "DET"].iter().map(|s| s.to_string()).collect();
    let enc = |s: &[mlmkit::data::TaggedSentence]| tagged_examples(s, &tok, &labels, 64).unwrap();
    let data = TaskDataset {
        train: enc(&train),
        dev: enc(&dev),
        labels: labels.clone(),
    };
    let spec = FinetuneSpec {
        task: TaskKind::Token,
        lr: 1e-3,
        batch: 16,
        dropout: 0.1,
        eps: 1e-8,
        weight_decay: 0.01,
        warmup: Warmup::Fraction(0.06),
        duration: Duration::Epochs(4),
        selection: SelectionMetric::Accuracy,
        seed: 0,
    };
    let curve = LearningCurveSpec {
        sizes: vec![20, 100, 600],
        spec,
        subset_seed: 5,
    };
    let vocab = tok.vocab_size();
    let factory = || EncoderModel::init(ModelConfig::tiny(vocab), 11);
    let pad = tok.require_special(SpecialRole::Pad).unwrap();
    let points = learning_curve(&factory, &data, &enc(&test), &curve, pad).unwrap();
    let gain = points.last().unwrap().accuracy - points[0].accuracy;
    let table: Vec<String> = points.iter().map(|p| format!("{}: {:.3}", p.size, p.accuracy)).collect();
    verdict(gain >= 0.10, format!("{} (gain {:.1} points)", table.join(", "), 100.0 * gain))
}

fn random_unicode(rng: &mut ChaCha8Rng) -> String {
    const RANGES: [(u32, u32); 7] = [
        (0x20, 0x7e),
        (0x00, 0x1f),
        (0xa0, 0x17f),
        (0x370, 0x4ff),
        (0x4e00, 0x4fff),
        (0x1f300, 0x1f64f),
        (0x2000, 0x206f),
    ];
    let len = rng.random_range(0..40);
    (0..len)
        .filter_map(|_| {
            let (lo, hi) = RANGES[rng.random_range(0..RANGES.len())];
            char::from_u32(rng.random_range(lo..=hi))
        })
        .collect()
}

fn tokenizer_properties() -> Verdict {
    let cfg = TrainerConfig {
        target_vocab_size: 400,
        min_pair_frequency: 1,
        ..Default::default()
    };
    let tok = train_bpe(SAMPLE_LINES.iter().copied(), &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut round_trip_failures = 0;
    for _ in 0..1000 {
        let s = random_unicode(&mut rng);
        let ids = tok.encode(&s, false).unwrap().ids;
        if tok.decode(&ids).unwrap() != s {
            round_trip_failures += 1;
        }
    }
    let corpora: [&[&str]; 3] = [&["aaaa aaaa", "ab ab aab"], &["ababab", "bababa abba"], SAMPLE_LINES];
    let mut order_failures = 0;
    for lines in corpora {
        let pre: Vec<Vec<u8>> = lines
            .iter()
            .flat_map(|l| pretokenize(l).into_iter().map(move |(s, e)| l.as_bytes()[s..e].to_vec()))
            .collect();
        let model = train_bpe(
            lines.iter().copied(),
            &TrainerConfig {
                target_vocab_size: 256 + 60,
                min_pair_frequency: 1,
                specials: Vec::new(),
            },
        )
        .unwrap();
        if model.merge_strings() != bpe_merges(&pre, 60, 1) {
            order_failures += 1;
        }
    }
    let again: TokenizerModel = train_bpe(SAMPLE_LINES.iter().copied(), &cfg).unwrap();
    let deterministic = again == tok;
    verdict(
        round_trip_failures == 0 && order_failures == 0 && deterministic,
        format!(
            "{round_trip_failures} round-trip failures in 1000, {order_failures} of 3 merge orders differ, deterministic: {deterministic}"
        ),
    )
}
