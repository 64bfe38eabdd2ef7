//! Masked-choice evaluation of a pre-trained MLM without fine-tuning.

use std::path::Path;

use crate::bpe::{SpecialRole, TokenId, TokenizerModel};
use crate::data::MaskedChoiceExample;
use crate::error::{Error, Result};
use crate::finetune::{fit_context, slot_form};
use crate::metrics::{accuracy_ci, AccuracyCi};
use crate::model::{Batch, EncoderModel};

/// Scores each candidate of a masked-choice example; higher is better.
pub trait CandidateScorer {
    fn score(&self, example: &MaskedChoiceExample) -> Result<Vec<f64>>;
}

/// Scores a candidate by its mean log-probability under the MLM head. Each
/// of the candidate's tokens is masked in turn with the others left in
/// place, so a one-token candidate is scored by the log-probability at the
/// lone mask.
pub struct MlmScorer<'a> {
    pub model: &'a EncoderModel,
    pub tokenizer: &'a TokenizerModel,
}

struct Query {
    input: Vec<TokenId>,
    position: usize,
    target: TokenId,
    candidate: usize,
}

impl MlmScorer<'_> {
    /// The surface form a candidate takes in the slot. A space before the
    /// slot belongs to the word, as it does in running text.
    fn candidate_ids(&self, left: &str, candidate: &str) -> Result<(usize, Vec<TokenId>)> {
        let spaced = left.ends_with(' ');
        let form = format!("{}{}", if spaced { " " } else { "" }, slot_form(left, candidate));
        let ids = self.tokenizer.encode(&form, false)?.ids;
        if ids.is_empty() {
            return Err(Error::Data(format!("candidate {candidate:?} encodes to no tokens")));
        }
        Ok((usize::from(spaced), ids))
    }

    fn queries(&self, example: &MaskedChoiceExample) -> Result<Vec<Query>> {
        example.validate()?;
        let (left, right) = example.context();
        let bos = self.tokenizer.require_special(SpecialRole::Bos)?;
        let eos = self.tokenizer.require_special(SpecialRole::Eos)?;
        let mask = self.tokenizer.require_special(SpecialRole::Mask)?;
        let mut out: Vec<Query> = Vec::new();
        for (ci, cand) in example.candidates.iter().enumerate() {
            let (spaced, cand_ids) = self.candidate_ids(left, cand)?;
            let left_text = &left[..left.len() - spaced];
            let mut l = self.tokenizer.encode(left_text, false)?.ids;
            let mut r = self.tokenizer.encode(right, false)?.ids;
            fit_context(&mut l, &mut r, self.model.config.max_sequence_len().saturating_sub(2 + cand_ids.len()));
            let mut seq = Vec::with_capacity(l.len() + cand_ids.len() + r.len() + 2);
            seq.push(bos);
            seq.extend_from_slice(&l);
            let start = seq.len();
            seq.extend_from_slice(&cand_ids);
            seq.extend_from_slice(&r);
            seq.push(eos);
            for (j, &t) in cand_ids.iter().enumerate() {
                let mut input = seq.clone();
                input[start + j] = mask;
                out.push(Query {
                    input,
                    position: start + j,
                    target: t,
                    candidate: ci,
                });
            }
        }
        Ok(out)
    }
}

impl CandidateScorer for MlmScorer<'_> {
    fn score(&self, example: &MaskedChoiceExample) -> Result<Vec<f64>> {
        let queries = self.queries(example)?;
        // One-token candidates share the same masked input; run it once.
        let mut inputs: Vec<Vec<TokenId>> = Vec::new();
        let mut slot = Vec::with_capacity(queries.len());
        for q in &queries {
            let i = match inputs.iter().position(|x| *x == q.input) {
                Some(i) => i,
                None => {
                    inputs.push(q.input.clone());
                    inputs.len() - 1
                }
            };
            slot.push(i);
        }
        let pad = self.tokenizer.require_special(SpecialRole::Pad)?;
        let batch = Batch::from_sequences(&inputs, pad)?;
        let rows: Vec<usize> = queries.iter().zip(&slot).map(|(q, &i)| batch.row(i, q.position)).collect();
        let logits = self.model.forward_mlm_rows(&batch, &rows)?;
        let mut sums = vec![0.0; example.candidates.len()];
        let mut counts = vec![0usize; example.candidates.len()];
        for (r, q) in queries.iter().enumerate() {
            sums[q.candidate] += log_softmax_at(logits.row(r), q.target as usize);
            counts[q.candidate] += 1;
        }
        Ok(sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect())
    }
}

fn log_softmax_at(row: &[f32], target: usize) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x as f64));
    let lse = max + row.iter().map(|&x| (x as f64 - max).exp()).sum::<f64>().ln();
    row[target] as f64 - lse
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidate {
    pub index: usize,
    pub candidate: String,
    pub score: f64,
}

/// Candidates by descending score; equal scores keep candidate order.
pub fn rank_candidates(example: &MaskedChoiceExample, scores: &[f64]) -> Vec<RankedCandidate> {
    let mut ranked: Vec<RankedCandidate> = example
        .candidates
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(index, (c, &score))| RankedCandidate {
            index,
            candidate: c.clone(),
            score,
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    ranked
}

pub fn score_candidates(
    model: &EncoderModel,
    tokenizer: &TokenizerModel,
    example: &MaskedChoiceExample,
) -> Result<Vec<RankedCandidate>> {
    let scores = MlmScorer { model, tokenizer }.score(example)?;
    Ok(rank_candidates(example, &scores))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleOutcome {
    pub id: usize,
    pub scores: Vec<f64>,
    pub predicted: usize,
    pub gold: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotReport {
    pub accuracy: AccuracyCi,
    pub correct: usize,
    pub outcomes: Vec<ExampleOutcome>,
}

/// Fraction of examples whose top-ranked candidate is the gold one.
pub fn eval_zeroshot(scorer: &dyn CandidateScorer, examples: &[MaskedChoiceExample]) -> Result<ZeroShotReport> {
    if examples.is_empty() {
        return Err(Error::UndefinedMetric("zero-shot evaluation of an empty set".into()));
    }
    let mut outcomes = Vec::with_capacity(examples.len());
    for (id, ex) in examples.iter().enumerate() {
        let scores = scorer.score(ex)?;
        let predicted = rank_candidates(ex, &scores)[0].index;
        outcomes.push(ExampleOutcome {
            id,
            scores,
            predicted,
            gold: ex.gold,
        });
    }
    let correct = outcomes.iter().filter(|o| o.predicted == o.gold).count();
    Ok(ZeroShotReport {
        accuracy: accuracy_ci(correct, outcomes.len())?,
        correct,
        outcomes,
    })
}

/// One row per example: id, `candidate=score` pairs, predicted, gold.
pub fn write_outcomes_csv(path: &Path, examples: &[MaskedChoiceExample], report: &ZeroShotReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["example_id", "scores", "predicted", "gold"])?;
    for (o, ex) in report.outcomes.iter().zip(examples) {
        let scores: Vec<String> = ex
            .candidates
            .iter()
            .zip(&o.scores)
            .map(|(c, s)| format!("{c}={s:.6}"))
            .collect();
        w.write_record([
            o.id.to_string(),
            scores.join(";"),
            ex.candidates[o.predicted].clone(),
            ex.candidates[o.gold].clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
