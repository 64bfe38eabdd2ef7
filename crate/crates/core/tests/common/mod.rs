//! Fixtures shared by the integration and acceptance tests. The reference
//! implementations in [`oracles`] favour obviousness over speed and reuse
//! nothing from the code they check.

#![allow(dead_code)]

pub mod oracles;

use mlmkit::autodiff::{Element, Graph, ScalarFn, Tensor, Var};
use mlmkit::bpe::TokenId;
use mlmkit::model::{Batch, Bound, EncoderModel, ModelConfig};
use mlmkit::Result;

/// A few lines of Dutch-like text for tokenizer and data tests.
pub const SAMPLE_LINES: &[&str] = &[
    "Ik denk dat die man morgen komt.",
    "Het huis dat we kochten is groot, maar die tuin is klein.",
    "De vrouw die daar werkt, zegt dat het regent.",
    "Dat is de fiets die ik gisteren zag!",
    "Zij is een goede dokter en hij is een goede leraar.",
    "In 2020 waren er 17 miljoen inwoners; dat aantal groeit.",
    "Café's en restaurants zijn weer open… eindelijk.",
    "Wie denkt dat dit makkelijk is, vergist zich.",
];

/// Masked-LM loss of a model as a function of its parameters.
pub struct MlmLoss {
    pub model: EncoderModel,
    pub batch: Batch,
    pub labels: Vec<Option<TokenId>>,
}

impl ScalarFn for MlmLoss {
    fn eval<E: Element>(&self, g: &mut Graph<E>, inputs: &[Var]) -> Result<Var> {
        let bound = Bound::from_vars(inputs.to_vec());
        self.model.mlm_loss(g, &bound, &self.batch, &self.labels)
    }
}

/// A tiny model without dropout, two ragged sequences and every third
/// position labelled.
pub fn mlm_problem(seed: u64) -> (MlmLoss, Vec<Tensor>) {
    let model = EncoderModel::init(ModelConfig::tiny(1000).without_dropout(), seed).unwrap();
    let seqs: Vec<Vec<TokenId>> = vec![
        (0..8).map(|i| ((seed as u32 * 31 + i * 17) % 990) + 6).collect(),
        (0..5).map(|i| ((seed as u32 * 7 + i * 101) % 990) + 6).collect(),
    ];
    let batch = Batch::from_sequences(&seqs, 1).unwrap();
    let labels = (0..batch.ids.len())
        .map(|i| (batch.valid[i] && i % 3 == 0).then_some((i as u32 * 13 + 6) % 1000))
        .collect();
    let inputs = model.params.tensors().cloned().collect();
    (MlmLoss { model, batch, labels }, inputs)
}

const NOUNS: [&str; 10] = ["kat", "hond", "boom", "huis", "fiets", "boek", "stoel", "tafel", "deur", "raam"];

/// A 100-line corpus in which every content word appears twice per line and
/// "denk" is always followed by "dat", so any single masked token can be
/// recovered from the rest of its line.
pub fn overfit_corpus() -> Vec<String> {
    (0..100)
        .map(|i| {
            let (a, b, c) = (NOUNS[i % 10], NOUNS[(i / 10) % 10], NOUNS[(i * 7 + 3) % 10]);
            format!("zo die {a} {b} {c} , ik denk dat {a} {b} {c} .")
        })
        .collect()
}

/// Seeded Dutch-like lines with die/dat in assorted casings and near-miss
/// forms ("dathuis", "die-hard", "dat's").
pub fn diedat_fixture(n: usize, seed: u64) -> Vec<String> {
    use rand::{Rng, SeedableRng};
    let pieces = [
        "die", "dat", "Die", "Dat", "DAT", "dathuis", "die-hard", "dat's", "diens", "de", "het", "man", "vrouw",
        "zegt", "denkt", "…", ",", ".", "«dat»", "(die)", "dát", "Dies", "ik", "weet",
    ];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(0..12);
            (0..len).map(|_| pieces[rng.random_range(0..pieces.len())]).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

/// Sentences over a 60-word lexicon where each word has one fixed tag out
/// of five, so tagging is learnable from word identity alone.
pub fn tagging_task(n: usize, seed: u64) -> Vec<mlmkit::data::TaggedSentence> {
    use rand::{Rng, SeedableRng};
    const ONSETS: [&str; 6] = ["b", "k", "m", "s", "t", "v"];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    const CODAS: [&str; 2] = ["n", "l"];
    const TAGS: [&str; 5] = ["NOUN", "VERB", "ADJ", "ADV", "DET"];
    let mut lexicon = Vec::new();
    for (i, o) in ONSETS.iter().enumerate() {
        for (j, v) in VOWELS.iter().enumerate() {
            for (k, c) in CODAS.iter().enumerate() {
                lexicon.push((format!("{o}{v}{c}"), TAGS[(i * 3 + j * 2 + k) % 5]));
            }
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(4..9);
            let words: Vec<&(String, &str)> = (0..len).map(|_| &lexicon[rng.random_range(0..lexicon.len())]).collect();
            mlmkit::data::TaggedSentence {
                words: words.iter().map(|w| w.0.clone()).collect(),
                tags: words.iter().map(|w| w.1.to_string()).collect(),
            }
        })
        .collect()
}
