mod common;

use std::path::Path;

use common::oracles::masked_occurrences;
use common::{diedat_fixture, tagging_task};
use mlmkit::data::{
    build_diedat, parse_conll2002_str, parse_conllu_str, parse_reviews_str, read_examples_jsonl, write_conll2002,
    write_conllu, write_examples_jsonl, write_reviews, LabeledReview, Sentiment, TaggedSentence, DIEDAT_WORDS,
    MASK_SLOT,
};
use mlmkit::Error;

#[test]
fn diedat_matches_the_enumerator_on_many_fixtures() {
    for seed in 0..20 {
        let lines = diedat_fixture(200, seed);
        let d = build_diedat(&lines, 120, 80, &DIEDAT_WORDS).unwrap();
        let expect: Vec<(String, String)> = lines[..120]
            .iter()
            .flat_map(|l| masked_occurrences(l, &DIEDAT_WORDS, MASK_SLOT))
            .collect();
        let got: Vec<(String, String)> =
            d.train.iter().map(|e| (e.masked_text.clone(), e.gold_word().to_string())).collect();
        assert_eq!(got, expect, "seed {seed}");
        for e in d.train.iter().chain(&d.test) {
            assert_eq!(e.restore(), lines[e.source_line_no - 1], "seed {seed}");
        }
    }
}

#[test]
fn diedat_skips_lines_that_already_hold_the_slot() {
    let lines = ["ik weet dat het kan", "een <mask> die er al staat", "die van hem"];
    let d = build_diedat(&lines, 3, 0, &DIEDAT_WORDS).unwrap();
    assert_eq!(d.skipped_lines, 1);
    assert_eq!(d.train.len(), 2);
    assert!(matches!(build_diedat(&lines, 2, 2, &DIEDAT_WORDS), Err(Error::Config(_))));
}

#[test]
fn examples_survive_jsonl() {
    let lines = diedat_fixture(100, 3);
    let d = build_diedat(&lines, 100, 0, &DIEDAT_WORDS).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.jsonl");
    write_examples_jsonl(&path, &d.train).unwrap();
    assert_eq!(read_examples_jsonl(&path).unwrap(), d.train);
}

#[test]
fn tagged_corpora_survive_both_formats() {
    let sentences = tagging_task(30, 9);
    let upos: Vec<TaggedSentence> = sentences
        .iter()
        .map(|s| TaggedSentence {
            words: s.words.clone(),
            tags: s.tags.iter().map(|t| if t.starts_with('N') { "NOUN".into() } else { "VERB".into() }).collect(),
        })
        .collect();
    assert_eq!(parse_conllu_str(&write_conllu(&upos), Path::new("t")).unwrap(), upos);

    let bio: Vec<TaggedSentence> = sentences
        .iter()
        .map(|s| TaggedSentence {
            words: s.words.clone(),
            tags: (0..s.len()).map(|i| ["O", "B-PER", "I-PER", "B-LOC"][(i * 7 + s.len()) % 4].to_string()).collect(),
        })
        .collect();
    let parsed = parse_conll2002_str(&write_conll2002(&bio), Path::new("t")).unwrap();
    // An I- tag after O or another type is opened as B-; everything else is kept.
    assert_eq!(parsed.sentences.len(), bio.len());
    for (p, b) in parsed.sentences.iter().zip(&bio) {
        assert_eq!(p.words, b.words);
        for (i, (pt, bt)) in p.tags.iter().zip(&b.tags).enumerate() {
            let orphan = bt == "I-PER" && (i == 0 || b.tags[i - 1] == "O" || b.tags[i - 1] == "B-LOC");
            assert_eq!(pt, if orphan { "B-PER" } else { bt.as_str() });
        }
    }
}

#[test]
fn conll2002_reports_bad_lines_with_their_number() {
    let text = "-DOCSTART- -DOCSTART- O\n\nDe Art O\nman N B-PERSON\n";
    match parse_conll2002_str(text, Path::new("ned.train")) {
        Err(Error::Parse { path, line, .. }) => assert_eq!((path.as_str(), line), ("ned.train", 4)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn reviews_survive_the_tsv_format() {
    let reviews = vec![
        LabeledReview {
            text: "Prachtig boek, echt een aanrader.".into(),
            label: Sentiment::Positive,
            gender: Some("female".into()),
        },
        LabeledReview {
            text: "Saai.".into(),
            label: Sentiment::Negative,
            gender: None,
        },
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.tsv");
    write_reviews(&path, &reviews).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(parse_reviews_str(&text, &path).unwrap(), reviews);
    assert!(matches!(
        parse_reviews_str("label\ttext\nmeh\tok\n", &path),
        Err(Error::Parse { line: 2, .. })
    ));
}
