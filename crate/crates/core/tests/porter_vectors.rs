//! Porter stemmer against reference vectors produced by an independent
//! implementation of the original 1980 algorithm.

use hypo_core::lexicon::porter_stem;

#[test]
fn matches_reference_vectors() {
    let text = include_str!("fixtures/porter_vectors.txt");
    let mut failures = Vec::new();
    let mut total = 0;
    for line in text.lines() {
        let (word, expected) = line.split_once(' ').expect("word stem");
        total += 1;
        let got = porter_stem(word);
        if got != expected {
            failures.push(format!("{word}: expected {expected}, got {got}"));
        }
    }
    assert!(total > 2000);
    assert!(failures.is_empty(), "{} mismatches:\n{}", failures.len(), failures.join("\n"));
}
