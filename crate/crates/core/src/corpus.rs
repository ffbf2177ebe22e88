//! Labeled-comment datasets: text normalization, line-delimited ingestion,
//! balanced sampling, and per-category statistics.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::taxonomy::{Category, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommentSource {
    Original,
    Augmented,
    SyntheticFixture,
}

impl Default for CommentSource {
    fn default() -> Self {
        CommentSource::Original
    }
}

/// One normalized comment with its gold label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledComment {
    pub id: String,
    pub text: String,
    pub gold: Category,
    #[serde(default)]
    pub source: CommentSource,
}

/// An immutable set of labeled comments. `seed` records the sampling seed
/// when the corpus came out of `balance_sample`.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub comments: Vec<LabeledComment>,
    pub seed: Option<u64>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {cause}")]
    Record { line: usize, cause: String },
    #[error("category {category} underfull: have {have}, need {need}")]
    Underfull {
        category: Category,
        have: usize,
        need: usize,
    },
}

/// Normalizes raw comment text. Applies, in order: Unicode NFC,
/// curly-quote/dash mapping, control-character removal (newline becomes a
/// space), whitespace collapsing, collapsing runs of 3+ identical
/// punctuation marks to one, and a final trim. Idempotent.
pub fn normalize_text(raw: &str) -> String {
    let composed: String = raw.nfc().collect();

    let mapped: String = composed
        .chars()
        .map(|c| match c {
            '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{2032}' => '\'',
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{2033}' => '"',
            '\u{2010}' | '\u{2011}' | '\u{2012}' | '\u{2013}' | '\u{2014}' | '\u{2015}' => '-',
            '\n' => ' ',
            c if c.is_control() => '\u{0}', // dropped below
            c => c,
        })
        .filter(|c| *c != '\u{0}')
        .collect();

    // Collapse whitespace runs, then punctuation runs of 3 or more.
    let mut out = String::with_capacity(mapped.len());
    let mut prev: Option<char> = None;
    let mut run = 0usize;
    for c in mapped.chars() {
        if c.is_whitespace() {
            if matches!(prev, Some(p) if p == ' ') {
                continue;
            }
            out.push(' ');
            prev = Some(' ');
            run = 0;
            continue;
        }
        if c.is_ascii_punctuation() && prev == Some(c) {
            run += 1;
            if run >= 2 {
                // third (or later) repeat: drop the whole run down to one
                while out.ends_with(c) {
                    out.pop();
                }
                out.push(c);
                continue;
            }
        } else {
            run = 0;
        }
        out.push(c);
        prev = Some(c);
    }
    // Re-compose at the end: removing a control character can bring a base
    // char and a combining mark together, and idempotence requires the
    // composed form.
    out.trim().nfc().collect()
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.comments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comments.is_empty()
    }
}

/// Loads a line-delimited dataset file, canonicalizing labels and
/// normalizing texts. Records with unknown labels, empty texts, or
/// duplicate ids are rejected with their line number.
pub fn load_corpus(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| CorpusError::File {
        path: path.display().to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);

    #[derive(Deserialize)]
    struct RawRecord {
        id: String,
        text: String,
        label: String,
        #[serde(default)]
        source: Option<CommentSource>,
    }

    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut comments = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| CorpusError::File {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Record {
            line: lineno,
            cause: format!("malformed record: {e}"),
        })?;
        let gold = taxonomy
            .canonicalize_label(&raw.label)
            .map_err(|_| CorpusError::Record {
                line: lineno,
                cause: format!("bad label {:?}", raw.label),
            })?;
        let text = normalize_text(&raw.text);
        if text.is_empty() {
            return Err(CorpusError::Record {
                line: lineno,
                cause: "empty text after normalization".into(),
            });
        }
        if !seen_ids.insert(raw.id.clone()) {
            return Err(CorpusError::Record {
                line: lineno,
                cause: format!("duplicate id {:?}", raw.id),
            });
        }
        comments.push(LabeledComment {
            id: raw.id,
            text,
            gold,
            source: raw.source.unwrap_or_default(),
        });
    }
    Ok(Corpus {
        comments,
        seed: None,
    })
}

/// Writes a corpus back in the same line-delimited format, stable field
/// order, one "\n"-terminated record per line.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    #[derive(Serialize)]
    struct OutRecord<'a> {
        id: &'a str,
        text: &'a str,
        label: &'a str,
        source: CommentSource,
    }

    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|source| CorpusError::File {
        path: path.display().to_string(),
        source,
    })?;
    for c in &corpus.comments {
        let rec = OutRecord {
            id: &c.id,
            text: &c.text,
            label: c.gold.canonical_name(),
            source: c.source,
        };
        let line = serde_json::to_string(&rec).expect("corpus record serializes");
        file.write_all(line.as_bytes())
            .and_then(|_| file.write_all(b"\n"))
            .map_err(|source| CorpusError::File {
                path: path.display().to_string(),
                source,
            })?;
    }
    Ok(())
}

/// Draws exactly `per_category` comments from each harmful category and
/// `neutral` Neutral comments, uniformly without replacement with a seeded
/// generator. The result keeps the input's relative order and records the
/// seed for provenance.
pub fn balance_sample(
    corpus: &Corpus,
    per_category: usize,
    neutral: usize,
    seed: u64,
) -> Result<Corpus, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected: Vec<usize> = Vec::new();

    for category in Category::ALL {
        let need = if category.is_harmful() {
            per_category
        } else {
            neutral
        };
        let pool: Vec<usize> = corpus
            .comments
            .iter()
            .enumerate()
            .filter(|(_, c)| c.gold == category)
            .map(|(i, _)| i)
            .collect();
        if pool.len() < need {
            return Err(CorpusError::Underfull {
                category,
                have: pool.len(),
                need,
            });
        }
        let picks = sample(&mut rng, pool.len(), need);
        selected.extend(picks.iter().map(|i| pool[i]));
    }

    selected.sort_unstable();
    Ok(Corpus {
        comments: selected
            .into_iter()
            .map(|i| corpus.comments[i].clone())
            .collect(),
        seed: Some(seed),
    })
}

/// Per-category counts; every category is present as a key, possibly 0.
pub fn corpus_stats(corpus: &Corpus) -> BTreeMap<Category, usize> {
    let mut stats: BTreeMap<Category, usize> = Category::ALL.iter().map(|c| (*c, 0)).collect();
    for c in &corpus.comments {
        *stats.get_mut(&c.gold).unwrap() += 1;
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn synthetic_corpus(per_harmful: usize, neutral: usize) -> Corpus {
        let mut comments = Vec::new();
        for category in Category::ALL {
            let n = if category.is_harmful() {
                per_harmful
            } else {
                neutral
            };
            for i in 0..n {
                comments.push(LabeledComment {
                    id: format!("{}-{i:04}", category.canonical_name()),
                    text: format!("sample {category} comment number {i}"),
                    gold: category,
                    source: CommentSource::SyntheticFixture,
                });
            }
        }
        Corpus {
            comments,
            seed: None,
        }
    }

    #[test]
    fn normalize_collapses_whitespace() {
        assert_eq!(normalize_text("a \t  b\nc"), "a b c");
    }

    #[test]
    fn normalize_collapses_repeated_punctuation() {
        assert_eq!(normalize_text("wow!!!!!"), "wow!");
        // a double is left alone; only runs of 3+ collapse
        assert_eq!(normalize_text("hm.."), "hm..");
    }

    #[test]
    fn normalize_maps_curly_quotes() {
        assert_eq!(normalize_text("\u{201C}ok\u{201D}"), "\"ok\"");
        assert_eq!(normalize_text("it\u{2019}s"), "it's");
        assert_eq!(normalize_text("a\u{2014}b"), "a-b");
    }

    #[test]
    fn normalize_drops_control_chars() {
        assert_eq!(normalize_text("a\u{7}b\u{0}c"), "abc");
    }

    #[test]
    fn balance_sample_hits_paper_counts() {
        let corpus = synthetic_corpus(50, 1050);
        let balanced = balance_sample(&corpus, 40, 1000, 7).unwrap();
        assert_eq!(balanced.len(), 11 * 40 + 1000);
        let stats = corpus_stats(&balanced);
        for category in Category::ALL {
            let want = if category.is_harmful() { 40 } else { 1000 };
            assert_eq!(stats[&category], want, "{category}");
        }
        assert_eq!(balanced.seed, Some(7));
    }

    #[test]
    fn balance_sample_zero_counts_gives_empty() {
        let corpus = synthetic_corpus(5, 5);
        let balanced = balance_sample(&corpus, 0, 0, 1).unwrap();
        assert!(balanced.is_empty());
    }

    #[test]
    fn balance_sample_underfull_is_reported() {
        let mut corpus = synthetic_corpus(40, 100);
        let idx = corpus
            .comments
            .iter()
            .position(|c| c.gold == Category::Damning)
            .unwrap();
        corpus.comments.remove(idx);
        let err = balance_sample(&corpus, 40, 100, 1).unwrap_err();
        match err {
            CorpusError::Underfull {
                category,
                have,
                need,
            } => {
                assert_eq!(category, Category::Damning);
                assert_eq!((have, need), (39, 40));
            }
            other => panic!("expected Underfull, got {other:?}"),
        }
    }

    #[test]
    fn balance_sample_is_deterministic_per_seed() {
        let corpus = synthetic_corpus(45, 60);
        let a = balance_sample(&corpus, 40, 50, 99).unwrap();
        let b = balance_sample(&corpus, 40, 50, 99).unwrap();
        let ids = |c: &Corpus| c.comments.iter().map(|x| x.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
    }

    #[test]
    fn stats_sum_to_corpus_size() {
        let corpus = synthetic_corpus(7, 13);
        let stats = corpus_stats(&corpus);
        assert_eq!(stats.values().sum::<usize>(), corpus.len());
        assert_eq!(stats.len(), 12);
    }

    #[test]
    fn load_rejects_bad_label_and_duplicates() {
        let tax = Taxonomy::bundled();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");

        std::fs::write(
            &path,
            "{\"id\":\"a\",\"text\":\"x\",\"label\":\"Others\"}\n",
        )
        .unwrap();
        let err = load_corpus(&path, &tax).unwrap_err();
        assert!(matches!(err, CorpusError::Record { line: 1, .. }), "{err}");

        std::fs::write(
            &path,
            concat!(
                "{\"id\":\"a\",\"text\":\"x\",\"label\":\"Neutral\"}\n",
                "{\"id\":\"a\",\"text\":\"y\",\"label\":\"Neutral\"}\n",
            ),
        )
        .unwrap();
        let err = load_corpus(&path, &tax).unwrap_err();
        assert!(matches!(err, CorpusError::Record { line: 2, .. }), "{err}");
    }

    #[test]
    fn load_canonicalizes_rename_lineage() {
        let tax = Taxonomy::bundled();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ok.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"text\":\"x\",\"label\":\"Victim Blaming\"}\n",
        )
        .unwrap();
        let corpus = load_corpus(&path, &tax).unwrap();
        assert_eq!(corpus.comments[0].gold, Category::Dismissing);
    }

    #[test]
    fn save_load_round_trips() {
        let tax = Taxonomy::bundled();
        let corpus = synthetic_corpus(3, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.jsonl");
        save_corpus(&corpus, &path).unwrap();
        let back = load_corpus(&path, &tax).unwrap();
        assert_eq!(back.len(), corpus.len());
        for (a, b) in corpus.comments.iter().zip(&back.comments) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.text, b.text);
            assert_eq!(a.gold, b.gold);
        }
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,200}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once);
        }

        #[test]
        fn normalize_is_idempotent_on_arbitrary_unicode(s in proptest::string::string_regex(".{0,80}").unwrap()) {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once);
        }
    }
}
