//! Parses raw model output into structured classifications.
//!
//! Primary grammar, one line per label:
//!
//!   label: <name>; confidence: <0.00-1.00>; reason: <text>
//!
//! A tolerant fallback extracts the first recognizable category plus a
//! number when the grammar fails, flagging the result as coerced.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{Category, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    LowNeutralConfidence,
    Truncated,
    CoercedFormat,
    MultiLabel,
    /// Set at scoring time when the raw response never parsed and the
    /// record was scored as predicted-Neutral.
    ParseFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub category: Category,
    pub confidence: f64,
}

/// Structured model output: de-duplicated labels sorted by confidence
/// (ties broken by canonical category order), bounded reasoning, and
/// quality flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Classification {
    pub labels: Vec<ScoredLabel>,
    pub reasoning: String,
    pub flags: BTreeSet<Flag>,
}

#[derive(Debug, Error)]
#[error("no recognizable label in model output: {raw:?}")]
pub struct ParseError {
    pub raw: String,
}

fn sort_labels(labels: &mut [ScoredLabel]) {
    labels.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap()
            .then(a.category.index().cmp(&b.category.index()))
    });
}

fn dedup_labels(labels: Vec<ScoredLabel>) -> Vec<ScoredLabel> {
    // keep max confidence per category
    let mut best: Vec<Option<f64>> = vec![None; Category::COUNT];
    for l in labels {
        let slot = &mut best[l.category.index()];
        *slot = Some(slot.map_or(l.confidence, |c: f64| c.max(l.confidence)));
    }
    let mut out: Vec<ScoredLabel> = best
        .into_iter()
        .enumerate()
        .filter_map(|(i, c)| {
            c.map(|confidence| ScoredLabel {
                category: Category::from_index(i).unwrap(),
                confidence,
            })
        })
        .collect();
    sort_labels(&mut out);
    out
}

fn parse_grammar_line(line: &str, taxonomy: &Taxonomy) -> Option<(ScoredLabel, String, bool)> {
    let rest = strip_prefix_ci(line.trim(), "label:")?;
    let (label_part, rest) = rest.split_once(';')?;
    let category = taxonomy.canonicalize_label(label_part).ok()?;
    let rest = strip_prefix_ci(rest.trim(), "confidence:")?;
    let (conf_part, reason) = match rest.split_once(';') {
        Some((c, r)) => (c, strip_prefix_ci(r.trim(), "reason:").unwrap_or(r).trim()),
        None => (rest, ""),
    };
    let confidence: f64 = conf_part.trim().parse().ok()?;
    let clamped = confidence.clamp(0.0, 1.0);
    Some((
        ScoredLabel {
            category,
            confidence: clamped,
        },
        reason.to_string(),
        clamped != confidence,
    ))
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    if head.eq_ignore_ascii_case(prefix) {
        s.get(prefix.len()..)
    } else {
        None
    }
}

/// Last-resort extraction: the first category name appearing anywhere in
/// the text, paired with the first number in [0,1]-ish range after it.
fn fallback_extract(content: &str, taxonomy: &Taxonomy) -> Option<ScoredLabel> {
    let lower = content.to_lowercase();
    let mut hit: Option<(usize, Category)> = None;
    for def in taxonomy.defs() {
        let mut needles = vec![
            def.category.canonical_name().to_lowercase(),
            def.display_name.to_lowercase(),
        ];
        needles.extend(def.aliases.iter().map(|a| a.to_lowercase()));
        for needle in needles {
            if let Some(pos) = lower.find(&needle) {
                if hit.map_or(true, |(best, _)| pos < best) {
                    hit = Some((pos, def.category));
                }
            }
        }
    }
    let (pos, category) = hit?;
    // index positions belong to the lowercased copy, which may differ in
    // byte length from the original
    let tail = &lower[pos..];
    let confidence = first_number(tail).unwrap_or(0.5).clamp(0.0, 1.0);
    Some(ScoredLabel {
        category,
        confidence,
    })
}

fn first_number(s: &str) -> Option<f64> {
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if let Ok(v) = s[start..i].trim_end_matches('.').parse::<f64>() {
                return Some(v);
            }
        } else {
            i += 1;
        }
    }
    None
}

/// Parses raw model output. Never panics on arbitrary input: every outcome
/// is a Classification or a ParseError carrying the raw text.
pub fn parse_response(content: &str, taxonomy: &Taxonomy) -> Result<Classification, ParseError> {
    let mut labels: Vec<ScoredLabel> = Vec::new();
    let mut reasons: Vec<String> = Vec::new();
    let mut flags: BTreeSet<Flag> = BTreeSet::new();
    let mut saw_partial_label_line = false;

    for line in content.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some((label, reason, clamped)) = parse_grammar_line(trimmed, taxonomy) {
            if clamped {
                flags.insert(Flag::CoercedFormat);
            }
            if reason.is_empty() {
                // a grammar line that never reached its reason section
                // usually means the response hit the token limit
                saw_partial_label_line = true;
            } else {
                reasons.push(reason);
            }
            labels.push(label);
        } else if strip_prefix_ci(trimmed, "label:").is_some() {
            saw_partial_label_line = true;
        }
    }

    if labels.is_empty() {
        match fallback_extract(content, taxonomy) {
            Some(label) => {
                labels.push(label);
                flags.insert(Flag::CoercedFormat);
            }
            None => {
                return Err(ParseError {
                    raw: content.to_string(),
                })
            }
        }
    } else if saw_partial_label_line {
        flags.insert(Flag::Truncated);
    }

    let labels = dedup_labels(labels);
    if labels.len() > 1 {
        flags.insert(Flag::MultiLabel);
    }
    if labels.len() == 1
        && labels[0].category == Category::Neutral
        && labels[0].confidence < 0.95
    {
        flags.insert(Flag::LowNeutralConfidence);
    }

    Ok(Classification {
        labels,
        reasoning: reasons.join(" | "),
        flags,
    })
}

/// The single category used for confusion-matrix scoring: max confidence,
/// ties broken by canonical order (harmful categories precede Neutral).
pub fn primary_label(c: &Classification) -> Category {
    c.labels
        .iter()
        .max_by(|a, b| {
            a.confidence
                .partial_cmp(&b.confidence)
                .unwrap()
                .then(b.category.index().cmp(&a.category.index()))
        })
        .expect("classification labels are non-empty")
        .category
}

/// Serializes a classification back into the primary grammar, confidences
/// at two decimals. `parse_response` round-trips this output.
pub fn serialize_classification(c: &Classification) -> String {
    let mut out = String::new();
    for (i, l) in c.labels.iter().enumerate() {
        let reason = if i == 0 && !c.reasoning.is_empty() {
            c.reasoning.replace('\n', " ")
        } else {
            "as above".to_string()
        };
        out.push_str(&format!(
            "label: {}; confidence: {:.2}; reason: {}\n",
            l.category.canonical_name(),
            l.confidence,
            reason
        ));
    }
    out
}

/// One line of a run-record file: the scored outcome for one comment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommentRecord {
    pub id: String,
    pub gold: Category,
    pub labels: Vec<ScoredLabel>,
    pub primary: Category,
    pub reasoning: String,
    pub flags: BTreeSet<Flag>,
    pub prompt_version: String,
    pub model_id: String,
    pub from_cache: bool,
    pub raw: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::Taxonomy;
    use proptest::prelude::*;

    fn tax() -> Taxonomy {
        Taxonomy::bundled()
    }

    #[test]
    fn parses_wellformed_single_label() {
        let c = parse_response(
            "label: Stereotyping; confidence: 0.92; reason: Deploys a gendered nickname as a stereotype.",
            &tax(),
        )
        .unwrap();
        assert_eq!(c.labels.len(), 1);
        assert_eq!(c.labels[0].category, Category::Stereotyping);
        assert!((c.labels[0].confidence - 0.92).abs() < 1e-12);
        assert!(c.reasoning.contains("gendered nickname"));
        assert!(c.flags.is_empty());
    }

    #[test]
    fn wellformed_neutral_has_no_flags() {
        let c = parse_response(
            "label: Neutral; confidence: 0.99; reason: technical discussion.",
            &tax(),
        )
        .unwrap();
        assert_eq!(c.labels[0].category, Category::Neutral);
        assert!(c.flags.is_empty());
    }

    #[test]
    fn low_confidence_neutral_is_flagged_but_accepted() {
        let c = parse_response(
            "label: Neutral; confidence: 0.60; reason: probably fine.",
            &tax(),
        )
        .unwrap();
        assert!(c.flags.contains(&Flag::LowNeutralConfidence));
        assert_eq!(c.labels[0].category, Category::Neutral);
    }

    #[test]
    fn no_label_anywhere_is_parse_error() {
        let err = parse_response("I think this is fine.", &tax()).unwrap_err();
        assert_eq!(err.raw, "I think this is fine.");
    }

    #[test]
    fn multi_label_output_keeps_both_sorted_by_confidence() {
        let c = parse_response(
            "label: Discredit; confidence: 0.6; reason: belittles skills.\n\
             label: Dominance; confidence: 0.7; reason: silences the author.",
            &tax(),
        )
        .unwrap();
        assert!(c.flags.contains(&Flag::MultiLabel));
        assert_eq!(c.labels.len(), 2);
        assert_eq!(c.labels[0].category, Category::Dominance);
        assert_eq!(c.labels[1].category, Category::Discredit);
    }

    #[test]
    fn display_names_and_aliases_canonicalize() {
        let c = parse_response(
            "label: Sexual Harassment; confidence: 0.8; reason: mocking.",
            &tax(),
        )
        .unwrap();
        assert_eq!(c.labels[0].category, Category::SexualHarassment);

        let c = parse_response(
            "label: Victim Blaming; confidence: 0.8; reason: blame-shift.",
            &tax(),
        )
        .unwrap();
        assert_eq!(c.labels[0].category, Category::Dismissing);
    }

    #[test]
    fn out_of_range_confidence_is_clamped_and_flagged() {
        let c = parse_response(
            "label: Damning; confidence: 1.7; reason: over-eager.",
            &tax(),
        )
        .unwrap();
        assert_eq!(c.labels[0].confidence, 1.0);
        assert!(c.flags.contains(&Flag::CoercedFormat));
    }

    #[test]
    fn fallback_extracts_label_and_number() {
        let c = parse_response(
            "I would say this is Dominance with about 0.7 certainty.",
            &tax(),
        )
        .unwrap();
        assert!(c.flags.contains(&Flag::CoercedFormat));
        assert_eq!(c.labels[0].category, Category::Dominance);
        assert!((c.labels[0].confidence - 0.7).abs() < 1e-12);
    }

    #[test]
    fn truncated_tail_line_is_flagged() {
        let c = parse_response(
            "label: Damning; confidence: 0.8; reason: contempt.\nlabel: Disc",
            &tax(),
        )
        .unwrap();
        assert!(c.flags.contains(&Flag::Truncated));
        assert_eq!(c.labels.len(), 1);
    }

    #[test]
    fn duplicate_categories_keep_max_confidence() {
        let c = parse_response(
            "label: Damning; confidence: 0.4; reason: a.\n\
             label: Damning; confidence: 0.9; reason: b.",
            &tax(),
        )
        .unwrap();
        assert_eq!(c.labels.len(), 1);
        assert!((c.labels[0].confidence - 0.9).abs() < 1e-12);
        assert!(!c.flags.contains(&Flag::MultiLabel));
    }

    #[test]
    fn primary_label_rules() {
        let single = Classification {
            labels: vec![ScoredLabel {
                category: Category::Stereotyping,
                confidence: 0.92,
            }],
            reasoning: String::new(),
            flags: BTreeSet::new(),
        };
        assert_eq!(primary_label(&single), Category::Stereotyping);

        let multi = Classification {
            labels: vec![
                ScoredLabel {
                    category: Category::Dominance,
                    confidence: 0.7,
                },
                ScoredLabel {
                    category: Category::Discredit,
                    confidence: 0.6,
                },
            ],
            reasoning: String::new(),
            flags: BTreeSet::new(),
        };
        assert_eq!(primary_label(&multi), Category::Dominance);

        // exact tie with Neutral: the harmful label wins
        let tie = Classification {
            labels: vec![
                ScoredLabel {
                    category: Category::Neutral,
                    confidence: 0.8,
                },
                ScoredLabel {
                    category: Category::Discredit,
                    confidence: 0.8,
                },
            ],
            reasoning: String::new(),
            flags: BTreeSet::new(),
        };
        assert_eq!(primary_label(&tie), Category::Discredit);
    }

    #[test]
    fn round_trip_preserves_labels_and_reasoning() {
        let original = Classification {
            labels: vec![
                ScoredLabel {
                    category: Category::Dominance,
                    confidence: 0.75,
                },
                ScoredLabel {
                    category: Category::Discredit,
                    confidence: 0.5,
                },
            ],
            reasoning: "asserts control over the thread".into(),
            flags: BTreeSet::new(),
        };
        let text = serialize_classification(&original);
        let parsed = parse_response(&text, &tax()).unwrap();
        assert_eq!(parsed.labels.len(), 2);
        for (a, b) in original.labels.iter().zip(&parsed.labels) {
            assert_eq!(a.category, b.category);
            assert!((a.confidence - b.confidence).abs() < 1e-9);
        }
        assert!(parsed.reasoning.contains("asserts control"));
    }

    proptest! {
        #[test]
        fn parse_never_panics(s in "\\PC{0,300}") {
            let _ = parse_response(&s, &tax());
        }

        #[test]
        fn primary_label_is_permutation_invariant(
            confs in proptest::collection::vec(0.0f64..1.0, 2..6),
            seed in 0u64..100,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut labels: Vec<ScoredLabel> = confs
                .iter()
                .enumerate()
                .map(|(i, &c)| ScoredLabel {
                    category: Category::from_index(i % Category::COUNT).unwrap(),
                    confidence: c,
                })
                .collect();
            let base = Classification {
                labels: labels.clone(),
                reasoning: String::new(),
                flags: BTreeSet::new(),
            };
            let first = primary_label(&base);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            labels.shuffle(&mut rng);
            let shuffled = Classification { labels, reasoning: String::new(), flags: BTreeSet::new() };
            prop_assert_eq!(primary_label(&shuffled), first);
        }
    }
}
