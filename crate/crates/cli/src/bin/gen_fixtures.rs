//! Regenerates the committed offline fixtures: a synthetic raw corpus,
//! recorded replay sessions for prompts P00 and P19, and the replay model
//! configuration. The replay contents follow a fixed confusion layout so
//! evaluation fixtures have known metrics.
//!
//! Usage: cargo run --bin gen-fixtures [output-dir]   (default: fixtures)

use std::fs;
use std::io::Write;
use std::path::Path;

use modgate_cli::fixture_text;
use modgate_core::corpus::{balance_sample, CommentSource, Corpus, LabeledComment};
use modgate_core::modelgw::{request_digest, ModelConfig, ProviderKind};
use modgate_core::promptkit::{bundled_spec, render_prompt};
use modgate_core::taxonomy::{Category, Taxonomy};

const MODEL_ID: &str = "gpt-4o";
const RAW_PER_HARMFUL: usize = 50;
const RAW_NEUTRAL: usize = 1050;
const SEED: u64 = 42;

use Category::*;

/// Prediction layout for the P19 replay run, one row per gold category:
/// (predicted, count), diagonal first. Row sums are 40 per harmful
/// category and 1000 for Neutral.
fn p19_row(gold: Category) -> Vec<(Category, u64)> {
    match gold {
        Discredit => vec![(Discredit, 7), (Neutral, 21), (Damning, 6), (Dominance, 6)],
        Stereotyping => vec![(Stereotyping, 28), (Neutral, 8), (Discredit, 4)],
        SexualHarassment => vec![
            (SexualHarassment, 18),
            (AntiLGBTQ, 15),
            (Neutral, 5),
            (SexualObjectification, 2),
        ],
        ThreatsOfViolence => vec![(ThreatsOfViolence, 30), (Neutral, 6), (Damning, 4)],
        MaternalInsults => vec![(MaternalInsults, 29), (Neutral, 8), (PhysicalAppearance, 3)],
        SexualObjectification => vec![
            (SexualObjectification, 9),
            (Neutral, 16),
            (Discredit, 15),
        ],
        AntiLGBTQ => vec![(AntiLGBTQ, 37), (Neutral, 3)],
        PhysicalAppearance => vec![(PhysicalAppearance, 11), (Neutral, 22), (Discredit, 7)],
        Dominance => vec![(Dominance, 26), (Neutral, 7), (Discredit, 7)],
        Damning => vec![(Damning, 31), (Neutral, 4), (Discredit, 5)],
        Dismissing => vec![(Dismissing, 34), (Neutral, 3), (Discredit, 3)],
        Neutral => vec![
            (Neutral, 994),
            (Stereotyping, 1),
            (SexualHarassment, 2),
            (SexualObjectification, 2),
            (Dominance, 1),
        ],
    }
}

/// Prediction layout for the weaker P00 replay run: every harmful row
/// keeps 9 on the diagonal, leaks 1 into the next harmful category, and
/// sends 30 to Neutral; the Neutral row spreads 40 false positives.
fn p00_row(gold: Category) -> Vec<(Category, u64)> {
    if gold == Neutral {
        let mut row = vec![(Neutral, 960)];
        for (i, category) in Category::ALL[..11].iter().enumerate() {
            row.push((*category, if i < 7 { 4 } else { 3 }));
        }
        return row;
    }
    let next = Category::ALL[(gold.index() + 1) % 11];
    vec![(gold, 9), (next, 1), (Neutral, 30)]
}

fn response_for(predicted: Category, taxonomy: &Taxonomy) -> String {
    let display = &taxonomy.def(predicted).display_name;
    if predicted == Neutral {
        format!("label: {display}; confidence: 0.97; reason: No harmful content in this comment.")
    } else {
        format!("label: {display}; confidence: 0.90; reason: Matches the {display} pattern.")
    }
}

fn build_raw_corpus() -> Corpus {
    let mut comments = Vec::new();
    for category in Category::ALL {
        let n = if category.is_harmful() {
            RAW_PER_HARMFUL
        } else {
            RAW_NEUTRAL
        };
        for i in 0..n {
            comments.push(LabeledComment {
                id: format!("{}-{:04}", category.canonical_name(), i),
                text: fixture_text(category, i),
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

fn write_replay(
    path: &Path,
    corpus: &Corpus,
    config: &ModelConfig,
    version: &str,
    row: fn(Category) -> Vec<(Category, u64)>,
    taxonomy: &Taxonomy,
) {
    let spec = bundled_spec(version, taxonomy).expect("bundled spec");
    // Flatten each gold category's row into an ordered prediction list,
    // consumed in corpus order.
    let mut queues: Vec<Vec<Category>> = Category::ALL
        .iter()
        .map(|gold| {
            let mut q = Vec::new();
            for (predicted, count) in row(*gold) {
                q.extend(std::iter::repeat(predicted).take(count as usize));
            }
            q.reverse();
            q
        })
        .collect();

    let mut file = fs::File::create(path).expect("create replay file");
    for comment in &corpus.comments {
        let predicted = queues[comment.gold.index()]
            .pop()
            .expect("row sums match corpus counts");
        let rendered = render_prompt(&spec, &comment.text);
        let line = serde_json::json!({
            "digest": request_digest(config, &rendered),
            "model_id": config.model_id,
            "content": response_for(predicted, taxonomy),
        });
        writeln!(file, "{line}").expect("write replay line");
    }
}

fn main() {
    let out_dir = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    let out_dir = Path::new(&out_dir);
    fs::create_dir_all(out_dir).expect("create fixtures dir");

    let taxonomy = Taxonomy::bundled();
    let raw = build_raw_corpus();
    modgate_core::corpus::save_corpus(&raw, out_dir.join("raw_corpus.jsonl"))
        .expect("write raw corpus");

    let balanced = balance_sample(&raw, 40, 1000, SEED).expect("raw corpus oversupplies");
    assert_eq!(balanced.len(), 1440);

    let config = ModelConfig::offline(ProviderKind::Replay, MODEL_ID);
    let config_text = toml::to_string(&config).expect("serialize model config");
    fs::write(out_dir.join("replay_model.toml"), config_text).expect("write model config");

    write_replay(
        &out_dir.join("replay_p19.jsonl"),
        &balanced,
        &config,
        "P19",
        p19_row,
        &taxonomy,
    );
    write_replay(
        &out_dir.join("replay_p00.jsonl"),
        &balanced,
        &config,
        "P00",
        p00_row,
        &taxonomy,
    );

    println!(
        "wrote fixtures to {} ({} raw comments, {} balanced)",
        out_dir.display(),
        raw.len(),
        balanced.len()
    );
}
