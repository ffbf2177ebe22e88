//! Versioned prompt specifications and deterministic rendering.
//!
//! A `PromptSpec` carries the six prompt components (role, task, category
//! definitions, few-shot examples, guidelines, output format) plus lineage
//! metadata. Rendering is a pure function of (spec, comment) and the digest
//! of the rendered bytes is the cache key building block.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::taxonomy::{Category, Taxonomy};

pub const COMMENT_OPEN: &str = "<<<COMMENT>>>";
pub const COMMENT_CLOSE: &str = "<<<END COMMENT>>>";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExampleLabel {
    pub category: Category,
    pub confidence: f64,
}

/// One in-context example: comment text, labels with confidence, and a
/// reasoning string capped at 20 words.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FewShotExample {
    pub text: String,
    pub labels: Vec<ExampleLabel>,
    pub reasoning: String,
}

#[derive(Debug, Clone)]
pub struct PromptSpec {
    pub version_id: String,
    pub role_text: String,
    pub task_text: String,
    /// One definition per category, keyed and rendered in canonical order.
    pub definitions: BTreeMap<Category, String>,
    pub examples: Vec<FewShotExample>,
    pub guidelines: Vec<String>,
    pub output_format: String,
    pub parent: Option<String>,
    pub changelog: String,
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("failed to read prompt spec {path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("prompt spec error: {0}")]
    Spec(String),
}

#[derive(Debug, Deserialize)]
struct SpecFile {
    version_id: String,
    #[serde(default)]
    parent: Option<String>,
    #[serde(default)]
    changelog: Option<String>,
    role_text: String,
    task_text: String,
    definitions: BTreeMap<String, String>,
    #[serde(default)]
    examples: Vec<SpecExample>,
    #[serde(default)]
    guidelines: Vec<String>,
    output_format: String,
}

#[derive(Debug, Deserialize)]
struct SpecExample {
    text: String,
    labels: Vec<SpecLabel>,
    reasoning: String,
}

#[derive(Debug, Deserialize)]
struct SpecLabel {
    category: String,
    confidence: f64,
}

pub const BUNDLED_P00: &str = include_str!("../assets/specs/P00.toml");
pub const BUNDLED_P01: &str = include_str!("../assets/specs/P01.toml");
pub const BUNDLED_P18: &str = include_str!("../assets/specs/P18.toml");
pub const BUNDLED_P19: &str = include_str!("../assets/specs/P19.toml");

/// Returns a bundled spec by version id (P00, P01, P18, P19).
pub fn bundled_spec(version_id: &str, taxonomy: &Taxonomy) -> Result<PromptSpec, SpecError> {
    let text = match version_id {
        "P00" => BUNDLED_P00,
        "P01" => BUNDLED_P01,
        "P18" => BUNDLED_P18,
        "P19" => BUNDLED_P19,
        other => return Err(SpecError::Spec(format!("no bundled spec {other:?}"))),
    };
    parse_prompt_spec(text, taxonomy)
}

pub fn load_prompt_spec(
    path: impl AsRef<Path>,
    taxonomy: &Taxonomy,
) -> Result<PromptSpec, SpecError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SpecError::File {
        path: path.display().to_string(),
        source,
    })?;
    parse_prompt_spec(&text, taxonomy)
}

pub fn parse_prompt_spec(text: &str, taxonomy: &Taxonomy) -> Result<PromptSpec, SpecError> {
    let file: SpecFile = toml::from_str(text).map_err(|e| SpecError::Spec(e.to_string()))?;

    let mut definitions = BTreeMap::new();
    for (name, def) in file.definitions {
        let category = taxonomy
            .canonicalize_label(&name)
            .map_err(|_| SpecError::Spec(format!("unknown category {name:?} in definitions")))?;
        if definitions.insert(category, def).is_some() {
            return Err(SpecError::Spec(format!(
                "duplicate definition for {category}"
            )));
        }
    }
    for category in Category::ALL {
        if !definitions.contains_key(&category) {
            return Err(SpecError::Spec(format!("missing definition for {category}")));
        }
    }

    let mut examples = Vec::with_capacity(file.examples.len());
    for (i, ex) in file.examples.into_iter().enumerate() {
        if ex.labels.is_empty() {
            return Err(SpecError::Spec(format!("example {i} has no labels")));
        }
        let words = ex.reasoning.split_whitespace().count();
        if words > 20 {
            return Err(SpecError::Spec(format!(
                "example {i} reasoning is {words} words (max 20)"
            )));
        }
        let mut labels = Vec::with_capacity(ex.labels.len());
        for l in ex.labels {
            if !(0.0..=1.0).contains(&l.confidence) {
                return Err(SpecError::Spec(format!(
                    "example {i} confidence {} out of [0,1]",
                    l.confidence
                )));
            }
            let category = taxonomy.canonicalize_label(&l.category).map_err(|_| {
                SpecError::Spec(format!("example {i} has unknown category {:?}", l.category))
            })?;
            labels.push(ExampleLabel {
                category,
                confidence: l.confidence,
            });
        }
        examples.push(FewShotExample {
            text: ex.text,
            labels,
            reasoning: ex.reasoning,
        });
    }

    let changelog = match (&file.parent, file.changelog) {
        (Some(_), None) => {
            return Err(SpecError::Spec(
                "spec with a parent must carry a changelog".into(),
            ))
        }
        (_, changelog) => changelog.unwrap_or_default(),
    };

    Ok(PromptSpec {
        version_id: file.version_id,
        role_text: file.role_text,
        task_text: file.task_text,
        definitions,
        examples,
        guidelines: file.guidelines,
        output_format: file.output_format,
        parent: file.parent,
        changelog,
    })
}

fn escape_sentinel(text: &str) -> String {
    // Any "<<<" inside the comment is broken up so the fenced block
    // markers stay unique in the rendered output.
    text.replace("<<<", "<<\u{5c}<")
}

/// The system-message half of the rendered prompt: role, task,
/// definitions, guidelines, output format.
pub fn render_system(spec: &PromptSpec) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "## Role\n{}\n", spec.role_text);
    let _ = writeln!(s, "## Task\n{}\n", spec.task_text);
    let _ = writeln!(s, "## Category Definitions");
    for (i, category) in Category::ALL.iter().enumerate() {
        let _ = writeln!(
            s,
            "{}. {}: {}",
            i + 1,
            category.canonical_name(),
            spec.definitions[category]
        );
    }
    s.push('\n');
    if !spec.guidelines.is_empty() {
        let _ = writeln!(s, "## Guidelines");
        for g in &spec.guidelines {
            let _ = writeln!(s, "- {g}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "## Output Format\n{}", spec.output_format);
    s
}

/// The user-message half: few-shot examples followed by the target comment
/// in a sentinel-fenced block.
pub fn render_user(spec: &PromptSpec, comment_text: &str) -> String {
    let mut s = String::new();
    if !spec.examples.is_empty() {
        let _ = writeln!(s, "## Examples");
        for (i, ex) in spec.examples.iter().enumerate() {
            let _ = writeln!(s, "Example {}:", i + 1);
            let _ = writeln!(s, "Comment: {}", escape_sentinel(&ex.text));
            let labels = ex
                .labels
                .iter()
                .map(|l| format!("{} ({:.2})", l.category.canonical_name(), l.confidence))
                .collect::<Vec<_>>()
                .join(", ");
            let _ = writeln!(s, "Labels: {labels}");
            let _ = writeln!(s, "Reasoning: {}", ex.reasoning);
        }
        s.push('\n');
    }
    let _ = writeln!(s, "## Comment to Classify");
    let _ = writeln!(s, "{COMMENT_OPEN}");
    let _ = writeln!(s, "{}", escape_sentinel(comment_text));
    let _ = writeln!(s, "{COMMENT_CLOSE}");
    s
}

/// Full rendered prompt, byte-deterministic for fixed inputs. The section
/// order is fixed: role, task, definitions, examples, guidelines, output
/// format, target comment.
pub fn render_prompt(spec: &PromptSpec, comment_text: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "## Role\n{}\n", spec.role_text);
    let _ = writeln!(s, "## Task\n{}\n", spec.task_text);
    let _ = writeln!(s, "## Category Definitions");
    for (i, category) in Category::ALL.iter().enumerate() {
        let _ = writeln!(
            s,
            "{}. {}: {}",
            i + 1,
            category.canonical_name(),
            spec.definitions[category]
        );
    }
    s.push('\n');
    if !spec.examples.is_empty() {
        let _ = writeln!(s, "## Examples");
        for (i, ex) in spec.examples.iter().enumerate() {
            let _ = writeln!(s, "Example {}:", i + 1);
            let _ = writeln!(s, "Comment: {}", escape_sentinel(&ex.text));
            let labels = ex
                .labels
                .iter()
                .map(|l| format!("{} ({:.2})", l.category.canonical_name(), l.confidence))
                .collect::<Vec<_>>()
                .join(", ");
            let _ = writeln!(s, "Labels: {labels}");
            let _ = writeln!(s, "Reasoning: {}", ex.reasoning);
        }
        s.push('\n');
    }
    if !spec.guidelines.is_empty() {
        let _ = writeln!(s, "## Guidelines");
        for g in &spec.guidelines {
            let _ = writeln!(s, "- {g}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "## Output Format\n{}\n", spec.output_format);
    let _ = writeln!(s, "## Comment to Classify");
    let _ = writeln!(s, "{COMMENT_OPEN}");
    let _ = writeln!(s, "{}", escape_sentinel(comment_text));
    let _ = writeln!(s, "{COMMENT_CLOSE}");
    s
}

/// SHA-256 hex digest of the rendered prompt bytes, prefixed with a format
/// tag so the digest space can evolve without silent collisions.
pub fn prompt_hash(spec: &PromptSpec, comment_text: &str) -> String {
    let rendered = render_prompt(spec, comment_text);
    let mut hasher = Sha256::new();
    hasher.update(b"modgate-prompt-v1\x00");
    hasher.update(rendered.as_bytes());
    hex::encode(hasher.finalize())
}

/// Structured change summary between two specs.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SpecDiff {
    pub role_changed: bool,
    pub task_changed: bool,
    pub output_format_changed: bool,
    pub changed_definitions: Vec<Category>,
    pub added_examples: usize,
    pub removed_examples: usize,
    pub example_count_from: usize,
    pub example_count_to: usize,
    pub added_guidelines: Vec<String>,
    pub removed_guidelines: Vec<String>,
}

impl SpecDiff {
    pub fn is_empty(&self) -> bool {
        !self.role_changed
            && !self.task_changed
            && !self.output_format_changed
            && self.changed_definitions.is_empty()
            && self.added_examples == 0
            && self.removed_examples == 0
            && self.added_guidelines.is_empty()
            && self.removed_guidelines.is_empty()
    }

    pub fn summary(&self) -> String {
        if self.is_empty() {
            return "no changes".into();
        }
        let mut parts = Vec::new();
        if self.role_changed {
            parts.push("role changed".to_string());
        }
        if self.task_changed {
            parts.push("task changed".to_string());
        }
        if !self.changed_definitions.is_empty() {
            let names = self
                .changed_definitions
                .iter()
                .map(|c| c.canonical_name())
                .collect::<Vec<_>>()
                .join(", ");
            parts.push(format!("definitions changed: {names}"));
        }
        if self.added_examples > 0 {
            parts.push(format!("+{} examples", self.added_examples));
        }
        if self.removed_examples > 0 {
            parts.push(format!("-{} examples", self.removed_examples));
        }
        if self.example_count_from != self.example_count_to {
            parts.push(format!(
                "example count {} -> {}",
                self.example_count_from, self.example_count_to
            ));
        }
        for g in &self.added_guidelines {
            parts.push(format!("+guideline: {g}"));
        }
        for g in &self.removed_guidelines {
            parts.push(format!("-guideline: {g}"));
        }
        if self.output_format_changed {
            parts.push("output format changed".to_string());
        }
        parts.join("; ")
    }
}

pub fn diff_specs(a: &PromptSpec, b: &PromptSpec) -> SpecDiff {
    let a_texts: Vec<&str> = a.examples.iter().map(|e| e.text.as_str()).collect();
    let b_texts: Vec<&str> = b.examples.iter().map(|e| e.text.as_str()).collect();
    SpecDiff {
        role_changed: a.role_text != b.role_text,
        task_changed: a.task_text != b.task_text,
        output_format_changed: a.output_format != b.output_format,
        changed_definitions: Category::ALL
            .iter()
            .copied()
            .filter(|c| a.definitions[c] != b.definitions[c])
            .collect(),
        added_examples: b_texts.iter().filter(|t| !a_texts.contains(t)).count(),
        removed_examples: a_texts.iter().filter(|t| !b_texts.contains(t)).count(),
        example_count_from: a.examples.len(),
        example_count_to: b.examples.len(),
        added_guidelines: b
            .guidelines
            .iter()
            .filter(|g| !a.guidelines.contains(g))
            .cloned()
            .collect(),
        removed_guidelines: a
            .guidelines
            .iter()
            .filter(|g| !b.guidelines.contains(g))
            .cloned()
            .collect(),
    }
}
