//! Error analysis over completed runs: binary false-positive/negative
//! inventories with model reasoning, top confusion pairs, and cross-run
//! comparison tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::evalkit::{build_confusion, metrics_report, ConfusionMatrix, MetricsReport};
use crate::outparse::CommentRecord;
use crate::taxonomy::Category;

/// One completed classification run: provenance, per-comment records, and
/// the computed metric suite.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub run_id: String,
    pub prompt_version: String,
    pub model_id: String,
    pub records: Vec<CommentRecord>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Error)]
pub enum ErrlabError {
    #[error("empty run: no scored records")]
    EmptyRun,
    #[error("duplicate run id {0:?}")]
    DuplicateRunId(String),
}

impl RunRecord {
    pub fn from_records(
        run_id: impl Into<String>,
        prompt_version: impl Into<String>,
        model_id: impl Into<String>,
        records: Vec<CommentRecord>,
    ) -> Result<RunRecord, ErrlabError> {
        if records.is_empty() {
            return Err(ErrlabError::EmptyRun);
        }
        let pairs: Vec<(Category, Category)> =
            records.iter().map(|r| (r.gold, r.primary)).collect();
        let metrics = metrics_report(&build_confusion(&pairs)).map_err(|_| ErrlabError::EmptyRun)?;
        Ok(RunRecord {
            run_id: run_id.into(),
            prompt_version: prompt_version.into(),
            model_id: model_id.into(),
            records,
            metrics,
        })
    }

    pub fn confusion(&self) -> ConfusionMatrix {
        let pairs: Vec<(Category, Category)> =
            self.records.iter().map(|r| (r.gold, r.primary)).collect();
        build_confusion(&pairs)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MisclassifiedComment {
    pub id: String,
    pub gold: Category,
    pub predicted: Category,
    pub reasoning: String,
}

/// Binary error inventory for one run.
#[derive(Debug, Clone, Serialize)]
pub struct MisclassificationReport {
    pub run_id: String,
    pub false_positives: Vec<MisclassifiedComment>,
    pub false_negatives: Vec<MisclassifiedComment>,
    /// FN counts grouped by gold category, descending (ties by canonical
    /// order).
    pub fn_by_category: Vec<(Category, usize)>,
}

pub fn misclassification_report(run: &RunRecord) -> MisclassificationReport {
    let mut false_positives = Vec::new();
    let mut false_negatives = Vec::new();
    let mut fn_counts: BTreeMap<Category, usize> = BTreeMap::new();

    for r in &run.records {
        let entry = || MisclassifiedComment {
            id: r.id.clone(),
            gold: r.gold,
            predicted: r.primary,
            reasoning: r.reasoning.clone(),
        };
        match (r.gold.is_harmful(), r.primary.is_harmful()) {
            (true, false) => {
                false_negatives.push(entry());
                *fn_counts.entry(r.gold).or_insert(0) += 1;
            }
            (false, true) => false_positives.push(entry()),
            _ => {}
        }
    }

    let mut fn_by_category: Vec<(Category, usize)> = fn_counts.into_iter().collect();
    fn_by_category.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.index().cmp(&b.0.index())));

    MisclassificationReport {
        run_id: run.run_id.clone(),
        false_positives,
        false_negatives,
        fn_by_category,
    }
}

impl MisclassificationReport {
    /// Human-readable markdown twin of the structured report.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Misclassification report: {}\n", self.run_id);
        let _ = writeln!(
            s,
            "Binary false positives: {}; binary false negatives: {}\n",
            self.false_positives.len(),
            self.false_negatives.len()
        );
        let _ = writeln!(s, "## False negatives by gold category\n");
        for (category, count) in &self.fn_by_category {
            let _ = writeln!(s, "- {}: {}", category.canonical_name(), count);
        }
        let _ = writeln!(s, "\n## False positives\n");
        for c in &self.false_positives {
            let _ = writeln!(
                s,
                "- `{}` gold={} predicted={} reasoning: {}",
                c.id, c.gold, c.predicted, c.reasoning
            );
        }
        let _ = writeln!(s, "\n## False negatives\n");
        for c in &self.false_negatives {
            let _ = writeln!(
                s,
                "- `{}` gold={} predicted={} reasoning: {}",
                c.id, c.gold, c.predicted, c.reasoning
            );
        }
        s
    }
}

/// The k largest off-diagonal cells, descending; ties broken by canonical
/// (gold, predicted) order.
pub fn top_confusions(m: &ConfusionMatrix, k: usize) -> Vec<(Category, Category, u64)> {
    assert!(k >= 1, "k must be >= 1");
    let mut cells: Vec<(Category, Category, u64)> = Vec::new();
    for gold in Category::ALL {
        for predicted in Category::ALL {
            if gold == predicted {
                continue;
            }
            let count = m.cell(gold, predicted);
            if count > 0 {
                cells.push((gold, predicted, count));
            }
        }
    }
    cells.sort_by(|a, b| {
        b.2.cmp(&a.2)
            .then(a.0.index().cmp(&b.0.index()))
            .then(a.1.index().cmp(&b.1.index()))
    });
    cells.truncate(k);
    cells
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonCell {
    pub prompt_version: String,
    pub model_id: String,
    pub mcc: f64,
    pub macro_f1: f64,
    /// MCC delta against the previous prompt version for the same model.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTable {
    pub prompt_versions: Vec<String>,
    pub model_ids: Vec<String>,
    pub cells: Vec<ComparisonCell>,
}

/// Builds an MCC table keyed by (prompt version, model), with deltas
/// between consecutive prompt versions per model. Pure function of the
/// stored run metrics, nothing is recomputed.
pub fn compare_runs(runs: &[&RunRecord]) -> Result<ComparisonTable, ErrlabError> {
    let mut seen = std::collections::HashSet::new();
    for run in runs {
        if !seen.insert(run.run_id.clone()) {
            return Err(ErrlabError::DuplicateRunId(run.run_id.clone()));
        }
    }
    if runs.is_empty() {
        return Err(ErrlabError::EmptyRun);
    }

    let mut prompt_versions: Vec<String> = runs.iter().map(|r| r.prompt_version.clone()).collect();
    prompt_versions.sort();
    prompt_versions.dedup();
    let mut model_ids: Vec<String> = runs.iter().map(|r| r.model_id.clone()).collect();
    model_ids.sort();
    model_ids.dedup();

    let mut cells = Vec::new();
    for model in &model_ids {
        let mut previous: Option<f64> = None;
        for version in &prompt_versions {
            if let Some(run) = runs
                .iter()
                .find(|r| &r.prompt_version == version && &r.model_id == model)
            {
                cells.push(ComparisonCell {
                    prompt_version: version.clone(),
                    model_id: model.clone(),
                    mcc: run.metrics.mcc,
                    macro_f1: run.metrics.macro_f1,
                    delta: previous.map(|p| run.metrics.mcc - p),
                });
                previous = Some(run.metrics.mcc);
            }
        }
    }

    Ok(ComparisonTable {
        prompt_versions,
        model_ids,
        cells,
    })
}

impl ComparisonTable {
    pub fn cell(&self, prompt_version: &str, model_id: &str) -> Option<&ComparisonCell> {
        self.cells
            .iter()
            .find(|c| c.prompt_version == prompt_version && c.model_id == model_id)
    }

    /// Aligned plain-text table: rows are prompt versions, columns models.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<12}", "prompt");
        for model in &self.model_ids {
            let _ = write!(s, " {model:>16}");
        }
        s.push('\n');
        for version in &self.prompt_versions {
            let _ = write!(s, "{version:<12}");
            for model in &self.model_ids {
                match self.cell(version, model) {
                    Some(cell) => {
                        let delta = match cell.delta {
                            Some(d) => format!(" ({d:+.3})"),
                            None => String::new(),
                        };
                        let _ = write!(s, " {:>16}", format!("{:.3}{delta}", cell.mcc));
                    }
                    None => {
                        let _ = write!(s, " {:>16}", "-");
                    }
                }
            }
            s.push('\n');
        }
        s
    }

    /// Delimiter-separated twin of the text table.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("prompt_version,model_id,mcc,macro_f1,delta\n");
        for c in &self.cells {
            let delta = c.delta.map(|d| format!("{d:.6}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{}",
                c.prompt_version, c.model_id, c.mcc, c.macro_f1, delta
            );
        }
        s
    }
}
