//! The closed 12-category classification schema: category definitions,
//! the harmfulness predicate, and label canonicalization including the
//! rename lineage (Victim Blaming -> Deflection -> Dismissing).

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The 12 canonical categories, in the fixed canonical order used for
/// confusion-matrix axes and tie-breaking. Neutral is last so that a
/// harmful label wins an exact confidence tie against Neutral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Discredit,
    Stereotyping,
    SexualHarassment,
    ThreatsOfViolence,
    MaternalInsults,
    SexualObjectification,
    AntiLGBTQ,
    PhysicalAppearance,
    Dominance,
    Damning,
    Dismissing,
    Neutral,
}

impl Category {
    pub const COUNT: usize = 12;

    /// All categories in canonical order.
    pub const ALL: [Category; Category::COUNT] = [
        Category::Discredit,
        Category::Stereotyping,
        Category::SexualHarassment,
        Category::ThreatsOfViolence,
        Category::MaternalInsults,
        Category::SexualObjectification,
        Category::AntiLGBTQ,
        Category::PhysicalAppearance,
        Category::Dominance,
        Category::Damning,
        Category::Dismissing,
        Category::Neutral,
    ];

    /// Stable machine name (no spaces or punctuation).
    pub fn canonical_name(self) -> &'static str {
        match self {
            Category::Discredit => "Discredit",
            Category::Stereotyping => "Stereotyping",
            Category::SexualHarassment => "SexualHarassment",
            Category::ThreatsOfViolence => "ThreatsOfViolence",
            Category::MaternalInsults => "MaternalInsults",
            Category::SexualObjectification => "SexualObjectification",
            Category::AntiLGBTQ => "AntiLGBTQ",
            Category::PhysicalAppearance => "PhysicalAppearance",
            Category::Dominance => "Dominance",
            Category::Damning => "Damning",
            Category::Dismissing => "Dismissing",
            Category::Neutral => "Neutral",
        }
    }

    /// Index into the canonical order; doubles as the matrix axis index.
    pub fn index(self) -> usize {
        Category::ALL.iter().position(|c| *c == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<Category> {
        Category::ALL.get(i).copied()
    }

    /// Everything except Neutral counts as a harmful form.
    pub fn is_harmful(self) -> bool {
        self != Category::Neutral
    }

    fn from_canonical(name: &str) -> Option<Category> {
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.canonical_name() == name)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical_name())
    }
}

/// One category's definition, behavioral cues, and alias history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryDef {
    pub category: Category,
    pub display_name: String,
    pub definition: String,
    #[serde(default)]
    pub cues: Vec<String>,
    #[serde(default)]
    pub aliases: Vec<String>,
}

/// The validated, ordered set of all 12 category definitions.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    defs: Vec<CategoryDef>,
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("failed to read taxonomy file {path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("taxonomy schema error: {0}")]
    Schema(String),
    #[error("unknown label: {0:?}")]
    UnknownLabel(String),
}

#[derive(Debug, Deserialize)]
struct SchemaFile {
    category: Vec<SchemaRecord>,
}

#[derive(Debug, Deserialize)]
struct SchemaRecord {
    canonical_name: String,
    display_name: String,
    definition: String,
    #[serde(default)]
    cues: Vec<String>,
    #[serde(default)]
    aliases: Vec<String>,
}

/// The bundled default schema file (shipped alongside the crate).
pub const DEFAULT_SCHEMA: &str = include_str!("../assets/taxonomy.toml");

impl Taxonomy {
    /// The bundled 12-category taxonomy. Panics only if the bundled asset
    /// is broken, which the test suite guards against.
    pub fn bundled() -> Taxonomy {
        Taxonomy::from_toml(DEFAULT_SCHEMA).expect("bundled taxonomy schema is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Taxonomy, TaxonomyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::File {
            path: path.display().to_string(),
            source,
        })?;
        Taxonomy::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Taxonomy, TaxonomyError> {
        let file: SchemaFile =
            toml::from_str(text).map_err(|e| TaxonomyError::Schema(e.to_string()))?;

        let mut defs: Vec<Option<CategoryDef>> = vec![None; Category::COUNT];
        for rec in file.category {
            let category = Category::from_canonical(&rec.canonical_name).ok_or_else(|| {
                TaxonomyError::Schema(format!("unknown category {:?}", rec.canonical_name))
            })?;
            if rec.definition.trim().is_empty() {
                return Err(TaxonomyError::Schema(format!(
                    "empty definition for {category}"
                )));
            }
            let slot = &mut defs[category.index()];
            if slot.is_some() {
                return Err(TaxonomyError::Schema(format!(
                    "duplicate category {category}"
                )));
            }
            *slot = Some(CategoryDef {
                category,
                display_name: rec.display_name,
                definition: rec.definition,
                cues: rec.cues,
                aliases: rec.aliases,
            });
        }

        let mut out = Vec::with_capacity(Category::COUNT);
        for (i, slot) in defs.into_iter().enumerate() {
            match slot {
                Some(def) => out.push(def),
                None => {
                    return Err(TaxonomyError::Schema(format!(
                        "missing category {}",
                        Category::from_index(i).unwrap()
                    )))
                }
            }
        }

        // Alias disjointness across categories, case-folded.
        let mut seen: HashSet<String> = HashSet::new();
        for def in &out {
            for alias in &def.aliases {
                let key = alias.trim().to_lowercase();
                if !seen.insert(key) {
                    return Err(TaxonomyError::Schema(format!(
                        "duplicate alias {alias:?} (aliases must map to exactly one category)"
                    )));
                }
            }
        }

        Ok(Taxonomy { defs: out })
    }

    /// All 12 defs in canonical order.
    pub fn defs(&self) -> &[CategoryDef] {
        &self.defs
    }

    pub fn def(&self, category: Category) -> &CategoryDef {
        &self.defs[category.index()]
    }

    /// Maps a raw label to its Category: trims, compares case-insensitively
    /// against canonical names, display names, and aliases.
    pub fn canonicalize_label(&self, raw: &str) -> Result<Category, TaxonomyError> {
        let needle = raw.trim().to_lowercase();
        for def in &self.defs {
            if def.category.canonical_name().to_lowercase() == needle
                || def.display_name.to_lowercase() == needle
            {
                return Ok(def.category);
            }
            if def.aliases.iter().any(|a| a.trim().to_lowercase() == needle) {
                return Ok(def.category);
            }
        }
        Err(TaxonomyError::UnknownLabel(raw.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_schema_has_twelve_defs_in_canonical_order() {
        let tax = Taxonomy::bundled();
        assert_eq!(tax.defs().len(), 12);
        for (i, def) in tax.defs().iter().enumerate() {
            assert_eq!(def.category.index(), i);
        }
    }

    #[test]
    fn exactly_one_category_is_non_harmful() {
        let harmful = Category::ALL.iter().filter(|c| c.is_harmful()).count();
        assert_eq!(harmful, 11);
        assert!(!Category::Neutral.is_harmful());
        assert!(Category::AntiLGBTQ.is_harmful());
        assert!(Category::Dismissing.is_harmful());
    }

    #[test]
    fn canonicalize_rename_lineage() {
        let tax = Taxonomy::bundled();
        assert_eq!(
            tax.canonicalize_label("Victim Blaming").unwrap(),
            Category::Dismissing
        );
        assert_eq!(
            tax.canonicalize_label("Deflection").unwrap(),
            Category::Dismissing
        );
        assert_eq!(tax.canonicalize_label("none").unwrap(), Category::Neutral);
        assert_eq!(
            tax.canonicalize_label("Anti-LGBTQ+").unwrap(),
            Category::AntiLGBTQ
        );
    }

    #[test]
    fn canonicalize_trims_and_casefolds() {
        let tax = Taxonomy::bundled();
        assert_eq!(
            tax.canonicalize_label("  dismissing ").unwrap(),
            Category::Dismissing
        );
        assert_eq!(
            tax.canonicalize_label("sexual harassment").unwrap(),
            Category::SexualHarassment
        );
    }

    #[test]
    fn canonicalize_is_idempotent_on_canonical_names() {
        let tax = Taxonomy::bundled();
        for c in Category::ALL {
            assert_eq!(tax.canonicalize_label(c.canonical_name()).unwrap(), c);
        }
    }

    #[test]
    fn excluded_source_categories_are_unknown() {
        let tax = Taxonomy::bundled();
        assert!(matches!(
            tax.canonicalize_label("sexual reference"),
            Err(TaxonomyError::UnknownLabel(_))
        ));
        assert!(matches!(
            tax.canonicalize_label("Others"),
            Err(TaxonomyError::UnknownLabel(_))
        ));
        assert!(matches!(
            tax.canonicalize_label("Derailing"),
            Err(TaxonomyError::UnknownLabel(_))
        ));
    }

    #[test]
    fn missing_category_is_rejected() {
        let trimmed: String = DEFAULT_SCHEMA
            .split("[[category]]")
            .filter(|block| !block.contains("\"Dominance\""))
            .collect::<Vec<_>>()
            .join("[[category]]");
        let err = Taxonomy::from_toml(&trimmed).unwrap_err();
        match err {
            TaxonomyError::Schema(msg) => assert!(msg.contains("Dominance"), "{msg}"),
            other => panic!("expected SchemaError, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_alias_is_rejected() {
        let doctored = DEFAULT_SCHEMA.replace(
            "aliases = [\"Victim Blaming\", \"Deflection\"]",
            "aliases = [\"Victim Blaming\", \"Deflection\", \"None\"]",
        );
        assert_ne!(doctored, DEFAULT_SCHEMA);
        let err = Taxonomy::from_toml(&doctored).unwrap_err();
        assert!(matches!(err, TaxonomyError::Schema(_)), "{err:?}");
    }
}
