//! Removal of boilerplate that chat models wrap around translations.
//!
//! Rules come from a TOML catalog of anchored templates, each with exactly
//! one `{payload}` slot. Scrubbing applies prefix rules, then suffix rules,
//! then wrap rules, and repeats until nothing changes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LanguagePair;
use crate::runner::TranslationRecord;

pub const MAX_PASSES: usize = 10;
const DEFAULT_CATALOG: &str = include_str!("default_catalog.toml");

#[derive(Debug, Error)]
pub enum PostEditError {
    #[error("cannot scrub an empty completion")]
    EmptyInput,
    #[error("catalog {path}: {message}")]
    Catalog { path: PathBuf, message: String },
    #[error("rule `{id}`: {message}")]
    InvalidRule { id: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    Prefix,
    Suffix,
    Wrap,
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuleKind::Prefix => "prefix",
            RuleKind::Suffix => "suffix",
            RuleKind::Wrap => "wrap",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScrubRule {
    pub id: String,
    /// Restricts the rule to one direction, written `src-tgt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<String>,
    pub kind: RuleKind,
    pub template: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Piece<'a> {
    Text(&'a str),
    Payload,
    Any,
    Tgt,
}

fn pieces(template: &str) -> Result<Vec<Piece<'_>>, String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            out.push(Piece::Text(&rest[..open]));
        }
        let close = rest[open..].find('}').ok_or("unclosed `{`")? + open;
        out.push(match &rest[open + 1..close] {
            "payload" => Piece::Payload,
            "any" => Piece::Any,
            "tgt" => Piece::Tgt,
            other => return Err(format!("unknown slot `{{{other}}}`")),
        });
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        out.push(Piece::Text(rest));
    }
    Ok(out)
}

impl ScrubRule {
    pub fn validate(&self) -> Result<(), PostEditError> {
        let err = |message: String| PostEditError::InvalidRule { id: self.id.clone(), message };
        if self.id.trim().is_empty() {
            return Err(err("empty id".into()));
        }
        let pieces = pieces(&self.template).map_err(err)?;
        let payloads = pieces.iter().filter(|p| **p == Piece::Payload).count();
        if payloads != 1 {
            return Err(err(format!("template needs exactly one {{payload}}, found {payloads}")));
        }
        if !pieces.iter().any(|p| matches!(p, Piece::Text(t) if !t.trim().is_empty())) {
            return Err(err("template has no literal text to anchor on".into()));
        }
        let starts = pieces.first() == Some(&Piece::Payload);
        let ends = pieces.last() == Some(&Piece::Payload);
        let shape_ok = match self.kind {
            RuleKind::Prefix => ends && !starts,
            RuleKind::Suffix => starts && !ends,
            RuleKind::Wrap => !starts && !ends,
        };
        if !shape_ok {
            return Err(err(format!("template shape does not match kind {}", self.kind)));
        }
        Ok(())
    }

    fn applies_to(&self, pair: &LanguagePair) -> bool {
        self.direction.as_deref().is_none_or(|d| d == pair.direction())
    }

    /// Anchored, case-insensitive regex with the payload in group 1.
    fn compile(&self, tgt_name: &str) -> Regex {
        let pieces = pieces(&self.template).expect("validated");
        let mut pattern = String::from("(?is)^");
        for (i, piece) in pieces.iter().enumerate() {
            match piece {
                Piece::Payload => pattern.push_str("(.+?)"),
                Piece::Any => pattern.push_str(".*?"),
                Piece::Tgt => pattern.push_str(&regex::escape(tgt_name)),
                Piece::Text(text) => {
                    let before_any = pieces.get(i + 1) == Some(&Piece::Any) && i + 2 == pieces.len();
                    let after_any = i == 1 && pieces[0] == Piece::Any;
                    push_literal(&mut pattern, text, after_any, before_any);
                }
            }
        }
        pattern.push('$');
        Regex::new(&pattern).expect("escaped template compiles")
    }
}

/// Escapes `text`, matching each whitespace run with `\s+`. Whitespace next
/// to a leading or trailing `{any}` becomes optional.
fn push_literal(pattern: &mut String, text: &str, optional_lead: bool, optional_trail: bool) {
    let mut chunks = Vec::new();
    let mut word = String::new();
    let mut in_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            if !in_space {
                if !word.is_empty() {
                    chunks.push(regex::escape(&word));
                    word.clear();
                }
                chunks.push(String::new());
                in_space = true;
            }
        } else {
            word.push(c);
            in_space = false;
        }
    }
    if !word.is_empty() {
        chunks.push(regex::escape(&word));
    }
    let last = chunks.len().saturating_sub(1);
    for (i, chunk) in chunks.iter().enumerate() {
        if chunk.is_empty() {
            let optional = (i == 0 && optional_lead) || (i == last && optional_trail);
            pattern.push_str(if optional { r"\s*" } else { r"\s+" });
        } else {
            pattern.push_str(chunk);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    #[serde(rename = "rule", default)]
    pub rules: Vec<ScrubRule>,
}

impl Catalog {
    pub fn parse(text: &str, path: &Path) -> Result<Catalog, PostEditError> {
        let catalog: Catalog = toml::from_str(text)
            .map_err(|e| PostEditError::Catalog { path: path.to_path_buf(), message: e.to_string() })?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn load(path: &Path) -> Result<Catalog, PostEditError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PostEditError::Catalog { path: path.to_path_buf(), message: e.to_string() })?;
        Catalog::parse(&text, path)
    }

    pub fn validate(&self) -> Result<(), PostEditError> {
        let mut seen = HashSet::new();
        for rule in &self.rules {
            rule.validate()?;
            if !seen.insert(rule.id.as_str()) {
                return Err(PostEditError::InvalidRule { id: rule.id.clone(), message: "duplicate id".into() });
            }
        }
        Ok(())
    }

    /// Compiles the rules that apply to `pair`, grouped by kind.
    pub fn compile(&self, pair: &LanguagePair) -> CompiledCatalog {
        let mut rules = Vec::new();
        for kind in [RuleKind::Prefix, RuleKind::Suffix, RuleKind::Wrap] {
            for rule in self.rules.iter().filter(|r| r.kind == kind && r.applies_to(pair)) {
                rules.push((rule.id.clone(), rule.compile(&pair.tgt_name)));
            }
        }
        CompiledCatalog { rules }
    }
}

/// The built-in catalog.
pub fn default_catalog() -> Catalog {
    Catalog::parse(DEFAULT_CATALOG, Path::new("<built-in>")).expect("built-in catalog is valid")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrubResult {
    pub text: String,
    pub edited: bool,
    pub rules_fired: Vec<String>,
}

/// Rules of a catalog specialised to one language pair.
#[derive(Debug, Clone)]
pub struct CompiledCatalog {
    rules: Vec<(String, Regex)>,
}

impl CompiledCatalog {
    pub fn scrub(&self, raw: &str) -> Result<ScrubResult, PostEditError> {
        if raw.trim().is_empty() {
            return Err(PostEditError::EmptyInput);
        }
        let mut text = raw.trim().to_string();
        let mut fired = Vec::new();
        for _ in 0..MAX_PASSES {
            let mut changed = false;
            for (id, re) in &self.rules {
                let Some(caps) = re.captures(&text) else { continue };
                let payload = caps[1].trim();
                if payload.is_empty() {
                    continue;
                }
                text = payload.to_string();
                fired.push(id.clone());
                changed = true;
            }
            if !changed {
                break;
            }
        }
        if fired.is_empty() {
            return Ok(ScrubResult { text: raw.to_string(), edited: false, rules_fired: fired });
        }
        Ok(ScrubResult { text, edited: true, rules_fired: fired })
    }
}

pub fn scrub(raw: &str, pair: &LanguagePair, catalog: &Catalog) -> Result<ScrubResult, PostEditError> {
    catalog.compile(pair).scrub(raw)
}

/// Number of edited records per direction.
pub fn count_edits<'a>(records: impl IntoIterator<Item = &'a TranslationRecord>) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        if r.edited {
            *counts.entry(r.direction.clone()).or_insert(0) += 1;
        }
    }
    counts
}
