//! Closed-vocabulary word category analysis.
//!
//! A [`Lexicon`] maps exact words and trailing-wildcard stems (`happ*`) to
//! one or more categories. [`analyze`] reports, for each category, the
//! percentage of tokens that hit it, together with surface statistics
//! (word count, words per sentence, type/token ratio, long-word share).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};
use thiserror::Error;

const DEMO_LEXICON: &str = include_str!("../data/demo.lex");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid lexicon: {0}")]
    Validation(String),
    #[error("cannot read lexicon {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Lowercased alphanumeric tokens plus the sentence count of the source text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Tokenized {
    pub tokens: Vec<String>,
    pub sentence_count: usize,
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Splits on every non-alphanumeric run and lowercases.
///
/// Sentences are the token-bearing segments between runs of `.`, `!` or `?`,
/// so `"site is down... down!"` has two.
pub fn tokenize(text: &str) -> Tokenized {
    let mut tokens = Vec::new();
    let mut sentence_count = 0;
    let mut current = String::new();
    let mut segment_has_token = false;

    let mut flush = |current: &mut String, segment_has_token: &mut bool| {
        if !current.is_empty() {
            tokens.push(std::mem::take(current));
            *segment_has_token = true;
        }
    };

    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else {
            flush(&mut current, &mut segment_has_token);
            if is_terminal(c) && segment_has_token {
                sentence_count += 1;
                segment_has_token = false;
            }
        }
    }
    flush(&mut current, &mut segment_has_token);
    if segment_has_token {
        sentence_count += 1;
    }
    Tokenized {
        tokens,
        sentence_count,
    }
}

/// A validated word/stem dictionary.
#[derive(Debug, Clone)]
pub struct Lexicon {
    name: String,
    categories: Vec<String>,
    entries: BTreeMap<String, BTreeSet<String>>,
    exact: HashMap<String, Vec<usize>>,
    stems: HashMap<String, Vec<usize>>,
    max_stem_chars: usize,
}

fn validate_pattern(pattern: &str) -> Result<(), String> {
    let stars = pattern.matches('*').count();
    if stars > 1 {
        return Err(format!("pattern {pattern:?}: multiple wildcards"));
    }
    let body = pattern.strip_suffix('*').unwrap_or(pattern);
    if body.contains('*') {
        return Err(format!("pattern {pattern:?}: wildcard must be the final character"));
    }
    if body.is_empty() {
        return Err("empty pattern".to_string());
    }
    if !body.chars().all(char::is_alphanumeric) {
        return Err(format!("pattern {pattern:?}: only alphanumeric characters may precede the wildcard"));
    }
    if body.chars().any(char::is_uppercase) {
        return Err(format!("pattern {pattern:?} is not lowercase"));
    }
    Ok(())
}

impl Lexicon {
    pub fn new<I, C>(
        name: impl Into<String>,
        categories: Vec<String>,
        entries: I,
    ) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = (String, C)>,
        C: IntoIterator<Item = String>,
    {
        let mut index_of = HashMap::new();
        for (i, c) in categories.iter().enumerate() {
            if c.is_empty() {
                return Err(LexiconError::Validation("empty category name".into()));
            }
            if index_of.insert(c.clone(), i).is_some() {
                return Err(LexiconError::Validation(format!("category {c:?} declared twice")));
            }
        }

        let mut lexicon = Lexicon {
            name: name.into(),
            categories,
            entries: BTreeMap::new(),
            exact: HashMap::new(),
            stems: HashMap::new(),
            max_stem_chars: 0,
        };
        for (pattern, cats) in entries {
            validate_pattern(&pattern).map_err(LexiconError::Validation)?;
            let cats: BTreeSet<String> = cats.into_iter().collect();
            if cats.is_empty() {
                return Err(LexiconError::Validation(format!("pattern {pattern:?} has no categories")));
            }
            let mut ids: Vec<usize> = Vec::with_capacity(cats.len());
            for c in &cats {
                match index_of.get(c) {
                    Some(&i) => ids.push(i),
                    None => {
                        return Err(LexiconError::Validation(format!(
                            "pattern {pattern:?} uses undeclared category {c:?}"
                        )))
                    }
                }
            }
            if lexicon.entries.contains_key(&pattern) {
                return Err(LexiconError::Validation(format!("duplicate pattern {pattern:?}")));
            }
            match pattern.strip_suffix('*') {
                Some(stem) => {
                    lexicon.max_stem_chars = lexicon.max_stem_chars.max(stem.chars().count());
                    lexicon.stems.insert(stem.to_string(), ids);
                }
                None => {
                    lexicon.exact.insert(pattern.clone(), ids);
                }
            }
            lexicon.entries.insert(pattern, cats);
        }
        Ok(lexicon)
    }

    /// The small open dictionary shipped with the crate.
    pub fn bundled_demo() -> Self {
        parse_lexicon("demo", DEMO_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn entries(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Category indices hit by one token, deduplicated and sorted.
    pub fn categories_of(&self, token: &str) -> Vec<usize> {
        let mut hits: Vec<usize> = Vec::new();
        if let Some(ids) = self.exact.get(token) {
            hits.extend_from_slice(ids);
        }
        if !self.stems.is_empty() {
            // every char-boundary prefix of the token, up to the longest stem
            for (n, (end, c)) in token.char_indices().enumerate() {
                if n >= self.max_stem_chars {
                    break;
                }
                let prefix = &token[..end + c.len_utf8()];
                if let Some(ids) = self.stems.get(prefix) {
                    hits.extend_from_slice(ids);
                }
            }
        }
        hits.sort_unstable();
        hits.dedup();
        hits
    }

    /// Per-category count of tokens hitting that category.
    pub fn count_categories(&self, tokens: &[String]) -> Vec<usize> {
        let mut counts = vec![0usize; self.categories.len()];
        for t in tokens {
            for c in self.categories_of(t) {
                counts[c] += 1;
            }
        }
        counts
    }
}

/// Surface statistics of a text.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TextStats {
    pub word_count: usize,
    pub words_per_sentence: f64,
    pub unique_pct: f64,
    pub six_letter_pct: f64,
}

/// Category name → percentage of tokens, in lexicon declaration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CategoryProfile {
    entries: Vec<(String, f64)>,
}

impl CategoryProfile {
    pub fn get(&self, category: &str) -> Option<f64> {
        self.entries.iter().find(|(c, _)| c == category).map(|(_, v)| *v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(c, v)| (c.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Serialize for CategoryProfile {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.entries.len()))?;
        for (c, v) in &self.entries {
            map.serialize_entry(c, v)?;
        }
        map.end()
    }
}

pub fn text_stats(tokenized: &Tokenized) -> TextStats {
    let wc = tokenized.tokens.len();
    if wc == 0 {
        return TextStats::default();
    }
    let sentences = tokenized.sentence_count.max(1);
    let unique: HashSet<&str> = tokenized.tokens.iter().map(String::as_str).collect();
    let long = tokenized
        .tokens
        .iter()
        .filter(|t| t.chars().count() >= 6)
        .count();
    TextStats {
        word_count: wc,
        words_per_sentence: wc as f64 / sentences as f64,
        unique_pct: 100.0 * unique.len() as f64 / wc as f64,
        six_letter_pct: 100.0 * long as f64 / wc as f64,
    }
}

pub fn analyze(text: &str, lexicon: &Lexicon) -> (TextStats, CategoryProfile) {
    let tokenized = tokenize(text);
    let stats = text_stats(&tokenized);
    let counts = lexicon.count_categories(&tokenized.tokens);
    let wc = tokenized.tokens.len();
    let entries = lexicon
        .categories
        .iter()
        .zip(counts)
        .map(|(c, n)| {
            let pct = if wc == 0 { 0.0 } else { 100.0 * n as f64 / wc as f64 };
            (c.clone(), pct)
        })
        .collect();
    (stats, CategoryProfile { entries })
}

/// Parses the lexicon text format:
///
/// ```text
/// %categories: posemo,negemo
/// # comment
/// happ*  posemo
/// sad    negemo
/// ```
pub fn parse_lexicon(name: &str, text: &str) -> Result<Lexicon, LexiconError> {
    let mut categories: Option<Vec<String>> = None;
    let mut entries: Vec<(String, Vec<String>)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("%categories:") {
            if categories.is_some() {
                return Err(LexiconError::Parse {
                    line: line_no,
                    message: "repeated %categories header".into(),
                });
            }
            categories = Some(
                rest.split(',')
                    .map(|c| c.trim().to_lowercase())
                    .filter(|c| !c.is_empty())
                    .collect(),
            );
            continue;
        }
        if categories.is_none() {
            return Err(LexiconError::Parse {
                line: line_no,
                message: "entry before %categories header".into(),
            });
        }
        let mut parts = line.splitn(2, char::is_whitespace);
        let pattern = parts.next().unwrap_or("").to_lowercase();
        let cats: Vec<String> = parts
            .next()
            .unwrap_or("")
            .split(',')
            .map(|c| c.trim().to_lowercase())
            .filter(|c| !c.is_empty())
            .collect();
        if cats.is_empty() {
            return Err(LexiconError::Parse {
                line: line_no,
                message: format!("pattern {pattern:?} has no categories"),
            });
        }
        validate_pattern(&pattern).map_err(|message| LexiconError::Parse {
            line: line_no,
            message,
        })?;
        entries.push((pattern, cats));
    }

    let categories = categories.ok_or_else(|| LexiconError::Parse {
        line: 0,
        message: "missing %categories header".into(),
    })?;
    Lexicon::new(name, categories, entries)
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon, LexiconError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "lexicon".into());
    parse_lexicon(&name, &text)
}

impl fmt::Display for Lexicon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "%categories: {}", self.categories.join(","))?;
        for (pattern, cats) in &self.entries {
            let cats: Vec<&str> = cats.iter().map(String::as_str).collect();
            writeln!(f, "{pattern} {}", cats.join(","))?;
        }
        Ok(())
    }
}
