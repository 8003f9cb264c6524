//! Big Five trait scoring.
//!
//! Two routes produce a [`TraitVector`]: linear models over named
//! psycholinguistic features ([`TraitModel`], scored by
//! [`score_trait_linear`]) and Likert questionnaires with reverse-keyed items
//! ([`QuestionnaireDef`], scored by [`score_questionnaire`]).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{CategoryProfile, TextStats};

const BUNDLED_QUESTIONNAIRE: &str = include_str!("../data/questionnaire.txt");

#[derive(Debug, Error, PartialEq)]
pub enum TraitError {
    #[error("missing features for {trait_name}: {}", missing.join(", "))]
    MissingFeatures {
        trait_name: Trait,
        missing: Vec<String>,
    },
    #[error("no model for trait {0}")]
    NoModel(Trait),
    #[error("unknown trait {0:?}")]
    UnknownTrait(String),
    #[error("expected {expected} responses, got {got}")]
    ResponseCount { expected: usize, got: usize },
    #[error("item {index}: response {value} outside {lo}..={hi}")]
    OutOfRange {
        index: usize,
        value: i64,
        lo: i64,
        hi: i64,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid definition: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trait {
    Openness,
    Conscientiousness,
    Extraversion,
    Agreeableness,
    Neuroticism,
}

impl Trait {
    pub const ALL: [Trait; 5] = [
        Trait::Openness,
        Trait::Conscientiousness,
        Trait::Extraversion,
        Trait::Agreeableness,
        Trait::Neuroticism,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Trait::Openness => "openness",
            Trait::Conscientiousness => "conscientiousness",
            Trait::Extraversion => "extraversion",
            Trait::Agreeableness => "agreeableness",
            Trait::Neuroticism => "neuroticism",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Trait {
    type Err = TraitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "openness" | "o" => Ok(Trait::Openness),
            "conscientiousness" | "c" => Ok(Trait::Conscientiousness),
            "extraversion" | "e" => Ok(Trait::Extraversion),
            "agreeableness" | "a" => Ok(Trait::Agreeableness),
            "neuroticism" | "n" => Ok(Trait::Neuroticism),
            other => Err(TraitError::UnknownTrait(other.to_string())),
        }
    }
}

/// Big Five scores, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TraitVector {
    pub openness: f64,
    pub conscientiousness: f64,
    pub extraversion: f64,
    pub agreeableness: f64,
    pub neuroticism: f64,
}

impl TraitVector {
    pub fn get(&self, t: Trait) -> f64 {
        self.as_array()[t.index()]
    }

    pub fn as_array(&self) -> [f64; 5] {
        [
            self.openness,
            self.conscientiousness,
            self.extraversion,
            self.agreeableness,
            self.neuroticism,
        ]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        TraitVector {
            openness: v[0],
            conscientiousness: v[1],
            extraversion: v[2],
            agreeableness: v[3],
            neuroticism: v[4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawScale {
    pub min: f64,
    pub max: f64,
}

impl Default for RawScale {
    fn default() -> Self {
        RawScale { min: 1.0, max: 7.0 }
    }
}

/// Linear model for one trait: `intercept + Σ coefficient · feature`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearTraitModel {
    pub intercept: f64,
    pub terms: Vec<(String, f64)>,
    pub raw_scale: RawScale,
}

impl LinearTraitModel {
    pub fn new(intercept: f64, terms: Vec<(String, f64)>, raw_scale: RawScale) -> Result<Self, TraitError> {
        let mut seen = HashSet::new();
        for (name, _) in &terms {
            if !seen.insert(name.as_str()) {
                return Err(TraitError::Invalid(format!("feature {name} listed twice")));
            }
        }
        if raw_scale.min.partial_cmp(&raw_scale.max) != Some(std::cmp::Ordering::Less) {
            return Err(TraitError::Invalid(format!(
                "raw scale min {} must be below max {}",
                raw_scale.min, raw_scale.max
            )));
        }
        Ok(LinearTraitModel {
            intercept,
            terms,
            raw_scale,
        })
    }
}

/// Per-trait linear models. Traits without a model are simply absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraitModel {
    models: BTreeMap<Trait, LinearTraitModel>,
}

impl TraitModel {
    pub fn insert(&mut self, t: Trait, model: LinearTraitModel) {
        self.models.insert(t, model);
    }

    pub fn get(&self, t: Trait) -> Option<&LinearTraitModel> {
        self.models.get(&t)
    }

    pub fn traits(&self) -> impl Iterator<Item = Trait> + '_ {
        self.models.keys().copied()
    }

    /// Extraversion as a linear model over MRC and LIWC features.
    pub fn extraversion_default() -> Self {
        let terms = vec![
            ("MRC.K_F_NSAMP".to_string(), -0.0379),
            ("LIWC.UNIQUE".to_string(), -0.0803),
            ("LIWC.ABBREVIATIONS".to_string(), -0.6074),
            ("LIWC.PRONOUN".to_string(), 0.1445),
            ("LIWC.HEARING".to_string(), -0.3941),
        ];
        let mut m = TraitModel::default();
        m.insert(
            Trait::Extraversion,
            LinearTraitModel::new(17.1407, terms, RawScale::default()).expect("static model"),
        );
        m
    }
}

/// Parses a coefficient file:
///
/// ```text
/// trait extraversion
/// intercept 17.1407
/// scale 1 7
/// term LIWC.UNIQUE -0.0803
/// ```
pub fn parse_trait_model(text: &str) -> Result<TraitModel, TraitError> {
    struct Pending {
        t: Trait,
        intercept: Option<f64>,
        terms: Vec<(String, f64)>,
        scale: RawScale,
    }
    fn finish(model: &mut TraitModel, p: Pending) -> Result<(), TraitError> {
        let intercept = p
            .intercept
            .ok_or_else(|| TraitError::Invalid(format!("trait {} has no intercept", p.t)))?;
        if model.get(p.t).is_some() {
            return Err(TraitError::Invalid(format!("trait {} defined twice", p.t)));
        }
        model.insert(p.t, LinearTraitModel::new(intercept, p.terms, p.scale)?);
        Ok(())
    }

    let mut model = TraitModel::default();
    let mut pending: Option<Pending> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_num = |s: &str| {
            s.parse::<f64>().map_err(|_| TraitError::Parse {
                line: line_no,
                message: format!("not a number: {s:?}"),
            })
        };
        let bad = |message: &str| TraitError::Parse {
            line: line_no,
            message: message.to_string(),
        };
        match fields.as_slice() {
            ["trait", name] => {
                if let Some(p) = pending.take() {
                    finish(&mut model, p)?;
                }
                let t = name.parse().map_err(|e: TraitError| bad(&e.to_string()))?;
                pending = Some(Pending {
                    t,
                    intercept: None,
                    terms: Vec::new(),
                    scale: RawScale::default(),
                });
            }
            ["intercept", v] => {
                let p = pending.as_mut().ok_or_else(|| bad("intercept before trait"))?;
                p.intercept = Some(parse_num(v)?);
            }
            ["term", feature, coef] => {
                let p = pending.as_mut().ok_or_else(|| bad("term before trait"))?;
                p.terms.push((feature.to_string(), parse_num(coef)?));
            }
            ["scale", lo, hi] => {
                let p = pending.as_mut().ok_or_else(|| bad("scale before trait"))?;
                p.scale = RawScale {
                    min: parse_num(lo)?,
                    max: parse_num(hi)?,
                };
            }
            _ => return Err(bad(&format!("unrecognised line {line:?}"))),
        }
    }
    if let Some(p) = pending.take() {
        finish(&mut model, p)?;
    }
    Ok(model)
}

pub fn load_trait_model(path: impl AsRef<Path>) -> Result<TraitModel, TraitError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| TraitError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_trait_model(&text)
}

pub fn score_trait_linear(
    features: &HashMap<String, f64>,
    model: &TraitModel,
    t: Trait,
) -> Result<f64, TraitError> {
    let m = model.get(t).ok_or(TraitError::NoModel(t))?;
    let missing: Vec<String> = m
        .terms
        .iter()
        .filter(|(name, _)| !features.contains_key(name))
        .map(|(name, _)| name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(TraitError::MissingFeatures {
            trait_name: t,
            missing,
        });
    }
    Ok(m.terms
        .iter()
        .fold(m.intercept, |acc, (name, coef)| acc + coef * features[name]))
}

pub fn normalize_trait(raw: f64, scale: RawScale) -> f64 {
    ((raw - scale.min) / (scale.max - scale.min)).clamp(0.0, 1.0)
}

/// Feature map keyed `LIWC.<NAME>` from a text analysis: the four surface
/// statistics plus every lexicon category, uppercased.
pub fn liwc_features(stats: &TextStats, profile: &CategoryProfile) -> HashMap<String, f64> {
    let mut f = HashMap::new();
    f.insert("LIWC.WC".to_string(), stats.word_count as f64);
    f.insert("LIWC.WPS".to_string(), stats.words_per_sentence);
    f.insert("LIWC.UNIQUE".to_string(), stats.unique_pct);
    f.insert("LIWC.SIXLTR".to_string(), stats.six_letter_pct);
    for (c, v) in profile.iter() {
        f.insert(format!("LIWC.{}", c.to_uppercase()), v);
    }
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionItem {
    pub prompt: String,
    pub trait_name: Trait,
    pub reversed: bool,
}

/// Ordered Likert items with their keyed trait and reversal flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireDef {
    items: Vec<QuestionItem>,
    lo: i64,
    hi: i64,
}

impl QuestionnaireDef {
    pub fn new(items: Vec<QuestionItem>, lo: i64, hi: i64) -> Result<Self, TraitError> {
        if lo >= hi {
            return Err(TraitError::Invalid(format!("scale {lo}..={hi} is empty")));
        }
        for t in Trait::ALL {
            if !items.iter().any(|i| i.trait_name == t) {
                return Err(TraitError::Invalid(format!("no item keyed to {t}")));
            }
        }
        Ok(QuestionnaireDef { items, lo, hi })
    }

    /// The 50-item public-domain IPIP Big Five marker set on a 1–5 scale.
    pub fn bundled() -> Self {
        parse_questionnaire(BUNDLED_QUESTIONNAIRE).expect("bundled questionnaire is valid")
    }

    pub fn items(&self) -> &[QuestionItem] {
        &self.items
    }

    pub fn scale(&self) -> (i64, i64) {
        (self.lo, self.hi)
    }

    pub fn reverse(&self, response: i64) -> i64 {
        self.lo + self.hi - response
    }
}

/// One `prompt|trait|R?` line per item; `R` marks reverse keying.
pub fn parse_questionnaire(text: &str) -> Result<QuestionnaireDef, TraitError> {
    let mut items = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split('|').collect();
        let bad = |message: String| TraitError::Parse {
            line: i + 1,
            message,
        };
        let (prompt, t, flag) = match parts.as_slice() {
            [p, t] => (*p, *t, ""),
            [p, t, f] => (*p, *t, *f),
            _ => return Err(bad(format!("expected prompt|trait|R?, got {line:?}"))),
        };
        let reversed = match flag.trim() {
            "" => false,
            "R" | "r" => true,
            other => return Err(bad(format!("unknown flag {other:?}"))),
        };
        items.push(QuestionItem {
            prompt: prompt.trim().to_string(),
            trait_name: t.parse().map_err(|e: TraitError| bad(e.to_string()))?,
            reversed,
        });
    }
    QuestionnaireDef::new(items, 1, 5)
}

pub fn load_questionnaire(path: impl AsRef<Path>) -> Result<QuestionnaireDef, TraitError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| TraitError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_questionnaire(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireScore {
    /// Normalized to `[0, 1]`.
    pub traits: TraitVector,
    /// Mean item score per trait on the questionnaire's own scale.
    pub raw: TraitVector,
}

pub fn score_questionnaire(
    responses: &[i64],
    def: &QuestionnaireDef,
) -> Result<QuestionnaireScore, TraitError> {
    if responses.len() != def.items.len() {
        return Err(TraitError::ResponseCount {
            expected: def.items.len(),
            got: responses.len(),
        });
    }
    let mut totals = [0i64; 5];
    let mut counts = [0usize; 5];
    for (index, (item, &r)) in def.items.iter().zip(responses).enumerate() {
        if r < def.lo || r > def.hi {
            return Err(TraitError::OutOfRange {
                index,
                value: r,
                lo: def.lo,
                hi: def.hi,
            });
        }
        let score = if item.reversed { def.reverse(r) } else { r };
        totals[item.trait_name.index()] += score;
        counts[item.trait_name.index()] += 1;
    }
    let span = (def.hi - def.lo) as f64;
    let mut raw = [0.0; 5];
    let mut norm = [0.0; 5];
    for k in 0..5 {
        raw[k] = totals[k] as f64 / counts[k] as f64;
        norm[k] = (raw[k] - def.lo as f64) / span;
    }
    Ok(QuestionnaireScore {
        traits: TraitVector::from_array(norm),
        raw: TraitVector::from_array(raw),
    })
}
