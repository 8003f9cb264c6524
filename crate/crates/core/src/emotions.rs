//! Five-emotion vectors from lexicon counts.
//!
//! Every emotion word hit is counted per category; the vector is the count
//! share of each emotion. Texts with no emotion words score uniformly so the
//! components always sum to one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{parse_lexicon, tokenize, Lexicon};

const BUNDLED_EMOTIONS: &str = include_str!("../data/emotions.lex");

#[derive(Debug, Error, PartialEq)]
pub enum EmotionError {
    #[error("emotion lexicon uses non-emotion category {0:?}")]
    ForeignCategory(String),
    #[error("cannot score an empty group")]
    EmptyGroup,
    #[error("{0} intensity {1} is not a finite nonnegative number")]
    InvalidIntensity(Emotion, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Anger,
    Disgust,
    Fear,
    Joy,
    Sadness,
}

impl Emotion {
    pub const ALL: [Emotion; 5] = [
        Emotion::Anger,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Joy,
        Emotion::Sadness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Anger => "anger",
            Emotion::Disgust => "disgust",
            Emotion::Fear => "fear",
            Emotion::Joy => "joy",
            Emotion::Sadness => "sadness",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Emotion::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown emotion {s:?}"))
    }
}

/// Five emotion intensities summing to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmotionVector {
    pub anger: f64,
    pub disgust: f64,
    pub fear: f64,
    pub joy: f64,
    pub sadness: f64,
}

impl EmotionVector {
    pub const UNIFORM: EmotionVector = EmotionVector {
        anger: 0.2,
        disgust: 0.2,
        fear: 0.2,
        joy: 0.2,
        sadness: 0.2,
    };

    /// Scales nonnegative intensities to unit sum; all-zero input is uniform.
    pub fn normalize(raw: [f64; 5]) -> Result<Self, EmotionError> {
        for (e, v) in Emotion::ALL.into_iter().zip(raw) {
            if !v.is_finite() || v < 0.0 {
                return Err(EmotionError::InvalidIntensity(e, v));
            }
        }
        let total: f64 = raw.iter().sum();
        if total == 0.0 {
            return Ok(Self::UNIFORM);
        }
        Ok(Self::from_array(raw.map(|v| v / total)))
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        EmotionVector {
            anger: v[0],
            disgust: v[1],
            fear: v[2],
            joy: v[3],
            sadness: v[4],
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.anger, self.disgust, self.fear, self.joy, self.sadness]
    }

    pub fn get(&self, e: Emotion) -> f64 {
        self.as_array()[e as usize]
    }

    pub fn sum(&self) -> f64 {
        self.as_array().iter().sum()
    }
}

/// A [`Lexicon`] whose categories are a subset of the five emotions.
#[derive(Debug, Clone)]
pub struct EmotionLexicon {
    lexicon: Lexicon,
    // lexicon category index -> emotion slot
    slots: Vec<usize>,
}

impl EmotionLexicon {
    pub fn new(lexicon: Lexicon) -> Result<Self, EmotionError> {
        let slots = lexicon
            .categories()
            .iter()
            .map(|c| {
                c.parse::<Emotion>()
                    .map(|e| e as usize)
                    .map_err(|_| EmotionError::ForeignCategory(c.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EmotionLexicon { lexicon, slots })
    }

    pub fn bundled() -> Self {
        let lex = parse_lexicon("emotions", BUNDLED_EMOTIONS).expect("bundled emotion lexicon is valid");
        Self::new(lex).expect("bundled emotion lexicon uses emotion categories")
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    /// Raw per-emotion hit counts.
    pub fn counts(&self, text: &str) -> [usize; 5] {
        let tokens = tokenize(text).tokens;
        let mut out = [0usize; 5];
        for (cat, n) in self.lexicon.count_categories(&tokens).into_iter().enumerate() {
            out[self.slots[cat]] += n;
        }
        out
    }
}

pub fn score_emotions(text: &str, lexicon: &EmotionLexicon) -> EmotionVector {
    let counts = lexicon.counts(text);
    EmotionVector::normalize(counts.map(|c| c as f64)).expect("counts are finite and nonnegative")
}

/// Scores a group of posts once, on their concatenation.
pub fn batch_emotions<S: AsRef<str>>(
    posts: &[S],
    lexicon: &EmotionLexicon,
) -> Result<EmotionVector, EmotionError> {
    if posts.is_empty() {
        return Err(EmotionError::EmptyGroup);
    }
    let joined = posts.iter().map(AsRef::as_ref).collect::<Vec<_>>().join("\n");
    Ok(score_emotions(&joined, lexicon))
}
