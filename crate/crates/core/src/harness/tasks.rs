//! Synthetic prompt families with exactly checkable answers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::WORDS;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `MATH: a+b=` with single digits.
    Math,
    /// `MATH: a-b=` with `a ≥ b`.
    MathSub,
    /// `TEXT: w w`, answer `w`.
    Text,
    /// Even positions `Math`, odd positions `Text`.
    Mixed,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Math, Family::MathSub, Family::Text, Family::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Family::Math => "math",
            Family::MathSub => "math-sub",
            Family::Text => "text",
            Family::Mixed => "mixed",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!("unknown suite {s:?} (math|math-sub|text|mixed)"))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub prompt: String,
    pub answer: String,
    /// The concrete family; never `Mixed`.
    pub family: Family,
}

/// Collapses runs of whitespace and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Task {
    pub fn is_correct(&self, output: &str) -> bool {
        normalize_whitespace(output) == normalize_whitespace(&self.answer)
    }
}

fn draw<R: Rng>(family: Family, rng: &mut R) -> Task {
    match family {
        Family::Math => {
            let (a, b) = (rng.random_range(0..=9u32), rng.random_range(0..=9u32));
            Task {
                prompt: format!("MATH: {a}+{b}="),
                answer: (a + b).to_string(),
                family,
            }
        }
        Family::MathSub => {
            let a = rng.random_range(0..=9u32);
            let b = rng.random_range(0..=a);
            Task {
                prompt: format!("MATH: {a}-{b}="),
                answer: (a - b).to_string(),
                family,
            }
        }
        Family::Text => {
            let w = WORDS[rng.random_range(0..WORDS.len())];
            Task {
                prompt: format!("TEXT: {w} {w}"),
                answer: w.to_owned(),
                family,
            }
        }
        Family::Mixed => unreachable!("mixed suites are assembled from concrete families"),
    }
}

/// `n` tasks of `family`, identical for identical `(family, n, seed)`.
pub fn make_suite(family: Family, n: usize, seed: u64) -> Result<Vec<Task>> {
    if n == 0 {
        return Err(Error::invalid("a suite needs at least one task"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|i| match family {
            Family::Mixed => draw(
                if i % 2 == 0 {
                    Family::Math
                } else {
                    Family::Text
                },
                &mut rng,
            ),
            f => draw(f, &mut rng),
        })
        .collect())
}
