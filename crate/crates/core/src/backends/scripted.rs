//! Scripted expert backends with a computable ground truth.
//!
//! Two prompt families exist: `MATH: a+b=` / `MATH: a-b=` (answer is the
//! number) and `TEXT: w w` (answer is `w`). Each expert knows the shape of
//! both families but only solves its own; off-expertise it answers
//! [`UNKNOWN_ANSWER`] with certainty. After any generated token both experts
//! emit [`EOS`].

use serde::{Deserialize, Serialize};

use super::{Backend, Prediction, Query, Tokenizer};
use crate::vocab::{TokenDistribution, Vocab};
use crate::{Result, EOS};

/// The fixed wrong answer an expert gives outside its family.
pub const UNKNOWN_ANSWER: &str = "?";

/// Words used by the `TEXT:` family.
pub const WORDS: [&str; 16] = [
    "apple", "river", "stone", "cloud", "tiger", "piano", "maple", "orbit", "candle", "forest",
    "silver", "planet", "garden", "window", "rocket", "harbor",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expertise {
    #[serde(rename = "MATH")]
    Math,
    #[serde(rename = "TEXT")]
    Text,
}

impl Expertise {
    pub const ALL: [Expertise; 2] = [Expertise::Math, Expertise::Text];

    /// Leading prompt token of the family.
    pub fn tag(self) -> &'static str {
        match self {
            Expertise::Math => "MATH:",
            Expertise::Text => "TEXT:",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.tag() == tag)
    }

    /// Number of whitespace tokens in a prompt of this family.
    fn prompt_len(self) -> usize {
        match self {
            Expertise::Math => 2,
            Expertise::Text => 3,
        }
    }
}

/// A backend that is certain and correct on its own family only.
#[derive(Debug, Clone)]
pub struct ScriptedExpert {
    expertise: Expertise,
    name: String,
    vocab: Vocab,
    /// Ids of the tokens that may follow the family tag.
    slot_ids: Vec<usize>,
    tag_ids: Vec<usize>,
}

fn math_expressions() -> Vec<String> {
    let mut out = Vec::new();
    for a in 0..=9 {
        for b in 0..=9 {
            out.push(format!("{a}+{b}="));
        }
    }
    for a in 0..=9 {
        for b in 0..=a {
            out.push(format!("{a}-{b}="));
        }
    }
    out
}

impl ScriptedExpert {
    pub fn new(expertise: Expertise) -> Self {
        let mut tokens: Vec<String> = vec![EOS.into(), UNKNOWN_ANSWER.into()];
        let slots: Vec<String> = match expertise {
            Expertise::Math => {
                tokens.extend(["MATH:".into(), "TEXT:".into()]);
                tokens.extend((0..=18).map(|n| n.to_string()));
                math_expressions()
            }
            Expertise::Text => {
                tokens.extend(["TEXT:".into(), "MATH:".into()]);
                WORDS.iter().map(|w| w.to_string()).collect()
            }
        };
        tokens.extend(slots.iter().cloned());
        let vocab = Vocab::new(tokens).expect("scripted vocabulary has unique tokens");
        let slot_ids = slots.iter().map(|s| vocab.id(s).unwrap()).collect();
        let tag_ids = Expertise::ALL
            .iter()
            .map(|e| vocab.id(e.tag()).unwrap())
            .collect();
        Self {
            expertise,
            name: format!("expert-{}", expertise.tag().trim_end_matches(':')),
            vocab,
            slot_ids,
            tag_ids,
        }
    }

    pub fn expertise(&self) -> Expertise {
        self.expertise
    }

    fn spread(&self, ids: &[usize]) -> TokenDistribution {
        let mut probs = vec![0.0; self.vocab.len()];
        let p = 1.0 / ids.len() as f64;
        for &id in ids {
            probs[id] = p;
        }
        TokenDistribution::from_raw(probs)
    }

    fn certain(&self, token: &str) -> TokenDistribution {
        let id = self
            .vocab
            .id(token)
            .or_else(|| self.vocab.id(UNKNOWN_ANSWER))
            .unwrap();
        TokenDistribution::one_hot(self.vocab.len(), id)
    }

    fn solve(&self, prompt: &[String]) -> Option<String> {
        match self.expertise {
            Expertise::Math => {
                let expr = prompt[1].strip_suffix('=')?;
                let (a, b, sum) = if let Some((a, b)) = expr.split_once('+') {
                    (a, b, true)
                } else {
                    let (a, b) = expr.split_once('-')?;
                    (a, b, false)
                };
                let (a, b): (i64, i64) = (a.parse().ok()?, b.parse().ok()?);
                Some(if sum { a + b } else { a - b }.to_string())
            }
            Expertise::Text => (prompt[1] == prompt[2]).then(|| prompt[1].clone()),
        }
        .filter(|ans| self.vocab.contains(ans))
    }

    fn distribution(&self, tokens: &[String]) -> Prediction {
        let Some(first) = tokens.first() else {
            return Prediction {
                dist: self.spread(&self.tag_ids),
                fallback: false,
            };
        };
        let Some(family) = Expertise::from_tag(first) else {
            return Prediction {
                dist: TokenDistribution::uniform(self.vocab.len()),
                fallback: true,
            };
        };
        let own = family == self.expertise;
        let prompt_len = family.prompt_len();
        let dist = if tokens.len() < prompt_len {
            if !own {
                TokenDistribution::uniform(self.vocab.len())
            } else if tokens.len() == 2
                && self
                    .slot_ids
                    .contains(&self.vocab.id(&tokens[1]).unwrap_or(usize::MAX))
            {
                // second word of a TEXT prompt repeats the first
                self.certain(&tokens[1])
            } else {
                self.spread(&self.slot_ids)
            }
        } else if tokens.len() == prompt_len {
            match own.then(|| self.solve(tokens)).flatten() {
                Some(answer) => self.certain(&answer),
                None => self.certain(UNKNOWN_ANSWER),
            }
        } else {
            self.certain(EOS)
        };
        Prediction {
            dist,
            fallback: false,
        }
    }
}

impl Backend for ScriptedExpert {
    fn name(&self) -> &str {
        &self.name
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn tokenizer(&self) -> Tokenizer {
        Tokenizer::Whitespace
    }

    fn next_distribution(&self, query: &Query) -> Result<Prediction> {
        let tokens = Tokenizer::Whitespace.tokenize(&query.context);
        Ok(self.distribution(&tokens))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::token_probabilities;

    fn top(expert: &ScriptedExpert, ctx: &str) -> (String, f64) {
        let p = expert.next_distribution(&Query::new(ctx)).unwrap();
        assert!(p.dist.is_normalized());
        let id = p.dist.argmax();
        (
            expert.vocab().token(id).unwrap().to_owned(),
            p.dist.prob(id),
        )
    }

    #[test]
    fn math_expert_answers_addition() {
        let a = ScriptedExpert::new(Expertise::Math);
        assert_eq!(top(&a, "MATH: 2+2="), ("4".into(), 1.0));
        assert_eq!(top(&a, "MATH: 9+9="), ("18".into(), 1.0));
        assert_eq!(top(&a, "MATH: 7-3="), ("4".into(), 1.0));
    }

    #[test]
    fn off_expertise_answers_unknown() {
        let a = ScriptedExpert::new(Expertise::Math);
        let b = ScriptedExpert::new(Expertise::Text);
        assert_eq!(top(&a, "TEXT: tiger tiger"), (UNKNOWN_ANSWER.into(), 1.0));
        assert_eq!(top(&b, "MATH: 2+2="), (UNKNOWN_ANSWER.into(), 1.0));
        assert_eq!(top(&b, "TEXT: tiger tiger"), ("tiger".into(), 1.0));
    }

    #[test]
    fn both_experts_stop_after_one_token() {
        for e in Expertise::ALL {
            let x = ScriptedExpert::new(e);
            assert_eq!(top(&x, "MATH: 2+2= 4"), (EOS.into(), 1.0));
            assert_eq!(top(&x, "TEXT: tiger tiger ?"), (EOS.into(), 1.0));
        }
    }

    #[test]
    fn unknown_prefix_is_flagged_uniform() {
        let a = ScriptedExpert::new(Expertise::Math);
        let p = a.next_distribution(&Query::new("hello world")).unwrap();
        assert!(p.fallback);
        assert_eq!(p.dist, TokenDistribution::uniform(a.vocab().len()));
    }

    #[test]
    fn own_family_prompt_scores_higher() {
        let a = ScriptedExpert::new(Expertise::Math);
        let b = ScriptedExpert::new(Expertise::Text);
        let pa = token_probabilities(&a, "MATH: 3+4=").unwrap();
        let pb = token_probabilities(&b, "MATH: 3+4=").unwrap();
        assert_eq!(pa, vec![0.5, 1.0 / 155.0]);
        assert_eq!(pb, vec![0.5, 0.0]);
    }

    #[test]
    fn vocabularies_overlap_but_differ() {
        let a = ScriptedExpert::new(Expertise::Math);
        let b = ScriptedExpert::new(Expertise::Text);
        let shared: Vec<_> = a
            .vocab()
            .tokens()
            .iter()
            .filter(|t| b.vocab().contains(t))
            .collect();
        assert_eq!(shared, [EOS, UNKNOWN_ANSWER, "MATH:", "TEXT:"]);
        assert_ne!(a.vocab().len(), b.vocab().len());
    }
}
