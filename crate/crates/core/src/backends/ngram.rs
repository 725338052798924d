//! Add-k smoothed n-gram language models.
//!
//! `order` is the number of conditioning tokens: order 0 is a unigram model,
//! order 1 a bigram model. Contexts shorter than `order` are left-padded with
//! a start marker, and training counts are collected over the corpus padded
//! the same way.

use std::collections::HashMap;
use std::path::Path;

use super::{Backend, Prediction, Query, Tokenizer};
use crate::vocab::{TokenDistribution, Vocab};
use crate::{Error, Result};

const START: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct ContextCounts {
    next: Vec<u64>,
    total: u64,
}

#[derive(Debug, Clone)]
pub struct NgramModel {
    name: String,
    vocab: Vocab,
    order: usize,
    smoothing: f64,
    tokenizer: Tokenizer,
    counts: HashMap<Vec<u32>, ContextCounts>,
}

/// Trains an add-one smoothed model on a whitespace-tokenized corpus file.
/// With `vocab = None` the vocabulary is the corpus tokens in first-appearance order.
pub fn train_ngram(corpus_path: &Path, order: usize, vocab: Option<Vocab>) -> Result<NgramModel> {
    let text = std::fs::read_to_string(corpus_path)?;
    NgramModel::train(&text, order, vocab, 1.0, Tokenizer::Whitespace)
}

impl NgramModel {
    pub fn train(
        text: &str,
        order: usize,
        vocab: Option<Vocab>,
        smoothing: f64,
        tokenizer: Tokenizer,
    ) -> Result<Self> {
        let tokens = tokenizer.tokenize(text);
        if tokens.is_empty() {
            return Err(Error::invalid("n-gram corpus is empty"));
        }
        if tokens.len() < order + 1 {
            return Err(Error::invalid(format!(
                "n-gram corpus has {} tokens, order {order} needs at least {}",
                tokens.len(),
                order + 1
            )));
        }
        if !(smoothing >= 0.0 && smoothing.is_finite()) {
            return Err(Error::invalid(format!(
                "smoothing must be >= 0, got {smoothing}"
            )));
        }
        let vocab = vocab.unwrap_or_else(|| Vocab::from_stream(&tokens));
        let ids = tokens
            .iter()
            .map(|t| {
                vocab.id(t).map(|i| i as u32).ok_or_else(|| {
                    Error::invalid(format!("corpus token {t:?} is not in the vocabulary"))
                })
            })
            .collect::<Result<Vec<u32>>>()?;

        let mut padded = vec![START; order];
        padded.extend(&ids);
        let mut counts: HashMap<Vec<u32>, ContextCounts> = HashMap::new();
        for window in padded.windows(order + 1) {
            let (ctx, next) = window.split_at(order);
            let entry = counts.entry(ctx.to_vec()).or_insert_with(|| ContextCounts {
                next: vec![0; vocab.len()],
                total: 0,
            });
            entry.next[next[0] as usize] += 1;
            entry.total += 1;
        }
        Ok(Self {
            name: format!("ngram-{order}"),
            vocab,
            order,
            smoothing,
            tokenizer,
            counts,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Conditioning ids for a context, or `None` if it holds unknown tokens.
    fn context_ids(&self, context: &str) -> Option<Vec<u32>> {
        let tokens = self.tokenizer.tokenize(context);
        let tail = &tokens[tokens.len().saturating_sub(self.order)..];
        let mut ctx = vec![START; self.order - tail.len()];
        for t in tail {
            ctx.push(self.vocab.id(t)? as u32);
        }
        Some(ctx)
    }
}

impl Backend for NgramModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn tokenizer(&self) -> Tokenizer {
        self.tokenizer
    }

    fn next_distribution(&self, query: &Query) -> Result<Prediction> {
        let v = self.vocab.len();
        let seen = self
            .context_ids(&query.context)
            .and_then(|ctx| self.counts.get(&ctx));
        let Some(c) = seen else {
            return Ok(Prediction {
                dist: TokenDistribution::uniform(v),
                fallback: true,
            });
        };
        let denom = c.total as f64 + self.smoothing * v as f64;
        let probs = c
            .next
            .iter()
            .map(|&n| (n as f64 + self.smoothing) / denom)
            .collect();
        Ok(Prediction {
            dist: TokenDistribution::from_raw(probs),
            fallback: false,
        })
    }
}
