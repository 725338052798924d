//! The span-level ensemble decoder.
//!
//! Weights are drawn from a [`WeightPolicy`] once per span of `L` tokens and
//! held fixed while the span is generated. At each position every backend is
//! queried, its distribution projected into the unified vocabulary, and the
//! position is classified: critical positions sample from the weighted
//! mixture of all backends, the rest from the highest-weight backend alone.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::backends::{Backend, BackendSpec, Prediction, Query, Tokenizer};
use crate::vocab::{build_union, project, Projection, TokenDistribution, Vocab, NORMALIZATION_TOL};
use crate::{Error, Result, EOS};

/// A point on the probability simplex, one weight per backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnsembleWeights(Vec<f64>);

impl EnsembleWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        let ok = !w.is_empty()
            && w.iter().all(|x| (0.0..=1.0).contains(x))
            && (w.iter().sum::<f64>() - 1.0).abs() <= NORMALIZATION_TOL;
        if !ok {
            return Err(Error::invalid(format!(
                "weights {w:?} are not on the simplex"
            )));
        }
        Ok(Self(w))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, i: usize) -> Self {
        let mut w = vec![0.0; k];
        w[i] = 1.0;
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest weight; ties go to the lowest index.
    pub fn leader(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.0.iter().enumerate().skip(1) {
            if w > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Weighted mixture `Σ_k w_k · p_k` of distributions over one vocabulary.
pub fn fuse(dists: &[TokenDistribution], weights: &EnsembleWeights) -> Result<TokenDistribution> {
    if dists.is_empty() || dists.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} distributions for {} weights",
            dists.len(),
            weights.len()
        )));
    }
    let n = dists[0].vocab_size();
    if let Some(d) = dists.iter().find(|d| d.vocab_size() != n) {
        return Err(Error::invalid(format!(
            "vocabulary size mismatch: {} vs {n}",
            d.vocab_size()
        )));
    }
    if let Some(i) = dists.iter().position(|d| !d.is_normalized()) {
        return Err(Error::invalid(format!(
            "distribution {i} is not normalized"
        )));
    }
    let mut out = vec![0.0; n];
    for (d, &w) in dists.iter().zip(weights.as_slice()) {
        for (o, &p) in out.iter_mut().zip(d.probs()) {
            *o += w * p;
        }
    }
    Ok(TokenDistribution::from_raw(out))
}

/// A position is critical when the backends' top tokens disagree or the
/// leading backend's entropy exceeds `tau` (strictly).
pub fn is_critical(dists: &[TokenDistribution], weights: &EnsembleWeights, tau: f64) -> bool {
    let first = dists[0].argmax();
    if dists.iter().any(|d| d.argmax() != first) {
        return true;
    }
    dists[weights.leader()].entropy() > tau
}

/// Draws an index from `probs` by inverse CDF.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Sample,
}

impl DecodeMode {
    pub fn pick<R: Rng + ?Sized>(self, dist: &TokenDistribution, rng: &mut R) -> usize {
        match self {
            DecodeMode::Greedy => dist.argmax(),
            DecodeMode::Sample => sample_index(dist.probs(), rng),
        }
    }
}

fn default_span_length() -> usize {
    4
}
fn default_max_tokens() -> usize {
    16
}
fn default_tau() -> f64 {
    1.0
}
fn default_decode() -> DecodeMode {
    DecodeMode::Greedy
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    /// Tokens per span (`L`).
    #[serde(default = "default_span_length")]
    pub span_length: usize,
    /// Generation budget (`H_max`), counting the end token.
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    /// Entropy threshold in nats for the critical-token rule.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Decoding used for evaluation; training rollouts always sample.
    #[serde(default = "default_decode")]
    pub decode_mode: DecodeMode,
    /// Treat every position as critical.
    #[serde(default)]
    pub force_critical: bool,
    /// How generated tokens are joined into the context handed to backends.
    #[serde(default)]
    pub detokenize: Tokenizer,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            span_length: default_span_length(),
            max_tokens: default_max_tokens(),
            tau: default_tau(),
            decode_mode: default_decode(),
            force_critical: false,
            detokenize: Tokenizer::Whitespace,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.span_length == 0 {
            return Err(Error::Config("fusion.span_length must be >= 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("fusion.max_tokens must be >= 1".into()));
        }
        if self.tau.is_nan() {
            return Err(Error::Config("fusion.tau must not be NaN".into()));
        }
        Ok(())
    }

    pub fn with_mode(&self, mode: DecodeMode) -> Self {
        Self {
            decode_mode: mode,
            ..self.clone()
        }
    }
}

/// One backend of the ensemble with its projection into the unified vocabulary.
pub struct Member {
    pub backend: Box<dyn Backend>,
    pub projection: Projection,
    pub temperature: f64,
}

/// The `K` backends plus their unified vocabulary.
pub struct Ensemble {
    members: Vec<Member>,
    unified: Vocab,
    eos: Option<usize>,
    parallel: bool,
    calls: AtomicU64,
}

/// Projected next-token prediction of one backend.
#[derive(Debug, Clone)]
pub struct StepPrediction {
    pub dist: TokenDistribution,
    pub fallback: bool,
}

impl Ensemble {
    pub fn new(backends: Vec<Box<dyn Backend>>) -> Result<Self> {
        let temps = vec![1.0; backends.len()];
        Self::with_temperatures(backends, temps)
    }

    pub fn with_temperatures(
        backends: Vec<Box<dyn Backend>>,
        temperatures: Vec<f64>,
    ) -> Result<Self> {
        if backends.is_empty() {
            return Err(Error::invalid("an ensemble needs at least one backend"));
        }
        if let Some(t) = temperatures.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {t}"
            )));
        }
        let vocabs: Vec<Vocab> = backends.iter().map(|b| b.vocab().clone()).collect();
        let (unified, projections) = build_union(&vocabs)?;
        let members = backends
            .into_iter()
            .zip(projections)
            .zip(temperatures)
            .map(|((backend, projection), temperature)| Member {
                backend,
                projection,
                temperature,
            })
            .collect();
        Ok(Self {
            eos: unified.id(EOS),
            members,
            unified,
            parallel: false,
            calls: AtomicU64::new(0),
        })
    }

    /// Builds every backend from its configuration. Remote backends are queried concurrently.
    pub fn from_specs(specs: &[BackendSpec]) -> Result<Self> {
        let backends = specs
            .iter()
            .map(BackendSpec::build)
            .collect::<Result<Vec<_>>>()?;
        let mut ens = Self::with_temperatures(
            backends,
            specs.iter().map(BackendSpec::temperature).collect(),
        )?;
        ens.parallel = specs
            .iter()
            .any(|s| matches!(s, BackendSpec::Remote { .. }));
        Ok(ens)
    }

    pub fn set_parallel(&mut self, parallel: bool) {
        self.parallel = parallel;
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn unified(&self) -> &Vocab {
        &self.unified
    }

    pub fn member(&self, k: usize) -> &Member {
        &self.members[k]
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn eos_id(&self) -> Option<usize> {
        self.eos
    }

    /// Total backend queries issued through this ensemble.
    pub fn backend_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Adds queries issued directly to member backends (e.g. for scoring).
    pub(crate) fn record_calls(&self, n: u64) {
        self.calls.fetch_add(n, Ordering::Relaxed);
    }

    fn query_member(&self, m: &Member, query: &Query) -> Result<StepPrediction> {
        let Prediction { dist, fallback } = m.backend.next_distribution(query)?;
        let dist = dist.with_temperature(m.temperature);
        Ok(StepPrediction {
            dist: project(&dist, &m.projection, self.unified.len())?,
            fallback,
        })
    }

    /// Queries all backends for `context` and returns their projected
    /// distributions in backend order.
    pub fn step(&self, context: &str) -> Result<Vec<StepPrediction>> {
        let query = Query::new(context);
        self.calls.fetch_add(self.k() as u64, Ordering::Relaxed);
        if self.parallel && self.k() > 1 {
            std::thread::scope(|s| {
                let handles: Vec<_> = self
                    .members
                    .iter()
                    .map(|m| s.spawn(|| self.query_member(m, &query)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("backend query thread panicked"))
                    .collect()
            })
        } else {
            self.members
                .iter()
                .map(|m| self.query_member(m, &query))
                .collect()
        }
    }
}

/// The decoder state at the start of span `t`: prompt plus spans so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanState {
    pub prompt: String,
    pub spans: Vec<Vec<String>>,
    pub t: usize,
}

impl SpanState {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            spans: Vec::new(),
            t: 0,
        }
    }

    pub fn generated(&self) -> impl Iterator<Item = &String> {
        self.spans.iter().flatten()
    }

    pub fn generated_len(&self) -> usize {
        self.spans.iter().map(Vec::len).sum()
    }

    pub fn context(&self, detok: Tokenizer) -> String {
        let toks: Vec<&String> = self.generated().collect();
        detok.detokenize(&self.prompt, &toks)
    }

    fn push(&mut self, span: Vec<String>) {
        self.spans.push(span);
        self.t += 1;
    }
}

/// What the policy emitted for one span, kept for training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub features: Vec<f64>,
    /// The sampled pre-softmax action.
    pub logits: Vec<f64>,
    /// Joint log-density of `logits`.
    pub log_prob: f64,
    /// Per-agent log-densities (one per backend).
    pub agent_log_probs: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct Decision {
    pub weights: EnsembleWeights,
    pub action: Option<ActionRecord>,
}

impl From<EnsembleWeights> for Decision {
    fn from(weights: EnsembleWeights) -> Self {
        Self {
            weights,
            action: None,
        }
    }
}

/// Chooses ensemble weights for the next span.
pub trait WeightPolicy: Sync {
    fn decide(
        &self,
        state: &SpanState,
        ensemble: &Ensemble,
        config: &FusionConfig,
        rng: &mut dyn RngCore,
    ) -> Result<Decision>;
}

/// The same weights for every span of every prompt.
#[derive(Debug, Clone)]
pub struct FixedPolicy(pub EnsembleWeights);

impl WeightPolicy for FixedPolicy {
    fn decide(
        &self,
        _: &SpanState,
        _: &Ensemble,
        _: &FusionConfig,
        _: &mut dyn RngCore,
    ) -> Result<Decision> {
        Ok(self.0.clone().into())
    }
}

/// Weights computed from the state by a closure.
pub struct FnPolicy<F>(pub F);

impl<F> WeightPolicy for FnPolicy<F>
where
    F: Fn(&SpanState) -> EnsembleWeights + Sync,
{
    fn decide(
        &self,
        state: &SpanState,
        _: &Ensemble,
        _: &FusionConfig,
        _: &mut dyn RngCore,
    ) -> Result<Decision> {
        Ok((self.0)(state).into())
    }
}

/// One decoded span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub t: usize,
    /// Context at the start of the span.
    pub context: String,
    pub weights: Vec<f64>,
    pub critical: Vec<bool>,
    pub tokens: Vec<String>,
    /// Probability of each chosen token under the distribution it was drawn
    /// from: the mixture at critical positions, the leading backend otherwise.
    pub token_probs: Vec<f64>,
    pub action: Option<ActionRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub prompt: String,
    pub spans: Vec<SpanRecord>,
    /// Generated text without the end token.
    pub text: String,
    /// Tokens sampled, including a terminating end token (`H`).
    pub token_count: usize,
    pub agent_invocations: usize,
    pub stopped_on_eos: bool,
    /// Positions where at least one backend answered with its fallback.
    pub fallback_steps: usize,
}

impl GenerationTrace {
    /// Invocation count implied by `H` and `L`: `⌈H/L⌉`.
    pub fn expected_invocations(&self, span_length: usize) -> usize {
        self.token_count.div_ceil(span_length)
    }
}

/// Output of [`generate_span`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpanOutput {
    pub tokens: Vec<String>,
    pub critical: Vec<bool>,
    pub token_probs: Vec<f64>,
    pub hit_eos: bool,
    pub fallback_steps: usize,
}

/// Decodes up to `min(L, budget)` tokens with fixed weights, stopping early
/// on the end token.
pub fn generate_span<R: Rng + ?Sized>(
    ensemble: &Ensemble,
    state: &SpanState,
    weights: &EnsembleWeights,
    config: &FusionConfig,
    mode: DecodeMode,
    budget: usize,
    rng: &mut R,
) -> Result<SpanOutput> {
    if weights.len() != ensemble.k() {
        return Err(Error::invalid(format!(
            "{} weights for {} backends",
            weights.len(),
            ensemble.k()
        )));
    }
    let mut out = SpanOutput {
        tokens: Vec::new(),
        critical: Vec::new(),
        token_probs: Vec::new(),
        hit_eos: false,
        fallback_steps: 0,
    };
    let mut context = state.context(config.detokenize);
    let leader = weights.leader();
    for _ in 0..config.span_length.min(budget) {
        let preds = ensemble.step(&context)?;
        if preds.iter().any(|p| p.fallback) {
            out.fallback_steps += 1;
        }
        let dists: Vec<TokenDistribution> = preds.into_iter().map(|p| p.dist).collect();
        let critical = config.force_critical || is_critical(&dists, weights, config.tau);
        let (id, prob) = if critical {
            let fused = fuse(&dists, weights)?;
            let id = mode.pick(&fused, rng);
            (id, fused.prob(id))
        } else {
            let id = mode.pick(&dists[leader], rng);
            (id, dists[leader].prob(id))
        };
        let token = ensemble.unified().token(id).unwrap().to_owned();
        out.critical.push(critical);
        out.token_probs.push(prob);
        if Some(id) == ensemble.eos_id() {
            out.tokens.push(token);
            out.hit_eos = true;
            break;
        }
        context = config.detokenize.detokenize(&context, &[&token]);
        out.tokens.push(token);
    }
    Ok(out)
}

/// Decodes a full response span by span.
pub fn generate<R: RngCore>(
    prompt: &str,
    policy: &dyn WeightPolicy,
    ensemble: &Ensemble,
    config: &FusionConfig,
    mode: DecodeMode,
    rng: &mut R,
) -> Result<GenerationTrace> {
    config.validate()?;
    let mut trace = GenerationTrace {
        prompt: prompt.to_owned(),
        ..Default::default()
    };
    let mut state = SpanState::new(prompt);
    let mut generated: Vec<String> = Vec::new();
    let fail = |e: Error, trace: &GenerationTrace| Error::Generation {
        source: Box::new(e),
        partial: Box::new(trace.clone()),
    };

    while trace.token_count < config.max_tokens && !trace.stopped_on_eos {
        let decision = policy
            .decide(&state, ensemble, config, rng)
            .map_err(|e| fail(e, &trace))?;
        trace.agent_invocations += 1;
        let budget = config.max_tokens - trace.token_count;
        let span = generate_span(
            ensemble,
            &state,
            &decision.weights,
            config,
            mode,
            budget,
            rng,
        )
        .map_err(|e| fail(e, &trace))?;

        trace.token_count += span.tokens.len();
        trace.fallback_steps += span.fallback_steps;
        trace.stopped_on_eos = span.hit_eos;
        let mut kept = span.tokens.clone();
        if span.hit_eos {
            kept.pop();
        }
        generated.extend(kept.iter().cloned());
        trace.spans.push(SpanRecord {
            t: state.t,
            context: state.context(config.detokenize),
            weights: decision.weights.as_slice().to_vec(),
            critical: span.critical,
            tokens: span.tokens,
            token_probs: span.token_probs,
            action: decision.action,
        });
        state.push(kept);
    }
    trace.text = config.detokenize.detokenize("", &generated);
    debug_assert_eq!(
        trace.agent_invocations,
        trace.expected_invocations(config.span_length)
    );
    Ok(trace)
}

#[derive(Serialize)]
struct SpanLine<'a> {
    t: usize,
    weights: &'a [f64],
    critical: &'a [bool],
    tokens: &'a [String],
}

/// Writes one JSON line `{t, weights, critical, tokens}` per span.
pub fn write_trace_jsonl<'a, W: Write>(
    traces: impl IntoIterator<Item = &'a GenerationTrace>,
    mut w: W,
) -> Result<()> {
    for trace in traces {
        for s in &trace.spans {
            serde_json::to_writer(
                &mut w,
                &SpanLine {
                    t: s.t,
                    weights: &s.weights,
                    critical: &s.critical,
                    tokens: &s.tokens,
                },
            )?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}
