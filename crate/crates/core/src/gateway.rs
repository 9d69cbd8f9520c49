//! Access to the perplexity, NLI and sequence-generation backends.
//!
//! [`Gateway`] validates inputs, batches perplexity requests, bounds the
//! number of simultaneous backend calls and checks every response before it
//! reaches the pipeline. Backends implement the small traits below; the
//! crate ships deterministic in-process implementations (character trigram
//! perplexity, table-backed NLI, echo and replay generators) and an HTTP
//! client speaking the `/v1/*` wire protocol.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed backend response: {0}")]
    BackendMalformedResponse(String),
    #[error("backend produced no usable generation")]
    EmptyGeneration,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Three-way NLI distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliProbs {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

/// Tolerance within which backend distributions are renormalized.
pub const NLI_RENORMALIZE_TOLERANCE: f64 = 1e-3;

impl NliProbs {
    pub const UNIFORM: NliProbs = NliProbs {
        entailment: 1.0 / 3.0,
        neutral: 1.0 / 3.0,
        contradiction: 1.0 / 3.0,
    };

    /// Renormalize a distribution whose sum is within
    /// [`NLI_RENORMALIZE_TOLERANCE`] of one; reject anything else.
    pub fn normalized(self) -> Result<NliProbs, ScoreError> {
        let parts = [self.entailment, self.neutral, self.contradiction];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(ScoreError::BackendMalformedResponse(format!(
                "NLI probabilities out of range: {self:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > NLI_RENORMALIZE_TOLERANCE {
            return Err(ScoreError::BackendMalformedResponse(format!(
                "NLI probabilities sum to {sum}"
            )));
        }
        Ok(NliProbs {
            entailment: self.entailment / sum,
            neutral: self.neutral / sum,
            contradiction: self.contradiction / sum,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Beam,
    SampleTopK,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Beam => "beam",
            Strategy::SampleTopK => "sample_top_k",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub input: String,
    pub num_outputs: usize,
    pub strategy: Strategy,
    pub seed: u64,
}

pub trait PerplexityBackend: Send + Sync {
    fn perplexities(&self, texts: &[String]) -> Result<Vec<f64>, ScoreError>;
}

pub trait NliBackend: Send + Sync {
    fn nli(&self, pairs: &[(String, String)]) -> Result<Vec<NliProbs>, ScoreError>;
}

pub trait GeneratorBackend: Send + Sync {
    /// One output list per input.
    fn generate(
        &self,
        inputs: &[String],
        num_outputs: usize,
        strategy: Strategy,
        seed: u64,
    ) -> Result<Vec<Vec<String>>, ScoreError>;
}

/// Counts noun chunks in a sentence.
pub trait NounChunker: Send + Sync {
    fn count(&self, text: &str) -> Result<usize, ScoreError>;
}

/// Counting semaphore bounding in-flight backend calls.
#[derive(Debug)]
struct Permits {
    available: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GatewayConfig {
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub timeout_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_in_flight: 4,
            timeout_ms: 30_000,
        }
    }
}

/// Shared front door to the scoring backends.
pub struct Gateway {
    perplexity: Arc<dyn PerplexityBackend>,
    nli: Arc<dyn NliBackend>,
    generator: Arc<dyn GeneratorBackend>,
    chunker: Option<Arc<dyn NounChunker>>,
    config: GatewayConfig,
    permits: Permits,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(
        perplexity: Arc<dyn PerplexityBackend>,
        nli: Arc<dyn NliBackend>,
        generator: Arc<dyn GeneratorBackend>,
        config: GatewayConfig,
    ) -> Self {
        let permits = Permits::new(config.max_in_flight);
        Self {
            perplexity,
            nli,
            generator,
            chunker: None,
            config,
            permits,
        }
    }

    pub fn with_chunker(mut self, chunker: Arc<dyn NounChunker>) -> Self {
        self.chunker = Some(chunker);
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// One strictly positive perplexity per text, in input order.
    pub fn perplexity(&self, texts: &[String]) -> Result<Vec<f64>, ScoreError> {
        if let Some(i) = texts.iter().position(|t| t.is_empty()) {
            return Err(ScoreError::InvalidInput(format!("text {i} is empty")));
        }
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.config.batch_size.max(1)) {
            let scores = {
                let _permit = self.permits.acquire();
                self.perplexity.perplexities(batch)?
            };
            if scores.len() != batch.len() {
                return Err(ScoreError::BackendMalformedResponse(format!(
                    "expected {} perplexities, got {}",
                    batch.len(),
                    scores.len()
                )));
            }
            if let Some(bad) = scores.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
                return Err(ScoreError::BackendMalformedResponse(format!(
                    "perplexity {bad} is not strictly positive and finite"
                )));
            }
            out.extend(scores);
        }
        Ok(out)
    }

    pub fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliProbs, ScoreError> {
        let mut v = self.nli_batch(&[(premise.to_string(), hypothesis.to_string())])?;
        Ok(v.remove(0))
    }

    /// NLI for many pairs, batched like perplexity.
    pub fn nli_batch(&self, pairs: &[(String, String)]) -> Result<Vec<NliProbs>, ScoreError> {
        if let Some(i) = pairs.iter().position(|(p, h)| p.is_empty() || h.is_empty()) {
            return Err(ScoreError::InvalidInput(format!("pair {i} has an empty side")));
        }
        let mut out = Vec::with_capacity(pairs.len());
        for batch in pairs.chunks(self.config.batch_size.max(1)) {
            let probs = {
                let _permit = self.permits.acquire();
                self.nli.nli(batch)?
            };
            if probs.len() != batch.len() {
                return Err(ScoreError::BackendMalformedResponse(format!(
                    "expected {} NLI results, got {}",
                    batch.len(),
                    probs.len()
                )));
            }
            for p in probs {
                out.push(p.normalized()?);
            }
        }
        Ok(out)
    }

    /// Between 1 and `num_outputs` non-empty generations.
    pub fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, ScoreError> {
        if req.num_outputs == 0 {
            return Err(ScoreError::InvalidInput("num_outputs must be at least 1".into()));
        }
        if req.input.is_empty() {
            return Err(ScoreError::InvalidInput("generation input is empty".into()));
        }
        let mut outputs = {
            let _permit = self.permits.acquire();
            self.generator.generate(
                std::slice::from_ref(&req.input),
                req.num_outputs,
                req.strategy,
                req.seed,
            )?
        };
        if outputs.len() != 1 {
            return Err(ScoreError::BackendMalformedResponse(format!(
                "expected 1 output list, got {}",
                outputs.len()
            )));
        }
        let mut texts = outputs.remove(0);
        if texts.len() > req.num_outputs {
            return Err(ScoreError::BackendMalformedResponse(format!(
                "requested {} outputs, got {}",
                req.num_outputs,
                texts.len()
            )));
        }
        texts.retain(|t| !t.trim().is_empty());
        if texts.is_empty() {
            return Err(ScoreError::EmptyGeneration);
        }
        Ok(texts)
    }

    /// Noun chunk count from the configured chunker, if any and if it succeeds.
    pub fn noun_chunks(&self, text: &str) -> Option<usize> {
        let chunker = self.chunker.as_ref()?;
        let _permit = self.permits.acquire();
        match chunker.count(text) {
            Ok(n) => Some(n),
            Err(e) => {
                log::warn!("noun chunker failed, falling back: {e}");
                None
            }
        }
    }
}

const BOS: char = '\u{2}';
const EOS: char = '\u{3}';

/// Character trigram language model with add-one smoothing.
///
/// Each line of the training corpus is one sentence, padded with two
/// start symbols and one end symbol. Perplexity is
/// `exp(mean negative log-probability per predicted character)`, where the
/// end symbol counts as a predicted character.
#[derive(Debug, Clone, Default)]
pub struct CharTrigramModel {
    trigrams: HashMap<(char, char, char), u64>,
    contexts: HashMap<(char, char), u64>,
    vocab_size: usize,
}

impl CharTrigramModel {
    pub fn train<'a, I: IntoIterator<Item = &'a str>>(sentences: I) -> Self {
        let mut model = Self::default();
        let mut vocab = std::collections::HashSet::new();
        vocab.insert(EOS);
        for s in sentences {
            let s = s.trim();
            if s.is_empty() {
                continue;
            }
            let (mut a, mut b) = (BOS, BOS);
            for c in s.chars().chain(std::iter::once(EOS)) {
                vocab.insert(c);
                *model.trigrams.entry((a, b, c)).or_default() += 1;
                *model.contexts.entry((a, b)).or_default() += 1;
                (a, b) = (b, c);
            }
        }
        // One extra slot for unseen characters.
        model.vocab_size = vocab.len() + 1;
        model
    }

    pub fn from_corpus_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::train(text.lines()))
    }

    pub fn perplexity(&self, text: &str) -> f64 {
        let v = self.vocab_size.max(1) as f64;
        let (mut a, mut b) = (BOS, BOS);
        let mut nll = 0.0;
        let mut n = 0usize;
        for c in text.chars().chain(std::iter::once(EOS)) {
            let tri = self.trigrams.get(&(a, b, c)).copied().unwrap_or(0) as f64;
            let ctx = self.contexts.get(&(a, b)).copied().unwrap_or(0) as f64;
            nll -= ((tri + 1.0) / (ctx + v)).ln();
            n += 1;
            (a, b) = (b, c);
        }
        (nll / n as f64).exp()
    }
}

impl PerplexityBackend for CharTrigramModel {
    fn perplexities(&self, texts: &[String]) -> Result<Vec<f64>, ScoreError> {
        Ok(texts.iter().map(|t| self.perplexity(t)).collect())
    }
}

/// Perplexity lookup table; unknown texts fall back to `default` if set.
#[derive(Debug, Clone, Default)]
pub struct TablePerplexity {
    pub table: HashMap<String, f64>,
    pub default: Option<f64>,
}

/// One row of a perplexity table file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerplexityTableEntry {
    pub text: String,
    pub perplexity: f64,
}

impl TablePerplexity {
    pub fn new<I: IntoIterator<Item = (String, f64)>>(entries: I) -> Self {
        Self {
            table: entries.into_iter().collect(),
            default: None,
        }
    }

    pub fn from_jsonl(path: &Path) -> Result<Self, crate::jsonl::JsonlError> {
        let rows = crate::jsonl::read::<PerplexityTableEntry>(path)?;
        Ok(Self::new(rows.into_iter().map(|r| (r.text, r.perplexity))))
    }
}

impl PerplexityBackend for TablePerplexity {
    fn perplexities(&self, texts: &[String]) -> Result<Vec<f64>, ScoreError> {
        texts
            .iter()
            .map(|t| {
                self.table.get(t).copied().or(self.default).ok_or_else(|| {
                    ScoreError::BackendMalformedResponse(format!("no perplexity entry for {t:?}"))
                })
            })
            .collect()
    }
}

/// One row of an NLI table file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NliTableEntry {
    pub premise: String,
    pub hypothesis: String,
    #[serde(flatten)]
    pub probs: NliProbs,
}

/// NLI lookup keyed on (premise, hypothesis); unknown pairs are uniform.
#[derive(Debug, Clone, Default)]
pub struct TableNli {
    pub table: HashMap<(String, String), NliProbs>,
}

impl TableNli {
    pub fn new<I: IntoIterator<Item = ((String, String), NliProbs)>>(entries: I) -> Self {
        Self {
            table: entries.into_iter().collect(),
        }
    }

    pub fn from_jsonl(path: &Path) -> Result<Self, crate::jsonl::JsonlError> {
        let rows: Vec<NliTableEntry> = crate::jsonl::read(path)?;
        Ok(Self::new(
            rows.into_iter().map(|r| ((r.premise, r.hypothesis), r.probs)),
        ))
    }
}

impl NliBackend for TableNli {
    fn nli(&self, pairs: &[(String, String)]) -> Result<Vec<NliProbs>, ScoreError> {
        Ok(pairs
            .iter()
            .map(|p| self.table.get(p).copied().unwrap_or(NliProbs::UNIFORM))
            .collect())
    }
}

/// Returns `prefix + input`; with more than one output requested, copies
/// are suffixed ` #1`, ` #2`, ...
#[derive(Debug, Clone)]
pub struct EchoGenerator {
    pub prefix: String,
}

impl Default for EchoGenerator {
    fn default() -> Self {
        Self {
            prefix: "CLAIM: ".into(),
        }
    }
}

impl GeneratorBackend for EchoGenerator {
    fn generate(
        &self,
        inputs: &[String],
        num_outputs: usize,
        _strategy: Strategy,
        _seed: u64,
    ) -> Result<Vec<Vec<String>>, ScoreError> {
        Ok(inputs
            .iter()
            .map(|input| {
                let base = format!("{}{}", self.prefix, input);
                if num_outputs == 1 {
                    vec![base]
                } else {
                    (1..=num_outputs).map(|i| format!("{base} #{i}")).collect()
                }
            })
            .collect())
    }
}

/// A recorded generation exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedGeneration {
    pub input: String,
    pub num_outputs: usize,
    pub strategy: Strategy,
    pub seed: u64,
    pub outputs: Vec<String>,
}

/// Replays recorded generations; unrecorded requests are an error.
#[derive(Debug, Clone, Default)]
pub struct ReplayGenerator {
    recordings: HashMap<(String, usize, Strategy, u64), Vec<String>>,
}

impl ReplayGenerator {
    pub fn new<I: IntoIterator<Item = RecordedGeneration>>(recordings: I) -> Self {
        Self {
            recordings: recordings
                .into_iter()
                .map(|r| ((r.input, r.num_outputs, r.strategy, r.seed), r.outputs))
                .collect(),
        }
    }

    pub fn from_jsonl(path: &Path) -> Result<Self, crate::jsonl::JsonlError> {
        Ok(Self::new(crate::jsonl::read::<RecordedGeneration>(path)?))
    }
}

impl GeneratorBackend for ReplayGenerator {
    fn generate(
        &self,
        inputs: &[String],
        num_outputs: usize,
        strategy: Strategy,
        seed: u64,
    ) -> Result<Vec<Vec<String>>, ScoreError> {
        inputs
            .iter()
            .map(|input| {
                self.recordings
                    .get(&(input.clone(), num_outputs, strategy, seed))
                    .cloned()
                    .ok_or_else(|| {
                        ScoreError::BackendUnavailable(format!("no recording for input {input:?}"))
                    })
            })
            .collect()
    }
}

/// Noun chunk counts from a lookup table.
#[derive(Debug, Clone, Default)]
pub struct TableChunker(pub BTreeMap<String, usize>);

impl NounChunker for TableChunker {
    fn count(&self, text: &str) -> Result<usize, ScoreError> {
        self.0
            .get(text)
            .copied()
            .ok_or_else(|| ScoreError::BackendUnavailable(format!("no chunk count for {text:?}")))
    }
}

// Wire types for the `/v1/*` endpoints.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerplexityRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerplexityResponse {
    pub perplexities: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NliPair {
    pub premise: String,
    pub hypothesis: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NliRequest {
    pub pairs: Vec<NliPair>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NliResponse {
    pub probs: Vec<NliProbs>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub inputs: Vec<String>,
    pub num_outputs: usize,
    pub strategy: Strategy,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub outputs: Vec<Vec<String>>,
}

/// HTTP client for a scorer service rooted at `base_url`.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    base_url: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, ScoreError> {
        let url = format!("{}{}", self.base_url, path);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| ScoreError::BackendUnavailable(format!("{url}: {e}")))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(ScoreError::BackendUnavailable(format!("{url}: HTTP {status}")));
        }
        if !status.is_success() {
            return Err(ScoreError::BackendMalformedResponse(format!("{url}: HTTP {status}")));
        }
        resp.body_mut()
            .read_json::<Resp>()
            .map_err(|e| ScoreError::BackendMalformedResponse(format!("{url}: {e}")))
    }
}

impl PerplexityBackend for HttpBackend {
    fn perplexities(&self, texts: &[String]) -> Result<Vec<f64>, ScoreError> {
        let resp: PerplexityResponse = self.post(
            "/v1/perplexity",
            &PerplexityRequest {
                texts: texts.to_vec(),
            },
        )?;
        Ok(resp.perplexities)
    }
}

impl NliBackend for HttpBackend {
    fn nli(&self, pairs: &[(String, String)]) -> Result<Vec<NliProbs>, ScoreError> {
        let resp: NliResponse = self.post(
            "/v1/nli",
            &NliRequest {
                pairs: pairs
                    .iter()
                    .map(|(p, h)| NliPair {
                        premise: p.clone(),
                        hypothesis: h.clone(),
                    })
                    .collect(),
            },
        )?;
        Ok(resp.probs)
    }
}

impl GeneratorBackend for HttpBackend {
    fn generate(
        &self,
        inputs: &[String],
        num_outputs: usize,
        strategy: Strategy,
        seed: u64,
    ) -> Result<Vec<Vec<String>>, ScoreError> {
        let resp: GenerateResponse = self.post(
            "/v1/generate",
            &GenerateRequest {
                inputs: inputs.to_vec(),
                num_outputs,
                strategy,
                seed,
            },
        )?;
        Ok(resp.outputs)
    }
}
