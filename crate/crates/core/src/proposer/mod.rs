//! Candidate proposal and YES/NO self-evaluation over a pluggable completion backend.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod http;
pub mod mock;
pub mod prompt;
pub mod replay;

pub use http::{HttpBackend, HttpBackendConfig};
pub use mock::{FnBackend, MockBackend, MockFixture, MockRule, MockSample, PromptMatch};
pub use prompt::{build_next_action_prompt, build_plan_evaluation_prompt, InContextExample, PromptKind};
pub use replay::{RecordingBackend, ReplayBackend};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error{}: {message}", if *.retriable { " (retriable)" } else { "" })]
    Transport { message: String, retriable: bool },
    #[error("backend does not support the required feature: {0}")]
    Capability(String),
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("neither YES nor NO among the first-token candidates; saw {seen:?}")]
    MissingYesNo { seen: Vec<String> },
    #[error("backend returned {got} usable samples after one resample, needed {wanted}")]
    EmptyGeneration { wanted: usize, got: usize },
    #[error("fixture error: {0}")]
    Fixture(String),
}

/// Completion request in the OpenAI-style `/v1/completions` shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub n: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    /// Number of top alternatives to report per generated position.
    pub logprobs: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stop: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChoiceLogprobs {
    #[serde(default)]
    pub tokens: Vec<String>,
    #[serde(default)]
    pub token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    pub top_logprobs: Vec<Option<BTreeMap<String, f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionChoice {
    #[serde(default)]
    pub index: usize,
    pub text: String,
    #[serde(default)]
    pub logprobs: Option<ChoiceLogprobs>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub choices: Vec<CompletionChoice>,
}

/// Anything that can serve completion requests with token log-probabilities.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError>;

    /// Whether responses carry per-token log-probabilities and top alternatives.
    fn supports_logprobs(&self) -> bool {
        true
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Arc<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(request)
    }

    fn supports_logprobs(&self) -> bool {
        (**self).supports_logprobs()
    }
}

/// One sampled continuation with its token scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendSample {
    pub text: String,
    pub token_logprobs: Vec<f64>,
    pub first_token_top_logits: BTreeMap<String, f64>,
}

impl BackendSample {
    fn from_choice(choice: CompletionChoice) -> Self {
        let lp = choice.logprobs.unwrap_or_default();
        let text = choice.text.split('\n').next().unwrap_or_default().trim().to_string();
        Self {
            text,
            token_logprobs: lp.token_logprobs.into_iter().flatten().collect(),
            first_token_top_logits: lp.top_logprobs.into_iter().next().flatten().unwrap_or_default(),
        }
    }

    fn usable(&self) -> bool {
        !self.text.is_empty() && !self.token_logprobs.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub max_tokens: usize,
    pub top_logprobs: usize,
    /// Alternatives requested at the first position of an evaluation answer.
    pub evaluation_top_logprobs: usize,
    pub seed: Option<u64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { temperature: 0.8, max_tokens: 24, top_logprobs: 5, evaluation_top_logprobs: 20, seed: None }
    }
}

/// Issues proposal and evaluation requests against a backend.
#[derive(Clone)]
pub struct Proposer {
    backend: Arc<dyn CompletionBackend>,
    pub config: SamplingConfig,
}

impl std::fmt::Debug for Proposer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Proposer").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Proposer {
    /// Fails up front if the backend cannot report log-probabilities.
    pub fn new(backend: Arc<dyn CompletionBackend>, config: SamplingConfig) -> Result<Self, BackendError> {
        if !backend.supports_logprobs() {
            return Err(BackendError::Capability("token log-probabilities".into()));
        }
        Ok(Self { backend, config })
    }

    pub fn backend(&self) -> &Arc<dyn CompletionBackend> {
        &self.backend
    }

    fn sample_request(&self, prompt: &str, n: usize, temperature: f64, attempt: u64) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.to_string(),
            n,
            temperature,
            max_tokens: self.config.max_tokens,
            logprobs: self.config.top_logprobs,
            stop: vec!["\n".into()],
            seed: self.config.seed.map(|s| s.wrapping_add(attempt)),
        }
    }

    /// Draws exactly `k` usable samples; unusable ones are replaced by one resample round.
    pub fn sample_candidates(&self, prompt: &str, k: usize, temperature: f64) -> Result<Vec<BackendSample>, BackendError> {
        assert!(k >= 1, "k must be at least 1");
        let mut kept = self.draw(prompt, k, temperature, 0)?;
        if kept.len() < k {
            let missing = k - kept.len();
            kept.extend(self.draw(prompt, missing, temperature, 1)?);
        }
        if kept.len() < k {
            return Err(BackendError::EmptyGeneration { wanted: k, got: kept.len() });
        }
        kept.truncate(k);
        Ok(kept)
    }

    fn draw(&self, prompt: &str, n: usize, temperature: f64, attempt: u64) -> Result<Vec<BackendSample>, BackendError> {
        let response = self.backend.complete(&self.sample_request(prompt, n, temperature, attempt))?;
        let mut choices = response.choices;
        choices.sort_by_key(|c| c.index);
        Ok(choices.into_iter().map(BackendSample::from_choice).filter(BackendSample::usable).collect())
    }

    /// First-position scores of the YES and NO answers.
    pub fn evaluate_yes_no(&self, prompt: &str) -> Result<(f64, f64), BackendError> {
        let request = CompletionRequest {
            prompt: prompt.to_string(),
            n: 1,
            temperature: 0.0,
            max_tokens: 1,
            logprobs: self.config.evaluation_top_logprobs,
            stop: Vec::new(),
            seed: self.config.seed,
        };
        let response = self.backend.complete(&request)?;
        let choice = response
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("evaluation response has no choices".into()))?;
        let top = choice
            .logprobs
            .and_then(|lp| lp.top_logprobs.into_iter().next().flatten())
            .ok_or_else(|| BackendError::Protocol("evaluation response lacks top log-probabilities".into()))?;
        yes_no_scores(&top)
    }
}

fn fold_answer_token(token: &str) -> String {
    token.trim_start_matches(['Ġ', '▁']).trim().to_ascii_uppercase()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Extracts (YES, NO) from a first-position top-candidate map.
///
/// Case and leading-space variants of each answer are pooled by log-sum-exp. If only one answer
/// appears, the other is bounded above by the smallest reported score and takes that value.
pub fn yes_no_scores(top: &BTreeMap<String, f64>) -> Result<(f64, f64), BackendError> {
    let mut yes = Vec::new();
    let mut no = Vec::new();
    for (token, &score) in top {
        match fold_answer_token(token).as_str() {
            "YES" => yes.push(score),
            "NO" => no.push(score),
            _ => {}
        }
    }
    let floor = top.values().copied().fold(f64::INFINITY, f64::min);
    match (yes.is_empty(), no.is_empty()) {
        (true, true) => Err(BackendError::MissingYesNo { seen: top.keys().cloned().collect() }),
        (false, true) => Ok((log_sum_exp(&yes), floor)),
        (true, false) => Ok((floor, log_sum_exp(&no))),
        (false, false) => Ok((log_sum_exp(&yes), log_sum_exp(&no))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn top(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn fixture(samples: Vec<MockSample>) -> Proposer {
        let backend = MockBackend::new(MockFixture { rules: vec![MockRule { matcher: PromptMatch::Any, samples }] });
        Proposer::new(Arc::new(backend), SamplingConfig::default()).unwrap()
    }

    fn sample(text: &str) -> MockSample {
        MockSample { text: text.into(), token_logprobs: vec![-0.5], first_token_top_logits: BTreeMap::new() }
    }

    #[test]
    fn mock_returns_configured_samples_in_order() {
        let p = fixture(vec![sample("pour gas"), sample("open the cap"), sample("screw the cap")]);
        let got = p.sample_candidates("anything", 3, 0.8).unwrap();
        let texts = got.iter().map(|s| s.text.as_str()).collect::<Vec<_>>();
        assert_eq!(texts, vec!["pour gas", "open the cap", "screw the cap"]);
    }

    #[test]
    fn empty_generation_is_resampled_once_then_errors() {
        // The first draw yields one empty sample; the resample cycles back to the start.
        let p = fixture(vec![sample("a"), sample(""), sample("c")]);
        let got = p.sample_candidates("x", 3, 0.8).unwrap();
        assert_eq!(got.iter().map(|s| s.text.as_str()).collect::<Vec<_>>(), vec!["a", "c", "a"]);

        let p = fixture(vec![sample("")]);
        assert_eq!(
            p.sample_candidates("x", 2, 0.8).unwrap_err(),
            BackendError::EmptyGeneration { wanted: 2, got: 0 }
        );
    }

    #[test]
    fn yes_no_passthrough() {
        assert_eq!(yes_no_scores(&top(&[("YES", 2.0), ("NO", 0.0)])).unwrap(), (2.0, 0.0));
    }

    #[test]
    fn yes_no_case_variants_fold() {
        let (y, n) = yes_no_scores(&top(&[(" Yes", -1.0), ("yes", -1.0), ("NO", -3.0), ("maybe", -4.0)])).unwrap();
        assert!((y - (-1.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(n, -3.0);
    }

    #[test]
    fn yes_no_missing_is_an_error() {
        let err = yes_no_scores(&top(&[("maybe", -0.1), ("perhaps", -2.0)])).unwrap_err();
        assert!(matches!(err, BackendError::MissingYesNo { seen } if seen.len() == 2));
    }

    #[test]
    fn one_sided_answer_uses_floor() {
        assert_eq!(yes_no_scores(&top(&[("YES", -0.2), ("the", -5.0)])).unwrap(), (-0.2, -5.0));
    }

    #[test]
    fn evaluate_uses_first_position() {
        let p = fixture(vec![MockSample {
            text: "YES".into(),
            token_logprobs: vec![-0.1],
            first_token_top_logits: top(&[("YES", 2.0), ("NO", 0.0)]),
        }]);
        assert_eq!(p.evaluate_yes_no("q").unwrap(), (2.0, 0.0));
    }

    struct NoLogprobs;
    impl CompletionBackend for NoLogprobs {
        fn complete(&self, _: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
            unreachable!()
        }
        fn supports_logprobs(&self) -> bool {
            false
        }
    }

    #[test]
    fn capability_checked_at_construction() {
        assert!(matches!(
            Proposer::new(Arc::new(NoLogprobs), SamplingConfig::default()),
            Err(BackendError::Capability(_))
        ));
    }
}
