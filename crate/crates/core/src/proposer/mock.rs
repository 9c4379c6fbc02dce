//! Fixture-driven and closure-driven backends for offline runs and tests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, ChoiceLogprobs, CompletionBackend, CompletionChoice, CompletionRequest, CompletionResponse};

pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMatch {
    /// Hex SHA-256 of the whole prompt.
    Sha256(String),
    /// Substring of the prompt.
    Contains(String),
    Any,
}

impl PromptMatch {
    fn matches(&self, prompt: &str, digest: &str) -> bool {
        match self {
            PromptMatch::Sha256(h) => h.eq_ignore_ascii_case(digest),
            PromptMatch::Contains(s) => prompt.contains(s.as_str()),
            PromptMatch::Any => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MockSample {
    pub text: String,
    pub token_logprobs: Vec<f64>,
    #[serde(default)]
    pub first_token_top_logits: BTreeMap<String, f64>,
}

impl MockSample {
    fn to_choice(&self, index: usize) -> CompletionChoice {
        let words = self.text.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        let tokens = if words.len() == self.token_logprobs.len() {
            words
        } else {
            (0..self.token_logprobs.len()).map(|i| format!("<tok{i}>")).collect()
        };
        let mut top = vec![None; self.token_logprobs.len().max(1)];
        top[0] = Some(self.first_token_top_logits.clone());
        CompletionChoice {
            index,
            text: self.text.clone(),
            logprobs: Some(ChoiceLogprobs {
                tokens,
                token_logprobs: self.token_logprobs.iter().copied().map(Some).collect(),
                top_logprobs: top,
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub matcher: PromptMatch,
    pub samples: Vec<MockSample>,
}

/// Ordered rules; the first rule matching a prompt answers it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MockFixture {
    pub rules: Vec<MockRule>,
}

impl MockFixture {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))
    }
}

/// Answers each request with the matching rule's samples, cycling when `n` exceeds them.
#[derive(Clone, Debug)]
pub struct MockBackend {
    fixture: MockFixture,
}

impl MockBackend {
    pub fn new(fixture: MockFixture) -> Self {
        Self { fixture }
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let digest = prompt_sha256(&request.prompt);
        let rule = self
            .fixture
            .rules
            .iter()
            .find(|r| r.matcher.matches(&request.prompt, &digest))
            .ok_or_else(|| BackendError::Fixture(format!("no mock rule matches prompt {digest}")))?;
        if rule.samples.is_empty() {
            return Err(BackendError::Fixture(format!("mock rule {:?} has no samples", rule.matcher)));
        }
        let choices = (0..request.n).map(|i| rule.samples[i % rule.samples.len()].to_choice(i)).collect();
        Ok(CompletionResponse { choices })
    }
}

/// Wraps a closure as a backend.
pub struct FnBackend<F>(pub F);

impl<F> CompletionBackend for FnBackend<F>
where
    F: Fn(&CompletionRequest) -> Result<CompletionResponse, BackendError> + Send + Sync,
{
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (self.0)(request)
    }
}

/// Builds a single-choice response; handy for closure backends.
pub fn choice(index: usize, text: &str, token_logprobs: Vec<f64>, first_top: BTreeMap<String, f64>) -> CompletionChoice {
    MockSample { text: text.to_string(), token_logprobs, first_token_top_logits: first_top }.to_choice(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(prompt: &str, n: usize) -> CompletionRequest {
        CompletionRequest { prompt: prompt.into(), n, temperature: 0.8, max_tokens: 8, logprobs: 1, stop: vec![], seed: None }
    }

    fn s(text: &str) -> MockSample {
        MockSample { text: text.into(), token_logprobs: vec![-1.0], first_token_top_logits: BTreeMap::new() }
    }

    #[test]
    fn first_matching_rule_wins() {
        let digest = prompt_sha256("exact");
        let m = MockBackend::new(MockFixture {
            rules: vec![
                MockRule { matcher: PromptMatch::Sha256(digest), samples: vec![s("by hash")] },
                MockRule { matcher: PromptMatch::Contains("Answer:".into()), samples: vec![s("by pattern")] },
                MockRule { matcher: PromptMatch::Any, samples: vec![s("fallback")] },
            ],
        });
        assert_eq!(m.complete(&req("exact", 1)).unwrap().choices[0].text, "by hash");
        assert_eq!(m.complete(&req("x Answer:", 1)).unwrap().choices[0].text, "by pattern");
        assert_eq!(m.complete(&req("other", 1)).unwrap().choices[0].text, "fallback");
    }

    #[test]
    fn cycles_samples() {
        let m = MockBackend::new(MockFixture { rules: vec![MockRule { matcher: PromptMatch::Any, samples: vec![s("a"), s("b")] }] });
        let texts = m.complete(&req("p", 5)).unwrap().choices.into_iter().map(|c| c.text).collect::<Vec<_>>();
        assert_eq!(texts, vec!["a", "b", "a", "b", "a"]);
    }

    #[test]
    fn no_match_is_fixture_error() {
        let m = MockBackend::new(MockFixture::default());
        assert!(matches!(m.complete(&req("p", 1)), Err(BackendError::Fixture(_))));
    }

    #[test]
    fn fixture_json_shape() {
        let f: MockFixture = serde_json::from_str(
            r#"{"rules":[{"match":{"contains":"Next step:"},"samples":[{"text":"pour gas","token_logprobs":[-0.1,-0.2]}]},
                         {"match":"any","samples":[{"text":"YES","token_logprobs":[-0.1],"first_token_top_logits":{"YES":-0.1,"NO":-2.3}}]}]}"#,
        )
        .unwrap();
        assert_eq!(f.rules.len(), 2);
        assert_eq!(f.rules[1].matcher, PromptMatch::Any);
    }
}
