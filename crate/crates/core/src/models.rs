//! Generation backends: the per-document answer model (SLM) and the final
//! answer model (LLM).
//!
//! Both roles are served by [`ModelEndpoint`], which is either a
//! deterministic offline mock or an OpenAI-compatible HTTP chat endpoint.
//! The mocks make the whole pipeline runnable and byte-reproducible with no
//! network:
//!
//! - mock SLM: answers with the document sentence sharing the most tokens
//!   with the query (sentences split on periods, first sentence wins ties),
//!   and assigns each answer token a deterministic pseudo log-probability in
//!   [-1.0, -0.505].
//! - mock LLM: scans the context for assertion markers of the form
//!   "the answer is X", answers with the majority X (lexicographically
//!   smallest on ties), and refuses with "i don't know" when the context is
//!   empty or carries no marker.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::embed::stable_hash;
use crate::error::{Error, Result};
use crate::textstats::tokenize;

/// Refusal string the mock LLM returns for an empty or marker-free context.
pub const MOCK_REFUSAL: &str = "i don't know";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointKind {
    Mock,
    Http,
}

/// One generation backend, reused for both the SLM and LLM roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub kind: EndpointKind,
    pub url: Option<String>,
    pub model_name: String,
    pub temperature: f64,
    /// Name of the environment variable holding the bearer credential.
    /// Only the name is ever recorded; the value stays in the environment.
    pub credential_env: Option<String>,
    pub timeout_secs: u64,
}

impl ModelEndpoint {
    pub fn mock(model_name: &str) -> Self {
        Self {
            kind: EndpointKind::Mock,
            url: None,
            model_name: model_name.to_string(),
            temperature: 0.1,
            credential_env: None,
            timeout_secs: 60,
        }
    }

    pub fn http(url: &str, model_name: &str, temperature: f64) -> Self {
        Self {
            kind: EndpointKind::Http,
            url: Some(url.to_string()),
            model_name: model_name.to_string(),
            temperature,
            credential_env: None,
            timeout_secs: 60,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "temperature {} is negative",
                self.temperature
            )));
        }
        if self.kind == EndpointKind::Http && self.url.is_none() {
            return Err(Error::InvalidConfig(
                "http endpoint requires a url".into(),
            ));
        }
        Ok(())
    }
}

/// Text produced by a backend plus its per-token log-probabilities.
///
/// `token_logprobs` is `None` when the backend did not report them; feature
/// extraction refuses to run in that case rather than imputing values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    token_logprobs: Option<Vec<f64>>,
}

impl GenerationResult {
    pub fn new(text: String, token_logprobs: Option<Vec<f64>>) -> Result<Self> {
        if let Some(lps) = &token_logprobs {
            if !text.is_empty() && lps.is_empty() {
                return Err(Error::InvalidConfig(
                    "non-empty text requires non-empty token log-probabilities".into(),
                ));
            }
            if lps.iter().any(|lp| !lp.is_finite() || *lp > 0.0) {
                return Err(Error::InvalidConfig(
                    "token log-probabilities must be finite and non-positive".into(),
                ));
            }
        }
        Ok(Self {
            text,
            token_logprobs,
        })
    }

    pub fn token_logprobs(&self) -> Option<&[f64]> {
        self.token_logprobs.as_deref()
    }
}

/// Deterministic pseudo log-probability for one token: always in
/// [-1.0, -0.505], distinct across most tokens, stable across runs.
fn mock_token_logprob(token: &str) -> f64 {
    let bucket = (stable_hash(token.as_bytes()) % 100) as f64;
    -(1.0 + bucket / 100.0) / 2.0
}

fn mock_logprobs(text: &str) -> Vec<f64> {
    tokenize(text)
        .tokens()
        .iter()
        .map(|t| mock_token_logprob(t))
        .collect()
}

/// Mock SLM: the document sentence with the highest token overlap with the
/// query. Sentences are split on periods; the earliest sentence wins ties.
pub fn mock_slm(query: &str, doc_text: &str) -> GenerationResult {
    let query_types = tokenize(query).types_owned();
    let mut best: Option<(usize, &str)> = None;
    for raw in doc_text.split('.') {
        let sentence = raw.trim();
        let tokens = tokenize(sentence);
        if tokens.is_empty() {
            continue;
        }
        let overlap = tokens
            .types()
            .iter()
            .filter(|t| query_types.contains(*t))
            .count();
        match best {
            Some((best_overlap, _)) if best_overlap >= overlap => {}
            _ => best = Some((overlap, sentence)),
        }
    }
    let text = best.map(|(_, s)| s.to_string()).unwrap_or_default();
    let logprobs = mock_logprobs(&text);
    GenerationResult {
        text,
        token_logprobs: Some(logprobs),
    }
}

/// Candidate answers asserted by marker phrases ("the answer is X") in one
/// text, in order of appearance.
fn marker_answers(text: &str) -> Vec<String> {
    let tokens = tokenize(text);
    let toks = tokens.tokens();
    let mut found = Vec::new();
    for i in 0..toks.len().saturating_sub(3) {
        if toks[i] == "the" && toks[i + 1] == "answer" && toks[i + 2] == "is" {
            found.push(toks[i + 3].clone());
        }
    }
    found
}

/// Mock LLM: majority vote over marker answers found in the context.
pub fn mock_llm(context: &[Document]) -> String {
    if context.is_empty() {
        return MOCK_REFUSAL.to_string();
    }
    let mut votes: BTreeMap<String, usize> = BTreeMap::new();
    for doc in context {
        for answer in marker_answers(&doc.text) {
            *votes.entry(answer).or_insert(0) += 1;
        }
    }
    // BTreeMap iterates in lexical order, so keeping the first strict
    // maximum realizes the smallest-answer tie rule.
    let mut best: Option<(&String, usize)> = None;
    for (answer, count) in &votes {
        match best {
            Some((_, best_count)) if best_count >= *count => {}
            _ => best = Some((answer, *count)),
        }
    }
    best.map(|(a, _)| a.clone())
        .unwrap_or_else(|| MOCK_REFUSAL.to_string())
}

/// Substitutes `{question}` and then `{context}` into the template.
/// Context documents are joined by blank lines in retrieval order.
pub fn assemble_prompt(template: &str, query: &str, context: &[Document]) -> String {
    let joined = context
        .iter()
        .map(|d| d.text.as_str())
        .collect::<Vec<_>>()
        .join("\n\n");
    template
        .replace("{question}", query)
        .replace("{context}", &joined)
}

/// Per-document answer extraction.
pub fn slm_generate(
    endpoint: &ModelEndpoint,
    query: &str,
    doc: &Document,
) -> Result<GenerationResult> {
    endpoint.validate()?;
    match endpoint.kind {
        EndpointKind::Mock => Ok(mock_slm(query, &doc.text)),
        EndpointKind::Http => {
            let user = format!("Passage: {}\n\nQuestion: {}", doc.text, query);
            http_chat(
                endpoint,
                "Answer the question using only the given passage. Reply with the answer only.",
                &user,
                true,
            )
        }
    }
}

/// Final answer over the filtered context.
pub fn llm_answer(
    endpoint: &ModelEndpoint,
    query: &str,
    context: &[Document],
    prompt_template: &str,
) -> Result<String> {
    endpoint.validate()?;
    match endpoint.kind {
        EndpointKind::Mock => Ok(mock_llm(context)),
        EndpointKind::Http => {
            let user = assemble_prompt(prompt_template, query, context);
            let result = http_chat(
                endpoint,
                "You are a question answering assistant.",
                &user,
                false,
            )?;
            Ok(result.text)
        }
    }
}

// --- OpenAI-compatible chat request/response types ---

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    logprobs: bool,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
    #[serde(default)]
    logprobs: Option<ChatLogprobs>,
}

#[derive(Debug, Deserialize)]
struct ChatResponseMessage {
    content: String,
}

#[derive(Debug, Deserialize)]
struct ChatLogprobs {
    #[serde(default)]
    content: Vec<TokenLogprob>,
}

#[derive(Debug, Deserialize)]
struct TokenLogprob {
    logprob: f64,
}

fn build_chat_request<'a>(
    endpoint: &'a ModelEndpoint,
    system: &'a str,
    user: &'a str,
    want_logprobs: bool,
) -> ChatRequest<'a> {
    ChatRequest {
        model: &endpoint.model_name,
        messages: vec![
            ChatMessage {
                role: "system",
                content: system,
            },
            ChatMessage {
                role: "user",
                content: user,
            },
        ],
        temperature: endpoint.temperature,
        logprobs: want_logprobs,
    }
}

fn parse_chat_response(body: &str, want_logprobs: bool) -> Result<GenerationResult> {
    let parsed: ChatResponse = serde_json::from_str(body)
        .map_err(|e| Error::Endpoint(format!("malformed chat response: {e}")))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| Error::Endpoint("chat response has no choices".into()))?;
    let logprobs = if want_logprobs {
        choice
            .logprobs
            .filter(|lp| !lp.content.is_empty())
            .map(|lp| lp.content.into_iter().map(|t| t.logprob.min(0.0)).collect())
    } else {
        None
    };
    GenerationResult::new(choice.message.content, logprobs)
}

/// One chat completion round-trip. No retries: a failed call is an error,
/// so evaluation runs stay reproducible instead of silently degrading.
fn http_chat(
    endpoint: &ModelEndpoint,
    system: &str,
    user: &str,
    want_logprobs: bool,
) -> Result<GenerationResult> {
    let url = endpoint
        .url
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("http endpoint requires a url".into()))?;
    let request = build_chat_request(endpoint, system, user, want_logprobs);

    let client = reqwest::blocking::Client::new();
    let mut req = client
        .post(url)
        .timeout(std::time::Duration::from_secs(endpoint.timeout_secs))
        .json(&request);
    if let Some(var) = &endpoint.credential_env {
        let token = std::env::var(var).map_err(|_| Error::MissingCredential(var.clone()))?;
        req = req.bearer_auth(token);
    }
    let resp = req
        .send()
        .map_err(|e| Error::Endpoint(format!("chat request failed: {e}")))?;
    let status = resp.status();
    let body = resp
        .text()
        .map_err(|e| Error::Endpoint(format!("chat response unreadable: {e}")))?;
    if !status.is_success() {
        return Err(Error::Endpoint(format!(
            "chat endpoint returned {status}: {body}"
        )));
    }
    parse_chat_response(&body, want_logprobs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> Document {
        Document::clean(id, text)
    }

    #[test]
    fn mock_slm_picks_highest_overlap_sentence() {
        let text = "zatovek output stays low. which disease does hiv cause here. the answer is syphilis.";
        let got = mock_slm("which disease does hiv cause", text);
        assert_eq!(got.text, "which disease does hiv cause here");
    }

    #[test]
    fn mock_slm_marker_sentence_surfaces_answer() {
        let text = "which disease does hiv cause, experts note, the answer is syphilis.";
        let got = mock_slm("which disease does hiv cause", text);
        assert!(got.text.contains("syphilis"));
    }

    #[test]
    fn mock_slm_is_deterministic() {
        let a = mock_slm("who wrote hamlet", "shakespeare wrote hamlet. plays endure.");
        let b = mock_slm("who wrote hamlet", "shakespeare wrote hamlet. plays endure.");
        assert_eq!(a, b);
    }

    #[test]
    fn mock_slm_logprobs_in_documented_band() {
        let got = mock_slm("q", "several words with varied hashes appear here.");
        let lps = got.token_logprobs().unwrap();
        assert_eq!(lps.len(), 7);
        for lp in lps {
            assert!((-1.0..=-0.505).contains(lp), "logprob {lp} out of band");
        }
    }

    #[test]
    fn mock_slm_tie_prefers_first_sentence() {
        let got = mock_slm("unrelated query", "first sentence here. second sentence there.");
        assert_eq!(got.text, "first sentence here");
    }

    #[test]
    fn mock_llm_majority_and_ties() {
        let ctx = vec![
            doc("a", "records say the answer is aids."),
            doc("b", "other records say the answer is aids."),
        ];
        assert_eq!(mock_llm(&ctx), "aids");

        let tied = vec![
            doc("a", "one says the answer is syphilis."),
            doc("b", "another says the answer is aids."),
        ];
        assert_eq!(mock_llm(&tied), "aids");

        assert_eq!(mock_llm(&[]), MOCK_REFUSAL);
        assert_eq!(mock_llm(&[doc("a", "no marker at all")]), MOCK_REFUSAL);
    }

    #[test]
    fn prompt_assembly_joins_context_in_order() {
        let template = "Use context:\n{context}\nQ: {question}\nA:";
        let ctx = vec![doc("a", "first passage"), doc("b", "second passage")];
        let prompt = assemble_prompt(template, "who", &ctx);
        assert_eq!(
            prompt,
            "Use context:\nfirst passage\n\nsecond passage\nQ: who\nA:"
        );
    }

    #[test]
    fn generation_result_invariants() {
        assert!(GenerationResult::new("hi".into(), Some(vec![])).is_err());
        assert!(GenerationResult::new("hi".into(), Some(vec![0.5])).is_err());
        assert!(GenerationResult::new("hi".into(), Some(vec![-0.5])).is_ok());
        assert!(GenerationResult::new(String::new(), Some(vec![])).is_ok());
        assert!(GenerationResult::new("hi".into(), None).is_ok());
    }

    #[test]
    fn http_endpoint_requires_url() {
        let mut ep = ModelEndpoint::mock("m");
        ep.kind = EndpointKind::Http;
        assert!(ep.validate().is_err());
    }

    #[test]
    fn missing_credential_is_reported_without_retry() {
        let mut ep = ModelEndpoint::http("http://127.0.0.1:1/v1/chat/completions", "m", 0.1);
        ep.credential_env = Some("FILTERRAG_TEST_ABSENT_CREDENTIAL".into());
        let err = slm_generate(&ep, "q", &doc("d", "text")).unwrap_err();
        assert!(matches!(err, Error::MissingCredential(_)));
    }

    #[test]
    fn chat_request_serializes_openai_shape() {
        let ep = ModelEndpoint::http("http://x/v1/chat/completions", "gpt-test", 0.1);
        let req = build_chat_request(&ep, "sys", "usr", true);
        let json = serde_json::to_value(&req).unwrap();
        assert_eq!(json["model"], "gpt-test");
        assert_eq!(json["temperature"], 0.1);
        assert_eq!(json["logprobs"], true);
        assert_eq!(json["messages"][0]["role"], "system");
        assert_eq!(json["messages"][1]["content"], "usr");
    }

    #[test]
    fn chat_response_parses_content_and_logprobs() {
        let body = r#"{
            "choices": [{
                "message": {"content": "aids"},
                "logprobs": {"content": [{"token": "aids", "logprob": -0.25}]}
            }]
        }"#;
        let got = parse_chat_response(body, true).unwrap();
        assert_eq!(got.text, "aids");
        assert_eq!(got.token_logprobs(), Some(&[-0.25][..]));

        let no_lp = r#"{"choices": [{"message": {"content": "aids"}}]}"#;
        let got = parse_chat_response(no_lp, true).unwrap();
        assert_eq!(got.token_logprobs(), None);
    }
}
