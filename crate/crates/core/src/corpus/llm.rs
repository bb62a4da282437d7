//! Three-step bug generation through a text completion service.
//!
//! Step 1 asks for a function note for the correct code, step 2 asks for bug
//! insertions given that note, and step 3 asks for an analysis of each
//! resulting bug. Step-2 answers must contain fenced blocks of the form
//!
//! ```text
//! TYPE: OOB
//! CORRECT: for (i = 0; i < N; i++)
//! BUGGY: for (i = 0; i <= N; i++)
//! ```

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SampleRecord;
use crate::error::{Error, Result};
use crate::forge::{verify_record, BugRecord, BugType, SkipEntry};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub p_function: String,
    pub p_insert: String,
    pub p_strategy: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            p_function: "You are an HLS expert. Describe in two or three sentences what the \
                         following HLS C/C++ function computes and how its pragmas shape the \
                         hardware.\n\n{code}\n"
                .into(),
            p_insert: "The following HLS code is correct. Function note: {function_note}\n\n\
                       {code}\n\nInsert one or more logic bugs drawn from these types: {bug_types}. \
                       Each bug must still compile and pass HLS synthesis. For every bug answer \
                       with a fenced block holding exactly three lines:\nTYPE: <type>\n\
                       CORRECT: <original snippet copied verbatim>\nBUGGY: <replacement>\n"
                .into(),
            p_strategy: "This HLS code contains a bug.\n\n{code}\n\nThe snippet `{snippet_correct}` \
                         was changed to `{snippet_buggy}`. Reply with a line starting ANALYSIS: \
                         explaining the cause and a line starting STRATEGY: explaining how to \
                         find and fix it.\n"
                .into(),
        }
    }
}

const PLACEHOLDERS: &[&str] = &[
    "code",
    "function_note",
    "bug_types",
    "snippet_correct",
    "snippet_buggy",
];

fn count_placeholder(template: &str, name: &str) -> usize {
    template.matches(&format!("{{{name}}}")).count()
}

impl PromptTemplates {
    pub fn validate(&self) -> Result<()> {
        let need = |name: &str, tpl: &str, which: &str, exact: bool| {
            let n = count_placeholder(tpl, name);
            if n == 0 || (exact && n != 1) {
                Err(Error::Config(format!(
                    "template {which} must contain {} {{{name}}} placeholder, found {n}",
                    if exact { "exactly one" } else { "a" }
                )))
            } else {
                Ok(())
            }
        };
        need("code", &self.p_function, "p_function", true)?;
        need("code", &self.p_insert, "p_insert", true)?;
        need("code", &self.p_strategy, "p_strategy", true)?;
        need("function_note", &self.p_insert, "p_insert", false)?;
        need("snippet_correct", &self.p_strategy, "p_strategy", false)?;
        need("snippet_buggy", &self.p_strategy, "p_strategy", false)?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let t: PromptTemplates = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }
}

/// Substitutes `{name}` placeholders in one pass, so inserted text is never
/// re-expanded.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = PLACEHOLDERS.iter().find_map(|name| {
            let token = format!("{{{name}}}");
            tail.starts_with(&token).then(|| (token.len(), values.iter().find(|(k, _)| k == name)))
        });
        match hit {
            Some((len, Some((_, v)))) => {
                out.push_str(v);
                rest = &tail[len..];
            }
            _ => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Text-in/text-out completion service.
pub trait CompletionClient: Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

impl<F: Fn(&str) -> Result<String> + Sync> CompletionClient for F {
    fn complete(&self, prompt: &str) -> Result<String> {
        self(prompt)
    }
}

/// Replays canned responses in order, then repeats the last one.
pub struct ScriptedClient {
    responses: Mutex<VecDeque<Result<String>>>,
    last: Mutex<Option<String>>,
    pub prompts: Mutex<Vec<String>>,
}

impl ScriptedClient {
    pub fn new(responses: impl IntoIterator<Item = Result<String>>) -> Self {
        ScriptedClient {
            responses: Mutex::new(responses.into_iter().collect()),
            last: Mutex::new(None),
            prompts: Mutex::new(Vec::new()),
        }
    }
}

impl CompletionClient for ScriptedClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        self.prompts.lock().expect("poisoned").push(prompt.to_string());
        let next = self.responses.lock().expect("poisoned").pop_front();
        let mut last = self.last.lock().expect("poisoned");
        match next {
            Some(Ok(text)) => {
                *last = Some(text.clone());
                Ok(text)
            }
            Some(Err(e)) => Err(e),
            None => last.clone().ok_or_else(|| Error::Client("script exhausted".into())),
        }
    }
}

/// Chat-completions style HTTP endpoint.
#[derive(Debug, Clone)]
pub struct HttpClient {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    /// Environment variable holding the bearer token.
    pub token_env: String,
    pub timeout: Duration,
}

impl HttpClient {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpClient {
            endpoint: endpoint.into(),
            model: "gpt-4".into(),
            temperature: 0.2,
            token_env: "HLSDBG_API_KEY".into(),
            timeout: Duration::from_secs(120),
        }
    }
}

impl CompletionClient for HttpClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut req = agent.post(&self.endpoint);
        if let Ok(token) = std::env::var(&self.token_env) {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| Error::Client(format!("{}: {e}", self.endpoint)))?;
        let value: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Client(format!("{}: {e}", self.endpoint)))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .or_else(|| value["content"].as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Client(format!("{}: response has no completion text", self.endpoint)))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 4,
            base_delay: Duration::from_millis(500),
        }
    }
}

fn call(client: &dyn CompletionClient, prompt: &str, policy: RetryPolicy) -> Result<String> {
    let mut delay = policy.base_delay;
    let mut attempt = 1;
    loop {
        match client.complete(prompt) {
            Ok(text) => return Ok(text),
            Err(e) if attempt >= policy.attempts.max(1) => return Err(e),
            Err(e) => {
                log::warn!("completion attempt {attempt} failed: {e}");
                std::thread::sleep(delay);
                delay *= 2;
                attempt += 1;
            }
        }
    }
}

/// One bug proposal parsed from a step-2 answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub bug_type: BugType,
    pub snippet_correct: String,
    pub snippet_buggy: String,
}

fn label_value<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let rest = line.trim_start().strip_prefix(label)?;
    Some(rest.strip_prefix(' ').unwrap_or(rest).trim_end_matches('\r'))
}

/// Extracts every well-formed fenced TYPE/CORRECT/BUGGY block.
pub fn parse_proposals(text: &str) -> Vec<Proposal> {
    let mut out = Vec::new();
    let mut block: Option<Vec<&str>> = None;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            match block.take() {
                Some(lines) => out.extend(parse_block(&lines)),
                None => block = Some(Vec::new()),
            }
        } else if let Some(b) = &mut block {
            b.push(line);
        }
    }
    out
}

fn parse_block(lines: &[&str]) -> Option<Proposal> {
    let find = |label: &str| lines.iter().find_map(|l| label_value(l, label));
    let bug_type = find("TYPE:")?.parse().ok()?;
    let snippet_correct = find("CORRECT:")?.to_string();
    let snippet_buggy = find("BUGGY:")?.to_string();
    if snippet_correct.is_empty() {
        return None;
    }
    Some(Proposal {
        bug_type,
        snippet_correct,
        snippet_buggy,
    })
}

/// Splits a step-3 answer into (analysis, strategy).
fn parse_analysis(text: &str) -> (String, Option<String>) {
    let mut analysis = Vec::new();
    let mut strategy = Vec::new();
    let mut target: Option<bool> = None;
    for line in text.lines() {
        if let Some(v) = label_value(line, "ANALYSIS:") {
            target = Some(false);
            analysis.push(v);
        } else if let Some(v) = label_value(line, "STRATEGY:") {
            target = Some(true);
            strategy.push(v);
        } else {
            match target {
                Some(true) => strategy.push(line),
                Some(false) => analysis.push(line),
                None => {}
            }
        }
    }
    if target.is_none() {
        return (text.trim().to_string(), None);
    }
    let strategy = (!strategy.is_empty()).then(|| strategy.join("\n").trim().to_string());
    (analysis.join("\n").trim().to_string(), strategy)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LlmOutcome {
    pub function_note: String,
    pub records: Vec<BugRecord>,
    pub skipped: Vec<SkipEntry>,
}

/// Runs the three chained calls for one sample.
pub fn generate_via_llm(
    client: &dyn CompletionClient,
    sample: &SampleRecord,
    templates: &PromptTemplates,
    policy: RetryPolicy,
) -> Result<LlmOutcome> {
    templates.validate()?;
    let code = sample.code.as_str();
    let function_note = call(client, &fill(&templates.p_function, &[("code", code)]), policy)?
        .trim()
        .to_string();

    let types = BugType::ALL.map(BugType::as_str).join(", ");
    let insert_prompt = fill(
        &templates.p_insert,
        &[("code", code), ("function_note", &function_note), ("bug_types", &types)],
    );
    let mut outcome = LlmOutcome {
        function_note: function_note.clone(),
        ..Default::default()
    };
    let mut proposals = parse_proposals(&call(client, &insert_prompt, policy)?);
    if proposals.is_empty() {
        proposals = parse_proposals(&call(client, &insert_prompt, policy)?);
    }
    if proposals.is_empty() {
        outcome.skipped.push(SkipEntry {
            sample_id: sample.id.clone(),
            reason: "no parseable bug block after retry".into(),
        });
        return Ok(outcome);
    }

    for (k, p) in proposals.into_iter().enumerate() {
        let id = format!("{}-llm{k}-{}", sample.id, p.bug_type);
        let Some(start) = code.find(&p.snippet_correct) else {
            outcome.skipped.push(SkipEntry {
                sample_id: sample.id.clone(),
                reason: format!("{id}: correct snippet not found in the sample"),
            });
            continue;
        };
        let span = start..start + p.snippet_correct.len();
        let record = match BugRecord::from_splice(&id, code, span, &p.snippet_buggy, p.bug_type) {
            Ok(r) if verify_record(&r) => r,
            Ok(_) => {
                outcome.skipped.push(SkipEntry {
                    sample_id: sample.id.clone(),
                    reason: format!("{id}: spliced record fails verification"),
                });
                continue;
            }
            Err(e) => {
                outcome.skipped.push(SkipEntry {
                    sample_id: sample.id.clone(),
                    reason: format!("{id}: {e}"),
                });
                continue;
            }
        };
        let strategy_prompt = fill(
            &templates.p_strategy,
            &[
                ("code", &record.buggy_code),
                ("snippet_correct", &record.snippet_correct),
                ("snippet_buggy", &record.snippet_buggy),
            ],
        );
        let (analysis, strategy) = parse_analysis(&call(client, &strategy_prompt, policy)?);
        let mut record = record;
        record.function_note = Some(function_note.clone());
        record.bug_analysis = (!analysis.is_empty()).then_some(analysis);
        record.strategy = strategy;
        outcome.records.push(record);
    }
    Ok(outcome)
}

/// Runs [`generate_via_llm`] over many samples with at most `max_in_flight`
/// samples in progress. Results keep sample order; a sample whose calls fail
/// is recorded as skipped.
pub fn generate_many(
    client: &dyn CompletionClient,
    samples: &[SampleRecord],
    templates: &PromptTemplates,
    policy: RetryPolicy,
    max_in_flight: usize,
) -> Result<LlmOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<Result<LlmOutcome>> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| generate_via_llm(client, s, templates, policy))
            .collect()
    });
    let mut all = LlmOutcome::default();
    let mut failures = 0;
    let mut last_err = None;
    for (sample, r) in samples.iter().zip(results) {
        match r {
            Ok(r) => {
                all.records.extend(r.records);
                all.skipped.extend(r.skipped);
            }
            Err(e) => {
                all.skipped.push(SkipEntry {
                    sample_id: sample.id.clone(),
                    reason: e.to_string(),
                });
                failures += 1;
                last_err = Some(e);
            }
        }
    }
    // a client that fails on every sample is a configuration problem, not data
    match last_err {
        Some(e) if failures == samples.len() => Err(e),
        _ => Ok(all),
    }
}
