//! LLM-as-judge harness for explanation quality: forward simulation
//! (guess the prediction from the masked explanation), prediction
//! verification (assess the prediction from the full explanation), and
//! preference ranking over competing methods with rotated presentation
//! order. Judge calls run over a small worker pool; unparseable or failed
//! judgments are counted and scored against the judge, never dropped.

use crate::dataset::Gold;
use crate::eval::parse_verdict_token;
use crate::explain::{render_html, render_text, RenderError};
use crate::gateway::{
    method_description, render_prompt, CallCounters, CompletionParams, Gateway, GatewayError,
    TemplateId,
};
use crate::pipeline::{ExecutionTrace, FinalAnswer};
use serde::Serialize;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

const JUDGE_WORKERS: usize = 4;

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("no judge description for method {name:?}")]
    UnknownMethod { name: String },
    #[error("ranking samples disagree on the method list")]
    InconsistentMethods,
    #[error("ranking needs at least 2 methods, got {m}")]
    TooFewMethods { m: usize },
}

/// One verdict-task explanation readied for the judges: the masked
/// explanation for simulation and the full explanation (with its
/// prediction) for verification.
#[derive(Debug, Clone)]
pub struct JudgeItem {
    pub id: String,
    pub masked_text: String,
    pub answered_html: String,
    pub prediction: bool,
    pub gold: bool,
}

impl JudgeItem {
    /// Builds a judge item from a finished trace. Only traces that produced
    /// a TRUE/FALSE answer against a TRUE/FALSE reference participate.
    pub fn from_trace(
        trace: &ExecutionTrace,
        gold: &Gold,
    ) -> Result<Option<JudgeItem>, RenderError> {
        let (FinalAnswer::Bool(prediction), Gold::Bool(gold)) = (&trace.answer, gold) else {
            return Ok(None);
        };
        Ok(Some(JudgeItem {
            id: trace.id.clone(),
            masked_text: render_text(trace, false)?,
            answered_html: render_html(trace, true)?,
            prediction: *prediction,
            gold: *gold,
        }))
    }
}

/// Completes every prompt through the gateway over a worker pool,
/// preserving input order. Per-prompt failures come back as errors in
/// their slot rather than aborting the batch.
fn complete_all(
    gateway: &Gateway,
    template: TemplateId,
    prompts: &[String],
    params: &CompletionParams,
    counters: &CallCounters,
) -> Vec<Result<String, GatewayError>> {
    let workers = JUDGE_WORKERS.min(prompts.len().max(1));
    let cursor = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<String, GatewayError>>>> =
        Mutex::new((0..prompts.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= prompts.len() {
                    break;
                }
                let result = gateway.complete(template, &prompts[i], params, counters);
                slots.lock().expect("judge slots poisoned")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("judge slots poisoned")
        .into_iter()
        .map(|slot| slot.expect("every prompt completed"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub items: usize,
    /// Judgments that failed or held no verdict; scored as misses.
    pub unparseable: usize,
    pub matches: usize,
    /// Fraction of all items where the judge reproduced the model's
    /// prediction.
    pub accuracy: Option<f64>,
}

/// Forward simulation: the judge sees only the masked explanation and must
/// guess what the model predicted.
pub fn run_simulation(
    items: &[JudgeItem],
    gateway: &Gateway,
    params: &CompletionParams,
    counters: &CallCounters,
) -> Result<SimulationReport, JudgeError> {
    let mut prompts = Vec::with_capacity(items.len());
    for item in items {
        let mut bindings = BTreeMap::new();
        bindings.insert("text_content".to_string(), item.masked_text.clone());
        prompts.push(render_prompt(TemplateId::JudgeSimulation, &bindings)?);
    }
    let completions = complete_all(gateway, TemplateId::JudgeSimulation, &prompts, params, counters);
    let mut matches = 0;
    let mut unparseable = 0;
    for (item, completion) in items.iter().zip(completions) {
        match completion.ok().as_deref().and_then(parse_verdict_token) {
            Some(guess) if guess == item.prediction => matches += 1,
            Some(_) => {}
            None => unparseable += 1,
        }
    }
    Ok(SimulationReport {
        items: items.len(),
        unparseable,
        matches,
        accuracy: (!items.is_empty()).then(|| matches as f64 / items.len() as f64),
    })
}

/// The answer options shown to the verification judge for item `i`; the
/// order alternates by item parity to cancel position bias.
pub fn verification_options(i: usize) -> (&'static str, &'static str) {
    if i % 2 == 0 {
        ("correct", "incorrect")
    } else {
        ("incorrect", "correct")
    }
}

/// Reads a correct/incorrect verdict out of a judge completion. The
/// negative form wins when present, since "incorrect" contains "correct".
pub fn parse_assessment(completion: &str) -> Option<bool> {
    let negative = regex::Regex::new(r"(?i)\bincorrect\b").unwrap();
    if negative.is_match(completion) {
        return Some(false);
    }
    let positive = regex::Regex::new(r"(?i)\bcorrect\b").unwrap();
    positive.is_match(completion).then_some(true)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub items: usize,
    /// Judgments that failed or held no verdict; scored as misses.
    pub unparseable: usize,
    /// Judgments that matched the prediction's actual correctness.
    pub agreements: usize,
    pub accuracy: Option<f64>,
}

/// Prediction verification: the judge sees the full explanation (with its
/// prediction) and assesses whether the prediction is correct. A judgment
/// scores when it matches the prediction's actual correctness against the
/// reference.
pub fn run_verification(
    items: &[JudgeItem],
    method: &str,
    gateway: &Gateway,
    params: &CompletionParams,
    counters: &CallCounters,
) -> Result<VerificationReport, JudgeError> {
    let description = method_description(method)
        .ok_or_else(|| JudgeError::UnknownMethod { name: method.to_string() })?;
    let mut prompts = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let (option1, option2) = verification_options(i);
        let mut bindings = BTreeMap::new();
        bindings.insert("method".to_string(), method.to_string());
        bindings.insert("method_specific_info".to_string(), description.to_string());
        bindings.insert("html_content".to_string(), item.answered_html.clone());
        bindings.insert("option1".to_string(), option1.to_string());
        bindings.insert("option2".to_string(), option2.to_string());
        prompts.push(render_prompt(TemplateId::JudgeVerification, &bindings)?);
    }
    let completions =
        complete_all(gateway, TemplateId::JudgeVerification, &prompts, params, counters);
    let mut agreements = 0;
    let mut unparseable = 0;
    for (item, completion) in items.iter().zip(completions) {
        match completion.ok().as_deref().and_then(parse_assessment) {
            Some(judged_correct) => {
                if judged_correct == (item.prediction == item.gold) {
                    agreements += 1;
                }
            }
            None => unparseable += 1,
        }
    }
    Ok(VerificationReport {
        items: items.len(),
        unparseable,
        agreements,
        accuracy: (!items.is_empty()).then(|| agreements as f64 / items.len() as f64),
    })
}

/// One sample's competing explanations, as (method name, rendered
/// explanation) in a fixed method order shared by every sample.
#[derive(Debug, Clone)]
pub struct RankingSample {
    pub id: String,
    pub explanations: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingReport {
    pub methods: Vec<String>,
    /// Mean rank per method (1 is best): each sample averages its parsed
    /// rotations, then samples average with equal weight.
    pub mean_ranks: Vec<f64>,
    pub samples: usize,
    /// Samples with at least one parsed rotation.
    pub contributing_samples: usize,
    pub prompts: usize,
    pub parsed_prompts: usize,
    pub skipped_prompts: usize,
}

/// Reads a ranking permutation (display indices, best first) out of a judge
/// completion: the first appearance order of the integers 1..=m must form a
/// permutation.
pub fn parse_ranking(completion: &str, m: usize) -> Option<Vec<usize>> {
    let number = regex::Regex::new(r"\d+").unwrap();
    let mut seen = Vec::new();
    for tok in number.find_iter(completion) {
        let Ok(v) = tok.as_str().parse::<usize>() else { continue };
        if (1..=m).contains(&v) && !seen.contains(&v) {
            seen.push(v);
        }
    }
    (seen.len() == m).then_some(seen)
}

/// Preference ranking: each sample's explanations are shown `m` times, the
/// presentation order rotated one position per prompt, so every method
/// leads exactly once. A sample's rank per method averages its parsed
/// rotations (skipped rotations renormalize the sample); the report
/// averages samples with equal weight.
pub fn run_ranking(
    samples: &[RankingSample],
    gateway: &Gateway,
    params: &CompletionParams,
    counters: &CallCounters,
) -> Result<RankingReport, JudgeError> {
    let methods: Vec<String> = samples
        .first()
        .map(|s| s.explanations.iter().map(|(m, _)| m.clone()).collect())
        .unwrap_or_default();
    let m = methods.len();
    if !samples.is_empty() && m < 2 {
        return Err(JudgeError::TooFewMethods { m });
    }
    for sample in samples {
        let names: Vec<&String> = sample.explanations.iter().map(|(m, _)| m).collect();
        if names.len() != m || names.iter().zip(&methods).any(|(a, b)| *a != b) {
            return Err(JudgeError::InconsistentMethods);
        }
    }
    let mut prompts = Vec::with_capacity(samples.len() * m);
    for sample in samples {
        for rotation in 0..m {
            let mut block = String::new();
            for display in 0..m {
                let (_, text) = &sample.explanations[(rotation + display) % m];
                block.push_str(&format!("Explanation {}:\n{}\n\n", display + 1, text));
            }
            let mut bindings = BTreeMap::new();
            bindings.insert("explanations".to_string(), block);
            prompts.push(render_prompt(TemplateId::JudgeRanking, &bindings)?);
        }
    }
    let completions = complete_all(gateway, TemplateId::JudgeRanking, &prompts, params, counters);
    let mut mean_sums = vec![0.0f64; m];
    let mut contributing_samples = 0usize;
    let mut parsed_prompts = 0usize;
    let mut skipped_prompts = 0usize;
    for s in 0..samples.len() {
        let mut sample_sums = vec![0.0f64; m];
        let mut sample_parsed = 0usize;
        for rotation in 0..m {
            let completion = &completions[s * m + rotation];
            match completion.as_deref().ok().and_then(|c| parse_ranking(c, m)) {
                Some(order) => {
                    sample_parsed += 1;
                    for (position, display) in order.iter().enumerate() {
                        let method_index = (rotation + display - 1) % m;
                        sample_sums[method_index] += (position + 1) as f64;
                    }
                }
                None => skipped_prompts += 1,
            }
        }
        parsed_prompts += sample_parsed;
        if sample_parsed > 0 {
            contributing_samples += 1;
            for (mean_sum, sample_sum) in mean_sums.iter_mut().zip(&sample_sums) {
                *mean_sum += sample_sum / sample_parsed as f64;
            }
        }
    }
    let mean_ranks = mean_sums
        .iter()
        .map(|s| if contributing_samples > 0 { s / contributing_samples as f64 } else { 0.0 })
        .collect();
    Ok(RankingReport {
        methods,
        mean_ranks,
        samples: samples.len(),
        contributing_samples,
        prompts: samples.len() * m,
        parsed_prompts,
        skipped_prompts,
    })
}
