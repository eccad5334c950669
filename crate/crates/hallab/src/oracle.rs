//! Exact hallucination labeling against the knowledge graph: whole-sentence
//! verdicts by string lookup, token-level first-hallucinated positions by
//! trie walk, and the precision/recall aggregation over sampled completions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::sampler::GenerationRecord;
use crate::tokenizer::EOS_ID;
use crate::trie::ObjectTrie;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceLabel {
    pub is_hallucination: bool,
    pub matched_object: Option<String>,
}

/// Outcome of sentence labeling; prompts absent from the reference split are
/// flagged rather than labeled and excluded from rate computations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SentenceOutcome {
    Labeled(SentenceLabel),
    OutOfReference,
}

/// Exact, whitespace-exact string match of the decoded object against the
/// reference split's objects for the prompt pair.
pub fn label_sentence(rec: &GenerationRecord, reference: &KnowledgeGraph) -> SentenceOutcome {
    if !reference.has_pair(&rec.subject, &rec.predicate) {
        return SentenceOutcome::OutOfReference;
    }
    let matched = reference.contains_object(&rec.subject, &rec.predicate, &rec.object_text);
    SentenceOutcome::Labeled(SentenceLabel {
        is_hallucination: !matched,
        matched_object: matched.then(|| rec.object_text.clone()),
    })
}

/// Token-level labels. `first_hallucinated_index` is the smallest position
/// whose prefix leaves the object trie; an `<EOS>` that ends a valid strict
/// prefix without completing an object is itself the first hallucinated
/// token. `labels` covers positions up to and including that index (`true`
/// only at the index), or every object token when the record is clean —
/// nothing after the first hallucinated token is ever labeled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLabel {
    pub first_hallucinated_index: Option<usize>,
    pub labels: Vec<bool>,
}

pub fn label_tokens(rec: &GenerationRecord, trie: &ObjectTrie) -> TokenLabel {
    let body = rec.body_tokens();
    let has_eos = rec.object_tokens.last() == Some(&EOS_ID);
    let first = match trie.first_invalid(&rec.subject, &rec.predicate, body) {
        Some(i) => Some(i),
        None if has_eos && !trie.is_complete_object(&rec.subject, &rec.predicate, body) => {
            Some(body.len())
        }
        None => None,
    };
    let labels = match first {
        Some(i) => {
            let mut v = vec![false; i + 1];
            v[i] = true;
            v
        }
        None => vec![false; body.len()],
    };
    TokenLabel {
        first_hallucinated_index: first,
        labels,
    }
}

/// One point of the sampling-temperature trade-off: precision is one minus
/// the hallucination rate over all records; recall is the mean over prompts
/// of the fraction of valid objects generated at least once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PRPoint {
    pub temperature: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPR {
    pub subject: String,
    pub predicate: String,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrResult {
    pub point: PRPoint,
    pub per_prompt: Vec<PromptPR>,
    pub out_of_reference: usize,
}

/// Aggregates records of a single temperature. Every in-reference prompt
/// must carry exactly `n_samples` records.
pub fn pr_at_temperature(
    records: &[GenerationRecord],
    reference: &KnowledgeGraph,
    n_samples: u32,
) -> Result<PrResult> {
    if records.is_empty() {
        return Err(Error::invalid("pr_at_temperature", "no records"));
    }
    let temperature = records[0].temperature;
    if records.iter().any(|r| r.temperature != temperature) {
        return Err(Error::invalid(
            "pr_at_temperature",
            "records span multiple temperatures",
        ));
    }

    let mut by_prompt: BTreeMap<(String, String), Vec<&GenerationRecord>> = BTreeMap::new();
    for r in records {
        by_prompt
            .entry((r.subject.clone(), r.predicate.clone()))
            .or_default()
            .push(r);
    }

    let mut out_of_reference = 0usize;
    let mut missing: Vec<String> = Vec::new();
    let mut per_prompt = Vec::new();
    let mut total = 0usize;
    let mut hallucinated = 0usize;
    for ((s, p), recs) in &by_prompt {
        let Some(objects) = reference.object_set(s, p) else {
            out_of_reference += recs.len();
            continue;
        };
        if recs.len() != n_samples as usize {
            missing.push(format!("({s}, {p}): {} of {n_samples}", recs.len()));
            continue;
        }
        let mut generated: BTreeSet<&str> = BTreeSet::new();
        let mut prompt_halluc = 0usize;
        for r in recs {
            if objects.contains(&r.object_text) {
                generated.insert(r.object_text.as_str());
            } else {
                prompt_halluc += 1;
            }
        }
        total += recs.len();
        hallucinated += prompt_halluc;
        per_prompt.push(PromptPR {
            subject: s.clone(),
            predicate: p.clone(),
            precision: 1.0 - prompt_halluc as f64 / recs.len() as f64,
            recall: generated.len() as f64 / objects.len() as f64,
        });
    }
    if !missing.is_empty() {
        return Err(Error::invalid(
            "pr_at_temperature",
            format!("prompts with missing samples: {}", missing.join("; ")),
        ));
    }
    if per_prompt.is_empty() {
        return Err(Error::invalid(
            "pr_at_temperature",
            "no in-reference prompts",
        ));
    }
    let precision = 1.0 - hallucinated as f64 / total as f64;
    let recall = per_prompt.iter().map(|p| p.recall).sum::<f64>() / per_prompt.len() as f64;
    Ok(PrResult {
        point: PRPoint {
            temperature,
            precision,
            recall,
        },
        per_prompt,
        out_of_reference,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RateStats {
    pub total: usize,
    pub hallucinated: usize,
    pub out_of_reference: usize,
}

impl RateStats {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.hallucinated as f64 / self.total as f64
        }
    }
}

/// Fraction of records labeled hallucination, with out-of-reference prompts
/// counted separately. Callers evaluate each split against its own
/// reference graph (seen prompts against the training split, IVS prompts
/// against the IVS).
pub fn hallucination_rate(records: &[GenerationRecord], reference: &KnowledgeGraph) -> RateStats {
    let mut stats = RateStats::default();
    for r in records {
        match label_sentence(r, reference) {
            SentenceOutcome::OutOfReference => stats.out_of_reference += 1,
            SentenceOutcome::Labeled(l) => {
                stats.total += 1;
                if l.is_hallucination {
                    stats.hallucinated += 1;
                }
            }
        }
    }
    stats
}
