//! Hallucination detectors: a linear readout on a frozen LM layer tap
//! (`head`) or a fully finetuned copy of the LM (`full`), each trained for
//! the sentence task (one verdict at the `<EOS>` position) or the token
//! task (a verdict per object token up to the first hallucinated one).
//!
//! Sentence-task full detectors train in two stages, linear probing then
//! full finetuning; stage one is byte-for-byte the head-detector training
//! path, so a full detector's probe state equals an independently trained
//! head detector under the same seed and schedule.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::metrics::auc_pr;
use crate::model::ModelParams;
use crate::oracle::{label_sentence, label_tokens, SentenceOutcome};
use crate::sampler::{generate_batch, GenerationRecord, Prompt};
use crate::seed::hash_u64;
use crate::tokenizer::{TokenizerVocab, EOS_ID, PAD_ID};
use crate::trie::ObjectTrie;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Sentence,
    Token,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Sentence => "sentence",
            Task::Token => "token",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetType {
    Head,
    Full,
}

impl DetType {
    pub fn name(self) -> &'static str {
        match self {
            DetType::Head => "head",
            DetType::Full => "full",
        }
    }
}

/// One labeled detector input: the full token sequence (prompt, object,
/// `<EOS>`) and the prediction points with their labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionExample {
    pub tokens: Vec<u32>,
    /// (position in `tokens`, is-hallucination) pairs.
    pub points: Vec<(usize, bool)>,
    pub subject: String,
    pub predicate: String,
    pub record_key: String,
}

impl DetectionExample {
    pub fn prompt_key(&self) -> String {
        format!("{}\t{}", self.subject, self.predicate)
    }
}

/// Turns labeled generations into detector examples. Sentence examples get
/// one point at the final `<EOS>`; token examples get one point per object
/// token up to and including the first hallucinated one (records that hit
/// the length cap have an `<EOS>` appended so every sequence signals
/// completion). Out-of-reference records are skipped.
pub fn examples_from_records(
    records: &[GenerationRecord],
    task: Task,
    vocab: &TokenizerVocab,
    trie: &ObjectTrie,
    reference: &KnowledgeGraph,
) -> Result<Vec<DetectionExample>> {
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let prompt = Prompt::new(&rec.subject, &rec.predicate, vocab)?;
        let mut tokens = prompt.tokens.clone();
        let prompt_len = tokens.len();
        tokens.extend_from_slice(&rec.object_tokens);
        if tokens.last() != Some(&EOS_ID) {
            tokens.push(EOS_ID);
        }
        let points = match task {
            Task::Sentence => {
                let label = match label_sentence(rec, reference) {
                    SentenceOutcome::Labeled(l) => l.is_hallucination,
                    SentenceOutcome::OutOfReference => continue,
                };
                vec![(tokens.len() - 1, label)]
            }
            Task::Token => {
                if !reference.has_pair(&rec.subject, &rec.predicate) {
                    continue;
                }
                let tl = label_tokens(rec, trie);
                tl.labels
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| (prompt_len + i, l))
                    .collect()
            }
        };
        if points.is_empty() {
            continue;
        }
        out.push(DetectionExample {
            tokens,
            points,
            subject: rec.subject.clone(),
            predicate: rec.predicate.clone(),
            record_key: rec.key(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct DetectorDataset {
    pub train: Vec<DetectionExample>,
    pub val: Vec<DetectionExample>,
    pub test: Vec<DetectionExample>,
}

impl DetectorDataset {
    pub fn total_points(&self) -> usize {
        [&self.train, &self.val, &self.test]
            .iter()
            .flat_map(|part| part.iter())
            .map(|e| e.points.len())
            .sum()
    }
}

/// 90/5/5 partition by prompt identity: prompt counts are exact to within
/// one and no prompt crosses parts.
pub fn split_by_prompt(examples: Vec<DetectionExample>, seed: u64) -> DetectorDataset {
    let mut by_prompt: BTreeMap<String, Vec<DetectionExample>> = BTreeMap::new();
    for e in examples {
        by_prompt.entry(e.prompt_key()).or_default().push(e);
    }
    let mut keys: Vec<String> = by_prompt.keys().cloned().collect();
    let mut rng = ChaCha12Rng::seed_from_u64(hash_u64(seed, "detector-split", ""));
    keys.shuffle(&mut rng);

    let n = keys.len();
    let n_val = ((n as f64 * 0.05).round() as usize)
        .max(1)
        .min(n.saturating_sub(2));
    let n_test = ((n as f64 * 0.05).round() as usize)
        .max(1)
        .min(n.saturating_sub(n_val + 1));
    let n_train = n - n_val - n_test;

    let mut ds = DetectorDataset::default();
    for (i, key) in keys.into_iter().enumerate() {
        let examples = by_prompt.remove(&key).unwrap();
        let part = if i < n_train {
            &mut ds.train
        } else if i < n_train + n_val {
            &mut ds.val
        } else {
            &mut ds.test
        };
        part.extend(examples);
    }
    ds
}

/// Generates `n` completions per prompt, labels them, and splits 90/5/5 by
/// prompt. Returns the raw records alongside the dataset.
#[allow(clippy::too_many_arguments)]
pub fn build_detection_data(
    params: &ModelParams,
    vocab: &TokenizerVocab,
    trie: &ObjectTrie,
    reference: &KnowledgeGraph,
    prompts: &[Prompt],
    task: Task,
    n: u32,
    temperature: f64,
    max_len: usize,
    seed: u64,
    model_id: &str,
    epoch: u32,
) -> Result<(Vec<GenerationRecord>, DetectorDataset)> {
    let records = generate_batch(
        params,
        vocab,
        prompts,
        temperature,
        n,
        max_len,
        seed,
        model_id,
        epoch,
        128,
    )?;
    let examples = examples_from_records(&records, task, vocab, trie, reference)?;
    Ok((records, split_by_prompt(examples, seed)))
}

/// Features of every prediction point, in deterministic dataset order.
pub struct PointFeatures {
    pub features: Array2<f64>,
    pub labels: Vec<bool>,
    /// (example index, point index) per feature row.
    pub owners: Vec<(usize, usize)>,
}

/// Runs the frozen base over the examples and gathers the residual-stream
/// vectors at each prediction point. `tap` is 1-based; the top tap uses the
/// post-final-norm hidden states (the LM readout's own representation).
pub fn extract_point_features(
    params: &ModelParams,
    examples: &[DetectionExample],
    tap: usize,
    batch_rows: usize,
) -> PointFeatures {
    let d = params.cfg.d_model;
    let n_points: usize = examples.iter().map(|e| e.points.len()).sum();
    let mut features = Array2::zeros((n_points, d));
    let mut labels = Vec::with_capacity(n_points);
    let mut owners = Vec::with_capacity(n_points);

    let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        by_len.entry(e.tokens.len()).or_default().push(i);
    }
    let mut row_out = 0usize;
    for (len, idxs) in by_len {
        for chunk in idxs.chunks(batch_rows.max(1)) {
            let mut ids = Array2::zeros((chunk.len(), len));
            for (r, &ei) in chunk.iter().enumerate() {
                for (t, &tok) in examples[ei].tokens.iter().enumerate() {
                    ids[(r, t)] = tok as usize;
                }
            }
            let feats = params.features(&ids, tap);
            for (r, &ei) in chunk.iter().enumerate() {
                for (pi, &(pos, label)) in examples[ei].points.iter().enumerate() {
                    features.row_mut(row_out).assign(&feats.row(r * len + pos));
                    labels.push(label);
                    owners.push((ei, pi));
                    row_out += 1;
                }
            }
        }
    }
    PointFeatures {
        features,
        labels,
        owners,
    }
}

/// Cosine schedule with optional linear warmup, decaying to zero.
fn detector_lr(step: u64, peak: f64, warmup: u64, total: u64) -> f64 {
    if warmup > 0 && step <= warmup {
        return peak * step as f64 / warmup as f64;
    }
    let span = (total - warmup).max(1);
    let progress = (step - warmup) as f64 / span as f64;
    peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub peak_lr: f64,
    pub warmup: u64,
    pub total: u64,
}

impl Schedule {
    fn scaled(peak_lr: f64, warmup: u64, total: u64, scale: f64) -> Self {
        let s = |x: u64| ((x as f64 * scale).round() as u64).max(1);
        Schedule {
            peak_lr,
            warmup: if warmup == 0 { 0 } else { s(warmup) },
            total: s(total),
        }
    }
}

/// Base-recipe schedules; `step_scale` shrinks the step counts for desk-
/// scale runs.
pub fn schedule_for(task: Task, det_type: DetType, stage2: bool, step_scale: f64) -> Schedule {
    match (task, det_type, stage2) {
        (Task::Token, DetType::Head, _) => Schedule::scaled(1e-4, 1000, 5000, step_scale),
        (Task::Token, DetType::Full, _) => Schedule::scaled(5e-5, 1000, 20_000, step_scale),
        (Task::Sentence, DetType::Head, _) => Schedule::scaled(1e-2, 0, 10_000, step_scale),
        (Task::Sentence, DetType::Full, false) => Schedule::scaled(1e-2, 0, 10_000, step_scale),
        (Task::Sentence, DetType::Full, true) => {
            Schedule::scaled(1e-3, 10_000, 250_000, step_scale)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub task: Task,
    pub det_type: DetType,
    /// 1-based transformer-block tap; the top block for full detectors.
    pub layer_tap: usize,
    /// Multiplier on the base-recipe step counts.
    pub step_scale: f64,
    pub batch_size: usize,
    pub eval_every: u64,
    pub patience: u32,
    pub seed: u64,
}

impl DetectorConfig {
    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if self.layer_tap == 0 || self.layer_tap > n_layers {
            return Err(Error::invalid(
                "detector config",
                format!("layer_tap {} outside 1..={n_layers}", self.layer_tap),
            ));
        }
        if self.det_type == DetType::Full && self.layer_tap != n_layers {
            return Err(Error::invalid(
                "detector config",
                "full detectors attach to the top layer only",
            ));
        }
        if self.step_scale <= 0.0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::invalid(
                "detector config",
                "bad scale/batch/eval_every",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Detector {
    pub task: Task,
    pub det_type: DetType,
    pub layer_tap: usize,
    /// Frozen (head) or finetuned (full) base weights.
    pub base: ModelParams,
    pub w: Array1<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointScore {
    pub record_key: String,
    pub position: usize,
    pub score: f64,
    pub label: bool,
}

impl Detector {
    /// Sigmoid readout at every prediction point; higher = more likely
    /// hallucination. Deterministic.
    pub fn score_examples(&self, examples: &[DetectionExample]) -> Vec<PointScore> {
        let pf = extract_point_features(&self.base, examples, self.layer_tap, 64);
        let mut out = Vec::with_capacity(pf.labels.len());
        for (row, &(ei, pi)) in pf.owners.iter().enumerate() {
            let z = pf.features.row(row).dot(&self.w) + self.b;
            out.push(PointScore {
                record_key: examples[ei].record_key.clone(),
                position: examples[ei].points[pi].0,
                score: sigmoid(z),
                label: examples[ei].points[pi].1,
            });
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        #[derive(Serialize)]
        struct Meta<'a> {
            task: Task,
            det_type: DetType,
            layer_tap: usize,
            bias: f64,
            model_config: &'a crate::model::ModelConfig,
        }
        let meta = Meta {
            task: self.task,
            det_type: self.det_type,
            layer_tap: self.layer_tap,
            bias: self.b,
            model_config: &self.base.cfg,
        };
        let path = dir.join("detector.json");
        let json = serde_json::to_string_pretty(&meta)
            .map_err(|e| Error::invalid("detector meta", e.to_string()))?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        let mut slices: Vec<&[f64]> = self.base.flat();
        let w_slice = self.w.as_slice().unwrap();
        slices.push(w_slice);
        let total: usize = slices.iter().map(|s| s.len()).sum();
        let mut bytes = Vec::with_capacity(total * 8);
        for s in slices {
            for &x in s {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        let wpath = dir.join("weights.bin");
        std::fs::write(&wpath, bytes).map_err(|e| Error::io(&wpath, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            task: Task,
            det_type: DetType,
            layer_tap: usize,
            bias: f64,
            model_config: crate::model::ModelConfig,
        }
        let path = dir.join("detector.json");
        let json = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: Meta = serde_json::from_str(&json)
            .map_err(|e| Error::invalid("detector meta", e.to_string()))?;
        let mut base = ModelParams::init(&meta.model_config)?;
        let mut w = Array1::zeros(meta.model_config.d_model);
        let wpath = dir.join("weights.bin");
        let bytes = std::fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
        let mut offset = 0usize;
        for slice in base.flat_mut() {
            for x in slice.iter_mut() {
                let mut b = [0u8; 8];
                b.copy_from_slice(&bytes[offset..offset + 8]);
                *x = f64::from_le_bytes(b);
                offset += 8;
            }
        }
        for x in w.iter_mut() {
            let mut b = [0u8; 8];
            b.copy_from_slice(&bytes[offset..offset + 8]);
            *x = f64::from_le_bytes(b);
            offset += 8;
        }
        if offset != bytes.len() {
            return Err(Error::invalid("detector", "weights file length mismatch"));
        }
        Ok(Detector {
            task: meta.task,
            det_type: meta.det_type,
            layer_tap: meta.layer_tap,
            base,
            w,
            b: meta.bias,
        })
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Numerically stable binary cross-entropy and its dlogit.
fn bce_and_grad(z: f64, label: bool) -> (f64, f64) {
    let y = if label { 1.0 } else { 0.0 };
    let loss = z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln();
    (loss, sigmoid(z) - y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub val_aucpr: f64,
    pub evals: Vec<(u64, f64)>,
    pub diverged: bool,
    pub steps_run: u64,
}

struct ReadoutAdam {
    m_w: Array1<f64>,
    v_w: Array1<f64>,
    m_b: f64,
    v_b: f64,
    t: u64,
}

impl ReadoutAdam {
    fn new(d: usize) -> Self {
        ReadoutAdam {
            m_w: Array1::zeros(d),
            v_w: Array1::zeros(d),
            m_b: 0.0,
            v_b: 0.0,
            t: 0,
        }
    }

    fn step(&mut self, w: &mut Array1<f64>, b: &mut f64, dw: &Array1<f64>, db: f64, lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t as i32);
        let bc2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..w.len() {
            self.m_w[i] = B1 * self.m_w[i] + (1.0 - B1) * dw[i];
            self.v_w[i] = B2 * self.v_w[i] + (1.0 - B2) * dw[i] * dw[i];
            w[i] -= lr * (self.m_w[i] / bc1) / ((self.v_w[i] / bc2).sqrt() + EPS);
        }
        self.m_b = B1 * self.m_b + (1.0 - B1) * db;
        self.v_b = B2 * self.v_b + (1.0 - B2) * db * db;
        *b -= lr * (self.m_b / bc1) / ((self.v_b / bc2).sqrt() + EPS);
    }
}

fn readout_scores(features: &Array2<f64>, w: &Array1<f64>, b: f64) -> Vec<f64> {
    features
        .rows()
        .into_iter()
        .map(|row| sigmoid(row.dot(w) + b))
        .collect()
}

/// Trains a logistic readout on fixed features with Adam, early-stopping on
/// validation AUC-PR (patience counted in evaluations, best state restored).
fn train_readout(
    train: &PointFeatures,
    val: &PointFeatures,
    sched: Schedule,
    batch_size: usize,
    eval_every: u64,
    patience: u32,
    seed: u64,
) -> Result<(Array1<f64>, f64, TrainReport)> {
    let d = train.features.ncols();
    let n = train.features.nrows();
    if n == 0 {
        return Err(Error::invalid("detector", "empty training set"));
    }
    let prevalence = crate::metrics::prevalence(&val.labels);
    let mut w = Array1::zeros(d);
    let mut b = 0.0f64;
    let mut adam = ReadoutAdam::new(d);
    let mut rng = ChaCha12Rng::seed_from_u64(hash_u64(seed, "readout", ""));
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n; // trigger reshuffle on first use

    let mut best = (f64::NEG_INFINITY, w.clone(), b);
    let mut evals = Vec::new();
    let mut since_best = 0u32;
    let mut below_prevalence = 0u32;
    let mut diverged = false;
    let mut steps_run = 0u64;

    for step in 1..=sched.total {
        let mut dw = Array1::zeros(d);
        let mut db = 0.0f64;
        let bs = batch_size.min(n);
        for _ in 0..bs {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            let z = train.features.row(i).dot(&w) + b;
            let (_, dz) = bce_and_grad(z, train.labels[i]);
            let g = dz / bs as f64;
            dw.scaled_add(g, &train.features.row(i));
            db += g;
        }
        let lr = detector_lr(step, sched.peak_lr, sched.warmup, sched.total);
        adam.step(&mut w, &mut b, &dw, db, lr);
        steps_run = step;

        if step % eval_every == 0 || step == sched.total {
            let scores = readout_scores(&val.features, &w, b);
            let aucpr = auc_pr(&scores, &val.labels)?;
            evals.push((step, aucpr));
            if aucpr > best.0 {
                best = (aucpr, w.clone(), b);
                since_best = 0;
            } else {
                since_best += 1;
            }
            if aucpr < prevalence {
                below_prevalence += 1;
                if below_prevalence >= 3 {
                    diverged = true;
                    break;
                }
            } else {
                below_prevalence = 0;
            }
            if since_best >= patience {
                break;
            }
        }
    }

    let report = TrainReport {
        val_aucpr: best.0,
        evals,
        diverged,
        steps_run,
    };
    Ok((best.1, best.2, report))
}

/// Pads a batch of examples to a common length and returns ids plus the
/// flat (row, position, label) point list.
fn pad_batch(examples: &[&DetectionExample]) -> (Array2<usize>, Vec<(usize, usize, bool)>) {
    let max_len = examples.iter().map(|e| e.tokens.len()).max().unwrap();
    let mut ids = Array2::from_elem((examples.len(), max_len), PAD_ID as usize);
    let mut points = Vec::new();
    for (r, e) in examples.iter().enumerate() {
        for (t, &tok) in e.tokens.iter().enumerate() {
            ids[(r, t)] = tok as usize;
        }
        for &(pos, label) in &e.points {
            points.push((r, pos, label));
        }
    }
    (ids, points)
}

/// Finetunes all base weights plus the readout with BCE at the prediction
/// points. Early stopping as in the readout path; three consecutive
/// validation evaluations below prevalence flag divergence and stop.
fn train_full_stage(
    base: &ModelParams,
    w0: Array1<f64>,
    b0: f64,
    train_set: &[DetectionExample],
    val_set: &[DetectionExample],
    sched: Schedule,
    cfg: &DetectorConfig,
) -> Result<(ModelParams, Array1<f64>, f64, TrainReport)> {
    if train_set.is_empty() {
        return Err(Error::invalid("detector", "empty training set"));
    }
    let mut params = base.clone();
    let tap = params.cfg.n_layers;
    let mut w = w0;
    let mut b = b0;
    let mut opt = crate::train::AdamState::new(&params);
    let mut readout_opt = ReadoutAdam::new(w.len());
    // Adam hyperparameters ride along in a TrainConfig shell.
    let shell = crate::train::TrainConfig {
        base_lr_constant: 0.0,
        base_lr: 0.0,
        warmup_steps: 1,
        final_lr_fraction: 0.0,
        total_steps: sched.total,
        epochs: 1,
        batch_size: cfg.batch_size,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        seed: cfg.seed,
        checkpoint_epochs: vec![],
    };

    let prevalence = {
        let labels: Vec<bool> = val_set
            .iter()
            .flat_map(|e| e.points.iter().map(|&(_, l)| l))
            .collect();
        crate::metrics::prevalence(&labels)
    };

    let mut rng = ChaCha12Rng::seed_from_u64(hash_u64(cfg.seed, "full-finetune", ""));
    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;

    let mut best: (f64, ModelParams, Array1<f64>, f64) =
        (f64::NEG_INFINITY, params.clone(), w.clone(), b);
    let mut evals = Vec::new();
    let mut since_best = 0u32;
    let mut below_prevalence = 0u32;
    let mut diverged = false;
    let mut steps_run = 0u64;

    for step in 1..=sched.total {
        let bs = cfg.batch_size.min(n);
        let mut batch: Vec<&DetectionExample> = Vec::with_capacity(bs);
        for _ in 0..bs {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&train_set[order[cursor]]);
            cursor += 1;
        }
        let (ids, points) = pad_batch(&batch);
        let seq_len = ids.ncols();
        let cache = params.forward(&ids);
        let inv_n = 1.0 / points.len() as f64;
        let mut d_hidden = Array2::zeros(cache.hidden.raw_dim());
        let mut dw = Array1::zeros(w.len());
        let mut db = 0.0f64;
        for &(row, pos, label) in &points {
            let h = cache.hidden.row(row * seq_len + pos);
            let z = h.dot(&w) + b;
            let (_, dz) = bce_and_grad(z, label);
            let g = dz * inv_n;
            dw.scaled_add(g, &h);
            db += g;
            let mut dh = d_hidden.row_mut(row * seq_len + pos);
            dh.scaled_add(g, &w.view());
        }
        let mut grads = params.zeros_like();
        params.backward(&cache, &d_hidden, &mut grads);
        let lr = detector_lr(step, sched.peak_lr, sched.warmup, sched.total);
        opt.step(&mut params, &grads, lr, &shell);
        readout_opt.step(&mut w, &mut b, &dw, db, lr);
        steps_run = step;

        if step % cfg.eval_every == 0 || step == sched.total {
            let pf = extract_point_features(&params, val_set, tap, 64);
            let scores = readout_scores(&pf.features, &w, b);
            let aucpr = auc_pr(&scores, &pf.labels)?;
            evals.push((step, aucpr));
            if aucpr > best.0 {
                best = (aucpr, params.clone(), w.clone(), b);
                since_best = 0;
            } else {
                since_best += 1;
            }
            if aucpr < prevalence {
                below_prevalence += 1;
                if below_prevalence >= 3 {
                    diverged = true;
                    break;
                }
            } else {
                below_prevalence = 0;
            }
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let report = TrainReport {
        val_aucpr: best.0,
        evals,
        diverged,
        steps_run,
    };
    Ok((best.1, best.2, best.3, report))
}

/// SHA-256 over the little-endian bytes of every tensor, for frozen-base
/// assertions.
pub fn params_digest(params: &ModelParams) -> [u8; 32] {
    let mut h = Sha256::new();
    for slice in params.flat() {
        for &x in slice {
            h.update(x.to_le_bytes());
        }
    }
    h.finalize().into()
}

pub struct TrainedDetector {
    pub detector: Detector,
    pub report: TrainReport,
    /// Validation report of the probe stage for LPFT runs.
    pub stage1_report: Option<TrainReport>,
}

/// Trains one detector. Head detectors never touch the base weights (the
/// frozen-base digest is asserted); sentence-task full detectors run linear
/// probing then full finetuning.
pub fn train_detector(
    base: &ModelParams,
    cfg: &DetectorConfig,
    data: &DetectorDataset,
) -> Result<TrainedDetector> {
    cfg.validate(base.cfg.n_layers)?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::invalid(
            "detector",
            "train and val must be non-empty",
        ));
    }
    match cfg.det_type {
        DetType::Head => {
            let digest_before = params_digest(base);
            let train_pf = extract_point_features(base, &data.train, cfg.layer_tap, 64);
            let val_pf = extract_point_features(base, &data.val, cfg.layer_tap, 64);
            let sched = schedule_for(cfg.task, DetType::Head, false, cfg.step_scale);
            let (w, b, report) = train_readout(
                &train_pf,
                &val_pf,
                sched,
                cfg.batch_size,
                cfg.eval_every,
                cfg.patience,
                cfg.seed,
            )?;
            assert_eq!(
                params_digest(base),
                digest_before,
                "frozen base weights changed during head training"
            );
            Ok(TrainedDetector {
                detector: Detector {
                    task: cfg.task,
                    det_type: DetType::Head,
                    layer_tap: cfg.layer_tap,
                    base: base.clone(),
                    w,
                    b,
                },
                report,
                stage1_report: None,
            })
        }
        DetType::Full => {
            let tap = base.cfg.n_layers;
            let (w0, b0, stage1_report) = match cfg.task {
                Task::Sentence => {
                    // stage 1: identical to the sentence head detector
                    let train_pf = extract_point_features(base, &data.train, tap, 64);
                    let val_pf = extract_point_features(base, &data.val, tap, 64);
                    let sched =
                        schedule_for(Task::Sentence, DetType::Head, false, cfg.step_scale);
                    let (w, b, rep) = train_readout(
                        &train_pf,
                        &val_pf,
                        sched,
                        cfg.batch_size,
                        cfg.eval_every,
                        cfg.patience,
                        cfg.seed,
                    )?;
                    (w, b, Some(rep))
                }
                Task::Token => (Array1::zeros(base.cfg.d_model), 0.0, None),
            };
            let sched = schedule_for(cfg.task, DetType::Full, true, cfg.step_scale);
            let (params, w, b, report) =
                train_full_stage(base, w0, b0, &data.train, &data.val, sched, cfg)?;
            Ok(TrainedDetector {
                detector: Detector {
                    task: cfg.task,
                    det_type: DetType::Full,
                    layer_tap: tap,
                    base: params,
                    w,
                    b,
                },
                report,
                stage1_report,
            })
        }
    }
}

/// One head detector per transformer block on the token task (the layer-
/// depth sweep).
pub fn layer_sweep(
    base: &ModelParams,
    cfg: &DetectorConfig,
    data: &DetectorDataset,
) -> Result<Vec<(usize, TrainedDetector)>> {
    let mut out = Vec::new();
    for tap in 1..=base.cfg.n_layers {
        let mut c = cfg.clone();
        c.layer_tap = tap;
        c.det_type = DetType::Head;
        out.push((tap, train_detector(base, &c, data)?));
    }
    Ok(out)
}
