//! The knowledge graph: a deduplicated set of (subject, predicate, object)
//! triplets with a (subject, predicate) -> objects index, plus a synthetic
//! generator with controllable structure for when no external graph is
//! supplied.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::SPECIAL_TOKENS;

/// One fact. Fields are UTF-8, nonempty, free of tab/newline (reserved by
/// the TSV file format) and never equal to a special-token literal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triplet {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl Triplet {
    pub fn new(
        subject: impl Into<String>,
        predicate: impl Into<String>,
        object: impl Into<String>,
    ) -> Result<Self> {
        let t = Triplet {
            subject: subject.into(),
            predicate: predicate.into(),
            object: object.into(),
        };
        for (name, field) in [
            ("subject", &t.subject),
            ("predicate", &t.predicate),
            ("object", &t.object),
        ] {
            if field.is_empty() {
                return Err(Error::invalid(name, "empty string"));
            }
            if field.contains(['\t', '\n', '\r']) {
                return Err(Error::invalid(
                    name,
                    format!("{field:?} contains a reserved character"),
                ));
            }
            if SPECIAL_TOKENS.contains(&field.as_str()) {
                return Err(Error::invalid(
                    name,
                    format!("{field:?} is a reserved special-token literal"),
                ));
            }
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub lines_read: usize,
    pub duplicates_dropped: usize,
}

/// Deduplicated triplet store with derived indexes. Objects under one
/// (subject, predicate) pair are kept in lexicographic order so enumeration
/// is reproducible. Immutable once built; safe to share across threads.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    triplets: BTreeSet<Triplet>,
    sp_index: BTreeMap<(String, String), BTreeSet<String>>,
    subject_index: BTreeMap<String, BTreeSet<String>>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a triplet; returns false if it was already present.
    pub fn insert(&mut self, t: Triplet) -> bool {
        if !self.triplets.insert(t.clone()) {
            return false;
        }
        self.sp_index
            .entry((t.subject.clone(), t.predicate.clone()))
            .or_default()
            .insert(t.object);
        self.subject_index
            .entry(t.subject)
            .or_default()
            .insert(t.predicate);
        true
    }

    pub fn from_triplets(iter: impl IntoIterator<Item = Triplet>) -> (Self, usize) {
        let mut kg = Self::new();
        let mut dups = 0;
        for t in iter {
            if !kg.insert(t) {
                dups += 1;
            }
        }
        (kg, dups)
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Triplet> {
        self.triplets.iter()
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.triplets.contains(t)
    }

    /// Exactly the objects o with (s, p, o) in the graph, lexicographic;
    /// empty for an absent pair.
    pub fn objects(&self, subject: &str, predicate: &str) -> impl Iterator<Item = &str> {
        self.sp_index
            .get(&(subject.to_string(), predicate.to_string()))
            .into_iter()
            .flat_map(|set| set.iter().map(|s| s.as_str()))
    }

    pub fn object_set(&self, subject: &str, predicate: &str) -> Option<&BTreeSet<String>> {
        self.sp_index.get(&(subject.to_string(), predicate.to_string()))
    }

    pub fn has_pair(&self, subject: &str, predicate: &str) -> bool {
        self.object_set(subject, predicate).is_some()
    }

    pub fn contains_object(&self, subject: &str, predicate: &str, object: &str) -> bool {
        self.object_set(subject, predicate)
            .is_some_and(|objs| objs.contains(object))
    }

    /// Iterates (subject, predicate, objects) pairs in sorted order.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str, &BTreeSet<String>)> {
        self.sp_index
            .iter()
            .map(|((s, p), objs)| (s.as_str(), p.as_str(), objs))
    }

    pub fn num_pairs(&self) -> usize {
        self.sp_index.len()
    }

    pub fn subjects(&self) -> impl Iterator<Item = &str> {
        self.subject_index.keys().map(|s| s.as_str())
    }

    pub fn num_subjects(&self) -> usize {
        self.subject_index.len()
    }

    pub fn predicates_of(&self, subject: &str) -> impl Iterator<Item = &str> {
        self.subject_index
            .get(subject)
            .into_iter()
            .flat_map(|set| set.iter().map(|s| s.as_str()))
    }

    /// True iff both indexes are exactly what a rebuild from the triplet set
    /// would produce.
    pub fn indexes_consistent(&self) -> bool {
        let (rebuilt, dups) = Self::from_triplets(self.triplets.iter().cloned());
        dups == 0 && rebuilt.sp_index == self.sp_index && rebuilt.subject_index == self.subject_index
    }

    /// Serializes as one `subject<TAB>predicate<TAB>object` line per triplet,
    /// LF endings, sorted; `ingest` of the output reproduces the graph.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in &self.triplets {
            let _ = writeln!(out, "{}\t{}\t{}", t.subject, t.predicate, t.object);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Parses a triplet file: UTF-8, one `subject<TAB>predicate<TAB>object` per
/// line. Duplicates are dropped silently and counted; malformed lines are
/// errors carrying the 1-based line number.
pub fn ingest_str(text: &str) -> Result<(KnowledgeGraph, IngestStats)> {
    let mut kg = KnowledgeGraph::new();
    let mut stats = IngestStats::default();
    for (i, raw) in text.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        stats.lines_read += 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let t = Triplet::new(fields[0], fields[1], fields[2]).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if !kg.insert(t) {
            stats.duplicates_dropped += 1;
        }
    }
    if kg.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "file contains no triplets".into(),
        });
    }
    Ok((kg, stats))
}

pub fn ingest(path: &Path) -> Result<(KnowledgeGraph, IngestStats)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ingest_str(&text)
}

/// Integer distribution over `[min, max]`: uniform, or zipf-like weight
/// proportional to 1/rank (rank 1 at `min`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistSpec {
    pub min: u32,
    pub max: u32,
    #[serde(default)]
    pub shape: DistShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistShape {
    #[default]
    Uniform,
    Zipf,
}

impl DistSpec {
    pub fn uniform(min: u32, max: u32) -> Self {
        DistSpec {
            min,
            max,
            shape: DistShape::Uniform,
        }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if self.min == 0 || self.min > self.max {
            return Err(Error::invalid(
                what,
                format!("need 1 <= min <= max, got [{}, {}]", self.min, self.max),
            ));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> u32 {
        match self.shape {
            DistShape::Uniform => rng.gen_range(self.min..=self.max),
            DistShape::Zipf => {
                let n = (self.max - self.min + 1) as usize;
                let total: f64 = (1..=n).map(|k| 1.0 / k as f64).sum();
                let mut u = rng.gen::<f64>() * total;
                for k in 1..=n {
                    u -= 1.0 / k as f64;
                    if u <= 0.0 {
                        return self.min + (k - 1) as u32;
                    }
                }
                self.max
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NameLength {
    pub min: u32,
    pub max: u32,
}

/// Configuration for the synthetic generator. Identical configs produce
/// identical graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: u32,
    pub predicates_per_subject: DistSpec,
    /// Objects per (subject, predicate) pair; support must lie in [1, 20].
    pub objects_per_pair: DistSpec,
    /// Entity names are sequences of this many sub-word tokens, so distinct
    /// entities share tokens and compositions must be memorized.
    pub entity_name_length: NameLength,
    pub vocab_pool_size: u32,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::invalid("synth config", "n_subjects must be >= 1"));
        }
        self.predicates_per_subject.validate("predicates_per_subject")?;
        self.objects_per_pair.validate("objects_per_pair")?;
        if self.objects_per_pair.max > 20 {
            return Err(Error::invalid(
                "objects_per_pair",
                "support must lie within [1, 20]",
            ));
        }
        if self.entity_name_length.min == 0
            || self.entity_name_length.min > self.entity_name_length.max
        {
            return Err(Error::invalid("entity_name_length", "need 1 <= min <= max"));
        }
        if self.vocab_pool_size < 2 {
            return Err(Error::invalid("vocab_pool_size", "need at least 2 tokens"));
        }
        if self.vocab_pool_size as usize > token_pool_capacity() {
            return Err(Error::invalid(
                "vocab_pool_size",
                format!("pool capacity is {}", token_pool_capacity()),
            ));
        }
        Ok(())
    }
}

const CONSONANTS: [&str; 20] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "br", "dr", "kr",
    "st", "tr",
];
const VOWELS: [&str; 8] = ["a", "e", "i", "o", "u", "ai", "ea", "ou"];
const CODAS: [&str; 8] = ["", "x", "q", "w", "y", "j", "h", "c"];

fn token_pool_capacity() -> usize {
    CONSONANTS.len() * VOWELS.len() * CODAS.len()
}

/// Deterministic sub-word token pool: syllables enumerated in a fixed order.
/// Codas are letters that never start a consonant cluster, so distinct
/// component choices always concatenate to distinct syllables.
fn token_pool(size: usize) -> Vec<String> {
    let mut pool = Vec::with_capacity(size);
    'outer: for c in CONSONANTS {
        for v in VOWELS {
            for coda in CODAS {
                pool.push(format!("{c}{v}{coda}"));
                if pool.len() == size {
                    break 'outer;
                }
            }
        }
    }
    pool
}

fn sample_name(pool: &[String], len_range: NameLength, rng: &mut ChaCha12Rng) -> String {
    let len = rng.gen_range(len_range.min..=len_range.max);
    let mut parts = Vec::with_capacity(len as usize);
    for _ in 0..len {
        parts.push(pool[rng.gen_range(0..pool.len())].as_str());
    }
    parts.join(" ")
}

fn sample_distinct_names(
    pool: &[String],
    len_range: NameLength,
    count: usize,
    rng: &mut ChaCha12Rng,
    what: &str,
) -> Result<Vec<String>> {
    let mut seen = BTreeSet::new();
    let mut names = Vec::with_capacity(count);
    while names.len() < count {
        let mut attempts = 0;
        loop {
            let name = sample_name(pool, len_range, rng);
            if seen.insert(name.clone()) {
                names.push(name);
                break;
            }
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::invalid(
                    what,
                    "name space exhausted; increase vocab_pool_size or entity_name_length",
                ));
            }
        }
    }
    Ok(names)
}

/// Generates a knowledge graph whose per-pair object counts follow
/// `cfg.objects_per_pair`. Deterministic under the config seed.
pub fn synthesize(cfg: &SynthConfig) -> Result<KnowledgeGraph> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let pool = token_pool(cfg.vocab_pool_size as usize);

    let subjects = sample_distinct_names(
        &pool,
        cfg.entity_name_length,
        cfg.n_subjects as usize,
        &mut rng,
        "subjects",
    )?;

    // Predicates are a small shared pool, reused across subjects like
    // relation types in a real graph.
    let predicate_pool_size = (cfg.predicates_per_subject.max as usize * 8).clamp(4, 128);
    let predicates = sample_distinct_names(
        &pool,
        NameLength { min: 1, max: 2 },
        predicate_pool_size,
        &mut rng,
        "predicates",
    )?;

    // Objects come from a shared entity pool so the same object can appear
    // under many pairs. The pool is capped at half the name-space capacity
    // to keep rejection sampling cheap.
    let capacity: f64 = (cfg.entity_name_length.min..=cfg.entity_name_length.max)
        .map(|k| (pool.len() as f64).powi(k as i32))
        .sum();
    let object_pool_size = (cfg.n_subjects as usize)
        .max(64)
        .min((capacity / 2.0) as usize)
        .max(cfg.objects_per_pair.max as usize);
    if ((capacity / 2.0) as usize) < cfg.objects_per_pair.max as usize {
        return Err(Error::invalid(
            "synth config",
            "name space too small for objects_per_pair; increase vocab_pool_size",
        ));
    }
    let objects = sample_distinct_names(
        &pool,
        cfg.entity_name_length,
        object_pool_size,
        &mut rng,
        "objects",
    )?;

    let mut kg = KnowledgeGraph::new();
    let mut any_multi = false;
    for subject in &subjects {
        let n_preds = cfg.predicates_per_subject.sample(&mut rng) as usize;
        let n_preds = n_preds.min(predicates.len());
        let mut pred_idx: Vec<usize> = (0..predicates.len()).collect();
        pred_idx.partial_shuffle(&mut rng, n_preds);
        for &pi in pred_idx.iter().take(n_preds) {
            let n_obj = cfg.objects_per_pair.sample(&mut rng) as usize;
            let mut obj_idx: Vec<usize> = (0..objects.len()).collect();
            obj_idx.partial_shuffle(&mut rng, n_obj);
            if n_obj >= 2 {
                any_multi = true;
            }
            for &oi in obj_idx.iter().take(n_obj) {
                kg.insert(Triplet::new(
                    subject.clone(),
                    predicates[pi].clone(),
                    objects[oi].clone(),
                )?);
            }
        }
    }

    // The contract promises at least one multi-object pair whenever the
    // distribution allows one.
    if cfg.objects_per_pair.max >= 2 && !any_multi {
        let first_pair = kg
            .pairs()
            .next()
            .map(|(s, p, o)| (s.to_string(), p.to_string(), o.clone()));
        if let Some((s, p, objs)) = first_pair {
            if let Some(extra) = objects.iter().find(|o| !objs.contains(*o)) {
                kg.insert(Triplet::new(s, p, extra.clone())?);
            }
        }
    }

    Ok(kg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ingest_builds_index() {
        let (kg, stats) = ingest_str("A\tp\tX\nA\tp\tY\n").unwrap();
        assert_eq!(kg.len(), 2);
        assert_eq!(stats.lines_read, 2);
        assert_eq!(stats.duplicates_dropped, 0);
        let objs: Vec<&str> = kg.objects("A", "p").collect();
        assert_eq!(objs, vec!["X", "Y"]);
    }

    #[test]
    fn ingest_drops_duplicates_with_count() {
        let (kg, stats) = ingest_str("A\tp\tX\nA\tp\tX\n").unwrap();
        assert_eq!(kg.len(), 1);
        assert_eq!(stats.duplicates_dropped, 1);
    }

    #[test]
    fn ingest_rejects_wrong_arity() {
        let err = ingest_str("A\tp\tX\nA\tp\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_empty_file() {
        assert!(ingest_str("").is_err());
        assert!(ingest_str("\n\n").is_err());
    }

    #[test]
    fn lookup_of_absent_pair_is_empty() {
        let (kg, _) = ingest_str("A\tp\tX\n").unwrap();
        assert_eq!(kg.objects("B", "p").count(), 0);
    }

    #[test]
    fn triplet_rejects_reserved_content() {
        assert!(Triplet::new("", "p", "o").is_err());
        assert!(Triplet::new("a\tb", "p", "o").is_err());
        assert!(Triplet::new("a", "p", "<EOS>").is_err());
    }

    #[test]
    fn tsv_round_trip_is_exact() {
        let cfg = small_cfg(7);
        let kg = synthesize(&cfg).unwrap();
        let (back, stats) = ingest_str(&kg.to_tsv()).unwrap();
        assert_eq!(back, kg);
        assert_eq!(stats.duplicates_dropped, 0);
    }

    fn small_cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            n_subjects: 20,
            predicates_per_subject: DistSpec::uniform(1, 3),
            objects_per_pair: DistSpec::uniform(1, 4),
            entity_name_length: NameLength { min: 1, max: 3 },
            vocab_pool_size: 60,
            seed,
        }
    }

    #[test]
    fn synthesize_is_deterministic() {
        let cfg = small_cfg(42);
        let a = synthesize(&cfg).unwrap();
        let b = synthesize(&cfg).unwrap();
        assert_eq!(a.to_tsv(), b.to_tsv());
        let mut other = cfg;
        other.seed = 43;
        assert_ne!(synthesize(&other).unwrap().to_tsv(), a.to_tsv());
    }

    #[test]
    fn synthesize_forced_pair_count() {
        let cfg = SynthConfig {
            n_subjects: 1,
            predicates_per_subject: DistSpec::uniform(1, 1),
            objects_per_pair: DistSpec::uniform(3, 3),
            entity_name_length: NameLength { min: 2, max: 2 },
            vocab_pool_size: 40,
            seed: 5,
        };
        let kg = synthesize(&cfg).unwrap();
        assert_eq!(kg.len(), 3);
        assert_eq!(kg.num_pairs(), 1);
        let (_, _, objs) = kg.pairs().next().unwrap();
        assert_eq!(objs.len(), 3);
    }

    #[test]
    fn synthesize_rejects_degenerate_config() {
        let mut cfg = small_cfg(1);
        cfg.n_subjects = 0;
        assert!(synthesize(&cfg).is_err());
        let mut cfg = small_cfg(1);
        cfg.objects_per_pair = DistSpec::uniform(1, 21);
        assert!(synthesize(&cfg).is_err());
    }

    // Law-of-large-numbers check on the object-count distribution: uniform
    // on [1, 20] has mean 10.5; the empirical mean over ~10K pairs must land
    // within 5%.
    #[test]
    fn synthesize_object_counts_follow_distribution() {
        let cfg = SynthConfig {
            n_subjects: 2600,
            predicates_per_subject: DistSpec::uniform(4, 4),
            objects_per_pair: DistSpec::uniform(1, 20),
            entity_name_length: NameLength { min: 2, max: 3 },
            vocab_pool_size: 300,
            seed: 99,
        };
        let kg = synthesize(&cfg).unwrap();
        let n_pairs = kg.num_pairs();
        assert!(n_pairs >= 10_000, "expected >= 10K pairs, got {n_pairs}");
        let mean = kg.len() as f64 / n_pairs as f64;
        assert!(
            (mean - 10.5).abs() <= 0.05 * 10.5,
            "empirical mean {mean} not within 5% of 10.5"
        );
    }

    #[test]
    fn lookup_agrees_with_linear_scan() {
        let cfg = SynthConfig {
            n_subjects: 600,
            predicates_per_subject: DistSpec::uniform(2, 4),
            objects_per_pair: DistSpec::uniform(1, 6),
            entity_name_length: NameLength { min: 1, max: 3 },
            vocab_pool_size: 200,
            seed: 7,
        };
        let kg = synthesize(&cfg).unwrap();
        assert!(kg.len() >= 1000);
        let all: Vec<Triplet> = kg.iter().cloned().collect();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..1000 {
            // Half the queries hit existing pairs, half are perturbed.
            let t = &all[rng.gen_range(0..all.len())];
            let (s, p) = if rng.gen_bool(0.5) {
                (t.subject.clone(), t.predicate.clone())
            } else {
                (t.subject.clone(), format!("{} zz", t.predicate))
            };
            let via_index: BTreeSet<&str> = kg.objects(&s, &p).collect();
            let via_scan: BTreeSet<&str> = all
                .iter()
                .filter(|u| u.subject == s && u.predicate == p)
                .map(|u| u.object.as_str())
                .collect();
            assert_eq!(via_index, via_scan);
        }
    }

    #[test]
    fn indexes_rebuild_consistently() {
        let kg = synthesize(&small_cfg(3)).unwrap();
        assert!(kg.indexes_consistent());
    }
}
