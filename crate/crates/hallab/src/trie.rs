//! Per-(subject, predicate) prefix tries over token-ID sequences of valid
//! objects, used as the exact token-level hallucination oracle.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::tokenizer::TokenizerVocab;

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: BTreeMap<u32, TrieNode>,
    terminal: bool,
}

impl TrieNode {
    fn push(&mut self, tokens: &[u32]) {
        let mut node = self;
        for &t in tokens {
            node = node.children.entry(t).or_default();
        }
        node.terminal = true;
    }
}

/// A token sequence is a path in the trie for (s, p) iff it is a prefix of
/// the tokenization of some object under that pair; terminal nodes mark
/// complete objects. Immutable after construction.
#[derive(Debug, Clone, Default)]
pub struct ObjectTrie {
    pairs: BTreeMap<(String, String), TrieNode>,
    max_object_tokens: usize,
}

impl ObjectTrie {
    /// Builds tries for every pair in the graph. An object the tokenizer
    /// cannot encode is an error naming the object.
    pub fn build(kg: &KnowledgeGraph, vocab: &TokenizerVocab) -> Result<Self> {
        let mut trie = ObjectTrie::default();
        for (s, p, objects) in kg.pairs() {
            let node = trie
                .pairs
                .entry((s.to_string(), p.to_string()))
                .or_default();
            for obj in objects {
                let tokens = vocab.encode(obj).map_err(|_| {
                    Error::invalid("object", format!("{obj:?} is not tokenizable"))
                })?;
                trie.max_object_tokens = trie.max_object_tokens.max(tokens.len());
                node.push(&tokens);
            }
        }
        Ok(trie)
    }

    pub fn has_pair(&self, subject: &str, predicate: &str) -> bool {
        self.pairs
            .contains_key(&(subject.to_string(), predicate.to_string()))
    }

    fn root(&self, subject: &str, predicate: &str) -> Option<&TrieNode> {
        self.pairs.get(&(subject.to_string(), predicate.to_string()))
    }

    /// Smallest index i such that `tokens[0..=i]` is not a prefix of any
    /// valid object tokenization for the pair; None if the whole sequence is
    /// a valid prefix. For an absent pair every nonempty sequence is invalid
    /// at index 0.
    pub fn first_invalid(&self, subject: &str, predicate: &str, tokens: &[u32]) -> Option<usize> {
        let Some(mut node) = self.root(subject, predicate) else {
            return if tokens.is_empty() { None } else { Some(0) };
        };
        for (i, t) in tokens.iter().enumerate() {
            match node.children.get(t) {
                Some(child) => node = child,
                None => return Some(i),
            }
        }
        None
    }

    /// True iff `tokens` is exactly the tokenization of some valid object.
    pub fn is_complete_object(&self, subject: &str, predicate: &str, tokens: &[u32]) -> bool {
        let Some(mut node) = self.root(subject, predicate) else {
            return false;
        };
        for t in tokens {
            match node.children.get(t) {
                Some(child) => node = child,
                None => return false,
            }
        }
        node.terminal
    }

    /// Length in tokens of the longest object in the graph; the sampler's
    /// default generation cap is this plus two.
    pub fn max_object_tokens(&self) -> usize {
        self.max_object_tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{DistSpec, NameLength, SynthConfig, Triplet};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn mini() -> (KnowledgeGraph, TokenizerVocab, ObjectTrie) {
        let mut kg = KnowledgeGraph::new();
        kg.insert(Triplet::new("s", "p", "alpha beta").unwrap());
        kg.insert(Triplet::new("s", "p", "alpha gamma").unwrap());
        kg.insert(Triplet::new("s", "q", "delta").unwrap());
        let vocab = TokenizerVocab::build(&kg).unwrap();
        let trie = ObjectTrie::build(&kg, &vocab).unwrap();
        (kg, vocab, trie)
    }

    #[test]
    fn prefix_and_terminal_queries() {
        let (_, vocab, trie) = mini();
        let enc = |s: &str| vocab.encode(s).unwrap();
        assert_eq!(trie.first_invalid("s", "p", &enc("alpha")), None);
        assert_eq!(trie.first_invalid("s", "p", &enc("alpha delta")), Some(1));
        assert!(trie.is_complete_object("s", "p", &enc("alpha beta")));
        assert!(!trie.is_complete_object("s", "p", &enc("alpha")));
        assert_eq!(trie.max_object_tokens(), 2);
    }

    #[test]
    fn absent_pair_rejects_everything() {
        let (_, vocab, trie) = mini();
        let enc = vocab.encode("alpha").unwrap();
        assert_eq!(trie.first_invalid("s", "zz", &enc), Some(0));
        assert_eq!(trie.first_invalid("s", "zz", &[]), None);
        assert!(!trie.is_complete_object("s", "zz", &enc));
    }

    fn scan_first_invalid(objs: &[Vec<u32>], tokens: &[u32]) -> Option<usize> {
        (0..tokens.len()).find(|&i| {
            let prefix = &tokens[..=i];
            !objs.iter().any(|o| o.starts_with(prefix))
        })
    }

    #[test]
    fn trie_matches_brute_force_scan() {
        let cfg = SynthConfig {
            n_subjects: 40,
            predicates_per_subject: DistSpec::uniform(1, 2),
            objects_per_pair: DistSpec::uniform(1, 5),
            entity_name_length: NameLength { min: 1, max: 3 },
            vocab_pool_size: 30,
            seed: 11,
        };
        let kg = crate::kg::synthesize(&cfg).unwrap();
        let vocab = TokenizerVocab::build(&kg).unwrap();
        let trie = ObjectTrie::build(&kg, &vocab).unwrap();
        let pairs: Vec<(String, String, Vec<Vec<u32>>)> = kg
            .pairs()
            .map(|(s, p, objs)| {
                let toks = objs.iter().map(|o| vocab.encode(o).unwrap()).collect();
                (s.to_string(), p.to_string(), toks)
            })
            .collect();

        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let vocab_ids: Vec<u32> =
            (crate::tokenizer::NUM_SPECIAL..vocab.vocab_size() as u32).collect();
        for _ in 0..1000 {
            let (s, p, objs) = &pairs[rng.gen_range(0..pairs.len())];
            // Mix of genuine object prefixes and random corruptions.
            let mut tokens = objs[rng.gen_range(0..objs.len())].clone();
            if rng.gen_bool(0.5) && !tokens.is_empty() {
                let cut = rng.gen_range(0..tokens.len());
                tokens.truncate(cut);
            }
            if rng.gen_bool(0.5) {
                tokens.push(vocab_ids[rng.gen_range(0..vocab_ids.len())]);
            }
            assert_eq!(
                trie.first_invalid(s, p, &tokens),
                scan_first_invalid(objs, &tokens),
                "mismatch for pair ({s}, {p}) tokens {tokens:?}"
            );
            let complete = objs.iter().any(|o| o == &tokens);
            assert_eq!(trie.is_complete_object(s, p, &tokens), complete);
        }
    }
}
