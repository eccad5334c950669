//! Special-token formatting of triplets and greedy packing into fixed-length
//! context windows.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::Triplet;
use crate::tokenizer::{TokenizerVocab, EOS_ID, O_TKN_ID, PAD_ID, P_TKN_ID, S_TKN_ID};

pub const DEFAULT_CONTEXT_LEN: usize = 256;

/// `[<S_TKN>] s [<P_TKN>] p [<O_TKN>] o [<EOS>]`.
pub fn format_triplet(t: &Triplet, vocab: &TokenizerVocab) -> Result<Vec<u32>> {
    let mut ids = vec![S_TKN_ID];
    ids.extend(vocab.encode(&t.subject)?);
    ids.push(P_TKN_ID);
    ids.extend(vocab.encode(&t.predicate)?);
    ids.push(O_TKN_ID);
    ids.extend(vocab.encode(&t.object)?);
    ids.push(EOS_ID);
    Ok(ids)
}

/// Inverse of [`format_triplet`]; used for round-trip checks.
pub fn parse_formatted(ids: &[u32], vocab: &TokenizerVocab) -> Result<Triplet> {
    let bad = || Error::invalid("formatted sequence", "markers out of order");
    if ids.first() != Some(&S_TKN_ID) || ids.last() != Some(&EOS_ID) {
        return Err(bad());
    }
    let p_pos = ids.iter().position(|&t| t == P_TKN_ID).ok_or_else(bad)?;
    let o_pos = ids.iter().position(|&t| t == O_TKN_ID).ok_or_else(bad)?;
    if !(0 < p_pos && p_pos < o_pos && o_pos < ids.len() - 1) {
        return Err(bad());
    }
    Triplet::new(
        vocab.decode(&ids[1..p_pos]),
        vocab.decode(&ids[p_pos + 1..o_pos]),
        vocab.decode(&ids[o_pos + 1..ids.len() - 1]),
    )
}

/// Formatted triplets packed into equal-length windows. Windows are filled
/// greedily in input order; no triplet is split across windows; each
/// window's unused tail is `<PAD>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBatchStream {
    pub context_len: usize,
    /// `num_windows * context_len` token IDs.
    tokens: Vec<u32>,
    /// Start offsets of each packed sequence within its window.
    boundaries: Vec<Vec<usize>>,
    /// Non-pad token count of each window.
    used: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PackedSidecar {
    context_len: usize,
    window_count: usize,
    boundaries: Vec<Vec<usize>>,
    used: Vec<usize>,
}

impl PackedBatchStream {
    pub fn num_windows(&self) -> usize {
        self.used.len()
    }

    pub fn window(&self, i: usize) -> &[u32] {
        &self.tokens[i * self.context_len..(i + 1) * self.context_len]
    }

    pub fn used(&self, i: usize) -> usize {
        self.used[i]
    }

    pub fn boundaries(&self, i: usize) -> &[usize] {
        &self.boundaries[i]
    }

    /// Total non-pad tokens.
    pub fn token_count(&self) -> usize {
        self.used.iter().sum()
    }

    /// Total sequences packed.
    pub fn sequence_count(&self) -> usize {
        self.boundaries.iter().map(|b| b.len()).sum()
    }

    /// Recovers the packed sequences in their original order.
    pub fn unpack(&self) -> Vec<Vec<u32>> {
        let mut out = Vec::with_capacity(self.sequence_count());
        for w in 0..self.num_windows() {
            let window = self.window(w);
            let bounds = &self.boundaries[w];
            for (i, &start) in bounds.iter().enumerate() {
                let end = bounds.get(i + 1).copied().unwrap_or(self.used[w]);
                out.push(window[start..end].to_vec());
            }
        }
        out
    }

    /// Raw little-endian u32 windows plus a JSON sidecar.
    pub fn save(&self, bin_path: &Path, sidecar_path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.tokens.len() * 4);
        for &t in &self.tokens {
            bytes.extend_from_slice(&t.to_le_bytes());
        }
        std::fs::write(bin_path, bytes).map_err(|e| Error::io(bin_path, e))?;
        let sidecar = PackedSidecar {
            context_len: self.context_len,
            window_count: self.num_windows(),
            boundaries: self.boundaries.clone(),
            used: self.used.clone(),
        };
        let json = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::invalid("packed sidecar", e.to_string()))?;
        std::fs::write(sidecar_path, json).map_err(|e| Error::io(sidecar_path, e))
    }

    pub fn load(bin_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(sidecar_path)
            .map_err(|e| Error::io(sidecar_path, e))?;
        let sidecar: PackedSidecar = serde_json::from_str(&json)
            .map_err(|e| Error::invalid("packed sidecar", e.to_string()))?;
        let bytes = std::fs::read(bin_path).map_err(|e| Error::io(bin_path, e))?;
        if bytes.len() != sidecar.window_count * sidecar.context_len * 4 {
            return Err(Error::invalid(
                "packed stream",
                "binary size does not match sidecar",
            ));
        }
        let tokens = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(PackedBatchStream {
            context_len: sidecar.context_len,
            tokens,
            boundaries: sidecar.boundaries,
            used: sidecar.used,
        })
    }
}

/// Greedy first-fit packing in input order. A sequence longer than the
/// context is an error carrying its index.
pub fn pack(sequences: &[Vec<u32>], context_len: usize) -> Result<PackedBatchStream> {
    if context_len == 0 {
        return Err(Error::invalid("context_len", "must be positive"));
    }
    let mut tokens = Vec::new();
    let mut boundaries: Vec<Vec<usize>> = Vec::new();
    let mut used: Vec<usize> = Vec::new();
    let mut cursor = 0usize; // non-pad length of the open window

    let mut open = false;
    for (i, seq) in sequences.iter().enumerate() {
        if seq.len() > context_len {
            return Err(Error::invalid(
                "sequence",
                format!("sequence {i} has {} tokens > context {context_len}", seq.len()),
            ));
        }
        if !open || cursor + seq.len() > context_len {
            if open {
                // close current window with padding
                tokens.resize(tokens.len() + (context_len - cursor), PAD_ID);
                *used.last_mut().unwrap() = cursor;
            }
            boundaries.push(Vec::new());
            used.push(0);
            cursor = 0;
            open = true;
        }
        boundaries.last_mut().unwrap().push(cursor);
        tokens.extend_from_slice(seq);
        cursor += seq.len();
    }
    if open {
        tokens.resize(tokens.len() + (context_len - cursor), PAD_ID);
        *used.last_mut().unwrap() = cursor;
    }

    Ok(PackedBatchStream {
        context_len,
        tokens,
        boundaries,
        used,
    })
}

/// Formats and packs a triplet list; a too-long sequence error names the
/// offending triplet.
pub fn format_and_pack(
    triplets: &[Triplet],
    vocab: &TokenizerVocab,
    context_len: usize,
) -> Result<PackedBatchStream> {
    let mut seqs = Vec::with_capacity(triplets.len());
    for t in triplets {
        let seq = format_triplet(t, vocab)?;
        if seq.len() > context_len {
            return Err(Error::invalid(
                "triplet",
                format!(
                    "({}, {}, {}) formats to {} tokens > context {context_len}",
                    t.subject,
                    t.predicate,
                    t.object,
                    seq.len()
                ),
            ));
        }
        seqs.push(seq);
    }
    pack(&seqs, context_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{synthesize, DistSpec, KnowledgeGraph, NameLength, SynthConfig};
    use crate::tokenizer::{EOS, O_TKN, P_TKN, S_TKN};

    fn single_token_vocab() -> (KnowledgeGraph, TokenizerVocab) {
        let mut kg = KnowledgeGraph::new();
        kg.insert(Triplet::new("a", "p", "x").unwrap());
        kg.insert(Triplet::new("a", "p", "u v w").unwrap());
        let vocab = TokenizerVocab::build(&kg).unwrap();
        (kg, vocab)
    }

    #[test]
    fn format_places_markers() {
        let (kg, vocab) = single_token_vocab();
        let t = kg.iter().find(|t| t.object == "x").unwrap();
        let ids = format_triplet(t, &vocab).unwrap();
        assert_eq!(ids.len(), 7);
        assert_eq!(vocab.token_of(ids[0]), Some(S_TKN));
        assert_eq!(vocab.token_of(ids[2]), Some(P_TKN));
        assert_eq!(vocab.token_of(ids[4]), Some(O_TKN));
        assert_eq!(vocab.token_of(ids[6]), Some(EOS));
    }

    #[test]
    fn format_multi_token_object() {
        let (kg, vocab) = single_token_vocab();
        let t = kg.iter().find(|t| t.object == "u v w").unwrap();
        let ids = format_triplet(t, &vocab).unwrap();
        let o_pos = ids.iter().position(|&t| t == O_TKN_ID).unwrap();
        assert_eq!(ids.len() - o_pos - 2, 3); // 3 object tokens before <EOS>
        assert_eq!(*ids.last().unwrap(), EOS_ID);
    }

    #[test]
    fn format_round_trips_random_triplets() {
        let kg = synthesize(&SynthConfig {
            n_subjects: 400,
            predicates_per_subject: DistSpec::uniform(1, 3),
            objects_per_pair: DistSpec::uniform(1, 4),
            entity_name_length: NameLength { min: 1, max: 4 },
            vocab_pool_size: 150,
            seed: 31,
        })
        .unwrap();
        let vocab = TokenizerVocab::build(&kg).unwrap();
        let mut checked = 0;
        for t in kg.iter().take(1000) {
            let ids = format_triplet(t, &vocab).unwrap();
            assert_eq!(&parse_formatted(&ids, &vocab).unwrap(), t);
            checked += 1;
        }
        assert!(checked >= 1000, "need 1000 triplets, got {checked}");
    }

    #[test]
    fn greedy_packing_arithmetic() {
        let seqs: Vec<Vec<u32>> = vec![vec![9; 100], vec![9; 100], vec![9; 100]];
        let packed = pack(&seqs, 256).unwrap();
        assert_eq!(packed.num_windows(), 2);
        assert_eq!(packed.used(0), 200);
        assert_eq!(packed.used(1), 100);
        assert_eq!(packed.boundaries(0), &[0, 100]);
        assert_eq!(packed.window(0)[200..], vec![PAD_ID; 56][..]);
    }

    #[test]
    fn pack_rejects_oversized_sequence() {
        let seqs = vec![vec![9; 300]];
        assert!(pack(&seqs, 256).is_err());
    }

    #[test]
    fn unpack_preserves_order_and_tokens() {
        let seqs: Vec<Vec<u32>> = (0..57).map(|i| vec![i as u32 + 5; (i % 90) + 1]).collect();
        let packed = pack(&seqs, 128).unwrap();
        assert_eq!(packed.unpack(), seqs);
        // conservation: multiset of non-pad tokens equals input tokens
        let input_total: usize = seqs.iter().map(|s| s.len()).sum();
        assert_eq!(packed.token_count(), input_total);
    }

    #[test]
    fn mean_triplets_per_window_matches_expectation() {
        // Names sized so a formatted triplet averages ~12.5 tokens: around
        // twenty fit into a 256-token window.
        let kg = synthesize(&SynthConfig {
            n_subjects: 400,
            predicates_per_subject: DistSpec::uniform(2, 3),
            objects_per_pair: DistSpec::uniform(1, 3),
            entity_name_length: NameLength { min: 2, max: 4 },
            vocab_pool_size: 200,
            seed: 13,
        })
        .unwrap();
        let vocab = TokenizerVocab::build(&kg).unwrap();
        let triplets: Vec<Triplet> = kg.iter().cloned().collect();
        let packed = format_and_pack(&triplets, &vocab, 256).unwrap();
        let mean = packed.sequence_count() as f64 / packed.num_windows() as f64;
        assert!(
            (mean - 20.0).abs() <= 2.0,
            "mean triplets/window {mean} not within 20 +- 2"
        );
    }

    #[test]
    fn save_load_round_trip() {
        let seqs: Vec<Vec<u32>> = (0..23).map(|i| vec![i as u32 + 5; (i % 40) + 1]).collect();
        let packed = pack(&seqs, 64).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("stream.bin");
        let json = dir.path().join("stream.json");
        packed.save(&bin, &json).unwrap();
        let loaded = PackedBatchStream::load(&bin, &json).unwrap();
        assert_eq!(loaded, packed);
    }
}
