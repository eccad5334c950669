//! Closed-vocabulary whitespace tokenizer over entity and predicate strings.
//!
//! The vocabulary is built once from the full knowledge graph before any
//! splitting, so no split can contain out-of-vocabulary tokens. Five special
//! tokens occupy the low IDs and are never produced by tokenizing strings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;

pub const S_TKN: &str = "<S_TKN>";
pub const P_TKN: &str = "<P_TKN>";
pub const O_TKN: &str = "<O_TKN>";
pub const EOS: &str = "<EOS>";
pub const PAD: &str = "<PAD>";

pub const S_TKN_ID: u32 = 0;
pub const P_TKN_ID: u32 = 1;
pub const O_TKN_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
pub const PAD_ID: u32 = 4;

pub const SPECIAL_TOKENS: [&str; 5] = [S_TKN, P_TKN, O_TKN, EOS, PAD];
pub const NUM_SPECIAL: u32 = 5;

pub fn is_special(id: u32) -> bool {
    id < NUM_SPECIAL
}

/// Bijective token <-> ID map with reserved special-token IDs 0..=4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizerVocab {
    token_to_id: BTreeMap<String, u32>,
    id_to_token: Vec<String>,
}

impl TokenizerVocab {
    /// Builds the closed vocabulary from every whitespace token of every
    /// subject, predicate, and object in the graph. Regular tokens are
    /// assigned IDs in lexicographic order starting after the specials.
    pub fn build(kg: &KnowledgeGraph) -> Result<Self> {
        let mut tokens = std::collections::BTreeSet::new();
        for t in kg.iter() {
            for field in [&t.subject, &t.predicate, &t.object] {
                for tok in field.split_whitespace() {
                    if SPECIAL_TOKENS.contains(&tok) {
                        return Err(Error::invalid(
                            "vocabulary",
                            format!("string {field:?} contains reserved token {tok:?}"),
                        ));
                    }
                    tokens.insert(tok.to_string());
                }
            }
        }
        let mut id_to_token: Vec<String> =
            SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(TokenizerVocab {
            token_to_id,
            id_to_token,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    /// Whitespace-tokenizes a string. Unknown tokens are an error: the
    /// vocabulary is closed by construction.
    pub fn encode(&self, s: &str) -> Result<Vec<u32>> {
        s.split_whitespace()
            .map(|tok| {
                self.token_to_id
                    .get(tok)
                    .copied()
                    .ok_or_else(|| Error::UnknownToken {
                        token: tok.to_string(),
                        context: format!("encoding {s:?}"),
                    })
            })
            .collect()
    }

    /// Inverse of [`encode`](Self::encode) for single-space strings; special
    /// tokens decode to their literal form.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            match self.token_of(id) {
                Some(t) => out.push_str(t),
                None => {
                    let _ = write!(out, "<UNK:{id}>");
                }
            }
        }
        out
    }

    /// Writes the vocabulary as `token<TAB>id` lines, specials included.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (id, tok) in self.id_to_token.iter().enumerate() {
            let _ = writeln!(out, "{tok}\t{id}");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries: Vec<(String, u32)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected `token<TAB>id`".into(),
            })?;
            let id: u32 = id.parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad id {id:?}"),
            })?;
            entries.push((tok.to_string(), id));
        }
        entries.sort_by_key(|&(_, id)| id);
        let mut id_to_token = Vec::with_capacity(entries.len());
        for (i, (tok, id)) in entries.into_iter().enumerate() {
            if id as usize != i {
                return Err(Error::invalid("vocabulary file", "ids are not contiguous"));
            }
            id_to_token.push(tok);
        }
        for (i, spec) in SPECIAL_TOKENS.iter().enumerate() {
            if id_to_token.get(i).map(|s| s.as_str()) != Some(*spec) {
                return Err(Error::invalid(
                    "vocabulary file",
                    format!("special token {spec} missing from id {i}"),
                ));
            }
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(TokenizerVocab {
            token_to_id,
            id_to_token,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Triplet;

    fn mini_kg() -> KnowledgeGraph {
        let mut kg = KnowledgeGraph::new();
        kg.insert(Triplet::new("alpha beta", "has part", "gamma").unwrap());
        kg.insert(Triplet::new("alpha", "has part", "delta beta").unwrap());
        kg
    }

    #[test]
    fn specials_have_fixed_ids_and_round_trip() {
        let vocab = TokenizerVocab::build(&mini_kg()).unwrap();
        assert_eq!(vocab.id_of(S_TKN), Some(S_TKN_ID));
        assert_eq!(vocab.id_of(PAD), Some(PAD_ID));
        let ids = vocab.encode("alpha beta gamma").unwrap();
        assert!(ids.iter().all(|&id| !is_special(id)));
        assert_eq!(vocab.decode(&ids), "alpha beta gamma");
    }

    #[test]
    fn bijective_mapping() {
        let vocab = TokenizerVocab::build(&mini_kg()).unwrap();
        for id in 0..vocab.vocab_size() as u32 {
            let tok = vocab.token_of(id).unwrap();
            assert_eq!(vocab.id_of(tok), Some(id));
        }
    }

    #[test]
    fn unknown_token_is_error() {
        let vocab = TokenizerVocab::build(&mini_kg()).unwrap();
        assert!(matches!(
            vocab.encode("omega"),
            Err(Error::UnknownToken { .. })
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let vocab = TokenizerVocab::build(&mini_kg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        vocab.save(&path).unwrap();
        let loaded = TokenizerVocab::load(&path).unwrap();
        assert_eq!(vocab, loaded);
    }
}
