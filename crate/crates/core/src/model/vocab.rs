//! Shared vocabulary with fixed reserved ids: 0 = pad, 1 = EOS, 2 = unk.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::reward::TokenId;

pub const PAD_ID: TokenId = 0;
pub const EOS_ID: TokenId = 1;
pub const UNK_ID: TokenId = 2;

const RESERVED: [&str; 3] = ["<pad>", "</s>", "<unk>"];

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("duplicate token {0:?}")]
    Duplicate(String),
    #[error("vocabulary must contain at least one content token beyond the reserved ids")]
    TooSmall,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, TokenId>,
    pub eos_id: TokenId,
    pub pad_id: TokenId,
    pub unk_id: TokenId,
}

impl Vocab {
    /// Builds a vocabulary from content tokens; reserved ids come first.
    pub fn with_content<I>(content: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = String>,
    {
        let mut id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(content);
        if id_to_token.len() <= RESERVED.len() {
            return Err(VocabError::TooSmall);
        }
        let mut token_to_id = HashMap::new();
        for (id, tok) in id_to_token.iter().enumerate() {
            if token_to_id.insert(tok.clone(), id as TokenId).is_some() {
                return Err(VocabError::Duplicate(tok.clone()));
            }
        }
        Ok(Vocab { id_to_token, token_to_id, eos_id: EOS_ID, pad_id: PAD_ID, unk_id: UNK_ID })
    }

    /// Synthetic-task vocabulary of the given total size; content tokens are
    /// named w3..w{size-1}.
    pub fn synthetic(size: usize) -> Result<Self, VocabError> {
        if size < 4 {
            return Err(VocabError::TooSmall);
        }
        Self::with_content((RESERVED.len()..size).map(|i| format!("w{i}")))
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    /// Content ids, i.e. everything past the reserved block.
    pub fn content_ids(&self) -> Vec<TokenId> {
        (RESERVED.len() as TokenId..self.size() as TokenId).collect()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.id_to_token[id as usize]
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(self.unk_id)
    }

    pub fn render(&self, tokens: &[TokenId]) -> String {
        tokens.iter().map(|&t| self.token(t)).collect::<Vec<_>>().join(" ")
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        let mut out = String::new();
        for tok in &self.id_to_token {
            out.push_str(tok);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text = fs::read_to_string(path)?;
        let lines: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        if lines.len() <= RESERVED.len() {
            return Err(VocabError::TooSmall);
        }
        Self::with_content(lines[RESERVED.len()..].iter().cloned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed_and_distinct() {
        let v = Vocab::synthetic(6).unwrap();
        assert_eq!(v.pad_id, 0);
        assert_eq!(v.eos_id, 1);
        assert_eq!(v.unk_id, 2);
        assert_eq!(v.content_ids(), vec![3, 4, 5]);
        assert_eq!(v.token(3), "w3");
        assert_eq!(v.id("w4"), Some(4));
        assert_eq!(v.id_or_unk("nope"), 2);
    }

    #[test]
    fn duplicate_content_is_rejected() {
        let err = Vocab::with_content(vec!["a".into(), "a".into()]).unwrap_err();
        assert!(matches!(err, VocabError::Duplicate(_)));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = std::env::temp_dir().join("spg_vocab_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("vocab.txt");
        let v = Vocab::synthetic(8).unwrap();
        v.save(&path).unwrap();
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(v, loaded);
    }
}
