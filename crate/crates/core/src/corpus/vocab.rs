use std::collections::HashMap;
use std::path::Path;

use super::CorpusError;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Token/id bijection. Ids are contiguous from 0 and the first four are
/// always the reserved tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(RESERVED.iter().map(|s| s.to_string())).expect("reserved tokens are valid")
    }
}

impl Vocabulary {
    /// Keeps tokens seen at least `min_count` times, ranked by frequency
    /// descending then token ascending, truncated to `max_size` non-reserved
    /// entries.
    pub fn build<I, S, T>(sequences: I, min_count: usize, max_size: Option<usize>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for seq in sequences {
            for t in seq {
                let t = t.as_ref();
                if !RESERVED.contains(&t) {
                    *counts.entry(t.to_string()).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(m) = max_size {
            ranked.truncate(m);
        }
        let mut v = Self::default();
        for (t, _) in ranked {
            v.ids.insert(t.clone(), v.tokens.len());
            v.tokens.push(t);
        }
        v
    }

    /// Rebuilds a vocabulary from tokens in id order.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Result<Self, CorpusError> {
        let tokens: Vec<String> = tokens.into_iter().collect();
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(t, r)| t != r) {
            return Err(CorpusError::Vocab(format!("first entries must be {RESERVED:?}")));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(CorpusError::Vocab(format!("invalid token {t:?} at id {i}")));
            }
            if ids.insert(t.clone(), i).is_some() {
                return Err(CorpusError::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<T: AsRef<str>>(&self, tokens: &[T]) -> Vec<usize> {
        tokens.iter().map(|t| self.id_or_unk(t.as_ref())).collect()
    }

    /// Maps ids back to tokens, stopping at `</s>` and skipping `<pad>`/`<s>`.
    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        Self::from_tokens(text.lines().map(str::to_string))
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lines(ls: &[&str]) -> Vec<Vec<String>> {
        ls.iter().map(|l| l.split_whitespace().map(String::from).collect()).collect()
    }

    #[test]
    fn frequency_then_lexical_order() {
        let v = Vocabulary::build(lines(&["a b", "b c"]), 1, None);
        assert_eq!(v.len(), 7);
        assert_eq!(&v.tokens()[4..], ["b", "a", "c"]);
        let v = Vocabulary::build(lines(&["a b", "b c"]), 2, None);
        assert_eq!(v.len(), 5);
        assert_eq!(v.token(4), Some("b"));
        let v = Vocabulary::build(lines(&["a b", "b c"]), 3, None);
        assert_eq!(v.tokens(), RESERVED);
        let v = Vocabulary::build(lines(&["a b", "b c"]), 1, Some(2));
        assert_eq!(&v.tokens()[4..], ["b", "a"]);
    }

    #[test]
    fn encode_decode() {
        let v = Vocabulary::build(lines(&["x y"]), 1, None);
        let ids = v.encode(&["x", "zzz", "y"]);
        assert_eq!(ids, [4, UNK, 5]);
        assert_eq!(v.decode(&[BOS, 4, 5, EOS, 4]), ["x", "y"]);
    }

    #[test]
    fn file_roundtrip_and_validation() {
        let v = Vocabulary::build(lines(&["p q r", "q"]), 1, None);
        assert_eq!(Vocabulary::parse(&v.to_text()).unwrap(), v);
        assert!(Vocabulary::parse("<pad>\n<s>\n</s>\n").is_err());
        assert!(Vocabulary::parse("<pad>\n<s>\n</s>\n<unk>\na\na\n").is_err());
        assert!(Vocabulary::parse("<s>\n<pad>\n</s>\n<unk>\n").is_err());
    }

    proptest! {
        #[test]
        fn bijection_and_reserved(corpus in prop::collection::vec(prop::collection::vec("[a-e<>/]{1,4}", 0..6), 0..8),
                                  min in 0usize..3) {
            let v = Vocabulary::build(&corpus, min, None);
            prop_assert_eq!(&v.tokens()[..4], RESERVED);
            for (i, t) in v.tokens().iter().enumerate() {
                prop_assert_eq!(v.id(t), Some(i));
            }
            prop_assert_eq!(v.ids.len(), v.len());
        }
    }
}
