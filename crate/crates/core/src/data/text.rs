//! Tokenization and vocabularies.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const UNKNOWN_ID: usize = 0;
pub const PADDING_ID: usize = 1;
pub const UNKNOWN_TOKEN: &str = "<unk>";
pub const PADDING_TOKEN: &str = "<pad>";

const PUNCTUATION: &[char] = &['.', ',', '!', '?', ';', ':', '"', '\'', '(', ')'];

/// Lowercases, splits punctuation marks off as their own tokens, then
/// splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for ch in word.chars() {
            if PUNCTUATION.contains(&ch) {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            } else {
                current.extend(ch.to_lowercase());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// Token/id mapping with fixed unknown (0) and padding (1) entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from(Vec::new())
    }
}

impl From<Vec<String>> for Vocabulary {
    /// Accepts either a full id-ordered list (starting with the two special
    /// tokens) or just the ordinary tokens.
    fn from(mut tokens: Vec<String>) -> Self {
        if tokens.len() < 2 || tokens[0] != UNKNOWN_TOKEN || tokens[1] != PADDING_TOKEN {
            tokens.retain(|t| t != UNKNOWN_TOKEN && t != PADDING_TOKEN);
            tokens.splice(0..0, [UNKNOWN_TOKEN.to_string(), PADDING_TOKEN.to_string()]);
        }
        let mut vocab = Self {
            tokens: Vec::with_capacity(tokens.len()),
            ids: HashMap::with_capacity(tokens.len()),
        };
        for t in tokens {
            vocab.insert(t);
        }
        vocab
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Builds from token streams. Tokens seen at least `min_count` times are
    /// kept, ordered by descending frequency and then lexicographically.
    pub fn build<'a, I, S>(sequences: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for seq in sequences {
            for t in seq {
                *counts.entry(t.as_ref()).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_count.max(1) && t != UNKNOWN_TOKEN && t != PADDING_TOKEN)
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from(entries.into_iter().map(|(t, _)| t.to_string()).collect::<Vec<_>>())
    }

    fn insert(&mut self, token: String) -> usize {
        if let Some(&id) = self.ids.get(&token) {
            return id;
        }
        let id = self.tokens.len();
        self.ids.insert(token.clone(), id);
        self.tokens.push(token);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Never true: the special entries are always present.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Unseen tokens map to [`UNKNOWN_ID`].
    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNKNOWN_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("Good movie!"), ["good", "movie", "!"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize("  \t\n ").is_empty());
        assert_eq!(tokenize("don't stop"), ["don", "'", "t", "stop"]);
        assert_eq!(tokenize("(A) \"b\";c:d,e?"), ["(", "a", ")", "\"", "b", "\"", ";", "c", ":", "d", ",", "e", "?"]);
    }

    #[test]
    fn specials_are_fixed() {
        let v = Vocabulary::build([&["b", "a", "b"][..]], 1);
        assert_eq!(v.id(UNKNOWN_TOKEN), UNKNOWN_ID);
        assert_eq!(v.id(PADDING_TOKEN), PADDING_ID);
        assert_eq!(v.tokens(), ["<unk>", "<pad>", "b", "a"]);
        assert_eq!(v.id("zzz"), UNKNOWN_ID);
    }

    #[test]
    fn min_count_filters() {
        let v = Vocabulary::build([&["x", "y", "x"][..]], 2);
        assert_eq!(v.len(), 3);
        assert_eq!(v.id("y"), UNKNOWN_ID);
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocabulary::build([&["q", "r"][..]], 1);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }
}
