use serde::{Deserialize, Serialize};

/// Tokens of one text, as produced by [`tokenize`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

// Punctuation outside ASCII that shows up in caption corpora.
const EXTRA_PUNCTUATION: &[char] = &[
    '“', '”', '‘', '’', '«', '»', '„', '…', '–', '—', '¿', '¡', '·', '。', '，', '、',
];

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || EXTRA_PUNCTUATION.contains(&c)
}

/// Lowercase, split on Unicode whitespace, strip leading and trailing
/// punctuation from each token, drop empty tokens.
pub fn tokenize(text: &str) -> TokenSequence {
    TokenSequence(
        text.to_lowercase()
            .split_whitespace()
            .map(|t| t.trim_matches(is_punctuation))
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(text: &str) -> Vec<String> {
        tokenize(text).0
    }

    #[test]
    fn strips_trailing_period() {
        assert_eq!(toks("The cat sat."), ["the", "cat", "sat"]);
    }

    #[test]
    fn empty_text() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("  \t\n ").is_empty());
    }

    #[test]
    fn strips_commas() {
        assert_eq!(
            toks("A man, riding a horse"),
            ["a", "man", "riding", "a", "horse"]
        );
    }

    #[test]
    fn keeps_inner_punctuation_and_drops_lone_marks() {
        assert_eq!(toks("“Don't” — go!"), ["don't", "go"]);
        assert_eq!(toks("ÉCOLE\u{00a0}Ñandú"), ["école", "ñandú"]);
    }
}
