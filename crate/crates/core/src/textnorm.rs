//! Tokenization and morphological matching.
//!
//! A concept counts as covered by a text when its Porter stem equals the
//! stem of at least one token of the text.

use serde::{Deserialize, Serialize};

pub use crate::porter::stem;

/// A lowercase text unit together with its stem.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    surface: String,
    stem: String,
}

impl Token {
    /// Builds a token from an already-normalized unit.
    ///
    /// Returns `None` when `surface` is empty, contains whitespace or is not
    /// lowercase.
    pub fn new(surface: &str) -> Option<Token> {
        if surface.is_empty()
            || surface.chars().any(char::is_whitespace)
            || surface.to_lowercase() != surface
        {
            return None;
        }
        Some(Token {
            surface: surface.to_string(),
            stem: stem(surface),
        })
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    pub fn stem(&self) -> &str {
        &self.stem
    }
}

/// Lowercases `text`, splits it on whitespace and strips ASCII punctuation
/// from the edges of each unit. Units left empty are dropped.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.to_lowercase()
        .split_whitespace()
        .map(|unit| unit.trim_matches(|c: char| c.is_ascii_punctuation()))
        .filter(|unit| !unit.is_empty())
        .map(|unit| Token {
            surface: unit.to_string(),
            stem: stem(unit),
        })
        .collect()
}

/// Surface forms of [`tokenize`], for metrics that work on words.
pub fn surface_tokens(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.surface).collect()
}

/// Stems of [`tokenize`].
pub fn stem_tokens(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.stem).collect()
}

/// True iff the stem of `concept` equals the stem of some token.
pub fn covers(concept: &str, tokens: &[Token]) -> bool {
    let target = concept_stem(concept);
    tokens.iter().any(|t| t.stem == target)
}

/// Stem used for a concept keyword. Concepts go through the same edge
/// normalization as text so that `covers(c, &tokenize(c))` always holds.
pub fn concept_stem(concept: &str) -> String {
    match tokenize(concept).as_slice() {
        [single] => single.stem.clone(),
        _ => stem(&concept.to_lowercase()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn surfaces(text: &str) -> Vec<String> {
        surface_tokens(text)
    }

    #[test]
    fn tokenize_sentence() {
        assert_eq!(
            surfaces("A bird eats food from a hand."),
            ["a", "bird", "eats", "food", "from", "a", "hand"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(
            surfaces("stand hold umbrella street"),
            ["stand", "hold", "umbrella", "street"]
        );
    }

    #[test]
    fn tokenize_edges_only() {
        assert_eq!(surfaces("  \"well-known\", (x) -- ... "), ["well-known", "x"]);
        assert_eq!(surfaces("don't STOP!"), ["don't", "stop"]);
        assert_eq!(surfaces("Über\tcafé"), ["über", "café"]);
    }

    #[test]
    fn token_constructor_checks_invariants() {
        assert!(Token::new("").is_none());
        assert!(Token::new("a b").is_none());
        assert!(Token::new("Bird").is_none());
        let t = Token::new("holding").unwrap();
        assert_eq!(t.surface(), "holding");
        assert_eq!(t.stem(), "hold");
    }

    #[test]
    fn covers_examples() {
        let tokens = tokenize("a woman walking down a street holding an umbrella");
        assert!(covers("hold", &tokens));
        assert!(!covers("stand", &tokens));
        assert!(!covers("x", &[]));
    }

    proptest! {
        #[test]
        fn tokenize_join_is_fixed_point(text in "\\PC{0,60}") {
            let once = surfaces(&text);
            let again = surfaces(&once.join(" "));
            prop_assert_eq!(once, again);
        }

        #[test]
        fn surfaces_are_normalized(text in "\\PC{0,60}") {
            for tok in tokenize(&text) {
                prop_assert!(!tok.surface().is_empty());
                prop_assert!(!tok.surface().chars().any(char::is_whitespace));
                prop_assert_eq!(tok.surface().to_lowercase(), tok.surface());
                prop_assert_eq!(stem(tok.surface()), tok.stem());
            }
        }

        #[test]
        fn self_coverage(concept in "[a-z][a-z-]{0,12}") {
            prop_assert!(covers(&concept, &tokenize(&concept)));
        }

        #[test]
        fn coverage_is_monotone(
            concept in "[a-z]{1,8}",
            base in "[a-z ]{0,40}",
            extra in "[a-z ]{0,40}",
        ) {
            let small = tokenize(&base);
            let mut big = small.clone();
            big.extend(tokenize(&extra));
            if covers(&concept, &small) {
                prop_assert!(covers(&concept, &big));
            }
        }
    }
}
