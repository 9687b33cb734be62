use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{BackendError, CompletionBackend};
use crate::features::{match_key, Word};
use crate::mapping::{LlmScaleSuggestion, ScaleValues, WordSuggestion};
use crate::prompting::TARGET_WORDS_HEADING;
use crate::response::serialize_suggestion;

/// Offline backend: a pure function of `(prompt, seed)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MockBackend {
    pub seed: u64,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        MockBackend { seed }
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        mock_complete(prompt, self.seed)
    }
}

/// Reads the word list under the last target-words heading and answers with
/// random integer values in range, formatted per the response grammar.
pub fn mock_complete(prompt: &str, seed: u64) -> Result<String, BackendError> {
    let words = extract_words(prompt).ok_or(BackendError::UnrecognizedPrompt)?;

    let digest = Sha256::digest(prompt.as_bytes());
    let prompt_hash = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ prompt_hash);

    let global = ScaleValues {
        duration: rng.random_range(-5..=5) as f64,
        pitch: rng.random_range(-5..=5) as f64,
        energy: rng.random_range(-5..=5) as f64,
    };
    let mut local = || {
        if rng.random_bool(0.3) {
            rng.random_range(1..=5) as f64
        } else {
            0.0
        }
    };
    let word_values = words
        .iter()
        .enumerate()
        .map(|(index, w)| WordSuggestion {
            index,
            key: w.key.clone(),
            values: ScaleValues {
                duration: local(),
                pitch: local(),
                energy: local(),
            },
        })
        .collect();
    let suggestion = LlmScaleSuggestion {
        reasoning: format!("Mock response (seed {seed}); values are pseudo-random."),
        global,
        words: word_values,
    };
    serialize_suggestion(&suggestion, &words).map_err(|_| BackendError::UnrecognizedPrompt)
}

fn extract_words(prompt: &str) -> Option<Vec<Word>> {
    let start = prompt.rfind(TARGET_WORDS_HEADING)? + TARGET_WORDS_HEADING.len();
    let mut words = Vec::new();
    for line in prompt[start..].lines().skip(1) {
        let Some((idx, surface)) = line.split_once(": ") else {
            break;
        };
        if idx.parse::<usize>().ok() != Some(words.len()) || surface.trim().is_empty() {
            break;
        }
        words.push(Word {
            surface: surface.trim().to_string(),
            key: match_key(surface),
        });
    }
    (!words.is_empty()).then_some(words)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::tokenize_words;
    use crate::prompting::{build_prompt, PromptMode, PromptSpec};
    use crate::response::parse_response;

    fn prompt() -> String {
        build_prompt(&PromptSpec::new(
            PromptMode::Neutral,
            "Where did you put my keys?",
        ))
        .unwrap()
    }

    #[test]
    fn deterministic_and_parsable() {
        let a = mock_complete(&prompt(), 7).unwrap();
        assert_eq!(a, mock_complete(&prompt(), 7).unwrap());
        let words = tokenize_words("Where did you put my keys?");
        let parsed = parse_response(&a, &words).unwrap();
        assert!(parsed.warnings.is_empty());
        assert_eq!(parsed.suggestion.words.len(), 6);
    }

    #[test]
    fn seed_changes_values_not_structure() {
        let a = mock_complete(&prompt(), 1).unwrap();
        let b = mock_complete(&prompt(), 2).unwrap();
        assert_ne!(a, b);
        let shape = |s: &str| {
            s.lines()
                .filter_map(|l| l.split_once(':').map(|(h, _)| h.to_string()))
                .filter(|h| h.starts_with("WORD"))
                .collect::<Vec<_>>()
        };
        assert_eq!(shape(&a), shape(&b));
    }

    #[test]
    fn uses_last_word_list() {
        let p = prompt();
        let words = extract_words(&p).unwrap();
        assert_eq!(words.last().unwrap().surface, "keys");
    }

    #[test]
    fn unrecognized_prompt() {
        assert_eq!(
            mock_complete("hello", 1),
            Err(BackendError::UnrecognizedPrompt)
        );
        assert_eq!(
            mock_complete("Target words:\nnothing here", 1),
            Err(BackendError::UnrecognizedPrompt)
        );
    }
}
