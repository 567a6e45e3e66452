//! Word tokenizer shared by TF-IDF retrieval and BLEU scoring.
//!
//! Text is split on every codepoint that is neither alphanumeric nor a
//! combining mark. Marks are kept so that scripts with dependent vowels
//! (Devanagari, Thai) do not shatter mid-word. Runs of four or more
//! codepoints that contain CJK or Thai characters are further broken into
//! character unigrams, since those scripts do not mark word boundaries.

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub cjk_unigrams: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            cjk_unigrams: true,
        }
    }
}

impl TokenizerConfig {
    /// Same splitting rules, case preserved. Used for translation scoring.
    pub fn cased() -> Self {
        Self {
            lowercase: false,
            ..Self::default()
        }
    }
}

const UNIGRAM_FALLBACK_MIN: usize = 4;

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || is_combining_mark(c)
}

/// Scripts written without spaces between words.
pub fn is_unsegmented_script(c: char) -> bool {
    matches!(c as u32,
        0x0E00..=0x0E7F      // Thai
        | 0x3040..=0x309F    // Hiragana
        | 0x30A0..=0x30FF    // Katakana
        | 0x3400..=0x4DBF    // CJK ext A
        | 0x4E00..=0x9FFF    // CJK unified
        | 0xF900..=0xFAFF    // CJK compatibility
        | 0xFF66..=0xFF9F    // halfwidth katakana
        | 0x20000..=0x2FA1F) // CJK ext B+
}

pub fn tokenize(text: &str, config: TokenizerConfig) -> Vec<String> {
    let source = if config.lowercase {
        text.to_lowercase()
    } else {
        text.to_string()
    };
    let mut tokens = Vec::new();
    for run in source.split(|c: char| !is_word_char(c)) {
        if run.is_empty() {
            continue;
        }
        let fallback = config.cjk_unigrams
            && run.chars().count() >= UNIGRAM_FALLBACK_MIN
            && run.chars().any(is_unsegmented_script);
        if fallback {
            unigrams(run, &mut tokens);
        } else {
            tokens.push(run.to_string());
        }
    }
    tokens
}

// A combining mark stays attached to the character before it.
fn unigrams(run: &str, out: &mut Vec<String>) {
    let mut current = String::new();
    for c in run.chars() {
        if is_combining_mark(c) && !current.is_empty() {
            current.push(c);
            continue;
        }
        if !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
        current.push(c);
    }
    if !current.is_empty() {
        out.push(current);
    }
}
