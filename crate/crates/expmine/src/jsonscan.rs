//! Balanced-delimiter extraction of JSON values out of free-form model text.
//! Handles replies wrapped in prose or fenced code blocks by trying every
//! candidate opening delimiter until one parses.

use serde::de::DeserializeOwned;

/// Span of a balanced `open..close` region starting at byte 0 of `s`,
/// ignoring delimiters inside JSON strings.
fn balanced_span(s: &str, open: char, close: char) -> Option<&str> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        if c == '"' {
            in_string = true;
        } else if c == open {
            depth += 1;
        } else if c == close {
            depth = depth.checked_sub(1)?;
            if depth == 0 {
                return Some(&s[..i + c.len_utf8()]);
            }
        }
    }
    None
}

/// First well-formed JSON value of type `T` delimited by `open`/`close`
/// anywhere in `text`.
pub(crate) fn extract_json<T: DeserializeOwned>(text: &str, open: char, close: char) -> Option<T> {
    for (i, _) in text.char_indices().filter(|(_, c)| *c == open) {
        if let Some(span) = balanced_span(&text[i..], open, close) {
            if let Ok(v) = serde_json::from_str::<T>(span) {
                return Some(v);
            }
        }
    }
    None
}

pub(crate) fn extract_object<T: DeserializeOwned>(text: &str) -> Option<T> {
    extract_json(text, '{', '}')
}

pub(crate) fn extract_array<T: DeserializeOwned>(text: &str) -> Option<T> {
    extract_json(text, '[', ']')
}
