//! Reversible mapping from arbitrary strings onto the `[A-Za-z0-9_]` alphabet.
//!
//! Characters outside the alphabet become `__HH` per UTF-8 byte (upper-case
//! hex). A literal underscore is kept as-is unless the next character is also
//! an underscore, in which case it is written `__5F`. Decoding is greedy: an
//! underscore followed by `_HH` starts an escape, any other underscore is
//! literal.

use std::fmt::Write;

fn push_byte_escape(out: &mut String, byte: u8) {
    let _ = write!(out, "__{byte:02X}");
}

/// Escapes a local name, preserving single underscores (`Sam_Loyd` stays
/// `Sam_Loyd`).
pub fn escape_local(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars().peekable();
    while let Some(c) = chars.next() {
        if c.is_ascii_alphanumeric() {
            out.push(c);
        } else if c == '_' {
            if chars.peek() == Some(&'_') {
                push_byte_escape(&mut out, b'_');
            } else {
                out.push('_');
            }
        } else {
            let mut buf = [0u8; 4];
            for b in c.encode_utf8(&mut buf).bytes() {
                push_byte_escape(&mut out, b);
            }
        }
    }
    out
}

/// Escapes every character outside `[A-Za-z0-9]`, underscores included.
/// Used for literal content words so that no word can collide with a
/// structural token.
pub fn escape_strict(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for c in raw.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c);
        } else {
            let mut buf = [0u8; 4];
            for b in c.encode_utf8(&mut buf).bytes() {
                push_byte_escape(&mut out, b);
            }
        }
    }
    out
}

fn hex_value(b: u8) -> Option<u8> {
    match b {
        b'0'..=b'9' => Some(b - b'0'),
        b'A'..=b'F' => Some(b - b'A' + 10),
        _ => None,
    }
}

/// Inverse of [`escape_local`] and [`escape_strict`]. Returns `None` when the
/// input contains characters outside the alphabet or the escapes do not form
/// valid UTF-8.
pub fn unescape(encoded: &str) -> Option<String> {
    let bytes = encoded.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b == b'_' {
            if i + 3 < bytes.len() && bytes[i + 1] == b'_' {
                if let (Some(hi), Some(lo)) = (hex_value(bytes[i + 2]), hex_value(bytes[i + 3])) {
                    out.push(hi << 4 | lo);
                    i += 4;
                    continue;
                }
            }
            out.push(b'_');
        } else if b.is_ascii_alphanumeric() {
            out.push(b);
        } else {
            return None;
        }
        i += 1;
    }
    String::from_utf8(out).ok()
}

pub fn is_token_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

pub fn is_token(s: &str) -> bool {
    !s.is_empty() && s.chars().all(is_token_char)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plain_names_are_untouched() {
        assert_eq!(escape_local("Sam_Loyd"), "Sam_Loyd");
        assert_eq!(escape_local("knownFor"), "knownFor");
    }

    #[test]
    fn special_characters() {
        assert_eq!(escape_local("Saint-Denis"), "Saint__2DDenis");
        assert_eq!(unescape("Saint__2DDenis").unwrap(), "Saint-Denis");
        assert_eq!(escape_local("a__b"), "a__5F_b");
        assert_eq!(unescape("a__5F_b").unwrap(), "a__b");
        assert_eq!(escape_local("Zürich"), "Z__C3__BCrich");
        assert_eq!(escape_strict("a_b"), "a__5Fb");
    }

    #[test]
    fn rejects_foreign_characters() {
        assert!(unescape("a-b").is_none());
        assert!(unescape("__FF").is_none());
    }

    proptest! {
        #[test]
        fn local_round_trip(s in "\\PC{0,16}") {
            let e = escape_local(&s);
            prop_assert!(e.chars().all(is_token_char));
            prop_assert_eq!(unescape(&e).unwrap(), s);
        }

        #[test]
        fn underscore_heavy_round_trip(s in "[_a5F]{0,12}") {
            prop_assert_eq!(unescape(&escape_local(&s)).unwrap(), s.clone());
            prop_assert_eq!(unescape(&escape_strict(&s)).unwrap(), s);
        }
    }
}
