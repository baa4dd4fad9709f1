//! Character-offset utilities.
//!
//! Every offset stored in sections, sequences, and annotations counts Unicode
//! scalar values, not bytes, so serialized artifacts stay stable across
//! encodings. Regex matching works in bytes; [`OffsetMap`] converts.

/// Number of Unicode scalar values in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Slice `s` by char offsets `[start, end)`. Panics if out of range.
pub fn char_slice(s: &str, start: usize, end: usize) -> &str {
    let map = OffsetMap::new(s);
    map.slice(s, start, end)
}

/// Byte/char offset conversion table for one string.
pub struct OffsetMap {
    /// byte index of each char, plus the total byte length as a sentinel.
    byte_of_char: Vec<usize>,
    ascii: bool,
}

impl OffsetMap {
    pub fn new(s: &str) -> Self {
        if s.is_ascii() {
            return OffsetMap {
                byte_of_char: Vec::new(),
                ascii: true,
            };
        }
        let mut byte_of_char: Vec<usize> = s.char_indices().map(|(b, _)| b).collect();
        byte_of_char.push(s.len());
        OffsetMap {
            byte_of_char,
            ascii: false,
        }
    }

    pub fn char_len(&self, s: &str) -> usize {
        if self.ascii {
            s.len()
        } else {
            self.byte_of_char.len() - 1
        }
    }

    /// Char offset of a byte offset that lies on a char boundary.
    pub fn char_of_byte(&self, byte: usize) -> usize {
        if self.ascii {
            return byte;
        }
        match self.byte_of_char.binary_search(&byte) {
            Ok(i) => i,
            Err(_) => panic!("byte offset {byte} is not a char boundary"),
        }
    }

    pub fn byte_of_char(&self, ch: usize) -> usize {
        if self.ascii {
            return ch;
        }
        self.byte_of_char[ch]
    }

    pub fn slice<'a>(&self, s: &'a str, start: usize, end: usize) -> &'a str {
        &s[self.byte_of_char(start)..self.byte_of_char(end)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_offsets_are_identity() {
        let m = OffsetMap::new("abc def");
        assert_eq!(m.char_of_byte(4), 4);
        assert_eq!(m.byte_of_char(4), 4);
        assert_eq!(m.slice("abc def", 4, 7), "def");
    }

    #[test]
    fn non_ascii_offsets_count_scalars() {
        let s = "état: flexion";
        let m = OffsetMap::new(s);
        assert_eq!(char_len(s), 13);
        assert_eq!(m.char_len(s), 13);
        // "é" is two bytes
        assert_eq!(m.byte_of_char(1), 2);
        assert_eq!(m.slice(s, 6, 13), "flexion");
        assert_eq!(m.char_of_byte(2), 1);
    }
}
