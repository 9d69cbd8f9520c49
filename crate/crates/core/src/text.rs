/// Alias normalization: Unicode lowercase, whitespace runs collapsed to a
/// single space, leading/trailing whitespace removed.
pub(crate) fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for c in s.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.extend(c.to_lowercase());
    }
    out
}

/// Byte offset of the `char_idx`-th character of `s` (or `s.len()` at the end).
pub(crate) fn byte_offset(s: &str, char_idx: usize) -> usize {
    s.char_indices()
        .nth(char_idx)
        .map(|(b, _)| b)
        .unwrap_or(s.len())
}

/// Substring by half-open character range.
pub(crate) fn char_slice(s: &str, start: usize, end: usize) -> &str {
    let b0 = byte_offset(s, start);
    let b1 = byte_offset(s, end);
    &s[b0..b1]
}

/// Replace the half-open character range `[start, end)` of `s` with `with`.
pub(crate) fn replace_chars(s: &str, start: usize, end: usize, with: &str) -> String {
    let b0 = byte_offset(s, start);
    let b1 = byte_offset(s, end);
    let mut out = String::with_capacity(s.len() - (b1 - b0) + with.len());
    out.push_str(&s[..b0]);
    out.push_str(with);
    out.push_str(&s[b1..]);
    out
}
