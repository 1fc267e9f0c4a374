/// Characters peeled off the edges of whitespace-separated words.
const EDGE_PUNCTUATION: &[char] = &['.', ',', '!', '?', ';', ':', '"', '(', ')'];

/// Lowercases and splits on whitespace, then separates leading and trailing
/// punctuation into tokens of their own. Bracketed slot placeholders such as
/// `[restaurant_phone]` stay intact.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let word = word.to_lowercase();
        if is_placeholder(&word) {
            out.push(word);
            continue;
        }
        let mut rest = word.as_str();
        while let Some(c) = rest.chars().next().filter(|c| EDGE_PUNCTUATION.contains(c)) {
            out.push(c.to_string());
            rest = &rest[c.len_utf8()..];
        }
        let mut trailing = Vec::new();
        while let Some(c) = rest
            .chars()
            .next_back()
            .filter(|c| EDGE_PUNCTUATION.contains(c))
        {
            trailing.push(c.to_string());
            rest = &rest[..rest.len() - c.len_utf8()];
        }
        if !rest.is_empty() {
            out.push(rest.to_string());
        }
        out.extend(trailing.into_iter().rev());
    }
    out
}

fn is_placeholder(word: &str) -> bool {
    word.len() > 2 && word.starts_with('[') && word.ends_with(']')
}
