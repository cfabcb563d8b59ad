/// Lowercased maximal runs of alphanumeric characters, keeping tokens of at
/// least two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut len = 0usize;
    let mut flush = |current: &mut String, len: &mut usize| {
        if *len >= 2 {
            tokens.push(std::mem::take(current));
        } else {
            current.clear();
        }
        *len = 0;
    };
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
            len += 1;
        } else if len > 0 {
            flush(&mut current, &mut len);
        }
    }
    flush(&mut current, &mut len);
    tokens
}
