/// Clitics split off the preceding word.
const CLITICS: &[&str] = &["n't", "'s", "'re", "'ll", "'ve", "'m", "'d"];

/// Lowercases, splits on whitespace, separates punctuation into standalone
/// tokens and splits clitics (`don't` → `do n't`).
///
/// Joining the output with single spaces and tokenizing again is the identity.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for chunk in lower.split_whitespace() {
        split_chunk(chunk, &mut out);
    }
    out
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Tokenizes and re-joins; the canonical surface form of ontology values and spans.
pub fn normalize(text: &str) -> String {
    detokenize(&tokenize(text))
}

fn split_chunk(chunk: &str, out: &mut Vec<String>) {
    if CLITICS.contains(&chunk) {
        out.push(chunk.to_string());
        return;
    }
    let mut word = String::new();
    for c in chunk.chars() {
        if c.is_alphanumeric() || c == '\'' || c == '\u{2019}' {
            word.push(if c == '\u{2019}' { '\'' } else { c });
        } else {
            flush_word(&mut word, out);
            out.push(c.to_string());
        }
    }
    flush_word(&mut word, out);
}

fn flush_word(word: &mut String, out: &mut Vec<String>) {
    if word.is_empty() {
        return;
    }
    let w = std::mem::take(word);
    if CLITICS.contains(&w.as_str()) {
        out.push(w);
        return;
    }
    let core = w.trim_start_matches('\'');
    for _ in 0..(w.len() - core.len()) {
        out.push("'".to_string());
    }
    let stem = core.trim_end_matches('\'');
    let trailing = core.len() - stem.len();
    if !stem.is_empty() {
        match CLITICS
            .iter()
            .find(|c| stem.len() > c.len() && stem.ends_with(*c))
        {
            Some(clitic) => {
                out.push(stem[..stem.len() - clitic.len()].to_string());
                out.push(clitic.to_string());
            }
            None => out.push(stem.to_string()),
        }
    }
    for _ in 0..trailing {
        out.push("'".to_string());
    }
}
