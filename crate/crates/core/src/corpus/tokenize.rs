const CLITICS: [&str; 6] = ["s", "re", "ve", "ll", "d", "m"];

/// Lowercases and splits text into word, clitic and punctuation tokens.
///
/// Alphanumeric runs are words; `'s 're 've 'll 'd 'm` and `n't` are split
/// off as their own tokens; every other non-space character is a token on
/// its own. Re-tokenizing the space-joined output yields the same tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let mut out = Vec::new();
    for chunk in lowered.split_whitespace() {
        tokenize_chunk(chunk, &mut out);
    }
    out
}

fn tokenize_chunk(chunk: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = chunk.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_alphanumeric() {
            let start = i;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            let negation = i + 1 < chars.len()
                && chars[i] == '\''
                && chars[i + 1] == 't'
                && word.ends_with('n')
                && (i + 2 == chars.len() || !chars[i + 2].is_alphanumeric());
            if negation {
                let stem = &word[..word.len() - 1];
                if !stem.is_empty() {
                    out.push(stem.to_string());
                }
                out.push("n't".to_string());
                i += 2;
            } else {
                out.push(word);
            }
        } else if c == '\'' {
            let rest_end = {
                let mut j = i + 1;
                while j < chars.len() && chars[j].is_alphanumeric() {
                    j += 1;
                }
                j
            };
            let rest: String = chars[i + 1..rest_end].iter().collect();
            if CLITICS.contains(&rest.as_str()) {
                out.push(format!("'{rest}"));
                i = rest_end;
            } else {
                out.push("'".to_string());
                i += 1;
            }
        } else {
            out.push(c.to_string());
            i += 1;
        }
    }
}

/// Joins tokens with single spaces.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens
        .iter()
        .map(|t| t.as_ref())
        .collect::<Vec<_>>()
        .join(" ")
}
