//! Tokenization and sentence splitting.
//!
//! Tokens are lowercased runs of alphanumeric characters (apostrophes inside a
//! word are kept, so `don't` stays one token); every other non-space character
//! is a token of its own. Sentences end at `.`, `!` or `?` followed by
//! whitespace or end of text, and at blank lines.

pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let inner_apostrophe = (c == '\'' || c == '\u{2019}')
            && !word.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if c.is_alphanumeric() || inner_apostrophe {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    for block in split_blank_lines(text) {
        let chars: Vec<char> = block.chars().collect();
        let mut start = 0;
        let mut i = 0;
        while i < chars.len() {
            if matches!(chars[i], '.' | '!' | '?') {
                // swallow runs like "?!" or "..."
                let mut end = i + 1;
                while end < chars.len() && matches!(chars[end], '.' | '!' | '?') {
                    end += 1;
                }
                if end == chars.len() || chars[end].is_whitespace() {
                    push_trimmed(&mut sentences, &chars[start..end]);
                    start = end;
                }
                i = end;
            } else {
                i += 1;
            }
        }
        push_trimmed(&mut sentences, &chars[start..]);
    }
    sentences
}

fn split_blank_lines(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.trim().is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
            current.clear();
        } else {
            if !current.is_empty() {
                current.push('\n');
            }
            current.push_str(line);
        }
    }
    if !current.trim().is_empty() {
        blocks.push(current);
    }
    blocks
}

fn push_trimmed(out: &mut Vec<String>, chars: &[char]) {
    let s: String = chars.iter().collect();
    let s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    if !s.is_empty() {
        out.push(s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(
            tokenize("I don't THINK so, really?!"),
            vec!["i", "don't", "think", "so", ",", "really", "?", "!"]
        );
        assert_eq!(tokenize("  "), Vec::<String>::new());
        assert_eq!(tokenize("'quoted'"), vec!["'", "quoted", "'"]);
    }

    #[test]
    fn sentences_split_on_terminals_and_blank_lines() {
        let s =
            split_sentences("First one. Second one?! Third\n\nFourth line\ncontinues. 3.5 stays");
        assert_eq!(
            s,
            vec![
                "First one.",
                "Second one?!",
                "Third",
                "Fourth line continues.",
                "3.5 stays"
            ]
        );
        assert!(split_sentences("\n\n  \n").is_empty());
    }
}
