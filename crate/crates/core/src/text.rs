//! Surface-form normalization shared by corpus matching, response
//! post-processing, metrics and rewards.
//!
//! Every comparison between a generated answer and a timeline entity goes
//! through [`normalize`], so gold names and model outputs are reduced by the
//! same rule.

const ARTICLES: [&str; 3] = ["the", "a", "an"];

/// Lowercased word sequence of `raw`.
///
/// Steps, in order: trim leading whitespace, cut at the first sentence
/// terminator (`.`, `!`, `?` followed by whitespace or end of text, or any
/// line break), lowercase, delete apostrophes, turn every other
/// non-alphanumeric character into a word break, then drop leading articles.
pub fn normalize(raw: &str) -> Vec<String> {
    let head = first_sentence(raw.trim_start());
    let mut cleaned = String::with_capacity(head.len());
    for ch in head.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            cleaned.push(ch);
        } else if ch == '\'' || ch == '\u{2019}' {
            continue;
        } else {
            cleaned.push(' ');
        }
    }
    let mut words: Vec<String> = cleaned.split_whitespace().map(str::to_owned).collect();
    let leading = words
        .iter()
        .take_while(|w| ARTICLES.contains(&w.as_str()))
        .count();
    words.drain(..leading);
    words
}

/// Normalized form joined with single spaces; the key used for exact matching.
pub fn normalized_key(raw: &str) -> String {
    normalize(raw).join(" ")
}

fn first_sentence(text: &str) -> &str {
    let mut chars = text.char_indices().peekable();
    while let Some((idx, ch)) = chars.next() {
        match ch {
            '\n' | '\r' => return &text[..idx],
            '.' | '!' | '?' => match chars.peek() {
                None => return &text[..idx],
                Some((_, next)) if next.is_whitespace() => return &text[..idx],
                _ => {}
            },
            _ => {}
        }
    }
    text
}

/// Rough token count used to enforce the sequence budget: one token per
/// whitespace-separated piece.
pub fn approx_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn strips_article_and_terminator() {
        assert_eq!(normalize("The Hybrid Theory."), words(&["hybrid", "theory"]));
    }

    #[test]
    fn empty_input() {
        assert!(normalize("").is_empty());
        assert!(normalize("   \n").is_empty());
    }

    #[test]
    fn no_is_not_an_article() {
        assert_eq!(
            normalize("No Country for Old Men"),
            words(&["no", "country", "for", "old", "men"])
        );
    }

    #[test]
    fn truncates_at_first_sentence() {
        assert_eq!(normalize(" Meteora. It was a hit"), words(&["meteora"]));
        assert_eq!(normalize("Meteora\nnext line"), words(&["meteora"]));
        assert_eq!(normalize("Android 2.3 Gingerbread"), words(&["android", "2", "3", "gingerbread"]));
    }

    #[test]
    fn punctuation_becomes_word_break() {
        assert_eq!(normalize("\"Minutes-to-Midnight\""), words(&["minutes", "to", "midnight"]));
        assert_eq!(normalize("Don't Stop"), words(&["dont", "stop"]));
    }

    #[test]
    fn key_joins_words() {
        assert_eq!(normalized_key("the meteora."), "meteora");
    }

    proptest! {
        #[test]
        fn idempotent(raw in "\\PC{0,40}") {
            let once = normalize(&raw);
            let twice = normalize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn output_words_are_clean(raw in "\\PC{0,40}") {
            for w in normalize(&raw) {
                prop_assert!(!w.is_empty());
                prop_assert!(w.chars().all(char::is_alphanumeric));
            }
        }
    }
}
