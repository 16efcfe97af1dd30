const SPLIT_PUNCT: [char; 5] = ['?', '!', ',', '\'', '"'];

fn is_edge(c: char) -> bool {
    c == '.' || SPLIT_PUNCT.contains(&c)
}

fn punct_tokens(edge: &str) -> impl Iterator<Item = String> + '_ {
    edge.chars().filter(|&c| c != '.').map(String::from)
}

/// Whitespace tokenization with sentence punctuation split off and periods
/// acting as delimiters, so `u.n.i.t.y` yields five tokens.
pub fn tokenize_nl(text: &str) -> Vec<String> {
    tokenize_nl_with(text, false)
}

/// With `keep_inner_periods`, periods inside a word survive and only leading
/// or trailing ones are dropped.
pub fn tokenize_nl_with(text: &str, keep_inner_periods: bool) -> Vec<String> {
    let text = if keep_inner_periods { text.to_string() } else { text.replace('.', " ") };
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let lead_end = word.find(|c| !is_edge(c)).unwrap_or(word.len());
        let trail_start = word[lead_end..]
            .rfind(|c| !is_edge(c))
            .map(|i| lead_end + i + word[lead_end + i..].chars().next().map_or(0, char::len_utf8))
            .unwrap_or(lead_end);
        out.extend(punct_tokens(&word[..lead_end]));
        if lead_end < trail_start {
            out.push(word[lead_end..trail_start].to_string());
        }
        out.extend(punct_tokens(&word[trail_start..]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn seven_tokens() {
        assert_eq!(tokenize_nl("the u.n.i.t.y group"), ["the", "u", "n", "i", "t", "y", "group"]);
        assert_eq!(tokenize_nl_with("the u.n.i.t.y group", true), ["the", "u.n.i.t.y", "group"]);
    }

    #[test]
    fn punctuation() {
        assert_eq!(tokenize_nl("Where is Carew Cross ?"), ["Where", "is", "Carew", "Cross", "?"]);
        assert_eq!(tokenize_nl("\"Hi,\" she said!"), ["\"", "Hi", ",", "\"", "she", "said", "!"]);
        assert_eq!(tokenize_nl("Who built it?"), ["Who", "built", "it", "?"]);
        assert_eq!(tokenize_nl("l'arc"), ["l'arc"]);
        assert_eq!(tokenize_nl("Is it St. Paul's ?"), ["Is", "it", "St", "Paul's", "?"]);
        assert_eq!(tokenize_nl("??"), ["?", "?"]);
        assert!(tokenize_nl("").is_empty());
        assert!(tokenize_nl(" ... ").is_empty());
    }

    proptest! {
        #[test]
        fn tokens_are_nonempty_and_unspaced(s in "[a-zA-Z .?!,'\"é]{0,40}") {
            for t in tokenize_nl(&s) {
                prop_assert!(!t.is_empty());
                prop_assert!(!t.contains(char::is_whitespace));
                prop_assert!(!t.contains('.'));
            }
        }

        #[test]
        fn idempotent_on_joined_output(s in "[a-z .?!,]{0,40}") {
            let once = tokenize_nl(&s);
            prop_assert_eq!(tokenize_nl(&once.join(" ")), once);
        }
    }
}
