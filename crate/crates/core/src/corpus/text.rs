use std::sync::LazyLock;

use regex::Regex;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const URL: &str = "<url>";
pub const USER: &str = "<user>";
pub const NUM: &str = "<num>";

/// Reserved tokens in id order.
pub const RESERVED: [&str; 5] = [PAD, UNK, URL, USER, NUM];

static URL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:https?://|www\.)\S+").expect("url pattern"));
static MENTION_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@\w+").expect("mention pattern"));
static NUMBER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[0-9]+(?:[.,][0-9]+)?").expect("number pattern"));

const PUNCT: &[char] = &['.', ',', '!', '?', ';', ':', '\'', '"', '(', ')'];

/// Tweet normalization: lowercase, drop `#`, then replace URLs, user
/// mentions and free-standing numbers with `<url>`, `<user>` and `<num>`.
///
/// `#` is stripped before the patterns run so that a removed hash can never
/// expose a new match on a second pass; the function is idempotent.
/// Whitespace and punctuation runs are left as they are.
pub fn preprocess(raw: &str) -> String {
    let lowered = raw.to_lowercase().replace('#', "");
    let urls = URL_RE.replace_all(&lowered, URL);
    let mentions = MENTION_RE.replace_all(&urls, USER);
    replace_numbers(&mentions)
}

/// Numbers glued to a letter on either side ("mp3", "3d") are kept.
fn replace_numbers(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for m in NUMBER_RE.find_iter(text) {
        let before = text[..m.start()].chars().next_back();
        let after = text[m.end()..].chars().next();
        let attached = before.is_some_and(char::is_alphabetic) || after.is_some_and(char::is_alphabetic);
        if attached {
            continue;
        }
        out.push_str(&text[last..m.start()]);
        out.push_str(NUM);
        last = m.end();
    }
    out.push_str(&text[last..]);
    out
}

/// Whitespace split, then leading and trailing punctuation peeled off one
/// character at a time. Reserved tokens stay whole.
pub fn tokenize(clean: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in clean.split_whitespace() {
        if RESERVED.contains(&word) {
            tokens.push(word.to_string());
            continue;
        }
        let lead = word.chars().take_while(|c| PUNCT.contains(c)).count();
        if lead == word.chars().count() {
            tokens.extend(word.chars().map(String::from));
            continue;
        }
        let trail = word.chars().rev().take_while(|c| PUNCT.contains(c)).count();
        let chars: Vec<char> = word.chars().collect();
        tokens.extend(chars[..lead].iter().map(|c| c.to_string()));
        tokens.push(chars[lead..chars.len() - trail].iter().collect());
        tokens.extend(chars[chars.len() - trail..].iter().map(|c| c.to_string()));
    }
    tokens
}
