//! Tokenizers compatible with the mteval-v13a and Chinese character schemes
//! used by standard BLEU tooling.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenScheme {
    /// mteval-v13a: entity unescaping, punctuation and symbol padding.
    Intl13a,
    /// Every CJK codepoint becomes its own token, the rest as 13a.
    CjkChar,
}

impl TokenScheme {
    /// Default scheme for a target language code.
    pub fn for_language(code: &str) -> TokenScheme {
        match code {
            "zh" | "zho" | "cmn" => TokenScheme::CjkChar,
            _ if code.starts_with("zh-") || code.starts_with("zho_") => TokenScheme::CjkChar,
            _ => TokenScheme::Intl13a,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TokenScheme::Intl13a => "intl_13a",
            TokenScheme::CjkChar => "cjk_char",
        }
    }
}

impl fmt::Display for TokenScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TokenScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "intl_13a" | "13a" => Ok(TokenScheme::Intl13a),
            "cjk_char" | "zh" => Ok(TokenScheme::CjkChar),
            other => Err(format!("unknown tokenizer `{other}` (expected intl_13a or cjk_char)")),
        }
    }
}

/// Whitespace as Python's `str.isspace` sees it; Rust's definition omits the
/// four ASCII information separators.
pub(crate) fn is_py_space(c: char) -> bool {
    c.is_whitespace() || ('\u{1c}'..='\u{1f}').contains(&c)
}

pub(crate) fn py_split(text: &str) -> impl Iterator<Item = &str> {
    text.split(is_py_space).filter(|t| !t.is_empty())
}

fn is_padded_symbol(c: char) -> bool {
    matches!(c, '{'..='~' | '['..='`' | ' '..='&' | '('..='+' | ':'..='@' | '/')
}

struct PostRules {
    period_comma_after_nondigit: Regex,
    period_comma_before_nondigit: Regex,
    dash_after_digit: Regex,
}

fn post_rules() -> &'static PostRules {
    static RULES: OnceLock<PostRules> = OnceLock::new();
    RULES.get_or_init(|| PostRules {
        period_comma_after_nondigit: Regex::new(r"([^0-9])([\.,])").unwrap(),
        period_comma_before_nondigit: Regex::new(r"([\.,])([^0-9])").unwrap(),
        dash_after_digit: Regex::new(r"([0-9])(-)").unwrap(),
    })
}

/// The regex stage shared by both schemes.
fn post_tokenize(line: &str) -> Vec<String> {
    let mut padded = String::with_capacity(line.len() * 2);
    for c in line.chars() {
        if is_padded_symbol(c) {
            padded.push(' ');
            padded.push(c);
            padded.push(' ');
        } else {
            padded.push(c);
        }
    }
    let rules = post_rules();
    let s = rules.period_comma_after_nondigit.replace_all(&padded, "${1} ${2} ");
    let s = rules.period_comma_before_nondigit.replace_all(&s, " ${1} ${2}");
    let s = rules.dash_after_digit.replace_all(&s, "${1} ${2} ");
    py_split(&s).map(str::to_string).collect()
}

fn tokenize_13a(text: &str) -> Vec<String> {
    let mut line = text.replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
    if line.contains('&') {
        line = line.replace("&quot;", "\"").replace("&amp;", "&").replace("&lt;", "<").replace("&gt;", ">");
    }
    post_tokenize(&format!(" {line} "))
}

/// Codepoint ranges treated as Chinese characters. These are the effective
/// ranges of the reference implementation, whose table compares single
/// characters against some two-character strings; U+2001..=U+2A6D and
/// U+2F81..=U+2FA1 are what those entries actually match.
const CJK_RANGES: &[(char, char)] = &[
    ('\u{3400}', '\u{4db5}'),
    ('\u{4e00}', '\u{9fa5}'),
    ('\u{9fa6}', '\u{9fbb}'),
    ('\u{f900}', '\u{fa2d}'),
    ('\u{fa30}', '\u{fa6a}'),
    ('\u{fa70}', '\u{fad9}'),
    ('\u{2001}', '\u{2a6d}'),
    ('\u{2f81}', '\u{2fa1}'),
    ('\u{ff00}', '\u{ffef}'),
    ('\u{2e80}', '\u{2eff}'),
    ('\u{3000}', '\u{303f}'),
    ('\u{31c0}', '\u{31ef}'),
    ('\u{2f00}', '\u{2fdf}'),
    ('\u{2ff0}', '\u{2fff}'),
    ('\u{3100}', '\u{312f}'),
    ('\u{31a0}', '\u{31bf}'),
    ('\u{fe10}', '\u{fe1f}'),
    ('\u{fe30}', '\u{fe4f}'),
    ('\u{2600}', '\u{26ff}'),
    ('\u{2700}', '\u{27bf}'),
    ('\u{3200}', '\u{32ff}'),
    ('\u{3300}', '\u{33ff}'),
];

pub fn is_cjk_char(c: char) -> bool {
    CJK_RANGES.iter().any(|&(lo, hi)| lo <= c && c <= hi)
}

fn tokenize_cjk(text: &str) -> Vec<String> {
    let line = text.trim_matches(is_py_space);
    let mut spaced = String::with_capacity(line.len() * 3);
    for c in line.chars() {
        if is_cjk_char(c) {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    post_tokenize(&spaced)
}

pub fn tokenize(text: &str, scheme: TokenScheme) -> Vec<String> {
    match scheme {
        TokenScheme::Intl13a => tokenize_13a(text),
        TokenScheme::CjkChar => tokenize_cjk(text),
    }
}
