//! Lexical front end: turns a transcript line into a normalized token stream.
//!
//! Words are lowercased and split on whitespace, spoken numbers ("one
//! hundred", "twenty five") and digit strings become number tokens, and unit
//! words directly after a number are dropped. An [`AliasTable`] maps surface
//! words onto canonical vocabulary before numbers are merged, so a known
//! recognizer confusion like "for" ends up as the number 4.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Largest magnitude the lexicon will produce.
pub const MAX_NUMBER: u32 = 9999;

const UNITS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];
const TEENS: [&str; 10] = [
    "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen",
    "eighteen", "nineteen",
];
const TENS: [&str; 8] = [
    "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];
const UNIT_WORDS: [&str; 8] = [
    "mm",
    "millimeter",
    "millimeters",
    "millimetre",
    "millimetres",
    "deg",
    "degree",
    "degrees",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LexError {
    #[error("malformed number: {0:?}")]
    MalformedNumber(String),
    #[error("alias {surface:?} -> {canonical:?} would chain through another alias")]
    AliasChain { surface: String, canonical: String },
    #[error("alias file line {line}: {message}")]
    AliasFile { line: usize, message: String },
    #[error("reading alias file: {0}")]
    Io(String),
}

/// One normalized token.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Token {
    Word(String),
    /// A unitless magnitude; `text` keeps the words it was spoken as.
    Number { value: u32, text: String },
}

impl Token {
    pub fn word(w: &str) -> Self {
        Token::Word(w.to_string())
    }

    pub fn number(value: u32) -> Self {
        Token::Number { value, text: value.to_string() }
    }

    pub fn text(&self) -> &str {
        match self {
            Token::Word(w) => w,
            Token::Number { text, .. } => text,
        }
    }

    pub fn as_word(&self) -> Option<&str> {
        match self {
            Token::Word(w) => Some(w),
            Token::Number { .. } => None,
        }
    }

    pub fn as_number(&self) -> Option<u32> {
        match self {
            Token::Number { value, .. } => Some(*value),
            Token::Word(_) => None,
        }
    }

    pub fn is_word(&self, w: &str) -> bool {
        self.as_word() == Some(w)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.text())
    }
}

fn small_value(word: &str) -> Option<u32> {
    if let Some(i) = UNITS.iter().position(|u| *u == word) {
        return Some(i as u32);
    }
    if let Some(i) = TEENS.iter().position(|t| *t == word) {
        return Some(10 + i as u32);
    }
    TENS.iter().position(|t| *t == word).map(|i| 20 + 10 * i as u32)
}

fn is_number_word(word: &str) -> bool {
    small_value(word).is_some() || word == "hundred" || word == "thousand"
}

fn parse_digits(word: &str) -> Option<u32> {
    if word.is_empty() || !word.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    // Long digit strings overflow u32 well before the cap matters.
    if word.len() > 4 {
        return None;
    }
    word.parse::<u32>().ok().filter(|v| *v <= MAX_NUMBER)
}

/// Parses a spoken English number (0–9999) or a single digit string.
///
/// Accepts `[unit thousand] [unit hundred] [tens [unit] | teen | unit]`, with
/// "zero" only on its own.
pub fn parse_number_words<S: AsRef<str>>(words: &[S]) -> Result<u32, LexError> {
    let words: Vec<&str> = words.iter().map(|w| w.as_ref()).collect();
    let malformed = || LexError::MalformedNumber(words.join(" "));

    match words.as_slice() {
        [] => return Err(malformed()),
        [single] if single.bytes().all(|b| b.is_ascii_digit()) => {
            return parse_digits(single).ok_or_else(malformed);
        }
        ["zero"] => return Ok(0),
        _ => {}
    }

    let mut rest = words.as_slice();
    let mut total = 0u32;

    // A 1..=9 multiplier followed by `scale`.
    let mut take_scaled = |rest: &mut &[&str], scale_word: &str, scale: u32| {
        if let [digit, s, tail @ ..] = *rest {
            if *s == scale_word {
                if let Some(v) = small_value(digit).filter(|v| (1..=9).contains(v)) {
                    total += v * scale;
                    *rest = tail;
                    return true;
                }
            }
        }
        false
    };
    let had_thousands = take_scaled(&mut rest, "thousand", 1000);
    let had_hundreds = take_scaled(&mut rest, "hundred", 100);

    let tail_value = match rest {
        [] => None,
        [w] => match small_value(w) {
            Some(0) | None => return Err(malformed()),
            Some(v) => Some(v),
        },
        [tens, unit] => {
            let t = small_value(tens).filter(|v| *v >= 20).ok_or_else(malformed)?;
            let u = small_value(unit).filter(|v| (1..=9).contains(v)).ok_or_else(malformed)?;
            Some(t + u)
        }
        _ => return Err(malformed()),
    };

    if !had_thousands && !had_hundreds && tail_value.is_none() {
        return Err(malformed());
    }
    Ok(total + tail_value.unwrap_or(0))
}

/// Splits `line` into tokens without alias resolution.
pub fn tokenize(line: &str) -> Vec<Token> {
    let words: Vec<String> = line.split_whitespace().map(str::to_lowercase).collect();
    merge_numbers(words)
}

fn merge_numbers(words: Vec<String>) -> Vec<Token> {
    let mut out = Vec::with_capacity(words.len());
    let mut pending: Vec<String> = Vec::new();

    fn flush(pending: &mut Vec<String>, out: &mut Vec<Token>) {
        if pending.is_empty() {
            return;
        }
        match parse_number_words(pending) {
            Ok(value) => out.push(Token::Number { value, text: pending.join(" ") }),
            // Only reachable for lone scale words, which stay plain words.
            Err(_) => out.extend(pending.iter().map(|w| Token::Word(w.clone()))),
        }
        pending.clear();
    }

    for word in words {
        if UNIT_WORDS.contains(&word.as_str()) {
            flush(&mut pending, &mut out);
            if matches!(out.last(), Some(Token::Number { .. })) {
                continue;
            }
            out.push(Token::Word(word));
            continue;
        }
        if let Some(value) = parse_digits(&word) {
            flush(&mut pending, &mut out);
            out.push(Token::Number { value, text: word });
            continue;
        }
        if is_number_word(&word) {
            pending.push(word);
            if parse_number_words(&pending).is_err() {
                let word = pending.pop().expect("just pushed");
                flush(&mut pending, &mut out);
                pending.push(word);
            }
            continue;
        }
        flush(&mut pending, &mut out);
        out.push(Token::Word(word));
    }
    flush(&mut pending, &mut out);
    out
}

/// Surface word → canonical word. Entries never chain, so lookup is a
/// single step and resolution is idempotent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasTable {
    entries: BTreeMap<String, String>,
}

impl AliasTable {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The shipped table: known recognizer confusions plus a few synonyms.
    pub fn with_defaults() -> Self {
        let mut table = Self::empty();
        for (surface, canonical) in [
            ("for", "four"),
            ("to", "two"),
            ("too", "two"),
            ("grab", "close"),
            ("release", "open"),
            ("forward", "front"),
            ("backward", "back"),
        ] {
            table.insert(surface, canonical).expect("default aliases are chain-free");
        }
        table
    }

    pub fn insert(&mut self, surface: &str, canonical: &str) -> Result<(), LexError> {
        let surface = surface.to_lowercase();
        let canonical = canonical.to_lowercase();
        let chains = surface == canonical
            || self.entries.contains_key(&canonical)
            || self.entries.values().any(|c| *c == surface);
        if chains {
            return Err(LexError::AliasChain { surface, canonical });
        }
        self.entries.insert(surface, canonical);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve_word<'a>(&'a self, word: &'a str) -> &'a str {
        self.entries.get(word).map(String::as_str).unwrap_or(word)
    }

    pub fn resolve(&self, token: &Token) -> Token {
        match token {
            Token::Word(w) => Token::Word(self.resolve_word(w).to_string()),
            number => number.clone(),
        }
    }

    /// Parses `surface canonical` pairs, one per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, LexError> {
        let mut table = Self::empty();
        table.extend_from_str(text)?;
        Ok(table)
    }

    pub fn extend_from_str(&mut self, text: &str) -> Result<(), LexError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [surface, canonical] = fields.as_slice() else {
                return Err(LexError::AliasFile {
                    line: idx + 1,
                    message: format!("expected `surface canonical`, got {line:?}"),
                });
            };
            self.insert(surface, canonical).map_err(|e| LexError::AliasFile {
                line: idx + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LexError> {
        let text = std::fs::read_to_string(path).map_err(|e| LexError::Io(e.to_string()))?;
        Self::parse(&text)
    }
}

/// Tokenizer bound to an alias table.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    pub aliases: AliasTable,
}

impl Lexicon {
    pub fn new(aliases: AliasTable) -> Self {
        Self { aliases }
    }

    pub fn with_defaults() -> Self {
        Self::new(AliasTable::with_defaults())
    }

    /// Tokenizes with aliases applied to every raw word before numbers are
    /// merged.
    pub fn normalize(&self, line: &str) -> Vec<Token> {
        let words = line
            .split_whitespace()
            .map(|w| self.aliases.resolve_word(&w.to_lowercase()).to_string())
            .collect();
        merge_numbers(words)
    }
}
