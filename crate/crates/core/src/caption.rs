//! Social-media caption cleaning, sentence segmentation and an English gate.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::emoji::is_emoji;
use crate::error::{Error, Result};

static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:[a-z][a-z0-9+.\-]*://|www\.)\S*").expect("url regex"));
static EMAIL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[\w.+\-]+@[\w\-]+(?:\.[\w\-]+)+").expect("email regex"));
static USER_TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@\w+").expect("tag regex"));

pub const DEFAULT_ENGLISH_THRESHOLD: f64 = 0.5;

static ENGLISH_STOPWORDS: LazyLock<Stopwords> = LazyLock::new(|| {
    Stopwords::from_reader(include_str!("../data/stopwords_en.txt").as_bytes())
        .expect("bundled stopword list")
});

/// Lowercase stopword set.
#[derive(Debug, Clone, Default)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    /// The bundled English list.
    pub fn english() -> &'static Stopwords {
        &ENGLISH_STOPWORDS
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Stopwords(words.into_iter().map(|w| w.as_ref().to_lowercase()).collect())
    }

    /// One word per line; blank lines and `#` comments are ignored.
    pub fn from_reader<R: BufRead>(r: R) -> Result<Self> {
        let mut set = HashSet::new();
        for line in r.lines() {
            let line = line?;
            let w = line.trim();
            if w.is_empty() || w.starts_with('#') {
                continue;
            }
            set.insert(w.to_lowercase());
        }
        Ok(Stopwords(set))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        let sw = Self::from_reader(BufReader::new(f))?;
        if sw.is_empty() {
            return Err(Error::invalid(format!("{}: empty stopword list", path.display())));
        }
        Ok(sw)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleanCaption {
    pub sentences: Vec<String>,
    pub tokens: Vec<Vec<String>>,
    pub english_score: f64,
}

impl CleanCaption {
    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Sentences joined by single spaces.
    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }

    pub fn all_tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().flatten().map(String::as_str)
    }
}

fn strip_chars(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_emoji = false;
    for c in s.chars() {
        if is_emoji(c) {
            if !in_emoji {
                out.push(' ');
            }
            in_emoji = true;
            continue;
        }
        in_emoji = false;
        match c {
            '#' => {}
            '\r' => out.push('\n'),
            '\n' | '\t' => out.push(c),
            c if c.is_control() => {}
            c => out.push(c),
        }
    }
    out
}

fn strip_pass(s: &str) -> String {
    let s = strip_chars(s);
    let s = URL.replace_all(&s, "");
    let s = EMAIL.replace_all(&s, "");
    USER_TAG.replace_all(&s, "").into_owned()
}

/// Collapse whitespace within lines to single spaces and drop blank lines.
fn normalize_whitespace(s: &str) -> String {
    s.lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Remove URLs, emails, user tags, emoji, control characters and `#` signs,
/// keeping line structure. Removal repeats until nothing changes, since
/// deleting one span can expose another.
pub fn strip_noise(raw: &str) -> String {
    let mut cur = strip_pass(raw);
    loop {
        let next = strip_pass(&cur);
        if next == cur {
            break;
        }
        cur = next;
    }
    normalize_whitespace(&cur)
}

fn is_delimiter(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Split on `.`, `!`, `?` runs followed by whitespace or end of text, and on
/// newlines. A delimiter followed by a lowercase letter on the same line
/// continues the sentence ("e.g. this", "wow! nice"). Delimiters stay with
/// their sentence; whitespace inside a sentence collapses to single spaces.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut cur = String::new();
    let flush = |cur: &mut String, out: &mut Vec<String>| {
        let s = cur.split_whitespace().collect::<Vec<_>>().join(" ");
        if !s.is_empty() {
            out.push(s);
        }
        cur.clear();
    };

    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            flush(&mut cur, &mut sentences);
            i += 1;
            continue;
        }
        cur.push(c);
        if is_delimiter(c) {
            while i + 1 < chars.len() && is_delimiter(chars[i + 1]) {
                i += 1;
                cur.push(chars[i]);
            }
            let next = i + 1;
            if next == chars.len() {
                flush(&mut cur, &mut sentences);
            } else if chars[next].is_whitespace() {
                let mut k = next;
                let mut newline = false;
                while k < chars.len() && chars[k].is_whitespace() {
                    newline |= chars[k] == '\n';
                    k += 1;
                }
                if k == chars.len() || newline || !chars[k].is_lowercase() {
                    flush(&mut cur, &mut sentences);
                }
            }
        }
        i += 1;
    }
    flush(&mut cur, &mut sentences);
    sentences
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Lowercase word tokens: alphanumeric runs, with apostrophes allowed inside
/// a word ("don't").
pub fn tokenize(sentence: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut push = |word: &mut String| {
        let w = word.trim_matches(is_apostrophe);
        if !w.is_empty() {
            tokens.push(w.replace('\u{2019}', "'").to_lowercase());
        }
        word.clear();
    };
    for c in sentence.chars() {
        if c.is_alphanumeric() || is_apostrophe(c) {
            word.push(c);
        } else {
            push(&mut word);
        }
    }
    push(&mut word);
    tokens
}

/// Something that scores how English a caption looks, in [0, 1].
pub trait EnglishScorer {
    fn score(&self, caption: &CleanCaption) -> f64;
}

/// ASCII-alphabetic share blended with stopword density.
#[derive(Debug, Clone, Copy)]
pub struct StopwordScorer<'a> {
    pub stopwords: &'a Stopwords,
}

impl EnglishScorer for StopwordScorer<'_> {
    fn score(&self, caption: &CleanCaption) -> f64 {
        detect_english(caption, self.stopwords)
    }
}

/// `0.5 * ascii_alpha_fraction + 0.5 * min(1, 4 * stopword_fraction)`;
/// zero tokens scores 0.
pub fn detect_english(caption: &CleanCaption, stopwords: &Stopwords) -> f64 {
    score_tokens(caption.all_tokens(), stopwords)
}

fn score_tokens<'a>(tokens: impl Iterator<Item = &'a str>, stopwords: &Stopwords) -> f64 {
    let (mut n, mut ascii, mut stop) = (0usize, 0usize, 0usize);
    for t in tokens {
        n += 1;
        if t.chars().all(|c| c.is_ascii_alphabetic()) {
            ascii += 1;
        }
        if stopwords.contains(t) {
            stop += 1;
        }
    }
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    0.5 * (ascii as f64 / n) + 0.5 * (4.0 * stop as f64 / n).min(1.0)
}

pub fn passes_english_gate(caption: &CleanCaption, threshold: f64) -> bool {
    caption.english_score >= threshold
}

/// Clean a raw caption, scoring it against the bundled English stopwords.
pub fn clean_caption(raw: &str) -> CleanCaption {
    clean_caption_with(raw, Stopwords::english())
}

pub fn clean_caption_with(raw: &str, stopwords: &Stopwords) -> CleanCaption {
    let text = strip_noise(raw);
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    for s in split_sentences(&text) {
        let t = tokenize(&s);
        // punctuation-only fragments carry no supervision
        if t.is_empty() {
            continue;
        }
        sentences.push(s);
        tokens.push(t);
    }
    let mut caption = CleanCaption {
        sentences,
        tokens,
        english_score: 0.0,
    };
    caption.english_score = detect_english(&caption, stopwords);
    caption
}
