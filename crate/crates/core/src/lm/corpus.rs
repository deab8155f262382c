use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};

/// How raw corpus bytes become characters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Encoding {
    /// UTF-8, invalid sequences replaced by U+FFFD.
    #[default]
    Utf8,
    /// Every byte is its own symbol (code points 0..=255).
    Bytes,
}

impl Encoding {
    pub fn tag(&self) -> &'static str {
        match self {
            Encoding::Utf8 => "utf8",
            Encoding::Bytes => "bytes",
        }
    }

    pub fn decode(&self, bytes: &[u8]) -> String {
        match self {
            Encoding::Utf8 => String::from_utf8_lossy(bytes).into_owned(),
            Encoding::Bytes => bytes.iter().map(|&b| b as char).collect(),
        }
    }
}

impl FromStr for Encoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "utf8" | "utf-8" => Ok(Encoding::Utf8),
            "bytes" | "latin1" => Ok(Encoding::Bytes),
            other => Err(contract!("unknown encoding {:?} (expected utf8 or bytes)", other)),
        }
    }
}

pub fn read_corpus(path: &Path, encoding: Encoding) -> std::io::Result<String> {
    Ok(encoding.decode(&fs::read(path)?))
}

const DETERMINERS: &[&str] = &["the", "a", "every", "some", "this", "that", "no", "one"];
const ADJECTIVES: &[&str] = &[
    "quick", "lazy", "small", "bright", "quiet", "old", "young", "heavy", "green", "curious",
    "silent", "clever", "broken", "golden", "wild", "gentle",
];
const NOUNS: &[&str] = &[
    "fox", "dog", "river", "market", "teacher", "engine", "garden", "window", "city", "letter",
    "farmer", "machine", "bird", "mountain", "student", "question", "house", "storm", "road",
    "child",
];
const VERBS: &[&str] = &[
    "sees", "follows", "builds", "finds", "carries", "watches", "remembers", "opens", "crosses",
    "answers", "paints", "moves", "feeds", "visits",
];
const ADVERBS: &[&str] = &["slowly", "again", "never", "often", "quietly", "today", "soon"];
const PREPOSITIONS: &[&str] = &["near", "under", "over", "behind", "beside", "across", "into"];

fn pick<'a, R: Rng>(rng: &mut R, words: &[&'a str]) -> &'a str {
    words.choose(rng).expect("non-empty word list")
}

fn noun_phrase<R: Rng>(rng: &mut R, out: &mut Vec<String>) {
    out.push(pick(rng, DETERMINERS).to_string());
    if rng.gen_bool(0.5) {
        out.push(pick(rng, ADJECTIVES).to_string());
    }
    out.push(pick(rng, NOUNS).to_string());
}

/// Deterministic English-like text of at least `min_bytes` bytes, generated
/// from a small phrase grammar. Used as a self-contained toy corpus.
pub fn synthetic_text(seed: u64, min_bytes: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::with_capacity(min_bytes + 256);
    let mut sentences_in_paragraph = 0;
    while text.len() < min_bytes {
        let mut words = Vec::with_capacity(16);
        noun_phrase(&mut rng, &mut words);
        if rng.gen_bool(0.25) {
            words.push(pick(&mut rng, ADVERBS).to_string());
        }
        words.push(pick(&mut rng, VERBS).to_string());
        noun_phrase(&mut rng, &mut words);
        if rng.gen_bool(0.4) {
            words.push(pick(&mut rng, PREPOSITIONS).to_string());
            noun_phrase(&mut rng, &mut words);
        }
        if rng.gen_bool(0.1) {
            let n: u32 = rng.gen_range(2..100);
            words.push(format!("{n} times"));
        }
        let mut sentence = words.join(" ");
        if rng.gen_bool(0.3) {
            sentence.push_str(", and ");
            let mut more = Vec::new();
            noun_phrase(&mut rng, &mut more);
            more.push(pick(&mut rng, VERBS).to_string());
            noun_phrase(&mut rng, &mut more);
            sentence.push_str(&more.join(" "));
        }
        let mut chars = sentence.chars();
        if let Some(first) = chars.next() {
            text.extend(first.to_uppercase());
            text.push_str(chars.as_str());
        }
        text.push(if rng.gen_bool(0.1) { '?' } else { '.' });
        sentences_in_paragraph += 1;
        if sentences_in_paragraph >= rng.gen_range(3..8) {
            text.push('\n');
            sentences_in_paragraph = 0;
        } else {
            text.push(' ');
        }
    }
    text
}
