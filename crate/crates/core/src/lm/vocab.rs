use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{contract, Result};

/// Symbol used for characters that were not seen while building the vocab.
pub const UNKNOWN: char = '\u{FFFD}';

/// Character vocabulary ordered by code point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharVocab {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
    unknown: Option<usize>,
}

impl CharVocab {
    /// Distinct characters of `text`, sorted by code point.
    pub fn build(text: &str) -> Result<Self> {
        if text.is_empty() {
            return Err(contract!("cannot build a vocabulary from an empty corpus"));
        }
        let mut symbols: Vec<char> = text.chars().collect();
        symbols.sort_unstable();
        symbols.dedup();
        Self::from_symbols(symbols)
    }

    /// Like [`CharVocab::build`], plus a slot for unseen characters (the
    /// replacement character, which lossy decoding also produces).
    pub fn build_with_unknown(text: &str) -> Result<Self> {
        let mut vocab = Self::build(text)?;
        if !vocab.index.contains_key(&UNKNOWN) {
            let mut symbols = vocab.symbols;
            symbols.push(UNKNOWN);
            symbols.sort_unstable();
            vocab = Self::from_symbols(symbols)?;
        }
        vocab.unknown = vocab.index.get(&UNKNOWN).copied();
        Ok(vocab)
    }

    fn from_symbols(symbols: Vec<char>) -> Result<Self> {
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, &c) in symbols.iter().enumerate() {
            if index.insert(c, i).is_some() {
                return Err(contract!("duplicate symbol U+{:04X} in vocabulary", c as u32));
            }
        }
        if symbols.is_empty() {
            return Err(contract!("empty vocabulary"));
        }
        let unknown = index.get(&UNKNOWN).copied();
        Ok(Self {
            symbols,
            index,
            unknown,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn unknown_id(&self) -> Option<usize> {
        self.unknown
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<char> {
        self.symbols.get(id).copied()
    }

    /// Maps text to ids; unseen characters go to the unknown slot, or fail
    /// when there is none.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.id(c).or(self.unknown).ok_or_else(|| {
                    contract!("character U+{:04X} is not in the vocabulary", c as u32)
                })
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        ids.iter()
            .map(|&i| {
                self.symbol(i)
                    .ok_or_else(|| contract!("id {} out of range for vocabulary of {}", i, self.len()))
            })
            .collect()
    }

    /// One decimal code point per line, in id order.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.symbols.len() * 4);
        for &c in &self.symbols {
            writeln!(out, "{}", c as u32).expect("writing to a String");
        }
        out
    }

    pub fn from_code_points(code_points: &[u32]) -> Result<Self> {
        let symbols = code_points
            .iter()
            .map(|&cp| char::from_u32(cp).ok_or_else(|| contract!("{} is not a valid code point", cp)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_symbols(symbols)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let symbols = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, line)| {
                let cp: u32 = line
                    .trim()
                    .parse()
                    .map_err(|_| contract!("vocab line {}: {:?} is not a code point", n + 1, line))?;
                char::from_u32(cp)
                    .ok_or_else(|| contract!("vocab line {}: {} is not a valid code point", n + 1, cp))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_symbols(symbols)
    }
}
