//! Output unit inventory. Id 0 is always the blank.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const BLANK: usize = 0;
pub const BLANK_TOKEN: &str = "<blank>";
/// Word-start marker; doubles as the space symbol of the character inventory.
pub const WORD_START: &str = "▁";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
    longest: usize,
}

impl Vocabulary {
    fn from_symbols(symbols: Vec<String>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, s) in symbols.iter().enumerate().skip(1) {
            if s.is_empty() {
                return Err(Error::Vocabulary(format!("empty token at id {}", i)));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token {:?}", s)));
            }
        }
        if symbols.len() < 2 {
            return Err(Error::Vocabulary(
                "vocabulary has no non-blank units".into(),
            ));
        }
        let longest = symbols
            .iter()
            .skip(1)
            .map(|s| s.chars().count())
            .max()
            .unwrap_or(1);
        Ok(Vocabulary {
            symbols,
            index,
            longest,
        })
    }

    /// Blank, word separator, a–z and apostrophe.
    pub fn characters() -> Self {
        let mut symbols = vec![BLANK_TOKEN.to_string(), WORD_START.to_string()];
        symbols.extend(('a'..='z').map(|c| c.to_string()));
        symbols.push("'".to_string());
        Self::from_symbols(symbols).expect("built-in inventory is valid")
    }

    /// One unit per distinct word (each prefixed with the word-start marker).
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut seen: Vec<String> = words
            .into_iter()
            .map(|w| format!("{}{}", WORD_START, w.to_lowercase()))
            .collect();
        seen.sort();
        seen.dedup();
        let mut symbols = vec![BLANK_TOKEN.to_string()];
        symbols.extend(seen);
        Self::from_symbols(symbols)
    }

    /// Parses `token<TAB>id` lines. Ids must be dense; id 0 is the blank and
    /// may be omitted.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (tok, id) = line.rsplit_once('\t').ok_or_else(|| {
                Error::Vocabulary(format!("line {}: expected token<TAB>id", n + 1))
            })?;
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| Error::Vocabulary(format!("line {}: bad id {:?}", n + 1, id)))?;
            entries.push((id, tok.to_string()));
        }
        if !entries.iter().any(|(id, _)| *id == BLANK) {
            entries.push((BLANK, BLANK_TOKEN.to_string()));
        }
        entries.sort_by_key(|(id, _)| *id);
        for (expect, (id, _)) in entries.iter().enumerate() {
            if *id != expect {
                return Err(Error::Vocabulary(format!(
                    "ids are not dense: missing or repeated id {}",
                    expect
                )));
            }
        }
        Self::from_symbols(entries.into_iter().map(|(_, t)| t).collect())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }

    pub fn to_tsv(&self) -> String {
        self.symbols
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}\t{}\n", s, i))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(|s| s.as_str())
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Stable 64-bit digest of the inventory.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_tsv().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    /// Lower-cases, splits on whitespace, and segments `▁word▁word…` by
    /// greedy longest match.
    pub fn encode(&self, transcript: &str) -> Result<Vec<usize>> {
        let text: String = transcript
            .split_whitespace()
            .map(|w| format!("{}{}", WORD_START, w.to_lowercase()))
            .collect();
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < chars.len() {
            let max = self.longest.min(chars.len() - pos);
            let found = (1..=max).rev().find_map(|len| {
                let piece: String = chars[pos..pos + len].iter().collect();
                self.index.get(&piece).map(|&id| (id, len))
            });
            match found {
                Some((id, len)) => {
                    out.push(id);
                    pos += len;
                }
                None if chars[pos].to_string() == WORD_START => {
                    // Inventories without a separator unit mark word starts implicitly.
                    pos += 1;
                }
                None => {
                    return Err(Error::Vocabulary(format!(
                        "cannot segment {:?}: no unit covers {:?}",
                        transcript, chars[pos]
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Concatenates units and turns word-start markers into spaces.
    pub fn decode(&self, ids: &[usize]) -> String {
        let joined: String = ids
            .iter()
            .filter(|&&id| id != BLANK)
            .filter_map(|&id| self.symbol(id))
            .collect();
        joined
            .replace(WORD_START, " ")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn character_round_trip() {
        let v = Vocabulary::characters();
        assert_eq!(v.len(), 29);
        let ids = v.encode("Don't  stop").unwrap();
        assert_eq!(v.decode(&ids), "don't stop");
        assert!(!ids.contains(&BLANK));
    }

    #[test]
    fn subword_longest_match() {
        let v = Vocabulary::from_tsv("▁the\t1\n▁\t2\nt\t3\nh\t4\ne\t5\nre\t6\nr\t7\n").unwrap();
        let ids = v.encode("there").unwrap();
        assert_eq!(ids, vec![1, 6]);
        assert_eq!(v.decode(&ids), "there");
    }

    #[test]
    fn tsv_round_trip_and_hash() {
        let v = Vocabulary::characters();
        let w = Vocabulary::from_tsv(&v.to_tsv()).unwrap();
        assert_eq!(v, w);
        assert_eq!(v.hash(), w.hash());
    }

    #[test]
    fn rejects_sparse_ids_and_unknown_symbols() {
        assert!(Vocabulary::from_tsv("a\t1\nb\t3\n").is_err());
        assert!(Vocabulary::characters().encode("naïve").is_err());
    }

    #[test]
    fn word_units() {
        let v = Vocabulary::from_words(["ba", "ko", "ba"]).unwrap();
        assert_eq!(v.len(), 3);
        let ids = v.encode("ko ba ko").unwrap();
        assert_eq!(ids.len(), 3);
        assert_eq!(v.decode(&ids), "ko ba ko");
    }
}
