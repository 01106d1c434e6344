//! Pyramidal histogram of characters (PHOC).
//!
//! A PHOC marks, for every pyramid level `L` and every region `r < L` of a
//! word's string, which alphabet symbols (and optionally which bigrams) fall
//! into that region. Character `k` of an `n`-character word occupies the
//! interval `[k/n, (k+1)/n]`; it belongs to region `[r/L, (r+1)/L]` when at
//! least half of its interval overlaps the region. Bigrams occupy the span of
//! both of their characters.
//!
//! Vector layout: unigram blocks ordered by (level, region, alphabet
//! position), followed by bigram blocks ordered by (level, region, bigram
//! position).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default unigram pyramid levels.
pub const DEFAULT_UNIGRAM_LEVELS: [usize; 4] = [2, 3, 4, 5];
/// Default bigram pyramid levels.
pub const DEFAULT_BIGRAM_LEVELS: [usize; 1] = [2];

#[derive(Debug, Error)]
pub enum PhocError {
    #[error("alphabet is empty")]
    EmptyAlphabet,
    #[error("duplicate alphabet symbol {0:?}")]
    DuplicateSymbol(char),
    #[error("alphabet entry {0:?} is not a single character")]
    NotASingleCharacter(String),
    #[error("unknown alphabet preset {0:?}")]
    UnknownPreset(String),
    #[error("bigram {0:?} must consist of exactly two characters")]
    MalformedBigram(String),
    #[error("bigram {0:?} uses a character outside the alphabet")]
    BigramOutsideAlphabet(String),
    #[error("duplicate bigram {0:?}")]
    DuplicateBigram(String),
    #[error("pyramid levels must be positive and strictly increasing, got {0:?}")]
    InvalidLevels(Vec<usize>),
    #[error("bigrams given without any bigram level")]
    MissingBigramLevels,
    #[error("position {position} out of range for length {length}")]
    PositionOutOfRange { position: usize, length: usize },
    #[error("cannot encode an empty transcription")]
    EmptyTranscription,
    #[error("character {0:?} is not in the alphabet")]
    UnknownCharacter(char),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Ordered set of single-character symbols.
#[derive(Clone, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
}

impl fmt::Debug for Alphabet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Alphabet")
            .field(&self.symbols.iter().collect::<String>())
            .finish()
    }
}

impl Alphabet {
    pub fn from_chars<I: IntoIterator<Item = char>>(chars: I) -> Result<Self, PhocError> {
        let symbols: Vec<char> = chars.into_iter().collect();
        if symbols.is_empty() {
            return Err(PhocError::EmptyAlphabet);
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, &c) in symbols.iter().enumerate() {
            if index.insert(c, i).is_some() {
                return Err(PhocError::DuplicateSymbol(c));
            }
        }
        Ok(Self { symbols, index })
    }

    /// Builds an alphabet from string entries, each of which must hold
    /// exactly one character.
    pub fn from_symbols<I, S>(entries: I) -> Result<Self, PhocError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut chars = Vec::new();
        for entry in entries {
            let entry = entry.as_ref();
            let mut it = entry.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => return Err(PhocError::NotASingleCharacter(entry.to_owned())),
            }
        }
        Self::from_chars(chars)
    }

    /// Lower-case Latin letters followed by the ten digits.
    pub fn latin36() -> Self {
        Self::from_chars(('a'..='z').chain('0'..='9')).expect("latin36 is well formed")
    }

    pub fn from_preset(name: &str) -> Result<Self, PhocError> {
        match name {
            "latin36" => Ok(Self::latin36()),
            other => Err(PhocError::UnknownPreset(other.to_owned())),
        }
    }

    /// Reads a UTF-8 file holding one symbol per line. Blank lines are skipped.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PhocError> {
        let text = read_text(path.as_ref())?;
        Self::from_symbols(non_empty_lines(&text))
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

    pub fn position(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }
}

/// Where an alphabet comes from: a named preset or an explicit symbol list.
#[derive(Debug, Clone)]
pub enum AlphabetSpec {
    Preset(String),
    Symbols(Vec<String>),
}

pub fn build_alphabet(spec: &AlphabetSpec) -> Result<Alphabet, PhocError> {
    match spec {
        AlphabetSpec::Preset(name) => Alphabet::from_preset(name),
        AlphabetSpec::Symbols(symbols) => Alphabet::from_symbols(symbols),
    }
}

/// Adjacent character pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bigram(pub char, pub char);

impl Bigram {
    pub fn parse(s: &str) -> Result<Self, PhocError> {
        let mut it = s.chars();
        match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => Ok(Bigram(a, b)),
            _ => Err(PhocError::MalformedBigram(s.to_owned())),
        }
    }
}

impl fmt::Display for Bigram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.0, self.1)
    }
}

/// Reads a UTF-8 file holding one bigram per line. Blank lines are skipped.
pub fn read_bigram_file(path: impl AsRef<Path>) -> Result<Vec<Bigram>, PhocError> {
    let text = read_text(path.as_ref())?;
    non_empty_lines(&text).map(Bigram::parse).collect()
}

/// Lower-cases `raw` and drops every character the alphabet does not hold.
pub fn normalize_transcription(raw: &str, alphabet: &Alphabet) -> String {
    raw.chars()
        .flat_map(char::to_lowercase)
        .filter(|c| alphabet.contains(*c))
        .collect()
}

/// The `k` most frequent adjacent pairs over all transcriptions, counted
/// with multiplicity. Ties go to the lexicographically smaller bigram.
pub fn select_bigrams<S: AsRef<str>>(
    transcriptions: &[S],
    k: usize,
    alphabet: &Alphabet,
) -> Vec<Bigram> {
    let mut counts: BTreeMap<Bigram, usize> = BTreeMap::new();
    for word in transcriptions {
        let chars: Vec<char> = word.as_ref().chars().collect();
        for pair in chars.windows(2) {
            if alphabet.contains(pair[0]) && alphabet.contains(pair[1]) {
                *counts.entry(Bigram(pair[0], pair[1])).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(Bigram, usize)> = counts.into_iter().collect();
    // BTreeMap order is lexicographic; a stable sort keeps it among equal counts.
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    ranked.into_iter().take(k).map(|(b, _)| b).collect()
}

/// Interval occupied by position `k` of an `n`-element sequence, in
/// relative coordinates.
pub fn occupancy(k: usize, n: usize) -> Result<(f64, f64), PhocError> {
    if n == 0 || k >= n {
        return Err(PhocError::PositionOutOfRange {
            position: k,
            length: n,
        });
    }
    Ok((k as f64 / n as f64, (k + 1) as f64 / n as f64))
}

/// Whether the span `[start/n, end/n]` lies at least half inside region
/// `[r/level, (r+1)/level]`. Evaluated in units of `1/(n·level)` so the
/// boundary cases are exact.
fn span_in_region(start: usize, end: usize, n: usize, r: usize, level: usize) -> bool {
    let lo = (start * level).max(r * n);
    let hi = (end * level).min((r + 1) * n);
    let overlap = hi.saturating_sub(lo);
    2 * overlap >= (end - start) * level
}

#[derive(Clone, PartialEq, Eq)]
pub struct PhocConfig {
    alphabet: Alphabet,
    unigram_levels: Vec<usize>,
    bigrams: Vec<Bigram>,
    bigram_levels: Vec<usize>,
    bigram_index: HashMap<Bigram, usize>,
}

impl fmt::Debug for PhocConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhocConfig")
            .field("alphabet", &self.alphabet)
            .field("unigram_levels", &self.unigram_levels)
            .field("bigrams", &self.bigrams.len())
            .field("bigram_levels", &self.bigram_levels)
            .finish()
    }
}

fn check_levels(levels: &[usize]) -> Result<(), PhocError> {
    let increasing = levels.windows(2).all(|w| w[0] < w[1]);
    if levels.contains(&0) || !increasing {
        return Err(PhocError::InvalidLevels(levels.to_vec()));
    }
    Ok(())
}

impl PhocConfig {
    pub fn new(
        alphabet: Alphabet,
        unigram_levels: Vec<usize>,
        bigrams: Vec<Bigram>,
        bigram_levels: Vec<usize>,
    ) -> Result<Self, PhocError> {
        check_levels(&unigram_levels)?;
        check_levels(&bigram_levels)?;
        if !bigrams.is_empty() && bigram_levels.is_empty() {
            return Err(PhocError::MissingBigramLevels);
        }
        let mut bigram_index = HashMap::with_capacity(bigrams.len());
        for (i, &b) in bigrams.iter().enumerate() {
            if !alphabet.contains(b.0) || !alphabet.contains(b.1) {
                return Err(PhocError::BigramOutsideAlphabet(b.to_string()));
            }
            if bigram_index.insert(b, i).is_some() {
                return Err(PhocError::DuplicateBigram(b.to_string()));
            }
        }
        Ok(Self {
            alphabet,
            unigram_levels,
            bigrams,
            bigram_levels,
            bigram_index,
        })
    }

    /// Unigram-only configuration at the given levels.
    pub fn unigrams(alphabet: Alphabet, levels: Vec<usize>) -> Result<Self, PhocError> {
        Self::new(alphabet, levels, Vec::new(), Vec::new())
    }

    /// Default levels: unigrams at {2,3,4,5} and, if any bigrams are given,
    /// bigrams at {2}.
    pub fn with_defaults(alphabet: Alphabet, bigrams: Vec<Bigram>) -> Result<Self, PhocError> {
        let bigram_levels = if bigrams.is_empty() {
            Vec::new()
        } else {
            DEFAULT_BIGRAM_LEVELS.to_vec()
        };
        Self::new(alphabet, DEFAULT_UNIGRAM_LEVELS.to_vec(), bigrams, bigram_levels)
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn unigram_levels(&self) -> &[usize] {
        &self.unigram_levels
    }

    pub fn bigrams(&self) -> &[Bigram] {
        &self.bigrams
    }

    pub fn bigram_levels(&self) -> &[usize] {
        &self.bigram_levels
    }

    pub fn dimension(&self) -> usize {
        self.alphabet.len() * self.unigram_levels.iter().sum::<usize>()
            + self.bigrams.len() * self.bigram_levels.iter().sum::<usize>()
    }

    /// Short hex digest identifying the label space.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"alphabet:");
        hasher.update(self.alphabet.symbols.iter().collect::<String>().as_bytes());
        hasher.update(format!("\nlevels:{:?}\n", self.unigram_levels).as_bytes());
        for b in &self.bigrams {
            hasher.update(b.to_string().as_bytes());
            hasher.update(b",");
        }
        hasher.update(format!("\nbigram_levels:{:?}", self.bigram_levels).as_bytes());
        let out = hasher.finalize();
        out[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Serialized form of a [`PhocConfig`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhocConfigRecord {
    pub alphabet: String,
    pub unigram_levels: Vec<usize>,
    pub bigrams: Vec<String>,
    pub bigram_levels: Vec<usize>,
}

impl From<&PhocConfig> for PhocConfigRecord {
    fn from(c: &PhocConfig) -> Self {
        Self {
            alphabet: c.alphabet.symbols.iter().collect(),
            unigram_levels: c.unigram_levels.clone(),
            bigrams: c.bigrams.iter().map(Bigram::to_string).collect(),
            bigram_levels: c.bigram_levels.clone(),
        }
    }
}

impl TryFrom<PhocConfigRecord> for PhocConfig {
    type Error = PhocError;

    fn try_from(r: PhocConfigRecord) -> Result<Self, PhocError> {
        let alphabet = Alphabet::from_chars(r.alphabet.chars())?;
        let bigrams = r
            .bigrams
            .iter()
            .map(|b| Bigram::parse(b))
            .collect::<Result<Vec<_>, _>>()?;
        PhocConfig::new(alphabet, r.unigram_levels, bigrams, r.bigram_levels)
    }
}

/// Binary attribute vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PhocVector(Vec<u8>);

impl PhocVector {
    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    pub fn to_floats<T: num_traits::Float>(&self) -> Vec<T> {
        self.0
            .iter()
            .map(|&b| if b == 1 { T::one() } else { T::zero() })
            .collect()
    }
}

/// Encodes a normalized, non-empty transcription.
pub fn encode_phoc(transcription: &str, config: &PhocConfig) -> Result<PhocVector, PhocError> {
    let positions: Vec<usize> = transcription
        .chars()
        .map(|c| config.alphabet.position(c).ok_or(PhocError::UnknownCharacter(c)))
        .collect::<Result<_, _>>()?;
    let n = positions.len();
    if n == 0 {
        return Err(PhocError::EmptyTranscription);
    }

    let mut bits = vec![0u8; config.dimension()];
    let alphabet_len = config.alphabet.len();
    let mut offset = 0;
    for &level in &config.unigram_levels {
        for r in 0..level {
            for (k, &p) in positions.iter().enumerate() {
                if span_in_region(k, k + 1, n, r, level) {
                    bits[offset + p] = 1;
                }
            }
            offset += alphabet_len;
        }
    }

    let bigram_len = config.bigrams.len();
    if bigram_len > 0 {
        let chars: Vec<char> = transcription.chars().collect();
        let present: Vec<(usize, usize)> = chars
            .windows(2)
            .enumerate()
            .filter_map(|(k, w)| config.bigram_index.get(&Bigram(w[0], w[1])).map(|&i| (k, i)))
            .collect();
        for &level in &config.bigram_levels {
            for r in 0..level {
                for &(k, i) in &present {
                    if span_in_region(k, k + 2, n, r, level) {
                        bits[offset + i] = 1;
                    }
                }
                offset += bigram_len;
            }
        }
    }
    debug_assert_eq!(offset, bits.len());
    Ok(PhocVector(bits))
}

pub fn phoc_dimension(config: &PhocConfig) -> usize {
    config.dimension()
}

fn read_text(path: &Path) -> Result<String, PhocError> {
    fs::read_to_string(path).map_err(|source| PhocError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn non_empty_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .filter(|l| !l.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn latin_levels(levels: &[usize]) -> PhocConfig {
        PhocConfig::unigrams(Alphabet::latin36(), levels.to_vec()).unwrap()
    }

    fn set_in_block(v: &PhocVector, config: &PhocConfig, block: usize) -> String {
        let a = config.alphabet();
        let start = block * a.len();
        a.symbols()
            .iter()
            .enumerate()
            .filter(|(i, _)| v.bits()[start + i] == 1)
            .map(|(_, c)| *c)
            .collect()
    }

    #[test]
    fn alphabet_presets_and_lists() {
        let latin = Alphabet::latin36();
        assert_eq!(latin.len(), 36);
        assert_eq!(latin.symbols()[0], 'a');
        assert_eq!(latin.symbols()[25], 'z');
        assert_eq!(latin.symbols()[26], '0');
        assert_eq!(latin.symbols()[35], '9');
        let fifty: Vec<String> = (0..50u32)
            .map(|i| char::from_u32(0x0621 + i).unwrap().to_string())
            .collect();
        assert_eq!(build_alphabet(&AlphabetSpec::Symbols(fifty)).unwrap().len(), 50);
        assert!(matches!(
            Alphabet::from_symbols(["a", "a"]),
            Err(PhocError::DuplicateSymbol('a'))
        ));
        assert!(matches!(
            Alphabet::from_symbols(Vec::<String>::new()),
            Err(PhocError::EmptyAlphabet)
        ));
        assert!(matches!(
            Alphabet::from_symbols(["ab"]),
            Err(PhocError::NotASingleCharacter(_))
        ));
        assert!(Alphabet::from_preset("latin99").is_err());
    }

    #[test]
    fn bigram_selection() {
        let a = Alphabet::latin36();
        assert_eq!(select_bigrams(&["aba", "ab"], 1, &a), vec![Bigram('a', 'b')]);
        assert!(select_bigrams(&["aba", "ab"], 0, &a).is_empty());
        assert_eq!(
            select_bigrams(&["ba", "ab"], 2, &a),
            vec![Bigram('a', 'b'), Bigram('b', 'a')]
        );
        assert_eq!(select_bigrams(&["abc"], 10, &a).len(), 2);
        assert!(select_bigrams::<&str>(&[], 5, &a).is_empty());
    }

    #[test]
    fn normalization() {
        let a = Alphabet::latin36();
        assert_eq!(normalize_transcription("Wash-ington", &a), "washington");
        assert_eq!(normalize_transcription("1776", &a), "1776");
        assert_eq!(normalize_transcription("!!", &a), "");
    }

    #[test]
    fn occupancy_intervals() {
        assert_eq!(occupancy(0, 2).unwrap(), (0.0, 0.5));
        let (lo, hi) = occupancy(2, 6).unwrap();
        assert!((lo - 1.0 / 3.0).abs() < 1e-15 && (hi - 0.5).abs() < 1e-15);
        assert!(occupancy(3, 3).is_err());
        assert!(occupancy(0, 0).is_err());
    }

    #[test]
    fn beyond_at_level_two() {
        let c = latin_levels(&[2]);
        let v = encode_phoc("beyond", &c).unwrap();
        assert_eq!(set_in_block(&v, &c, 0), "bey");
        assert_eq!(set_in_block(&v, &c, 1), "dno");
        assert_eq!(v.count_ones(), 6);
    }

    #[test]
    fn boundary_cases_count_as_inside() {
        let c = latin_levels(&[2]);
        let v = encode_phoc("a", &c).unwrap();
        assert_eq!(set_in_block(&v, &c, 0), "a");
        assert_eq!(set_in_block(&v, &c, 1), "a");

        let v = encode_phoc("out", &c).unwrap();
        assert_eq!(set_in_block(&v, &c, 0), "ou");
        assert_eq!(set_in_block(&v, &c, 1), "tu");
    }

    #[test]
    fn single_character_is_empty_at_level_three() {
        let c = latin_levels(&[3]);
        assert_eq!(encode_phoc("a", &c).unwrap().count_ones(), 0);
    }

    #[test]
    fn dimensions() {
        let a = Alphabet::latin36();
        let c = PhocConfig::with_defaults(a.clone(), vec![]).unwrap();
        assert_eq!(phoc_dimension(&c), 504);
        let words: Vec<String> = (0..36 * 36)
            .map(|i| format!("{}{}", a.symbols()[i / 36], a.symbols()[i % 36]))
            .collect();
        let bigrams = select_bigrams(&words, 50, &a);
        assert_eq!(bigrams.len(), 50);
        let c = PhocConfig::with_defaults(a, bigrams).unwrap();
        assert_eq!(phoc_dimension(&c), 604);
        assert_eq!(encode_phoc("washington", &c).unwrap().len(), 604);
    }

    #[test]
    fn bigram_blocks_use_two_character_span() {
        let a = Alphabet::latin36();
        let c = PhocConfig::new(a, vec![], vec![Bigram('a', 'b'), Bigram('c', 'd')], vec![2])
            .unwrap();
        // "abcd": ab spans [0, .5], cd spans [.5, 1].
        assert_eq!(encode_phoc("abcd", &c).unwrap().bits(), &[1, 0, 0, 1]);
        // "xaby": ab spans [.25, .75] and straddles the midpoint.
        assert_eq!(encode_phoc("xaby", &c).unwrap().bits(), &[1, 0, 1, 0]);
    }

    #[test]
    fn encode_errors() {
        let c = latin_levels(&[2]);
        assert!(matches!(encode_phoc("", &c), Err(PhocError::EmptyTranscription)));
        assert!(matches!(
            encode_phoc("A", &c),
            Err(PhocError::UnknownCharacter('A'))
        ));
    }

    #[test]
    fn config_validation() {
        let a = Alphabet::latin36();
        assert!(PhocConfig::unigrams(a.clone(), vec![3, 2]).is_err());
        assert!(PhocConfig::unigrams(a.clone(), vec![0, 2]).is_err());
        assert!(PhocConfig::new(a.clone(), vec![2], vec![Bigram('a', 'B')], vec![2]).is_err());
        assert!(PhocConfig::new(a.clone(), vec![2], vec![Bigram('a', 'b')], vec![]).is_err());
        let c = PhocConfig::with_defaults(a, vec![Bigram('t', 'h')]).unwrap();
        let back = PhocConfig::try_from(PhocConfigRecord::from(&c)).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
    }

    #[test]
    fn files() {
        let dir = tempfile::tempdir().unwrap();
        let alpha = dir.path().join("alphabet.txt");
        std::fs::write(&alpha, "x\ny\r\nz\n\n").unwrap();
        let a = Alphabet::from_file(&alpha).unwrap();
        assert_eq!(a.symbols(), &['x', 'y', 'z']);
        let big = dir.path().join("bigrams.txt");
        std::fs::write(&big, "xy\nzz\n").unwrap();
        assert_eq!(
            read_bigram_file(&big).unwrap(),
            vec![Bigram('x', 'y'), Bigram('z', 'z')]
        );
        assert!(matches!(
            Alphabet::from_file(dir.path().join("missing")),
            Err(PhocError::Io { .. })
        ));
    }
}
