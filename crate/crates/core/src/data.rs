//! Word image datasets: manifest ingestion, image codecs, folds and a
//! synthetic word renderer.
//!
//! Images are held ink-high: a white page is 0 and full ink is 1, so zero
//! padding and warp background both read as blank paper.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::augment::{sample_affine, warp_image, AugmentError};
use crate::nn::FeatureMap;
use crate::phoc::{normalize_transcription, Alphabet};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unsupported image format ({detail})")]
    UnsupportedFormat { path: String, detail: String },
    #[error("{path}: corrupt image header ({detail})")]
    CorruptHeader { path: String, detail: String },
    #[error("{path}: image has a zero dimension")]
    ZeroDimension { path: String },
    #[error("{path}:{line}: {detail}")]
    Manifest { path: String, line: usize, detail: String },
    #[error("unknown split {0:?}")]
    UnknownSplit(String),
    #[error("invalid fold request: {0}")]
    Folds(String),
    #[error("no glyph for {0:?}")]
    NoGlyph(char),
    #[error("invalid synthetic dataset request: {0}")]
    Synthetic(String),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

type Result<T> = std::result::Result<T, DataError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(DataError::UnknownSplit(other.to_owned())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordSample {
    pub id: String,
    pub image: FeatureMap<f32>,
    pub transcription: String,
    pub split: Split,
    pub fold: Option<u32>,
    /// Source file, when the sample came from disk.
    pub path: Option<PathBuf>,
}

impl WordSample {
    /// Checks the ingestion invariants: one channel, non-empty
    /// transcription, values in [0, 1].
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.transcription.is_empty() {
            return Err(format!("{}: empty transcription", self.id));
        }
        if self.image.channels() != 1 {
            return Err(format!("{}: expected one channel", self.id));
        }
        if !self.image.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(format!("{}: pixel values outside [0, 1]", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    samples: Vec<WordSample>,
    classes: BTreeMap<String, Vec<usize>>,
    pub provenance: String,
}

impl Dataset {
    /// Fails on duplicate ids.
    pub fn new(samples: Vec<WordSample>, provenance: impl Into<String>) -> std::result::Result<Self, String> {
        let mut seen = std::collections::HashSet::new();
        let mut classes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if !seen.insert(s.id.as_str()) {
                return Err(format!("duplicate sample id {:?}", s.id));
            }
            classes.entry(s.transcription.clone()).or_default().push(i);
        }
        Ok(Self {
            samples,
            classes,
            provenance: provenance.into(),
        })
    }

    pub fn samples(&self) -> &[WordSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<WordSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Transcription → indices of its samples.
    pub fn class_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.classes
    }

    pub fn split(&self, split: Split) -> Dataset {
        self.subset(|s| s.split == split)
    }

    fn subset(&self, keep: impl Fn(&WordSample) -> bool) -> Dataset {
        let samples = self.samples.iter().filter(|s| keep(s)).cloned().collect();
        Dataset::new(samples, self.provenance.clone()).expect("ids stay unique")
    }
}

/// One manifest row; the image is not read.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub line: usize,
    pub image_path: PathBuf,
    pub transcription: String,
    pub split: Split,
    pub fold: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Rows dropped because the transcription normalized to nothing.
    pub dropped: Vec<usize>,
}

pub const MANIFEST_HEADER: &str = "image_path\ttranscription\tsplit\tfold";

/// Parses a manifest. Relative image paths resolve against the manifest's
/// directory.
pub fn read_manifest(path: impl AsRef<Path>, alphabet: &Alphabet) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let err = |line: usize, detail: String| DataError::Manifest {
        path: path.display().to_string(),
        line,
        detail,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let header: Vec<&str> = match lines.next() {
        Some((_, h)) => h.split('\t').map(str::trim).collect(),
        None => return Err(err(1, "missing header row".into())),
    };
    let has_fold = match header.as_slice() {
        ["image_path", "transcription", "split"] => false,
        ["image_path", "transcription", "split", "fold"] => true,
        _ => return Err(err(1, format!("expected header {MANIFEST_HEADER:?}"))),
    };
    let mut entries = Vec::new();
    let mut dropped = Vec::new();
    for (n, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != header.len() && !(has_fold && cols.len() == 3) {
            return Err(err(n, format!("expected {} columns, found {}", header.len(), cols.len())));
        }
        let split = Split::parse(cols[2].trim()).map_err(|e| err(n, e.to_string()))?;
        let fold = match cols.get(3).map(|s| s.trim()) {
            Some(s) if !s.is_empty() => Some(s.parse().map_err(|_| err(n, format!("bad fold {s:?}")))?),
            _ => None,
        };
        let transcription = normalize_transcription(cols[1], alphabet);
        if transcription.is_empty() {
            log::warn!("{}:{n}: transcription {:?} is empty after normalization; row dropped", path.display(), cols[1]);
            dropped.push(n);
            continue;
        }
        let image = cols[0].trim();
        if image.is_empty() {
            return Err(err(n, "empty image path".into()));
        }
        entries.push(ManifestEntry {
            line: n,
            image_path: base.join(image),
            transcription,
            split,
            fold,
        });
    }
    Ok(Manifest { entries, dropped })
}

/// Result of [`load_manifest`].
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub dataset: Dataset,
    pub dropped: Vec<usize>,
}

/// Reads a manifest and every image it names.
pub fn load_manifest(path: impl AsRef<Path>, alphabet: &Alphabet) -> Result<LoadedManifest> {
    let path = path.as_ref();
    let manifest = read_manifest(path, alphabet)?;
    let mut samples = Vec::with_capacity(manifest.entries.len());
    for e in manifest.entries {
        let image = load_image(&e.image_path)?;
        samples.push(WordSample {
            id: format!("{}", e.line),
            image,
            transcription: e.transcription,
            split: e.split,
            fold: e.fold,
            path: Some(e.image_path),
        });
    }
    let dataset = Dataset::new(samples, path.display().to_string()).expect("line numbers are unique");
    Ok(LoadedManifest {
        dataset,
        dropped: manifest.dropped,
    })
}

/// Writes a manifest for `samples`, whose `path` must be set.
pub fn write_manifest(path: impl AsRef<Path>, samples: &[WordSample]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for s in samples {
        let img = s.path.as_ref().ok_or_else(|| DataError::Synthetic(format!("sample {} has no image path", s.id)))?;
        let rel = img.strip_prefix(base).unwrap_or(img);
        let fold = s.fold.map(|f| f.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{}\t{}\t{}\t{}", rel.display(), s.transcription, s.split.as_str(), fold);
    }
    fs::write(path, out).map_err(io_err(path))
}

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Loads a binary PGM or 8-bit grayscale PNG as an ink-high single-channel
/// map.
pub fn load_image(path: impl AsRef<Path>) -> Result<FeatureMap<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    let name = path.display().to_string();
    if bytes.starts_with(b"P5") {
        decode_pgm(&bytes, &name)
    } else if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(&bytes, &name)
    } else {
        Err(DataError::UnsupportedFormat {
            path: name,
            detail: "expected binary PGM (P5) or PNG".into(),
        })
    }
}

/// Decodes P5 data; maxval up to 65535 (two bytes per sample above 255).
pub fn decode_pgm(bytes: &[u8], name: &str) -> Result<FeatureMap<f32>> {
    let corrupt = |detail: &str| DataError::CorruptHeader {
        path: name.to_owned(),
        detail: detail.to_owned(),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(corrupt("header ends early")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let digits = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = digits.parse().map_err(|_| corrupt("expected a decimal number"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(corrupt("missing whitespace after maxval"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(DataError::ZeroDimension { path: name.to_owned() });
    }
    if maxval == 0 || maxval > 65535 {
        return Err(corrupt("maxval must be in 1..=65535"));
    }
    let depth = if maxval > 255 { 2 } else { 1 };
    let n = width.checked_mul(height).ok_or_else(|| corrupt("dimensions overflow"))?;
    let raster = bytes
        .get(pos..pos + n * depth)
        .ok_or_else(|| corrupt("raster shorter than width·height"))?;
    let max = maxval as f64;
    let data = (0..n)
        .map(|i| {
            let v = if depth == 2 {
                u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as f64
            } else {
                raster[i] as f64
            };
            (1.0 - (v / max).min(1.0)) as f32
        })
        .collect();
    Ok(FeatureMap::new(1, height, width, data).expect("length checked"))
}

fn decode_png(bytes: &[u8], name: &str) -> Result<FeatureMap<f32>> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| DataError::CorruptHeader {
        path: name.to_owned(),
        detail: e.to_string(),
    })?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(DataError::UnsupportedFormat {
                path: name.to_owned(),
                detail: format!("only 8-bit grayscale PNG is supported, found {:?}", other.color()),
            })
        }
    };
    let (w, h) = gray.dimensions();
    if w == 0 || h == 0 {
        return Err(DataError::ZeroDimension { path: name.to_owned() });
    }
    let data = gray.into_raw().into_iter().map(|v| 1.0 - v as f32 / 255.0).collect();
    Ok(FeatureMap::new(1, h as usize, w as usize, data).expect("length matches"))
}

/// Page-convention byte for an ink-high value.
fn to_byte(v: f32) -> u8 {
    ((1.0 - v.clamp(0.0, 1.0)) * 255.0).round() as u8
}

/// Result of one save/load cycle through 8 bits.
pub fn quantize(image: &FeatureMap<f32>) -> FeatureMap<f32> {
    let (c, h, w) = image.shape();
    let data = image.data().iter().map(|&v| (1.0 - to_byte(v) as f64 / 255.0) as f32).collect();
    FeatureMap::new(c, h, w, data).expect("shape preserved")
}

/// Encodes the first channel as P5 with maxval 255.
pub fn encode_pgm(image: &FeatureMap<f32>) -> Vec<u8> {
    let (_, h, w) = image.shape();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data()[..h * w].iter().map(|&v| to_byte(v)));
    out
}

pub fn save_pgm(path: impl AsRef<Path>, image: &FeatureMap<f32>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_pgm(image)).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Splits into (train, test) by fold. Manifest folds are used as given;
/// samples without one are assigned round-robin by position.
pub fn make_folds(dataset: &Dataset, n_folds: u32, test_fold: u32) -> Result<(Dataset, Dataset)> {
    if n_folds < 2 {
        return Err(DataError::Folds(format!("need at least 2 folds, got {n_folds}")));
    }
    if test_fold >= n_folds {
        return Err(DataError::Folds(format!("test fold {test_fold} out of range 0..{n_folds}")));
    }
    let fold_of = |i: usize, s: &WordSample| s.fold.unwrap_or((i as u64 % n_folds as u64) as u32);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, s) in dataset.samples().iter().enumerate() {
        if fold_of(i, s) == test_fold {
            test.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(DataError::Folds(format!(
            "fold {test_fold} leaves {} train and {} test samples",
            train.len(),
            test.len()
        )));
    }
    let prov = &dataset.provenance;
    Ok((
        Dataset::new(train, prov.clone()).expect("subset"),
        Dataset::new(test, prov.clone()).expect("subset"),
    ))
}

/// Common English words of three or more letters, used as default
/// synthetic vocabulary.
pub const VOCABULARY: &[&str] = &[
    "the", "and", "that", "for", "with", "his", "was", "not", "are", "but", "from", "have", "which", "they",
    "one", "you", "were", "her", "all", "she", "there", "would", "their", "him", "been", "has", "when",
    "who", "will", "more", "out", "said", "what", "its", "about", "into", "than", "them", "can", "only",
    "other", "new", "some", "could", "time", "these", "two", "may", "then", "first", "any", "now",
    "such", "like", "our", "over", "man", "even", "most", "made", "after", "also", "did", "many",
    "before", "must", "through", "back", "years", "where", "much", "your", "way", "well", "down",
    "should", "because", "each", "just", "those", "people", "how", "too", "little", "state", "good",
    "very", "make", "world", "still", "own", "see", "men", "work", "long", "get", "here", "between",
    "both", "life", "being", "under", "never", "day", "same", "another", "know", "while", "last",
    "might", "great", "old", "year", "off", "come", "since", "against", "came", "right", "used",
    "take", "three",
];

pub const GLYPH_WIDTH: usize = 5;
pub const GLYPH_HEIGHT: usize = 7;
pub const MARGIN: usize = 2;

/// Rows of each glyph, most significant of the low five bits leftmost.
const GLYPHS: [(char, [u8; 7]); 36] = [
    ('a', [0b00000, 0b00000, 0b01110, 0b00001, 0b01111, 0b10001, 0b01111]),
    ('b', [0b10000, 0b10000, 0b10110, 0b11001, 0b10001, 0b10001, 0b11110]),
    ('c', [0b00000, 0b00000, 0b01110, 0b10000, 0b10000, 0b10001, 0b01110]),
    ('d', [0b00001, 0b00001, 0b01101, 0b10011, 0b10001, 0b10001, 0b01111]),
    ('e', [0b00000, 0b00000, 0b01110, 0b10001, 0b11111, 0b10000, 0b01110]),
    ('f', [0b00110, 0b01001, 0b01000, 0b11100, 0b01000, 0b01000, 0b01000]),
    ('g', [0b00000, 0b01111, 0b10001, 0b10001, 0b01111, 0b00001, 0b01110]),
    ('h', [0b10000, 0b10000, 0b10110, 0b11001, 0b10001, 0b10001, 0b10001]),
    ('i', [0b00100, 0b00000, 0b01100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('j', [0b00010, 0b00000, 0b00110, 0b00010, 0b00010, 0b10010, 0b01100]),
    ('k', [0b10000, 0b10000, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010]),
    ('l', [0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('m', [0b00000, 0b00000, 0b11010, 0b10101, 0b10101, 0b10001, 0b10001]),
    ('n', [0b00000, 0b00000, 0b10110, 0b11001, 0b10001, 0b10001, 0b10001]),
    ('o', [0b00000, 0b00000, 0b01110, 0b10001, 0b10001, 0b10001, 0b01110]),
    ('p', [0b00000, 0b00000, 0b11110, 0b10001, 0b11110, 0b10000, 0b10000]),
    ('q', [0b00000, 0b00000, 0b01101, 0b10011, 0b01111, 0b00001, 0b00001]),
    ('r', [0b00000, 0b00000, 0b10110, 0b11001, 0b10000, 0b10000, 0b10000]),
    ('s', [0b00000, 0b00000, 0b01110, 0b10000, 0b01110, 0b00001, 0b11110]),
    ('t', [0b01000, 0b01000, 0b11100, 0b01000, 0b01000, 0b01001, 0b00110]),
    ('u', [0b00000, 0b00000, 0b10001, 0b10001, 0b10001, 0b10011, 0b01101]),
    ('v', [0b00000, 0b00000, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100]),
    ('w', [0b00000, 0b00000, 0b10001, 0b10001, 0b10101, 0b10101, 0b01010]),
    ('x', [0b00000, 0b00000, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001]),
    ('y', [0b00000, 0b00000, 0b10001, 0b10001, 0b01111, 0b00001, 0b01110]),
    ('z', [0b00000, 0b00000, 0b11111, 0b00010, 0b00100, 0b01000, 0b11111]),
    ('0', [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110]),
    ('1', [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('2', [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111]),
    ('3', [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110]),
    ('4', [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010]),
    ('5', [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110]),
    ('6', [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110]),
    ('7', [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000]),
    ('8', [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110]),
    ('9', [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100]),
];

fn glyph(c: char) -> Option<&'static [u8; 7]> {
    GLYPHS.iter().find(|(g, _)| *g == c).map(|(_, rows)| rows)
}

/// Renders `word` on an 11-pixel-high canvas of width `2 + 6·len`. With a
/// style generator the rendering is warped by a random affine transform.
pub fn render_synthetic(word: &str, style: Option<&mut ChaCha8Rng>) -> Result<FeatureMap<f32>> {
    if word.is_empty() {
        return Err(DataError::Synthetic("empty word".into()));
    }
    let chars: Vec<char> = word.chars().collect();
    let rows: Vec<&[u8; 7]> = chars
        .iter()
        .map(|&c| glyph(c).ok_or(DataError::NoGlyph(c)))
        .collect::<Result<_>>()?;
    let height = GLYPH_HEIGHT + 2 * MARGIN;
    let width = MARGIN + (GLYPH_WIDTH + 1) * chars.len();
    let mut img = FeatureMap::zeros(1, height, width);
    for (i, g) in rows.iter().enumerate() {
        let x0 = MARGIN + (GLYPH_WIDTH + 1) * i;
        for (r, bits) in g.iter().enumerate() {
            for col in 0..GLYPH_WIDTH {
                if bits >> (GLYPH_WIDTH - 1 - col) & 1 == 1 {
                    img.set(0, MARGIN + r, x0 + col, 1.0);
                }
            }
        }
    }
    match style {
        Some(rng) => Ok(warp_image(&img, &sample_affine(rng)?)?),
        None => Ok(img),
    }
}

/// Renders `samples_per_class` images of each word into `out_dir`, writes
/// `manifest.tsv` there and returns the dataset as it reads back from disk.
/// The first `round(ratio·samples_per_class)` samples of each word are
/// training samples.
pub fn build_synthetic_dataset(
    words: &[String],
    samples_per_class: usize,
    train_ratio: f64,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Dataset> {
    if words.is_empty() {
        return Err(DataError::Synthetic("empty word list".into()));
    }
    if samples_per_class < 2 {
        return Err(DataError::Synthetic("samples_per_class must be at least 2".into()));
    }
    if !(0.0..=1.0).contains(&train_ratio) {
        return Err(DataError::Synthetic(format!("train ratio {train_ratio} outside [0, 1]")));
    }
    let mut unique = std::collections::HashSet::new();
    if let Some(w) = words.iter().find(|w| !unique.insert(w.as_str())) {
        return Err(DataError::Synthetic(format!("duplicate word {w:?}")));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let n_train = (train_ratio * samples_per_class as f64).round() as usize;
    let mut samples = Vec::with_capacity(words.len() * samples_per_class);
    for (c, word) in words.iter().enumerate() {
        for k in 0..samples_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((c * samples_per_class + k) as u64);
            let image = quantize(&render_synthetic(word, Some(&mut rng))?);
            let name = format!("w{c:04}_{k:03}.pgm");
            let path = out_dir.join(&name);
            save_pgm(&path, &image)?;
            samples.push(WordSample {
                id: format!("w{c:04}_{k:03}"),
                image,
                transcription: word.clone(),
                split: if k < n_train { Split::Train } else { Split::Test },
                fold: None,
                path: Some(path),
            });
        }
    }
    write_manifest(out_dir.join("manifest.tsv"), &samples)?;
    Dataset::new(samples, format!("synthetic seed {seed}")).map_err(DataError::Synthetic)
}
