//! Ranking by Bray-Curtis dissimilarity and mean average precision for
//! query-by-example and query-by-string word spotting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use rayon::prelude::*;
use thiserror::Error;

use crate::phoc::{encode_phoc, PhocConfig, PhocError};

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("negative or non-finite entry {value} at position {index}")]
    InvalidEntry { index: usize, value: f64 },
    #[error("query has no relevant items")]
    NoRelevant,
    #[error("relevance list holds {found} relevant items but {total} were declared")]
    RelevantCount { found: usize, total: usize },
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("need at least {0} samples")]
    TooFewSamples(usize),
    #[error("no valid queries")]
    NoValidQueries,
    #[error("PHOC encoding failed: {0}")]
    Phoc(String),
}

impl From<PhocError> for RetrievalError {
    fn from(e: PhocError) -> Self {
        RetrievalError::Phoc(e.to_string())
    }
}

type Result<T> = std::result::Result<T, RetrievalError>;

fn check_entries(v: &[f64]) -> Result<()> {
    match v.iter().position(|&x| !(x >= 0.0 && x.is_finite())) {
        Some(index) => Err(RetrievalError::InvalidEntry { index, value: v[index] }),
        None => Ok(()),
    }
}

fn bray_curtis_unchecked(u: &[f64], v: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (&a, &b) in u.iter().zip(v) {
        num += (a - b).abs();
        den += a + b;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// `Σ|uᵢ − vᵢ| / Σ(uᵢ + vᵢ)`, defined as 0 when both vectors are all zero.
pub fn bray_curtis(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(RetrievalError::LengthMismatch(u.len(), v.len()));
    }
    check_entries(u)?;
    check_entries(v)?;
    Ok(bray_curtis_unchecked(u, v))
}

/// Non-interpolated average precision of a ranked relevance sequence.
pub fn average_precision(relevance: &[bool], total_relevant: usize) -> Result<f64> {
    if total_relevant == 0 {
        return Err(RetrievalError::NoRelevant);
    }
    let found = relevance.iter().filter(|&&r| r).count();
    if found > total_relevant {
        return Err(RetrievalError::RelevantCount {
            found,
            total: total_relevant,
        });
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / total_relevant as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query: usize,
    /// (gallery id, distance), ascending by distance then id.
    pub entries: Vec<(usize, f64)>,
}

/// Ranks every gallery vector (id = position) by distance to `query`,
/// skipping `exclude`.
pub fn rank(query: &[f64], gallery: &[Vec<f64>], exclude: Option<usize>) -> Result<Vec<(usize, f64)>> {
    check_entries(query)?;
    let mut entries = Vec::with_capacity(gallery.len());
    for (id, g) in gallery.iter().enumerate() {
        if Some(id) == exclude {
            continue;
        }
        entries.push((id, bray_curtis(query, g)?));
    }
    if entries.is_empty() {
        return Err(RetrievalError::EmptyGallery);
    }
    sort_ranking(&mut entries);
    Ok(entries)
}

fn sort_ranking(entries: &mut [(usize, f64)]) {
    entries.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Qbe,
    Qbs,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Qbe => "QbE",
            Protocol::Qbs => "QbS",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    /// Sample index for QbE, query string for QbS.
    pub query: String,
    pub class: String,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub queries: Vec<QueryResult>,
    pub map: f64,
    /// Queries dropped because nothing else in the gallery is relevant.
    pub discarded: usize,
}

impl EvalReport {
    fn new(protocol: Protocol, queries: Vec<QueryResult>, discarded: usize) -> Result<Self> {
        if queries.is_empty() {
            return Err(RetrievalError::NoValidQueries);
        }
        let map = queries.iter().map(|q| q.ap).sum::<f64>() / queries.len() as f64;
        Ok(Self {
            protocol,
            queries,
            map,
            discarded,
        })
    }

    pub fn valid(&self) -> usize {
        self.queries.len()
    }

    pub fn summary(&self) -> String {
        format!(
            "protocol={}\tqueries={}\tdiscarded={}\tmAP={:.6}",
            self.protocol,
            self.valid(),
            self.discarded,
            self.map
        )
    }

    /// Per-query rows followed by a `#` summary line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("query\tclass\tap\n");
        for q in &self.queries {
            let _ = writeln!(out, "{}\t{}\t{:.6}", q.query, q.class, q.ap);
        }
        let _ = writeln!(out, "# {}", self.summary());
        out
    }
}

fn validate_vectors(vectors: &[Vec<f64>], labels: &[String]) -> Result<()> {
    if vectors.len() != labels.len() {
        return Err(RetrievalError::LengthMismatch(vectors.len(), labels.len()));
    }
    if let Some(first) = vectors.first() {
        for v in vectors {
            if v.len() != first.len() {
                return Err(RetrievalError::LengthMismatch(first.len(), v.len()));
            }
            check_entries(v)?;
        }
    }
    Ok(())
}

fn ap_for(query: &[f64], vectors: &[Vec<f64>], labels: &[String], class: &str, exclude: Option<usize>, total: usize) -> f64 {
    let mut entries: Vec<(usize, f64)> = vectors
        .iter()
        .enumerate()
        .filter(|&(id, _)| Some(id) != exclude)
        .map(|(id, g)| (id, bray_curtis_unchecked(query, g)))
        .collect();
    sort_ranking(&mut entries);
    let relevance: Vec<bool> = entries.iter().map(|&(id, _)| labels[id] == class).collect();
    average_precision(&relevance, total).expect("total counts the relevant items")
}

/// Query-by-example: every sample whose class occurs at least twice queries
/// all other samples. Singletons only act as distractors.
pub fn evaluate_qbe(vectors: &[Vec<f64>], labels: &[String]) -> Result<EvalReport> {
    validate_vectors(vectors, labels)?;
    if vectors.len() < 2 {
        return Err(RetrievalError::TooFewSamples(2));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let results: Vec<Option<QueryResult>> = (0..vectors.len())
        .into_par_iter()
        .map(|q| {
            let total = counts[labels[q].as_str()] - 1;
            (total > 0).then(|| QueryResult {
                query: q.to_string(),
                class: labels[q].clone(),
                ap: ap_for(&vectors[q], vectors, labels, &labels[q], Some(q), total),
            })
        })
        .collect();
    let discarded = results.iter().filter(|r| r.is_none()).count();
    if discarded > 0 {
        log::info!("QbE: {discarded} singleton queries kept only as distractors");
    }
    EvalReport::new(Protocol::Qbe, results.into_iter().flatten().collect(), discarded)
}

/// Query-by-string: the PHOC of each distinct label not in `exclude`
/// queries all samples. Queries without relevant samples are discarded.
pub fn evaluate_qbs(
    vectors: &[Vec<f64>],
    labels: &[String],
    config: &PhocConfig,
    exclude: &BTreeSet<String>,
) -> Result<EvalReport> {
    let strings: BTreeSet<String> = labels.iter().filter(|l| !exclude.contains(*l)).cloned().collect();
    evaluate_qbs_queries(vectors, labels, config, &strings)
}

/// Query-by-string with an explicit query set, which may include strings
/// absent from the gallery.
pub fn evaluate_qbs_queries(
    vectors: &[Vec<f64>],
    labels: &[String],
    config: &PhocConfig,
    queries: &BTreeSet<String>,
) -> Result<EvalReport> {
    validate_vectors(vectors, labels)?;
    if vectors.is_empty() {
        return Err(RetrievalError::TooFewSamples(1));
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != config.dimension()) {
        return Err(RetrievalError::LengthMismatch(v.len(), config.dimension()));
    }
    let encoded: Vec<(&String, Vec<f64>)> = queries
        .iter()
        .map(|q| Ok((q, encode_phoc(q, config)?.to_floats::<f64>())))
        .collect::<Result<_>>()?;
    let results: Vec<Option<QueryResult>> = encoded
        .par_iter()
        .map(|(q, phoc)| {
            let total = labels.iter().filter(|l| l == q).count();
            (total > 0).then(|| QueryResult {
                query: (*q).clone(),
                class: (*q).clone(),
                ap: ap_for(phoc, vectors, labels, q, None, total),
            })
        })
        .collect();
    let discarded = results.iter().filter(|r| r.is_none()).count();
    if discarded > 0 {
        log::warn!("QbS: {discarded} queries have no relevant items and were discarded");
    }
    EvalReport::new(Protocol::Qbs, results.into_iter().flatten().collect(), discarded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn bray_curtis_values() {
        assert_eq!(bray_curtis(&[1.0, 0.0, 1.0], &[0.0, 1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(bray_curtis(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(bray_curtis(&[0.3, 0.2], &[0.3, 0.2]).unwrap(), 0.0);
        assert_eq!(bray_curtis(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(bray_curtis(&[1.0], &[1.0, 2.0]), Err(RetrievalError::LengthMismatch(1, 2)));
        assert!(matches!(bray_curtis(&[1.0, -0.1], &[1.0, 2.0]), Err(RetrievalError::InvalidEntry { index: 1, .. })));
    }

    #[test]
    fn ap_values() {
        assert_eq!(average_precision(&[true, true, false], 2).unwrap(), 1.0);
        assert!((average_precision(&[true, false, true], 2).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision(&[false, true], 1).unwrap(), 0.5);
        assert_eq!(average_precision(&[false, false], 1).unwrap(), 0.0);
        assert_eq!(average_precision(&[true], 0), Err(RetrievalError::NoRelevant));
    }

    #[test]
    fn ranking() {
        let gallery = vec![vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0], vec![0.5, 0.5]];
        let r = rank(&[0.5, 0.5], &gallery, None).unwrap();
        assert_eq!(r[0], (1, 0.0));
        assert_eq!(r[1], (3, 0.0));
        let r = rank(&[0.5, 0.5], &gallery, Some(1)).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[0].0, 3);
        assert!(r.windows(2).all(|w| w[0].1 <= w[1].1));
        assert_eq!(rank(&[1.0], &[vec![1.0]], Some(0)), Err(RetrievalError::EmptyGallery));
    }

    #[test]
    fn qbe_protocol() {
        let r = evaluate_qbe(&[vec![1.0, 0.0], vec![0.9, 0.1]], &labels(&["a", "a"])).unwrap();
        assert_eq!((r.valid(), r.map), (2, 1.0));
        let v = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.1]];
        let r = evaluate_qbe(&v, &labels(&["a", "a", "b"])).unwrap();
        assert_eq!((r.valid(), r.discarded), (2, 1));
        assert_eq!(r.queries[0].query, "0");
        // Query 0 sees b (distance < a's) first: AP 0.5. Query 1 finds a second: AP 0.5.
        assert_eq!(r.queries[0].ap, 0.5);
        assert_eq!(r.queries[1].ap, 0.5);
        assert_eq!(evaluate_qbe(&v, &labels(&["a", "b", "c"])), Err(RetrievalError::NoValidQueries));
        assert_eq!(evaluate_qbe(&v[..1], &labels(&["a"])), Err(RetrievalError::TooFewSamples(2)));
    }

    fn small_config() -> PhocConfig {
        PhocConfig::unigrams(crate::phoc::Alphabet::from_chars("abc".chars()).unwrap(), vec![1, 2]).unwrap()
    }

    #[test]
    fn qbs_protocol() {
        let cfg = small_config();
        let words = labels(&["ab", "ab", "ca", "b"]);
        let vectors: Vec<Vec<f64>> = words.iter().map(|w| encode_phoc(w, &cfg).unwrap().to_floats()).collect();
        let r = evaluate_qbs(&vectors, &words, &cfg, &BTreeSet::new()).unwrap();
        assert_eq!((r.valid(), r.discarded, r.map), (3, 0, 1.0));
        let exclude: BTreeSet<String> = ["b".to_string()].into();
        let r = evaluate_qbs(&vectors, &words, &cfg, &exclude).unwrap();
        assert_eq!(r.valid(), 2);
        let queries: BTreeSet<String> = ["ab".to_string(), "cc".to_string()].into();
        let r = evaluate_qbs_queries(&vectors, &words, &cfg, &queries).unwrap();
        assert_eq!((r.valid(), r.discarded), (1, 1));
        let all: BTreeSet<String> = words.iter().cloned().collect();
        assert_eq!(evaluate_qbs(&vectors, &words, &cfg, &all), Err(RetrievalError::NoValidQueries));
        assert!(r.to_tsv().ends_with("mAP=1.000000\n"));
    }

    /// Reference AP: precision at each relevant position, written without
    /// shared helpers.
    fn oracle_map(scores: &[Vec<f64>], labels: &[usize]) -> Option<f64> {
        let n = labels.len();
        let mut aps = Vec::new();
        for q in 0..n {
            let rel_total = (0..n).filter(|&j| j != q && labels[j] == labels[q]).count();
            if rel_total == 0 {
                continue;
            }
            let mut order: Vec<usize> = (0..n).filter(|&j| j != q).collect();
            order.sort_by(|&a, &b| scores[q][a].partial_cmp(&scores[q][b]).unwrap().then(a.cmp(&b)));
            let mut ap = 0.0;
            for (pos, &j) in order.iter().enumerate() {
                if labels[j] == labels[q] {
                    let above = order[..=pos].iter().filter(|&&k| labels[k] == labels[q]).count();
                    ap += above as f64 / (pos + 1) as f64;
                }
            }
            aps.push(ap / rel_total as f64);
        }
        (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
    }

    #[test]
    fn qbe_matches_bruteforce_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut checked = 0;
        while checked < 100 {
            let n = rng.gen_range(2..=6);
            let dim = rng.gen_range(1..5);
            let vectors: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
            let classes: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let scores: Vec<Vec<f64>> = vectors
                .iter()
                .map(|a| vectors.iter().map(|b| bray_curtis(a, b).unwrap()).collect())
                .collect();
            let names: Vec<String> = classes.iter().map(|c| c.to_string()).collect();
            match oracle_map(&scores, &classes) {
                Some(expected) => {
                    let got = evaluate_qbe(&vectors, &names).unwrap().map;
                    assert!((got - expected).abs() <= 1e-9, "{got} vs {expected}");
                    checked += 1;
                }
                None => assert!(evaluate_qbe(&vectors, &names).is_err()),
            }
        }
    }

    proptest! {
        #[test]
        fn bray_curtis_properties(
            pair in (1usize..12).prop_flat_map(|n| (
                proptest::collection::vec(0.0f64..10.0, n),
                proptest::collection::vec(0.0f64..10.0, n),
            ))
        ) {
            let (u, v) = pair;
            let d = bray_curtis(&u, &v).unwrap();
            prop_assert_eq!(d, bray_curtis(&v, &u).unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(bray_curtis(&u, &u).unwrap(), 0.0);
            if u != v {
                prop_assert!(d > 0.0);
            }
        }

        #[test]
        fn ap_is_scale_invariant(
            vecs in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 4), 3..8),
            classes in proptest::collection::vec(0usize..2, 8),
            scale in 0.1f64..10.0,
        ) {
            let names: Vec<String> = classes[..vecs.len()].iter().map(|c| c.to_string()).collect();
            let scaled: Vec<Vec<f64>> = vecs.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
            let a = evaluate_qbe(&vecs, &names);
            let b = evaluate_qbe(&scaled, &names);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    for (x, y) in a.queries.iter().zip(&b.queries) {
                        prop_assert!((x.ap - y.ap).abs() < 1e-12);
                    }
                }
                (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
            }
        }
    }
}
