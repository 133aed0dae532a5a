//! Text feature extraction: word counts, TF-IDF and lexicon-based
//! discursive features.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The bundled open lexicon.
pub const STARTER_LEXICON: &str = include_str!("../data/starter.lex");

/// Lowercased whitespace tokens with punctuation stripped from both edges.
/// Tokens that are pure punctuation are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Sparse vector with sorted indices and no explicit zeros.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn new(dim: usize) -> Self {
        SparseVector {
            dim,
            entries: Vec::new(),
        }
    }

    /// Builds from unsorted `(index, value)` pairs; duplicate indices are summed.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, v) in pairs {
            assert!(i < dim, "index {i} out of range for dimension {dim}");
            *acc.entry(i).or_insert(0.0) += v;
        }
        SparseVector {
            dim,
            entries: acc.into_iter().filter(|&(_, v)| v != 0.0).collect(),
        }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        SparseVector {
            dim: values.len(),
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, *v))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.entries
            .binary_search_by_key(&i, |e| e.0)
            .map_or(0.0, |k| self.entries[k].1)
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn dot_dense(&self, w: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| w[i] * v).sum()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut a, mut b) = (self.entries.iter().peekable(), other.entries.iter().peekable());
        let mut s = 0.0;
        while let (Some(&&(i, x)), Some(&&(j, y))) = (a.peek(), b.peek()) {
            match i.cmp(&j) {
                std::cmp::Ordering::Less => {
                    a.next();
                }
                std::cmp::Ordering::Greater => {
                    b.next();
                }
                std::cmp::Ordering::Equal => {
                    s += x * y;
                    a.next();
                    b.next();
                }
            }
        }
        s
    }

    /// Appends `other` after this vector's dimensions.
    pub fn concat(&self, other: &SparseVector) -> SparseVector {
        let mut entries = self.entries.clone();
        entries.extend(other.entries.iter().map(|&(i, v)| (i + self.dim, v)));
        SparseVector {
            dim: self.dim + other.dim,
            entries,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }

    fn scale(&mut self, c: f64) {
        for e in &mut self.entries {
            e.1 *= c;
        }
    }
}

/// Unigram vocabulary with document frequencies.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    terms: Vec<String>,
    df: Vec<usize>,
    n_docs: usize,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    terms: Vec<String>,
    df: Vec<usize>,
    n_docs: usize,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        let index = r
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            terms: r.terms,
            df: r.df,
            n_docs: r.n_docs,
            index,
        }
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            terms: v.terms,
            df: v.df,
            n_docs: v.n_docs,
        }
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn document_frequency(&self, term: &str) -> Option<usize> {
        self.index.get(term).map(|&i| self.df[i])
    }

    /// Number of documents the vocabulary was built from.
    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn position(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }
}

/// Collects unigram terms appearing in at least `min_df` documents, sorted
/// lexicographically.
pub fn build_vocabulary<S: AsRef<str>>(docs: &[S], min_df: usize) -> Vocabulary {
    let min_df = min_df.max(1);
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in docs {
        let uniq: HashSet<String> = tokenize(doc.as_ref()).into_iter().collect();
        for t in uniq {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let (terms, df): (Vec<String>, Vec<usize>) = df.into_iter().filter(|&(_, c)| c >= min_df).unzip();
    VocabularyRepr {
        terms,
        df,
        n_docs: docs.len(),
    }
    .into()
}

/// Raw term counts over the vocabulary; unknown tokens are dropped.
pub fn count_vectorize(doc: &str, vocab: &Vocabulary) -> SparseVector {
    SparseVector::from_pairs(
        vocab.len(),
        tokenize(doc)
            .iter()
            .filter_map(|t| vocab.position(t))
            .map(|i| (i, 1.0)),
    )
}

/// Smoothed inverse document frequency `ln((1 + n) / (1 + df)) + 1`.
pub fn idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// `tf × idf`, L2-normalized.
pub fn tfidf_vectorize(doc: &str, vocab: &Vocabulary, n_docs: usize) -> SparseVector {
    let mut v = count_vectorize(doc, vocab);
    for e in &mut v.entries {
        e.1 *= idf(n_docs, vocab.df[e.0]);
    }
    let norm = v.norm();
    if norm > 0.0 {
        v.scale(1.0 / norm);
    }
    v
}

/// Structural (non-lexical) discursive features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructuralFeature {
    WordCount,
    SixLetterShare,
    QuestionMarks,
}

impl StructuralFeature {
    pub fn name(self) -> &'static str {
        match self {
            StructuralFeature::WordCount => "word_count",
            StructuralFeature::SixLetterShare => "six_letter_share",
            StructuralFeature::QuestionMarks => "question_marks",
        }
    }
}

impl FromStr for StructuralFeature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word_count" => Ok(StructuralFeature::WordCount),
            "six_letter_share" => Ok(StructuralFeature::SixLetterShare),
            "question_marks" => Ok(StructuralFeature::QuestionMarks),
            other => Err(Error::invalid(format!("unknown structural feature {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconCategory {
    pub name: String,
    /// `(word, prefix_match)`
    pub words: Vec<(String, bool)>,
}

impl LexiconCategory {
    fn matches(&self, token: &str) -> bool {
        self.words.iter().any(|(w, prefix)| {
            if *prefix {
                token.starts_with(w.as_str())
            } else {
                token == w
            }
        })
    }
}

/// Word-category lexicon plus the structural features to emit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconSpec {
    pub categories: Vec<LexiconCategory>,
    pub structural: Vec<StructuralFeature>,
}

impl LexiconSpec {
    pub fn starter() -> Self {
        Self::parse(STARTER_LEXICON).expect("bundled lexicon parses")
    }

    /// Parses the line format `name: word word stem*`, with `#` comments and
    /// an optional `@structural name name ...` directive.
    pub fn parse(src: &str) -> Result<Self> {
        let mut categories: Vec<LexiconCategory> = Vec::new();
        let mut structural = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, raw) in src.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("@structural") {
                for name in rest.split_whitespace() {
                    structural.push(name.parse()?);
                }
                continue;
            }
            let (name, words) = line.split_once(':').ok_or_else(|| Error::Record {
                line: lineno + 1,
                message: "expected `category: words...`".into(),
            })?;
            let name = name.trim().to_string();
            if name.is_empty() {
                return Err(Error::Record {
                    line: lineno + 1,
                    message: "empty category name".into(),
                });
            }
            if !seen.insert(name.clone()) {
                return Err(Error::Record {
                    line: lineno + 1,
                    message: format!("duplicate category {name:?}"),
                });
            }
            let words = words
                .split_whitespace()
                .map(|w| {
                    let w = w.to_lowercase();
                    match w.strip_suffix('*') {
                        Some(stem) => (stem.to_string(), true),
                        None => (w, false),
                    }
                })
                .collect();
            categories.push(LexiconCategory { name, words });
        }
        Ok(LexiconSpec {
            categories,
            structural,
        })
    }

    pub fn dimension(&self) -> usize {
        self.categories.len() + self.structural.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.categories
            .iter()
            .map(|c| format!("lex:{}", c.name))
            .chain(self.structural.iter().map(|s| format!("struct:{}", s.name())))
            .collect()
    }
}

/// Per-category token shares followed by the structural features.
pub fn lexicon_features(doc: &str, spec: &LexiconSpec) -> Vec<f64> {
    let tokens = tokenize(doc);
    let n = tokens.len();
    let mut out = Vec::with_capacity(spec.dimension());
    for cat in &spec.categories {
        if n == 0 {
            out.push(0.0);
        } else {
            let hits = tokens.iter().filter(|t| cat.matches(t)).count();
            out.push(hits as f64 / n as f64);
        }
    }
    for s in &spec.structural {
        out.push(match s {
            StructuralFeature::WordCount => n as f64,
            StructuralFeature::SixLetterShare if n == 0 => 0.0,
            StructuralFeature::SixLetterShare => {
                tokens.iter().filter(|t| t.chars().count() >= 6).count() as f64 / n as f64
            }
            StructuralFeature::QuestionMarks if n == 0 => 0.0,
            StructuralFeature::QuestionMarks => doc.matches('?').count() as f64,
        });
    }
    out
}

/// The four feature configurations used for the classical classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    Discursive,
    Word,
    Tfidf,
    TfidfDiscursive,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 4] = [
        FeatureSet::Discursive,
        FeatureSet::Word,
        FeatureSet::Tfidf,
        FeatureSet::TfidfDiscursive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Discursive => "discursive",
            FeatureSet::Word => "word",
            FeatureSet::Tfidf => "tfidf",
            FeatureSet::TfidfDiscursive => "tfidf_discursive",
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "discursive" => Ok(FeatureSet::Discursive),
            "word" => Ok(FeatureSet::Word),
            "tfidf" => Ok(FeatureSet::Tfidf),
            "tfidf_discursive" => Ok(FeatureSet::TfidfDiscursive),
            _ => Err(Error::config("feature_set", format!("unknown feature set {s:?}"))),
        }
    }
}

/// Fitted vocabulary and lexicon that map documents to feature vectors of a
/// fixed dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub vocab: Vocabulary,
    pub lexicon: LexiconSpec,
}

impl FeatureSpace {
    pub fn fit<S: AsRef<str>>(docs: &[S], min_df: usize, lexicon: LexiconSpec) -> Self {
        FeatureSpace {
            vocab: build_vocabulary(docs, min_df),
            lexicon,
        }
    }

    pub fn dimension(&self, set: FeatureSet) -> usize {
        match set {
            FeatureSet::Discursive => self.lexicon.dimension(),
            FeatureSet::Word | FeatureSet::Tfidf => self.vocab.len(),
            FeatureSet::TfidfDiscursive => self.vocab.len() + self.lexicon.dimension(),
        }
    }

    pub fn feature_names(&self, set: FeatureSet) -> Vec<String> {
        let words = || self.vocab.terms().iter().map(|t| format!("w:{t}"));
        match set {
            FeatureSet::Discursive => self.lexicon.feature_names(),
            FeatureSet::Word | FeatureSet::Tfidf => words().collect(),
            FeatureSet::TfidfDiscursive => words().chain(self.lexicon.feature_names()).collect(),
        }
    }

    pub fn vectorize(&self, set: FeatureSet, doc: &str) -> SparseVector {
        compose_features(set, doc, &self.vocab, &self.lexicon)
    }
}

pub fn compose_features(
    set: FeatureSet,
    doc: &str,
    vocab: &Vocabulary,
    lexicon: &LexiconSpec,
) -> SparseVector {
    let lex = || SparseVector::from_dense(&lexicon_features(doc, lexicon));
    match set {
        FeatureSet::Discursive => lex(),
        FeatureSet::Word => count_vectorize(doc, vocab),
        FeatureSet::Tfidf => tfidf_vectorize(doc, vocab, vocab.n_docs()),
        FeatureSet::TfidfDiscursive => tfidf_vectorize(doc, vocab, vocab.n_docs()).concat(&lex()),
    }
}

/// Writes a feature matrix as `row,col,value` triplets.
pub fn write_triplets<W: Write>(out: W, rows: &[SparseVector]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "col", "value"])?;
    for (r, v) in rows.iter().enumerate() {
        for &(c, x) in v.entries() {
            w.write_record([r.to_string(), c.to_string(), x.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the `col,name` manifest that accompanies a triplet matrix.
pub fn write_column_manifest<W: Write>(out: W, names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["col", "name"])?;
    for (i, n) in names.iter().enumerate() {
        w.write_record([i.to_string(), n.clone()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab_of(terms: &[&str]) -> Vocabulary {
        VocabularyRepr {
            terms: terms.iter().map(|s| s.to_string()).collect(),
            df: vec![1; terms.len()],
            n_docs: 1,
        }
        .into()
    }

    #[test]
    fn tokenizer_strips_edges() {
        assert_eq!(tokenize("Hello, WORLD! don't ..."), vec!["hello", "world", "don't"]);
    }

    #[test]
    fn vocabulary_min_df() {
        let docs = ["a b", "b c"];
        assert_eq!(build_vocabulary(&docs, 2).terms(), ["b"]);
        assert_eq!(build_vocabulary(&docs, 1).terms(), ["a", "b", "c"]);
        assert!(build_vocabulary::<&str>(&[], 1).is_empty());
    }

    #[test]
    fn counts() {
        let v = vocab_of(&["b", "c"]);
        let x = count_vectorize("b b c", &v);
        assert_eq!(x.entries(), &[(0, 2.0), (1, 1.0)]);
        assert_eq!(count_vectorize("z z", &vocab_of(&["b"])).nnz(), 0);
        assert_eq!(count_vectorize("", &v).nnz(), 0);
    }

    #[test]
    fn idf_of_ubiquitous_term_is_one() {
        assert_eq!(idf(7, 7), 1.0);
    }

    #[test]
    fn tfidf_single_term_unit_weight() {
        let v = vocab_of(&["b"]);
        assert_eq!(tfidf_vectorize("b b", &v, 1).entries(), &[(0, 1.0)]);
    }

    #[test]
    fn tfidf_hand_computed() {
        let v = build_vocabulary(&["b c", "c"], 1);
        assert_eq!(v.document_frequency("b"), Some(1));
        assert_eq!(v.document_frequency("c"), Some(2));
        let x = tfidf_vectorize("b c", &v, 2);
        // hand: wb = ln(3/2)+1 = 1.4054651081081644, wc = 1
        let wb = 1.405_465_108_108_164_4_f64;
        let n = (wb * wb + 1.0).sqrt();
        assert!((x.get(0) - wb / n).abs() < 1e-15);
        assert!((x.get(1) - 1.0 / n).abs() < 1e-15);
    }

    #[test]
    fn lexicon_shares() {
        let spec = LexiconSpec::parse(
            "first_person: i my me\ncause: because therefore\n@structural word_count question_marks",
        )
        .unwrap();
        let f = lexicon_features("I think I should", &spec);
        assert_eq!(f, vec![0.5, 0.0, 4.0, 0.0]);
        let f = lexicon_features("because therefore", &spec);
        assert_eq!(f[1], 1.0);
        assert_eq!(lexicon_features("", &spec), vec![0.0; 4]);
    }

    #[test]
    fn lexicon_prefix_match() {
        let spec = LexiconSpec::parse("anger: hate* mad").unwrap();
        assert_eq!(lexicon_features("hated madness", &spec), vec![0.5]);
    }

    #[test]
    fn duplicate_category_rejected() {
        assert!(LexiconSpec::parse("a: x\na: y").is_err());
    }

    #[test]
    fn starter_lexicon_loads() {
        let s = LexiconSpec::starter();
        assert!(s.categories.iter().any(|c| c.name == "first_person"));
        assert_eq!(s.structural.len(), 3);
    }

    #[test]
    fn composed_dimensions() {
        let space = FeatureSpace::fit(&["a b", "b c"], 1, LexiconSpec::starter());
        let lex_dim = space.lexicon.dimension();
        assert_eq!(space.dimension(FeatureSet::TfidfDiscursive), 3 + lex_dim);
        let d = space.vectorize(FeatureSet::Discursive, "");
        assert_eq!(d.dim(), lex_dim);
        assert_eq!(d.nnz(), 0);
        assert_eq!(
            space.vectorize(FeatureSet::Word, "b b a"),
            count_vectorize("b b a", &space.vocab)
        );
        assert!("bogus".parse::<FeatureSet>().is_err());
    }
}
