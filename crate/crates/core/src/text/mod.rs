//! Tokenization, stemming, stop-word removal, n-grams and candidate
//! vocabularies.

mod porter;

use std::borrow::Borrow;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vsm::TimeBinnedCorpus;

pub use porter::porter_stem;

/// Splits text into lowercase word tokens.
///
/// Every character that is neither alphanumeric nor an apostrophe separates
/// tokens. Apostrophes survive only inside a word (`don't`); leading and
/// trailing ones are trimmed. Typographic apostrophes are folded to `'`.
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    lowered
        .split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '\u{2019}'))
        .filter_map(|chunk| {
            let chunk = chunk.trim_matches(|c| c == '\'' || c == '\u{2019}');
            if chunk.is_empty() {
                None
            } else {
                Some(chunk.replace('\u{2019}', "'"))
            }
        })
        .collect()
}

/// A set of words to drop before stemming and n-gram formation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopList {
    words: HashSet<String>,
}

impl StopList {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        StopList {
            words: words
                .into_iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    /// Loads a one-word-per-line file. Blank lines are ignored.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read stoplist {}: {e}", path.display()))
        })?;
        Ok(Self::new(text.lines()))
    }

    /// A short list of very common English function words.
    pub fn english() -> Self {
        Self::new(ENGLISH_STOP_WORDS)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

const ENGLISH_STOP_WORDS: &[&str] = &[
    "a", "about", "after", "again", "all", "am", "an", "and", "any", "are", "as", "at", "be",
    "because", "been", "before", "being", "but", "by", "can", "could", "did", "do", "does",
    "doing", "for", "from", "had", "has", "have", "having", "he", "her", "here", "hers", "him",
    "his", "how", "i", "if", "in", "into", "is", "it", "its", "just", "me", "my", "no", "nor",
    "not", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "out", "over", "own",
    "same", "she", "should", "so", "some", "such", "than", "that", "the", "their", "them",
    "then", "there", "these", "they", "this", "those", "through", "to", "too", "under", "until",
    "up", "very", "was", "we", "were", "what", "when", "where", "which", "while", "who", "whom",
    "why", "will", "with", "would", "you", "your", "yours",
];

/// Order-preserving filter.
pub fn remove_stop_words(tokens: &[String], stoplist: &StopList) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| !stoplist.contains(t))
        .cloned()
        .collect()
}

/// Text-to-token processing: tokenize, drop stop words, optionally stem.
///
/// Stop words are removed before n-grams are formed, so a 2-gram never
/// straddles a removed word.
#[derive(Debug, Clone, Default)]
pub struct TextPipeline {
    pub stoplist: StopList,
    pub stem: bool,
}

impl TextPipeline {
    pub fn new(stoplist: StopList, stem: bool) -> Self {
        TextPipeline { stoplist, stem }
    }

    pub fn process(&self, text: &str) -> Vec<String> {
        tokenize(text)
            .into_iter()
            .filter(|t| !self.stoplist.contains(t))
            .map(|t| if self.stem { porter_stem(&t) } else { t })
            .collect()
    }
}

/// An ordered sequence of one or two tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NGram(Vec<String>);

impl NGram {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        match tokens.len() {
            1 | 2 => Ok(NGram(tokens)),
            n => Err(Error::UnsupportedArity(n)),
        }
    }

    pub fn unigram(token: impl Into<String>) -> Self {
        NGram(vec![token.into()])
    }

    pub fn bigram(first: impl Into<String>, second: impl Into<String>) -> Self {
        NGram(vec![first.into(), second.into()])
    }

    /// Parses a space- or `|`-separated entry.
    pub fn parse(s: &str) -> Result<Self> {
        let tokens: Vec<String> = s
            .split(|c: char| c == '|' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect();
        if tokens.is_empty() {
            return Err(Error::Input(format!("empty n-gram entry {s:?}")));
        }
        Self::new(tokens)
    }

    pub fn arity(&self) -> usize {
        self.0.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    /// Header form used in score-matrix CSVs: tokens joined by `|`.
    pub fn header(&self) -> String {
        self.0.join("|")
    }
}

impl Borrow<[String]> for NGram {
    fn borrow(&self) -> &[String] {
        &self.0
    }
}

impl fmt::Display for NGram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// All contiguous n-grams of `tokens`, in order.
pub fn extract_ngrams(tokens: &[String], n: usize) -> Result<Vec<NGram>> {
    if !(1..=2).contains(&n) {
        return Err(Error::UnsupportedArity(n));
    }
    Ok(tokens.windows(n).map(|w| NGram(w.to_vec())).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureClass {
    /// 1-grams.
    U,
    /// 2-grams.
    B,
    /// 1-grams followed by 2-grams.
    UB,
}

impl FeatureClass {
    pub fn for_arity(n: usize) -> Result<Self> {
        match n {
            1 => Ok(FeatureClass::U),
            2 => Ok(FeatureClass::B),
            n => Err(Error::UnsupportedArity(n)),
        }
    }
}

impl fmt::Display for FeatureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatureClass::U => "U",
            FeatureClass::B => "B",
            FeatureClass::UB => "UB",
        };
        f.write_str(s)
    }
}

/// An ordered, duplicate-free list of candidate n-grams.
#[derive(Debug, Clone)]
pub struct FeatureVocabulary {
    entries: Vec<NGram>,
    class: FeatureClass,
    stemmed: bool,
    index: HashMap<NGram, usize>,
}

impl PartialEq for FeatureVocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.class == other.class && self.stemmed == other.stemmed
    }
}

impl FeatureVocabulary {
    pub fn new(entries: Vec<NGram>, class: FeatureClass, stemmed: bool) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            let ok = match class {
                FeatureClass::U => e.arity() == 1,
                FeatureClass::B => e.arity() == 2,
                FeatureClass::UB => true,
            };
            if !ok {
                return Err(Error::Input(format!(
                    "entry {e:?} does not belong to feature class {class}"
                )));
            }
            if index.insert(e.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary entry {e}")));
            }
        }
        Ok(FeatureVocabulary {
            entries,
            class,
            stemmed,
            index,
        })
    }

    /// Builds a vocabulary from mixed-arity entries; the class is inferred.
    pub fn infer_class(entries: Vec<NGram>, stemmed: bool) -> Result<Self> {
        let has1 = entries.iter().any(|e| e.arity() == 1);
        let has2 = entries.iter().any(|e| e.arity() == 2);
        let class = match (has1, has2) {
            (_, false) => FeatureClass::U,
            (false, true) => FeatureClass::B,
            (true, true) => FeatureClass::UB,
        };
        Self::new(entries, class, stemmed)
    }

    pub fn empty(class: FeatureClass) -> Self {
        FeatureVocabulary {
            entries: Vec::new(),
            class,
            stemmed: true,
            index: HashMap::new(),
        }
    }

    pub fn entries(&self) -> &[NGram] {
        &self.entries
    }

    pub fn class(&self) -> FeatureClass {
        self.class
    }

    pub fn stemmed(&self) -> bool {
        self.stemmed
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, tokens: &[String]) -> Option<usize> {
        self.index.get(tokens).copied()
    }

    /// Arities present in the vocabulary, ascending.
    pub fn arities(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.entries.iter().map(NGram::arity).collect();
        set.into_iter().collect()
    }

    /// Feature identifiers (space-joined tokens).
    pub fn feature_ids(&self) -> Vec<String> {
        self.entries.iter().map(ToString::to_string).collect()
    }

    /// Column concatenation: entries of `self` followed by those of `other`.
    pub fn concat(&self, other: &FeatureVocabulary) -> Result<Self> {
        let mut entries = self.entries.clone();
        entries.extend(other.entries.iter().cloned());
        Self::new(entries, FeatureClass::UB, self.stemmed && other.stemmed)
    }

    /// Reads a one-entry-per-line file (2-gram tokens separated by a space).
    pub fn read(path: impl AsRef<Path>, stemmed: bool) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(NGram::parse)
            .collect::<Result<Vec<_>>>()?;
        Self::infer_class(entries, stemmed)
    }

    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }
}

/// Candidate n-grams from reference documents, kept only if their total raw
/// count over the corpus exceeds `min_count`. Entries are sorted
/// lexicographically by token sequence.
pub fn build_candidate_vocabulary(
    reference_docs: &[String],
    pipeline: &TextPipeline,
    corpus: &TimeBinnedCorpus,
    n: usize,
    min_count: usize,
) -> Result<FeatureVocabulary> {
    if reference_docs.is_empty() {
        return Err(Error::EmptyData("no reference documents".into()));
    }
    let class = FeatureClass::for_arity(n)?;
    let mut candidates: BTreeSet<NGram> = BTreeSet::new();
    for doc in reference_docs {
        candidates.extend(extract_ngrams(&pipeline.process(doc), n)?);
    }
    let counts = corpus_ngram_counts(corpus, n)?;
    let kept: Vec<NGram> = candidates
        .into_iter()
        .filter(|c| counts.get(c.tokens()).copied().unwrap_or(0) > min_count)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    FeatureVocabulary::new(kept, class, pipeline.stem)
}

/// Raw n-gram occurrence counts over every post of the corpus.
pub fn corpus_ngram_counts(corpus: &TimeBinnedCorpus, n: usize) -> Result<HashMap<Vec<String>, usize>> {
    if !(1..=2).contains(&n) {
        return Err(Error::UnsupportedArity(n));
    }
    let mut counts: HashMap<Vec<String>, usize> = HashMap::new();
    for post in corpus.posts() {
        for w in post.tokens.windows(n) {
            if let Some(c) = counts.get_mut(w) {
                *c += 1;
            } else {
                counts.insert(w.to_vec(), 1);
            }
        }
    }
    Ok(counts)
}
