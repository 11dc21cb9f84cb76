//! Token inventories and their split into source-only, common and
//! target-only categories.
//!
//! A joint vocabulary built for a language pair contains tokens that can
//! only ever appear on the source side. [`partition`] labels every joint
//! token by checking membership in the two monolingual vocabularies:
//!
//! * in both → [`Category::Common`]
//! * source only → [`Category::SourceOnly`]
//! * otherwise → [`Category::TargetOnly`]
//!
//! Declared special tokens are always `Common`, and the padding token is
//! additionally marked as excluded so it never receives smoothing mass.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VocabError {
    #[error("duplicate token on line {0}")]
    DuplicateToken(usize),
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("token {0:?} is in neither the source nor the target vocabulary and is not special")]
    OrphanToken(String),
    #[error("partition has no common or target-only token")]
    NoTargetSideTokens,
    #[error("malformed partition row on line {0}")]
    MalformedRow(usize),
    #[error("unknown category on line {0}")]
    UnknownCategory(usize),
}

/// Ordered set of unique tokens; a token's id is its position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<I, T>(tokens: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for (i, tok) in tokens.into_iter().enumerate() {
            if !vocab.push(tok.into()) {
                return Err(VocabError::DuplicateToken(i + 1));
            }
        }
        if vocab.tokens.is_empty() {
            return Err(VocabError::EmptyVocabulary);
        }
        Ok(vocab)
    }

    /// Parses a one-token-per-line document. Blank lines are skipped; the
    /// line number in [`VocabError::DuplicateToken`] is the 1-based line of
    /// the second occurrence in the original text.
    pub fn parse(text: &str) -> Result<Self, VocabError> {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for (lineno, line) in text.split('\n').enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if !vocab.push(line.to_owned()) {
                return Err(VocabError::DuplicateToken(lineno + 1));
            }
        }
        if vocab.tokens.is_empty() {
            return Err(VocabError::EmptyVocabulary);
        }
        Ok(vocab)
    }

    /// One token per line, LF terminated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        out
    }

    fn push(&mut self, token: String) -> bool {
        if self.index.contains_key(&token) {
            return false;
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        true
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }
}

/// Union of two vocabularies: all source tokens in order, then the target
/// tokens that were not already present.
pub fn build_joint(src: &Vocabulary, tgt: &Vocabulary) -> Vocabulary {
    let mut joint = src.clone();
    for tok in tgt.iter() {
        joint.push(tok.to_owned());
    }
    joint
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    #[serde(rename = "source")]
    SourceOnly,
    Common,
    #[serde(rename = "target")]
    TargetOnly,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::SourceOnly, Category::Common, Category::TargetOnly];

    pub fn label(self) -> &'static str {
        match self {
            Category::SourceOnly => "source",
            Category::Common => "common",
            Category::TargetOnly => "target",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "source" => Some(Category::SourceOnly),
            "common" => Some(Category::Common),
            "target" => Some(Category::TargetOnly),
            _ => None,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Control tokens. They are classified as common; `pad` is also excluded
/// from smoothing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecialTokens {
    pub tokens: Vec<String>,
    pub pad: Option<String>,
}

impl SpecialTokens {
    pub const PAD: &'static str = "<pad>";
    pub const BOS: &'static str = "<bos>";
    pub const EOS: &'static str = "<eos>";
    pub const UNK: &'static str = "<unk>";

    pub fn none() -> Self {
        SpecialTokens {
            tokens: Vec::new(),
            pad: None,
        }
    }

    /// `<pad>`, `<bos>`, `<eos>`, `<unk>` with `<pad>` excluded.
    pub fn standard() -> Self {
        SpecialTokens {
            tokens: [Self::PAD, Self::BOS, Self::EOS, Self::UNK]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            pad: Some(Self::PAD.to_owned()),
        }
    }

    /// Arbitrary special tokens; `<pad>` is excluded if it is among them.
    pub fn from_list<I, T>(tokens: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let pad = tokens
            .iter()
            .any(|t| t == Self::PAD)
            .then(|| Self::PAD.to_owned());
        SpecialTokens { tokens, pad }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.tokens.iter().any(|t| t == token) || self.pad.as_deref() == Some(token)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub source: usize,
    pub common: usize,
    pub target: usize,
}

impl CategoryCounts {
    pub fn get(&self, cat: Category) -> usize {
        match cat {
            Category::SourceOnly => self.source,
            Category::Common => self.common,
            Category::TargetOnly => self.target,
        }
    }

    fn bump(&mut self, cat: Category) {
        match cat {
            Category::SourceOnly => self.source += 1,
            Category::Common => self.common += 1,
            Category::TargetOnly => self.target += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.source + self.common + self.target
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryPartition {
    joint: Vocabulary,
    categories: Vec<Category>,
    counts: CategoryCounts,
    excluded: BTreeSet<usize>,
}

/// Labels every joint token as source-only, common or target-only.
pub fn partition(
    joint: &Vocabulary,
    src: &Vocabulary,
    tgt: &Vocabulary,
    special: &SpecialTokens,
) -> Result<CategoryPartition, VocabError> {
    let mut categories = Vec::with_capacity(joint.len());
    let mut excluded = BTreeSet::new();
    for (id, tok) in joint.iter().enumerate() {
        let cat = if special.contains(tok) {
            if special.pad.as_deref() == Some(tok) {
                excluded.insert(id);
            }
            Category::Common
        } else {
            match (src.contains(tok), tgt.contains(tok)) {
                (true, true) => Category::Common,
                (true, false) => Category::SourceOnly,
                (false, true) => Category::TargetOnly,
                (false, false) => return Err(VocabError::OrphanToken(tok.to_owned())),
            }
        };
        categories.push(cat);
    }
    CategoryPartition::from_parts(joint.clone(), categories, excluded)
}

impl CategoryPartition {
    /// Assembles a partition from explicit labels. `categories[i]` labels
    /// token id `i`.
    pub fn from_parts(
        joint: Vocabulary,
        categories: Vec<Category>,
        excluded: BTreeSet<usize>,
    ) -> Result<Self, VocabError> {
        assert_eq!(joint.len(), categories.len(), "one category per token");
        assert!(
            excluded.iter().all(|&id| id < joint.len()),
            "excluded id out of range"
        );
        let mut counts = CategoryCounts::default();
        for &c in &categories {
            counts.bump(c);
        }
        if counts.common + counts.target == 0 {
            return Err(VocabError::NoTargetSideTokens);
        }
        Ok(CategoryPartition {
            joint,
            categories,
            counts,
            excluded,
        })
    }

    pub fn joint(&self) -> &Vocabulary {
        &self.joint
    }

    pub fn len(&self) -> usize {
        self.joint.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint.is_empty()
    }

    pub fn category(&self, id: usize) -> Category {
        self.categories[id]
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn counts(&self) -> CategoryCounts {
        self.counts
    }

    pub fn excluded(&self) -> &BTreeSet<usize> {
        &self.excluded
    }

    pub fn is_excluded(&self, id: usize) -> bool {
        self.excluded.contains(&id)
    }

    /// Per-category counts of tokens that can receive smoothing mass.
    pub fn active_counts(&self) -> CategoryCounts {
        let mut counts = CategoryCounts::default();
        for (id, &c) in self.categories.iter().enumerate() {
            if !self.excluded.contains(&id) {
                counts.bump(c);
            }
        }
        counts
    }

    pub fn ids_in(&self, cat: Category) -> impl Iterator<Item = usize> + '_ {
        self.categories
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == cat)
            .map(|(id, _)| id)
    }

    pub fn stats(&self) -> CategoryStats {
        let n = self.joint.len() as f64;
        let c = self.counts;
        CategoryStats {
            counts: c,
            p_source: c.source as f64 / n,
            p_common: c.common as f64 / n,
            p_target: c.target as f64 / n,
        }
    }

    /// TSV rows `token<TAB>category<TAB>excluded` in id order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, tok) in self.joint.iter().enumerate() {
            out.push_str(tok);
            out.push('\t');
            out.push_str(self.categories[id].label());
            out.push('\t');
            out.push(if self.excluded.contains(&id) { '1' } else { '0' });
            out.push('\n');
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self, VocabError> {
        let mut tokens = Vec::new();
        let mut categories = Vec::new();
        let mut excluded = BTreeSet::new();
        let mut seen = HashSet::new();
        let body = text.strip_suffix('\n').unwrap_or(text);
        if body.is_empty() {
            return Err(VocabError::EmptyVocabulary);
        }
        for (i, line) in body.split('\n').enumerate() {
            let lineno = i + 1;
            // Tokens may themselves contain tabs, so split from the right.
            let mut fields = line.rsplitn(3, '\t');
            let (flag, label, token) = match (fields.next(), fields.next(), fields.next()) {
                (Some(f), Some(l), Some(t)) if !t.is_empty() => (f, l, t),
                _ => return Err(VocabError::MalformedRow(lineno)),
            };
            let cat = Category::from_label(label).ok_or(VocabError::UnknownCategory(lineno))?;
            match flag {
                "0" => {}
                "1" => {
                    excluded.insert(tokens.len());
                }
                _ => return Err(VocabError::MalformedRow(lineno)),
            }
            if !seen.insert(token) {
                return Err(VocabError::DuplicateToken(lineno));
            }
            tokens.push(token.to_owned());
            categories.push(cat);
        }
        let joint = Vocabulary::new(tokens)?;
        Self::from_parts(joint, categories, excluded)
    }
}

/// Category proportions of a joint vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub counts: CategoryCounts,
    pub p_source: f64,
    pub p_common: f64,
    pub p_target: f64,
}

impl fmt::Display for CategoryStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "category\tcount\tproportion")?;
        writeln!(f, "source\t{}\t{:.6}", self.counts.source, self.p_source)?;
        writeln!(f, "common\t{}\t{:.6}", self.counts.common, self.p_common)?;
        write!(f, "target\t{}\t{:.6}", self.counts.target, self.p_target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(tokens: &[&str]) -> Vocabulary {
        Vocabulary::new(tokens.iter().copied()).unwrap()
    }

    #[test]
    fn parse_simple() {
        let vocab = Vocabulary::parse("a\nb\nc").unwrap();
        assert_eq!(vocab.len(), 3);
        assert_eq!(vocab.id("c"), Some(2));
        assert_eq!(vocab.token(0), Some("a"));
    }

    #[test]
    fn parse_duplicate_reports_line() {
        assert_eq!(
            Vocabulary::parse("a\na"),
            Err(VocabError::DuplicateToken(2))
        );
        assert_eq!(
            Vocabulary::parse("a\n\nb\na\n"),
            Err(VocabError::DuplicateToken(4))
        );
    }

    #[test]
    fn parse_empty() {
        assert_eq!(Vocabulary::parse(""), Err(VocabError::EmptyVocabulary));
        assert_eq!(Vocabulary::parse("\n \n"), Err(VocabError::EmptyVocabulary));
    }

    #[test]
    fn fifty_lines_round_trip() {
        let text: String = (0..50).map(|i| format!("tok{i}\n")).collect();
        let vocab = Vocabulary::parse(&text).unwrap();
        for i in 0..50 {
            assert_eq!(vocab.id(&format!("tok{i}")), Some(i));
        }
        assert_eq!(vocab.to_text(), text);
        assert_eq!(Vocabulary::parse(&vocab.to_text()).unwrap(), vocab);
    }

    #[test]
    fn joint_union() {
        assert_eq!(build_joint(&v(&["a", "b"]), &v(&["b", "c"])), v(&["a", "b", "c"]));
        assert_eq!(build_joint(&v(&["x", "y"]), &v(&["x", "y"])), v(&["x", "y"]));
    }

    #[test]
    fn partition_one_per_branch() {
        let p = partition(
            &v(&["a", "b", "c"]),
            &v(&["a", "b"]),
            &v(&["b", "c"]),
            &SpecialTokens::none(),
        )
        .unwrap();
        assert_eq!(
            p.categories(),
            &[Category::SourceOnly, Category::Common, Category::TargetOnly]
        );
        assert_eq!(
            p.counts(),
            CategoryCounts {
                source: 1,
                common: 1,
                target: 1
            }
        );
    }

    #[test]
    fn partition_full_overlap() {
        let p = partition(&v(&["x"]), &v(&["x"]), &v(&["x"]), &SpecialTokens::none()).unwrap();
        assert_eq!(p.category(0), Category::Common);
    }

    #[test]
    fn partition_orphan() {
        let err = partition(
            &v(&["a", "z"]),
            &v(&["a"]),
            &v(&["a"]),
            &SpecialTokens::none(),
        )
        .unwrap_err();
        assert_eq!(err, VocabError::OrphanToken("z".into()));
    }

    #[test]
    fn specials_are_common_and_pad_excluded() {
        let joint = v(&["<pad>", "<eos>", "a", "c"]);
        let p = partition(&joint, &v(&["a"]), &v(&["c"]), &SpecialTokens::standard()).unwrap();
        assert_eq!(p.category(0), Category::Common);
        assert_eq!(p.category(1), Category::Common);
        assert!(p.is_excluded(0));
        assert!(!p.is_excluded(1));
        assert_eq!(p.active_counts().common, 1);
    }

    #[test]
    fn source_only_partition_rejected() {
        let err = partition(&v(&["a"]), &v(&["a"]), &v(&["b"]), &SpecialTokens::none());
        assert_eq!(err.unwrap_err(), VocabError::NoTargetSideTokens);
    }

    #[test]
    fn stats_proportions() {
        let p = partition(
            &v(&["a", "b", "c"]),
            &v(&["a", "b"]),
            &v(&["b", "c"]),
            &SpecialTokens::none(),
        )
        .unwrap();
        let s = p.stats();
        assert_eq!((s.p_source, s.p_common, s.p_target), (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0));

        let tokens: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
        let joint = Vocabulary::new(tokens.clone()).unwrap();
        let tgt = joint.clone();
        let src = Vocabulary::new(tokens[..5].to_vec()).unwrap();
        let s = partition(&joint, &src, &tgt, &SpecialTokens::none())
            .unwrap()
            .stats();
        assert_eq!((s.p_source, s.p_common, s.p_target), (0.0, 0.5, 0.5));
    }

    #[test]
    fn tsv_rows_and_round_trip() {
        let p = partition(
            &v(&["a", "b", "c"]),
            &v(&["a", "b"]),
            &v(&["b", "c"]),
            &SpecialTokens::none(),
        )
        .unwrap();
        let tsv = p.to_tsv();
        assert_eq!(tsv, "a\tsource\t0\nb\tcommon\t0\nc\ttarget\t0\n");
        assert_eq!(CategoryPartition::parse_tsv(&tsv).unwrap(), p);
    }

    #[test]
    fn tsv_field_decoding() {
        let p = CategoryPartition::parse_tsv("b\tcommon\t0").unwrap();
        assert_eq!(p.category(0), Category::Common);
        assert!(!p.is_excluded(0));
        let p = CategoryPartition::parse_tsv("a\tb\tcommon\t1\n").unwrap();
        assert_eq!(p.joint().token(0), Some("a\tb"));
        assert!(p.is_excluded(0));
    }

    #[test]
    fn tsv_errors() {
        assert_eq!(
            CategoryPartition::parse_tsv("a\tcommon\t0\nb\tcommon"),
            Err(VocabError::MalformedRow(2))
        );
        assert_eq!(
            CategoryPartition::parse_tsv("a\tboth\t0\n"),
            Err(VocabError::UnknownCategory(1))
        );
        assert_eq!(
            CategoryPartition::parse_tsv("a\tcommon\t2\n"),
            Err(VocabError::MalformedRow(1))
        );
        assert_eq!(
            CategoryPartition::parse_tsv("a\tcommon\t0\na\ttarget\t0\n"),
            Err(VocabError::DuplicateToken(2))
        );
    }
}
