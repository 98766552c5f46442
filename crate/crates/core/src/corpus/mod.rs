//! Bag-of-words corpora: sparse count matrices, grouping by category,
//! docword file I/O, frequency filtering and token-level splits.

mod filter;
mod io;
mod split;

pub use filter::filter_corpus;
pub use io::{load_corpus, write_corpus, DatasetPaths};
pub use split::{make_data_split, make_target_split, split_words, DataSplit, SplitPlan};

use crate::diffcalc::Tensor;
use crate::error::{Error, Result};

/// Sparse `N × J` matrix of word counts. Each document keeps its nonzero
/// `(term, count)` entries sorted by term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    n_terms: usize,
    docs: Vec<Vec<(usize, u32)>>,
}

impl CountMatrix {
    pub fn empty(n_terms: usize) -> Self {
        Self {
            n_terms,
            docs: Vec::new(),
        }
    }

    /// Builds from per-document entry lists. Entries are sorted, zero
    /// counts dropped; duplicate or out-of-range terms are rejected.
    pub fn from_docs(n_terms: usize, docs: Vec<Vec<(usize, u32)>>) -> Result<Self> {
        let mut m = Self::empty(n_terms);
        for doc in docs {
            m.push_doc(doc)?;
        }
        Ok(m)
    }

    pub fn from_dense(rows: &[Vec<u32>]) -> Result<Self> {
        let n_terms = rows.first().map_or(0, Vec::len);
        let mut m = Self::empty(n_terms);
        for row in rows {
            if row.len() != n_terms {
                return Err(Error::Dimension {
                    op: "CountMatrix::from_dense",
                    lhs: (rows.len(), n_terms),
                    rhs: (1, row.len()),
                });
            }
            m.push_doc(row.iter().copied().enumerate().collect())?;
        }
        Ok(m)
    }

    pub fn push_doc(&mut self, mut entries: Vec<(usize, u32)>) -> Result<()> {
        entries.retain(|&(_, c)| c > 0);
        entries.sort_unstable_by_key(|&(j, _)| j);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Data(format!("duplicate term {} in document", w[0].0)));
            }
        }
        if let Some(&(j, _)) = entries.last() {
            if j >= self.n_terms {
                return Err(Error::Data(format!(
                    "term index {j} out of range for {} terms",
                    self.n_terms
                )));
            }
        }
        self.docs.push(entries);
        Ok(())
    }

    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn n_terms(&self) -> usize {
        self.n_terms
    }

    pub fn doc(&self, n: usize) -> &[(usize, u32)] {
        &self.docs[n]
    }

    pub fn docs(&self) -> impl Iterator<Item = &[(usize, u32)]> {
        self.docs.iter().map(Vec::as_slice)
    }

    /// Nonzero cells as `(doc, term, count)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        self.docs
            .iter()
            .enumerate()
            .flat_map(|(n, d)| d.iter().map(move |&(j, c)| (n, j, c)))
    }

    pub fn get(&self, n: usize, j: usize) -> u32 {
        let doc = &self.docs[n];
        doc.binary_search_by_key(&j, |&(t, _)| t).map(|i| doc[i].1).unwrap_or(0)
    }

    pub fn nnz(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }

    pub fn total(&self) -> u64 {
        self.entries().map(|(_, _, c)| c as u64).sum()
    }

    pub fn doc_total(&self, n: usize) -> u64 {
        self.docs[n].iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros((self.n_docs(), self.n_terms));
        for (n, j, c) in self.entries() {
            t[[n, j]] = c as f64;
        }
        t
    }

    /// Rows `indices`, in that order (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            n_terms: self.n_terms,
            docs: indices.iter().map(|&i| self.docs[i].clone()).collect(),
        }
    }

    /// Every count multiplied by `factor`.
    pub fn scaled(&self, factor: u32) -> Self {
        Self {
            n_terms: self.n_terms,
            docs: self
                .docs
                .iter()
                .map(|d| d.iter().map(|&(j, c)| (j, c * factor)).collect())
                .collect(),
        }
    }

    /// Stacks the rows of `self` and then `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.n_terms != other.n_terms {
            return Err(Error::Dimension {
                op: "CountMatrix::concat",
                lhs: (self.n_docs(), self.n_terms),
                rhs: (other.n_docs(), other.n_terms),
            });
        }
        let mut docs = self.docs.clone();
        docs.extend(other.docs.iter().cloned());
        Ok(Self {
            n_terms: self.n_terms,
            docs,
        })
    }

    /// Elementwise sum of two matrices with identical shape.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.n_terms != other.n_terms || self.n_docs() != other.n_docs() {
            return Err(Error::Dimension {
                op: "CountMatrix::add",
                lhs: (self.n_docs(), self.n_terms),
                rhs: (other.n_docs(), other.n_terms),
            });
        }
        let mut out = Self::empty(self.n_terms);
        for (a, b) in self.docs.iter().zip(&other.docs) {
            let mut merged: Vec<(usize, u32)> = Vec::with_capacity(a.len() + b.len());
            let (mut i, mut k) = (0, 0);
            while i < a.len() || k < b.len() {
                match (a.get(i), b.get(k)) {
                    (Some(&(ja, ca)), Some(&(jb, cb))) if ja == jb => {
                        merged.push((ja, ca + cb));
                        i += 1;
                        k += 1;
                    }
                    (Some(&(ja, ca)), Some(&(jb, _))) if ja < jb => {
                        merged.push((ja, ca));
                        i += 1;
                    }
                    (Some(&(ja, ca)), None) => {
                        merged.push((ja, ca));
                        i += 1;
                    }
                    (_, Some(&(jb, cb))) => {
                        merged.push((jb, cb));
                        k += 1;
                    }
                    (None, None) => unreachable!(),
                }
            }
            out.docs.push(merged);
        }
        Ok(out)
    }
}

/// The documents of one category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub counts: CountMatrix,
}

/// Corpora over one shared vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSet {
    pub vocab: Vec<String>,
    pub corpora: Vec<Corpus>,
}

impl CorpusSet {
    pub fn n_terms(&self) -> usize {
        self.vocab.len()
    }

    pub fn len(&self) -> usize {
        self.corpora.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corpora.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Corpus> {
        self.corpora.iter().find(|c| c.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.corpora.iter().map(|c| c.name.as_str())
    }

    /// Subset keeping the named corpora, in the order of `names`.
    pub fn subset<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        let corpora = names
            .iter()
            .map(|n| {
                self.get(n.as_ref())
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("unknown category '{}'", n.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            vocab: self.vocab.clone(),
            corpora,
        })
    }

    /// All documents of all corpora stacked in corpus order.
    pub fn concatenated(&self) -> CountMatrix {
        let mut all = CountMatrix::empty(self.n_terms());
        for c in &self.corpora {
            all.docs.extend(c.counts.docs.iter().cloned());
        }
        all
    }
}
