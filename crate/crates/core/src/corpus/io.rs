//! UCI-style docword files.
//!
//! * docword: three header lines (documents, terms, nonzero count) followed
//!   by `docID termID count` triples, both indices 1-based;
//! * vocab: one term per line, line `j` naming term `j`;
//! * labels: `docID<TAB>category`, one line per document.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Corpus, CorpusSet, CountMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub docword: PathBuf,
    pub vocab: PathBuf,
    pub labels: PathBuf,
}

impl DatasetPaths {
    /// `docword.txt`, `vocab.txt` and `labels.txt` inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            docword: dir.join("docword.txt"),
            vocab: dir.join("vocab.txt"),
            labels: dir.join("labels.txt"),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_header(path: &Path, lines: &mut impl Iterator<Item = (usize, String)>, what: &str) -> Result<usize> {
    let (no, line) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 0, format!("missing header line ({what})")))?;
    line.trim()
        .parse()
        .map_err(|_| Error::parse(path, no, format!("expected {what}, found '{}'", line.trim())))
}

struct Docword {
    n_docs: usize,
    n_terms: usize,
    rows: Vec<Vec<(usize, u32)>>,
}

fn parse_docword(path: &Path) -> Result<Docword> {
    let text = read(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.to_string()))
        .filter(|(_, l)| !l.trim().is_empty());
    let n_docs = parse_header(path, &mut lines, "document count")?;
    let n_terms = parse_header(path, &mut lines, "term count")?;
    let nnz = parse_header(path, &mut lines, "nonzero count")?;

    let mut rows = vec![Vec::new(); n_docs];
    let mut seen = HashSet::with_capacity(nnz);
    let mut count = 0usize;
    let mut last_line = 3;
    for (no, line) in lines {
        last_line = no;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [d, j, c] = fields[..] else {
            return Err(Error::parse(path, no, "expected 'docID termID count'"));
        };
        let parse = |s: &str, what: &str| -> Result<u64> {
            s.parse()
                .map_err(|_| Error::parse(path, no, format!("invalid {what} '{s}'")))
        };
        let (d, j, c) = (parse(d, "docID")?, parse(j, "termID")?, parse(c, "count")?);
        if d == 0 || d as usize > n_docs {
            return Err(Error::parse(path, no, format!("docID {d} outside 1..={n_docs}")));
        }
        if j == 0 || j as usize > n_terms {
            return Err(Error::parse(path, no, format!("termID {j} outside 1..={n_terms}")));
        }
        let c = u32::try_from(c).map_err(|_| Error::parse(path, no, "count too large"))?;
        if !seen.insert((d, j)) {
            return Err(Error::parse(path, no, format!("duplicate entry for doc {d}, term {j}")));
        }
        count += 1;
        if count > nnz {
            return Err(Error::parse(path, no, format!("more triples than the declared {nnz}")));
        }
        if c > 0 {
            rows[d as usize - 1].push((j as usize - 1, c));
        }
    }
    if count != nnz {
        return Err(Error::parse(
            path,
            last_line,
            format!("header declares {nnz} triples, found {count}"),
        ));
    }
    Ok(Docword { n_docs, n_terms, rows })
}

fn parse_vocab(path: &Path, n_terms: usize) -> Result<Vec<String>> {
    let text = read(path)?;
    let vocab: Vec<String> = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
    if vocab.len() != n_terms {
        return Err(Error::parse(
            path,
            vocab.len(),
            format!("expected {n_terms} vocabulary terms, found {}", vocab.len()),
        ));
    }
    Ok(vocab)
}

fn parse_labels(path: &Path, n_docs: usize) -> Result<Vec<String>> {
    let text = read(path)?;
    let mut labels: Vec<Option<String>> = vec![None; n_docs];
    for (i, line) in text.lines().enumerate() {
        let no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let Some((d, cat)) = line.split_once('\t') else {
            return Err(Error::parse(path, no, "expected 'docID<TAB>category'"));
        };
        let d: usize = d
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, no, format!("invalid docID '{d}'")))?;
        if d == 0 || d > n_docs {
            return Err(Error::parse(path, no, format!("docID {d} outside 1..={n_docs}")));
        }
        let cat = cat.trim();
        if cat.is_empty() {
            return Err(Error::parse(path, no, "empty category"));
        }
        if labels[d - 1].replace(cat.to_string()).is_some() {
            return Err(Error::parse(path, no, format!("document {d} labelled twice")));
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::Data(format!("{}: document {} has no label", path.display(), i + 1))))
        .collect()
}

/// Reads a dataset and groups documents into one corpus per category.
///
/// Corpora appear in order of their first document; documents keep their
/// file order inside each corpus.
pub fn load_corpus(paths: &DatasetPaths) -> Result<CorpusSet> {
    let dw = parse_docword(&paths.docword)?;
    let vocab = parse_vocab(&paths.vocab, dw.n_terms)?;
    let labels = parse_labels(&paths.labels, dw.n_docs)?;

    let mut index: HashMap<String, usize> = HashMap::new();
    let mut corpora: Vec<Corpus> = Vec::new();
    for (row, label) in dw.rows.into_iter().zip(labels) {
        let slot = *index.entry(label.clone()).or_insert_with(|| {
            corpora.push(Corpus {
                name: label,
                counts: CountMatrix::empty(dw.n_terms),
            });
            corpora.len() - 1
        });
        corpora[slot].counts.push_doc(row)?;
    }
    Ok(CorpusSet { vocab, corpora })
}

/// Writes `set` in the format read by [`load_corpus`]. Document ids are
/// assigned consecutively in corpus order.
pub fn write_corpus(set: &CorpusSet, paths: &DatasetPaths) -> Result<()> {
    let n_docs: usize = set.corpora.iter().map(|c| c.counts.n_docs()).sum();
    let nnz: usize = set.corpora.iter().map(|c| c.counts.nnz()).sum();

    let mut docword = format!("{n_docs}\n{}\n{nnz}\n", set.n_terms());
    let mut labels = String::new();
    let mut id = 0usize;
    for corpus in &set.corpora {
        for doc in corpus.counts.docs() {
            id += 1;
            for &(j, c) in doc {
                writeln!(docword, "{id} {} {c}", j + 1).expect("string write");
            }
            writeln!(labels, "{id}\t{}", corpus.name).expect("string write");
        }
    }
    let mut vocab = set.vocab.join("\n");
    if !vocab.is_empty() {
        vocab.push('\n');
    }

    for (path, body) in [
        (&paths.docword, docword),
        (&paths.vocab, vocab),
        (&paths.labels, labels),
    ] {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, body).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_files(dir: &Path, docword: &str, vocab: &str, labels: &str) -> DatasetPaths {
        let p = DatasetPaths::in_dir(dir);
        fs::write(&p.docword, docword).unwrap();
        fs::write(&p.vocab, vocab).unwrap();
        fs::write(&p.labels, labels).unwrap();
        p
    }

    #[test]
    fn loads_small_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_files(dir.path(), "2\n3\n2\n1 1 4\n2 3 1\n", "a\nb\nc\n", "1\tx\n2\tx\n");
        let set = load_corpus(&p).unwrap();
        assert_eq!(set.len(), 1);
        let d = set.corpora[0].counts.to_dense();
        assert_eq!(d, ndarray::array![[4.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
    }

    #[test]
    fn groups_by_category() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_files(dir.path(), "2\n3\n2\n1 1 4\n2 3 1\n", "a\nb\nc\n", "1\tx\n2\ty\n");
        let set = load_corpus(&p).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.names().collect::<Vec<_>>(), ["x", "y"]);
    }

    #[test]
    fn empty_triples_with_nonzero_header_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_files(dir.path(), "2\n3\n2\n", "a\nb\nc\n", "1\tx\n2\tx\n");
        assert!(matches!(load_corpus(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_files(dir.path(), "2\n3\n2\n1 1 4\n2 4 1\n", "a\nb\nc\n", "1\tx\n2\tx\n");
        match load_corpus(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
        let p = write_files(dir.path(), "2\n3\n2\n1 1 4\n1 1 1\n", "a\nb\nc\n", "1\tx\n2\tx\n");
        match load_corpus(&p) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 5);
                assert!(msg.contains("duplicate"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let p = write_files(dir.path(), "2\n3\n2\n1 1 4\n2 x 1\n", "a\nb\nc\n", "1\tx\n2\tx\n");
        assert!(matches!(load_corpus(&p), Err(Error::Parse { line: 5, .. })));
    }

    #[test]
    fn missing_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = DatasetPaths::in_dir(dir.path());
        let err = load_corpus(&p).unwrap_err();
        assert!(err.to_string().contains("docword.txt"));
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_files(
            dir.path(),
            "4\n3\n5\n1 1 4\n2 3 1\n3 2 2\n4 1 1\n4 3 7\n",
            "a\nb\nc\n",
            "1\tx\n2\ty\n3\tx\n4\ty\n",
        );
        let set = load_corpus(&p).unwrap();
        let out = DatasetPaths::in_dir(dir.path().join("out"));
        write_corpus(&set, &out).unwrap();
        let again = load_corpus(&out).unwrap();
        assert_eq!(set, again);
    }
}
