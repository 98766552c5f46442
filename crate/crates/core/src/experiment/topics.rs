//! Text files holding a fitted topic model with its vocabulary.
//!
//! ```text
//! fewtopic-topics 1
//! topics K
//! terms J
//! docs N
//! vocab
//! <J lines, one term each>
//! phi
//! <K lines of J values>
//! theta
//! <N lines of K values>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::diffcalc::Tensor;
use crate::error::{Error, Result};
use crate::topicmodel::{top_terms, TopicModel};

const MAGIC: &str = "fewtopic-topics 1";

pub fn write_topic_model(path: &Path, vocab: &[String], model: &TopicModel) -> Result<()> {
    if vocab.len() != model.n_terms() {
        return Err(Error::Contract(format!(
            "vocabulary has {} terms, model has {}",
            vocab.len(),
            model.n_terms()
        )));
    }
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "topics {}", model.n_topics());
    let _ = writeln!(out, "terms {}", model.n_terms());
    let _ = writeln!(out, "docs {}", model.n_docs());
    out.push_str("vocab\n");
    for term in vocab {
        out.push_str(term);
        out.push('\n');
    }
    let mut matrix = |name: &str, t: &Tensor| {
        out.push_str(name);
        out.push('\n');
        for row in t.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
    };
    matrix("phi", &model.phi);
    matrix("theta", &model.theta);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    path: &'a Path,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Reader<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::parse(self.path, 0, format!("unexpected end of file, expected {what}")))
    }

    fn count(&mut self, key: &str) -> Result<usize> {
        let (ln, l) = self.next(key)?;
        l.strip_prefix(key)
            .and_then(|v| v.strip_prefix(' '))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(self.path, ln, format!("expected '{key} <count>'")))
    }

    fn section(&mut self, name: &str) -> Result<()> {
        let (ln, l) = self.next(name)?;
        if l == name {
            Ok(())
        } else {
            Err(Error::parse(self.path, ln, format!("expected '{name}'")))
        }
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Tensor> {
        self.section(name)?;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (ln, l) = self.next(name)?;
            let row: Vec<f64> = l
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(self.path, ln, "invalid number"))?;
            if row.len() != cols || row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::parse(
                    self.path,
                    ln,
                    format!("expected {cols} non-negative values"),
                ));
            }
            values.extend(row);
        }
        Ok(Tensor::from_shape_vec((rows, cols), values).expect("sized above"))
    }
}

pub fn read_topic_model(path: &Path) -> Result<(Vec<String>, TopicModel)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        path,
        lines: text.lines().enumerate(),
    };
    let (ln, magic) = r.next("header")?;
    if magic != MAGIC {
        return Err(Error::parse(path, ln, format!("expected '{MAGIC}'")));
    }
    let k = r.count("topics")?;
    let j = r.count("terms")?;
    let n = r.count("docs")?;
    if k == 0 || j == 0 {
        return Err(Error::parse(path, 3, "model needs at least one topic and one term"));
    }
    r.section("vocab")?;
    let mut vocab = Vec::with_capacity(j);
    for _ in 0..j {
        let (ln, term) = r.next("term")?;
        if term.is_empty() || term.contains(char::is_whitespace) {
            return Err(Error::parse(
                path,
                ln,
                "terms must be nonempty and contain no whitespace",
            ));
        }
        vocab.push(term.to_string());
    }
    let phi = r.matrix("phi", k, j)?;
    let theta = r.matrix("theta", n, k)?;
    if let Some((i, _)) = r.lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::parse(path, i + 1, "unexpected trailing content"));
    }
    Ok((vocab, TopicModel { theta, phi }))
}

/// One `TopicX: term term ...` line per topic with its `m` most probable
/// terms; `m` is clamped to the vocabulary size.
pub fn format_topics(vocab: &[String], model: &TopicModel, m: usize) -> Result<Vec<String>> {
    let m = m.min(model.n_terms());
    (0..model.n_topics())
        .map(|k| {
            let terms = top_terms(model, k, m)?;
            let words: Vec<&str> = terms.iter().map(|&j| vocab[j].as_str()).collect();
            Ok(format!("Topic{}: {}", k + 1, words.join(" ")))
        })
        .collect()
}
