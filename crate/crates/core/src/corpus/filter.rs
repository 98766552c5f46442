use super::{Corpus, CorpusSet, CountMatrix};
use crate::error::{Error, Result};

/// Drops documents with fewer than `min_doc_terms` distinct terms and terms
/// occurring in fewer than `min_term_docs` documents, repeating until
/// neither rule removes anything. Document frequency is counted over the
/// whole set. Surviving terms are re-indexed in their original order.
pub fn filter_corpus(raw: &CorpusSet, min_doc_terms: usize, min_term_docs: usize) -> Result<CorpusSet> {
    if min_doc_terms == 0 || min_term_docs == 0 {
        return Err(Error::Config("filter thresholds must be at least 1".into()));
    }
    let n_terms = raw.n_terms();
    let mut term_alive = vec![true; n_terms];
    let mut doc_alive: Vec<Vec<bool>> = raw.corpora.iter().map(|c| vec![true; c.counts.n_docs()]).collect();

    loop {
        let mut changed = false;
        for (corpus, alive) in raw.corpora.iter().zip(doc_alive.iter_mut()) {
            for (n, doc) in corpus.counts.docs().enumerate() {
                if alive[n] {
                    let distinct = doc.iter().filter(|&&(j, _)| term_alive[j]).count();
                    if distinct < min_doc_terms {
                        alive[n] = false;
                        changed = true;
                    }
                }
            }
        }
        let mut df = vec![0usize; n_terms];
        for (corpus, alive) in raw.corpora.iter().zip(&doc_alive) {
            for (n, doc) in corpus.counts.docs().enumerate() {
                if alive[n] {
                    for &(j, _) in doc {
                        df[j] += 1;
                    }
                }
            }
        }
        for (j, alive) in term_alive.iter_mut().enumerate() {
            if *alive && df[j] < min_term_docs {
                *alive = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut remap = vec![usize::MAX; n_terms];
    let mut vocab = Vec::new();
    for (j, term) in raw.vocab.iter().enumerate() {
        if term_alive[j] {
            remap[j] = vocab.len();
            vocab.push(term.clone());
        }
    }

    let mut corpora = Vec::new();
    for (corpus, alive) in raw.corpora.iter().zip(&doc_alive) {
        let mut counts = CountMatrix::empty(vocab.len());
        for (n, doc) in corpus.counts.docs().enumerate() {
            if alive[n] {
                counts.push_doc(
                    doc.iter()
                        .filter(|&&(j, _)| term_alive[j])
                        .map(|&(j, c)| (remap[j], c))
                        .collect(),
                )?;
            }
        }
        if counts.n_docs() == 0 {
            log::warn!("corpus '{}' is empty after filtering and was dropped", corpus.name);
            continue;
        }
        corpora.push(Corpus {
            name: corpus.name.clone(),
            counts,
        });
    }
    if corpora.is_empty() {
        return Err(Error::Data("filtering removed every corpus".into()));
    }
    Ok(CorpusSet { vocab, corpora })
}
