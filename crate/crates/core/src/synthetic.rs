//! Synthetic multi-corpus benchmark.
//!
//! A shared pool of sparse topics is drawn once; every corpus uses its own
//! subset of `topics_per_corpus` pool topics, so corpora differ in their
//! vocabulary usage while related corpora share structure.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::corpus::{Corpus, CorpusSet, CountMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub corpora: usize,
    pub docs_per_corpus: usize,
    pub topics_per_corpus: usize,
    pub pool_topics: usize,
    pub terms: usize,
    /// Mean of the Poisson document length.
    pub doc_length: f64,
    /// Dirichlet concentration of pool topics over terms.
    pub topic_concentration: f64,
    /// Dirichlet concentration of document topic proportions.
    pub doc_concentration: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpora: 43,
            docs_per_corpus: 40,
            topics_per_corpus: 3,
            pool_topics: 12,
            terms: 50,
            doc_length: 80.0,
            topic_concentration: 0.1,
            doc_concentration: 0.5,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.corpora == 0 || self.docs_per_corpus == 0 || self.terms == 0 {
            return fail("corpora, docs_per_corpus and terms must be positive");
        }
        if self.topics_per_corpus == 0 || self.topics_per_corpus > self.pool_topics {
            return fail("topics_per_corpus must lie in 1..=pool_topics");
        }
        if !(self.doc_length >= 1.0 && self.doc_length.is_finite()) {
            return fail("doc_length must be at least 1");
        }
        if !(self.topic_concentration > 0.0 && self.doc_concentration > 0.0) {
            return fail("concentrations must be positive");
        }
        Ok(())
    }
}

/// Corpus names are zero-padded indices, `c00`, `c01`, ...
pub fn corpus_name(i: usize, total: usize) -> String {
    let width = total.saturating_sub(1).to_string().len().max(2);
    format!("c{i:0width$}")
}

/// Symmetric Dirichlet draw as normalized Gamma variates.
fn draw_dirichlet(dim: usize, concentration: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    loop {
        let g: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
        let total: f64 = g.iter().sum();
        // Tiny shapes can underflow every component.
        if total > 0.0 {
            return g.into_iter().map(|v| v / total).collect();
        }
    }
}

fn draw_index(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rand::Rng::random(rng);
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

pub fn generate(config: &SyntheticConfig) -> Result<CorpusSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pool: Vec<Vec<f64>> = (0..config.pool_topics)
        .map(|_| draw_dirichlet(config.terms, config.topic_concentration, &mut rng))
        .collect();
    let length = Poisson::new(config.doc_length).expect("positive mean");

    let corpora = (0..config.corpora)
        .map(|c| {
            let chosen = index::sample(&mut rng, config.pool_topics, config.topics_per_corpus).into_vec();
            let mut counts = CountMatrix::empty(config.terms);
            for _ in 0..config.docs_per_corpus {
                let theta = draw_dirichlet(chosen.len(), config.doc_concentration, &mut rng);
                let n_words = (length.sample(&mut rng) as usize).max(1);
                let mut row = vec![0u32; config.terms];
                for _ in 0..n_words {
                    let topic = &pool[chosen[draw_index(&theta, &mut rng)]];
                    row[draw_index(topic, &mut rng)] += 1;
                }
                counts.push_doc(row.iter().enumerate().map(|(j, &c)| (j, c)).collect())?;
            }
            Ok(Corpus {
                name: corpus_name(c, config.corpora),
                counts,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CorpusSet {
        vocab: (0..config.terms).map(|j| format!("w{j:03}")).collect(),
        corpora,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            corpora: 5,
            docs_per_corpus: 6,
            terms: 20,
            pool_topics: 4,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn shapes_and_names() {
        let set = generate(&small()).unwrap();
        assert_eq!(set.len(), 5);
        assert_eq!(set.n_terms(), 20);
        let names: Vec<&str> = set.names().collect();
        assert_eq!(names, ["c00", "c01", "c02", "c03", "c04"]);
        assert_eq!(corpus_name(42, 43), "c42");
        assert_eq!(corpus_name(7, 1000), "c007");
        for c in &set.corpora {
            assert_eq!(c.counts.n_docs(), 6);
            assert!((0..6).all(|n| c.counts.doc_total(n) > 0));
        }
    }

    #[test]
    fn document_lengths_follow_the_configured_mean() {
        let set = generate(&SyntheticConfig { corpora: 10, ..small() }).unwrap();
        let docs: u64 = set.corpora.iter().map(|c| c.counts.n_docs() as u64).sum();
        let tokens: u64 = set.corpora.iter().map(|c| c.counts.total()).sum();
        let mean = tokens as f64 / docs as f64;
        // 60 Poisson(80) draws: standard error about 1.2.
        assert!((mean - 80.0).abs() < 6.0, "mean length {mean}");
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        let c = generate(&SyntheticConfig { seed: 1, ..small() }).unwrap();
        assert_eq!(a.corpora[0].counts, b.corpora[0].counts);
        assert_ne!(a.corpora[0].counts, c.corpora[0].counts);
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            SyntheticConfig {
                topics_per_corpus: 5,
                ..small()
            },
            SyntheticConfig { terms: 0, ..small() },
            SyntheticConfig {
                doc_length: 0.0,
                ..small()
            },
        ] {
            assert!(matches!(generate(&bad), Err(Error::Config(_))));
        }
    }
}
