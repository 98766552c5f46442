use rand::seq::index;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use super::{CorpusSet, CountMatrix};
use crate::error::{Error, Result};

const MAX_SPLIT_ATTEMPTS: usize = 100;

/// Sends every word token to the support side with probability `rate`,
/// otherwise to the query side. Drawn per cell as `Binomial(count, rate)`.
pub fn split_words<R: Rng + ?Sized>(x: &CountMatrix, rate: f64, rng: &mut R) -> Result<(CountMatrix, CountMatrix)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("support rate must lie in [0, 1], got {rate}")));
    }
    let mut support = CountMatrix::empty(x.n_terms());
    let mut query = CountMatrix::empty(x.n_terms());
    for doc in x.docs() {
        let mut s = Vec::with_capacity(doc.len());
        let mut q = Vec::with_capacity(doc.len());
        for &(j, c) in doc {
            let kept = if rate >= 1.0 {
                c
            } else if rate <= 0.0 {
                0
            } else {
                Binomial::new(c as u64, rate)
                    .expect("valid binomial parameters")
                    .sample(rng) as u32
            };
            s.push((j, kept));
            q.push((j, c - kept));
        }
        support.push_doc(s)?;
        query.push_doc(q)?;
    }
    Ok((support, query))
}

/// Holds out a `heldout` fraction of the target's tokens for evaluation.
/// Splits leaving either side without tokens are redrawn.
pub fn make_target_split<R: Rng + ?Sized>(
    target: &CountMatrix,
    heldout: f64,
    rng: &mut R,
) -> Result<(CountMatrix, CountMatrix)> {
    if !(0.0..=1.0).contains(&heldout) {
        return Err(Error::Config(format!(
            "held-out fraction must lie in [0, 1], got {heldout}"
        )));
    }
    if heldout == 0.0 {
        return Ok((
            target.clone(),
            CountMatrix::from_docs(target.n_terms(), vec![Vec::new(); target.n_docs()])?,
        ));
    }
    for _ in 0..MAX_SPLIT_ATTEMPTS {
        let (support, eval) = split_words(target, 1.0 - heldout, rng)?;
        if support.total() > 0 && eval.total() > 0 {
            return Ok((support, eval));
        }
    }
    Err(Error::Data(format!(
        "could not split target into nonempty support and evaluation after {MAX_SPLIT_ATTEMPTS} attempts"
    )))
}

/// Which categories play which role in one experiment.
#[derive(Debug, Clone)]
pub struct SplitPlan {
    pub target: String,
    pub validation: Vec<String>,
    /// Categories kept out of training besides the target and validation.
    pub excluded: Vec<String>,
    pub target_docs: usize,
    pub heldout: f64,
}

#[derive(Debug, Clone)]
pub struct DataSplit {
    pub training: CorpusSet,
    pub validation: CorpusSet,
    pub target_name: String,
    pub target_support: CountMatrix,
    pub target_eval: CountMatrix,
}

pub fn make_data_split<R: Rng + ?Sized>(set: &CorpusSet, plan: &SplitPlan, rng: &mut R) -> Result<DataSplit> {
    let target = set
        .get(&plan.target)
        .ok_or_else(|| Error::Config(format!("unknown target category '{}'", plan.target)))?;
    if plan.validation.contains(&plan.target) {
        return Err(Error::Config(format!(
            "category '{}' cannot be both target and validation",
            plan.target
        )));
    }
    let validation = set.subset(&plan.validation)?;
    let training_names: Vec<&str> = set
        .names()
        .filter(|n| {
            *n != plan.target && !plan.validation.iter().any(|v| v == n) && !plan.excluded.iter().any(|e| e == n)
        })
        .collect();
    if training_names.is_empty() {
        return Err(Error::Data("no training corpora left after the split".into()));
    }
    let training = set.subset(&training_names)?;

    let n = target.counts.n_docs();
    let picked: Vec<usize> = if plan.target_docs >= n {
        (0..n).collect()
    } else {
        index::sample(rng, n, plan.target_docs).into_vec()
    };
    let chosen = target.counts.select(&picked);
    let (target_support, target_eval) = make_target_split(&chosen, plan.heldout, rng)?;
    Ok(DataSplit {
        training,
        validation,
        target_name: plan.target.clone(),
        target_support,
        target_eval,
    })
}
