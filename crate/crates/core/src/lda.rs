//! LDA baselines fitted by collapsed Gibbs sampling, with symmetric
//! Dirichlet hyperparameters re-estimated by Minka's fixed-point iteration.

use rand::Rng;
use statrs::function::gamma::digamma;

use crate::corpus::{CountMatrix, DataSplit};
use crate::diffcalc::Tensor;
use crate::error::{Error, Result};
use crate::topicmodel::{perplexity, TopicModel};

pub const HYPER_MIN: f64 = 1e-5;
pub const HYPER_MAX: f64 = 1e3;
const FIXED_POINT_MAX_ITER: usize = 1000;
const FIXED_POINT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsConfig {
    pub sweeps: usize,
    pub burn_in: usize,
    /// Sweeps between hyperparameter refits during burn-in; 0 disables refits.
    pub refit_every: usize,
    /// Initial symmetric topic prior; `None` means `50 / K`.
    pub alpha: Option<f64>,
    pub beta: f64,
    /// Sweeps over target tokens when folding documents into a trained model.
    pub fold_in_sweeps: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            sweeps: 1000,
            burn_in: 500,
            refit_every: 20,
            alpha: None,
            beta: 0.01,
            fold_in_sweeps: 200,
        }
    }
}

impl GibbsConfig {
    fn initial_alpha(&self, n_topics: usize) -> f64 {
        self.alpha.unwrap_or(50.0 / n_topics as f64)
    }

    fn validate(&self, n_topics: usize) -> Result<()> {
        let alpha = self.initial_alpha(n_topics);
        if !(alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::Config("Gibbs hyperparameters must be positive".into()));
        }
        if self.sweeps <= self.burn_in {
            return Err(Error::Config(format!(
                "sweeps ({}) must exceed burn_in ({})",
                self.sweeps, self.burn_in
            )));
        }
        Ok(())
    }
}

/// Topic assignments of every token and the count tables they induce.
#[derive(Debug, Clone)]
pub struct GibbsState {
    n_topics: usize,
    n_terms: usize,
    /// `(doc, term)` of each token.
    tokens: Vec<(usize, usize)>,
    z: Vec<usize>,
    n_dk: Vec<Vec<u32>>,
    n_kj: Vec<Vec<u32>>,
    n_k: Vec<u32>,
    n_d: Vec<u32>,
    pub alpha: f64,
    pub beta: f64,
    /// Topic-term counts that are held fixed (fold-in); added to `n_kj`.
    frozen: Option<(Vec<Vec<u32>>, Vec<u32>)>,
}

impl GibbsState {
    /// Random initial assignments.
    pub fn new<R: Rng + ?Sized>(x: &CountMatrix, n_topics: usize, alpha: f64, beta: f64, rng: &mut R) -> Result<Self> {
        if n_topics == 0 {
            return Err(Error::Config("need at least one topic".into()));
        }
        if x.total() == 0 {
            return Err(Error::Data(
                "cannot run Gibbs sampling on a corpus without tokens".into(),
            ));
        }
        let mut tokens = Vec::with_capacity(x.total() as usize);
        for (n, j, c) in x.entries() {
            tokens.extend(std::iter::repeat_n((n, j), c as usize));
        }
        let mut state = Self {
            n_topics,
            n_terms: x.n_terms(),
            z: Vec::with_capacity(tokens.len()),
            n_dk: vec![vec![0; n_topics]; x.n_docs()],
            n_kj: vec![vec![0; x.n_terms()]; n_topics],
            n_k: vec![0; n_topics],
            n_d: vec![0; x.n_docs()],
            tokens,
            alpha,
            beta,
            frozen: None,
        };
        for i in 0..state.tokens.len() {
            let k = rng.random_range(0..n_topics);
            state.z.push(k);
            state.assign(i, k);
        }
        Ok(state)
    }

    fn assign(&mut self, i: usize, k: usize) {
        let (d, j) = self.tokens[i];
        self.n_dk[d][k] += 1;
        self.n_kj[k][j] += 1;
        self.n_k[k] += 1;
        self.n_d[d] += 1;
    }

    fn unassign(&mut self, i: usize, k: usize) {
        let (d, j) = self.tokens[i];
        self.n_dk[d][k] -= 1;
        self.n_kj[k][j] -= 1;
        self.n_k[k] -= 1;
        self.n_d[d] -= 1;
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn doc_topic_counts(&self) -> &[Vec<u32>] {
        &self.n_dk
    }

    pub fn topic_term_counts(&self) -> &[Vec<u32>] {
        &self.n_kj
    }

    fn topic_term(&self, k: usize, j: usize) -> f64 {
        let own = self.n_kj[k][j] as f64;
        match &self.frozen {
            Some((kj, _)) => own + kj[k][j] as f64,
            None => own,
        }
    }

    fn topic_total(&self, k: usize) -> f64 {
        let own = self.n_k[k] as f64;
        match &self.frozen {
            Some((_, tot)) => own + tot[k] as f64,
            None => own,
        }
    }

    /// One pass resampling every token's topic.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let jb = self.n_terms as f64 * self.beta;
        let mut weights = vec![0.0; self.n_topics];
        for i in 0..self.tokens.len() {
            let old = self.z[i];
            self.unassign(i, old);
            let (d, j) = self.tokens[i];
            let mut total = 0.0;
            for (k, w) in weights.iter_mut().enumerate() {
                total += (self.n_dk[d][k] as f64 + self.alpha) * (self.topic_term(k, j) + self.beta)
                    / (self.topic_total(k) + jb);
                *w = total;
            }
            let u = rng.random::<f64>() * total;
            let new = weights.iter().position(|&c| u < c).unwrap_or(self.n_topics - 1);
            self.z[i] = new;
            self.assign(i, new);
        }
        debug_assert!(self.check_consistency().is_ok());
    }

    /// Recomputes every count table from the assignments and compares.
    pub fn check_consistency(&self) -> Result<()> {
        let mut n_dk = vec![vec![0u32; self.n_topics]; self.n_dk.len()];
        let mut n_kj = vec![vec![0u32; self.n_terms]; self.n_topics];
        let mut n_k = vec![0u32; self.n_topics];
        let mut n_d = vec![0u32; self.n_d.len()];
        for (&(d, j), &k) in self.tokens.iter().zip(&self.z) {
            n_dk[d][k] += 1;
            n_kj[k][j] += 1;
            n_k[k] += 1;
            n_d[d] += 1;
        }
        if n_dk != self.n_dk || n_kj != self.n_kj || n_k != self.n_k || n_d != self.n_d {
            return Err(Error::Contract("Gibbs count tables disagree with assignments".into()));
        }
        Ok(())
    }

    /// Point estimates from the current state.
    pub fn estimate(&self) -> TopicModel {
        let (k, j) = (self.n_topics, self.n_terms);
        let ka = k as f64 * self.alpha;
        let jb = j as f64 * self.beta;
        let theta = Tensor::from_shape_fn((self.n_dk.len(), k), |(d, t)| {
            (self.n_dk[d][t] as f64 + self.alpha) / (self.n_d[d] as f64 + ka)
        });
        let phi = Tensor::from_shape_fn((k, j), |(t, v)| {
            (self.topic_term(t, v) + self.beta) / (self.topic_total(t) + jb)
        });
        TopicModel { theta, phi }
    }
}

/// Symmetric Dirichlet concentration fitted to grouped counts by
/// fixed-point iteration. Each row of `counts` is one draw with
/// `counts[i].len()` components. Returns the clamped estimate and whether
/// the iteration converged.
pub fn fit_symmetric_dirichlet(counts: &[Vec<u32>], initial: f64) -> (f64, bool) {
    let dim = counts.first().map_or(0, Vec::len);
    let totals: Vec<u32> = counts.iter().map(|r| r.iter().sum()).collect();
    if dim == 0 || totals.iter().all(|&t| t == 0) {
        return (initial.clamp(HYPER_MIN, HYPER_MAX), true);
    }
    let mut a = initial.clamp(HYPER_MIN, HYPER_MAX);
    for _ in 0..FIXED_POINT_MAX_ITER {
        let da = digamma(a);
        let dsum = digamma(dim as f64 * a);
        let mut num = 0.0;
        let mut den = 0.0;
        for (row, &total) in counts.iter().zip(&totals) {
            num += row
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| digamma(c as f64 + a) - da)
                .sum::<f64>();
            if total > 0 {
                den += digamma(total as f64 + dim as f64 * a) - dsum;
            }
        }
        let next = if num > 0.0 {
            (a * num / (dim as f64 * den)).clamp(HYPER_MIN, HYPER_MAX)
        } else {
            HYPER_MIN
        };
        let done = (next - a).abs() <= FIXED_POINT_TOL * a;
        a = next;
        if done || a == HYPER_MIN || a == HYPER_MAX {
            return (a, true);
        }
    }
    (a, false)
}

/// Refits the symmetric `(alpha, beta)` of `state` from its count tables.
pub fn fit_hyperparameters(state: &GibbsState) -> (f64, f64) {
    let (alpha, ok_a) = fit_symmetric_dirichlet(&state.n_dk, state.alpha);
    let (beta, ok_b) = fit_symmetric_dirichlet(&state.n_kj, state.beta);
    if !(ok_a && ok_b) {
        log::warn!("hyperparameter fixed-point iteration hit its cap; keeping last iterate");
    }
    (alpha, beta)
}

/// Runs the Gibbs chain and returns the final state.
pub fn gibbs_chain<R: Rng + ?Sized>(
    x: &CountMatrix,
    n_topics: usize,
    config: &GibbsConfig,
    rng: &mut R,
) -> Result<GibbsState> {
    config.validate(n_topics)?;
    let mut state = GibbsState::new(x, n_topics, config.initial_alpha(n_topics), config.beta, rng)?;
    for s in 1..=config.sweeps {
        state.sweep(rng);
        if config.refit_every > 0 && s <= config.burn_in && s % config.refit_every == 0 {
            let (a, b) = fit_hyperparameters(&state);
            state.alpha = a;
            state.beta = b;
        }
    }
    Ok(state)
}

/// Collapsed Gibbs LDA; point estimates from the final state.
pub fn gibbs_train<R: Rng + ?Sized>(
    x: &CountMatrix,
    n_topics: usize,
    config: &GibbsConfig,
    rng: &mut R,
) -> Result<TopicModel> {
    Ok(gibbs_chain(x, n_topics, config, rng)?.estimate())
}

/// Topic proportions of new documents under a trained chain, whose
/// topic-term counts stay fixed.
pub fn fold_in<R: Rng + ?Sized>(
    trained: &GibbsState,
    x: &CountMatrix,
    sweeps: usize,
    rng: &mut R,
) -> Result<TopicModel> {
    if x.n_terms() != trained.n_terms {
        return Err(Error::Config(format!(
            "documents have {} terms but the model has {}",
            x.n_terms(),
            trained.n_terms
        )));
    }
    let mut state = GibbsState::new(x, trained.n_topics, trained.alpha, trained.beta, rng)?;
    state.frozen = Some((trained.n_kj.clone(), trained.n_k.clone()));
    for _ in 0..sweeps {
        state.sweep(rng);
    }
    let theta = state.estimate().theta;
    Ok(TopicModel {
        theta,
        phi: trained.estimate().phi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdaMode {
    /// Trained on the target support alone.
    Individual,
    /// Trained on all training corpora; target documents folded in.
    All,
}

#[derive(Debug, Clone)]
pub struct LdaOutcome {
    pub perplexity: f64,
    pub model: TopicModel,
}

pub fn lda_baseline<R: Rng + ?Sized>(
    mode: LdaMode,
    split: &DataSplit,
    n_topics: usize,
    config: &GibbsConfig,
    rng: &mut R,
) -> Result<LdaOutcome> {
    let model = match mode {
        LdaMode::Individual => gibbs_train(&split.target_support, n_topics, config, rng)?,
        LdaMode::All => {
            let all = split.training.concatenated();
            let trained = gibbs_chain(&all, n_topics, config, rng)?;
            fold_in(&trained, &split.target_support, config.fold_in_sweeps, rng)?
        }
    };
    Ok(LdaOutcome {
        perplexity: perplexity(&split.target_eval, &model)?,
        model,
    })
}
