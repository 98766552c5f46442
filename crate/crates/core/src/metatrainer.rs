//! Episodic meta-training of the prior networks and the test-phase
//! evaluation path shared by every network-based method.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{make_target_split, split_words, CorpusSet, CountMatrix};
use crate::diffcalc::{AdamState, Graph, Var};
use crate::error::{Error, Result};
use crate::priornet::{self, BoundParams, NetConfig, PriorKind, PriorNetParams};
use crate::topicmodel::{em_unroll, log_likelihood_node, perplexity, run_em, EmMode, PriorPair, TopicModel};

const MAX_EPISODE_ATTEMPTS: usize = 100;
const TRAIN_STREAM: u64 = 1;
const VALIDATION_STREAM: u64 = 2;

/// Every estimation method the toolkit can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Ours,
    Nn,
    NnR,
    NnE,
    NnF,
    NnRF,
    Dir,
    DirE,
    DirF,
    LdaInd,
    LdaAll,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Ours,
        Method::Nn,
        Method::NnR,
        Method::NnE,
        Method::NnF,
        Method::NnRF,
        Method::Dir,
        Method::DirE,
        Method::DirF,
        Method::LdaInd,
        Method::LdaAll,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Nn => "nn",
            Method::NnR => "nn-r",
            Method::NnE => "nn-e",
            Method::NnF => "nn-f",
            Method::NnRF => "nn-rf",
            Method::Dir => "dir",
            Method::DirE => "dir-e",
            Method::DirF => "dir-f",
            Method::LdaInd => "lda-ind",
            Method::LdaAll => "lda-all",
        }
    }

    /// Network variant, or `None` for the Gibbs-sampling baselines.
    pub fn variant(self) -> Option<Variant> {
        let v = |kind, use_representation, use_em_layers, fine_tune_at_test| {
            Some(Variant {
                kind,
                use_representation,
                use_em_layers,
                fine_tune_at_test,
            })
        };
        use PriorKind::{Dirichlet, Neural};
        match self {
            Method::Ours => v(Neural, true, true, false),
            Method::Nn => v(Neural, false, false, false),
            Method::NnR => v(Neural, true, false, false),
            Method::NnE => v(Neural, false, true, false),
            Method::NnF => v(Neural, false, false, true),
            Method::NnRF => v(Neural, true, false, true),
            Method::Dir => v(Dirichlet, false, false, false),
            Method::DirE => v(Dirichlet, false, true, false),
            Method::DirF => v(Dirichlet, false, false, true),
            Method::LdaInd | Method::LdaAll => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// Ablation switches of a network-based method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub kind: PriorKind,
    pub use_representation: bool,
    /// Train (and test) through `em_steps` EM layers.
    pub use_em_layers: bool,
    /// Train without EM layers but run `em_steps` EM steps at test time.
    pub fine_tune_at_test: bool,
}

impl Variant {
    /// EM steps inside the training loss.
    pub fn train_steps(&self, em_steps: usize) -> usize {
        if self.use_em_layers {
            em_steps
        } else {
            0
        }
    }

    /// EM steps when fitting a target corpus.
    pub fn test_steps(&self, em_steps: usize) -> usize {
        if self.use_em_layers || self.fine_tune_at_test {
            em_steps
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub topics: usize,
    pub em_steps: usize,
    pub support_docs: usize,
    pub support_rate: f64,
    /// Held-out word fraction of validation episodes.
    pub heldout: f64,
    pub hidden: usize,
    pub repr_dim: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    /// Validations without improvement before stopping.
    pub patience: usize,
    /// Epochs between validations.
    pub val_interval: usize,
    pub val_episodes: usize,
    pub log_features: bool,
    pub variant: Variant,
    pub seed: u64,
}

impl EpisodeConfig {
    pub fn new(method: Method) -> Result<Self> {
        let variant = method
            .variant()
            .ok_or_else(|| Error::Config(format!("method '{method}' has no prior networks")))?;
        Ok(Self {
            topics: 20,
            em_steps: 10,
            support_docs: 3,
            support_rate: 0.8,
            heldout: 0.2,
            hidden: 256,
            repr_dim: 256,
            learning_rate: 1e-3,
            dropout: 0.1,
            max_epochs: 1000,
            patience: 20,
            val_interval: 10,
            val_episodes: 50,
            log_features: false,
            variant,
            seed: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.topics == 0 {
            return fail("topics must be at least 1");
        }
        if self.support_docs == 0 {
            return fail("support_docs must be at least 1");
        }
        if !(self.support_rate > 0.0 && self.support_rate < 1.0) {
            return fail("support_rate must lie strictly between 0 and 1");
        }
        if !(self.heldout > 0.0 && self.heldout < 1.0) {
            return fail("heldout must lie strictly between 0 and 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.val_interval == 0 {
            return fail("val_interval must be at least 1");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        Ok(())
    }

    pub fn net_config(&self, n_terms: usize) -> NetConfig {
        NetConfig {
            n_terms,
            n_topics: self.topics,
            repr_dim: self.repr_dim,
            hidden: self.hidden,
            kind: self.variant.kind,
            use_representation: self.variant.use_representation,
            log_features: self.log_features,
            dropout: self.dropout,
        }
    }

    pub fn init_params(&self, n_terms: usize) -> Result<PriorNetParams> {
        self.validate()?;
        PriorNetParams::init(self.net_config(n_terms), self.seed)
    }
}

fn check_params(params: &PriorNetParams, config: &EpisodeConfig, n_terms: usize) -> Result<()> {
    let expected = config.net_config(params.config().n_terms);
    if params.config() != &expected {
        return Err(Error::Config(
            "parameters were built for a different network configuration".into(),
        ));
    }
    if params.config().n_terms != n_terms {
        return Err(Error::Config(format!(
            "data has {n_terms} terms but the parameters expect {}",
            params.config().n_terms
        )));
    }
    Ok(())
}

/// Records an episode on a fresh graph; returns the graph, the bound
/// parameters and the loss node.
fn episode_graph<R: Rng + ?Sized>(
    support: &CountMatrix,
    query: &CountMatrix,
    params: &PriorNetParams,
    steps: usize,
    training: bool,
    rng: &mut R,
) -> Result<(Graph, BoundParams, Var)> {
    if query.n_docs() != support.n_docs() || query.n_terms() != support.n_terms() {
        return Err(Error::Dimension {
            op: "episode",
            lhs: (support.n_docs(), support.n_terms()),
            rhs: (query.n_docs(), query.n_terms()),
        });
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let s = bound.support(&mut g, support)?;
    let (alpha, beta) = bound.generate_priors(&mut g, s, training, rng)?;
    let (theta, phi) = em_unroll(&mut g, s.counts, alpha, beta, steps)?;
    let q = g.constant(query.to_dense());
    let ll = log_likelihood_node(&mut g, q, theta, phi)?;
    let loss = g.scale(ll, -1.0);
    Ok((g, bound, loss))
}

/// Negative log-likelihood of `query` under the topic model fitted to
/// `support` through the prior networks.
pub fn episode_loss<R: Rng + ?Sized>(
    support: &CountMatrix,
    query: &CountMatrix,
    params: &PriorNetParams,
    config: &EpisodeConfig,
    training: bool,
    rng: &mut R,
) -> Result<f64> {
    check_params(params, config, support.n_terms())?;
    let steps = config.variant.train_steps(config.em_steps);
    let (g, _, loss) = episode_graph(support, query, params, steps, training, rng)?;
    g.scalar(loss)
}

/// [`episode_loss`] together with its gradient for every parameter tensor.
pub fn episode_loss_grad<R: Rng + ?Sized>(
    support: &CountMatrix,
    query: &CountMatrix,
    params: &PriorNetParams,
    config: &EpisodeConfig,
    training: bool,
    rng: &mut R,
) -> Result<(f64, Vec<crate::diffcalc::Tensor>)> {
    check_params(params, config, support.n_terms())?;
    let steps = config.variant.train_steps(config.em_steps);
    let (g, bound, loss) = episode_graph(support, query, params, steps, training, rng)?;
    let grads = g.grad(loss, bound.vars())?;
    Ok((g.scalar(loss)?, grads))
}

/// Result of fitting one target corpus.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub perplexity: f64,
    pub model: TopicModel,
    pub priors: PriorPair,
}

/// Fits the target support with the variant's test-time EM and scores the
/// held-out words.
pub fn evaluate_target(
    support: &CountMatrix,
    eval: &CountMatrix,
    params: &PriorNetParams,
    config: &EpisodeConfig,
) -> Result<Evaluation> {
    let steps = config.variant.test_steps(config.em_steps);
    evaluate_target_steps(support, eval, params, config, steps)
}

/// [`evaluate_target`] with an explicit number of EM steps.
pub fn evaluate_target_steps(
    support: &CountMatrix,
    eval: &CountMatrix,
    params: &PriorNetParams,
    config: &EpisodeConfig,
    steps: usize,
) -> Result<Evaluation> {
    check_params(params, config, support.n_terms())?;
    if eval.n_terms() != support.n_terms() || eval.n_docs() != support.n_docs() {
        return Err(Error::Dimension {
            op: "evaluate_target",
            lhs: (support.n_docs(), support.n_terms()),
            rhs: (eval.n_docs(), eval.n_terms()),
        });
    }
    // Dropout is off, so the generator never draws from this stream.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let priors = priornet::generate_priors(support, params, false, &mut rng)?;
    let model = run_em(support, &priors, EmMode::Fixed(steps))?;
    let perplexity = perplexity(eval, &model)?;
    Ok(Evaluation {
        perplexity,
        model,
        priors,
    })
}

/// Picks `n` documents, without replacement when the corpus is large enough.
pub fn sample_docs<R: Rng + ?Sized>(x: &CountMatrix, n: usize, rng: &mut R) -> Result<CountMatrix> {
    let total = x.n_docs();
    if total == 0 {
        return Err(Error::Data("cannot sample documents from an empty corpus".into()));
    }
    let picked: Vec<usize> = if total >= n {
        index::sample(rng, total, n).into_vec()
    } else {
        (0..n).map(|_| rng.random_range(0..total)).collect()
    };
    Ok(x.select(&picked))
}

/// Draws a training episode: `N` documents split into support and query
/// words, redrawn while either side is empty.
pub fn sample_episode<R: Rng + ?Sized>(
    x: &CountMatrix,
    config: &EpisodeConfig,
    rng: &mut R,
) -> Result<(CountMatrix, CountMatrix)> {
    for _ in 0..MAX_EPISODE_ATTEMPTS {
        let docs = sample_docs(x, config.support_docs, rng)?;
        let (support, query) = split_words(&docs, config.support_rate, rng)?;
        if support.total() > 0 && query.total() > 0 {
            return Ok((support, query));
        }
    }
    Err(Error::Data(format!(
        "no episode with nonempty support and query after {MAX_EPISODE_ATTEMPTS} attempts"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub epoch: usize,
    pub loss: Option<f64>,
    pub val_perplexity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_perplexity: Option<f64>,
    pub wall_clock_seconds: f64,
}

impl TrainLog {
    pub fn validation_curve(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.val_perplexity.map(|p| (r.epoch, p)))
            .collect()
    }

    /// Running minimum of the validation perplexity.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.validation_curve()
            .into_iter()
            .map(|(_, p)| {
                best = best.min(p);
                best
            })
            .collect()
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch\tloss\tval_perplexity")?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.records {
            writeln!(w, "{}\t{}\t{}", r.epoch, opt(r.loss), opt(r.val_perplexity))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_tsv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }
}

/// Fixed validation episodes, drawn once per training run.
fn validation_episodes(validation: &CorpusSet, config: &EpisodeConfig) -> Result<Vec<(CountMatrix, CountMatrix)>> {
    if validation.is_empty() {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(VALIDATION_STREAM);
    (0..config.val_episodes)
        .map(|_| {
            let corpus = &validation.corpora[rng.random_range(0..validation.len())];
            let docs = sample_docs(&corpus.counts, config.support_docs, &mut rng)?;
            make_target_split(&docs, config.heldout, &mut rng)
        })
        .collect()
}

/// Mean validation perplexity. Episodes are scored in parallel and summed
/// in their fixed order.
pub fn validation_perplexity(
    episodes: &[(CountMatrix, CountMatrix)],
    params: &PriorNetParams,
    config: &EpisodeConfig,
) -> Result<f64> {
    let scores: Vec<f64> = episodes
        .par_iter()
        .map(|(s, e)| evaluate_target(s, e, params, config).map(|ev| ev.perplexity))
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Episodic training with early stopping on validation perplexity.
///
/// One epoch is one episode and one Adam step. Validation runs before the
/// first step and every `val_interval` epochs; the best parameters seen at
/// a validation are returned. Without validation corpora the final
/// parameters are returned.
pub fn train(
    training: &CorpusSet,
    validation: &CorpusSet,
    config: &EpisodeConfig,
) -> Result<(PriorNetParams, TrainLog)> {
    let start = Instant::now();
    config.validate()?;
    if training.is_empty() {
        return Err(Error::Data("no training corpora".into()));
    }
    if let Some(c) = training
        .corpora
        .iter()
        .chain(&validation.corpora)
        .find(|c| c.counts.n_docs() == 0)
    {
        return Err(Error::Data(format!("corpus '{}' has no documents", c.name)));
    }
    if validation.n_terms() != training.n_terms() && !validation.is_empty() {
        return Err(Error::Config("training and validation vocabularies differ".into()));
    }

    let mut params = config.init_params(training.n_terms())?;
    let mut adam = AdamState::new(params.tensors(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(TRAIN_STREAM);
    let val_episodes = validation_episodes(validation, config)?;

    let mut records = Vec::new();
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_ppl = None;
    if !val_episodes.is_empty() {
        let ppl = validation_perplexity(&val_episodes, &params, config)?;
        best_ppl = Some(ppl);
        records.push(TrainRecord {
            epoch: 0,
            loss: None,
            val_perplexity: Some(ppl),
        });
    }

    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        let corpus = &training.corpora[rng.random_range(0..training.len())];
        let (support, query) = sample_episode(&corpus.counts, config, &mut rng)?;
        let (loss, grads) = episode_loss_grad(&support, &query, &params, config, true, &mut rng)?;
        if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Data(format!("non-finite loss or gradient at epoch {epoch}")));
        }
        adam.step(params.tensors_mut(), &grads)?;

        let mut record = TrainRecord {
            epoch,
            loss: Some(loss),
            val_perplexity: None,
        };
        let validate_now = !val_episodes.is_empty() && epoch % config.val_interval == 0;
        if validate_now {
            let ppl = validation_perplexity(&val_episodes, &params, config)?;
            record.val_perplexity = Some(ppl);
            if best_ppl.is_none_or(|b| ppl < b) {
                best_ppl = Some(ppl);
                best = params.clone();
                best_epoch = epoch;
                stale = 0;
            } else {
                stale += 1;
            }
        }
        records.push(record);
        if validate_now && stale >= config.patience {
            log::debug!("early stop at epoch {epoch}, best epoch {best_epoch}");
            break;
        }
    }
    if val_episodes.is_empty() {
        best = params;
        best_epoch = records.last().map_or(0, |r| r.epoch);
    }
    Ok((
        best,
        TrainLog {
            records,
            best_epoch,
            best_val_perplexity: best_ppl,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}
