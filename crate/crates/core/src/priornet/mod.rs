//! Networks that map support documents to Dirichlet prior parameters.
//!
//! * `f_r`, `g_r`: permutation-invariant corpus encoder,
//!   `r = g_r(mean_n f_r(x_n))`;
//! * `f_a`: per-document topic prior, `alpha_n = f_a([x_n, r])`;
//! * `f_b`: per-topic word prior, `beta_k = f_b([X^T alpha_k, r])`.
//!
//! Each network has three weight layers with ReLU after the first two;
//! `f_a` and `f_b` end in softplus. With the representation switched off
//! (or `repr_dim == 0`) the encoder is absent and `r` is dropped from the
//! inputs. The Dirichlet variant replaces all networks by two learnable
//! vectors shared across documents.

mod io;

pub use io::{read_params, write_params};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::CountMatrix;
use crate::diffcalc::{softplus_inverse, Activation, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::topicmodel::PriorPair;

/// Pre-softplus initial value for the Dirichlet variant, giving priors of 0.1.
const DIR_INIT_PRIOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    Neural,
    Dirichlet,
}

impl PriorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PriorKind::Neural => "neural",
            PriorKind::Dirichlet => "dirichlet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "neural" => Ok(PriorKind::Neural),
            "dirichlet" => Ok(PriorKind::Dirichlet),
            other => Err(Error::Config(format!("unknown prior variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub n_terms: usize,
    pub n_topics: usize,
    pub repr_dim: usize,
    pub hidden: usize,
    pub kind: PriorKind,
    pub use_representation: bool,
    /// Feed `ln(1 + x)` instead of raw counts to the networks.
    pub log_features: bool,
    pub dropout: f64,
}

impl NetConfig {
    pub fn has_encoder(&self) -> bool {
        self.kind == PriorKind::Neural && self.use_representation && self.repr_dim > 0
    }

    fn validate(&self) -> Result<()> {
        if self.n_terms == 0 || self.n_topics == 0 {
            return Err(Error::Config("need at least one term and one topic".into()));
        }
        if self.kind == PriorKind::Neural && self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Names and shapes of every tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        let mut mlp = |name: &str, sizes: [usize; 4]| {
            for l in 0..3 {
                out.push((format!("{name}.{l}.weight"), (sizes[l], sizes[l + 1])));
                out.push((format!("{name}.{l}.bias"), (1, sizes[l + 1])));
            }
        };
        let (j, k, h, m) = (self.n_terms, self.n_topics, self.hidden, self.repr_dim);
        match self.kind {
            PriorKind::Dirichlet => {
                out.push(("dir.alpha".into(), (1, k)));
                out.push(("dir.beta".into(), (k, j)));
            }
            PriorKind::Neural => {
                let extra = if self.has_encoder() {
                    mlp("f_r", [j, h, h, h]);
                    mlp("g_r", [h, h, h, m]);
                    m
                } else {
                    0
                };
                mlp("f_a", [j + extra, h, h, k]);
                mlp("f_b", [j + extra, h, h, j]);
            }
        }
        out
    }
}

/// All trainable tensors of one prior generator.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorNetParams {
    config: NetConfig,
    seed: u64,
    tensors: Vec<Tensor>,
}

impl PriorNetParams {
    /// He-style initialization (zero-mean normal, std `sqrt(2 / fan_in)`,
    /// zero biases); the Dirichlet variant starts at priors of 0.1.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init_dir = softplus_inverse(DIR_INIT_PRIOR);
        let tensors = config
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                if name.starts_with("dir.") {
                    Tensor::from_elem(shape, init_dir)
                } else if name.ends_with(".bias") {
                    Tensor::zeros(shape)
                } else {
                    let std = (2.0 / shape.0.max(1) as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("finite std");
                    Tensor::from_shape_fn(shape, |_| normal.sample(&mut rng))
                }
            })
            .collect();
        Ok(Self { config, seed, tensors })
    }

    pub(crate) fn from_parts(config: NetConfig, seed: u64, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != tensors.len() {
            return Err(Error::Contract(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.dim() != *shape {
                return Err(Error::Dimension {
                    op: "PriorNetParams",
                    lhs: *shape,
                    rhs: t.dim(),
                });
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("tensor {name} has non-finite values")));
            }
        }
        Ok(Self { config, seed, tensors })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Puts every tensor on `graph` as a differentiable leaf.
    pub fn bind(&self, graph: &mut Graph) -> BoundParams {
        self.bind_with(graph, true)
    }

    /// Puts every tensor on `graph` as a constant.
    pub fn bind_frozen(&self, graph: &mut Graph) -> BoundParams {
        self.bind_with(graph, false)
    }

    fn bind_with(&self, graph: &mut Graph, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect();
        BoundParams {
            config: self.config.clone(),
            vars,
        }
    }
}

/// Parameter tensors placed on a particular [`Graph`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    config: NetConfig,
    vars: Vec<Var>,
}

/// Support counts placed on a graph: raw counts for pooling and the
/// (possibly transformed) network features.
#[derive(Debug, Clone, Copy)]
pub struct SupportNodes {
    pub counts: Var,
    pub features: Var,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    fn mlp_start(&self, name: &str) -> usize {
        let offset = if self.config.has_encoder() { 12 } else { 0 };
        match name {
            "f_r" => 0,
            "g_r" => 6,
            "f_a" => offset,
            "f_b" => offset + 6,
            _ => unreachable!("unknown network {name}"),
        }
    }

    fn mlp<R: Rng + ?Sized>(
        &self,
        graph: &mut Graph,
        name: &str,
        input: Var,
        last: Activation,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let p = &self.vars[self.mlp_start(name)..self.mlp_start(name) + 6];
        let rate = self.config.dropout;
        let h = graph.dense(input, p[0], p[1], Activation::Relu)?;
        let h = graph.dropout(h, rate, training, rng)?;
        let h = graph.dense(h, p[2], p[3], Activation::Relu)?;
        let h = graph.dropout(h, rate, training, rng)?;
        graph.dense(h, p[4], p[5], last)
    }

    /// Places the support counts on `graph`.
    pub fn support(&self, graph: &mut Graph, x: &CountMatrix) -> Result<SupportNodes> {
        if x.n_terms() != self.config.n_terms {
            return Err(Error::Config(format!(
                "data has {} terms but the prior networks expect {}",
                x.n_terms(),
                self.config.n_terms
            )));
        }
        if x.n_docs() == 0 {
            return Err(Error::Contract("support must contain at least one document".into()));
        }
        let dense = x.to_dense();
        let features = if self.config.log_features {
            graph.constant(dense.mapv(f64::ln_1p))
        } else {
            graph.constant(dense.clone())
        };
        let counts = graph.constant(dense);
        Ok(SupportNodes { counts, features })
    }

    /// Corpus representation `r` (`1 × repr_dim`), or `None` when the
    /// encoder is disabled.
    pub fn encode_corpus<R: Rng + ?Sized>(
        &self,
        graph: &mut Graph,
        support: SupportNodes,
        training: bool,
        rng: &mut R,
    ) -> Result<Option<Var>> {
        if !self.config.has_encoder() {
            return Ok(None);
        }
        let per_doc = self.mlp(graph, "f_r", support.features, Activation::Identity, training, rng)?;
        let pooled = graph.mean_rows(per_doc)?;
        Ok(Some(self.mlp(
            graph,
            "g_r",
            pooled,
            Activation::Identity,
            training,
            rng,
        )?))
    }

    fn with_repr(&self, graph: &mut Graph, input: Var, repr: Option<Var>) -> Result<Var> {
        match repr {
            Some(r) => {
                let rows = graph.shape(input).0;
                let r = graph.broadcast_rows(r, rows)?;
                graph.concat_cols(input, r)
            }
            None => Ok(input),
        }
    }

    /// `N × K` topic-proportion priors.
    pub fn generate_alpha<R: Rng + ?Sized>(
        &self,
        graph: &mut Graph,
        support: SupportNodes,
        repr: Option<Var>,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let input = self.with_repr(graph, support.features, repr)?;
        self.mlp(graph, "f_a", input, Activation::Softplus, training, rng)
    }

    /// `K × J` word priors from the alpha-weighted pooled counts.
    pub fn generate_beta<R: Rng + ?Sized>(
        &self,
        graph: &mut Graph,
        support: SupportNodes,
        alpha: Var,
        repr: Option<Var>,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let alpha_t = graph.transpose(alpha);
        let pooled = graph.matmul(alpha_t, support.features)?;
        let input = self.with_repr(graph, pooled, repr)?;
        self.mlp(graph, "f_b", input, Activation::Softplus, training, rng)
    }

    /// Full prior pipeline for the configured variant; returns the
    /// `(alpha, beta)` nodes.
    pub fn generate_priors<R: Rng + ?Sized>(
        &self,
        graph: &mut Graph,
        support: SupportNodes,
        training: bool,
        rng: &mut R,
    ) -> Result<(Var, Var)> {
        match self.config.kind {
            PriorKind::Dirichlet => {
                let n = graph.shape(support.counts).0;
                let a = graph.softplus(self.vars[0]);
                let alpha = graph.broadcast_rows(a, n)?;
                let beta = graph.softplus(self.vars[1]);
                Ok((alpha, beta))
            }
            PriorKind::Neural => {
                let repr = self.encode_corpus(graph, support, training, rng)?;
                let alpha = self.generate_alpha(graph, support, repr, training, rng)?;
                let beta = self.generate_beta(graph, support, alpha, repr, training, rng)?;
                Ok((alpha, beta))
            }
        }
    }
}

/// Corpus representation of `x` as a `1 × repr_dim` tensor (`None` when
/// the encoder is disabled).
pub fn encode_corpus<R: Rng + ?Sized>(
    x: &CountMatrix,
    params: &PriorNetParams,
    training: bool,
    rng: &mut R,
) -> Result<Option<Tensor>> {
    let mut g = Graph::new();
    let bound = params.bind_frozen(&mut g);
    let support = bound.support(&mut g, x)?;
    Ok(bound
        .encode_corpus(&mut g, support, training, rng)?
        .map(|r| g.value(r).clone()))
}

/// Priors for the support `x`.
pub fn generate_priors<R: Rng + ?Sized>(
    x: &CountMatrix,
    params: &PriorNetParams,
    training: bool,
    rng: &mut R,
) -> Result<PriorPair> {
    let mut g = Graph::new();
    let bound = params.bind_frozen(&mut g);
    let support = bound.support(&mut g, x)?;
    let (alpha, beta) = bound.generate_priors(&mut g, support, training, rng)?;
    Ok(PriorPair {
        alpha: g.value(alpha).clone(),
        beta: g.value(beta).clone(),
    })
}
