//! MAP-EM for a mixture-of-topics model under Dirichlet priors.
//!
//! The prior densities use exponent `alpha` (not `alpha - 1`), so the mode
//! of the prior is `alpha / sum(alpha)` and the M-step adds the prior
//! parameters directly to the expected counts.
//!
//! Two routes are provided: plain `f64` functions on sparse counts, and
//! [`em_unroll`], which records the same updates in matrix form on a
//! [`Graph`] so that gradients flow back into the prior parameters.

use crate::corpus::CountMatrix;
use crate::diffcalc::{guarded_ln, Graph, Tensor, Var, EPS_DIV};
use crate::error::{Error, Result};

/// Additive guard used in every normalization.
pub const EPS_INIT: f64 = 1e-10;

/// Row sums must be within this of 1.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Topic proportions `theta` (`N × K`) and word distributions `phi`
/// (`K × J`), both row-stochastic.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    pub theta: Tensor,
    pub phi: Tensor,
}

/// Dirichlet parameters: `alpha` (`N × K`) and `beta` (`K × J`), all `>= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorPair {
    pub alpha: Tensor,
    pub beta: Tensor,
}

/// Per-token topic posteriors, stored only at the nonzero cells of the
/// count matrix (in the matrix's entry order).
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibility {
    n_topics: usize,
    cells: Vec<(usize, usize)>,
    gamma: Vec<f64>,
}

impl Responsibility {
    pub fn n_topics(&self) -> usize {
        self.n_topics
    }

    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    /// Topic distribution of the `i`-th stored cell.
    pub fn at(&self, i: usize) -> &[f64] {
        &self.gamma[i * self.n_topics..(i + 1) * self.n_topics]
    }

    /// Builds from explicit values, one `K`-vector per nonzero cell of `x`.
    pub fn from_values(x: &CountMatrix, n_topics: usize, values: Vec<Vec<f64>>) -> Result<Self> {
        let cells: Vec<(usize, usize)> = x.entries().map(|(n, j, _)| (n, j)).collect();
        if values.len() != cells.len() || values.iter().any(|v| v.len() != n_topics) {
            return Err(Error::Contract(
                "responsibility values do not match the count matrix".into(),
            ));
        }
        Ok(Self {
            n_topics,
            cells,
            gamma: values.into_iter().flatten().collect(),
        })
    }

    /// Largest deviation of a per-cell topic sum from 1.
    pub fn max_normalization_error(&self) -> f64 {
        (0..self.cells.len())
            .map(|i| (self.at(i).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    fn check_against(&self, x: &CountMatrix) -> Result<()> {
        if self.cells.len() != x.nnz() || !x.entries().zip(&self.cells).all(|((n, j, _), &c)| (n, j) == c) {
            return Err(Error::Contract(
                "responsibility cells do not match the count matrix".into(),
            ));
        }
        if self.gamma.iter().any(|&g| g < 0.0) || self.max_normalization_error() > NORMALIZATION_TOL {
            return Err(Error::Contract(
                "responsibilities are not normalized over topics".into(),
            ));
        }
        Ok(())
    }
}

impl TopicModel {
    pub fn n_docs(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n_topics(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n_terms(&self) -> usize {
        self.phi.ncols()
    }

    /// Largest deviation of a row sum of `theta` or `phi` from 1.
    pub fn max_normalization_error(&self) -> f64 {
        self.theta
            .rows()
            .into_iter()
            .chain(self.phi.rows())
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Probability of term `j` in document `n`.
    pub fn word_probability(&self, n: usize, j: usize) -> f64 {
        self.theta.row(n).dot(&self.phi.column(j))
    }

    fn check(&self, x: &CountMatrix) -> Result<()> {
        let (n, k) = self.theta.dim();
        let (k2, j) = self.phi.dim();
        if k != k2 {
            return Err(Error::Dimension {
                op: "topic model",
                lhs: (n, k),
                rhs: (k2, j),
            });
        }
        if x.n_docs() != n || x.n_terms() != j {
            return Err(Error::Dimension {
                op: "counts vs topic model",
                lhs: (x.n_docs(), x.n_terms()),
                rhs: (n, j),
            });
        }
        Ok(())
    }
}

impl PriorPair {
    fn check(&self, model: &TopicModel) -> Result<()> {
        if self.alpha.dim() != model.theta.dim() || self.beta.dim() != model.phi.dim() {
            return Err(Error::Dimension {
                op: "priors vs topic model",
                lhs: self.alpha.dim(),
                rhs: model.theta.dim(),
            });
        }
        Ok(())
    }
}

/// `sum_nj x_nj ln sum_k theta_nk phi_kj`.
pub fn log_likelihood(x: &CountMatrix, model: &TopicModel) -> Result<f64> {
    model.check(x)?;
    Ok(x.entries()
        .map(|(n, j, c)| c as f64 * guarded_ln(model.word_probability(n, j)))
        .sum())
}

fn prior_term(params: &Tensor, probs: &Tensor) -> f64 {
    params
        .iter()
        .zip(probs.iter())
        .filter(|(&a, _)| a != 0.0)
        .map(|(&a, &p)| a * guarded_ln(p))
        .sum()
}

/// MAP objective: log-likelihood plus `sum alpha ln theta + sum beta ln phi`
/// (normalizing constants of the priors dropped).
pub fn log_posterior(x: &CountMatrix, model: &TopicModel, priors: &PriorPair) -> Result<f64> {
    priors.check(model)?;
    Ok(log_likelihood(x, model)? + prior_term(&priors.alpha, &model.theta) + prior_term(&priors.beta, &model.phi))
}

/// Jensen lower bound of [`log_posterior`] for the responsibilities `gamma`.
pub fn lower_bound_q(x: &CountMatrix, model: &TopicModel, gamma: &Responsibility, priors: &PriorPair) -> Result<f64> {
    model.check(x)?;
    priors.check(model)?;
    gamma.check_against(x)?;
    if gamma.n_topics() != model.n_topics() {
        return Err(Error::Contract(
            "responsibility topic count differs from the model".into(),
        ));
    }
    let mut q = 0.0;
    for (i, (n, j, c)) in x.entries().enumerate() {
        let mut cell = 0.0;
        for (k, &g) in gamma.at(i).iter().enumerate() {
            if g > 0.0 {
                cell += g * (guarded_ln(model.theta[[n, k]] * model.phi[[k, j]]) - g.ln());
            }
        }
        q += c as f64 * cell;
    }
    Ok(q + prior_term(&priors.alpha, &model.theta) + prior_term(&priors.beta, &model.phi))
}

fn normalize_rows(t: &Tensor) -> Tensor {
    let mut out = t.mapv(|v| v + EPS_INIT);
    for mut row in out.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Starts EM at the prior mode.
pub fn init_params(priors: &PriorPair) -> Result<TopicModel> {
    if priors.alpha.ncols() != priors.beta.nrows() {
        return Err(Error::Dimension {
            op: "init_params",
            lhs: priors.alpha.dim(),
            rhs: priors.beta.dim(),
        });
    }
    Ok(TopicModel {
        theta: normalize_rows(&priors.alpha),
        phi: normalize_rows(&priors.beta),
    })
}

pub fn e_step(x: &CountMatrix, model: &TopicModel) -> Result<Responsibility> {
    model.check(x)?;
    let k_count = model.n_topics();
    let mut cells = Vec::with_capacity(x.nnz());
    let mut gamma = Vec::with_capacity(x.nnz() * k_count);
    for (n, j, _) in x.entries() {
        let start = gamma.len();
        gamma.extend((0..k_count).map(|k| model.theta[[n, k]] * model.phi[[k, j]]));
        let denom = gamma[start..].iter().sum::<f64>().max(EPS_DIV);
        gamma[start..].iter_mut().for_each(|g| *g /= denom);
        cells.push((n, j));
    }
    Ok(Responsibility {
        n_topics: k_count,
        cells,
        gamma,
    })
}

pub fn m_step(x: &CountMatrix, gamma: &Responsibility, priors: &PriorPair) -> Result<TopicModel> {
    gamma.check_against(x)?;
    let (n_docs, k_count) = priors.alpha.dim();
    if x.n_docs() != n_docs || priors.beta.dim() != (k_count, x.n_terms()) || gamma.n_topics() != k_count {
        return Err(Error::Dimension {
            op: "m_step",
            lhs: (x.n_docs(), x.n_terms()),
            rhs: priors.beta.dim(),
        });
    }
    let mut theta = priors.alpha.clone();
    let mut phi = priors.beta.clone();
    for (i, (n, j, c)) in x.entries().enumerate() {
        for (k, &g) in gamma.at(i).iter().enumerate() {
            let w = c as f64 * g;
            theta[[n, k]] += w;
            phi[[k, j]] += w;
        }
    }
    Ok(TopicModel {
        theta: normalize_rows(&theta),
        phi: normalize_rows(&phi),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmMode {
    /// Exactly this many E/M alternations.
    Fixed(usize),
    /// Stop once the relative change of the objective drops below `tol`,
    /// or after `max_steps`.
    UntilConverged { max_steps: usize, tol: f64 },
}

impl Default for EmMode {
    fn default() -> Self {
        EmMode::UntilConverged {
            max_steps: 1000,
            tol: 1e-6,
        }
    }
}

/// Initializes at the prior mode and runs E/M alternations.
pub fn run_em(x: &CountMatrix, priors: &PriorPair, mode: EmMode) -> Result<TopicModel> {
    let mut model = init_params(priors)?;
    model.check(x)?;
    match mode {
        EmMode::Fixed(steps) => {
            for _ in 0..steps {
                let gamma = e_step(x, &model)?;
                model = m_step(x, &gamma, priors)?;
            }
        }
        EmMode::UntilConverged { max_steps, tol } => {
            let mut objective = log_posterior(x, &model, priors)?;
            for _ in 0..max_steps {
                let gamma = e_step(x, &model)?;
                model = m_step(x, &gamma, priors)?;
                let next = log_posterior(x, &model, priors)?;
                let delta = (next - objective).abs();
                objective = next;
                if delta < tol * objective.abs().max(1.0) {
                    break;
                }
            }
        }
    }
    Ok(model)
}

/// `exp(-loglik / tokens)` on held-out counts.
pub fn perplexity(x_eval: &CountMatrix, model: &TopicModel) -> Result<f64> {
    let tokens = x_eval.total();
    if tokens == 0 {
        return Err(Error::Contract("perplexity needs at least one held-out token".into()));
    }
    Ok((-log_likelihood(x_eval, model)? / tokens as f64).exp())
}

/// The `m` most probable terms of topic `k`, ties broken by term index.
pub fn top_terms(model: &TopicModel, k: usize, m: usize) -> Result<Vec<usize>> {
    if k >= model.n_topics() {
        return Err(Error::Contract(format!("topic {k} out of range")));
    }
    if m == 0 || m > model.n_terms() {
        return Err(Error::Contract(format!("cannot list {m} of {} terms", model.n_terms())));
    }
    let row = model.phi.row(k);
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order.truncate(m);
    Ok(order)
}

/// Records `steps` EM alternations on `graph`, starting from the prior mode.
///
/// `x` is the dense support counts (`N × J`), `alpha` is `N × K`, `beta` is
/// `K × J`. Expected counts are formed in matrix form:
/// `sum_j x_nj gamma_njk = theta_nk ((X / (Theta Phi)) Phi^T)_nk` and
/// `sum_n x_nj gamma_njk = phi_kj (Theta^T (X / (Theta Phi)))_kj`.
/// Returns the `(theta, phi)` nodes.
pub fn em_unroll(graph: &mut Graph, x: Var, alpha: Var, beta: Var, steps: usize) -> Result<(Var, Var)> {
    let mut theta = graph.normalize_rows(alpha, EPS_INIT);
    let mut phi = graph.normalize_rows(beta, EPS_INIT);
    for _ in 0..steps {
        let mix = graph.matmul(theta, phi)?;
        let ratio = graph.div_guarded(x, mix)?;
        let phi_t = graph.transpose(phi);
        let doc_side = graph.matmul(ratio, phi_t)?;
        let theta_t = graph.transpose(theta);
        let term_side = graph.matmul(theta_t, ratio)?;
        let doc_counts = graph.mul(theta, doc_side)?;
        let topic_counts = graph.mul(phi, term_side)?;
        let theta_num = graph.add(doc_counts, alpha)?;
        let phi_num = graph.add(topic_counts, beta)?;
        theta = graph.normalize_rows(theta_num, EPS_INIT);
        phi = graph.normalize_rows(phi_num, EPS_INIT);
    }
    Ok((theta, phi))
}

/// Recorded `sum x ln(Theta Phi)` for dense counts `x`.
pub fn log_likelihood_node(graph: &mut Graph, x: Var, theta: Var, phi: Var) -> Result<Var> {
    let mix = graph.matmul(theta, phi)?;
    let logs = graph.log(mix);
    let weighted = graph.mul(x, logs)?;
    Ok(graph.sum_all(weighted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn counts(rows: &[Vec<u32>]) -> CountMatrix {
        CountMatrix::from_dense(rows).unwrap()
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (CountMatrix, PriorPair) {
        let n = rng.random_range(1..=5);
        let j = rng.random_range(2..=20);
        let k = rng.random_range(1..=3);
        let rows: Vec<Vec<u32>> = (0..n)
            .map(|_| {
                (0..j)
                    .map(|_| {
                        if rng.random_bool(0.5) {
                            rng.random_range(1..6)
                        } else {
                            0
                        }
                    })
                    .collect()
            })
            .collect();
        let alpha = Tensor::from_shape_fn((n, k), |_| rng.random_range(0.0..2.0));
        let beta = Tensor::from_shape_fn((k, j), |_| rng.random_range(0.0..2.0));
        (counts(&rows), PriorPair { alpha, beta })
    }

    #[test]
    fn log_likelihood_examples() {
        let model = TopicModel {
            theta: array![[1.0]],
            phi: array![[0.25, 0.25, 0.25, 0.25]],
        };
        let zero = counts(&[vec![0, 0, 0, 0]]);
        assert_eq!(log_likelihood(&zero, &model).unwrap(), 0.0);
        let one = counts(&[vec![0, 0, 1, 0]]);
        assert!((log_likelihood(&one, &model).unwrap() - (-1.386294361)).abs() < 1e-9);
        let x = counts(&[vec![3, 1, 0, 2]]);
        let l1 = log_likelihood(&x, &model).unwrap();
        let l2 = log_likelihood(&x.scaled(2), &model).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
        let wrong = counts(&[vec![1, 0]]);
        assert!(matches!(log_likelihood(&wrong, &model), Err(Error::Dimension { .. })));
    }

    #[test]
    fn log_posterior_flat_prior_and_symmetric_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, mut priors) = random_instance(&mut rng);
        priors.alpha.fill(0.0);
        priors.beta.fill(0.0);
        let model = run_em(&x, &priors, EmMode::Fixed(2)).unwrap();
        assert_eq!(
            log_posterior(&x, &model, &priors).unwrap(),
            log_likelihood(&x, &model).unwrap()
        );

        // N = 1, K = 2, no data, alpha = (1, 1): theta = (0.5, 0.5) is the best
        let x = counts(&[vec![0, 0]]);
        let priors = PriorPair {
            alpha: array![[1.0, 1.0]],
            beta: array![[0.0, 0.0], [0.0, 0.0]],
        };
        let phi = array![[0.5, 0.5], [0.5, 0.5]];
        let at = |t: f64| {
            let m = TopicModel {
                theta: array![[t, 1.0 - t]],
                phi: phi.clone(),
            };
            log_posterior(&x, &m, &priors).unwrap()
        };
        assert!((at(0.5) - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        for t in [0.1, 0.3, 0.49, 0.51, 0.9] {
            assert!(at(t) < at(0.5));
        }
    }

    #[test]
    fn log_posterior_is_invariant_to_topic_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = counts(&[vec![1, 2, 0, 3], vec![0, 1, 4, 1]]);
        let priors = PriorPair {
            alpha: Tensor::from_shape_fn((2, 3), |_| rng.random_range(0.0..2.0)),
            beta: Tensor::from_shape_fn((3, 4), |_| rng.random_range(0.0..2.0)),
        };
        let model = run_em(&x, &priors, EmMode::Fixed(3)).unwrap();
        let perm = [2, 0, 1];
        let permute_cols = |t: &Tensor| Tensor::from_shape_fn(t.dim(), |(r, c)| t[[r, perm[c]]]);
        let permute_rows = |t: &Tensor| Tensor::from_shape_fn(t.dim(), |(r, c)| t[[perm[r], c]]);
        let pm = TopicModel {
            theta: permute_cols(&model.theta),
            phi: permute_rows(&model.phi),
        };
        let pp = PriorPair {
            alpha: permute_cols(&priors.alpha),
            beta: permute_rows(&priors.beta),
        };
        let a = log_posterior(&x, &model, &priors).unwrap();
        let b = log_posterior(&x, &pm, &pp).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn init_params_examples() {
        let p = PriorPair {
            alpha: array![[1.0, 3.0], [0.0, 0.0]],
            beta: array![[0.0, 1.0, 3.0], [1.0, 1.0, 1.0]],
        };
        let m = init_params(&p).unwrap();
        assert!((m.theta[[0, 0]] - 0.25).abs() < 1e-9);
        assert!((m.theta[[0, 1]] - 0.75).abs() < 1e-9);
        assert!((m.theta[[1, 0]] - 0.5).abs() < 1e-15);
        assert!(m.phi[[0, 0]] < 1e-9);
        assert!((m.phi[[0, 1]] - 0.25).abs() < 1e-9);
        assert!((m.phi[[0, 2]] - 0.75).abs() < 1e-9);
        assert!(m.max_normalization_error() < 1e-12);
    }

    #[test]
    fn e_step_examples() {
        let x = counts(&[vec![2, 1]]);
        let single = TopicModel {
            theta: array![[1.0]],
            phi: array![[0.3, 0.7]],
        };
        let g = e_step(&x, &single).unwrap();
        assert!((0..2).all(|i| g.at(i) == [1.0]));

        let model = TopicModel {
            theta: array![[0.5, 0.5]],
            phi: array![[0.2, 0.8], [0.6, 0.4]],
        };
        let g = e_step(&counts(&[vec![3, 0]]), &model).unwrap();
        assert!((g.at(0)[0] - 0.25).abs() < 1e-12);
        assert!((g.at(0)[1] - 0.75).abs() < 1e-12);

        let flat = TopicModel {
            theta: array![[0.2, 0.8]],
            phi: array![[0.5, 0.5], [0.5, 0.5]],
        };
        let g = e_step(&x, &flat).unwrap();
        assert!((g.at(1)[0] - 0.2).abs() < 1e-12 && (g.at(1)[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn m_step_examples() {
        let x = counts(&[vec![2, 0]]);
        let gamma = Responsibility::from_values(&x, 2, vec![vec![0.5, 0.5]]).unwrap();
        let zero = PriorPair {
            alpha: Tensor::zeros((1, 2)),
            beta: Tensor::zeros((2, 2)),
        };
        let m = m_step(&x, &gamma, &zero).unwrap();
        assert!((m.theta[[0, 0]] - 0.5).abs() < 1e-9);
        for k in 0..2 {
            assert!((m.phi[[k, 0]] - 1.0).abs() < 1e-9);
            assert!(m.phi[[k, 1]] < 1e-9);
        }

        let empty = counts(&[vec![0, 0]]);
        let gamma = Responsibility::from_values(&empty, 2, vec![]).unwrap();
        let prior_only = PriorPair {
            alpha: array![[1.0, 3.0]],
            beta: Tensor::zeros((2, 2)),
        };
        let m = m_step(&empty, &gamma, &prior_only).unwrap();
        assert!((m.theta[[0, 0]] - 0.25).abs() < 1e-9);
        assert!((m.theta[[0, 1]] - 0.75).abs() < 1e-9);
        assert!(m.max_normalization_error() < 1e-12);

        let bad = Responsibility::from_values(&x, 2, vec![vec![0.7, 0.7]]).unwrap();
        assert!(matches!(m_step(&x, &bad, &zero), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_steps_is_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (x, priors) = random_instance(&mut rng);
        assert_eq!(
            run_em(&x, &priors, EmMode::Fixed(0)).unwrap(),
            init_params(&priors).unwrap()
        );
    }

    #[test]
    fn single_topic_closed_form() {
        let x = counts(&[vec![3, 0, 1], vec![1, 2, 0]]);
        let priors = PriorPair {
            alpha: array![[0.4], [1.0]],
            beta: array![[0.5, 1.5, 0.0]],
        };
        let m = run_em(&x, &priors, EmMode::Fixed(1)).unwrap();
        let raw = [4.0 + 0.5, 2.0 + 1.5, 1.0];
        let total: f64 = raw.iter().sum();
        for (j, r) in raw.iter().enumerate() {
            assert!((m.phi[[0, j]] - r / total).abs() < 1e-9);
        }
    }

    #[test]
    fn q_bound_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let (x, priors) = random_instance(&mut rng);
            let model = run_em(&x, &priors, EmMode::Fixed(2)).unwrap();
            let gamma = e_step(&x, &model).unwrap();
            let l = log_posterior(&x, &model, &priors).unwrap();
            let q = lower_bound_q(&x, &model, &gamma, &priors).unwrap();
            assert!((q - l).abs() <= 1e-9, "{q} vs {l}");

            let k = model.n_topics();
            let random: Vec<Vec<f64>> = (0..x.nnz())
                .map(|_| {
                    let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
                    let s: f64 = v.iter().sum();
                    v.into_iter().map(|g| g / s).collect()
                })
                .collect();
            let other = Responsibility::from_values(&x, k, random).unwrap();
            assert!(lower_bound_q(&x, &model, &other, &priors).unwrap() <= l + 1e-9);
        }
    }

    #[test]
    fn q_with_single_topic_is_exact() {
        let x = counts(&[vec![1, 4, 0]]);
        let priors = PriorPair {
            alpha: array![[0.3]],
            beta: array![[1.0, 0.0, 2.0]],
        };
        let model = init_params(&priors).unwrap();
        let gamma = Responsibility::from_values(&x, 1, vec![vec![1.0], vec![1.0]]).unwrap();
        let q = lower_bound_q(&x, &model, &gamma, &priors).unwrap();
        assert!((q - log_posterior(&x, &model, &priors).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn em_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..200 {
            let (x, priors) = random_instance(&mut rng);
            let mut model = init_params(&priors).unwrap();
            let mut prev = log_posterior(&x, &model, &priors).unwrap();
            for _ in 0..10 {
                let gamma = e_step(&x, &model).unwrap();
                assert!(gamma.max_normalization_error() <= 1e-9);
                model = m_step(&x, &gamma, &priors).unwrap();
                assert!(model.max_normalization_error() <= 1e-9);
                let next = log_posterior(&x, &model, &priors).unwrap();
                assert!(next >= prev - 1e-8, "{next} < {prev}");
                prev = next;
            }
        }
    }

    #[test]
    fn until_converged_stops_near_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (x, priors) = random_instance(&mut rng);
        let conv = run_em(&x, &priors, EmMode::default()).unwrap();
        let more = run_em(&x, &priors, EmMode::Fixed(5000)).unwrap();
        let a = log_posterior(&x, &conv, &priors).unwrap();
        let b = log_posterior(&x, &more, &priors).unwrap();
        assert!(b >= a - 1e-8);
        assert!((b - a).abs() <= 1e-2 * a.abs().max(1.0));
    }

    #[test]
    fn perplexity_examples() {
        let j = 100;
        let uniform = TopicModel {
            theta: array![[1.0], [1.0]],
            phi: Tensor::from_elem((1, j), 1.0 / j as f64),
        };
        let mut rows = vec![vec![0u32; j]; 2];
        rows[0][3] = 5;
        rows[1][70] = 2;
        rows[1][10] = 1;
        let x = counts(&rows);
        assert!((perplexity(&x, &uniform).unwrap() - 100.0).abs() < 1e-9);

        let perfect = TopicModel {
            theta: array![[1.0, 0.0], [0.0, 1.0]],
            phi: array![[1.0, 0.0], [0.0, 1.0]],
        };
        let x = counts(&[vec![4, 0], vec![0, 2]]);
        assert!((perplexity(&x, &perfect).unwrap() - 1.0).abs() < 1e-12);

        let model = TopicModel {
            theta: array![[0.3, 0.7], [0.6, 0.4]],
            phi: array![[0.2, 0.8], [0.5, 0.5]],
        };
        let x = counts(&[vec![1, 2], vec![3, 1]]);
        let a = perplexity(&x, &model).unwrap();
        let b = perplexity(&x.scaled(2), &model).unwrap();
        assert!((a - b).abs() < 1e-12);

        let none = counts(&[vec![0, 0], vec![0, 0]]);
        assert!(matches!(perplexity(&none, &model), Err(Error::Contract(_))));
    }

    #[test]
    fn top_terms_ordering() {
        let model = TopicModel {
            theta: array![[1.0]],
            phi: array![[0.7, 0.2, 0.1]],
        };
        assert_eq!(top_terms(&model, 0, 2).unwrap(), vec![0, 1]);
        let tie = TopicModel {
            theta: array![[1.0]],
            phi: array![[0.1, 0.1, 0.3, 0.1, 0.3, 0.1]],
        };
        assert_eq!(top_terms(&tie, 0, 2).unwrap(), vec![2, 4]);
        let mut all = top_terms(&tie, 0, 6).unwrap();
        all.sort();
        assert_eq!(all, (0..6).collect::<Vec<_>>());
        assert!(top_terms(&tie, 0, 7).is_err());
    }

    #[test]
    fn unrolled_em_matches_sparse_em() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..20 {
            let (x, priors) = random_instance(&mut rng);
            let reference = run_em(&x, &priors, EmMode::Fixed(4)).unwrap();
            let mut g = Graph::new();
            let xv = g.constant(x.to_dense());
            let a = g.param(priors.alpha.clone());
            let b = g.param(priors.beta.clone());
            let (theta, phi) = em_unroll(&mut g, xv, a, b, 4).unwrap();
            let dt = (g.value(theta) - &reference.theta)
                .mapv(f64::abs)
                .fold(0.0, |m: f64, &v| m.max(v));
            let dp = (g.value(phi) - &reference.phi)
                .mapv(f64::abs)
                .fold(0.0, |m: f64, &v| m.max(v));
            assert!(dt < 1e-12 && dp < 1e-12, "{dt} {dp}");
            let ll = log_likelihood_node(&mut g, xv, theta, phi).unwrap();
            assert!((g.scalar(ll).unwrap() - log_likelihood(&x, &reference).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn query_likelihood_gradient_through_em_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..5 {
            let n = 3;
            let j = 6;
            let k = 2;
            let support: Vec<Vec<u32>> = (0..n)
                .map(|_| (0..j).map(|_| rng.random_range(0..4)).collect())
                .collect();
            let query: Vec<Vec<u32>> = (0..n)
                .map(|_| (0..j).map(|_| rng.random_range(0..3)).collect())
                .collect();
            let xs = counts(&support).to_dense();
            let xq = counts(&query).to_dense();
            let alpha = Tensor::from_shape_fn((n, k), |_| rng.random_range(0.1..2.0));
            let beta = Tensor::from_shape_fn((k, j), |_| rng.random_range(0.1..2.0));

            let eval = |a: &Tensor, b: &Tensor| {
                let mut g = Graph::new();
                let s = g.constant(xs.clone());
                let q = g.constant(xq.clone());
                let av = g.param(a.clone());
                let bv = g.param(b.clone());
                let (t, p) = em_unroll(&mut g, s, av, bv, 3).unwrap();
                let l = log_likelihood_node(&mut g, q, t, p).unwrap();
                (g, l, av, bv)
            };
            let (g, l, av, bv) = eval(&alpha, &beta);
            let grads = g.grad(l, &[av, bv]).unwrap();
            let h = 1e-5;
            for (which, base) in [(0usize, &alpha), (1, &beta)] {
                for idx in 0..base.len() {
                    let (r, c) = (idx / base.ncols(), idx % base.ncols());
                    let mut plus = base.clone();
                    plus[[r, c]] += h;
                    let mut minus = base.clone();
                    minus[[r, c]] -= h;
                    let f = |t: &Tensor| {
                        let (g, l, _, _) = if which == 0 { eval(t, &beta) } else { eval(&alpha, t) };
                        g.scalar(l).unwrap()
                    };
                    let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
                    let analytic = grads[which][[r, c]];
                    let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                    assert!(rel <= 1e-4, "param {which} {r},{c}: {analytic} vs {numeric}");
                }
            }
        }
    }
}
