//! Few-shot topic modeling: neural networks map a handful of documents to
//! Dirichlet priors, and a topic model is fitted to those documents by
//! MAP-EM under the priors. The EM steps are recorded on a differentiable
//! graph so the networks are trained through them.

pub mod cli;
pub mod corpus;
pub mod diffcalc;
pub mod error;
pub mod experiment;
pub mod lda;
pub mod metatrainer;
pub mod priornet;
pub mod synthetic;
pub mod topicmodel;

pub use error::{Error, Result};
