//! Lossless greedy decoding strategies over the cached transformer:
//! autoregressive, Jacobi, prompt lookup, token trees and tree Jacobi with a
//! retrieval path. Every strategy commits exactly the tokens greedy
//! autoregressive decoding would produce; they differ only in how many
//! tokens each forward commits.

mod chain;
mod metrics;
mod session;
mod template;
mod tree;

use std::fmt;

pub use chain::{
    ar_generate, jacobi_generate, jacobi_step, pld_generate, pld_retrieve, verify_chain, ChainStep, JacobiStep,
    RetrievalConfig,
};
pub use metrics::{compute_metrics, DecodeMetrics};
pub use session::{DecodeOptions, DecodeSession, Generation};
pub use template::{DraftTreeTemplate, TreeNode};
pub use tree::{build_tree, tree_generate, tree_verify, TreeFill, TreeState, TreeStep};

use crate::error::{Error, Result};
use crate::model::TransformerWeights;

pub const DEFAULT_BLOCK_LEN: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Strategy {
    Ar,
    Jacobi {
        block_len: usize,
    },
    Pld(RetrievalConfig),
    /// Tree Jacobi without a retrieval chain.
    Tree(DraftTreeTemplate),
    /// Tree Jacobi with a prompt-lookup retrieval chain.
    TrJacobi {
        template: DraftTreeTemplate,
        retrieval: RetrievalConfig,
    },
}

impl Strategy {
    pub const NAMES: [&'static str; 5] = ["ar", "jacobi", "pld", "tree", "tr-jacobi"];

    /// Builds a strategy from its command-line name. `block_len` applies to
    /// Jacobi; `template` overrides the default tree.
    pub fn from_name(name: &str, block_len: usize, template: Option<DraftTreeTemplate>) -> Result<Self> {
        let template = template.unwrap_or_default();
        Ok(match name {
            "ar" => Strategy::Ar,
            "jacobi" => Strategy::Jacobi { block_len },
            "pld" => Strategy::Pld(RetrievalConfig::default()),
            "tree" => Strategy::Tree(template.without_retrieval()),
            "tr-jacobi" | "tr_jacobi" => Strategy::TrJacobi {
                template,
                retrieval: RetrievalConfig::default(),
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown strategy `{other}` (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Ar => "ar",
            Strategy::Jacobi { .. } => "jacobi",
            Strategy::Pld(_) => "pld",
            Strategy::Tree(_) => "tree",
            Strategy::TrJacobi { .. } => "tr-jacobi",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Jacobi { block_len } => write!(f, "jacobi(m={block_len})"),
            other => f.write_str(other.name()),
        }
    }
}

pub fn generate(
    weights: &TransformerWeights,
    prompt: &[u32],
    strategy: &Strategy,
    opts: DecodeOptions,
) -> Result<Generation> {
    match strategy {
        Strategy::Ar => ar_generate(weights, prompt, opts),
        Strategy::Jacobi { block_len } => jacobi_generate(weights, prompt, *block_len, opts),
        Strategy::Pld(r) => pld_generate(weights, prompt, *r, opts),
        Strategy::Tree(t) => tree_generate(weights, prompt, t, None, opts),
        Strategy::TrJacobi { template, retrieval } => tree_generate(weights, prompt, template, Some(*retrieval), opts),
    }
}
