//! Atomistic uncertainty modeling.
//!
//! Every reference atomistic token gets its own Gaussian, conditioned on the
//! text tokens. One draw per token (the visual detail embedding) and the
//! original tokens are each read against the raw text embedding rows by the
//! query-transformer block; the two results are stacked along the token axis
//! and projected to the holistic width.

use crate::encoder::{qformer_block, BlockConfig};
use crate::error::{HudError, Result};
use crate::graph::{Graph, Var};
use crate::holistic::{gaussian_heads, register_heads};
use crate::nn;
use crate::params::{Initializer, ParameterStore};
use crate::rng::RngStream;

pub const PROJECTION: &str = "atom.proj";

pub fn register(store: &mut ParameterStore, init: &Initializer, atom_dim: usize, holistic_dim: usize) -> Result<()> {
    register_heads(store, init, "atom", atom_dim)?;
    nn::register_linear(store, init, PROJECTION, atom_dim, holistic_dim)
}

#[derive(Clone, Copy, Debug)]
pub struct TokenGaussian {
    pub mu: Var,
    pub sigma: Var,
}

/// How the text is fused into the atomistic tokens.
#[derive(Clone, Copy, Debug)]
pub enum Fusion<'a> {
    /// One pass of the query-transformer block with the tokens as queries.
    Block(BlockConfig<'a>),
    /// Tokens plus the mean text embedding row.
    Addition,
}

pub fn reference_distribution(g: &mut Graph, ref_atomistic: Var, text_atomistic: Var) -> Result<TokenGaussian> {
    let (rw, tw) = (g.shape(ref_atomistic).1, g.shape(text_atomistic).1);
    if rw != tw {
        return Err(HudError::Shape {
            op: "reference_distribution",
            detail: format!("reference width {rw} vs text width {tw}"),
        });
    }
    let (mu, sigma) = gaussian_heads(g, "atom", ref_atomistic, text_atomistic)?;
    Ok(TokenGaussian { mu, sigma })
}

/// One draw per token row: `sigma_l ⊙ η_l + mu_l`.
pub fn sample_detail_tokens(g: &mut Graph, dist: TokenGaussian, rng: &mut RngStream) -> Result<Var> {
    let (rows, cols) = g.shape(dist.mu);
    let eta = rng.normal_matrix(rows, cols);
    nn::gaussian_sample(g, dist.mu, dist.sigma, eta)
}

/// Fuses text into a token matrix, keeping its row count.
pub fn fuse(g: &mut Graph, fusion: Fusion, tokens: Var, text_embedding: Var) -> Result<Var> {
    let (tw, ew) = (g.shape(tokens).1, g.shape(text_embedding).1);
    if tw != ew {
        return Err(HudError::Shape {
            op: "fuse",
            detail: format!("token width {tw} vs text width {ew}"),
        });
    }
    match fusion {
        Fusion::Block(cfg) => qformer_block(g, cfg, tokens, text_embedding),
        Fusion::Addition => {
            let mean = g.mean_rows(text_embedding)?;
            g.add_row(tokens, mean)
        }
    }
}

/// The uncertainty-composed tokens, `(N_f·L) × D_A`.
pub fn compose_atomistic_uncertain(g: &mut Graph, fusion: Fusion, detail: Var, text_embedding: Var) -> Result<Var> {
    fuse(g, fusion, detail, text_embedding)
}

/// `Proj([fuse(F_r^A), detail_composed])`, `(N_f·2L) × D_H`. The original
/// interaction comes first.
pub fn build_atomistic_composed(
    g: &mut Graph,
    fusion: Fusion,
    ref_atomistic: Var,
    detail_composed: Var,
    text_embedding: Var,
) -> Result<Var> {
    if g.shape(ref_atomistic) != g.shape(detail_composed) {
        return Err(HudError::Shape {
            op: "build_atomistic_composed",
            detail: format!("{:?} vs {:?}", g.shape(ref_atomistic), g.shape(detail_composed)),
        });
    }
    let original = fuse(g, fusion, ref_atomistic, text_embedding)?;
    let stacked = g.concat_rows(&[original, detail_composed])?;
    nn::linear(g, PROJECTION, stacked)
}
