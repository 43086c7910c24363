//! Holistic pronoun disambiguation.
//!
//! The pooled modification-text token attends to the pooled reference token,
//! parameterizing a Gaussian over the text. `U` reparametrized draws, plus the
//! original text token, are each mixed with the reference token through
//! learned per-coordinate weights.

use crate::error::{HudError, Result};
use crate::graph::{Graph, Var};
use crate::nn;
use crate::params::{Initializer, ParameterStore};
use crate::rng::RngStream;

const COMPOSE_FC1: &str = "hol.compose.fc1";
const COMPOSE_FC2: &str = "hol.compose.fc2";

/// Mean and scale heads, shared in shape with the atomistic level:
/// `linear → sigmoid → LayerNorm` for the mean, a single linear map for the scale.
pub(crate) fn register_heads(store: &mut ParameterStore, init: &Initializer, prefix: &str, width: usize) -> Result<()> {
    nn::register_attention(store, init, &format!("{prefix}.ca_mu"), width)?;
    nn::register_attention(store, init, &format!("{prefix}.ca_sigma"), width)?;
    nn::register_linear(store, init, &format!("{prefix}.mu_head.linear"), width, width)?;
    nn::register_layer_norm(store, &format!("{prefix}.mu_head.ln"), width)?;
    nn::register_linear(store, init, &format!("{prefix}.sigma_head"), width, width)?;
    // Start with a small spread so early samples stay close to the mean.
    let w = format!("{prefix}.sigma_head.weight");
    let scaled = store.value(&w)?.map(|v| 0.1 * v);
    store.set_value(&w, scaled)
}

/// `(mu, sigma)` for queries `q` attending to `kv`:
/// `mu = LN(sigmoid(W (CA_mu(q, kv) + q) + b))`, `sigma = W' (CA_sigma(q, kv) + q) + b'`.
pub(crate) fn gaussian_heads(g: &mut Graph, prefix: &str, q: Var, kv: Var) -> Result<(Var, Var)> {
    let ca_mu = nn::cross_attention(g, &format!("{prefix}.ca_mu"), q, kv, kv)?;
    let res_mu = g.add(ca_mu, q)?;
    let mu = nn::linear(g, &format!("{prefix}.mu_head.linear"), res_mu)?;
    let mu = g.sigmoid(mu);
    let mu = nn::layer_norm(g, &format!("{prefix}.mu_head.ln"), mu)?;

    let ca_sigma = nn::cross_attention(g, &format!("{prefix}.ca_sigma"), q, kv, kv)?;
    let res_sigma = g.add(ca_sigma, q)?;
    let sigma = nn::linear(g, &format!("{prefix}.sigma_head"), res_sigma)?;
    Ok((mu, sigma))
}

pub fn register(store: &mut ParameterStore, init: &Initializer, holistic_dim: usize) -> Result<()> {
    register_heads(store, init, "hol", holistic_dim)?;
    nn::register_linear(store, init, COMPOSE_FC1, 2 * holistic_dim, 2 * holistic_dim)?;
    nn::register_linear(store, init, COMPOSE_FC2, 2 * holistic_dim, 2 * holistic_dim)
}

/// Graph handles for the text Gaussian, each `1 × D_H`.
#[derive(Clone, Copy, Debug)]
pub struct TextGaussian {
    pub mu: Var,
    pub sigma: Var,
}

/// How the holistic composed rows are formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Composition {
    /// `w_α ⊙ text + w_β ⊙ ref` with weights from the composition MLP.
    Learned,
    /// `text + ref`.
    Addition,
}

fn expect_vector(g: &Graph, v: Var, width: usize, what: &str) -> Result<()> {
    if g.shape(v) != (1, width) {
        return Err(HudError::Shape {
            op: "holistic",
            detail: format!("{what} has shape {:?}, expected (1, {width})", g.shape(v)),
        });
    }
    Ok(())
}

pub fn modification_distribution(g: &mut Graph, text_holistic: Var, ref_holistic: Var) -> Result<TextGaussian> {
    let width = g.shape(text_holistic).1;
    expect_vector(g, text_holistic, width, "text holistic token")?;
    expect_vector(g, ref_holistic, width, "reference holistic token")?;
    let (mu, sigma) = gaussian_heads(g, "hol", text_holistic, ref_holistic)?;
    Ok(TextGaussian { mu, sigma })
}

/// `U × D_H` rows `sigma ⊙ η_u + mu`, with the η drawn from `rng` row by row.
pub fn sample_modification(g: &mut Graph, dist: TextGaussian, samples: usize, rng: &mut RngStream) -> Result<Var> {
    if samples == 0 {
        return Err(HudError::InvalidArgument("sample count U must be at least 1".into()));
    }
    let width = g.shape(dist.mu).1;
    let eta = rng.normal_matrix(samples, width);
    let mu = g.repeat_rows(dist.mu, samples)?;
    let sigma = g.repeat_rows(dist.sigma, samples)?;
    nn::gaussian_sample(g, mu, sigma, eta)
}

/// Mixing weights for each row of `text_rows` against the reference token:
/// MLP on `[ref, text]`, sigmoid, then split into `(w_α, w_β)` halves.
pub fn composition_weights(g: &mut Graph, ref_holistic: Var, text_rows: Var) -> Result<(Var, Var)> {
    let (rows, width) = g.shape(text_rows);
    expect_vector(g, ref_holistic, width, "reference holistic token")?;
    let refs = g.repeat_rows(ref_holistic, rows)?;
    let joined = g.concat_cols(&[refs, text_rows])?;
    let h = nn::linear(g, COMPOSE_FC1, joined)?;
    let h = g.tanh(h);
    let w = nn::linear(g, COMPOSE_FC2, h)?;
    let w = g.sigmoid(w);
    let alpha = g.slice_cols(w, 0, width)?;
    let beta = g.slice_cols(w, width, width)?;
    Ok((alpha, beta))
}

/// `w_α ⊙ text + w_β ⊙ ref`, row-wise.
pub fn compose_pair(g: &mut Graph, w_alpha: Var, w_beta: Var, text: Var, reference: Var) -> Result<Var> {
    let a = g.mul(w_alpha, text)?;
    let b = g.mul(w_beta, reference)?;
    g.add(a, b)
}

/// `(1 + U) × D_H`: row 0 composes the original text token, rows `1..=U`
/// compose the samples (absent when `samples` is `None`).
pub fn build_holistic_composed(
    g: &mut Graph,
    ref_holistic: Var,
    text_holistic: Var,
    samples: Option<Var>,
    mode: Composition,
) -> Result<Var> {
    let width = g.shape(text_holistic).1;
    expect_vector(g, text_holistic, width, "text holistic token")?;
    let text_rows = match samples {
        Some(s) => g.concat_rows(&[text_holistic, s])?,
        None => text_holistic,
    };
    let rows = g.shape(text_rows).0;
    let refs = g.repeat_rows(ref_holistic, rows)?;
    match mode {
        Composition::Learned => {
            let (alpha, beta) = composition_weights(g, ref_holistic, text_rows)?;
            compose_pair(g, alpha, beta, text_rows, refs)
        }
        Composition::Addition => g.add(text_rows, refs),
    }
}
