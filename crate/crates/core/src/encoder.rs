//! Token extraction for symbolic video and text inputs.
//!
//! Symbols are embedded through a shared table (a bag of ids per position is
//! embedded as the sum of its rows), then passed through one query-transformer
//! block: video frames are read by `L` learnable query rows each, text uses its
//! own embedding rows as queries. Holistic tokens are the column mean of the
//! atomistic tokens followed by a learned projection.

use crate::error::{HudError, Result};
use crate::graph::{Graph, Var};
use crate::nn;
use crate::params::{Initializer, ParameterStore};
use crate::tensor::Tensor2D;

pub const EMBED_TABLE: &str = "embed.table";
pub const FRAME_QUERIES: &str = "qformer.queries";
pub const EXTRACTOR_BLOCK: &str = "qformer";
pub const POOL: &str = "pool";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderDims {
    /// Frames per video, `N_f`.
    pub frames: usize,
    /// Learnable queries per frame, `L`.
    pub queries: usize,
    /// Atomistic width, `D_A`.
    pub atom_dim: usize,
    /// Holistic width, `D_H`.
    pub holistic_dim: usize,
    /// Hidden width of the block's position-wise MLP.
    pub mlp_hidden: usize,
    pub vocab: usize,
    pub max_text_len: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self {
            frames: 2,
            queries: 4,
            atom_dim: 16,
            holistic_dim: 8,
            mlp_hidden: 32,
            vocab: 64,
            max_text_len: 6,
        }
    }
}

impl EncoderDims {
    /// `N_f · L`
    pub fn video_tokens(&self) -> usize {
        self.frames * self.queries
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("frames", self.frames),
            ("queries", self.queries),
            ("atom_dim", self.atom_dim),
            ("holistic_dim", self.holistic_dim),
            ("mlp_hidden", self.mlp_hidden),
            ("vocab", self.vocab),
            ("max_text_len", self.max_text_len),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(HudError::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Symbolic input. Each position is a bag of vocabulary ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SymbolSequence {
    /// `frames × tokens` grid of visual tokens.
    Video(Vec<Vec<Vec<usize>>>),
    Text(Vec<usize>),
}

/// Graph handles for one encoded input.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    pub atomistic: Var,
    /// `1 × D_H`
    pub holistic: Var,
}

/// Configuration of one query-transformer block.
#[derive(Clone, Copy, Debug)]
pub struct BlockConfig<'a> {
    pub name: &'a str,
    pub self_attention: bool,
}

pub fn register_block(
    store: &mut ParameterStore,
    init: &Initializer,
    name: &str,
    width: usize,
    hidden: usize,
) -> Result<()> {
    nn::register_attention(store, init, &format!("{name}.self_attn"), width)?;
    nn::register_layer_norm(store, &format!("{name}.ln1"), width)?;
    nn::register_attention(store, init, &format!("{name}.cross_attn"), width)?;
    nn::register_layer_norm(store, &format!("{name}.ln2"), width)?;
    nn::register_linear(store, init, &format!("{name}.mlp.fc1"), width, hidden)?;
    nn::register_linear(store, init, &format!("{name}.mlp.fc2"), hidden, width)?;
    nn::register_layer_norm(store, &format!("{name}.ln3"), width)
}

pub fn register(store: &mut ParameterStore, init: &Initializer, dims: &EncoderDims) -> Result<()> {
    dims.validate()?;
    store.insert(EMBED_TABLE, init.uniform(EMBED_TABLE, dims.vocab, dims.atom_dim, 1.0))?;
    store.insert(
        FRAME_QUERIES,
        init.uniform(FRAME_QUERIES, dims.queries, dims.atom_dim, 1.0),
    )?;
    register_block(store, init, EXTRACTOR_BLOCK, dims.atom_dim, dims.mlp_hidden)?;
    nn::register_linear(store, init, POOL, dims.atom_dim, dims.holistic_dim)
}

/// Residual self-attention, residual cross-attention to `context`, residual
/// MLP; layer normalization after each residual sum.
pub fn qformer_block(g: &mut Graph, cfg: BlockConfig, queries: Var, context: Var) -> Result<Var> {
    let name = cfg.name;
    let (qr, qc) = g.shape(queries);
    let (_, cc) = g.shape(context);
    if qc != cc {
        return Err(HudError::Shape {
            op: "qformer_block",
            detail: format!("query width {qc} vs context width {cc}"),
        });
    }
    if qr == 0 {
        return Err(HudError::InvalidArgument("qformer_block with no queries".into()));
    }
    let mut x = queries;
    if cfg.self_attention {
        let sa = nn::cross_attention(g, &format!("{name}.self_attn"), x, x, x)?;
        let sum = g.add(x, sa)?;
        x = nn::layer_norm(g, &format!("{name}.ln1"), sum)?;
    } else {
        x = nn::layer_norm(g, &format!("{name}.ln1"), x)?;
    }
    let ca = nn::cross_attention(g, &format!("{name}.cross_attn"), x, context, context)?;
    let sum = g.add(x, ca)?;
    x = nn::layer_norm(g, &format!("{name}.ln2"), sum)?;

    let h = nn::linear(g, &format!("{name}.mlp.fc1"), x)?;
    let h = g.tanh(h);
    let h = nn::linear(g, &format!("{name}.mlp.fc2"), h)?;
    let sum = g.add(x, h)?;
    nn::layer_norm(g, &format!("{name}.ln3"), sum)
}

fn check_ids(ids: &[usize], vocab: usize) -> Result<()> {
    match ids.iter().find(|&&id| id >= vocab) {
        Some(id) => Err(HudError::InvalidArgument(format!(
            "symbol id {id} outside vocabulary of {vocab}"
        ))),
        None => Ok(()),
    }
}

/// Raw embedding rows: one row per position, the sum of the table rows of
/// the ids at that position.
pub fn embed(g: &mut Graph, dims: &EncoderDims, positions: &[&[usize]]) -> Result<Var> {
    if positions.is_empty() {
        return Err(HudError::InvalidArgument("cannot embed an empty sequence".into()));
    }
    let mut bag = Tensor2D::zeros(positions.len(), dims.vocab);
    for (i, ids) in positions.iter().enumerate() {
        if ids.is_empty() {
            return Err(HudError::InvalidArgument(format!("position {i} holds no symbols")));
        }
        check_ids(ids, dims.vocab)?;
        for &id in ids.iter() {
            let v = bag.get(i, id);
            bag.set(i, id, v + 1.0);
        }
    }
    let bag = g.constant(bag);
    let table = g.param(EMBED_TABLE)?;
    g.matmul(bag, table)
}

/// Text embedding rows, the `Φ_T` input of the fine-grained interaction.
pub fn embed_text(g: &mut Graph, dims: &EncoderDims, ids: &[usize]) -> Result<Var> {
    if ids.len() > dims.max_text_len {
        return Err(HudError::InvalidArgument(format!(
            "text of length {} exceeds the limit of {}",
            ids.len(),
            dims.max_text_len
        )));
    }
    let positions: Vec<&[usize]> = ids.iter().map(std::slice::from_ref).collect();
    embed(g, dims, &positions)
}

/// Atomistic tokens: `(N_f·L) × D_A` for video, `len × D_A` for text.
pub fn encode_tokens(g: &mut Graph, dims: &EncoderDims, block: BlockConfig, x: &SymbolSequence) -> Result<Var> {
    match x {
        SymbolSequence::Video(frames) => {
            if frames.len() != dims.frames {
                return Err(HudError::InvalidArgument(format!(
                    "video has {} frames, expected {}",
                    frames.len(),
                    dims.frames
                )));
            }
            let queries = g.param(FRAME_QUERIES)?;
            let mut per_frame = Vec::with_capacity(frames.len());
            for frame in frames {
                let positions: Vec<&[usize]> = frame.iter().map(Vec::as_slice).collect();
                let context = embed(g, dims, &positions)?;
                per_frame.push(qformer_block(g, block, queries, context)?);
            }
            g.concat_rows(&per_frame)
        }
        SymbolSequence::Text(ids) => {
            let e = embed_text(g, dims, ids)?;
            qformer_block(g, block, e, e)
        }
    }
}

/// Column mean followed by the learned `D_A → D_H` map; `1 × D_H`.
pub fn pool_project(g: &mut Graph, atomistic: Var) -> Result<Var> {
    if g.shape(atomistic).0 == 0 {
        return Err(HudError::InvalidArgument(
            "pool_project of an empty token matrix".into(),
        ));
    }
    let mean = g.mean_rows(atomistic)?;
    nn::linear(g, POOL, mean)
}

pub fn encode(g: &mut Graph, dims: &EncoderDims, block: BlockConfig, x: &SymbolSequence) -> Result<EncoderOutput> {
    let atomistic = encode_tokens(g, dims, block, x)?;
    let holistic = pool_project(g, atomistic)?;
    Ok(EncoderOutput { atomistic, holistic })
}
