//! The full model: encoders, both uncertainty levels, alignment and the
//! joint objective, with switches for every ablation derivative.

use crate::alignment::{self, SimilarityBias, SimilarityReading, BIAS_ATOMISTIC, BIAS_HOLISTIC};
use crate::atomistic::{self, Fusion};
use crate::encoder::{self, BlockConfig, EncoderDims, SymbolSequence, EXTRACTOR_BLOCK};
use crate::error::{HudError, Result};
use crate::graph::{Graph, Var};
use crate::holistic::{self, Composition};
use crate::params::{Initializer, ParameterStore};
use crate::rng::RngStream;
use crate::tensor::{self, Tensor2D};

pub const FUSION_BLOCK: &str = "fuse_qformer";

/// One training or evaluation example. Videos are `frames × tokens` grids of
/// symbol bags; the modification text is a sequence of ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub reference: Vec<Vec<Vec<usize>>>,
    pub modification: Vec<usize>,
    pub target: Vec<Vec<Vec<usize>>>,
}

/// Ablation switches, numbered as derivatives 1 through 9.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    /// 1: no textual probabilistic rows.
    pub no_h_prob: bool,
    /// 2: holistic composition by addition.
    pub no_h_compose: bool,
    /// 3: drop the holistic level.
    pub no_holistic: bool,
    /// 4: use reference tokens in place of sampled details.
    pub no_a_detail: bool,
    /// 5: atomistic composition by addition.
    pub no_a_compose: bool,
    /// 6: drop the atomistic level.
    pub no_atomistic: bool,
    /// 7: no similarity bias.
    pub no_bias: bool,
    /// 8: no cross-level regularizer.
    pub no_kl: bool,
    /// 9: no ranking loss.
    pub no_rank: bool,
}

impl Ablation {
    /// The single-switch derivative `n` (1 through 9).
    pub fn derivative(n: u8) -> Result<Self> {
        let mut a = Self::default();
        match n {
            1 => a.no_h_prob = true,
            2 => a.no_h_compose = true,
            3 => a.no_holistic = true,
            4 => a.no_a_detail = true,
            5 => a.no_a_compose = true,
            6 => a.no_atomistic = true,
            7 => a.no_bias = true,
            8 => a.no_kl = true,
            9 => a.no_rank = true,
            _ => {
                return Err(HudError::InvalidArgument(format!(
                    "no ablation derivative {n}; expected 1..=9"
                )))
            }
        }
        Ok(a)
    }

    pub fn name(n: u8) -> Option<&'static str> {
        Some(match n {
            1 => "w/o_H_Prob",
            2 => "w/o_H_Compose",
            3 => "w/o_Holistic_Level",
            4 => "w/o_A_Detail",
            5 => "w/o_A_Compose",
            6 => "w/o_Atomistic_Level",
            7 => "w/o_Bias",
            8 => "w/o_L_HA",
            9 => "w/o_L_rank",
            _ => return None,
        })
    }

    fn check(&self, kappa: f64) -> Result<()> {
        let conflicts = [
            (self.no_holistic && self.no_atomistic, "both levels dropped (3 and 6)"),
            (self.no_kl && self.no_rank, "both loss terms dropped (8 and 9)"),
            (
                self.no_holistic && (self.no_h_prob || self.no_h_compose),
                "holistic switches with the holistic level dropped (1/2 with 3)",
            ),
            (
                self.no_atomistic && (self.no_a_detail || self.no_a_compose),
                "atomistic switches with the atomistic level dropped (4/5 with 6)",
            ),
            (
                self.no_rank && (self.no_holistic || self.no_atomistic),
                "regularizer-only training needs both levels (9 with 3/6)",
            ),
            (self.no_rank && kappa == 0.0, "regularizer-only training with kappa = 0"),
        ];
        match conflicts.iter().find(|(bad, _)| *bad) {
            Some((_, why)) => Err(HudError::InvalidArgument(format!("conflicting ablation flags: {why}"))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub dims: EncoderDims,
    /// Probabilistic sample count `U`.
    pub samples: usize,
    pub tau: f64,
    pub kappa: f64,
    pub reading: SimilarityReading,
    /// Fuse text into atomistic tokens with the extractor's block rather than
    /// a separate one.
    pub share_qformer: bool,
    pub self_attention: bool,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: EncoderDims::default(),
            samples: 3,
            tau: 0.1,
            kappa: 0.5,
            reading: SimilarityReading::MaxOverTarget,
            share_qformer: true,
            self_attention: true,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(HudError::InvalidArgument(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        alignment::check_kappa(self.kappa)?;
        if self.samples == 0 && !self.ablation.no_h_prob {
            return Err(HudError::InvalidArgument(
                "U = 0 is only valid with the w/o_H_Prob derivative".into(),
            ));
        }
        self.ablation.check(self.kappa)
    }

    /// `U` as used by the holistic level (0 under derivative 1).
    pub fn effective_samples(&self) -> usize {
        if self.ablation.no_h_prob {
            0
        } else {
            self.samples
        }
    }

    pub fn holistic_rows(&self) -> usize {
        1 + self.effective_samples()
    }

    /// `N_f · 2L`
    pub fn atomistic_rows(&self) -> usize {
        2 * self.dims.video_tokens()
    }

    pub fn uses_holistic(&self) -> bool {
        !self.ablation.no_holistic
    }

    pub fn uses_atomistic(&self) -> bool {
        !self.ablation.no_atomistic
    }

    fn extractor(&self) -> BlockConfig<'static> {
        BlockConfig {
            name: EXTRACTOR_BLOCK,
            self_attention: self.self_attention,
        }
    }

    fn fusion(&self) -> Fusion<'static> {
        if self.ablation.no_a_compose {
            Fusion::Addition
        } else {
            Fusion::Block(BlockConfig {
                name: if self.share_qformer {
                    EXTRACTOR_BLOCK
                } else {
                    FUSION_BLOCK
                },
                self_attention: self.self_attention,
            })
        }
    }

    fn composition(&self) -> Composition {
        if self.ablation.no_h_compose {
            Composition::Addition
        } else {
            Composition::Learned
        }
    }

    /// A fresh parameter store. Every parameter of the architecture is
    /// registered regardless of ablation flags, so ablated runs share the
    /// layout of the full model (unused entries receive zero gradient).
    pub fn init_params(&self, seed: u64) -> Result<ParameterStore> {
        self.validate()?;
        let init = Initializer::new(seed);
        let mut store = ParameterStore::new(seed);
        encoder::register(&mut store, &init, &self.dims)?;
        holistic::register(&mut store, &init, self.dims.holistic_dim)?;
        atomistic::register(&mut store, &init, self.dims.atom_dim, self.dims.holistic_dim)?;
        if !self.share_qformer {
            encoder::register_block(
                &mut store,
                &init,
                FUSION_BLOCK,
                self.dims.atom_dim,
                self.dims.mlp_hidden,
            )?;
        }
        alignment::register(&mut store, self.effective_samples(), self.atomistic_rows())?;
        Ok(store)
    }
}

/// Graph handles for a composed query, including the intermediates the
/// embedding dump reports.
#[derive(Clone, Copy, Debug)]
pub struct QueryVars {
    pub reference_holistic: Var,
    pub text_holistic: Var,
    /// `(1+U) × D_H`
    pub holistic: Option<Var>,
    /// `U × D_H` textual probabilistic rows.
    pub text_samples: Option<Var>,
    /// `(N_f·2L) × D_H`
    pub atomistic: Option<Var>,
    /// `(N_f·L) × D_A` visual detail rows.
    pub detail: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct TargetVars {
    pub pooled: Var,
    pub holistic: Option<Var>,
    pub atomistic: Option<Var>,
}

fn video(frames: &[Vec<Vec<usize>>]) -> SymbolSequence {
    SymbolSequence::Video(frames.to_vec())
}

/// Composes one query. Noise is drawn from `rng` in a fixed order: the
/// textual samples first, then the visual details.
pub fn compose_query(g: &mut Graph, cfg: &ModelConfig, triplet: &Triplet, rng: &mut RngStream) -> Result<QueryVars> {
    let block = cfg.extractor();
    let reference = encoder::encode(g, &cfg.dims, block, &video(&triplet.reference))?;
    let text = encoder::encode(g, &cfg.dims, block, &SymbolSequence::Text(triplet.modification.clone()))?;

    let mut out = QueryVars {
        reference_holistic: reference.holistic,
        text_holistic: text.holistic,
        holistic: None,
        text_samples: None,
        atomistic: None,
        detail: None,
    };
    if cfg.uses_holistic() {
        let u = cfg.effective_samples();
        let samples = if u > 0 {
            let dist = holistic::modification_distribution(g, text.holistic, reference.holistic)?;
            Some(holistic::sample_modification(g, dist, u, rng)?)
        } else {
            None
        };
        out.text_samples = samples;
        out.holistic = Some(holistic::build_holistic_composed(
            g,
            reference.holistic,
            text.holistic,
            samples,
            cfg.composition(),
        )?);
    }
    if cfg.uses_atomistic() {
        let fusion = cfg.fusion();
        let text_embedding = encoder::embed_text(g, &cfg.dims, &triplet.modification)?;
        let detail = if cfg.ablation.no_a_detail {
            reference.atomistic
        } else {
            let dist = atomistic::reference_distribution(g, reference.atomistic, text.atomistic)?;
            atomistic::sample_detail_tokens(g, dist, rng)?
        };
        let composed = atomistic::compose_atomistic_uncertain(g, fusion, detail, text_embedding)?;
        out.detail = Some(detail);
        out.atomistic = Some(atomistic::build_atomistic_composed(
            g,
            fusion,
            reference.atomistic,
            composed,
            text_embedding,
        )?);
    }
    Ok(out)
}

pub fn encode_target(g: &mut Graph, cfg: &ModelConfig, target: &[Vec<Vec<usize>>]) -> Result<TargetVars> {
    let encoded = encoder::encode(g, &cfg.dims, cfg.extractor(), &video(target))?;
    let mut out = TargetVars {
        pooled: encoded.holistic,
        holistic: None,
        atomistic: None,
    };
    if cfg.uses_holistic() {
        out.holistic = Some(g.repeat_rows(encoded.holistic, cfg.holistic_rows())?);
    }
    if cfg.uses_atomistic() {
        let (_, a) = alignment::extend_targets(g, encoded, cfg.effective_samples())?;
        out.atomistic = Some(a);
    }
    Ok(out)
}

/// The batch objective on a tape plus its reported components.
#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    /// The node to differentiate.
    pub loss: Var,
    pub rank: Var,
    /// Present whenever both levels are active, even if it is not part of
    /// `loss`.
    pub regularizer: Option<Var>,
    pub holistic: Option<Var>,
    pub atomistic: Option<Var>,
}

pub fn batch_loss(g: &mut Graph, cfg: &ModelConfig, batch: &[Triplet], rng: &mut RngStream) -> Result<BatchLoss> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(HudError::InvalidArgument("empty batch".into()));
    }
    let mut queries = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for t in batch {
        queries.push(compose_query(g, cfg, t, rng)?);
        targets.push(encode_target(g, cfg, &t.target)?);
    }
    let bias = |g: &mut Graph, name: &str| -> Result<Option<Var>> {
        if cfg.ablation.no_bias {
            Ok(None)
        } else {
            g.param(name).map(Some)
        }
    };
    let holistic = if cfg.uses_holistic() {
        let q: Vec<Var> = queries.iter().map(|x| x.holistic.expect("holistic level")).collect();
        let t: Vec<Var> = targets.iter().map(|x| x.holistic.expect("holistic level")).collect();
        let b = bias(g, BIAS_HOLISTIC)?;
        Some(alignment::similarity_matrix_graph(g, &q, &t, b, cfg.reading)?)
    } else {
        None
    };
    let atomistic = if cfg.uses_atomistic() {
        let q: Vec<Var> = queries.iter().map(|x| x.atomistic.expect("atomistic level")).collect();
        let t: Vec<Var> = targets.iter().map(|x| x.atomistic.expect("atomistic level")).collect();
        let b = bias(g, BIAS_ATOMISTIC)?;
        Some(alignment::similarity_matrix_graph(g, &q, &t, b, cfg.reading)?)
    } else {
        None
    };
    let combined = match (holistic, atomistic) {
        (Some(h), Some(a)) => g.add(h, a)?,
        (Some(h), None) => h,
        (None, Some(a)) => a,
        (None, None) => unreachable!("validated: at least one level"),
    };
    let rank = alignment::rank_loss_graph(g, combined, cfg.tau)?;
    let regularizer = match (holistic, atomistic) {
        (Some(h), Some(a)) => Some(alignment::regularization_graph(g, h, a, cfg.tau)?),
        _ => None,
    };
    let weighted_reg = match regularizer {
        Some(r) if !cfg.ablation.no_kl && cfg.kappa != 0.0 => Some(g.scale(r, cfg.kappa)),
        _ => None,
    };
    let loss = match (cfg.ablation.no_rank, weighted_reg) {
        (true, Some(r)) => r,
        (true, None) => unreachable!("validated: regularizer-only needs both levels and kappa > 0"),
        (false, Some(r)) => g.add(rank, r)?,
        (false, None) => rank,
    };
    Ok(BatchLoss {
        loss,
        rank,
        regularizer,
        holistic,
        atomistic,
    })
}

/// L2-normalized per-level token matrices, ready for scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelTokens {
    pub holistic: Option<Tensor2D>,
    pub atomistic: Option<Tensor2D>,
}

fn normalized(g: &Graph, v: Option<Var>) -> Option<Tensor2D> {
    v.map(|v| tensor::l2_normalize_rows(g.value(v)))
}

pub fn embed_query(
    store: &ParameterStore,
    cfg: &ModelConfig,
    triplet: &Triplet,
    rng: &mut RngStream,
) -> Result<LevelTokens> {
    let mut g = Graph::new(store);
    let q = compose_query(&mut g, cfg, triplet, rng)?;
    Ok(LevelTokens {
        holistic: normalized(&g, q.holistic),
        atomistic: normalized(&g, q.atomistic),
    })
}

pub fn embed_target(store: &ParameterStore, cfg: &ModelConfig, target: &[Vec<Vec<usize>>]) -> Result<LevelTokens> {
    let mut g = Graph::new(store);
    let t = encode_target(&mut g, cfg, target)?;
    Ok(LevelTokens {
        holistic: normalized(&g, t.holistic),
        atomistic: normalized(&g, t.atomistic),
    })
}

/// The bias vectors in effect (zeros under the no-bias derivative).
pub fn effective_bias(store: &ParameterStore, cfg: &ModelConfig) -> Result<SimilarityBias> {
    if cfg.ablation.no_bias {
        Ok(SimilarityBias::zeros(cfg.holistic_rows(), cfg.atomistic_rows()))
    } else {
        SimilarityBias::from_store(store)
    }
}

/// Combined holistic plus atomistic similarity over the active levels.
pub fn score(cfg: &ModelConfig, bias: &SimilarityBias, query: &LevelTokens, target: &LevelTokens) -> Result<f64> {
    let mut total = 0.0;
    if let (Some(q), Some(t)) = (&query.holistic, &target.holistic) {
        total += alignment::hierarchical_similarity(q, t, &bias.holistic, cfg.reading)?;
    }
    if let (Some(q), Some(t)) = (&query.atomistic, &target.atomistic) {
        total += alignment::hierarchical_similarity(q, t, &bias.atomistic, cfg.reading)?;
    }
    Ok(total)
}

/// Plain values of the labeled intermediates for one triplet.
#[derive(Clone, Debug)]
pub struct QueryTrace {
    pub reference: Tensor2D,
    pub target: Tensor2D,
    pub modification: Tensor2D,
    pub visual_detail: Option<Tensor2D>,
    pub textual_probabilistic: Option<Tensor2D>,
    pub original_composition: Option<Tensor2D>,
    pub probabilistic_composition: Option<Tensor2D>,
}

pub fn trace_query(
    store: &ParameterStore,
    cfg: &ModelConfig,
    triplet: &Triplet,
    rng: &mut RngStream,
) -> Result<QueryTrace> {
    let mut g = Graph::new(store);
    let q = compose_query(&mut g, cfg, triplet, rng)?;
    let t = encode_target(&mut g, cfg, &triplet.target)?;
    let rows = |g: &mut Graph, v: Option<Var>, start: usize, len: usize| -> Result<Option<Tensor2D>> {
        match v {
            Some(v) if len > 0 => {
                let s = g.slice_rows(v, start, len)?;
                Ok(Some(g.value(s).clone()))
            }
            _ => Ok(None),
        }
    };
    let u = cfg.effective_samples();
    let original_composition = rows(&mut g, q.holistic, 0, 1)?;
    let probabilistic_composition = rows(&mut g, q.holistic, 1, u)?;
    Ok(QueryTrace {
        reference: g.value(q.reference_holistic).clone(),
        target: g.value(t.pooled).clone(),
        modification: g.value(q.text_holistic).clone(),
        visual_detail: q.detail.map(|d| g.value(d).clone()),
        textual_probabilistic: q.text_samples.map(|s| g.value(s).clone()),
        original_composition,
        probabilistic_composition,
    })
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, Coordinates};

    fn triplet(seed: usize) -> Triplet {
        let frame = |f: usize| -> Vec<Vec<usize>> {
            (0..5)
                .map(|t| vec![3 + (seed * 7 + f * 3 + t) % 20, 23 + (seed + t) % 20])
                .collect()
        };
        Triplet {
            reference: vec![frame(0), frame(1)],
            modification: vec![1, 23 + seed % 20],
            target: vec![frame(2), frame(3)],
        }
    }

    fn batch(n: usize) -> Vec<Triplet> {
        (0..n).map(triplet).collect()
    }

    fn loss_value(store: &ParameterStore, cfg: &ModelConfig, b: &[Triplet], seed: u64) -> (f64, f64, Option<f64>) {
        let mut g = Graph::new(store);
        let l = batch_loss(&mut g, cfg, b, &mut RngStream::new(seed)).unwrap();
        (g.scalar(l.loss), g.scalar(l.rank), l.regularizer.map(|r| g.scalar(r)))
    }

    #[test]
    fn shapes_of_composed_and_target_tokens() {
        let cfg = ModelConfig::default();
        let store = cfg.init_params(1).unwrap();
        let mut g = Graph::new(&store);
        let q = compose_query(&mut g, &cfg, &triplet(0), &mut RngStream::new(1)).unwrap();
        let t = encode_target(&mut g, &cfg, &triplet(0).target).unwrap();
        assert_eq!(g.shape(q.holistic.unwrap()), (4, 8));
        assert_eq!(g.shape(q.atomistic.unwrap()), (16, 8));
        assert_eq!(g.shape(q.text_samples.unwrap()), (3, 8));
        assert_eq!(g.shape(q.detail.unwrap()), (8, 16));
        assert_eq!(g.shape(t.holistic.unwrap()), (4, 8));
        assert_eq!(g.shape(t.atomistic.unwrap()), (16, 8));
    }

    #[test]
    fn kappa_decomposition() {
        let cfg = ModelConfig::default();
        let store = cfg.init_params(2).unwrap();
        let (loss, rank, reg) = loss_value(&store, &cfg, &batch(4), 5);
        assert_eq!(loss, rank + 0.5 * reg.unwrap());
        assert!(rank > 0.0 && reg.unwrap() >= 0.0);
    }

    #[test]
    fn no_kl_matches_kappa_zero_bit_exactly() {
        let d8 = ModelConfig {
            ablation: Ablation::derivative(8).unwrap(),
            ..ModelConfig::default()
        };
        let k0 = ModelConfig {
            kappa: 0.0,
            ..ModelConfig::default()
        };
        let store = d8.init_params(3).unwrap();
        let a = loss_value(&store, &d8, &batch(4), 1);
        let b = loss_value(&store, &k0, &batch(4), 1);
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.0, a.1);
    }

    #[test]
    fn no_rank_trains_on_regularizer_only() {
        let cfg = ModelConfig {
            ablation: Ablation::derivative(9).unwrap(),
            ..ModelConfig::default()
        };
        let store = cfg.init_params(3).unwrap();
        let (loss, _, reg) = loss_value(&store, &cfg, &batch(3), 1);
        assert_eq!(loss, 0.5 * reg.unwrap());
    }

    #[test]
    fn dropped_levels() {
        for (n, h, a) in [(3, false, true), (6, true, false)] {
            let cfg = ModelConfig {
                ablation: Ablation::derivative(n).unwrap(),
                ..ModelConfig::default()
            };
            let store = cfg.init_params(4).unwrap();
            let mut g = Graph::new(&store);
            let l = batch_loss(&mut g, &cfg, &batch(3), &mut RngStream::new(2)).unwrap();
            assert_eq!(l.holistic.is_some(), h);
            assert_eq!(l.atomistic.is_some(), a);
            assert!(l.regularizer.is_none());
            assert_eq!(g.scalar(l.loss), g.scalar(l.rank));
        }
    }

    #[test]
    fn no_h_prob_keeps_one_row() {
        let cfg = ModelConfig {
            samples: 0,
            ablation: Ablation::derivative(1).unwrap(),
            ..ModelConfig::default()
        };
        let store = cfg.init_params(5).unwrap();
        assert_eq!(store.value(BIAS_HOLISTIC).unwrap().shape(), (1, 1));
        let mut g = Graph::new(&store);
        let q = compose_query(&mut g, &cfg, &triplet(1), &mut RngStream::new(1)).unwrap();
        assert_eq!(g.shape(q.holistic.unwrap()), (1, 8));
        assert!(q.text_samples.is_none());
    }

    #[test]
    fn addition_composition_row_zero() {
        let cfg = ModelConfig {
            ablation: Ablation::derivative(2).unwrap(),
            ..ModelConfig::default()
        };
        let store = cfg.init_params(6).unwrap();
        let mut g = Graph::new(&store);
        let q = compose_query(&mut g, &cfg, &triplet(2), &mut RngStream::new(1)).unwrap();
        let h = g.value(q.holistic.unwrap()).clone();
        let r = g.value(q.reference_holistic).clone();
        let m = g.value(q.text_holistic).clone();
        for c in 0..8 {
            assert_eq!(h.get(0, c), r.get(0, c) + m.get(0, c));
        }
    }

    #[test]
    fn no_detail_uses_reference_tokens() {
        let cfg = ModelConfig {
            ablation: Ablation::derivative(4).unwrap(),
            ..ModelConfig::default()
        };
        let store = cfg.init_params(7).unwrap();
        let mut g = Graph::new(&store);
        let q = compose_query(&mut g, &cfg, &triplet(3), &mut RngStream::new(1)).unwrap();
        let r = encoder::encode_tokens(&mut g, &cfg.dims, cfg.extractor(), &video(&triplet(3).reference)).unwrap();
        assert_eq!(g.value(q.detail.unwrap()), g.value(r));
    }

    #[test]
    fn conflicting_flags_are_rejected() {
        let bad = [
            Ablation {
                no_holistic: true,
                no_atomistic: true,
                ..Ablation::default()
            },
            Ablation {
                no_kl: true,
                no_rank: true,
                ..Ablation::default()
            },
            Ablation {
                no_holistic: true,
                no_h_prob: true,
                ..Ablation::default()
            },
            Ablation {
                no_atomistic: true,
                no_a_compose: true,
                ..Ablation::default()
            },
            Ablation {
                no_rank: true,
                no_atomistic: true,
                ..Ablation::default()
            },
        ];
        for ablation in bad {
            let cfg = ModelConfig {
                ablation,
                ..ModelConfig::default()
            };
            assert!(cfg.validate().is_err(), "{ablation:?}");
        }
        let zero_u = ModelConfig {
            samples: 0,
            ..ModelConfig::default()
        };
        assert!(zero_u.validate().is_err());
        assert!(Ablation::derivative(0).is_err());
        assert!(Ablation::derivative(10).is_err());
    }

    #[test]
    fn fixed_noise_is_deterministic_and_noise_matters() {
        let cfg = ModelConfig::default();
        let store = cfg.init_params(8).unwrap();
        let a = loss_value(&store, &cfg, &batch(4), 11);
        let b = loss_value(&store, &cfg, &batch(4), 11);
        let c = loss_value(&store, &cfg, &batch(4), 12);
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn eval_score_matches_training_matrix() {
        let cfg = ModelConfig::default();
        let store = cfg.init_params(9).unwrap();
        let b = batch(3);
        let mut g = Graph::new(&store);
        let l = batch_loss(&mut g, &cfg, &b, &mut RngStream::new(4)).unwrap();
        let combined = {
            let h = g.value(l.holistic.unwrap()).clone();
            h.zip_map(g.value(l.atomistic.unwrap()), "t", |x, y| x + y).unwrap()
        };
        let bias = effective_bias(&store, &cfg).unwrap();
        let mut rng = RngStream::new(4);
        let queries: Vec<_> = b
            .iter()
            .map(|t| embed_query(&store, &cfg, t, &mut rng).unwrap())
            .collect();
        let targets: Vec<_> = b
            .iter()
            .map(|t| embed_target(&store, &cfg, &t.target).unwrap())
            .collect();
        for i in 0..3 {
            for j in 0..3 {
                let s = score(&cfg, &bias, &queries[i], &targets[j]).unwrap();
                assert!((s - combined.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trace_has_every_label() {
        let cfg = ModelConfig::default();
        let store = cfg.init_params(10).unwrap();
        let tr = trace_query(&store, &cfg, &triplet(0), &mut RngStream::new(1)).unwrap();
        assert_eq!(tr.reference.shape(), (1, 8));
        assert_eq!(tr.target.shape(), (1, 8));
        assert_eq!(tr.modification.shape(), (1, 8));
        assert_eq!(tr.visual_detail.unwrap().shape(), (8, 16));
        assert_eq!(tr.textual_probabilistic.unwrap().shape(), (3, 8));
        assert_eq!(tr.original_composition.unwrap().shape(), (1, 8));
        assert_eq!(tr.probabilistic_composition.unwrap().shape(), (3, 8));
    }

    #[test]
    fn sampled_gradients_match_finite_differences() {
        let cfg = ModelConfig::default();
        let store = cfg.init_params(12).unwrap();
        let b = batch(3);
        let report = grad_check(&store, 1e-6, Coordinates::Sample { per_param: 3, seed: 1 }, |g| {
            Ok(batch_loss(g, &cfg, &b, &mut RngStream::new(77))?.loss)
        })
        .unwrap();
        assert!(report.passes(1e-5), "{:?}", report.worst);
    }

    #[test]
    fn separate_fusion_block() {
        let cfg = ModelConfig {
            share_qformer: false,
            ..ModelConfig::default()
        };
        let store = cfg.init_params(13).unwrap();
        assert!(store.contains("fuse_qformer.cross_attn.wq"));
        let mut g = Graph::new(&store);
        let l = batch_loss(&mut g, &cfg, &batch(2), &mut RngStream::new(1)).unwrap();
        let grads = g.backward(l.loss).unwrap();
        let fused = grads
            .params(&g)
            .find(|(n, _)| *n == "fuse_qformer.cross_attn.wv")
            .unwrap()
            .1;
        assert!(fused.data().iter().any(|v| *v != 0.0));
    }
}
