//! Holistic-to-atomistic alignment: target extension, the biased learnable
//! similarity, the in-batch ranking loss and the cross-level regularizer.
//!
//! Every loss-side operation exists twice. The tensor functions evaluate
//! plain values (evaluation, oracles); the `*_graph` functions build the same
//! computation on a tape for training.

use crate::atomistic::PROJECTION;
use crate::encoder::EncoderOutput;
use crate::error::{HudError, Result};
use crate::graph::{Graph, Var};
use crate::nn;
use crate::params::ParameterStore;
use crate::tensor::{self, dot, Tensor2D};

pub const BIAS_HOLISTIC: &str = "align.bias_h";
pub const BIAS_ATOMISTIC: &str = "align.bias_a";

/// How the per-row score `s_i` is read from a composed/target token pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SimilarityReading {
    /// `s_i = max_j ⟨C_i, T_j⟩`.
    #[default]
    MaxOverTarget,
    /// `s_i = ⟨C_i, T_i⟩`.
    MatchedIndex,
}

/// Zero-initialized bias vectors, `1 × (1+U)` and `1 × atomistic_rows`.
pub fn register(store: &mut ParameterStore, samples: usize, atomistic_rows: usize) -> Result<()> {
    store.insert(BIAS_HOLISTIC, Tensor2D::zeros(1, 1 + samples))?;
    store.insert(BIAS_ATOMISTIC, Tensor2D::zeros(1, atomistic_rows))
}

/// Extends a target to the composed shapes: the pooled vector replicated
/// into `1+U` rows, and the projected atomistic tokens tiled twice.
pub fn extend_targets(g: &mut Graph, target: EncoderOutput, samples: usize) -> Result<(Var, Var)> {
    let holistic = g.repeat_rows(target.holistic, 1 + samples)?;
    let projected = nn::linear(g, PROJECTION, target.atomistic)?;
    let atomistic = g.repeat_rows(projected, 2)?;
    Ok((holistic, atomistic))
}

/// One level's token matrices for a query or an extended target.
#[derive(Clone, Debug, PartialEq)]
pub struct ComposedTokens {
    pub holistic: Tensor2D,
    pub atomistic: Tensor2D,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityBias {
    pub holistic: Vec<f64>,
    pub atomistic: Vec<f64>,
}

impl SimilarityBias {
    pub fn zeros(holistic_rows: usize, atomistic_rows: usize) -> Self {
        Self {
            holistic: vec![0.0; holistic_rows],
            atomistic: vec![0.0; atomistic_rows],
        }
    }

    pub fn from_store(store: &ParameterStore) -> Result<Self> {
        Ok(Self {
            holistic: store.value(BIAS_HOLISTIC)?.data().to_vec(),
            atomistic: store.value(BIAS_ATOMISTIC)?.data().to_vec(),
        })
    }
}

/// `B × B` similarity matrices; entry `(i, j)` scores query `i` against
/// target `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchSimilarities {
    pub holistic: Tensor2D,
    pub atomistic: Tensor2D,
}

impl BatchSimilarities {
    pub fn new(holistic: Tensor2D, atomistic: Tensor2D) -> Result<Self> {
        let (r, c) = holistic.shape();
        if r == 0 || r != c || holistic.shape() != atomistic.shape() {
            return Err(HudError::shape(
                "BatchSimilarities",
                format!("holistic {:?}, atomistic {:?}", holistic.shape(), atomistic.shape()),
            ));
        }
        if !holistic.is_finite() || !atomistic.is_finite() {
            return Err(HudError::NonFinite("BatchSimilarities"));
        }
        Ok(Self { holistic, atomistic })
    }

    pub fn batch(&self) -> usize {
        self.holistic.rows()
    }

    pub fn combined(&self) -> Tensor2D {
        self.holistic
            .zip_map(&self.atomistic, "combined", |a, b| a + b)
            .expect("shapes checked at construction")
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(HudError::InvalidArgument(format!("tau must be positive, got {tau}")))
    }
}

fn check_pair(op: &'static str, c: &Tensor2D, t: &Tensor2D, bias_len: usize) -> Result<()> {
    if c.shape() != t.shape() || c.rows() == 0 || bias_len != c.rows() {
        return Err(HudError::shape(
            op,
            format!("composed {:?}, target {:?}, bias {bias_len}", c.shape(), t.shape()),
        ));
    }
    Ok(())
}

/// Per-row scores `s_i` under `reading`. Rows are expected to be
/// L2-normalized by the caller.
pub fn pooled_scores(c: &Tensor2D, t: &Tensor2D, reading: SimilarityReading) -> Result<Vec<f64>> {
    check_pair("pooled_scores", c, t, c.rows())?;
    Ok(match reading {
        SimilarityReading::MaxOverTarget => c
            .iter_rows()
            .map(|ci| {
                let mut best = dot(ci, t.row(0));
                for tj in t.iter_rows().skip(1) {
                    let v = dot(ci, tj);
                    if v > best {
                        best = v;
                    }
                }
                best
            })
            .collect(),
        SimilarityReading::MatchedIndex => c.iter_rows().zip(t.iter_rows()).map(|(ci, ti)| dot(ci, ti)).collect(),
    })
}

fn weights_from_scores(scores: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    let soft = tensor::softmax_rows(&Tensor2D::row_vector(scores))?;
    Ok(soft.data().iter().zip(bias).map(|(w, b)| w + b).collect())
}

/// `softmax(s) + b`. The bias is added after the softmax, so the weights sum
/// to `1 + Σ b`.
pub fn similarity_bias(c: &Tensor2D, t: &Tensor2D, bias: &[f64], reading: SimilarityReading) -> Result<Vec<f64>> {
    check_pair("similarity_bias", c, t, bias.len())?;
    weights_from_scores(&pooled_scores(c, t, reading)?, bias)
}

/// `S = Σ_i w_i · s_i` with `w = similarity_bias(C, T, b)`.
pub fn hierarchical_similarity(c: &Tensor2D, t: &Tensor2D, bias: &[f64], reading: SimilarityReading) -> Result<f64> {
    check_pair("hierarchical_similarity", c, t, bias.len())?;
    let scores = pooled_scores(c, t, reading)?;
    let weights = weights_from_scores(&scores, bias)?;
    Ok(weights.iter().zip(&scores).map(|(w, s)| w * s).sum())
}

/// All `B²` holistic and atomistic similarities on L2-normalized rows.
pub fn batch_similarities(
    queries: &[ComposedTokens],
    targets: &[ComposedTokens],
    bias: &SimilarityBias,
    reading: SimilarityReading,
) -> Result<BatchSimilarities> {
    if queries.is_empty() || queries.len() != targets.len() {
        return Err(HudError::InvalidArgument(format!(
            "batch needs equal non-zero sizes, got {} queries and {} targets",
            queries.len(),
            targets.len()
        )));
    }
    let b = queries.len();
    let norm = |xs: &[ComposedTokens]| -> Vec<(Tensor2D, Tensor2D)> {
        xs.iter()
            .map(|x| {
                (
                    tensor::l2_normalize_rows(&x.holistic),
                    tensor::l2_normalize_rows(&x.atomistic),
                )
            })
            .collect()
    };
    let (q, t) = (norm(queries), norm(targets));
    let mut holistic = Tensor2D::zeros(b, b);
    let mut atomistic = Tensor2D::zeros(b, b);
    for (i, (qh, qa)) in q.iter().enumerate() {
        for (j, (th, ta)) in t.iter().enumerate() {
            holistic.set(i, j, hierarchical_similarity(qh, th, &bias.holistic, reading)?);
            atomistic.set(i, j, hierarchical_similarity(qa, ta, &bias.atomistic, reading)?);
        }
    }
    BatchSimilarities::new(holistic, atomistic)
}

fn rank_loss_matrix(m: &Tensor2D, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let ls = tensor::log_softmax_rows(&m.map(|v| v / tau))?;
    let b = m.rows();
    Ok(-(0..b).map(|i| ls.get(i, i)).sum::<f64>() / b as f64)
}

/// In-batch classification loss on `(holistic + atomistic) / τ`.
pub fn rank_loss(sims: &BatchSimilarities, tau: f64) -> Result<f64> {
    rank_loss_matrix(&sims.combined(), tau)
}

/// `softmax(row / τ)`.
pub fn similarity_degree_distribution(row: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    if row.is_empty() {
        return Err(HudError::InvalidArgument("empty similarity row".into()));
    }
    let scaled: Vec<f64> = row.iter().map(|v| v / tau).collect();
    Ok(tensor::softmax_rows(&Tensor2D::row_vector(&scaled))?.into_data())
}

/// `1/2B · Σ_i KL(s^A_t,i ‖ s^H_c,i) + KL(s^H_t,i ‖ s^A_c,i)`. Composed-side
/// distributions read rows of a similarity matrix, target-side ones read
/// its columns.
pub fn distribution_regularization(sims: &BatchSimilarities, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let b = sims.batch();
    let (ht, at) = (sims.holistic.transpose(), sims.atomistic.transpose());
    let mut total = 0.0;
    for i in 0..b {
        let s_hc = similarity_degree_distribution(sims.holistic.row(i), tau)?;
        let s_ac = similarity_degree_distribution(sims.atomistic.row(i), tau)?;
        let s_ht = similarity_degree_distribution(ht.row(i), tau)?;
        let s_at = similarity_degree_distribution(at.row(i), tau)?;
        total += tensor::kl_categorical(&s_at, &s_hc)? + tensor::kl_categorical(&s_ht, &s_ac)?;
    }
    Ok(total / (2 * b) as f64)
}

/// `rank_loss + κ · distribution_regularization`.
pub fn total_loss(sims: &BatchSimilarities, tau: f64, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    Ok(rank_loss(sims, tau)? + kappa * distribution_regularization(sims, tau)?)
}

pub(crate) fn check_kappa(kappa: f64) -> Result<()> {
    if kappa >= 0.0 && kappa.is_finite() {
        Ok(())
    } else {
        Err(HudError::InvalidArgument(format!(
            "kappa must be non-negative, got {kappa}"
        )))
    }
}

/// Tape version of one level's `B × B` similarity matrix. Rows of every
/// query and target are L2-normalized here; all matrices must share a shape.
pub fn similarity_matrix_graph(
    g: &mut Graph,
    queries: &[Var],
    targets: &[Var],
    bias: Option<Var>,
    reading: SimilarityReading,
) -> Result<Var> {
    if queries.is_empty() || queries.len() != targets.len() {
        return Err(HudError::InvalidArgument(format!(
            "batch needs equal non-zero sizes, got {} queries and {} targets",
            queries.len(),
            targets.len()
        )));
    }
    let shape = g.shape(queries[0]);
    if let Some(bad) = queries.iter().chain(targets).find(|v| g.shape(**v) != shape) {
        return Err(HudError::shape(
            "similarity_matrix_graph",
            format!("{:?} vs {:?}", g.shape(*bad), shape),
        ));
    }
    let k = shape.0;
    if let Some(b) = bias {
        if g.shape(b) != (1, k) {
            return Err(HudError::shape(
                "similarity_matrix_graph",
                format!("bias {:?} for {k} rows", g.shape(b)),
            ));
        }
    }
    let stacked = g.concat_rows(targets)?;
    let all_targets = g.l2_normalize_rows(stacked);
    let ones = g.constant(Tensor2D::filled(k, 1, 1.0));
    let mut rows = Vec::with_capacity(queries.len());
    for &q in queries {
        let c = g.l2_normalize_rows(q);
        let dots = g.matmul_nt(c, all_targets)?;
        let scores = match reading {
            SimilarityReading::MaxOverTarget => g.block_max(dots, k)?,
            SimilarityReading::MatchedIndex => g.block_diag(dots)?,
        };
        // One row per target, one column per composed token.
        let per_target = g.transpose(scores);
        let soft = g.softmax_rows(per_target)?;
        let weights = match bias {
            Some(b) => g.add_row(soft, b)?,
            None => soft,
        };
        let weighted = g.mul(weights, per_target)?;
        let column = g.matmul(weighted, ones)?;
        rows.push(g.transpose(column));
    }
    g.concat_rows(&rows)
}

/// Tape version of [`rank_loss`] on a combined `B × B` matrix.
pub fn rank_loss_graph(g: &mut Graph, combined: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let scaled = g.scale(combined, 1.0 / tau);
    let ls = g.log_softmax_rows(scaled)?;
    let d = g.diag(ls)?;
    let m = g.mean(d);
    Ok(g.scale(m, -1.0))
}

/// Tape version of [`distribution_regularization`].
pub fn regularization_graph(g: &mut Graph, holistic: Var, atomistic: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    if g.shape(holistic) != g.shape(atomistic) {
        return Err(HudError::shape(
            "regularization_graph",
            format!("{:?} vs {:?}", g.shape(holistic), g.shape(atomistic)),
        ));
    }
    let b = g.shape(holistic).0;
    let mut log_dist = |m: Var, transpose: bool| -> Result<Var> {
        let m = if transpose { g.transpose(m) } else { m };
        let scaled = g.scale(m, 1.0 / tau);
        g.log_softmax_rows(scaled)
    };
    let log_hc = log_dist(holistic, false)?;
    let log_ac = log_dist(atomistic, false)?;
    let log_ht = log_dist(holistic, true)?;
    let log_at = log_dist(atomistic, true)?;
    let mut kl = |p_log: Var, q_log: Var| -> Result<Var> {
        let p = g.exp(p_log);
        let diff = g.sub(p_log, q_log)?;
        let terms = g.mul(p, diff)?;
        Ok(g.sum(terms))
    };
    let first = kl(log_at, log_hc)?;
    let second = kl(log_ht, log_ac)?;
    let both = g.add(first, second)?;
    Ok(g.scale(both, 1.0 / (2 * b) as f64))
}
