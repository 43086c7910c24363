//! Recall@k over a target gallery.

use hud_core::model::{self, ModelConfig, Triplet};
use hud_core::params::ParameterStore;
use hud_core::rng::RngStream;
use rayon::prelude::*;

use crate::error::{BenchError, Result};
use crate::synthbench::Video;

pub const K_LIST: [usize; 4] = [1, 5, 10, 50];

/// Zero-based rank of entry `truth` in `scores`: the number of entries scored
/// higher, plus equal scores earlier in gallery order.
pub fn rank_of(scores: &[f64], truth: usize) -> usize {
    let t = scores[truth];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < truth))
        .count()
}

/// Recall@k for every `k`: the fraction of queries whose true target ranks
/// within the top `k` (`k` beyond the gallery size counts everything).
pub fn recall_from_scores(scores: &[Vec<f64>], truth: &[usize], ks: &[usize]) -> Result<Vec<f64>> {
    if scores.is_empty() || scores.len() != truth.len() {
        return Err(BenchError::Config(format!(
            "{} score rows for {} ground-truth indices",
            scores.len(),
            truth.len()
        )));
    }
    let mut ranks = Vec::with_capacity(scores.len());
    for (row, &t) in scores.iter().zip(truth) {
        if row.is_empty() {
            return Err(BenchError::Config("empty target database".into()));
        }
        if t >= row.len() {
            return Err(BenchError::Config(format!(
                "true target {t} outside a database of {}",
                row.len()
            )));
        }
        ranks.push(rank_of(row, t));
    }
    let n = ranks.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| ranks.iter().filter(|&&r| r < k).count() as f64 / n)
        .collect())
}

/// Stream key of the evaluation noise; query `i` reads stream `i`.
pub fn eval_noise_seed(seed: u64) -> u64 {
    seed ^ 0xE7A1_0000_0000_0001
}

/// `queries × database` combined similarities. Query `i` is composed with
/// noise stream `(noise_seed, i)`; parameters are only read.
pub fn score_matrix(
    store: &ParameterStore,
    cfg: &ModelConfig,
    queries: &[&Triplet],
    database: &[&Video],
    noise_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if database.is_empty() {
        return Err(BenchError::Config("empty target database".into()));
    }
    let bias = model::effective_bias(store, cfg)?;
    let targets = database
        .par_iter()
        .map(|v| model::embed_target(store, cfg, v))
        .collect::<hud_core::error::Result<Vec<_>>>()?;
    let scores = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let mut rng = RngStream::with_stream(noise_seed, i as u64);
            let query = model::embed_query(store, cfg, q, &mut rng)?;
            targets.iter().map(|t| model::score(cfg, &bias, &query, t)).collect()
        })
        .collect::<hud_core::error::Result<Vec<Vec<f64>>>>()?;
    Ok(scores)
}

/// Recall at [`K_LIST`] for queries whose true target is gallery entry `i`.
pub fn evaluate_recall(
    store: &ParameterStore,
    cfg: &ModelConfig,
    queries: &[&Triplet],
    database: &[&Video],
    noise_seed: u64,
) -> Result<Vec<f64>> {
    let scores = score_matrix(store, cfg, queries, database, noise_seed)?;
    let truth: Vec<usize> = (0..queries.len()).collect();
    recall_from_scores(&scores, &truth, &K_LIST)
}
