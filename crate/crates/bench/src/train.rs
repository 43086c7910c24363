//! The training loop and its periodic measurements.

use std::time::Instant;

use hud_core::encoder::EMBED_TABLE;
use hud_core::error::HudError;
use hud_core::graph::Graph;
use hud_core::model::{batch_loss, ModelConfig, Triplet};
use hud_core::optim::adam_step;
use hud_core::params::ParameterStore;
use hud_core::rng::RngStream;
use hud_core::tensor::Tensor2D;

use crate::config::RunConfig;
use crate::error::{BenchError, Result};
use crate::eval::{eval_noise_seed, evaluate_recall};
use crate::metrics::MetricsRecord;
use crate::synthbench::{generate_dataset, Dataset, Video};

const SAMPLER_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const PROBE_STREAM: u64 = 3;

/// Seed of the held-out evaluation set for a run seed.
pub fn eval_data_seed(seed: u64) -> u64 {
    seed.wrapping_add(0x9E37_79B9_7F4A_7C15)
}

/// Training triplets and the held-out queries with their gallery.
#[derive(Clone, Debug)]
pub struct RunData {
    pub train: Dataset,
    pub eval: Dataset,
}

impl RunData {
    pub fn generate(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let synth = cfg.synth();
        Ok(Self {
            train: generate_dataset(cfg.seed, cfg.train_triplets, 0, &synth)?,
            eval: generate_dataset(eval_data_seed(cfg.seed), cfg.eval_queries, cfg.distractors, &synth)?,
        })
    }

    pub fn queries(&self) -> Vec<&Triplet> {
        self.eval.triplets.iter().map(|t| &t.triplet).collect()
    }

    pub fn database(&self) -> Vec<&Video> {
        self.eval.database()
    }

    /// The fixed batch the probe losses are measured on.
    pub fn probe_batch(&self, batch: usize) -> Vec<Triplet> {
        self.train
            .triplets
            .iter()
            .take(batch)
            .map(|t| t.triplet.clone())
            .collect()
    }
}

/// Everything that evolves during training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub store: ParameterStore,
    pub sampler: RngStream,
    pub noise: RngStream,
}

impl TrainState {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = cfg.model().init_params(cfg.seed)?;
        if cfg.freeze_embeddings {
            store.set_frozen(EMBED_TABLE, true)?;
        }
        Ok(Self {
            store,
            sampler: RngStream::with_stream(cfg.seed, SAMPLER_STREAM),
            noise: RngStream::with_stream(cfg.seed, NOISE_STREAM),
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub records: Vec<MetricsRecord>,
}

impl TrainOutcome {
    pub fn final_record(&self) -> &MetricsRecord {
        self.records.last().expect("training always records step 0")
    }
}

/// `(total, rank, regularizer)` on the probe batch with fixed noise.
pub fn probe_losses(
    store: &ParameterStore,
    model: &ModelConfig,
    cfg: &RunConfig,
    data: &RunData,
) -> Result<(f64, f64, Option<f64>)> {
    let batch = data.probe_batch(cfg.batch);
    let mut g = Graph::new(store);
    let mut rng = RngStream::with_stream(cfg.seed, PROBE_STREAM);
    let l = batch_loss(&mut g, model, &batch, &mut rng)?;
    Ok((g.scalar(l.loss), g.scalar(l.rank), l.regularizer.map(|r| g.scalar(r))))
}

/// Probe losses and Recall@k for the current parameters.
pub fn measure(
    store: &ParameterStore,
    cfg: &RunConfig,
    data: &RunData,
    step: u64,
    train_loss: Option<f64>,
    started: Option<Instant>,
) -> Result<MetricsRecord> {
    let model = cfg.model();
    let (loss, rank_loss, kl_loss) = probe_losses(store, &model, cfg, data)?;
    let recall = evaluate_recall(
        store,
        &model,
        &data.queries(),
        &data.database(),
        eval_noise_seed(cfg.seed),
    )?;
    Ok(MetricsRecord {
        step,
        loss,
        rank_loss,
        kl_loss,
        train_loss,
        recall_at_1: recall[0],
        recall_at_5: recall[1],
        recall_at_10: recall[2],
        recall_at_50: recall[3],
        wall_time_ms: started.map(|t| t.elapsed().as_secs_f64() * 1e3),
        config_hash: cfg.hash(),
    })
}

fn sample_batch(sampler: &mut RngStream, n: usize, size: usize) -> Vec<usize> {
    let mut picked = Vec::with_capacity(size);
    while picked.len() < size {
        let i = sampler.below(n);
        if !picked.contains(&i) {
            picked.push(i);
        }
    }
    picked
}

fn diverged(cfg: &RunConfig, step: u64, loss: f64) -> BenchError {
    BenchError::Diverged {
        step,
        record: Box::new(MetricsRecord {
            step,
            loss,
            rank_loss: f64::NAN,
            kl_loss: None,
            train_loss: Some(loss),
            recall_at_1: f64::NAN,
            recall_at_5: f64::NAN,
            recall_at_10: f64::NAN,
            recall_at_50: f64::NAN,
            wall_time_ms: None,
            config_hash: cfg.hash(),
        }),
    }
}

/// One optimizer step on a sampled batch; returns the batch objective.
pub fn train_step(cfg: &RunConfig, model: &ModelConfig, data: &RunData, state: &mut TrainState) -> Result<f64> {
    let step = state.store.step + 1;
    let idx = sample_batch(&mut state.sampler, data.train.triplets.len(), cfg.batch);
    let batch: Vec<Triplet> = idx.iter().map(|&i| data.train.triplets[i].triplet.clone()).collect();
    let noise_start = state.noise.state();

    let mut g = Graph::new(&state.store);
    let l = match batch_loss(&mut g, model, &batch, &mut state.noise) {
        Ok(l) => l,
        Err(HudError::NonFinite(_)) => return Err(diverged(cfg, step, f64::NAN)),
        Err(e) => return Err(e.into()),
    };
    let loss = g.scalar(l.loss);
    if !loss.is_finite() {
        return Err(diverged(cfg, step, loss));
    }
    let grads = g.backward(l.loss)?;
    let named: Vec<(String, Tensor2D)> = grads.params(&g).map(|(n, t)| (n.to_owned(), t)).collect();
    drop(g);

    state.store.zero_grads();
    for (name, grad) in &named {
        state.store.accumulate_grad(name, grad)?;
    }
    adam_step(&mut state.store, &cfg.adam())?;
    if cfg.freeze_noise {
        state.noise = RngStream::from_state(noise_start);
    }
    Ok(loss)
}

/// Trains from a fresh initialization, calling `on_record` for each metrics
/// record as it is produced (step 0, every `eval_every` steps, and the last
/// step).
pub fn train_on(
    cfg: &RunConfig,
    data: &RunData,
    mut on_record: impl FnMut(&MetricsRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut state = TrainState::new(cfg)?;
    let model = cfg.model();
    let started = cfg.timing.then(Instant::now);
    let mut records = Vec::new();
    let mut emit = |r: MetricsRecord, records: &mut Vec<MetricsRecord>| -> Result<()> {
        on_record(&r)?;
        records.push(r);
        Ok(())
    };
    emit(measure(&state.store, cfg, data, 0, None, started)?, &mut records)?;
    let (mut window_sum, mut window_len) = (0.0, 0u64);
    for step in 1..=cfg.steps {
        window_sum += train_step(cfg, &model, data, &mut state)?;
        window_len += 1;
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let mean = window_sum / window_len as f64;
            emit(
                measure(&state.store, cfg, data, step, Some(mean), started)?,
                &mut records,
            )?;
            (window_sum, window_len) = (0.0, 0);
        }
    }
    Ok(TrainOutcome { state, records })
}

pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let data = RunData::generate(cfg)?;
    train_on(cfg, &data, |_| Ok(()))
}
