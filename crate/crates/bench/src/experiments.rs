//! Ablation derivatives and one-parameter sweeps.

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{BenchError, Result};
use crate::train::{train_on, RunData, TrainOutcome};

/// Trains and evaluates derivative `n` (1 through 9) of `cfg`.
pub fn run_ablation(cfg: &RunConfig, derivative: u8) -> Result<TrainOutcome> {
    let cfg = cfg.clone().with_derivative(derivative)?;
    let data = RunData::generate(&cfg)?;
    train_on(&cfg, &data, |_| Ok(()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    /// Sample count `U`; 0 selects the no-sampling derivative.
    Samples,
    Kappa,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Samples => "samples",
            SweepParam::Kappa => "kappa",
        }
    }

    /// `cfg` with the swept value applied.
    pub fn apply(self, cfg: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut cfg = cfg.clone();
        match self {
            SweepParam::Samples => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(BenchError::Config(format!(
                        "U must be a non-negative integer, got {value}"
                    )));
                }
                if value == 0.0 {
                    cfg = cfg.with_derivative(1)?;
                } else {
                    cfg.samples = value as usize;
                    cfg.no_h_prob = false;
                }
            }
            SweepParam::Kappa => cfg.kappa = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl std::str::FromStr for SweepParam {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "u" | "samples" => Ok(SweepParam::Samples),
            "kappa" => Ok(SweepParam::Kappa),
            other => Err(BenchError::Config(format!(
                "cannot sweep `{other}`; use `samples` or `kappa`"
            ))),
        }
    }
}

/// One train + evaluate per value with the shared seed, run in parallel;
/// results come back in the order of `values`.
pub fn sweep(cfg: &RunConfig, param: SweepParam, values: &[f64]) -> Result<Vec<TrainOutcome>> {
    if values.is_empty() {
        return Err(BenchError::Config("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|&v| param.apply(cfg, v))
        .collect::<Result<Vec<_>>>()?;
    let data = RunData::generate(cfg)?;
    configs.par_iter().map(|c| train_on(c, &data, |_| Ok(()))).collect()
}
