//! Central-difference verification of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HudError, Result};
use crate::graph::{Graph, Var};
use crate::params::ParameterStore;

/// Which coordinates of each parameter to perturb.
#[derive(Clone, Copy, Debug)]
pub enum Coordinates {
    All,
    /// Up to `per_param` coordinates per parameter, drawn with `seed`.
    Sample {
        per_param: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub loss: f64,
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    /// `(parameter, flat index, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Compares the tape gradient of `loss_fn` against central differences
/// `(L(θ + ε) − L(θ − ε)) / 2ε`, reporting `|a − n| / max(1, |n|)`.
///
/// `loss_fn` must be deterministic: any noise it uses has to come from a
/// frozen [`RngStream`](crate::rng::RngStream) state. The base point is
/// evaluated twice and a mismatch is reported as an error.
pub fn grad_check<F>(store: &ParameterStore, eps: f64, coords: Coordinates, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(HudError::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let eval = |s: &ParameterStore| -> Result<f64> {
        let mut g = Graph::new(s);
        let loss = loss_fn(&mut g)?;
        Ok(g.scalar(loss))
    };

    let mut g = Graph::new(store);
    let loss_var = loss_fn(&mut g)?;
    let loss = g.scalar(loss_var);
    let again = eval(store)?;
    if loss.to_bits() != again.to_bits() {
        return Err(HudError::Nondeterministic {
            first: loss,
            second: again,
        });
    }
    let grads = g.backward(loss_var)?;
    let analytic: Vec<(String, crate::tensor::Tensor2D)> = grads.params(&g).map(|(n, t)| (n.to_owned(), t)).collect();
    drop(g);

    let mut work = store.clone();
    let mut report = GradCheckReport {
        loss,
        params: Vec::new(),
        max_rel_error: 0.0,
        worst: None,
    };
    for (name, grad) in &analytic {
        let n = grad.len();
        let indices: Vec<usize> = match coords {
            Coordinates::All => (0..n).collect(),
            Coordinates::Sample { per_param, seed } if per_param < n => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name.len() as u64);
                let mut idx: Vec<usize> = (0..n).collect();
                for i in 0..per_param {
                    let j = rng.gen_range(i..n);
                    idx.swap(i, j);
                }
                idx.truncate(per_param);
                idx
            }
            Coordinates::Sample { .. } => (0..n).collect(),
        };
        let mut entry = ParamCheck {
            name: name.clone(),
            checked: indices.len(),
            max_rel_error: 0.0,
            max_abs_analytic: grad.data().iter().fold(0.0, |m, v| m.max(v.abs())),
        };
        for idx in indices {
            let original = work.value(name)?.data()[idx];
            work.get_mut(name)?.value.data_mut()[idx] = original + eps;
            let plus = eval(&work)?;
            work.get_mut(name)?.value.data_mut()[idx] = original - eps;
            let minus = eval(&work)?;
            work.get_mut(name)?.value.data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[idx];
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            if rel > entry.max_rel_error {
                entry.max_rel_error = rel;
            }
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((name.clone(), idx, a, numeric));
            }
        }
        report.params.push(entry);
    }
    Ok(report)
}
