//! Layer helpers on top of [`Graph`]. Parameters are addressed by dotted
//! names in the [`ParameterStore`]; `register_*` creates them, the matching
//! forward function reads them.

use crate::error::{HudError, Result};
use crate::graph::{Graph, Var};
use crate::params::{Initializer, ParameterStore};
use crate::tensor::Tensor2D;

pub fn register_linear(
    store: &mut ParameterStore,
    init: &Initializer,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> Result<()> {
    let w = format!("{name}.weight");
    store.insert(w.clone(), init.xavier(&w, fan_in, fan_out, 1.0))?;
    store.insert(format!("{name}.bias"), Tensor2D::zeros(1, fan_out))
}

/// `x · W + b`
pub fn linear(g: &mut Graph, name: &str, x: Var) -> Result<Var> {
    let w = g.param(&format!("{name}.weight"))?;
    let b = g.param(&format!("{name}.bias"))?;
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

pub fn register_layer_norm(store: &mut ParameterStore, name: &str, width: usize) -> Result<()> {
    store.insert(format!("{name}.gamma"), Tensor2D::filled(1, width, 1.0))?;
    store.insert(format!("{name}.beta"), Tensor2D::zeros(1, width))
}

pub fn layer_norm(g: &mut Graph, name: &str, x: Var) -> Result<Var> {
    let gamma = g.param(&format!("{name}.gamma"))?;
    let beta = g.param(&format!("{name}.beta"))?;
    g.layer_norm(x, gamma, beta)
}

/// Single-head attention: query/key/value projections, no output projection.
pub fn register_attention(store: &mut ParameterStore, init: &Initializer, name: &str, width: usize) -> Result<()> {
    for p in ["wq", "wk", "wv"] {
        let full = format!("{name}.{p}");
        store.insert(full.clone(), init.xavier(&full, width, width, 1.0))?;
    }
    Ok(())
}

/// `softmax_rows(Q Wq (K Wk)ᵀ / √d) · V Wv`, one output row per query row.
pub fn cross_attention(g: &mut Graph, name: &str, q: Var, k: Var, v: Var) -> Result<Var> {
    let (q_shape, k_shape, v_shape) = (g.shape(q), g.shape(k), g.shape(v));
    if q_shape.1 != k_shape.1 || k_shape.0 != v_shape.0 {
        return Err(HudError::Shape {
            op: "cross_attention",
            detail: format!("Q {q_shape:?}, K {k_shape:?}, V {v_shape:?}"),
        });
    }
    if k_shape.0 == 0 {
        return Err(HudError::InvalidArgument("cross_attention with no keys".into()));
    }
    let wq = g.param(&format!("{name}.wq"))?;
    let wk = g.param(&format!("{name}.wk"))?;
    let wv = g.param(&format!("{name}.wv"))?;
    let qp = g.matmul(q, wq)?;
    let kp = g.matmul(k, wk)?;
    let vp = g.matmul(v, wv)?;
    let d = g.shape(kp).1 as f64;
    let logits = g.matmul_nt(qp, kp)?;
    let logits = g.scale(logits, 1.0 / d.sqrt());
    let attn = g.softmax_rows(logits)?;
    g.matmul(attn, vp)
}

/// Reparametrized Gaussian draw `sigma ⊙ eta + mu` with externally supplied
/// noise, differentiable in `mu` and `sigma`.
pub fn gaussian_sample(g: &mut Graph, mu: Var, sigma: Var, eta: Tensor2D) -> Result<Var> {
    if g.shape(mu) != g.shape(sigma) || g.shape(mu) != eta.shape() {
        return Err(HudError::Shape {
            op: "gaussian_sample",
            detail: format!(
                "mu {:?}, sigma {:?}, eta {:?}",
                g.shape(mu),
                g.shape(sigma),
                eta.shape()
            ),
        });
    }
    let eta = g.constant(eta);
    let scaled = g.mul(sigma, eta)?;
    g.add(scaled, mu)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn attention_store(wq: Tensor2D, wk: Tensor2D, wv: Tensor2D) -> ParameterStore {
        let mut s = ParameterStore::default();
        s.insert("att.wq", wq).unwrap();
        s.insert("att.wk", wk).unwrap();
        s.insert("att.wv", wv).unwrap();
        s
    }

    #[test]
    fn one_key_returns_projected_value() {
        let init = Initializer::new(5);
        let mut store = ParameterStore::default();
        register_attention(&mut store, &init, "att", 3).unwrap();
        let mut g = Graph::new(&store);
        let q = g.constant(RngStream::new(1).normal_matrix(4, 3));
        let kv = g.constant(Tensor2D::row_vector(&[0.5, -1.0, 2.0]));
        let out = cross_attention(&mut g, "att", q, kv, kv).unwrap();
        let projected = crate::tensor::matmul(g.value(kv), store.value("att.wv").unwrap()).unwrap();
        for r in g.value(out).iter_rows() {
            assert_eq!(r, projected.data());
        }
    }

    #[test]
    fn identical_queries_identical_rows() {
        let init = Initializer::new(9);
        let mut store = ParameterStore::default();
        register_attention(&mut store, &init, "att", 2).unwrap();
        let mut g = Graph::new(&store);
        let q = g.constant(Tensor2D::from_rows(&[[0.3, 0.1], [0.3, 0.1]]).unwrap());
        let kv = g.constant(Tensor2D::from_rows(&[[1.0, 0.0], [0.0, 1.0], [2.0, -1.0]]).unwrap());
        let out = cross_attention(&mut g, "att", q, kv, kv).unwrap();
        assert_eq!(g.value(out).row(0), g.value(out).row(1));
    }

    #[test]
    fn hand_computed_two_by_two() {
        // Wq = Wk = I, Wv = [[1, 2], [0, 1]]; Q = [[1, 0], [0, 1]], K = V = [[1, 0], [0, 2]].
        let store = attention_store(
            Tensor2D::identity(2),
            Tensor2D::identity(2),
            Tensor2D::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap(),
        );
        let mut g = Graph::new(&store);
        let q = g.constant(Tensor2D::identity(2));
        let kv = g.constant(Tensor2D::from_rows(&[[1.0, 0.0], [0.0, 2.0]]).unwrap());
        let out = cross_attention(&mut g, "att", q, kv, kv).unwrap();

        // Logits Q Kᵀ / √2: row 0 = [1, 0] / √2, row 1 = [0, 2] / √2.
        // V Wv = [[1, 2], [0, 2]].
        let s = 2f64.sqrt();
        let w0 = [1.0 / (1.0 + (-1.0 / s).exp()), 0.0];
        let w0 = [w0[0], 1.0 - w0[0]];
        let w1 = [1.0 / (1.0 + (2.0 / s).exp()), 0.0];
        let w1 = [w1[0], 1.0 - w1[0]];
        let expect = [
            [w0[0] * 1.0 + w0[1] * 0.0, w0[0] * 2.0 + w0[1] * 2.0],
            [w1[0] * 1.0 + w1[1] * 0.0, w1[0] * 2.0 + w1[1] * 2.0],
        ];
        let got = g.value(out);
        for i in 0..2 {
            for j in 0..2 {
                assert!((got.get(i, j) - expect[i][j]).abs() < 1e-14, "({i},{j})");
            }
        }
    }

    #[test]
    fn attention_shape_mismatch() {
        let store = attention_store(Tensor2D::identity(2), Tensor2D::identity(2), Tensor2D::identity(2));
        let mut g = Graph::new(&store);
        let q = g.constant(Tensor2D::zeros(1, 2));
        let k = g.constant(Tensor2D::zeros(3, 2));
        let v = g.constant(Tensor2D::zeros(2, 2));
        assert!(matches!(
            cross_attention(&mut g, "att", q, k, v),
            Err(HudError::Shape { .. })
        ));
    }

    #[test]
    fn gaussian_sample_degenerate_and_forced() {
        let store = ParameterStore::default();
        let mut g = Graph::new(&store);
        let mu_t = RngStream::new(2).normal_matrix(3, 4);
        let sigma_t = RngStream::new(3).normal_matrix(3, 4);
        let mu = g.constant(mu_t.clone());
        let zero = g.constant(Tensor2D::zeros(3, 4));
        let s = gaussian_sample(&mut g, mu, zero, RngStream::new(4).normal_matrix(3, 4)).unwrap();
        assert_eq!(g.value(s), &mu_t);

        let sigma = g.constant(sigma_t.clone());
        let s = gaussian_sample(&mut g, mu, sigma, Tensor2D::filled(3, 4, 1.0)).unwrap();
        let expect = mu_t.zip_map(&sigma_t, "t", |m, s| s + m).unwrap();
        assert_eq!(g.value(s), &expect);
    }

    #[test]
    fn gaussian_sample_monte_carlo_moments() {
        let n = 100_000;
        let store = ParameterStore::default();
        let mut g = Graph::new(&store);
        let mu = g.constant(Tensor2D::zeros(n, 1));
        let sigma = g.constant(Tensor2D::filled(n, 1, 2.0));
        let eta = RngStream::new(11).normal_matrix(n, 1);
        let s = gaussian_sample(&mut g, mu, sigma, eta).unwrap();
        let xs = g.value(s).data();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 3.0 * 2.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 4.0).abs() / 4.0 <= 0.05, "var {var}");
    }
}
