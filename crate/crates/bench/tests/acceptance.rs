//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use hud_bench::checkpoint::Checkpoint;
use hud_bench::config::RunConfig;
use hud_bench::error::BenchError;
use hud_bench::experiments::SweepParam;
use hud_bench::metrics;
use hud_bench::synthbench::{generate_dataset, pronoun_ratio, read_corpus, DEFAULT_PRONOUNS};
use hud_bench::train::{measure, train_on, RunData, TrainOutcome};
use hud_core::alignment::{
    batch_similarities, distribution_regularization, hierarchical_similarity, pooled_scores, rank_loss,
    rank_loss_graph, regularization_graph, similarity_bias, similarity_matrix_graph, total_loss, BatchSimilarities,
    ComposedTokens, SimilarityBias, SimilarityReading,
};
use hud_core::atomistic::{sample_detail_tokens, TokenGaussian};
use hud_core::gradcheck::{grad_check, Coordinates};
use hud_core::graph::Graph;
use hud_core::holistic::{sample_modification, TextGaussian};
use hud_core::model::{batch_loss, ModelConfig, Triplet};
use hud_core::params::ParameterStore;
use hud_core::rng::RngStream;
use hud_core::tensor::Tensor2D;
use rayon::prelude::*;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random(rng: &mut RngStream, rows: usize, cols: usize) -> Tensor2D {
    rng.normal_matrix(rows, cols)
}

// Loop oracles, written against plain slices.

fn o_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

fn o_normalize(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let n = o_dot(r, r).sqrt();
            r.iter().map(|v| v / n).collect()
        })
        .collect()
}

fn o_softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn o_scores(c: &[Vec<f64>], t: &[Vec<f64>], matched: bool) -> Vec<f64> {
    (0..c.len())
        .map(|i| {
            if matched {
                o_dot(&c[i], &t[i])
            } else {
                let mut best = f64::NEG_INFINITY;
                for tj in t {
                    best = best.max(o_dot(&c[i], tj));
                }
                best
            }
        })
        .collect()
}

fn o_weights(c: &[Vec<f64>], t: &[Vec<f64>], b: &[f64], matched: bool) -> Vec<f64> {
    let s = o_scores(c, t, matched);
    o_softmax(&s).iter().zip(b).map(|(w, bi)| w + bi).collect()
}

fn o_similarity(c: &[Vec<f64>], t: &[Vec<f64>], b: &[f64], matched: bool) -> f64 {
    let s = o_scores(c, t, matched);
    let w = o_weights(c, t, b, matched);
    let mut total = 0.0;
    for i in 0..s.len() {
        total += w[i] * s[i];
    }
    total
}

fn o_rank(h: &[Vec<f64>], a: &[Vec<f64>], tau: f64) -> f64 {
    let b = h.len();
    let mut total = 0.0;
    for i in 0..b {
        let row: Vec<f64> = (0..b).map(|j| (h[i][j] + a[i][j]) / tau).collect();
        total -= o_softmax(&row)[i].ln();
    }
    total / b as f64
}

fn o_kl(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..p.len() {
        if p[k] > 0.0 {
            s += p[k] * (p[k] / q[k]).ln();
        }
    }
    s
}

fn o_regularizer(h: &[Vec<f64>], a: &[Vec<f64>], tau: f64) -> f64 {
    let b = h.len();
    let row = |m: &[Vec<f64>], i: usize| o_softmax(&m[i].iter().map(|v| v / tau).collect::<Vec<_>>());
    let col = |m: &[Vec<f64>], i: usize| o_softmax(&(0..b).map(|j| m[j][i] / tau).collect::<Vec<_>>());
    let mut total = 0.0;
    for i in 0..b {
        total += o_kl(&col(a, i), &row(h, i)) + o_kl(&col(h, i), &row(a, i));
    }
    total / (2 * b) as f64
}

fn rows_of(t: &Tensor2D) -> Vec<Vec<f64>> {
    t.iter_rows().map(|r| r.to_vec()).collect()
}

fn desk_triplets(seed: u64, batch: usize) -> Vec<Triplet> {
    let cfg = RunConfig::default();
    let data = generate_dataset(seed, batch, 0, &cfg.synth()).expect("dataset");
    data.triplets.into_iter().map(|t| t.triplet).collect()
}

fn gradient_suite() -> Outcome {
    let model = ModelConfig {
        samples: 3,
        ..ModelConfig::default()
    };
    let d = model.dims;
    let desk = d.frames == 2 && d.queries == 4 && d.atom_dim == 16 && d.holistic_dim == 8;
    let store = model.init_params(7).expect("params");
    let batch = desk_triplets(7, 4);
    let start = Instant::now();
    let report = grad_check(&store, 1e-6, Coordinates::All, |g| {
        Ok(batch_loss(g, &model, &batch, &mut RngStream::new(11))?.loss)
    })
    .expect("grad check");
    let elapsed = start.elapsed();
    let every_param = report.params.len() == store.len() && report.params.iter().all(|p| p.checked > 0);
    outcome(
        desk && every_param && report.passes(1e-4) && elapsed < Duration::from_secs(120),
        format!(
            "{} params, {} coordinates, max rel err {:.3e} (≤ 1e-4), {:.1?} (< 120 s)",
            report.params.len(),
            report.checked(),
            report.max_rel_error,
            elapsed
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let mut rng = RngStream::new(2024);
    let mut worst = 0.0f64;
    let tau = 0.1;
    for _ in 0..1000 {
        let b = 1 + rng.below(4);
        let k = 1 + rng.below(8);
        let d = 1 + rng.below(8);
        let matched = rng.below(2) == 1;
        let reading = if matched {
            SimilarityReading::MatchedIndex
        } else {
            SimilarityReading::MaxOverTarget
        };
        let bias_h: Vec<f64> = random(&mut rng, 1, k).data().iter().map(|v| 0.1 * v).collect();
        let bias_a: Vec<f64> = random(&mut rng, 1, k).data().iter().map(|v| 0.1 * v).collect();
        let make = |rng: &mut RngStream| -> Vec<ComposedTokens> {
            (0..b)
                .map(|_| ComposedTokens {
                    holistic: random(rng, k, d),
                    atomistic: random(rng, k, d),
                })
                .collect()
        };
        let (qs, ts) = (make(&mut rng), make(&mut rng));

        // Single-pair weights and similarity on normalized rows.
        let c = hud_core::tensor::l2_normalize_rows(&qs[0].holistic);
        let t = hud_core::tensor::l2_normalize_rows(&ts[0].holistic);
        let (oc, ot) = (
            o_normalize(&rows_of(&qs[0].holistic)),
            o_normalize(&rows_of(&ts[0].holistic)),
        );
        let w = similarity_bias(&c, &t, &bias_h, reading).expect("weights");
        for (x, y) in w.iter().zip(o_weights(&oc, &ot, &bias_h, matched)) {
            worst = worst.max((x - y).abs());
        }
        let s = hierarchical_similarity(&c, &t, &bias_h, reading).expect("similarity");
        worst = worst.max((s - o_similarity(&oc, &ot, &bias_h, matched)).abs());

        // Full batch matrices and losses.
        let bias = SimilarityBias {
            holistic: bias_h.clone(),
            atomistic: bias_a.clone(),
        };
        let sims = batch_similarities(&qs, &ts, &bias, reading).expect("batch");
        let oracle_matrix = |level: fn(&ComposedTokens) -> &Tensor2D, bias: &[f64]| -> Vec<Vec<f64>> {
            (0..b)
                .map(|i| {
                    (0..b)
                        .map(|j| {
                            let c = o_normalize(&rows_of(level(&qs[i])));
                            let t = o_normalize(&rows_of(level(&ts[j])));
                            o_similarity(&c, &t, bias, matched)
                        })
                        .collect()
                })
                .collect()
        };
        let oh = oracle_matrix(|x| &x.holistic, &bias_h);
        let oa = oracle_matrix(|x| &x.atomistic, &bias_a);
        for i in 0..b {
            for j in 0..b {
                worst = worst.max((sims.holistic.get(i, j) - oh[i][j]).abs());
                worst = worst.max((sims.atomistic.get(i, j) - oa[i][j]).abs());
            }
        }
        let rank = rank_loss(&sims, tau).expect("rank");
        let reg = distribution_regularization(&sims, tau).expect("reg");
        worst = worst.max((rank - o_rank(&oh, &oa, tau)).abs());
        worst = worst.max((reg - o_regularizer(&oh, &oa, tau)).abs());

        // Tape path against the same oracles.
        let store = ParameterStore::default();
        let mut g = Graph::new(&store);
        let level = |g: &mut Graph, xs: &[ComposedTokens], hol: bool| -> Vec<_> {
            xs.iter()
                .map(|x| g.constant(if hol { x.holistic.clone() } else { x.atomistic.clone() }))
                .collect()
        };
        let (qh, th, qa, ta) = (
            level(&mut g, &qs, true),
            level(&mut g, &ts, true),
            level(&mut g, &qs, false),
            level(&mut g, &ts, false),
        );
        let bh = g.constant(Tensor2D::row_vector(&bias_h));
        let ba = g.constant(Tensor2D::row_vector(&bias_a));
        let mh = similarity_matrix_graph(&mut g, &qh, &th, Some(bh), reading).expect("graph h");
        let ma = similarity_matrix_graph(&mut g, &qa, &ta, Some(ba), reading).expect("graph a");
        let combined = g.add(mh, ma).expect("add");
        let gr = rank_loss_graph(&mut g, combined, tau).expect("graph rank");
        let gk = regularization_graph(&mut g, mh, ma, tau).expect("graph reg");
        worst = worst.max((g.scalar(gr) - o_rank(&oh, &oa, tau)).abs());
        worst = worst.max((g.scalar(gk) - o_regularizer(&oh, &oa, tau)).abs());
    }
    outcome(
        worst <= 1e-12,
        format!("1000 instances, max abs deviation {worst:.3e} (≤ 1e-12)"),
    )
}

fn loss_identities() -> Outcome {
    let tau = 0.1;
    let mut constant_err = 0.0f64;
    for b in 1..=8 {
        for value in [-1.0, 0.0, 0.37, 2.0] {
            let m = Tensor2D::filled(b, b, value);
            let sims = BatchSimilarities::new(m.clone(), m).expect("sims");
            constant_err = constant_err.max((rank_loss(&sims, tau).expect("rank") - (b as f64).ln()).abs());
        }
    }
    let mut rng = RngStream::new(99);
    let mut symmetric_err = 0.0f64;
    let mut linear = true;
    for _ in 0..200 {
        let b = 1 + rng.below(6);
        let x = random(&mut rng, b, b);
        let sym = x.zip_map(&x.transpose(), "sym", |p, q| 0.5 * (p + q)).expect("sym");
        let sims = BatchSimilarities::new(sym.clone(), sym).expect("sims");
        symmetric_err = symmetric_err.max(distribution_regularization(&sims, tau).expect("reg").abs());

        let sims = BatchSimilarities::new(random(&mut rng, b, b), random(&mut rng, b, b)).expect("sims");
        let rank = rank_loss(&sims, tau).expect("rank");
        let reg = distribution_regularization(&sims, tau).expect("reg");
        for kappa in [0.0, 0.25, 0.5, 1.0, 3.0] {
            linear &= total_loss(&sims, tau, kappa).expect("total").to_bits() == (rank + kappa * reg).to_bits();
        }
    }
    outcome(
        constant_err <= 1e-9 && symmetric_err <= 1e-12 && linear,
        format!(
            "constant |L - ln B| {constant_err:.1e} (≤ 1e-9), symmetric KL {symmetric_err:.1e} (≤ 1e-12), \
             total == rank + κ·reg bit-exact: {linear}"
        ),
    )
}

fn reading_coincidence() -> Outcome {
    let mut rng = RngStream::new(4);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let k = 1 + rng.below(8);
        let d = 1 + rng.below(8);
        let b = 1 + rng.below(4);
        let bias: Vec<f64> = random(&mut rng, 1, k).data().iter().map(|v| 0.1 * v).collect();
        let c = hud_core::tensor::l2_normalize_rows(&random(&mut rng, k, d));
        let row = hud_core::tensor::l2_normalize_rows(&random(&mut rng, 1, d));
        let t = Tensor2D::from_rows(&vec![row.row(0).to_vec(); k]).expect("rows");
        let max = pooled_scores(&c, &t, SimilarityReading::MaxOverTarget).expect("max");
        let idx = pooled_scores(&c, &t, SimilarityReading::MatchedIndex).expect("idx");
        let sm = hierarchical_similarity(&c, &t, &bias, SimilarityReading::MaxOverTarget).expect("s");
        let si = hierarchical_similarity(&c, &t, &bias, SimilarityReading::MatchedIndex).expect("s");
        if max.iter().zip(&idx).any(|(a, b)| a.to_bits() != b.to_bits()) || sm.to_bits() != si.to_bits() {
            mismatches += 1;
        }

        // The tape path with a batch of replicated targets.
        let store = ParameterStore::default();
        let mut g = Graph::new(&store);
        let queries: Vec<_> = (0..b).map(|_| g.constant(random(&mut rng, k, d))).collect();
        let targets: Vec<_> = (0..b)
            .map(|_| {
                let r = random(&mut rng, 1, d);
                g.constant(Tensor2D::from_rows(&vec![r.row(0).to_vec(); k]).expect("rows"))
            })
            .collect();
        let bv = g.constant(Tensor2D::row_vector(&bias));
        let a =
            similarity_matrix_graph(&mut g, &queries, &targets, Some(bv), SimilarityReading::MaxOverTarget).expect("g");
        let m =
            similarity_matrix_graph(&mut g, &queries, &targets, Some(bv), SimilarityReading::MatchedIndex).expect("g");
        if g.value(a)
            .data()
            .iter()
            .zip(g.value(m).data())
            .any(|(x, y)| x.to_bits() != y.to_bits())
        {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("1000 instances, {mismatches} bit mismatches"))
}

fn moments(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let xs: Vec<f64> = values.collect();
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var, n)
}

fn reparametrization() -> Outcome {
    let n = 100_000;
    let width = 8;
    let mut rng = RngStream::new(31);
    let mu = random(&mut rng, 1, width);
    let sigma = random(&mut rng, 1, width).map(|v| 0.2 + v.abs());
    let store = ParameterStore::default();
    let mut failures = Vec::new();
    let mut check = |what: &str, draws: &Tensor2D| {
        for j in 0..width {
            let (m, v, n) = moments((0..draws.rows()).map(|i| draws.get(i, j)));
            let (mu_j, s_j) = (mu.get(0, j), sigma.get(0, j));
            let mean_ok = (m - mu_j).abs() <= 3.0 * s_j / (n as f64).sqrt();
            let var_ok = (v - s_j * s_j).abs() / (s_j * s_j) <= 0.05;
            if !(mean_ok && var_ok) {
                failures.push(format!(
                    "{what}[{j}] mean {m:.4} vs {mu_j:.4}, var {v:.4} vs {:.4}",
                    s_j * s_j
                ));
            }
        }
    };

    let mut g = Graph::new(&store);
    let dist = TextGaussian {
        mu: g.constant(mu.clone()),
        sigma: g.constant(sigma.clone()),
    };
    let text = sample_modification(&mut g, dist, n, &mut RngStream::new(5)).expect("text samples");
    check("text", g.value(text));

    let mu_rows = Tensor2D::from_rows(&vec![mu.row(0).to_vec(); n]).expect("rows");
    let sigma_rows = Tensor2D::from_rows(&vec![sigma.row(0).to_vec(); n]).expect("rows");
    let tokens = TokenGaussian {
        mu: g.constant(mu_rows.clone()),
        sigma: g.constant(sigma_rows),
    };
    let detail = sample_detail_tokens(&mut g, tokens, &mut RngStream::new(6)).expect("detail samples");
    check("detail", g.value(detail));

    let zero_text = TextGaussian {
        mu: dist.mu,
        sigma: g.constant(Tensor2D::zeros(1, width)),
    };
    let collapsed = sample_modification(&mut g, zero_text, 16, &mut RngStream::new(7)).expect("collapse");
    let text_exact = g.value(collapsed).iter_rows().all(|r| r == mu.row(0));
    let zero_tokens = TokenGaussian {
        mu: tokens.mu,
        sigma: g.constant(Tensor2D::zeros(n, width)),
    };
    let collapsed = sample_detail_tokens(&mut g, zero_tokens, &mut RngStream::new(8)).expect("collapse");
    let detail_exact = g.value(collapsed) == &mu_rows;

    let pass = failures.is_empty() && text_exact && detail_exact;
    let detail = if failures.is_empty() {
        format!(
            "{n} draws × {width} coordinates on both samplers within bounds, σ=0 collapse bit-exact: {}",
            text_exact && detail_exact
        )
    } else {
        failures.join("; ")
    };
    outcome(pass, detail)
}

fn r1(o: &TrainOutcome) -> f64 {
    o.final_record().recall_at_1
}

fn directional_ablation() -> Outcome {
    let start = Instant::now();
    let base = RunConfig::default();
    let synth_ok =
        base.ambiguous && base.detail_fraction == 0.1 && base.train_triplets == 2000 && base.distractors == 200;
    let u_grid = [1.0, 3.0, 5.0];
    let mut jobs: Vec<(u64, String, RunConfig)> = Vec::new();
    for &seed in &SEEDS {
        let cfg = RunConfig { seed, ..base.clone() };
        for n in [1u8, 3, 6] {
            jobs.push((
                seed,
                format!("D{n}"),
                cfg.clone().with_derivative(n).expect("derivative"),
            ));
        }
        for u in u_grid {
            jobs.push((
                seed,
                format!("U{u}"),
                SweepParam::Samples.apply(&cfg, u).expect("sweep value"),
            ));
        }
    }
    let data: Vec<RunData> = SEEDS
        .par_iter()
        .map(|&s| {
            RunData::generate(&RunConfig {
                seed: s,
                ..base.clone()
            })
            .expect("data")
        })
        .collect();
    let results: Vec<(u64, String, f64)> = jobs
        .par_iter()
        .map(|(seed, name, cfg)| {
            let out = train_on(cfg, &data[*seed as usize], |_| Ok(())).expect("training");
            (*seed, name.clone(), r1(&out))
        })
        .collect();
    let get = |seed: u64, name: &str| {
        results
            .iter()
            .find(|(s, n, _)| *s == seed && n == name)
            .map(|r| r.2)
            .expect("result")
    };
    let mean = |name: &str| SEEDS.iter().map(|&s| get(s, name)).sum::<f64>() / SEEDS.len() as f64;
    let full = mean("U3");
    let (d3, d6) = (mean("D3"), mean("D6"));
    let best_u_wins = SEEDS
        .iter()
        .filter(|&&s| {
            let best = u_grid
                .iter()
                .map(|u| get(s, &format!("U{u}")))
                .fold(f64::NEG_INFINITY, f64::max);
            best >= get(s, "D1")
        })
        .count();
    let elapsed = start.elapsed();
    let per_seed: Vec<String> = SEEDS
        .iter()
        .map(|&s| {
            format!(
                "seed {s}: U1 {:.2} U3 {:.2} U5 {:.2} D1 {:.2} D3 {:.2} D6 {:.2}",
                get(s, "U1"),
                get(s, "U3"),
                get(s, "U5"),
                get(s, "D1"),
                get(s, "D3"),
                get(s, "D6")
            )
        })
        .collect();
    for line in &per_seed {
        eprintln!("  {line}");
    }
    outcome(
        synth_ok && full >= d3 && full >= d6 && best_u_wins >= 4 && elapsed <= Duration::from_secs(900),
        format!(
            "mean R@1 full {full:.3} vs D3 {d3:.3} and D6 {d6:.3}; best U ≥ D1 on {best_u_wins}/5 seeds; {:.0?} (≤ 900 s)",
            elapsed
        ),
    )
}

fn learning_check() -> Outcome {
    let base = RunConfig::default();
    let threshold = 10.0 / base.distractors as f64;
    let scores: Vec<f64> = SEEDS
        .par_iter()
        .map(|&seed| {
            r1(&train_on(
                &RunConfig { seed, ..base.clone() },
                &RunData::generate(&RunConfig { seed, ..base.clone() }).expect("data"),
                |_| Ok(()),
            )
            .expect("training"))
        })
        .collect();
    let hits = scores.iter().filter(|&&s| s >= threshold).count();
    outcome(
        base.steps == 500 && hits >= 4,
        format!(
            "{} steps, R@1 per seed {:?}, {hits}/5 ≥ {threshold:.2}",
            base.steps,
            scores.iter().map(|s| format!("{s:.2}")).collect::<Vec<_>>()
        ),
    )
}

fn pronoun_fixtures() -> Outcome {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let read = |name: &str| {
        read_corpus(std::io::BufReader::new(
            std::fs::File::open(dir.join(name)).expect("fixture"),
        ))
        .expect("corpus")
    };
    let with = pronoun_ratio(&read("pronouns.txt"), &DEFAULT_PRONOUNS).expect("ratio");
    let without = pronoun_ratio(&read("no_pronouns.txt"), &DEFAULT_PRONOUNS).expect("ratio");
    let shown = format!("{with:.2}");
    outcome(
        shown == "66.67" && with == 200.0 / 3.0 && without == 0.0,
        format!("pronoun fixture {shown}%, pronoun-free fixture {without:.2}%"),
    )
}

fn determinism_and_persistence() -> Outcome {
    let cfg = RunConfig {
        steps: 40,
        eval_every: 20,
        train_triplets: 200,
        eval_queries: 30,
        distractors: 40,
        ..RunConfig::default()
    };
    let run = || -> (Vec<u8>, TrainOutcome) {
        let data = RunData::generate(&cfg).expect("data");
        let mut bytes = Vec::new();
        let out = train_on(&cfg, &data, |r| {
            metrics::write_jsonl(&mut bytes, std::slice::from_ref(r))
        })
        .expect("training");
        (bytes, out)
    };
    let (first, outcome_a) = run();
    let (second, _) = run();
    let same_bytes = first == second && !first.is_empty();

    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("checkpoint.bin");
    Checkpoint::from_state(&cfg, &outcome_a.state)
        .save(&path)
        .expect("save");
    let store = Checkpoint::load(&path).expect("load").store_for(&cfg).expect("layout");
    let data = RunData::generate(&cfg).expect("data");
    let before = measure(&outcome_a.state.store, &cfg, &data, store.step, None, None).expect("eval");
    let after = measure(&store, &cfg, &data, store.step, None, None).expect("eval");
    let bits = |r: &metrics::MetricsRecord| {
        [
            r.loss,
            r.rank_loss,
            r.recall_at_1,
            r.recall_at_5,
            r.recall_at_10,
            r.recall_at_50,
        ]
        .map(f64::to_bits)
    };
    let same_metrics =
        bits(&before) == bits(&after) && before.kl_loss.map(f64::to_bits) == after.kl_loss.map(f64::to_bits);

    let mut bytes = std::fs::read(&path).expect("read");
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&path, &bytes).expect("write");
    let rejected = matches!(Checkpoint::load(&path), Err(BenchError::Checksum));

    outcome(
        same_bytes && same_metrics && rejected,
        format!(
            "JSONL bytes identical: {same_bytes} ({} bytes), reloaded metrics bit-exact: {same_metrics}, corrupted checkpoint rejected: {rejected}",
            first.len()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient suite", gradient_suite),
        ("oracle equivalence", oracle_equivalence),
        ("loss identities", loss_identities),
        ("reading coincidence", reading_coincidence),
        ("reparametrization statistics", reparametrization),
        ("directional ablation", directional_ablation),
        ("learning check", learning_check),
        ("pronoun ratio fixtures", pronoun_fixtures),
        ("determinism and persistence", determinism_and_persistence),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("[{status}] {}. {name}: {} [{:.1?}]", i + 1, o.detail, start.elapsed());
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
