//! Independent reference implementations shared by integration tests.
#![allow(dead_code)]

pub mod oracles;
pub mod scenarios;

use mitst_core::model::{Mitst, ModelConfig, Session, SourceSpec};
use mitst_core::preprocess::{ModelInput, SourceInput};
use mitst_core::tensor::{Matrix, ParamId};

pub type Rows = Vec<Vec<f64>>;

pub fn tiny_config(n_sources: usize, width: usize, joint: usize, depth: usize, heads: usize, head_dim: usize) -> ModelConfig {
    let sources = (0..n_sources)
        .map(|m| SourceSpec {
            name: format!("s{m}"),
            n_numeric: 1 + m % 3,
            vocab_sizes: (0..(m % 2 + 1)).map(|j| 3 + j).collect(),
            embed_width: width,
        })
        .collect();
    ModelConfig {
        depth,
        heads,
        head_dim,
        joint_dim: joint,
        mult: 2,
        fusion_dim: joint,
        dropout: 0.0,
        n_classes: 3,
        max_seq_len: 512,
        time_period_min: 2.0,
        time_period_max: 100_000.0,
        init_seed: 7,
        sources,
    }
}

fn param<'a>(model: &'a Mitst, name: &str) -> &'a Matrix {
    let id = model.params().id(name).unwrap_or_else(|| panic!("missing parameter {name}"));
    model.params().get(id)
}

fn row(m: &Matrix, r: usize) -> Vec<f64> {
    (0..m.cols()).map(|c| m.get(r, c)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn linear(x: &Rows, model: &Mitst, prefix: &str) -> Rows {
    let w = param(model, &format!("{prefix}.weight"));
    let b = param(model, &format!("{prefix}.bias"));
    x.iter()
        .map(|r| {
            (0..w.cols())
                .map(|o| b.get(0, o) + (0..w.rows()).map(|i| r[i] * w.get(i, o)).sum::<f64>())
                .collect()
        })
        .collect()
}

fn layer_norm(x: &Rows, model: &Mitst, prefix: &str) -> Rows {
    let g = param(model, &format!("{prefix}.gain"));
    let b = param(model, &format!("{prefix}.bias"));
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(c, v)| (v - mean) / (var + 1e-5).sqrt() * g.get(0, c) + b.get(0, c))
                .collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

fn geglu(x: &Rows) -> Rows {
    x.iter()
        .map(|r| {
            let h = r.len() / 2;
            (0..h).map(|c| r[c] * gelu(r[h + c])).collect()
        })
        .collect()
}

fn add(a: &Rows, b: &Rows) -> Rows {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

fn feed_forward(x: &Rows, model: &Mitst, prefix: &str) -> Rows {
    linear(&geglu(&linear(x, model, &format!("{prefix}.up"))), model, &format!("{prefix}.down"))
}

/// Full attention of every row over every row of `x`.
pub fn block(x: &Rows, model: &Mitst, prefix: &str, heads: usize) -> Rows {
    let h = layer_norm(x, model, &format!("{prefix}.norm_attn"));
    let q = linear(&h, model, &format!("{prefix}.q"));
    let k = linear(&h, model, &format!("{prefix}.k"));
    let v = linear(&h, model, &format!("{prefix}.v"));
    let width = q[0].len();
    let dh = width / heads;
    let mut att = vec![vec![0.0; width]; x.len()];
    for hd in 0..heads {
        let cols = hd * dh..(hd + 1) * dh;
        for i in 0..x.len() {
            let scores: Vec<f64> = (0..x.len())
                .map(|j| dot(&q[i][cols.clone()], &k[j][cols.clone()]) / (dh as f64).sqrt())
                .collect();
            let p = softmax(&scores);
            for j in 0..x.len() {
                for c in cols.clone() {
                    att[i][c] += p[j] * v[j][c];
                }
            }
        }
    }
    let x = add(x, &linear(&att, model, &format!("{prefix}.out")));
    let h = layer_norm(&x, model, &format!("{prefix}.norm_ff"));
    add(&x, &feed_forward(&h, model, &format!("{prefix}.ff")))
}

fn stack(mut x: Rows, model: &Mitst, prefix: &str) -> Rows {
    let c = model.config();
    for l in 0..c.depth {
        x = block(&x, model, &format!("{prefix}.block{l}"), c.heads);
    }
    x
}

pub fn encode(t: f64, width: usize, pmin: f64, pmax: f64) -> Vec<f64> {
    let pairs = width / 2;
    let mut out = Vec::new();
    for k in 0..pairs {
        let period = if pairs == 1 { pmin } else { pmin * (pmax / pmin).powf(k as f64 / (pairs as f64 - 1.0)) };
        let angle = 2.0 * std::f64::consts::PI * t / period;
        out.push(angle.sin());
        out.push(angle.cos());
    }
    out
}

pub struct OracleOut {
    pub z: Rows,
    pub a: Rows,
    pub alpha: Vec<f64>,
    pub logits: Vec<f64>,
}

pub fn oracle_forward(model: &Mitst, input: &ModelInput) -> OracleOut {
    let c = model.config();
    let mut us = Vec::new();
    let mut zs = Vec::new();
    for (spec, src) in c.sources.iter().zip(&input.sources) {
        let name = &spec.name;
        let n = spec.n_numeric;
        let nc = spec.vocab_sizes.len();
        let total = src.offsets.len();
        let start = total.saturating_sub(c.max_seq_len);
        let cls = row(param(model, &format!("source.{name}.feature_cls")), 0);
        let mut f = Vec::new();
        for t in start..total {
            let mut tokens = vec![cls.clone()];
            for j in 0..n {
                let w = row(param(model, &format!("source.{name}.num_weight")), j);
                let b = row(param(model, &format!("source.{name}.num_bias")), j);
                let x = src.numeric[t * n + j];
                tokens.push(b.iter().zip(&w).map(|(b, w)| b + x * w).collect());
            }
            for j in 0..nc {
                let id = src.categorical[t * nc + j] as usize;
                tokens.push(row(param(model, &format!("source.{name}.cat{j}")), id));
            }
            let out = stack(tokens, model, &format!("source.{name}.feature"));
            f.push(out[0].clone());
        }
        let mut seq = vec![row(param(model, &format!("source.{name}.its_cls")), 0)];
        for (i, t) in (start..total).enumerate() {
            let e = encode(src.offsets[t], spec.embed_width, c.time_period_min, c.time_period_max);
            seq.push(f[i].iter().zip(&e).map(|(a, b)| a + b).collect());
        }
        let z = stack(seq, model, &format!("source.{name}.its"))[0].clone();
        let h = layer_norm(&vec![z.clone()], model, &format!("source.{name}.projection.norm"));
        us.push(feed_forward(&h, model, &format!("source.{name}.projection"))[0].clone());
        zs.push(z);
    }
    let a = stack(us, model, "source_transformer");
    let hidden: Rows = linear(&a, model, "fusion.affine")
        .into_iter()
        .map(|r| r.into_iter().map(f64::tanh).collect())
        .collect();
    let ctx = param(model, "fusion.context");
    let scores: Vec<f64> = hidden
        .iter()
        .map(|r| (0..r.len()).map(|i| r[i] * ctx.get(i, 0)).sum())
        .collect();
    let alpha = softmax(&scores);
    let mut v = vec![0.0; c.joint_dim];
    for (m, am) in a.iter().enumerate() {
        for i in 0..v.len() {
            v[i] += alpha[m] * am[i];
        }
    }
    let h: Rows = layer_norm(&vec![v], model, "head.norm")
        .into_iter()
        .map(|r| r.into_iter().map(|x| x.max(0.0)).collect())
        .collect();
    let logits = linear(&h, model, "head.out")[0].clone();
    OracleOut { z: zs, a, alpha, logits }
}

/// Summed cross-entropy over `batch` with every parameter trainable.
pub fn batch_loss(model: &Mitst, batch: &[(ModelInput, usize)]) -> (f64, Vec<(ParamId, Matrix)>) {
    let mask = vec![true; model.params().len()];
    let rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut s = Session::train(model.params(), &mask, 0.0, rng);
    let mut losses = Vec::new();
    for (input, class) in batch {
        let vars = model.forward(&mut s, input).expect("forward");
        losses.push(s.graph.cross_entropy(vars.logits, *class));
    }
    let col = s.graph.concat_rows(&losses);
    let ones = s.graph.constant(Matrix::filled(1, losses.len(), 1.0));
    let total = s.graph.matmul(ones, col);
    let value = s.graph.value(total).get(0, 0);
    (value, s.graph.backward(total).entries)
}

use rand::SeedableRng;

pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Worst relative error per parameter group.
    pub groups: std::collections::BTreeMap<String, f64>,
}

/// Relative error with a floor so entries whose true gradient is zero are
/// judged on absolute error.
pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compares every analytic gradient entry with a central difference.
pub fn gradient_check(model: &Mitst, batch: &[(ModelInput, usize)], h: f64) -> GradCheck {
    let (_, grads) = batch_loss(model, batch);
    let mut analytic: Vec<Option<Matrix>> = vec![None; model.params().len()];
    for (id, g) in grads {
        analytic[id.0] = Some(g);
    }
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut groups = std::collections::BTreeMap::<String, f64>::new();
    let mut probe = model.clone();
    for (i, slot) in analytic.iter().enumerate() {
        let id = ParamId(i);
        let len = model.params().get(id).len();
        let zero = Matrix::zeros(1, len);
        let g = slot.as_ref().map_or(zero.as_slice(), |m| m.as_slice());
        for e in 0..len {
            let orig = model.params().get(id).as_slice()[e];
            probe.params_mut().get_mut(id).as_mut_slice()[e] = orig + h;
            let plus = batch_loss_value(&probe, batch);
            probe.params_mut().get_mut(id).as_mut_slice()[e] = orig - h;
            let minus = batch_loss_value(&probe, batch);
            probe.params_mut().get_mut(id).as_mut_slice()[e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = rel_error(g[e], numeric);
            worst = worst.max(err);
            let slot = groups.entry(model.params().tensor(id).group.clone()).or_default();
            *slot = slot.max(err);
            checked += 1;
        }
    }
    GradCheck { max_rel_error: worst, checked, groups }
}

fn batch_loss_value(model: &Mitst, batch: &[(ModelInput, usize)]) -> f64 {
    batch
        .iter()
        .map(|(input, class)| {
            let p = model.predict(input).expect("predict");
            let l = &p.logits;
            let mx = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            mx + l.iter().map(|x| (x - mx).exp()).sum::<f64>().ln() - l[*class]
        })
        .sum()
}

pub fn one_source_input(offsets: Vec<f64>, numeric: Vec<f64>, categorical: Vec<u32>) -> SourceInput {
    SourceInput {
        source_id: 1,
        present: true,
        offsets,
        numeric,
        categorical,
    }
}
