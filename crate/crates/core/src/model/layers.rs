use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Init, ParamStore};
use crate::tensor::{Graph, Matrix, ParamId, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// One forward pass recorded on a fresh [`Graph`].
///
/// Every parameter enters the graph as a single leaf no matter how many
/// examples reuse it, so a batch accumulates its gradients in place.
pub struct Session<'a> {
    pub graph: Graph,
    store: &'a ParamStore,
    leaves: Vec<Option<Var>>,
    trainable: Option<&'a [bool]>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl<'a> Session<'a> {
    /// Evaluation mode: no dropout, nothing differentiable.
    pub fn eval(store: &'a ParamStore) -> Self {
        Session {
            graph: Graph::new(),
            store,
            leaves: vec![None; store.len()],
            trainable: None,
            dropout: None,
        }
    }

    /// Training mode; `trainable[i]` says whether parameter `i` gets a gradient.
    pub fn train(store: &'a ParamStore, trainable: &'a [bool], dropout: f64, rng: ChaCha8Rng) -> Self {
        assert_eq!(trainable.len(), store.len(), "trainable mask length");
        Session {
            graph: Graph::new(),
            store,
            leaves: vec![None; store.len()],
            trainable: Some(trainable),
            dropout: (dropout > 0.0).then_some((dropout, rng)),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.leaves[id.0] {
            return v;
        }
        let trainable = self.trainable.is_some_and(|t| t[id.0]);
        let v = self.graph.param(id, self.store.get(id), trainable);
        self.leaves[id.0] = Some(v);
        v
    }

    /// Inverted dropout; identity in evaluation mode.
    pub fn dropout(&mut self, x: Var) -> Var {
        let Some((rate, rng)) = self.dropout.as_mut() else {
            return x;
        };
        let (rows, cols) = self.graph.value(x).shape();
        let keep = 1.0 / (1.0 - *rate);
        let mask = (0..rows * cols)
            .map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep })
            .collect();
        self.graph.mul_const(x, Matrix::from_vec(rows, cols, mask))
    }
}

/// Affine map `x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, group: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Linear {
            w: store.add(format!("{name}.weight"), group, fan_in, fan_out, Init::Uniform(bound), rng),
            b: store.add(format!("{name}.bias"), group, 1, fan_out, Init::Zeros, rng),
        }
    }

    pub fn apply(&self, s: &mut Session, x: Var) -> Var {
        let (w, b) = (s.p(self.w), s.p(self.b));
        let y = s.graph.matmul(x, w);
        s.graph.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: &str, width: usize, rng: &mut ChaCha8Rng) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), group, 1, width, Init::Ones, rng),
            bias: store.add(format!("{name}.bias"), group, 1, width, Init::Zeros, rng),
        }
    }

    pub fn apply(&self, s: &mut Session, x: Var) -> Var {
        let (g, b) = (s.p(self.gain), s.p(self.bias));
        s.graph.layer_norm(x, g, b, LAYER_NORM_EPS)
    }
}

/// `Linear(mult*width -> out) . GEGLU . Linear(width -> 2*mult*width)`
#[derive(Debug, Clone, Copy)]
pub struct GegluFeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl GegluFeedForward {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: &str,
        width: usize,
        mult: usize,
        out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        GegluFeedForward {
            up: Linear::new(store, &format!("{name}.up"), group, width, 2 * width * mult, rng),
            down: Linear::new(store, &format!("{name}.down"), group, width * mult, out, rng),
        }
    }

    pub fn apply(&self, s: &mut Session, x: Var) -> Var {
        let h = self.up.apply(s, x);
        let h = s.graph.geglu(h);
        self.down.apply(s, h)
    }
}

/// Pre-norm transformer block with multi-head self-attention and a GEGLU
/// feed-forward. Attention runs within consecutive row groups.
#[derive(Debug, Clone, Copy)]
pub struct Block {
    pub norm_attn: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub norm_ff: LayerNorm,
    pub ff: GegluFeedForward,
    pub heads: usize,
}

impl Block {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: &str,
        width: usize,
        heads: usize,
        head_dim: usize,
        mult: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let inner = heads * head_dim;
        Block {
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), group, width, rng),
            q: Linear::new(store, &format!("{name}.q"), group, width, inner, rng),
            k: Linear::new(store, &format!("{name}.k"), group, width, inner, rng),
            v: Linear::new(store, &format!("{name}.v"), group, width, inner, rng),
            out: Linear::new(store, &format!("{name}.out"), group, inner, width, rng),
            norm_ff: LayerNorm::new(store, &format!("{name}.norm_ff"), group, width, rng),
            ff: GegluFeedForward::new(store, &format!("{name}.ff"), group, width, mult, width, rng),
            heads,
        }
    }

    pub fn apply(&self, s: &mut Session, x: Var, group: usize) -> Var {
        let h = self.norm_attn.apply(s, x);
        let q = self.q.apply(s, h);
        let k = self.k.apply(s, h);
        let v = self.v.apply(s, h);
        let att = s.graph.attention(q, k, v, group, self.heads);
        let att = self.out.apply(s, att);
        let att = s.dropout(att);
        let x = s.graph.add(x, att);
        let h = self.norm_ff.apply(s, x);
        let f = self.ff.apply(s, h);
        let f = s.dropout(f);
        s.graph.add(x, f)
    }
}

/// Runs a stack of blocks; an empty stack is the identity.
pub fn apply_stack(blocks: &[Block], s: &mut Session, mut x: Var, group: usize) -> Var {
    for b in blocks {
        x = b.apply(s, x, group);
    }
    x
}
