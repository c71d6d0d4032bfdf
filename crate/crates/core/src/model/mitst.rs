use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::layers::{apply_stack, Block, GegluFeedForward, LayerNorm, Linear, Session};
use super::params::{Init, ParamStore};
use super::time_encoding::encode_offsets;
use crate::error::{Error, Result};
use crate::preprocess::{ModelInput, SourceInput};
use crate::tensor::{softmax, Matrix, ParamId, Var};

pub const GROUP_SOURCE_TRANSFORMER: &str = "source_transformer";
pub const GROUP_FUSION: &str = "fusion";
pub const GROUP_HEAD: &str = "head";
const CLS_STD: f64 = 0.02;

pub fn tokenizer_group(source: &str) -> String {
    format!("source.{source}.tokenizer")
}
pub fn feature_transformer_group(source: &str) -> String {
    format!("source.{source}.feature_transformer")
}
pub fn its_transformer_group(source: &str) -> String {
    format!("source.{source}.its_transformer")
}
pub fn projection_group(source: &str) -> String {
    format!("source.{source}.projection")
}

#[derive(Debug, Clone)]
struct SourceNet {
    name: String,
    width: usize,
    n_numeric: usize,
    vocab_sizes: Vec<usize>,
    feature_cls: ParamId,
    num_weight: Option<ParamId>,
    num_bias: Option<ParamId>,
    cat_tables: Vec<ParamId>,
    feature_blocks: Vec<Block>,
    its_cls: ParamId,
    its_blocks: Vec<Block>,
    proj_norm: LayerNorm,
    proj: GegluFeedForward,
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub f: Vec<Var>,
    pub z: Vec<Var>,
    pub u: Vec<Var>,
    pub a: Var,
    pub alpha: Var,
    pub v: Var,
    pub logits: Var,
}

/// Intermediate values of one evaluation-mode forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationBundle {
    /// Per source, one row per time point.
    pub f: Vec<Matrix>,
    pub z: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub v: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Fusion weight of each source, in schema order.
    pub alpha: Vec<f64>,
}

impl Prediction {
    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probabilities.iter().enumerate() {
            if *p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }
}

/// The hierarchical multi-source network.
#[derive(Debug, Clone)]
pub struct Mitst {
    config: ModelConfig,
    store: ParamStore,
    sources: Vec<SourceNet>,
    source_blocks: Vec<Block>,
    fusion_affine: Linear,
    fusion_context: ParamId,
    head_norm: LayerNorm,
    head: Linear,
}

impl Mitst {
    /// Builds a freshly initialized model from `config.init_seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let c = &config;
        let mut sources = Vec::with_capacity(c.sources.len());
        for spec in &c.sources {
            let name = &spec.name;
            let w = spec.embed_width;
            let tok = tokenizer_group(name);
            let tok_bound = 1.0 / (w as f64).sqrt();
            let feature_cls = store.add(format!("source.{name}.feature_cls"), &tok, 1, w, Init::Normal(CLS_STD), &mut rng);
            let (num_weight, num_bias) = if spec.n_numeric > 0 {
                let n = spec.n_numeric;
                (
                    Some(store.add(format!("source.{name}.num_weight"), &tok, n, w, Init::Uniform(tok_bound), &mut rng)),
                    Some(store.add(format!("source.{name}.num_bias"), &tok, n, w, Init::Uniform(tok_bound), &mut rng)),
                )
            } else {
                (None, None)
            };
            let cat_tables = spec
                .vocab_sizes
                .iter()
                .enumerate()
                .map(|(j, &v)| store.add(format!("source.{name}.cat{j}"), &tok, v, w, Init::Uniform(tok_bound), &mut rng))
                .collect();
            let fg = feature_transformer_group(name);
            let feature_blocks = (0..c.depth)
                .map(|l| Block::new(&mut store, &format!("source.{name}.feature.block{l}"), &fg, w, c.heads, c.head_dim, c.mult, &mut rng))
                .collect();
            let ig = its_transformer_group(name);
            let its_cls = store.add(format!("source.{name}.its_cls"), &ig, 1, w, Init::Normal(CLS_STD), &mut rng);
            let its_blocks = (0..c.depth)
                .map(|l| Block::new(&mut store, &format!("source.{name}.its.block{l}"), &ig, w, c.heads, c.head_dim, c.mult, &mut rng))
                .collect();
            let pg = projection_group(name);
            let proj_norm = LayerNorm::new(&mut store, &format!("source.{name}.projection.norm"), &pg, w, &mut rng);
            let proj = GegluFeedForward::new(&mut store, &format!("source.{name}.projection"), &pg, w, c.mult, c.joint_dim, &mut rng);
            sources.push(SourceNet {
                name: name.clone(),
                width: w,
                n_numeric: spec.n_numeric,
                vocab_sizes: spec.vocab_sizes.clone(),
                feature_cls,
                num_weight,
                num_bias,
                cat_tables,
                feature_blocks,
                its_cls,
                its_blocks,
                proj_norm,
                proj,
            });
        }
        let source_blocks = (0..c.depth)
            .map(|l| {
                Block::new(
                    &mut store,
                    &format!("source_transformer.block{l}"),
                    GROUP_SOURCE_TRANSFORMER,
                    c.joint_dim,
                    c.heads,
                    c.head_dim,
                    c.mult,
                    &mut rng,
                )
            })
            .collect();
        let fusion_affine = Linear::new(&mut store, "fusion.affine", GROUP_FUSION, c.joint_dim, c.fusion_dim, &mut rng);
        let ctx_bound = 1.0 / (c.fusion_dim as f64).sqrt();
        let fusion_context = store.add("fusion.context", GROUP_FUSION, c.fusion_dim, 1, Init::Uniform(ctx_bound), &mut rng);
        let head_norm = LayerNorm::new(&mut store, "head.norm", GROUP_HEAD, c.joint_dim, &mut rng);
        let head = Linear::new(&mut store, "head.out", GROUP_HEAD, c.joint_dim, c.n_classes, &mut rng);
        Ok(Mitst {
            config,
            store,
            sources,
            source_blocks,
            fusion_affine,
            fusion_context,
            head_norm,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// A copy with a newly initialized prediction head for `n_classes`
    /// outputs; every other tensor is carried over.
    pub fn with_fresh_head(&self, n_classes: usize, seed: u64) -> Result<Mitst> {
        let config = ModelConfig {
            n_classes,
            init_seed: seed,
            ..self.config.clone()
        };
        let mut fresh = Mitst::new(config)?;
        for (id, t) in self.store.iter() {
            if t.group == GROUP_HEAD {
                continue;
            }
            let target = fresh.store.id(&t.name).expect("same architecture");
            *fresh.store.get_mut(target) = self.store.get(id).clone();
        }
        Ok(fresh)
    }

    /// Checks an input against the configured feature inventories.
    pub fn check_input(&self, input: &ModelInput) -> Result<()> {
        if input.sources.len() != self.sources.len() {
            return Err(Error::Shape {
                context: "model input".into(),
                detail: format!("expected {} sources, got {}", self.sources.len(), input.sources.len()),
            });
        }
        for (net, src) in self.sources.iter().zip(&input.sources) {
            self.check_source(net, src)?;
        }
        Ok(())
    }

    fn check_source(&self, net: &SourceNet, src: &SourceInput) -> Result<()> {
        let shape = |detail: String| Error::Shape {
            context: format!("source `{}`", net.name),
            detail,
        };
        let t = src.offsets.len();
        if t == 0 {
            return Err(shape("no time points (a placeholder is required)".into()));
        }
        if src.numeric.len() != t * net.n_numeric {
            return Err(shape(format!("{} numeric values for {t} points x {} features", src.numeric.len(), net.n_numeric)));
        }
        if src.categorical.len() != t * net.vocab_sizes.len() {
            return Err(shape(format!(
                "{} categorical values for {t} points x {} features",
                src.categorical.len(),
                net.vocab_sizes.len()
            )));
        }
        if let Some(x) = src.offsets.iter().chain(&src.numeric).find(|x| !x.is_finite()) {
            return Err(shape(format!("non-finite value {x}")));
        }
        for (i, &id) in src.categorical.iter().enumerate() {
            let j = i % net.vocab_sizes.len();
            if id as usize >= net.vocab_sizes[j] {
                return Err(shape(format!("category id {id} outside vocabulary of feature {j}")));
            }
        }
        Ok(())
    }

    /// Records the forward pass of one example on `s`.
    pub fn forward(&self, s: &mut Session, input: &ModelInput) -> Result<ForwardVars> {
        self.check_input(input)?;
        let m = self.sources.len();
        let (mut fs, mut zs, mut us) = (Vec::with_capacity(m), Vec::with_capacity(m), Vec::with_capacity(m));
        for (net, src) in self.sources.iter().zip(&input.sources) {
            let (f, z, u) = self.source_forward(s, net, src);
            fs.push(f);
            zs.push(z);
            us.push(u);
        }
        let stacked = s.graph.concat_rows(&us);
        let (a, alpha, v) = self.fuse_vars(s, stacked);
        let logits = self.head_var(s, v);
        Ok(ForwardVars {
            f: fs,
            z: zs,
            u: us,
            a,
            alpha,
            v,
            logits,
        })
    }

    fn source_forward(&self, s: &mut Session, net: &SourceNet, src: &SourceInput) -> (Var, Var, Var) {
        let (tokens, t, offsets) = self.tokens_var(s, net, src);
        let f = self.feature_var(s, net, tokens, t);
        let z = self.its_var(s, net, f, offsets);
        let u = self.project_var(s, net, z);
        (f, z, u)
    }

    /// Token matrix of the latest `max_seq_len` points: for each point the
    /// CLS token, then numeric tokens, then categorical tokens.
    fn tokens_var<'i>(&self, s: &mut Session, net: &SourceNet, src: &'i SourceInput) -> (Var, usize, &'i [f64]) {
        let total = src.offsets.len();
        let t = total.min(self.config.max_seq_len);
        let skip = total - t;
        let n = net.n_numeric;
        let c = net.vocab_sizes.len();
        let numeric = &src.numeric[skip * n..];
        let categorical = &src.categorical[skip * c..];
        let group = 1 + n + c;

        // Pieces laid out as [cls x T][numeric, t-major][cat_0 x T]...[cat_{c-1} x T].
        let mut pieces = Vec::with_capacity(2 + c);
        let cls = s.p(net.feature_cls);
        pieces.push(s.graph.gather_rows(cls, vec![0; t]));
        if let (Some(w), Some(b)) = (net.num_weight, net.num_bias) {
            let idx: Vec<usize> = (0..t).flat_map(|_| 0..n).collect();
            let (w, b) = (s.p(w), s.p(b));
            let wr = s.graph.gather_rows(w, idx.clone());
            let scaled = s.graph.scale_rows(wr, numeric.to_vec());
            let br = s.graph.gather_rows(b, idx);
            pieces.push(s.graph.add(scaled, br));
        }
        for (j, &table) in net.cat_tables.iter().enumerate() {
            let ids = (0..t).map(|i| categorical[i * c + j] as usize).collect();
            let table = s.p(table);
            pieces.push(s.graph.gather_rows(table, ids));
        }
        let all = s.graph.concat_rows(&pieces);
        let mut order = Vec::with_capacity(t * group);
        for i in 0..t {
            order.push(i);
            order.extend((0..n).map(|j| t + i * n + j));
            order.extend((0..c).map(|j| t + t * n + j * t + i));
        }
        (s.graph.gather_rows(all, order), t, &src.offsets[skip..])
    }

    fn feature_var(&self, s: &mut Session, net: &SourceNet, tokens: Var, t: usize) -> Var {
        let group = s.graph.value(tokens).rows() / t;
        let h = apply_stack(&net.feature_blocks, s, tokens, group);
        s.graph.gather_rows(h, (0..t).map(|i| i * group).collect())
    }

    fn its_var(&self, s: &mut Session, net: &SourceNet, f: Var, offsets: &[f64]) -> Var {
        let enc = encode_offsets(offsets, net.width, self.config.time_period_min, self.config.time_period_max);
        let enc = s.graph.constant(enc);
        let timed = s.graph.add(f, enc);
        let its_cls = s.p(net.its_cls);
        let seq = s.graph.concat_rows(&[its_cls, timed]);
        let h = apply_stack(&net.its_blocks, s, seq, offsets.len() + 1);
        s.graph.gather_rows(h, vec![0])
    }

    fn project_var(&self, s: &mut Session, net: &SourceNet, z: Var) -> Var {
        let h = net.proj_norm.apply(s, z);
        net.proj.apply(s, h)
    }

    /// Source-level transformer then attention pooling: returns (a, alpha, v).
    fn fuse_vars(&self, s: &mut Session, stacked_u: Var) -> (Var, Var, Var) {
        let m = s.graph.value(stacked_u).rows();
        let a = apply_stack(&self.source_blocks, s, stacked_u, m);
        let hidden = self.fusion_affine.apply(s, a);
        let hidden = s.graph.tanh(hidden);
        let ctx = s.p(self.fusion_context);
        let scores = s.graph.matmul(hidden, ctx);
        let scores = s.graph.transpose(scores);
        let alpha = s.graph.softmax_rows(scores);
        let v = s.graph.matmul(alpha, a);
        (a, alpha, v)
    }

    fn head_var(&self, s: &mut Session, v: Var) -> Var {
        let h = self.head_norm.apply(s, v);
        let h = s.graph.relu(h);
        self.head.apply(s, h)
    }

    fn source_net(&self, source_index: usize) -> Result<&SourceNet> {
        self.sources.get(source_index).ok_or_else(|| Error::Shape {
            context: "source index".into(),
            detail: format!("{source_index} out of range for {} sources", self.sources.len()),
        })
    }

    /// Tokens of every retained time point of one source, `T*(1+d) x d'`.
    pub fn tokenize(&self, source_index: usize, src: &SourceInput) -> Result<Matrix> {
        let net = self.source_net(source_index)?;
        self.check_source(net, src)?;
        let mut s = Session::eval(&self.store);
        let (tokens, _, _) = self.tokens_var(&mut s, net, src);
        Ok(s.graph.value(tokens).clone())
    }

    /// Feature-level transformer over `T` groups of `1 + d` tokens (CLS
    /// first in each group); returns one summary row per group.
    pub fn feature_aggregate(&self, source_index: usize, tokens: &Matrix) -> Result<Matrix> {
        let net = self.source_net(source_index)?;
        let group = 1 + net.n_numeric + net.vocab_sizes.len();
        if tokens.cols() != net.width || tokens.rows() == 0 || tokens.rows() % group != 0 {
            return Err(Error::Shape {
                context: format!("source `{}` tokens", net.name),
                detail: format!("{}x{} is not a stack of {group}-token groups of width {}", tokens.rows(), tokens.cols(), net.width),
            });
        }
        let mut s = Session::eval(&self.store);
        let x = s.graph.constant(tokens.clone());
        let f = self.feature_var(&mut s, net, x, tokens.rows() / group);
        Ok(s.graph.value(f).clone())
    }

    /// Time-encoded sequence summary of per-point embeddings `f` (`T x d'`).
    pub fn timestamp_aggregate(&self, source_index: usize, f: &Matrix, offsets: &[f64]) -> Result<Vec<f64>> {
        let net = self.source_net(source_index)?;
        if f.cols() != net.width || f.rows() != offsets.len() || offsets.is_empty() {
            return Err(Error::Shape {
                context: format!("source `{}` sequence", net.name),
                detail: format!("{}x{} embeddings with {} offsets", f.rows(), f.cols(), offsets.len()),
            });
        }
        let mut s = Session::eval(&self.store);
        let x = s.graph.constant(f.clone());
        let z = self.its_var(&mut s, net, x, offsets);
        Ok(s.graph.value(z).as_slice().to_vec())
    }

    pub fn joint_project(&self, source_index: usize, z: &[f64]) -> Result<Vec<f64>> {
        let net = self.source_net(source_index)?;
        if z.len() != net.width {
            return Err(Error::Shape {
                context: format!("source `{}` summary", net.name),
                detail: format!("width {} expected {}", z.len(), net.width),
            });
        }
        let mut s = Session::eval(&self.store);
        let x = s.graph.constant(Matrix::row_vector(z.to_vec()));
        let u = self.project_var(&mut s, net, x);
        Ok(s.graph.value(u).as_slice().to_vec())
    }

    /// Source-level transformer alone: one output row per input row.
    pub fn integrate_sources(&self, u: &Matrix) -> Result<Matrix> {
        self.check_joint(u)?;
        let mut s = Session::eval(&self.store);
        let x = s.graph.constant(u.clone());
        let a = apply_stack(&self.source_blocks, &mut s, x, u.rows());
        Ok(s.graph.value(a).clone())
    }

    /// Attention pooling of source rows `a`: returns `(v, alpha)`.
    pub fn fuse_sources(&self, a: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_joint(a)?;
        let mut s = Session::eval(&self.store);
        let x = s.graph.constant(a.clone());
        let hidden = self.fusion_affine.apply(&mut s, x);
        let hidden = s.graph.tanh(hidden);
        let ctx = s.p(self.fusion_context);
        let scores = s.graph.matmul(hidden, ctx);
        let scores = s.graph.transpose(scores);
        let alpha = s.graph.softmax_rows(scores);
        let v = s.graph.matmul(alpha, x);
        Ok((s.graph.value(v).as_slice().to_vec(), s.graph.value(alpha).as_slice().to_vec()))
    }

    pub fn predict_logits(&self, v: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::row_vector(v.to_vec());
        self.check_joint(&m)?;
        let mut s = Session::eval(&self.store);
        let x = s.graph.constant(m);
        let logits = self.head_var(&mut s, x);
        Ok(s.graph.value(logits).as_slice().to_vec())
    }

    fn check_joint(&self, m: &Matrix) -> Result<()> {
        if m.cols() != self.config.joint_dim || m.rows() == 0 {
            return Err(Error::Shape {
                context: "joint space".into(),
                detail: format!("{}x{} with joint width {}", m.rows(), m.cols(), self.config.joint_dim),
            });
        }
        Ok(())
    }

    /// Evaluation-mode prediction.
    pub fn predict(&self, input: &ModelInput) -> Result<Prediction> {
        let mut s = Session::eval(&self.store);
        let vars = self.forward(&mut s, input)?;
        let logits = s.graph.value(vars.logits).as_slice().to_vec();
        Ok(Prediction {
            probabilities: softmax(&logits),
            alpha: s.graph.value(vars.alpha).as_slice().to_vec(),
            logits,
        })
    }

    /// Evaluation-mode forward returning every intermediate value.
    pub fn activations(&self, input: &ModelInput) -> Result<ActivationBundle> {
        let mut s = Session::eval(&self.store);
        let vars = self.forward(&mut s, input)?;
        let g = &s.graph;
        let rows = |v: Var| g.value(v).as_slice().to_vec();
        let a = g.value(vars.a);
        Ok(ActivationBundle {
            f: vars.f.iter().map(|&v| g.value(v).clone()).collect(),
            z: vars.z.iter().map(|&v| rows(v)).collect(),
            u: vars.u.iter().map(|&v| rows(v)).collect(),
            a: (0..a.rows()).map(|r| a.row(r).to_vec()).collect(),
            alpha: rows(vars.alpha),
            v: rows(vars.v),
            logits: rows(vars.logits),
        })
    }
}
