//! The network: gated per-feature embedding, alternating semi-permeable
//! attention and GLU blocks behind residual shortcuts, attenuated
//! initialization, and a two-stage prediction head.

use crate::autodiff::{gradcheck_multi, Tape, Var, MASK_VALUE};
use crate::data::Task;
use crate::error::{Error, Result};
use crate::preprocess::ImportanceVector;
use crate::rng::stream;
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Architecture and initialization hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of attention + GLU blocks.
    pub layers: usize,
    /// Embedding width per feature token.
    pub dim: usize,
    pub heads: usize,
    /// Dropout rate on the attention map during training.
    pub attn_dropout: f64,
    /// Variance scale of the attenuated initialization; 1.0 disables it.
    pub gamma: f64,
    pub task: Task,
}

impl ModelConfig {
    pub fn default_for(task: Task) -> ModelConfig {
        ModelConfig {
            layers: 3,
            dim: 256,
            heads: 32,
            attn_dropout: 0.3,
            gamma: 1e-4,
            task,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 {
            return Err(Error::Usage("layers must be at least 1".into()));
        }
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Usage(format!(
                "heads ({}) must divide embedding width ({})",
                self.heads, self.dim
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Usage(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.attn_dropout) {
            return Err(Error::Usage(format!(
                "attention dropout must be in [0, 1), got {}",
                self.attn_dropout
            )));
        }
        Ok(())
    }
}

/// Fixed additive attention mask: `m[i,j] = MASK_VALUE` iff feature `i` is
/// strictly more important than feature `j` (so a more-informative query
/// never attends to a less-informative key); ties and the diagonal stay open.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentionMask {
    matrix: Tensor,
}

impl AttentionMask {
    pub fn from_importance(importance: &ImportanceVector) -> AttentionMask {
        let f = importance.len();
        let mut data = vec![0.0; f * f];
        for i in 0..f {
            for j in 0..f {
                if importance.values[i] > importance.values[j] {
                    data[i * f + j] = MASK_VALUE;
                }
            }
        }
        AttentionMask {
            matrix: Tensor::new([f, f], data).expect("square mask"),
        }
    }

    /// All-open mask (vanilla attention).
    pub fn open(f: usize) -> AttentionMask {
        AttentionMask { matrix: Tensor::zeros([f, f]) }
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn n_features(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn is_blocked(&self, i: usize, j: usize) -> bool {
        self.matrix.data()[i * self.n_features() + j] == MASK_VALUE
    }
}

/// Builds the semi-permeable mask for an importance vector.
pub fn build_mask(importance: &ImportanceVector) -> AttentionMask {
    AttentionMask::from_importance(importance)
}

pub fn he_variance(fan_in: usize) -> f64 {
    2.0 / fan_in as f64
}

/// Attenuated variance: the standard fan-based variance scaled by `gamma`.
pub fn attenuated_variance(var_prev: f64, gamma: f64) -> f64 {
    gamma * var_prev
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmbeddingParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpaParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GluParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeadParams {
    /// Contracts the feature axis, `[f, C]`.
    pub wf: Tensor,
    pub bf: Tensor,
    /// Contracts the embedding axis, `[d, 1]`.
    pub wd: Tensor,
    pub bd: Tensor,
    /// Learnable P-ReLU slope, shared across the head.
    pub slope: Tensor,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Block {
    pub spa: SpaParams,
    pub glu: GluParams,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelParams {
    pub embedding: EmbeddingParams,
    pub blocks: Vec<Block>,
    pub head: HeadParams,
}

impl ModelParams {
    /// Initializes all parameters. Residual-branch weights (attention and
    /// in-block GLU) are drawn with variance `gamma * 2/fan_in` so the
    /// stacked blocks start as a perturbation of the identity; embedding
    /// and head use the standard fan-based variance. The per-feature
    /// embedding rows take the embedding width as their fan (the usual
    /// convention for feature-embedding tables; a literal fan-in of 1
    /// saturates the tanh gates). Biases start at zero, the P-ReLU slope
    /// at 0.25.
    pub fn init(cfg: &ModelConfig, n_features: usize, rng: &mut impl Rng) -> ModelParams {
        let d = cfg.dim;
        let f = n_features;
        let c = cfg.task.output_dim();
        let std_embed = he_variance(d).sqrt();
        let std_block = attenuated_variance(he_variance(d), cfg.gamma).sqrt();
        let std_head_f = he_variance(f).sqrt();
        let std_head_d = he_variance(d).sqrt();

        let embedding = EmbeddingParams {
            w1: Tensor::randn([f, d], std_embed, rng),
            b1: Tensor::zeros([f, d]),
            w2: Tensor::randn([f, d], std_embed, rng),
            b2: Tensor::zeros([f, d]),
        };
        let blocks = (0..cfg.layers)
            .map(|_| Block {
                spa: SpaParams {
                    wq: Tensor::randn([d, d], std_block, rng),
                    wk: Tensor::randn([d, d], std_block, rng),
                    wv: Tensor::randn([d, d], std_block, rng),
                    wo: Tensor::randn([d, d], std_block, rng),
                },
                glu: GluParams {
                    w1: Tensor::randn([d, d], std_block, rng),
                    b1: Tensor::zeros([d]),
                    w2: Tensor::randn([d, d], std_block, rng),
                    b2: Tensor::zeros([d]),
                },
            })
            .collect();
        let head = HeadParams {
            wf: Tensor::randn([f, c], std_head_f, rng),
            bf: Tensor::zeros([c]),
            wd: Tensor::randn([d, 1], std_head_d, rng),
            bd: Tensor::zeros([1]),
            slope: Tensor::scalar(0.25),
        };
        ModelParams { embedding, blocks, head }
    }

    /// Visits parameters in canonical order with stable names.
    pub fn visit(&self, mut f: impl FnMut(String, &Tensor)) {
        f("embedding.w1".into(), &self.embedding.w1);
        f("embedding.b1".into(), &self.embedding.b1);
        f("embedding.w2".into(), &self.embedding.w2);
        f("embedding.b2".into(), &self.embedding.b2);
        for (i, blk) in self.blocks.iter().enumerate() {
            f(format!("block{i}.spa.wq"), &blk.spa.wq);
            f(format!("block{i}.spa.wk"), &blk.spa.wk);
            f(format!("block{i}.spa.wv"), &blk.spa.wv);
            f(format!("block{i}.spa.wo"), &blk.spa.wo);
            f(format!("block{i}.glu.w1"), &blk.glu.w1);
            f(format!("block{i}.glu.b1"), &blk.glu.b1);
            f(format!("block{i}.glu.w2"), &blk.glu.w2);
            f(format!("block{i}.glu.b2"), &blk.glu.b2);
        }
        f("head.wf".into(), &self.head.wf);
        f("head.bf".into(), &self.head.bf);
        f("head.wd".into(), &self.head.wd);
        f("head.bd".into(), &self.head.bd);
        f("head.slope".into(), &self.head.slope);
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let e = &self.embedding;
        let mut out: Vec<&Tensor> = vec![&e.w1, &e.b1, &e.w2, &e.b2];
        for blk in &self.blocks {
            out.push(&blk.spa.wq);
            out.push(&blk.spa.wk);
            out.push(&blk.spa.wv);
            out.push(&blk.spa.wo);
            out.push(&blk.glu.w1);
            out.push(&blk.glu.b1);
            out.push(&blk.glu.w2);
            out.push(&blk.glu.b2);
        }
        out.push(&self.head.wf);
        out.push(&self.head.bf);
        out.push(&self.head.wd);
        out.push(&self.head.bd);
        out.push(&self.head.slope);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let e = &mut self.embedding;
        let mut out: Vec<&mut Tensor> = vec![&mut e.w1, &mut e.b1, &mut e.w2, &mut e.b2];
        for blk in &mut self.blocks {
            out.push(&mut blk.spa.wq);
            out.push(&mut blk.spa.wk);
            out.push(&mut blk.spa.wv);
            out.push(&mut blk.spa.wo);
            out.push(&mut blk.glu.w1);
            out.push(&mut blk.glu.b1);
            out.push(&mut blk.glu.w2);
            out.push(&mut blk.glu.b2);
        }
        out.push(&mut self.head.wf);
        out.push(&mut self.head.bf);
        out.push(&mut self.head.wd);
        out.push(&mut self.head.bd);
        out.push(&mut self.head.slope);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }
}

/// One attention + GLU block's learnable parameter count at width `d`.
pub fn block_param_count(d: usize) -> usize {
    4 * d * d + 2 * d * d + 2 * d
}

/// Parameter count of the conventional block this architecture replaces:
/// vanilla attention (q, k, v, output projection) plus a two-layer
/// feedforward of the same width with biases.
pub fn vanilla_block_param_count(d: usize) -> usize {
    4 * d * d + 2 * (d * d + d)
}

/// A trained or freshly initialized model: config, fixed mask, the
/// importance vector the mask came from, and all learnable parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub mask: AttentionMask,
    pub importance: ImportanceVector,
    pub params: ModelParams,
}

impl Model {
    /// Builds the mask from `importance` and initializes parameters.
    pub fn new(config: ModelConfig, importance: ImportanceVector, seed: u64) -> Result<Model> {
        let mask = build_mask(&importance);
        Model::with_mask(config, importance, mask, seed)
    }

    /// Variant constructor used by the ablation harness (e.g. an all-open mask).
    pub fn with_mask(
        config: ModelConfig,
        importance: ImportanceVector,
        mask: AttentionMask,
        seed: u64,
    ) -> Result<Model> {
        config.validate()?;
        if mask.n_features() != importance.len() {
            return Err(Error::shape(
                "model",
                format!("mask is {}x{0} but importance has {} entries", mask.n_features(), importance.len()),
            ));
        }
        let mut rng = stream(seed, "param-init");
        let params = ModelParams::init(&config, importance.len(), &mut rng);
        Ok(Model { config, mask, importance, params })
    }

    pub fn n_features(&self) -> usize {
        self.mask.n_features()
    }

    /// Registers every parameter as a tape leaf, in canonical order.
    pub fn bind<'m>(&'m self, tape: &mut Tape) -> BoundModel<'m> {
        let vars: Vec<Var> = self.params.tensors().into_iter().map(|t| tape.leaf(t.clone())).collect();
        BoundModel { model: self, vars }
    }

    /// Evaluation-mode forward pass (no dropout).
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let z0 = bound.embed(&mut tape, xv)?;
        let mut rng = stream(0, "unused-eval");
        let zl = bound.blocks(&mut tape, z0, &mut rng, false)?;
        let pred = bound.head(&mut tape, zl)?;
        Ok(tape.value(pred).clone())
    }
}

/// A model whose parameters are bound to leaves of one tape.
pub struct BoundModel<'m> {
    model: &'m Model,
    vars: Vec<Var>,
}

impl BoundModel<'_> {
    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    fn embed_vars(&self) -> [Var; 4] {
        [self.vars[0], self.vars[1], self.vars[2], self.vars[3]]
    }

    fn block_vars(&self, i: usize) -> [Var; 8] {
        let o = 4 + i * 8;
        [
            self.vars[o],
            self.vars[o + 1],
            self.vars[o + 2],
            self.vars[o + 3],
            self.vars[o + 4],
            self.vars[o + 5],
            self.vars[o + 6],
            self.vars[o + 7],
        ]
    }

    fn head_vars(&self) -> [Var; 5] {
        let o = 4 + self.model.params.blocks.len() * 8;
        [self.vars[o], self.vars[o + 1], self.vars[o + 2], self.vars[o + 3], self.vars[o + 4]]
    }

    /// `[b,f] -> [b,f,d]`.
    pub fn embed(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let [w1, b1, w2, b2] = self.embed_vars();
        tape.feature_embed(x, w1, b1, w2, b2)
    }

    /// Runs all attention + GLU blocks with residual shortcuts.
    pub fn blocks(&self, tape: &mut Tape, z0: Var, rng: &mut impl Rng, training: bool) -> Result<Var> {
        let mut z = z0;
        for i in 0..self.model.params.blocks.len() {
            let [wq, wk, wv, wo, g1, gb1, g2, gb2] = self.block_vars(i);
            let attn = spa_forward(
                tape,
                z,
                self.model.mask.matrix(),
                [wq, wk, wv, wo],
                self.model.config.heads,
                self.model.config.attn_dropout,
                rng,
                training,
            )?;
            z = tape.add(z, attn)?;
            let glu = glu_forward(tape, z, [g1, gb1, g2, gb2])?;
            z = tape.add(z, glu)?;
        }
        Ok(z)
    }

    /// `[b,f,d] -> [b,C]` probabilities (or raw values for regression).
    pub fn head(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let [wf, bf, wd, bd, slope] = self.head_vars();
        head_forward(tape, z, [wf, bf, wd, bd, slope], self.model.config.task)
    }
}

/// Multi-head attention with the additive semi-permeable mask: per-head
/// scaling by sqrt(d/heads), mask broadcast to every head, dropout on the
/// attention map in training, heads concatenated and output-projected.
/// The residual shortcut is applied by the caller.
#[allow(clippy::too_many_arguments)]
pub fn spa_forward(
    tape: &mut Tape,
    z: Var,
    mask: &Tensor,
    [wq, wk, wv, wo]: [Var; 4],
    heads: usize,
    dropout_rate: f64,
    rng: &mut impl Rng,
    training: bool,
) -> Result<Var> {
    let (_, _, d) = tape.value(z).dims3()?;
    if d % heads != 0 {
        return Err(Error::shape(
            "spa_forward",
            format!("heads {} must divide embedding width {}", heads, d),
        ));
    }
    let dh = d / heads;
    let q = tape.matmul(z, wq)?;
    let k = tape.matmul(z, wk)?;
    let v = tape.matmul(z, wv)?;
    let qh = tape.split_heads(q, heads)?;
    let kh = tape.split_heads(k, heads)?;
    let vh = tape.split_heads(v, heads)?;
    let kt = tape.transpose(kh)?;
    let logits = tape.bmm(qh, kt)?;
    let scaled = tape.affine(logits, 1.0 / (dh as f64).sqrt(), 0.0);
    let probs = tape.masked_softmax(scaled, mask)?;
    let probs = tape.dropout(probs, dropout_rate, rng, training)?;
    let ctx = tape.bmm(probs, vh)?;
    let merged = tape.merge_heads(ctx, heads)?;
    tape.matmul(merged, wo)
}

/// `tanh(Linear1(z)) ⊙ Linear2(z)` along the embedding axis; the residual
/// shortcut is applied by the caller.
pub fn glu_forward(tape: &mut Tape, z: Var, [w1, b1, w2, b2]: [Var; 4]) -> Result<Var> {
    let a = tape.matmul(z, w1)?;
    let a = tape.add(a, b1)?;
    let gate = tape.tanh(a);
    let b = tape.matmul(z, w2)?;
    let b = tape.add(b, b2)?;
    tape.mul(gate, b)
}

/// Two-stage head: contract the feature axis to `C`, P-ReLU, contract the
/// embedding axis to 1, then the task link function.
pub fn head_forward(
    tape: &mut Tape,
    z: Var,
    [wf, bf, wd, bd, slope]: [Var; 5],
    task: Task,
) -> Result<Var> {
    let (b, _f, _d) = tape.value(z).dims3()?;
    let c = tape.value(wf).shape()[1];
    if c != task.output_dim() {
        return Err(Error::shape(
            "head_forward",
            format!("head width {} does not match task {}", c, task),
        ));
    }
    let zt = tape.transpose(z)?; // b×d×f
    let s = tape.matmul(zt, wf)?; // b×d×C
    let s = tape.add(s, bf)?;
    let p = tape.prelu(s, slope)?;
    let pt = tape.transpose(p)?; // b×C×d
    let o = tape.matmul(pt, wd)?; // b×C×1
    let o = tape.reshape(o, [b, c])?;
    let o = tape.add(o, bd)?;
    match task {
        Task::Binary => Ok(tape.sigmoid(o)),
        Task::Multiclass(_) => tape.softmax(o),
        Task::Regression => Ok(o),
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Version-tagged serialized model: config, fixed mask, importance vector
/// and every parameter array with its shape.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub mask: Tensor,
    pub importance: Vec<f64>,
    pub params: Vec<(String, Tensor)>,
}

impl Model {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut params = Vec::new();
        self.params.visit(|name, t| params.push((name, t.clone())));
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            mask: self.mask.matrix().clone(),
            importance: self.importance.values.clone(),
            params,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Model> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint version {} is not supported (expected {})",
                ck.version, CHECKPOINT_VERSION
            )));
        }
        let importance = ImportanceVector { values: ck.importance };
        let mask = AttentionMask { matrix: ck.mask };
        let mut model = Model::with_mask(ck.config, importance, mask, 0)?;
        // overwrite the fresh init with the stored tensors, checking names and shapes
        let mut expected = Vec::new();
        model.params.visit(|name, t| expected.push((name, t.shape().to_vec())));
        if expected.len() != ck.params.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} parameter arrays, model expects {}",
                ck.params.len(),
                expected.len()
            )));
        }
        for ((dst, (want_name, want_shape)), (got_name, tensor)) in
            model.params.tensors_mut().into_iter().zip(&expected).zip(ck.params)
        {
            if *want_name != got_name || want_shape[..] != *tensor.shape() {
                return Err(Error::Data(format!(
                    "checkpoint parameter '{got_name}' does not match expected '{want_name}'"
                )));
            }
            *dst = tensor;
        }
        Ok(model)
    }
}

/// Per-layer and whole-model gradient checks against central finite
/// differences (h = 1e-5, dropout off), at small widths so the full sweep
/// stays fast. Returns `(layer name, max relative error)` per check.
///
/// With `corrupt` set, an extra negative-control entry is appended whose
/// numeric evaluations deliberately disagree with the recorded program, so
/// the reported error must be large; it exists to prove the failure path.
pub fn gradcheck_suite(seed: u64, corrupt: bool) -> Result<Vec<(String, f64)>> {
    let h = 1e-5;
    let mut rng = stream(seed, "gradcheck");
    let mut out = Vec::new();

    // embedding: batch 3, f=4, d=8
    {
        let (bsz, f, d) = (3, 4, 8);
        let x = Tensor::randn([bsz, f], 1.0, &mut rng);
        let w1 = Tensor::randn([f, d], 1.0, &mut rng);
        let b1 = Tensor::randn([f, d], 0.3, &mut rng);
        let w2 = Tensor::randn([f, d], 1.0, &mut rng);
        let b2 = Tensor::randn([f, d], 0.3, &mut rng);
        let w = Tensor::randn([bsz, f, d], 1.0, &mut rng);
        let err = gradcheck_multi(
            |tape, v| {
                let z = tape.feature_embed(v[0], v[1], v[2], v[3], v[4])?;
                tape.weighted_sum(z, w.clone())
            },
            &[x, w1, b1, w2, b2],
            h,
        )?;
        out.push(("embedding".to_string(), err));
    }

    // single attention layer with a semi-permeable mask: batch 2, f=3, d=8, 2 heads
    {
        let (bsz, f, d, heads) = (2, 3, 8, 2);
        let imp = ImportanceVector { values: vec![0.9, 0.2, 0.5] };
        let mask = build_mask(&imp);
        let z = Tensor::randn([bsz, f, d], 1.0, &mut rng);
        let wq = Tensor::randn([d, d], 0.3, &mut rng);
        let wk = Tensor::randn([d, d], 0.3, &mut rng);
        let wv = Tensor::randn([d, d], 0.3, &mut rng);
        let wo = Tensor::randn([d, d], 0.3, &mut rng);
        let w = Tensor::randn([bsz, f, d], 1.0, &mut rng);
        let mask_m = mask.matrix().clone();
        let err = gradcheck_multi(
            |tape, v| {
                let mut dead = stream(0, "gradcheck-eval");
                let attn = spa_forward(tape, v[0], &mask_m, [v[1], v[2], v[3], v[4]], heads, 0.0, &mut dead, false)?;
                let res = tape.add(v[0], attn)?;
                tape.weighted_sum(res, w.clone())
            },
            &[z, wq, wk, wv, wo],
            h,
        )?;
        out.push(("attention".to_string(), err));
    }

    // GLU layer: batch 2, f=3, d=8
    {
        let (bsz, f, d) = (2, 3, 8);
        let z = Tensor::randn([bsz, f, d], 1.0, &mut rng);
        let w1 = Tensor::randn([d, d], 0.4, &mut rng);
        let b1 = Tensor::randn([d], 0.2, &mut rng);
        let w2 = Tensor::randn([d, d], 0.4, &mut rng);
        let b2 = Tensor::randn([d], 0.2, &mut rng);
        let w = Tensor::randn([bsz, f, d], 1.0, &mut rng);
        let err = gradcheck_multi(
            |tape, v| {
                let glu = glu_forward(tape, v[0], [v[1], v[2], v[3], v[4]])?;
                let res = tape.add(v[0], glu)?;
                tape.weighted_sum(res, w.clone())
            },
            &[z, w1, b1, w2, b2],
            h,
        )?;
        out.push(("glu".to_string(), err));
    }

    // head: batch 3, f=4, d=8, binary
    {
        let (bsz, f, d) = (3, 4, 8);
        let z = Tensor::randn([bsz, f, d], 1.0, &mut rng);
        let wf = Tensor::randn([f, 1], 0.8, &mut rng);
        let bf = Tensor::randn([1], 0.2, &mut rng);
        let wd = Tensor::randn([d, 1], 0.8, &mut rng);
        let bd = Tensor::randn([1], 0.2, &mut rng);
        let slope = Tensor::scalar(0.25);
        let w = Tensor::randn([bsz, 1], 1.0, &mut rng);
        let err = gradcheck_multi(
            |tape, v| {
                let p = head_forward(tape, v[0], [v[1], v[2], v[3], v[4], v[5]], Task::Binary)?;
                tape.weighted_sum(p, w.clone())
            },
            &[z, wf, bf, wd, bd, slope],
            h,
        )?;
        out.push(("head".to_string(), err));
    }

    // full model, three blocks, cross-entropy loss on a 4-row batch
    {
        let (bsz, f) = (4, 3);
        let imp = ImportanceVector { values: vec![0.7, 0.1, 0.4] };
        let cfg = ModelConfig {
            layers: 3,
            dim: 8,
            heads: 2,
            attn_dropout: 0.0,
            gamma: 1e-4,
            task: Task::Binary,
        };
        let model = Model::new(cfg, imp, seed ^ 0x5eed)?;
        let x = Tensor::randn([bsz, f], 1.0, &mut rng);
        let targets: Vec<f64> = (0..bsz).map(|i| f64::from(i % 2 == 0)).collect();
        let points: Vec<Tensor> = std::iter::once(x.clone())
            .chain(model.params.tensors().into_iter().cloned())
            .collect();
        let model_ref = &model;
        let targets_ref = &targets;
        let err = gradcheck_multi(
            |tape, v| {
                // rebuild the forward pass with the perturbed leaves standing
                // in for the stored parameters
                let bound = BoundModel { model: model_ref, vars: v[1..].to_vec() };
                let z0 = bound.embed(tape, v[0])?;
                let mut dead = stream(0, "gradcheck-eval");
                let zl = bound.blocks(tape, z0, &mut dead, false)?;
                let pred = bound.head(tape, zl)?;
                // binary cross-entropy, mean over the batch
                let ln_p = tape.ln(pred);
                let one_minus = tape.affine(pred, -1.0, 1.0);
                let ln_q = tape.ln(one_minus);
                let n = targets_ref.len() as f64;
                let wp = Tensor::new([targets_ref.len(), 1], targets_ref.iter().map(|y| -y / n).collect())?;
                let wq = Tensor::new([targets_ref.len(), 1], targets_ref.iter().map(|y| -(1.0 - y) / n).collect())?;
                let lp = tape.weighted_sum(ln_p, wp)?;
                let lq = tape.weighted_sum(ln_q, wq)?;
                tape.add(lp, lq)
            },
            &points,
            h,
        )?;
        out.push(("full-model".to_string(), err));
    }

    if corrupt {
        // Negative control: the closure changes behaviour after the first
        // (analytic) evaluation, so finite differences see a different
        // function than the one the tape recorded.
        use std::cell::Cell;
        let calls = Cell::new(0usize);
        let x = Tensor::randn([5], 1.0, &mut rng);
        let err = gradcheck_multi(
            |tape, v| {
                let first = calls.get() == 0;
                calls.set(calls.get() + 1);
                let sq = tape.mul(v[0], v[0])?;
                let s = tape.sum(sq);
                let s = tape.affine(s, 0.5, 0.0);
                if first {
                    Ok(s)
                } else {
                    let drift = tape.sum(v[0]);
                    let drift = tape.affine(drift, 0.1, 0.0);
                    tape.add(s, drift)
                }
            },
            std::slice::from_ref(&x),
            h,
        )?;
        out.push(("corrupted-control".to_string(), err));
    }

    Ok(out)
}
