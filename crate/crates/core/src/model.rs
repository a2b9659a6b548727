//! Frozen surrogate encoder, classification and one-versus-all heads, the
//! training objective with its analytic gradients, and inference scoring.
//!
//! The surrogate stands in for a pretrained backbone:
//!
//! ```text
//! q(x)    = tanh(W_q x)                                  (never sees a prompt)
//! f(x, p) = tanh(W2 tanh(W1 x + b1 + V_p p) + b2)
//! ```
//!
//! where `p` is the prompt composed from the pool for `q(x)`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::buffer::Prototype;
use crate::linalg::Matrix;
use crate::math;
use crate::prompt::{AttentionMode, AttentionWeights, PromptPool, Similarity};

/// Floor applied inside every logarithm of the one-versus-all loss.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub input: usize,
    pub query: usize,
    pub hidden: usize,
    pub feature: usize,
    pub prompt: usize,
    pub prompts_per_task: usize,
    pub classes_per_task: usize,
}

impl ModelDims {
    /// Desk-scale defaults for a given input width and task size.
    pub fn desk(input: usize, classes_per_task: usize) -> Self {
        Self {
            input,
            query: 16,
            hidden: 32,
            feature: 16,
            prompt: 8,
            prompts_per_task: 4,
            classes_per_task,
        }
    }
}

fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Matrix::new(rows, cols, data).expect("finite init")
}

fn uniform_vec<R: Rng>(rng: &mut R, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

/// Frozen stand-in backbone. No method takes `&mut self`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEncoder {
    pub w_q: Matrix,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub v_p: Matrix,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Intermediate values of one feature pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct FeaturePass {
    pub hidden: Vec<f64>,
    pub z: Vec<f64>,
}

impl SurrogateEncoder {
    /// Seeded uniform initialisation, `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new<R: Rng>(dims: &ModelDims, rng: &mut R) -> Self {
        let in_bound = 1.0 / math::sqrt(dims.input as f64);
        let hid_bound = 1.0 / math::sqrt(dims.hidden as f64);
        let p_bound = 1.0 / math::sqrt(dims.prompt as f64);
        Self {
            w_q: uniform_matrix(rng, dims.query, dims.input, in_bound),
            w1: uniform_matrix(rng, dims.hidden, dims.input, in_bound),
            b1: uniform_vec(rng, dims.hidden, in_bound),
            v_p: uniform_matrix(rng, dims.hidden, dims.prompt, p_bound),
            w2: uniform_matrix(rng, dims.feature, dims.hidden, hid_bound),
            b2: uniform_vec(rng, dims.feature, hid_bound),
        }
    }

    pub fn query(&self, x: &[f64]) -> Vec<f64> {
        self.w_q
            .mul_vec(x)
            .expect("input dimension matches encoder")
            .into_iter()
            .map(math::tanh)
            .collect()
    }

    pub fn forward(&self, x: &[f64], prompt: &[f64]) -> FeaturePass {
        let wx = self.w1.mul_vec(x).expect("input dimension matches encoder");
        let vp = self
            .v_p
            .mul_vec(prompt)
            .expect("prompt dimension matches encoder");
        let hidden: Vec<f64> = wx
            .iter()
            .zip(&vp)
            .zip(&self.b1)
            .map(|((a, b), c)| math::tanh(a + b + c))
            .collect();
        let z = self
            .w2
            .mul_vec(&hidden)
            .expect("conformant")
            .into_iter()
            .zip(&self.b2)
            .map(|(a, b)| math::tanh(a + b))
            .collect();
        FeaturePass { hidden, z }
    }

    pub fn features(&self, x: &[f64], prompt: &[f64]) -> Vec<f64> {
        self.forward(x, prompt).z
    }

    /// Gradient of a scalar with respect to the prompt, given its gradient
    /// with respect to the features.
    pub fn prompt_gradient(&self, pass: &FeaturePass, dz: &[f64]) -> Vec<f64> {
        let g2: Vec<f64> = dz
            .iter()
            .zip(&pass.z)
            .map(|(d, z)| d * (1.0 - z * z))
            .collect();
        let dh = self.w2.transpose_mul_vec(&g2).expect("conformant");
        let ga: Vec<f64> = dh
            .iter()
            .zip(&pass.hidden)
            .map(|(d, h)| d * (1.0 - h * h))
            .collect();
        self.v_p.transpose_mul_vec(&ga).expect("conformant")
    }

    /// Jacobian `d z / d prompt` as a `feature x prompt` matrix.
    pub fn prompt_jacobian(&self, pass: &FeaturePass) -> Matrix {
        let dz = pass.z.len();
        let mut jac = Matrix::zeros(dz, self.v_p.cols());
        let mut e = vec![0.0; dz];
        for r in 0..dz {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[r] = 1.0;
            jac.row_mut(r)
                .copy_from_slice(&self.prompt_gradient(pass, &e));
        }
        jac
    }
}

/// A dense `out x in` layer with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBlock {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LinearBlock {
    fn new<R: Rng>(rng: &mut R, out: usize, input: usize) -> Self {
        Self {
            weights: uniform_matrix(rng, out, input, 1.0 / math::sqrt(input as f64)),
            bias: vec![0.0; out],
        }
    }

    fn apply(&self, z: &[f64]) -> Vec<f64> {
        self.weights
            .mul_vec(z)
            .expect("feature dimension matches head")
            .into_iter()
            .zip(&self.bias)
            .map(|(a, b)| a + b)
            .collect()
    }
}

/// Growing softmax classifier; block `t` holds the logits of task `t`'s classes.
#[derive(Debug, Clone, PartialEq)]
pub struct CeHead {
    pub classes_per_task: usize,
    pub blocks: Vec<LinearBlock>,
}

impl CeHead {
    pub fn new(classes_per_task: usize) -> Self {
        Self {
            classes_per_task,
            blocks: Vec::new(),
        }
    }

    pub fn expand<R: Rng>(&mut self, rng: &mut R, feature_dim: usize) {
        self.blocks
            .push(LinearBlock::new(rng, self.classes_per_task, feature_dim));
    }

    pub fn classes(&self) -> usize {
        self.blocks.len() * self.classes_per_task
    }

    pub fn logits(&self, z: &[f64]) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.apply(z)).collect()
    }
}

/// One-versus-all head: per task a single layer with `2C` outputs, one
/// (in, out) logit pair per class.
#[derive(Debug, Clone, PartialEq)]
pub struct OvaHead {
    pub classes_per_task: usize,
    pub blocks: Vec<LinearBlock>,
}

impl OvaHead {
    pub fn new(classes_per_task: usize) -> Self {
        Self {
            classes_per_task,
            blocks: Vec::new(),
        }
    }

    pub fn expand<R: Rng>(&mut self, rng: &mut R, feature_dim: usize) {
        self.blocks.push(LinearBlock::new(
            rng,
            2 * self.classes_per_task,
            feature_dim,
        ));
    }

    pub fn classes(&self) -> usize {
        self.blocks.len() * self.classes_per_task
    }

    /// Pair logits for every class, `[in_0, out_0, in_1, out_1, ...]`.
    pub fn pair_logits(&self, z: &[f64]) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.apply(z)).collect()
    }

    /// `(m_c^1, m_c^2)` for every seen class; each pair sums to one.
    pub fn class_probs(&self, z: &[f64]) -> Vec<[f64; 2]> {
        self.pair_logits(z)
            .chunks(2)
            .map(|p| {
                let inside = math::sigmoid(p[0] - p[1]);
                [inside, 1.0 - inside]
            })
            .collect()
    }

    /// In-distribution probability `m_c^1` for every seen class.
    pub fn in_probs(&self, z: &[f64]) -> Vec<f64> {
        self.class_probs(z).into_iter().map(|p| p[0]).collect()
    }

    /// Highest in-distribution probability among each task's classes.
    pub fn task_scores(&self, z: &[f64]) -> Vec<f64> {
        self.in_probs(z)
            .chunks(self.classes_per_task)
            .map(|c| c.iter().copied().fold(0.0, f64::max))
            .collect()
    }
}

/// Addresses one trainable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamKey {
    Keys(usize),
    Prompts(usize),
    Masks(usize),
    CeWeights(usize),
    CeBias(usize),
    OvaWeights(usize),
    OvaBias(usize),
}

/// Gradients keyed by parameter; each entry has the parameter's length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub tensors: BTreeMap<ParamKey, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, key: ParamKey) -> Option<&[f64]> {
        self.tensors.get(&key).map(Vec::as_slice)
    }

    fn slot(&mut self, key: ParamKey, len: usize) -> &mut Vec<f64> {
        self.tensors.entry(key).or_insert_with(|| vec![0.0; len])
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .values()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.tensors.values_mut() {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Relative weight of each term of the objective; zero disables a term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub ce: f64,
    pub ova: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { ce: 1.0, ova: 1.0 }
    }
}

/// How the final class is chosen at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PredictionRule {
    /// `score_t * h^c(x)`, argmax over all seen classes.
    #[default]
    TaskScoreAdjusted,
    /// Plain argmax of the classification head.
    CeOnly,
    /// Argmax of the in-distribution probabilities.
    OvaOnly,
}

/// What the task scores multiply in [`PredictionRule::TaskScoreAdjusted`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreTarget {
    #[default]
    Probabilities,
    Logits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    /// Task whose sub-head owns `class`.
    pub task: usize,
    pub task_scores: Vec<f64>,
}

/// Everything needed to map an input to features and class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub dims: ModelDims,
    pub encoder: SurrogateEncoder,
    pub pool: PromptPool,
    pub ce: CeHead,
    pub ova: OvaHead,
    pub attention: AttentionMode,
    pub similarity: Similarity,
}

/// Forward values for one input.
#[derive(Debug, Clone)]
pub struct SampleForward {
    pub query: Vec<f64>,
    pub weights: AttentionWeights,
    pub prompt: Vec<f64>,
    pub pass: FeaturePass,
}

/// Per-instance one-versus-all loss with floored logarithms. Accumulates
/// `scale *` gradients with respect to the pair logits into `d_pairs`.
pub fn ova_instance_loss(pairs: &[f64], label: usize, scale: f64, d_pairs: &mut [f64]) -> f64 {
    let cap = -math::ln(LOG_FLOOR);
    let mut loss = 0.0;
    for (c, p) in pairs.chunks(2).enumerate() {
        let gap = p[0] - p[1];
        // -ln m^1 = softplus(-gap), -ln m^2 = softplus(gap)
        let (term, sign) = if c == label {
            (math::softplus(-gap), -1.0)
        } else {
            (math::softplus(gap), 1.0)
        };
        if term >= cap {
            loss += cap;
            continue;
        }
        loss += term;
        // d/dgap softplus(sign * gap) = sign * sigmoid(sign * gap)
        let g = sign * math::sigmoid(sign * gap) * scale;
        d_pairs[2 * c] += g;
        d_pairs[2 * c + 1] -= g;
    }
    loss
}

/// Softmax cross-entropy; accumulates `scale * (p - onehot)` into `d_logits`.
pub fn cross_entropy(logits: &[f64], label: usize, scale: f64, d_logits: &mut [f64]) -> f64 {
    let mut p = vec![0.0; logits.len()];
    math::softmax(logits, &mut p);
    for (i, (d, pi)) in d_logits.iter_mut().zip(&p).enumerate() {
        *d += scale * (pi - if i == label { 1.0 } else { 0.0 });
    }
    -math::ln(p[label].max(f64::MIN_POSITIVE))
}

fn accumulate_linear(
    grads: &mut Gradients,
    wkey: ParamKey,
    bkey: ParamKey,
    block: &LinearBlock,
    d_out: &[f64],
    z: &[f64],
    dz: Option<&mut [f64]>,
) {
    let (rows, cols) = block.weights.shape();
    {
        let gw = grads.slot(wkey, rows * cols);
        for (r, &d) in d_out.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (g, zi) in gw[r * cols..(r + 1) * cols].iter_mut().zip(z) {
                *g += d * zi;
            }
        }
    }
    {
        let gb = grads.slot(bkey, rows);
        for (g, d) in gb.iter_mut().zip(d_out) {
            *g += d;
        }
    }
    if let Some(dz) = dz {
        for (r, &d) in d_out.iter().enumerate() {
            for (o, w) in dz.iter_mut().zip(block.weights.row(r)) {
                *o += d * w;
            }
        }
    }
}

impl ModelState {
    pub fn new<R: Rng>(
        dims: ModelDims,
        attention: AttentionMode,
        similarity: Similarity,
        rng: &mut R,
    ) -> Self {
        Self {
            dims,
            encoder: SurrogateEncoder::new(&dims, rng),
            pool: PromptPool::new(dims.query, dims.prompt, dims.prompts_per_task),
            ce: CeHead::new(dims.classes_per_task),
            ova: OvaHead::new(dims.classes_per_task),
            attention,
            similarity,
        }
    }

    pub fn tasks(&self) -> usize {
        self.pool.tasks()
    }

    /// Adds a prompt block and a sub-head in both heads for a new task.
    pub fn expand<R: Rng>(&mut self, rng: &mut R) -> usize {
        let t = self.pool.expand(rng, self.attention == AttentionMode::Coda);
        self.ce.expand(rng, self.dims.feature);
        self.ova.expand(rng, self.dims.feature);
        t
    }

    pub fn task_of_class(&self, class: usize) -> usize {
        class / self.dims.classes_per_task
    }

    pub fn forward(&self, x: &[f64]) -> SampleForward {
        let query = self.encoder.query(x);
        let weights = self
            .pool
            .attention_weights(&query, self.attention, self.similarity)
            .expect("query dimension matches pool");
        let prompt = self
            .pool
            .compose_prompt(&weights)
            .expect("weights match pool");
        let pass = self.encoder.forward(x, &prompt);
        SampleForward {
            query,
            weights,
            prompt,
            pass,
        }
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).pass.z
    }

    pub fn task_scores(&self, x: &[f64]) -> Vec<f64> {
        self.ova.task_scores(&self.features(x))
    }

    pub fn predict(&self, x: &[f64], rule: PredictionRule, target: ScoreTarget) -> Prediction {
        let z = self.features(x);
        self.predict_from_features(&z, rule, target)
    }

    pub fn predict_from_features(
        &self,
        z: &[f64],
        rule: PredictionRule,
        target: ScoreTarget,
    ) -> Prediction {
        let task_scores = self.ova.task_scores(z);
        let class = match rule {
            PredictionRule::CeOnly => math::argmax(&self.ce.logits(z)),
            PredictionRule::OvaOnly => math::argmax(&self.ova.in_probs(z)),
            PredictionRule::TaskScoreAdjusted => {
                let logits = self.ce.logits(z);
                let mut h = match target {
                    ScoreTarget::Logits => logits,
                    ScoreTarget::Probabilities => {
                        let mut p = vec![0.0; logits.len()];
                        math::softmax(&logits, &mut p);
                        p
                    }
                };
                for (c, v) in h.iter_mut().enumerate() {
                    *v *= task_scores[c / self.dims.classes_per_task];
                }
                math::argmax(&h)
            }
        };
        Prediction {
            class,
            task: self.task_of_class(class),
            task_scores,
        }
    }

    /// Read access to a parameter tensor.
    pub fn param(&self, key: ParamKey) -> &[f64] {
        match key {
            ParamKey::Keys(t) => self.pool.block(t).keys.as_slice(),
            ParamKey::Prompts(t) => self.pool.block(t).prompts.as_slice(),
            ParamKey::Masks(t) => self
                .pool
                .block(t)
                .masks
                .as_ref()
                .map_or(&[][..], |m| m.as_slice()),
            ParamKey::CeWeights(t) => self.ce.blocks[t].weights.as_slice(),
            ParamKey::CeBias(t) => &self.ce.blocks[t].bias,
            ParamKey::OvaWeights(t) => self.ova.blocks[t].weights.as_slice(),
            ParamKey::OvaBias(t) => &self.ova.blocks[t].bias,
        }
    }

    /// Write access; `None` for tensors of a frozen prompt block.
    pub fn param_mut(&mut self, key: ParamKey) -> Option<&mut [f64]> {
        match key {
            ParamKey::Keys(t) => self.pool.block_mut(t).ok().map(|b| b.keys.as_mut_slice()),
            ParamKey::Prompts(t) => self
                .pool
                .block_mut(t)
                .ok()
                .map(|b| b.prompts.as_mut_slice()),
            ParamKey::Masks(t) => self
                .pool
                .block_mut(t)
                .ok()
                .and_then(|b| b.masks.as_mut().map(|m| m.as_mut_slice())),
            ParamKey::CeWeights(t) => Some(self.ce.blocks[t].weights.as_mut_slice()),
            ParamKey::CeBias(t) => Some(&mut self.ce.blocks[t].bias),
            ParamKey::OvaWeights(t) => Some(self.ova.blocks[t].weights.as_mut_slice()),
            ParamKey::OvaBias(t) => Some(&mut self.ova.blocks[t].bias),
        }
    }

    /// One-versus-all loss for a single feature vector, with gradients for
    /// the OVA head only.
    pub fn ova_loss(&self, z: &[f64], label: usize) -> (f64, Gradients) {
        let mut grads = Gradients::default();
        let mut dz = vec![0.0; z.len()];
        let loss = self.ova_term(z, label, 1.0, &mut grads, Some(&mut dz));
        (loss, grads)
    }

    fn ova_term(
        &self,
        z: &[f64],
        label: usize,
        scale: f64,
        grads: &mut Gradients,
        dz: Option<&mut [f64]>,
    ) -> f64 {
        let pairs = self.ova.pair_logits(z);
        let mut d_pairs = vec![0.0; pairs.len()];
        let loss = ova_instance_loss(&pairs, label, scale, &mut d_pairs);
        let width = 2 * self.dims.classes_per_task;
        let mut dz = dz;
        for (t, block) in self.ova.blocks.iter().enumerate() {
            accumulate_linear(
                grads,
                ParamKey::OvaWeights(t),
                ParamKey::OvaBias(t),
                block,
                &d_pairs[t * width..(t + 1) * width],
                z,
                dz.as_deref_mut(),
            );
        }
        loss
    }

    /// `w_ce * mean CE(batch) + w_ova * mean OVA(batch features ∪ prototypes)`
    /// and the gradients for every trainable tensor (unfrozen prompt blocks
    /// and both heads).
    pub fn total_loss(
        &self,
        inputs: &[&[f64]],
        labels: &[usize],
        prototypes: &[Prototype],
        weights: LossWeights,
    ) -> (f64, Gradients) {
        assert_eq!(inputs.len(), labels.len());
        assert!(!inputs.is_empty(), "batch must not be empty");
        let mut grads = Gradients::default();
        let ce_scale = weights.ce / inputs.len() as f64;
        let ova_scale = weights.ova / (inputs.len() + prototypes.len()) as f64;
        let mut loss = 0.0;

        for (&x, &y) in inputs.iter().zip(labels) {
            let fwd = self.forward(x);
            let z = &fwd.pass.z;
            let mut dz = vec![0.0; z.len()];
            if weights.ce != 0.0 {
                let logits = self.ce.logits(z);
                let mut dl = vec![0.0; logits.len()];
                loss += ce_scale * cross_entropy(&logits, y, ce_scale, &mut dl);
                let c = self.dims.classes_per_task;
                for (t, block) in self.ce.blocks.iter().enumerate() {
                    accumulate_linear(
                        &mut grads,
                        ParamKey::CeWeights(t),
                        ParamKey::CeBias(t),
                        block,
                        &dl[t * c..(t + 1) * c],
                        z,
                        Some(&mut dz),
                    );
                }
            }
            if weights.ova != 0.0 {
                loss += ova_scale * self.ova_term(z, y, ova_scale, &mut grads, Some(&mut dz));
            }
            self.backward_pool(&fwd, &dz, &mut grads);
        }
        if weights.ova != 0.0 {
            for p in prototypes {
                loss += ova_scale * self.ova_term(&p.feature, p.label, ova_scale, &mut grads, None);
            }
        }
        (loss, grads)
    }

    /// Backpropagates a feature gradient into every unfrozen prompt block.
    fn backward_pool(&self, fwd: &SampleForward, dz: &[f64], grads: &mut Gradients) {
        let trainable: Vec<usize> = (0..self.pool.tasks())
            .filter(|&t| !self.pool.block(t).frozen)
            .collect();
        if trainable.is_empty() {
            return;
        }
        let dprompt = self.encoder.prompt_gradient(&fwd.pass, dz);
        let (kd, pd) = (self.dims.query, self.dims.prompt);
        for t in trainable {
            let block = self.pool.block(t);
            let alphas = fwd.weights.task(t);
            let m = block.len();
            let mut dk = vec![0.0; m * kd];
            let mut dp = vec![0.0; m * pd];
            let mut dmask = block.masks.as_ref().map(|_| vec![0.0; m * kd]);
            for i in 0..m {
                let p_i = block.prompts.row(i);
                let d_alpha = math::dot(&dprompt, p_i);
                for (g, d) in dp[i * pd..(i + 1) * pd].iter_mut().zip(&dprompt) {
                    *g += alphas[i] * d;
                }
                if d_alpha == 0.0 {
                    continue;
                }
                let u = block.matched_query(i, &fwd.query, self.attention);
                let mut du = vec![0.0; kd];
                self.similarity.backward(
                    &u,
                    block.keys.row(i),
                    d_alpha,
                    &mut du,
                    &mut dk[i * kd..(i + 1) * kd],
                );
                if let (Some(dm), AttentionMode::Coda) = (dmask.as_mut(), self.attention) {
                    for ((g, d), q) in dm[i * kd..(i + 1) * kd].iter_mut().zip(&du).zip(&fwd.query)
                    {
                        *g += d * q;
                    }
                }
            }
            add_into(grads.slot(ParamKey::Keys(t), m * kd), &dk);
            add_into(grads.slot(ParamKey::Prompts(t), m * pd), &dp);
            if let Some(dm) = dmask {
                add_into(grads.slot(ParamKey::Masks(t), m * kd), &dm);
            }
        }
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(attention: AttentionMode, tasks: usize) -> ModelState {
        let dims = ModelDims {
            input: 5,
            query: 4,
            hidden: 6,
            feature: 3,
            prompt: 2,
            prompts_per_task: 2,
            classes_per_task: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = ModelState::new(dims, attention, Similarity::Cosine, &mut rng);
        for _ in 0..tasks {
            m.expand(&mut rng);
        }
        m
    }

    #[test]
    fn zero_input_has_zero_query() {
        let m = small(AttentionMode::Koppa, 1);
        assert!(m.encoder.query(&[0.0; 5]).iter().all(|q| *q == 0.0));
    }

    #[test]
    fn query_matches_direct_evaluation() {
        let m = small(AttentionMode::Koppa, 1);
        let x = [0.3, -1.2, 0.5, 2.0, -0.1];
        let q = m.encoder.query(&x);
        for (r, qr) in q.iter().enumerate() {
            let acc: f64 = x
                .iter()
                .enumerate()
                .map(|(c, xc)| m.encoder.w_q.get(r, c) * xc)
                .sum();
            assert!((qr - acc.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_prompt_is_plain_forward() {
        let m = small(AttentionMode::Koppa, 1);
        let x = [0.3, -1.2, 0.5, 2.0, -0.1];
        let z = m.encoder.features(&x, &[0.0, 0.0]);
        let e = &m.encoder;
        let h: Vec<f64> = (0..6)
            .map(|r| (math::dot(e.w1.row(r), &x) + e.b1[r]).tanh())
            .collect();
        for (r, zr) in z.iter().enumerate() {
            assert!((zr - (math::dot(e.w2.row(r), &h) + e.b2[r]).tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn prompt_jacobian_matches_finite_differences() {
        let m = small(AttentionMode::Koppa, 1);
        let x = [0.3, -1.2, 0.5, 2.0, -0.1];
        let p = [0.2, -0.4];
        let jac = m.encoder.prompt_jacobian(&m.encoder.forward(&x, &p));
        let eps = 1e-5;
        for i in 0..2 {
            let mut pp = p;
            pp[i] += eps;
            let z1 = m.encoder.features(&x, &pp);
            let z0 = m.encoder.features(&x, &p);
            for r in 0..3 {
                let fd = (z1[r] - z0[r]) / eps;
                assert!((fd - jac.get(r, i)).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn ova_pairs_sum_to_one() {
        let m = small(AttentionMode::Koppa, 2);
        for p in m.ova.class_probs(&[0.4, -0.9, 0.1]) {
            assert_eq!(p[0] + p[1], 1.0);
        }
    }

    #[test]
    fn ova_loss_closed_forms() {
        // uniform probabilities over two classes: 2 ln 2
        let mut d = [0.0; 4];
        let l = ova_instance_loss(&[0.0, 0.0, 0.0, 0.0], 0, 1.0, &mut d);
        assert!((l - 2.0 * core::f64::consts::LN_2).abs() < 1e-15);
        // perfect scores
        let l = ova_instance_loss(&[50.0, -50.0, -50.0, 50.0], 0, 1.0, &mut d);
        assert!(l < 1e-12);
        // saturated wrong scores hit the floor
        let mut d = [0.0; 2];
        let l = ova_instance_loss(&[-100.0, 100.0], 0, 1.0, &mut d);
        assert!((l + LOG_FLOOR.ln()).abs() < 1e-9);
        assert_eq!(d, [0.0, 0.0]);
    }

    #[test]
    fn ova_loss_matches_scalar_reimplementation() {
        let m = small(AttentionMode::Koppa, 2);
        let z = [0.7, -0.2, 0.45];
        for y in 0..4 {
            let (loss, _) = m.ova_loss(&z, y);
            let mut oracle = 0.0;
            for c in 0..4 {
                let block = &m.ova.blocks[c / 2];
                let r = 2 * (c % 2);
                let a = math::dot(block.weights.row(r), &z) + block.bias[r];
                let b = math::dot(block.weights.row(r + 1), &z) + block.bias[r + 1];
                let p_in = a.exp() / (a.exp() + b.exp());
                oracle -= if c == y { p_in.ln() } else { (1.0 - p_in).ln() };
            }
            assert!((loss - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn uniform_scores_keep_ce_argmax() {
        let mut m = small(AttentionMode::Koppa, 2);
        // zero OVA weights -> every score 0.5
        for b in &mut m.ova.blocks {
            b.weights.as_mut_slice().iter_mut().for_each(|w| *w = 0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = m.predict(
                &x,
                PredictionRule::TaskScoreAdjusted,
                ScoreTarget::Probabilities,
            );
            let b = m.predict(&x, PredictionRule::CeOnly, ScoreTarget::Probabilities);
            assert_eq!(a.class, b.class);
        }
    }

    #[test]
    fn one_hot_scores_confine_prediction() {
        let mut m = small(AttentionMode::Koppa, 2);
        // task-1 classes win the OVA by a wide margin
        for (t, b) in m.ova.blocks.iter_mut().enumerate() {
            b.weights.as_mut_slice().iter_mut().for_each(|w| *w = 0.0);
            let s = if t == 1 { 60.0 } else { -60.0 };
            b.bias = vec![s, -s, s, -s];
        }
        let x = [0.3, -1.2, 0.5, 2.0, -0.1];
        let p = m.predict(
            &x,
            PredictionRule::TaskScoreAdjusted,
            ScoreTarget::Probabilities,
        );
        assert_eq!(p.task, 1);
        assert!(p.task_scores[1] > 1.0 - 1e-12 && p.task_scores[0] < 1e-12);
    }

    #[test]
    fn frozen_block_has_no_write_access() {
        let mut m = small(AttentionMode::Koppa, 2);
        m.pool.freeze(0);
        assert!(m.param_mut(ParamKey::Keys(0)).is_none());
        assert!(m.param_mut(ParamKey::Keys(1)).is_some());
    }
}
