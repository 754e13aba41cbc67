//! A single-layer tanh recurrent policy with hand-written backpropagation.
//!
//! ```text
//! h_t   = tanh(recur h_{t-1} + input_proj embed(z_{t-1}) + context_proj x + bias_h)
//! out_t = head_w h_t + head_b
//! ```
//!
//! `out_t` is either the V softmax logits or the V-1 internal-node logits of
//! a binary-tree head. Tree-node logits are evaluated on demand, one row of
//! `head_w` per visited node.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bintree::{self, BinaryStepRecord, Codebook};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::sampling::{sample_pi, true_action, SimplexVector, StepLogits};
use crate::stats::{log_softmax, softmax};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Softmax,
    Tree,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub context: usize,
    pub head: HeadKind,
}

impl PolicyDims {
    /// Width of the output layer: V logits or V-1 node logits.
    pub fn outputs(&self) -> usize {
        match self.head {
            HeadKind::Softmax => self.vocab,
            HeadKind::Tree => self.vocab - 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.vocab < 2 {
            return Err(Error::domain("policy vocabulary must have at least 2 words"));
        }
        if self.embed == 0 || self.hidden == 0 {
            return Err(Error::domain("embedding and hidden sizes must be positive"));
        }
        Ok(())
    }
}

/// Policy parameters. The same struct carries parameter gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnParams {
    pub dims: PolicyDims,
    /// `(V + 1) x E`; the last row embeds the start marker.
    pub token_embed: Array2<f64>,
    /// `H x E`
    pub input_proj: Array2<f64>,
    /// `H x H`
    pub recur: Array2<f64>,
    /// `H x C`
    pub context_proj: Array2<f64>,
    pub bias_h: Array1<f64>,
    /// `O x H`, O = V (softmax) or V - 1 (tree)
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

const TENSOR_NAMES: [&str; 7] = [
    "token_embed",
    "input_proj",
    "recur",
    "context_proj",
    "bias_h",
    "head_w",
    "head_b",
];

impl RnnParams {
    pub fn zeros(dims: PolicyDims) -> Result<Self> {
        dims.validate()?;
        let (v, e, h, c, o) = (dims.vocab, dims.embed, dims.hidden, dims.context, dims.outputs());
        Ok(RnnParams {
            dims,
            token_embed: Array2::zeros((v + 1, e)),
            input_proj: Array2::zeros((h, e)),
            recur: Array2::zeros((h, h)),
            context_proj: Array2::zeros((h, c)),
            bias_h: Array1::zeros(h),
            head_w: Array2::zeros((o, h)),
            head_b: Array1::zeros(o),
        })
    }

    /// Every entry uniform in `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(dims: PolicyDims, scale: f64, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        p.for_each_mut(|x| *x = rng.random_range(-scale..=scale));
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims).expect("dims already validated")
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    fn slices(&self) -> [&[f64]; 7] {
        [
            self.token_embed.as_slice().unwrap(),
            self.input_proj.as_slice().unwrap(),
            self.recur.as_slice().unwrap(),
            self.context_proj.as_slice().unwrap(),
            self.bias_h.as_slice().unwrap(),
            self.head_w.as_slice().unwrap(),
            self.head_b.as_slice().unwrap(),
        ]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 7] {
        [
            self.token_embed.as_slice_mut().unwrap(),
            self.input_proj.as_slice_mut().unwrap(),
            self.recur.as_slice_mut().unwrap(),
            self.context_proj.as_slice_mut().unwrap(),
            self.bias_h.as_slice_mut().unwrap(),
            self.head_w.as_slice_mut().unwrap(),
            self.head_b.as_slice_mut().unwrap(),
        ]
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(&mut f);
        }
    }

    /// All parameters in a fixed order (the order of [`TENSOR_NAMES`]).
    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn from_flat(dims: PolicyDims, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        if flat.len() != p.num_params() {
            return Err(Error::domain(format!(
                "expected {} parameters, got {}",
                p.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for s in p.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(p)
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, other: &RnnParams, alpha: f64) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += alpha * s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    pub fn initial_state(&self) -> PolicyState {
        PolicyState {
            hidden: Array1::zeros(self.dims.hidden),
            step_index: 0,
        }
    }

    /// Project the context features once per sequence.
    pub fn encode_context(&self, features: &[f64]) -> Result<EncodedContext> {
        if features.len() != self.dims.context {
            return Err(Error::domain(format!(
                "context has {} features, policy expects {}",
                features.len(),
                self.dims.context
            )));
        }
        let x = Array1::from(features.to_vec());
        Ok(EncodedContext {
            projected: self.context_proj.dot(&x),
            features: x,
        })
    }

    fn token_row(&self, prev: Option<usize>) -> ArrayView1<'_, f64> {
        self.token_embed.row(prev.unwrap_or(self.dims.vocab))
    }

    /// Recurrence only; the head is evaluated separately.
    pub fn advance(
        &self,
        state: &PolicyState,
        prev: Option<usize>,
        ctx: &EncodedContext,
    ) -> (PolicyState, TapeRecord) {
        let pre = self.recur.dot(&state.hidden)
            + self.input_proj.dot(&self.token_row(prev))
            + &ctx.projected
            + &self.bias_h;
        let hidden = pre.mapv(f64::tanh);
        let tape = TapeRecord {
            prev,
            hidden_prev: state.hidden.clone(),
            hidden: hidden.clone(),
        };
        (
            PolicyState {
                hidden,
                step_index: state.step_index + 1,
            },
            tape,
        )
    }

    /// All head outputs for a state.
    pub fn head_outputs(&self, state: &PolicyState) -> Vec<f64> {
        (self.head_w.dot(&state.hidden) + &self.head_b).to_vec()
    }

    pub fn node_logit(&self, state: &PolicyState, node: usize) -> f64 {
        self.head_w.row(node).dot(&state.hidden) + self.head_b[node]
    }

    /// One decoding step: new state, full head output, and the tape record.
    pub fn forward_step(
        &self,
        state: &PolicyState,
        prev: Option<usize>,
        ctx: &EncodedContext,
    ) -> (Vec<f64>, PolicyState, TapeRecord) {
        let (next, tape) = self.advance(state, prev, ctx);
        (self.head_outputs(&next), next, tape)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyState {
    pub hidden: Array1<f64>,
    pub step_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedContext {
    pub features: Array1<f64>,
    pub projected: Array1<f64>,
}

/// What backpropagation needs from one forward step.
#[derive(Clone, Debug, PartialEq)]
pub struct TapeRecord {
    pub prev: Option<usize>,
    pub hidden_prev: Array1<f64>,
    pub hidden: Array1<f64>,
}

fn add_outer(m: &mut Array2<f64>, a: &Array1<f64>, b: ArrayView1<'_, f64>) {
    for (mut row, &ai) in m.rows_mut().into_iter().zip(a) {
        if ai != 0.0 {
            row.scaled_add(ai, &b);
        }
    }
}

/// Exact gradient of `sum_t <upstream_t, out_t>` with respect to every
/// parameter, by backpropagation through time.
pub fn backward_accumulate(
    params: &RnnParams,
    ctx: &EncodedContext,
    tape: &[TapeRecord],
    upstream: &[Vec<f64>],
) -> Result<RnnParams> {
    let mut grad = params.zeros_like();
    backward_into(params, ctx, tape, upstream, &mut grad)?;
    Ok(grad)
}

/// Like [`backward_accumulate`] but adds into an existing gradient.
pub fn backward_into(
    params: &RnnParams,
    ctx: &EncodedContext,
    tape: &[TapeRecord],
    upstream: &[Vec<f64>],
    grad: &mut RnnParams,
) -> Result<()> {
    if tape.len() != upstream.len() {
        return Err(Error::domain(format!(
            "tape has {} steps but {} upstream gradients were given",
            tape.len(),
            upstream.len()
        )));
    }
    let outputs = params.dims.outputs();
    let mut carry: Array1<f64> = Array1::zeros(params.dims.hidden);
    for (rec, up) in tape.iter().zip(upstream).rev() {
        if up.len() != outputs {
            return Err(Error::domain(format!(
                "upstream gradient has length {}, head has {outputs} outputs",
                up.len()
            )));
        }
        let up = ArrayView1::from(up.as_slice());
        // head
        for (n, &u) in up.iter().enumerate() {
            if u != 0.0 {
                grad.head_w.row_mut(n).scaled_add(u, &rec.hidden);
                grad.head_b[n] += u;
            }
        }
        let dh = params.head_w.t().dot(&up) + &carry;
        let da = &dh * &rec.hidden.mapv(|h| 1.0 - h * h);
        add_outer(&mut grad.recur, &da, rec.hidden_prev.view());
        add_outer(&mut grad.input_proj, &da, params.token_row(rec.prev));
        add_outer(&mut grad.context_proj, &da, ctx.features.view());
        grad.bias_h += &da;
        let d_embed = params.input_proj.t().dot(&da);
        let row = rec.prev.unwrap_or(params.dims.vocab);
        grad.token_embed.row_mut(row).scaled_add(1.0, &d_embed);
        carry = params.recur.t().dot(&da);
    }
    Ok(())
}

/// Teacher-forced negative log-likelihood of `target` and its gradient.
pub fn mle_gradient(
    params: &RnnParams,
    tree: Option<&Codebook>,
    context: &[f64],
    target: &[usize],
) -> Result<(f64, RnnParams)> {
    if target.is_empty() {
        return Err(Error::domain("MLE target must be non-empty"));
    }
    let ctx = params.encode_context(context)?;
    let decoder = Decoder::new(params, tree)?;
    let mut state = params.initial_state();
    let mut prev = None;
    let mut tape = Vec::with_capacity(target.len());
    let mut upstream = Vec::with_capacity(target.len());
    let mut nll = 0.0;
    for &y in target {
        if y >= params.dims.vocab {
            return Err(Error::domain(format!("target token {y} out of range")));
        }
        let (next, rec) = params.advance(&state, prev, &ctx);
        let (logp, score) = decoder.log_prob_and_score(&next, y)?;
        nll -= logp;
        upstream.push(score.into_iter().map(|s| -s).collect());
        tape.push(rec);
        state = next;
        prev = Some(y);
    }
    let grad = backward_accumulate(params, &ctx, &tape, &upstream)?;
    Ok((nll, grad))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Ascend,
    Descend,
}

pub fn sgd_update(
    params: &RnnParams,
    grad: &RnnParams,
    learning_rate: f64,
    direction: Direction,
) -> Result<RnnParams> {
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(Error::domain(format!("invalid learning rate {learning_rate}")));
    }
    if !grad.all_finite() {
        return Err(Error::domain("gradient has non-finite entries"));
    }
    if grad.dims != params.dims {
        return Err(Error::domain("gradient and parameter shapes differ"));
    }
    let sign = match direction {
        Direction::Ascend => 1.0,
        Direction::Descend => -1.0,
    };
    let mut out = params.clone();
    out.add_scaled(grad, sign * learning_rate);
    Ok(out)
}

/// How a token is chosen during a rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    #[default]
    Stochastic,
    Greedy,
}

/// Per-token record of a stochastic draw.
#[derive(Clone, Debug, PartialEq)]
pub enum TokenDraw {
    Categorical { pi: SimplexVector, logits: StepLogits },
    Tree(BinaryStepRecord),
    Greedy,
}

#[derive(Clone, Debug)]
pub struct SampledToken {
    pub token: usize,
    pub draw: TokenDraw,
}

/// Sampling, scoring and rollouts over either head.
#[derive(Clone, Copy, Debug)]
pub struct Decoder<'a> {
    pub params: &'a RnnParams,
    pub tree: Option<&'a Codebook>,
}

impl<'a> Decoder<'a> {
    pub fn new(params: &'a RnnParams, tree: Option<&'a Codebook>) -> Result<Self> {
        match (params.dims.head, tree) {
            (HeadKind::Softmax, _) => Ok(Decoder { params, tree: None }),
            (HeadKind::Tree, Some(cb)) if cb.vocab() == params.dims.vocab => Ok(Decoder { params, tree }),
            (HeadKind::Tree, Some(cb)) => Err(Error::domain(format!(
                "codebook has {} words, policy vocabulary is {}",
                cb.vocab(),
                params.dims.vocab
            ))),
            (HeadKind::Tree, None) => Err(Error::domain("tree head needs a codebook")),
        }
    }

    pub fn vocab(&self) -> usize {
        self.params.dims.vocab
    }

    pub fn outputs(&self) -> usize {
        self.params.dims.outputs()
    }

    pub fn logits(&self, state: &PolicyState) -> StepLogits {
        StepLogits::new(self.params.head_outputs(state)).expect("finite parameters give finite logits")
    }

    pub fn sample(&self, state: &PolicyState, rng: &mut StreamRng) -> SampledToken {
        match self.tree {
            None => {
                let logits = self.logits(state);
                let pi = sample_pi(rng, self.vocab()).expect("V >= 2");
                let token = true_action(&pi, &logits).expect("lengths match");
                SampledToken {
                    token,
                    draw: TokenDraw::Categorical { pi, logits },
                }
            }
            Some(cb) => {
                let (token, rec) = bintree::bt_sample_token(cb, |n| self.params.node_logit(state, n), rng);
                SampledToken {
                    token,
                    draw: TokenDraw::Tree(rec),
                }
            }
        }
    }

    /// Most likely token (softmax) or bitwise-greedy leaf (tree).
    pub fn greedy(&self, state: &PolicyState) -> usize {
        match self.tree {
            None => self.logits(state).argmax(),
            Some(cb) => cb.greedy_word(|n| self.params.node_logit(state, n)),
        }
    }

    pub fn choose(&self, state: &PolicyState, mode: SampleMode, rng: &mut StreamRng) -> SampledToken {
        match mode {
            SampleMode::Stochastic => self.sample(state, rng),
            SampleMode::Greedy => SampledToken {
                token: self.greedy(state),
                draw: TokenDraw::Greedy,
            },
        }
    }

    /// `log p(token | state)` and its gradient with respect to the head
    /// outputs (`onehot - softmax`, or `b - sigmoid` on visited nodes).
    pub fn log_prob_and_score(&self, state: &PolicyState, token: usize) -> Result<(f64, Vec<f64>)> {
        if token >= self.vocab() {
            return Err(Error::domain(format!("token {token} out of range")));
        }
        match self.tree {
            None => {
                let out = self.params.head_outputs(state);
                let logp = log_softmax(&out)[token];
                let mut score: Vec<f64> = softmax(&out).into_iter().map(|p| -p).collect();
                score[token] += 1.0;
                Ok((logp, score))
            }
            Some(cb) => {
                let bits = cb.word_to_path(token)?;
                let (logp, node_grads) =
                    bintree::bt_logprob_and_mle_grad(cb, bits, |n| self.params.node_logit(state, n))?;
                let mut score = vec![0.0; self.outputs()];
                for (n, g) in node_grads {
                    score[n] += g;
                }
                Ok((logp, score))
            }
        }
    }

    /// Complete a sequence to `length` tokens. `state` is the state whose head
    /// will produce the token at position `prefix.len()`; returns the full
    /// sequence `prefix ++ continuation`.
    pub fn complete(
        &self,
        ctx: &EncodedContext,
        state: &PolicyState,
        prefix: &[usize],
        length: usize,
        mode: SampleMode,
        rng: &mut StreamRng,
    ) -> Vec<usize> {
        let mut seq = prefix.to_vec();
        let mut state = state.clone();
        while seq.len() < length {
            let tok = self.choose(&state, mode, rng).token;
            seq.push(tok);
            if seq.len() < length {
                state = self.params.advance(&state, Some(tok), ctx).0;
            }
        }
        seq
    }

    /// Sequence starting with `prefix` followed by `token`, continued from the
    /// state that produced `token`.
    #[allow(clippy::too_many_arguments)]
    pub fn continue_after(
        &self,
        ctx: &EncodedContext,
        state: &PolicyState,
        prefix: &[usize],
        token: usize,
        length: usize,
        mode: SampleMode,
        rng: &mut StreamRng,
    ) -> Vec<usize> {
        let mut seq = prefix.to_vec();
        seq.push(token);
        if seq.len() >= length {
            return seq;
        }
        let next = self.params.advance(state, Some(token), ctx).0;
        self.complete(ctx, &next, &seq, length, mode, rng)
    }

    /// Greedy decode of a whole sequence.
    pub fn greedy_sequence(&self, ctx: &EncodedContext, length: usize, rng: &mut StreamRng) -> Vec<usize> {
        let (s0, _) = self.params.advance(&self.params.initial_state(), None, ctx);
        self.complete(ctx, &s0, &[], length, SampleMode::Greedy, rng)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorBlob {
    shape: Vec<usize>,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    dims: PolicyDims,
    tensors: BTreeMap<String, TensorBlob>,
}

fn encode_f64s(xs: &[f64]) -> String {
    let bytes: Vec<u8> = xs.iter().flat_map(|x| x.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_f64s(s: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::domain(format!("bad base64 tensor: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::domain("tensor byte length is not a multiple of 8"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl RnnParams {
    fn shapes(&self) -> [Vec<usize>; 7] {
        [
            self.token_embed.shape().to_vec(),
            self.input_proj.shape().to_vec(),
            self.recur.shape().to_vec(),
            self.context_proj.shape().to_vec(),
            self.bias_h.shape().to_vec(),
            self.head_w.shape().to_vec(),
            self.head_b.shape().to_vec(),
        ]
    }

    /// Checkpoint JSON: dimensions header plus base64 little-endian f64
    /// tensors keyed by field name.
    pub fn to_checkpoint_json(&self) -> Result<String> {
        let tensors = TENSOR_NAMES
            .iter()
            .zip(self.shapes())
            .zip(self.slices())
            .map(|((name, shape), data)| {
                (
                    name.to_string(),
                    TensorBlob {
                        shape,
                        data: encode_f64s(data),
                    },
                )
            })
            .collect();
        Ok(serde_json::to_string_pretty(&Checkpoint {
            dims: self.dims,
            tensors,
        })?)
    }

    pub fn from_checkpoint_json(json: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(json)?;
        let mut p = Self::zeros(ck.dims)?;
        let shapes = p.shapes();
        for ((name, shape), dst) in TENSOR_NAMES.iter().zip(shapes).zip(p.slices_mut()) {
            let blob = ck
                .tensors
                .get(*name)
                .ok_or_else(|| Error::domain(format!("checkpoint is missing tensor `{name}`")))?;
            if blob.shape != shape {
                return Err(Error::domain(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    blob.shape
                )));
            }
            let data = decode_f64s(&blob.data)?;
            if data.len() != dst.len() {
                return Err(Error::domain(format!("tensor `{name}` has the wrong length")));
            }
            dst.copy_from_slice(&data);
        }
        Ok(p)
    }
}
