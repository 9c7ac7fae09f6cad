//! The policy/value agent: a state encoder, an LSTM controller, and three
//! heads producing a function policy, an argument policy over the flat
//! argument vocabulary (masked per function), and a value estimate in [0, 1].
//!
//! Gradients are computed by hand. Each trace step is replayed from its
//! stored controller state, so the backward pass covers one encoder layer,
//! one LSTM step and the three heads; the stored (h, c) pair is treated as
//! a constant. A finite-difference check in the tests pins every parameter
//! block.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::{Action, ActionLibrary};
use crate::error::{Error, Result};
use crate::persist;

const MAGIC: &[u8; 4] = b"RCAG";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub input_width: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub function_count: usize,
    pub arg_vocab: usize,
    /// (offset, len) of each function's block in the argument vocabulary.
    pub blocks: Vec<(usize, usize)>,
    pub seed: u64,
    /// Uniform init scale; 0 gives an exactly symmetric (uniform-policy) net.
    pub init_scale: f64,
}

impl AgentConfig {
    pub fn for_library(
        input_width: usize,
        embed_dim: usize,
        hidden_dim: usize,
        lib: &ActionLibrary,
        seed: u64,
    ) -> Self {
        let blocks = (0..lib.function_count())
            .map(|f| (lib.block_offset(f), lib.block_len(f)))
            .collect();
        Self {
            input_width,
            embed_dim,
            hidden_dim,
            function_count: lib.function_count(),
            arg_vocab: lib.action_count(),
            blocks,
            seed,
            init_scale: 0.1,
        }
    }
}

/// LSTM hidden and cell state; reset to zeros at the start of every
/// intervention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

impl ControllerState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self { h: Array1::zeros(hidden_dim), c: Array1::zeros(hidden_dim) }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LstmParams {
    // Gate order: input, forget, cell, output.
    w: [Array2<f64>; 4],
    u: [Array2<f64>; 4],
    b: [Array1<f64>; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentNet {
    pub cfg: AgentConfig,
    enc_w: Array2<f64>,
    enc_b: Array1<f64>,
    lstm: LstmParams,
    f_w: Array2<f64>,
    f_b: Array1<f64>,
    x_w: Array2<f64>,
    x_b: Array1<f64>,
    v_w: Array2<f64>,
    v_b: Array1<f64>,
}

/// Output of one forward step.
#[derive(Debug, Clone)]
pub struct ForwardOut {
    /// Masked, renormalized function policy.
    pub pi_f: Vec<f64>,
    /// Flat argument policy; each function's block is a conditional
    /// distribution over its own valid arguments.
    pub pi_x: Vec<f64>,
    pub value: f64,
    pub next: ControllerState,
}

/// Mask over functions and over the flat argument vocabulary. A non-STOP
/// function is selectable only if at least one of its arguments is.
#[derive(Debug, Clone)]
pub struct ActionMaskView {
    pub functions: Vec<bool>,
    pub args: Vec<bool>,
}

impl ActionMaskView {
    pub fn from_flat(lib: &ActionLibrary, flat: &[bool]) -> Self {
        let functions = (0..lib.function_count())
            .map(|f| {
                let off = lib.block_offset(f);
                (off..off + lib.block_len(f)).any(|i| flat[i])
            })
            .collect();
        Self { functions, args: flat.to_vec() }
    }
}

/// Softmax restricted to unmasked entries; masked entries are exactly zero.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    let mut max = f64::NEG_INFINITY;
    for (i, &z) in logits.iter().enumerate() {
        if mask[i] && z > max {
            max = z;
        }
    }
    if max == f64::NEG_INFINITY {
        return out;
    }
    let mut total = 0.0;
    for (i, &z) in logits.iter().enumerate() {
        if mask[i] {
            out[i] = (z - max).exp();
            total += out[i];
        }
    }
    for v in &mut out {
        *v /= total;
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intermediate activations of one step, kept for the backward pass.
struct StepCache {
    input: Array1<f64>,
    h_prev: Array1<f64>,
    c_prev: Array1<f64>,
    embed: Array1<f64>,
    gates: [Array1<f64>; 4],
    c_new: Array1<f64>,
    tanh_c: Array1<f64>,
    h_new: Array1<f64>,
    pi_f: Vec<f64>,
    pi_x: Vec<f64>,
    value: f64,
}

/// One supervised step: everything needed to replay the forward pass and
/// the imitation targets produced by search.
#[derive(Debug, Clone)]
pub struct TrainStep<'a> {
    pub input: &'a [f64],
    pub controller: &'a ControllerState,
    pub function_mask: &'a [bool],
    pub arg_mask: &'a [bool],
    pub target_pi_f: &'a [f64],
    /// Per-function conditional targets laid out on the flat vocabulary;
    /// blocks of unvisited functions are all zero.
    pub target_pi_x: &'a [f64],
    pub reward: f64,
}

/// Gradients for every parameter block, in the same layout as the net.
pub struct Gradients {
    enc_w: Array2<f64>,
    enc_b: Array1<f64>,
    lstm_w: [Array2<f64>; 4],
    lstm_u: [Array2<f64>; 4],
    lstm_b: [Array1<f64>; 4],
    f_w: Array2<f64>,
    f_b: Array1<f64>,
    x_w: Array2<f64>,
    x_b: Array1<f64>,
    v_w: Array2<f64>,
    v_b: Array1<f64>,
}

impl AgentNet {
    pub fn new(cfg: AgentConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let s = cfg.init_scale;
        let mat = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            Array2::from_shape_fn((rows, cols), |_| {
                if s > 0.0 {
                    rng.gen_range(-s..s)
                } else {
                    0.0
                }
            })
        };
        let (w, e, h) = (cfg.input_width, cfg.embed_dim, cfg.hidden_dim);
        let lstm = LstmParams {
            w: std::array::from_fn(|_| mat(h, e, &mut rng)),
            u: std::array::from_fn(|_| mat(h, h, &mut rng)),
            b: std::array::from_fn(|_| Array1::zeros(h)),
        };
        Self {
            enc_w: mat(e, w, &mut rng),
            enc_b: Array1::zeros(e),
            lstm,
            f_w: mat(cfg.function_count, h, &mut rng),
            f_b: Array1::zeros(cfg.function_count),
            x_w: mat(cfg.arg_vocab, h, &mut rng),
            x_b: Array1::zeros(cfg.arg_vocab),
            v_w: mat(1, h, &mut rng),
            v_b: Array1::zeros(1),
            cfg,
        }
    }

    pub fn controller_start(&self) -> ControllerState {
        ControllerState::zeros(self.cfg.hidden_dim)
    }

    fn forward_cached(
        &self,
        input: &[f64],
        ctrl: &ControllerState,
        function_mask: &[bool],
        arg_mask: &[bool],
    ) -> Result<StepCache> {
        if input.len() != self.cfg.input_width {
            return Err(Error::Config(format!(
                "input width {} does not match the agent's {}",
                input.len(),
                self.cfg.input_width
            )));
        }
        if !function_mask.iter().any(|m| *m) {
            return Err(Error::DegenerateMask);
        }
        let x = Array1::from_vec(input.to_vec());
        let embed = (self.enc_w.dot(&x) + &self.enc_b).mapv(f64::tanh);
        let mut gates: [Array1<f64>; 4] = std::array::from_fn(|g| {
            self.lstm.w[g].dot(&embed) + self.lstm.u[g].dot(&ctrl.h) + &self.lstm.b[g]
        });
        for (g, gate) in gates.iter_mut().enumerate() {
            if g == 2 {
                gate.mapv_inplace(f64::tanh);
            } else {
                gate.mapv_inplace(sigmoid);
            }
        }
        let c_new = &gates[1] * &ctrl.c + &gates[0] * &gates[2];
        let tanh_c = c_new.mapv(f64::tanh);
        let h_new = &gates[3] * &tanh_c;
        let f_logits = self.f_w.dot(&h_new) + &self.f_b;
        let x_logits = self.x_w.dot(&h_new) + &self.x_b;
        let pi_f = masked_softmax(f_logits.as_slice().unwrap(), function_mask);
        // Per-function conditional over each block.
        let mut pi_x = vec![0.0; self.cfg.arg_vocab];
        for (f, &(off, len)) in self.cfg.blocks.iter().enumerate() {
            if !function_mask[f] {
                continue;
            }
            let block = masked_softmax(
                &x_logits.as_slice().unwrap()[off..off + len],
                &arg_mask[off..off + len],
            );
            pi_x[off..off + len].copy_from_slice(&block);
        }
        let value = sigmoid(self.v_w.dot(&h_new)[0] + self.v_b[0]);
        Ok(StepCache {
            input: x,
            h_prev: ctrl.h.clone(),
            c_prev: ctrl.c.clone(),
            embed,
            gates,
            c_new,
            tanh_c,
            h_new,
            pi_f,
            pi_x,
            value,
        })
    }

    /// One forward step: masked policies, value, and the next controller
    /// state.
    pub fn forward(
        &self,
        input: &[f64],
        ctrl: &ControllerState,
        mask: &ActionMaskView,
    ) -> Result<ForwardOut> {
        let cache = self.forward_cached(input, ctrl, &mask.functions, &mask.args)?;
        Ok(ForwardOut {
            pi_f: cache.pi_f,
            pi_x: cache.pi_x,
            value: cache.value,
            next: ControllerState { h: cache.h_new, c: cache.c_new },
        })
    }

    fn zero_gradients(&self) -> Gradients {
        Gradients {
            enc_w: Array2::zeros(self.enc_w.raw_dim()),
            enc_b: Array1::zeros(self.enc_b.raw_dim()),
            lstm_w: std::array::from_fn(|g| Array2::zeros(self.lstm.w[g].raw_dim())),
            lstm_u: std::array::from_fn(|g| Array2::zeros(self.lstm.u[g].raw_dim())),
            lstm_b: std::array::from_fn(|g| Array1::zeros(self.lstm.b[g].raw_dim())),
            f_w: Array2::zeros(self.f_w.raw_dim()),
            f_b: Array1::zeros(self.f_b.raw_dim()),
            x_w: Array2::zeros(self.x_w.raw_dim()),
            x_b: Array1::zeros(self.x_b.raw_dim()),
            v_w: Array2::zeros(self.v_w.raw_dim()),
            v_b: Array1::zeros(self.v_b.raw_dim()),
        }
    }

    /// Loss and gradients averaged over a batch of steps, without touching
    /// the parameters. The loss is the squared value error plus the
    /// cross-entropies between the search-improved policies and the agent's.
    pub fn batch_loss_and_grads(&self, batch: &[TrainStep<'_>]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::Config("empty training batch".into()));
        }
        let mut grads = self.zero_gradients();
        let mut total_loss = 0.0;
        for step in batch {
            let cache =
                self.forward_cached(step.input, step.controller, step.function_mask, step.arg_mask)?;
            total_loss += self.accumulate_step(step, &cache, &mut grads);
        }
        let scale = 1.0 / batch.len() as f64;
        grads.scale(scale);
        let loss = total_loss * scale;
        if !loss.is_finite() {
            return Err(Error::TrainingDivergence(format!("non-finite loss {loss}")));
        }
        Ok((loss, grads))
    }

    /// Adds one step's gradient contribution; returns the step loss.
    fn accumulate_step(&self, step: &TrainStep<'_>, cache: &StepCache, grads: &mut Gradients) -> f64 {
        let mut loss = 0.0;

        // Value head: (v - r)^2 through the sigmoid.
        let v_err = cache.value - step.reward;
        loss += v_err * v_err;
        let dz_v = 2.0 * v_err * cache.value * (1.0 - cache.value);
        for j in 0..self.cfg.hidden_dim {
            grads.v_w[(0, j)] += dz_v * cache.h_new[j];
        }
        grads.v_b[0] += dz_v;
        let mut dh: Array1<f64> = self.v_w.row(0).mapv(|w| w * dz_v);

        // Function head: cross-entropy against the improved policy on the
        // masked softmax. d z_i = p_i * sum(t) - t_i on unmasked entries.
        let t_sum: f64 = step.target_pi_f.iter().sum();
        let mut dz_f = vec![0.0; self.cfg.function_count];
        for i in 0..self.cfg.function_count {
            if step.function_mask[i] {
                if step.target_pi_f[i] > 0.0 {
                    loss -= step.target_pi_f[i] * cache.pi_f[i].max(1e-300).ln();
                }
                dz_f[i] = cache.pi_f[i] * t_sum - step.target_pi_f[i];
            }
        }
        for i in 0..self.cfg.function_count {
            if dz_f[i] != 0.0 {
                for j in 0..self.cfg.hidden_dim {
                    grads.f_w[(i, j)] += dz_f[i] * cache.h_new[j];
                    dh[j] += self.f_w[(i, j)] * dz_f[i];
                }
                grads.f_b[i] += dz_f[i];
            }
        }

        // Argument head: per-function conditional cross-entropies weighted
        // by the target function marginal.
        let mut dz_x = vec![0.0; self.cfg.arg_vocab];
        for (f, &(off, len)) in self.cfg.blocks.iter().enumerate() {
            if !step.function_mask[f] {
                continue;
            }
            let weight = step.target_pi_f[f];
            let block_t = &step.target_pi_x[off..off + len];
            let block_sum: f64 = block_t.iter().sum();
            if weight <= 0.0 || block_sum <= 0.0 {
                continue;
            }
            for k in 0..len {
                let i = off + k;
                if step.arg_mask[i] {
                    if block_t[k] > 0.0 {
                        loss -= weight * block_t[k] * cache.pi_x[i].max(1e-300).ln();
                    }
                    dz_x[i] = weight * (cache.pi_x[i] * block_sum - block_t[k]);
                }
            }
        }
        for i in 0..self.cfg.arg_vocab {
            if dz_x[i] != 0.0 {
                for j in 0..self.cfg.hidden_dim {
                    grads.x_w[(i, j)] += dz_x[i] * cache.h_new[j];
                    dh[j] += self.x_w[(i, j)] * dz_x[i];
                }
                grads.x_b[i] += dz_x[i];
            }
        }

        // LSTM cell, one step. Gate order: input, forget, cell, output.
        let [gi, gf, gg, go] = &cache.gates;
        let d_o = &dh * &cache.tanh_c;
        let d_c = &dh * go * &cache.tanh_c.mapv(|t| 1.0 - t * t);
        let d_i = &d_c * gg;
        let d_g = &d_c * gi;
        let d_f = &d_c * &cache.c_prev;
        let dz = [
            &d_i * &(gi * &gi.mapv(|v| 1.0 - v)),
            &d_f * &(gf * &gf.mapv(|v| 1.0 - v)),
            &d_g * &gg.mapv(|v| 1.0 - v * v),
            &d_o * &(go * &go.mapv(|v| 1.0 - v)),
        ];
        let mut de: Array1<f64> = Array1::zeros(self.cfg.embed_dim);
        for g in 0..4 {
            for r in 0..self.cfg.hidden_dim {
                let d = dz[g][r];
                if d == 0.0 {
                    continue;
                }
                for c in 0..self.cfg.embed_dim {
                    grads.lstm_w[g][(r, c)] += d * cache.embed[c];
                    de[c] += self.lstm.w[g][(r, c)] * d;
                }
                for c in 0..self.cfg.hidden_dim {
                    grads.lstm_u[g][(r, c)] += d * cache.h_prev[c];
                }
                grads.lstm_b[g][r] += d;
            }
        }

        // Encoder: tanh of an affine map.
        let dz_e = &de * &cache.embed.mapv(|e| 1.0 - e * e);
        for r in 0..self.cfg.embed_dim {
            let d = dz_e[r];
            if d == 0.0 {
                continue;
            }
            for c in 0..self.cfg.input_width {
                grads.enc_w[(r, c)] += d * cache.input[c];
            }
            grads.enc_b[r] += d;
        }
        loss
    }

    /// One SGD step on a batch; returns the pre-step batch loss.
    pub fn train_step(&mut self, batch: &[TrainStep<'_>], lr: f64) -> Result<f64> {
        let (loss, grads) = self.batch_loss_and_grads(batch)?;
        self.apply_gradients(&grads, lr);
        Ok(loss)
    }

    fn apply_gradients(&mut self, g: &Gradients, lr: f64) {
        self.enc_w.scaled_add(-lr, &g.enc_w);
        self.enc_b.scaled_add(-lr, &g.enc_b);
        for i in 0..4 {
            self.lstm.w[i].scaled_add(-lr, &g.lstm_w[i]);
            self.lstm.u[i].scaled_add(-lr, &g.lstm_u[i]);
            self.lstm.b[i].scaled_add(-lr, &g.lstm_b[i]);
        }
        self.f_w.scaled_add(-lr, &g.f_w);
        self.f_b.scaled_add(-lr, &g.f_b);
        self.x_w.scaled_add(-lr, &g.x_w);
        self.x_b.scaled_add(-lr, &g.x_b);
        self.v_w.scaled_add(-lr, &g.v_w);
        self.v_b.scaled_add(-lr, &g.v_b);
    }

    /// Flattened view of all parameters, block by block. Used by checkpoint
    /// comparison and the finite-difference tests.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(|block| out.extend_from_slice(block));
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        let mut cursor = 0;
        self.visit_params_mut(|block| {
            block.copy_from_slice(&params[cursor..cursor + block.len()]);
            cursor += block.len();
        });
        assert_eq!(cursor, params.len(), "parameter length mismatch");
    }

    /// Named parameter blocks, for block-wise diagnostics.
    pub fn param_block_spans(&self) -> Vec<(&'static str, usize, usize)> {
        let mut spans = Vec::new();
        let mut cursor = 0;
        let names = [
            "enc_w", "enc_b", "lstm_w_i", "lstm_w_f", "lstm_w_g", "lstm_w_o", "lstm_u_i",
            "lstm_u_f", "lstm_u_g", "lstm_u_o", "lstm_b_i", "lstm_b_f", "lstm_b_g", "lstm_b_o",
            "f_w", "f_b", "x_w", "x_b", "v_w", "v_b",
        ];
        let mut idx = 0;
        self.visit_params(|block| {
            spans.push((names[idx], cursor, cursor + block.len()));
            cursor += block.len();
            idx += 1;
        });
        spans
    }

    fn visit_params(&self, mut f: impl FnMut(&[f64])) {
        f(self.enc_w.as_slice().unwrap());
        f(self.enc_b.as_slice().unwrap());
        for i in 0..4 {
            f(self.lstm.w[i].as_slice().unwrap());
        }
        for i in 0..4 {
            f(self.lstm.u[i].as_slice().unwrap());
        }
        for i in 0..4 {
            f(self.lstm.b[i].as_slice().unwrap());
        }
        f(self.f_w.as_slice().unwrap());
        f(self.f_b.as_slice().unwrap());
        f(self.x_w.as_slice().unwrap());
        f(self.x_b.as_slice().unwrap());
        f(self.v_w.as_slice().unwrap());
        f(self.v_b.as_slice().unwrap());
    }

    fn visit_params_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        f(self.enc_w.as_slice_mut().unwrap());
        f(self.enc_b.as_slice_mut().unwrap());
        for i in 0..4 {
            f(self.lstm.w[i].as_slice_mut().unwrap());
        }
        for i in 0..4 {
            f(self.lstm.u[i].as_slice_mut().unwrap());
        }
        for i in 0..4 {
            f(self.lstm.b[i].as_slice_mut().unwrap());
        }
        f(self.f_w.as_slice_mut().unwrap());
        f(self.f_b.as_slice_mut().unwrap());
        f(self.x_w.as_slice_mut().unwrap());
        f(self.x_b.as_slice_mut().unwrap());
        f(self.v_w.as_slice_mut().unwrap());
        f(self.v_b.as_slice_mut().unwrap());
    }

    pub fn save(&self, path: &Path, domain_name: &str) -> Result<()> {
        #[derive(Serialize)]
        struct Payload<'a> {
            domain: &'a str,
            net: &'a AgentNet,
        }
        persist::save(path, MAGIC, VERSION, &Payload { domain: domain_name, net: self })
    }

    pub fn load(path: &Path, expected_domain: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Payload {
            domain: String,
            net: AgentNet,
        }
        let p: Payload = persist::load(path, MAGIC, VERSION)?;
        if p.domain != expected_domain {
            return Err(Error::Config(format!(
                "checkpoint was trained for `{}`, not `{expected_domain}`",
                p.domain
            )));
        }
        Ok(p.net)
    }
}

impl Gradients {
    fn scale(&mut self, s: f64) {
        self.enc_w *= s;
        self.enc_b *= s;
        for i in 0..4 {
            self.lstm_w[i] *= s;
            self.lstm_u[i] *= s;
            self.lstm_b[i] *= s;
        }
        self.f_w *= s;
        self.f_b *= s;
        self.x_w *= s;
        self.x_b *= s;
        self.v_w *= s;
        self.v_b *= s;
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.enc_w.as_slice().unwrap());
        out.extend_from_slice(self.enc_b.as_slice().unwrap());
        for i in 0..4 {
            out.extend_from_slice(self.lstm_w[i].as_slice().unwrap());
        }
        for i in 0..4 {
            out.extend_from_slice(self.lstm_u[i].as_slice().unwrap());
        }
        for i in 0..4 {
            out.extend_from_slice(self.lstm_b[i].as_slice().unwrap());
        }
        out.extend_from_slice(self.f_w.as_slice().unwrap());
        out.extend_from_slice(self.f_b.as_slice().unwrap());
        out.extend_from_slice(self.x_w.as_slice().unwrap());
        out.extend_from_slice(self.x_b.as_slice().unwrap());
        out.extend_from_slice(self.v_w.as_slice().unwrap());
        out.extend_from_slice(self.v_b.as_slice().unwrap());
        out
    }
}

/// Greedy action choice: argmax over functions, then argmax over that
/// function's arguments, restricted to the mask. Ties break toward the
/// lowest index.
pub fn select_action(
    lib: &ActionLibrary,
    pi_f: &[f64],
    pi_x: &[f64],
    mask: &ActionMaskView,
) -> Action {
    let mut best_f = None;
    let mut best_p = f64::NEG_INFINITY;
    for f in 0..lib.function_count() {
        if mask.functions[f] && pi_f[f] > best_p {
            best_p = pi_f[f];
            best_f = Some(f);
        }
    }
    let f = best_f.expect("STOP is always selectable");
    if lib.function(f).is_stop() {
        return Action { func: f, arg: None };
    }
    let off = lib.block_offset(f);
    let len = lib.block_len(f);
    let mut best_a = None;
    let mut best_p = f64::NEG_INFINITY;
    for k in 0..len {
        if mask.args[off + k] && pi_x[off + k] > best_p {
            best_p = pi_x[off + k];
            best_a = Some(k);
        }
    }
    Action { func: f, arg: Some(best_a.expect("masked function has a valid argument")) }
}
