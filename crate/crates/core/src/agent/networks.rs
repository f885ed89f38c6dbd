//! Goal-conditioned actor and critic.
//!
//! Both extract features separately from the state history (1-D convolution),
//! the goal, and the measurement (actor) or action (critic), with the goal
//! vector concatenated onto the input of every layer. The actor squashes its
//! output through `tanh`; the critic ends in a linear unit that also sees the
//! action features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Conv1d, ConvGrads, Dense, DenseGrads, Parameterized, Tensor};

pub const GOAL_DIM: usize = 3;
pub const MEAS_DIM: usize = 3;
pub const STATE_FEATURES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub history_len: usize,
    pub conv_filters: usize,
    pub conv_width: usize,
    /// Widths of the three dense layers in every branch.
    pub hidden: [usize; 3],
    /// Width of the merge layer.
    pub merge_width: usize,
    /// Init range of the final layer.
    pub final_init: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            history_len: 16,
            conv_filters: 32,
            conv_width: 3,
            hidden: [64, 64, 32],
            merge_width: 64,
            final_init: 3e-3,
        }
    }
}

impl NetConfig {
    pub fn conv_features(&self) -> usize {
        (self.history_len + 1 - self.conv_width) * self.conv_filters
    }
}

const ACT: Activation = Activation::Softsign;

/// Builds `[B, L, C + 3]` conv input: the goal is appended to every time step.
fn conv_input(state: &Tensor, goal: &Tensor) -> Result<Tensor> {
    let (b, l, c) = match state.shape() {
        [b, l, c] => (*b, *l, *c),
        s => return Err(Error::ShapeMismatch(format!("state history must be [B, L, C], got {s:?}"))),
    };
    if goal.rows() != b || goal.row_len() != GOAL_DIM {
        return Err(Error::ShapeMismatch(format!(
            "goal {:?} for a batch of {b}",
            goal.shape()
        )));
    }
    let mut data = Vec::with_capacity(b * l * (c + GOAL_DIM));
    for s in 0..b {
        let g = goal.row(s);
        for t in 0..l {
            data.extend_from_slice(&state.data()[(s * l + t) * c..(s * l + t + 1) * c]);
            data.extend_from_slice(g);
        }
    }
    Tensor::from_vec(&[b, l, c + GOAL_DIM], data)
}

/// Dense layers with the goal concatenated onto each layer's input.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalStack {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone)]
pub struct StackCache {
    inputs: Vec<Tensor>,
    outputs: Vec<Tensor>,
}

impl GoalStack {
    fn new<R: Rng + ?Sized>(input: usize, widths: &[usize], rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = input;
        for w in widths {
            layers.push(Dense::new(prev + GOAL_DIM, *w, rng));
            prev = *w;
        }
        GoalStack { layers }
    }

    fn input_dim(&self) -> usize {
        self.layers[0].input_dim() - GOAL_DIM
    }

    fn forward(&self, x: &Tensor, goal: &Tensor) -> Result<(Tensor, StackCache)> {
        let mut cache = StackCache {
            inputs: Vec::with_capacity(self.layers.len()),
            outputs: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.clone();
        for layer in &self.layers {
            let inp = Tensor::concat_rows(&[&h, goal])?;
            let mut out = layer.forward(&inp)?;
            ACT.forward_inplace(&mut out);
            cache.inputs.push(inp);
            cache.outputs.push(out.clone());
            h = out;
        }
        Ok((h, cache))
    }

    /// Adds parameter gradients into `grads` (two per layer) and returns the
    /// gradient w.r.t. the stack input (excluding the goal) if requested.
    fn backward(
        &self,
        cache: &StackCache,
        dout: Tensor,
        grads: Option<&mut [DenseGrads]>,
        want_dx: bool,
    ) -> Result<Option<Tensor>> {
        let mut dy = dout;
        let n = self.layers.len();
        let mut scratch: Vec<DenseGrads>;
        let grads = match grads {
            Some(g) => g,
            None => {
                scratch = self.layers.iter().map(|l| l.zero_grads()).collect();
                &mut scratch[..]
            }
        };
        for i in (0..n).rev() {
            ACT.backward_inplace(&cache.outputs[i], &mut dy);
            let need = i > 0 || want_dx;
            let dinp = self.layers[i].backward(&cache.inputs[i], &dy, &mut grads[i], need)?;
            match dinp {
                Some(d) => {
                    let h_dim = self.layers[i].input_dim() - GOAL_DIM;
                    let mut parts = d.split_cols(&[h_dim, GOAL_DIM])?;
                    parts.truncate(1);
                    dy = parts.pop().unwrap();
                }
                None => return Ok(None),
            }
        }
        Ok(Some(dy))
    }

    fn zero_grads(&self) -> Vec<DenseGrads> {
        self.layers.iter().map(|l| l.zero_grads()).collect()
    }

    fn push_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.weight"), &l.weight));
            out.push((format!("{prefix}.{i}.bias"), &l.bias));
        }
    }

    fn push_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        for l in self.layers.iter_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
    }
}

fn push_dense_grads(g: Vec<DenseGrads>, out: &mut Vec<Tensor>) {
    for d in g {
        out.push(d.weight);
        out.push(d.bias);
    }
}

fn check_batch(t: &Tensor, b: usize, width: usize, what: &str) -> Result<()> {
    if t.rows() != b || t.row_len() != width {
        return Err(Error::ShapeMismatch(format!(
            "{what} {:?} for batch {b} x {width}",
            t.shape()
        )));
    }
    Ok(())
}

/// Policy network: `(state history, measurement, goal) -> u ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorNet {
    pub conv: Conv1d,
    pub meas: GoalStack,
    pub goal: GoalStack,
    pub merge: Dense,
    pub out: Dense,
}

pub struct ActorCache {
    conv_in: Tensor,
    conv_out: Tensor,
    meas: StackCache,
    goal: StackCache,
    merge_in: Tensor,
    merge_out: Tensor,
    out_in: Tensor,
    /// tanh of the pre-activation output.
    squashed: Tensor,
}

impl ActorNet {
    pub fn new<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Self {
        let conv = Conv1d::new(STATE_FEATURES + GOAL_DIM, cfg.conv_filters, cfg.conv_width, rng);
        let meas = GoalStack::new(MEAS_DIM, &cfg.hidden, rng);
        let goal = GoalStack::new(0, &cfg.hidden, rng);
        let merge_in = cfg.conv_features() + 2 * cfg.hidden[2] + GOAL_DIM;
        let merge = Dense::new(merge_in, cfg.merge_width, rng);
        let out = Dense::with_bound(cfg.merge_width + GOAL_DIM, 1, cfg.final_init, rng);
        ActorNet {
            conv,
            meas,
            goal,
            merge,
            out,
        }
    }

    /// Returns `u = (tanh(z) + 1) / 2` as `[B, 1]`.
    pub fn forward(&self, state: &Tensor, meas: &Tensor, goal: &Tensor) -> Result<(Tensor, ActorCache)> {
        let b = state.rows();
        check_batch(meas, b, self.meas.input_dim(), "measurement")?;
        let conv_in = conv_input(state, goal)?;
        let mut conv_out = self.conv.forward(&conv_in)?;
        ACT.forward_inplace(&mut conv_out);
        let flat = conv_out.clone().reshape(&[b, conv_out.row_len()])?;
        let (mfeat, meas_cache) = self.meas.forward(meas, goal)?;
        let (gfeat, goal_cache) = self.goal.forward(&Tensor::zeros(&[b, 0]), goal)?;
        let merge_in = Tensor::concat_rows(&[&flat, &mfeat, &gfeat, goal])?;
        let mut merge_out = self.merge.forward(&merge_in)?;
        ACT.forward_inplace(&mut merge_out);
        let out_in = Tensor::concat_rows(&[&merge_out, goal])?;
        let mut squashed = self.out.forward(&out_in)?;
        Activation::Tanh.forward_inplace(&mut squashed);
        let mut u = squashed.clone();
        u.data_mut().iter_mut().for_each(|x| *x = 0.5 * (*x + 1.0));
        Ok((
            u,
            ActorCache {
                conv_in,
                conv_out,
                meas: meas_cache,
                goal: goal_cache,
                merge_in,
                merge_out,
                out_in,
                squashed,
            },
        ))
    }

    /// Parameter gradients given `du` (gradient w.r.t. the `[B, 1]` output).
    pub fn backward(&self, cache: &ActorCache, du: &Tensor) -> Result<Vec<Tensor>> {
        let b = cache.squashed.rows();
        check_batch(du, b, 1, "actor output gradient")?;
        let mut dz = du.clone();
        for (d, s) in dz.data_mut().iter_mut().zip(cache.squashed.data()) {
            *d *= 0.5 * (1.0 - s * s);
        }
        let mut g_out = self.out.zero_grads();
        let d_out_in = self.out.backward(&cache.out_in, &dz, &mut g_out, true)?.unwrap();
        let mut d_merge = d_out_in.split_cols(&[self.merge.output_dim(), GOAL_DIM])?.swap_remove(0);
        ACT.backward_inplace(&cache.merge_out, &mut d_merge);
        let mut g_merge = self.merge.zero_grads();
        let d_merge_in = self.merge.backward(&cache.merge_in, &d_merge, &mut g_merge, true)?.unwrap();
        let h3m = self.meas.layers.last().unwrap().output_dim();
        let h3g = self.goal.layers.last().unwrap().output_dim();
        let conv_feat = cache.conv_out.row_len();
        let mut parts = d_merge_in.split_cols(&[conv_feat, h3m, h3g, GOAL_DIM])?;
        let d_goal_feat = parts.swap_remove(2);
        let d_meas_feat = parts.swap_remove(1);
        let d_flat = parts.swap_remove(0);

        let mut g_meas = self.meas.zero_grads();
        self.meas.backward(&cache.meas, d_meas_feat, Some(&mut g_meas), false)?;
        let mut g_goal = self.goal.zero_grads();
        self.goal.backward(&cache.goal, d_goal_feat, Some(&mut g_goal), false)?;

        let mut d_conv = d_flat.reshape(cache.conv_out.shape())?;
        ACT.backward_inplace(&cache.conv_out, &mut d_conv);
        let mut g_conv = self.conv.zero_grads();
        self.conv.backward(&cache.conv_in, &d_conv, &mut g_conv, false)?;

        let mut grads = Vec::new();
        let ConvGrads { filters, bias } = g_conv;
        grads.push(filters);
        grads.push(bias);
        push_dense_grads(g_meas, &mut grads);
        push_dense_grads(g_goal, &mut grads);
        push_dense_grads(vec![g_merge, g_out], &mut grads);
        Ok(grads)
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![
            ("conv.filters".to_string(), &self.conv.filters),
            ("conv.bias".to_string(), &self.conv.bias),
        ];
        self.meas.push_params("meas", &mut v);
        self.goal.push_params("goal", &mut v);
        v.push(("merge.weight".into(), &self.merge.weight));
        v.push(("merge.bias".into(), &self.merge.bias));
        v.push(("out.weight".into(), &self.out.weight));
        v.push(("out.bias".into(), &self.out.bias));
        v
    }
}

impl Parameterized for ActorNet {
    fn params(&self) -> Vec<&Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = vec![&mut self.conv.filters, &mut self.conv.bias];
        self.meas.push_params_mut(&mut v);
        self.goal.push_params_mut(&mut v);
        v.push(&mut self.merge.weight);
        v.push(&mut self.merge.bias);
        v.push(&mut self.out.weight);
        v.push(&mut self.out.bias);
        v
    }

    fn param_names(&self) -> Vec<String> {
        self.named_params().into_iter().map(|(n, _)| n).collect()
    }
}

/// Value network: `(state history, goal, action) -> Q`. The action enters as
/// `2u - 1 ∈ [-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticNet {
    pub conv: Conv1d,
    pub goal: GoalStack,
    pub action: GoalStack,
    pub merge: Dense,
    pub out: Dense,
}

pub struct CriticCache {
    conv_in: Tensor,
    conv_out: Tensor,
    goal: StackCache,
    action: StackCache,
    merge_in: Tensor,
    merge_out: Tensor,
    out_in: Tensor,
}

impl CriticNet {
    pub fn new<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Self {
        let conv = Conv1d::new(STATE_FEATURES + GOAL_DIM, cfg.conv_filters, cfg.conv_width, rng);
        let goal = GoalStack::new(0, &cfg.hidden, rng);
        let action = GoalStack::new(1, &cfg.hidden, rng);
        let merge_in = cfg.conv_features() + cfg.hidden[2] + GOAL_DIM;
        let merge = Dense::new(merge_in, cfg.merge_width, rng);
        let out = Dense::with_bound(cfg.merge_width + cfg.hidden[2] + GOAL_DIM, 1, cfg.final_init, rng);
        CriticNet {
            conv,
            goal,
            action,
            merge,
            out,
        }
    }

    pub fn forward(&self, state: &Tensor, goal: &Tensor, action: &Tensor) -> Result<(Tensor, CriticCache)> {
        let b = state.rows();
        check_batch(action, b, 1, "action")?;
        let conv_in = conv_input(state, goal)?;
        let mut conv_out = self.conv.forward(&conv_in)?;
        ACT.forward_inplace(&mut conv_out);
        let flat = conv_out.clone().reshape(&[b, conv_out.row_len()])?;
        let (gfeat, goal_cache) = self.goal.forward(&Tensor::zeros(&[b, 0]), goal)?;
        let (afeat, action_cache) = self.action.forward(action, goal)?;
        let merge_in = Tensor::concat_rows(&[&flat, &gfeat, goal])?;
        let mut merge_out = self.merge.forward(&merge_in)?;
        ACT.forward_inplace(&mut merge_out);
        let out_in = Tensor::concat_rows(&[&merge_out, &afeat, goal])?;
        let q = self.out.forward(&out_in)?;
        Ok((
            q,
            CriticCache {
                conv_in,
                conv_out,
                goal: goal_cache,
                action: action_cache,
                merge_in,
                merge_out,
                out_in,
            },
        ))
    }

    /// Returns parameter gradients (if requested) and `dQ/d(action input)`.
    pub fn backward(&self, cache: &CriticCache, dq: &Tensor, want_params: bool) -> Result<(Option<Vec<Tensor>>, Tensor)> {
        let b = cache.out_in.rows();
        check_batch(dq, b, 1, "critic output gradient")?;
        let mut g_out = self.out.zero_grads();
        let d_out_in = self.out.backward(&cache.out_in, dq, &mut g_out, true)?.unwrap();
        let h3a = self.action.layers.last().unwrap().output_dim();
        let mut parts = d_out_in.split_cols(&[self.merge.output_dim(), h3a, GOAL_DIM])?;
        let d_afeat = parts.swap_remove(1);
        let mut d_merge = parts.swap_remove(0);

        let mut g_action = self.action.zero_grads();
        let d_action = self
            .action
            .backward(&cache.action, d_afeat, Some(&mut g_action), true)?
            .unwrap();
        if !want_params {
            return Ok((None, d_action));
        }

        ACT.backward_inplace(&cache.merge_out, &mut d_merge);
        let mut g_merge = self.merge.zero_grads();
        let d_merge_in = self.merge.backward(&cache.merge_in, &d_merge, &mut g_merge, true)?.unwrap();
        let h3g = self.goal.layers.last().unwrap().output_dim();
        let conv_feat = cache.conv_out.row_len();
        let mut parts = d_merge_in.split_cols(&[conv_feat, h3g, GOAL_DIM])?;
        let d_gfeat = parts.swap_remove(1);
        let d_flat = parts.swap_remove(0);

        let mut g_goal = self.goal.zero_grads();
        self.goal.backward(&cache.goal, d_gfeat, Some(&mut g_goal), false)?;

        let mut d_conv = d_flat.reshape(cache.conv_out.shape())?;
        ACT.backward_inplace(&cache.conv_out, &mut d_conv);
        let mut g_conv = self.conv.zero_grads();
        self.conv.backward(&cache.conv_in, &d_conv, &mut g_conv, false)?;

        let mut grads = Vec::new();
        let ConvGrads { filters, bias } = g_conv;
        grads.push(filters);
        grads.push(bias);
        push_dense_grads(g_goal, &mut grads);
        push_dense_grads(g_action, &mut grads);
        push_dense_grads(vec![g_merge, g_out], &mut grads);
        Ok((Some(grads), d_action))
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![
            ("conv.filters".to_string(), &self.conv.filters),
            ("conv.bias".to_string(), &self.conv.bias),
        ];
        self.goal.push_params("goal", &mut v);
        self.action.push_params("action", &mut v);
        v.push(("merge.weight".into(), &self.merge.weight));
        v.push(("merge.bias".into(), &self.merge.bias));
        v.push(("out.weight".into(), &self.out.weight));
        v.push(("out.bias".into(), &self.out.bias));
        v
    }
}

impl Parameterized for CriticNet {
    fn params(&self) -> Vec<&Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = vec![&mut self.conv.filters, &mut self.conv.bias];
        self.goal.push_params_mut(&mut v);
        self.action.push_params_mut(&mut v);
        v.push(&mut self.merge.weight);
        v.push(&mut self.merge.bias);
        v.push(&mut self.out.weight);
        v.push(&mut self.out.bias);
        v
    }

    fn param_names(&self) -> Vec<String> {
        self.named_params().into_iter().map(|(n, _)| n).collect()
    }
}
