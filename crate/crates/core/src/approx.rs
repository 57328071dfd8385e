//! Differentiable function approximators over a flat parameter vector.
//!
//! Two architectures (pure linear and a small MLP with optional LayerNorm
//! before each LeakyReLU) and four heads: scalar value, action values,
//! diagonal-Gaussian policy, and softmax policy. Everything exposes forward
//! values and analytic gradients with respect to the flat vector, because
//! the update rules downstream consume flat gradients (inner products,
//! traces, entry-wise preconditioning).

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Negative slope of LeakyReLU.
pub const LEAKY_SLOPE: f64 = 0.01;
/// Epsilon inside the LayerNorm denominator.
pub const LAYERNORM_EPS: f64 = 1e-5;
/// SoftPlus switches to the identity above this input.
pub const SOFTPLUS_SWITCH: f64 = 20.0;

/// Flat vector of real-valued parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    data: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        ParamVector { data: vec![0.0; dim] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        ParamVector { data }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`, entrywise.
    pub fn add_scaled(&mut self, scale: f64, other: &ParamVector) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// One streaming observation: a flat feature vector. When an environment is
/// time-limited it may append a trailing time-to-timeout feature in
/// [-1/2, 1/2].
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Vec<f64>,
}

impl Observation {
    pub fn new(features: Vec<f64>) -> Self {
        Observation { features }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// An agent action: a discrete index or a real vector (pre-clamp for
/// continuous control; environments clamp internally).
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Head {
    ScalarValue,
    QValues { n_actions: usize },
    GaussianPolicy { action_dim: usize },
    SoftmaxPolicy { n_actions: usize },
}

impl Head {
    /// Width of the raw head output (Gaussian has mean and pre-std sub-heads
    /// of equal width).
    pub fn out_dim(&self) -> usize {
        match self {
            Head::ScalarValue => 1,
            Head::QValues { n_actions } => *n_actions,
            Head::GaussianPolicy { action_dim } => 2 * action_dim,
            Head::SoftmaxPolicy { n_actions } => *n_actions,
        }
    }

    pub fn is_policy(&self) -> bool {
        matches!(self, Head::GaussianPolicy { .. } | Head::SoftmaxPolicy { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub kind: ArchKind,
    pub input_dim: usize,
    /// Hidden layer widths; must be empty for `ArchKind::Linear`.
    pub hidden: Vec<usize>,
    /// LayerNorm applied before each activation.
    pub layernorm: bool,
    pub head: Head,
    /// Fraction of each weight-matrix row zeroed by [`sparse_init`].
    pub sparse_init_ratio: f64,
}

impl Architecture {
    pub fn linear(input_dim: usize, head: Head) -> Self {
        Architecture {
            kind: ArchKind::Linear,
            input_dim,
            hidden: Vec::new(),
            layernorm: false,
            head,
            sparse_init_ratio: 0.0,
        }
    }

    pub fn mlp(input_dim: usize, hidden: Vec<usize>, layernorm: bool, head: Head) -> Self {
        Architecture {
            kind: ArchKind::Mlp,
            input_dim,
            hidden,
            layernorm,
            head,
            sparse_init_ratio: 0.0,
        }
    }

    pub fn with_sparse_init(mut self, ratio: f64) -> Self {
        self.sparse_init_ratio = ratio;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("architecture input_dim must be positive"));
        }
        if self.head.out_dim() == 0 {
            return Err(Error::config("architecture head width must be positive"));
        }
        match self.kind {
            ArchKind::Linear => {
                if !self.hidden.is_empty() {
                    return Err(Error::config("linear architecture cannot have hidden layers"));
                }
            }
            ArchKind::Mlp => {
                if self.hidden.iter().any(|&w| w == 0) {
                    return Err(Error::config("hidden widths must be positive"));
                }
            }
        }
        if !(0.0..1.0).contains(&self.sparse_init_ratio) {
            return Err(Error::config("sparse_init_ratio must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        layout(self).total
    }

    fn check_obs(&self, obs: &Observation) -> Result<()> {
        if obs.dim() != self.input_dim {
            return Err(Error::config(format!(
                "observation has {} features but architecture expects {}",
                obs.dim(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        let want = self.param_count();
        if params.dim() != want {
            return Err(Error::config(format!(
                "parameter vector has dim {} but architecture declares {}",
                params.dim(),
                want
            )));
        }
        Ok(())
    }
}

// Flat layout: per hidden layer W (row-major out x in), b, then LayerNorm
// gain and bias when enabled; head matrices last. Linear nets are a single
// bias-free matrix.
struct LayerOffsets {
    w: usize,
    b: usize,
    ln_gain: usize,
    ln_beta: usize,
    fan_in: usize,
    fan_out: usize,
}

enum HeadOffsets {
    Single { w: usize, b: Option<usize>, fan_in: usize, fan_out: usize },
    Gaussian { w_mean: usize, b_mean: Option<usize>, w_std: usize, b_std: Option<usize>, fan_in: usize, dim: usize },
}

struct Layout {
    layers: Vec<LayerOffsets>,
    head: HeadOffsets,
    total: usize,
}

fn layout(arch: &Architecture) -> Layout {
    let mut off = 0usize;
    let mut layers = Vec::with_capacity(arch.hidden.len());
    let mut fan_in = arch.input_dim;
    for &width in &arch.hidden {
        let w = off;
        off += width * fan_in;
        let b = off;
        off += width;
        let (ln_gain, ln_beta) = if arch.layernorm {
            let g = off;
            off += width;
            let bb = off;
            off += width;
            (g, bb)
        } else {
            (usize::MAX, usize::MAX)
        };
        layers.push(LayerOffsets { w, b, ln_gain, ln_beta, fan_in, fan_out: width });
        fan_in = width;
    }
    let with_bias = arch.kind == ArchKind::Mlp;
    let head = match &arch.head {
        Head::GaussianPolicy { action_dim } => {
            let d = *action_dim;
            let w_mean = off;
            off += d * fan_in;
            let b_mean = if with_bias {
                let b = off;
                off += d;
                Some(b)
            } else {
                None
            };
            let w_std = off;
            off += d * fan_in;
            let b_std = if with_bias {
                let b = off;
                off += d;
                Some(b)
            } else {
                None
            };
            HeadOffsets::Gaussian { w_mean, b_mean, w_std, b_std, fan_in, dim: d }
        }
        other => {
            let out = other.out_dim();
            let w = off;
            off += out * fan_in;
            let b = if with_bias {
                let b = off;
                off += out;
                Some(b)
            } else {
                None
            };
            HeadOffsets::Single { w, b, fan_in, fan_out: out }
        }
    };
    Layout { layers, head, total: off }
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_deriv(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// SoftPlus with a linear switch: log(1 + e^x) for x <= 20, x above.
pub fn softplus(x: f64) -> f64 {
    if x > SOFTPLUS_SWITCH {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`]: the logistic sigmoid below the switch, 1 above.
pub fn softplus_deriv(x: f64) -> f64 {
    if x > SOFTPLUS_SWITCH {
        1.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

struct LayerCache {
    /// Input to this layer.
    input: Vec<f64>,
    /// Normalized pre-activation (u - m)/s; empty without LayerNorm.
    normed: Vec<f64>,
    inv_std: f64,
    /// Input to LeakyReLU (LayerNorm output, or the raw pre-activation).
    act_in: Vec<f64>,
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    /// Input to the head (last hidden activation, or the observation).
    head_input: Vec<f64>,
    /// Raw head outputs: scalar, action values, logits, or mean ++ pre-std.
    outputs: Vec<f64>,
}

fn matvec(params: &ParamVector, w: usize, fan_in: usize, fan_out: usize, x: &[f64]) -> Vec<f64> {
    let p = params.as_slice();
    let mut out = vec![0.0; fan_out];
    for (j, o) in out.iter_mut().enumerate() {
        let row = &p[w + j * fan_in..w + (j + 1) * fan_in];
        let mut acc = 0.0;
        for (wi, xi) in row.iter().zip(x.iter()) {
            acc += wi * xi;
        }
        *o = acc;
    }
    out
}

fn forward_raw(params: &ParamVector, arch: &Architecture, obs: &Observation) -> Result<ForwardCache> {
    arch.validate()?;
    arch.check_obs(obs)?;
    arch.check_params(params)?;
    let lay = layout(arch);
    let p = params.as_slice();

    let mut x = obs.features.clone();
    let mut layers = Vec::with_capacity(lay.layers.len());
    for l in &lay.layers {
        let mut u = matvec(params, l.w, l.fan_in, l.fan_out, &x);
        for (j, uj) in u.iter_mut().enumerate() {
            *uj += p[l.b + j];
        }
        let n = l.fan_out as f64;
        let (normed, inv_std, act_in) = if arch.layernorm {
            let mean = u.iter().sum::<f64>() / n;
            let var = u.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv_std = 1.0 / (var + LAYERNORM_EPS).sqrt();
            let normed: Vec<f64> = u.iter().map(|v| (v - mean) * inv_std).collect();
            let act_in: Vec<f64> =
                normed.iter().enumerate().map(|(j, nj)| p[l.ln_gain + j] * nj + p[l.ln_beta + j]).collect();
            (normed, inv_std, act_in)
        } else {
            (Vec::new(), 0.0, u.clone())
        };
        let act_out: Vec<f64> = act_in.iter().map(|&v| leaky(v)).collect();
        layers.push(LayerCache { input: x, normed, inv_std, act_in });
        x = act_out;
    }

    let outputs = match &lay.head {
        HeadOffsets::Single { w, b, fan_in, fan_out } => {
            let mut out = matvec(params, *w, *fan_in, *fan_out, &x);
            if let Some(b) = b {
                for (j, oj) in out.iter_mut().enumerate() {
                    *oj += p[b + j];
                }
            }
            out
        }
        HeadOffsets::Gaussian { w_mean, b_mean, w_std, b_std, fan_in, dim } => {
            let mut mean = matvec(params, *w_mean, *fan_in, *dim, &x);
            if let Some(b) = b_mean {
                for (j, m) in mean.iter_mut().enumerate() {
                    *m += p[b + j];
                }
            }
            let mut pre = matvec(params, *w_std, *fan_in, *dim, &x);
            if let Some(b) = b_std {
                for (j, s) in pre.iter_mut().enumerate() {
                    *s += p[b + j];
                }
            }
            mean.extend_from_slice(&pre);
            mean
        }
    };

    Ok(ForwardCache { layers, head_input: x, outputs })
}

/// Reverse pass: gradient of `sum_k d_outputs[k] * outputs[k]` with respect
/// to every parameter.
fn backprop(
    params: &ParamVector,
    arch: &Architecture,
    cache: &ForwardCache,
    d_outputs: &[f64],
) -> ParamVector {
    let lay = layout(arch);
    let p = params.as_slice();
    let mut grad = vec![0.0; lay.total];

    // Head.
    let mut d_x: Vec<f64> = match &lay.head {
        HeadOffsets::Single { w, b, fan_in, fan_out } => {
            let mut dx = vec![0.0; *fan_in];
            for j in 0..*fan_out {
                let dj = d_outputs[j];
                if dj == 0.0 {
                    continue;
                }
                let row = w + j * fan_in;
                for i in 0..*fan_in {
                    grad[row + i] += dj * cache.head_input[i];
                    dx[i] += dj * p[row + i];
                }
                if let Some(b) = b {
                    grad[b + j] += dj;
                }
            }
            dx
        }
        HeadOffsets::Gaussian { w_mean, b_mean, w_std, b_std, fan_in, dim } => {
            let mut dx = vec![0.0; *fan_in];
            for j in 0..*dim {
                for (dj, w, b) in [
                    (d_outputs[j], *w_mean, *b_mean),
                    (d_outputs[dim + j], *w_std, *b_std),
                ] {
                    if dj == 0.0 {
                        continue;
                    }
                    let row = w + j * fan_in;
                    for i in 0..*fan_in {
                        grad[row + i] += dj * cache.head_input[i];
                        dx[i] += dj * p[row + i];
                    }
                    if let Some(b) = b {
                        grad[b + j] += dj;
                    }
                }
            }
            dx
        }
    };

    // Hidden layers in reverse.
    for (l, lc) in lay.layers.iter().zip(cache.layers.iter()).rev() {
        let n = l.fan_out;
        // Through LeakyReLU.
        let mut d_act_in: Vec<f64> = (0..n).map(|j| d_x[j] * leaky_deriv(lc.act_in[j])).collect();
        // Through LayerNorm.
        let d_u: Vec<f64> = if arch.layernorm {
            let mut d_normed = vec![0.0; n];
            for j in 0..n {
                grad[l.ln_gain + j] += d_act_in[j] * lc.normed[j];
                grad[l.ln_beta + j] += d_act_in[j];
                d_normed[j] = d_act_in[j] * p[l.ln_gain + j];
            }
            let nf = n as f64;
            let mean_dn = d_normed.iter().sum::<f64>() / nf;
            let mean_dn_normed =
                d_normed.iter().zip(lc.normed.iter()).map(|(a, b)| a * b).sum::<f64>() / nf;
            (0..n)
                .map(|j| lc.inv_std * (d_normed[j] - mean_dn - lc.normed[j] * mean_dn_normed))
                .collect()
        } else {
            std::mem::take(&mut d_act_in)
        };
        // Through the affine map.
        let mut d_prev = vec![0.0; l.fan_in];
        for j in 0..n {
            let dj = d_u[j];
            grad[l.b + j] += dj;
            if dj == 0.0 {
                continue;
            }
            let row = l.w + j * l.fan_in;
            for i in 0..l.fan_in {
                grad[row + i] += dj * lc.input[i];
                d_prev[i] += dj * p[row + i];
            }
        }
        d_x = d_prev;
    }

    ParamVector::from_vec(grad)
}

/// Scalar prediction V(s) for a `ScalarValue` head.
pub fn forward_value(params: &ParamVector, arch: &Architecture, obs: &Observation) -> Result<f64> {
    match arch.head {
        Head::ScalarValue => Ok(forward_raw(params, arch, obs)?.outputs[0]),
        _ => Err(Error::config("forward_value requires a scalar_value head")),
    }
}

/// Analytic gradient of V(s) with respect to every parameter.
pub fn grad_value(params: &ParamVector, arch: &Architecture, obs: &Observation) -> Result<ParamVector> {
    match arch.head {
        Head::ScalarValue => {
            let cache = forward_raw(params, arch, obs)?;
            Ok(backprop(params, arch, &cache, &[1.0]))
        }
        _ => Err(Error::config("grad_value requires a scalar_value head")),
    }
}

/// Full action-value array for a `QValues` head.
pub fn forward_q(params: &ParamVector, arch: &Architecture, obs: &Observation) -> Result<Vec<f64>> {
    match arch.head {
        Head::QValues { .. } => Ok(forward_raw(params, arch, obs)?.outputs),
        _ => Err(Error::config("forward_q requires a q_values head")),
    }
}

/// Gradient of Q(s, a) for a single action index.
pub fn grad_q(
    params: &ParamVector,
    arch: &Architecture,
    obs: &Observation,
    action: usize,
) -> Result<(f64, ParamVector)> {
    match arch.head {
        Head::QValues { n_actions } => {
            if action >= n_actions {
                return Err(Error::config(format!(
                    "action index {action} out of range for {n_actions} actions"
                )));
            }
            let cache = forward_raw(params, arch, obs)?;
            let q = cache.outputs[action];
            let mut d = vec![0.0; n_actions];
            d[action] = 1.0;
            Ok((q, backprop(params, arch, &cache, &d)))
        }
        _ => Err(Error::config("grad_q requires a q_values head")),
    }
}

/// A policy's action distribution at one state.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyDistribution {
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    Softmax { logits: Vec<f64> },
}

fn stable_log_probs(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|l| l - lse).collect()
}

impl PolicyDistribution {
    pub fn probs(&self) -> Vec<f64> {
        match self {
            PolicyDistribution::Softmax { logits } => {
                stable_log_probs(logits).iter().map(|lp| lp.exp()).collect()
            }
            PolicyDistribution::Gaussian { .. } => {
                panic!("probs() is only defined for softmax distributions")
            }
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Action {
        match self {
            PolicyDistribution::Softmax { .. } => {
                let probs = self.probs();
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return Action::Discrete(i);
                    }
                }
                Action::Discrete(probs.len() - 1)
            }
            PolicyDistribution::Gaussian { mean, std } => {
                let a = mean
                    .iter()
                    .zip(std.iter())
                    .map(|(m, s)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + s * z
                    })
                    .collect();
                Action::Continuous(a)
            }
        }
    }

    pub fn log_prob(&self, action: &Action) -> Result<f64> {
        match (self, action) {
            (PolicyDistribution::Softmax { logits }, Action::Discrete(a)) => {
                if *a >= logits.len() {
                    return Err(Error::config(format!(
                        "action index {a} out of range for {} logits",
                        logits.len()
                    )));
                }
                Ok(stable_log_probs(logits)[*a])
            }
            (PolicyDistribution::Gaussian { mean, std }, Action::Continuous(a)) => {
                if a.len() != mean.len() {
                    return Err(Error::config("continuous action dimension mismatch"));
                }
                let mut lp = 0.0;
                for i in 0..mean.len() {
                    let z = (a[i] - mean[i]) / std[i];
                    lp += -0.5 * z * z - std[i].ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
                }
                Ok(lp)
            }
            _ => Err(Error::config("action kind does not match policy distribution")),
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            PolicyDistribution::Softmax { logits } => {
                let lps = stable_log_probs(logits);
                -lps.iter().map(|lp| lp.exp() * lp).sum::<f64>()
            }
            PolicyDistribution::Gaussian { std, .. } => {
                let c = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
                std.iter().map(|s| c + s.ln()).sum()
            }
        }
    }

    /// Exact KL(self || other); both must be the same kind on the same space.
    pub fn kl(&self, other: &PolicyDistribution) -> Result<f64> {
        match (self, other) {
            (PolicyDistribution::Softmax { logits: a }, PolicyDistribution::Softmax { logits: b }) => {
                if a.len() != b.len() {
                    return Err(Error::config("softmax distributions differ in size"));
                }
                let lp = stable_log_probs(a);
                let lq = stable_log_probs(b);
                Ok(lp.iter().zip(lq.iter()).map(|(p, q)| p.exp() * (p - q)).sum())
            }
            (
                PolicyDistribution::Gaussian { mean: m1, std: s1 },
                PolicyDistribution::Gaussian { mean: m2, std: s2 },
            ) => {
                if m1.len() != m2.len() {
                    return Err(Error::config("gaussian distributions differ in dimension"));
                }
                let mut kl = 0.0;
                for i in 0..m1.len() {
                    let v1 = s1[i] * s1[i];
                    let v2 = s2[i] * s2[i];
                    kl += (s2[i] / s1[i]).ln() + (v1 + (m1[i] - m2[i]).powi(2)) / (2.0 * v2) - 0.5;
                }
                Ok(kl)
            }
            _ => Err(Error::config("cannot compare distributions of different kinds")),
        }
    }
}

/// Evaluate the policy head. Gaussian std goes through SoftPlus with the
/// linear switch; softmax returns the raw logits.
pub fn policy_forward(
    params: &ParamVector,
    arch: &Architecture,
    obs: &Observation,
) -> Result<PolicyDistribution> {
    match arch.head {
        Head::GaussianPolicy { action_dim } => {
            let out = forward_raw(params, arch, obs)?.outputs;
            let mean = out[..action_dim].to_vec();
            let std = out[action_dim..].iter().map(|&x| softplus(x)).collect();
            Ok(PolicyDistribution::Gaussian { mean, std })
        }
        Head::SoftmaxPolicy { .. } => {
            let out = forward_raw(params, arch, obs)?.outputs;
            Ok(PolicyDistribution::Softmax { logits: out })
        }
        _ => Err(Error::config("policy_forward requires a policy head")),
    }
}

/// log pi(a|s) and its analytic parameter gradient.
pub fn logprob_and_grad(
    params: &ParamVector,
    arch: &Architecture,
    obs: &Observation,
    action: &Action,
) -> Result<(f64, ParamVector)> {
    match (&arch.head, action) {
        (Head::SoftmaxPolicy { n_actions }, Action::Discrete(a)) => {
            if *a >= *n_actions {
                return Err(Error::config(format!(
                    "action index {a} out of range for {n_actions} actions"
                )));
            }
            let cache = forward_raw(params, arch, obs)?;
            let lps = stable_log_probs(&cache.outputs);
            let d: Vec<f64> = (0..*n_actions)
                .map(|j| if j == *a { 1.0 - lps[j].exp() } else { -lps[j].exp() })
                .collect();
            Ok((lps[*a], backprop(params, arch, &cache, &d)))
        }
        (Head::GaussianPolicy { action_dim }, Action::Continuous(a)) => {
            if a.len() != *action_dim {
                return Err(Error::config("continuous action dimension mismatch"));
            }
            let cache = forward_raw(params, arch, obs)?;
            let mut lp = 0.0;
            let mut d = vec![0.0; 2 * action_dim];
            for i in 0..*action_dim {
                let mean = cache.outputs[i];
                let pre = cache.outputs[action_dim + i];
                let std = softplus(pre);
                let z = (a[i] - mean) / std;
                lp += -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
                d[i] = z / std;
                d[action_dim + i] = (z * z - 1.0) / std * softplus_deriv(pre);
            }
            Ok((lp, backprop(params, arch, &cache, &d)))
        }
        (Head::SoftmaxPolicy { .. } | Head::GaussianPolicy { .. }, _) => {
            Err(Error::config("action kind does not match policy head"))
        }
        _ => Err(Error::config("logprob_and_grad requires a policy head")),
    }
}

/// Closed-form policy entropy at `obs` and its analytic parameter gradient.
pub fn entropy_and_grad(
    params: &ParamVector,
    arch: &Architecture,
    obs: &Observation,
) -> Result<(f64, ParamVector)> {
    match arch.head {
        Head::SoftmaxPolicy { n_actions } => {
            let cache = forward_raw(params, arch, obs)?;
            let lps = stable_log_probs(&cache.outputs);
            let h: f64 = -lps.iter().map(|lp| lp.exp() * lp).sum::<f64>();
            // dH/dlogit_j = -p_j (log p_j + H)
            let d: Vec<f64> = (0..n_actions).map(|j| -lps[j].exp() * (lps[j] + h)).collect();
            Ok((h, backprop(params, arch, &cache, &d)))
        }
        Head::GaussianPolicy { action_dim } => {
            let cache = forward_raw(params, arch, obs)?;
            let c = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
            let mut h = 0.0;
            let mut d = vec![0.0; 2 * action_dim];
            for i in 0..action_dim {
                let pre = cache.outputs[action_dim + i];
                let std = softplus(pre);
                h += c + std.ln();
                d[action_dim + i] = softplus_deriv(pre) / std;
            }
            Ok((h, backprop(params, arch, &cache, &d)))
        }
        _ => Err(Error::config("entropy_and_grad requires a policy head")),
    }
}

/// Deterministic sparse initialization: nonzero entries uniform in
/// +-1/sqrt(fan_in), then exactly floor(ratio * fan_in) entries zeroed per
/// weight-matrix row. Biases start at 0; LayerNorm gains at 1.
pub fn sparse_init(arch: &Architecture, seed: u64) -> Result<ParamVector> {
    arch.validate()?;
    let lay = layout(arch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; lay.total];

    let init_matrix = |data: &mut Vec<f64>, w: usize, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let zeros_per_row = (arch.sparse_init_ratio * fan_in as f64).floor() as usize;
        for row in 0..fan_out {
            let base = w + row * fan_in;
            for i in 0..fan_in {
                data[base + i] = rng.random_range(-bound..bound);
            }
            if zeros_per_row > 0 {
                for idx in rand::seq::index::sample(rng, fan_in, zeros_per_row) {
                    data[base + idx] = 0.0;
                }
            }
        }
    };

    for l in &lay.layers {
        init_matrix(&mut data, l.w, l.fan_in, l.fan_out, &mut rng);
        if arch.layernorm {
            for j in 0..l.fan_out {
                data[l.ln_gain + j] = 1.0;
            }
        }
    }
    match &lay.head {
        HeadOffsets::Single { w, fan_in, fan_out, .. } => {
            init_matrix(&mut data, *w, *fan_in, *fan_out, &mut rng);
        }
        HeadOffsets::Gaussian { w_mean, w_std, fan_in, dim, .. } => {
            init_matrix(&mut data, *w_mean, *fan_in, *dim, &mut rng);
            init_matrix(&mut data, *w_std, *fan_in, *dim, &mut rng);
        }
    }
    Ok(ParamVector::from_vec(data))
}

/// Count of zeroed entries per row of the first weight matrix; test hook for
/// the sparse-init contract.
pub fn zeros_per_row_first_matrix(arch: &Architecture, params: &ParamVector) -> Vec<usize> {
    let lay = layout(arch);
    let (w, fan_in, fan_out) = match lay.layers.first() {
        Some(l) => (l.w, l.fan_in, l.fan_out),
        None => match &lay.head {
            HeadOffsets::Single { w, fan_in, fan_out, .. } => (*w, *fan_in, *fan_out),
            HeadOffsets::Gaussian { w_mean, fan_in, dim, .. } => (*w_mean, *fan_in, *dim),
        },
    };
    (0..fan_out)
        .map(|r| (0..fan_in).filter(|i| params[w + r * fan_in + i] == 0.0).count())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_params(arch: &Architecture, seed: u64) -> ParamVector {
        let mut r = rng(seed);
        let data = (0..arch.param_count()).map(|_| r.random_range(-0.8..0.8)).collect();
        ParamVector::from_vec(data)
    }

    fn random_obs(arch: &Architecture, seed: u64) -> Observation {
        let mut r = rng(seed ^ 0xdeadbeef);
        Observation::new((0..arch.input_dim).map(|_| r.random_range(-1.5..1.5)).collect())
    }

    /// Central finite differences of a scalar-valued closure over params.
    fn finite_diff(
        params: &ParamVector,
        f: &dyn Fn(&ParamVector) -> f64,
        h: f64,
    ) -> Vec<f64> {
        let mut out = vec![0.0; params.dim()];
        let mut p = params.clone();
        for i in 0..params.dim() {
            let orig = p[i];
            p[i] = orig + h;
            let fp = f(&p);
            p[i] = orig - h;
            let fm = f(&p);
            p[i] = orig;
            out[i] = (fp - fm) / (2.0 * h);
        }
        out
    }

    fn assert_grad_close(analytic: &ParamVector, fd: &[f64]) {
        for i in 0..analytic.dim() {
            let a = analytic[i];
            let b = fd[i];
            let tol = 1e-4 * a.abs().max(b.abs()) + 1e-7;
            assert!(
                (a - b).abs() <= tol,
                "gradient mismatch at {i}: analytic {a}, finite-diff {b}"
            );
        }
    }

    #[test]
    fn linear_forward_is_dot_product() {
        let arch = Architecture::linear(2, Head::ScalarValue);
        let params = ParamVector::from_vec(vec![1.0, 2.0]);
        let obs = Observation::new(vec![3.0, 4.0]);
        assert_eq!(forward_value(&params, &arch, &obs).unwrap(), 11.0);
    }

    #[test]
    fn linear_grad_is_the_feature_vector() {
        let arch = Architecture::linear(3, Head::ScalarValue);
        let params = ParamVector::from_vec(vec![0.3, -0.7, 2.0]);
        let obs = Observation::new(vec![1.5, -2.5, 0.25]);
        let g = grad_value(&params, &arch, &obs).unwrap();
        assert_eq!(g.as_slice(), obs.features.as_slice());
    }

    #[test]
    fn zero_params_mlp_outputs_zero() {
        let arch = Architecture::mlp(2, vec![4, 3], false, Head::ScalarValue);
        let params = ParamVector::zeros(arch.param_count());
        let obs = Observation::new(vec![0.7, -0.2]);
        assert_eq!(forward_value(&params, &arch, &obs).unwrap(), 0.0);
    }

    #[test]
    fn zero_params_mlp_grad_is_final_bias_only() {
        let arch = Architecture::mlp(2, vec![4, 3], false, Head::ScalarValue);
        let params = ParamVector::zeros(arch.param_count());
        let obs = Observation::new(vec![0.7, -0.2]);
        let g = grad_value(&params, &arch, &obs).unwrap();
        let fd = finite_diff(&params, &|p| forward_value(p, &arch, &obs).unwrap(), 1e-5);
        assert_grad_close(&g, &fd);
        // Every nonzero entry is the final bias.
        let bias_idx = arch.param_count() - 1;
        for i in 0..g.dim() {
            if i == bias_idx {
                assert_eq!(g[i], 1.0);
            } else {
                assert_eq!(g[i], 0.0, "unexpected nonzero gradient at {i}");
            }
        }
    }

    #[test]
    fn mlp_forward_matches_independent_reimplementation() {
        // Straight-line re-implementation of the same forward pass, reading
        // the flat layout directly.
        let arch = Architecture::mlp(2, vec![3, 3], false, Head::ScalarValue);
        let params = random_params(&arch, 7);
        let obs = Observation::new(vec![0.5, -0.5]);
        let p = params.as_slice();

        let mut h1 = [0.0f64; 3];
        for j in 0..3 {
            let w = &p[j * 2..j * 2 + 2];
            let u = w[0] * 0.5 + w[1] * (-0.5) + p[6 + j];
            h1[j] = if u > 0.0 { u } else { 0.01 * u };
        }
        let mut h2 = [0.0f64; 3];
        for j in 0..3 {
            let base = 9 + j * 3;
            let u = p[base] * h1[0] + p[base + 1] * h1[1] + p[base + 2] * h1[2] + p[18 + j];
            h2[j] = if u > 0.0 { u } else { 0.01 * u };
        }
        let expected = p[21] * h2[0] + p[22] * h2[1] + p[23] * h2[2] + p[24];

        let got = forward_value(&params, &arch, &obs).unwrap();
        assert!((got - expected).abs() <= 1e-12, "got {got}, expected {expected}");
    }

    #[test]
    fn value_gradients_match_finite_differences() {
        for ln in [false, true] {
            let arch = Architecture::mlp(3, vec![5, 4], ln, Head::ScalarValue);
            for case in 0..100u64 {
                let params = random_params(&arch, 11 + case);
                let obs = random_obs(&arch, 29 + case);
                let g = grad_value(&params, &arch, &obs).unwrap();
                let fd = finite_diff(&params, &|p| forward_value(p, &arch, &obs).unwrap(), 1e-5);
                assert_grad_close(&g, &fd);
            }
        }
    }

    #[test]
    fn q_gradients_match_finite_differences() {
        let arch = Architecture::mlp(3, vec![5], true, Head::QValues { n_actions: 3 });
        for case in 0..100u64 {
            let params = random_params(&arch, 101 + case);
            let obs = random_obs(&arch, 131 + case);
            let a = (case % 3) as usize;
            let (_, g) = grad_q(&params, &arch, &obs, a).unwrap();
            let fd = finite_diff(&params, &|p| forward_q(p, &arch, &obs).unwrap()[a], 1e-5);
            assert_grad_close(&g, &fd);
        }
    }

    #[test]
    fn softmax_logprob_and_entropy_gradients_match_finite_differences() {
        let arch = Architecture::mlp(2, vec![4], true, Head::SoftmaxPolicy { n_actions: 3 });
        for case in 0..100u64 {
            let params = random_params(&arch, 13 + case);
            let obs = random_obs(&arch, 41 + case);
            let action = Action::Discrete((case % 3) as usize);
            let (_, g) = logprob_and_grad(&params, &arch, &obs, &action).unwrap();
            let fd = finite_diff(
                &params,
                &|p| policy_forward(p, &arch, &obs).unwrap().log_prob(&action).unwrap(),
                1e-5,
            );
            assert_grad_close(&g, &fd);

            let (_, ge) = entropy_and_grad(&params, &arch, &obs).unwrap();
            let fde = finite_diff(&params, &|p| policy_forward(p, &arch, &obs).unwrap().entropy(), 1e-5);
            assert_grad_close(&ge, &fde);
        }
    }

    #[test]
    fn gaussian_logprob_and_entropy_gradients_match_finite_differences() {
        let arch = Architecture::mlp(2, vec![4], true, Head::GaussianPolicy { action_dim: 2 });
        for case in 0..100u64 {
            let params = random_params(&arch, 13 + case);
            let obs = random_obs(&arch, 43 + case);
            let mut r = rng(777 + case);
            let action = Action::Continuous(vec![r.random_range(-1.5..1.5), r.random_range(-1.5..1.5)]);
            let (_, g) = logprob_and_grad(&params, &arch, &obs, &action).unwrap();
            let fd = finite_diff(
                &params,
                &|p| policy_forward(p, &arch, &obs).unwrap().log_prob(&action).unwrap(),
                1e-5,
            );
            assert_grad_close(&g, &fd);

            let (_, ge) = entropy_and_grad(&params, &arch, &obs).unwrap();
            let fde = finite_diff(&params, &|p| policy_forward(p, &arch, &obs).unwrap().entropy(), 1e-5);
            assert_grad_close(&ge, &fde);
        }
    }

    #[test]
    fn linear_policy_logprob_gradient_matches_finite_differences() {
        let arch = Architecture::linear(3, Head::GaussianPolicy { action_dim: 1 });
        for case in 0..20u64 {
            let params = random_params(&arch, 211 + case);
            let obs = random_obs(&arch, 223 + case);
            let action = Action::Continuous(vec![0.3]);
            let (_, g) = logprob_and_grad(&params, &arch, &obs, &action).unwrap();
            let fd = finite_diff(
                &params,
                &|p| policy_forward(p, &arch, &obs).unwrap().log_prob(&action).unwrap(),
                1e-5,
            );
            assert_grad_close(&g, &fd);
        }
    }

    #[test]
    fn softplus_values_and_switch() {
        assert!((softplus(0.0) - 2.0f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(25.0), 25.0);
        // Continuity at the switch point.
        let below = (1.0f64 + 20.0f64.exp()).ln();
        assert!((below - 20.0).abs() < 3e-9);
    }

    #[test]
    fn softmax_symmetry_and_gaussian_logprob_constants() {
        let dist = PolicyDistribution::Softmax { logits: vec![0.0, 0.0] };
        let p = dist.probs();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        assert!((dist.log_prob(&Action::Discrete(0)).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        assert!((dist.entropy() - 2.0f64.ln()).abs() < 1e-15);

        let g = PolicyDistribution::Gaussian { mean: vec![0.0], std: vec![1.0] };
        let lp = g.log_prob(&Action::Continuous(vec![0.0])).unwrap();
        assert!((lp + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        let h = g.entropy();
        assert!((h - 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()).abs() < 1e-15);
    }

    #[test]
    fn softmax_action_out_of_range_is_config_error() {
        let arch = Architecture::linear(1, Head::SoftmaxPolicy { n_actions: 2 });
        let params = ParamVector::zeros(arch.param_count());
        let obs = Observation::new(vec![1.0]);
        let err = logprob_and_grad(&params, &arch, &obs, &Action::Discrete(5)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let arch = Architecture::linear(3, Head::ScalarValue);
        let params = ParamVector::zeros(3);
        let obs = Observation::new(vec![1.0, 2.0]);
        assert!(matches!(forward_value(&params, &arch, &obs), Err(Error::Config(_))));
        let bad_params = ParamVector::zeros(5);
        let ok_obs = Observation::new(vec![1.0, 2.0, 3.0]);
        assert!(matches!(forward_value(&bad_params, &arch, &ok_obs), Err(Error::Config(_))));
    }

    #[test]
    fn sparse_init_row_zero_counts() {
        let arch = Architecture::mlp(10, vec![6], false, Head::ScalarValue).with_sparse_init(0.9);
        let params = sparse_init(&arch, 3).unwrap();
        for count in zeros_per_row_first_matrix(&arch, &params) {
            assert_eq!(count, 9);
        }

        let dense = Architecture::mlp(10, vec![6], false, Head::ScalarValue);
        let params = sparse_init(&dense, 3).unwrap();
        for count in zeros_per_row_first_matrix(&dense, &params) {
            assert_eq!(count, 0);
        }
    }

    #[test]
    fn sparse_init_is_deterministic() {
        let arch = Architecture::mlp(4, vec![8, 8], true, Head::GaussianPolicy { action_dim: 2 })
            .with_sparse_init(0.5);
        let a = sparse_init(&arch, 42).unwrap();
        let b = sparse_init(&arch, 42).unwrap();
        assert_eq!(a, b);
        let c = sparse_init(&arch, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_sub_heads_have_equal_width() {
        let arch = Architecture::mlp(3, vec![5], false, Head::GaussianPolicy { action_dim: 2 });
        let params = ParamVector::zeros(arch.param_count());
        let obs = Observation::new(vec![0.0, 0.0, 0.0]);
        match policy_forward(&params, &arch, &obs).unwrap() {
            PolicyDistribution::Gaussian { mean, std } => {
                assert_eq!(mean.len(), std.len());
                // pre_std = 0 for zero params, so std = log 2.
                for s in std {
                    assert!((s - 2.0f64.ln()).abs() < 1e-15);
                }
            }
            _ => unreachable!(),
        }
    }

    proptest! {
        #[test]
        fn softmax_probs_sum_to_one(logits in proptest::collection::vec(-30.0f64..30.0, 2..8)) {
            let dist = PolicyDistribution::Softmax { logits };
            let sum: f64 = dist.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn gaussian_std_strictly_positive(pre in -50.0f64..50.0) {
            prop_assert!(softplus(pre) > 0.0);
        }
    }
}
