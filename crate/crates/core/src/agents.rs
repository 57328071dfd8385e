//! Full per-step learners: Intentional TD(λ) for prediction, Intentional
//! Q(λ) for control, Intentional Policy Gradient, the actor–critic
//! composition, and the comparison baselines (fixed step size, naive trace
//! normalization).
//!
//! Every step follows the same skeleton: compute a learning signal, clip it,
//! take the gradient of the targeted quantity, update the RMS average and
//! the trace statistics in order, choose the step size from the configured
//! rule, and apply `w += alpha * signal * rho ⊙ z`. A genuine second forward
//! pass records the realized functional change for the diagnostics module.

use crate::approx::{
    entropy_and_grad, forward_q, forward_value, grad_q, grad_value, logprob_and_grad,
    policy_forward, Action, Architecture, Observation, ParamVector,
};
use crate::error::{Error, Result};
use crate::intent::{
    advantage_normalize, guarded_alpha, intentional_alpha_trace, naive_trace_alpha,
    rms_precondition, sign0, ClipState, Ema, EmaVec, IntentConfig, StepSize, TraceState,
};

/// One streaming sample. `terminated` marks a true terminal (no bootstrap);
/// `truncated` marks a timeout (the learner keeps the bootstrap term and the
/// trace). The optional next action is carried for transition-shape
/// compatibility but the max-based Q rule does not consume it.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Observation,
    pub a: Action,
    pub r: f64,
    pub s_next: Observation,
    pub terminated: bool,
    pub truncated: bool,
    pub a_next: Option<Action>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClipMode {
    /// Eq.-style adaptive clipping to C times the running RMS of the signal.
    Adaptive,
    /// Fixed-range clipping (the non-adaptive comparator).
    Range { lo: f64, hi: f64 },
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateRule {
    /// eta / sqrt(sigma_bar * <rho z, z>)
    Intentional,
    /// eta / <rho z, z> — the incorrect trace normalization, kept as an
    /// ablation.
    NaiveTrace,
    /// Fixed alpha, no preconditioning, no sigma tracking.
    ConstantAlpha(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub intent: IntentConfig,
    pub lambda: f64,
    pub gamma: f64,
    /// Entropy coefficient for policy learners.
    pub xi: f64,
    pub clip_mode: ClipMode,
    /// Entry-wise RMS preconditioning on/off (off forces rho = 1).
    pub rmsprop: bool,
    /// Two-scale guard on the step-size denominator.
    pub guard: bool,
    pub update_rule: UpdateRule,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            intent: IntentConfig::default(),
            lambda: 0.8,
            gamma: 0.99,
            xi: 0.0,
            clip_mode: ClipMode::Adaptive,
            rmsprop: true,
            guard: false,
            update_rule: UpdateRule::Intentional,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        self.intent.validate()?;
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::config(format!("lambda must lie in [0, 1), got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.xi < 0.0 {
            return Err(Error::config("entropy coefficient xi must be non-negative"));
        }
        if let UpdateRule::ConstantAlpha(a) = self.update_rule {
            if a < 0.0 || !a.is_finite() {
                return Err(Error::config("constant alpha must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Mutable optimizer state owned by one learner.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub nu: EmaVec,
    pub trace: TraceState,
    pub clip: ClipState,
    /// Running scale of |advantage| for policy learners.
    pub adv_scale: Ema,
    /// Running scale of the step-size denominator for the guard.
    pub guard_bar: Ema,
    pub t: u64,
}

/// Per-update diagnostics record. `realized_change` is recomputed by a
/// second forward pass after the parameters move.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub alpha: f64,
    pub delta: f64,
    pub delta_clipped: f64,
    pub intended_change: f64,
    pub realized_change: f64,
    pub grad_norm_sq: f64,
    pub trace_norm_sq_preconditioned: f64,
    pub degenerate: bool,
    pub param_step_norm: f64,
}

struct UpdateStats {
    alpha: f64,
    degenerate: bool,
    grad_norm_sq: f64,
    trace_norm_sq_preconditioned: f64,
    param_step_norm: f64,
    /// alpha * signal * <g, rho z>: the first-order predicted change.
    first_order_change: f64,
}

#[derive(Debug, Clone)]
pub struct Learner {
    pub params: ParamVector,
    pub arch: Architecture,
    pub optim: OptimState,
    pub config: AgentConfig,
}

impl Learner {
    pub fn new(arch: Architecture, params: ParamVector, config: AgentConfig) -> Result<Self> {
        arch.validate()?;
        config.validate()?;
        if params.dim() != arch.param_count() {
            return Err(Error::config("parameter vector does not match architecture"));
        }
        let dim = params.dim();
        let optim = OptimState {
            nu: EmaVec::new(dim, config.intent.beta_nu)?,
            trace: TraceState::new(dim, config.lambda, config.gamma)?,
            clip: ClipState::new(config.intent.beta_clip, config.intent.clip_c)?,
            adv_scale: Ema::new(config.intent.beta_norm)?,
            guard_bar: Ema::new(config.intent.beta_nu)?,
            t: 0,
        };
        Ok(Learner { params, arch, optim, config })
    }

    pub fn value(&self, obs: &Observation) -> Result<f64> {
        forward_value(&self.params, &self.arch, obs)
    }

    pub fn q_values(&self, obs: &Observation) -> Result<Vec<f64>> {
        forward_q(&self.params, &self.arch, obs)
    }

    pub fn policy(&self, obs: &Observation) -> Result<crate::approx::PolicyDistribution> {
        policy_forward(&self.params, &self.arch, obs)
    }

    /// TD error for the critic: r + gamma V(s')(1 - terminated) - V(s).
    /// Truncation keeps the bootstrap term.
    pub fn td_error(&self, tr: &Transition) -> Result<f64> {
        let v_s = self.value(&tr.s)?;
        let v_next = self.value(&tr.s_next)?;
        let bootstrap = if tr.terminated { 0.0 } else { self.config.gamma * v_next };
        let delta = tr.r + bootstrap - v_s;
        if !delta.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite TD error at step {}: r={} v(s)={v_s} v(s')={v_next}",
                self.optim.t, tr.r
            )));
        }
        Ok(delta)
    }

    /// Clip a learning signal according to the configured mode; the adaptive
    /// mode advances this learner's own clip state with the raw signal.
    pub fn clip_signal(&mut self, delta: f64) -> f64 {
        match self.config.clip_mode {
            ClipMode::Adaptive => self.optim.clip.clip(delta),
            ClipMode::Range { lo, hi } => delta.clamp(lo, hi),
            ClipMode::Off => delta,
        }
    }

    /// One Intentional TD(λ) step (or the configured baseline rule over the
    /// identical signal path).
    pub fn td_step(&mut self, tr: &Transition) -> Result<StepReport> {
        let delta = self.td_error(tr)?;
        let delta_clipped = self.clip_signal(delta);
        self.td_apply(tr, delta, delta_clipped)
    }

    /// Remainder of a TD step once delta has been computed and clipped; the
    /// actor–critic composition uses this to clip exactly once.
    pub fn td_apply(&mut self, tr: &Transition, delta: f64, delta_clipped: f64) -> Result<StepReport> {
        let v_before = self.value(&tr.s)?;
        let g = grad_value(&self.params, &self.arch, &tr.s)?;
        let stats = self.apply_update(&g, delta_clipped)?;
        let v_after = self.value(&tr.s)?;
        if tr.terminated {
            self.optim.trace.reset();
        }
        Ok(self.report(delta, delta_clipped, v_after - v_before, stats))
    }

    /// One Intentional Q(λ) step: delta bootstraps from the greedy action,
    /// the gradient is taken at the sampled pair only, and traces are not
    /// cut on non-greedy actions.
    pub fn q_step(&mut self, tr: &Transition) -> Result<StepReport> {
        let a = match &tr.a {
            Action::Discrete(a) => *a,
            Action::Continuous(_) => {
                return Err(Error::config("q_step requires a discrete action"))
            }
        };
        let q_s = self.q_values(&tr.s)?;
        if a >= q_s.len() {
            return Err(Error::config(format!("action {a} out of range for q head")));
        }
        let bootstrap = if tr.terminated {
            0.0
        } else {
            let q_next = self.q_values(&tr.s_next)?;
            self.config.gamma * q_next.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        };
        let delta = tr.r + bootstrap - q_s[a];
        if !delta.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite Q TD error at step {}: r={} q(s,a)={}",
                self.optim.t, tr.r, q_s[a]
            )));
        }
        let delta_clipped = self.clip_signal(delta);

        let (q_before, g) = grad_q(&self.params, &self.arch, &tr.s, a)?;
        let stats = self.apply_update(&g, delta_clipped)?;
        let q_after = self.q_values(&tr.s)?[a];
        if tr.terminated {
            self.optim.trace.reset();
        }
        Ok(self.report(delta, delta_clipped, q_after - q_before, stats))
    }

    /// One Intentional Policy Gradient step. `advantage` is the already
    /// clipped signal handed in by the caller (the critic's clipped TD error
    /// in the actor–critic composition); it is normalized by the running
    /// advantage scale here.
    pub fn pg_step(&mut self, tr: &Transition, advantage: f64) -> Result<StepReport> {
        let a_tilde = advantage_normalize(&mut self.optim.adv_scale, advantage);
        let (logp_before, g_logp) = logprob_and_grad(&self.params, &self.arch, &tr.s, &tr.a)?;
        let g = if self.config.xi != 0.0 && sign0(a_tilde) != 0.0 {
            let (_, g_ent) = entropy_and_grad(&self.params, &self.arch, &tr.s)?;
            let mut g = g_logp;
            g.add_scaled(self.config.xi * sign0(a_tilde), &g_ent);
            g
        } else {
            g_logp
        };
        if !g.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite policy gradient at step {} (advantage {advantage})",
                self.optim.t
            )));
        }
        let stats = self.apply_update(&g, a_tilde)?;
        let logp_after = self.policy(&tr.s)?.log_prob(&tr.a)?;
        if tr.terminated {
            self.optim.trace.reset();
        }
        let mut report = self.report(advantage, advantage, logp_after - logp_before, stats);
        report.intended_change = self.config.intent.eta * a_tilde;
        Ok(report)
    }

    fn report(&self, delta: f64, delta_clipped: f64, realized: f64, stats: UpdateStats) -> StepReport {
        let intended = match self.config.update_rule {
            // eta * delta_clipped is the targeted change in the lambda = 0
            // reading; baselines report their first-order prediction.
            UpdateRule::Intentional | UpdateRule::NaiveTrace => {
                self.config.intent.eta * delta_clipped
            }
            UpdateRule::ConstantAlpha(_) => stats.first_order_change,
        };
        StepReport {
            alpha: stats.alpha,
            delta,
            delta_clipped,
            intended_change: intended,
            realized_change: realized,
            grad_norm_sq: stats.grad_norm_sq,
            trace_norm_sq_preconditioned: stats.trace_norm_sq_preconditioned,
            degenerate: stats.degenerate,
            param_step_norm: stats.param_step_norm,
        }
    }

    /// The shared optimizer tail, in the algorithm order: nu, rho, sigma,
    /// sigma_bar, z, alpha, parameter update.
    fn apply_update(&mut self, g: &ParamVector, signal: f64) -> Result<UpdateStats> {
        self.optim.t += 1;
        let dim = self.params.dim();
        let constant_rule = matches!(self.config.update_rule, UpdateRule::ConstantAlpha(_));

        let rho: Vec<f64> = if !constant_rule && self.config.rmsprop {
            self.optim.nu.update_squares(g)?;
            rms_precondition(&self.optim.nu.value, self.config.intent.epsilon)
        } else {
            vec![1.0; dim]
        };
        if !constant_rule {
            self.optim.trace.update_sigma_bar(g, &rho)?;
        }
        self.optim.trace.accumulate(g)?;

        let step: StepSize = match self.config.update_rule {
            UpdateRule::Intentional => {
                if self.config.guard {
                    let u = crate::intent::trace_denominator(
                        &self.optim.trace,
                        &rho,
                        crate::intent::SigmaConvention::BoxAverage,
                    );
                    self.optim.guard_bar.update(u);
                    let mut s = guarded_alpha(u, self.optim.guard_bar.value, self.config.intent.eta);
                    if let Some(cap) = self.config.intent.alpha_cap {
                        s.alpha = s.alpha.min(cap);
                    }
                    s
                } else {
                    intentional_alpha_trace(
                        &self.optim.trace,
                        &rho,
                        self.config.intent.eta,
                        self.config.intent.alpha_cap,
                    )
                }
            }
            UpdateRule::NaiveTrace => {
                naive_trace_alpha(&self.optim.trace, &rho, self.config.intent.eta)
            }
            UpdateRule::ConstantAlpha(a) => StepSize { alpha: a, degenerate: false },
        };

        let z = &self.optim.trace.z;
        let mut step_norm_sq = 0.0;
        let mut g_dot_rz = 0.0;
        let mut z_rz = 0.0;
        let ps = self.params.as_mut_slice();
        for i in 0..dim {
            let rz = rho[i] * z[i];
            let d = step.alpha * signal * rz;
            ps[i] += d;
            step_norm_sq += d * d;
            g_dot_rz += g[i] * rz;
            z_rz += z[i] * rz;
        }

        Ok(UpdateStats {
            alpha: step.alpha,
            degenerate: step.degenerate,
            grad_norm_sq: g.norm_sq(),
            trace_norm_sq_preconditioned: z_rz,
            param_step_norm: step_norm_sq.sqrt(),
            first_order_change: step.alpha * signal * g_dot_rz,
        })
    }
}

/// One actor–critic step: the critic's TD error is computed and clipped
/// first from its pre-update weights, the actor consumes the clipped error
/// as its advantage, and the critic then applies its own value update.
pub fn ac_step(
    actor: &mut Learner,
    critic: &mut Learner,
    tr: &Transition,
) -> Result<(StepReport, StepReport)> {
    let delta = critic.td_error(tr)?;
    let delta_clipped = critic.clip_signal(delta);
    let actor_report = actor.pg_step(tr, delta_clipped)?;
    let critic_report = critic.td_apply(tr, delta, delta_clipped)?;
    Ok((actor_report, critic_report))
}

/// Exact expected updates for a single-state softmax policy with
/// identity-parameterized logits: the plain likelihood-ratio update and the
/// per-sample normalized one (advantage divided by the squared score norm),
/// plus the cosine between them.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ExpectedUpdates {
    pub unnormalized: Vec<f64>,
    pub normalized: Vec<f64>,
    pub cosine: f64,
}

pub fn expected_softmax_updates(logits: &[f64], advantages: &[f64]) -> Result<ExpectedUpdates> {
    if logits.len() != advantages.len() || logits.len() < 2 {
        return Err(Error::config("need matching logits/advantages with at least two actions"));
    }
    let dist = crate::approx::PolicyDistribution::Softmax { logits: logits.to_vec() };
    let probs = dist.probs();
    let n = probs.len();
    let mut unnormalized = vec![0.0; n];
    let mut normalized = vec![0.0; n];
    for a in 0..n {
        // Score of action a under identity logits: e_a - p.
        let norm_sq: f64 = (0..n)
            .map(|j| {
                let s = if j == a { 1.0 - probs[j] } else { -probs[j] };
                s * s
            })
            .sum();
        for j in 0..n {
            let score = if j == a { 1.0 - probs[j] } else { -probs[j] };
            unnormalized[j] += probs[a] * advantages[a] * score;
            normalized[j] += probs[a] * advantages[a] / norm_sq * score;
        }
    }
    let dot: f64 = unnormalized.iter().zip(&normalized).map(|(a, b)| a * b).sum();
    let nu = unnormalized.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nn = normalized.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cosine = if nu > 0.0 && nn > 0.0 { dot / (nu * nn) } else { 0.0 };
    Ok(ExpectedUpdates { unnormalized, normalized, cosine })
}

/// The engineered two-action instance where per-sample normalization flips
/// the preferred action: both advantages are positive and action 1's is
/// larger, yet the expected normalized update increases the probability of
/// action 2.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BiasDemoReport {
    pub probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub grad_norm_sq: Vec<f64>,
    /// advantage / ||score||^2 per action — the ordering that actually
    /// drives the normalized update.
    pub normalized_advantage: Vec<f64>,
    pub expected: ExpectedUpdates,
    /// Directional derivative of pi(a2) along the expected normalized
    /// update; positive means the worse action gains probability.
    pub dpi2_along_normalized: f64,
    pub dpi2_along_unnormalized: f64,
}

pub fn action_bias_demo() -> BiasDemoReport {
    // pi = (0.2, 0.8), A = (2, 1): A1 > A2 > 0 while
    // A1/||g1||^2 = 2/(2*0.64) < A2/||g2||^2 = 1/(2*0.04).
    let logits = vec![0.2f64.ln(), 0.8f64.ln()];
    let advantages = vec![2.0, 1.0];
    let expected = expected_softmax_updates(&logits, &advantages).unwrap();

    let dist = crate::approx::PolicyDistribution::Softmax { logits: logits.clone() };
    let probs = dist.probs();
    let n = probs.len();
    let grad_norm_sq: Vec<f64> = (0..n)
        .map(|a| {
            (0..n)
                .map(|j| {
                    let s = if j == a { 1.0 - probs[j] } else { -probs[j] };
                    s * s
                })
                .sum()
        })
        .collect();
    let normalized_advantage: Vec<f64> =
        advantages.iter().zip(&grad_norm_sq).map(|(a, g)| a / g).collect();

    // d pi_2 / dt along direction d is pi_2 * <e_2 - p, d>.
    let dpi2 = |dir: &[f64]| {
        let mean: f64 = probs.iter().zip(dir).map(|(p, d)| p * d).sum();
        probs[1] * (dir[1] - mean)
    };
    BiasDemoReport {
        dpi2_along_normalized: dpi2(&expected.normalized),
        dpi2_along_unnormalized: dpi2(&expected.unnormalized),
        probs,
        advantages,
        grad_norm_sq,
        normalized_advantage,
        expected,
    }
}
