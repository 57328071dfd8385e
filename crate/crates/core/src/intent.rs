//! The intentional-update core: bias-corrected exponential averages, RMS
//! preconditioning, eligibility traces with a discounted sensitivity
//! estimate, adaptive delta clipping, advantage normalization, and every
//! step-size rule.
//!
//! All state here is plain values; operations are deterministic functions of
//! their inputs. One learner's state must be advanced by a single logical
//! thread.

use crate::approx::ParamVector;
use crate::error::{Error, Result};

/// Hard floor on every step-size denominator. Distinct from the RMS epsilon;
/// a floored denominator flags the step as degenerate rather than skipping it.
pub const EPS_DENOM: f64 = 1e-12;

/// Floor on the advantage scale when dividing.
pub const ADV_EPS: f64 = 1e-8;

/// sign with sign(0) = 0: a zero signal contributes no direction.
pub fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Bias-corrected exponential average of a scalar stream:
/// `value += (1 - beta)/(1 - beta^t) * (x - value)` with t counted from 1,
/// so the first update sets `value = x` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Ema {
    pub value: f64,
    beta: f64,
    t: u64,
    beta_pow_t: f64,
}

impl Ema {
    pub fn new(beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::config(format!(
                "ema decay must lie in [0, 1), got {beta} (the bias-correction coefficient is undefined at 1)"
            )));
        }
        Ok(Ema { value: 0.0, beta, t: 0, beta_pow_t: 1.0 })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// beta^t, tracked incrementally.
    pub fn beta_pow_t(&self) -> f64 {
        self.beta_pow_t
    }

    pub fn update(&mut self, x: f64) -> f64 {
        self.t += 1;
        self.beta_pow_t *= self.beta;
        let coeff = (1.0 - self.beta) / (1.0 - self.beta_pow_t);
        if coeff == 1.0 {
            // First step (or beta = 0): bias correction forces value = x.
            self.value = x;
        } else {
            self.value += coeff * (x - self.value);
        }
        self.value
    }

    pub fn reset(&mut self) {
        self.value = 0.0;
        self.t = 0;
        self.beta_pow_t = 1.0;
    }
}

/// Entry-wise bias-corrected exponential average (one shared step counter).
#[derive(Debug, Clone, PartialEq)]
pub struct EmaVec {
    pub value: Vec<f64>,
    beta: f64,
    t: u64,
    beta_pow_t: f64,
}

impl EmaVec {
    pub fn new(dim: usize, beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::config(format!("ema decay must lie in [0, 1), got {beta}")));
        }
        Ok(EmaVec { value: vec![0.0; dim], beta, t: 0, beta_pow_t: 1.0 })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.value.len() {
            return Err(Error::config("ema dimension mismatch"));
        }
        self.t += 1;
        self.beta_pow_t *= self.beta;
        let coeff = (1.0 - self.beta) / (1.0 - self.beta_pow_t);
        if coeff == 1.0 {
            self.value.copy_from_slice(x);
        } else {
            for (v, xi) in self.value.iter_mut().zip(x.iter()) {
                *v += coeff * (xi - *v);
            }
        }
        Ok(())
    }

    /// Update with the entry-wise square of `g` (the RMS average of gradients).
    pub fn update_squares(&mut self, g: &ParamVector) -> Result<()> {
        if g.dim() != self.value.len() {
            return Err(Error::config("ema dimension mismatch"));
        }
        self.t += 1;
        self.beta_pow_t *= self.beta;
        let coeff = (1.0 - self.beta) / (1.0 - self.beta_pow_t);
        let gs = g.as_slice();
        if coeff == 1.0 {
            for (v, gi) in self.value.iter_mut().zip(gs.iter()) {
                *v = gi * gi;
            }
        } else {
            for (v, gi) in self.value.iter_mut().zip(gs.iter()) {
                *v += coeff * (gi * gi - *v);
            }
        }
        Ok(())
    }
}

/// Entry-wise RMS preconditioner: rho_i = 1 / (sqrt(nu_i) + epsilon).
pub fn rms_precondition(nu: &[f64], epsilon: f64) -> Vec<f64> {
    nu.iter().map(|&v| 1.0 / (v.sqrt() + epsilon)).collect()
}

/// Adaptive delta clipping: limit |delta| to a constant multiple of its
/// long-term root mean square. The squared-delta average updates first, so
/// the very first delta always passes through unclipped (for C >= 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ClipState {
    pub ema: Ema,
    pub c: f64,
}

impl ClipState {
    pub fn new(beta_clip: f64, c: f64) -> Result<Self> {
        if c <= 0.0 {
            return Err(Error::config("clip multiplier C must be positive"));
        }
        Ok(ClipState { ema: Ema::new(beta_clip)?, c })
    }

    pub fn clip(&mut self, delta: f64) -> f64 {
        self.ema.update(delta * delta);
        let bound = self.c * self.ema.value.sqrt();
        sign0(delta) * delta.abs().min(bound)
    }
}

/// Which aggregate the trace step size divides by. The running average is
/// the streaming form; the discounted sum is the exact conservative
/// aggregate, recoverable from the average by the factor
/// (1 - (lambda*gamma)^t) / (1 - lambda*gamma).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaConvention {
    BoxAverage,
    DiscountedSum,
}

/// Eligibility trace plus the discounted running estimate of the
/// preconditioned squared-gradient norm.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceState {
    pub z: ParamVector,
    pub lambda: f64,
    pub gamma: f64,
    pub sigma_bar: Ema,
}

impl TraceState {
    pub fn new(dim: usize, lambda: f64, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::config(format!("lambda must lie in [0, 1), got {lambda}")));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::config(format!("gamma must lie in [0, 1], got {gamma}")));
        }
        Ok(TraceState {
            z: ParamVector::zeros(dim),
            lambda,
            gamma,
            sigma_bar: Ema::new(lambda * gamma)?,
        })
    }

    pub fn decay(&self) -> f64 {
        self.lambda * self.gamma
    }

    /// z <- lambda*gamma*z + g
    pub fn accumulate(&mut self, g: &ParamVector) -> Result<()> {
        if g.dim() != self.z.dim() {
            return Err(Error::config("trace dimension mismatch"));
        }
        let k = self.decay();
        for (zi, gi) in self.z.as_mut_slice().iter_mut().zip(g.as_slice().iter()) {
            *zi = k * *zi + gi;
        }
        Ok(())
    }

    /// sigma_t = <rho g, g>, then fold it into the running sigma_bar.
    /// Returns sigma_t.
    pub fn update_sigma_bar(&mut self, g: &ParamVector, rho: &[f64]) -> Result<f64> {
        if g.dim() != rho.len() {
            return Err(Error::config("preconditioner dimension mismatch"));
        }
        let sigma: f64 = g.as_slice().iter().zip(rho.iter()).map(|(gi, ri)| ri * gi * gi).sum();
        self.sigma_bar.update(sigma);
        Ok(sigma)
    }

    /// The aggregate sigma under the chosen convention.
    pub fn sigma_bar_aggregate(&self, convention: SigmaConvention) -> f64 {
        match convention {
            SigmaConvention::BoxAverage => self.sigma_bar.value,
            SigmaConvention::DiscountedSum => {
                let k = self.decay();
                if self.sigma_bar.t() == 0 {
                    0.0
                } else if k == 0.0 {
                    self.sigma_bar.value
                } else {
                    self.sigma_bar.value * (1.0 - self.sigma_bar.beta_pow_t()) / (1.0 - k)
                }
            }
        }
    }

    /// <rho z, z>
    pub fn preconditioned_norm_sq(&self, rho: &[f64]) -> f64 {
        self.z.as_slice().iter().zip(rho.iter()).map(|(zi, ri)| ri * zi * zi).sum()
    }

    /// Zero the trace and the sigma accumulator (true-terminal hygiene).
    pub fn reset(&mut self) {
        for zi in self.z.as_mut_slice() {
            *zi = 0.0;
        }
        self.sigma_bar.reset();
    }
}

/// Meta-parameters of the intentional update rules.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentConfig {
    /// Intended functional change scale (value units or log-probability units).
    pub eta: f64,
    pub beta_nu: f64,
    pub beta_clip: f64,
    pub beta_norm: f64,
    /// RMS epsilon inside the preconditioner.
    pub epsilon: f64,
    pub clip_c: f64,
    /// Optional cap applied to every computed step size.
    pub alpha_cap: Option<f64>,
}

impl Default for IntentConfig {
    fn default() -> Self {
        IntentConfig {
            eta: 0.5,
            beta_nu: 0.999,
            beta_clip: 0.9998,
            beta_norm: 0.9998,
            epsilon: 1e-8,
            clip_c: 20.0,
            alpha_cap: None,
        }
    }
}

impl IntentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eta <= 0.0 {
            return Err(Error::config("eta must be positive"));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::config("epsilon must be positive"));
        }
        for (name, b) in [
            ("beta_nu", self.beta_nu),
            ("beta_clip", self.beta_clip),
            ("beta_norm", self.beta_norm),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.clip_c <= 0.0 {
            return Err(Error::config("clip_c must be positive"));
        }
        if let Some(cap) = self.alpha_cap {
            if cap <= 0.0 {
                return Err(Error::config("alpha_cap must be positive"));
            }
        }
        Ok(())
    }
}

/// A computed step size. `degenerate` marks a denominator that hit the
/// [`EPS_DENOM`] floor; the step still proceeds but diagnostics exclude it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSize {
    pub alpha: f64,
    pub degenerate: bool,
}

impl StepSize {
    fn capped(mut self, cap: Option<f64>) -> Self {
        if let Some(c) = cap {
            self.alpha = self.alpha.min(c);
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlmsMode {
    Exact,
    CauchySchwarz,
}

/// Step size achieving a target change `delta_target` in the output to first
/// order, for an update along `direction`:
/// exact mode divides by <grad_y, direction>; the Cauchy-Schwarz mode divides
/// by ||direction|| * ||grad_y||. The exact-mode denominator keeps its sign;
/// only its magnitude is floored, so a negative-error NLMS step still moves
/// the right way.
pub fn nlms_alpha(
    delta_target: f64,
    grad_y: &ParamVector,
    direction: &ParamVector,
    mode: NlmsMode,
) -> StepSize {
    let denom_raw = match mode {
        NlmsMode::Exact => grad_y
            .as_slice()
            .iter()
            .zip(direction.as_slice().iter())
            .map(|(a, b)| a * b)
            .sum::<f64>(),
        NlmsMode::CauchySchwarz => (direction.norm_sq().sqrt()) * (grad_y.norm_sq().sqrt()),
    };
    let degenerate = denom_raw.abs() < EPS_DENOM;
    let denom = if degenerate {
        if denom_raw < 0.0 {
            -EPS_DENOM
        } else {
            EPS_DENOM
        }
    } else {
        denom_raw
    };
    StepSize { alpha: delta_target / denom, degenerate }
}

/// The trace step-size denominator sqrt(sigma_bar * <rho z, z>) before any
/// floor.
pub fn trace_denominator(tr: &TraceState, rho: &[f64], convention: SigmaConvention) -> f64 {
    (tr.sigma_bar_aggregate(convention) * tr.preconditioned_norm_sq(rho)).sqrt()
}

fn alpha_from_denominator(eta: f64, denom: f64) -> StepSize {
    let degenerate = denom < EPS_DENOM;
    StepSize { alpha: eta / denom.max(EPS_DENOM), degenerate }
}

/// Trace-aggregate step size eta / sqrt(sigma_bar * <rho z, z>). With
/// lambda = 0 and rho = 1 this reduces to eta / ||g||^2.
pub fn intentional_alpha_trace(
    tr: &TraceState,
    rho: &[f64],
    eta: f64,
    alpha_cap: Option<f64>,
) -> StepSize {
    intentional_alpha_trace_with(tr, rho, eta, alpha_cap, SigmaConvention::BoxAverage)
}

pub fn intentional_alpha_trace_with(
    tr: &TraceState,
    rho: &[f64],
    eta: f64,
    alpha_cap: Option<f64>,
    convention: SigmaConvention,
) -> StepSize {
    alpha_from_denominator(eta, trace_denominator(tr, rho, convention)).capped(alpha_cap)
}

/// The incorrect trace extension eta / <rho z, z>: it shrinks per-state
/// updates as the trace grows coherent, inverting the intended scaling.
pub fn naive_trace_alpha(tr: &TraceState, rho: &[f64], eta: f64) -> StepSize {
    alpha_from_denominator(eta, tr.preconditioned_norm_sq(rho))
}

/// Guarded two-scale step size eta / max(u, sqrt(u * u_bar)): when the
/// momentary sensitivity u drops far below its typical scale u_bar, the
/// geometric mean limits the parameter step.
pub fn guarded_alpha(u: f64, u_bar: f64, eta: f64) -> StepSize {
    alpha_from_denominator(eta, u.max((u * u_bar).sqrt()))
}

/// Update the advantage-scale average with |a| (bias-corrected, so the first
/// scale equals |a_1|), then return the normalized advantage a / max(Ā, eps).
pub fn advantage_normalize(scale: &mut Ema, a: f64) -> f64 {
    scale.update(a.abs());
    a / scale.value.max(ADV_EPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ema_first_update_is_exact() {
        let mut e = Ema::new(0.999).unwrap();
        e.value = 123.0; // stale prior value is irrelevant at t = 1
        assert_eq!(e.update(5.0), 5.0);
    }

    #[test]
    fn ema_beta_zero_tracks_latest() {
        let mut e = Ema::new(0.0).unwrap();
        for x in [3.0, -7.0, 0.25, 1e9] {
            assert_eq!(e.update(x), x);
        }
    }

    #[test]
    fn ema_constant_stream_is_exact_fixed_point() {
        let mut e = Ema::new(0.97).unwrap();
        for _ in 0..1000 {
            assert_eq!(e.update(4.25), 4.25);
        }
    }

    #[test]
    fn ema_beta_one_is_config_error() {
        assert!(matches!(Ema::new(1.0), Err(crate::Error::Config(_))));
    }

    #[test]
    fn rms_precondition_values() {
        let rho = rms_precondition(&[0.0, 1.0, 4.0], 1e-8);
        assert_eq!(rho[0], 1e8);
        assert_eq!(rho[1], 1.0 / (1.0 + 1e-8));
        assert_eq!(rho[2], 1.0 / (2.0 + 1e-8));
    }

    #[test]
    fn clip_first_step_passes_through() {
        let mut c = ClipState::new(0.9998, 20.0).unwrap();
        assert_eq!(c.clip(7.5), 7.5);
        let mut c = ClipState::new(0.9998, 20.0).unwrap();
        assert_eq!(c.clip(-123.0), -123.0);
    }

    #[test]
    fn clip_outlier_after_long_stream() {
        // Independent oracle: run the EMA recursion directly.
        let beta: f64 = 0.9998;
        let mut hat = 0.0;
        let mut bt = 1.0;
        for t in 1..=10_001u64 {
            bt *= beta;
            let d = if t <= 10_000 { 1.0f64 } else { 100.0 };
            let coeff = (1.0 - beta) / (1.0 - bt);
            if t == 1 {
                hat = d * d;
            } else {
                hat += coeff * (d * d - hat);
            }
        }
        let expected = 100.0f64.min(20.0 * hat.sqrt());
        assert!(expected < 100.0, "the outlier must actually clip");

        let mut c = ClipState::new(beta, 20.0).unwrap();
        for _ in 0..10_000 {
            c.clip(1.0);
        }
        let got = c.clip(100.0);
        assert!((got - expected).abs() <= 1e-9 * expected, "got {got}, expected {expected}");
    }

    #[test]
    fn clip_scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stream: Vec<f64> = (0..2000).map(|_| rng.random_range(-3.0..3.0)).collect();
        for k in [0.01, 3.5, 1000.0] {
            let mut a = ClipState::new(0.9998, 20.0).unwrap();
            let mut b = ClipState::new(0.9998, 20.0).unwrap();
            for &d in &stream {
                let ya = a.clip(d);
                let yb = b.clip(k * d);
                let denom = (k * ya).abs().max(1e-300);
                assert!(
                    (yb - k * ya).abs() / denom <= 1e-12,
                    "scale equivariance violated: {yb} vs {}",
                    k * ya
                );
            }
        }
    }

    #[test]
    fn trace_lambda_zero_equals_latest_gradient() {
        let mut tr = TraceState::new(3, 0.0, 0.99).unwrap();
        let g = ParamVector::from_vec(vec![1.0, -2.0, 0.5]);
        tr.accumulate(&ParamVector::from_vec(vec![9.0, 9.0, 9.0])).unwrap();
        tr.accumulate(&g).unwrap();
        assert_eq!(tr.z, g);
    }

    #[test]
    fn trace_accumulate_arithmetic() {
        let mut tr = TraceState::new(2, 0.5, 1.0).unwrap();
        tr.z = ParamVector::from_vec(vec![2.0, 0.0]);
        tr.accumulate(&ParamVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(tr.z.as_slice(), &[2.0, 1.0]);
    }

    #[test]
    fn trace_geometric_limit() {
        let (lambda, gamma) = (0.792, 1.0);
        let mut tr = TraceState::new(2, lambda, gamma).unwrap();
        let g = ParamVector::from_vec(vec![0.3, -1.1]);
        for _ in 0..200 {
            tr.accumulate(&g).unwrap();
        }
        let limit = 1.0 / (1.0 - lambda * gamma);
        for i in 0..2 {
            assert!((tr.z[i] - g[i] * limit).abs() < 1e-10);
        }
    }

    #[test]
    fn sigma_examples() {
        let mut tr = TraceState::new(2, 0.8, 1.0).unwrap();
        let sigma = tr
            .update_sigma_bar(&ParamVector::from_vec(vec![0.0, 0.0]), &[1.0, 1.0])
            .unwrap();
        assert_eq!(sigma, 0.0);
        let sigma = tr
            .update_sigma_bar(&ParamVector::from_vec(vec![3.0, 4.0]), &[1.0, 1.0])
            .unwrap();
        assert_eq!(sigma, 25.0);
    }

    #[test]
    fn sigma_bar_constant_stream() {
        let mut tr = TraceState::new(2, 0.8, 1.0).unwrap();
        let g = ParamVector::from_vec(vec![3.0, 4.0]);
        for _ in 0..500 {
            tr.update_sigma_bar(&g, &[1.0, 1.0]).unwrap();
            assert_eq!(tr.sigma_bar.value, 25.0);
        }
    }

    #[test]
    fn discounted_sum_matches_direct_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tr = TraceState::new(1, 0.8, 0.9).unwrap();
        let k = tr.decay();
        let mut direct = 0.0;
        for _ in 0..300 {
            let g = ParamVector::from_vec(vec![rng.random_range(-2.0..2.0)]);
            tr.update_sigma_bar(&g, &[1.0]).unwrap();
            direct = k * direct + g[0] * g[0];
            let agg = tr.sigma_bar_aggregate(SigmaConvention::DiscountedSum);
            assert!((agg - direct).abs() <= 1e-10 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn nlms_basic_examples() {
        let g = ParamVector::from_vec(vec![1.0, 0.0]);
        let s = nlms_alpha(0.5, &g, &g, NlmsMode::Exact);
        assert_eq!(s.alpha, 0.5);
        assert!(!s.degenerate);
        let s = nlms_alpha(0.0, &g, &g, NlmsMode::Exact);
        assert_eq!(s.alpha, 0.0);
    }

    #[test]
    fn nlms_one_step_interpolation() {
        // Linear regression with eta = 1: the update lands exactly on the label.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: f64 = rng.random_range(-3.0..3.0);
            let mut w = ParamVector::from_vec((0..4).map(|_| rng.random_range(-1.0..1.0)).collect());
            let xs = ParamVector::from_vec(x.clone());
            let pred: f64 = w.as_slice().iter().zip(&x).map(|(a, b)| a * b).sum();
            let err = y - pred;
            let dir = {
                let mut d = xs.clone();
                for v in d.as_mut_slice() {
                    *v *= err;
                }
                d
            };
            let s = nlms_alpha(err, &xs, &dir, NlmsMode::Exact);
            w.add_scaled(s.alpha, &dir);
            let post: f64 = w.as_slice().iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!((post - y).abs() <= 1e-12, "post {post} vs label {y}");
        }
    }

    #[test]
    fn nlms_degenerate_denominator_flags() {
        let g = ParamVector::from_vec(vec![0.0, 0.0]);
        let s = nlms_alpha(1.0, &g, &g, NlmsMode::Exact);
        assert!(s.degenerate);
        assert_eq!(s.alpha, 1.0 / EPS_DENOM);
        let s = nlms_alpha(1.0, &g, &g, NlmsMode::CauchySchwarz);
        assert!(s.degenerate);
    }

    #[test]
    fn intentional_alpha_reduces_to_grad_norm_rule() {
        // lambda = 0, rho = 1: alpha = eta / ||g||^2.
        let mut tr = TraceState::new(2, 0.0, 0.99).unwrap();
        let g = ParamVector::from_vec(vec![1.0, 0.0]);
        let rho = vec![1.0, 1.0];
        tr.update_sigma_bar(&g, &rho).unwrap();
        tr.accumulate(&g).unwrap();
        let s = intentional_alpha_trace(&tr, &rho, 0.5, None);
        assert_eq!(s.alpha, 0.5);

        let mut tr = TraceState::new(2, 0.0, 0.99).unwrap();
        let g = ParamVector::from_vec(vec![3.0, 4.0]);
        tr.update_sigma_bar(&g, &rho).unwrap();
        tr.accumulate(&g).unwrap();
        let s = intentional_alpha_trace(&tr, &rho, 1.0, None);
        assert!((s.alpha - 1.0 / 25.0).abs() < 1e-16);
    }

    #[test]
    fn coherent_regime_realized_change_closed_form() {
        // Constant gradient, frozen rho = 1. Closed-form oracle (geometric
        // series + constant-stream EMA fixed point): the running-average
        // aggregate gives a per-step current-state change of exactly
        // eta * delta at every t, while the naive rule gives
        // eta * delta * (1 - k) / (1 - k^t).
        let (lambda, gamma, eta) = (0.8, 1.0, 0.25);
        let k = lambda * gamma;
        let g = ParamVector::from_vec(vec![1.0, -1.0, 1.0]);
        let rho = vec![1.0; 3];
        let delta = 0.7;

        let mut tr_int = TraceState::new(3, lambda, gamma).unwrap();
        let mut tr_naive = TraceState::new(3, lambda, gamma).unwrap();
        let mut k_pow = 1.0;
        for _ in 1..=400u32 {
            k_pow *= k;
            for tr in [&mut tr_int, &mut tr_naive] {
                tr.update_sigma_bar(&g, &rho).unwrap();
                tr.accumulate(&g).unwrap();
            }
            let a_int = intentional_alpha_trace(&tr_int, &rho, eta, None).alpha;
            let a_naive = naive_trace_alpha(&tr_naive, &rho, eta).alpha;
            // First-order change at the repeated state: alpha * delta * <g, rho z>.
            let gz: f64 = g.as_slice().iter().zip(tr_int.z.as_slice()).map(|(a, b)| a * b).sum();
            let change_int = a_int * delta * gz;
            let change_naive = a_naive * delta * gz;
            let predicted_naive = eta * delta * (1.0 - k) / (1.0 - k_pow);
            assert!((change_int - eta * delta).abs() <= 1e-12);
            assert!((change_naive - predicted_naive).abs() <= 1e-12);
        }
    }

    #[test]
    fn naive_alpha_examples() {
        let mut tr = TraceState::new(2, 0.0, 1.0).unwrap();
        let g = ParamVector::from_vec(vec![1.0, 0.0]);
        let rho = vec![1.0, 1.0];
        tr.update_sigma_bar(&g, &rho).unwrap();
        tr.accumulate(&g).unwrap();
        assert_eq!(naive_trace_alpha(&tr, &rho, 0.5).alpha, 0.5);
    }

    #[test]
    fn guarded_alpha_examples() {
        let s = guarded_alpha(4.0, 4.0, 1.0);
        assert_eq!(s.alpha, 0.25);
        assert!(!s.degenerate);

        // Guard engages: denominator sqrt(0.01 * 100) = 1 instead of 0.01.
        let s = guarded_alpha(0.01, 100.0, 1.0);
        assert_eq!(s.alpha, 1.0);

        let s = guarded_alpha(0.0, 5.0, 1.0);
        assert!(s.degenerate);
        assert_eq!(s.alpha, 1.0 / EPS_DENOM);
    }

    #[test]
    fn advantage_normalize_first_steps() {
        let mut scale = Ema::new(0.9998).unwrap();
        assert_eq!(advantage_normalize(&mut scale, 2.0), 1.0);

        let mut scale = Ema::new(0.9998).unwrap();
        assert_eq!(advantage_normalize(&mut scale, -2.0), -1.0);

        let mut scale = Ema::new(0.9998).unwrap();
        assert_eq!(advantage_normalize(&mut scale, 0.0), 0.0);
    }

    #[test]
    fn advantage_normalize_long_run_unit_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut scale = Ema::new(0.9998).unwrap();
        let mut sum_abs = 0.0;
        let n = 100_000;
        for _ in 0..n {
            // i.i.d. advantages with nonzero mean absolute value.
            let a = rng.random_range(-1.0..1.0) * 3.0 + 0.2;
            sum_abs += advantage_normalize(&mut scale, a).abs();
        }
        let mean_abs = sum_abs / n as f64;
        assert!((mean_abs - 1.0).abs() < 0.05, "running mean |A~| = {mean_abs}");
    }

    #[test]
    fn alpha_cap_applies() {
        let mut tr = TraceState::new(1, 0.0, 1.0).unwrap();
        let g = ParamVector::from_vec(vec![0.1]);
        let rho = vec![1.0];
        tr.update_sigma_bar(&g, &rho).unwrap();
        tr.accumulate(&g).unwrap();
        let uncapped = intentional_alpha_trace(&tr, &rho, 1.0, None).alpha;
        assert!(uncapped > 1.0);
        assert_eq!(intentional_alpha_trace(&tr, &rho, 1.0, Some(1.0)).alpha, 1.0);
    }

    proptest! {
        #[test]
        fn ema_constant_stream_fixed_point(beta in 0.0f64..0.9999, c in -100.0f64..100.0, n in 1usize..300) {
            let mut e = Ema::new(beta).unwrap();
            for _ in 0..n {
                prop_assert_eq!(e.update(c), c);
            }
        }

        #[test]
        fn guard_never_increases_step(u in 0.0f64..1e6, u_bar in 0.0f64..1e6, eta in 1e-3f64..10.0) {
            let guarded = guarded_alpha(u, u_bar, eta).alpha;
            let unguarded = eta / u.max(EPS_DENOM);
            prop_assert!(guarded <= unguarded * (1.0 + 1e-12));
            if u >= u_bar {
                prop_assert!((guarded - unguarded).abs() <= 1e-12 * unguarded);
            }
        }

        #[test]
        fn alphas_finite_and_positive(
            gs in proptest::collection::vec(-50.0f64..50.0, 1..6),
            eta in 1e-3f64..10.0,
            lambda in 0.0f64..0.99,
        ) {
            let dim = gs.len();
            let g = ParamVector::from_vec(gs);
            let rho = vec![1.0; dim];
            let mut tr = TraceState::new(dim, lambda, 1.0).unwrap();
            tr.update_sigma_bar(&g, &rho).unwrap();
            tr.accumulate(&g).unwrap();
            for s in [
                intentional_alpha_trace(&tr, &rho, eta, None),
                naive_trace_alpha(&tr, &rho, eta),
            ] {
                prop_assert!(s.alpha.is_finite());
                prop_assert!(s.alpha > 0.0);
            }
        }
    }
}
