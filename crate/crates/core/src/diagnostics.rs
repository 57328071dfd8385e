//! Measurements over recorded step reports: fidelity ratios (realized over
//! intended functional change), effective-update variability, a local-KL
//! proxy check, prediction RMSE against an oracle, and the analytic FLOPs
//! cost model. Pure functions; safe to run over report streams concurrently.

use crate::agents::StepReport;
use crate::approx::{forward_value, Architecture, Observation, ParamVector, PolicyDistribution};
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Summary statistics of a ratio distribution. Percentiles use linear
/// interpolation between order statistics; std is the population standard
/// deviation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioSummary {
    pub mean: f64,
    pub std: f64,
    pub p1: f64,
    pub p99: f64,
    pub n: usize,
}

pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

fn summarize(mut values: Vec<f64>) -> Result<RatioSummary> {
    if values.is_empty() {
        return Err(Error::config("cannot summarize an empty stream"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(RatioSummary { mean, std: var.sqrt(), p1: percentile(&values, 0.01), p99: percentile(&values, 0.99), n })
}

/// Fidelity of the first-order step-size derivation: statistics of
/// realized_change / intended_change. Degenerate-flagged steps (and steps
/// with a zero intended change, which have no ratio) are excluded from the
/// summary and counted separately.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelitySummary {
    pub ratios: RatioSummary,
    pub excluded: usize,
}

pub fn fidelity_summary(reports: &[StepReport]) -> Result<FidelitySummary> {
    if reports.is_empty() {
        return Err(Error::config("fidelity_summary needs at least one step report"));
    }
    let mut ratios = Vec::with_capacity(reports.len());
    let mut excluded = 0usize;
    for r in reports {
        if r.degenerate || r.intended_change == 0.0 {
            excluded += 1;
        } else {
            ratios.push(r.realized_change / r.intended_change);
        }
    }
    Ok(FidelitySummary { ratios: summarize(ratios)?, excluded })
}

/// Variability of the realized parameter step: the 99th percentile of
/// ||Δw|| / |δ| over its average. Steps with |δ| at or below 1e-12 are
/// skipped.
pub fn effective_update_summary(reports: &[StepReport]) -> Result<f64> {
    let mut sizes: Vec<f64> = reports
        .iter()
        .filter(|r| r.delta.abs() > 1e-12)
        .map(|r| r.param_step_norm / r.delta.abs())
        .collect();
    if sizes.is_empty() {
        return Err(Error::config("effective_update_summary needs steps with |delta| > 1e-12"));
    }
    let mean = sizes.iter().sum::<f64>() / sizes.len() as f64;
    sizes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(percentile(&sizes, 0.99) / mean)
}

/// Exact (or Monte Carlo) KL against the half-expected-squared-dlogp proxy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlProxy {
    pub kl: f64,
    pub half_expected_sq_dlogp: f64,
}

/// KL(before || after) and the local proxy 0.5 E_{a~before}[(Δlog π(a))²].
/// Softmax pairs are computed by exact summation; Gaussian pairs use the
/// closed-form KL and a seeded Monte Carlo estimate of the proxy with
/// `n_samples` draws.
pub fn kl_proxy_check(
    before: &PolicyDistribution,
    after: &PolicyDistribution,
    n_samples: usize,
    seed: u64,
) -> Result<KlProxy> {
    let kl = before.kl(after)?;
    let proxy = match (before, after) {
        (PolicyDistribution::Softmax { .. }, PolicyDistribution::Softmax { .. }) => {
            let p = before.probs();
            let mut acc = 0.0;
            for (a, pa) in p.iter().enumerate() {
                let action = crate::approx::Action::Discrete(a);
                let d = after.log_prob(&action)? - before.log_prob(&action)?;
                acc += pa * d * d;
            }
            0.5 * acc
        }
        (PolicyDistribution::Gaussian { .. }, PolicyDistribution::Gaussian { .. }) => {
            if n_samples == 0 {
                return Err(Error::config("gaussian proxy needs n_samples > 0"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut acc = 0.0;
            for _ in 0..n_samples {
                let a = before.sample(&mut rng);
                let d = after.log_prob(&a)? - before.log_prob(&a)?;
                acc += d * d;
            }
            0.5 * acc / n_samples as f64
        }
        _ => return Err(Error::config("cannot compare distributions of different kinds")),
    };
    Ok(KlProxy { kl, half_expected_sq_dlogp: proxy })
}

/// Root mean squared prediction error over a visitation-weighted state
/// sample: sqrt(mean((V(s_i) - oracle_i)^2)).
pub fn prediction_rmse(
    params: &ParamVector,
    arch: &Architecture,
    states: &[Observation],
    oracle_values: &[f64],
) -> Result<f64> {
    if states.is_empty() || states.len() != oracle_values.len() {
        return Err(Error::config("states and oracle values must be non-empty and equal length"));
    }
    let mut acc = 0.0;
    for (s, g) in states.iter().zip(oracle_values.iter()) {
        let v = forward_value(params, arch, s)?;
        acc += (v - g) * (v - g);
    }
    Ok((acc / states.len() as f64).sqrt())
}

/// Analytic per-update cost model in units of N (parameters per network):
/// the streaming actor–critic against a replay-based soft actor–critic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopsModel {
    /// Named per-network cost components of one streaming intentional update.
    pub intentional_components: Vec<(String, u64)>,
    pub intentional_per_network: u64,
    /// Two networks plus the TD-target forward pass.
    pub intentional_ac_total: u64,
    /// Batched gradient work per SAC network (batch 256).
    pub sac_gradient_per_network: u64,
    /// Adam bookkeeping per SAC network.
    pub sac_adam_per_network: u64,
    pub sac_per_network: u64,
    /// Three trained networks plus two target-network batch forwards.
    pub sac_total: u64,
}

impl FlopsModel {
    pub fn ratio(&self) -> f64 {
        self.sac_total as f64 / self.intentional_ac_total as f64
    }
}

pub fn flops_model() -> FlopsModel {
    let intentional_components: Vec<(String, u64)> = [
        ("forward pass", 2),
        ("backward pass", 4),
        ("rms scaling", 5),
        ("gradient norm", 3),
        ("trace update", 2),
        ("trace norm", 3),
        ("parameter update", 3),
    ]
    .into_iter()
    .map(|(name, c)| (name.to_string(), c))
    .collect();
    let intentional_per_network: u64 = intentional_components.iter().map(|(_, c)| c).sum();
    let intentional_ac_total = 2 * intentional_per_network + 2;

    let batch = 256;
    let sac_gradient_per_network = (2 + 4 + 1) * batch;
    let sac_adam_per_network = 5 + 3 + 3;
    let sac_per_network = sac_gradient_per_network + sac_adam_per_network;
    let sac_total = 3 * sac_per_network + 2 * batch * 2;

    FlopsModel {
        intentional_components,
        intentional_per_network,
        intentional_ac_total,
        sac_gradient_per_network,
        sac_adam_per_network,
        sac_per_network,
        sac_total,
    }
}

impl std::fmt::Display for FlopsModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Per-update cost model (N = parameters per network)")?;
        writeln!(f, "\nStreaming intentional update, per network:")?;
        for (name, c) in &self.intentional_components {
            writeln!(f, "  {name:<18} {c:>5}N")?;
        }
        writeln!(f, "  {:<18} {:>5}N", "total", self.intentional_per_network)?;
        writeln!(
            f,
            "Intentional AC total (2 networks + TD target): {}N",
            self.intentional_ac_total
        )?;
        writeln!(
            f,
            "\nSAC per network: {}N gradient (batch 256) + {}N Adam = {}N",
            self.sac_gradient_per_network, self.sac_adam_per_network, self.sac_per_network
        )?;
        writeln!(
            f,
            "SAC total (3 trained networks + 2 target forwards): {}N",
            self.sac_total
        )?;
        writeln!(
            f,
            "\nSAC / Intentional AC per-update ratio: {}/{} = {:.2} (≈ 140)",
            self.sac_total,
            self.intentional_ac_total,
            self.ratio()
        )
    }
}
