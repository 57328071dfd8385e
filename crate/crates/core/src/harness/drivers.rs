//! Per-seed experiment drivers shared by the harness runner and the
//! acceptance suite. Each driver confines one agent/environment pair to the
//! calling thread and is fully deterministic given its seed.

use crate::agents::{ac_step, AgentConfig, Learner, StepReport, UpdateRule};
use crate::approx::{Action, Architecture, Head, Observation, ParamVector, sparse_init};
use crate::diagnostics::{
    effective_update_summary, fidelity_summary, percentile, prediction_rmse, FidelitySummary,
};
use crate::envs::{analytic_values, tabular_observation, uniform_policy, value_iteration, Env};
use crate::error::{Error, Result};
use crate::harness::config::{Experiment, RunConfig};
use crate::intent::Ema;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Mix a run seed with a stream tag so each consumer of randomness gets an
/// independent, reproducible stream.
pub fn subseed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(tag)
}

/// Training budget: raw environment steps, or completed episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Steps(u64),
    Episodes(u64),
}

/// One learning-curve row. `return_mean` and `rmse` are NaN where the
/// experiment does not produce them in a window.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub return_mean: f64,
    pub rmse: f64,
    pub alpha_mean: f64,
    pub alpha_p99: f64,
    pub degenerate_count: u64,
}

/// Scalar summaries a seed run may produce, depending on the experiment.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SeedStats {
    pub final_rmse: Option<f64>,
    /// States whose learned greedy action is optimal under value iteration.
    pub policy_match: Option<usize>,
    pub policy_states: Option<usize>,
    pub prob_best_arm: Option<f64>,
    /// Fraction of non-degenerate policy steps with realized/intended in
    /// [0.9, 1.1].
    pub band_fraction: Option<f64>,
    pub fidelity_value: Option<FidelitySummary>,
    pub fidelity_policy: Option<FidelitySummary>,
    pub effective_update_ratio: Option<f64>,
    pub mean_return_final_window: Option<f64>,
    pub diverged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerSeedSummary {
    pub seed: u64,
    pub final_metric: f64,
    pub episodes: u64,
    pub degenerate_total: u64,
    #[serde(flatten)]
    pub stats: SeedStats,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub rows: Vec<LogRow>,
    /// The experiment's primary metric at the end of training (RMSE for
    /// prediction, mean return for control).
    pub final_metric: f64,
    pub episodes: u64,
    pub degenerate_total: u64,
    pub stats: SeedStats,
}

impl SeedRun {
    pub fn summary(&self) -> PerSeedSummary {
        PerSeedSummary {
            seed: self.seed,
            final_metric: self.final_metric,
            episodes: self.episodes,
            degenerate_total: self.degenerate_total,
            stats: self.stats.clone(),
        }
    }
}

/// Rolling per-window accumulators behind the learning-curve rows.
struct WindowLog {
    log_every: u64,
    rows: Vec<LogRow>,
    returns: Vec<f64>,
    alphas: Vec<f64>,
    degenerate: u64,
    degenerate_total: u64,
    step: u64,
}

impl WindowLog {
    fn new(log_every: u64) -> Self {
        WindowLog {
            log_every,
            rows: Vec::new(),
            returns: Vec::new(),
            alphas: Vec::new(),
            degenerate: 0,
            degenerate_total: 0,
            step: 0,
        }
    }

    fn record_step(&mut self, report: &StepReport) {
        self.step += 1;
        self.alphas.push(report.alpha);
        if report.degenerate {
            self.degenerate += 1;
            self.degenerate_total += 1;
        }
    }

    fn record_return(&mut self, ret: f64) {
        self.returns.push(ret);
    }

    fn boundary(&self) -> bool {
        self.step % self.log_every == 0
    }

    fn flush(&mut self, rmse: f64) {
        let return_mean = if self.returns.is_empty() {
            f64::NAN
        } else {
            self.returns.iter().sum::<f64>() / self.returns.len() as f64
        };
        let (alpha_mean, alpha_p99) = if self.alphas.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let mean = self.alphas.iter().sum::<f64>() / self.alphas.len() as f64;
            let mut sorted = self.alphas.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (mean, percentile(&sorted, 0.99))
        };
        self.rows.push(LogRow {
            step: self.step,
            return_mean,
            rmse,
            alpha_mean,
            alpha_p99,
            degenerate_count: self.degenerate,
        });
        self.returns.clear();
        self.alphas.clear();
        self.degenerate = 0;
    }
}

fn tabular_value_learner(config: &RunConfig, rule: UpdateRule) -> Result<Learner> {
    let n = config
        .env
        .n_tabular_states()
        .ok_or_else(|| Error::config("prediction experiments need a tabular env"))?;
    let dim = n + usize::from(config.env.append_time_feature);
    let arch = Architecture::linear(dim, Head::ScalarValue);
    let mut agent_cfg = config.agent.to_agent_config(config.agent.eta, rule);
    // The random-walk prediction benchmark is undiscounted.
    agent_cfg.gamma = config.agent.gamma;
    Learner::new(arch, ParamVector::zeros(dim), agent_cfg)
}

/// Streaming TD prediction on the random walk under the uniform-random
/// behavior policy, measuring RMSE against the analytic values.
pub fn run_td_prediction(
    config: &RunConfig,
    rule: UpdateRule,
    seed: u64,
    budget: Budget,
) -> Result<SeedRun> {
    let oracle = analytic_values(&config.env, config.agent.gamma, uniform_policy(&config.env))?;
    let n_states = config.env.n_tabular_states().unwrap();
    let states: Vec<Observation> =
        (0..n_states).map(|s| tabular_observation(&config.env, s)).collect();

    let mut learner = tabular_value_learner(config, rule)?;
    let mut env = Env::new(config.env.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, 0xAC7));
    let mut log = WindowLog::new(config.log_every);
    let mut episodes = 0u64;
    let mut ep_return = 0.0;
    let mut stats = SeedStats::default();

    let rmse_now = |l: &Learner| -> f64 {
        prediction_rmse(&l.params, &l.arch, &states, &oracle).unwrap_or(f64::INFINITY)
    };

    loop {
        match budget {
            Budget::Steps(n) if log.step >= n => break,
            Budget::Episodes(n) if episodes >= n => break,
            _ => {}
        }
        if env.episode_finished() {
            env.reset();
        }
        let action = Action::Discrete(rng.random_range(0..2usize));
        let tr = env.step(&action)?;
        ep_return += tr.r;
        match learner.td_step(&tr) {
            Ok(report) => log.record_step(&report),
            Err(Error::Numerical(_)) => {
                stats.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
        if tr.terminated || tr.truncated {
            episodes += 1;
            log.record_return(ep_return);
            ep_return = 0.0;
        }
        if log.boundary() {
            let r = rmse_now(&learner);
            log.flush(r);
        }
    }
    let final_rmse = if stats.diverged { f64::INFINITY } else { rmse_now(&learner) };
    if !log.rows.last().map(|r| r.step == log.step).unwrap_or(false) {
        log.flush(final_rmse);
    }
    stats.final_rmse = Some(final_rmse);
    Ok(SeedRun {
        seed,
        final_metric: final_rmse,
        episodes,
        degenerate_total: log.degenerate_total,
        stats,
        rows: log.rows,
    })
}

/// Tabular Q(λ) control on the gridworld with epsilon-greedy exploration
/// decaying linearly from 1 to 0.01 over the first 5% of the budget.
pub fn run_q_control(config: &RunConfig, seed: u64, total_steps: u64) -> Result<SeedRun> {
    let n_states = config
        .env
        .n_tabular_states()
        .ok_or_else(|| Error::config("q_control needs a tabular env"))?;
    let n_actions = config.env.n_actions().unwrap();
    let dim = (n_states + usize::from(config.env.append_time_feature)) * n_actions;
    let arch = Architecture::linear(
        n_states + usize::from(config.env.append_time_feature),
        Head::QValues { n_actions },
    );
    let mut learner = Learner::new(
        arch,
        ParamVector::zeros(dim),
        config.agent.to_agent_config(config.agent.eta, config.agent.configured_rule()),
    )?;
    let mut env = Env::new(config.env.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, 0xE6));
    let mut log = WindowLog::new(config.log_every);
    let mut episodes = 0u64;
    let mut ep_return = 0.0;
    let mut stats = SeedStats::default();

    let decay_steps = (total_steps as f64 * 0.05).max(1.0);
    for step in 0..total_steps {
        if env.episode_finished() {
            env.reset();
        }
        let eps = (1.0 - 0.99 * step as f64 / decay_steps).max(0.01);
        let obs = tabular_observation(&config.env, env.state_index().unwrap());
        let action = if rng.random_range(0.0..1.0) < eps {
            Action::Discrete(rng.random_range(0..n_actions))
        } else {
            let q = learner.q_values(&obs)?;
            Action::Discrete(argmax(&q))
        };
        let tr = env.step(&action)?;
        ep_return += tr.r;
        match learner.q_step(&tr) {
            Ok(report) => log.record_step(&report),
            Err(Error::Numerical(_)) => {
                stats.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
        if tr.terminated || tr.truncated {
            episodes += 1;
            log.record_return(ep_return);
            ep_return = 0.0;
        }
        if log.boundary() {
            log.flush(f64::NAN);
        }
    }
    if !log.rows.last().map(|r| r.step == log.step).unwrap_or(false) {
        log.flush(f64::NAN);
    }

    // Greedy-policy agreement with the value-iteration oracle; ties in the
    // oracle count as a match for any tied action.
    let oracle = value_iteration(&config.env, config.agent.gamma)?;
    let mut matches = 0usize;
    for s in 0..n_states {
        let obs = tabular_observation(&config.env, s);
        let q = learner.q_values(&obs)?;
        if oracle.optimal_actions[s].contains(&argmax(&q)) {
            matches += 1;
        }
    }
    stats.policy_match = Some(matches);
    stats.policy_states = Some(n_states);
    let final_return = log
        .rows
        .iter()
        .rev()
        .find(|r| !r.return_mean.is_nan())
        .map(|r| r.return_mean)
        .unwrap_or(f64::NAN);
    stats.mean_return_final_window = Some(final_return);
    Ok(SeedRun {
        seed,
        final_metric: final_return,
        episodes,
        degenerate_total: log.degenerate_total,
        stats,
        rows: log.rows,
    })
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax policy-gradient bandit with the reward-minus-running-baseline
/// advantage, clipped through the actor's own clip state.
pub fn run_pg_bandit(config: &RunConfig, seed: u64, total_steps: u64) -> Result<SeedRun> {
    let n_arms = config.env.n_actions().unwrap();
    let arch = Architecture::linear(1, Head::SoftmaxPolicy { n_actions: n_arms });
    let mut actor = Learner::new(
        arch,
        ParamVector::zeros(n_arms),
        config.agent.to_agent_config(config.agent.eta_actor, config.agent.configured_rule()),
    )?;
    let mut env = Env::new(config.env.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, 0xAC7));
    let mut baseline = Ema::new(0.999)?;
    let mut log = WindowLog::new(config.log_every);
    let mut stats = SeedStats::default();
    let mut reports: Vec<StepReport> = Vec::new();
    let best_arm = match &config.env.kind {
        crate::envs::EnvKind::Bandit { arm_means, .. } => argmax(arm_means),
        _ => return Err(Error::config("pg_bandit needs a bandit env")),
    };

    for _ in 0..total_steps {
        let obs = env.reset();
        let action = actor.policy(&obs)?.sample(&mut rng);
        let tr = env.step(&action)?;
        let advantage = actor.clip_signal(tr.r - baseline.value);
        baseline.update(tr.r);
        match actor.pg_step(&tr, advantage) {
            Ok(report) => {
                log.record_step(&report);
                reports.push(report);
            }
            Err(Error::Numerical(_)) => {
                stats.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
        log.record_return(tr.r);
        if log.boundary() {
            log.flush(f64::NAN);
        }
    }
    if !log.rows.last().map(|r| r.step == log.step).unwrap_or(false) {
        log.flush(f64::NAN);
    }

    let p_best = actor.policy(&Observation::new(vec![config.env.feature_scale]))?.probs()[best_arm];
    stats.prob_best_arm = Some(p_best);
    let mut in_band = 0u64;
    let mut counted = 0u64;
    for r in &reports {
        if !r.degenerate && r.intended_change != 0.0 {
            counted += 1;
            if (0.9..=1.1).contains(&(r.realized_change / r.intended_change)) {
                in_band += 1;
            }
        }
    }
    stats.band_fraction = (counted > 0).then(|| in_band as f64 / counted as f64);
    stats.fidelity_policy = fidelity_summary(&reports).ok();
    let final_return = log
        .rows
        .iter()
        .rev()
        .find(|r| !r.return_mean.is_nan())
        .map(|r| r.return_mean)
        .unwrap_or(f64::NAN);
    stats.mean_return_final_window = Some(final_return);
    Ok(SeedRun {
        seed,
        final_metric: final_return,
        episodes: log.step,
        degenerate_total: log.degenerate_total,
        stats,
        rows: log.rows,
    })
}

/// Build the actor/critic pair for the point-mass experiments from the
/// configured widths and initialization.
pub fn build_ac_pair(config: &RunConfig, seed: u64) -> Result<(Learner, Learner)> {
    let obs_dim = config.env.obs_dim();
    let hidden = if config.agent.hidden.is_empty() { vec![32, 32] } else { config.agent.hidden.clone() };
    let actor_arch = Architecture::mlp(
        obs_dim,
        hidden.clone(),
        config.agent.layernorm,
        Head::GaussianPolicy { action_dim: config.env.action_dim().unwrap_or(1) },
    )
    .with_sparse_init(config.agent.sparse_init_ratio);
    let critic_arch = Architecture::mlp(obs_dim, hidden, config.agent.layernorm, Head::ScalarValue)
        .with_sparse_init(config.agent.sparse_init_ratio);
    let actor_params = sparse_init(&actor_arch, subseed(seed, 1))?;
    let critic_params = sparse_init(&critic_arch, subseed(seed, 2))?;
    let mut actor_cfg =
        config.agent.to_agent_config(config.agent.eta_actor, config.agent.configured_rule());
    actor_cfg.xi = config.agent.xi;
    let critic_cfg = config.agent.to_agent_config(config.agent.eta, config.agent.configured_rule());
    let actor = Learner::new(actor_arch, actor_params, actor_cfg)?;
    let critic = Learner::new(critic_arch, critic_params, critic_cfg)?;
    Ok((actor, critic))
}

/// Streaming actor–critic on the point mass. Collects both learners' step
/// reports; fidelity summaries are attached when lambda = 0 (the regime
/// where the intended change is exact to first order).
pub fn run_ac_control(config: &RunConfig, seed: u64, total_steps: u64) -> Result<SeedRun> {
    let (mut actor, mut critic) = build_ac_pair(config, seed)?;
    let mut env = Env::new(config.env.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, 0xAC7));
    let mut log = WindowLog::new(config.log_every);
    let mut episodes = 0u64;
    let mut ep_return = 0.0;
    let mut stats = SeedStats::default();
    let mut actor_reports: Vec<StepReport> = Vec::new();
    let mut critic_reports: Vec<StepReport> = Vec::new();

    for _ in 0..total_steps {
        if env.episode_finished() {
            env.reset();
        }
        let obs = env.last_observation();
        let action = actor.policy(&obs)?.sample(&mut rng);
        let tr = env.step(&action)?;
        ep_return += tr.r;
        match ac_step(&mut actor, &mut critic, &tr) {
            Ok((a_report, c_report)) => {
                log.record_step(&c_report);
                actor_reports.push(a_report);
                critic_reports.push(c_report);
            }
            Err(Error::Numerical(_)) => {
                stats.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
        if tr.terminated || tr.truncated {
            episodes += 1;
            log.record_return(ep_return);
            ep_return = 0.0;
        }
        if log.boundary() {
            log.flush(f64::NAN);
        }
    }
    if !log.rows.last().map(|r| r.step == log.step).unwrap_or(false) {
        log.flush(f64::NAN);
    }

    if config.agent.lambda == 0.0 {
        stats.fidelity_value = fidelity_summary(&critic_reports).ok();
        stats.fidelity_policy = fidelity_summary(&actor_reports).ok();
        let mut in_band = 0u64;
        let mut counted = 0u64;
        for r in &actor_reports {
            if !r.degenerate && r.intended_change != 0.0 {
                counted += 1;
                if (0.9..=1.1).contains(&(r.realized_change / r.intended_change)) {
                    in_band += 1;
                }
            }
        }
        stats.band_fraction = (counted > 0).then(|| in_band as f64 / counted as f64);
    }
    stats.effective_update_ratio = effective_update_summary(&critic_reports).ok();
    let final_return = log
        .rows
        .iter()
        .rev()
        .find(|r| !r.return_mean.is_nan())
        .map(|r| r.return_mean)
        .unwrap_or(f64::NAN);
    stats.mean_return_final_window = Some(final_return);
    Ok(SeedRun {
        seed,
        final_metric: final_return,
        episodes,
        degenerate_total: log.degenerate_total,
        stats,
        rows: log.rows,
    })
}

/// Mean undiscounted return of the uniform-random continuous policy; the
/// baseline the trained point-mass agent must beat.
pub fn random_policy_returns(config: &RunConfig, seed: u64, episodes: u64) -> Result<Vec<f64>> {
    let mut env = Env::new(config.env.clone(), subseed(seed, 0xBA5E))?;
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, 0xBA5F));
    let mut out = Vec::with_capacity(episodes as usize);
    for _ in 0..episodes {
        env.reset();
        let mut ret = 0.0;
        loop {
            let action = Action::Continuous(vec![rng.random_range(-1.0..1.0)]);
            let tr = env.step(&action)?;
            ret += tr.r;
            if tr.terminated || tr.truncated {
                break;
            }
        }
        out.push(ret);
    }
    Ok(out)
}

/// Dispatch a single seed of the configured experiment.
pub fn run_seed(config: &RunConfig, seed: u64) -> Result<SeedRun> {
    match config.experiment {
        Experiment::TdPrediction => {
            run_td_prediction(config, config.agent.configured_rule(), seed, Budget::Steps(config.total_steps))
        }
        Experiment::AblationNaive => {
            run_td_prediction(config, UpdateRule::NaiveTrace, seed, Budget::Steps(config.total_steps))
        }
        Experiment::AblationConstant => run_td_prediction(
            config,
            UpdateRule::ConstantAlpha(config.agent.constant_alpha),
            seed,
            Budget::Steps(config.total_steps),
        ),
        Experiment::QControl => run_q_control(config, seed, config.total_steps),
        Experiment::PgBandit => run_pg_bandit(config, seed, config.total_steps),
        Experiment::AcControl | Experiment::Fidelity => {
            run_ac_control(config, seed, config.total_steps)
        }
        Experiment::BiasDemo | Experiment::Flops => Err(Error::config(
            "bias_demo and flops do not run per-seed simulations",
        )),
    }
}
