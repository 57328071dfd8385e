//! Desk-scale streaming environments with analytic oracles, plus the
//! time-limit truncation protocol: timeouts set `truncated` (the learner
//! keeps bootstrapping), true terminals set `terminated`.

use crate::agents::Transition;
use crate::approx::{Action, Observation};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EnvKind {
    /// Classic bounded random walk: states 1..=n, start at the center,
    /// stepping off either end terminates with the configured reward.
    RandomWalk { n_states: usize, left_reward: f64, right_reward: f64 },
    /// Deterministic gridworld; bumping a wall stays in place, entering the
    /// goal terminates.
    Gridworld {
        width: usize,
        height: usize,
        start: (usize, usize),
        goal: (usize, usize),
        goal_reward: f64,
        step_cost: f64,
    },
    /// Single-state Gaussian bandit; every pull is a one-step episode.
    Bandit { arm_means: Vec<f64>, arm_stds: Vec<f64> },
    /// 1-D double integrator with action clamped to [-1, 1] and quadratic
    /// state cost as negative reward; episodes end only by truncation.
    PointMass { dt: f64, noise_std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub time_limit: Option<usize>,
    pub append_time_feature: bool,
    /// Multiplier applied to every observation feature (not the time
    /// feature); the scale-robustness experiments set this to 10.
    pub feature_scale: f64,
}

impl EnvSpec {
    pub fn new(kind: EnvKind) -> Self {
        EnvSpec { kind, time_limit: None, append_time_feature: false, feature_scale: 1.0 }
    }

    pub fn random_walk(n_states: usize) -> Self {
        EnvSpec::new(EnvKind::RandomWalk { n_states, left_reward: -1.0, right_reward: 1.0 })
    }

    pub fn with_time_limit(mut self, limit: usize, append_time_feature: bool) -> Self {
        self.time_limit = Some(limit);
        self.append_time_feature = append_time_feature;
        self
    }

    pub fn with_feature_scale(mut self, scale: f64) -> Self {
        self.feature_scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.append_time_feature && self.time_limit.is_none() {
            return Err(Error::config("append_time_feature requires a time_limit"));
        }
        if let Some(0) = self.time_limit {
            return Err(Error::config("time_limit must be positive"));
        }
        if self.feature_scale <= 0.0 || !self.feature_scale.is_finite() {
            return Err(Error::config("feature_scale must be positive and finite"));
        }
        match &self.kind {
            EnvKind::RandomWalk { n_states, .. } => {
                if *n_states < 3 || n_states % 2 == 0 {
                    return Err(Error::config("random_walk needs an odd n_states >= 3"));
                }
            }
            EnvKind::Gridworld { width, height, start, goal, .. } => {
                if *width == 0 || *height == 0 {
                    return Err(Error::config("gridworld dimensions must be positive"));
                }
                for (name, cell) in [("start", start), ("goal", goal)] {
                    if cell.0 >= *width || cell.1 >= *height {
                        return Err(Error::config(format!("gridworld {name} cell out of bounds")));
                    }
                }
                if start == goal {
                    return Err(Error::config("gridworld start must differ from goal"));
                }
            }
            EnvKind::Bandit { arm_means, arm_stds } => {
                if arm_means.is_empty() || arm_means.len() != arm_stds.len() {
                    return Err(Error::config(
                        "bandit arm_means and arm_stds must be non-empty and equal length",
                    ));
                }
                if arm_stds.iter().any(|s| *s < 0.0) {
                    return Err(Error::config("bandit arm_stds must be non-negative"));
                }
            }
            EnvKind::PointMass { dt, noise_std } => {
                if *dt <= 0.0 {
                    return Err(Error::config("point_mass dt must be positive"));
                }
                if *noise_std < 0.0 {
                    return Err(Error::config("point_mass noise_std must be non-negative"));
                }
                if self.time_limit.is_none() {
                    return Err(Error::config("point_mass requires a time_limit (horizon)"));
                }
            }
        }
        Ok(())
    }

    /// Feature count seen by the agent (including the time feature).
    pub fn obs_dim(&self) -> usize {
        let base = match &self.kind {
            EnvKind::RandomWalk { n_states, .. } => *n_states,
            EnvKind::Gridworld { width, height, .. } => width * height,
            EnvKind::Bandit { .. } => 1,
            EnvKind::PointMass { .. } => 2,
        };
        base + usize::from(self.append_time_feature)
    }

    /// Number of discrete actions, or None for continuous control.
    pub fn n_actions(&self) -> Option<usize> {
        match &self.kind {
            EnvKind::RandomWalk { .. } => Some(2),
            EnvKind::Gridworld { .. } => Some(4),
            EnvKind::Bandit { arm_means, .. } => Some(arm_means.len()),
            EnvKind::PointMass { .. } => None,
        }
    }

    pub fn action_dim(&self) -> Option<usize> {
        match &self.kind {
            EnvKind::PointMass { .. } => Some(1),
            _ => None,
        }
    }

    /// Number of tabular states (random walk / gridworld only).
    pub fn n_tabular_states(&self) -> Option<usize> {
        match &self.kind {
            EnvKind::RandomWalk { n_states, .. } => Some(*n_states),
            EnvKind::Gridworld { width, height, .. } => Some(width * height),
            _ => None,
        }
    }
}

/// Remaining-time feature: t/limit - 1/2, so 0 steps map to -1/2 and the
/// final step maps to exactly +1/2.
pub fn time_feature(t: usize, limit: usize) -> Result<f64> {
    if t > limit {
        return Err(Error::config(format!("episode step {t} exceeds time limit {limit}")));
    }
    Ok(t as f64 / limit as f64 - 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EndReason {
    Terminal,
    Truncation,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeOutcome {
    pub return_undiscounted: f64,
    pub return_discounted: f64,
    pub length: usize,
    pub ended_by: EndReason,
}

#[derive(Debug, Clone)]
enum EnvState {
    Walk { pos: usize },
    Grid { x: usize, y: usize },
    Bandit,
    PointMass { x: f64, v: f64 },
}

/// A running environment instance: the spec plus mutable episode state and a
/// seeded RNG. Instances are values and fully independent.
#[derive(Debug, Clone)]
pub struct Env {
    pub spec: EnvSpec,
    state: EnvState,
    steps_in_episode: usize,
    last_obs: Observation,
    rng: ChaCha8Rng,
    needs_reset: bool,
}

impl Env {
    pub fn new(spec: EnvSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0xE17);
        let mut env = Env {
            state: EnvState::Bandit,
            last_obs: Observation::new(Vec::new()),
            steps_in_episode: 0,
            rng,
            needs_reset: false,
            spec,
        };
        env.reset();
        Ok(env)
    }

    pub fn reset(&mut self) -> Observation {
        self.steps_in_episode = 0;
        self.needs_reset = false;
        self.state = match &self.spec.kind {
            EnvKind::RandomWalk { n_states, .. } => EnvState::Walk { pos: (n_states + 1) / 2 },
            EnvKind::Gridworld { start, .. } => EnvState::Grid { x: start.0, y: start.1 },
            EnvKind::Bandit { .. } => EnvState::Bandit,
            EnvKind::PointMass { .. } => {
                let x = self.rng.random_range(-1.0..1.0);
                EnvState::PointMass { x, v: 0.0 }
            }
        };
        self.last_obs = self.observe();
        self.last_obs.clone()
    }

    fn observe(&mut self) -> Observation {
        let mut features = match (&self.spec.kind, &self.state) {
            (EnvKind::RandomWalk { n_states, .. }, EnvState::Walk { pos }) => {
                let mut f = vec![0.0; *n_states];
                f[pos - 1] = 1.0;
                f
            }
            (EnvKind::Gridworld { width, .. }, EnvState::Grid { x, y }) => {
                let mut f = vec![0.0; self.spec.n_tabular_states().unwrap()];
                f[y * width + x] = 1.0;
                f
            }
            (EnvKind::Bandit { .. }, EnvState::Bandit) => vec![1.0],
            (EnvKind::PointMass { noise_std, .. }, EnvState::PointMass { x, v }) => {
                let mut f = vec![*x, *v];
                if *noise_std > 0.0 {
                    for fi in &mut f {
                        let z: f64 = StandardNormal.sample(&mut self.rng);
                        *fi += noise_std * z;
                    }
                }
                f
            }
            _ => unreachable!("state/kind mismatch"),
        };
        if self.spec.feature_scale != 1.0 {
            for f in &mut features {
                *f *= self.spec.feature_scale;
            }
        }
        if self.spec.append_time_feature {
            let limit = self.spec.time_limit.unwrap();
            features.push(time_feature(self.steps_in_episode.min(limit), limit).unwrap());
        }
        Observation::new(features)
    }

    fn terminal_obs(&self) -> Observation {
        Observation::new(vec![0.0; self.spec.obs_dim()])
    }

    fn check_discrete(&self, action: &Action, n: usize) -> Result<usize> {
        match action {
            Action::Discrete(a) if *a < n => Ok(*a),
            Action::Discrete(a) => Err(Error::config(format!("action {a} out of range (< {n})"))),
            Action::Continuous(_) => Err(Error::config("this environment takes discrete actions")),
        }
    }

    /// Advance one step. Flags are mutually exclusive: a true terminal takes
    /// precedence; truncation fires when the episode length reaches the time
    /// limit in a non-terminal state.
    pub fn step(&mut self, action: &Action) -> Result<Transition> {
        if self.needs_reset {
            return Err(Error::config("env.step called on a finished episode; call reset"));
        }
        let s = self.last_obs.clone();
        let (reward, terminated) = self.apply_dynamics(action)?;

        self.steps_in_episode += 1;
        let truncated = !terminated
            && self.spec.time_limit.map(|l| self.steps_in_episode >= l).unwrap_or(false);

        let s_next = if terminated { self.terminal_obs() } else { self.observe() };
        if terminated || truncated {
            self.needs_reset = true;
        } else {
            self.last_obs = s_next.clone();
        }

        Ok(Transition {
            s,
            a: action.clone(),
            r: reward,
            s_next,
            terminated,
            truncated,
            a_next: None,
        })
    }

    fn apply_dynamics(&mut self, action: &Action) -> Result<(f64, bool)> {
        match &self.spec.kind {
            EnvKind::RandomWalk { n_states, left_reward, right_reward } => {
                let a = self.check_discrete(action, 2)?;
                let EnvState::Walk { pos } = &mut self.state else { unreachable!() };
                if a == 0 {
                    if *pos == 1 {
                        Ok((*left_reward, true))
                    } else {
                        *pos -= 1;
                        Ok((0.0, false))
                    }
                } else if *pos == *n_states {
                    Ok((*right_reward, true))
                } else {
                    *pos += 1;
                    Ok((0.0, false))
                }
            }
            EnvKind::Gridworld { width, height, goal, goal_reward, step_cost, .. } => {
                let a = self.check_discrete(action, 4)?;
                let (width, height, goal, goal_reward, step_cost) =
                    (*width, *height, *goal, *goal_reward, *step_cost);
                let EnvState::Grid { x, y } = &mut self.state else { unreachable!() };
                let (nx, ny) = match a {
                    0 => (*x, y.saturating_sub(1)),
                    1 => (*x, (*y + 1).min(height - 1)),
                    2 => (x.saturating_sub(1), *y),
                    _ => ((*x + 1).min(width - 1), *y),
                };
                *x = nx;
                *y = ny;
                if (nx, ny) == goal {
                    Ok((step_cost + goal_reward, true))
                } else {
                    Ok((step_cost, false))
                }
            }
            EnvKind::Bandit { arm_means, arm_stds } => {
                let a = self.check_discrete(action, arm_means.len())?;
                let (mean, std) = (arm_means[a], arm_stds[a]);
                let z: f64 = StandardNormal.sample(&mut self.rng);
                Ok((mean + std * z, true))
            }
            EnvKind::PointMass { dt, .. } => {
                let u = match action {
                    Action::Continuous(a) if a.len() == 1 => a[0].clamp(-1.0, 1.0),
                    _ => return Err(Error::config("point_mass takes a 1-d continuous action")),
                };
                let dt = *dt;
                let EnvState::PointMass { x, v } = &mut self.state else { unreachable!() };
                *x += dt * *v;
                *v += dt * u;
                Ok((-(*x * *x + 0.1 * *v * *v), false))
            }
        }
    }

    pub fn episode_finished(&self) -> bool {
        self.needs_reset
    }

    /// The observation the agent currently acts on (set by the last reset or
    /// step).
    pub fn last_observation(&self) -> Observation {
        self.last_obs.clone()
    }

    pub fn steps_in_episode(&self) -> usize {
        self.steps_in_episode
    }

    /// Tabular state index of the current state (random walk / gridworld).
    pub fn state_index(&self) -> Option<usize> {
        match (&self.spec.kind, &self.state) {
            (EnvKind::RandomWalk { .. }, EnvState::Walk { pos }) => Some(pos - 1),
            (EnvKind::Gridworld { width, .. }, EnvState::Grid { x, y }) => Some(y * width + x),
            _ => None,
        }
    }
}

/// Tabular model row: one (next_state, reward, terminal) outcome per action.
struct TabularModel {
    n_states: usize,
    n_actions: usize,
    /// transitions[s][a] = (next_state, reward, terminal)
    transitions: Vec<Vec<(usize, f64, bool)>>,
}

fn tabular_model(spec: &EnvSpec) -> Result<TabularModel> {
    spec.validate()?;
    match &spec.kind {
        EnvKind::RandomWalk { n_states, left_reward, right_reward } => {
            let n = *n_states;
            let mut transitions = Vec::with_capacity(n);
            for s in 0..n {
                let left = if s == 0 { (s, *left_reward, true) } else { (s - 1, 0.0, false) };
                let right = if s == n - 1 { (s, *right_reward, true) } else { (s + 1, 0.0, false) };
                transitions.push(vec![left, right]);
            }
            Ok(TabularModel { n_states: n, n_actions: 2, transitions })
        }
        EnvKind::Gridworld { width, height, goal, goal_reward, step_cost, .. } => {
            let n = width * height;
            let mut transitions = Vec::with_capacity(n);
            for s in 0..n {
                let (x, y) = (s % width, s / width);
                let mut row = Vec::with_capacity(4);
                for a in 0..4 {
                    let (nx, ny) = match a {
                        0 => (x, y.saturating_sub(1)),
                        1 => (x, (y + 1).min(height - 1)),
                        2 => (x.saturating_sub(1), y),
                        _ => ((x + 1).min(width - 1), y),
                    };
                    let ns = ny * width + nx;
                    if (nx, ny) == *goal {
                        row.push((ns, step_cost + goal_reward, true));
                    } else {
                        row.push((ns, *step_cost, false));
                    }
                }
                transitions.push(row);
            }
            Ok(TabularModel { n_states: n, n_actions: 4, transitions })
        }
        _ => Err(Error::config("analytic oracle requires a tabular environment")),
    }
}

/// Dense linear solve with partial pivoting; only used for the desk-sized
/// Bellman systems.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-14 {
            return Err(Error::numerical("singular Bellman system"));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Exact V^pi for a tabular environment by solving the linear Bellman system
/// (I - gamma P^pi) V = R^pi. Terminal transitions contribute reward only.
/// `policy` maps a state index to action probabilities.
pub fn analytic_values(
    spec: &EnvSpec,
    gamma: f64,
    policy: impl Fn(usize) -> Vec<f64>,
) -> Result<Vec<f64>> {
    let model = tabular_model(spec)?;
    let n = model.n_states;
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for s in 0..n {
        a[s][s] = 1.0;
        let probs = policy(s);
        if probs.len() != model.n_actions {
            return Err(Error::config("policy action count mismatch"));
        }
        for (act, p) in probs.iter().enumerate() {
            let (ns, r, terminal) = model.transitions[s][act];
            b[s] += p * r;
            if !terminal {
                a[s][ns] -= gamma * p;
            }
        }
    }
    solve_linear(a, b)
}

/// Uniform-random policy over a tabular environment's actions.
pub fn uniform_policy(spec: &EnvSpec) -> impl Fn(usize) -> Vec<f64> {
    let n_actions = spec.n_actions().unwrap_or(1);
    move |_s| vec![1.0 / n_actions as f64; n_actions]
}

/// Maximum Bellman residual of `values` under the policy; the analytic
/// solution drives this below 1e-10.
pub fn bellman_residual(
    spec: &EnvSpec,
    gamma: f64,
    policy: impl Fn(usize) -> Vec<f64>,
    values: &[f64],
) -> Result<f64> {
    let model = tabular_model(spec)?;
    let mut worst: f64 = 0.0;
    for s in 0..model.n_states {
        let mut rhs = 0.0;
        for (act, p) in policy(s).iter().enumerate() {
            let (ns, r, terminal) = model.transitions[s][act];
            rhs += p * (r + if terminal { 0.0 } else { gamma * values[ns] });
        }
        worst = worst.max((values[s] - rhs).abs());
    }
    Ok(worst)
}

/// Optimal action-value oracle from value iteration run to a 1e-12 sup-norm
/// fixed point.
#[derive(Debug, Clone)]
pub struct QStarOracle {
    pub q_star: Vec<Vec<f64>>,
    pub v_star: Vec<f64>,
    /// Per state, every action whose Q* is within 1e-9 of the best.
    pub optimal_actions: Vec<Vec<usize>>,
}

pub fn value_iteration(spec: &EnvSpec, gamma: f64) -> Result<QStarOracle> {
    let model = tabular_model(spec)?;
    let n = model.n_states;
    let mut v = vec![0.0; n];
    loop {
        let mut next = vec![0.0; n];
        let mut diff: f64 = 0.0;
        for s in 0..n {
            let best = model.transitions[s]
                .iter()
                .map(|&(ns, r, term)| r + if term { 0.0 } else { gamma * v[ns] })
                .fold(f64::NEG_INFINITY, f64::max);
            next[s] = best;
            diff = diff.max((best - v[s]).abs());
        }
        v = next;
        if diff < 1e-12 {
            break;
        }
    }
    let mut q_star = Vec::with_capacity(n);
    let mut optimal_actions = Vec::with_capacity(n);
    for s in 0..n {
        let qs: Vec<f64> = model.transitions[s]
            .iter()
            .map(|&(ns, r, term)| r + if term { 0.0 } else { gamma * v[ns] })
            .collect();
        let best = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let opt = qs
            .iter()
            .enumerate()
            .filter(|(_, q)| (best - **q) <= 1e-9)
            .map(|(a, _)| a)
            .collect();
        q_star.push(qs);
        optimal_actions.push(opt);
    }
    Ok(QStarOracle { q_star, v_star: v, optimal_actions })
}

/// One-hot observation for a tabular state index, honoring the spec's
/// feature scale. Used when evaluating a learned V across all states.
pub fn tabular_observation(spec: &EnvSpec, state: usize) -> Observation {
    let n = spec.n_tabular_states().expect("tabular env");
    let mut f = vec![0.0; n];
    f[state] = spec.feature_scale;
    Observation::new(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn walk() -> EnvSpec {
        EnvSpec::random_walk(19)
    }

    fn grid() -> EnvSpec {
        EnvSpec::new(EnvKind::Gridworld {
            width: 5,
            height: 5,
            start: (0, 0),
            goal: (4, 4),
            goal_reward: 1.0,
            step_cost: 0.0,
        })
    }

    #[test]
    fn random_walk_starts_at_center() {
        let env = Env::new(walk(), 1).unwrap();
        assert_eq!(env.state_index(), Some(9)); // state 10 of 1..=19
    }

    #[test]
    fn gridworld_starts_at_declared_cell() {
        let env = Env::new(grid(), 1).unwrap();
        assert_eq!(env.state_index(), Some(0));
    }

    #[test]
    fn reset_is_deterministic_under_seed() {
        let spec = EnvSpec::new(EnvKind::PointMass { dt: 0.05, noise_std: 0.01 })
            .with_time_limit(100, true);
        let mut a = Env::new(spec.clone(), 7).unwrap();
        let mut b = Env::new(spec, 7).unwrap();
        assert_eq!(a.reset(), b.reset());
    }

    #[test]
    fn random_walk_dynamics() {
        let mut env = Env::new(walk(), 3).unwrap();
        let t = env.step(&Action::Discrete(0)).unwrap();
        assert_eq!(t.r, 0.0);
        assert!(!t.terminated && !t.truncated);
        assert_eq!(env.state_index(), Some(8));

        // Drive to the left edge and off it.
        for _ in 0..8 {
            env.step(&Action::Discrete(0)).unwrap();
        }
        assert_eq!(env.state_index(), Some(0));
        let t = env.step(&Action::Discrete(0)).unwrap();
        assert!(t.terminated && !t.truncated);
        assert_eq!(t.r, -1.0);
    }

    #[test]
    fn gridworld_wall_bump_stays() {
        let mut env = Env::new(grid(), 3).unwrap();
        let t = env.step(&Action::Discrete(0)).unwrap(); // up from (0,0)
        assert_eq!(env.state_index(), Some(0));
        assert!(!t.terminated);
    }

    #[test]
    fn truncation_flags() {
        let spec = EnvSpec::new(EnvKind::PointMass { dt: 0.05, noise_std: 0.0 })
            .with_time_limit(5, true);
        let mut env = Env::new(spec, 1).unwrap();
        for i in 1..=5 {
            let t = env.step(&Action::Continuous(vec![0.5])).unwrap();
            if i < 5 {
                assert!(!t.truncated && !t.terminated);
            } else {
                assert!(t.truncated && !t.terminated);
                // Trailing time feature of the final observation is exactly +1/2.
                assert_eq!(*t.s_next.features.last().unwrap(), 0.5);
            }
        }
        assert!(env.episode_finished());
    }

    #[test]
    fn time_feature_endpoints() {
        assert_eq!(time_feature(0, 10).unwrap(), -0.5);
        assert_eq!(time_feature(10, 10).unwrap(), 0.5);
        assert_eq!(time_feature(5, 10).unwrap(), 0.0);
        assert!(time_feature(11, 10).is_err());
    }

    #[test]
    fn analytic_walk_values_match_closed_form() {
        let spec = walk();
        let v = analytic_values(&spec, 1.0, uniform_policy(&spec)).unwrap();
        for (i, vi) in v.iter().enumerate() {
            let state = i as f64 + 1.0;
            let expected = (state - 10.0) / 10.0;
            assert!((vi - expected).abs() < 1e-10, "state {state}: {vi} vs {expected}");
        }
        let res = bellman_residual(&spec, 1.0, uniform_policy(&spec), &v).unwrap();
        assert!(res < 1e-10);
    }

    #[test]
    fn analytic_gridworld_satisfies_bellman() {
        let spec = grid();
        let v = analytic_values(&spec, 0.95, uniform_policy(&spec)).unwrap();
        let res = bellman_residual(&spec, 0.95, uniform_policy(&spec), &v).unwrap();
        assert!(res < 1e-10);
    }

    #[test]
    fn absorbing_only_mdp_values_equal_terminal_reward() {
        // 1x2 gridworld: under the always-right policy the non-goal state's
        // value is exactly the terminal reward.
        let spec = EnvSpec::new(EnvKind::Gridworld {
            width: 2,
            height: 1,
            start: (0, 0),
            goal: (1, 0),
            goal_reward: 0.75,
            step_cost: 0.0,
        });
        let v = analytic_values(&spec, 0.9, |_s| vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((v[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn value_iteration_gridworld_fixed_point() {
        let spec = grid();
        let oracle = value_iteration(&spec, 0.95).unwrap();
        // Shortest path from (0,0) to (4,4) is 8 moves: V* = 0.95^7.
        assert!((oracle.v_star[0] - 0.95f64.powi(7)).abs() < 1e-9);
        // Goal-adjacent state moving right ends the episode with reward 1.
        let s = 4 * 5 + 3;
        assert!((oracle.q_star[s][3] - 1.0).abs() < 1e-9);
        assert!(oracle.optimal_actions[s].contains(&3));
    }

    #[test]
    fn flags_never_both_true() {
        use rand::Rng;
        let spec = EnvSpec::random_walk(5).with_time_limit(3, false);
        for seed in 0..20 {
            let mut env = Env::new(spec.clone(), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            for _ in 0..200 {
                if env.episode_finished() {
                    env.reset();
                }
                let a = Action::Discrete(rng.random_range(0..2usize));
                let t = env.step(&a).unwrap();
                assert!(!(t.terminated && t.truncated));
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = EnvSpec {
            kind: EnvKind::Bandit { arm_means: vec![1.0], arm_stds: vec![] },
            time_limit: None,
            append_time_feature: false,
            feature_scale: 1.0,
        };
        assert!(bad.validate().is_err());
        let mut spec = EnvSpec::random_walk(19);
        spec.append_time_feature = true;
        assert!(spec.validate().is_err());
        let mut env = Env::new(EnvSpec::random_walk(19), 0).unwrap();
        assert!(env.step(&Action::Discrete(5)).is_err());
    }
}
