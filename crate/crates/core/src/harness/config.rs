//! Run configuration and its flat key-value file format: one
//! `section.key = value` assignment per line, `#` comments, values typed as
//! integer, real, boolean, string, or comma list. Serialization emits every
//! applicable key in a fixed order so parse(serialize(c)) == c.

use crate::agents::{AgentConfig, ClipMode, UpdateRule};
use crate::envs::{EnvKind, EnvSpec};
use crate::error::{Error, Result};
use crate::intent::IntentConfig;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    TdPrediction,
    QControl,
    PgBandit,
    AcControl,
    AblationNaive,
    AblationConstant,
    Fidelity,
    BiasDemo,
    Flops,
}

impl Experiment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::TdPrediction => "td_prediction",
            Experiment::QControl => "q_control",
            Experiment::PgBandit => "pg_bandit",
            Experiment::AcControl => "ac_control",
            Experiment::AblationNaive => "ablation_naive",
            Experiment::AblationConstant => "ablation_constant",
            Experiment::Fidelity => "fidelity",
            Experiment::BiasDemo => "bias_demo",
            Experiment::Flops => "flops",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "td_prediction" => Experiment::TdPrediction,
            "q_control" => Experiment::QControl,
            "pg_bandit" => Experiment::PgBandit,
            "ac_control" => Experiment::AcControl,
            "ablation_naive" => Experiment::AblationNaive,
            "ablation_constant" => Experiment::AblationConstant,
            "fidelity" => Experiment::Fidelity,
            "bias_demo" => Experiment::BiasDemo,
            "flops" => Experiment::Flops,
            other => {
                return Err(Error::validation("experiment", format!("unknown experiment `{other}`")))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipModeSetting {
    Adaptive,
    /// Fixed clipping to [-1, 1], the non-adaptive comparator.
    Range,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRuleSetting {
    Intentional,
    Naive,
    Constant,
}

/// Agent meta-parameters as they appear in config files. Defaults follow the
/// shared settings used across the experiment suites.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSettings {
    pub eta: f64,
    pub eta_actor: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub xi: f64,
    pub beta_nu: f64,
    pub beta_clip: f64,
    pub beta_norm: f64,
    pub epsilon: f64,
    pub clip_c: f64,
    pub alpha_cap: Option<f64>,
    pub guard: bool,
    pub clip_mode: ClipModeSetting,
    pub rmsprop: bool,
    pub update_rule: UpdateRuleSetting,
    pub constant_alpha: f64,
    /// MLP hidden widths; empty means a linear/tabular approximator.
    pub hidden: Vec<usize>,
    pub layernorm: bool,
    pub sparse_init_ratio: f64,
}

impl Default for AgentSettings {
    fn default() -> Self {
        AgentSettings {
            eta: 0.5,
            eta_actor: 0.05,
            lambda: 0.8,
            gamma: 0.99,
            xi: 0.0,
            beta_nu: 0.999,
            beta_clip: 0.9998,
            beta_norm: 0.9998,
            epsilon: 1e-8,
            clip_c: 20.0,
            alpha_cap: None,
            guard: false,
            clip_mode: ClipModeSetting::Adaptive,
            rmsprop: true,
            update_rule: UpdateRuleSetting::Intentional,
            constant_alpha: 0.1,
            hidden: Vec::new(),
            layernorm: false,
            sparse_init_ratio: 0.0,
        }
    }
}

impl AgentSettings {
    /// Lower to an agents::AgentConfig with the given eta and update rule.
    pub fn to_agent_config(&self, eta: f64, rule: UpdateRule) -> AgentConfig {
        AgentConfig {
            intent: IntentConfig {
                eta,
                beta_nu: self.beta_nu,
                beta_clip: self.beta_clip,
                beta_norm: self.beta_norm,
                epsilon: self.epsilon,
                clip_c: self.clip_c,
                alpha_cap: self.alpha_cap,
            },
            lambda: self.lambda,
            gamma: self.gamma,
            xi: self.xi,
            clip_mode: match self.clip_mode {
                ClipModeSetting::Adaptive => ClipMode::Adaptive,
                ClipModeSetting::Range => ClipMode::Range { lo: -1.0, hi: 1.0 },
                ClipModeSetting::Off => ClipMode::Off,
            },
            rmsprop: self.rmsprop,
            guard: self.guard,
            update_rule: rule,
        }
    }

    pub fn configured_rule(&self) -> UpdateRule {
        match self.update_rule {
            UpdateRuleSetting::Intentional => UpdateRule::Intentional,
            UpdateRuleSetting::Naive => UpdateRule::NaiveTrace,
            UpdateRuleSetting::Constant => UpdateRule::ConstantAlpha(self.constant_alpha),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub env: EnvSpec,
    pub agent: AgentSettings,
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    pub log_every: u64,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::validation("seeds", "at least one seed required"));
        }
        if self.total_steps == 0 {
            return Err(Error::validation("total_steps", "must be positive"));
        }
        if self.log_every == 0 {
            return Err(Error::validation("log_every", "must be positive"));
        }
        self.env
            .validate()
            .map_err(|e| Error::validation("env", e.to_string()))?;
        self.agent
            .to_agent_config(self.agent.eta, self.agent.configured_rule())
            .validate()
            .map_err(|e| Error::validation("agent", e.to_string()))?;
        if self.agent.eta_actor <= 0.0 {
            return Err(Error::validation("agent.eta_actor", "must be positive"));
        }
        if matches!(self.experiment, Experiment::Fidelity) && self.agent.lambda != 0.0 {
            return Err(Error::validation(
                "agent.lambda",
                "the fidelity experiment requires lambda = 0 (trace-free step sizes)",
            ));
        }
        let kind_name = env_kind_name(&self.env.kind);
        let want = match self.experiment {
            Experiment::TdPrediction | Experiment::AblationNaive | Experiment::AblationConstant => {
                Some("random_walk")
            }
            Experiment::QControl => Some("gridworld"),
            Experiment::PgBandit => Some("bandit"),
            Experiment::AcControl | Experiment::Fidelity => Some("point_mass"),
            Experiment::BiasDemo | Experiment::Flops => None,
        };
        if let Some(want) = want {
            if kind_name != want {
                return Err(Error::validation(
                    "env.kind",
                    format!("experiment {} requires env.kind = {want}", self.experiment.as_str()),
                ));
            }
        }
        Ok(())
    }

    /// Canonical flat-text form; every applicable key, fixed order.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("experiment", self.experiment.as_str().to_string());
        kv("seeds", self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","));
        kv("total_steps", self.total_steps.to_string());
        kv("log_every", self.log_every.to_string());
        kv("output_dir", self.output_dir.display().to_string());

        kv("env.kind", env_kind_name(&self.env.kind).to_string());
        match &self.env.kind {
            EnvKind::RandomWalk { n_states, left_reward, right_reward } => {
                kv("env.n_states", n_states.to_string());
                kv("env.left_reward", fmt_f64(*left_reward));
                kv("env.right_reward", fmt_f64(*right_reward));
            }
            EnvKind::Gridworld { width, height, start, goal, goal_reward, step_cost } => {
                kv("env.width", width.to_string());
                kv("env.height", height.to_string());
                kv("env.start_x", start.0.to_string());
                kv("env.start_y", start.1.to_string());
                kv("env.goal_x", goal.0.to_string());
                kv("env.goal_y", goal.1.to_string());
                kv("env.goal_reward", fmt_f64(*goal_reward));
                kv("env.step_cost", fmt_f64(*step_cost));
            }
            EnvKind::Bandit { arm_means, arm_stds } => {
                kv("env.arm_means", arm_means.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(","));
                kv("env.arm_stds", arm_stds.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(","));
            }
            EnvKind::PointMass { dt, noise_std } => {
                kv("env.dt", fmt_f64(*dt));
                kv("env.noise_std", fmt_f64(*noise_std));
            }
        }
        if let Some(limit) = self.env.time_limit {
            kv("env.time_limit", limit.to_string());
        }
        kv("env.append_time_feature", self.env.append_time_feature.to_string());
        kv("env.feature_scale", fmt_f64(self.env.feature_scale));

        let a = &self.agent;
        kv("agent.eta", fmt_f64(a.eta));
        kv("agent.eta_actor", fmt_f64(a.eta_actor));
        kv("agent.lambda", fmt_f64(a.lambda));
        kv("agent.gamma", fmt_f64(a.gamma));
        kv("agent.xi", fmt_f64(a.xi));
        kv("agent.beta_nu", fmt_f64(a.beta_nu));
        kv("agent.beta_clip", fmt_f64(a.beta_clip));
        kv("agent.beta_norm", fmt_f64(a.beta_norm));
        kv("agent.epsilon", fmt_f64(a.epsilon));
        kv("agent.clip_c", fmt_f64(a.clip_c));
        if let Some(cap) = a.alpha_cap {
            kv("agent.alpha_cap", fmt_f64(cap));
        }
        kv("agent.guard", a.guard.to_string());
        kv(
            "agent.clip_mode",
            match a.clip_mode {
                ClipModeSetting::Adaptive => "adaptive",
                ClipModeSetting::Range => "range",
                ClipModeSetting::Off => "off",
            }
            .to_string(),
        );
        kv("agent.rmsprop", a.rmsprop.to_string());
        kv(
            "agent.update_rule",
            match a.update_rule {
                UpdateRuleSetting::Intentional => "intentional",
                UpdateRuleSetting::Naive => "naive",
                UpdateRuleSetting::Constant => "constant",
            }
            .to_string(),
        );
        kv("agent.constant_alpha", fmt_f64(a.constant_alpha));
        if !a.hidden.is_empty() {
            kv("agent.hidden", a.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","));
        }
        kv("agent.layernorm", a.layernorm.to_string());
        kv("agent.sparse_init_ratio", fmt_f64(a.sparse_init_ratio));
        out
    }

    /// Parse the flat text form. Unknown keys and duplicate assignments are
    /// rejected with the offending key named.
    pub fn parse(text: &str) -> Result<Self> {
        let map = parse_flat_map(text)?;
        Self::from_flat_map(map)
    }

    /// Echo of the canonical form as an ordered key/value map (for the JSON
    /// summary).
    pub fn flat_map(&self) -> BTreeMap<String, String> {
        parse_flat_map(&self.serialize()).expect("canonical form always parses")
    }

    /// Apply `key=value` overrides on top of the canonical form.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut map = self.flat_map();
        for (k, v) in overrides {
            map.insert(k.clone(), v.clone());
        }
        Self::from_flat_map(map)
    }

    fn from_flat_map(map: BTreeMap<String, String>) -> Result<Self> {
        let mut m = Fields { map };
        let experiment = Experiment::parse(&m.required("experiment")?)?;
        let seeds = m
            .required("seeds")?
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::validation("seeds", format!("bad seed `{s}`")))
            })
            .collect::<Result<Vec<u64>>>()?;
        let total_steps = m.parse_u64("total_steps")?.ok_or_else(|| {
            Error::validation("total_steps", "missing required key")
        })?;
        let log_every = m.parse_u64("log_every")?.unwrap_or(1000);
        let output_dir = PathBuf::from(m.required("output_dir")?);

        let kind_name = m.required("env.kind")?;
        let kind = match kind_name.as_str() {
            "random_walk" => EnvKind::RandomWalk {
                n_states: m.parse_usize("env.n_states")?.unwrap_or(19),
                left_reward: m.parse_f64("env.left_reward")?.unwrap_or(-1.0),
                right_reward: m.parse_f64("env.right_reward")?.unwrap_or(1.0),
            },
            "gridworld" => EnvKind::Gridworld {
                width: m.parse_usize("env.width")?.unwrap_or(5),
                height: m.parse_usize("env.height")?.unwrap_or(5),
                start: (
                    m.parse_usize("env.start_x")?.unwrap_or(0),
                    m.parse_usize("env.start_y")?.unwrap_or(0),
                ),
                goal: (
                    m.parse_usize("env.goal_x")?.unwrap_or(4),
                    m.parse_usize("env.goal_y")?.unwrap_or(4),
                ),
                goal_reward: m.parse_f64("env.goal_reward")?.unwrap_or(1.0),
                step_cost: m.parse_f64("env.step_cost")?.unwrap_or(0.0),
            },
            "bandit" => EnvKind::Bandit {
                arm_means: m.parse_f64_list("env.arm_means")?.unwrap_or_else(|| vec![1.0, 0.0]),
                arm_stds: m.parse_f64_list("env.arm_stds")?.unwrap_or_else(|| vec![0.0, 0.0]),
            },
            "point_mass" => EnvKind::PointMass {
                dt: m.parse_f64("env.dt")?.unwrap_or(0.05),
                noise_std: m.parse_f64("env.noise_std")?.unwrap_or(0.0),
            },
            other => {
                return Err(Error::validation("env.kind", format!("unknown env kind `{other}`")))
            }
        };
        let env = EnvSpec {
            kind,
            time_limit: m.parse_usize("env.time_limit")?,
            append_time_feature: m.parse_bool("env.append_time_feature")?.unwrap_or(false),
            feature_scale: m.parse_f64("env.feature_scale")?.unwrap_or(1.0),
        };

        let d = AgentSettings::default();
        let agent = AgentSettings {
            eta: m.parse_f64("agent.eta")?.unwrap_or(d.eta),
            eta_actor: m.parse_f64("agent.eta_actor")?.unwrap_or(d.eta_actor),
            lambda: m.parse_f64("agent.lambda")?.unwrap_or(d.lambda),
            gamma: m.parse_f64("agent.gamma")?.unwrap_or(d.gamma),
            xi: m.parse_f64("agent.xi")?.unwrap_or(d.xi),
            beta_nu: m.parse_f64("agent.beta_nu")?.unwrap_or(d.beta_nu),
            beta_clip: m.parse_f64("agent.beta_clip")?.unwrap_or(d.beta_clip),
            beta_norm: m.parse_f64("agent.beta_norm")?.unwrap_or(d.beta_norm),
            epsilon: m.parse_f64("agent.epsilon")?.unwrap_or(d.epsilon),
            clip_c: m.parse_f64("agent.clip_c")?.unwrap_or(d.clip_c),
            alpha_cap: m.parse_f64("agent.alpha_cap")?,
            guard: m.parse_bool("agent.guard")?.unwrap_or(d.guard),
            clip_mode: match m.map.remove("agent.clip_mode").as_deref() {
                None => d.clip_mode,
                Some("adaptive") => ClipModeSetting::Adaptive,
                Some("range") => ClipModeSetting::Range,
                Some("off") => ClipModeSetting::Off,
                Some(other) => {
                    return Err(Error::validation(
                        "agent.clip_mode",
                        format!("expected adaptive|range|off, got `{other}`"),
                    ))
                }
            },
            rmsprop: m.parse_bool("agent.rmsprop")?.unwrap_or(d.rmsprop),
            update_rule: match m.map.remove("agent.update_rule").as_deref() {
                None => d.update_rule,
                Some("intentional") => UpdateRuleSetting::Intentional,
                Some("naive") => UpdateRuleSetting::Naive,
                Some("constant") => UpdateRuleSetting::Constant,
                Some(other) => {
                    return Err(Error::validation(
                        "agent.update_rule",
                        format!("expected intentional|naive|constant, got `{other}`"),
                    ))
                }
            },
            constant_alpha: m.parse_f64("agent.constant_alpha")?.unwrap_or(d.constant_alpha),
            hidden: m.parse_usize_list("agent.hidden")?.unwrap_or_default(),
            layernorm: m.parse_bool("agent.layernorm")?.unwrap_or(d.layernorm),
            sparse_init_ratio: m.parse_f64("agent.sparse_init_ratio")?.unwrap_or(d.sparse_init_ratio),
        };

        if let Some((key, _)) = m.map.iter().next() {
            return Err(Error::validation(key.clone(), "unknown or inapplicable key"));
        }

        let config = RunConfig { experiment, env, agent, seeds, total_steps, log_every, output_dir };
        config.validate()?;
        Ok(config)
    }
}

fn env_kind_name(kind: &EnvKind) -> &'static str {
    match kind {
        EnvKind::RandomWalk { .. } => "random_walk",
        EnvKind::Gridworld { .. } => "gridworld",
        EnvKind::Bandit { .. } => "bandit",
        EnvKind::PointMass { .. } => "point_mass",
    }
}

/// Shortest round-trip decimal form (Rust's Display for f64).
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn parse_flat_map(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected `key = value`, got `{raw}`"),
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::Parse { line: idx + 1, message: "empty key".into() });
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("duplicate assignment of `{key}`"),
            });
        }
    }
    Ok(map)
}

/// Wrapper that consumes keys as they parse; leftovers are unknown keys.
struct Fields {
    map: BTreeMap<String, String>,
}

impl Fields {
    fn required(&mut self, key: &str) -> Result<String> {
        self.map
            .remove(key)
            .ok_or_else(|| Error::validation(key, "missing required key"))
    }

    fn parse_f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| Error::validation(key, format!("expected a real number, got `{v}`"))),
        }
    }

    fn parse_u64(&mut self, key: &str) -> Result<Option<u64>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<u64>()
                .map(Some)
                .map_err(|_| Error::validation(key, format!("expected an integer, got `{v}`"))),
        }
    }

    fn parse_usize(&mut self, key: &str) -> Result<Option<usize>> {
        Ok(self.parse_u64(key)?.map(|v| v as usize))
    }

    fn parse_bool(&mut self, key: &str) -> Result<Option<bool>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => match v.as_str() {
                "true" => Ok(Some(true)),
                "false" => Ok(Some(false)),
                other => Err(Error::validation(key, format!("expected true|false, got `{other}`"))),
            },
        }
    }

    fn parse_f64_list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| {
                        Error::validation(key, format!("bad list entry `{s}`"))
                    })
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
        }
    }

    fn parse_usize_list(&mut self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim().parse::<usize>().map_err(|_| {
                        Error::validation(key, format!("bad list entry `{s}`"))
                    })
                })
                .collect::<Result<Vec<usize>>>()
                .map(Some),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::suites::{suite_config, suite_names};

    #[test]
    fn round_trip_all_suites() {
        for name in suite_names() {
            let config = suite_config(name, "out").unwrap();
            let text = config.serialize();
            let parsed = RunConfig::parse(&text)
                .unwrap_or_else(|e| panic!("suite {name} failed round trip: {e}"));
            assert_eq!(parsed, config, "round trip mismatch for suite {name}");
        }
    }

    #[test]
    fn rejects_zero_total_steps() {
        let mut config = suite_config("bandit", "out").unwrap();
        config.total_steps = 0;
        assert!(matches!(config.validate(), Err(Error::Validation { .. })));
    }

    #[test]
    fn rejects_unknown_key_and_duplicates() {
        let config = suite_config("bandit", "out").unwrap();
        let mut text = config.serialize();
        text.push_str("bogus.key = 1\n");
        let err = RunConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("bogus.key"), "{err}");

        let mut text = config.serialize();
        text.push_str("agent.eta = 0.2\n");
        assert!(matches!(RunConfig::parse(&text), Err(Error::Parse { .. })));
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let config = suite_config("bandit", "out").unwrap();
        let mut text = String::from("# a comment\n\n");
        text.push_str(&config.serialize());
        text.push_str("\n# trailing\n");
        assert_eq!(RunConfig::parse(&text).unwrap(), config);
    }

    #[test]
    fn overrides_apply_by_dotted_path() {
        let config = suite_config("bandit", "out").unwrap();
        let with = config
            .with_overrides(&[
                ("agent.eta".to_string(), "0.25".to_string()),
                ("seeds".to_string(), "7".to_string()),
            ])
            .unwrap();
        assert_eq!(with.agent.eta, 0.25);
        assert_eq!(with.seeds, vec![7]);
    }

    #[test]
    fn fidelity_requires_lambda_zero() {
        let mut config = suite_config("fidelity", "out").unwrap();
        config.agent.lambda = 0.5;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("lambda"));
    }
}
