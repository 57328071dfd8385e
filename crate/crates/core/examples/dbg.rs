// scratch: bandit fidelity vs arm noise
use intentional_core::agents::*;
use intentional_core::approx::*;
use intentional_core::envs::{Env, EnvKind, EnvSpec};
use intentional_core::intent::{Ema, IntentConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run(seed: u64, std: f64, steps: usize) -> (bool, f64, u64, u64, f64) {
    let arch = Architecture::linear(1, Head::SoftmaxPolicy { n_actions: 2 });
    let mut learner = Learner::new(
        arch,
        ParamVector::zeros(2),
        AgentConfig {
            intent: IntentConfig { eta: 0.05, ..IntentConfig::default() },
            lambda: 0.0,
            gamma: 0.99,
            ..AgentConfig::default()
        },
    )
    .unwrap();
    let spec = EnvSpec::new(EnvKind::Bandit { arm_means: vec![1.0, 0.0], arm_stds: vec![std, std] });
    let mut env = Env::new(spec, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1d);
    let mut baseline = Ema::new(0.999).unwrap();
    let (mut in_band, mut counted) = (0u64, 0u64);
    let mut reached = false;
    for _ in 0..steps {
        let obs = env.reset();
        let action = learner.policy(&obs).unwrap().sample(&mut rng);
        let tr = env.step(&action).unwrap();
        let advantage = learner.clip_signal(tr.r - baseline.value);
        baseline.update(tr.r);
        let report = learner.pg_step(&tr, advantage).unwrap();
        if !report.degenerate && report.intended_change.abs() > 1e-12 {
            counted += 1;
            if (0.9..=1.1).contains(&(report.realized_change / report.intended_change)) {
                in_band += 1;
            }
        }
        if learner.policy(&obs).unwrap().probs()[0] > 0.95 {
            reached = true;
        }
    }
    let p_final = learner.policy(&Observation::new(vec![1.0])).unwrap().probs()[0];
    (reached, p_final, in_band, counted, in_band as f64 / counted.max(1) as f64)
}

fn main() {
    for std in [0.0, 0.1, 0.3, 0.5, 1.0] {
        let mut reach = 0;
        let mut freeze_wrong = 0;
        let mut band_min: f64 = 1.0;
        let mut band_sum = 0.0;
        let mut counted_sum = 0u64;
        let n = 30;
        for seed in 0..n {
            let (reached, p_final, _in, counted, frac) = run(seed, std, 20_000);
            if reached { reach += 1; }
            if p_final < 0.5 { freeze_wrong += 1; }
            band_min = band_min.min(frac);
            band_sum += frac;
            counted_sum += counted;
        }
        println!(
            "std={std:.1}: reached95 {reach}/30, wrong-side {freeze_wrong}/30, band mean {:.4} min {:.4}, counted avg {}",
            band_sum / n as f64, band_min, counted_sum / n
        );
    }
}
