//! WebAssembly bindings for the static demo page in `www/`. Every export
//! takes plain numbers or strings and returns JSON text.

use aiig_core::belief::{Belief, ScriptedModels};
use aiig_core::env::{AgentType, GameConfig, ScriptedKind};
use aiig_core::learner::{run_episode, EpisodeSpec, LearnerConfig, ProtagonistLearner, ProtagonistPolicy, ScriptedOpponent};
use aiig_core::meta::{anneal, MetaConfig, Population};
use aiig_core::nn::Checkpoint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_json<T: Serialize>(value: &T) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

fn parse<T: std::str::FromStr>(what: &str, s: &str) -> Result<T, JsError> {
    s.parse().map_err(|_| JsError::new(&format!("unknown {what} `{s}`")))
}

#[derive(Serialize)]
struct EpisodeView {
    config: GameConfig,
    opponent_type: AgentType,
    outcome: String,
    protagonist_return: f64,
    steps: Vec<aiig_core::env::TraceStep>,
}

/// Plays one episode against a scripted opponent and returns its trace with
/// the belief before and after every step. The protagonist is uniform
/// random unless `checkpoint` holds a saved protagonist (belief or
/// recurrent), in which case it plays greedily. The belief filter assumes
/// the opponent follows `kind` for both types.
#[wasm_bindgen]
pub fn episode_trace(seed: u32, kind: &str, opponent_type: &str, checkpoint: &str) -> Result<String, JsError> {
    let config = GameConfig::default();
    let kind: ScriptedKind = parse("opponent", kind)?;
    let forced: Option<AgentType> = match opponent_type {
        "" | "random" => None,
        t => Some(parse("type", t)?),
    };
    let learner = if checkpoint.trim().is_empty() {
        None
    } else {
        let ckpt = Checkpoint::from_text(checkpoint).map_err(|e| JsError::new(&e.to_string()))?;
        Some(ProtagonistLearner::from_checkpoint(&ckpt, &LearnerConfig::default()).map_err(|e| JsError::new(&e.to_string()))?)
    };
    let policy = learner.as_ref().map_or(ProtagonistPolicy::Uniform, |l| l.policy());
    let opponent = ScriptedOpponent { kind, config: config.clone() };
    let models = ScriptedModels { kind, config: config.clone() };
    let spec = EpisodeSpec { record_trace: true, ..EpisodeSpec::evaluation(seed as u64, forced) };
    let result = run_episode(&config, &policy, &opponent, &models, &spec);
    to_json(&EpisodeView {
        opponent_type: result.opponent_type,
        outcome: format!("{:?}", result.outcome),
        protagonist_return: result.protagonist_return,
        steps: result.trace,
        config,
    })
}

#[derive(Serialize)]
struct ProbeStep {
    reading: AgentType,
    likelihood_ally: f64,
    likelihood_enemy: f64,
    belief: [f64; 2],
}

/// Applies a sequence of probe readings (`"e"`/`"a"` characters, or
/// `enemy`/`ally` words separated by commas or spaces) to a prior and
/// returns the belief after each one, ordered `[ally, enemy]`.
#[wasm_bindgen]
pub fn probe_updates(prior_enemy: f64, accuracy: f64, readings: &str) -> Result<String, JsError> {
    if !(0.0..=1.0).contains(&prior_enemy) {
        return Err(JsError::new("prior must lie in [0, 1]"));
    }
    if !(accuracy > 0.5 && accuracy <= 1.0) {
        return Err(JsError::new("accuracy must lie in (0.5, 1]"));
    }
    let mut belief = Belief::from_weights([1.0 - prior_enemy, prior_enemy]).ok_or_else(|| JsError::new("bad prior"))?;
    let tokens: Vec<String> = if readings.contains([',', ' ']) {
        readings.split([',', ' ']).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
    } else {
        readings.chars().map(|c| c.to_lowercase().to_string()).collect()
    };
    let mut steps = Vec::with_capacity(tokens.len());
    for t in tokens {
        let reading = match t.as_str() {
            "e" | "enemy" => AgentType::Enemy,
            "a" | "ally" => AgentType::Ally,
            other => return Err(JsError::new(&format!("unknown reading `{other}`"))),
        };
        let like = |agent: AgentType| if agent == reading { accuracy } else { 1.0 - accuracy };
        belief = belief.update_probe(reading, accuracy);
        steps.push(ProbeStep {
            reading,
            likelihood_ally: like(AgentType::Ally),
            likelihood_enemy: like(AgentType::Enemy),
            belief: belief.probs(),
        });
    }
    to_json(&steps)
}

#[derive(Serialize)]
struct AnnealView {
    rows: Vec<aiig_core::meta::TraceRow>,
    final_k: usize,
    active: Vec<usize>,
}

/// Runs the annealer over `candidates` members (all active at the start)
/// on the mock landscape `rho = |K - target|`.
#[wasm_bindgen]
pub fn anneal_mock(seed: u32, candidates: u32, target: u32, proposals: u32, t0: f64, decay: f64, t_min: f64) -> Result<String, JsError> {
    if candidates == 0 {
        return Err(JsError::new("need at least one candidate"));
    }
    let cfg = MetaConfig { t0, decay, t_min, proposals: proposals as usize, ..MetaConfig::default() };
    cfg.validate().map_err(|e| JsError::new(&e.to_string()))?;
    let mut pop = Population::new((0..candidates as usize).collect());
    let target = target as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let rows = anneal(&mut pop, &cfg, &mut |p: &Population<usize>| (p.k() as f64 - target).abs(), &mut rng);
    to_json(&AnnealView { rows, final_k: pop.k(), active: pop.active.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_updates_match_bayes() {
        let out: serde_json::Value = serde_json::from_str(&probe_updates(0.5, 0.8, "e").unwrap()).unwrap();
        let b = &out[0]["belief"];
        assert!((b[0].as_f64().unwrap() - 0.2).abs() < 1e-12);
        assert!((b[1].as_f64().unwrap() - 0.8).abs() < 1e-12);
        let out: serde_json::Value = serde_json::from_str(&probe_updates(0.5, 0.8, "enemy, ally").unwrap()).unwrap();
        assert!((out[1]["belief"][1].as_f64().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn episode_trace_starts_uniform() {
        let out: serde_json::Value = serde_json::from_str(&episode_trace(3, "deceive", "enemy", "").unwrap()).unwrap();
        assert_eq!(out["opponent_type"], "enemy");
        assert_eq!(out["steps"][0]["prior_belief"][0], 0.5);
    }

    #[test]
    fn anneal_mock_reaches_target() {
        let out: serde_json::Value = serde_json::from_str(&anneal_mock(1, 6, 2, 200, 30.0, 0.975, 0.2).unwrap()).unwrap();
        assert_eq!(out["rows"].as_array().unwrap().len(), 200);
        assert!(out["final_k"].as_u64().unwrap() >= 1);
    }
}
