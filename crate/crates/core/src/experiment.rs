//! Experiment configuration, run directories and the five commands behind
//! the `aiig` binary: train, meta, evaluate, trace and report.
//!
//! A run directory is self-describing:
//!
//! ```text
//! {out}/{mode}-{variant}-seed{seed}/
//!   config.toml        effective configuration
//!   metrics.csv        one row per epoch
//!   meta_trace.csv     annealing log (variant `full` only)
//!   manifest.json      schema version, members, checkpoint hashes
//!   checkpoints/       protagonist, every member/type pair, belief models
//!   meta/              written by `meta`
//!   evaluation/        written by `evaluate`
//!   traces/            written by `trace`
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::belief::OpponentModelSet;
use crate::distill::{BeliefModels, DistilledModels};
use crate::ensemble::{self_play_epoch, train_full, EnsembleConfig, EnsembleError, EnsembleMember, EpochMetrics, TrainPlan};
use crate::env::{write_trace_jsonl, AgentType, GameConfig, ScriptedKind, TraceStep};
use crate::learner::{
    run_episode, EpisodeSpec, LearnerConfig, LearnerError, Mode, OpponentPolicy, ProtagonistLearner, ScriptedOpponent,
    SharedExperience,
};
use crate::meta::{anneal, evaluate_ensemble, MetaConfig, MetaError, Population, RobustnessReport, TraceRow};
use crate::nn::{Checkpoint, CheckpointError};

/// Bumped whenever a file layout or CSV column changes.
pub const SCHEMA_VERSION: u32 = 1;

/// Share of final epochs averaged by `report`.
pub const REPORT_WINDOW: f64 = 0.2;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid setting `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error(transparent)]
    TomlWrite(#[from] toml::ser::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),
    #[error("{0} does not match the hash recorded in the manifest")]
    HashMismatch(PathBuf),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("unknown opponent `{0}`: expected scripted:<rush|deceive|random> or member:<id>")]
    Opponent(String),
    #[error("no run directories with metrics were found")]
    EmptyReport,
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

type Result<T> = std::result::Result<T, ExperimentError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

fn config_err(key: impl Into<String>, reason: impl Into<String>) -> ExperimentError {
    ExperimentError::Config { key: key.into(), reason: reason.into() }
}

/// Which parts of the method are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Ensemble, neuroevolution and annealing over the active set.
    #[serde(rename = "full")]
    Full,
    /// Ensemble and neuroevolution, all members always active.
    #[serde(rename = "no_EO")]
    NoEo,
    /// One opponent learner and no neuroevolution.
    #[serde(rename = "no_EO_no_CE")]
    NoEoNoCe,
    /// One opponent learner with a chosen discount; neuroevolution stays on.
    #[serde(rename = "single_gamma")]
    SingleGamma,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoEo, Variant::NoEoNoCe, Variant::SingleGamma];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoEo => "no_EO",
            Variant::NoEoNoCe => "no_EO_no_CE",
            Variant::SingleGamma => "single_gamma",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| config_err("variant", format!("`{s}` is not one of full, no_EO, no_EO_no_CE, single_gamma")))
    }
}

/// Everything a run needs. Loaded from TOML; every section is optional and
/// falls back to the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mode: Mode,
    pub variant: Variant,
    /// Discount of the single opponent learner for `single_gamma` (required)
    /// and `no_EO_no_CE` (optional; otherwise drawn from `ensemble.gammas`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub output_dir: PathBuf,
    pub env: GameConfig,
    pub learner: LearnerConfig,
    pub ensemble: EnsembleConfig,
    pub meta: MetaConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::Belief,
            variant: Variant::Full,
            gamma: None,
            output_dir: PathBuf::from("runs"),
            env: GameConfig::default(),
            learner: LearnerConfig::default(),
            ensemble: EnsembleConfig::default(),
            meta: MetaConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            ExperimentError::Toml { source, .. } => ExperimentError::Toml { path: path.to_path_buf(), source },
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|source| ExperimentError::Toml { path: PathBuf::new(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Checks every section, naming the offending key as `section.key`.
    pub fn validate(&self) -> Result<()> {
        if let Err(e) = self.env.validate() {
            return Err(match e {
                crate::env::EnvError::InvalidConfig { key, reason } => config_err(format!("env.{key}"), reason),
                other => config_err("env", other.to_string()),
            });
        }
        if let Err(e) = self.learner.validate() {
            return Err(match e {
                LearnerError::Config { key, reason } => config_err(format!("learner.{key}"), reason),
                other => config_err("learner", other.to_string()),
            });
        }
        if let Err(e) = self.ensemble.validate() {
            return Err(match e {
                EnsembleError::Config { key, reason } => config_err(format!("ensemble.{key}"), reason),
                other => config_err("ensemble", other.to_string()),
            });
        }
        if let Err(MetaError::Config { key, reason }) = self.meta.validate() {
            return Err(config_err(format!("meta.{key}"), reason));
        }
        match (self.variant, self.gamma) {
            (Variant::SingleGamma, None) => return Err(config_err("gamma", "single_gamma needs a discount (--gamma)")),
            (Variant::Full | Variant::NoEo, Some(_)) => {
                return Err(config_err("gamma", "only the single-model variants take a discount"))
            }
            (_, Some(g)) if !(g > 0.0 && g < 1.0) => return Err(config_err("gamma", "must lie in (0, 1)")),
            _ => {}
        }
        Ok(())
    }

    /// Discount of the single learner in the one-member variants.
    pub fn single_gamma(&self) -> f64 {
        match self.gamma {
            Some(g) => g,
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5EED_6A33_A000_0001);
                self.ensemble.gammas[rng.random_range(0..self.ensemble.gammas.len())]
            }
        }
    }

    /// `single_gamma` runs are labelled with their discount.
    pub fn variant_label(&self) -> String {
        match self.variant {
            Variant::SingleGamma => format!("single_gamma{}", self.single_gamma()),
            v => v.name().to_string(),
        }
    }

    pub fn run_name(&self) -> String {
        format!("{}-{}-seed{}", self.mode, self.variant_label(), self.seed)
    }

    pub fn plan(&self) -> TrainPlan {
        let (member_gammas, evolution, meta) = match self.variant {
            Variant::Full => (self.ensemble.gammas.clone(), true, Some(self.meta.clone())),
            Variant::NoEo => (self.ensemble.gammas.clone(), true, None),
            Variant::NoEoNoCe => (vec![self.single_gamma()], false, None),
            Variant::SingleGamma => (vec![self.single_gamma()], true, None),
        };
        TrainPlan {
            game: self.env.clone(),
            learner: self.learner.clone(),
            ensemble: self.ensemble.clone(),
            member_gammas,
            evolution,
            meta,
            mode: self.mode,
            seed: self.seed,
        }
    }

    /// Column order of `metrics.csv`. Identical for every variant: the
    /// member columns follow `ensemble.gammas` and stay empty when unused.
    pub fn metrics_columns(&self) -> Vec<String> {
        let mut cols: Vec<String> =
            ["epoch", "env_steps", "protagonist_return", "protagonist_belief_return", "opponent_return"]
                .map(String::from)
                .to_vec();
        cols.extend((0..self.ensemble.gammas.len()).map(|i| format!("member_{i}_return")));
        cols.extend(
            ["buffer_size", "active_k", "evo_replacements", "critic_loss", "rho", "distilled", "wall_time_s"]
                .map(String::from),
        );
        cols
    }
}

/// Runs `f` on a single worker thread when `deterministic` is set. Results
/// never depend on the thread count; this only pins the schedule.
pub fn with_determinism<T: Send>(deterministic: bool, f: impl FnOnce() -> T + Send) -> T {
    #[cfg(feature = "parallel")]
    if deterministic {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(1).build() {
            return pool.install(f);
        }
    }
    let _ = deterministic;
    f()
}

/// Content hash in git's object format (`blob <len>\0<bytes>`) over SHA-256.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMember {
    pub id: usize,
    pub gamma: f64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub mode: Mode,
    pub variant: String,
    pub seed: u64,
    pub epochs: usize,
    pub metrics_columns: Vec<String>,
    pub members: Vec<ManifestMember>,
    /// Relative path to `git_blob_hash` of its contents.
    pub files: BTreeMap<String, String>,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn metrics_record(m: &EpochMetrics, members: usize, wall: Option<f64>) -> Vec<String> {
    let mut row = vec![
        m.epoch.to_string(),
        m.env_steps.to_string(),
        m.protagonist_return.to_string(),
        m.protagonist_belief_return.to_string(),
        m.opponent_return.to_string(),
    ];
    row.extend((0..members).map(|i| fmt_opt(m.member_returns.get(&i).copied())));
    row.extend([
        m.buffer_size.to_string(),
        m.active_k.to_string(),
        m.evo_replacements.to_string(),
        m.critic_loss.to_string(),
        fmt_opt(m.rho),
        u8::from(m.distilled).to_string(),
        fmt_opt(wall),
    ]);
    row
}

fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["proposal_index", "op", "K_before", "K_after", "rho_old", "rho_new", "T", "accepted"])?;
    for r in rows {
        w.write_record([
            r.proposal_index.to_string(),
            r.op.clone(),
            r.k_before.to_string(),
            r.k_after.to_string(),
            r.rho_old.to_string(),
            fmt_opt(r.rho_new),
            r.temperature.to_string(),
            r.accepted.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn member_file(id: usize, t: AgentType) -> String {
    format!("checkpoints/member-{id}-type-{t}.ckpt")
}

fn model_file(t: AgentType) -> String {
    format!("checkpoints/model-type-{t}.ckpt")
}

const PROTAGONIST_FILE: &str = "checkpoints/protagonist.ckpt";

/// Result of `cmd_train`.
#[derive(Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub metrics: Vec<EpochMetrics>,
    pub manifest: Manifest,
}

/// Trains one run and writes its directory under `out_root`.
pub fn cmd_train(cfg: &ExperimentConfig, out_root: &Path, deterministic: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    let run_dir = out_root.join(cfg.run_name());
    fs::create_dir_all(&run_dir).map_err(io_err(&run_dir))?;
    write_file(&run_dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;

    let columns = cfg.metrics_columns();
    let metrics_path = run_dir.join("metrics.csv");
    let mut writer = csv::Writer::from_path(&metrics_path)?;
    writer.write_record(&columns)?;
    let members = cfg.ensemble.gammas.len();
    let start = Instant::now();
    let mut write_error: Option<csv::Error> = None;

    let plan = cfg.plan();
    let state = with_determinism(deterministic, || {
        train_full(&plan, &mut |m, _| {
            if write_error.is_some() {
                return;
            }
            let wall = (!deterministic).then(|| start.elapsed().as_secs_f64());
            let res = writer.write_record(metrics_record(m, members, wall)).and_then(|_| writer.flush().map_err(Into::into));
            if let Err(e) = res {
                write_error = Some(e);
            }
            log::info!("epoch {} protagonist {:.3} opponent {:.3}", m.epoch, m.protagonist_return, m.opponent_return);
        })
    })?;
    if let Some(e) = write_error {
        return Err(e.into());
    }
    drop(writer);

    if cfg.variant == Variant::Full {
        write_trace_csv(&run_dir.join("meta_trace.csv"), &state.meta_trace)?;
    }

    let mut files = BTreeMap::new();
    let mut save = |rel: String, ckpt: &Checkpoint| -> Result<()> {
        let text = ckpt.to_text();
        write_file(&run_dir.join(&rel), text.as_bytes())?;
        files.insert(rel, git_blob_hash(text.as_bytes()));
        Ok(())
    };
    save(PROTAGONIST_FILE.into(), &state.protagonist.to_checkpoint(cfg.seed))?;
    let mut manifest_members = Vec::new();
    for (member, active) in state
        .population
        .active
        .iter()
        .map(|m| (m, true))
        .chain(state.population.deactivated.iter().map(|m| (m, false)))
    {
        for t in AgentType::ALL {
            save(member_file(member.id, t), &member.to_checkpoint(t, cfg.seed))?;
        }
        manifest_members.push(ManifestMember { id: member.id, gamma: member.gamma, active });
    }
    manifest_members.sort_by_key(|m| m.id);
    if let BeliefModels::Distilled(models) = &state.models {
        for t in AgentType::ALL {
            save(model_file(t), &models.to_checkpoint(t, cfg.seed, cfg.ensemble.epochs as u64))?;
        }
    }
    for rel in ["config.toml", "metrics.csv"] {
        let bytes = fs::read(run_dir.join(rel)).map_err(io_err(&run_dir.join(rel)))?;
        files.insert(rel.to_string(), git_blob_hash(&bytes));
    }

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        mode: cfg.mode,
        variant: cfg.variant_label(),
        seed: cfg.seed,
        epochs: cfg.ensemble.epochs,
        metrics_columns: columns,
        members: manifest_members,
        files,
    };
    write_file(&run_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(TrainOutcome { run_dir, metrics: state.metrics, manifest })
}

/// A trained run read back from disk. Checkpoints are verified against the
/// manifest hashes as they are loaded.
#[derive(Debug, Clone)]
pub struct Run {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub manifest: Manifest,
}

impl Run {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let config = ExperimentConfig::load(dir.join("config.toml"))?;
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => ExperimentError::MissingCheckpoint(manifest_path.clone()),
            _ => ExperimentError::Io { path: manifest_path.clone(), source: e },
        })?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        Ok(Self { dir, config, manifest })
    }

    fn checkpoint(&self, rel: &str) -> Result<Checkpoint> {
        let path = self.dir.join(rel);
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => ExperimentError::MissingCheckpoint(path.clone()),
            _ => ExperimentError::Io { path: path.clone(), source: e },
        })?;
        match self.manifest.files.get(rel) {
            Some(h) if *h == git_blob_hash(&bytes) => {}
            _ => return Err(ExperimentError::HashMismatch(path)),
        }
        let text = String::from_utf8(bytes)
            .map_err(|_| ExperimentError::Malformed { path: path.clone(), reason: "not UTF-8".into() })?;
        Ok(Checkpoint::from_text(&text)?)
    }

    pub fn protagonist(&self) -> Result<ProtagonistLearner> {
        Ok(ProtagonistLearner::from_checkpoint(&self.checkpoint(PROTAGONIST_FILE)?, &self.config.learner)?)
    }

    pub fn population(&self) -> Result<Population<EnsembleMember>> {
        let mut pop = Population { active: Vec::new(), deactivated: Vec::new() };
        for m in &self.manifest.members {
            let member = EnsembleMember::from_checkpoints(
                &self.checkpoint(&member_file(m.id, AgentType::Ally))?,
                &self.checkpoint(&member_file(m.id, AgentType::Enemy))?,
                &self.config.learner,
            )?;
            if m.active {
                pop.active.push(member);
            } else {
                pop.deactivated.push(member);
            }
        }
        if pop.active.is_empty() {
            let path = self.dir.join("manifest.json");
            return Err(ExperimentError::Malformed { path, reason: "no active member".into() });
        }
        Ok(pop)
    }

    /// Distilled models if the run produced them, otherwise uninformative.
    pub fn models(&self) -> Result<BeliefModels> {
        if self.config.mode == Mode::Recurrent || !self.manifest.files.contains_key(&model_file(AgentType::Ally)) {
            return Ok(BeliefModels::Uninformative);
        }
        Ok(BeliefModels::Distilled(DistilledModels::from_checkpoints(
            &self.checkpoint(&model_file(AgentType::Ally))?,
            &self.checkpoint(&model_file(AgentType::Enemy))?,
            self.config.env.clone(),
        )?))
    }

    pub fn active_k(&self) -> usize {
        self.manifest.members.iter().filter(|m| m.active).count()
    }

    fn belief_models(&self, models: &BeliefModels) -> BeliefModels {
        match self.config.mode {
            Mode::Belief => models.clone(),
            Mode::Recurrent => BeliefModels::Uninformative,
        }
    }
}

/// Result of `cmd_meta`.
#[derive(Debug)]
pub struct MetaOutcome {
    pub trace: Vec<TraceRow>,
    pub active: Vec<usize>,
    pub deactivated: Vec<usize>,
}

#[derive(Serialize)]
struct PopulationFile<'a> {
    active: &'a [usize],
    deactivated: &'a [usize],
    proposals: usize,
}

/// Anneals the member set of a trained run. Each proposal continues
/// training a copy of the saved protagonist against the proposed ensemble
/// for `meta.epochs_per_proposal` epochs, then scores it with a freshly
/// trained evaluation opponent. Writes `meta/meta_trace.csv` and
/// `meta/population.json`.
pub fn cmd_meta(run: &Run, deterministic: bool) -> Result<MetaOutcome> {
    let cfg = &run.config;
    let protagonist = run.protagonist()?;
    let mut pop = run.population()?;
    let models = run.belief_models(&run.models()?);
    let mut trial = 0u64;
    let mut evaluator = |p: &Population<EnsembleMember>| -> f64 {
        trial += 1;
        let seed = cfg.seed ^ trial.wrapping_mul(0xA24B_AED4_963E_E407);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut learner = protagonist.clone();
        let mut members = p.clone();
        let mut shared = SharedExperience::new(cfg.learner.buffer_capacity);
        for _ in 0..cfg.meta.epochs_per_proposal {
            self_play_epoch(&mut learner, &mut members, &mut shared, &models, &cfg.env, &cfg.ensemble, &mut rng);
        }
        evaluate_ensemble(&learner, &models, &cfg.env, &cfg.learner, &cfg.meta, members.k(), rng.random()).report.rho
    };
    let trace = with_determinism(deterministic, || {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x3E7A_0000_0000_0001);
        anneal(&mut pop, &cfg.meta, &mut evaluator, &mut rng)
    });

    let dir = run.dir.join("meta");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_trace_csv(&dir.join("meta_trace.csv"), &trace)?;
    let active: Vec<usize> = pop.active.iter().map(|m| m.id).collect();
    let deactivated: Vec<usize> = pop.deactivated.iter().map(|m| m.id).collect();
    let file = PopulationFile { active: &active, deactivated: &deactivated, proposals: trace.len() };
    write_file(&dir.join("population.json"), serde_json::to_string_pretty(&file)?.as_bytes())?;
    Ok(MetaOutcome { trace, active, deactivated })
}

/// Written to `evaluation/report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(flatten)]
    pub report: RobustnessReport,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Evaluation opponent reward over enemy-type episodes only.
    pub r_o_enemy: Option<f64>,
    pub eval_gamma: f64,
    pub eval_episodes: usize,
    pub training_steps: usize,
    pub seed: u64,
}

/// Scores a run's protagonist against a freshly trained evaluation opponent.
/// Writes `evaluation/evaluation.csv` (one row per episode) and
/// `evaluation/report.json`.
pub fn cmd_evaluate(run: &Run, seed: u64, deterministic: bool) -> Result<EvaluationReport> {
    let cfg = &run.config;
    let protagonist = run.protagonist()?;
    let models = run.belief_models(&run.models()?);
    let k = run.active_k();
    let eval = with_determinism(deterministic, || {
        evaluate_ensemble(&protagonist, &models, &cfg.env, &cfg.learner, &cfg.meta, k, seed)
    });

    let dir = run.dir.join("evaluation");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let path = dir.join("evaluation.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["episode", "seed", "opponent_type", "steps", "protagonist_return", "opponent_return"])?;
    for e in &eval.episodes {
        w.write_record([
            e.episode.to_string(),
            e.seed.to_string(),
            e.opponent_type.to_string(),
            e.steps.to_string(),
            e.protagonist_return.to_string(),
            e.opponent_return.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(&path))?;

    let report = EvaluationReport {
        report: eval.report,
        lambda1: cfg.meta.lambda1,
        lambda2: cfg.meta.lambda2,
        r_o_enemy: eval.r_o_enemy,
        eval_gamma: eval.eval_gamma,
        eval_episodes: eval.episodes.len(),
        training_steps: eval.training_steps,
        seed,
    };
    write_file(&dir.join("report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(report)
}

/// Opponent for `cmd_trace`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpponentSpec {
    Scripted(ScriptedKind),
    Member(usize),
}

impl FromStr for OpponentSpec {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || ExperimentError::Opponent(s.to_string());
        match s.split_once(':') {
            Some(("scripted", kind)) => Ok(OpponentSpec::Scripted(kind.parse().map_err(|_| bad())?)),
            Some(("member", id)) => Ok(OpponentSpec::Member(id.parse().map_err(|_| bad())?)),
            _ => Err(bad()),
        }
    }
}

/// Plays one greedy, fully logged episode and writes it as JSON lines to
/// `out` (default `traces/trace-seed{seed}.jsonl` in the run).
pub fn cmd_trace(
    run: &Run,
    opponent: OpponentSpec,
    opponent_type: Option<AgentType>,
    seed: u64,
    out: Option<&Path>,
) -> Result<(PathBuf, Vec<TraceStep>)> {
    let cfg = &run.config;
    let protagonist = run.protagonist()?;
    let models = run.belief_models(&run.models()?);
    let pop;
    let scripted;
    let opp: &dyn OpponentPolicy = match opponent {
        OpponentSpec::Scripted(kind) => {
            scripted = ScriptedOpponent { kind, config: cfg.env.clone() };
            &scripted
        }
        OpponentSpec::Member(id) => {
            pop = run.population()?;
            let member = pop
                .active
                .iter()
                .chain(pop.deactivated.iter())
                .find(|m| m.id == id)
                .ok_or_else(|| ExperimentError::Opponent(format!("member:{id}")))?;
            return finish_trace(run, &protagonist, &member.opponent(&cfg.env), &models, opponent_type, seed, out);
        }
    };
    finish_trace(run, &protagonist, opp, &models, opponent_type, seed, out)
}

fn finish_trace(
    run: &Run,
    protagonist: &ProtagonistLearner,
    opponent: &dyn OpponentPolicy,
    models: &(dyn OpponentModelSet + Sync),
    opponent_type: Option<AgentType>,
    seed: u64,
    out: Option<&Path>,
) -> Result<(PathBuf, Vec<TraceStep>)> {
    let spec = EpisodeSpec { record_trace: true, ..EpisodeSpec::evaluation(seed, opponent_type) };
    let result = run_episode(&run.config.env, &protagonist.policy(), opponent, models, &spec);
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| run.dir.join(format!("traces/trace-seed{seed}.jsonl")));
    let mut buf = Vec::new();
    write_trace_jsonl(&mut buf, &result.trace).map_err(io_err(&path))?;
    write_file(&path, &buf)?;
    Ok((path, result.trace))
}

/// One (mode, variant) cell of the summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub mode: Mode,
    pub variant: String,
    pub runs: usize,
    /// Mean protagonist training return over the final epochs, averaged over runs.
    pub train_reward: Option<f64>,
    /// Mean evaluation return (`r_p`), averaged over evaluated runs.
    pub eval_reward: Option<f64>,
    pub evaluated_runs: usize,
}

/// Difference `a - b` between two cells of the same mode (or two modes).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gap {
    pub comparison: String,
    pub scope: String,
    pub train_gap: Option<f64>,
    pub eval_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub gaps: Vec<Gap>,
    pub window: f64,
}

impl Report {
    pub fn row(&self, mode: Mode, variant: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.mode == mode && r.variant == variant)
    }
}

/// Mean of `column` over the final `window` share of rows (at least one).
pub fn tail_mean(path: &Path, column: &str, window: f64) -> Result<Option<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let idx = r
        .headers()?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| ExperimentError::Malformed { path: path.to_path_buf(), reason: format!("no `{column}` column") })?;
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v: f64 = rec[idx]
            .parse()
            .map_err(|_| ExperimentError::Malformed { path: path.to_path_buf(), reason: format!("bad `{column}` value") })?;
        values.push(v);
    }
    if values.is_empty() {
        return Ok(None);
    }
    let n = ((values.len() as f64 * window).ceil() as usize).clamp(1, values.len());
    let tail = &values[values.len() - n..];
    Ok(Some(tail.iter().sum::<f64>() / n as f64))
}

/// Finds run directories: each path is either a run (has `metrics.csv`) or
/// a directory whose immediate children are runs.
pub fn discover_runs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut runs = Vec::new();
    for p in paths {
        if p.join("metrics.csv").is_file() {
            runs.push(p.clone());
            continue;
        }
        if p.is_dir() {
            let mut children: Vec<PathBuf> = fs::read_dir(p)
                .map_err(io_err(p))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|c| c.join("metrics.csv").is_file())
                .collect();
            children.sort();
            runs.extend(children);
        }
    }
    Ok(runs)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

/// Aggregates runs into the (mode x variant) table plus the directional
/// gaps, and writes `summary.csv`, `gaps.csv` and `summary.txt` to `out`.
pub fn cmd_report(run_paths: &[PathBuf], out: &Path) -> Result<Report> {
    let dirs = discover_runs(run_paths)?;
    if dirs.is_empty() {
        return Err(ExperimentError::EmptyReport);
    }
    // (mode, variant) -> (train means, eval means)
    let mut cells: BTreeMap<(String, String), (Mode, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for dir in &dirs {
        let cfg = ExperimentConfig::load(dir.join("config.toml"))?;
        let entry = cells.entry((cfg.mode.to_string(), cfg.variant_label())).or_insert((cfg.mode, vec![], vec![]));
        if let Some(m) = tail_mean(&dir.join("metrics.csv"), "protagonist_return", REPORT_WINDOW)? {
            entry.1.push(m);
        }
        let report_path = dir.join("evaluation/report.json");
        if report_path.is_file() {
            let text = fs::read_to_string(&report_path).map_err(io_err(&report_path))?;
            let r: EvaluationReport = serde_json::from_str(&text)?;
            entry.2.push(r.report.r_p);
        }
    }

    // every standard cell is listed, populated or not
    let mut labels: Vec<String> = vec!["full".into(), "no_EO".into(), "no_EO_no_CE".into()];
    let mut singles: Vec<String> = cells.keys().map(|(_, v)| v.clone()).filter(|v| v.starts_with("single_gamma")).collect();
    singles.sort();
    singles.dedup();
    if singles.is_empty() {
        singles.push("single_gamma".into());
    }
    labels.extend(singles.iter().cloned());

    let mut rows = Vec::new();
    for mode in [Mode::Belief, Mode::Recurrent] {
        for v in &labels {
            let cell = cells.get(&(mode.to_string(), v.clone()));
            rows.push(ReportRow {
                mode,
                variant: v.clone(),
                runs: cell.map_or(0, |c| c.1.len()),
                train_reward: cell.and_then(|c| mean(&c.1)),
                eval_reward: cell.and_then(|c| mean(&c.2)),
                evaluated_runs: cell.map_or(0, |c| c.2.len()),
            });
        }
    }

    let pick = |mode: Mode, v: &str| rows.iter().find(|r| r.mode == mode && r.variant == v);
    let gap = |comparison: &str, scope: String, a: Option<&ReportRow>, b: Option<&ReportRow>| Gap {
        comparison: comparison.to_string(),
        scope,
        train_gap: diff(a.and_then(|r| r.train_reward), b.and_then(|r| r.train_reward)),
        eval_gap: diff(a.and_then(|r| r.eval_reward), b.and_then(|r| r.eval_reward)),
    };
    let mut gaps = Vec::new();
    for mode in [Mode::Belief, Mode::Recurrent] {
        for s in &singles {
            gaps.push(gap("ensemble_vs_single", format!("{mode} full - {s}"), pick(mode, "full"), pick(mode, s)));
        }
        gaps.push(gap("EO", format!("{mode} full - no_EO"), pick(mode, "full"), pick(mode, "no_EO")));
        gaps.push(gap("CE", format!("{mode} no_EO - no_EO_no_CE"), pick(mode, "no_EO"), pick(mode, "no_EO_no_CE")));
    }
    gaps.push(gap(
        "belief_vs_recurrent",
        "full belief - full recurrent".into(),
        pick(Mode::Belief, "full"),
        pick(Mode::Recurrent, "full"),
    ));

    fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["mode", "variant", "runs", "train_reward", "eval_reward", "evaluated_runs"])?;
    for r in &rows {
        w.write_record([
            r.mode.to_string(),
            r.variant.clone(),
            r.runs.to_string(),
            fmt_opt(r.train_reward),
            fmt_opt(r.eval_reward),
            r.evaluated_runs.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(&path))?;
    let path = out.join("gaps.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["comparison", "scope", "train_gap", "eval_gap"])?;
    for g in &gaps {
        w.write_record([g.comparison.clone(), g.scope.clone(), fmt_opt(g.train_gap), fmt_opt(g.eval_gap)])?;
    }
    w.flush().map_err(io_err(&path))?;

    let report = Report { rows, gaps, window: REPORT_WINDOW };
    write_file(&out.join("summary.txt"), render(&report, dirs.len()).as_bytes())?;
    Ok(report)
}

fn render(report: &Report, runs: usize) -> String {
    let cell = |x: Option<f64>| x.map(|v| format!("{v:9.3}")).unwrap_or_else(|| format!("{:>9}", "-"));
    let mut s = format!(
        "{runs} runs. Training reward: mean protagonist return over the final {:.0}% of epochs. \
         Evaluation reward: r_p against a freshly trained evaluation opponent. '-' marks a missing cell.\n\n",
        report.window * 100.0
    );
    s += &format!("{:<10} {:<20} {:>4} {:>9} {:>9}\n", "mode", "variant", "runs", "train", "eval");
    for r in &report.rows {
        s += &format!(
            "{:<10} {:<20} {:>4} {} {}\n",
            r.mode.to_string(),
            r.variant,
            r.runs,
            cell(r.train_reward),
            cell(r.eval_reward)
        );
    }
    s += "\nGaps (positive favours the first term; observed, not asserted):\n";
    for g in &report.gaps {
        s += &format!("{:<20} {:<36} {} {}\n", g.comparison, g.scope, cell(g.train_gap), cell(g.eval_gap));
    }
    s
}

/// Trains and evaluates every (mode, variant) cell for each seed, then
/// reports. `single_gamma` uses the config's `gamma`, or 0.99.
pub fn run_matrix(base: &ExperimentConfig, out_root: &Path, seeds: &[u64], deterministic: bool) -> Result<Report> {
    let mut dirs = Vec::new();
    for mode in [Mode::Belief, Mode::Recurrent] {
        for variant in Variant::ALL {
            for &seed in seeds {
                let gamma = match variant {
                    Variant::SingleGamma => Some(base.gamma.unwrap_or(0.99)),
                    Variant::NoEoNoCe => base.gamma,
                    _ => None,
                };
                let cfg = ExperimentConfig { seed, mode, variant, gamma, ..base.clone() };
                let trained = cmd_train(&cfg, out_root, deterministic)?;
                let run = Run::open(&trained.run_dir)?;
                cmd_evaluate(&run, seed ^ 0xE7A1, deterministic)?;
                dirs.push(trained.run_dir);
            }
        }
    }
    cmd_report(&dirs, &out_root.join("report"))
}

/// A configuration small enough for tests and the quick matrix.
pub fn tiny_config() -> ExperimentConfig {
    ExperimentConfig {
        learner: LearnerConfig { hidden: vec![16, 16], batch_size: 32, recurrent_hidden: 8, ..LearnerConfig::default() },
        ensemble: EnsembleConfig {
            epochs: 3,
            episodes_per_epoch: 4,
            grad_steps: 2,
            evo_population: 2,
            evo_episodes: 1,
            distill_cadence: 3,
            distill: crate::distill::DistillConfig { steps: 20, min_samples: 50, ..Default::default() },
            ..EnsembleConfig::default()
        },
        meta: MetaConfig {
            proposals: 2,
            epochs_per_proposal: 1,
            eval_steps: 100,
            eval_episodes: 6,
            eval_batch_episodes: 2,
            eval_grad_steps: 2,
            ..MetaConfig::default()
        },
        ..ExperimentConfig::default()
    }
}
