//! Experiment orchestration: JSON configs, seeded end-to-end runs, regret
//! logs, slope fits, and multi-seed sweeps.
//!
//! A run is fully determined by (config, master seed). Every random stream
//! is derived from the master seed with a fixed stream id, parallel maps
//! produce per-index outputs merged in index order, and the CSV writes
//! floats with Rust's shortest-roundtrip formatting, so re-running a config
//! reproduces the log byte for byte. Regret is exact: each episode's gap is
//! computed from the policy's true value under the spec, not from sampled
//! returns, which removes Monte-Carlo noise from downstream comparisons.
//!
//! The log is flushed after every row, so a crashed run leaves a readable
//! prefix plus an error record in summary.json.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{random_policy, LsviParams, LsviState};
use crate::error::{Error, Result};
use crate::estimator::{alpha_default, kappa_default, WlsParams};
use crate::linalg::ols;
use crate::mdp::{
    generate_spec, optimal_values, policy_value, rollout, validate_spec, GeneratorParams,
    LinearMdpSpec, TabularPolicy,
};
use crate::nets::{build_theta_net, ValueNet};
use crate::planner::{feature_probes, HfLearner, ModelCandidate};
use crate::rng::{stream_rng, streams};
use crate::voful::VofulParams;

/// Bumped whenever the regret.csv column set changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Where the environment comes from: a spec embedded in the config or the
/// seeded generator.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum SpecSource {
    Inline { spec: LinearMdpSpec },
    Generator { params: GeneratorParams },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    HfBonus,
    HfExact,
    Lsvi,
    Random,
}

impl AgentKind {
    pub fn name(&self) -> &'static str {
        match self {
            AgentKind::HfBonus => "hf_bonus",
            AgentKind::HfExact => "hf_exact",
            AgentKind::Lsvi => "lsvi",
            AgentKind::Random => "random",
        }
    }
}

/// Optional replacements for the theoretical constants. Theory values are
/// extremely conservative at desk scale; benchmark configs document every
/// override they apply.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Overrides {
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub eps_bonus: Option<f64>,
    pub kappa: Option<f64>,
    pub beta: Option<f64>,
    pub iota_scale: Option<f64>,
    pub voful_radius: Option<f64>,
    pub voful_resolution: Option<f64>,
    pub voful_budget: Option<usize>,
    pub dir_extra: Option<usize>,
}

impl Overrides {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("eps_bonus", self.eps_bonus),
            ("kappa", self.kappa),
            ("beta", self.beta),
            ("iota_scale", self.iota_scale),
            ("voful_radius", self.voful_radius),
            ("voful_resolution", self.voful_resolution),
        ] {
            if let Some(x) = v {
                if !(x > 0.0 && x.is_finite()) {
                    return Err(Error::Config(format!(
                        "override {name} must be positive, got {x}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Value-net construction knobs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Parameter ball radius; defaults to 2 sqrt(d) at build time.
    pub radius: Option<f64>,
    pub resolution: f64,
    pub budget: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { radius: None, resolution: 0.5, budget: 100_000 }
    }
}

fn default_delta() -> f64 {
    0.01
}

fn default_exact_candidates() -> usize {
    8
}

fn default_validation_probes() -> usize {
    10_000
}

/// One experiment: a spec, an agent, an episode budget, and constants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Free-text documentation carried along with the config.
    #[serde(default)]
    pub comment: String,
    pub spec: SpecSource,
    pub agent: AgentKind,
    pub episodes: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub overrides: Overrides,
    #[serde(default)]
    pub net: NetConfig,
    /// Model class size for the exact agent: the true model plus seeded
    /// decoys.
    #[serde(default = "default_exact_candidates")]
    pub exact_candidates: usize,
    /// Probe count for the randomized part of inline-spec validation.
    #[serde(default = "default_validation_probes")]
    pub validation_probes: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Rayon pool size; falls back to the LINMDP_THREADS environment
    /// variable, then to rayon's default. Results do not depend on it.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub record_weights: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must be in (0,1), got {}", self.delta)));
        }
        if !(self.net.resolution > 0.0 && self.net.resolution.is_finite()) {
            return Err(Error::Config(format!(
                "net resolution must be positive, got {}",
                self.net.resolution
            )));
        }
        if let Some(r) = self.net.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("net radius must be positive, got {r}")));
            }
        }
        if self.net.budget == 0 {
            return Err(Error::Config("net budget must be at least 1".into()));
        }
        if self.agent == AgentKind::HfExact && self.exact_candidates == 0 {
            return Err(Error::Config("exact agent needs at least one candidate".into()));
        }
        self.overrides.validate()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config does not parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    /// Hash of the canonical JSON form, recorded in every artifact so logs
    /// can be traced back to their exact configuration.
    pub fn sha256(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<String>()
    }
}

/// The constants a run actually used after applying overrides.
#[derive(Clone, Debug, Serialize)]
pub struct ResolvedConstants {
    pub lambda: f64,
    pub alpha: f64,
    pub eps_bonus: f64,
    pub kappa: f64,
    pub beta: f64,
    pub iota_scale: f64,
    pub net_radius: f64,
    pub net_resolution: f64,
    pub voful_radius: f64,
    pub voful_resolution: f64,
}

/// One episode's log row.
#[derive(Clone, Debug, PartialEq)]
pub struct RegretRow {
    pub k: usize,
    pub inst_regret: f64,
    pub cum_regret: f64,
    pub episode_reward: f64,
    pub optimistic_value: f64,
    /// Episode index of the matching diagnostics entry, 0 when the agent
    /// produces no diagnostics.
    pub diagnostics_id: usize,
}

/// Planner internals captured per episode for the optimistic agents.
#[derive(Clone, Debug, Serialize)]
pub struct EpisodeDiagnostics {
    pub k: usize,
    /// Exact mode: surviving model candidates. Bonus mode: alive reward
    /// candidates.
    pub survivors: usize,
    pub max_bonus: f64,
    pub max_projection_error: f64,
    pub voful_alive: usize,
    pub pruned_now: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub status: String,
    pub error: Option<String>,
    pub agent: AgentKind,
    pub episodes_completed: usize,
    pub final_cum_regret: f64,
    /// Log-log slope over the default window, when enough points exist.
    pub slope: Option<f64>,
    pub slope_window: Option<(usize, usize)>,
    pub optimal_value: f64,
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub dim: usize,
    pub seed: u64,
    pub config_sha256: String,
    pub constants: ResolvedConstants,
}

/// Everything a run produced, also persisted under out_dir when set.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub rows: Vec<RegretRow>,
    pub diagnostics: Vec<EpisodeDiagnostics>,
    pub summary: RunSummary,
}

fn resolve_constants(config: &ExperimentConfig, spec: &LinearMdpSpec) -> ResolvedConstants {
    let d = spec.dim;
    let kh = (config.episodes as f64) * (spec.horizon as f64);
    let ov = &config.overrides;
    ResolvedConstants {
        lambda: ov.lambda.unwrap_or(1.0 / (spec.horizon as f64).powi(2)),
        alpha: ov.alpha.unwrap_or_else(|| alpha_default(d, kh, config.delta)),
        eps_bonus: ov.eps_bonus.unwrap_or_else(|| kh.powi(-4)),
        kappa: ov.kappa.unwrap_or_else(|| kappa_default(d, kh, config.delta)),
        beta: ov.beta.unwrap_or_else(|| {
            LsviParams::from_scale(d, config.episodes, spec.horizon, config.delta, 1.0).beta
        }),
        iota_scale: ov.iota_scale.unwrap_or(1.0),
        net_radius: config.net.radius.unwrap_or(2.0 * (d as f64).sqrt()),
        net_resolution: config.net.resolution,
        voful_radius: ov.voful_radius.unwrap_or((d as f64).sqrt().max(2.0)),
        voful_resolution: ov.voful_resolution.unwrap_or(0.5),
    }
}

fn wls_params(config: &ExperimentConfig, c: &ResolvedConstants) -> WlsParams {
    WlsParams {
        lambda: c.lambda,
        alpha: c.alpha,
        eps_bonus: c.eps_bonus,
        kappa: c.kappa,
        refresh_every: crate::linalg::REFRESH_EVERY,
        record_weights: config.record_weights,
    }
}

fn voful_params(config: &ExperimentConfig, c: &ResolvedConstants) -> VofulParams {
    VofulParams {
        delta: config.delta,
        iota_scale: c.iota_scale,
        dir_extra: config.overrides.dir_extra.unwrap_or(128),
        radius: c.voful_radius,
        candidate_resolution: c.voful_resolution,
        candidate_budget: config.overrides.voful_budget.unwrap_or(20_000),
        seed: config.seed,
    }
}

/// The true model plus seeded decoy models sharing its dimensions. Decoy
/// kernels come from independently generated specs; composed with the base
/// features they remain valid transition kernels.
fn exact_candidate_class(
    spec: &LinearMdpSpec,
    count: usize,
    seed: u64,
) -> Vec<ModelCandidate> {
    let mut out = vec![ModelCandidate::from_spec(spec)];
    let mut attempt = 0u64;
    while out.len() < count && attempt < 64 + 8 * count as u64 {
        let params = GeneratorParams {
            num_states: spec.num_states,
            num_actions: spec.num_actions,
            horizon: spec.horizon,
            dim: spec.dim,
            seed: seed.wrapping_add(attempt).wrapping_mul(2).wrapping_add(1),
            ..GeneratorParams::default()
        };
        attempt += 1;
        if let Ok(decoy) = generate_spec(&params) {
            out.push(ModelCandidate::from_spec(&decoy));
        }
    }
    out
}

enum AgentState {
    HfBonus(Box<HfLearner>),
    HfExact(Box<HfLearner>, Vec<ModelCandidate>, Vec<DVector<f64>>),
    Lsvi(LsviState),
    Random(ChaCha12Rng),
}

struct LogSink {
    file: Option<fs::File>,
}

impl LogSink {
    fn create(dir: Option<&Path>) -> Result<Self> {
        let file = match dir {
            Some(d) => {
                fs::create_dir_all(d)?;
                Some(fs::File::create(d.join("regret.csv"))?)
            }
            None => None,
        };
        Ok(Self { file })
    }

    fn line(&mut self, text: &str) -> Result<()> {
        if let Some(f) = &mut self.file {
            writeln!(f, "{text}")?;
            f.flush()?;
        }
        Ok(())
    }
}

fn csv_row_line(row: &RegretRow) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        CSV_SCHEMA_VERSION,
        row.k,
        row.inst_regret,
        row.cum_regret,
        row.episode_reward,
        row.optimistic_value,
        row.diagnostics_id
    )
}

/// Default slope window for run summaries: the tail from max(8, K/16) to K.
/// Returns None when the window holds fewer than 8 usable points.
fn summary_slope(rows: &[RegretRow], episodes: usize) -> (Option<f64>, Option<(usize, usize)>) {
    let k_min = (episodes / 16).max(8);
    if episodes < 16 {
        return (None, None);
    }
    match fit_slope(rows, k_min, episodes) {
        Ok((slope, _, _)) => (Some(slope), Some((k_min, episodes))),
        Err(_) => (None, None),
    }
}

fn write_json<T: Serialize>(dir: Option<&Path>, name: &str, value: &T) -> Result<()> {
    if let Some(d) = dir {
        fs::write(d.join(name), serde_json::to_string_pretty(value)?)?;
    }
    Ok(())
}

/// Runs one configured experiment end to end, returning every row plus the
/// summary and writing regret.csv, summary.json, and diagnostics.json when
/// an output directory is set. Agent failures (an emptied confidence set,
/// numerical trouble) flush the partial log and an error summary before
/// propagating.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let spec = match &config.spec {
        SpecSource::Inline { spec } => {
            let report = validate_spec(spec, config.validation_probes, config.seed)?;
            if !report.passed() {
                let witness = report
                    .failures()
                    .first()
                    .map(|c| format!("{}: {}", c.name, c.detail))
                    .unwrap_or_default();
                return Err(Error::Validation(format!("inline spec failed checks: {witness}")));
            }
            spec.clone()
        }
        SpecSource::Generator { params } => generate_spec(params)?,
    };
    let threads = config.threads.or_else(|| {
        std::env::var("LINMDP_THREADS").ok().and_then(|s| s.parse().ok())
    });
    match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| run_inner(config, &spec))
        }
        None => run_inner(config, &spec),
    }
}

fn run_inner(config: &ExperimentConfig, spec: &LinearMdpSpec) -> Result<RunArtifacts> {
    let constants = resolve_constants(config, spec);
    let star = optimal_values(spec);
    let star1 = star.v[0][spec.initial_state];
    let dir = config.out_dir.as_deref();
    let mut sink = LogSink::create(dir)?;
    sink.line(&format!("# schema {CSV_SCHEMA_VERSION}"))?;
    sink.line(&format!("# config_sha256 {}", config.sha256()))?;
    sink.line(&format!("# seed {}", config.seed))?;
    sink.line(&format!("# agent {}", config.agent.name()))?;
    sink.line(&format!(
        "# spec S={} A={} H={} d={}",
        spec.num_states, spec.num_actions, spec.horizon, spec.dim
    ))?;
    sink.line(&format!(
        "# constants lambda={} alpha={} eps_bonus={} kappa={} beta={} iota_scale={} net_radius={} net_resolution={} voful_radius={} voful_resolution={}",
        constants.lambda,
        constants.alpha,
        constants.eps_bonus,
        constants.kappa,
        constants.beta,
        constants.iota_scale,
        constants.net_radius,
        constants.net_resolution,
        constants.voful_radius,
        constants.voful_resolution
    ))?;
    sink.line("# diagnostics_id 0 means no diagnostics entry for the row")?;
    sink.line("schema_version,k,inst_regret,cum_regret,episode_reward,optimistic_value,diagnostics_id")?;

    let mut agent = build_agent(config, spec, &constants)?;
    let mut env_rng = stream_rng(config.seed, streams::ENVIRONMENT);
    let mut rows: Vec<RegretRow> = Vec::with_capacity(config.episodes);
    let mut diagnostics: Vec<EpisodeDiagnostics> = Vec::new();
    let mut cum = 0.0f64;

    for k in 1..=config.episodes {
        let episode = run_episode(&mut agent, spec, &mut env_rng, k);
        let (policy, optimistic_value, diag) = match episode {
            Ok(x) => x,
            Err(e) => {
                let summary = make_summary(
                    config,
                    spec,
                    &constants,
                    &rows,
                    star1,
                    "error",
                    Some(e.to_string()),
                );
                write_json(dir, "summary.json", &summary)?;
                write_json(dir, "diagnostics.json", &diagnostics)?;
                return Err(e);
            }
        };
        let pv = policy_value(spec, &policy)[0][spec.initial_state];
        let inst = (star1 - pv).max(0.0);
        cum += inst;
        let traj = rollout(spec, &policy, &mut env_rng);
        let episode_reward: f64 = traj.rewards.iter().sum();
        let diagnostics_id = match diag {
            Some(d) => {
                diagnostics.push(d);
                k
            }
            None => 0,
        };
        if let Err(e) = update_agent(&mut agent, spec, &traj, diagnostics.last_mut()) {
            let summary =
                make_summary(config, spec, &constants, &rows, star1, "error", Some(e.to_string()));
            write_json(dir, "summary.json", &summary)?;
            write_json(dir, "diagnostics.json", &diagnostics)?;
            return Err(e);
        }
        let row = RegretRow {
            k,
            inst_regret: inst,
            cum_regret: cum,
            episode_reward,
            optimistic_value,
            diagnostics_id,
        };
        sink.line(&csv_row_line(&row))?;
        rows.push(row);
    }

    let summary = make_summary(config, spec, &constants, &rows, star1, "ok", None);
    write_json(dir, "summary.json", &summary)?;
    write_json(dir, "diagnostics.json", &diagnostics)?;
    Ok(RunArtifacts { rows, diagnostics, summary })
}

fn build_agent(
    config: &ExperimentConfig,
    spec: &LinearMdpSpec,
    constants: &ResolvedConstants,
) -> Result<AgentState> {
    Ok(match config.agent {
        AgentKind::HfBonus | AgentKind::HfExact => {
            let theta_net = build_theta_net(
                spec.dim,
                constants.net_radius,
                constants.net_resolution,
                config.net.budget,
                config.seed,
            )?;
            let net = ValueNet::build(spec, &theta_net);
            let wls = wls_params(config, constants);
            let vp = voful_params(config, constants);
            if config.agent == AgentKind::HfBonus {
                AgentState::HfBonus(Box::new(HfLearner::new(net, spec.dim, wls, vp)?))
            } else {
                let candidates =
                    exact_candidate_class(spec, config.exact_candidates, config.seed);
                let reward_candidates: Vec<DVector<f64>> =
                    candidates.iter().map(|c| c.theta_r.clone()).collect();
                let learner = HfLearner::with_reward_candidates(
                    net,
                    spec.dim,
                    wls,
                    vp,
                    reward_candidates,
                )?;
                AgentState::HfExact(Box::new(learner), candidates, feature_probes(spec))
            }
        }
        AgentKind::Lsvi => {
            let params = LsviParams { lambda: 1.0, beta: constants.beta };
            AgentState::Lsvi(LsviState::new(spec.dim, spec.horizon, params)?)
        }
        AgentKind::Random => AgentState::Random(stream_rng(config.seed, streams::POLICY)),
    })
}

fn run_episode(
    agent: &mut AgentState,
    spec: &LinearMdpSpec,
    _env_rng: &mut ChaCha12Rng,
    k: usize,
) -> Result<(TabularPolicy, f64, Option<EpisodeDiagnostics>)> {
    match agent {
        AgentState::HfBonus(learner) => {
            let plan = learner.plan(spec)?;
            let max_bonus = plan.bonuses.iter().flatten().fold(0.0f64, |m, &b| m.max(b));
            let max_err = plan.projection_errors.iter().fold(0.0f64, |m, &e| m.max(e));
            let vbar = plan.optimistic_values[0][spec.initial_state];
            let diag = EpisodeDiagnostics {
                k,
                survivors: plan.survivors,
                max_bonus,
                max_projection_error: max_err,
                voful_alive: learner.voful().num_alive(),
                pruned_now: 0,
            };
            Ok((plan.policy, vbar, Some(diag)))
        }
        AgentState::HfExact(learner, candidates, probes) => {
            let plan = learner.plan_exact(candidates, spec, probes)?;
            let vbar = plan.optimistic_values[0][spec.initial_state];
            let diag = EpisodeDiagnostics {
                k,
                survivors: plan.survivors,
                max_bonus: 0.0,
                max_projection_error: 0.0,
                voful_alive: learner.voful().num_alive(),
                pruned_now: 0,
            };
            Ok((plan.policy, vbar, Some(diag)))
        }
        AgentState::Lsvi(state) => {
            let (policy, v) = state.plan(spec)?;
            Ok((policy, v[0][spec.initial_state], None))
        }
        AgentState::Random(pol_rng) => {
            let policy =
                random_policy(spec.horizon, spec.num_states, spec.num_actions, pol_rng)?;
            let value = policy_value(spec, &policy)[0][spec.initial_state];
            Ok((policy, value, None))
        }
    }
}

fn update_agent(
    agent: &mut AgentState,
    spec: &LinearMdpSpec,
    traj: &crate::mdp::Trajectory,
    diag: Option<&mut EpisodeDiagnostics>,
) -> Result<()> {
    match agent {
        AgentState::HfBonus(learner) | AgentState::HfExact(learner, _, _) => {
            let report = learner.observe_episode(spec, traj)?;
            if let Some(d) = diag {
                d.pruned_now = report.pruned_now;
                d.voful_alive = report.alive;
            }
            Ok(())
        }
        AgentState::Lsvi(state) => state.observe_episode(spec, traj),
        AgentState::Random(_) => Ok(()),
    }
}

#[allow(clippy::too_many_arguments)]
fn make_summary(
    config: &ExperimentConfig,
    spec: &LinearMdpSpec,
    constants: &ResolvedConstants,
    rows: &[RegretRow],
    star1: f64,
    status: &str,
    error: Option<String>,
) -> RunSummary {
    let (slope, slope_window) = summary_slope(rows, config.episodes);
    RunSummary {
        status: status.into(),
        error,
        agent: config.agent,
        episodes_completed: rows.len(),
        final_cum_regret: rows.last().map(|r| r.cum_regret).unwrap_or(0.0),
        slope,
        slope_window,
        optimal_value: star1,
        num_states: spec.num_states,
        num_actions: spec.num_actions,
        horizon: spec.horizon,
        dim: spec.dim,
        seed: config.seed,
        config_sha256: config.sha256(),
        constants: constants.clone(),
    }
}

/// Least squares on (log k, log cumulative regret) over the window,
/// skipping rows with zero cumulative regret. Needs at least 8 usable
/// points. Returns (slope, intercept, r_squared).
pub fn fit_slope(rows: &[RegretRow], k_min: usize, k_max: usize) -> Result<(f64, f64, f64)> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.k >= k_min && r.k <= k_max && r.cum_regret > 0.0)
        .map(|r| ((r.k as f64).ln(), r.cum_regret.ln()))
        .unzip();
    if xs.len() < 8 {
        return Err(Error::Validation(format!(
            "slope fit needs at least 8 points in [{k_min}, {k_max}], got {}",
            xs.len()
        )));
    }
    ols(&xs, &ys)
}

/// Reads rows back from a regret.csv produced by `run_experiment`,
/// skipping comment and header lines.
pub fn read_regret_csv(path: &Path) -> Result<Vec<RegretRow>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("schema_version") || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Validation(format!(
                "expected 7 csv fields, got {}: {line}",
                fields.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Validation(format!("bad float {s}: {e}")))
        };
        let parse_u = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|e| Error::Validation(format!("bad integer {s}: {e}")))
        };
        let version = parse_u(fields[0])?;
        if version != CSV_SCHEMA_VERSION as usize {
            return Err(Error::Validation(format!("unsupported csv schema {version}")));
        }
        rows.push(RegretRow {
            k: parse_u(fields[1])?,
            inst_regret: parse_f(fields[2])?,
            cum_regret: parse_f(fields[3])?,
            episode_reward: parse_f(fields[4])?,
            optimistic_value: parse_f(fields[5])?,
            diagnostics_id: parse_u(fields[6])?,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepEntry {
    pub seed: u64,
    pub episodes: usize,
    pub final_cum_regret: f64,
    pub slope: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepSummary {
    pub agent: AgentKind,
    pub entries: Vec<SweepEntry>,
    pub mean_final: f64,
    /// Sample standard deviation over the seed finals (0 for one seed).
    pub std_final: f64,
    /// Mean over the seeds whose summary produced a slope.
    pub mean_slope: Option<f64>,
}

/// Runs the base config once per seed (out_dir gains a seed-<n> suffix per
/// run) and aggregates finals and slopes. Sweep artifacts land in the base
/// out_dir when set.
pub fn sweep(base: &ExperimentConfig, seeds: &[u64]) -> Result<SweepSummary> {
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let mut entries = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut config = base.clone();
        config.seed = seed;
        config.out_dir = base.out_dir.as_ref().map(|d| d.join(format!("seed-{seed}")));
        let run = run_experiment(&config)?;
        entries.push(SweepEntry {
            seed,
            episodes: run.summary.episodes_completed,
            final_cum_regret: run.summary.final_cum_regret,
            slope: run.summary.slope,
        });
    }
    let n = entries.len() as f64;
    let mean_final = entries.iter().map(|e| e.final_cum_regret).sum::<f64>() / n;
    let std_final = if entries.len() > 1 {
        (entries
            .iter()
            .map(|e| (e.final_cum_regret - mean_final).powi(2))
            .sum::<f64>()
            / (n - 1.0))
            .sqrt()
    } else {
        0.0
    };
    let slopes: Vec<f64> = entries.iter().filter_map(|e| e.slope).collect();
    let mean_slope = if slopes.is_empty() {
        None
    } else {
        Some(slopes.iter().sum::<f64>() / slopes.len() as f64)
    };
    let summary = SweepSummary {
        agent: base.agent,
        entries,
        mean_final,
        std_final,
        mean_slope,
    };
    if let Some(dir) = &base.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("sweep_summary.json"), serde_json::to_string_pretty(&summary)?)?;
        let mut csv = String::from("seed,episodes,final_cum_regret,slope\n");
        for e in &summary.entries {
            let slope = e.slope.map(|s| s.to_string()).unwrap_or_default();
            csv.push_str(&format!(
                "{},{},{},{}\n",
                e.seed, e.episodes, e.final_cum_regret, slope
            ));
        }
        fs::write(dir.join("sweep_summary.csv"), csv)?;
    }
    Ok(summary)
}
