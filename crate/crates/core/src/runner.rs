//! Experiment configuration, parallel ensembles and on-disk artifacts.
//!
//! A run is described by one TOML file ([`ExperimentConfig`]). Chain `i`
//! always draws from `RngStream::new(seed, i)` and results are assembled in
//! chain order, so every artifact except the wall time in `manifest.json` is
//! independent of the thread count.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{
    hill_plateau, hill_plateau_top, hill_top_len, normality_stats, standardize, ErgodicAverager, HillReport,
    TestFunctionSpec, AD_CRITICAL_95, AD_CRITICAL_99,
};
use crate::drift::{collect_excursions, drift_profile, estimate_drift, fit_power_law, FKind, LyapunovSpec, PowerLawFit};
use crate::error::{Error, Result};
use crate::kernels::{Algorithm, ChainState, DriftKind, Kernel, KernelConfig};
use crate::oracle::AlgorithmId;
use crate::par::{map_indexed, pairwise_sum, with_threads, Execution};
use crate::random::RngStream;
use crate::targets::{norm2, TargetSpec};

pub const SUMMARY_SCHEMA: u32 = 1;
pub const DEFAULT_RESERVOIR: usize = 1_000_000;
pub const SEED_LAYOUT: &str = "ChaCha8 seeded with seed_from_u64(seed); chain i uses stream i";

pub const AVERAGES_CSV: &str = "averages.csv";
pub const QQ_CSV: &str = "qq.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const MANIFEST_JSON: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    Origin,
    Point(Vec<f64>),
}

/// Worker count: `"auto"` or a positive integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "ThreadsRepr", into = "ThreadsRepr")]
pub enum Threads {
    #[default]
    Auto,
    Count(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ThreadsRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<ThreadsRepr> for Threads {
    type Error = String;

    fn try_from(r: ThreadsRepr) -> std::result::Result<Self, String> {
        match r {
            ThreadsRepr::Count(0) => Err("threads must be at least 1".into()),
            ThreadsRepr::Count(n) => Ok(Threads::Count(n)),
            ThreadsRepr::Word(w) if w == "auto" => Ok(Threads::Auto),
            ThreadsRepr::Word(w) => Err(format!("threads must be \"auto\" or a positive integer, got \"{w}\"")),
        }
    }
}

impl From<Threads> for ThreadsRepr {
    fn from(t: Threads) -> Self {
        match t {
            Threads::Auto => ThreadsRepr::Word("auto".into()),
            Threads::Count(n) => ThreadsRepr::Count(n),
        }
    }
}

impl Threads {
    fn count(self) -> Option<usize> {
        match self {
            Threads::Auto => None,
            Threads::Count(n) => Some(n),
        }
    }
}

fn default_chains() -> usize {
    1
}

fn default_burn() -> f64 {
    1.0 / 3.0
}

fn default_scale() -> f64 {
    1.0
}

fn default_drift_samples() -> usize {
    1_000_000
}

fn default_reservoir() -> usize {
    DEFAULT_RESERVOIR
}

/// One-step drift estimates at probes `r e_1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftCheckConfig {
    /// Probe norms.
    pub probes: Vec<f64>,
    #[serde(default = "default_drift_samples")]
    pub samples: usize,
    /// Functions of `V` to average. Defaults to `1/V` and `Psi(V)` from the
    /// algorithm's drift profile.
    #[serde(default)]
    pub f: Vec<FKind>,
    /// Defaults to the Lyapunov function of the drift profile.
    #[serde(default)]
    pub lyapunov: Option<LyapunovSpec>,
    /// SPS Lyapunov exponent.
    #[serde(default)]
    pub gamma: Option<f64>,
}

/// Streaming record of `|X_n|` after burn-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailsConfig {
    #[serde(default)]
    pub record_above: Option<f64>,
    #[serde(default = "default_reservoir")]
    pub reservoir: usize,
}

/// Excursions of `V(X_n)` above `ell`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcursionsConfig {
    pub ell: f64,
    #[serde(default)]
    pub lyapunov: Option<LyapunovSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: TargetSpec,
    pub algorithm: Algorithm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levy_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftKind>,
    /// Test function for ergodic averages; required by `run`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<TestFunctionSpec>,
    #[serde(default = "default_chains")]
    pub chains: usize,
    pub steps: u64,
    #[serde(default = "default_burn")]
    pub burn_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub init: Init,
    #[serde(default)]
    pub threads: Threads,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Multiplies both `chains` and `steps`.
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// A chain whose norm exceeds this is stopped and flagged as escaped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escape_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_check: Option<DriftCheckConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tails: Option<TailsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excursions: Option<ExcursionsConfig>,
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub scale: Option<f64>,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// A config with every optional field at its default.
    pub fn new(target: TargetSpec, kernel: &KernelConfig, chains: usize, steps: u64, seed: u64) -> Self {
        ExperimentConfig {
            target,
            algorithm: kernel.algorithm,
            h: kernel.h,
            proposal_eta: kernel.proposal_eta,
            is_k: kernel.is_k,
            levy_alpha: kernel.levy_alpha,
            drift: kernel.drift,
            g: None,
            chains,
            steps,
            burn_fraction: default_burn(),
            seed,
            init: Init::Origin,
            threads: Threads::Auto,
            output_dir: None,
            scale: 1.0,
            escape_radius: None,
            drift_check: None,
            tails: None,
            excursions: None,
        }
    }

    pub fn with_g(mut self, g: TestFunctionSpec) -> Self {
        self.g = Some(g);
        self
    }

    /// Parses and validates. Parse errors carry the line and column.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(t) = o.threads {
            if t == 0 {
                return Err(Error::param("threads", "must be at least 1"));
            }
            self.threads = Threads::Count(t);
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(s) = o.scale {
            self.scale = s;
        }
        if let Some(p) = &o.output_dir {
            self.output_dir = Some(p.clone());
        }
        self.validate()
    }

    pub fn kernel_config(&self) -> KernelConfig {
        KernelConfig {
            algorithm: self.algorithm,
            h: self.h,
            proposal_eta: self.proposal_eta,
            is_k: self.is_k,
            levy_alpha: self.levy_alpha,
            drift: self.drift,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.target.validate()?;
        Kernel::new(&self.kernel_config(), &self.target)?;
        if let Some(g) = &self.g {
            g.validate()?;
        }
        if self.chains == 0 {
            return Err(Error::param("chains", "must be at least 1"));
        }
        if self.steps == 0 {
            return Err(Error::param("steps", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.burn_fraction) {
            return Err(Error::param("burn_fraction", format!("must lie in [0, 1), got {}", self.burn_fraction)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::param("scale", format!("must be positive, got {}", self.scale)));
        }
        if let Init::Point(x) = &self.init {
            if x.len() != self.target.d {
                return Err(Error::DimensionMismatch {
                    expected: self.target.d,
                    got: x.len(),
                });
            }
            if x.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite("init point"));
            }
        }
        if let Some(r) = self.escape_radius {
            if !(r > 0.0) {
                return Err(Error::param("escape_radius", format!("must be positive, got {r}")));
            }
        }
        if let Some(dc) = &self.drift_check {
            if dc.probes.len() < 1 || dc.probes.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
                return Err(Error::param("drift_check.probes", "need at least one positive probe norm"));
            }
            if let Some(l) = &dc.lyapunov {
                l.validate()?;
            }
        }
        if let Some(ex) = &self.excursions {
            if !(ex.ell > 1.0) {
                return Err(Error::param("excursions.ell", format!("must exceed 1, got {}", ex.ell)));
            }
            if let Some(l) = &ex.lyapunov {
                l.validate()?;
            }
        }
        Ok(())
    }

    /// `chains * scale`, at least 1.
    pub fn effective_chains(&self) -> usize {
        ((self.chains as f64 * self.scale).round() as usize).max(1)
    }

    /// `steps * scale`, at least 1.
    pub fn effective_steps(&self) -> u64 {
        ((self.steps as f64 * self.scale).round() as u64).max(1)
    }

    /// `floor(burn_fraction * n)`.
    pub fn n_burn(&self) -> u64 {
        (self.burn_fraction * self.effective_steps() as f64).floor() as u64
    }

    /// SHA-256 of the config with the thread count and output directory
    /// cleared, so it identifies the numbers a run produces.
    pub fn config_hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.threads = Threads::Auto;
        c.output_dir = None;
        let bytes = serde_json::to_vec(&c)?;
        Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn initial_state(&self) -> Result<ChainState> {
        match &self.init {
            Init::Origin => Ok(ChainState::origin(&self.target)),
            Init::Point(x) => ChainState::new(x.clone(), &self.target),
        }
    }

    fn output_dir(&self) -> Result<&Path> {
        self.output_dir
            .as_deref()
            .ok_or_else(|| Error::Config("output_dir is not set (use --out or the output_dir key)".into()))
    }
}

/// Oracle identity of a kernel config.
pub fn algorithm_id(kc: &KernelConfig) -> Result<AlgorithmId> {
    let need = |v: Option<f64>, name: &'static str| v.ok_or_else(|| Error::param(name, "required for this algorithm"));
    Ok(match kc.algorithm {
        Algorithm::RwmGaussian => AlgorithmId::FvRwm,
        Algorithm::RwmStudentT => AlgorithmId::IvRwm {
            eta: need(kc.proposal_eta, "proposal_eta")?,
        },
        Algorithm::Mala => AlgorithmId::Mala,
        Algorithm::Ula => AlgorithmId::Ula,
        Algorithm::Sps => AlgorithmId::Sps,
        Algorithm::IndependenceSampler => AlgorithmId::IndependenceSampler {
            k: need(kc.is_k, "is_k")?,
        },
        Algorithm::LevyEm => AlgorithmId::LevyEm {
            alpha: need(kc.levy_alpha, "levy_alpha")?,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChainStatus {
    Ok,
    /// Position became non-finite at this step.
    Diverged { step: u64 },
    /// Norm first exceeded the escape radius at this step.
    Escaped { step: u64 },
}

impl ChainStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, ChainStatus::Ok)
    }

    /// Value of the `flag` column in `averages.csv`.
    pub fn flag(&self) -> String {
        match self {
            ChainStatus::Ok => "ok".into(),
            ChainStatus::Diverged { step } => format!("diverged at step {step}"),
            ChainStatus::Escaped { step } => format!("escaped at step {step}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    pub chain_id: usize,
    /// `None` for flagged chains.
    pub average: Option<f64>,
    pub accept_rate: f64,
    pub steps_run: u64,
    pub status: ChainStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub chains: Vec<ChainResult>,
    pub n_total: u64,
    pub n_burn: u64,
    pub seed: u64,
    pub config_hash: String,
}

impl EnsembleResult {
    /// Averages of unflagged chains, in chain order.
    pub fn averages(&self) -> Vec<f64> {
        self.chains.iter().filter_map(|c| c.average).collect()
    }

    pub fn accept_rates(&self) -> Vec<f64> {
        self.chains.iter().map(|c| c.accept_rate).collect()
    }

    pub fn flagged(&self) -> usize {
        self.chains.iter().filter(|c| !c.status.is_ok()).count()
    }
}

/// Advances one chain `n` steps, calling `visit` after every step. Stops
/// early, with the corresponding status, on divergence or escape.
fn drive_chain<F: FnMut(u64, &[f64])>(
    kernel: &Kernel,
    target: &TargetSpec,
    state: &mut ChainState,
    n: u64,
    escape_r2: Option<f64>,
    rng: &mut RngStream,
    mut visit: F,
) -> Result<ChainStatus> {
    for t in 1..=n {
        match kernel.step(state, target, rng) {
            Ok(_) => {}
            Err(Error::Diverged { step }) => return Ok(ChainStatus::Diverged { step }),
            Err(e) => return Err(e),
        }
        if let Some(r2) = escape_r2 {
            if norm2(&state.x) > r2 {
                return Ok(ChainStatus::Escaped { step: t });
            }
        }
        visit(t, &state.x);
    }
    Ok(ChainStatus::Ok)
}

struct Prepared {
    kernel: Kernel,
    init: ChainState,
    n: u64,
    n_burn: u64,
    chains: usize,
    escape_r2: Option<f64>,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    Ok(Prepared {
        kernel: Kernel::new(&cfg.kernel_config(), &cfg.target)?,
        init: cfg.initial_state()?,
        n: cfg.effective_steps(),
        n_burn: cfg.n_burn(),
        chains: cfg.effective_chains(),
        escape_r2: cfg.escape_radius.map(|r| r * r),
    })
}

/// Runs the ensemble on the rayon pool.
pub fn run_ensemble(cfg: &ExperimentConfig) -> Result<EnsembleResult> {
    run_ensemble_with(cfg, Execution::Parallel)
}

/// Runs `N` independent chains of length `n` and returns their ergodic
/// averages of `g` after discarding the first `floor(burn_fraction n)` states.
pub fn run_ensemble_with(cfg: &ExperimentConfig, exec: Execution) -> Result<EnsembleResult> {
    let g = cfg.g.ok_or_else(|| Error::Config("missing test function `g`".into()))?;
    let p = prepare(cfg)?;
    let target = cfg.target;
    let chains = with_threads(cfg.threads.count(), || {
        map_indexed(p.chains, exec, |i| -> Result<ChainResult> {
            let mut rng = RngStream::new(cfg.seed, i as u64);
            let mut st = p.init.clone();
            let mut avg = ErgodicAverager::new(p.n_burn);
            let status = drive_chain(&p.kernel, &target, &mut st, p.n, p.escape_r2, &mut rng, |_, x| {
                avg.push(g.eval(x))
            })?;
            Ok(ChainResult {
                chain_id: i,
                average: if status.is_ok() { Some(avg.average()?) } else { None },
                accept_rate: st.acceptance_rate(),
                steps_run: st.steps,
                status,
            })
        })
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleResult {
        chains,
        n_total: p.n,
        n_burn: p.n_burn,
        seed: cfg.seed,
        config_hash: cfg.config_hash()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: u32,
    pub algorithm: String,
    pub chains_total: usize,
    pub chains_used: usize,
    pub chains_flagged: usize,
    pub steps: u64,
    pub n_burn: u64,
    pub seed: u64,
    /// Normality statistics of the standardized averages; `null` when fewer
    /// than two chains survive or all averages coincide (kurtosis and A*^2
    /// need eight).
    pub mu_hat: Option<f64>,
    pub sigma_hat: Option<f64>,
    pub excess_kurtosis: Option<f64>,
    pub anderson_darling: Option<f64>,
    pub ad_critical_95: f64,
    pub ad_critical_99: f64,
    pub accept_rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub seed_layout: String,
    pub software_version: String,
    pub wall_time_seconds: f64,
    pub acceptance_rates: Vec<f64>,
    pub files: Vec<String>,
    pub complete: bool,
}

/// Everything `run` writes, in memory.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub ensemble: EnsembleResult,
    pub summary: Summary,
    pub output_dir: PathBuf,
}

/// Writes `bytes` to `dir/name` through a temporary file and a rename.
fn atomic_write(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let dest = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    let res = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, &dest)
    })();
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(dest)
}

fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

/// Writes the named artifacts, then `manifest.json` last. Any existing
/// manifest is removed first and, on failure, every file written here is
/// removed again, so a manifest on disk always describes a finished run.
fn write_artifacts(
    dir: &Path,
    cfg: &ExperimentConfig,
    files: Vec<(&str, Vec<u8>)>,
    accept_rates: Vec<f64>,
    started: Instant,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let res = (|| -> Result<()> {
        let m = dir.join(MANIFEST_JSON);
        if m.exists() {
            fs::remove_file(&m)?;
        }
        let names: Vec<String> = files.iter().map(|f| f.0.to_string()).collect();
        for (name, bytes) in &files {
            written.push(atomic_write(dir, name, bytes)?);
        }
        let manifest = RunManifest {
            config_hash: cfg.config_hash()?,
            seed: cfg.seed,
            seed_layout: SEED_LAYOUT.into(),
            software_version: format!("heavytail {}", env!("CARGO_PKG_VERSION")),
            wall_time_seconds: started.elapsed().as_secs_f64(),
            acceptance_rates: accept_rates,
            files: names,
            complete: true,
        };
        atomic_write(dir, MANIFEST_JSON, &json_bytes(&manifest)?)?;
        Ok(())
    })();
    if res.is_err() {
        for p in written {
            let _ = fs::remove_file(p);
        }
    }
    res
}

/// Builds the summary for an ensemble.
pub fn summarize(cfg: &ExperimentConfig, ens: &EnsembleResult) -> Result<(Summary, Option<crate::diagnostics::QQData>)> {
    let avgs = ens.averages();
    let qq = match standardize(&avgs) {
        Ok(q) => Some(q),
        Err(Error::Degenerate(_)) | Err(Error::InvalidParameter { .. }) => None,
        Err(e) => return Err(e),
    };
    let stats = match &qq {
        Some(q) => match normality_stats(&q.empirical_quantiles) {
            Ok(s) => Some(s),
            Err(Error::Degenerate(_)) | Err(Error::InvalidParameter { .. }) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    let summary = Summary {
        schema: SUMMARY_SCHEMA,
        algorithm: cfg.algorithm.name().into(),
        chains_total: ens.chains.len(),
        chains_used: avgs.len(),
        chains_flagged: ens.flagged(),
        steps: ens.n_total,
        n_burn: ens.n_burn,
        seed: ens.seed,
        mu_hat: qq.as_ref().map(|q| q.mu_hat),
        sigma_hat: qq.as_ref().map(|q| q.sigma_hat),
        excess_kurtosis: stats.map(|s| s.excess_kurtosis),
        anderson_darling: stats.map(|s| s.anderson_darling),
        ad_critical_95: AD_CRITICAL_95,
        ad_critical_99: AD_CRITICAL_99,
        accept_rates: ens.accept_rates(),
    };
    Ok((summary, qq))
}

/// `run`: ensemble plus `averages.csv`, `qq.csv`, `summary.json` and
/// `manifest.json` in the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let started = Instant::now();
    let dir = cfg.output_dir()?.to_path_buf();
    let ens = run_ensemble(cfg)?;
    let (summary, qq) = summarize(cfg, &ens)?;
    let averages = csv_bytes(
        &["chain_id", "average", "accept_rate", "flag"],
        ens.chains.iter().map(|c| {
            vec![
                c.chain_id.to_string(),
                c.average.map(|a| a.to_string()).unwrap_or_default(),
                c.accept_rate.to_string(),
                c.status.flag(),
            ]
        }),
    )?;
    let qq_rows: Vec<Vec<String>> = qq
        .iter()
        .flat_map(|q| {
            q.theoretical_quantiles
                .iter()
                .zip(&q.empirical_quantiles)
                .map(|(t, e)| vec![t.to_string(), e.to_string()])
        })
        .collect();
    let qq_bytes = csv_bytes(&["theoretical_q", "empirical_q"], qq_rows)?;
    write_artifacts(
        &dir,
        cfg,
        vec![
            (AVERAGES_CSV, averages),
            (QQ_CSV, qq_bytes),
            (SUMMARY_JSON, json_bytes(&summary)?),
        ],
        ens.accept_rates(),
        started,
    )?;
    Ok(RunReport {
        ensemble: ens,
        summary,
        output_dir: dir,
    })
}

/// Keeps the `cap` largest values pushed.
#[derive(Debug, Clone)]
pub struct TopK {
    cap: usize,
    heap: BinaryHeap<Reverse<TotalF64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct TotalF64(f64);

impl Eq for TotalF64 {}

impl PartialOrd for TotalF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TotalF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl TopK {
    pub fn new(cap: usize) -> Self {
        TopK {
            cap,
            heap: BinaryHeap::with_capacity(cap + 1),
        }
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        if self.heap.len() < self.cap {
            self.heap.push(Reverse(TotalF64(x)));
        } else if let Some(Reverse(min)) = self.heap.peek() {
            if x > min.0 {
                self.heap.pop();
                self.heap.push(Reverse(TotalF64(x)));
            }
        }
    }

    /// Kept values, largest first.
    pub fn into_sorted_desc(self) -> Vec<f64> {
        let mut v: Vec<f64> = self.heap.into_iter().map(|r| r.0 .0).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }
}

/// Uniform reservoir sample (algorithm R).
#[derive(Debug, Clone)]
pub struct Reservoir {
    cap: usize,
    seen: u64,
    items: Vec<f64>,
}

impl Reservoir {
    pub fn new(cap: usize) -> Self {
        Reservoir {
            cap,
            seen: 0,
            items: Vec::with_capacity(cap.min(1 << 20)),
        }
    }

    #[inline]
    pub fn push(&mut self, x: f64, rng: &mut RngStream) {
        self.seen += 1;
        if self.items.len() < self.cap {
            self.items.push(x);
        } else if self.cap > 0 {
            let j = (rng.uniform() * self.seen as f64) as u64;
            if (j as usize) < self.cap {
                self.items[j as usize] = x;
            }
        }
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn into_items(self) -> Vec<f64> {
        self.items
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailsReport {
    /// Number of post-burn-in states recorded across unflagged chains.
    pub n: u64,
    pub chains: Vec<ChainStatus>,
    pub hill: HillReport,
    pub record_above: Option<f64>,
    pub count_above: u64,
    #[serde(skip)]
    pub above: Vec<f64>,
    #[serde(skip)]
    pub reservoir: Vec<f64>,
}

/// Streams `|X_n|` after burn-in: keeps the largest values needed for the
/// Hill plateau, every value above `record_above`, and a uniform reservoir.
pub fn run_tails(cfg: &ExperimentConfig) -> Result<TailsReport> {
    let tc = cfg.tails.clone().unwrap_or(TailsConfig {
        record_above: None,
        reservoir: DEFAULT_RESERVOIR,
    });
    let p = prepare(cfg)?;
    let target = cfg.target;
    let per_chain = p.n - p.n_burn;
    let k = hill_top_len((per_chain * p.chains as u64) as usize);
    let res_cap = tc.reservoir.div_ceil(p.chains);
    let parts = with_threads(cfg.threads.count(), || {
        map_indexed(p.chains, Execution::Parallel, |i| -> Result<_> {
            let mut rng = RngStream::new(cfg.seed, i as u64);
            let mut res_rng = RngStream::new(cfg.seed ^ 0x7265_7365_7276_6f69, i as u64);
            let mut st = p.init.clone();
            let mut top = TopK::new(k);
            let mut res = Reservoir::new(res_cap);
            let mut above = Vec::new();
            let status = drive_chain(&p.kernel, &target, &mut st, p.n, p.escape_r2, &mut rng, |t, x| {
                if t > p.n_burn {
                    let r = norm2(x).sqrt();
                    top.push(r);
                    res.push(r, &mut res_rng);
                    if tc.record_above.is_some_and(|l| r > l) {
                        above.push(r);
                    }
                }
            })?;
            Ok((status, res.seen(), top.into_sorted_desc(), res.into_items(), above))
        })
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut n = 0u64;
    let mut merged = TopK::new(k);
    let (mut reservoir, mut above, mut statuses) = (Vec::new(), Vec::new(), Vec::new());
    for (status, seen, top, res, ab) in parts {
        statuses.push(status);
        if status.is_ok() {
            n += seen;
            top.into_iter().for_each(|x| merged.push(x));
            reservoir.extend(res);
            above.extend(ab);
        }
    }
    if n == 0 {
        return Err(Error::Degenerate("no chain produced post-burn-in states"));
    }
    let hill = hill_plateau_top(&merged.into_sorted_desc(), n as usize)?;
    Ok(TailsReport {
        n,
        chains: statuses,
        hill,
        record_above: tc.record_above,
        count_above: above.len() as u64,
        above,
        reservoir,
    })
}

/// `tails`: [`run_tails`] plus `tails.json`, `hill_curve.csv`,
/// `reservoir.csv` and `manifest.json`.
pub fn run_tails_experiment(cfg: &ExperimentConfig) -> Result<TailsReport> {
    let started = Instant::now();
    let dir = cfg.output_dir()?.to_path_buf();
    let rep = run_tails(cfg)?;
    let curve = csv_bytes(
        &["k", "estimate"],
        rep.hill.curve.iter().map(|(k, e)| vec![k.to_string(), e.to_string()]),
    )?;
    let res = csv_bytes(&["abs_x"], rep.reservoir.iter().map(|r| vec![r.to_string()]))?;
    let mut files = vec![("tails.json", json_bytes(&rep)?), ("hill_curve.csv", curve), ("reservoir.csv", res)];
    if rep.record_above.is_some() {
        files.push(("above.csv", csv_bytes(&["abs_x"], rep.above.iter().map(|r| vec![r.to_string()]))?));
    }
    write_artifacts(&dir, cfg, files, Vec::new(), started)?;
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionsReport {
    pub ell: f64,
    pub lyapunov: LyapunovSpec,
    pub total_steps: u64,
    pub excursions: u64,
    pub censored: u64,
    pub time_below: u64,
    pub mean_duration: Option<f64>,
    pub max_duration: Option<u64>,
    /// Hill estimate of the duration tail; `None` with too few excursions.
    pub hill: Option<HillReport>,
    /// `duration -> count`
    #[serde(skip)]
    pub histogram: BTreeMap<u64, u64>,
}

/// Excursions of `V(X_n)` above `ell`, pooled over chains.
pub fn run_excursions(cfg: &ExperimentConfig) -> Result<ExcursionsReport> {
    let ec = cfg
        .excursions
        .clone()
        .ok_or_else(|| Error::Config("missing [excursions] section".into()))?;
    cfg.validate()?;
    let lyapunov = ec.lyapunov.unwrap_or_else(LyapunovSpec::abs_norm);
    let kc = cfg.kernel_config();
    let init = cfg.initial_state()?.x;
    let n = cfg.effective_steps();
    let chains = cfg.effective_chains();
    let parts = with_threads(cfg.threads.count(), || {
        map_indexed(chains, Execution::Parallel, |i| {
            let mut rng = RngStream::new(cfg.seed, i as u64);
            collect_excursions(&kc, &cfg.target, &lyapunov, ec.ell, n, &init, &mut rng)
        })
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut durations = Vec::new();
    let (mut censored, mut below, mut total) = (0, 0, 0);
    for p in parts {
        durations.extend(p.durations);
        censored += p.censored;
        below += p.time_below;
        total += p.total_steps;
    }
    let mut histogram = BTreeMap::new();
    for &d in &durations {
        *histogram.entry(d).or_insert(0u64) += 1;
    }
    let as_f: Vec<f64> = durations.iter().map(|&d| d as f64).collect();
    let hill = match hill_plateau(&as_f) {
        Ok(h) => Some(h),
        Err(Error::InvalidParameter { .. }) | Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    let mean = (!as_f.is_empty()).then(|| pairwise_sum(&as_f) / as_f.len() as f64);
    Ok(ExcursionsReport {
        ell: ec.ell,
        lyapunov,
        total_steps: total,
        excursions: durations.len() as u64,
        censored,
        time_below: below,
        mean_duration: mean,
        max_duration: durations.iter().copied().max(),
        hill,
        histogram,
    })
}

/// `excursions`: [`run_excursions`] plus `excursions.json`,
/// `durations.csv` (histogram) and `manifest.json`.
pub fn run_excursions_experiment(cfg: &ExperimentConfig) -> Result<ExcursionsReport> {
    let started = Instant::now();
    let dir = cfg.output_dir()?.to_path_buf();
    let rep = run_excursions(cfg)?;
    let hist = csv_bytes(
        &["duration", "count"],
        rep.histogram.iter().map(|(d, c)| vec![d.to_string(), c.to_string()]),
    )?;
    write_artifacts(
        &dir,
        cfg,
        vec![("excursions.json", json_bytes(&rep)?), ("durations.csv", hist)],
        Vec::new(),
        started,
    )?;
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub probe_norm: f64,
    pub f_kind: String,
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftFit {
    pub f_kind: String,
    /// Power-law fit of `|mean|` against the probe norm; `None` when some
    /// mean is zero or there are fewer than three probes.
    pub fit: Option<PowerLawFit>,
    /// Probes whose mean is more than two standard errors from zero, with
    /// the sign of the mean.
    pub significant_sign: Vec<(f64, i8)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub algorithm: String,
    pub lyapunov: LyapunovSpec,
    pub rows: Vec<DriftRow>,
    pub fits: Vec<DriftFit>,
}

/// One-step drift of each `f o V` at every probe.
pub fn run_drift(cfg: &ExperimentConfig) -> Result<DriftReport> {
    let dc = cfg
        .drift_check
        .clone()
        .ok_or_else(|| Error::Config("missing [drift_check] section".into()))?;
    cfg.validate()?;
    let kc = cfg.kernel_config();
    let alg = algorithm_id(&kc)?;
    let profile = drift_profile(alg, &cfg.target, dc.gamma);
    let lyapunov = match (dc.lyapunov, &profile) {
        (Some(l), _) => l,
        (None, Ok(p)) => p.lyapunov,
        (None, Err(_)) => LyapunovSpec::abs_norm(),
    };
    let f_kinds = if dc.f.is_empty() {
        let mut f = vec![FKind::ReciprocalV];
        if let Ok(crate::drift::DriftProfile {
            psi: crate::drift::RateLaw::Polynomial { exponent },
            ..
        }) = profile
        {
            f.push(FKind::PsiOfV { s: exponent });
        }
        f
    } else {
        dc.f.clone()
    };
    let samples = ((dc.samples as f64 * cfg.scale).round() as usize).max(1000);
    let d = cfg.target.d;
    let mut rows = Vec::new();
    with_threads(cfg.threads.count(), || -> Result<()> {
        for (fi, f) in f_kinds.iter().enumerate() {
            for (pi, &r) in dc.probes.iter().enumerate() {
                let mut probe = vec![0.0; d];
                probe[0] = r;
                let mut rng = RngStream::new(cfg.seed, (fi * dc.probes.len() + pi) as u64);
                let e = estimate_drift(&kc, &cfg.target, &lyapunov, *f, &probe, samples, &mut rng, Execution::Parallel)?;
                rows.push(DriftRow {
                    probe_norm: r,
                    f_kind: f.label(),
                    mean: e.mean,
                    stderr: e.stderr,
                    samples: e.samples,
                });
            }
        }
        Ok(())
    })??;
    let fits = f_kinds
        .iter()
        .map(|f| {
            let label = f.label();
            let mine: Vec<&DriftRow> = rows.iter().filter(|r| r.f_kind == label).collect();
            let pts: Vec<(f64, f64)> = mine.iter().map(|r| (r.probe_norm, r.mean)).collect();
            DriftFit {
                f_kind: label,
                fit: fit_power_law(&pts).ok(),
                significant_sign: mine
                    .iter()
                    .filter(|r| r.mean.abs() > 2.0 * r.stderr)
                    .map(|r| (r.probe_norm, if r.mean > 0.0 { 1 } else { -1 }))
                    .collect(),
            }
        })
        .collect();
    Ok(DriftReport {
        algorithm: alg.label(),
        lyapunov,
        rows,
        fits,
    })
}

/// `drift`: [`run_drift`] plus `drift.csv`, `drift_fit.json` and
/// `manifest.json`.
pub fn run_drift_experiment(cfg: &ExperimentConfig) -> Result<DriftReport> {
    let started = Instant::now();
    let dir = cfg.output_dir()?.to_path_buf();
    let rep = run_drift(cfg)?;
    let csv = csv_bytes(
        &["probe_norm", "f_kind", "mean", "stderr", "samples"],
        rep.rows.iter().map(|r| {
            vec![
                r.probe_norm.to_string(),
                r.f_kind.clone(),
                r.mean.to_string(),
                r.stderr.to_string(),
                r.samples.to_string(),
            ]
        }),
    )?;
    write_artifacts(
        &dir,
        cfg,
        vec![("drift.csv", csv), ("drift_fit.json", json_bytes(&rep)?)],
        Vec::new(),
        started,
    )?;
    Ok(rep)
}
