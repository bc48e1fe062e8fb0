//! Experiment commands: configuration, orchestration of engine runs, and
//! CSV/JSON artifacts with a manifest per run.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{
    parse_override, ConvergeSection, DataSpec, ExecutorKind, ModeName, RunConfig, SpeedupSection, ThroughputSection,
    SEED_ENV,
};

use crate::dataflow::{EngineError, Executor};
use crate::drift::{run_drift_experiment, DriftEngine, DriftError, DriftScenario};
use crate::learners::{Learner, QuadraticToy, TrainingPair};
use crate::model::{three_rank_script, verify_staleness, ModelConfig, ModelError, OracleMismatch, ScriptedCluster, StalenessRecord};
use crate::session::{sequential_sgd, tail_mean, TrainJob, TrainOutcome};
use crate::stream::{
    measure_sustainable_throughput, capacity_estimate, write_throughput_csv, Dataset, GeneratorConfig,
    MiniBatchGenerator, Passes, Rate, SustainabilityCriteria, ThroughputReport, TrialOutcome,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("staleness oracle mismatch: {0}")]
    Oracle(#[from] OracleMismatch),
    #[error("non-finite gradient in batch {0}")]
    NonFinite(u64),
    #[error(transparent)]
    Engine(EngineError),
    #[error(transparent)]
    Drift(DriftError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Oracle(_) => 3,
            HarnessError::NonFinite(_) => 4,
            _ => 1,
        }
    }
}

impl From<EngineError> for HarnessError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Model(ModelError::NonFiniteGradient { batch_id }) => HarnessError::NonFinite(batch_id),
            EngineError::InvalidMode(m) => HarnessError::Config(m),
            e => HarnessError::Engine(e),
        }
    }
}

impl From<DriftError> for HarnessError {
    fn from(e: DriftError) -> Self {
        match e {
            DriftError::Engine(e) => e.into(),
            DriftError::InvalidScenario(m) => HarnessError::Config(m),
            e => HarnessError::Drift(e),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Record of one command invocation, written as `manifest.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    /// Artifact file name to SHA-256 of its contents.
    pub artifacts: BTreeMap<String, String>,
    pub summary: serde_json::Value,
}

/// Files written by a command, hashed as they are written.
#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self, HarnessError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), hashes: BTreeMap::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, HarnessError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes)?;
        self.hashes.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn finish(
        self,
        command: &str,
        config: &RunConfig,
        summary: serde_json::Value,
    ) -> Result<Manifest, HarnessError> {
        let m = Manifest { command: command.into(), config: config.clone(), artifacts: self.hashes, summary };
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        std::fs::write(self.dir.join("manifest.json"), text + "\n")?;
        Ok(m)
    }
}

/// Metrics of a single training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// `(batch_id, loss)` merged across replicas.
    pub loss_curve: Vec<(u64, f64)>,
    /// Staleness value to number of remote applications.
    pub staleness_histogram: BTreeMap<u64, u64>,
    /// Examples per second trained by each rank.
    pub per_rank_throughput: Vec<f64>,
    pub wall_time_ns: u64,
    pub theta_digest: String,
}

impl RunMetrics {
    pub fn from_outcome(out: &TrainOutcome) -> Self {
        let secs = out.elapsed_ns.max(1) as f64 / 1e9;
        Self {
            loss_curve: out.loss_curve().iter().map(|p| (p.batch_id, p.loss)).collect(),
            staleness_histogram: staleness_histogram(&out.staleness_logs()),
            per_rank_throughput: out
                .models
                .iter()
                .map(|m| m.latencies.iter().map(|l| l.events).sum::<u64>() as f64 / secs)
                .collect(),
            wall_time_ns: out.elapsed_ns,
            theta_digest: out.params().digest(),
        }
    }
}

/// Histogram over remote applications only; local ones are always 0.
pub fn staleness_histogram(logs: &[Vec<StalenessRecord>]) -> BTreeMap<u64, u64> {
    let mut h = BTreeMap::new();
    for r in logs.iter().flatten().filter(|r| r.origin != r.applier) {
        *h.entry(r.staleness).or_insert(0) += 1;
    }
    h
}

fn histogram_csv(h: &BTreeMap<u64, u64>) -> String {
    let mut s = String::from("staleness,count\n");
    for (k, v) in h {
        s.push_str(&format!("{k},{v}\n"));
    }
    s
}

fn loss_csv(points: impl IntoIterator<Item = (u64, u32, f64)>) -> String {
    let mut s = String::from("batch_id,rank,loss\n");
    for (b, r, l) in points {
        s.push_str(&format!("{b},{r},{l}\n"));
    }
    s
}

fn check_finite(out: &TrainOutcome) -> Result<(), HarnessError> {
    match out.loss_curve().iter().find(|p| !p.loss.is_finite()) {
        Some(p) => Err(HarnessError::NonFinite(p.batch_id)),
        None => Ok(()),
    }
}

/// Bytes one training example occupies in the record encoding used for
/// throughput figures: skip-gram pairs as `u32 center | u32 context | u8
/// label`, labeled vectors as `f32` features followed by a `u32` label.
pub fn encoded_size(p: &TrainingPair) -> usize {
    match p {
        TrainingPair::Skipgram { .. } => 9,
        TrainingPair::Labeled { features, .. } => 4 * features.len() + 4,
    }
}

/// Builds the generator → model job for `n` ranks.
pub fn training_job(cfg: &RunConfig, learner: Arc<dyn Learner>, dataset: Dataset, n: u32) -> TrainJob {
    let mut job = TrainJob::new(learner, dataset, n);
    job.generator = generator_config(cfg, cfg.batch_size);
    job.model = ModelConfig { alpha: cfg.effective_alpha(n), max_grad_buffer: cfg.max_grad_buffer, ..Default::default() };
    job.mode = cfg.mode();
    job.executor = cfg.executor();
    job.queue_capacity = cfg.queue_capacity;
    job
}

fn generator_config(cfg: &RunConfig, batch_size: usize) -> GeneratorConfig {
    GeneratorConfig {
        batch_size,
        passes: Passes::Finite(cfg.passes),
        rate: Rate::Max,
        max_batches: cfg.max_batches,
        seed: cfg.seed,
        ..Default::default()
    }
}

/// One command result: the manifest plus anything worth printing.
#[derive(Debug)]
pub struct CommandOutput<T> {
    pub manifest: Manifest,
    pub result: T,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------- run

pub fn cmd_run(cfg: &RunConfig) -> Result<CommandOutput<RunMetrics>, HarnessError> {
    let learner = cfg.build_learner()?;
    let out = training_job(cfg, learner, cfg.dataset()?, cfg.n_ranks).run()?;
    check_finite(&out)?;
    let metrics = RunMetrics::from_outcome(&out);
    let mut art = Artifacts::create(&cfg.output_dir)?;
    art.write("loss.csv", loss_csv(out.loss_curve().iter().map(|p| (p.batch_id, p.rank, p.loss))).as_bytes())?;
    art.write("staleness_hist.csv", histogram_csv(&metrics.staleness_histogram).as_bytes())?;
    art.write("metrics.json", serde_json::to_string_pretty(&metrics).expect("serializes").as_bytes())?;
    let summary = serde_json::json!({
        "batches": metrics.loss_curve.len(),
        "theta_digest": metrics.theta_digest,
        "clock_total": out.models[0].clock.total(),
    });
    let manifest = art.finish("run", cfg, summary)?;
    Ok(CommandOutput { manifest, result: metrics, warnings: Vec::new() })
}

// ---------------------------------------------------------------- converge

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergeRow {
    pub n_ranks: u32,
    pub alpha: f64,
    pub batches: usize,
    pub tail_loss: f64,
    /// `tail_loss / tail_loss(n=1) - 1`, when a single-rank run is included.
    pub relative_gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergeResult {
    pub rows: Vec<ConvergeRow>,
    /// Whether the single-rank loss curve equals plain sequential SGD bit for bit.
    pub reference_match: Option<bool>,
    pub reference_tail_loss: f64,
}

pub fn cmd_converge(cfg: &RunConfig) -> Result<CommandOutput<ConvergeResult>, HarnessError> {
    if cfg.converge.ranks.is_empty() || cfg.converge.ranks.contains(&0) {
        return Err(HarnessError::Config("converge.ranks must list positive rank counts".into()));
    }
    let learner = cfg.build_learner()?;
    let dataset = cfg.dataset()?;
    let mut art = Artifacts::create(&cfg.output_dir)?;

    let batches = MiniBatchGenerator::offline_batches(&dataset, learner.clone(), &generator_config(cfg, cfg.batch_size))?;
    let (reference, _) = sequential_sgd(learner.as_ref(), &batches, cfg.effective_alpha(1), None)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    art.write("converge_reference.csv", loss_csv(reference.iter().map(|p| (p.batch_id, 0, p.loss))).as_bytes())?;

    let mut rows = Vec::new();
    let mut reference_match = None;
    for &n in &cfg.converge.ranks {
        let out = training_job(cfg, learner.clone(), dataset.clone(), n).run()?;
        check_finite(&out)?;
        let curve = out.loss_curve();
        if n == 1 {
            let same = curve.len() == reference.len()
                && curve.iter().zip(&reference).all(|(a, b)| a.batch_id == b.batch_id && a.loss.to_bits() == b.loss.to_bits());
            reference_match = Some(same);
        }
        art.write(
            &format!("converge_n{n}.csv"),
            loss_csv(curve.iter().map(|p| (p.batch_id, p.rank, p.loss))).as_bytes(),
        )?;
        rows.push(ConvergeRow {
            n_ranks: n,
            alpha: cfg.effective_alpha(n),
            batches: curve.len(),
            tail_loss: tail_mean(&curve, cfg.converge.tail),
            relative_gap: None,
        });
    }
    if let Some(base) = rows.iter().find(|r| r.n_ranks == 1).map(|r| r.tail_loss) {
        for r in &mut rows {
            r.relative_gap = Some(r.tail_loss / base - 1.0);
        }
    }
    let mut csv = String::from("n_ranks,alpha,batches,tail_loss,relative_gap\n");
    for r in &rows {
        let gap = r.relative_gap.map(|g| g.to_string()).unwrap_or_default();
        csv.push_str(&format!("{},{},{},{},{}\n", r.n_ranks, r.alpha, r.batches, r.tail_loss, gap));
    }
    art.write("converge.csv", csv.as_bytes())?;
    let result =
        ConvergeResult { rows, reference_match, reference_tail_loss: tail_mean(&reference, cfg.converge.tail) };
    let manifest = art.finish("converge", cfg, serde_json::to_value(&result).expect("serializes"))?;
    Ok(CommandOutput { manifest, result, warnings: Vec::new() })
}

// ---------------------------------------------------------------- speedup

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub n_ranks: u32,
    pub batch_size: usize,
    pub examples_per_sec: f64,
    /// Informational; see [`encoded_size`].
    pub mb_per_sec: f64,
    /// Throughput per rank relative to the smallest rank count.
    pub efficiency: f64,
}

pub fn cmd_speedup(cfg: &RunConfig) -> Result<CommandOutput<Vec<SpeedupRow>>, HarnessError> {
    let sp = &cfg.speedup;
    if sp.ranks.is_empty() || sp.ranks.contains(&0) || sp.batch_sizes.is_empty() || sp.batch_sizes.contains(&0) {
        return Err(HarnessError::Config("speedup needs positive rank counts and batch sizes".into()));
    }
    let mut warnings = Vec::new();
    let max_ranks = *sp.ranks.iter().max().expect("nonempty");
    let cores = std::thread::available_parallelism().map_or(1, |c| c.get());
    if cfg.executor == ExecutorKind::Threads && (max_ranks as usize) > cores {
        warnings.push(format!("insufficient cores: {max_ranks} ranks requested, {cores} available"));
    }
    let learner = cfg.build_learner()?;
    let pairs = Arc::new(cfg.pairs()?);
    let bytes_per_example = pairs.iter().map(encoded_size).sum::<usize>() as f64 / pairs.len().max(1) as f64;
    let mut ranks = sp.ranks.clone();
    ranks.sort_unstable();
    let mut rows = Vec::new();
    for &b in &sp.batch_sizes {
        let mut base: Option<(u32, f64)> = None;
        for &n in &ranks {
            let mut job = training_job(cfg, learner.clone(), Dataset::Pairs(pairs.clone()), n);
            job.generator = generator_config(cfg, b);
            let out = job.run()?;
            check_finite(&out)?;
            let eps = out.examples_per_sec();
            let (n0, e0) = *base.get_or_insert((n, eps));
            let efficiency = if e0 > 0.0 { (eps / e0) / (f64::from(n) / f64::from(n0)) } else { 0.0 };
            rows.push(SpeedupRow {
                n_ranks: n,
                batch_size: b,
                examples_per_sec: eps,
                mb_per_sec: eps * bytes_per_example / 1e6,
                efficiency,
            });
        }
    }
    let mut csv = String::from("n_ranks,batch_size,examples_per_sec,mb_per_sec,efficiency\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{:.3},{:.6},{:.6}\n",
            r.n_ranks, r.batch_size, r.examples_per_sec, r.mb_per_sec, r.efficiency
        ));
    }
    let mut art = Artifacts::create(&cfg.output_dir)?;
    art.write("speedup.csv", csv.as_bytes())?;
    let summary = serde_json::json!({ "rows": rows, "warnings": warnings, "bytes_per_example": bytes_per_example });
    let manifest = art.finish("speedup", cfg, summary)?;
    Ok(CommandOutput { manifest, result: rows, warnings })
}

// ---------------------------------------------------------------- staleness

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StalenessSummary {
    pub records: usize,
    pub remote: usize,
    pub verified: usize,
    pub max: u64,
    pub mean_remote: f64,
    pub histogram: BTreeMap<u64, u64>,
}

/// Logs of the hand-scheduled three-rank example.
pub fn scripted_staleness_logs() -> Result<Vec<Vec<StalenessRecord>>, HarnessError> {
    let learner: Arc<dyn Learner> = Arc::new(QuadraticToy::new(vec![1.0, 2.0]));
    let mut c = ScriptedCluster::new(3, learner, 0.1, 1);
    let pairs = [TrainingPair::Labeled { features: Vec::new(), label: 0 }];
    c.run(&three_rank_script(), &pairs).map_err(|e| HarnessError::Engine(e.into()))?;
    Ok(c.logs().to_vec())
}

pub fn cmd_staleness(cfg: &RunConfig, scripted: bool) -> Result<CommandOutput<StalenessSummary>, HarnessError> {
    let logs = if scripted {
        scripted_staleness_logs()?
    } else {
        let out = training_job(cfg, cfg.build_learner()?, cfg.dataset()?, cfg.n_ranks).run()?;
        check_finite(&out)?;
        out.staleness_logs()
    };
    let verified = verify_staleness(&logs)?;
    let histogram = staleness_histogram(&logs);
    let remote: u64 = histogram.values().sum();
    let weighted: u64 = histogram.iter().map(|(k, v)| k * v).sum();
    let summary = StalenessSummary {
        records: logs.iter().map(Vec::len).sum(),
        remote: remote as usize,
        verified,
        max: histogram.keys().next_back().copied().unwrap_or(0),
        mean_remote: if remote == 0 { 0.0 } else { weighted as f64 / remote as f64 },
        histogram,
    };
    let mut jsonl = String::new();
    for r in logs.iter().flatten() {
        jsonl.push_str(&serde_json::to_string(r).expect("serializes"));
        jsonl.push('\n');
    }
    let mut art = Artifacts::create(&cfg.output_dir)?;
    art.write("staleness.jsonl", jsonl.as_bytes())?;
    art.write("staleness_hist.csv", histogram_csv(&summary.histogram).as_bytes())?;
    let mut s = serde_json::to_value(&summary).expect("serializes");
    s["scripted"] = scripted.into();
    let manifest = art.finish("staleness", cfg, s)?;
    Ok(CommandOutput { manifest, result: summary, warnings: Vec::new() })
}

// ---------------------------------------------------------------- throughput

pub fn criteria(cfg: &RunConfig) -> SustainabilityCriteria {
    SustainabilityCriteria {
        achieved_factor: cfg.throughput.achieved_factor,
        growth_factor: cfg.throughput.growth_factor,
        min_growth: Duration::from_millis(cfg.throughput.min_growth_ms),
        window: Duration::from_millis(cfg.throughput.window_ms),
    }
}

/// One fixed-rate trial on an unbounded replay of `pairs`; `rate = None`
/// offers data as fast as the pipeline accepts it.
pub fn throughput_trial(
    cfg: &RunConfig,
    learner: Arc<dyn Learner>,
    pairs: Arc<Vec<TrainingPair>>,
    rate: Option<f64>,
    c: &SustainabilityCriteria,
) -> Result<TrialOutcome, HarnessError> {
    let warmup = Duration::from_millis(cfg.throughput.warmup_ms);
    let mut job = training_job(cfg, learner, Dataset::Pairs(pairs), cfg.n_ranks);
    job.generator.passes = Passes::Unbounded;
    job.generator.max_batches = None;
    job.generator.rate = match rate {
        Some(r) => Rate::PerSecond(r),
        None => Rate::Max,
    };
    job.stop_after = Some(warmup + c.window);
    let out = job.run()?;
    check_finite(&out)?;
    Ok(TrialOutcome { latencies: out.latencies(), window_start_ns: warmup.as_nanos() as u64 })
}

/// Events per second the pipeline absorbs when it is never starved.
pub fn probe_capacity(
    cfg: &RunConfig,
    learner: Arc<dyn Learner>,
    pairs: Arc<Vec<TrainingPair>>,
) -> Result<f64, HarnessError> {
    let c = criteria(cfg);
    let outcome = throughput_trial(cfg, learner, pairs, None, &c)?;
    Ok(crate::stream::evaluate_trial(f64::INFINITY, &outcome, &c).achieved_rate)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputResult {
    pub probe_capacity: Option<f64>,
    pub reports: Vec<ThroughputReport>,
    pub capacity_estimate: Option<f64>,
}

pub fn cmd_throughput(cfg: &RunConfig) -> Result<CommandOutput<ThroughputResult>, HarnessError> {
    let t = &cfg.throughput;
    if t.window_ms == 0 {
        return Err(HarnessError::Config("throughput.window_ms must be positive".into()));
    }
    let learner = cfg.build_learner()?;
    let pairs = Arc::new(cfg.pairs()?);
    let (probe, rates) = if t.rates.is_empty() {
        let cap = probe_capacity(cfg, learner.clone(), pairs.clone())?;
        (Some(cap), t.rate_factors.iter().map(|f| f * cap).collect::<Vec<_>>())
    } else {
        (None, t.rates.clone())
    };
    if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(HarnessError::Config("offered rates must be positive".into()));
    }
    let mut sorted = rates;
    sorted.sort_by(f64::total_cmp);
    let reports = measure_sustainable_throughput(&sorted, &criteria(cfg), |r, c| {
        throughput_trial(cfg, learner.clone(), pairs.clone(), Some(r), c)
    })?;
    let mut csv = Vec::new();
    write_throughput_csv(&mut csv, &reports)?;
    let mut art = Artifacts::create(&cfg.output_dir)?;
    art.write("throughput.csv", &csv)?;
    let result = ThroughputResult { probe_capacity: probe, capacity_estimate: capacity_estimate(&reports), reports };
    let manifest = art.finish("throughput", cfg, serde_json::to_value(&result).expect("serializes"))?;
    Ok(CommandOutput { manifest, result, warnings: Vec::new() })
}

// ---------------------------------------------------------------- drift

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftCheck {
    pub drift_mean: f64,
    pub shifted_median: f64,
    pub unshifted_median: f64,
    pub no_drift_mean: f64,
    /// Mean plus three standard deviations of an independent no-drift run.
    pub control_floor: f64,
    pub ordinal_holds: bool,
    pub control_below_floor: bool,
}

pub fn load_scenario(path: Option<&Path>) -> Result<DriftScenario, HarnessError> {
    let Some(path) = path else { return Ok(DriftScenario::default()) };
    let text =
        std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    let s: DriftScenario =
        toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    s.validate()?;
    Ok(s)
}

pub fn drift_engine(cfg: &RunConfig) -> DriftEngine {
    DriftEngine {
        n_ranks: cfg.n_ranks,
        mode: cfg.mode(),
        executor: cfg.executor(),
        max_grad_buffer: cfg.max_grad_buffer,
        seed: cfg.seed,
    }
}

/// Runs the scenario, the same scenario without drift, and an independent
/// no-drift control whose spread sets the noise floor.
pub fn cmd_drift(cfg: &RunConfig, scenario: &DriftScenario) -> Result<CommandOutput<DriftCheck>, HarnessError> {
    let engine = drift_engine(cfg);
    let drifted = run_drift_experiment(scenario, &engine)?;
    let mut no_drift_s = scenario.clone();
    no_drift_s.shift = crate::drift::Shift::Identity;
    let no_drift = run_drift_experiment(&no_drift_s, &engine)?;
    let control = run_drift_experiment(&scenario.control(), &engine)?;

    let (shifted_median, unshifted_median) = drifted.report.split_medians(&scenario.shifted_tokens);
    let control_floor = control.report.noise_floor();
    let check = DriftCheck {
        drift_mean: drifted.report.mean,
        shifted_median,
        unshifted_median,
        no_drift_mean: no_drift.report.mean,
        control_floor,
        ordinal_holds: shifted_median > unshifted_median,
        control_below_floor: no_drift.report.mean < control_floor,
    };
    let mut art = Artifacts::create(&cfg.output_dir)?;
    for (name, r) in [("drift", &drifted.report), ("drift_nodrift", &no_drift.report), ("drift_control", &control.report)]
    {
        let mut csv = Vec::new();
        r.write_csv(&mut csv)?;
        art.write(&format!("{name}.csv"), &csv)?;
        art.write(&format!("{name}_summary.json"), r.summary_json().as_bytes())?;
    }
    let mut summary = serde_json::to_value(&check).expect("serializes");
    summary["scenario"] = serde_json::to_value(scenario).expect("serializes");
    let manifest = art.finish("drift", cfg, summary)?;
    Ok(CommandOutput { manifest, result: check, warnings: Vec::new() })
}

/// Whether `executor` reproduces runs exactly.
pub fn is_deterministic(executor: &Executor) -> bool {
    matches!(executor, Executor::Deterministic { .. })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> RunConfig {
        let mut c = RunConfig::default();
        c.learner = crate::learners::LearnerKind::Linear { dim: 4 };
        c.data = DataSpec::Dyadic { samples: 256, dim: 4, seed: 1 };
        c.alpha = 0.0625;
        c.batch_size = 8;
        c.output_dir = dir.to_path_buf();
        c
    }

    #[test]
    fn run_writes_manifest_with_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let out = cmd_run(&cfg).unwrap();
        assert_eq!(out.result.loss_curve.len(), 32);
        let remote: u64 = out.result.staleness_histogram.values().sum();
        assert_eq!(remote, 32);
        for (name, hash) in &out.manifest.artifacts {
            let bytes = std::fs::read(dir.path().join(name)).unwrap();
            assert_eq!(&sha256_hex(&bytes), hash);
        }
        let m: Manifest = serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m.config, cfg);
    }

    #[test]
    fn converge_single_rank_matches_reference() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let out = cmd_converge(&cfg).unwrap();
        assert_eq!(out.result.reference_match, Some(true));
        assert_eq!(out.result.rows.len(), 3);
        assert_eq!(out.result.rows[0].relative_gap, Some(0.0));
    }

    #[test]
    fn scripted_staleness_values() {
        let dir = tempfile::tempdir().unwrap();
        let out = cmd_staleness(&small(dir.path()), true).unwrap();
        assert_eq!(out.result.verified, out.result.records);
        assert!(out.result.histogram.contains_key(&2) && out.result.histogram.contains_key(&3));
    }

    #[test]
    fn sync_single_rank_has_no_staleness() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.mode = ModeName::Sync;
        cfg.n_ranks = 1;
        let out = cmd_staleness(&cfg, false).unwrap();
        assert_eq!(out.result.remote, 0);
        assert_eq!(out.result.max, 0);
    }

    #[test]
    fn error_exit_codes() {
        assert_eq!(HarnessError::Config(String::new()).exit_code(), 2);
        let m = OracleMismatch { applier: 0, origin: 1, origin_seq: 1, recorded: 0, replayed: 1 };
        assert_eq!(HarnessError::from(m).exit_code(), 3);
        let e: HarnessError = EngineError::Model(ModelError::NonFiniteGradient { batch_id: 5 }).into();
        assert_eq!(e.exit_code(), 4);
    }

    #[test]
    fn non_finite_training_exits_with_code_4() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.learner = crate::learners::LearnerKind::QuadraticToy { target: vec![f32::MAX; 4] };
        cfg.alpha = 1e30;
        let err = cmd_run(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 4, "{err}");
    }
}
