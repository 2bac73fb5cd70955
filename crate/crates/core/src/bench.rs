//! Pipeline driver, multi-trial experiments and report output.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consistency::{bottom_up, independent, top_down, ConsistentResult, MergeRule, TopDownConfig};
use crate::data::{build_histograms, load_dir, synthetic_tree, SynthParams};
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::hierarchy::HierarchyTree;
use crate::hist::{emd, SizeBound};
use crate::noise::{
    sample_laplace, size_bound_from_noisy_max, split_budget, PrivacyBudget, SeededRng, DEFAULT_BOUND_EPSILON,
};

/// Size bound used when none is configured.
pub const DEFAULT_SIZE_BOUND: u64 = 100_000;

/// Stream id reserved for the private size-bound estimate.
const BOUND_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    TopDown,
    BottomUp,
    Independent,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::TopDown => "top_down",
            Algorithm::BottomUp => "bottom_up",
            Algorithm::Independent => "independent",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top_down" | "top-down" => Ok(Algorithm::TopDown),
            "bottom_up" | "bottom-up" => Ok(Algorithm::BottomUp),
            "independent" => Ok(Algorithm::Independent),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Public size bound, either fixed or estimated privately from the root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BoundRepr", into = "BoundRepr")]
pub enum BoundSpec {
    Fixed(SizeBound),
    Auto,
}

impl Default for BoundSpec {
    fn default() -> Self {
        BoundSpec::Fixed(SizeBound::new(DEFAULT_SIZE_BOUND).expect("nonzero"))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BoundRepr {
    Fixed(u64),
    Named(String),
}

impl TryFrom<BoundRepr> for BoundSpec {
    type Error = Error;

    fn try_from(r: BoundRepr) -> Result<Self> {
        match r {
            BoundRepr::Fixed(k) => Ok(BoundSpec::Fixed(SizeBound::new(k)?)),
            BoundRepr::Named(s) => s.parse(),
        }
    }
}

impl From<BoundSpec> for BoundRepr {
    fn from(b: BoundSpec) -> Self {
        match b {
            BoundSpec::Fixed(k) => BoundRepr::Fixed(k.get()),
            BoundSpec::Auto => BoundRepr::Named("auto".into()),
        }
    }
}

impl FromStr for BoundSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(BoundSpec::Auto);
        }
        let k: u64 = s.parse().map_err(|_| Error::Config(format!("bad size bound `{s}`")))?;
        Ok(BoundSpec::Fixed(SizeBound::new(k)?))
    }
}

/// How the privacy budget is given.
#[derive(Debug, Clone, PartialEq)]
pub enum Budget {
    /// Total budget, split evenly across levels after the size-bound share.
    Total(PrivacyBudget),
    /// Explicit per-level budgets, root first.
    PerLevel(Vec<PrivacyBudget>),
}

/// Everything needed for one privatisation run apart from the data and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub budget: Budget,
    pub kinds: Vec<EstimatorKind>,
    pub algorithm: Algorithm,
    pub merge: MergeRule,
    pub bound: BoundSpec,
    pub bound_epsilon: PrivacyBudget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub result: ConsistentResult,
    pub bound: SizeBound,
    /// Budget spent estimating the size bound (zero for a fixed bound).
    pub bound_epsilon: f64,
}

impl PipelineOutput {
    pub fn total_epsilon(&self) -> f64 {
        self.result.total_epsilon() + self.bound_epsilon
    }
}

fn resolve_bound(tree: &HierarchyTree, spec: &PipelineSpec, rng: &SeededRng) -> Result<(SizeBound, f64)> {
    match spec.bound {
        BoundSpec::Fixed(k) => Ok((k, 0.0)),
        BoundSpec::Auto => {
            let max = tree.root().hist.max_size().ok_or(Error::EmptyHistogram)?;
            let eps = spec.bound_epsilon;
            let noise = sample_laplace(1.0 / eps.epsilon(), &mut rng.derive(BOUND_STREAM));
            Ok((size_bound_from_noisy_max(max, noise, eps), eps.epsilon()))
        }
    }
}

fn level_budgets(levels: usize, spec: &PipelineSpec, bound_eps: f64) -> Result<Vec<PrivacyBudget>> {
    match &spec.budget {
        Budget::PerLevel(v) => {
            if v.len() != levels {
                return Err(Error::Config(format!("{} level budgets for {levels} levels", v.len())));
            }
            Ok(v.clone())
        }
        Budget::Total(total) => {
            let rest = total.epsilon() - bound_eps;
            if !(rest > 0.0) {
                return Err(Error::Config(format!(
                    "total budget {} does not cover the size-bound share {bound_eps}",
                    total.epsilon()
                )));
            }
            split_budget(PrivacyBudget::new(rest)?, levels)
        }
    }
}

/// One privatisation of `tree` with the given seed.
pub fn run_pipeline(tree: &HierarchyTree, spec: &PipelineSpec, seed: u64) -> Result<PipelineOutput> {
    let rng = SeededRng::new(seed);
    let (bound, bound_epsilon) = resolve_bound(tree, spec, &rng)?;
    let result = match spec.algorithm {
        Algorithm::TopDown | Algorithm::Independent => {
            if spec.kinds.len() != tree.depth() {
                return Err(Error::Config(format!(
                    "{} estimator kinds for {} levels",
                    spec.kinds.len(),
                    tree.depth()
                )));
            }
            let cfg = TopDownConfig {
                level_budgets: level_budgets(tree.depth(), spec, bound_epsilon)?,
                kinds: spec.kinds.clone(),
                bound,
                merge: spec.merge,
            };
            if spec.algorithm == Algorithm::TopDown {
                top_down(tree, &cfg, &rng)?
            } else {
                independent(tree, &cfg, &rng)?
            }
        }
        Algorithm::BottomUp => {
            let eps = match &spec.budget {
                Budget::Total(_) => {
                    let per = level_budgets(1, spec, bound_epsilon)?;
                    per[0]
                }
                Budget::PerLevel(v) => PrivacyBudget::new(v.iter().map(|b| b.epsilon()).sum())?,
            };
            let kind = *spec.kinds.last().ok_or_else(|| Error::Config("no estimator kind given".into()))?;
            bottom_up(tree, eps, kind, bound, &rng)?
        }
    };
    Ok(PipelineOutput { result, bound, bound_epsilon })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Directory holding `entities.csv`, `groups.csv` and `hierarchy.csv`.
    Files {
        dir: PathBuf,
    },
    Synthetic(SynthParams),
}

impl DatasetSource {
    pub fn load(&self) -> Result<HierarchyTree> {
        match self {
            DatasetSource::Files { dir } => build_histograms(&load_dir(dir)?),
            DatasetSource::Synthetic(p) => synthetic_tree(p),
        }
    }
}

fn default_trials() -> usize {
    10
}

fn default_bound_epsilon() -> f64 {
    DEFAULT_BOUND_EPSILON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub levels_epsilon: Option<Vec<f64>>,
    pub kinds: Vec<EstimatorKind>,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub merge: MergeRule,
    #[serde(default)]
    pub k_bound: BoundSpec,
    #[serde(default = "default_bound_epsilon")]
    pub bound_epsilon: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn pipeline(&self) -> Result<PipelineSpec> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        let budget = match (&self.epsilon, &self.levels_epsilon) {
            (Some(e), None) => Budget::Total(PrivacyBudget::new(*e)?),
            (None, Some(v)) => {
                Budget::PerLevel(v.iter().map(|&e| PrivacyBudget::new(e)).collect::<Result<_>>()?)
            }
            _ => return Err(Error::Config("set exactly one of epsilon and levels_epsilon".into())),
        };
        Ok(PipelineSpec {
            budget,
            kinds: self.kinds.clone(),
            algorithm: self.algorithm,
            merge: self.merge,
            bound: self.k_bound,
            bound_epsilon: PrivacyBudget::new(self.bound_epsilon)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLevel {
    pub trial: usize,
    pub seed: u64,
    /// EMD summed over the level's nodes divided by the node count.
    pub mean_emd: f64,
    pub sum_emd: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub nodes: usize,
    /// Budget spent at this level in the first trial.
    pub epsilon: f64,
    pub mean_emd: f64,
    /// Sample standard deviation across trials divided by the square root of the trial count.
    pub std_mean: f64,
    pub mean_sum_emd: f64,
    pub omniscient: f64,
    pub trials: Vec<TrialLevel>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub load_secs: f64,
    pub trials_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub algorithm: Algorithm,
    pub kinds: Vec<EstimatorKind>,
    pub merge: MergeRule,
    pub size_bound: u64,
    pub total_epsilon: f64,
    pub base_seed: u64,
    pub trials: usize,
    pub levels: Vec<LevelReport>,
    pub omniscient_total: f64,
    /// Wall-clock times; excluded from [`ExperimentReport::fingerprint`].
    pub timings: Timings,
}

impl ExperimentReport {
    /// JSON of everything except timings; equal for equal configurations.
    pub fn fingerprint(&self) -> String {
        let mut copy = self.clone();
        copy.timings = Timings::default();
        serde_json::to_string(&copy).expect("report serialises")
    }
}

/// Mean and standard deviation of the mean (sample std over `sqrt(n)`).
pub fn mean_and_std_of_mean(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Expected per-node error of an estimator that knows which sizes occur:
/// `distinct sizes * sqrt(2) / eps` averaged over the level's nodes.
pub fn omniscient_error(tree: &HierarchyTree, eps_per_level: &[PrivacyBudget]) -> Vec<f64> {
    tree.levels()
        .iter()
        .zip(eps_per_level)
        .map(|(nodes, eps)| {
            if nodes.is_empty() {
                return 0.0;
            }
            let distinct: usize = nodes.iter().map(|&i| tree.node(i).hist.distinct_sizes()).sum();
            omniscient_node_error(distinct, *eps) / nodes.len() as f64
        })
        .collect()
}

/// `distinct * sqrt(2) / eps`.
pub fn omniscient_node_error(distinct: usize, eps: PrivacyBudget) -> f64 {
    distinct as f64 * SQRT_2 / eps.epsilon()
}

/// Per-level EMD between released and true histograms: (sum, sum / node count).
pub fn level_errors(tree: &HierarchyTree, result: &ConsistentResult) -> Result<Vec<(u64, f64)>> {
    tree.levels()
        .iter()
        .map(|nodes| {
            let mut sum = 0u64;
            for &i in nodes {
                sum += emd(&tree.node(i).hist, &result.released[i])?;
            }
            Ok((sum, sum as f64 / nodes.len().max(1) as f64))
        })
        .collect()
}

/// Runs `trials` seeded pipelines (in parallel) on an already loaded tree.
pub fn run_trials(
    tree: &HierarchyTree,
    spec: &PipelineSpec,
    base_seed: u64,
    trials: usize,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    let runs: Vec<(PipelineOutput, Vec<(u64, f64)>)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let out = run_pipeline(tree, spec, base_seed.wrapping_add(t as u64))?;
            let errs = level_errors(tree, &out.result)?;
            Ok((out, errs))
        })
        .collect::<Result<_>>()?;
    let trials_secs = start.elapsed().as_secs_f64();
    let first = &runs.first().ok_or_else(|| Error::Config("trials must be at least 1".into()))?.0;

    // reference budgets: the even top-down split of whatever the run spent on levels
    let spent = first.result.total_epsilon();
    let reference = match &spec.budget {
        Budget::PerLevel(v) => v.clone(),
        Budget::Total(_) => split_budget(PrivacyBudget::new(spent)?, tree.depth())?,
    };
    let omniscient = omniscient_error(tree, &reference);

    let mut levels = Vec::with_capacity(tree.depth());
    for (l, nodes) in tree.levels().iter().enumerate() {
        let per_trial: Vec<TrialLevel> = runs
            .iter()
            .enumerate()
            .map(|(t, (_, errs))| TrialLevel {
                trial: t,
                seed: base_seed.wrapping_add(t as u64),
                mean_emd: errs[l].1,
                sum_emd: errs[l].0,
            })
            .collect();
        let means: Vec<f64> = per_trial.iter().map(|t| t.mean_emd).collect();
        let (mean_emd, std_mean) = mean_and_std_of_mean(&means);
        let mean_sum_emd = per_trial.iter().map(|t| t.sum_emd as f64).sum::<f64>() / trials as f64;
        levels.push(LevelReport {
            level: l,
            nodes: nodes.len(),
            epsilon: first.result.level_budgets[l],
            mean_emd,
            std_mean,
            mean_sum_emd,
            omniscient: omniscient[l],
            trials: per_trial,
        });
        info!("level {l}: mean emd {mean_emd:.3} +/- {std_mean:.3} (omniscient {:.3})", omniscient[l]);
    }
    Ok(ExperimentReport {
        algorithm: spec.algorithm,
        kinds: spec.kinds.clone(),
        merge: spec.merge,
        size_bound: first.bound.get(),
        total_epsilon: first.total_epsilon(),
        base_seed,
        trials,
        omniscient_total: omniscient.iter().sum(),
        levels,
        timings: Timings { load_secs: 0.0, trials_secs },
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let spec = cfg.pipeline()?;
    let start = Instant::now();
    let tree = cfg.dataset.load()?;
    let load_secs = start.elapsed().as_secs_f64();
    let mut report = run_trials(&tree, &spec, cfg.base_seed, cfg.trials)?;
    report.timings.load_secs = load_secs;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    PlotData,
}

impl ReportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Json => "report.json",
            ReportFormat::Csv => "trials.csv",
            ReportFormat::PlotData => "plotdata.csv",
        }
    }
}

pub fn write_report<W: Write>(report: &ExperimentReport, format: ReportFormat, w: W) -> Result<()> {
    match format {
        ReportFormat::Json => {
            let mut w = w;
            serde_json::to_writer_pretty(&mut w, report)?;
            writeln!(w)?;
            w.flush()?;
        }
        ReportFormat::Csv => {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["level", "trial", "seed", "mean_emd", "sum_emd"])?;
            for lvl in &report.levels {
                for t in &lvl.trials {
                    out.write_record([
                        lvl.level.to_string(),
                        t.trial.to_string(),
                        t.seed.to_string(),
                        t.mean_emd.to_string(),
                        t.sum_emd.to_string(),
                    ])?;
                }
            }
            out.flush()?;
        }
        ReportFormat::PlotData => {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["eps", "level", "mean_emd", "std_mean"])?;
            for lvl in &report.levels {
                out.write_record([
                    lvl.epsilon.to_string(),
                    lvl.level.to_string(),
                    lvl.mean_emd.to_string(),
                    lvl.std_mean.to_string(),
                ])?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

/// Writes the report in `format` to `dir`, returning the file path.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format.file_name());
    write_report(report, format, BufWriter::new(File::create(&path)?))?;
    Ok(path)
}
