use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use coc_hist::bench::{
    emit_report, run_pipeline, run_trials, Algorithm, BoundSpec, Budget, DatasetSource, ExperimentConfig,
    PipelineSpec, ReportFormat,
};
use coc_hist::consistency::MergeRule;
use coc_hist::data::{
    build_histograms, dataset_stats, gen_synthetic_housing, load_dir, write_dataset, SynthParams,
};
use coc_hist::estimators::{parse_kinds, EstimatorKind};
use coc_hist::hierarchy::HierarchyTree;
use coc_hist::hist::{emd, CountHistogram};
use coc_hist::noise::{PrivacyBudget, DEFAULT_BOUND_EPSILON};
use coc_hist::release::{check_release, read_release, write_release, RunInfo, MANIFEST_FILE};
use coc_hist::{Error, Result};

#[derive(Parser)]
#[command(name = "coc", version, about = "Private hierarchical count-of-counts histograms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a partially synthetic housing dataset.
    Synth(SynthArgs),
    /// Run the pipeline once and write every released histogram.
    Privatize(PrivatizeArgs),
    /// Per-level EMD between two histogram sets.
    Eval(EvalArgs),
    /// Run a seeded multi-trial experiment.
    Bench(BenchArgs),
    /// Audit a result directory.
    Check(CheckArgs),
}

#[derive(Args)]
struct SynthFlags {
    /// Generator parameters (TOML).
    #[arg(long)]
    synth_config: Option<PathBuf>,
    #[arg(long)]
    states: Option<usize>,
    /// Counties per state; 0 gives a two-level hierarchy.
    #[arg(long)]
    counties: Option<usize>,
    /// Outlier groups per state.
    #[arg(long)]
    outliers: Option<u64>,
    #[arg(long)]
    tail_ratio: Option<f64>,
    #[arg(long)]
    synth_seed: Option<u64>,
}

impl SynthFlags {
    fn params(&self) -> Result<SynthParams> {
        let base = match &self.synth_config {
            Some(path) => {
                toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Config(e.to_string()))?
            }
            None => SynthParams::default(),
        };
        Ok(self.apply_to(base))
    }

    fn apply_to(&self, mut p: SynthParams) -> SynthParams {
        if let Some(s) = self.states {
            p.states = s;
        }
        if let Some(c) = self.counties {
            p.counties_per_state = c;
            p.county_weights = None;
        }
        if let Some(o) = self.outliers {
            p.outliers_per_state = o;
        }
        if self.tail_ratio.is_some() {
            p.tail_ratio = self.tail_ratio;
        }
        if let Some(s) = self.synth_seed {
            p.seed = s;
        }
        p
    }

    fn any(&self) -> bool {
        self.synth_config.is_some()
            || self.states.is_some()
            || self.counties.is_some()
            || self.outliers.is_some()
            || self.tail_ratio.is_some()
            || self.synth_seed.is_some()
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    synth: SynthFlags,
    #[arg(long)]
    out: PathBuf,
}

fn parse_epsilon(s: &str) -> std::result::Result<f64, String> {
    let e: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    PrivacyBudget::new(e).map(|b| b.epsilon()).map_err(|e| e.to_string())
}

#[derive(Clone)]
struct EpsList(Vec<f64>);

#[derive(Clone)]
struct KindList(Vec<EstimatorKind>);

fn parse_epsilons(s: &str) -> std::result::Result<EpsList, String> {
    s.split(',').map(|x| parse_epsilon(x.trim())).collect::<std::result::Result<_, _>>().map(EpsList)
}

fn parse_kind_list(s: &str) -> std::result::Result<KindList, String> {
    parse_kinds(s).map(KindList).map_err(|e| e.to_string())
}

fn parse_from_str<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
struct PipelineFlags {
    #[arg(long)]
    seed: Option<u64>,
    /// Total budget, split evenly across levels.
    #[arg(long, value_parser = parse_epsilon, conflicts_with = "levels_epsilon")]
    epsilon: Option<f64>,
    /// Comma-separated per-level budgets, root first.
    #[arg(long, value_parser = parse_epsilons)]
    levels_epsilon: Option<EpsList>,
    /// Comma-separated estimator per level: naive, hg, hc (= hc-l1), hc-l2.
    #[arg(long, value_parser = parse_kind_list)]
    kinds: Option<KindList>,
    #[arg(long, value_parser = parse_from_str::<Algorithm>)]
    algorithm: Option<Algorithm>,
    #[arg(long, value_parser = parse_from_str::<MergeRule>)]
    merge: Option<MergeRule>,
    /// Maximum group size, or `auto` to estimate it privately.
    #[arg(long, value_parser = parse_from_str::<BoundSpec>)]
    k_bound: Option<BoundSpec>,
    #[arg(long, value_parser = parse_epsilon)]
    bound_epsilon: Option<f64>,
}

impl PipelineFlags {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(e) = self.epsilon {
            cfg.epsilon = Some(e);
            cfg.levels_epsilon = None;
        }
        if let Some(v) = &self.levels_epsilon {
            cfg.levels_epsilon = Some(v.0.clone());
            cfg.epsilon = None;
        }
        if let Some(k) = &self.kinds {
            cfg.kinds = k.0.clone();
        }
        if let Some(a) = self.algorithm {
            cfg.algorithm = a;
        }
        if let Some(m) = self.merge {
            cfg.merge = m;
        }
        if let Some(k) = self.k_bound {
            cfg.k_bound = k;
        }
        if let Some(e) = self.bound_epsilon {
            cfg.bound_epsilon = e;
        }
        if let Some(s) = self.seed {
            cfg.base_seed = s;
        }
    }
}

fn base_config(dataset: DatasetSource) -> ExperimentConfig {
    ExperimentConfig {
        dataset,
        epsilon: None,
        levels_epsilon: None,
        kinds: Vec::new(),
        algorithm: Algorithm::TopDown,
        merge: MergeRule::Weighted,
        k_bound: BoundSpec::default(),
        bound_epsilon: DEFAULT_BOUND_EPSILON,
        trials: 10,
        base_seed: 0,
        out: None,
    }
}

/// Fills unset kinds with `hc-l1` at every level and the budget with 1.0.
fn complete(cfg: &mut ExperimentConfig, depth: usize) {
    if cfg.kinds.is_empty() {
        cfg.kinds = vec![EstimatorKind::HcL1; depth];
    }
    if cfg.epsilon.is_none() && cfg.levels_epsilon.is_none() {
        cfg.epsilon = Some(1.0);
    }
}

#[derive(Args)]
struct PrivatizeArgs {
    /// Directory with entities.csv, groups.csv and hierarchy.csv.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    pipeline: PipelineFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Tables directory or result directory with the true histograms.
    #[arg(long)]
    truth: PathBuf,
    /// Result directory with the released histograms.
    #[arg(long)]
    estimate: PathBuf,
    /// Write the JSON summary here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Tables directory; overrides the configured dataset.
    #[arg(long, conflicts_with = "synth_config")]
    data: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthFlags,
    #[command(flatten)]
    pipeline: PipelineFlags,
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory for report.json, trials.csv and plotdata.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    result: PathBuf,
}

fn synth(args: &SynthArgs) -> Result<()> {
    let params = args.synth.params()?;
    let ds = gen_synthetic_housing(&params)?;
    write_dataset(&ds, &args.out)?;
    let stats = dataset_stats(&ds);
    println!("{}", serde_json::to_string(&stats)?);
    Ok(())
}

fn privatize(args: &PrivatizeArgs) -> Result<()> {
    let tree = build_histograms(&load_dir(&args.data)?)?;
    let mut cfg = base_config(DatasetSource::Files { dir: args.data.clone() });
    args.pipeline.apply(&mut cfg);
    complete(&mut cfg, tree.depth());
    let spec: PipelineSpec = cfg.pipeline()?;
    let out = run_pipeline(&tree, &spec, cfg.base_seed)?;
    let info = RunInfo {
        seed: cfg.base_seed,
        algorithm: spec.algorithm.to_string(),
        kinds: spec.kinds.iter().map(|k| k.to_string()).collect(),
        merge: spec.merge.to_string(),
        size_bound: out.bound.get(),
        bound_epsilon: out.bound_epsilon,
        level_epsilons: out.result.level_budgets.clone(),
        total_epsilon: out.total_epsilon(),
    };
    write_release(&args.out, &tree, &out.result.released, &info)?;
    info!("wrote {} nodes to {}", tree.len(), args.out.display());
    if let Budget::Total(_) = spec.budget {
        info!("total epsilon {}", out.total_epsilon());
    }
    Ok(())
}

fn load_histograms(dir: &Path) -> Result<Vec<(String, usize, CountHistogram)>> {
    if dir.join(MANIFEST_FILE).exists() {
        return Ok(read_release(dir)?.into_iter().map(|(row, h)| (row.node_id, row.level, h)).collect());
    }
    let tree: HierarchyTree = build_histograms(&load_dir(dir)?)?;
    Ok(tree.nodes().iter().map(|n| (n.id.clone(), n.level, n.hist.clone())).collect())
}

#[derive(serde::Serialize)]
struct EvalLevel {
    level: usize,
    nodes: usize,
    mean_emd: f64,
    sum_emd: u64,
}

fn eval(args: &EvalArgs) -> Result<()> {
    let truth = load_histograms(&args.truth)?;
    let estimate: std::collections::HashMap<String, CountHistogram> =
        load_histograms(&args.estimate)?.into_iter().map(|(id, _, h)| (id, h)).collect();
    let mut levels: Vec<EvalLevel> = Vec::new();
    for (id, level, h) in &truth {
        let est = estimate
            .get(id)
            .ok_or_else(|| Error::Structure(format!("node `{id}` missing from the estimate")))?;
        let d = emd(h, est)?;
        while levels.len() <= *level {
            levels.push(EvalLevel { level: levels.len(), nodes: 0, mean_emd: 0.0, sum_emd: 0 });
        }
        levels[*level].nodes += 1;
        levels[*level].sum_emd += d;
    }
    for l in &mut levels {
        l.mean_emd = l.sum_emd as f64 / l.nodes.max(1) as f64;
    }
    let text = serde_json::to_string_pretty(&levels)?;
    match &args.out {
        Some(path) => {
            let mut f = BufWriter::new(File::create(path)?);
            writeln!(f, "{text}")?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn bench(args: &BenchArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_toml(&std::fs::read_to_string(path)?)?,
        None => base_config(DatasetSource::Synthetic(SynthParams::default())),
    };
    if let Some(dir) = &args.data {
        cfg.dataset = DatasetSource::Files { dir: dir.clone() };
    } else if args.synth.any() {
        cfg.dataset = match (&args.synth.synth_config, &cfg.dataset) {
            (None, DatasetSource::Synthetic(p)) => DatasetSource::Synthetic(args.synth.apply_to(p.clone())),
            _ => DatasetSource::Synthetic(args.synth.params()?),
        };
    }
    args.pipeline.apply(&mut cfg);
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.clone());
    }
    let tree = cfg.dataset.load()?;
    complete(&mut cfg, tree.depth());
    let spec = cfg.pipeline()?;
    let report = run_trials(&tree, &spec, cfg.base_seed, cfg.trials)?;
    match &cfg.out {
        Some(dir) => {
            for fmt in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::PlotData] {
                let path = emit_report(&report, fmt, dir)?;
                info!("wrote {}", path.display());
            }
        }
        None => {
            let stdout = io::stdout();
            coc_hist::bench::write_report(&report, ReportFormat::Json, stdout.lock())?;
        }
    }
    Ok(())
}

/// Returns whether the result passed.
fn check(args: &CheckArgs) -> Result<bool> {
    let violations = check_release(&args.result)?;
    for v in &violations {
        println!("{v}");
    }
    println!("{} violation(s)", violations.len());
    Ok(violations.is_empty())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Synth(a) => synth(a).map(|_| true),
        Command::Privatize(a) => privatize(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Bench(a) => bench(a).map(|_| true),
        Command::Check(a) => check(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
