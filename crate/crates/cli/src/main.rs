//! `nbsp` — run cycling-task experiments, aggregate metrics, draw plots.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use nbsp::config::{ExperimentConfig, Method};
use nbsp::envs::{GpmKind, TaskSpec};
use nbsp::harness::{self, CurvePoint, RunStatus};
use nbsp::metrics::{mean_std, MetricSummary, SrMatrix};
use nbsp::nbsp::{build_mask, GradientMask};
use nbsp::nn::Checkpoint;
use nbsp::plot;
use nbsp::rng;
use nbsp::sac::SacAgent;
use nbsp::skill::{self, NeuronId, Trace, TraceOptions};

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Run(String),
    #[error("{0}")]
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Run(_) => 3,
            Failure::Io(_) => 4,
        }
    }
}

impl From<nbsp::Error> for Failure {
    fn from(e: nbsp::Error) -> Self {
        match e {
            nbsp::Error::Config(_) => Failure::Config(e.to_string()),
            nbsp::Error::Io(_) | nbsp::Error::Format { .. } => Failure::Io(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

type CliResult<T = ()> = Result<T, Failure>;

#[derive(Parser)]
#[command(name = "nbsp", version, about = "Skill-neuron masking and replay for continual SAC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a cycling-task experiment for one or more seeds.
    Run(RunArgs),
    /// Aggregate ASR/FM/FWT (and AR) over run directories.
    Metrics(MetricsArgs),
    /// Draw an SVG plot.
    Plot {
        #[command(subcommand)]
        kind: PlotKind,
    },
    /// Run the experiment once per mask proportion and seed.
    Sweep(SweepArgs),
    /// Identify skill neurons of a checkpoint on one task and write its mask.
    Identify(IdentifyArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset (default: nbsp-pointmass-2task).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    proportion: Option<f64>,
    #[arg(long)]
    alpha_mask: Option<f64>,
    #[arg(long)]
    replay_interval: Option<u64>,
    /// Single seed; overrides the config's seed list.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

impl ConfigArgs {
    fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(p), _) => ExperimentConfig::load(p).map_err(|e| match e {
                nbsp::Error::Io(io) => Failure::Io(format!("{}: {io}", p.display())),
                other => Failure::Config(format!("{}: {other}", p.display())),
            })?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => ExperimentConfig::preset("nbsp-pointmass-2task")?,
        };
        if let Some(m) = &self.method {
            cfg.experiment.method = m.parse::<Method>()?;
        }
        if let Some(p) = self.proportion {
            cfg.nbsp.proportion = p;
        }
        if let Some(a) = self.alpha_mask {
            cfg.nbsp.alpha_mask = a;
        }
        if let Some(k) = self.replay_interval {
            cfg.nbsp.replay_interval = k;
        }
        if let Some(s) = self.seed {
            cfg.experiment.seeds = vec![s];
        }
        if let Some(s) = &self.seeds {
            cfg.experiment.seeds = s.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Output root; each invocation gets its own run directory inside.
    #[arg(long, env = "NBSP_OUT", default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// Run directories (or roots containing seed_* run directories).
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    /// Also write the table as CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PlotKind {
    /// Evaluation value against environment steps, one panel per segment.
    Curves {
        /// Run directory holding curves.csv.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Activation histogram of one neuron, split by the GPM indicator.
    Histogram {
        /// Activation export (traces/segment_<i>_activations.csv).
        #[arg(long)]
        activations: PathBuf,
        /// Matching GPM export.
        #[arg(long)]
        gpm: PathBuf,
        /// Neuron id such as actor/0/12.
        #[arg(long)]
        neuron: String,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Proportion against ASR with error bars.
    Sweep {
        /// sweep.csv written by `nbsp sweep`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Comma-separated proportions.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2,0.3,0.5")]
    proportions: Vec<f64>,
    #[arg(long, env = "NBSP_OUT", default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct IdentifyArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Agent checkpoint written by a run.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Task as family:variant, e.g. pointmass:goal-east.
    #[arg(long)]
    task: String,
    /// Rollout steps for the activation trace (default from config).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, env = "NBSP_OUT", default_value = "runs")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Metrics(a) => cmd_metrics(&a),
        Command::Plot { kind } => cmd_plot(&kind),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Identify(a) => cmd_identify(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

#[derive(Debug, Serialize)]
struct SegmentStatus {
    seed: u64,
    segment: usize,
    status: &'static str,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    run_id: String,
    config_hash: String,
    method: Method,
    seeds: Vec<u64>,
    outputs: BTreeMap<u64, PathBuf>,
    status: Vec<SegmentStatus>,
}

/// `<base>`, or `<base>-2`, `<base>-3`… whichever does not exist yet under `root`.
fn fresh_run_id(root: &Path, base: &str) -> String {
    let mut id = base.to_owned();
    let mut n = 2;
    while root.join(&id).exists() {
        id = format!("{base}-{n}");
        n += 1;
    }
    id
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn cmd_run(a: &RunArgs) -> CliResult {
    let cfg = a.cfg.resolve()?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let run_id = fresh_run_id(&a.out, &format!("{}-{}", cfg.experiment.name, cfg.experiment.method));
    let dir = a.out.join(&run_id);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    fs::write(dir.join("config.snapshot"), cfg.snapshot()).map_err(io_err(&dir))?;

    let mut manifest = RunManifest {
        run_id: run_id.clone(),
        config_hash: cfg.hash(),
        method: cfg.experiment.method,
        seeds: cfg.experiment.seeds.clone(),
        outputs: BTreeMap::new(),
        status: Vec::new(),
    };
    let k = cfg.segments();
    let mut failed = Vec::new();
    for &seed in &cfg.experiment.seeds {
        let seed_dir = dir.join(format!("seed_{seed}"));
        eprintln!("{run_id}: seed {seed} -> {}", seed_dir.display());
        let art = harness::run_cycling_experiment(&cfg, seed, Some(&seed_dir))?;
        let failed_at = match &art.status {
            RunStatus::Completed => None,
            RunStatus::Failed { segment, reason } => {
                failed.push(format!("seed {seed} failed in segment {segment}: {reason}"));
                Some(*segment)
            }
        };
        for segment in 1..=k {
            let status = match failed_at {
                Some(f) if segment == f => "failed",
                Some(f) if segment > f => "not_run",
                _ => "completed",
            };
            manifest.status.push(SegmentStatus { seed, segment, status });
        }
        manifest.outputs.insert(seed, seed_dir);
        write_json(&dir.join("manifest.json"), &manifest)?;
        if let Some(s) = &art.summary {
            println!("{run_id}\tseed {seed}\tASR {:.4}\tFM {}\tFWT {:.4}", s.asr, fmt_opt(s.fm), s.fwt);
        }
    }
    println!("{}", dir.display());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(failed.join("; ")))
    }
}

/// Directories holding an sr_matrix.csv: the path itself, or its immediate
/// subdirectories when it is a multi-seed run root.
fn expand_run_dirs(path: &Path) -> Vec<PathBuf> {
    if path.join("sr_matrix.csv").exists() || !path.is_dir() {
        return vec![path.to_owned()];
    }
    let mut subs: Vec<PathBuf> = fs::read_dir(path)
        .map(|rd| {
            rd.filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("sr_matrix.csv").exists())
                .collect()
        })
        .unwrap_or_default();
    subs.sort();
    if subs.is_empty() {
        vec![path.to_owned()]
    } else {
        subs
    }
}

/// Normalised-return tasks get an AR column; decided from the run's config
/// snapshot when one is present.
fn uses_normalized_returns(dir: &Path) -> bool {
    let snap = dir.join("config.snapshot");
    let Ok(text) = fs::read_to_string(snap) else { return false };
    let Ok(cfg) = ExperimentConfig::from_toml_str(&text) else { return false };
    cfg.task_specs()
        .map(|t| t.iter().any(|t| t.gpm_kind == GpmKind::NormalizedReturn))
        .unwrap_or(false)
}

fn load_summary(dir: &Path, index: u64) -> CliResult<MetricSummary> {
    let path = dir.join("sr_matrix.csv");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let sr = SrMatrix::from_csv(&text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    MetricSummary::compute(&sr, index, uses_normalized_returns(dir))
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn cmd_metrics(a: &MetricsArgs) -> CliResult {
    let dirs: Vec<PathBuf> = a.dirs.iter().flat_map(|d| expand_run_dirs(d)).collect();
    let mut rows: Vec<(String, MetricSummary)> = Vec::new();
    let mut bad = 0;
    for (i, d) in dirs.iter().enumerate() {
        match load_summary(d, i as u64) {
            Ok(s) => rows.push((d.display().to_string(), s)),
            Err(e) => {
                eprintln!("skipping {}: {e}", d.display());
                bad += 1;
            }
        }
    }
    let has_ar = rows.iter().any(|(_, s)| s.ar.is_some());
    let mut csv = String::from("run,asr,fm,fwt");
    if has_ar {
        csv.push_str(",ar");
    }
    csv.push('\n');
    for (name, s) in &rows {
        csv.push_str(&format!("{name},{:.6},{},{:.6}", s.asr, fmt_opt(s.fm), s.fwt));
        if has_ar {
            csv.push_str(&format!(",{}", fmt_opt(s.ar)));
        }
        csv.push('\n');
    }
    if !rows.is_empty() {
        let col = |f: &dyn Fn(&MetricSummary) -> Option<f64>| -> Option<(f64, f64)> {
            let v: Vec<f64> = rows.iter().filter_map(|(_, s)| f(s)).collect();
            (!v.is_empty()).then(|| mean_std(&v))
        };
        let stats = [
            col(&|s| Some(s.asr)),
            col(&|s| s.fm),
            col(&|s| Some(s.fwt)),
            col(&|s| s.ar),
        ];
        let n = if has_ar { 4 } else { 3 };
        for (label, pick) in [("mean", 0usize), ("std", 1)] {
            csv.push_str(label);
            for st in &stats[..n] {
                let v = st.map(|(m, sd)| if pick == 0 { m } else { sd });
                csv.push_str(&format!(",{}", fmt_opt(v)));
            }
            csv.push('\n');
        }
    }
    print_table(&csv);
    if let Some(out) = &a.out {
        fs::write(out, &csv).map_err(io_err(out))?;
    }
    match (bad, rows.is_empty()) {
        (0, _) => Ok(()),
        (_, true) => Err(Failure::Io("no readable sr_matrix.csv".into())),
        (n, false) => Err(Failure::Io(format!("{n} run director{} could not be read", if n == 1 { "y" } else { "ies" }))),
    }
}

fn print_table(csv: &str) {
    let cells: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    let cols = cells.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| cells.iter().filter_map(|r| r.get(c)).map(|s| s.len()).max().unwrap_or(0))
        .collect();
    for r in &cells {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        println!("{}", line.join("  "));
    }
}

fn read_curves(path: &Path) -> CliResult<Vec<CurvePoint>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Failure::Io(format!("{}: line {}: {line:?}", path.display(), n + 1));
        if f.len() != 3 {
            return Err(bad());
        }
        out.push(CurvePoint {
            segment: f[0].trim().parse().map_err(|_| bad())?,
            env_step: f[1].trim().parse().map_err(|_| bad())?,
            eval_value: f[2].trim().parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

fn write_svg(path: &Path, svg: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, svg).map_err(io_err(path))?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_plot(kind: &PlotKind) -> CliResult {
    match kind {
        PlotKind::Curves { run, out } => {
            let curves = read_curves(&run.join("curves.csv"))?;
            let cfg = fs::read_to_string(run.join("config.snapshot"))
                .ok()
                .and_then(|t| ExperimentConfig::from_toml_str(&t).ok());
            let (segments, per_cycle, title) = match &cfg {
                Some(c) => (c.segments(), c.experiment.tasks.len(), c.experiment.name.clone()),
                None => {
                    let k = curves.iter().map(|p| p.segment).max().unwrap_or(0);
                    (k, k.max(1), run.display().to_string())
                }
            };
            let svg = plot::curves_svg(&curves, segments, per_cycle, &title)?;
            write_svg(&out.clone().unwrap_or_else(|| run.join("curves.svg")), &svg)
        }
        PlotKind::Histogram {
            activations,
            gpm,
            neuron,
            bins,
            out,
        } => {
            let fa = fs::File::open(activations).map_err(io_err(activations))?;
            let fg = fs::File::open(gpm).map_err(io_err(gpm))?;
            let trace = Trace::read_csv(BufReader::new(fa), BufReader::new(fg))?;
            let id: Option<NeuronId> = neuron.parse().ok();
            let column = id.as_ref().and_then(|id| trace.column(id));
            let Some(column) = column else {
                let ids: Vec<String> = trace.neurons.iter().map(ToString::to_string).collect();
                return Err(Failure::Config(format!(
                    "neuron {neuron:?} is not in {}; available ids: {}",
                    activations.display(),
                    ids.join(", ")
                )));
            };
            let h = plot::split_histogram(&column, &trace.gpm, *bins)?;
            write_svg(out, &plot::histogram_svg(&h, &format!("{neuron} activation")))
        }
        PlotKind::Sweep { input, out } => {
            let text = fs::read_to_string(input).map_err(io_err(input))?;
            let rows = harness::read_sweep_csv(&text)?;
            let svg = plot::sweep_svg(&harness::summarize_sweep(&rows), "proportion sweep")?;
            let default = input.with_extension("svg");
            write_svg(out.as_ref().unwrap_or(&default), &svg)
        }
    }
}

fn cmd_sweep(a: &SweepArgs) -> CliResult {
    let cfg = a.cfg.resolve()?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let id = fresh_run_id(&a.out, &format!("{}-sweep", cfg.experiment.name));
    let root = a.out.join(id);
    fs::create_dir_all(&root).map_err(io_err(&root))?;
    fs::write(root.join("config.snapshot"), cfg.snapshot()).map_err(io_err(&root))?;
    let rows = harness::proportion_sweep(&cfg, &a.proportions, Some(&root))?;
    fs::write(root.join("sweep.csv"), harness::sweep_csv(&rows)).map_err(io_err(&root))?;
    let summary = harness::summarize_sweep(&rows);
    let mut csv = String::from("proportion,mean_asr,std_asr,runs\n");
    for s in &summary {
        csv.push_str(&format!("{},{:.6},{:.6},{}\n", s.proportion, s.mean_asr, s.std_asr, s.runs));
    }
    fs::write(root.join("sweep_summary.csv"), &csv).map_err(io_err(&root))?;
    let svg = plot::sweep_svg(&summary, &format!("{} proportion sweep", cfg.experiment.name))?;
    fs::write(root.join("sweep.svg"), svg).map_err(io_err(&root))?;
    print_table(&csv);
    println!("{}", root.display());
    Ok(())
}

fn cmd_identify(a: &IdentifyArgs) -> CliResult {
    let cfg = a.cfg.resolve()?;
    let task = TaskSpec::parse(&a.task)?;
    let ck = Checkpoint::load(&a.checkpoint).map_err(|e| match e {
        nbsp::Error::Io(io) => Failure::Io(format!("{}: {io}", a.checkpoint.display())),
        other => Failure::Io(format!("{}: {other}", a.checkpoint.display())),
    })?;
    let agent = SacAgent::from_checkpoint(&ck, task.obs_dim(), task.action_space(), cfg.sac.clone())?;
    let norms = harness::task_norms(std::slice::from_ref(&task))?;
    let seed = cfg.experiment.seeds.first().copied().unwrap_or(0);
    let opts = TraceOptions {
        steps: a.steps.unwrap_or(cfg.nbsp.trace_steps),
        mode: cfg.nbsp.trace_mode,
        seed: rng::derive_seed(seed, "identify", 0),
    };
    let trace = skill::collect_trace(&agent, &task, &opts, norms.get(&task.id()))?;
    let scored = skill::score_trace(&trace)?;
    let set = if cfg.experiment.method.random_selection() {
        let mut r = rng::stream(seed, "identify-select", 0);
        skill::select_random_neurons(&scored, cfg.nbsp.proportion, cfg.nbsp.ranking_scope, &task.id(), &mut r)?
    } else {
        skill::select_skill_neurons(&scored, cfg.nbsp.proportion, cfg.nbsp.ranking_scope, &task.id())?
    };
    let mask: GradientMask = build_mask(&set, cfg.nbsp.alpha_mask, &agent)?;

    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let create = |name: &str| -> CliResult<BufWriter<fs::File>> {
        let p = a.out.join(name);
        fs::File::create(&p).map(BufWriter::new).map_err(io_err(&p))
    };
    let scores: BTreeMap<NeuronId, f64> = scored.iter().copied().collect();
    mask.write_tsv(&scores, create("mask.tsv")?)?;
    let mut skill_tsv = String::from("network\tlayer\tindex\tscore\n");
    for (id, s) in &set.entries {
        skill_tsv.push_str(&format!("{}\t{}\t{}\t{s:?}\n", id.network, id.layer, id.index));
    }
    fs::write(a.out.join("skill_neurons.tsv"), skill_tsv).map_err(io_err(&a.out))?;
    trace.write_activations_csv(create("activations.csv")?)?;
    trace.write_gpm_csv(create("gpm.csv")?)?;
    let positives = trace.gpm.iter().filter(|g| **g > 0.0).count();
    println!(
        "{}: {} steps ({positives} with positive GPM), {} of {} neurons selected",
        task.id(),
        trace.len(),
        set.len(),
        scored.len()
    );
    println!("{}", a.out.display());
    Ok(())
}
