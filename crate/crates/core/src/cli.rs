//! Command-line surface: each subcommand is one pipeline stage.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::babi::{generate::write_corpus, synth_kv, KvSynthConfig};
use crate::cost::{cost_table_csv, CostRow};
use crate::error::{Error, Result};
use crate::eval::{bench, evaluate, BenchConfig, Scenario};
use crate::gate::{generate_labels, Difficulty, GateConfig, GateMode};
use crate::model::{load_checkpoint, save_checkpoint, AppMode, Model, Variant};
use crate::pipeline::{self, Dataset, LabelCounts};
use crate::prune::PruneParams;
use crate::report::{read_json, write_atomic, write_json, RunReport};
use crate::train::{calibrate_thresholds, to_jsonl, EpochLog, GateEvidence, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "hopgate", version, about = "Memory-network QA with adaptive hop gating and FLOP accounting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the baseline network.
    Train(TrainArgs),
    /// Train the early answer layer on frozen first-hop states.
    Fce(StageArgs),
    /// Write Easy/Hard labels for a split.
    Label(LabelArgs),
    /// Train the inference classification network.
    Icn(IcnArgs),
    /// Choose gate thresholds on the validation split.
    Calibrate(CalibrateArgs),
    /// Prune answer-layer rows.
    Prune(PruneArgs),
    /// Evaluate a gating scenario and write JSON and CSV reports.
    Eval(EvalArgs),
    /// Time baseline against adaptive inference.
    Bench(BenchArgs),
    /// Collect run reports into one cost table.
    Report(ReportArgs),
    /// Write a synthetic bAbI-format corpus.
    GenerateData(GenerateArgs),
    /// Write a synthetic key-value memory dataset.
    SynthKv(SynthKvArgs),
}

/// Comma-separated task ids; an alias keeps clap from treating it as a repeated flag.
type TaskIds = Vec<u32>;

fn parse_tasks(s: &str) -> std::result::Result<TaskIds, String> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<u32>().map_err(|e| format!("bad task id {t:?}: {e}")))
        .collect()
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory of bAbI task files, or a key-value dataset JSON file.
    #[arg(long)]
    pub data: PathBuf,
    /// Task ids, comma separated.
    #[arg(long, value_parser = parse_tasks, default_value = "1,6,20")]
    pub tasks: TaskIds,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Conventional,
    KeyValue,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Conventional => Variant::Conventional,
            VariantArg::KeyValue => Variant::KeyValue,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Pre,
    Interactive,
}

impl From<ModeArg> for AppMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Pre => AppMode::PreEmbedded,
            ModeArg::Interactive => AppMode::Interactive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RouteArg {
    Easy,
    Hard,
}

impl From<RouteArg> for Difficulty {
    fn from(r: RouteArg) -> Self {
        match r {
            RouteArg::Easy => Difficulty::Easy,
            RouteArg::Hard => Difficulty::Hard,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    Nc,
    Global,
    Pertask,
    /// Published reference thresholds (not calibrated on these weights).
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

impl SplitArg {
    fn name(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Valid => "valid",
            SplitArg::Test => "test",
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Training configuration JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Must match the data when given.
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long)]
    pub hops: Option<usize>,
    /// Embedding width (40 for bAbI, 500 for key-value by default).
    #[arg(long)]
    pub d: Option<usize>,
    /// Memory slots per story.
    #[arg(long, default_value_t = 50)]
    pub n_s: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// JSON-lines training log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StageArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output checkpoint (defaults to overwriting the input).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct IcnArgs {
    #[command(flatten)]
    pub stage: StageArgs,
    /// Hidden units.
    #[arg(long, default_value_t = 32)]
    pub l1: usize,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output gate configuration JSON.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "global")]
    pub scenario: ScenarioArg,
    /// Allowed accuracy loss as a fraction.
    #[arg(long, default_value_t = 0.01)]
    pub budget: f64,
    /// Calibrate with the pruned answer layers.
    #[arg(long)]
    pub pruned: bool,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Magnitude threshold of the unimportant-row rule.
    #[arg(long)]
    pub theta_p: Option<f64>,
    /// Minimum small entries for a row to be unimportant.
    #[arg(long)]
    pub n_p: Option<usize>,
    /// Remove only rows outside the training labels.
    #[arg(long)]
    pub unused_only: bool,
    /// Apply the magnitude rule to training-label rows too.
    #[arg(long)]
    pub no_exempt: bool,
    /// Summary JSON.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Gate configuration JSON (from `calibrate`); overrides the scenario preset.
    #[arg(long)]
    pub gate: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "global")]
    pub scenario: ScenarioArg,
    /// Zero-skip threshold; omitted disables skipping.
    #[arg(long, alias = "zero-skip")]
    pub theta_zs: Option<f64>,
    #[arg(long, value_enum, default_value = "pre")]
    pub mode: ModeArg,
    #[arg(long, value_enum)]
    pub force_route: Option<RouteArg>,
    /// Answer with the pruned layers.
    #[arg(long)]
    pub pruned: bool,
    /// Interactive mode: later hops embed only the slots kept by hop 1.
    #[arg(long)]
    pub avoid_reembedding: bool,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Output prefix; `.json` and `.csv` are appended.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 11)]
    pub repeat: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long)]
    pub inflate_ns: Option<usize>,
    /// Number of queries timed.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run report JSON files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_tasks, default_value = "1,6,20")]
    pub tasks: TaskIds,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Questions per file.
    #[arg(long, default_value_t = 1000)]
    pub questions: usize,
}

#[derive(Debug, Args)]
pub struct SynthKvArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 4)]
    pub n_w: usize,
    #[arg(long, default_value_t = 500)]
    pub vocab: usize,
    #[arg(long, default_value_t = 1)]
    pub queries_per_pair: usize,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    run(cli.command)?;
    Ok(())
}

fn write_logs(path: Option<&Path>, logs: &[EpochLog]) -> Result<()> {
    let Some(path) = path else { return Ok(()) };
    write_atomic(path, to_jsonl(logs).as_bytes())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn load_data_for(model: &Model, d: &DataArgs) -> Result<Dataset> {
    Dataset::load_for(model, &d.data, &d.tasks, d.seed)
}

fn stage_out(s: &StageArgs) -> &Path {
    s.out.as_deref().unwrap_or(&s.checkpoint)
}

fn scenario_gate(arg: ScenarioArg) -> GateConfig {
    match arg {
        ScenarioArg::Nc => GateConfig::nc(),
        ScenarioArg::Global => GateConfig::global(0.6),
        ScenarioArg::Pertask | ScenarioArg::Reference => GateConfig::babi_reference(),
    }
}

fn scenario_name(arg: ScenarioArg) -> &'static str {
    match arg {
        ScenarioArg::Nc => "nc",
        ScenarioArg::Global => "global",
        ScenarioArg::Pertask => "pertask",
        ScenarioArg::Reference => "reference",
    }
}

fn build_scenario(r: &RunArgs) -> Result<Scenario> {
    let gate = match &r.gate {
        Some(p) => read_json::<GateConfig>(p)?,
        None => scenario_gate(r.scenario),
    };
    gate.validate()?;
    Ok(Scenario {
        mode: r.mode.into(),
        zero_skip: r.theta_zs,
        avoid_reembedding: r.avoid_reembedding,
        use_pruned: r.pruned,
        force_route: r.force_route.map(Into::into),
        ..Scenario::new(scenario_name(r.scenario), gate)
    })
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Fce(a) => cmd_fce(&a),
        Command::Label(a) => cmd_label(&a),
        Command::Icn(a) => cmd_icn(&a),
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Prune(a) => cmd_prune(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Report(a) => cmd_report(&a),
        Command::GenerateData(a) => {
            write_corpus(&a.out, &a.tasks, a.seed, a.questions)?;
            eprintln!("wrote tasks {:?} to {}", a.tasks, a.out.display());
            Ok(())
        }
        Command::SynthKv(a) => {
            let cfg = KvSynthConfig {
                queries_per_pair: a.queries_per_pair,
                ..KvSynthConfig::new(a.seed, a.pairs, a.n_w, a.vocab)
            };
            write_json(&a.out, &synth_kv(&cfg)?)
        }
    }
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let data = Dataset::load(&a.data.data, &a.data.tasks, a.n_s, a.data.seed)?;
    if let Some(v) = a.variant {
        if Variant::from(v) != data.variant {
            return Err(Error::Config(format!("--variant {v:?} does not match the data ({:?})", data.variant)));
        }
    }
    let mut cfg = match &a.config {
        Some(p) => read_json::<TrainConfig>(p)?,
        None => TrainConfig::baseline(),
    };
    cfg.seed = a.data.seed;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let (d, hops) = match data.variant {
        Variant::Conventional => (40, 3),
        Variant::KeyValue => (500, 2),
    };
    let (d, hops) = (a.d.unwrap_or(d), a.hops.unwrap_or(hops));
    let (model, logs) = pipeline::train_model(&data, data.hyper(d, hops), &cfg)?;
    write_logs(a.log.as_deref(), &logs)?;
    save_checkpoint(&model, &a.out)?;
    print_json(&logs.iter().rev().take(2).collect::<Vec<_>>())
}

fn cmd_fce(a: &StageArgs) -> Result<()> {
    let mut model = load_checkpoint(&a.checkpoint)?;
    let data = load_data_for(&model, &a.data)?;
    let mut cfg = TrainConfig {
        seed: a.data.seed,
        ..TrainConfig::fc_e()
    };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let logs = pipeline::fit_fc_e(&mut model, &data, &cfg)?;
    write_logs(a.log.as_deref(), &logs)?;
    save_checkpoint(&model, stage_out(a))?;
    print_json(&logs.last())
}

#[derive(Serialize)]
struct LabelFile {
    split: String,
    counts: LabelCounts,
    labels: Vec<Difficulty>,
}

fn cmd_label(a: &LabelArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let data = load_data_for(&model, &a.data)?;
    let labels = generate_labels(&model, data.split(a.split.name())?)?;
    let file = LabelFile {
        split: a.split.name().into(),
        counts: LabelCounts::of(&labels),
        labels,
    };
    write_json(&a.out, &file)?;
    print_json(&file.counts)
}

fn cmd_icn(a: &IcnArgs) -> Result<()> {
    let s = &a.stage;
    let mut model = load_checkpoint(&s.checkpoint)?;
    let data = load_data_for(&model, &s.data)?;
    let base = match model.hyper.variant {
        Variant::Conventional => TrainConfig::icn(),
        Variant::KeyValue => TrainConfig::icn_key_value(),
    };
    let mut cfg = TrainConfig { seed: s.data.seed, ..base };
    if let Some(e) = s.epochs {
        cfg.epochs = e;
    }
    let summary = pipeline::fit_icn(&mut model, &data, a.l1, &cfg)?;
    write_logs(s.log.as_deref(), &summary.logs)?;
    save_checkpoint(&model, stage_out(s))?;
    if summary.single_class {
        eprintln!("warning: training labels contain a single class");
    }
    print_json(&serde_json::json!({
        "class_weights": summary.class_weights,
        "train_labels": summary.train_labels,
        "valid_labels": summary.valid_labels,
        "train_accuracy": summary.train_accuracy,
        "valid_accuracy": summary.valid_accuracy,
    }))
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let data = load_data_for(&model, &a.data)?;
    let mode = match a.scenario {
        ScenarioArg::Nc => GateMode::Nc,
        ScenarioArg::Global => GateMode::Global,
        ScenarioArg::Pertask => GateMode::PerTask,
        ScenarioArg::Reference => {
            write_json(&a.out, &GateConfig::babi_reference())?;
            return print_json(&GateConfig::babi_reference());
        }
    };
    let evidence = GateEvidence::gather(&model, &data.valid, a.pruned)?;
    let result = calibrate_thresholds(&evidence, mode, a.budget)?;
    if !result.flagged_tasks.is_empty() {
        eprintln!("warning: no threshold met the budget for tasks {:?}", result.flagged_tasks);
    }
    write_json(&a.out, &result.config)?;
    print_json(&result)
}

fn cmd_prune(a: &PruneArgs) -> Result<()> {
    let mut model = load_checkpoint(&a.checkpoint)?;
    let data = load_data_for(&model, &a.data)?;
    let params = if a.unused_only {
        None
    } else {
        let preset = match model.hyper.variant {
            Variant::Conventional => PruneParams::babi(),
            Variant::KeyValue => PruneParams::key_value(),
        };
        Some(PruneParams {
            theta_p: a.theta_p.unwrap_or(preset.theta_p),
            n_p: a.n_p.unwrap_or(preset.n_p),
        })
    };
    let summary = pipeline::prune_model(&mut model, &data.training_labels(), params.as_ref(), !a.no_exempt)?;
    save_checkpoint(&model, a.out.as_deref().unwrap_or(&a.checkpoint))?;
    if let Some(p) = &a.summary {
        write_json(p, &summary)?;
    }
    print_json(&summary)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let model = load_checkpoint(&a.run.checkpoint)?;
    let data = load_data_for(&model, &a.run.data)?;
    let scenario = build_scenario(&a.run)?;
    let report = evaluate(&model, data.split(a.run.split.name())?, &scenario)?;
    report.write(&a.out)?;
    print!("{}", report.to_csv()?);
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let model = load_checkpoint(&a.run.checkpoint)?;
    let data = load_data_for(&model, &a.run.data)?;
    let scenario = build_scenario(&a.run)?;
    let cfg = BenchConfig {
        repeat: a.repeat,
        warmup: a.warmup,
        inflate_ns: a.inflate_ns,
        limit: a.limit,
    };
    let result = bench(&model, data.split(a.run.split.name())?, &scenario, &cfg)?;
    if let Some(p) = &a.out {
        write_json(p, &result)?;
    }
    print_json(&result)
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for p in &a.inputs {
        let r: RunReport = read_json(p)?;
        for t in r.rows() {
            rows.push(CostRow {
                task: t.task,
                mode: r.mode,
                scenario: r.scenario.clone(),
                cc_baseline: t.flops_baseline_mean,
                cc_adaptive_measured: t.flops_adaptive_mean,
                cr_analytic: t.cr_analytic,
                gap_rel: t.gap_rel,
            });
        }
    }
    let csv = cost_table_csv(&rows)?;
    write_atomic(&a.out, csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}
