//! `logstamp train | parse | eval | inspect`.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::corpus::{self, CsvColumns, Dataset};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::eval::{self, Report};
use crate::labeler::{self, LabelStatistics};
use crate::parser::{self, TemplateStore};
use crate::pipeline;
use crate::synth;
use crate::tagger::{Architecture, TaggerModel};

const MODULE: &str = "cli";

#[derive(Debug, Parser)]
#[command(name = "logstamp", version, about = "Online log parsing by word tagging")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the offline workflow and save the encoder and tagger.
    Train(TrainArgs),
    /// Parse raw log lines with trained models.
    Parse(ParseArgs),
    /// Run an experiment against ground truth and write report JSON.
    Eval(EvalArgs),
    /// List a template store by count.
    Inspect(InspectArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Sectioned key/value (TOML) config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub min_pts: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// recurrent_bidir, recurrent_unidir or convolutional
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct DatasetArgs {
    #[arg(long, default_value = "Content")]
    pub content_column: String,
    #[arg(long, default_value = "EventId")]
    pub truth_column: String,
    /// How to read --dataset; `auto` picks csv for *.csv and text otherwise.
    #[arg(long, value_enum, default_value_t = InputFormat::Auto)]
    pub format: InputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Auto,
    Csv,
    Text,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Loghub structured CSV, a plain log file, `-` for stdin, or
    /// `synthetic:<two|one|service>[:n]`.
    #[arg(long)]
    pub dataset: String,
    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DatasetArgs,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    /// Newline-delimited log lines, or `-` for stdin.
    #[arg(long, default_value = "-")]
    pub input: String,
    /// JSONL destination, or `-` for stdout.
    #[arg(long, default_value = "-")]
    pub output: String,
    /// Encoder model (defaults to <out-dir>/encoder.bin).
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Tagger model (defaults to <out-dir>/tagger.bin).
    #[arg(long)]
    pub tagger: Option<PathBuf>,
    /// Template store CSV export (defaults to <out-dir>/templates.csv).
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Offline,
    Online,
    Sweep,
    Ablation,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labelled dataset(s); repeat the flag to evaluate several.
    #[arg(long, required = true)]
    pub dataset: Vec<String>,
    #[arg(long, value_enum, default_value_t = EvalMode::Online)]
    pub mode: EvalMode,
    #[arg(long, default_value_t = 0.1)]
    pub fraction: f64,
    /// Also search eps ∈ {0.02,0.05,0.1,0.2} × tau ∈ {0.8,0.9,1.0} and
    /// report the best combination (offline and online modes).
    #[arg(long)]
    pub grid: bool,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DatasetArgs,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Template store CSV written by `parse`.
    #[arg(long)]
    pub store: PathBuf,
}

/// Entry point used by the binary; returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli, &mut io::stdout().lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("logstamp: {e}");
            e.exit_code()
        }
    }
}

/// Executes a parsed command; human-readable output goes to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a, out),
        Command::Parse(a) => cmd_parse(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Inspect(a) => cmd_inspect(&a.store, out),
    }
}

fn resolve_config(common: &CommonArgs) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let seed = common.seed.unwrap_or(cfg.seed);
    cfg = cfg.with_seed(seed);
    if let Some(e) = common.eps {
        cfg.dbscan.eps = e;
    }
    if let Some(m) = common.min_pts {
        cfg.dbscan.min_pts = m;
    }
    if let Some(t) = common.tau {
        cfg.labeler.tau = t;
    }
    if let Some(a) = &common.arch {
        cfg.tagger.architecture = a.parse::<Architecture>()?;
    }
    if let Some(d) = &common.out_dir {
        cfg.paths.out_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(Error::parameter(MODULE, format!("--fraction must be in (0, 1], got {fraction}")))
    }
}

/// Loads a dataset named on the command line.
pub fn load_dataset(source: &str, cfg: &PipelineConfig, data: &DatasetArgs) -> Result<Dataset> {
    if let Some(rest) = source.strip_prefix("synthetic:") {
        let mut parts = rest.split(':');
        let kind = parts.next().unwrap_or("two");
        let n: usize = match parts.next() {
            Some(s) => s.parse().map_err(|_| Error::parameter(MODULE, format!("bad synthetic size `{s}`")))?,
            None => 2000,
        };
        return match kind {
            "two" => Ok(synth::two_template_dataset(n, cfg.seed)),
            "one" => Ok(synth::one_template_dataset(n, cfg.seed)),
            "service" => Ok(synth::service_dataset(n, cfg.seed)),
            other => Err(Error::parameter(MODULE, format!("unknown synthetic corpus `{other}`"))),
        };
    }
    let columns = CsvColumns { content: data.content_column.clone(), truth: data.truth_column.clone() };
    let is_csv = match data.format {
        InputFormat::Csv => true,
        InputFormat::Text => false,
        InputFormat::Auto => source.ends_with(".csv"),
    };
    if source == "-" {
        let stdin = io::stdin().lock();
        return if is_csv {
            corpus::load_loghub_reader(stdin, "stdin", &cfg.tokenizer, &columns)
        } else {
            corpus::load_text_lines(stdin, "stdin", &cfg.tokenizer)
        };
    }
    let path = Path::new(source);
    if is_csv {
        corpus::load_loghub_csv_with(path, &cfg.tokenizer, &columns)
    } else {
        let file = File::open(path)
            .map_err(|e| Error::input(MODULE, format!("cannot open {}: {e}", path.display())))?;
        corpus::load_text_lines(BufReader::new(file), &corpus::dataset_name(path), &cfg.tokenizer)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(MODULE, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::io(MODULE, e.into()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(MODULE, e))
}

fn io_err(e: io::Error) -> Error {
    Error::io(MODULE, e)
}

#[derive(Debug, Serialize)]
struct TrainReport<'a> {
    dataset: &'a str,
    fraction: f64,
    seed: u64,
    config: &'a PipelineConfig,
    train_records: usize,
    clusters: usize,
    label_statistics: &'a LabelStatistics,
    encoder_initial_loss: f64,
    encoder_final_loss: f64,
    tagger_initial_loss: f64,
    tagger_final_loss: f64,
    tagger_train_accuracy: f64,
}

fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    check_fraction(args.fraction)?;
    let cfg = resolve_config(&args.common)?;
    let dataset = load_dataset(&args.dataset, &cfg, &args.data)?;
    let (train, _) = corpus::split_train(&dataset, args.fraction, cfg.seed)?;
    let artifacts = pipeline::train_offline(&train, &cfg)?;

    let dir = &cfg.paths.out_dir;
    create_dir(dir)?;
    artifacts.encoder.save(&cfg.paths.encoder_path())?;
    artifacts.tagger.save(&cfg.paths.tagger_path())?;
    let labeled_file = File::create(cfg.paths.labeled_path()).map_err(io_err)?;
    labeler::write_jsonl(BufWriter::new(labeled_file), &artifacts.labeled)?;

    let stats = &artifacts.stats;
    let report = TrainReport {
        dataset: &dataset.name,
        fraction: args.fraction,
        seed: cfg.seed,
        config: &cfg,
        train_records: train.len(),
        clusters: artifacts.assignment.num_clusters,
        label_statistics: stats,
        encoder_initial_loss: artifacts.encoder.training_meta.initial_loss,
        encoder_final_loss: artifacts.encoder.training_meta.final_loss,
        tagger_initial_loss: artifacts.tagger.training_meta.initial_loss,
        tagger_final_loss: artifacts.tagger.training_meta.final_loss,
        tagger_train_accuracy: artifacts.tagger.training_meta.train_accuracy,
    };
    write_json(&dir.join("train_report.json"), &report)?;

    writeln!(out, "dataset {} ({} records, {} used for training, seed {})", dataset.name, dataset.len(), train.len(), cfg.seed)
        .map_err(io_err)?;
    writeln!(
        out,
        "clusters {}  noise {:.1}%  template tokens {}  variable tokens {} ({:.1}%)",
        artifacts.assignment.num_clusters,
        100.0 * stats.noise_fraction,
        stats.template_tokens,
        stats.variable_tokens,
        100.0 * stats.variable_fraction
    )
    .map_err(io_err)?;
    writeln!(out, "{:>8} {:>8} {:>10} {:>10}", "cluster", "records", "template", "variable").map_err(io_err)?;
    for (c, counts) in &stats.per_cluster {
        writeln!(out, "{:>8} {:>8} {:>10} {:>10}", c, counts.records, counts.template_tokens, counts.variable_tokens)
            .map_err(io_err)?;
    }
    writeln!(
        out,
        "tagger accuracy on pseudo-labels {:.4}; models written to {}",
        artifacts.tagger.training_meta.train_accuracy,
        dir.display()
    )
    .map_err(io_err)?;
    Ok(())
}

fn cmd_parse(args: &ParseArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(&args.common)?;
    let encoder = EncoderModel::load(&args.encoder.clone().unwrap_or_else(|| cfg.paths.encoder_path()))?;
    let tagger = TaggerModel::load(&args.tagger.clone().unwrap_or_else(|| cfg.paths.tagger_path()))?;
    let store_path = args.store.clone().unwrap_or_else(|| cfg.paths.store_path());

    let input: Box<dyn BufRead> = if args.input == "-" {
        Box::new(BufReader::new(io::stdin()))
    } else {
        let f = File::open(&args.input)
            .map_err(|e| Error::input(MODULE, format!("cannot open {}: {e}", args.input)))?;
        Box::new(BufReader::new(f))
    };
    let mut sink: Box<dyn Write> = if args.output == "-" {
        Box::new(BufWriter::new(io::stdout()))
    } else {
        Box::new(BufWriter::new(File::create(&args.output).map_err(io_err)?))
    };

    let started = Instant::now();
    let mut store = TemplateStore::new();
    let mut read_error = None;
    let lines = input.split(b'\n').map_while(|r| match r {
        Ok(l) => Some(l),
        Err(e) => {
            read_error = Some(e);
            None
        }
    });
    let mut stream = parser::parse_stream(&encoder, &tagger, &mut store, &cfg.tokenizer, lines);
    for result in stream.by_ref() {
        parser::write_result(&mut sink, &result?)?;
    }
    let stats = stream.stats();
    drop(stream);
    if let Some(e) = read_error {
        return Err(io_err(e));
    }
    sink.flush().map_err(io_err)?;

    if let Some(parent) = store_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    store.write_csv(BufWriter::new(File::create(&store_path).map_err(io_err)?))?;

    let secs = started.elapsed().as_secs_f64();
    let msg = format!(
        "parsed {} lines ({} empty, {} undecodable skipped) into {} templates in {:.2}s ({:.0} lines/s); store at {}",
        stats.parsed,
        stats.skipped_empty,
        stats.skipped_undecodable,
        store.len(),
        secs,
        stats.parsed as f64 / secs.max(1e-9),
        store_path.display()
    );
    // keep stdout clean for JSONL
    if args.output == "-" {
        eprintln!("{msg}");
    } else {
        writeln!(out, "{msg}").map_err(io_err)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct OnlineSummary {
    fraction: f64,
    seed: u64,
    datasets: Vec<(String, f64)>,
    average_rand_index: f64,
}

#[derive(Debug, Serialize)]
struct GridReport<'a> {
    best: &'a Report,
    all: &'a [Report],
}

fn print_table(out: &mut dyn Write, reports: &[Report]) -> Result<()> {
    writeln!(
        out,
        "{:<14} {:<9} {:>8} {:<17} {:>6} {:>5} {:>10} {:>9} {:>8}",
        "dataset", "mode", "fraction", "tagger", "eps", "tau", "rand_index", "templates", "truth"
    )
    .map_err(io_err)?;
    for r in reports {
        writeln!(
            out,
            "{:<14} {:<9} {:>8.2} {:<17} {:>6} {:>5} {:>10.4} {:>9} {:>8}",
            r.dataset,
            format!("{:?}", r.mode).to_lowercase(),
            r.fraction,
            r.config.tagger.architecture.as_str(),
            r.config.dbscan.eps,
            r.config.labeler.tau,
            r.rand_index,
            r.num_templates_predicted,
            r.num_templates_truth
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    check_fraction(args.fraction)?;
    let cfg = resolve_config(&args.common)?;
    let dir = &cfg.paths.out_dir;
    create_dir(dir)?;

    let mut headline = Vec::new();
    for source in &args.dataset {
        let dataset = load_dataset(source, &cfg, &args.data)?;
        if !dataset.labeled {
            return Err(Error::input(MODULE, format!("{source} has no ground-truth column; eval needs labels")));
        }
        let fraction = if args.mode == EvalMode::Offline { 1.0 } else { args.fraction };
        let name = dataset.name.clone();
        let reports = match (args.mode, args.grid) {
            (EvalMode::Offline | EvalMode::Online, true) => {
                let all = eval::run_grid(&dataset, fraction, &cfg, &eval::GRID_EPS, &eval::GRID_TAU)?;
                let best = eval::best_report(&all)
                    .ok_or_else(|| Error::input(MODULE, format!("{name}: every grid point clustered all records as noise")))?
                    .clone();
                write_json(&dir.join(format!("{name}_{:?}_grid.json", args.mode).to_lowercase()), &GridReport { best: &best, all: &all })?;
                print_table(out, &all)?;
                vec![best]
            }
            (EvalMode::Offline, false) => vec![eval::run_offline_experiment(&dataset, &cfg)?],
            (EvalMode::Online, false) => vec![eval::run_online_experiment(&dataset, fraction, &cfg)?],
            (EvalMode::Sweep, _) => eval::run_fraction_sweep(&dataset, &eval::SWEEP_FRACTIONS, &cfg)?,
            (EvalMode::Ablation, _) => eval::run_tagger_ablation(&dataset, fraction, &cfg)?,
        };
        let file = dir.join(format!("{name}_{:?}.json", args.mode).to_lowercase());
        match args.mode {
            EvalMode::Sweep | EvalMode::Ablation => write_json(&file, &reports)?,
            _ => write_json(&file, &reports[0])?,
        }
        if !args.grid || matches!(args.mode, EvalMode::Sweep | EvalMode::Ablation) {
            print_table(out, &reports)?;
        }
        if let EvalMode::Sweep = args.mode {
            let ris: Vec<f64> = reports.iter().map(|r| r.rand_index).collect();
            let spread = ris.iter().cloned().fold(f64::MIN, f64::max) - ris.iter().cloned().fold(f64::MAX, f64::min);
            writeln!(out, "{name}: rand index spread across fractions {spread:.4}").map_err(io_err)?;
        }
        headline.push((name, reports[0].rand_index));
    }

    if headline.len() > 1 && matches!(args.mode, EvalMode::Online | EvalMode::Offline) {
        let average = headline.iter().map(|(_, r)| r).sum::<f64>() / headline.len() as f64;
        let summary = OnlineSummary { fraction: args.fraction, seed: cfg.seed, datasets: headline, average_rand_index: average };
        write_json(&dir.join(format!("summary_{:?}.json", args.mode).to_lowercase()), &summary)?;
        writeln!(out, "average rand index over {} datasets: {average:.4}", summary.datasets.len()).map_err(io_err)?;
    }
    Ok(())
}

/// Prints `template_id, count, rendered` sorted by descending count.
pub fn cmd_inspect(store_path: &Path, out: &mut dyn Write) -> Result<()> {
    let file = File::open(store_path)
        .map_err(|e| Error::input(MODULE, format!("cannot open {}: {e}", store_path.display())))?;
    let store = TemplateStore::read_csv(BufReader::new(file))?;
    let mut rows: Vec<_> = store.templates().iter().collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then(a.template_id.cmp(&b.template_id)));
    writeln!(out, "{:>11} {:>8}  template", "template_id", "count").map_err(io_err)?;
    for t in rows {
        writeln!(out, "{:>11} {:>8}  {}", t.template_id, t.count, t.rendered).map_err(io_err)?;
    }
    Ok(())
}
