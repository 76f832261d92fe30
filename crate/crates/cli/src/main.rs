//! `utilreg`: data generation, analysis, training, decoding, evaluation and
//! experiment grids.
//!
//! Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use utilreg::config::Config;
use utilreg::corpus::Corpus;
use utilreg::decode::{DecodeConfig, DecodeMode};
use utilreg::eval::{mean_std, MetricsReport};
use utilreg::experiment::{
    decode_corpus, decode_csv, evaluate, outputs_text, train_run, Dataset, DecodeRecord, RunConfig,
};
use utilreg::losses::UtilLossMode;
use utilreg::model::ParamSet;
use utilreg::ontology::{EquivalenceMap, Ontology};
use utilreg::plot::{Chart, Series};
use utilreg::recognizer::{Recognizer, StopWordSet};
use utilreg::synthgen::{generate, GeneratorSpec};
use utilreg::trainer::log_csv;
use utilreg::utilization::{estimate, identify_high_utilization, HighUtilSet};
use utilreg::Error;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "utilreg", version, about = "Utilization-rate analysis and utilization-aware seq2seq experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted utilization rates.
    GenData(GenDataArgs),
    /// Estimate utilization rates and the high-utilization set.
    Analyze(AnalyzeArgs),
    /// Recognize concept mentions in whitespace-tokenized lines from stdin.
    Recognize(RecognizeArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Decode a corpus with a checkpoint.
    Decode(DecodeArgs),
    /// Compute metrics for decoded outputs.
    Eval(EvalArgs),
    /// Render plots from evaluation directories.
    Report(ReportArgs),
    /// Run the alpha x loss-mode x seed matrix and aggregate.
    Grid(GridArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Generator spec (`gen.*` keys); defaults apply to missing keys.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_pairs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    ontology: PathBuf,
    #[arg(long)]
    stops: Option<PathBuf>,
    /// identity, semantic, or custom:<path>
    #[arg(long, default_value = "semantic")]
    phi: String,
    /// Lift threshold for the high-utilization set.
    #[arg(long, default_value_t = 10.0)]
    lift: f64,
    /// Treat every selected concept as high-utilization instead of applying the lift rule.
    #[arg(long)]
    all_selected: bool,
    /// Output directory; the table goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RecognizeArgs {
    #[arg(long)]
    ontology: PathBuf,
    #[arg(long)]
    stops: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct TrainFlags {
    /// Flat key=value config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// none, unweighted, concept, or semantic
    #[arg(long)]
    util_loss: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory with ontology.jsonl and {train,valid,test}.jsonl.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
    /// Start from this checkpoint (optimizer moments start from zero).
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DecodeFlags {
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Corpus to decode; its directory must hold ontology.jsonl and train.jsonl.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: DecodeFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Directory written by `decode`.
    #[arg(long)]
    decoded: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation directories, optionally as label=dir.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "unweighted,concept,semantic")]
    modes: Vec<String>,
    #[arg(long)]
    max_steps: Option<u64>,
}

/// A failure with its exit code and the stage it came from.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn stage(stage: &str, e: Error) -> Self {
        let code = if e.is_numeric() {
            4
        } else if matches!(e, Error::Config(_)) {
            2
        } else {
            3
        };
        Failure {
            code,
            message: format!("{stage}: {e}"),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

trait Stage<T> {
    fn stage(self, name: &str) -> CliResult<T>;
}

impl<T> Stage<T> for utilreg::Result<T> {
    fn stage(self, name: &str) -> CliResult<T> {
        self.map_err(|e| Failure::stage(name, e))
    }
}

fn require(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{what} not found: {}", path.display())))
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Failure {
            code: 3,
            message: format!("{}: {e}", parent.display()),
        })?;
    }
    std::fs::write(path, contents).map_err(|e| Failure {
        code: 3,
        message: format!("{}: {e}", path.display()),
    })
}

fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure {
        code: 3,
        message: format!("{}: {e}", path.display()),
    })
}

fn load_config(path: Option<&Path>) -> CliResult<Config> {
    match path {
        None => Ok(Config::new()),
        Some(p) => {
            require(p, "config")?;
            Config::load(p).stage("config")
        }
    }
}

/// Writes the effective config plus the tool version into a run directory.
fn echo_config(dir: &Path, config: &Config) -> CliResult<()> {
    let mut c = config.clone();
    c.set("tool.version", VERSION);
    write_file(&dir.join("config.cfg"), c.render())
}

fn parse_flag<T: std::str::FromStr<Err = Error>>(value: &str) -> CliResult<T> {
    value.parse().map_err(|e: Error| Failure::usage(e.to_string()))
}

fn gen_data(args: &GenDataArgs) -> CliResult<()> {
    let mut spec = match &args.spec {
        Some(p) => {
            require(p, "spec")?;
            GeneratorSpec::from_config(&Config::load(p).stage("gen-data")?).stage("gen-data")?
        }
        None => GeneratorSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(n) = args.n_pairs {
        spec.n_pairs = n;
    }
    spec.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let generated = generate(&spec).stage("gen-data")?;
    generated.write(&args.out).stage("gen-data")?;
    echo_config(&args.out, &spec.to_config())
}

fn analyze(args: &AnalyzeArgs) -> CliResult<()> {
    require(&args.corpus, "corpus")?;
    require(&args.ontology, "ontology")?;
    let ontology = Ontology::load(&args.ontology).stage("analyze")?;
    let stops = load_stops(args.stops.as_deref())?;
    let map = EquivalenceMap::from_arg(&args.phi, &ontology).map_err(|e| Failure::usage(e.to_string()))?;
    let mut corpus = Corpus::load(&args.corpus).stage("analyze")?;
    corpus.annotate(&Recognizer::new(&ontology, &stops));
    let table = estimate(&corpus.pairs, &ontology, &map).stage("analyze")?;
    let identity = estimate(&corpus.pairs, &ontology, &EquivalenceMap::Identity).stage("analyze")?;
    let high = if args.all_selected {
        HighUtilSet::all_selected(&ontology)
    } else {
        identify_high_utilization(&identity, args.lift).map_err(|e| Failure::usage(e.to_string()))?
    };
    match &args.out {
        None => {
            print!("{}", table.to_csv());
            Ok(())
        }
        Some(out) => {
            write_file(&out.join("utilization.csv"), table.to_csv())?;
            let mut listing = String::new();
            for c in &high.concepts {
                listing.push_str(c);
                listing.push('\n');
            }
            write_file(&out.join("high_utilization.txt"), listing)?;
            let mut c = Config::new();
            c.set("analyze.corpus", args.corpus.display());
            c.set("analyze.ontology", args.ontology.display());
            c.set("analyze.phi", &args.phi);
            if args.all_selected {
                c.set("analyze.high_util", "all");
            } else {
                c.set("analyze.high_util", args.lift);
            }
            echo_config(out, &c)
        }
    }
}

fn load_stops(path: Option<&Path>) -> CliResult<StopWordSet> {
    match path {
        None => Ok(StopWordSet::default()),
        Some(p) => {
            require(p, "stop-word list")?;
            StopWordSet::load(p).stage("stop words")
        }
    }
}

fn recognize(args: &RecognizeArgs) -> CliResult<()> {
    require(&args.ontology, "ontology")?;
    let ontology = Ontology::load(&args.ontology).stage("recognize")?;
    let stops = load_stops(args.stops.as_deref())?;
    let recognizer = Recognizer::new(&ontology, &stops);
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let io_err = |e: io::Error| Failure {
        code: 3,
        message: format!("recognize: {e}"),
    };
    writeln!(out, "index,concept_id,start,end").map_err(io_err)?;
    for (i, line) in io::stdin().lock().lines().enumerate() {
        let line = line.map_err(io_err)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        for m in recognizer.recognize(&tokens) {
            writeln!(out, "{i},{},{},{}", m.concept_id, m.start, m.end).map_err(io_err)?;
        }
    }
    Ok(())
}

fn run_config(base: &Config, flags: &TrainFlags) -> CliResult<RunConfig> {
    let mut c = base.merged(&load_config(flags.config.as_deref())?);
    if let Some(m) = &flags.util_loss {
        let mode: UtilLossMode = parse_flag(m)?;
        c.set("util.mode", mode);
    }
    if let Some(a) = flags.alpha {
        c.set("util.alpha", a);
    }
    if let Some(s) = flags.seed {
        c.set("train.seed", s);
    }
    if let Some(s) = flags.max_steps {
        c.set("train.max_steps", s);
    }
    let run = RunConfig::from_config(&c).map_err(|e| Failure::usage(e.to_string()))?;
    if !(run.alpha >= 0.0) {
        return Err(Failure::usage("alpha must be >= 0"));
    }
    Ok(run)
}

fn load_data(dir: &Path) -> CliResult<Dataset> {
    require(dir, "data directory")?;
    for f in ["ontology.jsonl", "train.jsonl", "valid.jsonl", "test.jsonl"] {
        require(&dir.join(f), f)?;
    }
    Dataset::load(dir).stage("load data")
}

fn train_into(data: &Dataset, run: &RunConfig, out: &Path, init: Option<ParamSet>) -> CliResult<ParamSet> {
    let mut echo = run.to_config();
    echo.set("model.vocab_size", data.train.vocab.len());
    echo_config(out, &echo)?;
    let outcome = train_run(data, run, init).stage("train")?;
    write_file(&out.join("train_log.csv"), log_csv(&outcome.log))?;
    write_file(&out.join("model.ckpt"), outcome.params.to_bytes())?;
    Ok(outcome.params)
}

fn train_cmd(args: &TrainArgs) -> CliResult<()> {
    let data = load_data(&args.data)?;
    let run = run_config(&Config::new(), &args.flags)?;
    let init = match &args.resume {
        Some(p) => {
            require(p, "checkpoint")?;
            Some(ParamSet::load(p).stage("resume")?)
        }
        None => None,
    };
    train_into(&data, &run, &args.out, init).map(|_| ())
}

fn decode_config(base: &Config, flags: &DecodeFlags) -> CliResult<DecodeConfig> {
    let mut c = base.clone();
    if let Some(m) = &flags.mode {
        let mode: DecodeMode = parse_flag(m)?;
        c.set("decode.mode", mode);
    }
    if let Some(b) = flags.beam {
        c.set("decode.beam_size", b);
    }
    if let Some(t) = flags.tau {
        c.set("decode.tau", t);
    }
    let d = DecodeConfig::from_config(&c).map_err(|e| Failure::usage(e.to_string()))?;
    d.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(d)
}

/// Corpus plus the dataset that lives next to it.
fn corpus_with_data(corpus: &Path) -> CliResult<(Dataset, Corpus)> {
    require(corpus, "corpus")?;
    let dir = corpus.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let data = load_data(dir)?;
    let mut c = Corpus::load(corpus).stage("load corpus")?;
    c.vocab = data.train.vocab.clone();
    c.annotate(&data.recognizer());
    Ok((data, c))
}

fn decode_into(data: &Dataset, params: &ParamSet, corpus: &Corpus, config: &DecodeConfig, out: &Path) -> CliResult<Vec<DecodeRecord>> {
    let identity = data.table(&EquivalenceMap::Identity).stage("decode")?;
    let records = decode_corpus(params, corpus, &identity, &data.stops, config).stage("decode")?;
    echo_config(out, &config.to_config())?;
    write_file(&out.join("outputs.txt"), outputs_text(&records))?;
    write_file(&out.join("decode.csv"), decode_csv(&records))?;
    let partial = records.iter().filter(|r| r.partial).count();
    if partial > 0 {
        eprintln!(
            "warning: {partial} of {} outputs miss some constraint (flagged in decode.csv)",
            records.len()
        );
    }
    Ok(records)
}

fn decode_cmd(args: &DecodeArgs) -> CliResult<()> {
    require(&args.ckpt, "checkpoint")?;
    let params = ParamSet::load(&args.ckpt).stage("load checkpoint")?;
    let (data, corpus) = corpus_with_data(&args.corpus)?;
    let config = decode_config(&load_config(args.config.as_deref())?, &args.flags)?;
    decode_into(&data, &params, &corpus, &config, &args.out).map(|_| ())
}

/// Rebuilds decode records from `outputs.txt` and `decode.csv`.
fn read_decoded(dir: &Path, corpus: &Corpus) -> CliResult<(Vec<DecodeRecord>, usize)> {
    let outputs = read_file(&dir.join("outputs.txt"))?;
    let sidecar = read_file(&dir.join("decode.csv"))?;
    let config = Config::load(&dir.join("config.cfg")).stage("eval")?;
    let beam = DecodeConfig::from_config(&config).stage("eval")?.beam_size;
    let mut records = Vec::new();
    for (line, row) in outputs.lines().zip(sidecar.lines().skip(1)) {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 7 {
            return Err(Failure {
                code: 3,
                message: format!("eval: malformed decode.csv row {row:?}"),
            });
        }
        let flag = |i: usize| fields[i] == "true";
        let words: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        records.push(DecodeRecord {
            tokens: corpus.vocab.encode(&words),
            words,
            log_prob: fields[1].parse().unwrap_or(f64::NAN),
            ended_with_eos: flag(2),
            constraints: Vec::new(),
            dropped_constraints: fields[4].parse().unwrap_or(0),
            constraints_satisfied: flag(5),
            partial: flag(6),
        });
    }
    if records.len() != corpus.pairs.len() || outputs.lines().count() != corpus.pairs.len() {
        return Err(Failure {
            code: 3,
            message: format!(
                "eval: {} decoded lines for {} corpus pairs",
                outputs.lines().count(),
                corpus.pairs.len()
            ),
        });
    }
    Ok((records, beam))
}

fn write_report(out: &Path, report: &MetricsReport) -> CliResult<()> {
    write_file(&out.join("metrics.csv"), report.metrics_csv())?;
    write_file(&out.join("relative_error.csv"), report.relative_error_csv())?;
    write_file(&out.join("entropy.csv"), report.entropy_csv())?;
    write_file(&out.join("rank.csv"), report.rank_csv())
}

fn eval_cmd(args: &EvalArgs) -> CliResult<()> {
    require(&args.ckpt, "checkpoint")?;
    require(&args.decoded, "decoded directory")?;
    let params = ParamSet::load(&args.ckpt).stage("load checkpoint")?;
    let (data, corpus) = corpus_with_data(&args.corpus)?;
    let (records, beam) = read_decoded(&args.decoded, &corpus)?;
    let report = evaluate(&data, &params, &corpus, &records, beam).stage("eval")?;
    let mut c = Config::new();
    c.set("eval.corpus", args.corpus.display());
    c.set("eval.decoded", args.decoded.display());
    echo_config(&args.out, &c)?;
    write_report(&args.out, &report)
}

/// Reads a two-column CSV with a header into (key, value) rows.
fn read_pairs(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = read_file(path)?;
    Ok(text
        .lines()
        .skip(1)
        .filter_map(|l| {
            let mut parts = l.split(',');
            let k = parts.next()?.to_string();
            let v = parts.next_back().unwrap_or("").to_string();
            Some((k, v))
        })
        .collect())
}

fn report_cmd(args: &ReportArgs) -> CliResult<()> {
    let mut runs: Vec<(String, PathBuf)> = Vec::new();
    for r in &args.runs {
        let (label, dir) = match r.split_once('=') {
            Some((l, d)) => (l.to_string(), PathBuf::from(d)),
            None => (r.clone(), PathBuf::from(r)),
        };
        require(&dir.join("entropy.csv"), "entropy.csv")?;
        require(&dir.join("relative_error.csv"), "relative_error.csv")?;
        runs.push((label, dir));
    }
    let mut entropy = Vec::new();
    let mut errors = Vec::new();
    let mut classes: Vec<String> = Vec::new();
    for (label, dir) in &runs {
        let points = read_pairs(&dir.join("entropy.csv"))?
            .into_iter()
            .filter_map(|(t, h)| Some((t.parse().ok()?, h.parse().ok()?)))
            .collect();
        entropy.push(Series {
            name: label.clone(),
            points,
        });
        let rows = read_pairs(&dir.join("relative_error.csv"))?;
        for (class, _) in &rows {
            if !classes.contains(class) {
                classes.push(class.clone());
            }
        }
        let points = rows
            .into_iter()
            .filter_map(|(class, e)| {
                let x = classes.iter().position(|c| *c == class)? as f64;
                Some((x, e.parse().ok()?))
            })
            .collect();
        errors.push(Series {
            name: label.clone(),
            points,
        });
    }
    let entropy_chart = Chart {
        title: "Entropy of the next-token distribution".into(),
        x_label: "decoding step t".into(),
        y_label: "H_t (nats)".into(),
        x_ticks: vec![],
        series: entropy,
    };
    let error_chart = Chart {
        title: "Relative error in the utilization rate".into(),
        x_label: "semantic type".into(),
        y_label: "relative error".into(),
        x_ticks: classes.iter().enumerate().map(|(i, c)| (i as f64, c.clone())).collect(),
        series: errors,
    };
    write_file(&args.out.join("entropy.svg"), entropy_chart.to_svg())?;
    write_file(&args.out.join("relative_error.svg"), error_chart.to_svg())
}

fn metric_value(report: &MetricsReport, name: &str) -> Option<f64> {
    match name {
        "concept_f1" => Some(report.concept.f1),
        "concept_precision" => Some(report.concept.precision),
        "concept_recall" => Some(report.concept.recall),
        "mean_relative_error" => report.mean_relative_error(),
        "early_entropy_t3" => report.early_entropy(3),
        "average_concept_rank" => report.average_concept_rank,
        _ => None,
    }
}

const GRID_METRICS: [&str; 6] = [
    "concept_f1",
    "concept_precision",
    "concept_recall",
    "mean_relative_error",
    "early_entropy_t3",
    "average_concept_rank",
];

/// One row per (mode, alpha) with mean and sample std over seeds.
fn aggregate_csv(cells: &BTreeMap<(String, String), Vec<MetricsReport>>) -> String {
    let mut out = String::from("mode,alpha,seeds");
    for m in GRID_METRICS {
        let _ = write!(out, ",{m}_mean,{m}_std");
    }
    out.push('\n');
    for ((mode, alpha), reports) in cells {
        let _ = write!(out, "{mode},{alpha},{}", reports.len());
        for m in GRID_METRICS {
            let values: Vec<f64> = reports.iter().filter_map(|r| metric_value(r, m)).collect();
            match mean_std(&values) {
                Some((mean, std)) => {
                    let _ = write!(out, ",{mean},{std}");
                }
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

fn grid_cmd(args: &GridArgs) -> CliResult<()> {
    if args.seeds.is_empty() || args.alphas.is_empty() || args.modes.is_empty() {
        return Err(Failure::usage("seeds, alphas and modes must be nonempty"));
    }
    let data = load_data(&args.data)?;
    let base = load_config(args.config.as_deref())?;
    let decode = decode_config(
        &base,
        &DecodeFlags {
            mode: Some("plain".into()),
            beam: None,
            tau: None,
        },
    )?;
    let modes: Vec<UtilLossMode> = args.modes.iter().map(|m| parse_flag(m)).collect::<CliResult<_>>()?;
    let mut cells: BTreeMap<(String, String), Vec<MetricsReport>> = BTreeMap::new();
    for &mode in &modes {
        for &alpha in &args.alphas {
            for &seed in &args.seeds {
                let flags = TrainFlags {
                    config: None,
                    util_loss: Some(mode.name().into()),
                    alpha: Some(alpha),
                    seed: Some(seed),
                    max_steps: args.max_steps,
                };
                let run = run_config(&base, &flags)?;
                let dir = args.out.join(format!("{}_a{alpha}_s{seed}", mode.name()));
                eprintln!("grid: {}", dir.display());
                let params = train_into(&data, &run, &dir, None)?;
                let records = decode_into(&data, &params, &data.test, &decode, &dir.join("decode"))?;
                let report = evaluate(&data, &params, &data.test, &records, decode.beam_size).stage("eval")?;
                write_report(&dir.join("eval"), &report)?;
                cells
                    .entry((mode.name().to_string(), alpha.to_string()))
                    .or_default()
                    .push(report);
            }
        }
    }
    write_file(&args.out.join("aggregate.csv"), aggregate_csv(&cells))
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Analyze(a) => analyze(a),
        Command::Recognize(a) => recognize(a),
        Command::Train(a) => train_cmd(a),
        Command::Decode(a) => decode_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::Grid(a) => grid_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
