//! Command-line front end: simulate streams, fit one model, compare several
//! models on one stream, and inspect checkpoints.
//!
//! [`run`] parses arguments and writes to the given sinks, returning the
//! process exit code: 0 on success, 1 for usage or configuration problems,
//! 2 for data errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ofmlr::bank::CompareRow;
use ofmlr::datagen::{write_csv, write_labels_csv};
use ofmlr::diagnostics::DistinctCount;
use ofmlr::fit::{FitSummary, Trace};
use ofmlr::stream_io::{
    load_checkpoint, save_checkpoint, Checkpoint, ColumnSpec, ObservationStream, Standardizer,
    StreamFormat,
};
use ofmlr::{
    generate_mixture_with, init_model, ExecMode, FitState, GenSpec, InitSpec, LearnRateSchedule,
    MixtureState, ModelBank, Observation,
};

pub mod model_spec;

pub use model_spec::ModelSpec;

/// Exit code for success.
pub const EXIT_OK: i32 = 0;
/// Exit code for bad flags or configuration.
pub const EXIT_USAGE: i32 = 1;
/// Exit code for unreadable or inconsistent data.
pub const EXIT_DATA: i32 = 2;

const BATCH: usize = 1024;

#[derive(Debug, Parser)]
#[command(
    name = "ofmlr",
    version,
    about = "Online EM for finite mixtures of logistic regressions"
)]
pub struct Cli {
    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic mixture stream as CSV.
    Simulate(SimulateArgs),
    /// Fit one model to a stream.
    Fit(FitArgs),
    /// Fit several models side by side on one stream.
    Compare(CompareArgs),
    /// Print the contents of a checkpoint file.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Csv,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of rows.
    #[arg(long)]
    pub n: usize,
    /// Number of components.
    #[arg(long)]
    pub k: usize,
    /// Coefficients per component, including the intercept.
    #[arg(long)]
    pub p: usize,
    /// Coefficients, components separated by ';' and entries by ','.
    #[arg(long, allow_hyphen_values = true)]
    pub beta: String,
    /// Mixing weights separated by ','. Uniform when omitted.
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Lower bound of the uniform feature distribution.
    #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
    pub x_min: f64,
    /// Upper bound of the uniform feature distribution.
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    pub x_max: f64,
    /// Whether the first coefficient multiplies a constant 1.
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    pub intercept: OnOff,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Hidden component labels. Defaults to `<out>.labels.csv` when `--out`
    /// is a file; not written otherwise.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct StreamArgs {
    /// Input file, or '-' for standard input.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = InputFormat::Csv)]
    pub input_format: InputFormat,
    /// Outcome column (CSV).
    #[arg(long, default_value = "y")]
    pub y_col: String,
    /// Feature columns separated by ','. All other columns when omitted.
    #[arg(long)]
    pub x_cols: Option<String>,
    /// Prepend a constant 1 to every feature vector.
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    pub intercept: OnOff,
    /// Features are already standardized; skip the streaming z-scores.
    #[arg(long)]
    pub prestandardized: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub stream: StreamArgs,
    /// Number of components. Taken from the checkpoint with `--resume`.
    #[arg(long)]
    pub k: Option<usize>,
    /// Expected coefficient count; checked against the stream.
    #[arg(long)]
    pub p: Option<usize>,
    /// Fixed learn rate.
    #[arg(long, conflicts_with = "decay")]
    pub gamma: Option<f64>,
    /// Decaying learn rate `gamma0 * t^-decay`.
    #[arg(long)]
    pub decay: Option<f64>,
    /// Initial rate for `--decay`.
    #[arg(long, default_value_t = 1.0, requires = "decay")]
    pub gamma0: f64,
    /// Diagnostics window.
    #[arg(long, default_value_t = ofmlr::diagnostics::DEFAULT_WINDOW)]
    pub window: u64,
    /// Record a trace row every this many observations.
    #[arg(long, requires = "trace_out")]
    pub trace_every: Option<u64>,
    /// Trace CSV destination.
    #[arg(long, requires = "trace_every")]
    pub trace_out: Option<PathBuf>,
    /// Seed for the starting coefficients.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Starting coefficients are drawn uniformly from this range.
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    pub init_min: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub init_max: f64,
    /// Save the final state here.
    #[arg(long)]
    pub checkpoint_out: Option<PathBuf>,
    /// Continue from a saved state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub stream: StreamArgs,
    /// Model spec such as `k=2,gamma=0.1,seed=3`; repeat for each model.
    /// Keys: k, p, seed, gamma, decay, gamma0, window, name.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    /// Base seed; a spec without `seed=` uses base + its position.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also print each model's sorted parameters.
    #[arg(long)]
    pub show_params: bool,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub checkpoint: PathBuf,
}

/// A failure with its exit code class.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Data(_) => EXIT_DATA,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Data(m) => m,
        }
    }
}

impl From<ofmlr::Error> for CliError {
    fn from(e: ofmlr::Error) -> Self {
        use ofmlr::Error as E;
        match e {
            E::Domain(_) | E::Shape { .. } | E::Validation(_) | E::Config(_) => {
                Self::Usage(e.to_string())
            }
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Self::Data(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn data_err(e: ofmlr::Error) -> CliError {
    CliError::Data(e.to_string())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.code()
        }
    }
}

fn mode(cli: &Cli) -> ExecMode {
    if cli.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, mode(cli), out),
        Command::Fit(a) => cmd_fit(a, out, err),
        Command::Compare(a) => cmd_compare(a, mode(cli), out, err),
        Command::Inspect(a) => cmd_inspect(a, out),
    }
}

pub(crate) fn parse_list(text: &str, what: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("{what}: '{}' is not a number", v.trim())))
        })
        .collect()
}

fn parse_beta(text: &str) -> CliResult<Vec<Vec<f64>>> {
    text.split(';').map(|c| parse_list(c, "--beta")).collect()
}

fn label_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".labels.csv");
    PathBuf::from(name)
}

pub fn cmd_simulate(a: &SimulateArgs, mode: ExecMode, out: &mut dyn Write) -> CliResult<()> {
    let beta = parse_beta(&a.beta)?;
    let alpha = match &a.alpha {
        Some(s) => parse_list(s, "--alpha")?,
        None => vec![1.0 / a.k.max(1) as f64; a.k],
    };
    if beta.len() != a.k || alpha.len() != a.k {
        return Err(CliError::Usage(format!(
            "--k {} but --beta has {} components and --alpha {}",
            a.k,
            beta.len(),
            alpha.len()
        )));
    }
    if let Some(b) = beta.iter().find(|b| b.len() != a.p) {
        return Err(CliError::Usage(format!(
            "--p {} but a --beta component has {} entries",
            a.p,
            b.len()
        )));
    }
    let intercept = a.intercept == OnOff::On;
    let spec = GenSpec {
        n: a.n,
        alpha,
        beta,
        x_range: (a.x_min, a.x_max),
        intercept,
        seed: a.seed,
    };
    let gen = generate_mixture_with(&spec, mode)?;
    match &a.out {
        Some(path) => {
            write_csv(&gen.data, intercept, BufWriter::new(File::create(path)?))
                .map_err(data_err)?;
            let labels = a.labels.clone().unwrap_or_else(|| label_path(path));
            write_labels_csv(&gen.labels, BufWriter::new(File::create(labels)?))
                .map_err(data_err)?;
        }
        None => {
            write_csv(&gen.data, intercept, &mut *out).map_err(data_err)?;
            if let Some(labels) = &a.labels {
                write_labels_csv(&gen.labels, BufWriter::new(File::create(labels)?))
                    .map_err(data_err)?;
            }
        }
    }
    Ok(())
}

/// An opened input with its standardizer, yielding transformed observations.
struct Feed {
    stream: ObservationStream,
    pending: Option<ofmlr::Result<Observation>>,
    standardizer: Standardizer,
    p: usize,
}

fn open_input(s: &StreamArgs) -> CliResult<ObservationStream> {
    let reader: Box<dyn Read> = if s.input.as_os_str() == "-" {
        Box::new(io::stdin())
    } else {
        Box::new(
            File::open(&s.input)
                .map_err(|e| CliError::Data(format!("cannot open {}: {e}", s.input.display())))?,
        )
    };
    let format = match s.input_format {
        InputFormat::Csv => StreamFormat::Csv,
        InputFormat::Jsonl => StreamFormat::Jsonl,
    };
    let columns = ColumnSpec {
        y_col: s.y_col.clone(),
        x_cols: s
            .x_cols
            .as_ref()
            .map(|c| c.split(',').map(|v| v.trim().to_string()).collect()),
        intercept: s.intercept == OnOff::On,
    };
    ObservationStream::from_reader(reader, format, &columns).map_err(|e| match e {
        ofmlr::Error::Config(m) => CliError::Usage(m),
        other => CliError::Data(other.to_string()),
    })
}

impl Feed {
    /// `resumed` supplies the standardizer of a checkpoint.
    fn open(s: &StreamArgs, resumed: Option<Standardizer>) -> CliResult<Self> {
        let mut stream = open_input(s)?;
        let mut pending = None;
        let p = match (&resumed, stream.dimension()) {
            (Some(std), _) => std.p(),
            (None, Some(p)) => p,
            (None, None) => match stream.next() {
                Some(Ok(obs)) => {
                    let p = obs.p();
                    pending = Some(Ok(obs));
                    p
                }
                Some(Err(e)) => return Err(data_err(e)),
                None => {
                    return Err(CliError::Data(
                        "empty stream: cannot determine the feature count".into(),
                    ))
                }
            },
        };
        let standardizer = match resumed {
            Some(std) => std,
            None if s.prestandardized => Standardizer::disabled(p),
            None => Standardizer::new(p, s.intercept == OnOff::On),
        };
        Ok(Self {
            stream,
            pending,
            standardizer,
            p,
        })
    }

    /// Next transformed observation, or `None` at end of stream.
    fn next_obs(&mut self) -> CliResult<Option<Observation>> {
        match self.pending.take().or_else(|| self.stream.next()) {
            None => Ok(None),
            Some(Err(e)) => Err(data_err(e)),
            Some(Ok(obs)) => self
                .standardizer
                .standardize(&obs)
                .map(Some)
                .map_err(data_err),
        }
    }

    fn next_batch(&mut self, buf: &mut Vec<Observation>) -> CliResult<()> {
        buf.clear();
        while buf.len() < BATCH {
            match self.next_obs()? {
                Some(o) => buf.push(o),
                None => break,
            }
        }
        Ok(())
    }

    fn report_skipped(&self, err: &mut dyn Write) {
        let n = self.stream.skipped();
        if n > 0 {
            let _ = writeln!(err, "warning: skipped {n} malformed rows");
        }
    }
}

fn schedule_from(
    gamma: Option<f64>,
    decay: Option<f64>,
    gamma0: f64,
) -> CliResult<LearnRateSchedule> {
    let s = match (gamma, decay) {
        (Some(g), None) => LearnRateSchedule::fixed(g)?,
        (None, Some(d)) => LearnRateSchedule::decaying(gamma0, d)?,
        (None, None) => LearnRateSchedule::default(),
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "--gamma and --decay are mutually exclusive".into(),
            ))
        }
    };
    Ok(s)
}

fn new_fit(
    k: usize,
    p: usize,
    seed: u64,
    init_range: (f64, f64),
    schedule: LearnRateSchedule,
    window: u64,
    trace_every: Option<u64>,
) -> CliResult<FitState> {
    let mut init = InitSpec::new(k, p, seed);
    init.beta_range = init_range;
    let model = init_model(&init)?;
    Ok(FitState::new(model, schedule, window, trace_every)?)
}

fn check_p(expected: Option<usize>, got: usize) -> CliResult<()> {
    match expected {
        Some(p) if p != got => Err(CliError::Data(format!(
            "stream position 1: expected {p} features per observation, got {got}"
        ))),
        _ => Ok(()),
    }
}

pub fn cmd_fit(a: &FitArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let intercept = a.stream.intercept == OnOff::On;
    let (mut fit, mut feed) = match &a.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path).map_err(data_err)?;
            let (fit, std) = ckpt.into_parts().map_err(data_err)?;
            if let Some(k) = a.k {
                if k != fit.k() {
                    return Err(CliError::Usage(format!(
                        "--k {k} but the checkpoint holds {} components",
                        fit.k()
                    )));
                }
            }
            let feed = Feed::open(&a.stream, Some(std))?;
            (fit, feed)
        }
        None => {
            let k = a.k.ok_or_else(|| {
                CliError::Usage("--k is required unless --resume is given".into())
            })?;
            let schedule = schedule_from(a.gamma, a.decay, a.gamma0)?;
            let feed = Feed::open(&a.stream, None)?;
            let fit = new_fit(
                k,
                feed.p,
                a.seed,
                (a.init_min, a.init_max),
                schedule,
                a.window,
                a.trace_every,
            )?;
            (fit, feed)
        }
    };
    check_p(a.p, feed.p)?;
    while let Some(obs) = feed.next_obs()? {
        fit.add_observation(&obs).map_err(data_err)?;
    }
    feed.report_skipped(err);
    if let Some(path) = &a.checkpoint_out {
        save_checkpoint(&Checkpoint::new(&fit, &feed.standardizer), path).map_err(data_err)?;
    }
    if let (Some(path), Some(trace)) = (&a.trace_out, fit.trace()) {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(format_trace(trace, fit.k(), fit.p()).as_bytes())?;
        w.flush()?;
    }
    let summary = fit.summary(intercept);
    let text = match a.format {
        OutputFormat::Text => format_summary(&summary, fit.diagnostics().window()),
        OutputFormat::Csv => format_summary_csv(&summary),
    };
    out.write_all(text.as_bytes())?;
    Ok(())
}

pub fn cmd_compare(
    a: &CompareArgs,
    mode: ExecMode,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CliResult<()> {
    let specs = a
        .models
        .iter()
        .map(|m| ModelSpec::parse(m))
        .collect::<CliResult<Vec<_>>>()?;
    if let Some(first) = specs.iter().find_map(|s| s.p) {
        if let Some(other) = specs.iter().find_map(|s| s.p.filter(|&p| p != first)) {
            return Err(CliError::Usage(format!(
                "model specs disagree on p ({first} vs {other})"
            )));
        }
    }
    let mut feed = Feed::open(&a.stream, None)?;
    check_p(specs.iter().find_map(|s| s.p), feed.p)?;
    let mut bank = ModelBank::new(mode);
    for (i, s) in specs.iter().enumerate() {
        let schedule = schedule_from(s.gamma, s.decay, s.gamma0.unwrap_or(1.0))?;
        let fit = new_fit(
            s.k,
            feed.p,
            s.seed.unwrap_or(a.seed.wrapping_add(i as u64)),
            (-1.0, 1.0),
            schedule,
            s.window.unwrap_or(ofmlr::diagnostics::DEFAULT_WINDOW),
            None,
        )?;
        let name = s.name.clone().unwrap_or_else(|| format!("M{}", i + 1));
        bank.add_model(name, fit)?;
    }
    let mut buf = Vec::with_capacity(BATCH);
    loop {
        feed.next_batch(&mut buf)?;
        if buf.is_empty() {
            break;
        }
        bank.add_batch(&buf).map_err(data_err)?;
    }
    feed.report_skipped(err);
    let rows = bank.compare_rows();
    let mut text = match a.format {
        OutputFormat::Text => format_compare(&rows),
        OutputFormat::Csv => format_compare_csv(&rows),
    };
    if a.show_params {
        for (name, fit) in bank.names().iter().zip(bank.fits()) {
            let _ = writeln!(text, "\n{name}:");
            text.push_str(&format_params(&fit.model().sorted(), "  "));
        }
    }
    out.write_all(text.as_bytes())?;
    Ok(())
}

pub fn cmd_inspect(a: &InspectArgs, out: &mut dyn Write) -> CliResult<()> {
    let ckpt = load_checkpoint(&a.checkpoint).map_err(data_err)?;
    out.write_all(format_checkpoint(&ckpt).as_bytes())?;
    Ok(())
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.prec$}"))
}

fn format_params(model: &MixtureState, indent: &str) -> String {
    let mut s = String::new();
    let alpha: Vec<String> = model.alpha().iter().map(|a| format!("{a:.3}")).collect();
    let _ = writeln!(s, "{indent}alpha: {}", alpha.join(" "));
    let _ = writeln!(s, "{indent}beta:");
    for (k, b) in model.beta().iter().enumerate() {
        let row: Vec<String> = b.iter().map(|v| format!("{v:>9.3}")).collect();
        let _ = writeln!(s, "{indent}  [{}] {}", k + 1, row.join(""));
    }
    s
}

/// Human-readable fit summary.
pub fn format_summary(s: &FitSummary, window: u64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Online mixture of logistic regressions");
    let _ = writeln!(out, "  K = {}, p = {}, t = {}", s.k, s.p, s.t);
    out.push_str(&format_params(&s.model, "  "));
    let _ = writeln!(
        out,
        "  ll_bar: {:.4} (max-assignment {:.4}), window {}",
        s.ll_bar, s.max_ll_bar, window
    );
    let _ = writeln!(out, "  sAIC: {}  sBIC: {}", opt(s.saic, 2), opt(s.sbic, 2));
    if s.settled {
        let _ = writeln!(
            out,
            "  The parameter norm has changed by < 0.001 on average over the last {} observations.",
            window.min(s.t)
        );
    } else if s.t > 0 {
        let _ = writeln!(out, "  Mean parameter norm change: {:.6}", s.delta_norm_bar);
    }
    if s.low_alpha_warning {
        let _ = writeln!(out, "  Warning: a mixing weight has fallen below 1e-4.");
    }
    if let Some(adv) = &s.identifiability {
        let distinct = match adv.distinct {
            DistinctCount::Exact(q) => q.to_string(),
            DistinctCount::Saturated(q) => format!(">= {q}"),
        };
        let _ = writeln!(
            out,
            "  Feature {} has {} distinct values; up to {} components are identifiable.",
            adv.feature + 1,
            distinct,
            adv.bound
        );
        if adv.bound.value() < s.k
            && matches!(adv.bound, ofmlr::diagnostics::ComponentBound::Exact(_))
        {
            let _ = writeln!(out, "  Warning: K = {} exceeds that bound.", s.k);
        }
    }
    out
}

fn param_header(k: usize, p: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=k).map(|i| format!("alpha_{i}")).collect();
    for i in 1..=k {
        h.extend((1..=p).map(|j| format!("beta_{i}_{j}")));
    }
    h
}

fn param_values(model: &MixtureState) -> Vec<String> {
    let mut v: Vec<String> = model.alpha().iter().map(f64::to_string).collect();
    for b in model.beta() {
        v.extend(b.iter().map(f64::to_string));
    }
    v
}

fn opt_csv(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One-row CSV summary with full precision values.
pub fn format_summary_csv(s: &FitSummary) -> String {
    let mut header = vec!["k".to_string(), "p".into(), "t".into()];
    header.extend(param_header(s.k, s.p));
    header.extend(
        [
            "ll_bar",
            "max_ll_bar",
            "saic",
            "sbic",
            "delta_norm",
            "settled",
        ]
        .map(String::from),
    );
    let mut row = vec![s.k.to_string(), s.p.to_string(), s.t.to_string()];
    row.extend(param_values(&s.model));
    row.extend([
        s.ll_bar.to_string(),
        s.max_ll_bar.to_string(),
        opt_csv(s.saic),
        opt_csv(s.sbic),
        s.delta_norm_bar.to_string(),
        s.settled.to_string(),
    ]);
    format!("{}\n{}\n", header.join(","), row.join(","))
}

/// Trace CSV. Components keep their fitted labels so curves stay continuous.
pub fn format_trace(trace: &Trace, k: usize, p: usize) -> String {
    let mut out = String::new();
    let mut header = vec!["t".to_string()];
    header.extend(param_header(k, p));
    header.extend(["ll_bar", "max_ll_bar", "delta_norm", "saic", "sbic"].map(String::from));
    let _ = writeln!(out, "{}", header.join(","));
    for r in &trace.rows {
        let mut row = vec![r.t.to_string()];
        row.extend(param_values(&r.model));
        row.extend([r.ll_bar, r.max_ll_bar, r.delta_norm, r.saic, r.sbic].map(|v| v.to_string()));
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

const COMPARE_COLUMNS: [&str; 9] = ["M", "k", "p", "ll", "maxll", "sAIC", "sBIC", "dNorm", "n"];

fn compare_cells(r: &CompareRow) -> [String; 9] {
    [
        r.name.clone(),
        r.k.to_string(),
        r.p.to_string(),
        format!("{:.4}", r.ll),
        format!("{:.4}", r.maxll),
        opt(r.saic, 2),
        opt(r.sbic, 2),
        format!("{:.6}", r.dnorm),
        r.n.to_string(),
    ]
}

/// Aligned comparison table, one row per model in registration order.
pub fn format_compare(rows: &[CompareRow]) -> String {
    let cells: Vec<[String; 9]> = rows.iter().map(compare_cells).collect();
    let widths: Vec<usize> = (0..9)
        .map(|c| {
            cells
                .iter()
                .map(|r| r[c].len())
                .chain([COMPARE_COLUMNS[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |vals: Vec<&str>| -> String {
        vals.iter()
            .enumerate()
            .map(|(c, v)| {
                if c == 0 {
                    format!("{v:<w$}", w = widths[c])
                } else {
                    format!("{v:>w$}", w = widths[c])
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = line(COMPARE_COLUMNS.to_vec());
    out.push('\n');
    for r in &cells {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

pub fn format_compare_csv(rows: &[CompareRow]) -> String {
    let mut out = COMPARE_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let cells = [
            r.name.clone(),
            r.k.to_string(),
            r.p.to_string(),
            r.ll.to_string(),
            r.maxll.to_string(),
            opt_csv(r.saic),
            opt_csv(r.sbic),
            r.dnorm.to_string(),
            r.n.to_string(),
        ];
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

/// Full dump of a checkpoint. Numbers print in shortest round-trip form.
pub fn format_checkpoint(c: &Checkpoint) -> String {
    let mut out = String::new();
    let k = c.alpha.len();
    let p = c.beta.first().map_or(0, Vec::len);
    let _ = writeln!(out, "version: {}", c.version);
    let _ = writeln!(out, "t: {}", c.t);
    let _ = writeln!(out, "K: {k}");
    let _ = writeln!(out, "p: {p}");
    let schedule = match c.schedule {
        LearnRateSchedule::Fixed { gamma0 } => format!("fixed gamma={gamma0}"),
        LearnRateSchedule::Decaying { gamma0, exponent } => {
            format!("decaying gamma0={gamma0} exponent={exponent}")
        }
    };
    let _ = writeln!(out, "schedule: {schedule}");
    let _ = writeln!(out, "alpha: {}", join(&c.alpha));
    for (i, b) in c.beta.iter().enumerate() {
        let _ = writeln!(out, "beta[{}]: {}", i + 1, join(b));
    }
    let d = &c.diagnostics;
    let _ = writeln!(out, "diagnostics:");
    let _ = writeln!(out, "  window: {}", d.window());
    let _ = writeln!(out, "  observations: {}", d.t_seen());
    let _ = writeln!(out, "  ll_bar: {}", d.ll_bar());
    let _ = writeln!(out, "  max_ll_bar: {}", d.max_ll_bar());
    let _ = writeln!(out, "  delta_norm_bar: {}", d.delta_norm_bar());
    let _ = writeln!(out, "  prev_norm: {}", d.prev_norm());
    let _ = writeln!(out, "  low_alpha_warning: {}", d.low_alpha_warning());
    let u = d.unique();
    for j in 0..u.num_features() {
        let count = match u.distinct(j) {
            Some(DistinctCount::Exact(q)) => q.to_string(),
            Some(DistinctCount::Saturated(q)) => format!(">= {q}"),
            None => "0".into(),
        };
        let _ = writeln!(out, "  distinct[{}]: {count}", j + 1);
    }
    let s = &c.standardizer;
    let _ = writeln!(out, "standardizer:");
    for j in 0..s.p() {
        if s.is_enabled(j) {
            let _ = writeln!(
                out,
                "  feature {}: count={} mean={} variance={}",
                j + 1,
                s.count(j),
                s.mean(j),
                s.variance(j)
            );
        } else {
            let _ = writeln!(out, "  feature {}: passthrough", j + 1);
        }
    }
    match &c.trace {
        Some(tr) => {
            let _ = writeln!(
                out,
                "trace: every {} observations, {} rows",
                tr.interval,
                tr.rows.len()
            );
        }
        None => {
            let _ = writeln!(out, "trace: none");
        }
    }
    out
}
