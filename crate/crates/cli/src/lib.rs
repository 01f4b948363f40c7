//! The `gramwb` command line.
//!
//! Exit status: 0 on success, 1 when diagnostics, failed parses or changed
//! results are reported, 2 on usage errors.

pub mod server;

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gramwb::checks::run_all;
use gramwb::diagnostic::{render_all, Diagnostic};
use gramwb::grammar::{called_by, grammar_index, parse_grammar_file};
use gramwb::lexicon::InterfaceRules;
use gramwb::pipeline::{
    formalism_for_path, parse_sentence, read_file, render_parse, LoadError, OutputFormat, ParseOptions, Toolkit,
};
use gramwb::results::{compare_readings, compare_results, BaselineStore, Engine, StoreError};
use gramwb::testsuite::{load_suites, select_cases, BaselineMode, RunOptions, TestClass};
use gramwb::workbench::{engine_supports, Config};

pub const EXIT_OK: i32 = 0;
pub const EXIT_REPORTED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gramwb", version, about = "Grammar development workbench for feature-structure grammars")]
pub struct Cli {
    /// Configuration file (default: the file named by GRAMWB_CONFIG).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the static checks on a grammar.
    Check {
        grammar: PathBuf,
        /// Interface rules naming the lexical categories. Without this,
        /// `<grammar stem>.ifr` or the `.ifr` files next to the grammar are used.
        #[arg(long, value_name = "FILE")]
        rules: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Parse one sentence.
    Parse {
        #[command(flatten)]
        inputs: Inputs,
        sentence: String,
        #[arg(long, value_enum)]
        engine: Option<EngineArg>,
        /// Trace the listed categories; without a list, trace everything.
        #[arg(long, value_name = "CAT,...", num_args = 0..=1, default_missing_value = "", value_delimiter = ',')]
        trace: Option<Vec<String>>,
        #[arg(long, value_enum, default_value = "tree")]
        format: FormatArg,
    },
    /// Compare two readings of one sentence.
    Compare {
        #[command(flatten)]
        inputs: Inputs,
        sentence: String,
        /// First reading, counted from 1.
        #[arg(long, default_value_t = 1)]
        a: usize,
        /// Second reading, counted from 1.
        #[arg(long, default_value_t = 2)]
        b: usize,
        #[arg(long, value_enum)]
        engine: Option<EngineArg>,
        #[arg(long)]
        json: bool,
    },
    /// Test suites.
    Suite {
        #[command(subcommand)]
        command: SuiteCommand,
    },
    /// Saved parse results used for regression comparison.
    Baseline {
        #[command(subcommand)]
        command: BaselineCommand,
    },
    /// Start the JSON service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        /// Directory for saved baselines.
        #[arg(long, value_name = "DIR")]
        store: Option<PathBuf>,
    },
    /// List rule heads with their defining and referencing rules.
    Index {
        grammar: PathBuf,
        /// Show only this symbol.
        #[arg(long)]
        symbol: Option<String>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
pub struct Inputs {
    pub grammar: PathBuf,
    pub lexicon: PathBuf,
    pub rules: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum SuiteCommand {
    /// Parse every sentence of the selected suites and check the expectations.
    Run {
        #[command(flatten)]
        inputs: Inputs,
        /// Suite files or directories (default: the configured suite directories).
        suites: Vec<PathBuf>,
        /// Only cases carrying all of these tags.
        #[arg(long, value_delimiter = ',')]
        tags: Vec<String>,
        #[arg(long, value_enum)]
        engine: Option<EngineArg>,
        #[arg(long)]
        workers: Option<usize>,
        /// Compare against or save baselines.
        #[arg(long, value_enum, default_value = "ignore")]
        baseline: BaselineArg,
        #[arg(long, value_name = "DIR")]
        store: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: TableFormat,
        /// Include timings in the text table.
        #[arg(long)]
        times: bool,
        /// Report each finished sentence on stderr.
        #[arg(long)]
        progress: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum BaselineCommand {
    /// Parse a sentence and store the result.
    Save(BaselineArgs),
    /// Parse a sentence and compare with the stored result.
    Compare(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    pub sentence: String,
    #[arg(long, value_enum)]
    pub engine: Option<EngineArg>,
    #[arg(long, value_name = "DIR")]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EngineArg {
    Chart,
    Td,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Engine {
        match e {
            EngineArg::Chart => Engine::Chart,
            EngineArg::Td => Engine::Td,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Tree,
    Features,
    Json,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> OutputFormat {
        match f {
            FormatArg::Tree => OutputFormat::Tree,
            FormatArg::Features => OutputFormat::Features,
            FormatArg::Json => OutputFormat::Json,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BaselineArg {
    Ignore,
    Compare,
    Save,
}

impl From<BaselineArg> for BaselineMode {
    fn from(b: BaselineArg) -> BaselineMode {
        match b {
            BaselineArg::Ignore => BaselineMode::Ignore,
            BaselineArg::Compare => BaselineMode::Compare,
            BaselineArg::Save => BaselineMode::Save,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TableFormat {
    Text,
    Json,
    Csv,
    Tsv,
}

/// A failure to report on the error stream, with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn reported(message: impl Into<String>) -> Self {
        Failure { code: EXIT_REPORTED, message: message.into() }
    }

    fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        Failure::reported(render_all(&e.diagnostics()))
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        Failure::reported(format!("error: {e}"))
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::reported(format!("error: {e}"))
    }
}

/// Parse `args` and run the command, writing to `out` and `err`.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
                return EXIT_USAGE;
            }
            let _ = write!(out, "{text}");
            return EXIT_OK;
        }
    };
    match execute(cli, out, err) {
        Ok(code) => code,
        Err(f) => {
            let msg = f.message.trim_end();
            let _ = writeln!(err, "{msg}");
            f.code
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    let c = match path {
        Some(p) => Config::load(p),
        None => Config::from_env(),
    };
    c.map_err(|e| Failure::usage(render_all(&e.diagnostics())))
}

fn toolkit(inputs: &Inputs) -> Result<Toolkit, Failure> {
    Ok(Toolkit::load(&inputs.grammar, &inputs.lexicon, &inputs.rules)?)
}

/// The requested engine, checked against the grammar's formalism; otherwise
/// the configured one if it fits, otherwise the formalism's default.
fn pick_engine(tk: &Toolkit, requested: Option<EngineArg>, config: &Config) -> Result<Engine, Failure> {
    let formalism = tk.grammar.formalism;
    match requested.map(Engine::from) {
        Some(e) if engine_supports(e, formalism) => Ok(e),
        Some(e) => Err(Failure::usage(format!("error: the {e} engine does not handle {formalism} grammars"))),
        None => Ok(config.engine.filter(|e| engine_supports(*e, formalism)).unwrap_or_else(|| tk.default_engine())),
    }
}

fn store(dir: Option<PathBuf>, config: &Config) -> Result<BaselineStore, Failure> {
    Ok(BaselineStore::open(dir.unwrap_or_else(|| config.store_dir.clone()))?)
}

fn execute(cli: Cli, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> Result<i32, Failure> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Check { grammar, rules, json } => check(&grammar, rules, json, out, err),
        Command::Parse { inputs, sentence, engine, trace, format } => {
            let tk = toolkit(&inputs)?;
            let engine = pick_engine(&tk, engine, &config)?;
            let trace = trace.map(|t| t.into_iter().filter(|c| !c.is_empty()).collect::<BTreeSet<_>>());
            let parsed = parse_sentence(&tk, &sentence, engine, ParseOptions { trace, ..Default::default() })
                .map_err(|e| Failure::reported(format!("error: {e}")))?;
            out.write_all(render_parse(&parsed, format.into()).as_bytes())?;
            Ok(if parsed.readings() == 0 { EXIT_REPORTED } else { EXIT_OK })
        }
        Command::Compare { inputs, sentence, a, b, engine, json } => {
            let tk = toolkit(&inputs)?;
            let engine = pick_engine(&tk, engine, &config)?;
            let parsed = parse_sentence(&tk, &sentence, engine, ParseOptions::default())
                .map_err(|e| Failure::reported(format!("error: {e}")))?;
            let n = parsed.readings();
            if a == 0 || b == 0 || a > n || b > n {
                return Err(Failure::reported(format!(
                    "error: `{sentence}` has {n} reading(s); cannot compare {a} and {b}"
                )));
            }
            let report = compare_readings(&parsed.result, a - 1, b - 1).expect("indices checked");
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("report serializes"))?;
            } else {
                writeln!(out, "{report}")?;
            }
            Ok(EXIT_OK)
        }
        Command::Suite {
            command:
                SuiteCommand::Run { inputs, suites, tags, engine, workers, baseline, store: dir, format, times, progress },
        } => {
            let tk = toolkit(&inputs)?;
            let engine = pick_engine(&tk, engine, &config)?;
            let paths = if suites.is_empty() { config.suite_dirs.clone() } else { suites };
            if paths.is_empty() {
                return Err(Failure::usage("error: no suite given and no suite directories configured"));
            }
            let mut classes: Vec<TestClass> = Vec::new();
            for p in &paths {
                classes.extend(load_suites(p)?);
            }
            for w in classes.iter().flat_map(|c| &c.warnings) {
                writeln!(err, "{w}")?;
            }
            let tags: BTreeSet<String> = tags.into_iter().collect();
            let selection = select_cases(&classes, &tags);
            for w in &selection.warnings {
                writeln!(err, "warning: {w}")?;
            }
            let mode = BaselineMode::from(baseline);
            let opts = RunOptions {
                engine,
                workers: workers.unwrap_or(config.workers).max(1),
                baseline: mode,
                store: if mode == BaselineMode::Ignore { None } else { Some(store(dir, &config)?) },
            };
            let err_lock = std::sync::Mutex::new(&mut *err);
            let report = |p: gramwb::testsuite::Progress| {
                if progress {
                    let mut e = err_lock.lock().expect("stderr");
                    let _ = writeln!(e, "[{}/{}] {:?} {}", p.done, p.total, p.row.status, p.row.sentence);
                }
            };
            let table = gramwb::testsuite::run_cases(&tk, &selection.cases, &opts, &report);
            let text = match format {
                TableFormat::Text => table.render_text(times),
                TableFormat::Json => format!("{}\n", serde_json::to_string_pretty(&table).expect("table serializes")),
                TableFormat::Csv => table.render_dsv(','),
                TableFormat::Tsv => table.render_dsv('\t'),
            };
            out.write_all(text.as_bytes())?;
            let changed = mode == BaselineMode::Compare && table.changed().next().is_some();
            Ok(if table.all_pass() && !changed { EXIT_OK } else { EXIT_REPORTED })
        }
        Command::Baseline { command } => {
            let (args, save) = match command {
                BaselineCommand::Save(a) => (a, true),
                BaselineCommand::Compare(a) => (a, false),
            };
            let tk = toolkit(&args.inputs)?;
            let engine = pick_engine(&tk, args.engine, &config)?;
            let parsed = parse_sentence(&tk, &args.sentence, engine, ParseOptions::default())
                .map_err(|e| Failure::reported(format!("error: {e}")))?;
            let store = store(args.store, &config)?;
            if save {
                let path = store.save(&parsed.result)?;
                writeln!(out, "saved {} reading(s) to {}", parsed.readings(), path.display())?;
                return Ok(EXIT_OK);
            }
            let loaded = store.load(&parsed.result.sentence, Some(tk.fingerprint()))?;
            for w in &loaded.warnings {
                writeln!(err, "warning: {w}")?;
            }
            let c = compare_results(&loaded.result, &parsed.result)
                .map_err(|e| Failure::reported(format!("error: {e}")))?;
            if args.json {
                writeln!(out, "{}", c.to_json_string())?;
            } else {
                write!(out, "{c}")?;
            }
            Ok(if c.is_equal() { EXIT_OK } else { EXIT_REPORTED })
        }
        Command::Serve { port, store } => {
            let mut config = config;
            if let Some(p) = port {
                config.port = p;
            }
            if let Some(s) = store {
                config.store_dir = s;
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(config, err)).map_err(|e| Failure::reported(format!("error: {e}")))?;
            Ok(EXIT_OK)
        }
        Command::Index { grammar, symbol, json } => {
            let src = read_file(&grammar)?;
            let name = grammar.display().to_string();
            let g =
                parse_grammar_file(&src, formalism_for_path(&grammar), Some(&name)).map_err(LoadError::Diagnostics)?;
            let index = grammar_index(&g);
            let entries: Vec<_> = match &symbol {
                Some(s) => match index.get_key_value(s) {
                    Some(e) => vec![e],
                    None => return Err(Failure::reported(format!("error: symbol `{s}` does not occur in {name}"))),
                },
                None => index.iter().collect(),
            };
            if json {
                let map: serde_json::Map<String, serde_json::Value> = entries
                    .iter()
                    .map(|(k, v)| (k.to_string(), serde_json::to_value(v).expect("index serializes")))
                    .collect();
                writeln!(out, "{}", serde_json::to_string_pretty(&map).expect("index serializes"))?;
                return Ok(EXIT_OK);
            }
            let rule = |r: &gramwb::grammar::RuleRef| match &r.label {
                Some(l) => format!("({l}) line {}", r.line),
                None => format!("line {}", r.line),
            };
            for (sym, e) in entries {
                writeln!(out, "{sym}")?;
                let defined: Vec<String> = e.defined_by.iter().map(rule).collect();
                let referenced: Vec<String> = e.referenced_by.iter().map(rule).collect();
                writeln!(out, "  defined by: {}", if defined.is_empty() { "-".into() } else { defined.join(", ") })?;
                writeln!(
                    out,
                    "  referenced by: {}",
                    if referenced.is_empty() { "-".into() } else { referenced.join(", ") }
                )?;
                let callers: Vec<String> = called_by(&index, &g, sym).into_iter().collect();
                if !callers.is_empty() {
                    writeln!(out, "  called by: {}", callers.join(", "))?;
                }
            }
            Ok(EXIT_OK)
        }
    }
}

/// Interface-rule files consulted by `check` when none is named: the file
/// with the grammar's stem, else every `.ifr` file in the same directory.
pub fn discover_rules(grammar: &Path) -> Vec<PathBuf> {
    let same_stem = grammar.with_extension("ifr");
    if same_stem.is_file() {
        return vec![same_stem];
    }
    let dir = match grammar.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "ifr"))
        .collect();
    found.sort();
    found
}

fn check(
    grammar: &Path,
    rules: Option<PathBuf>,
    json: bool,
    out: &mut (dyn Write + Send),
    err: &mut (dyn Write + Send),
) -> Result<i32, Failure> {
    let src = read_file(grammar)?;
    let name = grammar.display().to_string();
    let g = parse_grammar_file(&src, formalism_for_path(grammar), Some(&name)).map_err(LoadError::Diagnostics)?;
    let files = match rules {
        Some(r) => vec![r],
        None => discover_rules(grammar),
    };
    let mut preterminals = BTreeSet::new();
    let mut problems: Vec<Diagnostic> = Vec::new();
    for f in &files {
        let text = read_file(f)?;
        match InterfaceRules::parse(&text, Some(&f.display().to_string())) {
            Ok(r) => preterminals.extend(r.targets()),
            Err(d) => problems.extend(d),
        }
    }
    if !problems.is_empty() {
        return Err(Failure::reported(render_all(&problems)));
    }
    if files.is_empty() {
        writeln!(err, "note: no interface rules found; every category must be defined by a rule")?;
    }
    let report = run_all(&g, &preterminals);
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report.to_json()).expect("report serializes"))?;
    } else {
        write!(out, "{report}")?;
    }
    Ok(if report.findings.is_empty() { EXIT_OK } else { EXIT_REPORTED })
}
