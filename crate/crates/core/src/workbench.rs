//! Configuration, sessions, and the transport-independent service behind
//! the CLI's `serve` command.
//!
//! Every operation takes a JSON request object and returns a JSON response
//! carrying `session_id` and `fingerprint`. Failures are [`ServiceError`]s
//! with a stable `code`.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::Sender;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chart_parser::ChartFilter;
use crate::diagnostic::Diagnostic;
use crate::diagnostics::{edges_from_chart, edges_from_wfst, FailureReport};
use crate::grammar::{called_by, grammar_index, Formalism};
use crate::lexicon::{lexicalize, tokenize_sentence};
use crate::pipeline::{
    parse_sentence, parse_view, render_parse, LoadError, OutputFormat, ParseOptions, ParseOutput, Toolkit,
};
use crate::results::{compare_readings, compare_results, BaselineStore, Engine, ParseResult, StoreError};
use crate::syntax::Pos;
use crate::td_parser::{trace_channel, ControlMsg, TraceMode, TraceMsg};
use crate::testsuite::{
    default_workers, load_suites, run_cases, select_cases, BaselineMode, Progress, RunOptions, TestClass,
};

// ---------------------------------------------------------------------------
// Configuration

/// Environment variable naming the configuration file.
pub const CONFIG_ENV: &str = "GRAMWB_CONFIG";
pub const DEFAULT_PORT: u16 = 7878;
pub const DEFAULT_SESSION_TIMEOUT: Duration = Duration::from_secs(30 * 60);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Config {
    pub store_dir: PathBuf,
    pub suite_dirs: Vec<PathBuf>,
    /// Engine used when a request names none; `None` picks by formalism.
    pub engine: Option<Engine>,
    pub workers: usize,
    pub port: u16,
    pub session_timeout: Duration,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            store_dir: PathBuf::from("baselines"),
            suite_dirs: Vec::new(),
            engine: None,
            workers: default_workers(),
            port: DEFAULT_PORT,
            session_timeout: DEFAULT_SESSION_TIMEOUT,
        }
    }
}

impl Config {
    /// `key = value` lines; `#` or `//` start comments. Relative paths are
    /// taken relative to `base`.
    pub fn parse(src: &str, base: Option<&Path>, file: Option<&str>) -> Result<Config, Vec<Diagnostic>> {
        let mut c = Config::default();
        let mut errors = Vec::new();
        let resolve = |p: &str| match base {
            Some(b) if Path::new(p).is_relative() => b.join(p),
            _ => PathBuf::from(p),
        };
        for (i, raw) in src.lines().enumerate() {
            let line = i + 1;
            let text = raw.split("//").next().unwrap_or("");
            let text = text.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            let err = |msg: String| Diagnostic::error(Some(Pos { line, col: 1 }), msg).in_file(file);
            let Some((key, value)) = text.split_once('=') else {
                errors.push(err(format!("expected `key = value`, found `{text}`")));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            let number = |v: &str| v.parse::<u64>().map_err(|_| err(format!("`{key}` needs a number, found `{v}`")));
            match key {
                "store_dir" => c.store_dir = resolve(value),
                "suite_dirs" => {
                    c.suite_dirs = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(resolve).collect()
                }
                "engine" => match value {
                    "auto" => c.engine = None,
                    v => match v.parse() {
                        Ok(e) => c.engine = Some(e),
                        Err(m) => errors.push(err(m)),
                    },
                },
                "workers" => match number(value) {
                    Ok(0) => errors.push(err("`workers` must be at least 1".into())),
                    Ok(n) => c.workers = n as usize,
                    Err(e) => errors.push(e),
                },
                "port" => match number(value) {
                    Ok(n) if n <= u16::MAX as u64 => c.port = n as u16,
                    Ok(n) => errors.push(err(format!("port {n} out of range"))),
                    Err(e) => errors.push(e),
                },
                "session_timeout_minutes" => match number(value) {
                    Ok(n) => c.session_timeout = Duration::from_secs(n * 60),
                    Err(e) => errors.push(e),
                },
                _ => errors.push(err(format!("unknown configuration key `{key}`"))),
            }
        }
        if errors.is_empty() {
            Ok(c)
        } else {
            Err(errors)
        }
    }

    pub fn load(path: &Path) -> Result<Config, LoadError> {
        let src = crate::pipeline::read_file(path)?;
        Config::parse(&src, path.parent(), Some(&path.display().to_string())).map_err(LoadError::Diagnostics)
    }

    /// The file named by the environment variable, or the defaults.
    pub fn from_env() -> Result<Config, LoadError> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) => Config::load(Path::new(&p)),
            None => Ok(Config::default()),
        }
    }
}

// ---------------------------------------------------------------------------
// Errors

#[derive(Clone, Debug, PartialEq, Error, Serialize, Deserialize)]
#[error("{code}: {message}")]
pub struct ServiceError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

impl ServiceError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        ServiceError { code: code.to_string(), message: message.into(), details: None }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ServiceError::new("bad_request", message)
    }

    pub fn to_json(&self) -> Value {
        json!({ "error": self })
    }
}

fn load_error(e: LoadError) -> ServiceError {
    ServiceError::new("invalid_input", e.to_string()).with_details(json!({ "diagnostics": e.diagnostics() }))
}

fn store_error(e: StoreError) -> ServiceError {
    match e {
        StoreError::NoBaseline(s) => ServiceError::new("no_baseline", format!("no baseline for `{s}`")),
        e => ServiceError::new("store_error", e.to_string()),
    }
}

// ---------------------------------------------------------------------------
// Sessions

static ID_COUNTER: AtomicU64 = AtomicU64::new(0);

fn new_id(prefix: &str) -> String {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    let n = ID_COUNTER.fetch_add(1, Ordering::Relaxed);
    let h = Sha256::digest(format!("{}:{n}:{nanos}", std::process::id()).as_bytes());
    format!("{prefix}{}", &hex::encode(h)[..16])
}

/// Parses kept per session for `chart`, `fragments` and `compare`.
pub const KEPT_PARSES: usize = 32;

#[derive(Default)]
pub struct TraceState {
    pub events: Vec<TraceMsg>,
    pub finished: bool,
    pub parse_id: Option<u64>,
    pub error: Option<String>,
}

pub struct TraceRun {
    pub id: String,
    control: Sender<ControlMsg>,
    state: Arc<Mutex<TraceState>>,
}

pub struct Session {
    pub id: String,
    pub toolkit: Option<Arc<Toolkit>>,
    pub engine: Option<Engine>,
    pub trace_filter: Option<BTreeSet<String>>,
    parses: Vec<(u64, Arc<ParseOutput>)>,
    next_parse: u64,
    trace: Option<TraceRun>,
    last_used: Instant,
}

impl Session {
    fn new() -> Self {
        Session {
            id: new_id("s-"),
            toolkit: None,
            engine: None,
            trace_filter: None,
            parses: Vec::new(),
            next_parse: 1,
            trace: None,
            last_used: Instant::now(),
        }
    }

    fn fingerprint(&self) -> Value {
        self.toolkit.as_ref().map_or(Value::Null, |t| Value::String(t.fingerprint().to_string()))
    }

    fn toolkit(&self) -> Result<Arc<Toolkit>, ServiceError> {
        self.toolkit.clone().ok_or_else(|| ServiceError::new("no_grammar", "no grammar loaded in this session"))
    }

    fn keep(&mut self, out: ParseOutput) -> u64 {
        let id = self.next_parse;
        self.next_parse += 1;
        self.parses.push((id, Arc::new(out)));
        if self.parses.len() > KEPT_PARSES {
            self.parses.remove(0);
        }
        id
    }

    fn parse(&self, id: Option<u64>) -> Result<(u64, Arc<ParseOutput>), ServiceError> {
        let found = match id {
            Some(id) => self.parses.iter().find(|(i, _)| *i == id),
            None => self.parses.last(),
        };
        found.cloned().ok_or_else(|| match id {
            Some(id) => ServiceError::new("not_found", format!("no parse {id} in this session")),
            None => ServiceError::new("not_found", "no parse in this session yet"),
        })
    }
}

/// Engines that can run a grammar of the given formalism.
pub fn engine_supports(engine: Engine, formalism: Formalism) -> bool {
    match engine {
        Engine::Chart => formalism != Formalism::Lfg,
        Engine::Td => matches!(formalism, Formalism::Dcg | Formalism::Lfg),
    }
}

// ---------------------------------------------------------------------------
// Requests

fn request<T: DeserializeOwned>(v: Value) -> Result<T, ServiceError> {
    serde_json::from_value(v).map_err(|e| ServiceError::bad_request(format!("malformed request: {e}")))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadGrammarRequest {
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub grammar: Option<String>,
    #[serde(default)]
    pub grammar_path: Option<PathBuf>,
    #[serde(default)]
    pub formalism: Option<Formalism>,
    #[serde(default)]
    pub lexicon: Option<String>,
    #[serde(default)]
    pub lexicon_path: Option<PathBuf>,
    #[serde(default)]
    pub rules: Option<String>,
    #[serde(default)]
    pub rules_path: Option<PathBuf>,
    #[serde(default)]
    pub engine: Option<Engine>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionRequest {
    session_id: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParseRequest {
    session_id: String,
    sentence: String,
    #[serde(default)]
    engine: Option<Engine>,
    #[serde(default)]
    trace: Option<Vec<String>>,
    #[serde(default)]
    format: Option<OutputFormat>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChartRequest {
    session_id: String,
    #[serde(default)]
    parse_id: Option<u64>,
    #[serde(default)]
    labels: Option<Vec<String>>,
    #[serde(default)]
    from: Option<usize>,
    #[serde(default)]
    to: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParseRef {
    session_id: String,
    #[serde(default)]
    parse_id: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareRequest {
    #[serde(default)]
    session_id: Option<String>,
    #[serde(default)]
    parse_id: Option<u64>,
    #[serde(default)]
    reading_a: Option<usize>,
    #[serde(default)]
    reading_b: Option<usize>,
    #[serde(default)]
    old: Option<ParseResult>,
    #[serde(default)]
    new: Option<ParseResult>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceStartRequest {
    session_id: String,
    sentence: String,
    #[serde(default)]
    filter: Option<Vec<String>>,
    #[serde(default)]
    breakpoints: Vec<String>,
    #[serde(default)]
    mode: Option<TraceMode>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceControlRequest {
    session_id: String,
    #[serde(default)]
    command: Option<TraceMode>,
    /// `Some(None)` (JSON `null`) clears the filter.
    #[serde(default, deserialize_with = "present")]
    filter: Option<Option<Vec<String>>>,
    #[serde(default)]
    breakpoints: Option<Vec<String>>,
}

fn present<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Option<Vec<String>>>, D::Error> {
    Option::<Vec<String>>::deserialize(d).map(Some)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceEventsRequest {
    session_id: String,
    #[serde(default)]
    since: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteRunRequest {
    pub session_id: String,
    /// A suite file or directory; defaults to the configured suite directories.
    #[serde(default)]
    pub suite: Option<PathBuf>,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub baseline: Option<BaselineMode>,
    #[serde(default)]
    pub engine: Option<Engine>,
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaselineRequest {
    session_id: String,
    sentence: String,
    #[serde(default)]
    engine: Option<Engine>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexRequest {
    session_id: String,
    #[serde(default)]
    symbol: Option<String>,
}

// ---------------------------------------------------------------------------
// Service

/// Operation names accepted by [`Service::handle`].
pub const OPERATIONS: &[&str] = &[
    "session.create",
    "session.close",
    "load-grammar",
    "check",
    "parse",
    "chart",
    "fragments",
    "compare",
    "trace.start",
    "trace.control",
    "trace.events",
    "suite-run",
    "baseline.save",
    "baseline.compare",
    "grammar-index",
];

pub struct Service {
    pub config: Config,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

type Shared = Arc<Mutex<Session>>;

impl Service {
    pub fn new(config: Config) -> Self {
        Service { config, sessions: Mutex::new(HashMap::new()) }
    }

    pub fn session_count(&self) -> usize {
        self.expire_idle();
        self.sessions.lock().expect("sessions").len()
    }

    /// Drop sessions idle for longer than the configured timeout.
    pub fn expire_idle(&self) {
        let timeout = self.config.session_timeout;
        let mut map = self.sessions.lock().expect("sessions");
        map.retain(|_, s| s.try_lock().map_or(true, |s| s.last_used.elapsed() <= timeout));
    }

    fn create_session(&self) -> Shared {
        let s = Session::new();
        let id = s.id.clone();
        let shared = Arc::new(Mutex::new(s));
        self.sessions.lock().expect("sessions").insert(id, shared.clone());
        shared
    }

    fn session(&self, id: &str) -> Result<Shared, ServiceError> {
        self.expire_idle();
        let s = self
            .sessions
            .lock()
            .expect("sessions")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::new("session_not_found", format!("no session `{id}`")))?;
        s.lock().expect("session").last_used = Instant::now();
        Ok(s)
    }

    pub fn handle(&self, op: &str, req: Value) -> Result<Value, ServiceError> {
        match op {
            "session.create" => {
                let s = self.create_session();
                let id = s.lock().expect("session").id.clone();
                Ok(json!({ "session_id": id, "fingerprint": null }))
            }
            "session.close" => {
                let r: SessionRequest = request(req)?;
                self.session(&r.session_id)?;
                self.sessions.lock().expect("sessions").remove(&r.session_id);
                Ok(json!({ "session_id": r.session_id, "fingerprint": null, "closed": true }))
            }
            "load-grammar" => self.load_grammar(request(req)?),
            "check" => self.check(request(req)?),
            "parse" => self.parse(request(req)?),
            "chart" => self.chart(request(req)?),
            "fragments" => self.fragments(request(req)?),
            "compare" => self.compare(request(req)?),
            "trace.start" => self.trace_start(request(req)?),
            "trace.control" => self.trace_control(request(req)?),
            "trace.events" => self.trace_events(request(req)?),
            "suite-run" => self.suite_run(request(req)?, &|_| {}),
            "baseline.save" => self.baseline(request(req)?, true),
            "baseline.compare" => self.baseline(request(req)?, false),
            "grammar-index" => self.index(request(req)?),
            _ => Err(ServiceError::new("unknown_operation", format!("unknown operation `{op}`"))),
        }
    }

    fn load_grammar(&self, r: LoadGrammarRequest) -> Result<Value, ServiceError> {
        let text = |inline: Option<String>,
                    path: &Option<PathBuf>,
                    what: &str|
         -> Result<(String, Option<String>), ServiceError> {
            match (inline, path) {
                (Some(t), None) => Ok((t, None)),
                (None, Some(p)) => {
                    crate::pipeline::read_file(p).map(|t| (t, Some(p.display().to_string()))).map_err(load_error)
                }
                (None, None) => Ok((String::new(), None)),
                (Some(_), Some(_)) => {
                    Err(ServiceError::bad_request(format!("give either `{what}` or `{what}_path`, not both")))
                }
            }
        };
        let (grammar, gname) = text(r.grammar, &r.grammar_path, "grammar")?;
        if grammar.trim().is_empty() {
            return Err(ServiceError::bad_request("no grammar given"));
        }
        let (lexicon, lname) = text(r.lexicon, &r.lexicon_path, "lexicon")?;
        let (rules, rname) = text(r.rules, &r.rules_path, "rules")?;
        let formalism = r
            .formalism
            .or_else(|| r.grammar_path.as_deref().map(crate::pipeline::formalism_for_path))
            .unwrap_or(Formalism::Idlp);
        let tk = Toolkit::from_sources(
            &grammar,
            gname.as_deref(),
            formalism,
            &lexicon,
            lname.as_deref(),
            &rules,
            rname.as_deref(),
        )
        .map_err(load_error)?;
        if let Some(e) = r.engine {
            if !engine_supports(e, tk.grammar.formalism) {
                return Err(ServiceError::new(
                    "engine_mismatch",
                    format!("the {e} engine does not handle {} grammars", tk.grammar.formalism),
                ));
            }
        }
        let shared = match &r.session_id {
            Some(id) => self.session(id)?,
            None => self.create_session(),
        };
        let mut s = shared.lock().expect("session");
        s.engine = r.engine;
        s.parses.clear();
        s.trace = None;
        let resp = json!({
            "session_id": s.id,
            "fingerprint": tk.fingerprint(),
            "formalism": tk.grammar.formalism,
            "start": tk.grammar.start,
            "rules": tk.grammar.source.rules.len(),
            "lexicon_entries": tk.lexicon.len(),
            "interface_rules": tk.rules.rules.len(),
            "warnings": tk.rules.warnings,
            "checks": tk.checks.to_json(),
        });
        s.toolkit = Some(Arc::new(tk));
        Ok(resp)
    }

    fn check(&self, r: SessionRequest) -> Result<Value, ServiceError> {
        let shared = self.session(&r.session_id)?;
        let s = shared.lock().expect("session");
        let tk = s.toolkit()?;
        Ok(json!({ "session_id": s.id, "fingerprint": tk.fingerprint(), "checks": tk.checks.to_json() }))
    }

    fn engine_for(&self, s: &Session, tk: &Toolkit, requested: Option<Engine>) -> Result<Engine, ServiceError> {
        let e = requested.or(s.engine).or(self.config.engine).unwrap_or_else(|| tk.default_engine());
        if engine_supports(e, tk.grammar.formalism) {
            Ok(e)
        } else if requested.is_none() {
            Ok(tk.default_engine())
        } else {
            Err(ServiceError::new(
                "engine_mismatch",
                format!("the {e} engine does not handle {} grammars", tk.grammar.formalism),
            ))
        }
    }

    fn parse(&self, r: ParseRequest) -> Result<Value, ServiceError> {
        let shared = self.session(&r.session_id)?;
        let mut s = shared.lock().expect("session");
        let tk = s.toolkit()?;
        let engine = self.engine_for(&s, &tk, r.engine)?;
        let trace = r.trace.map(|t| t.into_iter().collect::<BTreeSet<_>>());
        if trace.is_some() {
            s.trace_filter = trace.clone();
        }
        let out = parse_sentence(&tk, &r.sentence, engine, ParseOptions { trace, ..Default::default() })
            .map_err(|e| ServiceError::new("parse_error", e.to_string()).with_details(json!(e)))?;
        let format = r.format.unwrap_or(OutputFormat::Tree);
        let view = parse_view(&out, format);
        let text = render_parse(&out, format);
        let elapsed = out.elapsed_ms;
        let id = s.keep(out);
        Ok(json!({
            "session_id": s.id,
            "fingerprint": tk.fingerprint(),
            "parse_id": id,
            "elapsed_ms": elapsed,
            "parse": view,
            "text": text,
        }))
    }

    fn chart(&self, r: ChartRequest) -> Result<Value, ServiceError> {
        let shared = self.session(&r.session_id)?;
        let s = shared.lock().expect("session");
        let (id, out) = s.parse(r.parse_id)?;
        let within = match (r.from, r.to) {
            (None, None) => None,
            (a, b) => Some((a.unwrap_or(0), b.unwrap_or(usize::MAX))),
        };
        let filter = ChartFilter { labels: r.labels.map(|l| l.into_iter().collect()), within };
        let mut resp = json!({
            "session_id": s.id,
            "fingerprint": out.result.fingerprint,
            "parse_id": id,
            "tokens": out.result.tokens,
        });
        match (&out.chart, &out.wfst) {
            (Some(c), _) => {
                let edges: Vec<_> = c.edges.iter().filter(|e| filter.accepts(e)).collect();
                resp["edges"] = json!(edges);
                resp["total_edges"] = json!(c.len());
            }
            (None, Some(w)) => resp["wfst"] = json!(w),
            (None, None) => {}
        }
        Ok(resp)
    }

    fn fragments(&self, r: ParseRef) -> Result<Value, ServiceError> {
        let shared = self.session(&r.session_id)?;
        let s = shared.lock().expect("session");
        let (id, out) = s.parse(r.parse_id)?;
        let report = match &out.failure {
            Some(f) => f.clone(),
            None => {
                let tk = s.toolkit()?;
                let edges = match (&out.chart, &out.wfst) {
                    (Some(c), _) => edges_from_chart(c),
                    (None, Some(w)) => {
                        let (input, _) = lexicalize(&out.result.tokens, &tk.lexicon, &tk.rules)
                            .map_err(|e| ServiceError::new("parse_error", e.to_string()))?;
                        edges_from_wfst(w, &input)
                    }
                    (None, None) => Vec::new(),
                };
                FailureReport::new(&edges, &out.result.tokens)
            }
        };
        Ok(json!({
            "session_id": s.id,
            "fingerprint": out.result.fingerprint,
            "parse_id": id,
            "readings": out.readings(),
            "report": report,
            "text": report.to_string(),
        }))
    }

    fn compare(&self, r: CompareRequest) -> Result<Value, ServiceError> {
        if let (Some(old), Some(new)) = (&r.old, &r.new) {
            let c = compare_results(old, new).map_err(|e| ServiceError::new("sentence_mismatch", e.to_string()))?;
            return Ok(json!({
                "session_id": r.session_id,
                "fingerprint": new.fingerprint,
                "verdict": c.verdict(),
                "comparison": c,
                "text": c.to_string(),
            }));
        }
        let id = r
            .session_id
            .as_deref()
            .ok_or_else(|| ServiceError::bad_request("give `old` and `new`, or `session_id`"))?;
        let shared = self.session(id)?;
        let s = shared.lock().expect("session");
        let (pid, out) = s.parse(r.parse_id)?;
        let (a, b) = (r.reading_a.unwrap_or(0), r.reading_b.unwrap_or(1));
        let report = compare_readings(&out.result, a, b)
            .ok_or_else(|| ServiceError::new("not_found", format!("parse {pid} has {} reading(s)", out.readings())))?;
        Ok(json!({
            "session_id": s.id,
            "fingerprint": out.result.fingerprint,
            "parse_id": pid,
            "verdict": report.verdict,
            "report": report,
            "text": report.to_string(),
        }))
    }

    fn trace_start(&self, r: TraceStartRequest) -> Result<Value, ServiceError> {
        let shared = self.session(&r.session_id)?;
        let mut s = shared.lock().expect("session");
        let tk = s.toolkit()?;
        if !engine_supports(Engine::Td, tk.grammar.formalism) {
            return Err(ServiceError::new(
                "engine_mismatch",
                format!(
                    "interactive tracing needs the top-down engine, which does not handle {} grammars",
                    tk.grammar.formalism
                ),
            ));
        }
        if tokenize_sentence(&r.sentence).is_empty() {
            return Err(ServiceError::bad_request("empty sentence"));
        }
        if let Some(prev) = s.trace.take() {
            let _ = prev.control.send(ControlMsg::Mode(TraceMode::Abort));
        }
        let (ctl, link) = trace_channel();
        let (control, events) = ctl.into_parts();
        let filter: Option<BTreeSet<String>> = r.filter.map(|f| f.into_iter().collect());
        let _ = control.send(ControlMsg::Mode(r.mode.unwrap_or(TraceMode::Run)));
        let state = Arc::new(Mutex::new(TraceState::default()));
        let pump_state = state.clone();
        std::thread::spawn(move || {
            for msg in events {
                pump_state.lock().expect("trace state").events.push(msg);
            }
        });
        let parse_state = state.clone();
        let session = shared.clone();
        let sentence = r.sentence.clone();
        let opts = ParseOptions {
            trace: Some(filter.unwrap_or_default()),
            breakpoints: r.breakpoints.into_iter().collect(),
            link: Some(link),
        };
        std::thread::spawn(move || {
            let result = parse_sentence(&tk, &sentence, Engine::Td, opts);
            let mut st = parse_state.lock().expect("trace state");
            match result {
                Ok(out) => st.parse_id = Some(session.lock().expect("session").keep(out)),
                Err(e) => st.error = Some(e.to_string()),
            }
            st.finished = true;
        });
        let id = new_id("t-");
        s.trace = Some(TraceRun { id: id.clone(), control, state });
        Ok(json!({ "session_id": s.id, "fingerprint": s.fingerprint(), "trace_id": id }))
    }

    fn trace_control(&self, r: TraceControlRequest) -> Result<Value, ServiceError> {
        let shared = self.session(&r.session_id)?;
        let s = shared.lock().expect("session");
        let run = s.trace.as_ref().ok_or_else(|| ServiceError::new("not_found", "no trace running in this session"))?;
        let mut msgs = Vec::new();
        if let Some(f) = r.filter {
            msgs.push(ControlMsg::SetFilter(f.map(|v| v.into_iter().collect())));
        }
        if let Some(b) = r.breakpoints {
            msgs.push(ControlMsg::SetBreakpoints(b.into_iter().collect()));
        }
        if let Some(m) = r.command {
            msgs.push(ControlMsg::Mode(m));
        }
        if msgs.is_empty() {
            return Err(ServiceError::bad_request("nothing to do: give `command`, `filter` or `breakpoints`"));
        }
        let delivered = msgs.into_iter().all(|m| run.control.send(m).is_ok());
        Ok(json!({ "session_id": s.id, "fingerprint": s.fingerprint(), "trace_id": run.id, "delivered": delivered }))
    }

    fn trace_events(&self, r: TraceEventsRequest) -> Result<Value, ServiceError> {
        let shared = self.session(&r.session_id)?;
        let s = shared.lock().expect("session");
        let run = s.trace.as_ref().ok_or_else(|| ServiceError::new("not_found", "no trace running in this session"))?;
        let st = run.state.lock().expect("trace state");
        let since = r.since.min(st.events.len());
        Ok(json!({
            "session_id": s.id,
            "fingerprint": s.fingerprint(),
            "trace_id": run.id,
            "events": &st.events[since..],
            "next": st.events.len(),
            "finished": st.finished,
            "parse_id": st.parse_id,
            "error": st.error,
        }))
    }

    fn store(&self) -> Result<BaselineStore, ServiceError> {
        BaselineStore::open(&self.config.store_dir).map_err(store_error)
    }

    /// Run a suite, reporting each finished row through `progress`.
    pub fn suite_run(&self, r: SuiteRunRequest, progress: &(dyn Fn(Progress) + Sync)) -> Result<Value, ServiceError> {
        let shared = self.session(&r.session_id)?;
        let (tk, engine, sid) = {
            let s = shared.lock().expect("session");
            let tk = s.toolkit()?;
            let e = self.engine_for(&s, &tk, r.engine)?;
            (tk, e, s.id.clone())
        };
        let paths = match &r.suite {
            Some(p) => vec![p.clone()],
            None if self.config.suite_dirs.is_empty() => {
                return Err(ServiceError::bad_request("no `suite` given and no suite directories configured"))
            }
            None => self.config.suite_dirs.clone(),
        };
        let mut classes: Vec<TestClass> = Vec::new();
        for p in &paths {
            classes.extend(load_suites(p).map_err(load_error)?);
        }
        let tags: BTreeSet<String> = r.tags.into_iter().collect();
        let selection = select_cases(&classes, &tags);
        let mode = r.baseline.unwrap_or(BaselineMode::Ignore);
        let opts = RunOptions {
            engine,
            workers: r.workers.unwrap_or(self.config.workers).max(1),
            baseline: mode,
            store: if mode == BaselineMode::Ignore { None } else { Some(self.store()?) },
        };
        let table = run_cases(&tk, &selection.cases, &opts, progress);
        let warnings: Vec<&Diagnostic> = classes.iter().flat_map(|c| &c.warnings).collect();
        Ok(json!({
            "session_id": sid,
            "fingerprint": tk.fingerprint(),
            "warnings": warnings,
            "selection_warnings": selection.warnings,
            "table": table,
            "text": table.render_text(false),
        }))
    }

    fn baseline(&self, r: BaselineRequest, save: bool) -> Result<Value, ServiceError> {
        let shared = self.session(&r.session_id)?;
        let s = shared.lock().expect("session");
        let tk = s.toolkit()?;
        let engine = self.engine_for(&s, &tk, r.engine)?;
        let out = parse_sentence(&tk, &r.sentence, engine, ParseOptions::default())
            .map_err(|e| ServiceError::new("parse_error", e.to_string()))?;
        let store = self.store()?;
        if save {
            let path = store.save(&out.result).map_err(store_error)?;
            return Ok(json!({
                "session_id": s.id,
                "fingerprint": tk.fingerprint(),
                "saved": path,
                "readings": out.readings(),
            }));
        }
        let loaded = store.load(&out.result.sentence, Some(tk.fingerprint())).map_err(store_error)?;
        let c = compare_results(&loaded.result, &out.result)
            .map_err(|e| ServiceError::new("sentence_mismatch", e.to_string()))?;
        Ok(json!({
            "session_id": s.id,
            "fingerprint": tk.fingerprint(),
            "verdict": c.verdict(),
            "comparison": c,
            "warnings": loaded.warnings,
            "text": c.to_string(),
        }))
    }

    fn index(&self, r: IndexRequest) -> Result<Value, ServiceError> {
        let shared = self.session(&r.session_id)?;
        let s = shared.lock().expect("session");
        let tk = s.toolkit()?;
        let g = &tk.grammar.source;
        let index = grammar_index(g);
        let mut resp = json!({ "session_id": s.id, "fingerprint": tk.fingerprint() });
        match r.symbol {
            Some(sym) => {
                let entry = index.get(&sym).ok_or_else(|| {
                    ServiceError::new("not_found", format!("symbol `{sym}` does not occur in the grammar"))
                })?;
                resp["symbol"] = json!(sym);
                resp["entry"] = json!(entry);
                resp["called_by"] = json!(called_by(&index, g, &sym));
            }
            None => resp["index"] = json!(index),
        }
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RULE_1: &str = "(1) S -> NP[X], VP[X] | X = [kas=nom].\n";

    fn service() -> Service {
        Service::new(Config::default())
    }

    #[test]
    fn config_file() {
        let c = Config::parse(
            "# settings\nstore_dir = out\nsuite_dirs = a, b\nengine = td\nworkers = 3\nport = 9000\nsession_timeout_minutes = 5\n",
            Some(Path::new("/base")),
            None,
        )
        .unwrap();
        assert_eq!(c.store_dir, PathBuf::from("/base/out"));
        assert_eq!(c.suite_dirs, [PathBuf::from("/base/a"), PathBuf::from("/base/b")]);
        assert_eq!((c.engine, c.workers, c.port), (Some(Engine::Td), 3, 9000));
        assert_eq!(c.session_timeout, Duration::from_secs(300));
        let e = Config::parse("colour = red\nport = x\n", None, Some("c.conf")).unwrap_err();
        assert_eq!(e.len(), 2);
        assert_eq!(Config::default().session_timeout, Duration::from_secs(1800));
    }

    #[test]
    fn load_rule_one_reports_undefined_categories() {
        let svc = service();
        let resp = svc.handle("load-grammar", json!({ "grammar": RULE_1 })).unwrap();
        assert!(resp["session_id"].as_str().unwrap().starts_with("s-"));
        assert_eq!(resp["fingerprint"].as_str().unwrap().len(), 64);
        let undefined: Vec<&str> = resp["checks"]["findings"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|f| f["kind"] == "undefined_nonterminal")
            .map(|f| f["witness"][0].as_str().unwrap())
            .collect();
        assert_eq!(undefined, ["NP", "VP"]);
    }

    #[test]
    fn unknown_session_and_malformed_request() {
        let svc = service();
        let e = svc.handle("check", json!({ "session_id": "nope" })).unwrap_err();
        assert_eq!(e.code, "session_not_found");
        let e = svc.handle("parse", json!({ "sentence": 3 })).unwrap_err();
        assert_eq!(e.code, "bad_request");
        let e = svc.handle("frobnicate", json!({})).unwrap_err();
        assert_eq!(e.code, "unknown_operation");
    }

    #[test]
    fn idle_sessions_expire() {
        let svc = Service::new(Config { session_timeout: Duration::from_millis(20), ..Config::default() });
        svc.handle("session.create", json!({})).unwrap();
        assert_eq!(svc.session_count(), 1);
        std::thread::sleep(Duration::from_millis(60));
        assert_eq!(svc.session_count(), 0);
    }

    #[test]
    fn engine_compatibility() {
        assert!(engine_supports(Engine::Chart, Formalism::Idlp));
        assert!(engine_supports(Engine::Chart, Formalism::Dcg));
        assert!(!engine_supports(Engine::Chart, Formalism::Lfg));
        assert!(!engine_supports(Engine::Td, Formalism::Idlp));
        let svc = service();
        let e = svc.handle("load-grammar", json!({ "grammar": RULE_1, "engine": "td" })).unwrap_err();
        assert_eq!(e.code, "engine_mismatch");
    }

    fn demo(file: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo").join(file)
    }

    fn loaded(svc: &Service, grammar: &str) -> String {
        let resp = svc
            .handle(
                "load-grammar",
                json!({
                    "grammar_path": demo(grammar),
                    "lexicon_path": demo("demo.lex"),
                    "rules_path": demo("demo.ifr"),
                }),
            )
            .unwrap();
        resp["session_id"].as_str().unwrap().to_string()
    }

    fn wait_for(svc: &Service, sid: &str, done: impl Fn(&Value) -> bool) -> Value {
        let start = Instant::now();
        loop {
            let ev = svc.handle("trace.events", json!({ "session_id": sid })).unwrap();
            if done(&ev) {
                return ev;
            }
            assert!(start.elapsed() < Duration::from_secs(10), "trace did not progress: {ev}");
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    #[test]
    fn parse_then_inspect_chart_fragments_and_readings() {
        let svc = service();
        let sid = loaded(&svc, "paper.idlp");
        let resp = svc.handle("parse", json!({ "session_id": sid, "sentence": "der Hund schläft" })).unwrap();
        assert_eq!(resp["parse"]["reading_count"], 1);
        assert_eq!(resp["parse_id"], 1);
        let chart = svc.handle("chart", json!({ "session_id": sid, "labels": ["NP"] })).unwrap();
        let edges = chart["edges"].as_array().unwrap();
        assert!(!edges.is_empty());
        assert!(edges.iter().all(|e| e["label"] == "NP"));
        let bad = svc.handle("parse", json!({ "session_id": sid, "sentence": "Hund der schläft" })).unwrap();
        assert_eq!(bad["parse"]["reading_count"], 0);
        let frag = svc.handle("fragments", json!({ "session_id": sid })).unwrap();
        assert_eq!(frag["report"]["fragments"]["total"], 3);
        let cmp = svc.handle("compare", json!({ "session_id": sid, "parse_id": 1 })).unwrap_err();
        assert_eq!(cmp.code, "not_found");
    }

    #[test]
    fn stepping_trace_pauses_and_finishes() {
        let svc = service();
        let sid = loaded(&svc, "paper.dcg");
        let start = svc
            .handle("trace.start", json!({ "session_id": sid, "sentence": "der Hund schläft", "mode": "step" }))
            .unwrap();
        assert!(start["trace_id"].as_str().unwrap().starts_with("t-"));
        let paused = wait_for(&svc, &sid, |ev| ev["events"].as_array().unwrap().iter().any(|m| m["type"] == "paused"));
        assert_eq!(paused["finished"], false);
        svc.handle("trace.control", json!({ "session_id": sid, "command": "run" })).unwrap();
        let done = wait_for(&svc, &sid, |ev| ev["finished"] == true);
        let events = done["events"].as_array().unwrap();
        assert_eq!(events.last().unwrap()["type"], "finished");
        assert_eq!(events.last().unwrap()["readings"], 1);
        let pid = done["parse_id"].as_u64().unwrap();
        assert!(svc.handle("chart", json!({ "session_id": sid, "parse_id": pid })).unwrap()["wfst"].is_object());
    }

    #[test]
    fn tracing_an_idlp_grammar_is_refused() {
        let svc = service();
        let sid = loaded(&svc, "paper.idlp");
        let e = svc.handle("trace.start", json!({ "session_id": sid, "sentence": "der Hund schläft" })).unwrap_err();
        assert_eq!(e.code, "engine_mismatch");
    }
}
