//! One sentence from text to readings: tokenize, lexicalize, run an engine,
//! build trees, solve f-structures, and diagnose failures.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart_parser::{chart_trace, parse_chart, Chart, ChartError, ChartFilter, Edge};
use crate::checks::{run_all, CheckReport};
use crate::diagnostic::Diagnostic;
use crate::diagnostics::{edges_from_chart, edges_from_wfst, FailureReport};
use crate::featstruct::{FeatureStructure, RenderStyle};
use crate::fstructure::solve_fstructure;
use crate::grammar::{parse_grammar_file, CompiledGrammar, Formalism};
use crate::lexicon::{lexicalize, tokenize_sentence, EvalError, InterfaceRules, LexTrace, Lexicalized, Lexicon};
use crate::results::{Engine, ParseResult, Reading};
use crate::td_parser::{parse_topdown, Port, TdError, TdOptions, TdOutcome, TraceEvent, TraceLink, WfsTable};
use crate::tree::{build_tree, render_tree, Derivation, ParseTree, TreeFormat};

/// A compiled grammar with the lexicon and interface rules it is used with.
#[derive(Clone, Debug)]
pub struct Toolkit {
    pub grammar: CompiledGrammar,
    pub checks: CheckReport,
    pub lexicon: Lexicon,
    pub rules: InterfaceRules,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{}", crate::diagnostic::render_all(.0))]
    Diagnostics(Vec<Diagnostic>),
}

impl LoadError {
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        match self {
            LoadError::Io { path, message } => vec![Diagnostic::error(None, format!("cannot read {path}: {message}"))],
            LoadError::Diagnostics(d) => d.clone(),
        }
    }
}

pub fn read_file(path: &Path) -> Result<String, LoadError> {
    std::fs::read_to_string(path)
        .map_err(|e| LoadError::Io { path: path.display().to_string(), message: e.to_string() })
}

/// Formalism implied by a file extension, used when the file has no header.
pub fn formalism_for_path(path: &Path) -> Formalism {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("dcg") => Formalism::Dcg,
        Some("lfg") => Formalism::Lfg,
        Some("gpsg") => Formalism::Gpsg,
        _ => Formalism::Idlp,
    }
}

impl Toolkit {
    /// Build from source texts. Static-check errors do not prevent loading;
    /// they are kept in `checks`.
    pub fn from_sources(
        grammar: &str,
        grammar_name: Option<&str>,
        default_formalism: Formalism,
        lexicon: &str,
        lexicon_name: Option<&str>,
        rules: &str,
        rules_name: Option<&str>,
    ) -> Result<Toolkit, LoadError> {
        let g = parse_grammar_file(grammar, default_formalism, grammar_name).map_err(LoadError::Diagnostics)?;
        let lexicon = Lexicon::parse(lexicon, lexicon_name).map_err(LoadError::Diagnostics)?;
        let rules = InterfaceRules::parse(rules, rules_name).map_err(LoadError::Diagnostics)?;
        let checks = run_all(&g, &rules.targets());
        let grammar = CompiledGrammar::compile(&g).map_err(LoadError::Diagnostics)?;
        Ok(Toolkit { grammar, checks, lexicon, rules })
    }

    pub fn load(grammar: &Path, lexicon: &Path, rules: &Path) -> Result<Toolkit, LoadError> {
        Toolkit::from_sources(
            &read_file(grammar)?,
            Some(&grammar.display().to_string()),
            formalism_for_path(grammar),
            &read_file(lexicon)?,
            Some(&lexicon.display().to_string()),
            &read_file(rules)?,
            Some(&rules.display().to_string()),
        )
    }

    /// The engine used when none is requested: chart for ID/LP grammars,
    /// top-down otherwise.
    pub fn default_engine(&self) -> Engine {
        match self.grammar.formalism {
            Formalism::Idlp | Formalism::Gpsg => Engine::Chart,
            Formalism::Dcg | Formalism::Lfg => Engine::Td,
        }
    }

    pub fn fingerprint(&self) -> &str {
        &self.grammar.fingerprint
    }
}

#[derive(Default)]
pub struct ParseOptions {
    /// Categories to trace; `None` disables tracing, an empty set traces all.
    pub trace: Option<BTreeSet<String>>,
    pub breakpoints: BTreeSet<String>,
    /// Interactive trace control for the top-down engine.
    pub link: Option<TraceLink>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseError {
    #[error("empty sentence")]
    EmptyInput,
    #[error("{message}")]
    Lexicon { message: String },
    #[error(transparent)]
    Chart(ChartError),
    #[error(transparent)]
    TopDown(TdError),
    #[error("internal error: {message}")]
    Internal { message: String },
}

impl From<EvalError> for ParseError {
    fn from(e: EvalError) -> Self {
        ParseError::Lexicon { message: e.to_string() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParseOutput {
    pub result: ParseResult,
    pub lexicon_trace: Vec<LexTrace>,
    pub unknown_words: Vec<String>,
    /// Trees whose f-structure turned out inconsistent; not counted as readings.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<Reading>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chart: Option<Chart>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wfst: Option<WfsTable>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceEvent>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chart_trace: Vec<Edge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<TdOutcome>,
    /// The chart hit its edge limit.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
    /// Present whenever there is no reading.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureReport>,
    pub elapsed_ms: f64,
}

impl ParseOutput {
    pub fn readings(&self) -> usize {
        self.result.readings.len()
    }
}

pub fn parse_sentence(
    tk: &Toolkit,
    sentence: &str,
    engine: Engine,
    opts: ParseOptions,
) -> Result<ParseOutput, ParseError> {
    let started = Instant::now();
    let tokens = tokenize_sentence(sentence);
    if tokens.is_empty() {
        return Err(ParseError::EmptyInput);
    }
    let (input, lexicon_trace) = lexicalize(&tokens, &tk.lexicon, &tk.rules)?;
    let unknown_words = input.unknown_words().into_iter().map(|(_, w)| w.to_string()).collect();
    let g = &tk.grammar;
    let mut out = ParseOutput {
        result: ParseResult::new(&tokens.join(" "), tokens.clone(), Vec::new(), engine, &g.fingerprint),
        lexicon_trace,
        unknown_words,
        rejected: Vec::new(),
        chart: None,
        wfst: None,
        trace: Vec::new(),
        chart_trace: Vec::new(),
        outcome: None,
        truncated: false,
        failure: None,
        elapsed_ms: 0.0,
    };
    let derivations = match engine {
        Engine::Chart => {
            let p = parse_chart(g, &input).map_err(ParseError::Chart)?;
            if let Some(labels) = &opts.trace {
                let filter = ChartFilter { labels: (!labels.is_empty()).then(|| labels.clone()), within: None };
                out.chart_trace = chart_trace(&p.chart, &filter).cloned().collect();
            }
            out.truncated = p.truncated;
            out.chart = Some(p.chart);
            p.derivations
        }
        Engine::Td => {
            let td_opts = TdOptions {
                memo: true,
                trace: opts.trace.is_some() || opts.link.is_some(),
                filter: opts.trace.clone().filter(|s| !s.is_empty()),
                breakpoints: opts.breakpoints.clone(),
                link: opts.link,
            };
            let p = parse_topdown(g, &input, td_opts).map_err(ParseError::TopDown)?;
            out.trace = p.trace;
            out.outcome = Some(p.outcome);
            out.wfst = Some(p.wfst);
            p.derivations
        }
    };
    let (readings, rejected) = readings_from(&derivations, g, &input)?;
    out.result.readings = readings;
    out.rejected = rejected;
    if out.result.readings.is_empty() {
        let edges = match (&out.chart, &out.wfst) {
            (Some(c), _) => edges_from_chart(c),
            (None, Some(w)) => edges_from_wfst(w, &input),
            (None, None) => Vec::new(),
        };
        out.failure = Some(FailureReport::new(&edges, &tokens));
    }
    out.elapsed_ms = started.elapsed().as_secs_f64() * 1000.0;
    Ok(out)
}

/// Trees for derivations; for LFG also f-structures, separating out the
/// inconsistent ones.
pub fn readings_from(
    derivations: &[Derivation],
    g: &CompiledGrammar,
    input: &Lexicalized,
) -> Result<(Vec<Reading>, Vec<Reading>), ParseError> {
    let mut readings = Vec::new();
    let mut rejected = Vec::new();
    for d in derivations {
        let tree = build_tree(d, g, input, 0).map_err(|e| ParseError::Internal { message: e.to_string() })?;
        let mut r = Reading::new(tree);
        if g.formalism == Formalism::Lfg {
            match solve_fstructure(&r.tree) {
                Ok(f) => r.fstructure = Some(f),
                Err(e) => {
                    r.fstructure_error = Some(e);
                    rejected.push(r);
                    continue;
                }
            }
        }
        readings.push(r);
    }
    Ok((readings, rejected))
}

pub fn render_trace_event(e: &TraceEvent) -> String {
    let port = match e.port {
        Port::Entry => "ENTRY",
        Port::Exit => "EXIT ",
        Port::Fail => "FAIL ",
        Port::Redo => "REDO ",
    };
    let mut s = format!(
        "{}{port} ({}) {}{} @{}",
        "  ".repeat(e.depth.min(40)),
        e.depth,
        e.goal,
        e.features.render(RenderStyle::Bracketed),
        e.position
    );
    if let Some(end) = e.end {
        let _ = write!(s, "-{end}");
    }
    if e.from_table {
        s.push_str(" [table]");
    }
    s
}

pub fn render_chart_edge(e: &Edge) -> String {
    let mut s = format!("#{} [{},{}] {}{}", e.id, e.from, e.to, e.label, e.features.render(RenderStyle::Bracketed));
    if !e.needed.is_empty() {
        let _ = write!(s, " needs {}", e.needed.join(", "));
    }
    s
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    /// Labels only.
    #[default]
    Tree,
    /// Every node with its feature structure.
    Features,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tree" => Ok(OutputFormat::Tree),
            "features" => Ok(OutputFormat::Features),
            "json" => Ok(OutputFormat::Json),
            _ => Err(format!("unknown format `{s}` (expected tree, features or json)")),
        }
    }
}

impl OutputFormat {
    pub fn tree_format(self) -> TreeFormat {
        match self {
            OutputFormat::Tree => TreeFormat::AsciiTree,
            OutputFormat::Features => TreeFormat::IndentedFeatures,
            OutputFormat::Json => TreeFormat::Json,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadingView {
    pub tree: ParseTree,
    pub rendered: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fstructure: Option<FeatureStructure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fstructure_text: Option<String>,
}

/// Deterministic summary of a parse, shared by the CLI's JSON output and
/// the service.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParseView {
    pub sentence: String,
    pub tokens: Vec<String>,
    pub engine: Engine,
    pub fingerprint: String,
    pub reading_count: usize,
    pub readings: Vec<ReadingView>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unknown_words: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<Reading>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<TdOutcome>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<String>,
}

pub fn parse_view(out: &ParseOutput, format: OutputFormat) -> ParseView {
    let tf = match format {
        OutputFormat::Json => TreeFormat::IndentedFeatures,
        f => f.tree_format(),
    };
    ParseView {
        sentence: out.result.sentence.clone(),
        tokens: out.result.tokens.clone(),
        engine: out.result.engine,
        fingerprint: out.result.fingerprint.clone(),
        reading_count: out.result.readings.len(),
        readings: out
            .result
            .readings
            .iter()
            .map(|r| ReadingView {
                tree: r.tree.clone(),
                rendered: render_tree(&r.tree, tf),
                fstructure: r.fstructure.clone(),
                fstructure_text: r.fstructure.as_ref().map(|f| f.render(RenderStyle::Indented)),
            })
            .collect(),
        unknown_words: out.unknown_words.clone(),
        rejected: out.rejected.clone(),
        failure: out.failure.clone(),
        outcome: out.outcome,
        truncated: out.truncated,
        trace: trace_lines(out),
    }
}

pub fn trace_lines(out: &ParseOutput) -> Vec<String> {
    out.trace.iter().map(render_trace_event).chain(out.chart_trace.iter().map(render_chart_edge)).collect()
}

/// Human-readable parse output.
pub fn render_parse(out: &ParseOutput, format: OutputFormat) -> String {
    if format == OutputFormat::Json {
        let mut s = serde_json::to_string_pretty(&parse_view(out, format)).expect("parse view serializes");
        s.push('\n');
        return s;
    }
    let mut s = String::new();
    for line in trace_lines(out) {
        let _ = writeln!(s, "{line}");
    }
    if !out.unknown_words.is_empty() {
        let _ = writeln!(s, "unknown words: {}", out.unknown_words.join(", "));
    }
    let n = out.result.readings.len();
    let _ = writeln!(s, "{n} reading{}", if n == 1 { "" } else { "s" });
    for (i, r) in out.result.readings.iter().enumerate() {
        let _ = writeln!(s, "reading {}/{n}:", i + 1);
        s.push_str(&render_tree(&r.tree, format.tree_format()));
        if let Some(f) = &r.fstructure {
            let _ = writeln!(s, "f-structure:\n{}", f.render(RenderStyle::Indented));
        }
    }
    if !out.rejected.is_empty() {
        let _ = writeln!(s, "{} tree(s) with inconsistent f-structure:", out.rejected.len());
        for r in &out.rejected {
            if let Some(e) = &r.fstructure_error {
                let _ = writeln!(s, "  {}: {e}", r.tree.bracketed());
            }
        }
    }
    if let Some(TdOutcome::DepthLimit { limit }) = out.outcome {
        let _ = writeln!(s, "warning: search stopped at depth limit {limit}; readings may be missing");
    }
    if out.truncated {
        s.push_str("warning: edge limit reached; readings may be missing\n");
    }
    if let Some(f) = &out.failure {
        s.push_str(&f.to_string());
    }
    s
}
