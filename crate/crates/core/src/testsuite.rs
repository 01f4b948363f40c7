//! Phenomenon-class test suites and batch runs over them.
//!
//! Suite file format:
//!
//! ```text
//! %PHENOMENON noun phrase agreement
//! der Hund schläft | 1 @agreement
//! * die Hund schläft | 0 @agreement
//! ```
//!
//! A leading `*` marks an ungrammatical sentence, `| n` gives the expected
//! number of readings, and `@tag` words annotate the case.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::diagnostic::Diagnostic;
use crate::pipeline::{parse_sentence, read_file, LoadError, ParseOptions, Toolkit};
use crate::results::{compare_results, BaselineStore, Engine, StoreError, Verdict};
use crate::syntax::Pos;

pub const SUITE_EXTENSION: &str = "suite";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grammaticality {
    Good,
    Bad,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub sentence: String,
    pub expected: Grammaticality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_readings: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub tags: BTreeSet<String>,
    pub line: usize,
}

impl TestCase {
    /// Whether `readings` meets the expectation.
    pub fn passes(&self, readings: usize) -> bool {
        match (self.expected_readings, self.expected) {
            (Some(n), _) => readings == n,
            (None, Grammaticality::Good) => readings > 0,
            (None, Grammaticality::Bad) => readings == 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestClass {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub cases: Vec<TestCase>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Diagnostic>,
}

/// Parse a suite file. `stem` names the class when the header is missing.
pub fn parse_class(src: &str, stem: &str, file: Option<&str>) -> Result<TestClass, Vec<Diagnostic>> {
    let mut name: Option<String> = None;
    let mut cases: Vec<TestCase> = Vec::new();
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    for (i, raw) in src.lines().enumerate() {
        let line = i + 1;
        let text = raw.split("//").next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        if let Some(rest) = text.strip_prefix("%PHENOMENON") {
            let n = rest.trim();
            if n.is_empty() {
                errors.push(diag_error(line, "`%PHENOMENON` needs a name", file));
            } else if name.is_some() {
                errors.push(diag_error(line, "second `%PHENOMENON` header", file));
            } else {
                name = Some(n.to_string());
            }
            continue;
        }
        match parse_case(text, line) {
            Ok(case) => {
                if let Some(prev) = cases.iter().find(|c| c.sentence == case.sentence) {
                    warnings.push(
                        Diagnostic::warning(
                            Some(Pos { line, col: 1 }),
                            format!("duplicate sentence `{}` (first on line {})", case.sentence, prev.line),
                        )
                        .in_file(file),
                    );
                }
                cases.push(case);
            }
            Err(msg) => errors.push(diag_error(line, &msg, file)),
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    if cases.is_empty() {
        warnings.push(Diagnostic::warning(None, "suite file contains no sentences").in_file(file));
    }
    let name = match name {
        Some(n) => n,
        None => {
            warnings.push(
                Diagnostic::warning(None, format!("no `%PHENOMENON` header; class named `{stem}`")).in_file(file),
            );
            stem.to_string()
        }
    };
    Ok(TestClass { name, path: file.map(PathBuf::from), cases, warnings })
}

fn diag_error(line: usize, msg: &str, file: Option<&str>) -> Diagnostic {
    Diagnostic::error(Some(Pos { line, col: 1 }), msg).in_file(file)
}

fn parse_case(text: &str, line: usize) -> Result<TestCase, String> {
    let (expected, rest) = match text.strip_prefix('*') {
        Some(r) => (Grammaticality::Bad, r),
        None => (Grammaticality::Good, text),
    };
    let (body, tag_text) = match rest.find('@') {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, ""),
    };
    let mut tags = BTreeSet::new();
    for t in tag_text.split_whitespace() {
        match t.strip_prefix('@') {
            Some(name) if !name.is_empty() && !name.contains('@') => {
                tags.insert(name.to_string());
            }
            _ => return Err(format!("malformed tag `{t}` (tags look like `@name`)")),
        }
    }
    let (sentence, count) = match body.split_once('|') {
        Some((s, c)) => {
            let c = c.trim();
            let n: usize = c.parse().map_err(|_| format!("expected a reading count after `|`, found `{c}`"))?;
            (s, Some(n))
        }
        None => (body, None),
    };
    let sentence = sentence.split_whitespace().collect::<Vec<_>>().join(" ");
    if sentence.is_empty() {
        return Err("missing sentence".to_string());
    }
    if expected == Grammaticality::Bad && count.is_some_and(|n| n > 0) {
        return Err(format!("ungrammatical sentence cannot expect {} readings", count.unwrap_or(0)));
    }
    Ok(TestCase { sentence, expected, expected_readings: count, tags, line })
}

pub fn load_class(path: &Path) -> Result<TestClass, LoadError> {
    let src = read_file(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("suite");
    parse_class(&src, stem, Some(&path.display().to_string())).map_err(LoadError::Diagnostics)
}

/// Every `.suite` file in a directory, in file-name order.
pub fn load_dir(dir: &Path) -> Result<Vec<TestClass>, LoadError> {
    let io = |e: std::io::Error| LoadError::Io { path: dir.display().to_string(), message: e.to_string() };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(SUITE_EXTENSION))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_class(p)).collect()
}

/// Load a file or a directory of suite files.
pub fn load_suites(path: &Path) -> Result<Vec<TestClass>, LoadError> {
    if path.is_dir() {
        load_dir(path)
    } else {
        load_class(path).map(|c| vec![c])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Selection<'a> {
    pub cases: Vec<(&'a str, &'a TestCase)>,
    pub warnings: Vec<String>,
}

/// Cases carrying every tag in `tags`. Tags nobody uses produce a warning.
pub fn select_cases<'a>(classes: &'a [TestClass], tags: &BTreeSet<String>) -> Selection<'a> {
    let known: BTreeSet<&str> =
        classes.iter().flat_map(|c| &c.cases).flat_map(|c| c.tags.iter().map(String::as_str)).collect();
    let warnings: Vec<String> =
        tags.iter().filter(|t| !known.contains(t.as_str())).map(|t| format!("unknown tag `@{t}`")).collect();
    let cases = if warnings.is_empty() {
        classes
            .iter()
            .flat_map(|cl| cl.cases.iter().map(move |c| (cl.name.as_str(), c)))
            .filter(|(_, c)| tags.is_subset(&c.tags))
            .collect()
    } else {
        Vec::new()
    };
    Selection { cases, warnings }
}

// ---------------------------------------------------------------------------
// Runs

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Pass,
    Fail,
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowComparison {
    pub verdict: Verdict,
    pub summary: String,
    /// First pairwise difference, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub class: String,
    pub sentence: String,
    pub expected: Grammaticality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_readings: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readings: Option<usize>,
    pub status: RowStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Against the stored baseline; `None` when not requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<RowComparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_note: Option<String>,
    pub elapsed_ms: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub pass: usize,
    pub fail: usize,
    pub error: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteRunTable {
    pub engine: Engine,
    pub fingerprint: String,
    pub rows: Vec<SuiteRow>,
    pub totals: Totals,
}

impl SuiteRunTable {
    pub fn all_pass(&self) -> bool {
        self.totals.fail == 0 && self.totals.error == 0
    }

    /// Rows whose comparison is not `equal`.
    pub fn changed(&self) -> impl Iterator<Item = &SuiteRow> {
        self.rows.iter().filter(|r| r.comparison.as_ref().is_some_and(|c| c.verdict != Verdict::Equal))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("table serializes")
    }

    /// Aligned text table. Timings are omitted unless asked for, so the
    /// output is reproducible.
    pub fn render_text(&self, with_times: bool) -> String {
        let header = ["class", "sentence", "expected", "readings", "status", "baseline"];
        let mut rows: Vec<Vec<String>> = self.rows.iter().map(row_cells).collect();
        if with_times {
            for (cells, r) in rows.iter_mut().zip(&self.rows) {
                cells.push(format!("{:.1}", r.elapsed_ms));
            }
        }
        let mut header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
        if with_times {
            header.push("ms".into());
        }
        let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
        for cells in &rows {
            for (w, c) in widths.iter_mut().zip(cells) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |cells: &[String], out: &mut String| {
            let padded: Vec<String> =
                cells.iter().zip(&widths).map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count()))).collect();
            let _ = writeln!(out, "{}", padded.join("  ").trim_end());
        };
        line(&header, &mut out);
        for cells in &rows {
            line(cells, &mut out);
        }
        let _ = writeln!(
            out,
            "{} sentences: {} pass, {} fail, {} error",
            self.rows.len(),
            self.totals.pass,
            self.totals.fail,
            self.totals.error
        );
        out
    }

    /// Delimiter-separated values with a header line.
    pub fn render_dsv(&self, delimiter: char) -> String {
        let d = delimiter.to_string();
        let mut out = ["class", "sentence", "expected", "readings", "status", "baseline", "ms"].join(&d);
        out.push('\n');
        for r in &self.rows {
            let mut cells = row_cells(r);
            cells.push(format!("{:.3}", r.elapsed_ms));
            let cells: Vec<String> = cells.iter().map(|c| c.replace(delimiter, " ")).collect();
            out.push_str(&cells.join(&d));
            out.push('\n');
        }
        out
    }
}

fn row_cells(r: &SuiteRow) -> Vec<String> {
    let mark = if r.expected == Grammaticality::Bad { "*" } else { "" };
    let expected = match r.expected_readings {
        Some(n) => format!("{mark}{n}"),
        None if r.expected == Grammaticality::Bad => "*".into(),
        None => ">0".into(),
    };
    let baseline = match (&r.comparison, &r.baseline_note) {
        (Some(c), _) if c.verdict == Verdict::Equal => "equal".to_string(),
        (Some(c), _) => format!("{} ({})", c.verdict, c.summary),
        (None, Some(n)) => n.clone(),
        (None, None) => String::new(),
    };
    vec![
        r.class.clone(),
        format!("{mark}{}", r.sentence),
        expected,
        r.readings.map(|n| n.to_string()).unwrap_or_else(|| "-".into()),
        match r.status {
            RowStatus::Pass => "pass",
            RowStatus::Fail => "FAIL",
            RowStatus::Error => "ERROR",
        }
        .to_string(),
        baseline,
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    Ignore,
    Compare,
    Save,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub engine: Engine,
    pub workers: usize,
    pub baseline: BaselineMode,
    pub store: Option<BaselineStore>,
}

impl RunOptions {
    pub fn new(engine: Engine) -> Self {
        RunOptions { engine, workers: default_workers(), baseline: BaselineMode::Ignore, store: None }
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Reported after each finished row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
    /// Index of the finished row in the table.
    pub index: usize,
    pub row: SuiteRow,
}

/// Parse every case on a bounded pool of workers. Rows come back in case
/// order whatever order they finish in; one failing sentence never stops
/// the sweep.
pub fn run_suite(
    tk: &Toolkit,
    classes: &[TestClass],
    opts: &RunOptions,
    progress: &(dyn Fn(Progress) + Sync),
) -> SuiteRunTable {
    let cases: Vec<(&str, &TestCase)> =
        classes.iter().flat_map(|cl| cl.cases.iter().map(move |c| (cl.name.as_str(), c))).collect();
    run_cases(tk, &cases, opts, progress)
}

pub fn run_cases(
    tk: &Toolkit,
    cases: &[(&str, &TestCase)],
    opts: &RunOptions,
    progress: &(dyn Fn(Progress) + Sync),
) -> SuiteRunTable {
    let total = cases.len();
    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<SuiteRow>>> = Mutex::new(vec![None; total]);
    let workers = opts.workers.clamp(1, total.max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= total {
                    break;
                }
                let (class, case) = cases[i];
                let row = run_case(tk, class, case, opts);
                slots.lock().expect("row slots")[i] = Some(row.clone());
                let d = done.fetch_add(1, Ordering::SeqCst) + 1;
                progress(Progress { done: d, total, index: i, row });
            });
        }
    });
    let rows: Vec<SuiteRow> =
        slots.into_inner().expect("row slots").into_iter().map(|r| r.expect("every case ran")).collect();
    let mut totals = Totals::default();
    for r in &rows {
        match r.status {
            RowStatus::Pass => totals.pass += 1,
            RowStatus::Fail => totals.fail += 1,
            RowStatus::Error => totals.error += 1,
        }
    }
    SuiteRunTable { engine: opts.engine, fingerprint: tk.fingerprint().to_string(), rows, totals }
}

fn run_case(tk: &Toolkit, class: &str, case: &TestCase, opts: &RunOptions) -> SuiteRow {
    let mut row = SuiteRow {
        class: class.to_string(),
        sentence: case.sentence.clone(),
        expected: case.expected,
        expected_readings: case.expected_readings,
        readings: None,
        status: RowStatus::Error,
        error: None,
        comparison: None,
        baseline_note: None,
        elapsed_ms: 0.0,
    };
    let out = match parse_sentence(tk, &case.sentence, opts.engine, ParseOptions::default()) {
        Ok(o) => o,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    row.elapsed_ms = out.elapsed_ms;
    let n = out.readings();
    row.readings = Some(n);
    row.status = if case.passes(n) { RowStatus::Pass } else { RowStatus::Fail };
    if let Some(store) = &opts.store {
        match opts.baseline {
            BaselineMode::Ignore => {}
            BaselineMode::Save => match store.save(&out.result) {
                Ok(_) => row.baseline_note = Some("saved".into()),
                Err(e) => row.error = Some(e.to_string()),
            },
            BaselineMode::Compare => match store.load(&case.sentence, Some(tk.fingerprint())) {
                Ok(loaded) => match compare_results(&loaded.result, &out.result) {
                    Ok(c) => {
                        row.comparison = Some(RowComparison {
                            verdict: c.verdict(),
                            summary: c.summary.text.clone(),
                            detail: c.reports.iter().find(|r| r.verdict != Verdict::Equal).map(|r| r.to_string()),
                            warnings: loaded.warnings,
                        })
                    }
                    Err(e) => row.error = Some(e.to_string()),
                },
                Err(StoreError::NoBaseline(_)) => row.baseline_note = Some("no baseline".into()),
                Err(e) => row.error = Some(e.to_string()),
            },
        }
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_cases() {
        let src = "%PHENOMENON verb group syntax\nder Hund schläft\n* Hund der schläft | 0\ndie Hunde schlafen | 1 @agreement @plural\n";
        let c = parse_class(src, "x", None).unwrap();
        assert_eq!(c.name, "verb group syntax");
        assert_eq!(c.cases.len(), 3);
        assert_eq!(c.cases[1].expected, Grammaticality::Bad);
        assert_eq!(c.cases[1].expected_readings, Some(0));
        assert_eq!(c.cases[1].sentence, "Hund der schläft");
        assert_eq!(c.cases[2].tags.len(), 2);
        assert!(c.warnings.is_empty());
    }

    #[test]
    fn missing_header_falls_back_to_stem() {
        let c = parse_class("der Hund schläft\n", "np_agreement", None).unwrap();
        assert_eq!(c.name, "np_agreement");
        assert_eq!(c.warnings.len(), 1);
    }

    #[test]
    fn empty_and_duplicate_warn() {
        let c = parse_class("%PHENOMENON x\n", "x", None).unwrap();
        assert!(c.warnings[0].message.contains("no sentences"));
        let c = parse_class("%PHENOMENON x\na b\na  b | 1\n", "x", None).unwrap();
        assert!(c.warnings[0].message.contains("duplicate"));
    }

    #[test]
    fn malformed_lines_are_positioned_errors() {
        let e = parse_class("%PHENOMENON x\nok\nbad | many\n* worse | 2\n", "x", Some("f.suite")).unwrap_err();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].pos.map(|p| p.line), Some(3));
        assert_eq!(e[1].pos.map(|p| p.line), Some(4));
    }

    #[test]
    fn expectations() {
        let good = parse_case("a b", 1).unwrap();
        assert!(good.passes(2) && !good.passes(0));
        let bad = parse_case("* a b", 1).unwrap();
        assert!(bad.passes(0) && !bad.passes(1));
        let two = parse_case("a b | 2", 1).unwrap();
        assert!(two.passes(2) && !two.passes(1));
    }

    #[test]
    fn tag_selection_is_an_intersection() {
        let src = "%PHENOMENON x\na | 1 @passive\nb | 1 @passive @subordinate\nc | 1 @subordinate\nd\n";
        let classes = vec![parse_class(src, "x", None).unwrap()];
        let tags = |ts: &[&str]| ts.iter().map(|t| t.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(select_cases(&classes, &tags(&[])).cases.len(), 4);
        assert_eq!(select_cases(&classes, &tags(&["passive"])).cases.len(), 2);
        let both = select_cases(&classes, &tags(&["passive", "subordinate"]));
        assert_eq!(both.cases.iter().map(|(_, c)| c.sentence.as_str()).collect::<Vec<_>>(), ["b"]);
        let unknown = select_cases(&classes, &tags(&["nope"]));
        assert!(unknown.cases.is_empty());
        assert_eq!(unknown.warnings.len(), 1);
    }
}
