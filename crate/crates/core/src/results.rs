//! Parse results, the three-level tree comparison, and the baseline store.
//!
//! Comparison checks branching structure first, then node labels, then
//! feature structures, and stops at the first level that differs. Feature
//! equality is mutual subsumption, so variable naming does not matter.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::featstruct::{first_difference, subsumes, FeaturePath, FeatureStructure};
use crate::fstructure::FStructureError;
use crate::tree::{NodePath, ParseTree};

pub use crate::tree::{render_tree, NodeKind, TreeFormat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Chart,
    Td,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Chart => "chart",
            Engine::Td => "td",
        })
    }
}

impl std::str::FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chart" => Ok(Engine::Chart),
            "td" | "topdown" => Ok(Engine::Td),
            _ => Err(format!("unknown engine `{s}` (expected chart or td)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reading {
    pub tree: ParseTree,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fstructure: Option<FeatureStructure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fstructure_error: Option<FStructureError>,
}

impl Reading {
    pub fn new(tree: ParseTree) -> Self {
        Reading { tree, fstructure: None, fstructure_error: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseResult {
    pub sentence: String,
    pub tokens: Vec<String>,
    pub readings: Vec<Reading>,
    pub engine: Engine,
    pub fingerprint: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl ParseResult {
    pub fn new(sentence: &str, tokens: Vec<String>, readings: Vec<Reading>, engine: Engine, fingerprint: &str) -> Self {
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        ParseResult {
            sentence: sentence.to_string(),
            tokens,
            readings,
            engine,
            fingerprint: fingerprint.to_string(),
            timestamp,
        }
    }

    /// Same result with every feature structure in canonical form.
    pub fn canonical(&self) -> ParseResult {
        let mut r = self.clone();
        for reading in &mut r.readings {
            canonicalize_tree(&mut reading.tree);
            if let Some(f) = &reading.fstructure {
                reading.fstructure = Some(f.canonical().unwrap_or_else(|_| f.clone()));
            }
        }
        r
    }
}

fn canonicalize_tree(t: &mut ParseTree) {
    if let Ok(c) = t.features.canonical() {
        t.features = c;
    }
    for c in &mut t.children {
        canonicalize_tree(c);
    }
}

// ---------------------------------------------------------------------------
// Comparison

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Equal,
    ShapeDiff,
    LabelDiff,
    FeatureDiff,
    ReadingCountDiff,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Equal => "equal",
            Verdict::ShapeDiff => "shape_diff",
            Verdict::LabelDiff => "label_diff",
            Verdict::FeatureDiff => "feature_diff",
            Verdict::ReadingCountDiff => "reading_count_diff",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Shape,
    Labels,
    Features,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "level", rename_all = "snake_case")]
pub enum Detail {
    None,
    Shape { left_children: usize, right_children: usize },
    Label { left: String, right: String },
    Feature { path: FeaturePath, left: FeatureStructure, right: FeatureStructure },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<NodePath>,
    pub detail: Detail,
    /// Levels actually inspected, in order.
    pub levels: Vec<Level>,
    /// Reading indices compared (old, new).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<(usize, usize)>,
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some((a, b)) = self.pair {
            write!(f, "reading {} vs {}: ", a + 1, b + 1)?;
        }
        write!(f, "{}", self.verdict)?;
        if let Some(loc) = &self.location {
            write!(f, " at {}", fmt_path(loc))?;
        }
        match &self.detail {
            Detail::None => Ok(()),
            Detail::Shape { left_children, right_children } => {
                write!(f, " ({left_children} vs {right_children} daughters)")
            }
            Detail::Label { left, right } => write!(f, " ({left} vs {right})"),
            Detail::Feature { path, left, right } => {
                write!(f, " (feature {}: {left} vs {right})", crate::featstruct::path_string(path))
            }
        }
    }
}

pub fn fmt_path(p: &[usize]) -> String {
    let parts: Vec<String> = p.iter().map(|i| i.to_string()).collect();
    format!("[{}]", parts.join(","))
}

pub fn compare_trees(a: &ParseTree, b: &ParseTree) -> ComparisonReport {
    let mut levels = vec![Level::Shape];
    if let Some((path, l, r)) = first_in_preorder(a, b, &|x, y| x.children.len() == y.children.len()) {
        return ComparisonReport {
            verdict: Verdict::ShapeDiff,
            location: Some(path),
            detail: Detail::Shape { left_children: l.children.len(), right_children: r.children.len() },
            levels,
            pair: None,
        };
    }
    levels.push(Level::Labels);
    if let Some((path, l, r)) = first_in_preorder(a, b, &|x, y| x.label == y.label) {
        return ComparisonReport {
            verdict: Verdict::LabelDiff,
            location: Some(path),
            detail: Detail::Label { left: l.label.clone(), right: r.label.clone() },
            levels,
            pair: None,
        };
    }
    levels.push(Level::Features);
    if let Some((path, l, r)) =
        first_in_preorder(a, b, &|x, y| subsumes(&x.features, &y.features) && subsumes(&y.features, &x.features))
    {
        return ComparisonReport {
            verdict: Verdict::FeatureDiff,
            location: Some(path),
            detail: Detail::Feature {
                path: first_difference(&l.features, &r.features).unwrap_or_default(),
                left: l.features.clone(),
                right: r.features.clone(),
            },
            levels,
            pair: None,
        };
    }
    ComparisonReport { verdict: Verdict::Equal, location: None, detail: Detail::None, levels, pair: None }
}

/// First node pair in preorder failing `same`. Only called on trees whose
/// shapes agree down to the nodes visited.
fn first_in_preorder<'t>(
    a: &'t ParseTree,
    b: &'t ParseTree,
    same: &dyn Fn(&ParseTree, &ParseTree) -> bool,
) -> Option<(NodePath, &'t ParseTree, &'t ParseTree)> {
    fn walk<'t>(
        a: &'t ParseTree,
        b: &'t ParseTree,
        same: &dyn Fn(&ParseTree, &ParseTree) -> bool,
        path: &mut NodePath,
    ) -> Option<(NodePath, &'t ParseTree, &'t ParseTree)> {
        if !same(a, b) {
            return Some((path.clone(), a, b));
        }
        for (i, (x, y)) in a.children.iter().zip(&b.children).enumerate() {
            path.push(i);
            if let Some(found) = walk(x, y, same, path) {
                return Some(found);
            }
            path.pop();
        }
        None
    }
    walk(a, b, same, &mut Vec::new())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub old_readings: usize,
    pub new_readings: usize,
    pub additional: usize,
    pub missing: usize,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub sentence: String,
    pub reports: Vec<ComparisonReport>,
    pub summary: Summary,
}

impl Comparison {
    /// Overall verdict: a count difference wins, then the first pairwise
    /// difference.
    pub fn verdict(&self) -> Verdict {
        if self.summary.old_readings != self.summary.new_readings {
            return Verdict::ReadingCountDiff;
        }
        self.reports.iter().map(|r| r.verdict).find(|v| *v != Verdict::Equal).unwrap_or(Verdict::Equal)
    }

    pub fn is_equal(&self) -> bool {
        self.verdict() == Verdict::Equal
    }

    /// Canonical JSON text.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.sentence)?;
        for r in &self.reports {
            writeln!(f, "  {r}")?;
        }
        writeln!(f, "  {}", self.summary.text)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("cannot compare results for different sentences: `{old}` vs `{new}`")]
pub struct SentenceMismatch {
    pub old: String,
    pub new: String,
}

fn plural(n: usize) -> &'static str {
    if n == 1 {
        "reading"
    } else {
        "readings"
    }
}

pub fn summary_text(old: usize, new: usize) -> String {
    match new.cmp(&old) {
        std::cmp::Ordering::Greater => format!("+{} additional {}", new - old, plural(new - old)),
        std::cmp::Ordering::Less => format!("-{} missing {}", old - new, plural(old - new)),
        std::cmp::Ordering::Equal => format!("same number of readings ({new})"),
    }
}

/// Pair readings by position and compare the first `min(n, m)` pairs; a
/// count difference is reported in the summary only.
pub fn compare_results(old: &ParseResult, new: &ParseResult) -> Result<Comparison, SentenceMismatch> {
    if old.sentence != new.sentence {
        return Err(SentenceMismatch { old: old.sentence.clone(), new: new.sentence.clone() });
    }
    let reports = old
        .readings
        .iter()
        .zip(&new.readings)
        .enumerate()
        .map(|(i, (a, b))| {
            let mut r = compare_trees(&a.tree, &b.tree);
            r.pair = Some((i, i));
            r
        })
        .collect();
    let (n, m) = (old.readings.len(), new.readings.len());
    Ok(Comparison {
        sentence: old.sentence.clone(),
        reports,
        summary: Summary {
            old_readings: n,
            new_readings: m,
            additional: m.saturating_sub(n),
            missing: n.saturating_sub(m),
            text: summary_text(n, m),
        },
    })
}

/// Compare two readings of the same result.
pub fn compare_readings(r: &ParseResult, i: usize, j: usize) -> Option<ComparisonReport> {
    let a = r.readings.get(i)?;
    let b = r.readings.get(j)?;
    let mut rep = compare_trees(&a.tree, &b.tree);
    rep.pair = Some((i, j));
    Some(rep)
}

// ---------------------------------------------------------------------------
// Baseline store

pub const STORE_MAGIC: &str = "GRAMWB-BASELINE";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no baseline for `{0}`")]
    NoBaseline(String),
    #[error("baseline file {path} has unsupported format `{found}` (expected {STORE_MAGIC} v{STORE_VERSION})")]
    Version { path: String, found: String },
    #[error("baseline file {path} is malformed: {message}")]
    Format { path: String, message: String },
    #[error("baseline store I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Loaded {
    pub result: ParseResult,
    pub warnings: Vec<String>,
}

/// One file per sentence under a directory, named by the sentence hash.
#[derive(Clone, Debug)]
pub struct BaselineStore {
    dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

pub fn sentence_key(sentence: &str) -> String {
    hex::encode(Sha256::digest(sentence.as_bytes()))
}

/// Canonical file text for a result.
pub fn serialize_baseline(r: &ParseResult) -> String {
    let body = serde_json::to_string_pretty(&r.canonical()).expect("result serializes");
    format!("{STORE_MAGIC} v{STORE_VERSION}\n{body}\n")
}

pub fn deserialize_baseline(text: &str, path: &str) -> Result<ParseResult, StoreError> {
    let (first, body) = text.split_once('\n').unwrap_or((text, ""));
    if first.trim() != format!("{STORE_MAGIC} v{STORE_VERSION}") {
        return Err(StoreError::Version { path: path.to_string(), found: first.trim().to_string() });
    }
    serde_json::from_str(body).map_err(|e| StoreError::Format { path: path.to_string(), message: e.to_string() })
}

impl BaselineStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io { path: dir.display().to_string(), source })?;
        Ok(BaselineStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, sentence: &str) -> PathBuf {
        self.dir.join(format!("{}.json", sentence_key(sentence)))
    }

    /// Write atomically: concurrent writers for one sentence never leave a
    /// torn file, the last rename wins.
    pub fn save(&self, r: &ParseResult) -> Result<PathBuf, StoreError> {
        let path = self.path_for(&r.sentence);
        let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
        let tmp = self.dir.join(format!(".{}.{}.{n}.tmp", sentence_key(&r.sentence), std::process::id()));
        let io = |source| StoreError::Io { path: tmp.display().to_string(), source };
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(serialize_baseline(r).as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        drop(f);
        fs::rename(&tmp, &path).map_err(|source| StoreError::Io { path: path.display().to_string(), source })?;
        Ok(path)
    }

    /// Load a baseline; a fingerprint different from `fingerprint` is
    /// reported as a warning, not an error.
    pub fn load(&self, sentence: &str, fingerprint: Option<&str>) -> Result<Loaded, StoreError> {
        let path = self.path_for(sentence);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NoBaseline(sentence.to_string()))
            }
            Err(source) => return Err(StoreError::Io { path: path.display().to_string(), source }),
        };
        let result = deserialize_baseline(&text, &path.display().to_string())?;
        let mut warnings = Vec::new();
        if let Some(fp) = fingerprint {
            if fp != result.fingerprint {
                warnings.push(format!(
                    "fingerprint mismatch: baseline for `{sentence}` was saved under grammar {}, current grammar is {}",
                    short(&result.fingerprint),
                    short(fp)
                ));
            }
        }
        Ok(Loaded { result, warnings })
    }

    pub fn exists(&self, sentence: &str) -> bool {
        self.path_for(sentence).exists()
    }
}

fn short(fp: &str) -> &str {
    &fp[..fp.len().min(12)]
}
