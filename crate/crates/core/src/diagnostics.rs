//! Feedback for sentences without a reading: the largest recognized
//! fragments and the shortest paths through the chart or WFST.
//!
//! Both work on a flat list of recognized spans. Positions from which no
//! recognized span starts get a one-token word edge, so every report spans
//! the whole sentence.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chart_parser::{Chart, EdgeId};
use crate::lexicon::Lexicalized;
use crate::td_parser::WfsTable;

/// Upper bound on the number of shortest paths reported.
pub const PATH_CAP: usize = 10;

/// A recognized constituent: edge id, label and token span.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanEdge {
    pub id: EdgeId,
    pub label: String,
    pub from: usize,
    pub to: usize,
}

/// Passive category edges of a chart; bare words and empty edges are left out.
pub fn edges_from_chart(chart: &Chart) -> Vec<SpanEdge> {
    chart
        .edges
        .iter()
        .filter(|e| e.is_constituent() && e.from < e.to)
        .map(|e| SpanEdge { id: e.id, label: e.label.clone(), from: e.from, to: e.to })
        .collect()
}

/// Successes recorded in a WFST plus the lexical categories of the input.
/// Lexical categories are numbered after the table's own ids.
pub fn edges_from_wfst(wfst: &WfsTable, input: &Lexicalized) -> Vec<SpanEdge> {
    let mut out: Vec<SpanEdge> = wfst
        .spans()
        .into_iter()
        .filter(|(_, _, from, to)| from < to)
        .map(|(id, label, from, to)| SpanEdge { id, label, from, to })
        .collect();
    let mut next = out.iter().map(|e| e.id + 1).max().unwrap_or(0);
    for (pos, cats) in input.categories.iter().enumerate() {
        for c in cats {
            out.push(SpanEdge { id: next, label: c.symbol.clone(), from: pos, to: pos + 1 });
            next += 1;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub from: usize,
    pub to: usize,
    pub label: String,
    /// `None` for a word standing in for an unrecognized position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge: Option<EdgeId>,
}

impl Fragment {
    fn of(e: &SpanEdge) -> Self {
        Fragment { from: e.from, to: e.to, label: e.label.clone(), edge: Some(e.id) }
    }

    fn word(pos: usize, tokens: &[String]) -> Self {
        Fragment { from: pos, to: pos + 1, label: tokens.get(pos).cloned().unwrap_or_default(), edge: None }
    }
}

impl fmt::Display for Fragment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.edge {
            Some(id) => write!(f, "{}({},{})#{id}", self.label, self.from, self.to),
            None => write!(f, "\"{}\"({},{})", self.label, self.from, self.to),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FragmentReport {
    pub fragments: Vec<Fragment>,
    /// Tokens covered by recognized edges.
    pub covered: usize,
    pub total: usize,
    pub coverage: f64,
}

impl fmt::Display for FragmentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.fragments.iter().map(|x| x.to_string()).collect();
        write!(f, "fragments: {} (coverage {}/{})", parts.join(" "), self.covered, self.total)
    }
}

/// Greedy left-to-right cover: take the longest edge starting at the
/// current position (highest id on ties), continue at its end.
pub fn largest_fragments(edges: &[SpanEdge], tokens: &[String]) -> FragmentReport {
    let n = tokens.len();
    let mut fragments = Vec::new();
    let mut covered = 0;
    let mut pos = 0;
    while pos < n {
        let best = edges.iter().filter(|e| e.from == pos && e.to > pos && e.to <= n).max_by_key(|e| (e.to, e.id));
        match best {
            Some(e) => {
                covered += e.to - e.from;
                fragments.push(Fragment::of(e));
                pos = e.to;
            }
            None => {
                fragments.push(Fragment::word(pos, tokens));
                pos += 1;
            }
        }
    }
    let coverage = if n == 0 { 1.0 } else { covered as f64 / n as f64 };
    FragmentReport { fragments, covered, total: n, coverage }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChartPath {
    pub edges: Vec<Fragment>,
}

impl ChartPath {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

impl fmt::Display for ChartPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.edges.iter().map(|x| x.to_string()).collect();
        f.write_str(&parts.join(" "))
    }
}

/// The edge graph used by path search: recognized spans plus word edges at
/// positions nothing starts from.
pub fn path_graph(edges: &[SpanEdge], tokens: &[String]) -> Vec<Vec<Fragment>> {
    let n = tokens.len();
    let mut out: Vec<Vec<Fragment>> = vec![Vec::new(); n];
    for e in edges.iter().filter(|e| e.from < e.to && e.to <= n) {
        out[e.from].push(Fragment::of(e));
    }
    for (pos, list) in out.iter_mut().enumerate() {
        if list.is_empty() {
            list.push(Fragment::word(pos, tokens));
        }
        // Longer edges first, then the most recent one.
        list.sort_by_key(|f| std::cmp::Reverse((f.to, f.edge)));
    }
    out
}

/// All paths from 0 to n with the fewest edges, at most `cap` of them.
pub fn shortest_paths(edges: &[SpanEdge], tokens: &[String], cap: usize) -> Vec<ChartPath> {
    let n = tokens.len();
    if n == 0 || cap == 0 {
        return Vec::new();
    }
    let graph = path_graph(edges, tokens);
    // Distance to the end, computed right to left.
    let mut dist = vec![usize::MAX; n + 1];
    dist[n] = 0;
    for p in (0..n).rev() {
        dist[p] = graph[p].iter().filter_map(|f| dist[f.to].checked_add(1)).min().unwrap_or(usize::MAX);
    }
    let mut out = Vec::new();
    let mut stack = Vec::new();
    collect_paths(&graph, &dist, 0, n, cap, &mut stack, &mut out);
    out
}

fn collect_paths(
    graph: &[Vec<Fragment>],
    dist: &[usize],
    pos: usize,
    n: usize,
    cap: usize,
    stack: &mut Vec<Fragment>,
    out: &mut Vec<ChartPath>,
) {
    if out.len() >= cap {
        return;
    }
    if pos == n {
        out.push(ChartPath { edges: stack.clone() });
        return;
    }
    for f in &graph[pos] {
        if dist[f.to] != usize::MAX && dist[f.to] + 1 == dist[pos] {
            stack.push(f.clone());
            collect_paths(graph, dist, f.to, n, cap, stack, out);
            stack.pop();
        }
    }
}

/// Both diagnostics together, as reported for a sentence without readings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub fragments: FragmentReport,
    pub shortest_paths: Vec<ChartPath>,
}

impl FailureReport {
    pub fn new(edges: &[SpanEdge], tokens: &[String]) -> Self {
        FailureReport {
            fragments: largest_fragments(edges, tokens),
            shortest_paths: shortest_paths(edges, tokens, PATH_CAP),
        }
    }
}

impl fmt::Display for FailureReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.fragments)?;
        let len = self.shortest_paths.first().map_or(0, ChartPath::len);
        writeln!(f, "shortest paths ({} edges):", len)?;
        for p in &self.shortest_paths {
            writeln!(f, "  {p}")?;
        }
        Ok(())
    }
}

/// Labels occurring in a report, for quick assertions and UI filters.
pub fn fragment_labels(r: &FragmentReport) -> BTreeSet<String> {
    r.fragments.iter().map(|f| f.label.clone()).collect()
}
