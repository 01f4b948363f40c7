//! Static grammar analyses, run on every load.
//!
//! Graphs are built over category symbols only; feature structures are
//! ignored, so a reported left recursion is a *possible* one.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diagnostic::Severity;
use crate::grammar::{AliasDef, Grammar, LpConstraint, RhsKind};

/// Elementary cycles reported per check.
pub const MAX_CYCLES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    LeftRecursion,
    LpCycle,
    AliasCycle,
    UndefinedNonterminal,
    UnreachableNonterminal,
}

impl fmt::Display for FindingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FindingKind::LeftRecursion => "left recursion",
            FindingKind::LpCycle => "LP cycle",
            FindingKind::AliasCycle => "alias cycle",
            FindingKind::UndefinedNonterminal => "undefined nonterminal",
            FindingKind::UnreachableNonterminal => "unreachable nonterminal",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub kind: FindingKind,
    /// Cycle as a symbol list, or the single offending symbol.
    pub witness: Vec<String>,
    /// Source lines involved.
    pub lines: Vec<usize>,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = match self.kind {
            FindingKind::LeftRecursion | FindingKind::LpCycle | FindingKind::AliasCycle => {
                let sep = if self.kind == FindingKind::LpCycle { " < " } else { " -> " };
                let mut s = self.witness.join(sep);
                if let Some(first) = self.witness.first() {
                    s.push_str(sep);
                    s.push_str(first);
                }
                s
            }
            _ => self.witness.join(", "),
        };
        write!(f, "{}: {}: {}", self.severity, self.kind, w)?;
        if !self.lines.is_empty() {
            let ls: Vec<String> = self.lines.iter().map(|l| l.to_string()).collect();
            write!(f, " (line{} {})", if ls.len() > 1 { "s" } else { "" }, ls.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    pub findings: Vec<Finding>,
}

impl CheckReport {
    pub fn new(mut findings: Vec<Finding>) -> Self {
        findings.sort_by(|a, b| (a.kind, &a.witness).cmp(&(b.kind, &b.witness)));
        CheckReport { findings }
    }

    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }

    pub fn of_kind(&self, kind: FindingKind) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(move |f| f.kind == kind)
    }

    pub fn has_left_recursion(&self) -> bool {
        self.of_kind(FindingKind::LeftRecursion).next().is_some()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.findings.is_empty() {
            return writeln!(f, "no findings");
        }
        for finding in &self.findings {
            writeln!(f, "{finding}")?;
        }
        Ok(())
    }
}

/// Run every check. `preterminals` are categories introduced by lexicon
/// interface rules; they count as defined.
pub fn run_all(g: &Grammar, preterminals: &BTreeSet<String>) -> CheckReport {
    let mut findings = check_left_recursion(g);
    findings.extend(check_lp_cycles(&g.lp));
    findings.extend(check_alias_cycles(&g.aliases));
    findings.extend(check_wellformedness(g, preterminals));
    CheckReport::new(findings)
}

/// Directed graph over symbols; node order = order of first appearance.
#[derive(Clone, Debug, Default)]
pub struct SymbolGraph {
    pub nodes: Vec<String>,
    index: HashMap<String, usize>,
    pub adj: Vec<BTreeSet<usize>>,
    /// Source lines contributing each edge.
    edge_lines: BTreeMap<(usize, usize), BTreeSet<usize>>,
}

impl SymbolGraph {
    pub fn node(&mut self, s: &str) -> usize {
        if let Some(&i) = self.index.get(s) {
            return i;
        }
        self.nodes.push(s.to_string());
        self.adj.push(BTreeSet::new());
        self.index.insert(s.to_string(), self.nodes.len() - 1);
        self.nodes.len() - 1
    }

    pub fn add_edge(&mut self, from: &str, to: &str, line: usize) {
        let a = self.node(from);
        let b = self.node(to);
        self.adj[a].insert(b);
        self.edge_lines.entry((a, b)).or_default().insert(line);
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        match (self.index.get(from), self.index.get(to)) {
            (Some(&a), Some(&b)) => self.adj[a].contains(&b),
            _ => false,
        }
    }

    /// Elementary cycles, each starting at its earliest node, capped.
    pub fn elementary_cycles(&self, cap: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let n = self.nodes.len();
        for s in 0..n {
            if out.len() >= cap {
                break;
            }
            // Restrict to nodes >= s that can reach s and be reached from s.
            let mut path = vec![s];
            let mut on_path = vec![false; n];
            on_path[s] = true;
            let mut budget: usize = 2_000_000;
            self.cycles_from(s, s, &mut path, &mut on_path, &mut out, cap, &mut budget);
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn cycles_from(
        &self,
        start: usize,
        v: usize,
        path: &mut Vec<usize>,
        on_path: &mut [bool],
        out: &mut Vec<Vec<usize>>,
        cap: usize,
        budget: &mut usize,
    ) {
        for &w in &self.adj[v] {
            if out.len() >= cap || *budget == 0 {
                return;
            }
            *budget -= 1;
            if w == start {
                out.push(path.clone());
            } else if w > start && !on_path[w] {
                on_path[w] = true;
                path.push(w);
                self.cycles_from(start, w, path, on_path, out, cap, budget);
                path.pop();
                on_path[w] = false;
            }
        }
    }

    fn cycle_lines(&self, cycle: &[usize]) -> Vec<usize> {
        let mut lines = BTreeSet::new();
        for i in 0..cycle.len() {
            let a = cycle[i];
            let b = cycle[(i + 1) % cycle.len()];
            if let Some(ls) = self.edge_lines.get(&(a, b)) {
                lines.extend(ls.iter().copied());
            }
        }
        lines.into_iter().collect()
    }

    fn names(&self, cycle: &[usize]) -> Vec<String> {
        cycle.iter().map(|&i| self.nodes[i].clone()).collect()
    }

    /// Nodes lying on some cycle (via strongly connected components).
    pub fn cyclic_nodes(&self) -> BTreeSet<String> {
        let n = self.nodes.len();
        // reach[i] = nodes reachable from i in >= 1 step
        let mut out = BTreeSet::new();
        for s in 0..n {
            let mut seen = vec![false; n];
            let mut stack: Vec<usize> = self.adj[s].iter().copied().collect();
            while let Some(v) = stack.pop() {
                if seen[v] {
                    continue;
                }
                seen[v] = true;
                stack.extend(self.adj[v].iter().copied());
            }
            if seen[s] {
                out.insert(self.nodes[s].clone());
            }
        }
        out
    }
}

/// Symbols that can derive the empty string.
pub fn nullable_symbols(g: &Grammar) -> BTreeSet<String> {
    let mut nullable = BTreeSet::new();
    loop {
        let mut changed = false;
        for r in &g.rules {
            let lhs = g.resolve_symbol(&r.lhs.symbol);
            if nullable.contains(lhs) {
                continue;
            }
            let all = r.rhs.iter().all(|i| match i.kind {
                RhsKind::Empty => true,
                RhsKind::Terminal => false,
                RhsKind::Category => i.optional || nullable.contains(g.resolve_symbol(&i.symbol)),
            });
            if all {
                nullable.insert(lhs.to_string());
                changed = true;
            }
        }
        if !changed {
            return nullable;
        }
    }
}

/// Edges lhs → c for every c that can start a derivation of lhs: leading
/// optional or nullable categories are passed over, empty items are
/// transparent, a terminal stops the scan.
pub fn left_corner_graph(g: &Grammar) -> SymbolGraph {
    let nullable = nullable_symbols(g);
    let mut graph = SymbolGraph::default();
    for r in &g.rules {
        let lhs = g.resolve_symbol(&r.lhs.symbol);
        graph.node(lhs);
        for item in &r.rhs {
            match item.kind {
                RhsKind::Empty => continue,
                RhsKind::Terminal => break,
                RhsKind::Category => {
                    let c = g.resolve_symbol(&item.symbol);
                    graph.add_edge(lhs, c, r.loc.line);
                    if !(item.optional || nullable.contains(c)) {
                        break;
                    }
                }
            }
        }
    }
    graph
}

pub fn check_left_recursion(g: &Grammar) -> Vec<Finding> {
    let graph = left_corner_graph(g);
    graph
        .elementary_cycles(MAX_CYCLES)
        .into_iter()
        .map(|c| Finding {
            severity: Severity::Error,
            kind: FindingKind::LeftRecursion,
            witness: graph.names(&c),
            lines: graph.cycle_lines(&c),
        })
        .collect()
}

pub fn check_lp_cycles(lp: &[LpConstraint]) -> Vec<Finding> {
    let mut graph = SymbolGraph::default();
    for c in lp {
        graph.add_edge(&c.left, &c.right, c.line);
    }
    graph
        .elementary_cycles(MAX_CYCLES)
        .into_iter()
        .map(|c| Finding {
            severity: Severity::Error,
            kind: FindingKind::LpCycle,
            witness: graph.names(&c),
            lines: graph.cycle_lines(&c),
        })
        .collect()
}

pub fn check_alias_cycles(aliases: &[AliasDef]) -> Vec<Finding> {
    let names: BTreeSet<&str> = aliases.iter().map(|a| a.name.as_str()).collect();
    let mut graph = SymbolGraph::default();
    for a in aliases {
        graph.node(&a.name);
        if names.contains(a.expansion.symbol.as_str()) {
            graph.add_edge(&a.name, &a.expansion.symbol, a.line);
        }
    }
    graph
        .elementary_cycles(MAX_CYCLES)
        .into_iter()
        .map(|c| Finding {
            severity: Severity::Error,
            kind: FindingKind::AliasCycle,
            witness: graph.names(&c),
            lines: graph.cycle_lines(&c),
        })
        .collect()
}

/// Referenced-but-undefined and defined-but-unreachable nonterminals.
pub fn check_wellformedness(g: &Grammar, preterminals: &BTreeSet<String>) -> Vec<Finding> {
    let mut defined: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut referenced: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut calls: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in &g.rules {
        let lhs = g.resolve_symbol(&r.lhs.symbol);
        defined.entry(lhs).or_default().push(r.loc.line);
        for item in r.rhs.iter().filter(|i| i.kind == RhsKind::Category) {
            let c = g.resolve_symbol(&item.symbol);
            referenced.entry(c).or_default().push(r.loc.line);
            calls.entry(lhs).or_default().insert(c);
        }
    }
    let mut out = Vec::new();
    let start = g.resolve_symbol(&g.start);
    if !g.rules.is_empty() && !defined.contains_key(start) && !preterminals.contains(start) {
        referenced.entry(start).or_default();
    }
    for (sym, lines) in &referenced {
        if !defined.contains_key(sym) && !preterminals.contains(*sym) {
            let mut lines = lines.clone();
            lines.dedup();
            out.push(Finding {
                severity: Severity::Warning,
                kind: FindingKind::UndefinedNonterminal,
                witness: vec![sym.to_string()],
                lines,
            });
        }
    }
    let mut reachable: BTreeSet<&str> = BTreeSet::new();
    let mut stack = vec![start];
    while let Some(s) = stack.pop() {
        if !reachable.insert(s) {
            continue;
        }
        if let Some(cs) = calls.get(s) {
            stack.extend(cs.iter().copied());
        }
    }
    for (sym, lines) in &defined {
        if !reachable.contains(sym) {
            out.push(Finding {
                severity: Severity::Warning,
                kind: FindingKind::UnreachableNonterminal,
                witness: vec![sym.to_string()],
                lines: lines.clone(),
            });
        }
    }
    out
}
