//! Bottom-up chart parser.
//!
//! ID/LP and GPSG rules are read with an unordered right-hand side: an
//! active edge may consume any item it still needs, provided the new
//! daughter's label is not required to precede a daughter already consumed.
//! DCG rules are read in order. Every constituent is started by its leftmost
//! daughter and extended rightwards, so one direction suffices.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featstruct::{Bindings, FeatureStructure, Scope};
use crate::grammar::{CompiledGrammar, Formalism, RhsKind, RuleId, RuleInstance, EMPTY_WORD};
use crate::lexicon::Lexicalized;
use crate::tree::Derivation;

pub type EdgeId = usize;

/// Default bound on the number of edges one parse may create.
pub const DEFAULT_EDGE_LIMIT: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeState {
    Passive,
    Active,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EdgeOrigin {
    Rule { rule: RuleId },
    Lexical { position: usize, category: usize },
    Terminal,
    Empty,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub from: usize,
    pub to: usize,
    pub label: String,
    pub features: FeatureStructure,
    pub state: EdgeState,
    /// Items still required, rendered as text (active edges only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub needed: Vec<String>,
    /// Daughters in surface order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<EdgeId>,
    /// Rule item realized by each daughter.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub items: Vec<usize>,
    pub origin: EdgeOrigin,
}

impl Edge {
    pub fn is_passive(&self) -> bool {
        self.state == EdgeState::Passive
    }

    /// Passive edge for a grammar category (not a bare word or empty edge).
    pub fn is_constituent(&self) -> bool {
        self.is_passive() && matches!(self.origin, EdgeOrigin::Rule { .. } | EdgeOrigin::Lexical { .. })
    }

    fn item_kind(&self) -> RhsKind {
        match self.origin {
            EdgeOrigin::Terminal => RhsKind::Terminal,
            EdgeOrigin::Empty => RhsKind::Empty,
            _ => RhsKind::Category,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chart {
    pub tokens: Vec<String>,
    /// All edges in insertion order; `edges[i].id == i`.
    pub edges: Vec<Edge>,
    #[serde(skip)]
    passive_by_start: Vec<Vec<EdgeId>>,
    #[serde(skip)]
    active_by_end: Vec<Vec<EdgeId>>,
}

impl Chart {
    fn new(tokens: Vec<String>) -> Self {
        let n = tokens.len();
        Chart {
            tokens,
            edges: Vec::new(),
            passive_by_start: vec![Vec::new(); n + 1],
            active_by_end: vec![Vec::new(); n + 1],
        }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id]
    }

    pub fn passive(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.is_passive())
    }

    /// Passive category edges spanning the input with the given label.
    pub fn spanning(&self, label: &str) -> impl Iterator<Item = &Edge> + '_ {
        let n = self.tokens.len();
        let label = label.to_string();
        self.edges.iter().filter(move |e| e.is_constituent() && e.from == 0 && e.to == n && e.label == label)
    }

    /// Reconstruct the derivation below a passive edge.
    pub fn derivation(&self, id: EdgeId) -> Derivation {
        let e = &self.edges[id];
        match e.origin {
            EdgeOrigin::Rule { rule } => Derivation::Rule {
                rule,
                items: e.items.clone(),
                children: e.children.iter().map(|&c| self.derivation(c)).collect(),
            },
            EdgeOrigin::Lexical { position, category } => Derivation::Lex { position, category },
            EdgeOrigin::Terminal => Derivation::Terminal { position: e.from },
            EdgeOrigin::Empty => Derivation::Empty { position: e.from },
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("chart serializes")
    }
}

/// Restriction of the edge log to some labels and/or a span.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChartFilter {
    /// Keep only these labels; `None` keeps all.
    #[serde(default)]
    pub labels: Option<BTreeSet<String>>,
    /// Keep only edges lying within `[from, to]`.
    #[serde(default)]
    pub within: Option<(usize, usize)>,
}

impl ChartFilter {
    pub fn labels<I: IntoIterator<Item = S>, S: Into<String>>(labels: I) -> Self {
        ChartFilter { labels: Some(labels.into_iter().map(Into::into).collect()), within: None }
    }

    pub fn accepts(&self, e: &Edge) -> bool {
        if let Some(ls) = &self.labels {
            if !ls.contains(&e.label) {
                return false;
            }
        }
        if let Some((a, b)) = self.within {
            if e.from < a || e.to > b {
                return false;
            }
        }
        true
    }
}

/// Edge insertions in order, restricted by `filter`.
pub fn chart_trace<'a>(chart: &'a Chart, filter: &ChartFilter) -> impl Iterator<Item = &'a Edge> + 'a {
    let filter = filter.clone();
    chart.edges.iter().filter(move |e| filter.accepts(e))
}

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChartError {
    #[error("empty input")]
    EmptyInput,
    #[error("the chart parser does not handle {formalism} grammars; use the top-down engine")]
    FormalismMismatch { formalism: Formalism },
}

#[derive(Clone, Debug)]
pub struct ChartParse {
    pub chart: Chart,
    /// Passive edges for the start symbol spanning the input, in edge order.
    pub reading_edges: Vec<EdgeId>,
    pub derivations: Vec<Derivation>,
    /// The edge limit was hit; the chart is incomplete.
    pub truncated: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct ChartOptions {
    pub edge_limit: usize,
}

impl Default for ChartOptions {
    fn default() -> Self {
        ChartOptions { edge_limit: DEFAULT_EDGE_LIMIT }
    }
}

pub fn parse_chart(g: &CompiledGrammar, input: &Lexicalized) -> Result<ChartParse, ChartError> {
    parse_chart_with(g, input, ChartOptions::default())
}

pub fn parse_chart_with(
    g: &CompiledGrammar,
    input: &Lexicalized,
    opts: ChartOptions,
) -> Result<ChartParse, ChartError> {
    if input.is_empty() {
        return Err(ChartError::EmptyInput);
    }
    let ordered = match g.formalism {
        Formalism::Idlp | Formalism::Gpsg => false,
        Formalism::Dcg => true,
        f @ Formalism::Lfg => return Err(ChartError::FormalismMismatch { formalism: f }),
    };
    let mut p = ChartParser::new(g, input, ordered, opts.edge_limit);
    p.run();
    let reading_edges: Vec<EdgeId> = p.chart.spanning(&g.start).map(|e| e.id).collect();
    let derivations = reading_edges.iter().map(|&id| p.chart.derivation(id)).collect();
    Ok(ChartParse { chart: p.chart, reading_edges, derivations, truncated: p.truncated })
}

struct ActiveData {
    env: Bindings,
    inst: RuleInstance,
    /// Item indices not yet consumed, in rule order.
    remaining: Vec<usize>,
}

#[derive(Clone, PartialEq, Eq, Hash)]
enum Key {
    Passive { from: usize, to: usize, label: String, features: String, origin: EdgeOrigin, children: Vec<EdgeId> },
    Active { from: usize, to: usize, rule: RuleId, items: Vec<usize>, children: Vec<EdgeId> },
}

struct ChartParser<'a> {
    g: &'a CompiledGrammar,
    ordered: bool,
    chart: Chart,
    active: HashMap<EdgeId, ActiveData>,
    seen: HashSet<Key>,
    agenda: VecDeque<EdgeId>,
    /// (kind, symbol) -> (rule, item) pairs that may start a constituent.
    starters: HashMap<(RhsKind, String), Vec<(RuleId, usize)>>,
    limit: usize,
    truncated: bool,
}

impl<'a> ChartParser<'a> {
    fn new(g: &'a CompiledGrammar, input: &Lexicalized, ordered: bool, limit: usize) -> Self {
        let mut starters: HashMap<(RhsKind, String), Vec<(RuleId, usize)>> = HashMap::new();
        for r in &g.rules {
            for (t, item) in r.rhs.iter().enumerate() {
                if ordered && t > 0 {
                    break;
                }
                starters.entry((item.kind, item.symbol.clone())).or_default().push((r.id, t));
            }
        }
        let mut p = ChartParser {
            g,
            ordered,
            chart: Chart::new(input.tokens.clone()),
            active: HashMap::new(),
            seen: HashSet::new(),
            agenda: VecDeque::new(),
            starters,
            limit,
            truncated: false,
        };
        p.seed(input);
        p
    }

    fn seed(&mut self, input: &Lexicalized) {
        let terminals = self.g.terminals();
        let has_empty = self.g.rules.iter().any(|r| r.rhs.iter().any(|i| i.kind == RhsKind::Empty));
        for (i, word) in input.tokens.iter().enumerate() {
            if has_empty {
                self.add_simple(i, i, EMPTY_WORD, FeatureStructure::new(), EdgeOrigin::Empty);
            }
            for (c, cat) in input.categories[i].iter().enumerate() {
                self.add_simple(
                    i,
                    i + 1,
                    &cat.symbol,
                    cat.features.clone(),
                    EdgeOrigin::Lexical { position: i, category: c },
                );
            }
            if terminals.contains(word) {
                self.add_simple(i, i + 1, word, FeatureStructure::new(), EdgeOrigin::Terminal);
            }
        }
        if has_empty {
            let n = input.tokens.len();
            self.add_simple(n, n, EMPTY_WORD, FeatureStructure::new(), EdgeOrigin::Empty);
        }
    }

    fn add_simple(&mut self, from: usize, to: usize, label: &str, features: FeatureStructure, origin: EdgeOrigin) {
        let key = Key::Passive {
            from,
            to,
            label: label.to_string(),
            features: features.to_string(),
            origin,
            children: Vec::new(),
        };
        if !self.seen.insert(key) {
            return;
        }
        self.push(Edge {
            id: 0,
            from,
            to,
            label: label.to_string(),
            features,
            state: EdgeState::Passive,
            needed: Vec::new(),
            children: Vec::new(),
            items: Vec::new(),
            origin,
        });
    }

    fn push(&mut self, mut e: Edge) -> EdgeId {
        let id = self.chart.edges.len();
        e.id = id;
        match e.state {
            EdgeState::Passive => self.chart.passive_by_start[e.from].push(id),
            EdgeState::Active => self.chart.active_by_end[e.to].push(id),
        }
        self.chart.edges.push(e);
        self.agenda.push_back(id);
        if self.chart.edges.len() >= self.limit {
            self.truncated = true;
        }
        id
    }

    fn run(&mut self) {
        while let Some(id) = self.agenda.pop_front() {
            if self.truncated {
                return;
            }
            if self.chart.edges[id].is_passive() {
                self.invoke_rules(id);
                let from = self.chart.edges[id].from;
                let actives = self.chart.active_by_end[from].clone();
                for a in actives {
                    self.extend(Some(a), None, id);
                }
            } else {
                let to = self.chart.edges[id].to;
                let passives = self.chart.passive_by_start[to].clone();
                for p in passives {
                    self.extend(Some(id), None, p);
                }
            }
        }
    }

    fn invoke_rules(&mut self, pid: EdgeId) {
        let e = &self.chart.edges[pid];
        let key = (e.item_kind(), e.label.clone());
        let Some(starts) = self.starters.get(&key).cloned() else { return };
        for (rule, t) in starts {
            self.extend(None, Some((rule, t)), pid);
        }
    }

    /// Combine an active edge (or a fresh use of `start.0` consuming item
    /// `start.1`) with passive edge `pid`.
    fn extend(&mut self, aid: Option<EdgeId>, start: Option<(RuleId, usize)>, pid: EdgeId) {
        if self.truncated {
            return;
        }
        let (rule, candidates): (RuleId, Vec<usize>) = match (aid, start) {
            (Some(a), _) => {
                let EdgeOrigin::Rule { rule } = self.chart.edges[a].origin else { return };
                let rem = &self.active[&a].remaining;
                let cands = if self.ordered { rem.iter().take(1).copied().collect() } else { rem.clone() };
                (rule, cands)
            }
            (None, Some((rule, t))) => (rule, vec![t]),
            (None, None) => return,
        };
        let g = self.g;
        let r = &g.rules[rule];
        let (pkind, plabel) = {
            let p = &self.chart.edges[pid];
            (p.item_kind(), p.label.clone())
        };
        let mut tried = HashSet::new();
        for t in candidates {
            let item = &r.rhs[t];
            if item.kind != pkind || item.symbol != plabel {
                continue;
            }
            // Identical items give identical edges; try each spec once.
            if !tried.insert(item.to_string()) {
                continue;
            }
            if let Some(a) = aid {
                if !self.lp_allows(a, &plabel) {
                    continue;
                }
            }
            self.consume(aid, rule, t, pid);
        }
    }

    fn lp_allows(&self, aid: EdgeId, label: &str) -> bool {
        if self.ordered || self.g.lp.is_empty() {
            return true;
        }
        self.chart.edges[aid].children.iter().all(|&c| !self.g.precedes(label, &self.chart.edges[c].label))
    }

    fn consume(&mut self, aid: Option<EdgeId>, rule: RuleId, t: usize, pid: EdgeId) {
        let r = &self.g.rules[rule];
        let (mut env, inst, remaining, from, mut children, mut items) = match aid {
            Some(a) => {
                let d = &self.active[&a];
                let e = &self.chart.edges[a];
                (d.env.clone(), d.inst.clone(), d.remaining.clone(), e.from, e.children.clone(), e.items.clone())
            }
            None => {
                let mut env = Bindings::new();
                let Ok(inst) = r.instantiate(&mut env) else { return };
                let from = self.chart.edges[pid].from;
                (env, inst, (0..r.rhs.len()).collect(), from, Vec::new(), Vec::new())
            }
        };
        let p = &self.chart.edges[pid];
        let to = p.to;
        if p.item_kind() == RhsKind::Category {
            let Ok(n) = env.instantiate(&p.features, &mut Scope::new()) else { return };
            if env.unify_nodes(inst.items[t], n).is_err() {
                return;
            }
        }
        children.push(pid);
        items.push(t);
        let remaining: Vec<usize> = remaining.into_iter().filter(|&i| i != t).collect();
        let features = env.extract(inst.lhs, &HashMap::new());
        let label = r.lhs.symbol.clone();
        if remaining.is_empty() {
            let key = Key::Passive {
                from,
                to,
                label: label.clone(),
                features: features.to_string(),
                origin: EdgeOrigin::Rule { rule },
                children: children.clone(),
            };
            if self.seen.contains(&key) || self.cyclic(&label, from, to, &features, &children) {
                return;
            }
            self.seen.insert(key);
            self.push(Edge {
                id: 0,
                from,
                to,
                label,
                features,
                state: EdgeState::Passive,
                needed: Vec::new(),
                children,
                items,
                origin: EdgeOrigin::Rule { rule },
            });
        } else {
            let key = Key::Active { from, to, rule, items: items.clone(), children: children.clone() };
            if !self.seen.insert(key) {
                return;
            }
            let needed = remaining.iter().map(|&i| r.rhs[i].to_string()).collect();
            let id = self.push(Edge {
                id: 0,
                from,
                to,
                label,
                features,
                state: EdgeState::Active,
                needed,
                children,
                items,
                origin: EdgeOrigin::Rule { rule },
            });
            self.active.insert(id, ActiveData { env, inst, remaining });
        }
    }

    /// A new passive edge whose same-span descendants include an edge with
    /// its own label and features would start an endless unary loop.
    fn cyclic(&self, label: &str, from: usize, to: usize, features: &FeatureStructure, children: &[EdgeId]) -> bool {
        let fs = features.to_string();
        let mut stack: Vec<EdgeId> = children.to_vec();
        let mut seen = HashSet::new();
        while let Some(c) = stack.pop() {
            if !seen.insert(c) {
                continue;
            }
            let e = &self.chart.edges[c];
            if e.from != from || e.to != to {
                continue;
            }
            if e.label == label && e.features.to_string() == fs {
                return true;
            }
            stack.extend(e.children.iter().copied());
        }
        false
    }
}
