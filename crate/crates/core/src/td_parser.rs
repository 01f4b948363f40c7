//! Top-down depth-first parser for DCG and LFG grammars.
//!
//! Goals are solved in continuation-passing style: each solution of a goal
//! is handed to the rest of the computation, and returning from the
//! continuation is backtracking. Alternatives are tried in textual rule
//! order, then in lexicon order.
//!
//! The well-formed substring table is keyed by category and start
//! position. A goal called with no feature constraints has its complete
//! solution list recorded; later calls for the same key, constrained or not,
//! replay that list and re-unify each stored structure with the call.
//! Constrained calls only record the successes they observe, which feed
//! fragment diagnostics but are never replayed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checks::{check_left_recursion, Finding};
use crate::featstruct::{Bindings, FeatureStructure, NodeId, Scope};
use crate::grammar::{CompiledGrammar, Formalism, RhsKind, RuleId};
use crate::lexicon::Lexicalized;
use crate::tree::Derivation;

/// Stack size for the parsing thread; continuation passing nests deeply.
const PARSE_STACK: usize = 256 * 1024 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Port {
    Entry,
    Exit,
    Fail,
    Redo,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub port: Port,
    pub goal: String,
    pub features: FeatureStructure,
    pub depth: usize,
    pub position: usize,
    /// End position of the solution (EXIT only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<usize>,
    /// The solution was replayed from the substring table.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub from_table: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WfsStatus {
    /// Every solution for an unconstrained call is recorded.
    Complete,
    /// Only successes observed under constrained calls.
    Partial,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WfsSuccess {
    /// Order of recording across the whole table.
    pub id: usize,
    pub end: usize,
    pub features: FeatureStructure,
    pub derivation: Derivation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WfsEntry {
    pub symbol: String,
    pub position: usize,
    pub status: WfsStatus,
    pub successes: Vec<WfsSuccess>,
}

impl WfsEntry {
    /// Complete entry with no successes: the goal fails here.
    pub fn is_failure(&self) -> bool {
        self.status == WfsStatus::Complete && self.successes.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WfsTable {
    pub entries: BTreeMap<String, Vec<WfsEntry>>,
    next_id: usize,
}

impl WfsTable {
    pub fn get(&self, symbol: &str, position: usize) -> Option<&WfsEntry> {
        self.entries.get(symbol)?.iter().find(|e| e.position == position)
    }

    fn entry_mut(&mut self, symbol: &str, position: usize) -> &mut WfsEntry {
        let list = self.entries.entry(symbol.to_string()).or_default();
        match list.iter().position(|e| e.position == position) {
            Some(i) => &mut list[i],
            None => {
                list.push(WfsEntry {
                    symbol: symbol.to_string(),
                    position,
                    status: WfsStatus::Partial,
                    successes: Vec::new(),
                });
                list.sort_by_key(|e| e.position);
                let i = list.iter().position(|e| e.position == position).expect("just inserted");
                &mut list[i]
            }
        }
    }

    fn touch(&mut self, symbol: &str, position: usize) {
        self.entry_mut(symbol, position);
    }

    fn observe(
        &mut self,
        symbol: &str,
        position: usize,
        end: usize,
        features: FeatureStructure,
        derivation: Derivation,
    ) {
        let id = self.next_id;
        let e = self.entry_mut(symbol, position);
        if e.status == WfsStatus::Complete
            || e.successes.iter().any(|s| s.end == end && s.derivation == derivation && s.features == features)
        {
            return;
        }
        e.successes.push(WfsSuccess { id, end, features, derivation });
        self.next_id += 1;
    }

    fn complete(&mut self, symbol: &str, position: usize, sols: Vec<(usize, FeatureStructure, Derivation)>) {
        let mut successes = Vec::with_capacity(sols.len());
        for (end, features, derivation) in sols {
            successes.push(WfsSuccess { id: self.next_id, end, features, derivation });
            self.next_id += 1;
        }
        let e = self.entry_mut(symbol, position);
        e.status = WfsStatus::Complete;
        e.successes = successes;
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every recorded success as `(id, symbol, from, to)`.
    pub fn spans(&self) -> Vec<(usize, String, usize, usize)> {
        let mut out: Vec<_> = self
            .entries
            .values()
            .flatten()
            .flat_map(|e| e.successes.iter().map(move |s| (s.id, e.symbol.clone(), e.position, s.end)))
            .collect();
        out.sort();
        out
    }
}

// ---------------------------------------------------------------------------
// Trace control

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceMode {
    /// Pause before every reported event.
    Step,
    /// Pause only at breakpoints.
    Run,
    Abort,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlMsg {
    /// `None` reports every category; an empty set reports nothing.
    SetFilter(Option<BTreeSet<String>>),
    SetBreakpoints(BTreeSet<String>),
    Mode(TraceMode),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceMsg {
    Event { event: TraceEvent },
    Paused { event: TraceEvent },
    Finished { outcome: TdOutcome, readings: usize },
}

/// Client side of a running parse: sends commands, receives events.
pub struct TraceController {
    tx: Sender<ControlMsg>,
    pub events: Receiver<TraceMsg>,
}

impl TraceController {
    pub fn send(&self, msg: ControlMsg) -> bool {
        self.tx.send(msg).is_ok()
    }

    pub fn control(&self, filter: Option<BTreeSet<String>>, breakpoints: BTreeSet<String>, mode: TraceMode) -> bool {
        self.send(ControlMsg::SetFilter(filter))
            && self.send(ControlMsg::SetBreakpoints(breakpoints))
            && self.send(ControlMsg::Mode(mode))
    }

    pub fn step(&self) -> bool {
        self.send(ControlMsg::Mode(TraceMode::Step))
    }

    pub fn run(&self) -> bool {
        self.send(ControlMsg::Mode(TraceMode::Run))
    }

    pub fn abort(&self) -> bool {
        self.send(ControlMsg::Mode(TraceMode::Abort))
    }

    /// Separate the command side from the event stream, so they can live on
    /// different threads.
    pub fn into_parts(self) -> (Sender<ControlMsg>, Receiver<TraceMsg>) {
        (self.tx, self.events)
    }
}

/// Parser side of a trace channel.
pub struct TraceLink {
    rx: Receiver<ControlMsg>,
    tx: Sender<TraceMsg>,
}

pub fn trace_channel() -> (TraceController, TraceLink) {
    let (ctx, crx) = mpsc::channel();
    let (etx, erx) = mpsc::channel();
    (TraceController { tx: ctx, events: erx }, TraceLink { rx: crx, tx: etx })
}

/// Category names in `names` that the grammar and lexicon never produce.
pub fn unknown_categories(g: &CompiledGrammar, input: &Lexicalized, names: &BTreeSet<String>) -> Vec<String> {
    let mut known = g.symbols();
    known.extend(input.categories.iter().flatten().map(|c| c.symbol.clone()));
    names.iter().filter(|n| !known.contains(*n)).cloned().collect()
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TdError {
    #[error("empty input")]
    EmptyInput,
    #[error("the top-down parser does not handle {formalism} grammars; use the chart engine")]
    FormalismMismatch { formalism: Formalism },
    #[error("grammar is left recursive; refusing to parse top-down")]
    LeftRecursion { findings: Vec<Finding> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TdOutcome {
    Complete,
    Aborted,
    /// The recursion guard fired.
    DepthLimit {
        limit: usize,
    },
}

#[derive(Default)]
pub struct TdOptions {
    /// Use the substring table to replay solved goals.
    pub memo: bool,
    /// Record trace events.
    pub trace: bool,
    pub filter: Option<BTreeSet<String>>,
    pub breakpoints: BTreeSet<String>,
    pub link: Option<TraceLink>,
}

impl TdOptions {
    pub fn new() -> Self {
        TdOptions { memo: true, ..Default::default() }
    }

    pub fn traced() -> Self {
        TdOptions { memo: true, trace: true, ..Default::default() }
    }
}

#[derive(Clone, Debug)]
pub struct TdParse {
    pub derivations: Vec<Derivation>,
    pub wfst: WfsTable,
    pub trace: Vec<TraceEvent>,
    pub outcome: TdOutcome,
}

pub fn depth_limit(g: &CompiledGrammar, n: usize) -> usize {
    10 * (g.rules.len() + n)
}

pub fn parse_topdown(g: &CompiledGrammar, input: &Lexicalized, opts: TdOptions) -> Result<TdParse, TdError> {
    if input.is_empty() {
        return Err(TdError::EmptyInput);
    }
    if !matches!(g.formalism, Formalism::Dcg | Formalism::Lfg) {
        return Err(TdError::FormalismMismatch { formalism: g.formalism });
    }
    let findings = check_left_recursion(&g.source);
    if !findings.is_empty() {
        return Err(TdError::LeftRecursion { findings });
    }
    std::thread::scope(|s| {
        std::thread::Builder::new()
            .stack_size(PARSE_STACK)
            .spawn_scoped(s, || run(g, input, opts))
            .expect("spawn parser thread")
            .join()
            .expect("parser thread panicked")
    })
}

fn run(g: &CompiledGrammar, input: &Lexicalized, opts: TdOptions) -> Result<TdParse, TdError> {
    let mut by_lhs: HashMap<String, Vec<RuleId>> = HashMap::new();
    for r in &g.rules {
        by_lhs.entry(r.lhs.symbol.clone()).or_default().push(r.id);
    }
    let mut td = Td {
        g,
        input,
        by_lhs,
        wfst: WfsTable::default(),
        memo: opts.memo,
        tracing: opts.trace || opts.link.is_some(),
        filter: opts.filter,
        breakpoints: opts.breakpoints,
        mode: TraceMode::Run,
        link: opts.link,
        trace: Vec::new(),
        limit: depth_limit(g, input.len()),
        halt: None,
    };
    let mut env = Bindings::new();
    let root = env.empty_struct();
    let n = input.len();
    let mut derivations = Vec::new();
    let start = g.start.clone();
    td.solve_cat(&start, root, 0, &env, 0, &mut |_, end, _, d| {
        if end == n {
            derivations.push(d);
        }
    });
    let outcome = td.halt.unwrap_or(TdOutcome::Complete);
    if let Some(link) = &td.link {
        let _ = link.tx.send(TraceMsg::Finished { outcome, readings: derivations.len() });
    }
    Ok(TdParse { derivations, wfst: td.wfst, trace: td.trace, outcome })
}

type Cont<'c, 'a> = dyn FnMut(&mut Td<'a>, usize, Bindings, Derivation) + 'c;
type SeqCont<'c, 'a> = dyn FnMut(&mut Td<'a>, usize, Bindings, Vec<Derivation>) + 'c;

struct Td<'a> {
    g: &'a CompiledGrammar,
    input: &'a Lexicalized,
    by_lhs: HashMap<String, Vec<RuleId>>,
    wfst: WfsTable,
    memo: bool,
    tracing: bool,
    filter: Option<BTreeSet<String>>,
    breakpoints: BTreeSet<String>,
    mode: TraceMode,
    link: Option<TraceLink>,
    trace: Vec<TraceEvent>,
    limit: usize,
    halt: Option<TdOutcome>,
}

impl<'a> Td<'a> {
    fn snapshot(env: &Bindings, node: NodeId) -> FeatureStructure {
        env.extract(node, &HashMap::new())
    }

    #[allow(clippy::too_many_arguments)]
    fn emit(
        &mut self,
        port: Port,
        goal: &str,
        env: &Bindings,
        node: NodeId,
        depth: usize,
        position: usize,
        end: Option<usize>,
        from_table: bool,
    ) {
        if !self.tracing || self.halt.is_some() {
            return;
        }
        self.poll();
        let reported = self.filter.as_ref().is_none_or(|f| f.contains(goal));
        let breakpoint = port == Port::Entry && self.breakpoints.contains(goal);
        if !reported && !breakpoint {
            return;
        }
        let event = TraceEvent {
            port,
            goal: goal.to_string(),
            features: Self::snapshot(env, node),
            depth,
            position,
            end,
            from_table,
        };
        if reported {
            self.trace.push(event.clone());
            if let Some(link) = &self.link {
                let _ = link.tx.send(TraceMsg::Event { event: event.clone() });
            }
        }
        if breakpoint || (self.mode == TraceMode::Step && reported) {
            self.pause(event);
        }
    }

    fn poll(&mut self) {
        loop {
            let msg = match &self.link {
                Some(link) => link.rx.try_recv(),
                None => return,
            };
            match msg {
                Ok(m) => self.apply(m),
                Err(TryRecvError::Empty) | Err(TryRecvError::Disconnected) => return,
            }
        }
    }

    fn apply(&mut self, m: ControlMsg) {
        match m {
            ControlMsg::SetFilter(f) => self.filter = f,
            ControlMsg::SetBreakpoints(b) => self.breakpoints = b,
            ControlMsg::Mode(TraceMode::Abort) => self.halt = Some(TdOutcome::Aborted),
            ControlMsg::Mode(m) => self.mode = m,
        }
    }

    /// Block until the controller resumes or aborts.
    fn pause(&mut self, event: TraceEvent) {
        let Some(link) = &self.link else { return };
        if link.tx.send(TraceMsg::Paused { event }).is_err() {
            return;
        }
        loop {
            let msg = match &self.link {
                Some(link) => link.rx.recv(),
                None => return,
            };
            match msg {
                Ok(ControlMsg::Mode(m)) => {
                    self.apply(ControlMsg::Mode(m));
                    return;
                }
                Ok(other) => self.apply(other),
                Err(_) => {
                    self.mode = TraceMode::Run;
                    return;
                }
            }
        }
    }

    fn solve_cat(
        &mut self,
        symbol: &str,
        node: NodeId,
        pos: usize,
        env: &Bindings,
        depth: usize,
        k: &mut Cont<'_, 'a>,
    ) {
        if self.halt.is_some() {
            return;
        }
        if depth > self.limit {
            self.halt = Some(TdOutcome::DepthLimit { limit: self.limit });
            return;
        }
        self.emit(Port::Entry, symbol, env, node, depth, pos, None, false);

        if self.memo {
            if let Some(entry) = self.wfst.get(symbol, pos).filter(|e| e.status == WfsStatus::Complete) {
                let sols: Vec<(usize, FeatureStructure, Derivation)> =
                    entry.successes.iter().map(|s| (s.end, s.features.clone(), s.derivation.clone())).collect();
                for (end, fs, d) in sols {
                    let mut e2 = env.clone();
                    let Ok(n) = e2.instantiate(&fs, &mut Scope::new()) else { continue };
                    if e2.unify_nodes(node, n).is_err() {
                        continue;
                    }
                    self.emit(Port::Exit, symbol, &e2, node, depth, pos, Some(end), true);
                    k(self, end, e2, d);
                    if self.halt.is_some() {
                        return;
                    }
                    self.emit(Port::Redo, symbol, env, node, depth, pos, None, false);
                }
                self.emit(Port::Fail, symbol, env, node, depth, pos, None, false);
                return;
            }
        }

        self.wfst.touch(symbol, pos);
        let unconstrained = Self::snapshot(env, node).is_empty();
        let mut recorded: Option<Vec<(usize, FeatureStructure, Derivation)>> = unconstrained.then(Vec::new);

        let rules = self.by_lhs.get(symbol).cloned().unwrap_or_default();
        for rid in rules {
            if self.halt.is_some() {
                return;
            }
            let rule = &self.g.rules[rid];
            let mut e2 = env.clone();
            let Ok(inst) = rule.instantiate(&mut e2) else { continue };
            if e2.unify_nodes(inst.lhs, node).is_err() {
                continue;
            }
            let items = inst.items.clone();
            let rec = &mut recorded;
            self.solve_seq(rid, &items, 0, pos, e2, Vec::new(), depth + 1, &mut |td, end, e3, children| {
                let d = Derivation::ordered(rid, children);
                td.report(symbol, node, pos, end, depth, env, e3, d, rec, k);
            });
        }
        if self.halt.is_some() {
            return;
        }
        let cats: Vec<usize> = match self.input.categories.get(pos) {
            Some(cs) => cs.iter().enumerate().filter(|(_, c)| c.symbol == symbol).map(|(i, _)| i).collect(),
            None => Vec::new(),
        };
        for ci in cats {
            let cat = &self.input.categories[pos][ci];
            let mut e2 = env.clone();
            let Ok(n) = e2.instantiate(&cat.features, &mut Scope::new()) else { continue };
            if e2.unify_nodes(node, n).is_err() {
                continue;
            }
            let d = Derivation::Lex { position: pos, category: ci };
            self.report(symbol, node, pos, pos + 1, depth, env, e2, d, &mut recorded, k);
            if self.halt.is_some() {
                return;
            }
        }
        if let Some(sols) = recorded {
            if self.memo && self.halt.is_none() {
                self.wfst.complete(symbol, pos, sols);
            }
        }
        self.emit(Port::Fail, symbol, env, node, depth, pos, None, false);
    }

    /// Hand one solution of a goal to its continuation, between the EXIT and
    /// REDO ports.
    #[allow(clippy::too_many_arguments)]
    fn report(
        &mut self,
        symbol: &str,
        node: NodeId,
        pos: usize,
        end: usize,
        depth: usize,
        call_env: &Bindings,
        env: Bindings,
        d: Derivation,
        recorded: &mut Option<Vec<(usize, FeatureStructure, Derivation)>>,
        k: &mut Cont<'_, 'a>,
    ) {
        if self.halt.is_some() {
            return;
        }
        let fs = Self::snapshot(&env, node);
        match recorded {
            Some(list) => list.push((end, fs.clone(), d.clone())),
            None => self.wfst.observe(symbol, pos, end, fs, d.clone()),
        }
        self.emit(Port::Exit, symbol, &env, node, depth, pos, Some(end), false);
        k(self, end, env, d);
        if self.halt.is_none() {
            self.emit(Port::Redo, symbol, call_env, node, depth, pos, None, false);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn solve_seq(
        &mut self,
        rid: RuleId,
        items: &[NodeId],
        idx: usize,
        pos: usize,
        env: Bindings,
        children: Vec<Derivation>,
        depth: usize,
        k: &mut SeqCont<'_, 'a>,
    ) {
        if self.halt.is_some() {
            return;
        }
        let rule = &self.g.rules[rid];
        if idx == rule.rhs.len() {
            k(self, pos, env, children);
            return;
        }
        let item = &rule.rhs[idx];
        match item.kind {
            RhsKind::Terminal => {
                if self.input.tokens.get(pos) == Some(&item.symbol) {
                    let mut c = children;
                    c.push(Derivation::Terminal { position: pos });
                    self.solve_seq(rid, items, idx + 1, pos + 1, env, c, depth, k);
                }
            }
            RhsKind::Empty => {
                let mut c = children;
                c.push(Derivation::Empty { position: pos });
                self.solve_seq(rid, items, idx + 1, pos, env, c, depth, k);
            }
            RhsKind::Category => {
                let symbol = item.symbol.clone();
                self.solve_cat(&symbol, items[idx], pos, &env, depth, &mut |td, end, e2, d| {
                    let mut c = children.clone();
                    c.push(d);
                    td.solve_seq(rid, items, idx + 1, end, e2, c, depth, k);
                });
            }
        }
    }
}
