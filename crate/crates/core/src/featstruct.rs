//! Feature structures with shared variables, and copying unification over
//! explicit binding environments.
//!
//! A [`FeatureStructure`] is a term: features map to atoms, variables or
//! nested structures. Two occurrences of the same variable name denote one
//! value cell. A variable occurrence may carry content (`X:[num=sg]`), which
//! is how rendered structures express sharing through coindex tags (`#1`).
//!
//! [`Bindings`] is a union-find store of value cells. Terms are instantiated
//! into it, unified there, and extracted back into terms. Unification never
//! mutates the environment it was given; it returns a new one.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::syntax::{self, Cursor, SyntaxError, Tok};

/// Path of feature names from the root of a structure.
pub type FeaturePath = Vec<String>;

pub fn path_string(path: &[String]) -> String {
    if path.is_empty() {
        "<root>".to_string()
    } else {
        path.join(".")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Value {
    Atom(String),
    Var(Variable),
    Struct(FeatureStructure),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Variable {
    /// Capitalized identifier, `_`-prefixed name, or a coindex tag like `#1`.
    pub name: String,
    pub value: Option<Box<Value>>,
}

impl Value {
    pub fn atom(s: impl Into<String>) -> Value {
        Value::Atom(s.into())
    }

    pub fn var(name: impl Into<String>) -> Value {
        Value::Var(Variable { name: name.into(), value: None })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct FeatureStructure {
    /// `[X]` or `[X, kas=nom]`: the whole structure is the variable `X`.
    root: Option<String>,
    features: BTreeMap<String, Value>,
}

impl FeatureStructure {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty() && self.root.is_none()
    }

    /// Structure identified with a variable, as in `NP[X]`.
    pub fn of_var(name: impl Into<String>) -> Self {
        FeatureStructure { root: Some(name.into()), features: BTreeMap::new() }
    }

    pub fn root_var(&self) -> Option<&str> {
        self.root.as_deref()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn get(&self, feature: &str) -> Option<&Value> {
        self.features.get(feature)
    }

    /// Atom value of `feature`, looking through variables that carry content.
    pub fn get_atom(&self, feature: &str) -> Option<&str> {
        let mut v = self.features.get(feature)?;
        loop {
            match v {
                Value::Atom(a) => return Some(a),
                Value::Var(Variable { value: Some(inner), .. }) => v = inner,
                _ => return None,
            }
        }
    }

    pub fn insert(&mut self, feature: impl Into<String>, value: Value) -> Option<Value> {
        self.features.insert(feature.into(), value)
    }

    pub fn with(mut self, feature: impl Into<String>, value: Value) -> Self {
        self.insert(feature, value);
        self
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Value)> {
        self.features.iter_mut()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Value)> {
        self.features.iter()
    }

    pub fn remove(&mut self, feature: &str) -> Option<Value> {
        self.features.remove(feature)
    }

    /// Names of all variables occurring anywhere in the term.
    pub fn variables(&self) -> Vec<String> {
        fn walk(v: &Value, out: &mut Vec<String>) {
            match v {
                Value::Atom(_) => {}
                Value::Var(var) => {
                    if !out.contains(&var.name) {
                        out.push(var.name.clone());
                    }
                    if let Some(inner) = &var.value {
                        walk(inner, out);
                    }
                }
                Value::Struct(fs) => {
                    for name in fs.variables() {
                        if !out.contains(&name) {
                            out.push(name);
                        }
                    }
                }
            }
        }
        let mut out = Vec::new();
        if let Some(r) = &self.root {
            out.push(r.clone());
        }
        self.features.values().for_each(|v| walk(v, &mut out));
        out
    }

    /// Parse the bracketed text syntax, e.g. `[kas=K, num=sg]`.
    pub fn parse(src: &str) -> Result<Self, SyntaxError> {
        let toks = syntax::tokenize(src, 1)?;
        let mut cur = Cursor::new(&toks, syntax::end_pos(src, 1));
        let fs = parse_fs(&mut cur)?;
        if !cur.is_done() {
            return Err(cur.unexpected("end of input"));
        }
        Ok(fs)
    }

    /// Same structure with sharing expressed through canonical `#n` tags and
    /// unshared unbound variables written `_`.
    pub fn canonical(&self) -> Result<FeatureStructure, UnifyError> {
        let mut env = Bindings::new();
        let node = env.instantiate(self, &mut Scope::new())?;
        Ok(env.extract(node, &HashMap::new()))
    }

    /// Rename every variable to avoid collisions with another term.
    pub fn rename_vars(&self, f: &impl Fn(&str) -> String) -> FeatureStructure {
        fn walk(v: &Value, f: &impl Fn(&str) -> String) -> Value {
            match v {
                Value::Atom(a) => Value::Atom(a.clone()),
                Value::Var(var) => Value::Var(Variable {
                    name: if var.name == "_" { "_".into() } else { f(&var.name) },
                    value: var.value.as_ref().map(|b| Box::new(walk(b, f))),
                }),
                Value::Struct(fs) => Value::Struct(fs.rename_vars(f)),
            }
        }
        FeatureStructure {
            root: self.root.as_ref().map(|r| if r == "_" { r.clone() } else { f(r) }),
            features: self.features.iter().map(|(k, v)| (k.clone(), walk(v, f))).collect(),
        }
    }

    pub fn render(&self, style: RenderStyle) -> String {
        match style {
            RenderStyle::Bracketed => self.to_string(),
            RenderStyle::Indented => {
                if self.is_empty() {
                    return "[]".to_string();
                }
                let mut out = String::new();
                write_indented(self, 0, &mut out);
                out.pop();
                out
            }
        }
    }
}

impl FromIterator<(String, Value)> for FeatureStructure {
    fn from_iter<I: IntoIterator<Item = (String, Value)>>(iter: I) -> Self {
        FeatureStructure { root: None, features: iter.into_iter().collect() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderStyle {
    Bracketed,
    Indented,
}

pub fn render_fs(fs: &FeatureStructure, style: RenderStyle) -> String {
    fs.render(style)
}

fn write_atom(a: &str, f: &mut impl fmt::Write) -> fmt::Result {
    if syntax::is_atom_ident(a) {
        f.write_str(a)
    } else {
        write!(f, "'{a}'")
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Atom(a) => write_atom(a, f),
            Value::Var(Variable { name, value: None }) => f.write_str(name),
            Value::Var(Variable { name, value: Some(v) }) => write!(f, "{name}:{v}"),
            Value::Struct(fs) => write!(f, "{fs}"),
        }
    }
}

impl fmt::Display for FeatureStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_char('[')?;
        if let Some(r) = &self.root {
            f.write_str(r)?;
        }
        for (i, (k, v)) in self.features.iter().enumerate() {
            if i > 0 || self.root.is_some() {
                f.write_str(", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        f.write_char(']')
    }
}

fn write_indented(fs: &FeatureStructure, depth: usize, out: &mut String) {
    for (k, v) in &fs.features {
        let pad = "  ".repeat(depth);
        let mut v = v;
        let mut tag = String::new();
        if let Value::Var(var) = v {
            tag.push(' ');
            tag.push_str(&var.name);
            if let Some(inner) = &var.value {
                v = inner;
            }
        }
        match v {
            Value::Struct(inner) if !inner.is_empty() => {
                let _ = writeln!(out, "{pad}{k}:{tag}");
                write_indented(inner, depth + 1, out);
            }
            Value::Struct(_) => {
                let _ = writeln!(out, "{pad}{k}:{tag} []");
            }
            Value::Atom(a) => {
                let mut s = String::new();
                let _ = write_atom(a, &mut s);
                let _ = writeln!(out, "{pad}{k}:{tag} {s}");
            }
            Value::Var(_) => {
                let _ = writeln!(out, "{pad}{k}:{tag}");
            }
        }
    }
}

impl FromStr for FeatureStructure {
    type Err = SyntaxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeatureStructure::parse(s)
    }
}

impl Serialize for FeatureStructure {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FeatureStructure {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        FeatureStructure::parse(&s).map_err(serde::de::Error::custom)
    }
}

impl Value {
    pub fn parse(src: &str) -> Result<Self, SyntaxError> {
        let toks = syntax::tokenize(src, 1)?;
        let mut cur = Cursor::new(&toks, syntax::end_pos(src, 1));
        let v = parse_value(&mut cur)?;
        if !cur.is_done() {
            return Err(cur.unexpected("end of input"));
        }
        Ok(v)
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Value::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// `[` features `]`
pub(crate) fn parse_fs(cur: &mut Cursor<'_>) -> Result<FeatureStructure, SyntaxError> {
    cur.expect(&Tok::LBracket)?;
    let mut fs = FeatureStructure::new();
    if cur.eat(&Tok::RBracket) {
        return Ok(fs);
    }
    let root_var = match (cur.peek(), cur.peek_at(1)) {
        (Some(Tok::Ident(s)), Some(Tok::RBracket | Tok::Comma)) if !syntax::is_atom_ident(s) => Some(s.clone()),
        (Some(Tok::Hash(s)), Some(Tok::RBracket | Tok::Comma)) => Some(format!("#{s}")),
        _ => None,
    };
    if let Some(r) = root_var {
        cur.next();
        fs.root = Some(r);
        if cur.eat(&Tok::RBracket) {
            return Ok(fs);
        }
        cur.expect(&Tok::Comma)?;
    }
    loop {
        let pos = cur.pos();
        let name = cur.ident("feature name")?;
        if !syntax::is_atom_ident(&name) || name.chars().next().is_some_and(|c| c.is_ascii_digit()) {
            return Err(SyntaxError::new(pos, format!("feature name `{name}` must be a lowercase identifier")));
        }
        cur.expect(&Tok::Eq)?;
        let value = parse_value(cur)?;
        if fs.features.insert(name.clone(), value).is_some() {
            return Err(SyntaxError::new(pos, format!("feature `{name}` given twice")));
        }
        if cur.eat(&Tok::Comma) {
            continue;
        }
        if cur.eat(&Tok::RBracket) {
            return Ok(fs);
        }
        return Err(cur.unexpected("`,` or `]`"));
    }
}

pub(crate) fn parse_value(cur: &mut Cursor<'_>) -> Result<Value, SyntaxError> {
    let pos = cur.pos();
    match cur.peek() {
        Some(Tok::LBracket) => Ok(Value::Struct(parse_fs(cur)?)),
        Some(Tok::Quoted(s)) => {
            let s = s.clone();
            cur.next();
            if s.is_empty() {
                return Err(SyntaxError::new(pos, "empty quoted atom"));
            }
            Ok(Value::Atom(s))
        }
        Some(Tok::Hash(tag)) => {
            let name = format!("#{tag}");
            cur.next();
            parse_var_tail(cur, name)
        }
        Some(Tok::Ident(s)) => {
            let s = s.clone();
            cur.next();
            if syntax::is_atom_ident(&s) {
                Ok(Value::Atom(s))
            } else if s == "_" {
                Ok(Value::var("_"))
            } else {
                parse_var_tail(cur, s)
            }
        }
        _ => Err(cur.unexpected("a value (atom, variable or `[...]`)")),
    }
}

fn parse_var_tail(cur: &mut Cursor<'_>, name: String) -> Result<Value, SyntaxError> {
    let value = if cur.eat(&Tok::Colon) { Some(Box::new(parse_value(cur)?)) } else { None };
    Ok(Value::Var(Variable { name, value }))
}

// ---------------------------------------------------------------------------
// Binding environments

pub type NodeId = usize;

/// Variable name to cell, local to one instantiation (one rule use, one edge).
pub type Scope = HashMap<String, NodeId>;

#[derive(Clone, Debug, PartialEq, Eq)]
enum Cell {
    Ref(NodeId),
    Free,
    Atom(String),
    Struct(BTreeMap<String, NodeId>),
}

/// Union-find store of value cells plus the named variables of the caller's
/// scope. Cloning an environment is how callers keep copying semantics.
#[derive(Clone, Debug)]
pub struct Bindings {
    cells: Vec<Cell>,
    vars: BTreeMap<String, NodeId>,
    occurs_check: bool,
}

impl Default for Bindings {
    fn default() -> Self {
        Bindings { cells: Vec::new(), vars: BTreeMap::new(), occurs_check: true }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UnifyError {
    #[error("clash at {}: {left} vs {right}", path_string(.path))]
    Clash { path: FeaturePath, left: String, right: String },
    #[error("occurs check failed at {}", path_string(.path))]
    Occurs { path: FeaturePath },
}

impl UnifyError {
    pub fn path(&self) -> &[String] {
        match self {
            UnifyError::Clash { path, .. } | UnifyError::Occurs { path } => path,
        }
    }
}

/// Successful unification: the combined structure and the extended
/// environment.
#[derive(Clone, Debug)]
pub struct Unified {
    pub result: FeatureStructure,
    pub env: Bindings,
}

/// Unify two structures whose variables live in `env`'s scope. The input
/// environment is left untouched.
pub fn unify(a: &FeatureStructure, b: &FeatureStructure, env: &Bindings) -> Result<Unified, UnifyError> {
    let mut env = env.clone();
    let mut scope = std::mem::take(&mut env.vars).into_iter().collect::<Scope>();
    let na = env.instantiate(a, &mut scope)?;
    let nb = env.instantiate(b, &mut scope)?;
    env.vars = scope.into_iter().collect();
    env.unify_nodes(na, nb)?;
    let names = env.naming();
    let result = env.extract(na, &names);
    Ok(Unified { result, env })
}

/// True iff every path and value of `a` occurs in `b`, including sharing.
pub fn subsumes(a: &FeatureStructure, b: &FeatureStructure) -> bool {
    let mut env = Bindings::new();
    let (Ok(na), Ok(nb)) = (env.instantiate(a, &mut Scope::new()), env.instantiate(b, &mut Scope::new())) else {
        return false;
    };
    env.subsumes_nodes(na, nb)
}

/// Equality up to variable renaming (mutual subsumption).
pub fn isomorphic(a: &FeatureStructure, b: &FeatureStructure) -> bool {
    first_difference(a, b).is_none()
}

/// First feature path, in depth-first lexicographic order, at which two
/// structures differ; `None` when they are isomorphic.
pub fn first_difference(a: &FeatureStructure, b: &FeatureStructure) -> Option<FeaturePath> {
    let mut env = Bindings::new();
    let na = match env.instantiate(a, &mut Scope::new()) {
        Ok(n) => n,
        Err(_) => return Some(Vec::new()),
    };
    let nb = match env.instantiate(b, &mut Scope::new()) {
        Ok(n) => n,
        Err(_) => return Some(Vec::new()),
    };
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    let mut path = Vec::new();
    if env.diff_nodes(na, nb, &mut fwd, &mut back, &mut path) {
        None
    } else {
        Some(path)
    }
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn without_occurs_check() -> Self {
        Bindings { occurs_check: false, ..Self::default() }
    }

    /// Current value of a named variable, if the variable is known.
    pub fn lookup(&self, var: &str) -> Option<Value> {
        let node = *self.vars.get(var)?;
        let names = self.naming();
        Some(self.extract_value(node, &names))
    }

    pub fn var_names(&self) -> impl Iterator<Item = &String> {
        self.vars.keys()
    }

    pub fn fresh(&mut self) -> NodeId {
        self.cells.push(Cell::Free);
        self.cells.len() - 1
    }

    pub fn atom(&mut self, a: &str) -> NodeId {
        self.cells.push(Cell::Atom(a.to_string()));
        self.cells.len() - 1
    }

    pub fn empty_struct(&mut self) -> NodeId {
        self.cells.push(Cell::Struct(BTreeMap::new()));
        self.cells.len() - 1
    }

    pub fn deref(&self, mut n: NodeId) -> NodeId {
        while let Cell::Ref(next) = self.cells[n] {
            n = next;
        }
        n
    }

    pub fn is_free(&self, n: NodeId) -> bool {
        matches!(self.cells[self.deref(n)], Cell::Free)
    }

    pub fn atom_of(&self, n: NodeId) -> Option<&str> {
        match &self.cells[self.deref(n)] {
            Cell::Atom(a) => Some(a),
            _ => None,
        }
    }

    /// Build cells for a term. Variables are looked up in (and added to)
    /// `scope`.
    pub fn instantiate(&mut self, fs: &FeatureStructure, scope: &mut Scope) -> Result<NodeId, UnifyError> {
        let mut pending = Vec::new();
        let root = self.inst_struct(fs, scope, &mut pending);
        for (var, val) in pending {
            self.unify_nodes(var, val)?;
        }
        Ok(root)
    }

    pub fn instantiate_value(&mut self, v: &Value, scope: &mut Scope) -> Result<NodeId, UnifyError> {
        let mut pending = Vec::new();
        let root = self.inst_value(v, scope, &mut pending);
        for (var, val) in pending {
            self.unify_nodes(var, val)?;
        }
        Ok(root)
    }

    fn inst_struct(&mut self, fs: &FeatureStructure, scope: &mut Scope, pending: &mut Vec<(NodeId, NodeId)>) -> NodeId {
        let mut map = BTreeMap::new();
        for (k, v) in &fs.features {
            let n = self.inst_value(v, scope, pending);
            map.insert(k.clone(), n);
        }
        self.cells.push(Cell::Struct(map));
        let node = self.cells.len() - 1;
        if let Some(r) = &fs.root {
            let v = self.inst_value(&Value::var(r.clone()), scope, pending);
            pending.push((v, node));
        }
        node
    }

    fn inst_value(&mut self, v: &Value, scope: &mut Scope, pending: &mut Vec<(NodeId, NodeId)>) -> NodeId {
        match v {
            Value::Atom(a) => self.atom(a),
            Value::Struct(fs) => self.inst_struct(fs, scope, pending),
            Value::Var(var) => {
                let node = if var.name == "_" {
                    self.fresh()
                } else if let Some(&n) = scope.get(&var.name) {
                    n
                } else {
                    let n = self.fresh();
                    scope.insert(var.name.clone(), n);
                    n
                };
                if let Some(inner) = &var.value {
                    let content = self.inst_value(inner, scope, pending);
                    pending.push((node, content));
                }
                node
            }
        }
    }

    /// Unify two cells in place. On error the environment is left in an
    /// unspecified state; callers work on a clone.
    pub fn unify_nodes(&mut self, a: NodeId, b: NodeId) -> Result<(), UnifyError> {
        let mut path = Vec::new();
        self.unify_rec(a, b, &mut path)?;
        if self.occurs_check {
            self.check_acyclic(a)?;
        }
        Ok(())
    }

    fn unify_rec(&mut self, a: NodeId, b: NodeId, path: &mut FeaturePath) -> Result<(), UnifyError> {
        let a = self.deref(a);
        let b = self.deref(b);
        if a == b {
            return Ok(());
        }
        match (&self.cells[a], &self.cells[b]) {
            (Cell::Free, _) => {
                self.cells[a] = Cell::Ref(b);
                Ok(())
            }
            (_, Cell::Free) => {
                self.cells[b] = Cell::Ref(a);
                Ok(())
            }
            (Cell::Atom(x), Cell::Atom(y)) => {
                if x == y {
                    self.cells[a] = Cell::Ref(b);
                    Ok(())
                } else {
                    Err(UnifyError::Clash { path: path.clone(), left: x.clone(), right: y.clone() })
                }
            }
            (Cell::Struct(_), Cell::Struct(_)) => {
                let Cell::Struct(fa) = std::mem::replace(&mut self.cells[a], Cell::Ref(b)) else { unreachable!() };
                for (k, va) in fa {
                    let existing = match &self.cells[self.deref(b)] {
                        Cell::Struct(fb) => fb.get(&k).copied(),
                        _ => unreachable!("struct target changed kind"),
                    };
                    match existing {
                        Some(vb) => {
                            path.push(k);
                            self.unify_rec(va, vb, path)?;
                            path.pop();
                        }
                        None => {
                            let target = self.deref(b);
                            if let Cell::Struct(fb) = &mut self.cells[target] {
                                fb.insert(k, va);
                            }
                        }
                    }
                }
                Ok(())
            }
            (x, y) => Err(UnifyError::Clash { path: path.clone(), left: self.describe(x), right: self.describe(y) }),
        }
    }

    fn describe(&self, c: &Cell) -> String {
        match c {
            Cell::Atom(a) => a.clone(),
            Cell::Struct(_) => "[...]".to_string(),
            Cell::Free => "_".to_string(),
            Cell::Ref(n) => self.describe(&self.cells[self.deref(*n)]),
        }
    }

    fn check_acyclic(&self, root: NodeId) -> Result<(), UnifyError> {
        // 0 = unseen, 1 = on stack, 2 = done
        let mut color: HashMap<NodeId, u8> = HashMap::new();
        let mut path = Vec::new();
        if self.cycle_from(self.deref(root), &mut color, &mut path) {
            Err(UnifyError::Occurs { path })
        } else {
            Ok(())
        }
    }

    fn cycle_from(&self, n: NodeId, color: &mut HashMap<NodeId, u8>, path: &mut FeaturePath) -> bool {
        match color.get(&n) {
            Some(1) => return true,
            Some(_) => return false,
            None => {}
        }
        color.insert(n, 1);
        if let Cell::Struct(map) = &self.cells[n] {
            for (k, &child) in map {
                path.push(k.clone());
                if self.cycle_from(self.deref(child), color, path) {
                    return true;
                }
                path.pop();
            }
        }
        color.insert(n, 2);
        false
    }

    /// Node to display-name map built from the named variables, first name
    /// alphabetically wins.
    pub fn naming(&self) -> HashMap<NodeId, String> {
        let mut names = HashMap::new();
        for (name, &node) in &self.vars {
            if name.starts_with('#') {
                continue;
            }
            names.entry(self.deref(node)).or_insert_with(|| name.clone());
        }
        names
    }

    /// Read a cell back as a term. Cells reached more than once are tagged;
    /// the tag is the variable name from `names` or a fresh `#n`.
    pub fn extract(&self, root: NodeId, names: &HashMap<NodeId, String>) -> FeatureStructure {
        match self.extract_value(root, names) {
            Value::Struct(fs) => fs,
            _ => FeatureStructure::new(),
        }
    }

    pub fn extract_value(&self, root: NodeId, names: &HashMap<NodeId, String>) -> Value {
        let mut counts: HashMap<NodeId, usize> = HashMap::new();
        self.count_refs(self.deref(root), &mut counts);
        let mut tags: HashMap<NodeId, String> = HashMap::new();
        let mut next_tag = 1;
        self.build_value(self.deref(root), names, &counts, &mut tags, &mut next_tag, true)
    }

    fn count_refs(&self, n: NodeId, counts: &mut HashMap<NodeId, usize>) {
        let c = counts.entry(n).or_insert(0);
        *c += 1;
        if *c > 1 {
            return;
        }
        if let Cell::Struct(map) = &self.cells[n] {
            for &child in map.values() {
                self.count_refs(self.deref(child), counts);
            }
        }
    }

    fn build_value(
        &self,
        n: NodeId,
        names: &HashMap<NodeId, String>,
        counts: &HashMap<NodeId, usize>,
        tags: &mut HashMap<NodeId, String>,
        next_tag: &mut usize,
        is_root: bool,
    ) -> Value {
        let shared = counts.get(&n).copied().unwrap_or(0) > 1 && !is_root;
        if let Some(tag) = tags.get(&n) {
            return Value::var(tag.clone());
        }
        let content = match &self.cells[n] {
            Cell::Free => None,
            Cell::Atom(a) => Some(Value::Atom(a.clone())),
            Cell::Struct(map) => {
                if shared {
                    // Register the tag before descending so later references
                    // inside this subtree print the tag only.
                    let tag = self.tag_for(n, names, next_tag);
                    tags.insert(n, tag);
                }
                let mut fs = FeatureStructure::new();
                for (k, &child) in map {
                    let v = self.build_value(self.deref(child), names, counts, tags, next_tag, false);
                    fs.features.insert(k.clone(), v);
                }
                Some(Value::Struct(fs))
            }
            Cell::Ref(_) => unreachable!("deref'd"),
        };
        match (content, shared) {
            (Some(Value::Struct(fs)), true) => {
                let tag = tags.get(&n).cloned().expect("tag registered");
                Value::Var(Variable { name: tag, value: Some(Box::new(Value::Struct(fs))) })
            }
            (Some(v), false) => v,
            (Some(v), true) => {
                let tag = self.tag_for(n, names, next_tag);
                tags.insert(n, tag.clone());
                Value::Var(Variable { name: tag, value: Some(Box::new(v)) })
            }
            (None, _) => {
                if shared || names.contains_key(&n) {
                    let tag = self.tag_for(n, names, next_tag);
                    tags.insert(n, tag.clone());
                    Value::var(tag)
                } else {
                    Value::var("_")
                }
            }
        }
    }

    fn tag_for(&self, n: NodeId, names: &HashMap<NodeId, String>, next_tag: &mut usize) -> String {
        if let Some(name) = names.get(&n) {
            return name.clone();
        }
        let t = format!("#{}", *next_tag);
        *next_tag += 1;
        t
    }

    /// Subsumption between two cells of this environment.
    pub fn subsumes_nodes(&self, a: NodeId, b: NodeId) -> bool {
        let mut map = HashMap::new();
        self.sub_rec(a, b, &mut map)
    }

    fn sub_rec(&self, a: NodeId, b: NodeId, map: &mut HashMap<NodeId, NodeId>) -> bool {
        let a = self.deref(a);
        let b = self.deref(b);
        if let Some(&m) = map.get(&a) {
            return m == b;
        }
        map.insert(a, b);
        match (&self.cells[a], &self.cells[b]) {
            (Cell::Free, _) => true,
            (Cell::Atom(x), Cell::Atom(y)) => x == y,
            (Cell::Struct(fa), Cell::Struct(fb)) => fa.iter().all(|(k, &va)| match fb.get(k) {
                Some(&vb) => self.sub_rec(va, vb, map),
                None => false,
            }),
            _ => false,
        }
    }

    fn diff_nodes(
        &self,
        a: NodeId,
        b: NodeId,
        fwd: &mut HashMap<NodeId, NodeId>,
        back: &mut HashMap<NodeId, NodeId>,
        path: &mut FeaturePath,
    ) -> bool {
        let a = self.deref(a);
        let b = self.deref(b);
        match (fwd.get(&a), back.get(&b)) {
            (Some(&x), Some(&y)) => return x == b && y == a,
            (None, None) => {
                fwd.insert(a, b);
                back.insert(b, a);
            }
            _ => return false,
        }
        match (&self.cells[a], &self.cells[b]) {
            (Cell::Free, Cell::Free) => true,
            (Cell::Atom(x), Cell::Atom(y)) => x == y,
            (Cell::Struct(fa), Cell::Struct(fb)) => {
                let mut keys: Vec<&String> = fa.keys().chain(fb.keys()).collect();
                keys.sort();
                keys.dedup();
                for k in keys {
                    path.push(k.clone());
                    let ok = match (fa.get(k), fb.get(k)) {
                        (Some(&va), Some(&vb)) => self.diff_nodes(va, vb, fwd, back, path),
                        _ => false,
                    };
                    if !ok {
                        return false;
                    }
                    path.pop();
                }
                true
            }
            _ => false,
        }
    }

    /// Follow `path` from `root`, creating structure along the way.
    pub fn path_node(&mut self, root: NodeId, path: &[String]) -> Result<NodeId, UnifyError> {
        let mut cur = root;
        for (i, attr) in path.iter().enumerate() {
            let d = self.deref(cur);
            match &self.cells[d] {
                Cell::Free => {
                    let child = self.fresh();
                    let mut map = BTreeMap::new();
                    map.insert(attr.clone(), child);
                    self.cells[d] = Cell::Struct(map);
                    cur = child;
                }
                Cell::Struct(map) => {
                    if let Some(&child) = map.get(attr) {
                        cur = child;
                    } else {
                        let child = self.fresh();
                        if let Cell::Struct(map) = &mut self.cells[d] {
                            map.insert(attr.clone(), child);
                        }
                        cur = child;
                    }
                }
                Cell::Atom(a) => {
                    return Err(UnifyError::Clash {
                        path: path[..i].to_vec(),
                        left: a.clone(),
                        right: "[...]".to_string(),
                    });
                }
                Cell::Ref(_) => unreachable!(),
            }
        }
        Ok(cur)
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }
}
