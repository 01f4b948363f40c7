//! Grammar files: sections, rule notation, aliases, LP constraints, and the
//! per-formalism admissibility checks applied while reading them.
//!
//! ```text
//! %FORMALISM IDLP
//! %START S
//! %ALIAS
//! NPnom = NP[kas=nom].
//! %LP
//! Det < AdjP. AdjP < N.
//! %RULES
//! (1) S          -> NP[X],
//!                   VP[X] | X = [kas=nom].
//! (2) NP[kas=K]  -> Det[kas=K, num=N],
//!                   (AdjP[kas=K, num=N]),
//!                   N[kas=K, num=N].
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diagnostic::Diagnostic;
use crate::featstruct::{self, Bindings, FeatureStructure, NodeId, Scope, UnifyError, Value};
use crate::syntax::{self, Cursor, Pos, SyntaxError, Tok, Token};

/// Reserved word for the empty constituent.
pub const EMPTY_WORD: &str = "EPSILON";
/// Maximum number of optional items in one rule.
pub const MAX_OPTIONALS: usize = 6;
pub const DEFAULT_START: &str = "S";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Formalism {
    Dcg,
    Idlp,
    Gpsg,
    Lfg,
}

impl Formalism {
    /// ID rules with unordered right-hand sides and LP constraints.
    pub fn is_id_lp(self) -> bool {
        matches!(self, Formalism::Idlp | Formalism::Gpsg)
    }

    pub fn name(self) -> &'static str {
        match self {
            Formalism::Dcg => "DCG",
            Formalism::Idlp => "IDLP",
            Formalism::Gpsg => "GPSG",
            Formalism::Lfg => "LFG",
        }
    }
}

impl fmt::Display for Formalism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Formalism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "DCG" => Ok(Formalism::Dcg),
            "IDLP" | "ID/LP" | "ID_LP" => Ok(Formalism::Idlp),
            "GPSG" => Ok(Formalism::Gpsg),
            "LFG" => Ok(Formalism::Lfg),
            _ => Err(format!("unknown formalism `{s}` (expected DCG, IDLP, GPSG or LFG)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub symbol: String,
    pub features: FeatureStructure,
}

impl CategorySpec {
    pub fn new(symbol: impl Into<String>, features: FeatureStructure) -> Self {
        CategorySpec { symbol: symbol.into(), features }
    }
}

impl fmt::Display for CategorySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.symbol)?;
        if !self.features.is_empty() {
            write!(f, "{}", self.features)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhsKind {
    Category,
    Terminal,
    Empty,
}

/// Root of an f-structure path: the mother (`^`) or the node itself (`!`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FRoot {
    Up,
    Down,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FPath {
    pub root: FRoot,
    pub attrs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FRhs {
    Path(FPath),
    Atom(String),
    Struct(FeatureStructure),
}

/// Defining equation attached to an LFG right-hand-side item.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FEquation {
    pub lhs: FPath,
    pub rhs: FRhs,
}

impl FEquation {
    /// `^=!`
    pub fn head() -> Self {
        FEquation {
            lhs: FPath { root: FRoot::Up, attrs: Vec::new() },
            rhs: FRhs::Path(FPath { root: FRoot::Down, attrs: Vec::new() }),
        }
    }

    pub fn parse(src: &str) -> Result<Self, SyntaxError> {
        let toks = syntax::tokenize(src, 1)?;
        let mut cur = Cursor::new(&toks, syntax::end_pos(src, 1));
        let eq = parse_fequation(&mut cur)?;
        if !cur.is_done() {
            return Err(cur.unexpected("end of equation"));
        }
        Ok(eq)
    }
}

impl fmt::Display for FPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = match self.root {
            FRoot::Up => "^",
            FRoot::Down => "!",
        };
        if self.attrs.is_empty() {
            f.write_str(r)
        } else {
            write!(f, "({r} {})", self.attrs.join(" "))
        }
    }
}

impl fmt::Display for FEquation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}=", self.lhs)?;
        match &self.rhs {
            FRhs::Path(p) => write!(f, "{p}"),
            FRhs::Atom(a) => write!(f, "{}", Value::Atom(a.clone())),
            FRhs::Struct(fs) => write!(f, "{fs}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RhsItem {
    pub kind: RhsKind,
    /// Category symbol, terminal text, or `EPSILON`.
    pub symbol: String,
    pub features: FeatureStructure,
    pub optional: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<FEquation>,
}

impl RhsItem {
    pub fn category(symbol: impl Into<String>, features: FeatureStructure) -> Self {
        RhsItem { kind: RhsKind::Category, symbol: symbol.into(), features, optional: false, annotations: Vec::new() }
    }

    pub fn terminal(text: impl Into<String>) -> Self {
        RhsItem {
            kind: RhsKind::Terminal,
            symbol: text.into(),
            features: FeatureStructure::new(),
            optional: false,
            annotations: Vec::new(),
        }
    }

    pub fn empty() -> Self {
        RhsItem {
            kind: RhsKind::Empty,
            symbol: EMPTY_WORD.to_string(),
            features: FeatureStructure::new(),
            optional: false,
            annotations: Vec::new(),
        }
    }
}

impl fmt::Display for RhsItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            RhsKind::Empty => f.write_str(EMPTY_WORD)?,
            RhsKind::Terminal => write!(f, "'{}'", self.symbol)?,
            RhsKind::Category => {
                let cat = CategorySpec::new(self.symbol.clone(), self.features.clone());
                if self.optional {
                    write!(f, "({cat})")?;
                } else {
                    write!(f, "{cat}")?;
                }
            }
        }
        for (i, a) in self.annotations.iter().enumerate() {
            f.write_str(if i == 0 { " : " } else { " ; " })?;
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceLoc {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub file: Option<String>,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarRule {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<String>,
    pub lhs: CategorySpec,
    pub rhs: Vec<RhsItem>,
    /// `| X = [kas=nom]`
    pub equations: Vec<(String, Value)>,
    pub formalism: Formalism,
    pub loc: SourceLoc,
}

impl GrammarRule {
    pub fn optional_count(&self) -> usize {
        self.rhs.iter().filter(|i| i.optional).count()
    }

    fn variables(&self) -> HashSet<String> {
        let mut vars: HashSet<String> = self.lhs.features.variables().into_iter().collect();
        for item in &self.rhs {
            vars.extend(item.features.variables());
        }
        vars
    }
}

impl fmt::Display for GrammarRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = &self.label {
            write!(f, "({l}) ")?;
        }
        write!(f, "{} -> ", self.lhs)?;
        for (i, item) in self.rhs.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{item}")?;
        }
        for (i, (var, val)) in self.equations.iter().enumerate() {
            f.write_str(if i == 0 { " | " } else { ", " })?;
            write!(f, "{var} = {val}")?;
        }
        f.write_str(".")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LpConstraint {
    pub left: String,
    pub right: String,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasDef {
    pub name: String,
    pub expansion: CategorySpec,
    pub line: usize,
}

/// A loaded grammar file, as written (aliases unresolved, optionals intact).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grammar {
    pub formalism: Formalism,
    pub start: String,
    pub rules: Vec<GrammarRule>,
    pub lp: Vec<LpConstraint>,
    pub aliases: Vec<AliasDef>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub file: Option<String>,
}

impl Grammar {
    pub fn empty(formalism: Formalism) -> Self {
        Grammar {
            formalism,
            start: DEFAULT_START.to_string(),
            rules: Vec::new(),
            lp: Vec::new(),
            aliases: Vec::new(),
            file: None,
        }
    }

    pub fn alias(&self, name: &str) -> Option<&AliasDef> {
        self.aliases.iter().find(|a| a.name == name)
    }

    /// Category symbol after following alias names, or the name itself when
    /// it is not an alias. Stops on cycles.
    pub fn resolve_symbol<'a>(&'a self, mut name: &'a str) -> &'a str {
        let mut seen = HashSet::new();
        while let Some(a) = self.alias(name) {
            if !seen.insert(name) {
                break;
            }
            name = &a.expansion.symbol;
        }
        name
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "%FORMALISM {}", self.formalism)?;
        writeln!(f, "%START {}", self.start)?;
        if !self.aliases.is_empty() {
            writeln!(f, "%ALIAS")?;
            for a in &self.aliases {
                writeln!(f, "{} = {}.", a.name, a.expansion)?;
            }
        }
        if !self.lp.is_empty() {
            writeln!(f, "%LP")?;
            for c in &self.lp {
                writeln!(f, "{} < {}.", c.left, c.right)?;
            }
        }
        writeln!(f, "%RULES")?;
        for r in &self.rules {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Section {
    Rules,
    Lp,
    Alias,
}

/// Read a grammar file. Any error means nothing is loaded; all errors found
/// are reported, each with its position.
pub fn parse_grammar(source: &str, default_formalism: Formalism) -> Result<Grammar, Vec<Diagnostic>> {
    parse_grammar_file(source, default_formalism, None)
}

pub fn parse_grammar_file(
    source: &str,
    default_formalism: Formalism,
    file: Option<&str>,
) -> Result<Grammar, Vec<Diagnostic>> {
    let toks = match syntax::tokenize(source, 1) {
        Ok(t) => t,
        Err(e) => return Err(vec![Diagnostic::from(e).in_file(file)]),
    };
    let end = syntax::end_pos(source, 1);
    let mut g = Grammar::empty(default_formalism);
    g.file = file.map(str::to_string);
    let mut diags = Vec::new();
    let mut section = Section::Rules;
    let mut saw_formalism = false;
    let mut saw_rule = false;

    let mut i = 0;
    while i < toks.len() {
        if let Tok::Directive(name) = &toks[i].tok {
            let pos = toks[i].pos;
            i += 1;
            match name.as_str() {
                "FORMALISM" | "START" => {
                    let arg = match toks.get(i) {
                        Some(Token { tok: Tok::Ident(s), .. }) => {
                            i += 1;
                            s.clone()
                        }
                        _ => {
                            diags.push(Diagnostic::error(Some(pos), format!("`%{name}` needs an argument")));
                            continue;
                        }
                    };
                    if name == "FORMALISM" {
                        if saw_formalism || saw_rule {
                            diags.push(Diagnostic::error(Some(pos), "`%FORMALISM` must appear once, before any rule"));
                        }
                        saw_formalism = true;
                        match arg.parse() {
                            Ok(f) => g.formalism = f,
                            Err(msg) => diags.push(Diagnostic::error(Some(pos), msg)),
                        }
                    } else if !syntax::starts_upper(&arg) {
                        diags.push(Diagnostic::error(Some(pos), "category must start uppercase: start symbol"));
                    } else {
                        g.start = arg;
                    }
                }
                "RULES" => section = Section::Rules,
                "LP" => section = Section::Lp,
                "ALIAS" => section = Section::Alias,
                other => diags.push(Diagnostic::error(Some(pos), format!("unknown directive `%{other}`"))),
            }
            continue;
        }
        // One statement: tokens up to the terminating `.`
        let start = i;
        let mut depth: i32 = 0;
        while i < toks.len() {
            match toks[i].tok {
                Tok::LBracket | Tok::LParen | Tok::LBrace => depth += 1,
                Tok::RBracket | Tok::RParen | Tok::RBrace => depth -= 1,
                Tok::Dot if depth <= 0 => break,
                Tok::Directive(_) => break,
                _ => {}
            }
            i += 1;
        }
        let stmt_end = toks.get(i).map(|t| t.pos).unwrap_or(end);
        let terminated = matches!(toks.get(i), Some(Token { tok: Tok::Dot, .. }));
        let stmt = &toks[start..i];
        if terminated {
            i += 1;
        }
        if !terminated {
            let msg = if depth != 0 { "unbalanced brackets in statement" } else { "statement must end with `.`" };
            diags.push(Diagnostic::error(Some(toks[start].pos), msg));
            continue;
        }
        if depth != 0 {
            diags.push(Diagnostic::error(Some(toks[start].pos), "unbalanced brackets in statement"));
            continue;
        }
        let mut cur = Cursor::new(stmt, stmt_end);
        let res = match section {
            Section::Rules => {
                saw_rule = true;
                parse_rule(&mut cur, g.formalism, file).map(|r| g.rules.push(r))
            }
            Section::Lp => parse_lp(&mut cur, g.formalism).map(|mut cs| g.lp.append(&mut cs)),
            Section::Alias => parse_alias(&mut cur).map(|a| g.aliases.push(a)),
        };
        match res {
            Ok(()) => {
                if !cur.is_done() {
                    diags.push(cur.unexpected("`.`").into());
                }
            }
            Err(e) => diags.push(e.into()),
        }
    }

    // Duplicate alias names are ambiguous.
    let mut seen = HashSet::new();
    for a in &g.aliases {
        if !seen.insert(a.name.clone()) {
            diags.push(Diagnostic::error(
                Some(Pos { line: a.line, col: 1 }),
                format!("alias `{}` defined twice", a.name),
            ));
        }
    }

    if diags.is_empty() {
        Ok(g)
    } else {
        Err(diags.into_iter().map(|d| d.in_file(file)).collect())
    }
}

fn parse_category(cur: &mut Cursor<'_>) -> Result<CategorySpec, SyntaxError> {
    let pos = cur.pos();
    let symbol = cur.ident("category symbol")?;
    if !syntax::starts_upper(&symbol) {
        return Err(SyntaxError::new(pos, format!("category must start uppercase: `{symbol}`")));
    }
    let features =
        if cur.peek() == Some(&Tok::LBracket) { featstruct::parse_fs(cur)? } else { FeatureStructure::new() };
    Ok(CategorySpec { symbol, features })
}

fn parse_rule(cur: &mut Cursor<'_>, formalism: Formalism, file: Option<&str>) -> Result<GrammarRule, SyntaxError> {
    let rule_pos = cur.pos();
    let mut label = None;
    if let (Some(Tok::LParen), Some(Tok::Ident(n)), Some(Tok::RParen)) = (cur.peek(), cur.peek_at(1), cur.peek_at(2)) {
        if n.chars().all(|c| c.is_ascii_digit()) {
            label = Some(n.clone());
            cur.next();
            cur.next();
            cur.next();
        }
    }
    let lhs_pos = cur.pos();
    if let Some(Tok::Ident(s)) = cur.peek() {
        if s == EMPTY_WORD {
            return Err(SyntaxError::new(lhs_pos, "`EPSILON` cannot be a rule head"));
        }
    }
    let lhs = parse_category(cur)?;
    cur.expect(&Tok::Arrow)?;
    let mut rhs = Vec::new();
    loop {
        rhs.push(parse_rhs_item(cur, formalism)?);
        if !cur.eat(&Tok::Comma) {
            break;
        }
    }
    let mut equations = Vec::new();
    if cur.eat(&Tok::Bar) {
        loop {
            let pos = cur.pos();
            let var = cur.ident("variable")?;
            if !syntax::starts_upper(&var) {
                return Err(SyntaxError::new(pos, format!("`{var}` is not a variable (variables start uppercase)")));
            }
            cur.expect(&Tok::Eq)?;
            let val = featstruct::parse_value(cur)?;
            equations.push((var, val, pos));
            if !cur.eat(&Tok::Comma) {
                break;
            }
        }
    }
    let rule = GrammarRule {
        label,
        lhs,
        rhs,
        equations: Vec::new(),
        formalism,
        loc: SourceLoc { file: file.map(str::to_string), line: rule_pos.line },
    };
    let vars = rule.variables();
    let mut rule = rule;
    for (var, val, pos) in equations {
        if !vars.contains(&var) {
            return Err(SyntaxError::new(pos, format!("equation references unknown variable `{var}`")));
        }
        rule.equations.push((var, val));
    }
    if rule.optional_count() > MAX_OPTIONALS {
        return Err(SyntaxError::new(
            rule_pos,
            format!("rule has {} optional items; at most {MAX_OPTIONALS} are allowed", rule.optional_count()),
        ));
    }
    if rule.rhs.len() > 1 && rule.rhs.iter().all(|i| i.kind == RhsKind::Empty) {
        return Err(SyntaxError::new(rule_pos, "`EPSILON` must be the only item when nothing else is given"));
    }
    Ok(rule)
}

fn parse_rhs_item(cur: &mut Cursor<'_>, formalism: Formalism) -> Result<RhsItem, SyntaxError> {
    let pos = cur.pos();
    let mut item = match cur.peek() {
        Some(Tok::Quoted(s)) => {
            let s = s.clone();
            cur.next();
            if s.is_empty() {
                return Err(SyntaxError::new(pos, "empty terminal"));
            }
            RhsItem::terminal(s)
        }
        Some(Tok::Ident(s)) if s == EMPTY_WORD => {
            cur.next();
            if cur.peek() == Some(&Tok::LBracket) {
                return Err(SyntaxError::new(pos, "`EPSILON` carries no features"));
            }
            RhsItem::empty()
        }
        Some(Tok::LParen) => {
            cur.next();
            let inner_pos = cur.pos();
            match cur.peek() {
                Some(Tok::Quoted(_)) => {
                    return Err(SyntaxError::new(inner_pos, "only categories can be optional"));
                }
                Some(Tok::Ident(s)) if s == EMPTY_WORD => {
                    return Err(SyntaxError::new(inner_pos, "only categories can be optional"));
                }
                _ => {}
            }
            let cat = parse_category(cur)?;
            cur.expect(&Tok::RParen)?;
            let mut item = RhsItem::category(cat.symbol, cat.features);
            item.optional = true;
            item
        }
        _ => {
            let cat = parse_category(cur)?;
            RhsItem::category(cat.symbol, cat.features)
        }
    };
    if cur.eat(&Tok::Colon) {
        if formalism != Formalism::Lfg {
            return Err(SyntaxError::new(
                pos,
                format!("f-structure annotations are not admissible in {formalism} grammars"),
            ));
        }
        if item.kind != RhsKind::Category {
            return Err(SyntaxError::new(pos, "only categories carry annotations"));
        }
        loop {
            item.annotations.push(parse_fequation(cur)?);
            if !cur.eat(&Tok::Semi) {
                break;
            }
        }
    }
    Ok(item)
}

fn parse_fpath(cur: &mut Cursor<'_>) -> Result<FPath, SyntaxError> {
    let root_of = |t: Option<&Tok>| match t {
        Some(Tok::Caret) => Some(FRoot::Up),
        Some(Tok::Bang) => Some(FRoot::Down),
        _ => None,
    };
    if let Some(root) = root_of(cur.peek()) {
        cur.next();
        return Ok(FPath { root, attrs: Vec::new() });
    }
    cur.expect(&Tok::LParen)?;
    let root = root_of(cur.peek()).ok_or_else(|| cur.unexpected("`^` or `!`"))?;
    cur.next();
    let mut attrs = Vec::new();
    while let Some(Tok::Ident(_)) = cur.peek() {
        let pos = cur.pos();
        let a = cur.ident("attribute")?;
        if !syntax::is_atom_ident(&a) {
            return Err(SyntaxError::new(pos, format!("attribute `{a}` must be lowercase")));
        }
        attrs.push(a);
    }
    if attrs.is_empty() {
        return Err(cur.unexpected("attribute name"));
    }
    cur.expect(&Tok::RParen)?;
    Ok(FPath { root, attrs })
}

fn parse_fequation(cur: &mut Cursor<'_>) -> Result<FEquation, SyntaxError> {
    let lhs = parse_fpath(cur)?;
    cur.expect(&Tok::Eq)?;
    let pos = cur.pos();
    let rhs = match cur.peek() {
        Some(Tok::Caret) | Some(Tok::Bang) | Some(Tok::LParen) => FRhs::Path(parse_fpath(cur)?),
        Some(Tok::LBracket) => FRhs::Struct(featstruct::parse_fs(cur)?),
        Some(Tok::Quoted(s)) => {
            let s = s.clone();
            cur.next();
            FRhs::Atom(s)
        }
        Some(Tok::Ident(s)) if syntax::is_atom_ident(s) => {
            let s = s.clone();
            cur.next();
            FRhs::Atom(s)
        }
        _ => return Err(SyntaxError::new(pos, "expected a path, atom or `[...]` after `=`")),
    };
    Ok(FEquation { lhs, rhs })
}

fn parse_lp(cur: &mut Cursor<'_>, formalism: Formalism) -> Result<Vec<LpConstraint>, SyntaxError> {
    let pos = cur.pos();
    if !formalism.is_id_lp() {
        return Err(SyntaxError::new(
            pos,
            format!("LP constraints are only admissible in IDLP/GPSG grammars, not {formalism}"),
        ));
    }
    let mut syms = vec![parse_symbol(cur)?];
    while cur.eat(&Tok::Less) {
        syms.push(parse_symbol(cur)?);
    }
    if syms.len() < 2 {
        return Err(cur.unexpected("`<`"));
    }
    let mut out = Vec::new();
    for w in syms.windows(2) {
        if w[0] == w[1] {
            return Err(SyntaxError::new(pos, format!("LP constraint `{0} < {0}` relates a symbol to itself", w[0])));
        }
        out.push(LpConstraint { left: w[0].clone(), right: w[1].clone(), line: pos.line });
    }
    Ok(out)
}

fn parse_symbol(cur: &mut Cursor<'_>) -> Result<String, SyntaxError> {
    let pos = cur.pos();
    let s = cur.ident("category symbol")?;
    if !syntax::starts_upper(&s) {
        return Err(SyntaxError::new(pos, format!("category must start uppercase: `{s}`")));
    }
    Ok(s)
}

fn parse_alias(cur: &mut Cursor<'_>) -> Result<AliasDef, SyntaxError> {
    let pos = cur.pos();
    let name = parse_symbol(cur)?;
    cur.expect(&Tok::Eq)?;
    let expansion = parse_category(cur)?;
    Ok(AliasDef { name, expansion, line: pos.line })
}

// ---------------------------------------------------------------------------
// Alias resolution

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum AliasError {
    #[error("unknown alias `{0}`")]
    Unknown(String),
    #[error("alias `{0}` expands into itself")]
    Cycle(String),
    #[error("alias `{name}` does not unify: {source}")]
    Clash { name: String, source: UnifyError },
}

/// Fully expand an alias, merging feature structures along the chain by
/// unification.
pub fn resolve_alias(name: &str, aliases: &[AliasDef]) -> Result<CategorySpec, AliasError> {
    let def = aliases.iter().find(|a| a.name == name).ok_or_else(|| AliasError::Unknown(name.to_string()))?;
    let mut env = Bindings::new();
    let mut visiting = vec![name.to_string()];
    let (symbol, node) = expand_alias(&def.expansion, aliases, &mut env, &mut visiting).map_err(|e| match e {
        ExpandError::Cycle(n) => AliasError::Cycle(n),
        ExpandError::Clash(source) => AliasError::Clash { name: name.to_string(), source },
    })?;
    Ok(CategorySpec { symbol, features: env.extract(node, &Default::default()) })
}

enum ExpandError {
    Cycle(String),
    Clash(UnifyError),
}

fn expand_alias(
    spec: &CategorySpec,
    aliases: &[AliasDef],
    env: &mut Bindings,
    visiting: &mut Vec<String>,
) -> Result<(String, NodeId), ExpandError> {
    let node = env.instantiate(&spec.features, &mut Scope::new()).map_err(ExpandError::Clash)?;
    match aliases.iter().find(|a| a.name == spec.symbol) {
        None => Ok((spec.symbol.clone(), node)),
        Some(def) => {
            if visiting.contains(&def.name) {
                return Err(ExpandError::Cycle(def.name.clone()));
            }
            visiting.push(def.name.clone());
            let (symbol, inner) = expand_alias(&def.expansion, aliases, env, visiting)?;
            visiting.pop();
            env.unify_nodes(node, inner).map_err(ExpandError::Clash)?;
            Ok((symbol, node))
        }
    }
}

// ---------------------------------------------------------------------------
// Compilation: alias resolution, optional expansion, LP closure

pub type RuleId = usize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledItem {
    pub kind: RhsKind,
    pub symbol: String,
    /// Features in the rule's variable scope.
    pub features: FeatureStructure,
    /// Features contributed by an alias, in their own scope.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alias_features: Option<FeatureStructure>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<FEquation>,
}

/// A rule ready for the parsers: aliases resolved, no optional items.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledRule {
    pub id: RuleId,
    /// Index of the source rule in [`Grammar::rules`].
    pub source: usize,
    pub lhs: CompiledItem,
    pub rhs: Vec<CompiledItem>,
    pub equations: Vec<(String, Value)>,
}

/// Cells created for one use of a rule.
#[derive(Clone, Debug)]
pub struct RuleInstance {
    pub lhs: NodeId,
    /// One node per RHS item (fresh, unconstrained for terminals/empties).
    pub items: Vec<NodeId>,
}

impl CompiledRule {
    pub fn instantiate(&self, env: &mut Bindings) -> Result<RuleInstance, UnifyError> {
        let mut scope = Scope::new();
        let lhs = inst_item(&self.lhs, env, &mut scope)?;
        let mut items = Vec::with_capacity(self.rhs.len());
        for item in &self.rhs {
            items.push(inst_item(item, env, &mut scope)?);
        }
        for (var, val) in &self.equations {
            let v = match scope.get(var) {
                Some(&n) => n,
                None => {
                    let n = env.fresh();
                    scope.insert(var.clone(), n);
                    n
                }
            };
            let n = env.instantiate_value(val, &mut scope)?;
            env.unify_nodes(v, n)?;
        }
        Ok(RuleInstance { lhs, items })
    }

    pub fn category_items(&self) -> impl Iterator<Item = (usize, &CompiledItem)> {
        self.rhs.iter().enumerate().filter(|(_, i)| i.kind == RhsKind::Category)
    }
}

fn inst_item(item: &CompiledItem, env: &mut Bindings, scope: &mut Scope) -> Result<NodeId, UnifyError> {
    let n = env.instantiate(&item.features, scope)?;
    if let Some(extra) = &item.alias_features {
        let m = env.instantiate(extra, &mut Scope::new())?;
        env.unify_nodes(n, m)?;
    }
    Ok(n)
}

impl fmt::Display for CompiledItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            RhsKind::Empty => f.write_str(EMPTY_WORD)?,
            RhsKind::Terminal => write!(f, "'{}'", self.symbol)?,
            RhsKind::Category => {
                f.write_str(&self.symbol)?;
                if !self.features.is_empty() {
                    write!(f, "{}", self.features)?;
                }
                if let Some(a) = &self.alias_features {
                    write!(f, "&{a}")?;
                }
            }
        }
        for (i, a) in self.annotations.iter().enumerate() {
            f.write_str(if i == 0 { " : " } else { " ; " })?;
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

impl fmt::Display for CompiledRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> ", self.lhs)?;
        for (i, item) in self.rhs.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{item}")?;
        }
        for (i, (var, val)) in self.equations.iter().enumerate() {
            f.write_str(if i == 0 { " | " } else { ", " })?;
            write!(f, "{var} = {val}")?;
        }
        f.write_str(".")
    }
}

/// Grammar as consumed by the parsers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompiledGrammar {
    pub source: Grammar,
    pub formalism: Formalism,
    pub start: String,
    pub rules: Vec<CompiledRule>,
    /// Transitive closure of the LP constraints, alias-resolved.
    pub lp: BTreeSet<(String, String)>,
    pub fingerprint: String,
}

impl CompiledGrammar {
    /// Resolve aliases, expand optional items into rule variants (all items
    /// present first), and close the LP relation.
    pub fn compile(g: &Grammar) -> Result<CompiledGrammar, Vec<Diagnostic>> {
        let mut diags = Vec::new();
        let mut rules = Vec::new();
        for (ri, rule) in g.rules.iter().enumerate() {
            let pos = Some(Pos { line: rule.loc.line, col: 1 });
            let lhs = match compile_item_cat(&rule.lhs.symbol, &rule.lhs.features, &[], g) {
                Ok(i) => i,
                Err(e) => {
                    diags.push(Diagnostic::error(pos, e.to_string()));
                    continue;
                }
            };
            let mut items = Vec::new();
            let mut bad = false;
            for item in &rule.rhs {
                let c = match item.kind {
                    RhsKind::Category => match compile_item_cat(&item.symbol, &item.features, &item.annotations, g) {
                        Ok(c) => c,
                        Err(e) => {
                            diags.push(Diagnostic::error(pos, e.to_string()));
                            bad = true;
                            continue;
                        }
                    },
                    _ => CompiledItem {
                        kind: item.kind,
                        symbol: item.symbol.clone(),
                        features: FeatureStructure::new(),
                        alias_features: None,
                        annotations: Vec::new(),
                    },
                };
                items.push((c, item.optional));
            }
            if bad {
                continue;
            }
            let opt_idx: Vec<usize> = items.iter().enumerate().filter(|(_, (_, o))| *o).map(|(i, _)| i).collect();
            for mask in 0u32..(1u32 << opt_idx.len()) {
                let omitted: HashSet<usize> =
                    opt_idx.iter().enumerate().filter(|(b, _)| mask & (1 << b) != 0).map(|(_, &i)| i).collect();
                let mut rhs: Vec<CompiledItem> = items
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !omitted.contains(i))
                    .map(|(_, (c, _))| c.clone())
                    .collect();
                if rhs.is_empty() {
                    rhs.push(CompiledItem {
                        kind: RhsKind::Empty,
                        symbol: EMPTY_WORD.to_string(),
                        features: FeatureStructure::new(),
                        alias_features: None,
                        annotations: Vec::new(),
                    });
                }
                rules.push(CompiledRule {
                    id: rules.len(),
                    source: ri,
                    lhs: lhs.clone(),
                    rhs,
                    equations: rule.equations.clone(),
                });
            }
        }
        // Check each variant is satisfiable on its own; a clash in the rule's
        // own annotations is a grammar error.
        for r in &rules {
            let mut env = Bindings::new();
            if let Err(e) = r.instantiate(&mut env) {
                let src = &g.rules[r.source];
                diags.push(Diagnostic::error(
                    Some(Pos { line: src.loc.line, col: 1 }),
                    format!("rule for `{}` is inconsistent: {e}", src.lhs.symbol),
                ));
                break;
            }
        }
        let lp = lp_closure(g);
        if !diags.is_empty() {
            return Err(diags.into_iter().map(|d| d.in_file(g.file.as_deref())).collect());
        }
        let start = g.resolve_symbol(&g.start).to_string();
        let fingerprint = fingerprint(g.formalism, &start, &rules, &lp);
        Ok(CompiledGrammar { source: g.clone(), formalism: g.formalism, start, rules, lp, fingerprint })
    }

    pub fn rules_for<'a>(&'a self, symbol: &'a str) -> impl Iterator<Item = &'a CompiledRule> + 'a {
        self.rules.iter().filter(move |r| r.lhs.symbol == symbol)
    }

    /// True when `a` must precede `b` among siblings.
    pub fn precedes(&self, a: &str, b: &str) -> bool {
        self.lp.contains(&(a.to_string(), b.to_string()))
    }

    /// Every category symbol used by a rule.
    pub fn symbols(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for r in &self.rules {
            out.insert(r.lhs.symbol.clone());
            for (_, i) in r.category_items() {
                out.insert(i.symbol.clone());
            }
        }
        out
    }

    pub fn terminals(&self) -> BTreeSet<String> {
        self.rules
            .iter()
            .flat_map(|r| r.rhs.iter())
            .filter(|i| i.kind == RhsKind::Terminal)
            .map(|i| i.symbol.clone())
            .collect()
    }
}

fn compile_item_cat(
    symbol: &str,
    features: &FeatureStructure,
    annotations: &[FEquation],
    g: &Grammar,
) -> Result<CompiledItem, AliasError> {
    let (symbol, alias_features) = if g.alias(symbol).is_some() {
        let spec = resolve_alias(symbol, &g.aliases)?;
        (spec.symbol, if spec.features.is_empty() { None } else { Some(spec.features) })
    } else {
        (symbol.to_string(), None)
    };
    Ok(CompiledItem {
        kind: RhsKind::Category,
        symbol,
        features: features.clone(),
        alias_features,
        annotations: annotations.to_vec(),
    })
}

fn lp_closure(g: &Grammar) -> BTreeSet<(String, String)> {
    let mut rel: BTreeSet<(String, String)> =
        g.lp.iter().map(|c| (g.resolve_symbol(&c.left).to_string(), g.resolve_symbol(&c.right).to_string())).collect();
    loop {
        let mut added = Vec::new();
        for (a, b) in &rel {
            for (c, d) in &rel {
                if b == c && !rel.contains(&(a.clone(), d.clone())) {
                    added.push((a.clone(), d.clone()));
                }
            }
        }
        if added.is_empty() {
            return rel;
        }
        rel.extend(added);
    }
}

fn fingerprint(formalism: Formalism, start: &str, rules: &[CompiledRule], lp: &BTreeSet<(String, String)>) -> String {
    let mut h = Sha256::new();
    h.update(format!("{formalism}\n{start}\n"));
    for r in rules {
        h.update(r.to_string());
        h.update("\n");
    }
    for (a, b) in lp {
        h.update(format!("{a}<{b}\n"));
    }
    hex::encode(h.finalize())
}

// ---------------------------------------------------------------------------
// Index

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleRef {
    pub rule: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<String>,
    pub line: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub defined_by: Vec<RuleRef>,
    pub referenced_by: Vec<RuleRef>,
}

/// Symbol → defining rules and referencing rules, for every category symbol
/// that occurs in a rule.
pub fn grammar_index(g: &Grammar) -> BTreeMap<String, IndexEntry> {
    let mut index: BTreeMap<String, IndexEntry> = BTreeMap::new();
    for (i, r) in g.rules.iter().enumerate() {
        let rref = RuleRef { rule: i, label: r.label.clone(), line: r.loc.line };
        index.entry(r.lhs.symbol.clone()).or_default().defined_by.push(rref.clone());
        for item in r.rhs.iter().filter(|i| i.kind == RhsKind::Category) {
            let e = index.entry(item.symbol.clone()).or_default();
            if e.referenced_by.last().map(|x| x.rule) != Some(i) {
                e.referenced_by.push(rref.clone());
            }
        }
    }
    index
}

/// Rules calling `symbol` (the is-called-by relation).
pub fn called_by(index: &BTreeMap<String, IndexEntry>, g: &Grammar, symbol: &str) -> BTreeSet<String> {
    index
        .get(symbol)
        .map(|e| e.referenced_by.iter().map(|r| g.rules[r.rule].lhs.symbol.clone()).collect())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const RULES_1_2: &str = "\
(1) S          -> NP[X],
                  VP[X] | X = [kas=nom].
(2) NP[kas=K]  -> Det[kas=K, num=N],
                  (AdjP[kas=K, num=N]),
                  N[kas=K, num=N].
";

    fn load(src: &str) -> Grammar {
        parse_grammar(src, Formalism::Idlp).unwrap_or_else(|d| panic!("{d:?}"))
    }

    #[test]
    fn rule_one_verbatim() {
        let g = load(RULES_1_2);
        let r = &g.rules[0];
        assert_eq!(r.label.as_deref(), Some("1"));
        assert_eq!(r.lhs.symbol, "S");
        assert_eq!(r.rhs.len(), 2);
        assert_eq!(r.rhs[0].features.to_string(), "[X]");
        assert_eq!(r.rhs[1].features.root_var(), Some("X"));
        assert_eq!(r.rhs[0].symbol, "NP");
        assert_eq!(r.equations.len(), 1);
        assert_eq!(r.equations[0].0, "X");
        assert_eq!(r.equations[0].1.to_string(), "[kas=nom]");
    }

    #[test]
    fn rule_two_optional_adjp() {
        let g = load(RULES_1_2);
        let r = &g.rules[1];
        assert_eq!(r.lhs.features.to_string(), "[kas=K]");
        let syms: Vec<_> = r.rhs.iter().map(|i| (i.symbol.as_str(), i.optional)).collect();
        assert_eq!(syms, vec![("Det", false), ("AdjP", true), ("N", false)]);
    }

    #[test]
    fn lowercase_category_rejected() {
        let d = parse_grammar("np -> Det, N.", Formalism::Dcg).unwrap_err();
        assert_eq!(d.len(), 1);
        assert!(d[0].message.contains("category must start uppercase"), "{}", d[0].message);
        assert_eq!(d[0].pos, Some(Pos { line: 1, col: 1 }));
    }

    #[test]
    fn epsilon_rule() {
        let g = load("NP -> EPSILON.");
        assert_eq!(g.rules[0].rhs, vec![RhsItem::empty()]);
    }

    #[test]
    fn errors_are_collected_and_load_is_atomic() {
        let src = "S -> NP, VP.\nnp -> Det.\nVP -> V | Q = [a=b].\n%BOGUS\nA -> [x=y.\n";
        let d = parse_grammar(src, Formalism::Dcg).unwrap_err();
        let lines: Vec<_> = d.iter().map(|d| d.pos.unwrap().line).collect();
        assert!(lines.contains(&2));
        assert!(lines.contains(&3));
        assert!(d.iter().any(|d| d.message.contains("unknown directive")));
        assert!(d.iter().any(|d| d.message.contains("unknown variable `Q`")));
    }

    #[test]
    fn unbalanced_brackets() {
        let d = parse_grammar("S -> NP[kas=nom.\n", Formalism::Dcg).unwrap_err();
        assert!(d[0].message.contains("unbalanced") || d[0].message.contains("expected"), "{:?}", d);
    }

    #[test]
    fn terminals_and_sections() {
        let src = "%FORMALISM IDLP\n%START Top\n%ALIAS\nNPnom = NP[kas=nom].\n%LP\nDet < AdjP < N.\n%RULES\nTop -> NPnom, 'und'.\n";
        let g = load(src);
        assert_eq!(g.formalism, Formalism::Idlp);
        assert_eq!(g.start, "Top");
        assert_eq!(g.lp.len(), 2);
        assert_eq!(g.rules[0].rhs[1].kind, RhsKind::Terminal);
        let cg = CompiledGrammar::compile(&g).unwrap();
        assert!(cg.precedes("Det", "N"), "closure");
        assert_eq!(cg.rules[0].rhs[0].symbol, "NP");
    }

    #[test]
    fn lp_rejected_outside_idlp() {
        let d = parse_grammar("%FORMALISM DCG\n%LP\nA < B.\n", Formalism::Dcg).unwrap_err();
        assert!(d[0].message.contains("only admissible"));
    }

    #[test]
    fn annotations_only_in_lfg() {
        let d = parse_grammar("S -> NP : (^ subj)=!.", Formalism::Dcg).unwrap_err();
        assert!(d[0].message.contains("not admissible"));
        let g = parse_grammar("S[] -> NP[] : (^ subj)=!, VP[] : ^=!.", Formalism::Lfg).unwrap();
        assert_eq!(g.rules[0].rhs[0].annotations[0].to_string(), "(^ subj)=!");
        assert_eq!(g.rules[0].rhs[1].annotations[0], FEquation::head());
    }

    #[test]
    fn too_many_optionals() {
        let d = parse_grammar("A -> (B), (C), (D), (E), (F), (G), (H).", Formalism::Dcg).unwrap_err();
        assert!(d[0].message.contains("optional"));
        assert!(parse_grammar("A -> (B), (C), (D), (E), (F), (G).", Formalism::Dcg).is_ok());
    }

    #[test]
    fn optional_expansion_variants() {
        let g = load(RULES_1_2);
        let cg = CompiledGrammar::compile(&g).unwrap();
        assert_eq!(cg.rules.len(), 3);
        let np: Vec<String> = cg.rules_for("NP").map(|r| r.to_string()).collect();
        assert_eq!(
            np,
            vec![
                "NP[kas=K] -> Det[kas=K, num=N], AdjP[kas=K, num=N], N[kas=K, num=N].",
                "NP[kas=K] -> Det[kas=K, num=N], N[kas=K, num=N].",
            ]
        );
    }

    #[test]
    fn alias_one_step() {
        let g = load("%ALIAS\nNPnom = NP[kas=nom].\n");
        let r = resolve_alias("NPnom", &g.aliases).unwrap();
        assert_eq!(r.to_string(), "NP[kas=nom]");
    }

    #[test]
    fn alias_chain_merges_features() {
        let g = load("%ALIAS\nA = B.\nB = C[num=sg].\nC = NP[kas=nom].\n");
        let r = resolve_alias("A", &g.aliases).unwrap();
        assert_eq!(r.to_string(), "NP[kas=nom, num=sg]");
    }

    #[test]
    fn alias_errors() {
        let g = load("%ALIAS\nA = A.\nB = C[kas=akk].\nC = NP[kas=nom].\n");
        assert_eq!(resolve_alias("A", &g.aliases), Err(AliasError::Cycle("A".into())));
        assert!(matches!(resolve_alias("B", &g.aliases), Err(AliasError::Clash { .. })));
        assert_eq!(resolve_alias("Z", &g.aliases), Err(AliasError::Unknown("Z".into())));
    }

    #[test]
    fn index_of_rules_one_and_two() {
        let g = load(RULES_1_2);
        let idx = grammar_index(&g);
        let keys: Vec<_> = idx.keys().cloned().collect();
        assert_eq!(keys, vec!["AdjP", "Det", "N", "NP", "S", "VP"]);
        assert_eq!(idx["NP"].defined_by.len(), 1);
        assert_eq!(idx["NP"].defined_by[0].label.as_deref(), Some("2"));
        assert_eq!(idx["NP"].referenced_by[0].label.as_deref(), Some("1"));
        assert!(idx["VP"].defined_by.is_empty());
        assert_eq!(called_by(&idx, &g, "NP"), BTreeSet::from(["S".to_string()]));
        assert!(grammar_index(&Grammar::empty(Formalism::Dcg)).is_empty());
    }

    #[test]
    fn pretty_print_round_trip() {
        let src = format!("{RULES_1_2}A -> 'x', EPSILON, (B[f=[g=Y]]) | Y = [h=i].\n");
        let g = load(&src);
        let again = load(&g.to_string());
        assert_eq!(g.rules.len(), again.rules.len());
        for (a, b) in g.rules.iter().zip(&again.rules) {
            assert_eq!(a.lhs, b.lhs);
            assert_eq!(a.rhs, b.rhs);
            assert_eq!(a.equations, b.equations);
        }
    }

    #[test]
    fn rule_instance_applies_equations() {
        let g = load(RULES_1_2);
        let cg = CompiledGrammar::compile(&g).unwrap();
        let mut env = Bindings::new();
        let inst = cg.rules[0].instantiate(&mut env).unwrap();
        let names = Default::default();
        assert_eq!(env.extract(inst.items[0], &names).to_string(), "[kas=nom]");
        assert_eq!(env.extract(inst.items[1], &names).to_string(), "[kas=nom]");
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let a = CompiledGrammar::compile(&load(RULES_1_2)).unwrap();
        let b = CompiledGrammar::compile(&load(&format!("// comment\n{RULES_1_2}"))).unwrap();
        assert_eq!(a.fingerprint, b.fingerprint);
        let c = CompiledGrammar::compile(&load(&RULES_1_2.replace("kas=nom", "kas=akk"))).unwrap();
        assert_ne!(a.fingerprint, c.fingerprint);
    }
}
