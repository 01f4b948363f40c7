//! Parse trees, and the derivation record both parsing engines produce.
//!
//! An engine reports *which* rules and lexical categories it combined; the
//! tree and its feature structures are rebuilt here by unifying the whole
//! derivation in one environment. Both engines therefore yield identical
//! trees for identical derivations.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::featstruct::{Bindings, FeatureStructure, NodeId, RenderStyle, Scope, UnifyError};
use crate::grammar::{CompiledGrammar, FEquation, Formalism, RhsKind, RuleId};
use crate::lexicon::Lexicalized;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Derivation {
    /// Children in surface order; `items[i]` is the rule item child `i`
    /// realizes. Ordered formalisms have `items == 0..n`.
    Rule {
        rule: RuleId,
        items: Vec<usize>,
        children: Vec<Derivation>,
    },
    /// Lexical category `category` of the token at `position`.
    Lex {
        position: usize,
        category: usize,
    },
    Terminal {
        position: usize,
    },
    Empty {
        position: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Phrase,
    Lexical,
    Terminal,
    Empty,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseTree {
    pub label: String,
    pub kind: NodeKind,
    pub features: FeatureStructure,
    /// Token span `[from, to)`.
    pub span: (usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word: Option<String>,
    /// Functional annotations of this node within its mother's rule.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<FEquation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ParseTree>,
}

/// Child-index sequence from the root.
pub type NodePath = Vec<usize>;

impl ParseTree {
    pub fn leaf(label: impl Into<String>, kind: NodeKind, span: (usize, usize)) -> Self {
        ParseTree {
            label: label.into(),
            kind,
            features: FeatureStructure::new(),
            span,
            word: None,
            annotations: Vec::new(),
            children: Vec::new(),
        }
    }

    pub fn node(label: impl Into<String>, features: FeatureStructure, children: Vec<ParseTree>) -> Self {
        let span = match (children.first(), children.last()) {
            (Some(a), Some(b)) => (a.span.0, b.span.1),
            _ => (0, 0),
        };
        ParseTree {
            label: label.into(),
            kind: NodeKind::Phrase,
            features,
            span,
            word: None,
            annotations: Vec::new(),
            children,
        }
    }

    pub fn at(&self, path: &[usize]) -> Option<&ParseTree> {
        let mut t = self;
        for &i in path {
            t = t.children.get(i)?;
        }
        Some(t)
    }

    pub fn at_mut(&mut self, path: &[usize]) -> Option<&mut ParseTree> {
        let mut t = self;
        for &i in path {
            t = t.children.get_mut(i)?;
        }
        Some(t)
    }

    /// Every node path in preorder.
    pub fn paths(&self) -> Vec<NodePath> {
        let mut out = Vec::new();
        fn walk(t: &ParseTree, path: &mut NodePath, out: &mut Vec<NodePath>) {
            out.push(path.clone());
            for (i, c) in t.children.iter().enumerate() {
                path.push(i);
                walk(c, path, out);
                path.pop();
            }
        }
        walk(self, &mut Vec::new(), &mut out);
        out
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(ParseTree::size).sum::<usize>()
    }

    /// Leaves left to right.
    pub fn leaves(&self) -> Vec<&ParseTree> {
        if self.children.is_empty() {
            return vec![self];
        }
        self.children.iter().flat_map(ParseTree::leaves).collect()
    }

    /// `S(NP(Det,N),VP(V))`
    pub fn bracketed(&self) -> String {
        let mut s = self.label.clone();
        if !self.children.is_empty() {
            s.push('(');
            let parts: Vec<String> = self.children.iter().map(ParseTree::bracketed).collect();
            s.push_str(&parts.join(","));
            s.push(')');
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeFormat {
    AsciiTree,
    IndentedFeatures,
    Json,
}

pub fn render_tree(t: &ParseTree, mode: TreeFormat) -> String {
    match mode {
        TreeFormat::AsciiTree => {
            let mut out = String::new();
            ascii(t, "", None, &mut out);
            out
        }
        TreeFormat::IndentedFeatures => {
            let mut out = String::new();
            indented(t, 0, &mut out);
            out
        }
        TreeFormat::Json => {
            let mut s = serde_json::to_string_pretty(t).expect("tree serializes");
            s.push('\n');
            s
        }
    }
}

fn node_text(t: &ParseTree) -> String {
    match (&t.kind, &t.word) {
        (NodeKind::Terminal, _) => format!("'{}'", t.label),
        (_, Some(w)) => format!("{} {w}", t.label),
        _ => t.label.clone(),
    }
}

fn ascii(t: &ParseTree, prefix: &str, last: Option<bool>, out: &mut String) {
    let (branch, cont) = match last {
        None => ("", ""),
        Some(true) => ("`-- ", "    "),
        Some(false) => ("|-- ", "|   "),
    };
    let _ = writeln!(out, "{prefix}{branch}{}", node_text(t));
    let child_prefix = format!("{prefix}{cont}");
    for (i, c) in t.children.iter().enumerate() {
        ascii(c, &child_prefix, Some(i + 1 == t.children.len()), out);
    }
}

fn indented(t: &ParseTree, depth: usize, out: &mut String) {
    let _ = writeln!(out, "{}{} {}", "  ".repeat(depth), node_text(t), t.features.render(RenderStyle::Bracketed));
    for c in &t.children {
        indented(c, depth + 1, out);
    }
}

// ---------------------------------------------------------------------------
// Derivation -> tree

struct Skeleton {
    node: NodeId,
    label: String,
    kind: NodeKind,
    span: (usize, usize),
    word: Option<String>,
    annotations: Vec<FEquation>,
    children: Vec<Skeleton>,
}

/// Rebuild the tree of a derivation starting at token `start`. Fails only if
/// the derivation is not a valid one for this grammar and input.
pub fn build_tree(
    d: &Derivation,
    g: &CompiledGrammar,
    input: &Lexicalized,
    start: usize,
) -> Result<ParseTree, UnifyError> {
    let mut env = Bindings::new();
    let sk = skeleton(d, g, input, start, &mut env)?;
    let none = HashMap::new();
    Ok(realize(sk, &env, &none))
}

fn skeleton(
    d: &Derivation,
    g: &CompiledGrammar,
    input: &Lexicalized,
    start: usize,
    env: &mut Bindings,
) -> Result<Skeleton, UnifyError> {
    match d {
        Derivation::Terminal { position } => Ok(Skeleton {
            node: env.fresh(),
            label: input.tokens[*position].clone(),
            kind: NodeKind::Terminal,
            span: (*position, position + 1),
            word: None,
            annotations: Vec::new(),
            children: Vec::new(),
        }),
        Derivation::Empty { position } => Ok(Skeleton {
            node: env.fresh(),
            label: crate::grammar::EMPTY_WORD.to_string(),
            kind: NodeKind::Empty,
            span: (*position, *position),
            word: None,
            annotations: Vec::new(),
            children: Vec::new(),
        }),
        Derivation::Lex { position, category } => {
            let cat = &input.categories[*position][*category];
            let node = env.instantiate(&cat.features, &mut Scope::new())?;
            Ok(Skeleton {
                node,
                label: cat.symbol.clone(),
                kind: NodeKind::Lexical,
                span: (*position, position + 1),
                word: Some(input.tokens[*position].clone()),
                annotations: Vec::new(),
                children: Vec::new(),
            })
        }
        Derivation::Rule { rule, items, children } => {
            let r = &g.rules[*rule];
            let inst = r.instantiate(env)?;
            let mut pos = start;
            let mut kids = Vec::with_capacity(children.len());
            for (i, child) in children.iter().enumerate() {
                let mut sk = skeleton(child, g, input, pos, env)?;
                env.unify_nodes(inst.items[items[i]], sk.node)?;
                pos = sk.span.1;
                let item = &r.rhs[items[i]];
                if item.kind == RhsKind::Category {
                    sk.annotations = if item.annotations.is_empty() && g.formalism == Formalism::Lfg {
                        vec![FEquation::head()]
                    } else {
                        item.annotations.clone()
                    };
                }
                kids.push(sk);
            }
            Ok(Skeleton {
                node: inst.lhs,
                label: r.lhs.symbol.clone(),
                kind: NodeKind::Phrase,
                span: (start, pos),
                word: None,
                annotations: Vec::new(),
                children: kids,
            })
        }
    }
}

fn realize(sk: Skeleton, env: &Bindings, names: &HashMap<NodeId, String>) -> ParseTree {
    let features = match sk.kind {
        NodeKind::Phrase | NodeKind::Lexical => env.extract(sk.node, names),
        NodeKind::Terminal | NodeKind::Empty => FeatureStructure::new(),
    };
    ParseTree {
        label: sk.label,
        kind: sk.kind,
        features,
        span: sk.span,
        word: sk.word,
        annotations: sk.annotations,
        children: sk.children.into_iter().map(|c| realize(c, env, names)).collect(),
    }
}

/// Token span a derivation covers when it starts at `start`.
pub fn derivation_end(d: &Derivation, start: usize) -> usize {
    match d {
        Derivation::Terminal { .. } | Derivation::Lex { .. } => start + 1,
        Derivation::Empty { .. } => start,
        Derivation::Rule { children, .. } => children.iter().fold(start, |p, c| derivation_end(c, p)),
    }
}

impl Derivation {
    /// Rule node with children in rule order.
    pub fn ordered(rule: RuleId, children: Vec<Derivation>) -> Self {
        Derivation::Rule { rule, items: (0..children.len()).collect(), children }
    }

    pub fn size(&self) -> usize {
        match self {
            Derivation::Rule { children, .. } => 1 + children.iter().map(Derivation::size).sum::<usize>(),
            _ => 1,
        }
    }
}
