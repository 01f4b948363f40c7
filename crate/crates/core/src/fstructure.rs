//! F-structure solving for LFG readings, run after parsing on each tree.
//!
//! Lexical nodes contribute their feature structures to their own
//! f-structure; phrase nodes contribute only through the annotations of
//! their daughters. `pred` values are instantiated per lexical node, so two
//! uses of the same predicate never unify.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featstruct::{path_string, Bindings, FeaturePath, FeatureStructure, NodeId, Scope, UnifyError, Value};
use crate::grammar::{FEquation, FPath, FRhs, FRoot};
use crate::tree::{NodeKind, NodePath, ParseTree};

const PRED: &str = "pred";
const INSTANCE_SEP: char = '\u{1f}';

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("inconsistent f-structure at node {node_path:?}, feature path {}: {message}", path_string(.feature_path))]
pub struct FStructureError {
    pub node_path: NodePath,
    pub feature_path: FeaturePath,
    pub message: String,
}

pub fn solve_fstructure(tree: &ParseTree) -> Result<FeatureStructure, FStructureError> {
    let mut s = Solver { env: Bindings::new(), instances: 0 };
    let root = s.env.empty_struct();
    s.visit(tree, root, &mut Vec::new(), &[])?;
    let fs = s.env.extract(root, &HashMap::new());
    Ok(strip_instances(&fs))
}

struct Solver {
    env: Bindings,
    instances: usize,
}

impl Solver {
    fn visit(
        &mut self,
        t: &ParseTree,
        f: NodeId,
        tree_path: &mut NodePath,
        fpath: &[String],
    ) -> Result<(), FStructureError> {
        if t.kind == NodeKind::Lexical {
            let own = self.instantiate_preds(&t.features);
            let n = self.env.instantiate(&own, &mut Scope::new()).map_err(|e| err(tree_path, fpath, &[], e))?;
            self.env.unify_nodes(f, n).map_err(|e| err(tree_path, fpath, &[], e))?;
        }
        for (i, c) in t.children.iter().enumerate() {
            if matches!(c.kind, NodeKind::Terminal | NodeKind::Empty) {
                continue;
            }
            tree_path.push(i);
            let cf = self.env.empty_struct();
            let mut child_path: Option<Vec<String>> = None;
            for eq in &c.annotations {
                self.equation(eq, f, cf, tree_path, fpath)?;
                if child_path.is_none() {
                    child_path = child_fpath(eq, fpath);
                }
            }
            let cp = child_path.unwrap_or_else(|| fpath.to_vec());
            self.visit(c, cf, tree_path, &cp)?;
            tree_path.pop();
        }
        Ok(())
    }

    fn equation(
        &mut self,
        eq: &FEquation,
        up: NodeId,
        down: NodeId,
        tree_path: &NodePath,
        fpath: &[String],
    ) -> Result<(), FStructureError> {
        let base = |p: &FPath| -> Vec<String> {
            let mut v = if p.root == FRoot::Up { fpath.to_vec() } else { Vec::new() };
            v.extend(p.attrs.iter().cloned());
            v
        };
        let lhs_path = base(&eq.lhs);
        let root = if eq.lhs.root == FRoot::Up { up } else { down };
        let l = self.env.path_node(root, &eq.lhs.attrs).map_err(|e| err(tree_path, &lhs_path, &[], e))?;
        let r = match &eq.rhs {
            FRhs::Path(p) => {
                let root = if p.root == FRoot::Up { up } else { down };
                self.env.path_node(root, &p.attrs).map_err(|e| err(tree_path, &base(p), &[], e))?
            }
            FRhs::Atom(a) => self.env.atom(a),
            FRhs::Struct(fs) => {
                let fs = self.instantiate_preds(fs);
                self.env.instantiate(&fs, &mut Scope::new()).map_err(|e| err(tree_path, &lhs_path, &[], e))?
            }
        };
        self.env.unify_nodes(l, r).map_err(|e| err(tree_path, &lhs_path, &[], e))
    }

    fn instantiate_preds(&mut self, fs: &FeatureStructure) -> FeatureStructure {
        let mut out = fs.clone();
        for (k, v) in out.iter_mut() {
            self.instantiate_value(k == PRED, v);
        }
        out
    }

    fn instantiate_value(&mut self, is_pred: bool, v: &mut Value) {
        match v {
            Value::Atom(a) if is_pred => {
                self.instances += 1;
                *a = format!("{a}{INSTANCE_SEP}{}", self.instances);
            }
            Value::Atom(_) => {}
            Value::Struct(inner) => *inner = self.instantiate_preds(inner),
            Value::Var(var) => {
                if let Some(inner) = var.value.as_mut() {
                    self.instantiate_value(is_pred, inner);
                }
            }
        }
    }
}

/// Where a daughter's f-structure sits, if the equation says.
fn child_fpath(eq: &FEquation, fpath: &[String]) -> Option<Vec<String>> {
    match (&eq.lhs, &eq.rhs) {
        (l, FRhs::Path(r)) if l.root == FRoot::Up && r.root == FRoot::Down && r.attrs.is_empty() => {
            let mut v = fpath.to_vec();
            v.extend(l.attrs.iter().cloned());
            Some(v)
        }
        _ => None,
    }
}

fn err(tree_path: &NodePath, base: &[String], extra: &[String], e: UnifyError) -> FStructureError {
    let mut feature_path = base.to_vec();
    feature_path.extend(extra.iter().cloned());
    feature_path.extend(e.path().iter().cloned());
    let message = match &e {
        UnifyError::Clash { left, right, .. } => format!("{} vs {}", strip(left), strip(right)),
        UnifyError::Occurs { .. } => "cyclic structure".to_string(),
    };
    FStructureError { node_path: tree_path.clone(), feature_path, message }
}

fn strip(a: &str) -> &str {
    a.split(INSTANCE_SEP).next().unwrap_or(a)
}

fn strip_instances(fs: &FeatureStructure) -> FeatureStructure {
    fn value(v: &Value) -> Value {
        match v {
            Value::Atom(a) => Value::Atom(strip(a).to_string()),
            Value::Struct(s) => Value::Struct(strip_instances(s)),
            Value::Var(var) => {
                let mut var = var.clone();
                if let Some(inner) = &var.value {
                    var.value = Some(Box::new(value(inner)));
                }
                Value::Var(var)
            }
        }
    }
    let mut out = fs.clone();
    for (_, v) in out.iter_mut() {
        *v = value(v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{parse_grammar, CompiledGrammar, Formalism};
    use crate::lexicon::Lexicalized;
    use crate::tree::{build_tree, Derivation};

    fn fs(s: &str) -> FeatureStructure {
        FeatureStructure::parse(s).unwrap()
    }

    fn lex_leaf(label: &str, word: &str, pos: usize, features: &str, ann: &str) -> ParseTree {
        let mut t = ParseTree::leaf(label, NodeKind::Lexical, (pos, pos + 1));
        t.word = Some(word.into());
        t.features = fs(features);
        if !ann.is_empty() {
            t.annotations = ann.split(';').map(|a| FEquation::parse(a.trim()).unwrap()).collect();
        }
        t
    }

    #[test]
    fn subject_embedding_and_head_identity() {
        let src = "%FORMALISM LFG\n%RULES\nS[] -> NP[] : (^ subj)=!, VP[] : ^=!.\n";
        let g = CompiledGrammar::compile(&parse_grammar(src, Formalism::Lfg).unwrap()).unwrap();
        let input = Lexicalized::from_categories(
            vec!["Hans".into(), "schläft".into()],
            vec![
                vec![("NP".into(), fs("[pred='Hans', num=sg]"))],
                vec![("VP".into(), fs("[pred='schlafen', tense=pres]"))],
            ],
        );
        let d = Derivation::ordered(
            0,
            vec![Derivation::Lex { position: 0, category: 0 }, Derivation::Lex { position: 1, category: 0 }],
        );
        let t = build_tree(&d, &g, &input, 0).unwrap();
        let f = solve_fstructure(&t).unwrap();
        assert_eq!(f.to_string(), "[pred=schlafen, subj=[num=sg, pred='Hans'], tense=pres]");
    }

    #[test]
    fn head_identity_everywhere_unifies_all_leaves() {
        let a = lex_leaf("A", "a", 0, "[x=1]", "^=!");
        let b = lex_leaf("B", "b", 1, "[y=2, z=[w=3]]", "^=!");
        let c = lex_leaf("C", "c", 2, "[x=1]", "^=!");
        let mut inner = ParseTree::node("Q", FeatureStructure::new(), vec![b, c]);
        inner.annotations = vec![FEquation::head()];
        let t = ParseTree::node("S", FeatureStructure::new(), vec![a, inner]);
        let f = solve_fstructure(&t).unwrap();
        assert_eq!(f, fs("[x=1, y=2, z=[w=3]]"));
    }

    #[test]
    fn case_clash_on_subject() {
        let det = lex_leaf("Det", "den", 0, "[kas=akk]", "^=!");
        let n = lex_leaf("N", "Hund", 1, "[kas=nom]", "^=!");
        let mut np = ParseTree::node("NP", FeatureStructure::new(), vec![det, n]);
        np.annotations = vec![FEquation::parse("(^ subj)=!").unwrap()];
        let v = lex_leaf("VP", "bellt", 2, "[tense=pres]", "^=!");
        let t = ParseTree::node("S", FeatureStructure::new(), vec![np, v]);
        let e = solve_fstructure(&t).unwrap_err();
        assert_eq!(e.feature_path, vec!["subj".to_string(), "kas".to_string()]);
        assert_eq!(e.node_path, vec![0, 1]);
        assert!(e.to_string().contains("subj.kas"), "{e}");
    }

    #[test]
    fn pred_values_are_unique_per_use() {
        let a = lex_leaf("A", "x", 0, "[pred='p']", "^=!");
        let b = lex_leaf("B", "x", 1, "[pred='p']", "^=!");
        let t = ParseTree::node("S", FeatureStructure::new(), vec![a, b]);
        let e = solve_fstructure(&t).unwrap_err();
        assert_eq!(e.feature_path, vec!["pred".to_string()]);
        assert_eq!(e.message, "p vs p");
    }

    #[test]
    fn atom_equation_sets_value() {
        let mut a = lex_leaf("A", "x", 0, "[]", "");
        a.annotations = vec![FEquation::parse("(^ tense)=past").unwrap(), FEquation::parse("^=!").unwrap()];
        let t = ParseTree::node("S", FeatureStructure::new(), vec![a]);
        assert_eq!(solve_fstructure(&t).unwrap(), fs("[tense=past]"));
    }
}
