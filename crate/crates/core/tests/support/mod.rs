//! Random generators and brute-force oracles shared by the property and
//! acceptance tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::PathBuf;

use gramwb::diagnostics::SpanEdge;
use gramwb::grammar::{parse_grammar, CompiledGrammar};
use gramwb::lexicon::Lexicalized;
use gramwb::tree::ParseTree;
use gramwb::{FeatureStructure, Formalism};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn demo(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../demo").join(file)
}

// ---------------------------------------------------------------------------
// Feature structures

const FEATURES: &[&str] = &["a", "b", "c", "d"];
const ATOMS: &[&str] = &["p", "q", "r"];

fn value_text(rng: &mut ChaCha8Rng, depth: usize, vars: &[String]) -> String {
    match rng.random_range(0..10) {
        0..=3 => ATOMS.choose(rng).unwrap().to_string(),
        4 | 5 if !vars.is_empty() => vars.choose(rng).unwrap().clone(),
        6 if depth > 1 && !vars.is_empty() => {
            format!("{}:{}", vars.choose(rng).unwrap(), struct_text(rng, depth - 1, vars))
        }
        _ if depth > 1 => struct_text(rng, depth - 1, vars),
        _ => ATOMS.choose(rng).unwrap().to_string(),
    }
}

/// Source text of a structure at most `depth` levels deep.
pub fn struct_text(rng: &mut ChaCha8Rng, depth: usize, vars: &[String]) -> String {
    let mut feats: Vec<&str> = FEATURES.to_vec();
    feats.shuffle(rng);
    let n = rng.random_range(0..=3);
    let parts: Vec<String> = feats[..n].iter().map(|f| format!("{f}={}", value_text(rng, depth, vars))).collect();
    format!("[{}]", parts.join(", "))
}

/// A consistent structure of depth at most 4 using the variables
/// `{prefix}1..{prefix}3`.
pub fn random_fs(rng: &mut ChaCha8Rng, prefix: &str) -> FeatureStructure {
    let vars: Vec<String> = (1..=3).map(|i| format!("{prefix}{i}")).collect();
    loop {
        let text = struct_text(rng, 4, &vars);
        if let Ok(fs) = FeatureStructure::parse(&text) {
            if fs.canonical().is_ok() {
                return fs;
            }
        }
    }
}

pub fn fs_depth(fs: &FeatureStructure) -> usize {
    fn value_depth(v: &gramwb::Value) -> usize {
        match v {
            gramwb::Value::Struct(s) => fs_depth(s),
            gramwb::Value::Var(var) => var.value.as_deref().map_or(0, value_depth),
            gramwb::Value::Atom(_) => 0,
        }
    }
    1 + fs.iter().map(|(_, v)| value_depth(v)).max().unwrap_or(0)
}

// ---------------------------------------------------------------------------
// Grammars for the left-recursion oracle

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sym {
    Nt(u8),
    /// A lexical category.
    Pre,
    /// The terminal word `'x'`.
    Word,
}

#[derive(Clone, Debug)]
pub struct Item {
    pub sym: Sym,
    pub feat: Option<u8>,
    pub optional: bool,
}

#[derive(Clone, Debug)]
pub struct GRule {
    pub lhs: u8,
    pub lhs_feat: Option<u8>,
    /// Empty for an EPSILON rule.
    pub rhs: Vec<Item>,
}

/// A DCG grammar over at most seven nonterminals, one lexical category and
/// one terminal word, with an optional atomic feature `f` on any category.
#[derive(Clone, Debug)]
pub struct LrGrammar {
    pub nonterminals: u8,
    pub rules: Vec<GRule>,
}

const NT_NAMES: &[&str] = &["A", "B", "C", "D", "E", "F", "G"];

fn feat_text(f: Option<u8>) -> String {
    match f {
        Some(0) => "[f=a]".into(),
        Some(_) => "[f=b]".into(),
        None => String::new(),
    }
}

impl LrGrammar {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let nonterminals = rng.random_range(1..=6u8);
        let n_rules = rng.random_range(1..=9);
        let featured = rng.random_bool(0.5);
        let feat = |rng: &mut ChaCha8Rng| {
            if featured && rng.random_bool(0.35) {
                Some(rng.random_range(0..2u8))
            } else {
                None
            }
        };
        let mut rules = Vec::new();
        for _ in 0..n_rules {
            let lhs = rng.random_range(0..nonterminals);
            let lhs_feat = feat(rng);
            let len = if rng.random_bool(0.15) { 0 } else { rng.random_range(1..=3) };
            let mut optionals = 0;
            let rhs = (0..len)
                .map(|_| {
                    let sym = match rng.random_range(0..10) {
                        0 => Sym::Word,
                        1 => Sym::Pre,
                        _ => Sym::Nt(rng.random_range(0..nonterminals)),
                    };
                    let optional = sym != Sym::Word && optionals < 2 && rng.random_bool(0.15);
                    optionals += optional as usize;
                    Item { sym, feat: if sym == Sym::Word { None } else { feat(rng) }, optional }
                })
                .collect();
            rules.push(GRule { lhs, lhs_feat, rhs });
        }
        LrGrammar { nonterminals, rules }
    }

    pub fn name(s: Sym) -> String {
        match s {
            Sym::Nt(i) => NT_NAMES[i as usize].to_string(),
            Sym::Pre => "P".into(),
            Sym::Word => "'x'".into(),
        }
    }

    pub fn text(&self) -> String {
        let mut s = String::from("%FORMALISM DCG\n%START A\n%RULES\n");
        for r in &self.rules {
            let rhs = if r.rhs.is_empty() {
                "EPSILON".to_string()
            } else {
                let items: Vec<String> = r
                    .rhs
                    .iter()
                    .map(|i| {
                        let t = format!("{}{}", Self::name(i.sym), feat_text(i.feat));
                        if i.optional {
                            format!("({t})")
                        } else {
                            t
                        }
                    })
                    .collect();
                items.join(", ")
            };
            s.push_str(&format!("{}{} -> {rhs}.\n", NT_NAMES[r.lhs as usize], feat_text(r.lhs_feat)));
        }
        s
    }

    fn variants(rule: &GRule) -> Vec<Vec<(Sym, Option<u8>)>> {
        let mut out: Vec<Vec<(Sym, Option<u8>)>> = vec![Vec::new()];
        for item in &rule.rhs {
            let mut next = Vec::new();
            for v in &out {
                let mut with = v.clone();
                with.push((item.sym, item.feat));
                next.push(with);
                if item.optional {
                    next.push(v.clone());
                }
            }
            out = next;
        }
        out
    }

    /// Nonterminals `A` with a leftmost derivation `A =>+ A ...` whose
    /// derivation tree is at most `cap` levels deep. The daughters to the
    /// left of the path back to `A` must derive the empty string within the
    /// levels left below them. With `features`, a category state is its
    /// symbol and the value of `f`, a rule applies only where its left-hand
    /// side is compatible, and the path must return to the exact starting
    /// state.
    pub fn left_recursive_oracle(&self, features: bool, cap: usize) -> BTreeSet<String> {
        type State = (Sym, Option<u8>);
        let norm = |s: State| if features { s } else { (s.0, None) };
        let variants: Vec<(u8, Option<u8>, Vec<Vec<State>>)> = self
            .rules
            .iter()
            .map(|r| {
                let vs = Self::variants(r).into_iter().map(|v| v.into_iter().map(norm).collect()).collect();
                (r.lhs, if features { r.lhs_feat } else { None }, vs)
            })
            .collect();
        let compatible = |a: Option<u8>, b: Option<u8>| a.is_none() || b.is_none() || a == b;
        let feats: Vec<Option<u8>> = if features { vec![None, Some(0), Some(1)] } else { vec![None] };
        let states: Vec<State> =
            (0..self.nonterminals).flat_map(|a| feats.iter().map(move |&f| (Sym::Nt(a), f))).collect();
        let expansions = |s: State| {
            let Sym::Nt(b) = s.0 else { return Vec::new() };
            variants
                .iter()
                .filter(|(lhs, lf, _)| *lhs == b && compatible(s.1, *lf))
                .flat_map(|(_, _, vs)| vs.iter())
                .collect::<Vec<_>>()
        };

        // erasable[h]: states deriving the empty string in a tree of height <= h.
        let mut erasable: Vec<HashSet<State>> = vec![HashSet::new()];
        for h in 1..=cap {
            let below = &erasable[h - 1];
            let now = states
                .iter()
                .copied()
                .filter(|&s| expansions(s).iter().any(|v| v.iter().all(|d| below.contains(d))))
                .collect();
            erasable.push(now);
        }

        let mut found = BTreeSet::new();
        for &start in &states {
            let Sym::Nt(a) = start.0 else { continue };
            // level[j]: states reachable as the left corner of a node at level j.
            let mut level: HashSet<State> = HashSet::from([start]);
            for j in 0..cap {
                let room = &erasable[cap - (j + 1)];
                let mut next = HashSet::new();
                for &s in &level {
                    for v in expansions(s) {
                        for &d in v.iter() {
                            if matches!(d.0, Sym::Nt(_)) {
                                next.insert(d);
                            }
                            if !room.contains(&d) {
                                break;
                            }
                        }
                    }
                }
                if next.contains(&start) {
                    found.insert(NT_NAMES[a as usize].to_string());
                    break;
                }
                level = next;
            }
        }
        found
    }
}

// ---------------------------------------------------------------------------
// Ordered grammars for engine equivalence

/// A random non-left-recursive DCG grammar with a small lexicon.
pub struct EqGrammar {
    pub text: String,
    pub grammar: CompiledGrammar,
    /// Rules as (lhs, rhs symbols), ignoring features, for sentence generation.
    pub skeleton: Vec<(String, Vec<String>)>,
    pub words: Vec<(String, Vec<(String, FeatureStructure)>)>,
}

const EQ_NTS: &[&str] = &["S", "A", "B", "C"];
const EQ_PRES: &[&str] = &["P", "Q", "R"];

impl EqGrammar {
    /// Draws until the grammar passes the left-recursion check.
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        loop {
            if let Some(g) = Self::attempt(rng) {
                return g;
            }
        }
    }

    fn attempt(rng: &mut ChaCha8Rng) -> Option<Self> {
        let mut text = String::from("%FORMALISM DCG\n%START S\n%RULES\n");
        let mut skeleton = Vec::new();
        let atom = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { "a" } else { "b" };
        for lhs in EQ_NTS {
            for _ in 0..rng.random_range(1..=2) {
                if *lhs != "S" && rng.random_bool(0.08) {
                    text.push_str(&format!("{lhs} -> EPSILON.\n"));
                    skeleton.push((lhs.to_string(), Vec::new()));
                    continue;
                }
                let agree = rng.random_bool(0.5);
                let len = rng.random_range(1..=3);
                let mut syms = Vec::new();
                let mut items = Vec::new();
                for k in 0..len {
                    let sym = if rng.random_bool(0.5) {
                        EQ_NTS[1..].choose(rng).unwrap()
                    } else {
                        EQ_PRES.choose(rng).unwrap()
                    };
                    let feat = if agree && (k == 0 || rng.random_bool(0.4)) {
                        "[f=X]".to_string()
                    } else if rng.random_bool(0.3) {
                        format!("[f={}]", atom(rng))
                    } else {
                        String::new()
                    };
                    syms.push(sym.to_string());
                    items.push(format!("{sym}{feat}"));
                }
                let lhs_feat = if agree { "[f=X]" } else { "" };
                text.push_str(&format!("{lhs}{lhs_feat} -> {}.\n", items.join(", ")));
                skeleton.push((lhs.to_string(), syms));
            }
        }
        let g = parse_grammar(&text, Formalism::Dcg).ok()?;
        if !gramwb::checks::check_left_recursion(&g).is_empty() {
            return None;
        }
        let grammar = CompiledGrammar::compile(&g).ok()?;
        let words = (0..5)
            .map(|i| {
                let mut pres = EQ_PRES.to_vec();
                pres.shuffle(rng);
                let n = rng.random_range(1..=2);
                let cats = pres[..n]
                    .iter()
                    .map(|p| (p.to_string(), FeatureStructure::parse(&format!("[f={}]", atom(rng))).unwrap()))
                    .collect();
                (format!("w{i}"), cats)
            })
            .collect();
        Some(EqGrammar { text, grammar, skeleton, words })
    }

    pub fn input(&self, sentence: &[String]) -> Lexicalized {
        let cats = sentence
            .iter()
            .map(|w| self.words.iter().find(|(x, _)| x == w).map(|(_, c)| c.clone()).unwrap_or_default())
            .collect();
        Lexicalized::from_categories(sentence.to_vec(), cats)
    }

    /// Either the yield of a random derivation (ignoring features) or a
    /// random word sequence, at most `max_len` tokens.
    pub fn sentence(&self, rng: &mut ChaCha8Rng, max_len: usize) -> Vec<String> {
        if rng.random_bool(0.6) {
            for _ in 0..20 {
                let mut out = Vec::new();
                if self.expand(rng, "S", 0, max_len, &mut out) && !out.is_empty() {
                    return out;
                }
            }
        }
        let n = rng.random_range(1..=max_len);
        (0..n).map(|_| self.words.choose(rng).unwrap().0.clone()).collect()
    }

    fn expand(&self, rng: &mut ChaCha8Rng, sym: &str, depth: usize, max_len: usize, out: &mut Vec<String>) -> bool {
        if out.len() > max_len || depth > 8 {
            return false;
        }
        if EQ_PRES.contains(&sym) {
            let with: Vec<&String> =
                self.words.iter().filter(|(_, c)| c.iter().any(|(s, _)| s == sym)).map(|(w, _)| w).collect();
            return match with.choose(rng) {
                Some(w) => {
                    out.push((*w).clone());
                    out.len() <= max_len
                }
                None => false,
            };
        }
        let rules: Vec<&(String, Vec<String>)> = self.skeleton.iter().filter(|(l, _)| l == sym).collect();
        let Some((_, rhs)) = rules.choose(rng) else { return false };
        rhs.iter().all(|s| self.expand(rng, s, depth + 1, max_len, out))
    }
}

// ---------------------------------------------------------------------------
// ID grammars with atomic features, and a brute-force reading counter

/// A category with an optional value for `f`.
pub type Cat = (String, Option<u8>);

/// One path through a chart as `(from, to, edge id)` steps.
pub type PathSteps = Vec<(usize, usize, Option<usize>)>;

type TreeMemo = HashMap<(String, usize, usize), Vec<Cat>>;

/// A random ID/LP grammar without LP statements: at most 6 rules, at most 3
/// right-hand-side symbols, atomic features only, no unary cycles.
pub struct IdGrammar {
    pub rules: Vec<(String, Option<u8>, Vec<Cat>)>,
}

const ID_NTS: &[&str] = &["S", "A", "B"];
const ID_PRES: &[&str] = &["P", "Q"];

impl IdGrammar {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        loop {
            let n = rng.random_range(1..=6);
            let feat = |rng: &mut ChaCha8Rng| if rng.random_bool(0.3) { Some(rng.random_range(0..2u8)) } else { None };
            let mut rules = Vec::new();
            for i in 0..n {
                let lhs = if i == 0 { "S" } else { ID_NTS.choose(rng).unwrap() };
                let len = rng.random_range(1..=3);
                let rhs = (0..len)
                    .map(|_| {
                        let s = if rng.random_bool(0.4) {
                            ID_NTS[1..].choose(rng).unwrap()
                        } else {
                            ID_PRES.choose(rng).unwrap()
                        };
                        (s.to_string(), feat(rng))
                    })
                    .collect();
                rules.push((lhs.to_string(), feat(rng), rhs));
            }
            let g = IdGrammar { rules };
            if !g.has_unary_cycle() {
                return g;
            }
        }
    }

    fn has_unary_cycle(&self) -> bool {
        let edges: BTreeSet<(&str, &str)> =
            self.rules.iter().filter(|(_, _, r)| r.len() == 1).map(|(l, _, r)| (l.as_str(), r[0].0.as_str())).collect();
        fn reaches<'a>(
            edges: &BTreeSet<(&'a str, &'a str)>,
            from: &'a str,
            goal: &str,
            seen: &mut BTreeSet<&'a str>,
        ) -> bool {
            edges
                .iter()
                .filter(|(a, _)| *a == from)
                .any(|(_, b)| *b == goal || (seen.insert(b) && reaches(edges, b, goal, seen)))
        }
        ID_NTS.iter().any(|s| reaches(&edges, s, s, &mut BTreeSet::new()))
    }

    pub fn text(&self) -> String {
        let mut s = String::from("%FORMALISM IDLP\n%START S\n%RULES\n");
        for (lhs, lf, rhs) in &self.rules {
            let items: Vec<String> = rhs.iter().map(|(s, f)| format!("{s}{}", feat_text(*f))).collect();
            s.push_str(&format!("{lhs}{} -> {}.\n", feat_text(*lf), items.join(", ")));
        }
        s
    }

    /// The same grammar with each right-hand side permuted.
    pub fn permuted(&self, rng: &mut ChaCha8Rng) -> IdGrammar {
        let rules = self
            .rules
            .iter()
            .map(|(l, f, r)| {
                let mut r = r.clone();
                r.shuffle(rng);
                (l.clone(), *f, r)
            })
            .collect();
        IdGrammar { rules }
    }

    pub fn compile(&self) -> CompiledGrammar {
        CompiledGrammar::compile(&parse_grammar(&self.text(), Formalism::Idlp).expect("generated grammar parses"))
            .expect("compiles")
    }

    /// Each token gets one or two lexical categories with an optional `f`.
    pub fn random_input(rng: &mut ChaCha8Rng, n: usize) -> (Lexicalized, Vec<Vec<Cat>>) {
        let cats: Vec<Vec<Cat>> = (0..n)
            .map(|_| {
                let mut pres = ID_PRES.to_vec();
                pres.shuffle(rng);
                let k = rng.random_range(1..=2);
                pres[..k]
                    .iter()
                    .map(|p| (p.to_string(), if rng.random_bool(0.5) { Some(rng.random_range(0..2u8)) } else { None }))
                    .collect()
            })
            .collect();
        let lex = cats
            .iter()
            .map(|cs| {
                cs.iter()
                    .map(|(s, f)| {
                        (
                            s.clone(),
                            FeatureStructure::parse(&format!("[{}]", feat_text(*f).trim_matches(['[', ']']))).unwrap(),
                        )
                    })
                    .collect()
            })
            .collect();
        let tokens = (0..n).map(|i| format!("t{i}")).collect();
        (Lexicalized::from_categories(tokens, lex), cats)
    }

    /// Distinct derivation trees for `S` over all tokens, trying every
    /// ordering of every right-hand side. A tree is a rule with its daughters
    /// in surface order; two orderings yielding the same daughters count once.
    pub fn brute_force_readings(&self, cats: &[Vec<Cat>]) -> usize {
        let n = cats.len();
        let mut memo = TreeMemo::new();
        self.trees("S", 0, n, cats, &mut memo).len()
    }

    /// Trees rooted in `sym` spanning `[i, j)`, each with its own `f`.
    fn trees(
        &self,
        sym: &str,
        i: usize,
        j: usize,
        cats: &[Vec<Cat>],
        memo: &mut TreeMemo,
    ) -> Vec<(String, Option<u8>)> {
        let key = (sym.to_string(), i, j);
        if let Some(t) = memo.get(&key) {
            return t.clone();
        }
        let mut out: BTreeSet<(String, Option<u8>)> = BTreeSet::new();
        if j == i + 1 {
            for (c, (s, f)) in cats[i].iter().enumerate() {
                if s == sym {
                    out.insert((format!("L{i}.{c}"), *f));
                }
            }
        }
        for (r, (lhs, lf, rhs)) in self.rules.iter().enumerate() {
            if lhs != sym || rhs.len() > j - i {
                continue;
            }
            let mut daughters: BTreeSet<Vec<String>> = BTreeSet::new();
            for perm in permutations(rhs.len()) {
                let items: Vec<&(String, Option<u8>)> = perm.iter().map(|&k| &rhs[k]).collect();
                for split in splits(i, j, items.len()) {
                    let mut seqs: Vec<Vec<String>> = vec![Vec::new()];
                    for (k, item) in items.iter().enumerate() {
                        let (a, b) = (split[k], split[k + 1]);
                        let fits: Vec<String> = self
                            .trees(&item.0, a, b, cats, memo)
                            .into_iter()
                            .filter(|(_, f)| item.1.is_none() || f.is_none() || *f == item.1)
                            .map(|(t, _)| t)
                            .collect();
                        seqs = seqs
                            .iter()
                            .flat_map(|s| fits.iter().map(move |t| [s.clone(), vec![t.clone()]].concat()))
                            .collect();
                        if seqs.is_empty() {
                            break;
                        }
                    }
                    daughters.extend(seqs);
                }
            }
            for d in daughters {
                out.insert((format!("R{r}({})", d.join(",")), *lf));
            }
        }
        let v: Vec<_> = out.into_iter().collect();
        memo.insert(key, v.clone());
        v
    }
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Boundaries splitting `[i, j)` into `k` non-empty parts.
fn splits(i: usize, j: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 1 {
        return vec![vec![i, j]];
    }
    let mut out = Vec::new();
    for m in i + 1..j {
        for rest in splits(m, j, k - 1) {
            out.push([vec![i], rest].concat());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Trees for the comparison tool

const LABELS: &[&str] = &["S", "NP", "VP", "X", "Y"];

fn atom_struct_text(rng: &mut ChaCha8Rng, depth: usize) -> String {
    let mut feats: Vec<&str> = FEATURES.to_vec();
    feats.shuffle(rng);
    let n = rng.random_range(1..=3);
    let parts: Vec<String> = feats[..n]
        .iter()
        .map(|f| {
            let v = if depth > 1 && rng.random_bool(0.3) {
                atom_struct_text(rng, depth - 1)
            } else {
                ATOMS.choose(rng).unwrap().to_string()
            };
            format!("{f}={v}")
        })
        .collect();
    format!("[{}]", parts.join(", "))
}

pub fn random_tree(rng: &mut ChaCha8Rng, depth: usize) -> ParseTree {
    let arity = if depth == 0 { 0 } else { rng.random_range(0..=3) };
    let children = (0..arity).map(|_| random_tree(rng, depth - 1)).collect();
    let fs = FeatureStructure::parse(&atom_struct_text(rng, 3)).unwrap();
    ParseTree::node(*LABELS.choose(rng).unwrap(), fs, children)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    Shape,
    Label,
    Feature,
}

/// Paths to every atom inside a structure.
pub fn atom_paths(fs: &FeatureStructure) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for (f, v) in fs.iter() {
        match v {
            gramwb::Value::Atom(_) => out.push(vec![f.clone()]),
            gramwb::Value::Struct(s) => {
                for p in atom_paths(s) {
                    out.push([vec![f.clone()], p].concat());
                }
            }
            gramwb::Value::Var(_) => {}
        }
    }
    out
}

fn replace_atom(fs: &mut FeatureStructure, path: &[String]) {
    for (f, v) in fs.iter_mut() {
        if *f != path[0] {
            continue;
        }
        match v {
            gramwb::Value::Atom(a) if path.len() == 1 => {
                let other = ATOMS.iter().find(|x| **x != a.as_str()).unwrap();
                *a = other.to_string();
            }
            gramwb::Value::Struct(s) => replace_atom(s, &path[1..]),
            _ => {}
        }
    }
}

/// Applies one mutation at a random node and returns the node path and,
/// for feature mutations, the feature path changed.
pub fn mutate(rng: &mut ChaCha8Rng, t: &mut ParseTree, kind: Mutation) -> (Vec<usize>, Option<Vec<String>>) {
    let paths = t.paths();
    let path = paths.choose(rng).unwrap().clone();
    let node = t.at_mut(&path).unwrap();
    match kind {
        Mutation::Shape => {
            if !node.children.is_empty() && rng.random_bool(0.5) {
                let k = rng.random_range(0..node.children.len());
                node.children.remove(k);
            } else {
                let k = rng.random_range(0..=node.children.len());
                let leaf = random_tree(rng, 0);
                node.children.insert(k, leaf);
            }
            (path, None)
        }
        Mutation::Label => {
            let other = LABELS.iter().filter(|l| **l != node.label).collect::<Vec<_>>();
            node.label = other.choose(rng).unwrap().to_string();
            (path, None)
        }
        Mutation::Feature => {
            let fpaths = atom_paths(&node.features);
            let fp = fpaths.choose(rng).unwrap().clone();
            replace_atom(&mut node.features, &fp);
            (path, Some(fp))
        }
    }
}

// ---------------------------------------------------------------------------
// Span edges for the fragment diagnostics

pub fn tokens(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("w{i}")).collect()
}

/// Up to 20 edges over `n` tokens, none of them an `S` spanning everything.
/// Ids are distinct but not in span order.
pub fn random_edges(rng: &mut ChaCha8Rng, n: usize) -> Vec<SpanEdge> {
    let k = rng.random_range(0..=20);
    let mut ids: Vec<usize> = (0..k * 2).collect();
    ids.shuffle(rng);
    (0..k)
        .map(|e| {
            let from = rng.random_range(0..n);
            let to = rng.random_range(from + 1..=n);
            let label = ["A", "B", "C", "D"].choose(rng).unwrap().to_string();
            SpanEdge { id: ids[e], label, from, to }
        })
        .collect()
}

/// Every path from 0 to n through the edges plus word edges at positions
/// no edge starts from, as `(from, to, edge id)` triples.
pub fn all_paths(edges: &[SpanEdge], n: usize) -> Vec<PathSteps> {
    let mut out_edges: BTreeMap<usize, Vec<(usize, Option<usize>)>> = BTreeMap::new();
    for e in edges {
        out_edges.entry(e.from).or_default().push((e.to, Some(e.id)));
    }
    for p in 0..n {
        out_edges.entry(p).or_insert_with(|| vec![(p + 1, None)]);
    }
    fn walk(
        pos: usize,
        n: usize,
        g: &BTreeMap<usize, Vec<(usize, Option<usize>)>>,
        cur: &mut PathSteps,
        out: &mut Vec<PathSteps>,
    ) {
        if pos == n {
            out.push(cur.clone());
            return;
        }
        for &(to, id) in &g[&pos] {
            cur.push((pos, to, id));
            walk(to, n, g, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    walk(0, n, &out_edges, &mut Vec::new(), &mut out);
    out
}
