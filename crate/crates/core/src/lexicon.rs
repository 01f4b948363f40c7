//! Full-form lexicon and the lexicon interface rules that map lexical
//! entries into grammar categories.
//!
//! Lexicon file: one entry per line, `surface : f1=v1, f2=v2, ...`.
//! Interface rule file: statements of the form
//!
//! ```text
//! noun: if_in_lex (pos=noun, !kasus) then_in_gram (N, case=#kasus, person=3).
//! ```
//!
//! The rule name and colon are optional; the first item of the
//! `then_in_gram` list is the target category symbol.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostic::Diagnostic;
use crate::featstruct::{Bindings, FeatureStructure, Scope, Value};
use crate::grammar::CategorySpec;
use crate::syntax::{self, starts_upper, Cursor, Pos, SyntaxError, Tok};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexEntry {
    pub surface: String,
    pub features: FeatureStructure,
    pub line: usize,
}

impl LexEntry {
    pub fn pos(&self) -> Option<&str> {
        self.features.get_atom("pos")
    }
}

impl fmt::Display for LexEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fs = self.features.to_string();
        write!(f, "{} : {}", self.surface, &fs[1..fs.len() - 1])
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Lexicon {
    pub file: Option<String>,
    pub entries: Vec<LexEntry>,
    #[serde(skip)]
    by_surface: HashMap<String, Vec<usize>>,
}

impl Lexicon {
    pub fn new(entries: Vec<LexEntry>) -> Self {
        let mut by_surface: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            by_surface.entry(e.surface.clone()).or_default().push(i);
        }
        Lexicon { file: None, entries, by_surface }
    }

    /// Parse a lexicon file. Loading is all-or-nothing: any malformed line
    /// fails the whole load.
    pub fn parse(src: &str, file: Option<&str>) -> Result<Lexicon, Vec<Diagnostic>> {
        let mut entries = Vec::new();
        let mut diags = Vec::new();
        for (i, raw) in src.lines().enumerate() {
            let line = i + 1;
            let text = match raw.find("//") {
                Some(c) => &raw[..c],
                None => raw,
            };
            if text.trim().is_empty() {
                continue;
            }
            match parse_entry(text, line) {
                Ok(e) => entries.push(e),
                Err(d) => diags.push(d.in_file(file)),
            }
        }
        if !diags.is_empty() {
            return Err(diags);
        }
        let mut lex = Lexicon::new(entries);
        lex.file = file.map(str::to_string);
        Ok(lex)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries whose surface form matches exactly, in file order.
    pub fn lookup(&self, word: &str) -> Vec<&LexEntry> {
        match self.by_surface.get(word) {
            Some(ix) => ix.iter().map(|&i| &self.entries[i]).collect(),
            None => Vec::new(),
        }
    }
}

fn parse_entry(text: &str, line: usize) -> Result<LexEntry, Diagnostic> {
    let pos = |col: usize| Some(Pos { line, col });
    let Some(colon) = text.find(':') else {
        return Err(Diagnostic::error(pos(1), "lexicon entry needs `surface : features`"));
    };
    let surface = text[..colon].trim();
    if surface.is_empty() {
        return Err(Diagnostic::error(pos(1), "empty surface form"));
    }
    if surface.chars().any(char::is_whitespace) {
        return Err(Diagnostic::error(pos(1), format!("surface form `{surface}` must be a single word")));
    }
    let body = &text[colon + 1..];
    let col0 = text[..colon + 1].chars().count();
    let features = FeatureStructure::parse(&format!("[{body}]"))
        .map_err(|e| Diagnostic::error(pos(col0 + e.pos.col.saturating_sub(1)), e.message))?;
    match features.get("pos") {
        Some(Value::Atom(_)) => {}
        Some(_) => return Err(Diagnostic::error(pos(col0 + 1), "`pos` must be an atom")),
        None => return Err(Diagnostic::error(pos(col0 + 1), format!("entry `{surface}` has no `pos` feature"))),
    }
    Ok(LexEntry { surface: surface.to_string(), features, line })
}

// ---------------------------------------------------------------------------
// Interface rules

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Criterion {
    Equals { feature: String, value: String },
    MustHave { feature: String },
    MustLack { feature: String },
}

impl Criterion {
    pub fn feature(&self) -> &str {
        match self {
            Criterion::Equals { feature, .. } | Criterion::MustHave { feature } | Criterion::MustLack { feature } => {
                feature
            }
        }
    }

    pub fn holds(&self, fs: &FeatureStructure) -> bool {
        match self {
            Criterion::Equals { feature, value } => fs.get_atom(feature) == Some(value.as_str()),
            Criterion::MustHave { feature } => fs.get(feature).is_some(),
            Criterion::MustLack { feature } => fs.get(feature).is_none(),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Criterion::Equals { feature, value } => write!(f, "{feature}={}", Value::atom(value.clone())),
            Criterion::MustHave { feature } => write!(f, "!{feature}"),
            Criterion::MustLack { feature } => write!(f, "~{feature}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpecValue {
    Atom {
        value: String,
    },
    /// `#name`: copy the entry's value of `name`.
    Copy {
        from: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecItem {
    pub feature: String,
    pub value: SpecValue,
}

impl fmt::Display for SpecItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.value {
            SpecValue::Atom { value } => write!(f, "{}={}", self.feature, Value::atom(value.clone())),
            SpecValue::Copy { from } => write!(f, "{}=#{from}", self.feature),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterfaceRule {
    pub name: String,
    pub test: Vec<Criterion>,
    pub target: String,
    pub spec: Vec<SpecItem>,
    pub line: usize,
}

impl InterfaceRule {
    pub fn matches(&self, entry: &LexEntry) -> bool {
        self.test.iter().all(|c| c.holds(&entry.features))
    }

    /// Apply the specification to an entry the test accepted.
    pub fn specify(&self, entry: &LexEntry) -> Result<CategorySpec, EvalError> {
        let mut fs = FeatureStructure::new();
        for item in &self.spec {
            let v = match &item.value {
                SpecValue::Atom { value } => Value::atom(value.clone()),
                SpecValue::Copy { from } => match entry.features.get(from) {
                    Some(v) => v.clone(),
                    None => {
                        return Err(EvalError {
                            rule: self.name.clone(),
                            line: self.line,
                            feature: from.clone(),
                            word: entry.surface.clone(),
                        })
                    }
                },
            };
            fs.insert(item.feature.clone(), v);
        }
        Ok(CategorySpec::new(self.target.clone(), fs))
    }
}

impl fmt::Display for InterfaceRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let test: Vec<String> = self.test.iter().map(|c| c.to_string()).collect();
        let mut spec = vec![self.target.clone()];
        spec.extend(self.spec.iter().map(|s| s.to_string()));
        write!(f, "{}: if_in_lex ({}) then_in_gram ({}).", self.name, test.join(", "), spec.join(", "))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("line {line}: interface rule `{rule}` copies `#{feature}`, which entry `{word}` lacks")]
pub struct EvalError {
    pub rule: String,
    pub line: usize,
    pub feature: String,
    pub word: String,
}

impl EvalError {
    pub fn to_diagnostic(&self) -> Diagnostic {
        Diagnostic::error(Some(Pos { line: self.line, col: 1 }), self.to_string())
    }
}

/// A validated interface rule set plus the warnings raised while loading it.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterfaceRules {
    pub file: Option<String>,
    pub rules: Vec<InterfaceRule>,
    pub warnings: Vec<Diagnostic>,
}

impl InterfaceRules {
    pub fn parse(src: &str, file: Option<&str>) -> Result<InterfaceRules, Vec<Diagnostic>> {
        let toks = syntax::tokenize(src, 1).map_err(|e| vec![Diagnostic::from(e).in_file(file)])?;
        let mut cur = Cursor::new(&toks, syntax::end_pos(src, 1));
        let mut rules: Vec<InterfaceRule> = Vec::new();
        let mut diags = Vec::new();
        let mut warnings = Vec::new();
        let mut names: BTreeMap<String, usize> = BTreeMap::new();
        while !cur.is_done() {
            let start = cur.pos();
            match parse_rule(&mut cur, rules.len() + 1) {
                Ok(rule) => {
                    if let Some(prev) = names.insert(rule.name.clone(), rule.line) {
                        diags.push(Diagnostic::error(
                            Some(start),
                            format!("duplicate interface rule name `{}` (first defined on line {prev})", rule.name),
                        ));
                    }
                    match validate(&rule) {
                        Ok(w) => warnings.extend(w.into_iter().map(|m| Diagnostic::warning(Some(start), m))),
                        Err(m) => diags.push(Diagnostic::error(Some(start), m)),
                    }
                    rules.push(rule);
                }
                Err(e) => {
                    diags.push(e.into());
                    // Resynchronise after the next `.`.
                    for t in cur.by_ref() {
                        if t.tok == Tok::Dot {
                            break;
                        }
                    }
                }
            }
        }
        if !diags.is_empty() {
            return Err(diags.into_iter().map(|d| d.in_file(file)).collect());
        }
        Ok(InterfaceRules {
            file: file.map(str::to_string),
            rules,
            warnings: warnings.into_iter().map(|d| d.in_file(file)).collect(),
        })
    }

    /// Symbols of every category the rules can produce.
    pub fn targets(&self) -> BTreeSet<String> {
        self.rules.iter().map(|r| r.target.clone()).collect()
    }

    /// Categories for one entry: one per rule whose test passes, in rule order.
    pub fn apply(&self, entry: &LexEntry) -> Result<Vec<(usize, CategorySpec)>, EvalError> {
        apply_interface_rules(entry, &self.rules)
    }
}

pub fn apply_interface_rules(
    entry: &LexEntry,
    rules: &[InterfaceRule],
) -> Result<Vec<(usize, CategorySpec)>, EvalError> {
    let mut out = Vec::new();
    for (i, r) in rules.iter().enumerate() {
        if r.matches(entry) {
            out.push((i, r.specify(entry)?));
        }
    }
    Ok(out)
}

fn parse_rule(cur: &mut Cursor<'_>, ordinal: usize) -> Result<InterfaceRule, SyntaxError> {
    let line = cur.pos().line;
    let mut name = format!("rule{ordinal}");
    if matches!(cur.peek_at(1), Some(Tok::Colon)) {
        name = cur.ident("rule name")?;
        cur.expect(&Tok::Colon)?;
    }
    keyword(cur, "if_in_lex")?;
    cur.expect(&Tok::LParen)?;
    let mut test = Vec::new();
    if !cur.eat(&Tok::RParen) {
        loop {
            test.push(parse_criterion(cur)?);
            if cur.eat(&Tok::RParen) {
                break;
            }
            cur.expect(&Tok::Comma)?;
        }
    }
    keyword(cur, "then_in_gram")?;
    cur.expect(&Tok::LParen)?;
    let at = cur.pos();
    let target = cur.ident("target category")?;
    if !starts_upper(&target) {
        return Err(SyntaxError::new(at, format!("target category must start uppercase: `{target}`")));
    }
    let mut spec = Vec::new();
    while cur.eat(&Tok::Comma) {
        let feature = lower_ident(cur, "specification feature")?;
        cur.expect(&Tok::Eq)?;
        let value = match cur.next().map(|t| &t.tok) {
            Some(Tok::Hash(n)) => SpecValue::Copy { from: n.clone() },
            Some(Tok::Ident(a)) if syntax::is_atom_ident(a) => SpecValue::Atom { value: a.clone() },
            Some(Tok::Quoted(a)) => SpecValue::Atom { value: a.clone() },
            _ => return Err(SyntaxError::new(at, "specification value must be an atom or `#feature`")),
        };
        spec.push(SpecItem { feature, value });
    }
    cur.expect(&Tok::RParen)?;
    cur.expect(&Tok::Dot)?;
    Ok(InterfaceRule { name, test, target, spec, line })
}

fn keyword(cur: &mut Cursor<'_>, kw: &str) -> Result<(), SyntaxError> {
    match cur.peek() {
        Some(Tok::Ident(s)) if s == kw => {
            cur.next();
            Ok(())
        }
        _ => Err(cur.unexpected(&format!("`{kw}`"))),
    }
}

fn lower_ident(cur: &mut Cursor<'_>, what: &str) -> Result<String, SyntaxError> {
    let at = cur.pos();
    let s = cur.ident(what)?;
    if !s.chars().next().is_some_and(|c| c.is_lowercase()) {
        return Err(SyntaxError::new(at, format!("{what} must be lowercase: `{s}`")));
    }
    Ok(s)
}

fn parse_criterion(cur: &mut Cursor<'_>) -> Result<Criterion, SyntaxError> {
    if cur.eat(&Tok::Bang) {
        return Ok(Criterion::MustHave { feature: lower_ident(cur, "feature name")? });
    }
    if cur.eat(&Tok::Tilde) {
        return Ok(Criterion::MustLack { feature: lower_ident(cur, "feature name")? });
    }
    let feature = lower_ident(cur, "feature name")?;
    cur.expect(&Tok::Eq)?;
    let value = match cur.next().map(|t| &t.tok) {
        Some(Tok::Ident(a)) if syntax::is_atom_ident(a) => a.clone(),
        Some(Tok::Quoted(a)) => a.clone(),
        _ => return Err(SyntaxError::new(cur.pos(), "test value must be an atom")),
    };
    Ok(Criterion::Equals { feature, value })
}

/// Load-time checks. Returns warnings, or the first error.
fn validate(rule: &InterfaceRule) -> Result<Vec<String>, String> {
    let mut equals: BTreeMap<&str, &str> = BTreeMap::new();
    let mut have = BTreeSet::new();
    let mut lack = BTreeSet::new();
    for c in &rule.test {
        match c {
            Criterion::Equals { feature, value } => {
                if let Some(prev) = equals.insert(feature, value) {
                    if prev != value {
                        return Err(format!(
                            "interface rule `{}` is contradictory: {feature}={prev} and {feature}={value}",
                            rule.name
                        ));
                    }
                }
                have.insert(feature.as_str());
            }
            Criterion::MustHave { feature } => {
                have.insert(feature.as_str());
            }
            Criterion::MustLack { feature } => {
                lack.insert(feature.as_str());
            }
        }
    }
    if let Some(f) = have.intersection(&lack).next() {
        return Err(format!("interface rule `{}` is contradictory: requires and prohibits `{f}`", rule.name));
    }
    let mut warnings = Vec::new();
    let mut targets = BTreeSet::new();
    for item in &rule.spec {
        if !targets.insert(item.feature.as_str()) {
            return Err(format!("interface rule `{}` specifies `{}` twice", rule.name, item.feature));
        }
        if let SpecValue::Copy { from } = &item.value {
            if lack.contains(from.as_str()) {
                return Err(format!("interface rule `{}` copies `#{from}`, which its test prohibits", rule.name));
            }
            if !have.contains(from.as_str()) {
                warnings.push(format!(
                    "unchecked copy: interface rule `{}` copies `#{from}` without testing for it",
                    rule.name
                ));
            }
        }
    }
    Ok(warnings)
}

// ---------------------------------------------------------------------------
// Lexical analysis of a sentence

/// One grammar category available at a token position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexCategory {
    pub symbol: String,
    /// Features with variables renamed into canonical form.
    pub features: FeatureStructure,
    /// Index into the lexicon's entries.
    pub entry: usize,
    /// Name of the interface rule that produced the category.
    pub rule: String,
}

/// Record of the lexicon lookup for one token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexTrace {
    pub position: usize,
    pub word: String,
    pub entries: Vec<LexEntry>,
    pub categories: Vec<LexCategory>,
}

/// Tokens with the categories the lexicon offers for each of them.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicalized {
    pub tokens: Vec<String>,
    pub categories: Vec<Vec<LexCategory>>,
}

impl Lexicalized {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Build directly from category lists, bypassing lexicon files.
    pub fn from_categories(tokens: Vec<String>, cats: Vec<Vec<(String, FeatureStructure)>>) -> Self {
        let categories = cats
            .into_iter()
            .map(|cs| {
                cs.into_iter()
                    .enumerate()
                    .map(|(i, (symbol, fs))| LexCategory {
                        symbol,
                        features: canonical(&fs),
                        entry: i,
                        rule: String::new(),
                    })
                    .collect()
            })
            .collect();
        Lexicalized { tokens, categories }
    }

    pub fn unknown_words(&self) -> Vec<(usize, &str)> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(i, _)| self.categories[*i].is_empty())
            .map(|(i, w)| (i, w.as_str()))
            .collect()
    }
}

fn canonical(fs: &FeatureStructure) -> FeatureStructure {
    let mut env = Bindings::new();
    match env.instantiate(fs, &mut Scope::new()) {
        Ok(n) => env.extract(n, &HashMap::new()),
        Err(_) => fs.clone(),
    }
}

/// Split a sentence into tokens on whitespace.
pub fn tokenize_sentence(sentence: &str) -> Vec<String> {
    sentence.split_whitespace().map(str::to_string).collect()
}

/// Look up every token and apply the interface rules. Unknown words get no
/// categories; they are reported in the trace, not as errors.
pub fn lexicalize(
    tokens: &[String],
    lex: &Lexicon,
    rules: &InterfaceRules,
) -> Result<(Lexicalized, Vec<LexTrace>), EvalError> {
    let mut categories = Vec::with_capacity(tokens.len());
    let mut trace = Vec::with_capacity(tokens.len());
    for (position, word) in tokens.iter().enumerate() {
        let mut cats = Vec::new();
        let mut entries = Vec::new();
        for &ix in lex.by_surface.get(word).map(Vec::as_slice).unwrap_or(&[]) {
            let entry = &lex.entries[ix];
            entries.push(entry.clone());
            for (ri, spec) in rules.apply(entry)? {
                cats.push(LexCategory {
                    symbol: spec.symbol,
                    features: canonical(&spec.features),
                    entry: ix,
                    rule: rules.rules[ri].name.clone(),
                });
            }
        }
        trace.push(LexTrace { position, word: word.clone(), entries, categories: cats.clone() });
        categories.push(cats);
    }
    Ok((Lexicalized { tokens: tokens.to_vec(), categories }, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(src: &str) -> LexEntry {
        parse_entry(src, 1).unwrap()
    }

    fn rules(src: &str) -> InterfaceRules {
        InterfaceRules::parse(src, None).unwrap()
    }

    #[test]
    fn parses_entries_and_looks_up_in_file_order() {
        let lex =
            Lexicon::parse("der : pos=det, kasus=nom\n// comment\nder : pos=det, kasus=dat\nHund : pos=noun", None)
                .unwrap();
        assert_eq!(lex.len(), 3);
        let der = lex.lookup("der");
        assert_eq!(der.len(), 2);
        assert_eq!(der[0].features.get_atom("kasus"), Some("nom"));
        assert_eq!(der[1].features.get_atom("kasus"), Some("dat"));
        assert!(lex.lookup("Xyzzy").is_empty());
        assert!(lex.lookup("hund").is_empty());
    }

    #[test]
    fn missing_pos_is_positioned() {
        let errs = Lexicon::parse("der : pos=det\nHund : kasus=nom\n", Some("demo.lex")).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].pos.unwrap().line, 2);
        assert!(errs[0].to_string().starts_with("demo.lex:2:"));
        assert!(errs[0].message.contains("pos"));
    }

    #[test]
    fn malformed_line_rejects_whole_file() {
        assert!(Lexicon::parse("der : pos=det\njust words\n", None).is_err());
        assert!(Lexicon::parse("der : pos=det, =x\n", None).is_err());
    }

    #[test]
    fn test_criteria_from_the_reflexive_example() {
        let r = rules("if_in_lex (pos=verb, !tense, ~reflexive) then_in_gram (V).");
        assert!(r.rules[0].matches(&entry("geht : pos=verb, tense=pres")));
        assert!(!r.rules[0].matches(&entry("wäscht : pos=verb, reflexive=yes, tense=pres")));
        assert!(!r.rules[0].matches(&entry("gehen : pos=verb")));
    }

    #[test]
    fn specification_copies_and_adds_features() {
        let r = rules("noun: if_in_lex (pos=noun, !kasus, !numerus) then_in_gram (N, case = #kasus, number = #numerus, person = 3).");
        let cats = r.apply(&entry("Hund : pos=noun, kasus=nom, numerus=sg")).unwrap();
        assert_eq!(cats.len(), 1);
        assert_eq!(cats[0].1.to_string(), "N[case=nom, number=sg, person=3]");
    }

    #[test]
    fn all_matching_rules_emit_categories() {
        let r = rules(
            "a: if_in_lex (pos=noun) then_in_gram (N, k=#kasus).\n\
             b: if_in_lex (pos=noun, !kasus) then_in_gram (NP, k=#kasus).",
        );
        let cats = r.apply(&entry("Hund : pos=noun, kasus=nom")).unwrap();
        let syms: Vec<_> = cats.iter().map(|(_, c)| c.symbol.as_str()).collect();
        assert_eq!(syms, ["N", "NP"]);
    }

    #[test]
    fn unchecked_copy_warns_and_fails_at_evaluation() {
        let r = rules("n: if_in_lex (pos=noun) then_in_gram (N, case=#kasus).");
        assert_eq!(r.warnings.len(), 1);
        assert!(r.warnings[0].message.contains("unchecked copy"));
        let err = r.apply(&entry("Haus : pos=noun")).unwrap_err();
        assert_eq!(err.rule, "n");
        assert_eq!(err.feature, "kasus");
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn contradictions_and_duplicates_are_rejected() {
        for src in [
            "a: if_in_lex (!tense, ~tense) then_in_gram (V).",
            "a: if_in_lex (pos=verb, pos=noun) then_in_gram (V).",
            "a: if_in_lex (pos=verb, ~pos) then_in_gram (V).",
            "a: if_in_lex (~kasus) then_in_gram (N, case=#kasus).",
            "a: if_in_lex (pos=verb) then_in_gram (V).\na: if_in_lex (pos=noun) then_in_gram (N).",
            "a: if_in_lex (pos=verb) then_in_gram (v).",
        ] {
            assert!(InterfaceRules::parse(src, None).is_err(), "{src}");
        }
    }

    #[test]
    fn rule_display_round_trips() {
        let src = "noun: if_in_lex (pos=noun, !kasus, ~reflexive) then_in_gram (N, case=#kasus, person=3).";
        let r = rules(src);
        assert_eq!(r.rules[0].to_string(), src);
        assert_eq!(rules(&r.rules[0].to_string()), r);
    }

    #[test]
    fn lexicalize_reports_unknown_words() {
        let lex = Lexicon::parse("Hund : pos=noun, kasus=nom", None).unwrap();
        let r = rules("if_in_lex (pos=noun, !kasus) then_in_gram (N, kas=#kasus).");
        let toks = tokenize_sentence("Hund Xyzzy");
        let (lx, trace) = lexicalize(&toks, &lex, &r).unwrap();
        assert_eq!(lx.categories[0].len(), 1);
        assert_eq!(lx.unknown_words(), vec![(1, "Xyzzy")]);
        assert_eq!(trace[1].entries.len(), 0);
        assert_eq!(trace[0].categories[0].features.to_string(), "[kas=nom]");
    }
}
