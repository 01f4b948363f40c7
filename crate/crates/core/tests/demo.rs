use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Mutex;

use gramwb::pipeline::{parse_sentence, ParseOptions, Toolkit};
use gramwb::results::{render_tree, Engine, TreeFormat};
use gramwb::testsuite::{load_dir, run_suite, select_cases, RowStatus, RunOptions};

fn demo(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../demo").join(file)
}

fn toolkit(grammar: &str) -> Toolkit {
    Toolkit::load(&demo(grammar), &demo("demo.lex"), &demo("demo.ifr")).unwrap_or_else(|e| panic!("{e}"))
}

#[test]
fn demo_grammars_load_without_findings() {
    for g in ["paper.idlp", "paper.dcg", "german.idlp"] {
        let tk = toolkit(g);
        assert!(tk.checks.findings.is_empty(), "{g}: {}", tk.checks);
    }
    assert!(toolkit("paper.lfg").checks.findings.is_empty());
}

#[test]
fn demo_suite_meets_every_expectation() {
    let tk = toolkit("german.idlp");
    let classes = load_dir(&demo("suite")).unwrap();
    assert_eq!(classes.len(), 8);
    assert_eq!(classes.iter().map(|c| c.cases.len()).sum::<usize>(), 40);
    let seen = Mutex::new(0);
    let table = run_suite(&tk, &classes, &RunOptions::new(Engine::Chart), &|_| *seen.lock().unwrap() += 1);
    let failures: Vec<String> = table
        .rows
        .iter()
        .filter(|r| r.status != RowStatus::Pass)
        .map(|r| format!("{} -> {:?} {:?}", r.sentence, r.readings, r.error))
        .collect();
    assert!(failures.is_empty(), "{failures:#?}");
    assert_eq!(*seen.lock().unwrap(), 40);
}

#[test]
fn passive_and_subordinate_tags_intersect() {
    let classes = load_dir(&demo("suite")).unwrap();
    let tags: BTreeSet<String> = ["passive", "subordinate"].iter().map(|s| s.to_string()).collect();
    let sel = select_cases(&classes, &tags);
    assert_eq!(sel.cases.len(), 1);
    assert_eq!(sel.cases[0].1.sentence, "der Mann glaubt dass der Hund von der Frau gesehen wird");
}

#[test]
fn paper_sentence_features_golden() {
    let tk = toolkit("paper.idlp");
    let out = parse_sentence(&tk, "der Hund schläft", Engine::Chart, ParseOptions::default()).unwrap();
    assert_eq!(out.readings(), 1);
    let text = render_tree(&out.result.readings[0].tree, TreeFormat::IndentedFeatures);
    let golden = std::fs::read_to_string(demo("golden/der_hund_schlaeft.features")).unwrap();
    assert_eq!(text, golden);
}

#[test]
fn lfg_demo_builds_subject_and_object() {
    let tk = Toolkit::load(&demo("paper.lfg"), &demo("demo.lex"), &demo("lfg.ifr")).unwrap();
    let out = parse_sentence(&tk, "der große Hund sieht den Mann", Engine::Td, ParseOptions::default()).unwrap();
    assert_eq!(out.readings(), 1);
    let f = out.result.readings[0].fstructure.as_ref().unwrap();
    assert_eq!(
        f.to_string(),
        "[num=sg, obj=[gen=m, kas=akk, num=sg, pred=mann], pred=sehen, subj=[gen=m, kas=nom, num=sg, pred=hund], val=trans]"
    );
}

#[test]
fn engines_agree_on_the_paper_sentence() {
    let chart =
        parse_sentence(&toolkit("paper.idlp"), "der Hund schläft", Engine::Chart, ParseOptions::default()).unwrap();
    let td = parse_sentence(&toolkit("paper.dcg"), "der Hund schläft", Engine::Td, ParseOptions::default()).unwrap();
    assert_eq!(chart.result.readings.len(), 1);
    assert_eq!(chart.result.readings[0].tree, td.result.readings[0].tree);
}

#[test]
fn failed_parse_reports_fragments() {
    let out =
        parse_sentence(&toolkit("paper.idlp"), "Hund der schläft", Engine::Chart, ParseOptions::default()).unwrap();
    assert_eq!(out.readings(), 0);
    let failure = out.failure.expect("fragments for a failed parse");
    assert!(failure.fragments.to_string().starts_with("fragments: "));
    let covered: usize = failure.fragments.fragments.iter().map(|f| f.to - f.from).sum();
    assert_eq!(covered, 3);
}
