mod common;

use std::fs;

use ragrepair::cli::{cmd_repair, load_bug_specs, resolve_bug};
use ragrepair::corpus::build_corpus_index;
use ragrepair::sig_retrieval::BugContext;
use ragrepair::validation::{
    build_validator, exact_match, tree_fingerprint, ExactMatchValidator, PatchValidator, TestSuiteValidator,
    ValidationError, ValidationMode, ValidatorConfig, Verdict,
};

use common::{exact_match_cases, fixture, fixture_copy, splice_round_trips};

#[test]
fn exact_match_table() {
    let cases = exact_match_cases();
    assert_eq!(cases.len(), 30);
    for (i, (patch, truth, strict, expected)) in cases.into_iter().enumerate() {
        assert_eq!(exact_match(patch, truth, strict), expected, "case {i}: {patch:?}");
    }
}

#[test]
fn splice_revert_leaves_fixture_projects_byte_identical() {
    for name in ["suite", "ablation", "closure", "jackson", "parser"] {
        let (_tmp, dir) = fixture_copy(name);
        let root = if name == "parser" { dir.join("src") } else { dir.join("project") };
        let n = splice_round_trips(&root).unwrap();
        assert!(n > 0, "{name}");
    }
}

fn suite_bug(id: &str, root: &std::path::Path) -> BugContext {
    let index = build_corpus_index(root, &[], &[]).unwrap().index;
    let spec = load_bug_specs(&fixture("suite/bugs")).unwrap().into_iter().find(|s| s.id == id).unwrap();
    resolve_bug(&spec, &index, root).unwrap()
}

fn suite_validator(timeout_ms: u64, command: &[&str]) -> TestSuiteValidator {
    TestSuiteValidator::new(ValidatorConfig {
        test_command: command.iter().map(|s| s.to_string()).collect(),
        per_patch_timeout_ms: timeout_ms,
        ..ValidatorConfig::default()
    })
    .unwrap()
}

#[test]
fn test_suite_verdicts_and_project_isolation() {
    let (_tmp, dir) = fixture_copy("suite");
    let root = dir.join("project");
    let before = tree_fingerprint(&root).unwrap();
    let bug = suite_bug("calc-1", &root);
    let v = suite_validator(20_000, &["sh", "run_tests.sh"]);

    let pass = v.validate(&bug, "    int add(int a, int b) { return a + b; } // FIXED").unwrap();
    assert_eq!(pass.verdict, Verdict::Plausible);
    let compile = v.validate(&bug, "    int add(int a, int b) { return undefinedHelper(a, b); }").unwrap();
    assert_eq!(compile.verdict, Verdict::CompileError);
    let fail = v.validate(&bug, "    int add(int a, int b) { return a * b; }").unwrap();
    assert_eq!(
        fail.verdict,
        Verdict::TestsFailed {
            failing: vec!["calc.CalcTest::testAdd".into(), "text.WordsTest::testCapitalize".into()],
            timed_out: false,
        }
    );
    assert!(fail.output.contains("Failing tests:"));
    assert_eq!(tree_fingerprint(&root).unwrap(), before);
}

#[test]
fn timeout_is_a_failed_verdict() {
    let (_tmp, dir) = fixture_copy("suite");
    let root = dir.join("project");
    let bug = suite_bug("calc-1", &root);
    let v = suite_validator(200, &["sleep", "5"]);
    let r = v.validate(&bug, "    int add(int a, int b) { return a + b; }").unwrap();
    assert_eq!(
        r.verdict,
        Verdict::TestsFailed {
            failing: vec![],
            timed_out: true
        }
    );
}

#[test]
fn stale_span_is_reported() {
    let (_tmp, dir) = fixture_copy("suite");
    let root = dir.join("project");
    let bug = suite_bug("calc-1", &root);
    let file = root.join(&bug.buggy_function.file_path);
    let edited = fs::read_to_string(&file).unwrap().replace("add(", "addition(");
    fs::write(&file, edited).unwrap();
    let v = suite_validator(20_000, &["sh", "run_tests.sh"]);
    assert!(matches!(v.validate(&bug, "x"), Err(ValidationError::StaleSpan { .. })));
}

#[test]
fn exact_match_validator_needs_ground_truth() {
    let (_tmp, dir) = fixture_copy("suite");
    let root = dir.join("project");
    let mut bug = suite_bug("calc-1", &root);
    let v = ExactMatchValidator { strict: false };
    assert!(matches!(v.validate(&bug, "x"), Err(ValidationError::Config(_))));
    bug.ground_truth_fix = Some("int add(int a, int b) { return a + b; }".into());
    let r = v.validate(&bug, "int add(int a, int b) {\n  return a + b; // ok\n}").unwrap();
    assert_eq!(r.verdict, Verdict::ExactMatch);
    assert!(r.verdict.is_pass());
}

#[test]
fn test_suite_mode_requires_a_command() {
    let cfg = ValidatorConfig {
        mode: ValidationMode::TestSuite,
        ..ValidatorConfig::default()
    };
    assert!(matches!(build_validator(&cfg), Err(ValidationError::Config(_))));
}

#[test]
fn repair_runs_never_touch_the_project() {
    let (_tmp, dir) = fixture_copy("suite");
    let root = dir.join("project");
    let before = tree_fingerprint(&root).unwrap();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cmd_repair(&dir.join("run.toml"), "all", 1, &mut out, &mut err);
    assert_eq!(code, 0, "{}", String::from_utf8_lossy(&err));
    assert_eq!(tree_fingerprint(&root).unwrap(), before);
}
