mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use ragrepair::cli::{cmd_index, cmd_repair, cmd_retrieve, RetrieveStage, RunConfig};

use common::fixture_copy;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ragrepair"))
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn events<'a>(log: &'a str, kind: &'a str) -> impl Iterator<Item = serde_json::Value> + 'a {
    log.lines().filter_map(move |l| {
        let mut parts = l.splitn(4, ' ');
        (parts.next() == Some("EVENT") && parts.nth(1) == Some(kind))
            .then(|| serde_json::from_str(parts.next().unwrap()).unwrap())
    })
}

fn ten_method_project(root: &Path) {
    fs::create_dir_all(root.join("src/m")).unwrap();
    let methods: String = (0..6).map(|i| format!("    int f{i}() {{ return {i}; }}\n")).collect();
    fs::write(root.join("src/m/A.java"), format!("class A {{\n{methods}}}\n")).unwrap();
    let methods: String = (0..4).map(|i| format!("    void g{i}(int x) {{ x++; }}\n")).collect();
    fs::write(root.join("src/m/B.java"), format!("class B {{\n{methods}}}\n")).unwrap();
}

#[test]
fn index_command_counts_and_fingerprints() {
    let dir = tempfile::tempdir().unwrap();
    let project = dir.path().join("p");
    ten_method_project(&project);
    let out_path = dir.path().join("idx/index.jsonl");
    let run = || {
        bin()
            .args(["index", "--project"])
            .arg(&project)
            .arg("--out")
            .arg(&out_path)
            .output()
            .unwrap()
    };
    let first = run();
    assert!(first.status.success(), "{}", text(&first.stderr));
    let stdout = text(&first.stdout);
    assert!(stdout.contains("indexed 10 functions"), "{stdout}");
    assert!(out_path.exists());
    let second = run();
    let fp = |s: &str| s.lines().find(|l| l.starts_with("fingerprint ")).unwrap().to_string();
    assert_eq!(fp(&stdout), fp(&text(&second.stdout)));

    let empty = tempfile::tempdir().unwrap();
    let (mut o, mut e) = (Vec::new(), Vec::new());
    assert_eq!(cmd_index(empty.path(), &out_path, &[], &[], &mut o, &mut e), 2);
    let status = bin().args(["index", "--project"]).arg(empty.path()).arg("--out").arg(&out_path).output().unwrap().status;
    assert_eq!(status.code(), Some(2));
}

#[test]
fn repair_all_writes_logs_and_summary() {
    let (_tmp, dir) = fixture_copy("suite");
    let out = bin()
        .args(["repair", "--bug", "all", "--config"])
        .arg(dir.join("run.toml"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", text(&out.stderr));
    let out_dir = dir.join("out");
    for id in ["calc-1", "calc-2", "words-1"] {
        assert!(out_dir.join(format!("{id}.log")).exists(), "{id}");
    }
    let summary = fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    let calc1 = summary.lines().find(|l| l.starts_with("calc-1")).unwrap();
    assert!(calc1.contains("outcome=fixed"), "{calc1}");
    assert!(calc1.contains("stage=base") && calc1.contains("patches=1/0/0"), "{calc1}");
    let calc2 = summary.lines().find(|l| l.starts_with("calc-2")).unwrap();
    assert!(calc2.contains("stage=sig") && calc2.contains("patches=1/3/0"), "{calc2}");
    let words = summary.lines().find(|l| l.starts_with("words-1")).unwrap();
    assert!(words.contains("stage=snip") && words.contains("patches=1/20/13"), "{words}");
    assert_eq!(text(&out.stdout).lines().next().unwrap(), summary.lines().next().unwrap());

    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 3);
    assert_eq!(json[0]["patches"], serde_json::json!([1, 0, 0]));
}

#[test]
fn echoed_config_round_trips() {
    let (_tmp, dir) = fixture_copy("suite");
    let (mut o, mut e) = (Vec::new(), Vec::new());
    assert_eq!(cmd_repair(&dir.join("run.toml"), "calc-1", 1, &mut o, &mut e), 0, "{}", text(&e));
    let log = fs::read_to_string(dir.join("out/calc-1.log")).unwrap();
    let config = events(&log, "config").next().unwrap();
    assert_eq!(config["bug_id"], "calc-1");
    let echoed: RunConfig = serde_json::from_value(config["effective_config"].clone()).unwrap();
    assert_eq!(echoed, RunConfig::load(&dir.join("run.toml")).unwrap());
}

#[test]
fn rewriting_off_queries_from_buggy_lines() {
    let (_tmp, dir) = fixture_copy("ablation");
    let (mut o, mut e) = (Vec::new(), Vec::new());
    assert_eq!(cmd_repair(&dir.join("run-rewrite-off.toml"), "range-1", 1, &mut o, &mut e), 0, "{}", text(&e));
    let log = fs::read_to_string(dir.join("out-off/range-1.log")).unwrap();
    let queries: Vec<_> = events(&log, "sig_query").collect();
    assert_eq!(queries.len(), 20);
    assert!(queries.iter().all(|q| q["source"] == "buggy-lines"));
    assert!(!log.contains("ROOT CAUSES:"));
}

#[test]
fn retrieve_prints_ranked_rows() {
    let (_tmp, dir) = fixture_copy("closure");
    let config = dir.join("run.toml");
    let out = bin()
        .args(["retrieve", "--bug", "closure-111", "--stage", "snip", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    let first = stdout.lines().find(|l| !l.starts_with('#')).unwrap();
    let cols: Vec<&str> = first.split_whitespace().collect();
    assert_eq!(cols[0], "1");
    assert_eq!(cols[2], "snip-intra");
    assert!(cols[3].ends_with(".caseObjectType"), "{first}");

    let (mut o, mut e) = (Vec::new(), Vec::new());
    assert_eq!(cmd_retrieve(&config, "closure-111", RetrieveStage::Sig, Some(3), &mut o, &mut e), 0, "{}", text(&e));
    let rows = text(&o).lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 3);

    let unknown = bin().args(["retrieve", "--bug", "nope", "--stage", "sig", "--config"]).arg(&config).output().unwrap().status;
    assert_eq!(unknown.code(), Some(1));
}

#[test]
fn retrieve_on_an_empty_pool_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::create_dir_all(root.join("project/src")).unwrap();
    fs::create_dir_all(root.join("bugs")).unwrap();
    fs::write(root.join("project/src/Lone.java"), "class Lone {\n    int only(int a) {\n        return a;\n    }\n}\n").unwrap();
    fs::write(
        root.join("bugs/lone-1.toml"),
        "id = \"lone-1\"\nfile = \"src/Lone.java\"\nfunction = \"only\"\nfault_lines = [3]\nground_truth_fix = \"x\"\n",
    )
    .unwrap();
    fs::write(
        root.join("run.toml"),
        "project_root = \"project\"\nbug_spec_path = \"bugs\"\nindex_path = \"out/index.jsonl\"\noutput_dir = \"out\"\n\
         rewriting_enabled = false\n[validator]\nmode = \"exact-match\"\n",
    )
    .unwrap();
    for stage in [RetrieveStage::Sig, RetrieveStage::Snip] {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(cmd_retrieve(&root.join("run.toml"), "lone-1", stage, None, &mut o, &mut e), 2, "{}", text(&e));
    }
}

#[test]
fn parallel_logs_match_sequential_logs() {
    let (_a, seq) = fixture_copy("suite");
    let (_b, par) = fixture_copy("suite");
    let (mut o, mut e) = (Vec::new(), Vec::new());
    assert_eq!(cmd_repair(&seq.join("run.toml"), "all", 1, &mut o, &mut e), 0, "{}", text(&e));
    assert_eq!(cmd_repair(&par.join("run.toml"), "all", 2, &mut o, &mut e), 0, "{}", text(&e));
    for id in ["calc-1", "calc-2", "words-1"] {
        let a = fs::read_to_string(seq.join(format!("out/{id}.log"))).unwrap();
        let b = fs::read_to_string(par.join(format!("out/{id}.log"))).unwrap();
        // Absolute paths differ between the two copies; everything else must not.
        let seq_root = seq.to_string_lossy().into_owned();
        let par_root = par.to_string_lossy().into_owned();
        assert_eq!(a.replace(&seq_root, "ROOT"), b.replace(&par_root, "ROOT"), "{id}");
    }
}

#[test]
fn unknown_bug_and_bad_config_exit_one() {
    let (_tmp, dir) = fixture_copy("suite");
    let (mut o, mut e) = (Vec::new(), Vec::new());
    assert_eq!(cmd_repair(&dir.join("run.toml"), "missing-9", 1, &mut o, &mut e), 1);
    assert!(text(&e).contains("missing-9"));
    let (mut o, mut e) = (Vec::new(), Vec::new());
    assert_eq!(cmd_repair(&dir.join("nope.toml"), "all", 1, &mut o, &mut e), 1);
}
