use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_enclave-taint")).args(args).output().unwrap()
}

fn analyze_case(name: &str, extra: &[&str]) -> Output {
    let dir = corpus().join("cases").join(name);
    let edl = dir.join("iface.edl");
    let sir = dir.join("prog.sir");
    let mut args = vec!["analyze", "--edl", edl.to_str().unwrap(), "--ir", sir.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn clean_program_exits_zero() {
    let o = analyze_case("clean_out_sealed", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn leaking_program_exits_one_with_finding() {
    let o = analyze_case("ocall_in_leak", &["--format", "json"]);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let findings = v["findings"].as_array().unwrap();
    assert_eq!(findings.len(), 1);
    assert_eq!(findings[0]["pattern"], "P3");
    assert_eq!(findings[0]["risk"], "high");
    assert_eq!(findings[0]["sink"]["loc"], "wechat.c:32");
    assert_eq!(findings[0]["source"]["loc"], "wechat.c:3");
}

#[test]
fn json_keys_in_fixed_order() {
    let o = analyze_case("ecall_out_leak", &["--format", "json"]);
    let text = stdout(&o);
    let pos: Vec<usize> = ["\"version\"", "\"findings\"", "\"summary\"", "\"diagnostics\""]
        .iter()
        .map(|k| text.find(k).unwrap_or_else(|| panic!("{k} missing")))
        .collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "{pos:?}");
}

#[test]
fn text_report_names_pattern_and_locations() {
    let o = analyze_case("ecall_out_leak", &[]);
    let text = stdout(&o);
    assert!(text.contains("[P1]"), "{text}");
    assert!(text.contains("mixnet.c:8") && text.contains("mixnet.c:4"), "{text}");
}

#[test]
fn missing_edl_is_a_usage_error() {
    let sir = corpus().join("cases/ocall_in_leak/prog.sir");
    let o = run(&["analyze", "--ir", sir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).to_lowercase().contains("usage"));
}

#[test]
fn unreadable_input_exits_two() {
    let o = run(&["analyze", "--edl", "/nonexistent/a.edl", "--ir", "/nonexistent/a.sir"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn malformed_ir_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let edl = tmp.path().join("a.edl");
    let sir = tmp.path().join("a.sir");
    fs::write(&edl, "enclave { trusted { public void ecall_f([out, size=4] char* p); }; };").unwrap();
    fs::write(&sir, "define @ecall_f(%p: ptr) {\n  this is not sir\n}\n").unwrap();
    let o = run(&["analyze", "--edl", edl.to_str().unwrap(), "--ir", sir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn jobs_do_not_change_output() {
    let one = analyze_case("ecall_out_diamond", &["--format", "json", "--jobs", "1"]);
    let four = analyze_case("ecall_out_diamond", &["--format", "json", "--jobs", "4"]);
    assert_eq!(one.stdout, four.stdout);
}

#[test]
fn config_barrier_removes_finding() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"barriers": ["to_hex"]}"#).unwrap();
    let o = analyze_case("ocall_in_leak", &["--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn dump_writes_to_stderr_only() {
    let plain = analyze_case("ocall_in_leak", &["--format", "json"]);
    let dumped = analyze_case("ocall_in_leak", &["--format", "json", "--dump", "pts,cg,vfg,sinks"]);
    assert_eq!(plain.stdout, dumped.stdout);
    let err = String::from_utf8_lossy(&dumped.stderr);
    assert!(err.contains("== ") && err.len() > 100, "{err}");
}

#[test]
fn corpus_command_passes_bundled_cases() {
    let o = run(&["corpus", corpus().to_str().unwrap()]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.contains("16 case(s), 16 passed, 0 failed"), "{text}");
}

#[test]
fn corpus_command_on_empty_dir_warns() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["corpus", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no cases found"));
}

#[test]
fn corpus_command_reports_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let case = tmp.path().join("wrong_golden");
    fs::create_dir(&case).unwrap();
    let src = corpus().join("cases/ocall_in_leak");
    for f in ["iface.edl", "prog.sir"] {
        fs::copy(src.join(f), case.join(f)).unwrap();
    }
    fs::write(case.join("expected.json"), r#"{"findings": []}"#).unwrap();
    let o = run(&["corpus", tmp.path().to_str().unwrap()]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(1));
    assert!(text.contains("MISMATCH") && text.contains("wechat.c:32"), "{text}");
}

/// Each pattern needs at least two leaking cases, and the corpus needs a
/// clean counterpart for each pattern.
#[test]
fn corpus_covers_every_pattern() {
    let mut leaking: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut clean = 0;
    for e in fs::read_dir(corpus().join("cases")).unwrap() {
        let dir = e.unwrap().path();
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.join("expected.json")).unwrap()).unwrap();
        let findings = v["findings"].as_array().unwrap();
        if findings.is_empty() {
            assert!(name.starts_with("clean_"), "{name} has no findings");
            clean += 1;
        }
        for f in findings {
            leaking.entry(f["pattern"].as_str().unwrap().to_string()).or_default().insert(name.clone());
        }
    }
    let patterns: Vec<&String> = leaking.keys().collect();
    assert_eq!(patterns, ["P1", "P2", "P3", "P4", "P5"]);
    for (p, cases) in &leaking {
        assert!(cases.len() >= 2, "{p}: {cases:?}");
    }
    assert!(clean >= 5);
}
