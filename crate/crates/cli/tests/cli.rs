use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn model(name: &str) -> String {
    root().join("models").join(name).to_string_lossy().into_owned()
}

fn qccs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qccs"))
        .args(args)
        .env_remove("QCCS_TOL")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

/// Validates against a schema under docs/schemas/v1.
fn assert_schema(name: &str, v: &Value) {
    let dir = root().join("docs/schemas/v1");
    let load = |f: &str| -> Value { serde_json::from_str(&std::fs::read_to_string(dir.join(f)).unwrap()).unwrap() };
    let common = load("common.json");
    let validator = jsonschema::options()
        .with_resource(
            "https://qccs.example/schemas/v1/common.json",
            jsonschema::Resource::from_contents(common).unwrap(),
        )
        .build(&load(name))
        .unwrap();
    let errors: Vec<String> = validator.iter_errors(v).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{name}: {errors:#?}");
}

fn write_temp(text: &str) -> tempfile::NamedTempFile {
    let f = tempfile::Builder::new().suffix(".qccs").tempfile().unwrap();
    std::fs::write(f.path(), text).unwrap();
    f
}

#[test]
fn check_accepts_every_model() {
    for m in ["teleport.qccs", "mixing.qccs", "branching.qccs", "restriction.qccs", "contexts.qccs", "chain.qccs"] {
        let o = qccs(&["check", &model(m)]);
        assert_eq!(code(&o), 0, "{m}: {}", stderr(&o));
        let o = qccs(&["--json", "check", &model(m)]);
        assert_schema("check.json", &json(&o));
    }
}

#[test]
fn check_rejects_use_after_send_and_syntax_errors() {
    let f = write_temp("qchan c;\nproc P = qc c!q.H[q].nil;\nconfig Main = < P ; q = |0> >;\n");
    let o = qccs(&["check", f.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains(":2:"), "{}", stderr(&o));

    let f = write_temp("cchan c;\nproc P = c!0.;\n");
    let o = qccs(&["--json", "check", f.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let v = json(&o);
    assert_schema("error.json", &v);
    assert!(v["error"].as_str().unwrap().contains(":2:14:"), "{v}");
}

#[test]
fn lts_exports_json_and_dot() {
    let o = qccs(&["lts", &model("branching.qccs")]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    assert_schema("lts.json", &v);
    assert_eq!(v["nodes"].as_array().unwrap().len(), 8);

    let o = qccs(&["lts", &model("branching.qccs"), "--format", "dot"]);
    let dot = stdout(&o);
    assert!(dot.starts_with("digraph lts {") && dot.contains("qc c!q, 1"), "{dot}");

    let nil = write_temp("config Main = < nil ; q = |0> >;\n");
    let v = json(&qccs(&["lts", nil.path().to_str().unwrap()]));
    assert_eq!(v["nodes"].as_array().unwrap().len(), 1);
    assert!(v["edges"].as_array().unwrap().is_empty());
}

#[test]
fn lts_bound_exceeded_exits_2() {
    let o = qccs(&["lts", &model("teleport.qccs"), "--max-nodes", "5"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("max-nodes"));
    let o = qccs(&["--json", "lts", &model("teleport.qccs"), "--max-depth", "2"]);
    assert_eq!(code(&o), 2);
    assert_schema("error.json", &json(&o));
}

#[test]
fn open_inputs_need_the_flag() {
    let f = write_temp("cchan c {0, 1};\nproc P = c?x.c!x.nil;\nconfig Main = < P ; q = |0> >;\n");
    let p = f.path().to_str().unwrap();
    assert_eq!(code(&qccs(&["lts", p])), 2);
    let o = qccs(&["lts", p, "--open"]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("finite domains"));
    // both branches end in nil under the same context and merge
    assert_eq!(json(&o)["nodes"].as_array().unwrap().len(), 4);
}

#[test]
fn run_teleport_reports_quarter_split() {
    let o = qccs(&["--json", "run", &model("teleport.qccs"), "--seed", "3"]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    assert_schema("trace.json", &v);
    assert_eq!(v["end"], "terminated");
    let terminal = v["terminal"].as_array().unwrap();
    assert_eq!(terminal.len(), 4);
    for t in terminal {
        assert!((t["probability"].as_f64().unwrap() - 0.25).abs() < 1e-9);
    }
    let text = stdout(&qccs(&["run", &model("teleport.qccs"), "--seed", "3"]));
    assert!(text.contains("[0.25, 0.25, 0.25, 0.25]"), "{text}");
}

#[test]
fn run_is_seeded_and_reports_stuck_actions() {
    let a = qccs(&["run", &model("chain.qccs"), "--seed", "9", "--scheduler", "random"]);
    let b = qccs(&["run", &model("chain.qccs"), "--seed", "9", "--scheduler", "random"]);
    assert_eq!(a.stdout, b.stdout);

    let f = write_temp("cchan c {0};\nproc P = (c!0.nil) \\ {c};\nconfig Main = < P ; q = |0> >;\n");
    let o = qccs(&["run", f.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("stuck; blocked: c!0"), "{}", stdout(&o));
}

#[test]
fn run_follows_a_script() {
    let script = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(script.path(), "# take the second summand\n1\n0\n").unwrap();
    let f = write_temp("cchan c {0, 1};\nproc P = c!0.nil + c!1.nil;\nconfig Main = < P ; q = |0> >;\n");
    let o = qccs(&["--json", "run", f.path().to_str().unwrap(), "--scheduler", "interactive-script", script.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&o)["steps"][0]["action"], "c!1");
    std::fs::write(script.path(), "7\n").unwrap();
    let o = qccs(&["run", f.path().to_str().unwrap(), "--scheduler", "interactive-script", script.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bisim_verdicts_and_exit_codes() {
    let o = qccs(&["--json", "bisim", &model("mixing.qccs"), "--left", "Left", "--right", "Right"]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    assert_schema("verdict.json", &v);
    assert_eq!(v["verdict"], "equivalent");
    assert!(v.get("witness").is_some());

    let o = qccs(&["--json", "bisim", &model("contexts.qccs"), "--left", "Zero", "--right", "One"]);
    assert_eq!(code(&o), 1);
    let v = json(&o);
    assert_schema("verdict.json", &v);
    assert_eq!(v["counterexample"]["then"]["reason"], "terminal_context");

    let o = qccs(&["bisim", &model("restriction.qccs"), "--left", "HiddenP", "--right", "HiddenQ"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("different contexts"));

    for mode in ["strong", "weak", "eq"] {
        let o = qccs(&["bisim", &model("restriction.qccs"), "--left", "P", "--right", "Q", "--mode", mode]);
        assert_eq!(code(&o), 0, "{mode}");
    }
}

#[test]
fn bisim_runs_check_directives() {
    let o = qccs(&["--json", "bisim", &model("mixing.qccs")]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    assert_schema("verdict.json", &v);
    assert_eq!(v["results"].as_array().unwrap().len(), 2);
}

#[test]
fn bisim_errors_exit_2() {
    assert_eq!(code(&qccs(&["bisim", &model("mixing.qccs"), "--left", "Left", "--right", "Nope"])), 2);
    assert_eq!(code(&qccs(&["bisim", &model("mixing.qccs"), "--left", "Left", "--right", "Right", "--mode", "fuzzy"])), 2);
    assert_eq!(code(&qccs(&["bisim", &model("contexts.qccs")])), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_qccs"))
        .args(["bisim", &model("mixing.qccs"), "--left", "Left", "--right", "Right"])
        .env("QCCS_TOL", "-1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_qccs"))
        .args(["bisim", &model("mixing.qccs"), "--left", "Left", "--right", "Right"])
        .env("QCCS_TOL", "1e-9")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
}

#[test]
fn laws_pass_and_catch_a_swapped_gate() {
    let args = ["--json", "laws", "--samples", "25", "--pairs", "6", "--seed", "4"];
    let a = qccs(&args);
    assert_eq!(code(&a), 0, "{}", stdout(&a));
    let v = json(&a);
    assert_schema("laws.json", &v);
    assert_eq!(v["suites"].as_array().unwrap().len(), 4);
    let b = qccs(&args);
    assert_eq!(a.stdout, b.stdout, "laws output must be reproducible");

    let o = qccs(&["laws", "--samples", "40", "--mutate", "swap-gate"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn teleport_demo() {
    let o = qccs(&["--json", "demo", "teleport", "--alpha", "1", "--beta", "0"]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    assert_schema("teleport.json", &v);
    assert_eq!(v["branches"].as_array().unwrap().len(), 4);
    assert_eq!(v["success"], true);

    let o = qccs(&["demo", "teleport", "--alpha", "0.7071067811865476", "--beta", "-0.7071067811865476"]);
    assert_eq!(code(&o), 0);

    let o = qccs(&["demo", "teleport", "--alpha", "2", "--beta", "0"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("not normalised"));
}

#[test]
fn output_is_byte_identical_across_thread_counts() {
    let run = |threads: &str| qccs(&["--json", "--threads", threads, "lts", &model("teleport.qccs")]).stdout;
    assert_eq!(run("1"), run("4"));
    let bisim = |threads: &str| {
        qccs(&["--json", "--threads", threads, "bisim", &model("mixing.qccs"), "--left", "Left", "--right", "Right", "--mode", "weak"])
            .stdout
    };
    assert_eq!(bisim("1"), bisim("3"));
}
