use std::fs;
use std::process::{Command, Output};

use serde_json::Value;

fn tabkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabkit"))
        .args(args)
        .output()
        .expect("run tabkit")
}

fn json_of(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("json output")
}

#[test]
fn bench_writes_stats_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("stats.json");
    let o = tabkit(&[
        "bench", "--bench", "path-left:cycle:40", "--design", "pac", "--sched", "batched",
        "--threads", "3", "--repeat", "2", "--seed", "42", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["config"]["eval"]["design"], "pac");
    assert_eq!(v["config"]["eval"]["threads"], 3);
    assert_eq!(v["stats"]["stats"]["answers"], 1600);
    assert_eq!(v["stats"]["times"].as_array().unwrap().len(), 2);
    assert_eq!(v["stats"]["live_blocks_after_abolish"], 0);
    assert!(v.get("overhead").is_none());
}

#[test]
fn bench_overhead_report() {
    let v = json_of(&tabkit(&[
        "bench", "--bench", "path-right:btree:6", "--bench", "path-left:grid:4", "--design", "ss",
        "--threads", "2", "--overhead",
    ]));
    assert_eq!(v["stats"].as_array().unwrap().len(), 2);
    let row = &v["overhead"]["rows"][0];
    assert_eq!(row["design"], "ss");
    assert_eq!(row["benches"], 2);
    assert!(row["min"].as_f64().unwrap() <= row["max"].as_f64().unwrap());
}

#[test]
fn bench_program_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("sp.pl");
    fs::write(
        &p,
        ":- table sp(index, index, min).\n\
         sp(X, Y, D) :- w(X, Y, D).\n\
         sp(X, Y, D) :- sp(X, Z, D1), w(Z, Y, D2), D is D1 + D2.\n\
         w(1, 2, 5). w(2, 3, 1). w(1, 3, 9).\n",
    )
    .unwrap();
    let v = json_of(&tabkit(&["bench", "--program", p.to_str().unwrap(), "--query", "sp(1, Y, D)"]));
    assert_eq!(v["stats"]["stats"]["answers"], 2);
}

#[test]
fn rejected_configurations() {
    let o = tabkit(&["bench", "--bench", "path-left:cycle:5", "--design", "fs", "--sched", "batched"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("local"));
    let o = tabkit(&["bench", "--bench", "path-up:cycle:5"]);
    assert!(!o.status.success());
    let o = tabkit(&["dp", "--problem", "knapsack", "--approach", "td1", "--n", "5", "--c", "5", "--design", "fs"]);
    assert!(!o.status.success());
}

#[test]
fn dp_matches_oracle() {
    let v = json_of(&tabkit(&[
        "dp", "--problem", "knapsack", "--approach", "td2", "--n", "40", "--c", "80", "--frac", "0.5",
        "--threads", "4", "--design", "pas",
    ]));
    assert_eq!(v["matches_oracle"], true);
    assert_eq!(v["stats"]["value"], v["oracle"]);
    let v = json_of(&tabkit(&["dp", "--problem", "lcs", "--approach", "bu", "--n", "50", "--threads", "2", "--design", "fs"]));
    assert_eq!(v["matches_oracle"], true);
}

#[test]
fn memmodel_sweep_and_reconcile() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("params.json");
    fs::write(&p, r#"{"nt": [1, 4], "nc": [1, 3], "st": [1000], "at": [500, 5000]}"#).unwrap();
    let v = json_of(&tabkit(&["memmodel", "--sweep", p.to_str().unwrap()]));
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r["theorem1_iff"] == true));
    assert!(rows.iter().all(|r| r["pas"].as_u64() <= r["ss"].as_u64()));
    let o = tabkit(&["memmodel", "--sweep", p.to_str().unwrap(), "--format", "csv"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("nt,nc,st,at,cs,ns,ss,fs,pas,pac"));
    assert_eq!(text.lines().count(), 9);
    let v = json_of(&tabkit(&["memmodel", "--reconcile", "path-left:cycle:30", "--design", "fs", "--threads", "3"]));
    assert_eq!(v["report"]["delta"], 0);
}
