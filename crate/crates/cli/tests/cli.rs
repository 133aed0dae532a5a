use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn parley(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parley"))
        .args(args)
        .env("PARLEY_OUT", out)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) {
    let o = parley(args, out);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn synth_then_sbirl_is_perfect_without_noise() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth");
    ok(&["synth", "--sigma", "0"], &synth);
    let run = dir.path().join("run");
    let states = synth.join("states.jsonl");
    ok(&["sbirl", "--states", states.to_str().unwrap(), "--gamma", "0.9"], &run);
    let rows = csv_rows(&run.join("sbirl.csv"));
    let at_default = rows.iter().find(|r| r[1] == "0.9").expect("row at γ = 0.9");
    assert_eq!(at_default[2], "1.000000");
}

#[test]
fn ablate_flag_gives_one_row_per_limit_plus_full() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth");
    ok(&["synth"], &synth);
    let run = dir.path().join("run");
    let states = synth.join("states.jsonl");
    ok(&["sbirl", "--states", states.to_str().unwrap(), "--ablate", "25,30,60"], &run);
    let rows = csv_rows(&run.join("ablation.csv"));
    let ns: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ns, ["25", "30", "60", "full"]);
    assert!(run.join("ablation.svg").exists());
}

#[test]
fn unknown_subcommand_exits_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let o = parley(&["dance"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_field_exits_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "gama = 0.5\n").unwrap();
    let o = parley(&["--config", cfg.to_str().unwrap(), "graph"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gama"));

    fs::write(&cfg, "gamma = 1.5\n").unwrap();
    let o = parley(&["--config", cfg.to_str().unwrap(), "sbirl"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_dataset_is_an_input_error_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = parley(&["--dataset", "/no/such/file.jsonl", "ingest"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/file.jsonl"));
    let manifest = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("\"status\": \"error\""));
}

#[test]
fn config_file_values_apply() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "out_dir = {:?}\nseed = 3\n[synth]\nn_threads = 12\ndim = 2\n",
            out.to_str().unwrap()
        ),
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_parley"))
        .args(["--config", cfg.to_str().unwrap(), "synth"])
        .env_remove("PARLEY_OUT")
        .output()
        .unwrap();
    assert!(o.status.success());
    let states = fs::read_to_string(out.join("states.jsonl")).unwrap();
    assert_eq!(states.lines().count(), 12);
}

fn full_pipeline(out: &Path) {
    let synth = out.join("synth");
    ok(&["synth", "--games", "3", "--messages-per-game", "200"], &synth);
    let dialogs = synth.join("dialogs.jsonl");
    let ann = synth.join("annotations.csv");
    let d = dialogs.to_str().unwrap();
    let a = ann.to_str().unwrap();
    ok(&["--dataset", d, "ingest"], &out.join("ingest"));
    ok(&["agree", "--votes", synth.join("votes.csv").to_str().unwrap()], &out.join("agree"));
    ok(&["--dataset", d, "features", "--feature-set", "tfidf"], &out.join("features"));
    ok(&["train", "--annotations", a, "-k", "5"], &out.join("train"));
    ok(&["--dataset", d, "label", "--annotations", a], &out.join("label"));
    let labels = out.join("label").join("labels.csv");
    ok(&["actions", "--labels", labels.to_str().unwrap()], &out.join("actions"));
    ok(&["--dataset", d, "graph"], &out.join("graph"));
    ok(
        &["--dataset", d, "sbirl", "--labels", labels.to_str().unwrap(), "--ablate", "2,5"],
        &out.join("sbirl"),
    );
    ok(
        &["--dataset", d, "trust", "--labels", labels.to_str().unwrap(), "-k", "3"],
        &out.join("trust"),
    );
}

fn csv_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn end_to_end_reports_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    full_pipeline(a.path());
    full_pipeline(b.path());
    let fa = csv_files(a.path());
    let fb = csv_files(b.path());
    assert!(fa.len() >= 14, "{:?}", fa.iter().map(|f| &f.0).collect::<Vec<_>>());
    assert_eq!(fa.len(), fb.len());
    for ((na, da), (nb, db)) in fa.iter().zip(&fb) {
        assert_eq!(na, nb);
        assert!(da == db, "{na} differs between runs");
    }
}
