use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kbregex(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kbregex"));
    cmd.args(args).env_remove("KBREGEX_OUT");
    if let Some(dir) = env_out {
        cmd.env("KBREGEX_OUT", dir);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn oracle_on_chain_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&kbregex(&["fixture", "chain"], Some(tmp.path())));
    let dir = tmp.path().join("chain");
    let d = dir.to_str().unwrap();
    let exact = ok(&kbregex(&["oracle", "--data", d, "a", "r+"], None));
    assert_eq!(exact, "b\nc\nd\ne\nf\ng\n");
    assert_eq!(ok(&kbregex(&["oracle", "--data", d, "a", "r+", "--capped", "1"], None)), "b\n");
    assert_eq!(ok(&kbregex(&["oracle", "--data", d, "a", "r+", "--capped", "99"], None)), exact);
    assert_eq!(ok(&kbregex(&["oracle", "--data", d, "a", "r/r"], None)), "c\n");
}

#[test]
fn oracle_reports_parse_offsets() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    ok(&kbregex(&["fixture", "cycle", "--out", d], None));
    let out = kbregex(&["oracle", "--data", d, "a", "r/(r"], None);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("offset") || err.contains("byte"), "{err}");
}

#[test]
fn missing_triples_exit_nonzero_naming_the_path() {
    let out = kbregex(&["train", "--train-triples", "/no/such/train.txt", "--out", "/tmp/unused-kbregex"], None);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/train.txt"));
}

#[test]
fn unknown_fixture_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kbregex(&["fixture", "lattice"], Some(tmp.path()));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown fixture"));
}

#[test]
fn gen_template_sections_and_repeatability() {
    let tmp = tempfile::tempdir().unwrap();
    let kb = tmp.path().join("kb");
    ok(&kbregex(&["fixture", "planted", "--seed", "7", "--out", kb.to_str().unwrap()], None));
    for (dataset, sections) in [("fb15k-regex", 21), ("wiki100-regex", 5)] {
        let out = tmp.path().join(dataset);
        let args = ["gen", "--data", kb.to_str().unwrap(), "--dataset", dataset, "--seed", "7",
            "--queries-per-template", "10", "--out", out.to_str().unwrap()];
        ok(&kbregex(&args, None));
        let report = fs::read_to_string(out.join("generation_report.json")).unwrap();
        assert_eq!(report.matches("\"template\":").count(), sections);
        let first = fs::read(out.join("queries/train.jsonl")).unwrap();
        ok(&kbregex(&args, None));
        assert_eq!(first, fs::read(out.join("queries/train.jsonl")).unwrap());
        assert_eq!(report, fs::read_to_string(out.join("generation_report.json")).unwrap());
    }
}

#[test]
fn fixture_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&kbregex(&["fixture", "planted", "--seed", "7", "--out", a.to_str().unwrap()], None));
    ok(&kbregex(&["fixture", "planted", "--seed", "7", "--out", b.to_str().unwrap()], None));
    for f in ["train.txt", "dev.txt", "test.txt", "queries/train.jsonl", "queries/test.jsonl", "generation_report.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn hierarchy_fixture_nests_relations() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&kbregex(&["fixture", "hierarchy"], Some(tmp.path())));
    let text = fs::read_to_string(tmp.path().join("hierarchy/train.txt")).unwrap();
    let triples: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    for t in triples.iter().filter(|t| t[1] == "r1") {
        assert!(triples.iter().any(|u| u[0] == t[0] && u[1] == "r2" && u[2] == t[2]));
    }
}

#[test]
fn config_file_with_flag_overrides_then_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let kb = tmp.path().join("kb");
    ok(&kbregex(&["fixture", "planted", "--seed", "3", "--out", kb.to_str().unwrap()], None));
    let run = tmp.path().join("run");
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "seed = 3\nout = {:?}\n[data]\ndir = {:?}\n[train]\nmodel = \"rotate-box\"\nvariant = \"comp\"\n\
             dim = 4\ngamma = 4.0\nbatch_size = 256\nnegatives = 4\nsingle_hop_lr = 0.01\n\
             single_hop_epochs = 50\nregex_lr = 0.01\nregex_epochs = 1\neval_every = 1\ndev_limit = 10\n\
             [eval]\ntypes_answerable_by = \"all\"\n",
            run.to_str().unwrap(),
            kb.to_str().unwrap()
        ),
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let stdout = ok(&kbregex(&["--config", c, "train", "--single-hop-epochs", "1"], None));
    assert!(stdout.contains("single-hop: 1 epochs"), "{stdout}");
    assert!(run.join("model.ckpt").is_file());
    let report = fs::read_to_string(run.join("run_report.json")).unwrap();
    assert!(report.contains("\"dim\": 4") && report.contains("single_hop_test_mrr_before_regex"));

    let stdout = ok(&kbregex(&["--config", c, "eval", "--variant", "comp"], None));
    assert!(stdout.contains("overall"));
    let eval = fs::read_to_string(run.join("eval_report.json")).unwrap();
    assert!(eval.contains("\"answerable_by_all\": true"));
    assert!(!eval.contains("\"(r1|r2)+\""));

    let bad = kbregex(&["--config", c, "train", "--gamma=-1", "--batch-size", "0"], None);
    assert!(!bad.status.success());
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("gamma") && err.contains("batch"), "{err}");
}
