use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_marginmine")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = bin(dir, args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn plant(dir: &Path) {
    ok(dir, &["plant", "--out", "in", "--pairs", "400", "--distractors", "300", "--dim", "16", "--block-capacity", "300"]);
    fs::write(
        dir.join("mine.conf"),
        "# planted test corpus\ninput_dir = in\nlangs = xx,yy\npairs = xx-yy\nprepared = true\nencoder_dim = 16\nblock_capacity = 300\nshard_cap = 400\n",
    )
    .unwrap();
}

fn pairs(path: &Path) -> Vec<(f64, u64, u64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

fn digests(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            let rel = p.strip_prefix(root).unwrap().to_path_buf();
            if rel == Path::new("journal.jsonl") || rel == Path::new("state.json") {
                continue;
            }
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path(), &["mine", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let help = String::from_utf8_lossy(&out.stdout);
    assert!(help.contains("--step") && help.contains("--threshold") && help.contains("--nprobe"));
    assert_eq!(bin(dir.path(), &["mine", "--bogus"]).status.code(), Some(1));
    assert_eq!(bin(dir.path(), &["filter", "-o", "x.tsv"]).status.code(), Some(1));
    assert_eq!(bin(dir.path(), &["run", "--search", "ivf", "--langs", "de"]).status.code(), Some(1));
    assert_eq!(bin(dir.path(), &["run", "--no-such-key", "1"]).status.code(), Some(1));
}

#[test]
fn job_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    plant(dir.path());
    fs::remove_file(dir.path().join("in/yy.00000.emb")).unwrap();
    let out = bin(dir.path(), &["run", "--config", "mine.conf"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("embed:yy:00000: failed"));
    assert!(out.stdout.is_empty());
}

#[test]
fn filter_thresholds_nest() {
    let dir = tempfile::tempdir().unwrap();
    plant(dir.path());
    ok(dir.path(), &["run", "--config", "mine.conf", "--threshold", "1.0"]);
    let cands: Vec<String> = fs::read_dir(dir.path().join("work/mine/xx-yy"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "cnd"))
        .map(|p| p.to_string_lossy().into_owned())
        .collect();
    assert!(!cands.is_empty());
    let mut args = vec!["filter", "--threshold", "1.06", "-o", "f106.tsv"];
    for c in &cands {
        args.extend(["-i", c.as_str()]);
    }
    ok(dir.path(), &args);
    args[2] = "1.07";
    args[4] = "f107.tsv";
    ok(dir.path(), &args);
    args[4] = "-";
    let stdout = ok(dir.path(), &args).stdout;

    let p106 = pairs(&dir.path().join("f106.tsv"));
    let p107 = pairs(&dir.path().join("f107.tsv"));
    assert_eq!(stdout, fs::read(dir.path().join("f107.tsv")).unwrap());
    assert!(p106.iter().all(|p| p.0 >= 1.06 - 5e-7));
    assert!(p107.iter().all(|p| p.0 >= 1.07 - 5e-7));
    assert!(p107.len() < p106.len());
    let s106: BTreeSet<(u64, u64)> = p106.iter().map(|p| (p.1, p.2)).collect();
    assert!(p107.iter().all(|p| s106.contains(&(p.1, p.2))));

    // the pipeline's own pairs at 1.06 are the same selection
    ok(dir.path(), &["run", "--config", "mine.conf"]);
    assert_eq!(fs::read(dir.path().join("f106.tsv")).unwrap(), fs::read(dir.path().join("work/mine/xx-yy/pairs.tsv")).unwrap());

    ok(dir.path(), &["score", "-p", "f106.tsv", "-g", "in/gold.tsv", "-o", "score.tsv"]);
    let score = fs::read_to_string(dir.path().join("score.tsv")).unwrap();
    assert_eq!(score.trim_end().split('\t').count(), 5);
    let mut sweep = vec!["sweep", "-g", "in/gold.tsv", "-o", "sweep.tsv", "--steps", "5"];
    for c in &cands {
        sweep.extend(["-i", c.as_str()]);
    }
    ok(dir.path(), &sweep);
    let counts: Vec<u64> = fs::read_to_string(dir.path().join("sweep.tsv"))
        .unwrap()
        .lines()
        .map(|l| l.rsplit('\t').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(counts.len(), 5);
    assert!(counts.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn stage_by_stage_matches_run() {
    for search in [&["--search", "exact"][..], &["--search", "ivf", "--nlist", "8", "--pq-m", "4", "--nprobe", "3"]] {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        plant(d);
        let with = |extra: &[&str], work: &str| -> Vec<String> {
            let mut v: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
            v.extend(["--config", "mine.conf", "--work-dir", work].map(String::from));
            v.extend(search.iter().map(|s| s.to_string()));
            v
        };
        let call = |extra: &[&str], work: &str| {
            let args = with(extra, work);
            ok(d, &args.iter().map(String::as_str).collect::<Vec<_>>());
        };
        call(&["run", "--workers", "3"], "a");

        call(&["preprocess"], "b");
        call(&["embed", "--lang", "yy"], "b");
        call(&["embed", "--lang", "xx"], "b");
        if search.len() > 2 {
            call(&["index-train"], "b");
            call(&["index-add"], "b");
            call(&["index-merge"], "b");
        }
        call(&["mine", "--step", "fwd"], "b");
        call(&["mine", "--step", "bwd", "--shard", "1"], "b");
        call(&["mine", "--step", "bwd", "--shard", "0"], "b");
        call(&["mine", "--step", "combine"], "b");
        call(&["attach", "--pair", "xx-yy"], "b");

        let a = digests(&d.join("a"));
        assert!(a.keys().any(|p| p.starts_with("bitext")));
        assert_eq!(a, digests(&d.join("b")), "{search:?}");

        // the manual run is recorded, so a full run has nothing to do
        let out = bin(d, &with(&["run"], "b").iter().map(String::as_str).collect::<Vec<_>>());
        assert!(String::from_utf8_lossy(&out.stderr).contains("ran 0,"));
    }
}

#[test]
fn stage_selection_must_match_a_job() {
    let dir = tempfile::tempdir().unwrap();
    plant(dir.path());
    ok(dir.path(), &["preprocess", "--config", "mine.conf"]);
    let out = bin(dir.path(), &["embed", "--config", "mine.conf", "--lang", "zz"]);
    assert_eq!(out.status.code(), Some(1));
    let out = bin(dir.path(), &["embed", "--config", "mine.conf", "--lang", "xx", "--block", "9"]);
    assert_eq!(out.status.code(), Some(1));
}
