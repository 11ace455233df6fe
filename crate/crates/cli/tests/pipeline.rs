use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_binrec"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = binrec(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = binrec(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

/// 30 users with a preference for one of three item groups, as a tsv rating file.
fn ratings(dir: &Path) -> PathBuf {
    let mut text = String::new();
    for u in 0..30 {
        let group = u % 3;
        for i in 0..12 {
            if i % 3 == group || (i + u) % 7 == 0 {
                text.push_str(&format!("user{u}\titem{i}\t4\t{}\n", 1000 + i));
            }
        }
    }
    let path = dir.join("ratings.tsv");
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn prepare(dir: &Path, out: &str) -> PathBuf {
    let input = ratings(dir);
    let data = dir.join(out);
    ok(&[
        "prepare", "--input", s(&input), "--format", "tsv", "--min-user", "2", "--min-item", "2", "--split", "0.5",
        "--seed", "1", "--out", s(&data),
    ]);
    data
}

fn read(p: PathBuf) -> Vec<u8> {
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn pipeline(dir: &Path) -> PathBuf {
    let data = prepare(dir, "data");
    let (teacher, student, codes) = (dir.join("teacher"), dir.join("student"), dir.join("codes"));
    ok(&["train-teacher", "--data", s(&data), "--out", s(&teacher), "--dim", "4", "--epochs", "20", "--lr", "0.01"]);
    ok(&[
        "distill",
        "--data",
        s(&data),
        "--teacher",
        s(&teacher.join("teacher.dgcb")),
        "--out",
        s(&student),
        "--epochs",
        "20",
        "--lr",
        "0.05",
    ]);
    ok(&["export-codes", "--student", s(&student.join("student.dgcb")), "--out", s(&codes)]);
    ok(&["evaluate", "--data", s(&data), "--codes", s(&codes), "--k", "3,5", "--out", s(&dir.join("eval"))]);
    dir.to_path_buf()
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = pipeline(tmp.path());
    for f in ["users.tsv", "items.tsv", "train.tsv", "test.tsv", "meta.kv", "run.kv"] {
        assert!(dir.join("data").join(f).is_file(), "{f}");
    }
    assert_eq!(&read(dir.join("teacher/teacher.dgcb"))[..4], b"DGCB");
    assert_eq!(&read(dir.join("student/student.dgcb"))[..4], b"DGCB");
    assert_eq!(&read(dir.join("codes/users.binc"))[..4], b"BINC");
    assert_eq!(&read(dir.join("codes/items.binc"))[..4], b"BINC");
    for sub in ["data", "teacher", "student", "codes", "eval"] {
        let run = String::from_utf8(read(dir.join(sub).join("run.kv"))).unwrap();
        assert!(run.starts_with("command="), "{sub}: {run}");
        assert!(run.contains("build=binrec "), "{sub}");
    }
    let student_run = String::from_utf8(read(dir.join("student/run.kv"))).unwrap();
    assert!(student_run.contains("alpha=10") && student_run.contains("dim=4"), "{student_run}");

    let csv = String::from_utf8(read(dir.join("eval/eval.csv"))).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "dataset,model,seed,K,recall,map,ndcg");
    assert!(lines[1].starts_with("data,binary,1,3,"), "{}", lines[1]);
    assert!(lines[2].starts_with("data,binary,1,5,"), "{}", lines[2]);
    let eval = String::from_utf8(read(dir.join("eval/eval.kv"))).unwrap();
    assert!(eval.contains("ndcg@5="), "{eval}");

    let out = ok(&[
        "recommend",
        "--data",
        s(&dir.join("data")),
        "--codes",
        s(&dir.join("codes")),
        "--user",
        "user0",
        "--k",
        "3",
    ]);
    let recs: Vec<&str> = out.lines().collect();
    assert_eq!(recs.len(), 3);
    for line in recs {
        let (item, score) = line.split_once('\t').unwrap();
        assert!(item.starts_with("item"));
        score.parse::<i32>().unwrap();
    }

    let teacher_eval = tmp.path().join("teval");
    ok(&[
        "evaluate",
        "--data",
        s(&dir.join("data")),
        "--teacher",
        s(&dir.join("teacher/teacher.dgcb")),
        "--k",
        "5",
        "--model",
        "gcn",
        "--out",
        s(&teacher_eval),
    ]);
    assert!(String::from_utf8(read(teacher_eval.join("eval.csv"))).unwrap().contains("data,gcn,1,5,"));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for f in [
        "data/train.tsv",
        "data/test.tsv",
        "data/meta.kv",
        "teacher/teacher.dgcb",
        "student/student.dgcb",
        "codes/users.binc",
        "codes/items.binc",
        "eval/eval.kv",
        "eval/eval.csv",
    ] {
        assert_eq!(read(a.path().join(f)), read(b.path().join(f)), "{f}");
    }
}

#[test]
fn alpha_zero_ablation_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepare(tmp.path(), "data");
    let teacher = tmp.path().join("t");
    ok(&["train-teacher", "--data", s(&data), "--out", s(&teacher), "--dim", "2", "--epochs", "3"]);
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "epochs=3\nalpha=7\n").unwrap();
    let student = tmp.path().join("s");
    ok(&[
        "distill",
        "--config",
        s(&cfg),
        "--alpha",
        "0",
        "--data",
        s(&data),
        "--teacher",
        s(&teacher.join("teacher.dgcb")),
        "--out",
        s(&student),
    ]);
    let run = String::from_utf8(read(student.join("run.kv"))).unwrap();
    assert!(run.contains("\nalpha=0\n") && run.contains("\nepochs=3\n"), "{run}");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.dat");
    let (c, err) = code(&["prepare", "--input", s(&missing), "--out", s(&tmp.path().join("d"))]);
    assert_eq!(c, 3);
    assert!(err.contains("nope.dat"), "{err}");

    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "alhpa=1\n").unwrap();
    let (c, err) = code(&["train-teacher", "--config", s(&cfg)]);
    assert_eq!(c, 2, "{err}");
    assert!(err.contains("alhpa"));

    let (c, _) = code(&["train-teacher", "--out", s(tmp.path())]);
    assert_eq!(c, 2);
    let (c, _) = code(&["train-teacher", "--tau", "0"]);
    assert_eq!(c, 2);
    let (c, _) = code(&["frobnicate"]);
    assert_eq!(c, 2);

    let data = prepare(tmp.path(), "data");
    let (c, err) = code(&[
        "train-teacher", "--data", s(&data), "--out", s(&tmp.path().join("t")), "--lr", "1e300", "--epochs", "30",
        "--activation", "identity",
    ]);
    assert_eq!(c, 4, "{err}");
    assert!(err.contains("epoch"), "{err}");

    // a teacher checkpoint is refused where a student is expected, and a wrong version gets a hint
    let t = tmp.path().join("t2");
    ok(&["train-teacher", "--data", s(&data), "--out", s(&t), "--dim", "2", "--epochs", "1"]);
    let (c, _) = code(&["export-codes", "--student", s(&t.join("teacher.dgcb")), "--out", s(&tmp.path().join("c"))]);
    assert_eq!(c, 3);
    let mut bytes = read(t.join("teacher.dgcb"));
    bytes[4] = 7;
    let old = tmp.path().join("old.dgcb");
    std::fs::write(&old, bytes).unwrap();
    let (c, err) = code(&["distill", "--data", s(&data), "--teacher", s(&old), "--out", s(&tmp.path().join("s"))]);
    assert_eq!(c, 3);
    assert!(err.contains("version 7") && err.contains("upgrade"), "{err}");
}

#[test]
fn bench_on_random_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&[
        "bench", "--bits", "64", "--items", "500", "--users", "4", "--k", "5", "--repetitions", "1", "--out",
        s(tmp.path()),
    ]);
    assert!(out.contains("identical=true"), "{out}");
    let kv = String::from_utf8(read(tmp.path().join("bench.kv"))).unwrap();
    for key in ["d=64", "N=500", "K=5", "qps_binary=", "qps_dense=", "speedup="] {
        assert!(kv.contains(key), "{key}");
    }
}

#[test]
fn help_lists_defaults() {
    let out = ok(&["distill", "--help"]);
    for flag in ["--alpha", "--tau", "--temperature", "--beta", "--nu", "--lambda", "[default: 10]", "[default: 0.2]"] {
        assert!(out.contains(flag), "{flag}");
    }
}
