use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use binrec::binindex::{bench as run_bench, topk, PackedCodes};
use binrec::checkpoint::{read_student, read_teacher, write_student, write_teacher};
use binrec::data::store::{read_split, write_split};
use binrec::data::{filter_min_degree, parse_ratings, split_per_user, subsample_users, RatingFormat, SplitDataset};
use binrec::eval::{evaluate_many, EvalReport, Scorer};
use binrec::kv::KvFile;
use binrec::numerics::DenseMatrix;
use binrec::student::{relaxed_codes, train_student};
use binrec::teacher::{train_teacher as fit_teacher, Hyperparams};
use binrec::{Error, Result};

use crate::config::RunConfig;
use crate::{Common, HyperArgs};

pub const TEACHER_FILE: &str = "teacher.dgcb";
pub const STUDENT_FILE: &str = "student.dgcb";
pub const USER_CODES: &str = "users.binc";
pub const ITEM_CODES: &str = "items.binc";
pub const RUN_FILE: &str = "run.kv";

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.set("out", common.out.as_ref().map(|p| p.display()));
    Ok(cfg)
}

fn apply_hyper(cfg: &mut RunConfig, h: &HyperArgs) {
    cfg.set("dim", h.dim);
    cfg.set("lambda", h.lambda);
    cfg.set("lr", h.lr);
    cfg.set("epochs", h.epochs);
    cfg.set("seed", h.seed);
    cfg.set("batch_size", h.batch_size);
    cfg.set("convergence_tol", h.convergence_tol);
    cfg.set("activation", h.activation);
    cfg.set("cross_layers", h.cross_layers);
    cfg.set("alpha", h.alpha);
    cfg.set("temperature", h.temperature);
    cfg.set("tau", h.tau);
    cfg.set("beta", h.beta);
    cfg.set("nu", h.nu);
}

fn set_path(cfg: &mut RunConfig, key: &str, p: Option<PathBuf>) {
    cfg.set(key, p.as_ref().map(|p| p.display()));
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.path("out")?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn losses_text(losses: &[f64]) -> String {
    let mut s = String::from("epoch\tloss\n");
    for (e, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{}\t{l}", e + 1);
    }
    s
}

fn read_codes(dir: &Path) -> Result<(PackedCodes, PackedCodes)> {
    let users = PackedCodes::read(&dir.join(USER_CODES))?;
    let items = PackedCodes::read(&dir.join(ITEM_CODES))?;
    if users.d() != items.d() {
        return Err(Error::Data(format!(
            "{}: user codes have {} bits, item codes {}",
            dir.display(),
            users.d(),
            items.d()
        )));
    }
    Ok((users, items))
}

fn check_sizes(split: &SplitDataset, users: usize, items: usize, what: &str) -> Result<()> {
    if (users, items) != (split.num_users(), split.num_items()) {
        return Err(Error::Data(format!(
            "{what} covers {users} users x {items} items but the data directory has {} x {}",
            split.num_users(),
            split.num_items()
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn prepare(
    common: &Common,
    input: Option<PathBuf>,
    format: Option<String>,
    min_user: Option<usize>,
    min_item: Option<usize>,
    split: Option<f64>,
    subsample: Option<f64>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = load(common)?;
    set_path(&mut cfg, "input", input);
    cfg.set("format", format);
    cfg.set("min_user", min_user);
    cfg.set("min_item", min_item);
    cfg.set("split", split);
    cfg.set("subsample", subsample);
    cfg.set("seed", seed);

    let input = cfg.path("input")?;
    let format: RatingFormat = cfg.get_or("format", RatingFormat::MovielensDat)?;
    let min_user = cfg.get_or("min_user", 20usize)?;
    let min_item = cfg.get_or("min_item", 20usize)?;
    let ratio = cfg.get_or("split", 0.5f64)?;
    let fraction = cfg.get_or("subsample", 1.0f64)?;
    let seed = cfg.get_or("seed", 1u64)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("subsample must be in (0, 1], got {fraction}")));
    }
    let out = out_dir(&cfg)?;

    let file = File::open(&input).map_err(|e| Error::Io {
        path: input.clone(),
        source: e,
    })?;
    let raw = parse_ratings(BufReader::new(file), format).map_err(|e| match e {
        Error::Parse { line, message } => Error::Data(format!("{}:{line}: {message}", input.display())),
        other => other,
    })?;
    let filtered = filter_min_degree(&raw, min_user, min_item);
    let kept = if fraction < 1.0 {
        subsample_users(&filtered, fraction, seed)
    } else {
        filtered.clone()
    };
    if kept.is_empty() {
        return Err(Error::Data(format!(
            "{}: no interactions left after filtering ({} parsed)",
            input.display(),
            raw.len()
        )));
    }
    let split = split_per_user(&kept, ratio, seed)?;
    let mut extra = KvFile::new();
    extra
        .set("format", format)
        .set("min_user", min_user)
        .set("min_item", min_item)
        .set("subsample", fraction)
        .set("parsed_interactions", raw.len())
        .set("filtered_interactions", filtered.len())
        .set("kept_interactions", kept.len());
    write_split(&out, &split, &extra)?;
    log::info!(
        "{} users, {} items, {} train / {} test interactions",
        split.num_users(),
        split.num_items(),
        split.train.num_interactions(),
        split.num_test()
    );
    cfg.resolved("prepare", None).write(&out.join(RUN_FILE))
}

pub fn train_teacher(common: &Common, data: Option<PathBuf>, hyper: &HyperArgs) -> Result<()> {
    let mut cfg = load(common)?;
    set_path(&mut cfg, "data", data);
    apply_hyper(&mut cfg, hyper);
    let hyper = cfg.hyper(Hyperparams::default())?;
    let data = cfg.path("data")?;
    let out = out_dir(&cfg)?;
    let split = read_split(&data)?;
    let run = fit_teacher(&split, &hyper)?;
    write_teacher(&out.join(TEACHER_FILE), &run.checkpoint)?;
    write_text(&out.join("losses.tsv"), &losses_text(&run.losses))?;
    let mut kv = cfg.resolved("train-teacher", Some(&hyper));
    kv.set("epochs_run", run.losses.len());
    if let Some(l) = run.losses.last() {
        kv.set("final_loss", l);
    }
    kv.write(&out.join(RUN_FILE))
}

pub fn distill(common: &Common, data: Option<PathBuf>, teacher: Option<PathBuf>, hyper: &HyperArgs) -> Result<()> {
    let mut cfg = load(common)?;
    set_path(&mut cfg, "data", data);
    set_path(&mut cfg, "teacher", teacher);
    apply_hyper(&mut cfg, hyper);
    let teacher = read_teacher(&cfg.path("teacher")?)?;
    // the teacher's own settings are the base, so dim and activation carry over
    let hyper = cfg.hyper(teacher.hyper.clone())?;
    let split = read_split(&cfg.path("data")?)?;
    check_sizes(
        &split,
        teacher.embeddings.users.rows(),
        teacher.embeddings.items.rows(),
        "the teacher",
    )?;
    let out = out_dir(&cfg)?;
    let run = train_student(&teacher.embeddings, &split, &hyper)?;
    write_student(&out.join(STUDENT_FILE), &run.checkpoint)?;
    write_text(&out.join("losses.tsv"), &losses_text(&run.losses))?;
    let relaxed = relaxed_codes(&run.checkpoint.params.p);
    let saturated = relaxed.as_slice().iter().filter(|v| v.abs() > 0.9).count() as f64 / relaxed.len().max(1) as f64;
    let mut kv = cfg.resolved("distill", Some(&hyper));
    kv.set("epochs_run", run.losses.len()).set("saturation", saturated);
    if let Some(l) = run.losses.last() {
        kv.set("final_loss", l);
    }
    kv.write(&out.join(RUN_FILE))
}

pub fn export_codes(common: &Common, student: Option<PathBuf>) -> Result<()> {
    let mut cfg = load(common)?;
    set_path(&mut cfg, "student", student);
    let ckpt = read_student(&cfg.path("student")?)?;
    let out = out_dir(&cfg)?;
    let (users, items) = ckpt.codes();
    users.write(&out.join(USER_CODES))?;
    items.write(&out.join(ITEM_CODES))?;
    let mut kv = cfg.resolved("export-codes", Some(&ckpt.hyper));
    kv.set("bits", users.d()).set("users", users.rows()).set("items", items.rows());
    kv.write(&out.join(RUN_FILE))
}

pub fn recommend(
    common: &Common,
    data: Option<PathBuf>,
    codes: Option<PathBuf>,
    user: Option<String>,
    k: Option<usize>,
) -> Result<()> {
    let mut cfg = load(common)?;
    set_path(&mut cfg, "data", data);
    set_path(&mut cfg, "codes", codes);
    cfg.set("user", user);
    cfg.set("k", k);
    let split = read_split(&cfg.path("data")?)?;
    let (users, items) = read_codes(&cfg.path("codes")?)?;
    check_sizes(&split, users.rows(), items.rows(), "the codes")?;
    let key: String = cfg.require("user")?;
    let k = cfg.get_or("k", 10usize)?;
    let u = split
        .train
        .user_index(&key)
        .ok_or_else(|| Error::Data(format!("unknown user `{key}`")))?;
    let ranked = topk(users.row(u), &items, k, split.train.positives(u))?;
    let mut text = String::new();
    for (item, score) in &ranked.entries {
        let _ = writeln!(text, "{}\t{score}", split.train.item_key(*item as usize));
    }
    print!("{text}");
    if cfg.get::<PathBuf>("out")?.is_some() {
        let out = out_dir(&cfg)?;
        write_text(&out.join("recommendations.tsv"), &text)?;
        cfg.resolved("recommend", None).write(&out.join(RUN_FILE))?;
    }
    Ok(())
}

fn recorded_seed(dir: &Path) -> Option<u64> {
    KvFile::read(&dir.join(RUN_FILE)).ok()?.parse_value("seed").ok()
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    common: &Common,
    data: Option<PathBuf>,
    codes: Option<PathBuf>,
    teacher: Option<PathBuf>,
    k: Option<String>,
    dataset: Option<String>,
    model: Option<String>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = load(common)?;
    set_path(&mut cfg, "data", data);
    set_path(&mut cfg, "codes", codes);
    set_path(&mut cfg, "teacher", teacher);
    cfg.set("k", k);
    cfg.set("dataset", dataset);
    cfg.set("model", model);
    cfg.set("seed", seed);
    let data = cfg.path("data")?;
    let ks = cfg.list::<usize>("k")?.unwrap_or_else(|| vec![100]);
    let split = read_split(&data)?;
    let out = out_dir(&cfg)?;

    let (reports, default_model, default_seed) = match (cfg.get::<PathBuf>("codes")?, cfg.get::<PathBuf>("teacher")?) {
        (Some(dir), None) => {
            let (users, items) = read_codes(&dir)?;
            let r = evaluate_many(&Scorer::Packed { users: &users, items: &items }, &split, &ks)?;
            (r, "binary", recorded_seed(&dir))
        }
        (None, Some(path)) => {
            let t = read_teacher(&path)?;
            let (u, v): (&DenseMatrix, &DenseMatrix) = (&t.embeddings.users, &t.embeddings.items);
            let r = evaluate_many(&Scorer::Real { users: u, items: v }, &split, &ks)?;
            (r, "teacher", Some(t.hyper.seed))
        }
        _ => return Err(Error::Config("give exactly one of --codes or --teacher".into())),
    };
    let dataset = match cfg.get::<String>("dataset")? {
        Some(d) => d,
        None => data
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "data".into()),
    };
    let model = cfg.get::<String>("model")?.unwrap_or_else(|| default_model.into());
    let seed = cfg.get::<u64>("seed")?.or(default_seed).unwrap_or(0);

    let mut kv = KvFile::new();
    kv.set("dataset", &dataset).set("model", &model).set("seed", seed);
    if let Some(r) = reports.first() {
        kv.set("users_evaluated", r.users_evaluated).set("users_skipped", r.users_skipped);
    }
    let mut csv = format!("{}\n", EvalReport::CSV_HEADER);
    for r in &reports {
        kv.set(&format!("recall@{}", r.k), r.recall)
            .set(&format!("map@{}", r.k), r.map)
            .set(&format!("ndcg@{}", r.k), r.ndcg);
        csv.push_str(&r.csv_row(&dataset, &model, seed));
        csv.push('\n');
        println!(
            "K={:<4} recall {:.4}  map {:.4}  ndcg {:.4}",
            r.k, r.recall, r.map, r.ndcg
        );
    }
    kv.write(&out.join("eval.kv"))?;
    write_text(&out.join("eval.csv"), &csv)?;
    cfg.resolved("evaluate", None).write(&out.join(RUN_FILE))
}

fn random_codes(rows: usize, bits: usize, rng: &mut ChaCha8Rng) -> Result<PackedCodes> {
    let data = (0..rows * bits).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    PackedCodes::pack(&DenseMatrix::from_vec(rows, bits, data)?)
}

#[allow(clippy::too_many_arguments)]
pub fn bench(
    common: &Common,
    codes: Option<PathBuf>,
    bits: Option<usize>,
    items: Option<usize>,
    users: Option<usize>,
    k: Option<usize>,
    repetitions: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = load(common)?;
    set_path(&mut cfg, "codes", codes);
    cfg.set("bits", bits);
    cfg.set("items", items);
    cfg.set("users", users);
    cfg.set("k", k);
    cfg.set("repetitions", repetitions);
    cfg.set("seed", seed);
    let k = cfg.get_or("k", 100usize)?;
    let reps = cfg.get_or("repetitions", 3usize)?;
    let out = out_dir(&cfg)?;
    let (u, v) = match cfg.get::<PathBuf>("codes")? {
        Some(dir) => read_codes(&dir)?,
        None => {
            let bits = cfg.get_or("bits", 192usize)?;
            if bits == 0 {
                return Err(Error::Config("bits must be >= 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.get_or("seed", 1u64)?);
            let u = random_codes(cfg.get_or("users", 200usize)?, bits, &mut rng)?;
            let v = random_codes(cfg.get_or("items", 100_000usize)?, bits, &mut rng)?;
            (u, v)
        }
    };
    let report = run_bench(&u, &v, k, reps)?;
    let kv = report.to_kv();
    print!("{}", kv.to_text());
    kv.write(&out.join("bench.kv"))?;
    cfg.resolved("bench", None).write(&out.join(RUN_FILE))
}
