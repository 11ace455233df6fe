//! On-disk layout of a prepared split directory.
//!
//! ```text
//! users.tsv   external key \t internal index
//! items.tsv   external key \t internal index
//! train.tsv   user index \t item index   (sorted)
//! test.tsv    user index \t item index   (sorted)
//! meta.kv     M, N, seed, ratio, thresholds, counts
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{BipartiteGraph, SplitDataset};
use crate::error::{Error, Result};
use crate::kv::KvFile;

pub const META_FILE: &str = "meta.kv";

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn keys_text(keys: &[String]) -> String {
    let mut s = String::new();
    for (i, k) in keys.iter().enumerate() {
        let _ = writeln!(s, "{k}\t{i}");
    }
    s
}

fn pairs_text(lists: &[Vec<u32>]) -> String {
    let mut s = String::new();
    for (u, list) in lists.iter().enumerate() {
        for &i in list {
            let _ = writeln!(s, "{u}\t{i}");
        }
    }
    s
}

/// Writes the split and a `meta.kv` that starts with the split's own facts
/// followed by `extra` entries.
pub fn write_split(dir: &Path, split: &SplitDataset, extra: &KvFile) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("users.tsv"), &keys_text(split.train.user_keys()))?;
    write_file(&dir.join("items.tsv"), &keys_text(split.train.item_keys()))?;
    write_file(&dir.join("train.tsv"), &pairs_text(split.train.all_positives()))?;
    write_file(&dir.join("test.tsv"), &pairs_text(&split.test_positives))?;
    let mut meta = KvFile::new();
    meta.set("M", split.num_users())
        .set("N", split.num_items())
        .set("seed", split.split_seed)
        .set("ratio", split.ratio)
        .set("train_interactions", split.train.num_interactions())
        .set("test_interactions", split.num_test());
    for (k, v) in extra.iter() {
        meta.set(k, v);
    }
    meta.write(&dir.join(META_FILE))
}

fn read_keys(path: &Path) -> Result<Vec<String>> {
    let text = read_file(path)?;
    let mut keys = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let (k, idx) = line.split_once('\t').ok_or_else(|| bad(path, n, "expected key\\tindex"))?;
        let idx: usize = idx.parse().map_err(|_| bad(path, n, "bad index"))?;
        if idx != keys.len() {
            return Err(bad(path, n, "indices must be dense and in order"));
        }
        keys.push(k.to_string());
    }
    Ok(keys)
}

fn read_pairs(path: &Path, users: usize, items: usize) -> Result<Vec<Vec<u32>>> {
    let text = read_file(path)?;
    let mut lists = vec![Vec::new(); users];
    for (n, line) in text.lines().enumerate() {
        let (u, i) = line.split_once('\t').ok_or_else(|| bad(path, n, "expected user\\titem"))?;
        let u: usize = u.parse().map_err(|_| bad(path, n, "bad user index"))?;
        let i: u32 = i.parse().map_err(|_| bad(path, n, "bad item index"))?;
        if u >= users || i as usize >= items {
            return Err(bad(path, n, "index out of range"));
        }
        lists[u].push(i);
    }
    for l in &mut lists {
        l.sort_unstable();
    }
    Ok(lists)
}

fn bad(path: &Path, line: usize, msg: &str) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: format!("line {}: {msg}", line + 1),
    }
}

pub fn read_split(dir: &Path) -> Result<SplitDataset> {
    let meta = KvFile::read(&dir.join(META_FILE))?;
    let user_keys = read_keys(&dir.join("users.tsv"))?;
    let item_keys = read_keys(&dir.join("items.tsv"))?;
    let (m, n) = (user_keys.len(), item_keys.len());
    if meta.parse_value::<usize>("M")? != m || meta.parse_value::<usize>("N")? != n {
        return Err(Error::Format {
            path: dir.join(META_FILE),
            message: "M/N disagree with users.tsv/items.tsv".into(),
        });
    }
    let train = read_pairs(&dir.join("train.tsv"), m, n)?;
    let test = read_pairs(&dir.join("test.tsv"), m, n)?;
    Ok(SplitDataset {
        train: BipartiteGraph::from_parts(user_keys, item_keys, train)?,
        test_positives: test,
        split_seed: meta.parse_value("seed")?,
        ratio: meta.parse_value("ratio")?,
    })
}

pub fn read_meta(dir: &Path) -> Result<KvFile> {
    KvFile::read(&dir.join(META_FILE))
}
