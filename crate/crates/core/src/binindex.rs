//! Packed ±1 codes, XOR-popcount inner products, and bounded-heap top-K retrieval.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::numerics::DenseMatrix;

pub const BINC_MAGIC: &[u8; 4] = b"BINC";
pub const BINC_VERSION: u32 = 1;

/// Row-major ±1 codes, 64 dimensions per word. Bit `b` of word `w` holds
/// dimension `64w + b`; a set bit means +1. Padding bits are always zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedCodes {
    rows: usize,
    d: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

/// Alias used where the codes are the student's binarised output.
pub type BinaryCodeMatrix = PackedCodes;

pub fn words_for(d: usize) -> usize {
    d.div_ceil(64)
}

impl PackedCodes {
    /// Packs a matrix whose entries are exactly `+1.0` or `-1.0`.
    pub fn pack(signs: &DenseMatrix) -> Result<Self> {
        if let Some(pos) = signs.as_slice().iter().position(|&v| v != 1.0 && v != -1.0) {
            let (r, c) = (pos / signs.cols(), pos % signs.cols());
            return Err(Error::Data(format!(
                "entry ({r}, {c}) = {} is not ±1",
                signs.as_slice()[pos]
            )));
        }
        Ok(Self::from_signs_of(signs))
    }

    /// Packs `sign(x)` with `x >= 0` (including zero) mapped to +1.
    pub fn from_signs_of(x: &DenseMatrix) -> Self {
        let (rows, d) = x.shape();
        let wpr = words_for(d);
        let mut words = vec![0u64; rows * wpr];
        for r in 0..rows {
            let out = &mut words[r * wpr..(r + 1) * wpr];
            for (c, &v) in x.row(r).iter().enumerate() {
                if v >= 0.0 {
                    out[c / 64] |= 1u64 << (c % 64);
                }
            }
        }
        Self {
            rows,
            d,
            words_per_row: wpr,
            words,
        }
    }

    /// Validates the layout, including zero padding.
    pub fn from_words(rows: usize, d: usize, words: Vec<u64>) -> Result<Self> {
        let wpr = words_for(d);
        if words.len() != rows * wpr {
            return Err(Error::Data(format!(
                "{} words for {rows} rows of {d} bits (expected {})",
                words.len(),
                rows * wpr
            )));
        }
        let codes = Self {
            rows,
            d,
            words_per_row: wpr,
            words,
        };
        if d % 64 != 0 {
            let mask = !0u64 << (d % 64);
            if (0..rows).any(|r| codes.row(r)[wpr - 1] & mask != 0) {
                return Err(Error::Data("nonzero padding bits".into()));
            }
        }
        Ok(codes)
    }

    pub fn unpack(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.d);
        for r in 0..self.rows {
            let w = self.row(r);
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = if w[c / 64] >> (c % 64) & 1 == 1 { 1.0 } else { -1.0 };
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn row(&self, r: usize) -> &[u64] {
        &self.words[r * self.words_per_row..(r + 1) * self.words_per_row]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 8 * self.words.len());
        out.extend_from_slice(BINC_MAGIC);
        for v in [BINC_VERSION, self.rows as u32, self.d as u32, self.words_per_row as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 20 || &bytes[..4] != BINC_MAGIC {
            return Err("not a BINC code file (bad magic)".into());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
        let version = u32_at(4) as u32;
        if version != BINC_VERSION {
            return Err(format!(
                "code file version {version} is not supported (expected {BINC_VERSION}); re-run export-codes with this build"
            ));
        }
        let (rows, d, wpr) = (u32_at(8), u32_at(12), u32_at(16));
        if wpr != words_for(d) {
            return Err(format!("words-per-row {wpr} inconsistent with d = {d}"));
        }
        let body = &bytes[20..];
        if body.len() != rows * wpr * 8 {
            return Err(format!("expected {} payload bytes, found {}", rows * wpr * 8, body.len()));
        }
        let words = body
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::from_words(rows, d, words).map_err(|e| e.to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            message,
        })
    }
}

/// `±1` inner product of two packed rows: `d − 2·popcount(a XOR b)`.
pub fn dot_binary(a: &[u64], b: &[u64], d: usize) -> Result<i32> {
    if a.len() != b.len() || a.len() != words_for(d) {
        return Err(Error::Data(format!(
            "packed rows of {} and {} words do not both hold {d} bits",
            a.len(),
            b.len()
        )));
    }
    Ok(hamming_dot(a, b, d))
}

#[inline(always)]
fn hamming_dot(a: &[u64], b: &[u64], d: usize) -> i32 {
    let mut diff = 0u32;
    for (x, y) in a.iter().zip(b) {
        diff += (x ^ y).count_ones();
    }
    d as i32 - 2 * diff as i32
}

/// Score type usable by [`topk_scored`]: needs a total order.
pub trait Score: Copy {
    fn total_cmp(&self, other: &Self) -> Ordering;
}

impl Score for i32 {
    fn total_cmp(&self, other: &Self) -> Ordering {
        self.cmp(other)
    }
}

impl Score for f32 {
    fn total_cmp(&self, other: &Self) -> Ordering {
        f32::total_cmp(self, other)
    }
}

impl Score for f64 {
    fn total_cmp(&self, other: &Self) -> Ordering {
        f64::total_cmp(self, other)
    }
}

/// Up to `K` `(item, score)` pairs, best first, ties by ascending item index.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList<S = i32> {
    pub entries: Vec<(u32, S)>,
}

impl<S> RankedList<S> {
    pub fn items(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Heap entry ordered so that "greater" means "ranks higher".
struct Ranked<S> {
    score: S,
    item: u32,
}

impl<S: Score> Ord for Ranked<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.item.cmp(&self.item))
    }
}

impl<S: Score> PartialOrd for Ranked<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Score> PartialEq for Ranked<S> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<S: Score> Eq for Ranked<S> {}

/// Bounded selection of the `k` best candidates; `O(n log k)`.
struct TopK<S> {
    k: usize,
    heap: BinaryHeap<Reverse<Ranked<S>>>,
}

impl<S: Score> TopK<S> {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline(always)]
    fn offer(&mut self, item: u32, score: S) {
        if self.heap.len() < self.k {
            self.heap.push(Reverse(Ranked { score, item }));
            return;
        }
        let worst = &self.heap.peek().expect("k >= 1").0;
        // candidates arrive in ascending item order, so an equal score never displaces
        if score.total_cmp(&worst.score) == Ordering::Greater {
            self.heap.pop();
            self.heap.push(Reverse(Ranked { score, item }));
        }
    }

    fn offer_any(&mut self, item: u32, score: S) {
        if self.heap.len() < self.k {
            self.heap.push(Reverse(Ranked { score, item }));
        } else if (Ranked { score, item }) > self.heap.peek().expect("k >= 1").0 {
            self.heap.pop();
            self.heap.push(Reverse(Ranked { score, item }));
        }
    }

    fn finish(self) -> RankedList<S> {
        let mut v: Vec<Ranked<S>> = self.heap.into_iter().map(|r| r.0).collect();
        v.sort_unstable_by(|a, b| b.cmp(a));
        RankedList {
            entries: v.into_iter().map(|r| (r.item, r.score)).collect(),
        }
    }
}

/// Top `k` of an arbitrary `(item, score)` stream in any order.
pub fn topk_scored<S: Score>(candidates: impl IntoIterator<Item = (u32, S)>, k: usize) -> Result<RankedList<S>> {
    if k == 0 {
        return Err(Error::Config("K must be >= 1".into()));
    }
    let mut sel = TopK::new(k);
    for (item, score) in candidates {
        sel.offer_any(item, score);
    }
    Ok(sel.finish())
}

/// The `k` items with the highest binary score against `user`, skipping the
/// sorted `exclude` list.
pub fn topk(user: &[u64], items: &PackedCodes, k: usize, exclude: &[u32]) -> Result<RankedList<i32>> {
    if k == 0 {
        return Err(Error::Config("K must be >= 1".into()));
    }
    if user.len() != items.words_per_row {
        return Err(Error::Data(format!(
            "user code has {} words, item codes have {}",
            user.len(),
            items.words_per_row
        )));
    }
    Ok(popcnt_dispatch(user, items, k, exclude))
}

fn popcnt_dispatch(user: &[u64], items: &PackedCodes, k: usize, exclude: &[u32]) -> RankedList<i32> {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("popcnt") {
            // SAFETY: the CPU supports popcnt, checked just above.
            return unsafe { topk_popcnt(user, items, k, exclude) };
        }
    }
    topk_generic(user, items, k, exclude)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn topk_popcnt(user: &[u64], items: &PackedCodes, k: usize, exclude: &[u32]) -> RankedList<i32> {
    topk_generic(user, items, k, exclude)
}

#[inline(always)]
fn topk_generic(user: &[u64], items: &PackedCodes, k: usize, exclude: &[u32]) -> RankedList<i32> {
    let mut sel = TopK::new(k);
    let wpr = items.words_per_row;
    let d = items.d;
    let mut ex = exclude.iter().copied().peekable();
    for (i, row) in items.words.chunks_exact(wpr).enumerate() {
        let i = i as u32;
        while ex.next_if(|&e| e < i).is_some() {}
        if ex.next_if_eq(&i).is_some() {
            continue;
        }
        sel.offer(i, hamming_dot(user, row, d));
    }
    sel.finish()
}

/// `f32` dot product with eight independent accumulators.
#[inline(always)]
pub fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Row-major `f32` embeddings for the real-valued baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseF32 {
    pub rows: usize,
    pub d: usize,
    pub data: Vec<f32>,
}

impl DenseF32 {
    pub fn from_matrix(m: &DenseMatrix) -> Self {
        Self {
            rows: m.rows(),
            d: m.cols(),
            data: m.as_slice().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.d..(r + 1) * self.d]
    }
}

/// Dense top-K: the same selection as [`topk`] under `f32` inner products.
pub fn topk_dense(user: &[f32], items: &DenseF32, k: usize, exclude: &[u32]) -> Result<RankedList<f32>> {
    if k == 0 {
        return Err(Error::Config("K must be >= 1".into()));
    }
    if user.len() != items.d {
        return Err(Error::Data(format!("user vector has {} dims, items have {}", user.len(), items.d)));
    }
    let mut sel = TopK::new(k);
    let mut ex = exclude.iter().copied().peekable();
    for (i, row) in items.data.chunks_exact(items.d.max(1)).enumerate() {
        let i = i as u32;
        while ex.next_if(|&e| e < i).is_some() {}
        if ex.next_if_eq(&i).is_some() {
            continue;
        }
        sel.offer(i, dot_f32(user, row));
    }
    Ok(sel.finish())
}

/// Throughput of binary against dense retrieval on the same codes.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub d: usize,
    pub n: usize,
    pub k: usize,
    pub queries: usize,
    pub repetitions: usize,
    pub qps_binary: f64,
    pub qps_dense: f64,
    pub speedup: f64,
    /// Whether both paths produced the same ranked item lists.
    pub identical: bool,
    /// False when no timing samples were taken.
    pub valid: bool,
}

impl BenchReport {
    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.set("d", self.d)
            .set("N", self.n)
            .set("K", self.k)
            .set("qps_binary", self.qps_binary)
            .set("qps_dense", self.qps_dense)
            .set("speedup", self.speedup)
            .set("queries", self.queries)
            .set("repetitions", self.repetitions)
            .set("identical", self.identical)
            .set("valid", self.valid);
        kv
    }
}

/// Times top-K for every user row against `items`, `repetitions` times per
/// path, single-threaded. The dense baseline scores the unpacked ±1 codes in `f32`.
pub fn bench(users: &PackedCodes, items: &PackedCodes, k: usize, repetitions: usize) -> Result<BenchReport> {
    if users.d != items.d {
        return Err(Error::Data(format!("user codes d = {}, item codes d = {}", users.d, items.d)));
    }
    if k == 0 {
        return Err(Error::Config("K must be >= 1".into()));
    }
    let dense_users = DenseF32::from_matrix(&users.unpack());
    let dense_items = DenseF32::from_matrix(&items.unpack());

    // warm-up and correctness cross-check
    let mut identical = true;
    for u in 0..users.rows {
        let b = topk(users.row(u), items, k, &[])?;
        let f = topk_dense(dense_users.row(u), &dense_items, k, &[])?;
        identical &= b.items() == f.items();
    }

    let mut report = BenchReport {
        d: items.d,
        n: items.rows,
        k,
        queries: users.rows,
        repetitions,
        qps_binary: 0.0,
        qps_dense: 0.0,
        speedup: 0.0,
        identical,
        valid: repetitions > 0 && users.rows > 0,
    };
    if !report.valid {
        return Ok(report);
    }
    let total = (users.rows * repetitions) as f64;
    let mut sink = 0u64;
    let start = Instant::now();
    for _ in 0..repetitions {
        for u in 0..users.rows {
            let r = topk(users.row(u), items, k, &[])?;
            sink = sink.wrapping_add(r.entries.first().map_or(0, |e| e.0 as u64));
        }
    }
    let binary_secs = start.elapsed().as_secs_f64();
    let start = Instant::now();
    for _ in 0..repetitions {
        for u in 0..users.rows {
            let r = topk_dense(dense_users.row(u), &dense_items, k, &[])?;
            sink = sink.wrapping_add(r.entries.first().map_or(0, |e| e.0 as u64));
        }
    }
    let dense_secs = start.elapsed().as_secs_f64();
    std::hint::black_box(sink);
    report.qps_binary = total / binary_secs.max(f64::MIN_POSITIVE);
    report.qps_dense = total / dense_secs.max(f64::MIN_POSITIVE);
    report.speedup = report.qps_binary / report.qps_dense;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_plus_and_all_minus_rows() {
        let c = PackedCodes::pack(&DenseMatrix::filled(1, 64, 1.0)).unwrap();
        assert_eq!(c.words(), &[u64::MAX]);
        let c = PackedCodes::pack(&DenseMatrix::filled(1, 64, -1.0)).unwrap();
        assert_eq!(c.words(), &[0]);
    }

    #[test]
    fn pack_rejects_non_sign_entries() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 0.5]]).unwrap();
        assert!(PackedCodes::pack(&m).is_err());
    }

    #[test]
    fn sign_rule_and_padding() {
        let m = DenseMatrix::from_rows(&[vec![0.3, -2.0, 0.0]]).unwrap();
        let c = PackedCodes::from_signs_of(&m);
        assert_eq!(c.unpack().row(0), &[1.0, -1.0, 1.0]);
        assert_eq!(c.words(), &[0b101]);
        assert!(PackedCodes::from_words(1, 3, vec![0b1000]).is_err());
    }

    #[test]
    fn extreme_dots() {
        let a = [u64::MAX];
        assert_eq!(dot_binary(&a, &a, 64).unwrap(), 64);
        assert_eq!(dot_binary(&a, &[0], 64).unwrap(), -64);
        assert!(dot_binary(&a, &[0, 0], 64).is_err());
    }

    #[test]
    fn topk_small_cases() {
        let items = PackedCodes::pack(
            &DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![-1.0, -1.0], vec![1.0, -1.0]]).unwrap(),
        )
        .unwrap();
        let user = [0b11u64];
        let r = topk(&user, &items, 10, &[]).unwrap();
        assert_eq!(r.entries, vec![(0, 2), (2, 0), (1, -2)]);
        assert!(topk(&user, &items, 10, &[0, 1, 2]).unwrap().is_empty());
        assert_eq!(topk(&user, &items, 1, &[0]).unwrap().entries, vec![(2, 0)]);
        assert!(topk(&user, &items, 0, &[]).is_err());
    }

    #[test]
    fn ties_prefer_lower_index() {
        let items = PackedCodes::pack(&DenseMatrix::filled(5, 3, 1.0)).unwrap();
        let r = topk(&[0b111], &items, 3, &[1]).unwrap();
        assert_eq!(r.items(), vec![0, 2, 3]);
        let s = topk_scored([(4u32, 1.0f64), (2, 1.0), (9, 2.0), (0, 1.0)], 3).unwrap();
        assert_eq!(s.items(), vec![9, 0, 2]);
    }

    #[test]
    fn binc_round_trip_and_bad_version() {
        let m = DenseMatrix::from_rows(&[vec![1.0; 70], vec![-1.0; 70]]).unwrap();
        let c = PackedCodes::pack(&m).unwrap();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"BINC");
        assert_eq!(PackedCodes::from_bytes(&bytes).unwrap(), c);
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(PackedCodes::from_bytes(&bad).unwrap_err().contains("version"));
    }

    #[test]
    fn zero_repetitions_flagged_invalid() {
        let c = PackedCodes::pack(&DenseMatrix::filled(3, 8, 1.0)).unwrap();
        let r = bench(&c, &c, 2, 0).unwrap();
        assert!(!r.valid);
        assert_eq!(r.qps_binary, 0.0);
        assert!(r.identical);
        assert_eq!(r.to_kv().get("speedup"), Some("0"));
    }
}
