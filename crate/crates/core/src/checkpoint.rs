//! `DGCB` checkpoint container for teacher and student parameters.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DGCB" | version u32 | M u32 | N u32 | D u32 | activation u8 | kind u8
//! arrays: rows u32 | cols u32 | rows*cols f32, row-major
//! hyperparameters: byte length u32 | key=value text
//! ```
//!
//! Teacher arrays: U0, V0, Θ0, Θ1, W1, W2, then for each batch norm
//! gamma, beta, running mean, running variance, then U, V.
//! Student arrays: P, Q.
//!
//! Values are stored as f32, so a checkpoint written from f64 training state
//! reads back rounded to f32; writing what was read reproduces the file byte for byte.

use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::numerics::{BatchNormState, DenseMatrix};
use crate::student::{StudentCheckpoint, StudentParams};
use crate::teacher::{Activation, Hyperparams, TeacherCheckpoint, TeacherEmbeddings, TeacherParams};

pub const DGCB_MAGIC: &[u8; 4] = b"DGCB";
pub const DGCB_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Teacher,
    Student,
}

impl CheckpointKind {
    fn tag(self) -> u8 {
        match self {
            CheckpointKind::Teacher => 0,
            CheckpointKind::Student => 1,
        }
    }
}

/// Fixed-size prefix of every checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub version: u32,
    pub users: u32,
    pub items: u32,
    pub dim: u32,
    pub activation: Activation,
    pub kind: CheckpointKind,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Data(format!("{v} does not fit in 32 bits")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn matrix(&mut self, m: &DenseMatrix) -> Result<()> {
        self.u32(m.rows())?;
        self.u32(m.cols())?;
        for &v in m.as_slice() {
            self.0.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Ok(())
    }

    fn row(&mut self, v: &[f64]) -> Result<()> {
        self.matrix(&DenseMatrix::from_vec(1, v.len(), v.to_vec())?)
    }

    fn hyper(&mut self, h: &Hyperparams) -> Result<()> {
        let text = h.to_kv().to_text();
        self.u32(text.len())?;
        self.0.extend_from_slice(text.as_bytes());
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<DenseMatrix, String> {
        let (r, c) = (self.u32()? as usize, self.u32()? as usize);
        if (r, c) != (rows, cols) {
            return Err(format!("array {name}: expected {rows}x{cols}, found {r}x{c}"));
        }
        let raw = self.take(r.checked_mul(c).and_then(|n| n.checked_mul(4)).ok_or("array too large")?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        DenseMatrix::from_vec(r, c, data).map_err(|e| e.to_string())
    }

    fn batch_norm(&mut self, name: &str, dim: usize) -> Result<BatchNormState, String> {
        let mut bn = BatchNormState::new(dim);
        bn.gamma = self.matrix(&format!("{name}.gamma"), 1, dim)?;
        bn.beta = self.matrix(&format!("{name}.beta"), 1, dim)?;
        bn.running_mean = self.matrix(&format!("{name}.running_mean"), 1, dim)?.into_vec();
        bn.running_var = self.matrix(&format!("{name}.running_var"), 1, dim)?.into_vec();
        Ok(bn)
    }

    fn hyper(&mut self) -> Result<Hyperparams, String> {
        let len = self.u32()? as usize;
        let text = std::str::from_utf8(self.take(len)?).map_err(|_| "hyperparameter block is not UTF-8")?;
        let kv = KvFile::parse(text).map_err(|e| e.to_string())?;
        Hyperparams::from_kv(&kv).map_err(|e| e.to_string())
    }

    fn finish(&self) -> Result<(), String> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(format!("{n} trailing bytes")),
        }
    }
}

fn header_bytes(h: &Header) -> Result<Writer> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(DGCB_MAGIC);
    w.u32(h.version as usize)?;
    w.u32(h.users as usize)?;
    w.u32(h.items as usize)?;
    w.u32(h.dim as usize)?;
    w.0.push(h.activation.tag());
    w.0.push(h.kind.tag());
    Ok(w)
}

/// Parses and checks the fixed prefix.
pub fn read_header(bytes: &[u8]) -> Result<Header, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| "not a DGCB checkpoint (file too short)")? != DGCB_MAGIC {
        return Err("not a DGCB checkpoint (bad magic)".into());
    }
    let version = r.u32()?;
    if version != DGCB_VERSION {
        return Err(format!(
            "checkpoint format version {version}, this build reads version {DGCB_VERSION}; \
             retrain with this build to upgrade the checkpoint"
        ));
    }
    let (users, items, dim) = (r.u32()?, r.u32()?, r.u32()?);
    let tail = r.take(2)?;
    let activation = Activation::from_tag(tail[0]).ok_or_else(|| format!("unknown activation tag {}", tail[0]))?;
    let kind = match tail[1] {
        0 => CheckpointKind::Teacher,
        1 => CheckpointKind::Student,
        t => return Err(format!("unknown checkpoint kind {t}")),
    };
    Ok(Header {
        version,
        users,
        items,
        dim,
        activation,
        kind,
    })
}

const HEADER_LEN: usize = 4 + 16 + 2;

pub fn teacher_to_bytes(c: &TeacherCheckpoint) -> Result<Vec<u8>> {
    let p = &c.params;
    let dim = p.dim();
    let mut w = header_bytes(&Header {
        version: DGCB_VERSION,
        users: p.num_users() as u32,
        items: p.num_items() as u32,
        dim: dim as u32,
        activation: p.activation,
        kind: CheckpointKind::Teacher,
    })?;
    for m in [&p.u0, &p.v0, &p.theta0, &p.theta1, &p.w1, &p.w2] {
        w.matrix(m)?;
    }
    for bn in [&p.bn1, &p.bn2] {
        w.matrix(&bn.gamma)?;
        w.matrix(&bn.beta)?;
        w.row(&bn.running_mean)?;
        w.row(&bn.running_var)?;
    }
    w.matrix(&c.embeddings.users)?;
    w.matrix(&c.embeddings.items)?;
    w.hyper(&c.hyper)?;
    Ok(w.0)
}

pub fn teacher_from_bytes(bytes: &[u8]) -> Result<TeacherCheckpoint, String> {
    let h = read_header(bytes)?;
    if h.kind != CheckpointKind::Teacher {
        return Err("expected a teacher checkpoint, found a student checkpoint".into());
    }
    let (m, n, d) = (h.users as usize, h.items as usize, h.dim as usize);
    let mut r = Reader {
        bytes,
        pos: HEADER_LEN,
    };
    let u0 = r.matrix("U0", m, d)?;
    let v0 = r.matrix("V0", n, d)?;
    let theta0 = r.matrix("Theta0", d, d)?;
    let theta1 = r.matrix("Theta1", d, d)?;
    let w1 = r.matrix("W1", m + n, d)?;
    let w2 = r.matrix("W2", m + n, d)?;
    let bn1 = r.batch_norm("bn1", d)?;
    let bn2 = r.batch_norm("bn2", d)?;
    let users = r.matrix("U", m, 3 * d)?;
    let items = r.matrix("V", n, 3 * d)?;
    let hyper = r.hyper()?;
    r.finish()?;
    Ok(TeacherCheckpoint {
        params: TeacherParams {
            u0,
            v0,
            theta0,
            theta1,
            w1,
            w2,
            bn1,
            bn2,
            activation: h.activation,
        },
        embeddings: TeacherEmbeddings { users, items },
        hyper,
    })
}

pub fn student_to_bytes(c: &StudentCheckpoint) -> Result<Vec<u8>> {
    let p = &c.params;
    let mut w = header_bytes(&Header {
        version: DGCB_VERSION,
        users: p.p.rows() as u32,
        items: p.q.rows() as u32,
        dim: c.hyper.dim as u32,
        activation: c.hyper.activation,
        kind: CheckpointKind::Student,
    })?;
    w.matrix(&p.p)?;
    w.matrix(&p.q)?;
    w.hyper(&c.hyper)?;
    Ok(w.0)
}

pub fn student_from_bytes(bytes: &[u8]) -> Result<StudentCheckpoint, String> {
    let h = read_header(bytes)?;
    if h.kind != CheckpointKind::Student {
        return Err("expected a student checkpoint, found a teacher checkpoint".into());
    }
    let (m, n, d) = (h.users as usize, h.items as usize, 3 * h.dim as usize);
    let mut r = Reader {
        bytes,
        pos: HEADER_LEN,
    };
    let p = r.matrix("P", m, d)?;
    let q = r.matrix("Q", n, d)?;
    let hyper = r.hyper()?;
    r.finish()?;
    Ok(StudentCheckpoint {
        params: StudentParams { p, q },
        hyper,
    })
}

fn read_file<T>(path: &Path, parse: impl Fn(&[u8]) -> Result<T, String>) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })
}

pub fn write_teacher(path: &Path, c: &TeacherCheckpoint) -> Result<()> {
    std::fs::write(path, teacher_to_bytes(c)?).map_err(|e| Error::io(path, e))
}

pub fn read_teacher(path: &Path) -> Result<TeacherCheckpoint> {
    read_file(path, teacher_from_bytes)
}

pub fn write_student(path: &Path, c: &StudentCheckpoint) -> Result<()> {
    std::fs::write(path, student_to_bytes(c)?).map_err(|e| Error::io(path, e))
}

pub fn read_student(path: &Path) -> Result<StudentCheckpoint> {
    read_file(path, student_from_bytes)
}
