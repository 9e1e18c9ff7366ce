//! Output formats: the functional time series as CSV and binary state snapshots.
//!
//! Snapshot layout (all integers little-endian):
//!
//! ```text
//! "NSLG"  u32 version  u8 model (0 full, 1 perturb)  u8 dim  u32 n[dim]  u32 field_count
//! per field: u32 name_len  name (UTF-8)  u8 rank  f64 values (point-major, components innermost)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::energetics::FunctionalSample;
use crate::grid::{Field, Grid, Rank};
use crate::state::{FullState, PerturbState};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"NSLG";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    BadVersion(u32),
    #[error("truncation in header")]
    TruncatedHeader,
    #[error("truncation at field {0}")]
    Truncation(usize),
    #[error("malformed snapshot: {0}")]
    Format(String),
}

/// Writes the series header and one row per sample.
pub fn write_series<W: Write>(out: &mut W, samples: &[FunctionalSample]) -> std::io::Result<()> {
    writeln!(out, "{}", FunctionalSample::COLUMNS.join(","))?;
    for s in samples {
        let row: Vec<String> = s.row().iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_series_file(path: &Path, samples: &[FunctionalSample]) -> Result<(), IoError> {
    let mut buf = Vec::new();
    write_series(&mut buf, samples)?;
    fs::write(path, buf)?;
    Ok(())
}

/// State of either model.
#[derive(Debug, Clone, PartialEq)]
pub enum Snapshot {
    Full(FullState),
    Perturb(PerturbState),
}

impl Snapshot {
    fn grid(&self) -> &Grid {
        match self {
            Snapshot::Full(s) => s.grid(),
            Snapshot::Perturb(s) => s.grid(),
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Snapshot::Full(_) => 0,
            Snapshot::Perturb(_) => 1,
        }
    }

    fn fields(&self) -> Vec<(&'static str, Field)> {
        match self {
            Snapshot::Full(s) => vec![("rho", s.rho.clone()), ("v", s.v.clone()), ("F", s.f.clone()), ("M", s.m.clone())],
            Snapshot::Perturb(s) => vec![
                ("theta", s.theta.clone()),
                ("u", s.u.clone()),
                ("psi", s.psi.clone()),
                ("d", s.d.clone()),
                ("M_e", Field::constant(s.grid(), Rank::Vector, &s.m_e)),
            ],
        }
    }
}

pub fn encode_snapshot(snap: &Snapshot) -> Vec<u8> {
    let grid = snap.grid();
    let mut out = Vec::new();
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.push(snap.tag());
    out.push(grid.dim() as u8);
    for &n in grid.n_per_axis() {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    let fields = snap.fields();
    out.extend_from_slice(&(fields.len() as u32).to_le_bytes());
    for (name, field) in fields {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(field.rank().code());
        for v in field.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Snapshot, IoError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4).ok_or(IoError::TruncatedHeader)?;
    if magic != SNAPSHOT_MAGIC {
        return Err(IoError::BadMagic);
    }
    let version = r.u32().ok_or(IoError::TruncatedHeader)?;
    if version != SNAPSHOT_VERSION {
        return Err(IoError::BadVersion(version));
    }
    let tag = r.u8().ok_or(IoError::TruncatedHeader)?;
    let dim = r.u8().ok_or(IoError::TruncatedHeader)? as usize;
    if !(1..=3).contains(&dim) {
        return Err(IoError::Format(format!("dimension {dim}")));
    }
    let mut n = Vec::with_capacity(dim);
    for _ in 0..dim {
        n.push(r.u32().ok_or(IoError::TruncatedHeader)? as usize);
    }
    let grid = Grid::new(&n).map_err(|e| IoError::Format(e.to_string()))?;
    let count = r.u32().ok_or(IoError::TruncatedHeader)? as usize;
    let mut fields = Vec::with_capacity(count);
    for k in 0..count {
        let len = r.u32().ok_or(IoError::Truncation(k))? as usize;
        let name = r.take(len).ok_or(IoError::Truncation(k))?;
        let name = String::from_utf8(name.to_vec()).map_err(|_| IoError::Format(format!("field {k} name is not UTF-8")))?;
        let rank = Rank::from_code(r.u8().ok_or(IoError::Truncation(k))?)
            .ok_or_else(|| IoError::Format(format!("field {k} has an unknown rank code")))?;
        let total = grid.total_points() * rank.components();
        let raw = r.take(total * 8).ok_or(IoError::Truncation(k))?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        fields.push((name, Field::from_values(&grid, rank, values).map_err(|e| IoError::Format(e.to_string()))?));
    }
    if r.pos != bytes.len() {
        return Err(IoError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    assemble(tag, fields)
}

fn assemble(tag: u8, fields: Vec<(String, Field)>) -> Result<Snapshot, IoError> {
    let take = |name: &str, rank: Rank| -> Result<Field, IoError> {
        let f = fields
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, f)| f.clone())
            .ok_or_else(|| IoError::Format(format!("missing field {name}")))?;
        if f.rank() != rank {
            return Err(IoError::Format(format!("field {name} has rank {:?}", f.rank())));
        }
        Ok(f)
    };
    match tag {
        0 => Ok(Snapshot::Full(FullState {
            rho: take("rho", Rank::Scalar)?,
            v: take("v", Rank::Vector)?,
            f: take("F", Rank::Matrix)?,
            m: take("M", Rank::Vector)?,
        })),
        1 => {
            let me = take("M_e", Rank::Vector)?;
            let m_e = [me.values()[0], me.values()[1], me.values()[2]];
            Ok(Snapshot::Perturb(PerturbState {
                theta: take("theta", Rank::Scalar)?,
                u: take("u", Rank::Vector)?,
                psi: take("psi", Rank::Vector)?,
                d: take("d", Rank::Vector)?,
                m_e,
            }))
        }
        t => Err(IoError::Format(format!("unknown model tag {t}"))),
    }
}

pub fn write_snapshot(path: &Path, snap: &Snapshot) -> Result<(), IoError> {
    fs::write(path, encode_snapshot(snap))?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, IoError> {
    decode_snapshot(&fs::read(path)?)
}

/// Reads an external field stored as a snapshot-format file holding one vector field.
pub fn read_vector_field(path: &Path) -> Result<Field, IoError> {
    let bytes = fs::read(path)?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(4).ok_or(IoError::TruncatedHeader)? != SNAPSHOT_MAGIC {
        return Err(IoError::BadMagic);
    }
    let version = r.u32().ok_or(IoError::TruncatedHeader)?;
    if version != SNAPSHOT_VERSION {
        return Err(IoError::BadVersion(version));
    }
    let _tag = r.u8().ok_or(IoError::TruncatedHeader)?;
    let dim = r.u8().ok_or(IoError::TruncatedHeader)? as usize;
    let n: Vec<usize> = (0..dim).map(|_| r.u32().map(|x| x as usize)).collect::<Option<_>>().ok_or(IoError::TruncatedHeader)?;
    let grid = Grid::new(&n).map_err(|e| IoError::Format(e.to_string()))?;
    let count = r.u32().ok_or(IoError::TruncatedHeader)?;
    if count != 1 {
        return Err(IoError::Format(format!("expected one field, found {count}")));
    }
    let len = r.u32().ok_or(IoError::Truncation(0))? as usize;
    r.take(len).ok_or(IoError::Truncation(0))?;
    let rank = Rank::from_code(r.u8().ok_or(IoError::Truncation(0))?);
    if rank != Some(Rank::Vector) {
        return Err(IoError::Format("external field must be a vector field".into()));
    }
    let raw = r.take(grid.total_points() * 24).ok_or(IoError::Truncation(0))?;
    let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Field::from_values(&grid, Rank::Vector, values).map_err(|e| IoError::Format(e.to_string()))
}

/// Writes a single named vector field in snapshot layout (model tag 0).
pub fn write_vector_field(path: &Path, name: &str, field: &Field) -> Result<(), IoError> {
    let grid = field.grid();
    let mut out = Vec::new();
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.push(0);
    out.push(grid.dim() as u8);
    for &n in grid.n_per_axis() {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(Rank::Vector.code());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}
