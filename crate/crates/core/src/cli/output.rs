//! File formats and the set of files written by one command.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariance::Scale;
use crate::error::{Error, Result};
use crate::fields::{FieldRealization, StructuredGrid, VariogramBin};

pub const GRID_MAGIC: &[u8; 8] = b"MSGPGRID";
pub const GRID_FORMAT_VERSION: u32 = 1;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Header of a binary grid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub grid: StructuredGrid,
    pub quantity: String,
    pub scale: Option<Scale>,
    pub seed: Option<u64>,
    /// Value order and encoding.
    pub layout: String,
}

const LAYOUT: &str = "f64-le, cell index i2*n1+i1";

/// `MSGPGRID`, format version (u32 LE), header length (u32 LE), JSON header,
/// then `n1 * n2` little-endian `f64` values.
pub fn encode_grid(grid: &StructuredGrid, values: &[f64], quantity: &str, scale: Option<Scale>, seed: Option<u64>) -> Vec<u8> {
    let header = GridHeader { grid: *grid, quantity: quantity.into(), scale, seed, layout: LAYOUT.into() };
    let h = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + h.len() + 8 * values.len());
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&GRID_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(h.len() as u32).to_le_bytes());
    out.extend_from_slice(&h);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<(GridHeader, Vec<f64>)> {
    let bad = |why: &str| Error::Parse(format!("grid file: {why}"));
    if bytes.len() < 16 || &bytes[..8] != GRID_MAGIC {
        return Err(bad("missing MSGPGRID signature"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != GRID_FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = bytes.get(16 + hlen..).ok_or_else(|| bad("truncated header"))?;
    let header: GridHeader = serde_json::from_slice(&bytes[16..16 + hlen])?;
    header.grid.validate()?;
    if body.len() != 8 * header.grid.len() {
        return Err(bad(&format!("{} payload bytes for {} cells", body.len(), header.grid.len())));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, values))
}

/// `x,y,value` rows at the cell centroids.
pub fn field_csv(grid: &StructuredGrid, values: &[f64]) -> String {
    let mut s = String::from("x,y,value\n");
    for (i, v) in values.iter().enumerate() {
        let c = grid.centroid(i);
        let _ = writeln!(s, "{},{},{}", num(c[0]), num(c[1]), num(*v));
    }
    s
}

/// A `lag,value,count,kind` table; empty `value` for empty bins, empty
/// `count` for model curves.
pub fn variogram_csv(rows: &[(f64, Option<f64>, Option<usize>, &str)]) -> String {
    let mut s = String::from("lag,value,count,kind\n");
    for (lag, value, count, kind) in rows {
        let v = value.map(num).unwrap_or_default();
        let c = count.map(|c| c.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{v},{c},{kind}", num(*lag));
    }
    s
}

pub fn empirical_rows(bins: &[VariogramBin]) -> Vec<(f64, Option<f64>, Option<usize>, &'static str)> {
    bins.iter().map(|b| (b.lag, b.value, Some(b.count), "empirical")).collect()
}

/// A file recorded in a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Files written by one command, relative to the output directory. On
/// failure every written file is removed by [`Outputs::discard`].
pub struct Outputs {
    dir: PathBuf,
    records: Vec<OutputRecord>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), records: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        let record = OutputRecord { path: rel.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 };
        match self.records.iter_mut().find(|r| r.path == rel) {
            Some(r) => *r = record,
            None => self.records.push(record),
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// `<stem>.csv` and `<stem>.msgpgrid`.
    pub fn write_grid(&mut self, stem: &str, grid: &StructuredGrid, values: &[f64], quantity: &str, scale: Option<Scale>, seed: Option<u64>) -> Result<()> {
        self.write(&format!("{stem}.csv"), field_csv(grid, values).as_bytes())?;
        self.write(&format!("{stem}.msgpgrid"), &encode_grid(grid, values, quantity, scale, seed))
    }

    pub fn write_field(&mut self, stem: &str, f: &FieldRealization, quantity: &str) -> Result<()> {
        self.write_grid(stem, &f.grid, &f.values, quantity, Some(f.scale), Some(f.seed))
    }

    pub fn records(&self) -> &[OutputRecord] {
        &self.records
    }

    /// Removes everything written so far.
    pub fn discard(&mut self) {
        self.discard_except(&[]);
    }

    /// Removes everything written so far except `keep`.
    pub fn discard_except(&mut self, keep: &[String]) {
        let (kept, gone): (Vec<_>, Vec<_>) = self.records.drain(..).partition(|r| keep.contains(&r.path));
        for r in gone {
            let _ = fs::remove_file(self.dir.join(&r.path));
        }
        self.records = kept;
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read `{}`: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("`{}`: {e}", path.display())))
}

pub fn read_field(path: &Path) -> Result<FieldRealization> {
    let bytes = fs::read(path).map_err(|e| Error::Config(format!("cannot read `{}`: {e}", path.display())))?;
    let (h, values) = decode_grid(&bytes)?;
    FieldRealization::new(h.grid, values, h.scale.unwrap_or(Scale::Fine), h.seed.unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            let s = num(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn grid_file_round_trips() {
        let g = StructuredGrid::new([0.0, 0.0], [2.0, 1.0], [4, 2]).unwrap();
        let v: Vec<f64> = (0..8).map(|i| i as f64 / 7.0).collect();
        let bytes = encode_grid(&g, &v, "log-conductivity", Some(Scale::Coarse), Some(9));
        let (h, w) = decode_grid(&bytes).unwrap();
        assert_eq!((h.grid, h.scale, h.seed), (g, Some(Scale::Coarse), Some(9)));
        assert_eq!(w, v);
        assert!(decode_grid(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_grid(b"NOTAGRID12345678").is_err());
    }

    #[test]
    fn csv_layouts() {
        let g = StructuredGrid::new([0.0, 0.0], [1.0, 1.0], [1, 1]).unwrap();
        assert_eq!(field_csv(&g, &[2.0]), "x,y,value\n5.0000000000000000e-1,5.0000000000000000e-1,2.0000000000000000e0\n");
        let t = variogram_csv(&[(0.5, None, Some(0), "empirical"), (0.5, Some(1.0), None, "true")]);
        assert_eq!(t.lines().nth(1).unwrap(), "5.0000000000000000e-1,,0,empirical");
        assert!(t.lines().nth(2).unwrap().ends_with(",,true"));
    }

    #[test]
    fn discard_removes_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut o = Outputs::new(dir.path()).unwrap();
        o.write("a/b.txt", b"x").unwrap();
        assert!(dir.path().join("a/b.txt").exists());
        assert_eq!(o.records()[0].sha256, sha256_hex(b"x"));
        o.discard();
        assert!(!dir.path().join("a/b.txt").exists());
    }
}
