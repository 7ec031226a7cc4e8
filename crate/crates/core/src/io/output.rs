//! On-disk formats: CSV norm series, JSON reports and binary snapshots.
//!
//! Snapshot layout (all little-endian):
//!
//! ```text
//! b"SLLB" | u32 version | u32 dim | dim × (u32 N, f64 L) | 3 × (Π N) f64
//! ```
//!
//! The three blocks are the x, y, z coefficient vectors in row-major mode
//! order (axis 0 slowest).

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::NormSample;
use crate::scalar::Scalar;
use crate::spectral::{Grid, PadFactor, Space, SpectralField};

pub const CSV_HEADER: [&str; 8] = ["t", "l2", "l4", "h1", "h2", "h3", "grad_l2", "theta_arg"];
pub const SNAPSHOT_MAGIC: &[u8; 4] = b"SLLB";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Version string recorded in reports.
pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

fn io_err<'a>(context: &'static str, path: &'a Path) -> impl FnOnce(std::io::Error) -> Error + 'a {
    move |source| Error::Io {
        context,
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Io {
        context: "writing csv",
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// Header plus one row per sample.
pub fn write_norm_csv<T: Scalar>(path: &Path, samples: &[NormSample<T>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(CSV_HEADER).map_err(csv_err(path))?;
    for s in samples {
        let row = [s.t, s.l2, s.l4, s.h1, s.h2, s.h3, s.grad_l2, s.theta_arg];
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err("writing csv", path))
}

/// Generic table with a caller-chosen header.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err("writing csv", path))
}

pub fn read_norm_csv(path: &Path) -> Result<Vec<NormSample<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::InvalidArgument(format!("unexpected csv header {header:?}")));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let v: Vec<f64> = rec
            .iter()
            .map(|x| x.parse().map_err(|_| Error::InvalidArgument(format!("bad number {x:?}"))))
            .collect::<Result<_>>()?;
        out.push(NormSample {
            t: v[0],
            l2: v[1],
            l4: v[2],
            h1: v[3],
            h2: v[4],
            h3: v[5],
            grad_l2: v[6],
            theta_arg: v[7],
        });
    }
    Ok(out)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let file = File::create(path).map_err(io_err("creating report", path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io {
        context: "writing report",
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    w.write_all(b"\n").map_err(io_err("writing report", path))?;
    w.flush().map_err(io_err("writing report", path))
}

pub fn write_snapshot<T: Scalar>(path: &Path, field: &SpectralField<T>) -> Result<()> {
    let grid = field.grid();
    let mut buf = Vec::with_capacity(12 + grid.dim() * 12 + 24 * field.mode_count());
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    for (&n, &l) in grid.modes().iter().zip(grid.lengths()) {
        buf.extend_from_slice(&(n as u32).to_le_bytes());
        buf.extend_from_slice(&l.as_f64().to_le_bytes());
    }
    for block in field.coeffs() {
        for v in block {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(io_err("writing snapshot", path))
}

/// Decoded snapshot file.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub lengths: Vec<f64>,
    pub modes: Vec<usize>,
    pub coeffs: [Vec<f64>; 3],
}

impl Snapshot {
    pub fn to_field<T: Scalar>(&self, pad: PadFactor) -> Result<SpectralField<T>> {
        let lengths: Vec<T> = self.lengths.iter().map(|&l| T::of(l)).collect();
        let space = Space::new(Grid::with_pad(&lengths, &self.modes, pad)?);
        let coeffs = self.coeffs.clone().map(|b| b.into_iter().map(T::of).collect());
        SpectralField::from_coeffs(&space, coeffs)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.at + N;
        let chunk = self
            .bytes
            .get(self.at..end)
            .ok_or_else(|| Error::Snapshot(format!("truncated at byte {}", self.at)))?;
        self.at = end;
        Ok(chunk.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err("reading snapshot", path))?;
    decode_snapshot(&bytes)
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Snapshot> {
    let mut c = Cursor { bytes, at: 0 };
    if &c.take::<4>()? != SNAPSHOT_MAGIC {
        return Err(Error::Snapshot("missing SLLB magic".into()));
    }
    let version = c.u32()?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    let dim = c.u32()? as usize;
    if !(1..=3).contains(&dim) {
        return Err(Error::Snapshot(format!("dimension {dim} not in 1..=3")));
    }
    let mut modes = Vec::with_capacity(dim);
    let mut lengths = Vec::with_capacity(dim);
    for _ in 0..dim {
        modes.push(c.u32()? as usize);
        lengths.push(c.f64()?);
    }
    let count: usize = modes.iter().product();
    if bytes.len() != c.at + 24 * count {
        return Err(Error::Snapshot(format!(
            "expected {} coefficient bytes, found {}",
            24 * count,
            bytes.len() - c.at
        )));
    }
    let mut block = || (0..count).map(|_| c.f64()).collect::<Result<Vec<_>>>();
    let coeffs = [block()?, block()?, block()?];
    Ok(Snapshot {
        lengths,
        modes,
        coeffs,
    })
}

/// Creates `dir`, refusing a non-empty existing directory unless `force`.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<PathBuf> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(io_err("reading output dir", dir))?;
        if entries.next().is_some() && !force {
            return Err(Error::Io {
                context: "output directory is not empty (use --force to overwrite)",
                path: dir.to_path_buf(),
                source: std::io::Error::from(std::io::ErrorKind::AlreadyExists),
            });
        }
    } else {
        fs::create_dir_all(dir).map_err(io_err("creating output dir", dir))?;
    }
    Ok(dir.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::random_field;

    #[test]
    fn snapshot_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let space = Space::new(Grid::new(&[1.0, 2.5], &[4, 3]).unwrap());
        for field in [SpectralField::<f64>::zeros(&space), random_field(&space, 5, 0, 1.0)] {
            let path = dir.path().join("u.sllb");
            write_snapshot(&path, &field).unwrap();
            let back: SpectralField<f64> = read_snapshot(&path).unwrap().to_field(PadFactor::default()).unwrap();
            for c in 0..3 {
                let a: Vec<u64> = field.component(c).iter().map(|v| v.to_bits()).collect();
                let b: Vec<u64> = back.component(c).iter().map(|v| v.to_bits()).collect();
                assert_eq!(a, b);
            }
            assert_eq!(fs::metadata(&path).unwrap().len(), 12 + 2 * 12 + 24 * 12);
        }
    }

    #[test]
    fn snapshot_rejects_corruption() {
        let space = Space::new(Grid::new(&[1.0], &[3]).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.sllb");
        write_snapshot(&path, &SpectralField::<f64>::zeros(&space)).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(decode_snapshot(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_snapshot(&bad).is_err());
        let mut v2 = bytes;
        v2[4] = 9;
        assert!(decode_snapshot(&v2).is_err());
    }

    #[test]
    fn csv_has_header_plus_rows() {
        let dir = tempfile::tempdir().unwrap();
        let space = Space::new(Grid::new(&[1.0], &[3]).unwrap());
        let u = random_field(&space, 1, 0, 1.0);
        let samples: Vec<_> = (0..3).map(|i| NormSample::measure(i as f64, &u)).collect();
        let path = dir.path().join("s.csv");
        write_norm_csv(&path, &samples).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().next().unwrap(), "t,l2,l4,h1,h2,h3,grad_l2,theta_arg");
        assert_eq!(read_norm_csv(&path).unwrap(), samples);
    }

    #[test]
    fn output_dir_protection() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        prepare_output_dir(&out, false).unwrap();
        prepare_output_dir(&out, false).unwrap();
        fs::write(out.join("x"), "1").unwrap();
        assert!(matches!(prepare_output_dir(&out, false), Err(Error::Io { .. })));
        prepare_output_dir(&out, true).unwrap();
    }
}
