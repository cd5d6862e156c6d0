//! Matrix and snapshot-dataset types with bit-exact persistence.
//!
//! The binary `DMDMAT01` layout is:
//!
//! | bytes | content                                     |
//! |-------|---------------------------------------------|
//! | 0..8  | ASCII magic `DMDMAT01`                      |
//! | 8..16 | rows, `u64` little-endian                   |
//! | 16..24| cols, `u64` little-endian                   |
//! | 24..  | `rows * cols` IEEE-754 binary64 values, little-endian, row-major |
//!
//! A CSV mirror (one matrix row per line, comma separated, 17 significant
//! digits) is written for plotting tools; the binary file is authoritative.

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Dense real matrix. Held column-major in memory; persisted row-major.
pub type RealMatrix = DMatrix<f64>;

pub const MAGIC: &[u8; 8] = b"DMDMAT01";
const HEADER_LEN: usize = 24;

/// Rejects matrices containing NaN or infinite entries.
pub fn ensure_finite(mat: &RealMatrix, what: &str) -> Result<()> {
    if let Some(idx) = mat.iter().position(|v| !v.is_finite()) {
        let (r, c) = (idx % mat.nrows(), idx / mat.nrows());
        return Err(Error::InvalidData(format!(
            "{what}: non-finite entry at ({r}, {c})"
        )));
    }
    Ok(())
}

pub fn encode_matrix(mat: &RealMatrix) -> Result<Vec<u8>> {
    ensure_finite(mat, "matrix")?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * mat.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(mat.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(mat.ncols() as u64).to_le_bytes());
    for r in 0..mat.nrows() {
        for c in 0..mat.ncols() {
            out.extend_from_slice(&mat[(r, c)].to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes a `DMDMAT01` buffer. `path` is only used in error messages.
pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<RealMatrix> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::NotAMatrixFile(path.to_path_buf()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            detail: "truncated header".into(),
        });
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Corrupt {
            path: path.to_path_buf(),
            detail: format!("dimensions {rows}x{cols} overflow"),
        })?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != expected {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            detail: format!(
                "header claims {rows}x{cols} ({} values) but payload holds {} bytes",
                rows * cols,
                payload.len()
            ),
        });
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mat = DMatrix::from_row_iterator(rows, cols, &mut values);
    ensure_finite(&mat, &path.display().to_string())?;
    Ok(mat)
}

pub fn write_matrix(path: impl AsRef<Path>, mat: &RealMatrix) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_matrix(mat)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<RealMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes, path)
}

/// Writes the CSV mirror: one row per line, `{:.16e}` (17 significant digits).
pub fn write_csv(path: impl AsRef<Path>, mat: &RealMatrix) -> Result<()> {
    let path = path.as_ref();
    ensure_finite(mat, "matrix")?;
    let mut text = String::with_capacity(mat.len() * 24);
    for r in 0..mat.nrows() {
        for c in 0..mat.ncols() {
            if c > 0 {
                text.push(',');
            }
            text.push_str(&format!("{:.16e}", mat[(r, c)]));
        }
        text.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// State and input snapshots, one column per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotDataset {
    states: RealMatrix,
    inputs: RealMatrix,
    dt: f64,
}

impl SnapshotDataset {
    pub fn new(states: RealMatrix, inputs: RealMatrix, dt: f64) -> Result<Self> {
        if states.ncols() != inputs.ncols() {
            return Err(Error::DimensionMismatch {
                context: "snapshot count (inputs vs states)",
                expected: states.ncols(),
                found: inputs.ncols(),
            });
        }
        if states.ncols() < 2 {
            return Err(Error::InsufficientSnapshots(states.ncols()));
        }
        if states.nrows() == 0 || inputs.nrows() == 0 {
            return Err(Error::InvalidData(
                "state and input dimensions must be at least 1".into(),
            ));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidData(format!("dt must be positive, got {dt}")));
        }
        ensure_finite(&states, "states")?;
        ensure_finite(&inputs, "inputs")?;
        Ok(SnapshotDataset { states, inputs, dt })
    }

    pub fn states(&self) -> &RealMatrix {
        &self.states
    }

    pub fn inputs(&self) -> &RealMatrix {
        &self.inputs
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn state_dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }

    /// Sub-dataset over a column range (e.g. the training prefix or the validation tail).
    pub fn columns(&self, range: Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.start > range.end {
            return Err(Error::IndexOutOfRange {
                index: range.end,
                len: self.len(),
            });
        }
        let k = range.end - range.start;
        SnapshotDataset::new(
            self.states.columns(range.start, k).into_owned(),
            self.inputs.columns(range.start, k).into_owned(),
            self.dt,
        )
    }

    /// Restricts the state rows to the given indices (sensor subset).
    pub fn select_states(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.state_dim()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: self.state_dim(),
            });
        }
        SnapshotDataset::new(self.states.select_rows(rows), self.inputs.clone(), self.dt)
    }

    /// Writes `states.dmdmat`, `inputs.dmdmat` and `dataset.txt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_matrix(dir.join("states.dmdmat"), &self.states)?;
        write_matrix(dir.join("inputs.dmdmat"), &self.inputs)?;
        let meta = format!(
            "n = {}\nq = {}\nm = {}\ndt = {:?}\n",
            self.state_dim(),
            self.input_dim(),
            self.len(),
            self.dt
        );
        let p = dir.join("dataset.txt");
        fs::write(&p, meta).map_err(|e| Error::io(p, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let states = read_matrix(dir.join("states.dmdmat"))?;
        let inputs = read_matrix(dir.join("inputs.dmdmat"))?;
        let meta_path = dir.join("dataset.txt");
        let meta = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let dt = parse_key_values(&meta)
            .into_iter()
            .find(|(k, _)| k == "dt")
            .and_then(|(_, v)| v.parse::<f64>().ok())
            .ok_or_else(|| Error::Corrupt {
                path: meta_path.clone(),
                detail: "missing dt".into(),
            })?;
        SnapshotDataset::new(states, inputs, dt)
    }
}

/// The shifted snapshot matrices `X`, `Y` and the input matrix `Ups`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSplit {
    pub x: RealMatrix,
    pub y: RealMatrix,
    pub ups: RealMatrix,
}

pub fn split_snapshots(ds: &SnapshotDataset) -> Result<SnapshotSplit> {
    let m = ds.len();
    if m < 2 {
        return Err(Error::InsufficientSnapshots(m));
    }
    Ok(SnapshotSplit {
        x: ds.states.columns(0, m - 1).into_owned(),
        y: ds.states.columns(1, m - 1).into_owned(),
        ups: ds.inputs.columns(0, m - 1).into_owned(),
    })
}

/// Parses `key = value` lines, skipping blanks and `#` comments.
pub(crate) fn parse_key_values(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| {
            let (k, v) = l.split_once('=')?;
            Some((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tmp();
        let p = dir.path().join("a.dmdmat");
        let m = DMatrix::from_row_slice(3, 2, &[1.0, -0.0, 1e-300, 3.25, f64::MAX, -7.5e10]);
        write_matrix(&p, &m).unwrap();
        let back = read_matrix(&p).unwrap();
        assert_eq!(back.shape(), (3, 2));
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn one_by_one_file_is_32_bytes() {
        let dir = tmp();
        let p = dir.path().join("z.dmdmat");
        write_matrix(&p, &DMatrix::from_element(1, 1, 0.0)).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 32);
    }

    #[test]
    fn payload_is_row_major() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let bytes = encode_matrix(&m).unwrap();
        let second = f64::from_le_bytes(bytes[32..40].try_into().unwrap());
        assert_eq!(second, 2.0);
    }

    #[test]
    fn nan_is_rejected_before_write() {
        let dir = tmp();
        let p = dir.path().join("nan.dmdmat");
        let m = DMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        assert!(matches!(write_matrix(&p, &m), Err(Error::InvalidData(_))));
        assert!(!p.exists());
    }

    #[test]
    fn bad_magic_is_reported() {
        let dir = tmp();
        let p = dir.path().join("bad.dmdmat");
        let mut bytes = b"XXXXXXXX".to_vec();
        bytes.extend_from_slice(&[0u8; 16]);
        fs::write(&p, bytes).unwrap();
        let err = read_matrix(&p).unwrap_err();
        assert!(matches!(err, Error::NotAMatrixFile(_)));
        assert!(err.to_string().contains("not a matrix file"));
    }

    #[test]
    fn short_payload_is_corrupt() {
        let dir = tmp();
        let p = dir.path().join("short.dmdmat");
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&10u64.to_le_bytes());
        bytes.extend_from_slice(&10u64.to_le_bytes());
        for i in 0..50 {
            bytes.extend_from_slice(&(i as f64).to_le_bytes());
        }
        fs::write(&p, bytes).unwrap();
        let err = read_matrix(&p).unwrap_err();
        assert!(err.to_string().contains("corrupt"), "{err}");
    }

    #[test]
    fn nan_in_file_is_invalid_data() {
        let dir = tmp();
        let p = dir.path().join("nanfile.dmdmat");
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&f64::INFINITY.to_le_bytes());
        fs::write(&p, bytes).unwrap();
        let err = read_matrix(&p).unwrap_err();
        assert!(err.to_string().contains("invalid data"), "{err}");
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_matrix("/nonexistent/dir/m.dmdmat").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/m.dmdmat"));
    }

    #[test]
    fn csv_uses_seventeen_significant_digits() {
        let dir = tmp();
        let p = dir.path().join("m.csv");
        let m = DMatrix::from_row_slice(2, 2, &[0.1, 2.0, -3.0, 1.0 / 3.0]);
        write_csv(&p, &m).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let back: Vec<f64> = lines
            .iter()
            .flat_map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()))
            .collect();
        assert_eq!(back, vec![0.1, 2.0, -3.0, 1.0 / 3.0]);
    }

    fn dataset(m: usize) -> SnapshotDataset {
        let states = DMatrix::from_fn(2, m, |i, j| (10 * j + i) as f64);
        let inputs = DMatrix::from_fn(1, m, |_, j| -(j as f64));
        SnapshotDataset::new(states, inputs, 1.0).unwrap()
    }

    #[test]
    fn split_shifts_columns() {
        let s = split_snapshots(&dataset(3)).unwrap();
        assert_eq!(s.x, DMatrix::from_row_slice(2, 2, &[0.0, 10.0, 1.0, 11.0]));
        assert_eq!(s.y, DMatrix::from_row_slice(2, 2, &[10.0, 20.0, 11.0, 21.0]));
        assert_eq!(s.ups, DMatrix::from_row_slice(1, 2, &[0.0, -1.0]));
    }

    #[test]
    fn split_minimal_case_has_single_columns() {
        let s = split_snapshots(&dataset(2)).unwrap();
        assert_eq!(s.x.ncols(), 1);
        assert_eq!(s.y.ncols(), 1);
        assert_eq!(s.ups.ncols(), 1);
    }

    #[test]
    fn single_snapshot_is_insufficient() {
        let err = SnapshotDataset::new(DMatrix::zeros(2, 1), DMatrix::zeros(1, 1), 1.0).unwrap_err();
        assert!(matches!(err, Error::InsufficientSnapshots(1)));
        assert!(err.to_string().contains("insufficient snapshots"));
    }

    #[test]
    fn dataset_roundtrips_through_directory() {
        let dir = tmp();
        let ds = dataset(5);
        ds.save(dir.path()).unwrap();
        assert_eq!(SnapshotDataset::load(dir.path()).unwrap(), ds);
    }

    proptest! {
        #[test]
        fn encode_decode_identity(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let mut s = crate::rng::Stream::new(seed, "matio");
            let m = DMatrix::from_fn(rows, cols, |_, _| s.uniform(-1e6, 1e6));
            let back = decode_matrix(&encode_matrix(&m).unwrap(), Path::new("mem")).unwrap();
            prop_assert!(m.iter().zip(back.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }

        #[test]
        fn split_y_column_k_is_state_k_plus_one(m in 2usize..12) {
            let ds = dataset(m);
            let s = split_snapshots(&ds).unwrap();
            for k in 0..m - 1 {
                prop_assert_eq!(s.y.column(k), ds.states().column(k + 1));
                prop_assert_eq!(s.x.column(k), ds.states().column(k));
            }
        }
    }
}
