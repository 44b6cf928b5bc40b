//! Binary tensor container and CSV import.
//!
//! Layout: `b"HYPT"`, version `u8 = 1`, dtype `u8` (0 = f32, 1 = f64),
//! rank `u8`, `rank` little-endian `u64` dims, then the row-major
//! little-endian payload. Nothing may follow the payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};

use crate::error::{HyperError, Result};

pub const MAGIC: &[u8; 4] = b"HYPT";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(HyperError::format(format!("unknown dtype code {other}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Decoded tensor. Values are always held as f64; `dtype` records the
/// on-disk precision.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dtype: DType,
    pub data: ArrayD<f64>,
}

impl TensorFile {
    pub fn new(dtype: DType, data: ArrayD<f64>) -> Self {
        Self { dtype, data }
    }

    pub fn from_matrix(dtype: DType, m: Array2<f64>) -> Self {
        Self::new(dtype, m.into_dyn())
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn to_matrix(&self) -> Result<Array2<f64>> {
        self.data.clone().into_dimensionality().map_err(|_| {
            HyperError::shape(format!(
                "expected a rank-2 tensor, got shape {:?}",
                self.shape()
            ))
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let rank =
            u8::try_from(self.data.ndim()).map_err(|_| HyperError::format("rank exceeds 255"))?;
        let mut out =
            Vec::with_capacity(7 + 8 * rank as usize + self.data.len() * self.dtype.size());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.dtype.code());
        out.push(rank);
        for &d in self.data.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        // Logical iteration order is row-major regardless of memory layout.
        for &v in self.data.iter() {
            match self.dtype {
                DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 7 {
            return Err(HyperError::format("file shorter than the header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(HyperError::format("bad magic"));
        }
        if bytes[4] != VERSION {
            return Err(HyperError::format(format!(
                "unsupported version {}",
                bytes[4]
            )));
        }
        let dtype = DType::from_code(bytes[5])?;
        let rank = bytes[6] as usize;
        let dims_end = 7 + 8 * rank;
        if bytes.len() < dims_end {
            return Err(HyperError::format("truncated dims"));
        }
        let mut dims = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for chunk in bytes[7..dims_end].chunks_exact(8) {
            let d = u64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
            let d =
                usize::try_from(d).map_err(|_| HyperError::format("dimension overflows usize"))?;
            count = count
                .checked_mul(d)
                .ok_or_else(|| HyperError::format("element count overflows"))?;
            dims.push(d);
        }
        let payload = &bytes[dims_end..];
        let expected = count
            .checked_mul(dtype.size())
            .ok_or_else(|| HyperError::format("payload size overflows"))?;
        if payload.len() != expected {
            return Err(HyperError::format(format!(
                "payload is {} bytes, expected {expected}",
                payload.len()
            )));
        }
        let values: Vec<f64> = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
                .collect(),
            DType::F64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        };
        let data = ArrayD::from_shape_vec(IxDyn(&dims), values)
            .map_err(|e| HyperError::format(e.to_string()))?;
        Ok(Self { dtype, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| HyperError::config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Headerless numeric CSV, one matrix row per line.
pub fn read_csv_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => HyperError::Io(io),
            other => HyperError::format(format!("{other:?}")),
        })?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| HyperError::format(e.to_string()))?;
        if cols.is_some_and(|c| c != record.len()) {
            return Err(HyperError::format(format!(
                "row {rows} has {} fields",
                record.len()
            )));
        }
        cols = Some(record.len());
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| HyperError::format(format!("not a number: {field:?}")))?;
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| HyperError::format("empty CSV"))?;
    Array2::from_shape_vec((rows, cols), values).map_err(|e| HyperError::format(e.to_string()))
}

/// Reads a `.csv` file through the CSV importer, anything else as a tensor file.
pub fn read_matrix_any(path: &Path) -> Result<Array2<f64>> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        read_csv_matrix(path)
    } else {
        TensorFile::read(path)?.to_matrix()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn header_layout() {
        let t = TensorFile::from_matrix(DType::F64, array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let b = t.to_bytes().unwrap();
        assert_eq!(&b[..4], b"HYPT");
        assert_eq!(b[4..7], [1, 1, 2]);
        assert_eq!(u64::from_le_bytes(b[7..15].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[15..23].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(b[23..31].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(b[31..39].try_into().unwrap()), 2.0);
        assert_eq!(b.len(), 23 + 6 * 8);
    }

    #[test]
    fn transposed_view_written_row_major() {
        let m = array![[1.0, 2.0], [3.0, 4.0]].reversed_axes();
        let t = TensorFile::from_matrix(DType::F64, m.clone());
        let back = TensorFile::from_bytes(&t.to_bytes().unwrap()).unwrap();
        assert_eq!(back.to_matrix().unwrap(), m);
    }

    #[test]
    fn f32_rounds_once() {
        let t = TensorFile::from_matrix(DType::F32, array![[0.1, -2.5]]);
        let back = TensorFile::from_bytes(&t.to_bytes().unwrap()).unwrap();
        assert_eq!(back.data[[0, 0]], 0.1f32 as f64);
        assert_eq!(back.data[[0, 1]], -2.5);
        let again = TensorFile::from_bytes(&back.to_bytes().unwrap()).unwrap();
        assert_eq!(again, back);
    }

    #[test]
    fn rejects_malformed() {
        let good = TensorFile::from_matrix(DType::F64, array![[1.0]])
            .to_bytes()
            .unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            TensorFile::from_bytes(&bad),
            Err(HyperError::Format(_))
        ));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(TensorFile::from_bytes(&bad).is_err());
        let mut bad = good.clone();
        bad[5] = 7;
        assert!(TensorFile::from_bytes(&bad).is_err());
        let mut bad = good.clone();
        bad.push(0);
        assert!(TensorFile::from_bytes(&bad).is_err());
        assert!(TensorFile::from_bytes(&good[..good.len() - 1]).is_err());
        assert!(TensorFile::from_bytes(&good[..5]).is_err());
    }

    #[test]
    fn scalar_and_empty_tensors() {
        let s = TensorFile::new(DType::F64, ArrayD::from_elem(IxDyn(&[]), 3.5));
        let back = TensorFile::from_bytes(&s.to_bytes().unwrap()).unwrap();
        assert_eq!(back, s);
        let e = TensorFile::new(DType::F32, ArrayD::zeros(IxDyn(&[0, 4])));
        let back = TensorFile::from_bytes(&e.to_bytes().unwrap()).unwrap();
        assert_eq!(back.shape(), &[0, 4]);
    }

    #[test]
    fn rank_mismatch_for_matrix() {
        let t = TensorFile::new(DType::F64, ArrayD::zeros(IxDyn(&[2, 2, 2])));
        assert!(matches!(t.to_matrix(), Err(HyperError::Shape(_))));
    }

    #[test]
    fn csv_import() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        fs::write(&p, "1, 2.5\n-3,4e-1\n").unwrap();
        assert_eq!(
            read_matrix_any(&p).unwrap(),
            array![[1.0, 2.5], [-3.0, 0.4]]
        );
        fs::write(&p, "1,2\n3\n").unwrap();
        assert!(read_csv_matrix(&p).is_err());
        fs::write(&p, "1,abc\n").unwrap();
        assert!(read_csv_matrix(&p).is_err());
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.hypt");
        TensorFile::from_matrix(DType::F64, array![[1.0]])
            .write(&p)
            .unwrap();
        let names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names, vec![std::ffi::OsString::from("t.hypt")]);
    }
}
