//! LTEN binary tensors and CSV matrix ingestion.
//!
//! LTEN layout (all little-endian):
//!
//! | bytes       | field                         |
//! |-------------|-------------------------------|
//! | 4           | magic `LTEN`                  |
//! | 2           | version, u16 = 1              |
//! | 1           | dtype, u8 (0 = float32)       |
//! | 1           | ndim, u8                      |
//! | 4 · ndim    | dims, u32 each                |
//! | 4 · Π dims  | payload, row-major float32    |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAGIC: &[u8; 4] = b"LTEN";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;

/// An n-dimensional float32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::DimensionMismatch {
                what: "tensor payload",
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            dims: vec![m.rows(), m.cols()],
            data: m.as_slice().iter().map(|&v| v as f32).collect(),
        }
    }

    /// Interprets a 2-D tensor as a matrix.
    pub fn to_matrix(&self) -> Result<Matrix> {
        if self.dims.len() != 2 {
            return Err(Error::invalid(format!(
                "expected a 2-D tensor, got {} dimensions",
                self.dims.len()
            )));
        }
        Matrix::from_vec(
            self.dims[0],
            self.dims[1],
            self.data.iter().map(|&v| v as f64).collect(),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(DTYPE_F32);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err("missing LTEN magic".into());
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(format!("unsupported LTEN version {version}"));
        }
        if bytes[6] != DTYPE_F32 {
            return Err(format!("unsupported dtype code {}", bytes[6]));
        }
        let ndim = bytes[7] as usize;
        let header = 8 + 4 * ndim;
        if bytes.len() < header {
            return Err("truncated dimension header".into());
        }
        let dims: Vec<usize> = bytes[8..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or("dimension product overflows")?;
        let payload = &bytes[header..];
        if payload.len() != 4 * count {
            return Err(format!(
                "payload is {} bytes, dims require {}",
                payload.len(),
                4 * count
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes).map_err(|cause| Error::format(path, cause))
}

/// Whether the file starts with the LTEN magic.
pub fn is_lten(path: impl AsRef<Path>) -> Result<bool> {
    use std::io::Read;
    let path = path.as_ref();
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 4];
    Ok(f.read_exact(&mut magic).is_ok() && &magic == MAGIC)
}

/// A labelled numeric table read from CSV: header, then `id,v0,v1,...` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub column_names: Vec<String>,
    pub row_ids: Vec<String>,
    pub values: Matrix,
}

pub fn read_csv_table(path: impl AsRef<Path>) -> Result<CsvTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv_table(&text).map_err(|cause| Error::format(path, cause))
}

pub fn parse_csv_table(text: &str) -> std::result::Result<CsvTable, String> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| e.to_string())?.clone();
    if header.len() < 2 {
        return Err("CSV header needs an id column and at least one value column".into());
    }
    let width = header.len() - 1;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| e.to_string())?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(format!(
                "line {line}: expected {} fields, found {}",
                header.len(),
                record.len()
            ));
        }
        ids.push(record[0].to_string());
        for f in record.iter().skip(1) {
            let v: f64 = f
                .parse()
                .map_err(|_| format!("line {line}: cannot parse {f:?} as a number"))?;
            data.push(v);
        }
    }
    let rows = ids.len();
    Ok(CsvTable {
        column_names: header.iter().skip(1).map(str::to_string).collect(),
        row_ids: ids,
        values: Matrix::from_vec(rows, width, data).map_err(|e| e.to_string())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(&bytes[..4], b"LTEN");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 2]);
        assert_eq!(&bytes[8..16], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 24);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(Tensor::from_bytes(b"NOPE\x01\x00\x00\x00").is_err());
        let mut bytes = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().to_bytes();
        bytes.pop();
        assert!(Tensor::from_bytes(&bytes).unwrap_err().contains("payload"));
        let mut v2 = Tensor::new(vec![1], vec![1.0]).unwrap().to_bytes();
        v2[4] = 2;
        assert!(Tensor::from_bytes(&v2).unwrap_err().contains("version"));
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn csv_parsing() {
        let t = parse_csv_table("clip_id,a,b\nx,1,2\ny,3.5,-4\n").unwrap();
        assert_eq!(t.column_names, vec!["a", "b"]);
        assert_eq!(t.row_ids, vec!["x", "y"]);
        assert_eq!(t.values.row(1), &[3.5, -4.0]);
        assert!(parse_csv_table("id,a\nx,1,2\n").unwrap_err().contains("line 2"));
        assert!(parse_csv_table("id,a\nx,abc\n").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(rows in 0usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let data: Vec<f32> = (0..rows * cols)
                .map(|i| f32::from_bits(crate::rng::stream_seed(seed, i as u64) as u32))
                .filter(|v| v.is_finite())
                .collect();
            let t = Tensor::new(vec![data.len()], data).unwrap();
            let back = Tensor::from_bytes(&t.to_bytes()).unwrap();
            prop_assert_eq!(back.dims, t.dims);
            prop_assert!(back.data.iter().zip(&t.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
