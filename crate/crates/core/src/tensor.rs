//! Binary tensor files: one JSON header line followed by raw little-endian f64.
//!
//! ```text
//! {"dims":[64,16],"dtype":"f64","order":"row-major","seed":42}\n
//! <8 * 64 * 16 bytes>
//! ```

use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub dims: Vec<usize>,
    pub dtype: String,
    pub order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub header: TensorHeader,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>, seed: Option<u64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::DimensionMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            header: TensorHeader {
                dims,
                dtype: "f64".into(),
                order: "row-major".into(),
                seed,
            },
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.header.dims
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_string(&self.header)
            .map_err(|e| Error::Tensor(e.to_string()))?;
        w.write_all(header.as_bytes())?;
        w.write_all(b"\n")?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)?;
        if line.last() != Some(&b'\n') {
            return Err(Error::Tensor("missing header line".into()));
        }
        let header: TensorHeader = serde_json::from_slice(&line[..line.len() - 1])
            .map_err(|e| Error::Tensor(format!("header: {e}")))?;
        if header.dtype != "f64" {
            return Err(Error::Tensor(format!("unsupported dtype {}", header.dtype)));
        }
        if header.order != "row-major" {
            return Err(Error::Tensor(format!("unsupported order {}", header.order)));
        }
        let count: usize = header.dims.iter().product();
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != 8 * count {
            return Err(Error::Tensor(format!(
                "body has {} bytes, expected {}",
                body.len(),
                8 * count
            )));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self { header, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], Some(42)).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let nl = buf.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&buf[..nl]).unwrap(),
            r#"{"dims":[2,3],"dtype":"f64","order":"row-major","seed":42}"#
        );
        assert_eq!(buf.len() - nl - 1, 48);
        assert_eq!(&buf[nl + 1..nl + 9], &1.0f64.to_le_bytes());
    }

    #[test]
    fn rejects_malformed_files() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3], None).is_err());
        let bad_len = b"{\"dims\":[2],\"dtype\":\"f64\",\"order\":\"row-major\"}\n\0\0\0\0\0\0\0\0";
        assert!(matches!(Tensor::read_from(&bad_len[..]), Err(Error::Tensor(_))));
        let bad_type = b"{\"dims\":[0],\"dtype\":\"f32\",\"order\":\"row-major\"}\n";
        assert!(Tensor::read_from(&bad_type[..]).is_err());
        assert!(Tensor::read_from(&b"{}"[..]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(data in proptest::collection::vec(proptest::num::f64::ANY, 0..64), seed in proptest::option::of(any::<u64>())) {
            let t = Tensor::new(vec![data.len()], data, seed).unwrap();
            let mut buf = Vec::new();
            t.write_to(&mut buf).unwrap();
            let back = Tensor::read_from(&buf[..]).unwrap();
            prop_assert_eq!(&back.header, &t.header);
            let same = back.data.iter().zip(&t.data).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
