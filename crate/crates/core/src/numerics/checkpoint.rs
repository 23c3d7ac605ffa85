//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "ADKCKPT\0"
//! version      u32      FORMAT_VERSION
//! precision    u32      bytes per element (4 or 8)
//! meta_len     u32      followed by meta_len bytes of UTF-8 metadata
//! count        u32      number of entries
//! entry*       name_len u32, name bytes, rank u32, rank x u64 dims,
//!              product(dims) little-endian floats
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{Element, Precision, Tensor};

pub const MAGIC: &[u8; 8] = b"ADKCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub metadata: String,
    pub entries: Vec<(String, Tensor<F>)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string(r: &mut impl Read, len: usize) -> Result<String> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| bad("string is not UTF-8"))
}

impl<F: Element> Checkpoint<F> {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(F::PRECISION.byte_width() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        buf.extend_from_slice(self.metadata.as_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut buf);
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let precision = read_header(r)?;
        if precision != F::PRECISION {
            return Err(bad(format!(
                "stored precision {precision:?} does not match requested {:?}",
                F::PRECISION
            )));
        }
        let meta_len = read_u32(r)? as usize;
        let metadata = read_string(r, meta_len)?;
        let count = read_u32(r)? as usize;
        let width = F::PRECISION.byte_width();
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let name = read_string(r, name_len)?;
            let rank = read_u32(r)? as usize;
            let shape = (0..rank)
                .map(|_| read_u64(r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let mut raw = vec![0u8; numel * width];
            r.read_exact(&mut raw)?;
            let data = raw.chunks_exact(width).map(F::read_le).collect();
            let tensor = Tensor::new(shape, data).map_err(|e| bad(format!("entry {name}: {e}")))?;
            entries.push((name, tensor));
        }
        Ok(Checkpoint { metadata, entries })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// Checks magic and version, returning the stored precision. Leaves the reader
/// positioned at the metadata length.
pub fn read_header(r: &mut impl Read) -> Result<Precision> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let width = read_u32(r)?;
    Precision::from_byte_width(width).ok_or_else(|| bad(format!("unsupported element width {width}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_preserves_entries(
            shapes in proptest::collection::vec(proptest::collection::vec(1usize..4, 1..4), 0..5),
            seed in any::<u64>(),
        ) {
            let mut rng = crate::numerics::Rng::new(seed, "ckpt");
            let entries: Vec<(String, Tensor<f32>)> = shapes
                .iter()
                .enumerate()
                .map(|(i, s)| (format!("layer{i}.weight"), rng.randn(s).unwrap()))
                .collect();
            let ckpt = Checkpoint { metadata: "{\"k\":1}".into(), entries };
            let mut bytes = Vec::new();
            ckpt.write_to(&mut bytes).unwrap();
            let back = Checkpoint::<f32>::read_from(&mut bytes.as_slice()).unwrap();
            prop_assert_eq!(back, ckpt);
        }
    }

    #[test]
    fn precision_mismatch_is_rejected() {
        let ckpt = Checkpoint {
            metadata: String::new(),
            entries: vec![("w".into(), Tensor::scalar(1.0f64))],
        };
        let mut bytes = Vec::new();
        ckpt.write_to(&mut bytes).unwrap();
        assert_eq!(read_header(&mut bytes.as_slice()).unwrap(), Precision::F64);
        assert!(Checkpoint::<f32>::read_from(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn header_layout_is_fixed() {
        let ckpt = Checkpoint::<f32> {
            metadata: "m".into(),
            entries: vec![("a".into(), Tensor::new(vec![2], vec![1.0, 2.0]).unwrap())],
        };
        let mut bytes = Vec::new();
        ckpt.write_to(&mut bytes).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"ADKCKPT\0");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&4u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.push(b'm');
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.push(b'a');
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&2.0f32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn truncated_and_garbage_inputs_fail() {
        assert!(Checkpoint::<f32>::read_from(&mut &b"NOTACKPT"[..]).is_err());
        assert!(Checkpoint::<f32>::read_from(&mut &MAGIC[..4]).is_err());
    }
}
