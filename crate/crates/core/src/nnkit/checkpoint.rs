//! `DARF` tensor container: magic, `u32` version, then named records
//! (`u16` name length, name, `u8` rank, `u64` dims, little-endian `f32`
//! payload) until end of file.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nnkit::{ParamStore, Tensor};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"DARF";
pub const VERSION: u32 = 1;
/// Name prefix for EMA shadow weights.
pub const EMA_PREFIX: &str = "ema/";
/// Name prefix for non-parameter records (architecture, provenance).
pub const META_PREFIX: &str = "meta/";

pub fn encode_record<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    let nb = name.as_bytes();
    out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
    out.extend_from_slice(nb);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
}

/// Tensor payload in the DARF layout, without a name. Used by other formats.
pub fn encode_payload<T: Scalar>(out: &mut Vec<u8>, t: &Tensor<T>) {
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
}

/// Little-endian cursor over a byte buffer.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.buf.len()
    }

    pub fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.buf.len() {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn payload<T: Scalar>(&mut self) -> std::result::Result<Tensor<T>, String> {
        let rank = self.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let bytes = self.take(n.checked_mul(4).ok_or("tensor too large")?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        Tensor::new(shape, data).map_err(|e| e.to_string())
    }
}

pub fn to_bytes<T: Scalar>(records: &[(String, Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in records {
        encode_record(&mut out, name, t);
    }
    out
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> std::result::Result<Vec<(String, Tensor<T>)>, String> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let mut out = Vec::new();
    while !r.at_end() {
        let n = r.u16()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| e.to_string())?;
        out.push((name, r.payload()?));
    }
    Ok(out)
}

pub fn write_tensors<T: Scalar>(path: &Path, records: &[(String, Tensor<T>)]) -> Result<()> {
    let bytes = to_bytes(records);
    let mut f = std::fs::File::create(path).map_err(Error::io(path))?;
    f.write_all(&bytes).map_err(Error::io(path))
}

pub fn read_tensors<T: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(Error::io(path))?;
    from_bytes(&buf).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}

/// Named records for a parameter store, optionally followed by EMA shadows.
pub fn store_records<T: Scalar>(store: &ParamStore<T>, ema: Option<&[Tensor<T>]>) -> Vec<(String, Tensor<T>)> {
    let mut out: Vec<(String, Tensor<T>)> = store.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
    if let Some(shadow) = ema {
        for (p, s) in store.iter().zip(shadow) {
            out.push((format!("{EMA_PREFIX}{}", p.name), s.clone()));
        }
    }
    out
}

/// A numeric metadata record. Values travel as `f32`, so integers are exact
/// up to 2^24.
pub fn meta_number<T: Scalar>(name: &str, value: f64) -> (String, Tensor<T>) {
    (format!("{META_PREFIX}{name}"), Tensor::scalar(T::lit(value)))
}

/// A text metadata record, one byte per element.
pub fn meta_text<T: Scalar>(name: &str, text: &str) -> (String, Tensor<T>) {
    let bytes: Vec<T> = text.bytes().map(|b| T::lit(b as f64)).collect();
    let n = bytes.len();
    (
        format!("{META_PREFIX}{name}"),
        Tensor::new(vec![n], bytes).expect("length matches"),
    )
}

fn find_meta<'a, T>(records: &'a [(String, Tensor<T>)], name: &str) -> Result<&'a Tensor<T>> {
    let key = format!("{META_PREFIX}{name}");
    records
        .iter()
        .find(|(n, _)| *n == key)
        .map(|(_, t)| t)
        .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks `{key}`")))
}

pub fn find_number<T: Scalar>(records: &[(String, Tensor<T>)], name: &str) -> Result<f64> {
    find_meta(records, name).map(|t| t.item().as_f64())
}

pub fn find_text<T: Scalar>(records: &[(String, Tensor<T>)], name: &str) -> Result<String> {
    let t = find_meta(records, name)?;
    let bytes: Vec<u8> = t.data().iter().map(|v| v.as_f64() as u8).collect();
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(format!("meta/{name}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::new(vec![2], vec![1.0, -2.0]).unwrap();
        let bytes = to_bytes(&[("ab".to_string(), t)]);
        assert_eq!(&bytes[..4], b"DARF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u16::from_le_bytes(bytes[8..10].try_into().unwrap()), 2);
        assert_eq!(&bytes[10..12], b"ab");
        assert_eq!(bytes[12], 1);
        assert_eq!(u64::from_le_bytes(bytes[13..21].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(bytes[21..25].try_into().unwrap()), 1.0);
        assert_eq!(bytes.len(), 29);
    }

    #[test]
    fn truncated_file_rejected() {
        let t = Tensor::<f32>::zeros(vec![3, 2]);
        let bytes = to_bytes(&[("x".to_string(), t)]);
        assert!(from_bytes::<f32>(&bytes[..bytes.len() - 1]).is_err());
        assert!(from_bytes::<f32>(b"XXXX\x01\0\0\0").is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(shape in proptest::collection::vec(1usize..4, 0..4), seed in any::<u32>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n).map(|i| ((i as u32).wrapping_mul(seed) % 1000) as f32 * 0.01 - 5.0).collect();
            let t = Tensor::new(shape, data).unwrap();
            let recs = vec![("layer/w".to_string(), t.clone()), ("ema/layer/w".to_string(), t)];
            let back = from_bytes::<f32>(&to_bytes(&recs)).unwrap();
            prop_assert_eq!(back, recs);
        }
    }

    #[test]
    fn meta_records_round_trip() {
        let recs: Vec<(String, Tensor<f32>)> = vec![meta_number("width", 64.0), meta_text("hash", "ab12 é")];
        let back: Vec<(String, Tensor<f32>)> = from_bytes(&to_bytes(&recs)).unwrap();
        assert_eq!(find_number(&back, "width").unwrap(), 64.0);
        assert_eq!(find_text(&back, "hash").unwrap(), "ab12 é");
        assert!(find_number(&back, "depth").is_err());
    }
}
