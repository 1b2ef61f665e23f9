//! Flat little-endian checkpoint files.
//!
//! Layout: `u32` tensor count, then per tensor `u32` name length, UTF-8
//! name bytes, `u32` rank, `rank × u32` extents and the `f32` payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::ParamSet;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

fn u32_of(v: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| bad(format!("{what} {v} exceeds u32")))
}

pub fn encode(set: &ParamSet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend(u32_of(set.len(), "tensor count")?);
    for (name, t) in set.iter() {
        out.extend(u32_of(name.len(), "name length")?);
        out.extend(name.as_bytes());
        out.extend(u32_of(t.rank(), "rank")?);
        for &d in t.shape() {
            out.extend(u32_of(d, "extent")?);
        }
        for v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(buf: &[u8]) -> Result<ParamSet> {
    let mut c = Cursor { buf, pos: 0 };
    let count = c.u32()?;
    let mut set = ParamSet::new();
    for _ in 0..count {
        let len = c.u32()?;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|e| bad(format!("tensor name is not UTF-8: {e}")))?
            .to_owned();
        let rank = c.u32()?;
        let shape = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| bad(format!("{name}: extent overflow")))?;
        let bytes = c.take(n.checked_mul(4).ok_or_else(|| bad("payload overflow"))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        set.push(name, Tensor::new(&shape, data)?);
    }
    if c.pos != buf.len() {
        return Err(bad(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Ok(set)
}

pub fn write(set: &ParamSet, mut w: impl Write) -> Result<()> {
    let bytes = encode(set)?;
    w.write_all(&bytes)
        .map_err(|e| Error::io("<checkpoint writer>", e))
}

pub fn read(mut r: impl Read) -> Result<ParamSet> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::io("<checkpoint reader>", e))?;
    decode(&buf)
}

pub fn save(set: &ParamSet, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(set)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParamSet> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn arb_set() -> impl Strategy<Value = ParamSet> {
        let tensor = prop::collection::vec(1usize..4, 0..4).prop_flat_map(|shape| {
            let n: usize = shape.iter().product();
            (Just(shape), prop::collection::vec(any::<f32>(), n))
        });
        prop::collection::vec(("[a-z.0-9]{1,12}", tensor), 0..5).prop_map(|items| {
            let mut set = ParamSet::new();
            for (name, (shape, data)) in items {
                set.push(name, Tensor::new(&shape, data).unwrap());
            }
            set
        })
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(set in arb_set()) {
            let bytes = encode(&set).unwrap();
            let back = decode(&bytes).unwrap();
            prop_assert!(set.bit_equal(&back));
            prop_assert_eq!(encode(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn layout_is_little_endian() {
        let mut set = ParamSet::new();
        set.push("w", Tensor::new(&[2], vec![1.0, -2.0]).unwrap());
        let bytes = encode(&set).unwrap();
        let mut want = vec![1, 0, 0, 0, 1, 0, 0, 0, b'w', 1, 0, 0, 0, 2, 0, 0, 0];
        want.extend(1.0f32.to_le_bytes());
        want.extend((-2.0f32).to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn truncated_and_trailing_input_rejected() {
        let mut set = ParamSet::new();
        set.push("w", Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let bytes = encode(&set).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode(&longer).is_err());
    }
}
