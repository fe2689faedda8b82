//! `RPW1` weight container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic  "RPW1"
//! u32    tensor count
//! repeat:
//!   u16  name length, then the UTF-8 name
//!   u8   rank, then u32 extents[rank]
//!   f64  values in row-major order
//! ```

use std::io::{Read, Write};

use super::{NnError, Tensor};

pub const MAGIC: &[u8; 4] = b"RPW1";

pub type NamedTensor = (String, Tensor);

pub fn write_container<W: Write>(mut w: W, tensors: &[NamedTensor]) -> Result<(), NnError> {
    let count = u32::try_from(tensors.len()).map_err(|_| NnError::ContainerCorrupt("too many tensors".into()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let name_len =
            u16::try_from(name.len()).map_err(|_| NnError::ContainerCorrupt(format!("name too long: {name}")))?;
        let rank = u8::try_from(t.rank()).map_err(|_| NnError::ContainerCorrupt(format!("rank too large: {name}")))?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(rank);
        for &e in t.shape() {
            let e = u32::try_from(e).map_err(|_| NnError::ContainerCorrupt(format!("extent too large: {name}")))?;
            buf.extend_from_slice(&e.to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Cursor<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            NnError::ContainerCorrupt(format!("unexpected end of data at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], NnError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn read_container<R: Read>(mut r: R) -> Result<Vec<NamedTensor>, NnError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(NnError::ContainerCorrupt("bad magic".into()));
    }
    let count = u32::from_le_bytes(c.array()?);
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(c.array()?) as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| NnError::ContainerCorrupt("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(c.array()?) as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| NnError::ContainerCorrupt(format!("implausible shape {shape:?} for {name}")))?;
        let raw = c.take(n * 8)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if c.pos != bytes.len() {
        return Err(NnError::ContainerCorrupt(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(out)
}
