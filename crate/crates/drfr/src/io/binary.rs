//! The `DRFR` dataset container: a little-endian binary layout with exact
//! labels and 32-bit feature precision.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dataset, Sample};

const MAGIC: &[u8; 4] = b"DRFR";
const VERSION: u16 = 1;

// Layout: magic, version u16, dim u32, count u64, then per sample:
// id length u32 + UTF-8 bytes, identity u32, age u16, dim × f32.

/// Serializes a dataset. Features are narrowed to f32.
pub fn save_binary(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    if dataset.dim() == 0 {
        return Err(Error::format("dataset header", "dim must be positive".to_string()));
    }
    if dataset.is_empty() {
        return Err(Error::format("dataset header", "count must be positive".to_string()));
    }
    let mut buf = Vec::with_capacity(16 + dataset.len() * (16 + 4 * dataset.dim()));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(dataset.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    for s in dataset.samples() {
        let id = s.id.as_bytes();
        if id.len() > u32::MAX as usize {
            return Err(Error::format("sample id", "id longer than u32 range".to_string()));
        }
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id);
        buf.extend_from_slice(&s.identity.to_le_bytes());
        buf.extend_from_slice(&s.age.to_le_bytes());
        for &v in &s.features {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path.as_ref(), buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format("dataset file", "truncated file".to_string()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Deserializes a dataset, verifying the header, UTF-8 ids, id uniqueness,
/// and that the file holds exactly the declared payload.
pub fn load_binary(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };

    if cur.take(4)? != MAGIC {
        return Err(Error::format("dataset file", "bad magic".to_string()));
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(Error::format(
            "dataset file",
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let dim = cur.u32()? as usize;
    let count = cur.u64()? as usize;
    if dim == 0 {
        return Err(Error::format("dataset file", "dim must be positive".to_string()));
    }
    if count == 0 {
        return Err(Error::format("dataset file", "count must be positive".to_string()));
    }

    let mut samples = Vec::with_capacity(count);
    let mut seen = HashSet::with_capacity(count);
    for i in 0..count {
        let id_len = cur.u32()? as usize;
        let id = std::str::from_utf8(cur.take(id_len)?)
            .map_err(|_| Error::format("sample id", format!("sample {i}: id is not UTF-8")))?
            .to_string();
        let identity = cur.u32()?;
        let age = cur.u16()?;
        let mut features = Vec::with_capacity(dim);
        for _ in 0..dim {
            features.push(cur.f32()? as f64);
        }
        if !seen.insert(id.clone()) {
            return Err(Error::format("dataset file", format!("duplicate id `{id}`")));
        }
        samples.push(Sample::new(id, identity, age, features));
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(
            "dataset file",
            format!("{} trailing bytes after declared payload", bytes.len() - cur.pos),
        ));
    }
    Ok(Dataset::new(samples, dim))
}
