//! Binary embedding files.
//!
//! `KEMB` (pooled vectors), all integers little-endian:
//!
//! ```text
//! magic "KEMB" | version u32 = 1 | D u32 | N u32
//! N × ( id_len u16 | id utf-8 | D × f32 )
//! ```
//!
//! `KMAP` (feature maps) follows the same layout with `C u32 | H u32 | W u32`
//! in place of `D` and `C·H·W` channel-major f32 values per record.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{EmbeddingStore, FeatureMap, FeatureMapStore, FeatureVector};
use crate::error::{Error, Result};

pub const KEMB_MAGIC: [u8; 4] = *b"KEMB";
pub const KMAP_MAGIC: [u8; 4] = *b"KMAP";
pub const FORMAT_VERSION: u32 = 1;
pub const KEMB_HEADER_LEN: usize = 16;
pub const KMAP_HEADER_LEN: usize = 24;

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn to_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} does not fit in u32")))
}

fn push_record(buf: &mut Vec<u8>, id: &str, values: &[f32]) -> Result<()> {
    let len = u16::try_from(id.len())
        .map_err(|_| Error::Format(format!("id of {} bytes exceeds 65535", id.len())))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(id.as_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn encode_store(store: &EmbeddingStore) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(KEMB_HEADER_LEN + store.len() * (8 + 4 * store.dim()));
    buf.extend_from_slice(&KEMB_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&to_u32(store.dim(), "dimension")?.to_le_bytes());
    buf.extend_from_slice(&to_u32(store.len(), "record count")?.to_le_bytes());
    for (id, values) in store.iter() {
        push_record(&mut buf, id, values)?;
    }
    Ok(buf)
}

pub fn write_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_store(store)?)
}

pub fn encode_map_store(store: &FeatureMapStore) -> Result<Vec<u8>> {
    let (c, h, w) = store.shape();
    let mut buf = Vec::new();
    buf.extend_from_slice(&KMAP_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for n in [c, h, w] {
        buf.extend_from_slice(&to_u32(n, "map extent")?.to_le_bytes());
    }
    buf.extend_from_slice(&to_u32(store.len(), "record count")?.to_le_bytes());
    for map in store.iter() {
        push_record(&mut buf, &map.image_id, &map.values)?;
    }
    Ok(buf)
}

pub fn write_map_store(store: &FeatureMapStore, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_map_store(store)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated file: needed {n} bytes at offset {}, {} remain",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn magic(&mut self) -> Result<[u8; 4]> {
        Ok(self.take(4)?.try_into().unwrap())
    }

    fn version(&mut self) -> Result<()> {
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "version mismatch: file has {version}, expected {FORMAT_VERSION}"
            )));
        }
        Ok(())
    }

    fn record(&mut self, n_values: usize) -> Result<(String, Vec<f32>)> {
        let len = self.u16()? as usize;
        let id = std::str::from_utf8(self.take(len)?)
            .map_err(|e| Error::Format(format!("id is not utf-8: {e}")))?
            .to_string();
        let raw = self.take(
            n_values
                .checked_mul(4)
                .ok_or_else(|| Error::Format("record size overflows".into()))?,
        )?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok((id, values))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last record (dimension disagreement?)",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn bad_magic(found: [u8; 4]) -> Error {
    Error::Format(format!("bad magic {:?}", String::from_utf8_lossy(&found)))
}

fn decode_store_body(r: &mut Reader<'_>) -> Result<EmbeddingStore> {
    r.version()?;
    let dim = r.u32()? as usize;
    let n = r.u32()? as usize;
    let mut store = EmbeddingStore::new(dim)?;
    for _ in 0..n {
        let (id, values) = r.record(dim)?;
        store.insert(FeatureVector {
            image_id: id,
            values,
        })?;
    }
    r.finish()?;
    Ok(store)
}

fn decode_map_body(r: &mut Reader<'_>) -> Result<FeatureMapStore> {
    r.version()?;
    let (c, h, w) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let n = r.u32()? as usize;
    let mut store = FeatureMapStore::new(c, h, w)?;
    for _ in 0..n {
        let (id, values) = r.record(c * h * w)?;
        store.insert(FeatureMap::new(id, c, h, w, values)?)?;
    }
    r.finish()?;
    Ok(store)
}

pub fn decode_store(bytes: &[u8]) -> Result<EmbeddingStore> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.magic()?;
    if magic != KEMB_MAGIC {
        return Err(bad_magic(magic));
    }
    decode_store_body(&mut r)
}

pub fn decode_map_store(bytes: &[u8]) -> Result<FeatureMapStore> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.magic()?;
    if magic != KMAP_MAGIC {
        return Err(bad_magic(magic));
    }
    decode_map_body(&mut r)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    decode_store(&read_bytes(path.as_ref())?)
}

pub fn read_map_store(path: impl AsRef<Path>) -> Result<FeatureMapStore> {
    decode_map_store(&read_bytes(path.as_ref())?)
}

/// Either kind of embedding file, dispatched on its magic.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyStore {
    Vectors(EmbeddingStore),
    Maps(FeatureMapStore),
}

pub fn read_any(path: impl AsRef<Path>) -> Result<AnyStore> {
    let bytes = read_bytes(path.as_ref())?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    match r.magic()? {
        KEMB_MAGIC => decode_store_body(&mut r).map(AnyStore::Vectors),
        KMAP_MAGIC => decode_map_body(&mut r).map(AnyStore::Maps),
        other => Err(bad_magic(other)),
    }
}
