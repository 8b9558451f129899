//! On-disk index layout (little-endian throughout):
//!
//! ```text
//! magic        [u8; 8]   "LNGIDX\0\1"
//! version      u32
//! mode         u8        0 = flat_exact, 1 = ivf_approx
//! reserved     [u8; 3]
//! dim          u32
//! reserved     u32
//! n            u64
//! manifest     u32 length + UTF-8 JSON
//! id table     n × (u32 length + UTF-8 bytes)
//! ivf section  (mode 1 only) n_lists u32, n_probe u32, seed u64,
//!              centroids f32[n_lists × dim], offsets u64[n_lists + 1],
//!              members u32[n]
//! padding      zeros up to a 64-byte boundary
//! matrix       f32[n × dim], row-major
//! checksum     u32 CRC-32 of every preceding byte
//! ```
//!
//! The matrix is not copied on load: it is read straight out of the
//! memory map. The checksum is verified before anything else is parsed.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use memmap2::Mmap;

use super::{ranks, validate_rows, IvfLists, IvfParams, Manifest, Result, Rows, VectorIndex, VindexError};

pub const MAGIC: [u8; 8] = *b"LNGIDX\0\x01";
pub const FORMAT_VERSION: u32 = 2;

const MATRIX_ALIGN: usize = 64;
const FIXED_HEADER: usize = 32;

struct CrcWriter<W: Write> {
    inner: W,
    crc: crc32fast::Hasher,
    written: usize,
}

impl<W: Write> CrcWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.crc.update(bytes);
        self.written += bytes.len();
        self.inner.write_all(bytes)
    }
}

fn f32_bytes(values: &[f32]) -> std::borrow::Cow<'_, [u8]> {
    if cfg!(target_endian = "little") {
        std::borrow::Cow::Borrowed(bytemuck::cast_slice(values))
    } else {
        std::borrow::Cow::Owned(values.iter().flat_map(|v| v.to_le_bytes()).collect())
    }
}

pub fn save_index(index: &VectorIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp-write");
    {
        let file = File::create(&tmp)?;
        let mut w = CrcWriter { inner: BufWriter::with_capacity(1 << 20, file), crc: crc32fast::Hasher::new(), written: 0 };
        w.put(&MAGIC)?;
        w.put(&FORMAT_VERSION.to_le_bytes())?;
        w.put(&[index.ivf.is_some() as u8, 0, 0, 0])?;
        w.put(&(index.dim as u32).to_le_bytes())?;
        w.put(&0u32.to_le_bytes())?;
        w.put(&(index.len() as u64).to_le_bytes())?;
        let manifest = serde_json::to_vec(&index.manifest).expect("manifest serializes");
        w.put(&(manifest.len() as u32).to_le_bytes())?;
        w.put(&manifest)?;
        for id in &index.ids {
            w.put(&(id.len() as u32).to_le_bytes())?;
            w.put(id.as_bytes())?;
        }
        if let Some(ivf) = &index.ivf {
            w.put(&(ivf.params.n_lists as u32).to_le_bytes())?;
            w.put(&(ivf.params.n_probe as u32).to_le_bytes())?;
            w.put(&ivf.params.seed.to_le_bytes())?;
            w.put(&f32_bytes(&ivf.centroids))?;
            let mut offset = 0u64;
            w.put(&offset.to_le_bytes())?;
            for list in &ivf.lists {
                offset += list.len() as u64;
                w.put(&offset.to_le_bytes())?;
            }
            for list in &ivf.lists {
                for &row in list {
                    w.put(&row.to_le_bytes())?;
                }
            }
        }
        let pad = (MATRIX_ALIGN - w.written % MATRIX_ALIGN) % MATRIX_ALIGN;
        w.put(&vec![0u8; pad])?;
        w.put(&f32_bytes(index.matrix()))?;
        let crc = w.crc.clone().finalize();
        w.inner.write_all(&crc.to_le_bytes())?;
        let file = w.inner.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| VindexError::Corrupt(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| VindexError::Corrupt("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Verifies the trailing checksum of a complete index file image.
pub(crate) fn verify_checksum(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < FIXED_HEADER + 4 {
        return Err(VindexError::ChecksumMismatch);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(VindexError::ChecksumMismatch);
    }
    Ok(body)
}

pub fn load_index(path: impl AsRef<Path>) -> Result<VectorIndex> {
    let file = File::open(path.as_ref())?;
    // SAFETY: index files are written once via rename and never modified in
    // place; a concurrent external truncation is outside the contract.
    let map = Arc::new(unsafe { Mmap::map(&file)? });
    let body = verify_checksum(&map)?;
    let mut c = Cursor { buf: body, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(VindexError::BadMagic);
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(VindexError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let mode = c.take(4)?[0];
    let dim = c.u32()? as usize;
    c.u32()?;
    let n = c.u64()? as usize;
    if dim == 0 || n == 0 {
        return Err(VindexError::Corrupt("empty index".into()));
    }
    let manifest_len = c.u32()? as usize;
    let manifest: Manifest = serde_json::from_slice(c.take(manifest_len)?)
        .map_err(|e| VindexError::Corrupt(format!("manifest: {e}")))?;
    let mut ids = Vec::with_capacity(n.min(body.len()));
    for _ in 0..n {
        let len = c.u32()? as usize;
        let id = std::str::from_utf8(c.take(len)?).map_err(|_| VindexError::Corrupt("id is not UTF-8".into()))?;
        ids.push(id.to_string());
    }
    let ivf = match mode {
        0 => None,
        1 => {
            let n_lists = c.u32()? as usize;
            let n_probe = c.u32()? as usize;
            let seed = c.u64()?;
            if n_lists == 0 || n_probe == 0 || n_probe > n_lists || n_lists > n {
                return Err(VindexError::Corrupt("bad ivf parameters".into()));
            }
            let centroids = c.f32s(n_lists * dim)?;
            let offsets = (0..=n_lists).map(|_| c.u64()).collect::<Result<Vec<_>>>()?;
            if offsets[0] != 0 || offsets[n_lists] != n as u64 || offsets.windows(2).any(|w| w[0] > w[1]) {
                return Err(VindexError::Corrupt("bad ivf list offsets".into()));
            }
            let mut lists = Vec::with_capacity(n_lists);
            for w in offsets.windows(2) {
                let list = (w[0]..w[1]).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
                if list.iter().any(|&r| r as usize >= n) {
                    return Err(VindexError::Corrupt("ivf member out of range".into()));
                }
                lists.push(list);
            }
            Some(IvfLists { params: IvfParams { n_lists, n_probe, seed }, centroids, lists })
        }
        m => return Err(VindexError::Corrupt(format!("unknown mode byte {m}"))),
    };
    let pad = (MATRIX_ALIGN - c.pos % MATRIX_ALIGN) % MATRIX_ALIGN;
    c.take(pad)?;
    let offset = c.pos;
    let len = n * dim;
    if body.len() - offset != len * 4 {
        return Err(VindexError::Corrupt(format!(
            "matrix holds {} bytes, expected {}",
            body.len() - offset,
            len * 4
        )));
    }
    let aligned = (map.as_ptr() as usize + offset).is_multiple_of(std::mem::align_of::<f32>());
    let rows = if cfg!(target_endian = "little") && aligned {
        Rows::Mapped { map: map.clone(), offset, len }
    } else {
        Rows::Owned(c.f32s(len)?)
    };
    validate_rows(&ids, rows.as_slice(), dim)?;
    let rank = ranks(&ids);
    Ok(VectorIndex { dim, ids, rank, rows, ivf, manifest })
}
