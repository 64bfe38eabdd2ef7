//! Flat binary parameter container.
//!
//! Layout of `params.bin` (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "MLMKCKPT"
//! version  u32      FORMAT_VERSION
//! count    u32      number of entries
//! entry*   u32 name_len | name (UTF-8) | u32 ndim | u64 dim* | f32 payload*
//! ```
//!
//! `params.manifest` is a plain-text side file: a `format_version <n>` line
//! followed by one `name<TAB>d0xd1x...` line per entry, in container order.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MLMKCKPT";
pub const FORMAT_VERSION: u32 = 1;
pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "params.manifest";

pub fn write_container(path: &Path, entries: &[(&str, &Tensor)]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(MAGIC)?;
    put(&FORMAT_VERSION.to_le_bytes())?;
    put(&(entries.len() as u32).to_le_bytes())?;
    for (name, t) in entries {
        put(&(name.len() as u32).to_le_bytes())?;
        put(name.as_bytes())?;
        put(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            put(&(d as u64).to_le_bytes())?;
        }
        let mut payload = Vec::with_capacity(t.numel() * 4);
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        put(&payload)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated container at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_container(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode_container(&buf)
}

pub fn decode_container(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let ndim = c.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data = c
            .take(numel * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    if c.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes after last entry".into()));
    }
    Ok(out)
}

pub fn manifest_text(entries: &[(&str, &Tensor)]) -> String {
    let mut s = format!("format_version {FORMAT_VERSION}\n");
    for (name, t) in entries {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        s.push_str(&format!("{name}\t{}\n", dims.join("x")));
    }
    s
}

/// Writes `params.bin` and `params.manifest` into `dir`.
pub fn save_checkpoint(dir: &Path, entries: &[(&str, &Tensor)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_container(&dir.join(PARAMS_FILE), entries)?;
    let manifest = dir.join(MANIFEST_FILE);
    fs::write(&manifest, manifest_text(entries)).map_err(|e| Error::io(&manifest, e))
}

/// Reads a checkpoint directory and cross-checks the container against its
/// manifest.
pub fn load_checkpoint(dir: &Path) -> Result<Vec<(String, Tensor)>> {
    let entries = read_container(&dir.join(PARAMS_FILE))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let refs: Vec<(&str, &Tensor)> = entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
    if manifest != manifest_text(&refs) {
        return Err(Error::Checkpoint(format!(
            "{} does not describe {}",
            manifest_path.display(),
            PARAMS_FILE
        )));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, -0.0]).unwrap();
        let b = Tensor::new(vec![4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        save_checkpoint(dir.path(), &[("a", &a), ("b.bias", &b)]).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back[0].0, "a");
        assert_eq!(back[1].0, "b.bias");
        for ((_, x), y) in back.iter().zip([&a, &b]) {
            let xb: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
            assert_eq!(x.shape(), y.shape());
        }
        let manifest = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest, "format_version 1\na\t2x3\nb.bias\t4\n");
    }

    #[test]
    fn truncated_container_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let path = dir.path().join("x.bin");
        write_container(&path, &[("a", &a)]).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(decode_container(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_container(b"NOTMAGIC\x01\0\0\0\0\0\0\0").is_err());
    }
}
