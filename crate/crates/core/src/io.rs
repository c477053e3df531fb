//! Small I/O helpers shared by the binary formats and the CLI.

use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Writes a file by streaming into a temporary sibling and renaming it into
/// place once the writer closure succeeds. Readers never observe a partial
/// file; on error the temporary is removed.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut out = BufWriter::new(tmp.as_file());
        write(&mut out)?;
        out.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Atomically writes a value as pretty-printed JSON followed by a newline.
pub fn write_json_atomic<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

pub(crate) fn read_magic(r: &mut dyn Read, expected: &[u8; 4], what: &str) -> Result<()> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, what)?;
    if &magic != expected {
        return Err(Error::Format(format!(
            "{what}: bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(expected)
        )));
    }
    Ok(())
}

pub(crate) fn read_exact(r: &mut dyn Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Format(format!("{what}: truncated payload")),
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u32(r: &mut dyn Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut dyn Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f32_vec(r: &mut dyn Read, len: usize, what: &str) -> Result<Vec<f32>> {
    let bytes = len
        .checked_mul(4)
        .ok_or_else(|| Error::Format(format!("{what}: payload size overflows")))?;
    // Read incrementally so a bogus header cannot force a huge allocation.
    let mut buf = Vec::new();
    let got = r.take(bytes as u64).read_to_end(&mut buf)?;
    if got != bytes {
        return Err(Error::Format(format!(
            "{what}: truncated payload ({} of {len} floats)",
            got / 4
        )));
    }
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn read_u64_vec(r: &mut dyn Read, len: usize, what: &str) -> Result<Vec<u64>> {
    let bytes = len
        .checked_mul(8)
        .ok_or_else(|| Error::Format(format!("{what}: payload size overflows")))?;
    let mut buf = Vec::new();
    let got = r.take(bytes as u64).read_to_end(&mut buf)?;
    if got != bytes {
        return Err(Error::Format(format!("{what}: truncated payload")));
    }
    Ok(buf
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Fails when the reader still holds bytes after a complete payload.
pub(crate) fn expect_eof(r: &mut dyn Read, what: &str) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(()),
        _ => Err(Error::Format(format!("{what}: trailing bytes after payload"))),
    }
}

pub(crate) fn write_f32s(w: &mut dyn Write, values: impl IntoIterator<Item = f32>) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}
