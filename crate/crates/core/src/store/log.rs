//! Length-prefixed, checksummed frame files.
//!
//! Layout: the 4-byte header `EOC1`, then frames of
//! `[u32 LE payload length][u32 LE crc32 of payload][payload]`.
//! A frame that is cut short or fails its checksum ends the readable prefix.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"EOC1";
const FRAME_HEADER: usize = 8;

pub fn encode_frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + FRAME_HEADER);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// Frames decoded from a file plus the byte length of the valid prefix.
pub struct FrameRead {
    pub frames: Vec<Vec<u8>>,
    pub valid_len: u64,
    pub torn: bool,
}

pub fn read_frames(path: &Path) -> io::Result<Option<FrameRead>> {
    let mut buf = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut buf)?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e),
    }
    if buf.is_empty() {
        return Ok(Some(FrameRead {
            frames: Vec::new(),
            valid_len: 0,
            torn: false,
        }));
    }
    if buf.len() < MAGIC.len() || &buf[..4] != MAGIC {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("{} does not start with the EOC1 header", path.display()),
        ));
    }
    let mut pos = MAGIC.len();
    let mut frames = Vec::new();
    let mut torn = false;
    while pos < buf.len() {
        if buf.len() - pos < FRAME_HEADER {
            torn = true;
            break;
        }
        let len = u32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(buf[pos + 4..pos + 8].try_into().unwrap());
        let start = pos + FRAME_HEADER;
        if buf.len() - start < len {
            torn = true;
            break;
        }
        let payload = &buf[start..start + len];
        if crc32fast::hash(payload) != crc {
            torn = true;
            break;
        }
        frames.push(payload.to_vec());
        pos = start + len;
    }
    Ok(Some(FrameRead {
        frames,
        valid_len: pos as u64,
        torn,
    }))
}

/// Writes a complete frame file next to `path` and renames it into place.
pub fn write_frame_file_atomic<'a>(
    path: &Path,
    payloads: impl IntoIterator<Item = &'a [u8]>,
) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = io::BufWriter::new(File::create(&tmp)?);
        f.write_all(MAGIC)?;
        for p in payloads {
            f.write_all(&encode_frame(p))?;
        }
        f.flush()?;
        f.get_ref().sync_all()?;
    }
    fs::rename(&tmp, path)?;
    sync_parent(path)
}

pub fn write_file_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    sync_parent(path)
}

fn sync_parent(path: &Path) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        if let Ok(dir) = File::open(parent) {
            let _ = dir.sync_all();
        }
    }
    Ok(())
}

/// Opens a log for appending, creating it with the header when absent and
/// cutting any torn tail.
pub fn open_append(path: &Path, valid_len: Option<u64>) -> io::Result<File> {
    let mut f = OpenOptions::new()
        .read(true)
        .append(true)
        .create(true)
        .open(path)?;
    let len = f.metadata()?.len();
    if len == 0 {
        f.write_all(MAGIC)?;
        f.sync_all()?;
    } else if let Some(valid) = valid_len {
        if valid < len {
            f.set_len(valid)?;
            f.sync_all()?;
        }
    }
    Ok(f)
}
