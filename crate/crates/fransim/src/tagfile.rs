//! Binary time-tag stream format, one channel per file.
//!
//! Layout (little-endian): magic `FTAG` (4 bytes), version u16 = 1,
//! resolution_ps u32, channel_id u8, 5 reserved zero bytes, tag count
//! u64, then count u64 tick values. The 24-byte header keeps the record
//! array aligned and the file trivially seekable and append-friendly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sim::TimeTagStream;

pub const MAGIC: [u8; 4] = *b"FTAG";
pub const VERSION: u16 = 1;
const HEADER_LEN: u64 = 24;

/// Writes a stream; the output is byte-identical for identical streams.
pub fn write_timetags(stream: &TimeTagStream, path: &Path) -> Result<()> {
    stream.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&stream.resolution_ps.to_le_bytes())?;
    w.write_all(&[stream.channel_id])?;
    w.write_all(&[0u8; 5])?;
    w.write_all(&(stream.tags.len() as u64).to_le_bytes())?;
    for &tag in &stream.tags {
        w.write_all(&tag.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact_at(r: &mut impl Read, buf: &mut [u8], offset: u64, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Format {
        offset,
        reason: format!("truncated while reading {what}"),
    })
}

/// Reads a stream back, validating the header and tag monotonicity; every
/// failure names the byte offset of the problem.
pub fn read_timetags(path: &Path) -> Result<TimeTagStream> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact_at(&mut r, &mut magic, 0, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format { offset: 0, reason: format!("bad magic {magic:02x?}") });
    }
    let mut u16b = [0u8; 2];
    read_exact_at(&mut r, &mut u16b, 4, "version")?;
    let version = u16::from_le_bytes(u16b);
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            reason: format!("unsupported version {version} (expected {VERSION})"),
        });
    }
    let mut u32b = [0u8; 4];
    read_exact_at(&mut r, &mut u32b, 6, "resolution")?;
    let resolution_ps = u32::from_le_bytes(u32b);
    if resolution_ps == 0 {
        return Err(Error::Format { offset: 6, reason: "zero resolution".into() });
    }
    let mut chan = [0u8; 1];
    read_exact_at(&mut r, &mut chan, 10, "channel id")?;
    let mut reserved = [0u8; 5];
    read_exact_at(&mut r, &mut reserved, 11, "reserved bytes")?;
    if reserved != [0u8; 5] {
        return Err(Error::Format { offset: 11, reason: "reserved bytes not zero".into() });
    }
    let mut u64b = [0u8; 8];
    read_exact_at(&mut r, &mut u64b, 16, "tag count")?;
    let count = u64::from_le_bytes(u64b);

    let mut tags = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut prev = 0u64;
    for k in 0..count {
        let offset = HEADER_LEN + 8 * k;
        read_exact_at(&mut r, &mut u64b, offset, "tag record")?;
        let tag = u64::from_le_bytes(u64b);
        if k > 0 && tag < prev {
            return Err(Error::Format {
                offset,
                reason: format!("non-monotonic tag {tag} after {prev}"),
            });
        }
        prev = tag;
        tags.push(tag);
    }
    Ok(TimeTagStream { channel_id: chan[0], resolution_ps, tags })
}
