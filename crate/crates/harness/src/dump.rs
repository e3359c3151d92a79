//! Binary batch dumps (`train --dump-batches`), little-endian.
//!
//! ```text
//! file   := "VFDB" u32:version(=1) record*
//! record := u64:epoch u64:batch_index u32:rows u32:views
//!           u32:label * rows  u64:sample_index * rows  view * views
//! view   := u8:dtype(0=u8, 1=f32) u32:height u32:width u32:channels payload
//! ```

use std::io::{Read, Write};

use viewforge_core::loader::{Batch, ViewBuffer, ViewData};

use crate::error::{HarnessError, Result};

pub const DUMP_MAGIC: [u8; 4] = *b"VFDB";
pub const DUMP_VERSION: u32 = 1;

pub fn write_header(w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(&DUMP_MAGIC)?;
    w.write_all(&DUMP_VERSION.to_le_bytes())
}

pub fn write_batch(w: &mut impl Write, b: &Batch) -> std::io::Result<()> {
    w.write_all(&b.epoch.to_le_bytes())?;
    w.write_all(&(b.batch_index as u64).to_le_bytes())?;
    w.write_all(&(b.len() as u32).to_le_bytes())?;
    w.write_all(&(b.views.len() as u32).to_le_bytes())?;
    for l in &b.labels {
        w.write_all(&l.to_le_bytes())?;
    }
    for i in &b.indices {
        w.write_all(&(*i as u64).to_le_bytes())?;
    }
    for v in &b.views {
        let [_, h, wd, c] = v.shape;
        let dtype: u8 = match v.data {
            ViewData::U8(_) => 0,
            ViewData::F32(_) => 1,
        };
        w.write_all(&[dtype])?;
        for d in [h, wd, c] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        match &v.data {
            ViewData::U8(d) => w.write_all(d)?,
            ViewData::F32(d) => {
                for x in d {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Core(viewforge_core::Error::Format(msg.into()))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated batch dump"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_dump(r: &mut impl Read) -> Result<Vec<Batch>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| HarnessError::io("<dump>", e))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != DUMP_MAGIC {
        return Err(bad("not a batch dump"));
    }
    if c.u32()? != DUMP_VERSION {
        return Err(bad("unsupported batch dump version"));
    }
    let mut out = Vec::new();
    while c.pos < bytes.len() {
        let epoch = c.u64()?;
        let batch_index = c.u64()? as usize;
        let rows = c.u32()? as usize;
        let views = c.u32()? as usize;
        let labels = (0..rows).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let indices = (0..rows).map(|_| c.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let mut vbufs = Vec::with_capacity(views);
        for _ in 0..views {
            let dtype = c.take(1)?[0];
            let (h, w, ch) = (c.u32()? as usize, c.u32()? as usize, c.u32()? as usize);
            let n = rows * h * w * ch;
            let data = match dtype {
                0 => ViewData::U8(c.take(n)?.to_vec()),
                1 => ViewData::F32(
                    c.take(n * 4)?
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                        .collect(),
                ),
                other => return Err(bad(format!("unknown view dtype {other}"))),
            };
            vbufs.push(ViewBuffer {
                shape: [rows, h, w, ch],
                data,
            });
        }
        out.push(Batch {
            views: vbufs,
            labels,
            indices,
            epoch,
            batch_index,
        });
    }
    Ok(out)
}
