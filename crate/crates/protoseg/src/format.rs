//! Binary point-cloud ("PCL1") and checkpoint ("PSG1") formats.
//!
//! Point clouds: magic `PCL1`, u8 flags (bit 0 instance ids, bit 1 semantic
//! ids), u32 N, u32 I, N records of I f32 channels, then the optional i32
//! columns. Checkpoints: magic `PSG1`, u32 tensor count, then per tensor a
//! u16 name length, the UTF-8 name, u8 rank, u32 dims and the f64 payload,
//! followed by a CRC-32 of everything before it. All integers and floats are little-endian. Decoders validate the whole
//! input before building anything.

use std::fs;
use std::path::Path;

use protoseg_core::{PointCloud, Tensor};

use crate::error::{Error, Result};

const CLOUD_MAGIC: &[u8; 4] = b"PCL1";
const CKPT_MAGIC: &[u8; 4] = b"PSG1";
const FLAG_INSTANCE: u8 = 1;
const FLAG_SEMANTIC: u8 = 2;

struct Reader<'a> {
    kind: &'static str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(kind: &'static str, buf: &'a [u8]) -> Self {
        Self { kind, buf, pos: 0 }
    }

    fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            kind: self.kind,
            offset: self.pos,
            msg: msg.into(),
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.buf.len() => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => self.fail(format!("truncated: needed {n} more bytes")),
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn expect_end(&self) -> Result<()> {
        if self.remaining() != 0 {
            return self.fail(format!("{} trailing bytes", self.remaining()));
        }
        Ok(())
    }
}

pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let n = cloud.len();
    let mut flags = 0;
    if cloud.instance_labels.is_some() {
        flags |= FLAG_INSTANCE;
    }
    if cloud.semantic_labels.is_some() {
        flags |= FLAG_SEMANTIC;
    }
    let mut out = Vec::with_capacity(13 + cloud.data().len() * 4 + n * 8);
    out.extend_from_slice(CLOUD_MAGIC);
    out.push(flags);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(cloud.channels() as u32).to_le_bytes());
    for &v in cloud.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for labels in [&cloud.instance_labels, &cloud.semantic_labels]
        .into_iter()
        .flatten()
    {
        for &l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

pub fn decode_cloud(buf: &[u8]) -> Result<PointCloud> {
    let mut r = Reader::new("point cloud", buf);
    if &r.array::<4>()? != CLOUD_MAGIC {
        r.pos = 0;
        return r.fail("bad magic, expected PCL1");
    }
    let flags = r.u8()?;
    if flags & !(FLAG_INSTANCE | FLAG_SEMANTIC) != 0 {
        r.pos -= 1;
        return r.fail(format!("unknown flag bits {flags:#04x}"));
    }
    let n = r.u32()? as usize;
    let channels = r.u32()? as usize;
    if n == 0 {
        return r.fail("empty cloud");
    }
    if channels < 3 {
        return r.fail(format!("{channels} channels; XYZ needs at least 3"));
    }
    let columns = (flags & FLAG_INSTANCE != 0) as usize + (flags & FLAG_SEMANTIC != 0) as usize;
    let payload = n
        .checked_mul(channels)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(n.checked_mul(4 * columns)?));
    match payload {
        Some(p) if p == r.remaining() => {}
        Some(p) if p > r.remaining() => return r.fail(format!("truncated: payload needs {p} bytes")),
        Some(_) => return r.fail("trailing bytes after payload"),
        None => return r.fail("N·I overflows"),
    }
    let raw = r.take(n * channels * 4)?;
    let data: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format {
            kind: "point cloud",
            offset: 13,
            msg: "non-finite channel value".into(),
        });
    }
    let read_labels = |r: &mut Reader| -> Result<Vec<i32>> {
        Ok(r.take(n * 4)?
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let instance = (flags & FLAG_INSTANCE != 0)
        .then(|| read_labels(&mut r))
        .transpose()?;
    let semantic = (flags & FLAG_SEMANTIC != 0)
        .then(|| read_labels(&mut r))
        .transpose()?;
    r.expect_end()?;
    let mut cloud = PointCloud::new(channels, data)?;
    cloud.instance_labels = instance;
    cloud.semantic_labels = semantic;
    Ok(cloud)
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cloud(&buf)
}

pub fn write_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_cloud(cloud)).map_err(|e| Error::io(path, e))
}

pub fn encode_checkpoint(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    let count = u32::try_from(tensors.len()).map_err(|_| Error::Config("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let len =
            u16::try_from(name.len()).map_err(|_| Error::Config(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Config(format!("rank too large: {name}")))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Config(format!("dimension too large: {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader::new("checkpoint", buf);
    if &r.array::<4>()? != CKPT_MAGIC {
        r.pos = 0;
        return r.fail("bad magic, expected PSG1");
    }
    if buf.len() < 12 {
        return r.fail("truncated: no checksum");
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
        r.pos = body.len();
        return r.fail("checksum mismatch");
    }
    r.buf = body;
    let count = r.u32()? as usize;
    // each tensor needs at least 3 header bytes
    if count > r.remaining() / 3 {
        return r.fail(format!("tensor count {count} exceeds the file size"));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name_at = r.pos;
        let name = match std::str::from_utf8(r.take(len)?) {
            Ok(s) => s.to_owned(),
            Err(_) => {
                r.pos = name_at;
                return r.fail("tensor name is not UTF-8");
            }
        };
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes = numel.and_then(|n| n.checked_mul(8));
        let Some(bytes) = bytes.filter(|&b| b <= r.remaining()) else {
            return r.fail(format!("truncated payload for tensor `{name}`"));
        };
        let values = r
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect::<Vec<f64>>();
        if values.iter().any(|v| !v.is_finite()) {
            return r.fail(format!("non-finite value in tensor `{name}`"));
        }
        out.push((name, Tensor::new(shape, values)?));
    }
    r.expect_end()?;
    Ok(out)
}
