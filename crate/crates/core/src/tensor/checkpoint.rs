//! `SQNW v1` parameter checkpoints.
//!
//! ```text
//! "SQNW" | u8 version=1 | u32 param count
//! per param: u16 name length | UTF-8 name | u8 rank | rank x u64 dims | f32 data
//! u64 training-step counter
//! ```
//!
//! Adam moments are stored as ordinary entries named `optim.m/<param>` and
//! `optim.v/<param>` so that a resumed run continues exactly.

use std::fs;
use std::path::Path;

use super::{Parameters, Tensor};
use crate::error::{Error, Result};

pub const SQNW_MAGIC: &[u8; 4] = b"SQNW";
pub const SQNW_VERSION: u8 = 1;
const FIRST_MOMENT: &str = "optim.m/";
const SECOND_MOMENT: &str = "optim.v/";

pub fn encode(params: &Parameters<f32>) -> Vec<u8> {
    let mut entries: Vec<(String, &[usize], &[f32])> = Vec::new();
    for id in params.ids() {
        let v = params.value(id);
        entries.push((params.name(id).to_string(), v.shape(), v.data()));
    }
    for id in params.ids() {
        let (m, v) = params.moments(id);
        let shape = params.value(id).shape();
        entries.push((format!("{FIRST_MOMENT}{}", params.name(id)), shape, m));
        entries.push((format!("{SECOND_MOMENT}{}", params.name(id)), shape, v));
    }

    let mut out = Vec::new();
    out.extend_from_slice(SQNW_MAGIC);
    out.push(SQNW_VERSION);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, shape, data) in entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&params.step().to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::MalformedHeader {
                offset: self.pos as u64,
                reason: format!("unexpected end of checkpoint reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Parameters<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != SQNW_MAGIC {
        return Err(Error::MalformedHeader {
            offset: 0,
            reason: "bad magic, expected \"SQNW\"".into(),
        });
    }
    let version = r.take(1, "version")?[0];
    if version != SQNW_VERSION {
        return Err(Error::MalformedHeader {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let count = u32::from_le_bytes(r.take(4, "param count")?.try_into().expect("4 bytes"));

    let mut params = Parameters::new();
    let mut moments: Vec<(String, bool, Vec<f32>)> = Vec::new();
    for _ in 0..count {
        let name_at = r.pos as u64;
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::MalformedHeader {
                offset: name_at,
                reason: "parameter name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dims")? as usize);
        }
        let n: usize = shape.iter().product();
        let data: Vec<f32> = r
            .take(n.checked_mul(4).ok_or_else(|| Error::invalid("tensor too large"))?, "tensor data")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(base) = name.strip_prefix(FIRST_MOMENT) {
            moments.push((base.to_string(), true, data));
        } else if let Some(base) = name.strip_prefix(SECOND_MOMENT) {
            moments.push((base.to_string(), false, data));
        } else {
            params.insert(name, Tensor::new(shape, data)?)?;
        }
    }
    let step = r.u64("step counter")?;
    if r.pos != bytes.len() {
        return Err(Error::MalformedHeader {
            offset: r.pos as u64,
            reason: "trailing bytes after step counter".into(),
        });
    }
    params.set_step(step);

    for (base, first, data) in moments {
        let id = params.id(&base)?;
        let (m, v) = params.moments(id);
        let (m, v) = if first {
            (data, v.to_vec())
        } else {
            (m.to_vec(), data)
        };
        params.set_moments(id, m, v)?;
    }
    Ok(params)
}

pub fn save(params: &Parameters<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Parameters<f32>> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
