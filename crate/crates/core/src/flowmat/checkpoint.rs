use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::flowmat::config::{format_kv, parse_kv_text};
use crate::numerics::{ParamStore, Parameter, Tensor};

pub const MAGIC: &[u8; 4] = b"FMW1";
pub const VERSION: u32 = 1;

/// Model weights plus the configuration text and kept indices.
///
/// Layout (little-endian): magic · version u32 · config length u32 · config
/// text · parameter count u32 · per parameter (name length u32, name,
/// trainable u8, ndim u8, dims u32[], f64 values) · kept count u32 · kept
/// u32[] · CRC32 of everything before it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore,
    pub kept: Vec<usize>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Validation(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let text = format_kv(&self.meta);
        put_u32(&mut out, text.len())?;
        out.extend_from_slice(text.as_bytes());
        put_u32(&mut out, self.params.len())?;
        for (name, p) in self.params.iter() {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            out.push(p.requires_grad as u8);
            let shape = p.value.shape();
            out.push(u8::try_from(shape.len()).map_err(|_| Error::Validation("rank too large".into()))?);
            for &d in shape {
                put_u32(&mut out, d)?;
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        put_u32(&mut out, self.kept.len())?;
        for &k in &self.kept {
            put_u32(&mut out, k)?;
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 12 || &buf[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let (body, tail) = buf.split_at(buf.len() - 4);
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("checkpoint version {version}, expected {VERSION}")));
        }
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(Error::Format("checkpoint CRC mismatch".into()));
        }
        let tlen = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(tlen)?).map_err(|_| Error::Format("config text is not UTF-8".into()))?;
        let meta = parse_kv_text(text).map_err(|e| Error::Format(format!("config block: {e}")))?;
        let n = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let nl = r.u32()? as usize;
            let name = String::from_utf8(r.take(nl)?.to_vec()).map_err(|_| Error::Format("bad parameter name".into()))?;
            let trainable = r.take(1)?[0] != 0;
            let nd = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(nd);
            let mut count: usize = 1;
            for _ in 0..nd {
                let d = r.u32()? as usize;
                count = count.checked_mul(d).ok_or_else(|| Error::Format("parameter size overflow".into()))?;
                shape.push(d);
            }
            let bytes = r.take(count.checked_mul(8).ok_or_else(|| Error::Format("parameter size overflow".into()))?)?;
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let value = Tensor::new(&shape, data)?;
            params.insert(name, if trainable { Parameter::new(value) } else { Parameter::frozen(value) });
        }
        let nk = r.u32()? as usize;
        let kept = (0..nk).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        Ok(Self { meta, params, kept })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.buf.len() - self.pos {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        params.insert("a.w", Parameter::new(Tensor::from_fn(&[2, 3], |i| i as f64 * 0.1 - 0.2)));
        params.insert("q", Parameter::frozen(Tensor::new(&[2], vec![f64::MIN_POSITIVE, -0.0]).unwrap()));
        let mut meta = BTreeMap::new();
        meta.insert("d_model".into(), "8".into());
        meta.insert("model".into(), "feedback".into());
        Checkpoint { meta, params, kept: vec![0, 3] }
    }

    #[test]
    fn round_trip_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.kept, c.kept);
        assert!(!back.params.get("q").unwrap().requires_grad);
        assert_eq!(back.params.get("q").unwrap().value.data()[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[30] ^= 0x10;
        assert!(Checkpoint::from_bytes(&bad).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 5]).is_err());
    }
}
