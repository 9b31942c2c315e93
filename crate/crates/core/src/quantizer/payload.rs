use crate::error::{Error, Result};

/// Quantization scheme carried in a payload header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    Uniform { bits: u8, lo: f64, hi: f64 },
    Vq { codebook_size: u32 },
}

impl Scheme {
    fn tag(&self) -> u8 {
        match self {
            Scheme::Uniform { .. } => 0,
            Scheme::Vq { .. } => 1,
        }
    }

    /// Bits per transmitted index.
    pub fn index_bits(&self) -> Result<u32> {
        match *self {
            Scheme::Uniform { bits, .. } => {
                if !(1..=16).contains(&bits) {
                    return Err(Error::Validation(format!("{bits} bits per scalar outside [1, 16]")));
                }
                Ok(bits as u32)
            }
            Scheme::Vq { codebook_size } => {
                if codebook_size < 2 || !codebook_size.is_power_of_two() {
                    return Err(Error::Validation(format!(
                        "codebook size {codebook_size} is not a power of two ≥ 2"
                    )));
                }
                Ok(codebook_size.trailing_zeros())
            }
        }
    }
}

/// Feedback bit count: `m·d_q·B` for uniform, `m·log₂K` for VQ.
pub fn payload_bits(scheme: &Scheme, m: usize, d_q: usize) -> Result<usize> {
    let b = scheme.index_bits()? as usize;
    Ok(match scheme {
        Scheme::Uniform { .. } => m * d_q * b,
        Scheme::Vq { .. } => m * b,
    })
}

/// Packed quantizer indices, MSB-first within each byte, zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct BitPayload {
    pub scheme: Scheme,
    pub bit_len: u32,
    pub bytes: Vec<u8>,
}

impl BitPayload {
    pub fn pack(scheme: Scheme, indices: &[u32]) -> Result<Self> {
        let b = scheme.index_bits()?;
        let bit_len = u32::try_from(indices.len() as u64 * b as u64)
            .map_err(|_| Error::Validation("payload longer than u32 bits".into()))?;
        let mut bytes = vec![0u8; (bit_len as usize).div_ceil(8)];
        let mut pos = 0usize;
        for &idx in indices {
            if b < 32 && idx >> b != 0 {
                return Err(Error::Validation(format!("index {idx} does not fit in {b} bits")));
            }
            for k in (0..b).rev() {
                if (idx >> k) & 1 == 1 {
                    bytes[pos / 8] |= 0x80 >> (pos % 8);
                }
                pos += 1;
            }
        }
        Ok(Self { scheme, bit_len, bytes })
    }

    pub fn unpack(&self) -> Result<Vec<u32>> {
        let b = self.scheme.index_bits()?;
        if self.bit_len % b != 0 || self.bytes.len() != (self.bit_len as usize).div_ceil(8) {
            return Err(Error::Format("payload length inconsistent with scheme".into()));
        }
        let n = (self.bit_len / b) as usize;
        let mut out = Vec::with_capacity(n);
        let mut pos = 0usize;
        for _ in 0..n {
            let mut v = 0u32;
            for _ in 0..b {
                let bit = (self.bytes[pos / 8] >> (7 - pos % 8)) & 1;
                v = (v << 1) | bit as u32;
                pos += 1;
            }
            out.push(v);
        }
        Ok(out)
    }

    /// Wire form: `tag u8 | params | bit_len u32 | packed bits`, where the
    /// uniform params are `B u8, lo f64, hi f64` and the VQ param is `K u32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![self.scheme.tag()];
        match self.scheme {
            Scheme::Uniform { bits, lo, hi } => {
                out.push(bits);
                out.extend_from_slice(&lo.to_le_bytes());
                out.extend_from_slice(&hi.to_le_bytes());
            }
            Scheme::Vq { codebook_size } => out.extend_from_slice(&codebook_size.to_le_bytes()),
        }
        out.extend_from_slice(&self.bit_len.to_le_bytes());
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut cur = Cursor { buf, pos: 0 };
        let scheme = match cur.take(1)?[0] {
            0 => {
                let bits = cur.take(1)?[0];
                let lo = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
                let hi = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
                Scheme::Uniform { bits, lo, hi }
            }
            1 => Scheme::Vq { codebook_size: u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) },
            t => return Err(Error::Format(format!("unknown payload scheme {t}"))),
        };
        let bit_len = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        let bytes = cur.take((bit_len as usize).div_ceil(8))?.to_vec();
        if cur.pos != buf.len() {
            return Err(Error::Format("trailing bytes after payload".into()));
        }
        let p = Self { scheme, bit_len, bytes };
        p.unpack()?;
        let pad = p.bit_len % 8;
        if pad != 0 && p.bytes.last().is_some_and(|b| b & (0xFF >> pad) != 0) {
            return Err(Error::Format("nonzero padding bits".into()));
        }
        Ok(p)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated payload".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const U2: Scheme = Scheme::Uniform { bits: 2, lo: -1.0, hi: 1.0 };

    #[test]
    fn table_budgets() {
        assert_eq!(payload_bits(&U2, 8, 4).unwrap(), 64);
        let u4 = Scheme::Uniform { bits: 4, lo: -1.0, hi: 1.0 };
        assert_eq!(payload_bits(&u4, 8, 8).unwrap(), 256);
        assert_eq!(payload_bits(&Scheme::Vq { codebook_size: 256 }, 16, 4).unwrap(), 128);
        assert!(payload_bits(&Scheme::Vq { codebook_size: 100 }, 16, 4).is_err());
    }

    #[test]
    fn msb_first_packing() {
        let p = BitPayload::pack(U2, &[3, 0, 1]).unwrap();
        assert_eq!(p.bit_len, 6);
        assert_eq!(p.bytes, vec![0b1100_0100]);
        assert_eq!(p.unpack().unwrap(), vec![3, 0, 1]);
        assert!(BitPayload::pack(U2, &[4]).is_err());
    }

    #[test]
    fn wire_round_trip_and_rejects() {
        let p = BitPayload::pack(Scheme::Vq { codebook_size: 8 }, &[5, 7, 0]).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(BitPayload::from_bytes(&bytes).unwrap(), p);
        assert!(BitPayload::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        *bad.last_mut().unwrap() |= 1; // padding bit
        assert!(BitPayload::from_bytes(&bad).is_err());
    }
}
