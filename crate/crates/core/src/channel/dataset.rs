//! Little-endian sample container.
//!
//! ```text
//! "FMC1" | version u32 | kind u8 | ndim u8 | dims u32[ndim] | count u64
//! payload: count × prod(dims) × (re f32, im f32), row-major
//! crc32(payload) u32
//! ```
//!
//! Channels are stored `[rx, tx, subcarrier]`, eigen-precoders
//! `[tx, subband]` and pilot observations `[rx, pilot, tx]`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::channel::types::{ChannelTensor, EigenMatrix, PilotObservation};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FMC1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum RecordKind {
    Channel = 0,
    Eigen = 1,
    Pilot = 2,
}

impl RecordKind {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Self::Channel),
            1 => Ok(Self::Eigen),
            2 => Ok(Self::Pilot),
            other => Err(Error::Format(format!("unknown record kind {other}"))),
        }
    }

    fn ndim(self) -> u8 {
        match self {
            Self::Eigen => 2,
            Self::Channel | Self::Pilot => 3,
        }
    }
}

/// In-memory image of one container file.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: RecordKind,
    pub dims: Vec<u32>,
    /// Interleaved `(re, im)` values of every sample, back to back.
    pub values: Vec<f32>,
}

fn to_f32(values: impl IntoIterator<Item = Complex64>) -> impl Iterator<Item = f32> {
    values.into_iter().flat_map(|z| [z.re as f32, z.im as f32])
}

fn fmt_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

impl Dataset {
    pub fn sample_len(&self) -> usize {
        2 * self.dims.iter().map(|&d| d as usize).product::<usize>()
    }

    pub fn count(&self) -> usize {
        let n = self.sample_len();
        if n == 0 { 0 } else { self.values.len() / n }
    }

    pub fn sample(&self, i: usize) -> Vec<Complex64> {
        let n = self.sample_len();
        self.values[i * n..(i + 1) * n]
            .chunks(2)
            .map(|p| Complex64::new(p[0] as f64, p[1] as f64))
            .collect()
    }

    fn build(kind: RecordKind, dims: Vec<usize>, samples: impl Iterator<Item = Vec<Complex64>>) -> Result<Self> {
        let dims32 = dims
            .iter()
            .map(|&d| u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32"))))
            .collect::<Result<Vec<_>>>()?;
        let per: usize = dims.iter().product();
        let mut values = Vec::new();
        for s in samples {
            if s.len() != per {
                return Err(Error::Shape(format!("sample with {} values, expected {per}", s.len())));
            }
            values.extend(to_f32(s));
        }
        Ok(Self { kind, dims: dims32, values })
    }

    pub fn from_channels(hs: &[ChannelTensor]) -> Result<Self> {
        let Some(h0) = hs.first() else { return fmt_err("no samples") };
        let dims = vec![h0.n_rx, h0.n_tx, h0.n_sub];
        Self::build(RecordKind::Channel, dims, hs.iter().map(ChannelTensor::to_export_order))
    }

    pub fn from_eigen(ws: &[EigenMatrix]) -> Result<Self> {
        let Some(w0) = ws.first() else { return fmt_err("no samples") };
        let dims = vec![w0.n_tx, w0.n_subband];
        Self::build(RecordKind::Eigen, dims, ws.iter().map(EigenMatrix::to_export_order))
    }

    pub fn from_pilots(obs: &[PilotObservation]) -> Result<Self> {
        let Some(o0) = obs.first() else { return fmt_err("no samples") };
        let dims = vec![o0.n_rx, o0.n_pilots(), o0.n_tx];
        Self::build(RecordKind::Pilot, dims, obs.iter().map(|o| o.data.clone()))
    }

    fn expect_kind(&self, kind: RecordKind, ndim: usize) -> Result<()> {
        if self.kind != kind || self.dims.len() != ndim {
            return fmt_err(format!("expected {kind:?} records with {ndim} dims, found {:?} {:?}", self.kind, self.dims));
        }
        Ok(())
    }

    pub fn to_channels(&self) -> Result<Vec<ChannelTensor>> {
        self.expect_kind(RecordKind::Channel, 3)?;
        let [n_rx, n_tx, n_sub] = [self.dims[0] as usize, self.dims[1] as usize, self.dims[2] as usize];
        (0..self.count())
            .map(|i| ChannelTensor::from_export_order(n_rx, n_tx, n_sub, &self.sample(i)))
            .collect()
    }

    pub fn to_eigen(&self) -> Result<Vec<EigenMatrix>> {
        self.expect_kind(RecordKind::Eigen, 2)?;
        let (n_tx, n_sb) = (self.dims[0] as usize, self.dims[1] as usize);
        (0..self.count()).map(|i| EigenMatrix::from_export_order(n_tx, n_sb, &self.sample(i))).collect()
    }

    /// Pilot records carry no indices or SNR; the caller supplies them.
    pub fn to_pilots(&self, pilot_indices: &[usize], snr_db: f64) -> Result<Vec<PilotObservation>> {
        self.expect_kind(RecordKind::Pilot, 3)?;
        let (n_rx, np, n_tx) = (self.dims[0] as usize, self.dims[1] as usize, self.dims[2] as usize);
        if np != pilot_indices.len() {
            return fmt_err(format!("file has {np} pilots, pattern has {}", pilot_indices.len()));
        }
        Ok((0..self.count())
            .map(|i| PilotObservation {
                n_rx,
                n_tx,
                pilot_indices: pilot_indices.to_vec(),
                symbols: vec![Complex64::new(1.0, 0.0); np],
                data: self.sample(i),
                snr_db,
                seed: i as u64,
            })
            .collect())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let ndim = u8::try_from(self.dims.len()).map_err(|_| Error::Format("too many dimensions".into()))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.kind as u8, ndim])?;
        for d in &self.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&(self.count() as u64).to_le_bytes())?;
        let mut payload = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&payload)?;
        w.write_all(&crc32fast::hash(&payload).to_le_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return fmt_err(format!("bad magic {magic:?}"));
        }
        let version = u32::from_le_bytes(read_array(&mut r, "version")?);
        if version != VERSION {
            return fmt_err(format!("unsupported version {version}"));
        }
        let [kind, ndim] = read_array::<2>(&mut r, "kind")?;
        let kind = RecordKind::from_u8(kind)?;
        if ndim != kind.ndim() {
            return fmt_err(format!("{kind:?} records have {} dimensions, header says {ndim}", kind.ndim()));
        }
        let mut dims = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            dims.push(u32::from_le_bytes(read_array(&mut r, "dims")?));
        }
        let count = u64::from_le_bytes(read_array(&mut r, "count")?);
        let floats = dims
            .iter()
            .try_fold(2u64, |acc, &d| acc.checked_mul(d as u64))
            .and_then(|per| per.checked_mul(count))
            .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= isize::MAX as u64))
            .ok_or_else(|| Error::Format("dimension overflow".into()))?;
        let mut payload = Vec::new();
        let got = r.by_ref().take(floats * 4).read_to_end(&mut payload)?;
        if got as u64 != floats * 4 {
            return fmt_err(format!("truncated payload: {got} of {} bytes", floats * 4));
        }
        let crc = u32::from_le_bytes(read_array(&mut r, "crc")?);
        if crc != crc32fast::hash(&payload) {
            return fmt_err("payload CRC mismatch");
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return fmt_err("trailing bytes after CRC");
        }
        let values = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        Ok(Self { kind, dims, values })
    }

    /// Writes through a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let f = File::create(&tmp)?;
            self.write_to(BufWriter::new(f))?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated header ({what})")),
        _ => Error::Io(e),
    })
}

fn read_array<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    read_exact(r, &mut b, what)?;
    Ok(b)
}
