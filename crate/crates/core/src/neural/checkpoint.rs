//! Binary weight checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "GDCW" | version u32 | role u32 | layer count u32
//! per layer: out u32 | in u32 | kh u32 | kw u32 | activation u32
//!            weights f64 × (out·in·kh·kw) | bias f64 × out
//! an flag u32 | [delta f64 | per layer: len u32 | z f64 × len]
//! ```

use std::path::Path;

use super::{Activation, AnState, ConvLayer, ConvNetModule, Role};
use crate::error::{Error, Result};
use crate::io::write_atomic;

const MAGIC: &[u8; 4] = b"GDCW";
pub const CHECKPOINT_VERSION: u32 = 1;

impl ConvNetModule {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_u32(&mut out, matches!(self.role, Role::Dm) as u32);
        put_u32(&mut out, self.layers.len() as u32);
        for l in &self.layers {
            for v in [l.out_ch, l.in_ch, l.kh, l.kw] {
                put_u32(&mut out, v as u32);
            }
            put_u32(&mut out, matches!(l.activation, Activation::Relu) as u32);
            l.weights.iter().chain(&l.bias).for_each(|&v| put_f64(&mut out, v));
        }
        match &self.an {
            None => put_u32(&mut out, 0),
            Some(an) => {
                put_u32(&mut out, 1);
                put_f64(&mut out, an.delta);
                for z in &an.z {
                    put_u32(&mut out, z.len() as u32);
                    z.iter().for_each(|&v| put_f64(&mut out, v));
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a GDCW checkpoint".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let role = match r.u32()? {
            0 => Role::Gm,
            1 => Role::Dm,
            x => return Err(Error::Format(format!("bad role tag {x}"))),
        };
        let n_layers = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let (out_ch, in_ch, kh, kw) = (r.usize()?, r.usize()?, r.usize()?, r.usize()?);
            let activation = match r.u32()? {
                0 => Activation::Identity,
                1 => Activation::Relu,
                x => return Err(Error::Format(format!("bad activation tag {x}"))),
            };
            let n = out_ch
                .checked_mul(in_ch)
                .and_then(|v| v.checked_mul(kh * kw))
                .ok_or_else(|| Error::Format("layer shape overflow".into()))?;
            let weights = r.f64s(n)?;
            let bias = r.f64s(out_ch)?;
            layers.push(ConvLayer {
                out_ch,
                in_ch,
                kh,
                kw,
                weights,
                bias,
                activation,
            });
        }
        let mut m = ConvNetModule::new(role, layers).map_err(|e| Error::Format(e.to_string()))?;
        if r.u32()? == 1 {
            let delta = r.f64()?;
            let mut z = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                let len = r.usize()?;
                z.push(r.f64s(len)?);
            }
            m.an = Some(AnState { delta, z });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("length overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::an_normalize;
    use crate::rng::SeedStreams;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = SeedStreams::new(3).stream("init");
        let m = ConvNetModule::generative(4, 5, &mut rng).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"GDCW");
        let back = ConvNetModule::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, m);

        let n = an_normalize(&m, 0.9).unwrap();
        let back = ConvNetModule::from_bytes(&n.to_bytes()).unwrap();
        assert_eq!(back, n);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dm.gdcw");
        let mut rng = SeedStreams::new(4).stream("init");
        let m = ConvNetModule::discriminative(3, 4, &mut rng).unwrap();
        m.save(&path).unwrap();
        assert_eq!(ConvNetModule::load(&path).unwrap(), m);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let mut rng = SeedStreams::new(5).stream("init");
        let bytes = ConvNetModule::generative(2, 3, &mut rng).unwrap().to_bytes();
        assert!(ConvNetModule::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ConvNetModule::from_bytes(&bad).is_err());
        let mut ver = bytes.clone();
        ver[4] = 9;
        assert!(ConvNetModule::from_bytes(&ver).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(ConvNetModule::from_bytes(&extra).is_err());
    }
}
