//! Binary checkpoint layout, all integers and floats little-endian:
//!
//! ```text
//! magic            8 bytes  "SWDNCKPT"
//! version          u32      1
//! parameterization u8       0 ve_direct, 1 ve_residual, 2 vp_epsilon
//! conditioning     u8       0 log_sigma, 1 time_fraction
//! reserved         u16      0
//! n_widths         u32
//! widths           n_widths × u32
//! n_params         u64      must equal the count implied by widths
//! params           n_params × f64
//! n_alphas         u32      0 when no VP schedule is attached
//! alphas           n_alphas × f64
//! steps            u64
//! final_loss       f64
//! seed             u64
//! sigma_tag        u8       0 uniform, 1 vp_discrete, 2 fixed
//! sigma payload    uniform: min f64, max f64
//!                  vp_discrete: n u32, n × f64 alphas
//!                  fixed: f64
//! ```

use std::io::{Read, Write};

use super::mlp::param_count;
use super::{Conditioning, Parameterization};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SWDNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum SigmaDistributionRecord {
    Uniform { min: f64, max: f64 },
    VpDiscrete { alphas: Vec<f64> },
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub steps: u64,
    /// Moving average of the last mini-batch losses; NaN before any step.
    pub final_loss: f64,
    pub seed: u64,
    pub sigma: SigmaDistributionRecord,
}

/// Trained denoiser parameters in `f64`, independent of the scalar type
/// used for training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub parameterization: Parameterization,
    pub conditioning: Conditioning,
    pub widths: Vec<usize>,
    pub params: Vec<f64>,
    pub schedule_alphas: Option<Vec<f64>>,
    pub meta: TrainingMeta,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Parse {
        line: 0,
        message: msg.into(),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.buf.len() < N {
            return Err(bad("checkpoint truncated"));
        }
        let (head, rest) = self.buf.split_at(N);
        self.buf = rest;
        Ok(head.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if self.buf.len() / 8 < n {
            return Err(bad("checkpoint truncated"));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

impl Checkpoint {
    pub fn param_count_matches(&self) -> bool {
        self.widths.len() >= 2 && param_count(&self.widths) == self.params.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.parameterization.tag());
        out.push(self.conditioning.tag());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(self.widths.len() as u32).to_le_bytes());
        for &w in &self.widths {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        let alphas = self.schedule_alphas.as_deref().unwrap_or(&[]);
        out.extend_from_slice(&(alphas.len() as u32).to_le_bytes());
        for a in alphas {
            out.extend_from_slice(&a.to_le_bytes());
        }
        out.extend_from_slice(&self.meta.steps.to_le_bytes());
        out.extend_from_slice(&self.meta.final_loss.to_le_bytes());
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        match &self.meta.sigma {
            SigmaDistributionRecord::Uniform { min, max } => {
                out.push(0);
                out.extend_from_slice(&min.to_le_bytes());
                out.extend_from_slice(&max.to_le_bytes());
            }
            SigmaDistributionRecord::VpDiscrete { alphas } => {
                out.push(1);
                out.extend_from_slice(&(alphas.len() as u32).to_le_bytes());
                for a in alphas {
                    out.extend_from_slice(&a.to_le_bytes());
                }
            }
            SigmaDistributionRecord::Fixed(s) => {
                out.push(2);
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        if &r.take::<8>()? != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let parameterization = Parameterization::from_tag(r.u8()?)
            .ok_or_else(|| bad("unknown parameterization tag"))?;
        let conditioning =
            Conditioning::from_tag(r.u8()?).ok_or_else(|| bad("unknown conditioning tag"))?;
        r.u16()?;
        let n_widths = r.u32()? as usize;
        if n_widths > r.buf.len() / 4 {
            return Err(bad("checkpoint truncated"));
        }
        let widths = (0..n_widths)
            .map(|_| r.u32().map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let n_params = r.u64()? as usize;
        if widths.len() < 2 || param_count(&widths) != n_params {
            return Err(bad(format!(
                "parameter count {n_params} does not match widths {widths:?}"
            )));
        }
        let params = r.f64s(n_params)?;
        let n_alphas = r.u32()? as usize;
        let alphas = r.f64s(n_alphas)?;
        let steps = r.u64()?;
        let final_loss = r.f64()?;
        let seed = r.u64()?;
        let sigma = match r.u8()? {
            0 => SigmaDistributionRecord::Uniform {
                min: r.f64()?,
                max: r.f64()?,
            },
            1 => {
                let n = r.u32()? as usize;
                SigmaDistributionRecord::VpDiscrete { alphas: r.f64s(n)? }
            }
            2 => SigmaDistributionRecord::Fixed(r.f64()?),
            t => return Err(bad(format!("unknown sigma distribution tag {t}"))),
        };
        if !r.buf.is_empty() {
            return Err(bad("trailing bytes after checkpoint"));
        }
        Ok(Self {
            parameterization,
            conditioning,
            widths,
            params,
            schedule_alphas: (n_alphas > 0).then_some(alphas),
            meta: TrainingMeta {
                steps,
                final_loss,
                seed,
                sigma,
            },
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}
