//! `.fmck` checkpoints.
//!
//! ```text
//! "FMCK" | version u32 | arch tag | data_dim u64 | init_seed u64 | step u64
//! | config digest | count u32 | { name | kind u32 | rank u32 | dims u64… | f64… }*
//! | checksum u64
//! ```
//!
//! Strings are `u32` length + UTF-8. `kind` is 0 for trainable parameters
//! and 1 for fixed buffers.

use super::{Arch, VelocityModel};
use crate::digest::bin::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

const MAGIC: &[u8; 4] = b"FMCK";
const VERSION: u32 = 1;

impl VelocityModel {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.str(&self.arch.tag());
        w.u64(self.data_dim as u64);
        w.u64(self.init_seed);
        w.u64(self.step);
        w.str(&self.config_digest);
        w.u32((self.params.len() + self.buffers.len()) as u32);
        let tagged = self
            .params
            .iter()
            .map(|p| (0u32, p))
            .chain(self.buffers.iter().map(|b| (1u32, b)));
        for (kind, (name, t)) in tagged {
            w.str(name);
            w.u32(kind);
            w.u32(t.shape().len() as u32);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            w.f64s(t.data());
        }
        w.finish()
    }

    pub fn decode(file: &[u8]) -> Result<Self> {
        let mut r = Reader::open(file, MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(format!(
                "checkpoint version {version}, this build reads {VERSION}"
            )));
        }
        let arch: Arch = r.str()?.parse()?;
        let data_dim = r.u64()? as usize;
        let init_seed = r.u64()?;
        let step = r.u64()?;
        let config_digest = r.str()?;
        let count = r.u32()? as usize;
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        for _ in 0..count {
            let name = r.str()?;
            let kind = r.u32()?;
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(Error::format(format!("array `{name}` has rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape.iter().product();
            let t = Tensor::new(shape, r.f64s(n)?)?;
            match kind {
                0 => params.push((name, t)),
                1 => buffers.push((name, t)),
                k => return Err(Error::format(format!("array `{name}` has kind {k}"))),
            }
        }
        r.finish()?;

        // The stored arrays must have exactly the layout `build` produces.
        let template = VelocityModel::build(arch.clone(), data_dim, init_seed)?;
        let layout = |v: &[(String, Tensor)]| -> Vec<(String, Vec<usize>)> {
            v.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect()
        };
        if layout(&template.params) != layout(&params) || layout(&template.buffers) != layout(&buffers)
        {
            return Err(Error::format(format!(
                "stored arrays do not match the `{arch}` layout for dim {data_dim}"
            )));
        }
        Ok(Self {
            arch,
            data_dim,
            init_seed,
            step,
            config_digest,
            params,
            buffers,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    /// Loads a checkpoint and checks its architecture and, when given, the
    /// config digest it was trained under.
    pub fn load_expecting(
        path: impl AsRef<Path>,
        arch: &Arch,
        config_digest: Option<&str>,
    ) -> Result<Self> {
        let m = Self::load(path)?;
        if &m.arch != arch {
            return Err(Error::invalid(format!(
                "checkpoint holds `{}`, expected `{arch}`",
                m.arch
            )));
        }
        if let Some(d) = config_digest {
            if m.config_digest != d {
                return Err(Error::DigestMismatch {
                    expected: d.to_string(),
                    found: m.config_digest.clone(),
                });
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> VelocityModel {
        let mut m = VelocityModel::build(Arch::FourierMlp, 2, 3).unwrap();
        m.set_step(123);
        m.set_config_digest("abc");
        for p in m.params_mut() {
            for v in p.data_mut() {
                *v += 0.25;
            }
        }
        m
    }

    #[test]
    fn save_load_equality() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.fmck");
        let m = model();
        m.save(&p).unwrap();
        let back = VelocityModel::load(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.encode(), m.encode());
    }

    #[test]
    fn expectations_are_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.fmck");
        model().save(&p).unwrap();
        assert!(VelocityModel::load_expecting(&p, &Arch::FourierMlp, Some("abc")).is_ok());
        assert!(VelocityModel::load_expecting(&p, &Arch::MlpS, None).is_err());
        assert!(matches!(
            VelocityModel::load_expecting(&p, &Arch::FourierMlp, Some("xyz")),
            Err(Error::DigestMismatch { .. })
        ));
    }

    #[test]
    fn partial_or_corrupt_files_fail() {
        let bytes = model().encode();
        assert!(VelocityModel::decode(&bytes[..bytes.len() - 100]).is_err());
        let mut bad = bytes.clone();
        bad[40] ^= 0xff;
        assert!(VelocityModel::decode(&bad).is_err());
    }
}
