//! `.fmds` dataset files and CSV export.
//!
//! Layout (little endian):
//!
//! ```text
//! "FMDS" | version u32 | seed u64 | n u64 | dim u64 | modes u32
//! | tag (u32 len + utf-8) | params json (u32 len + utf-8)
//! | samples n·dim f64 | labels n u32 | checksum u64
//! ```
//!
//! The checksum is the first eight bytes of SHA-256 over everything before
//! it.

use super::{DatasetBundle, DatasetName, DatasetParams, DatasetSpec};
use crate::digest::bin::{Reader, Writer};
use crate::digest::canonical_json;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"FMDS";
const VERSION: u32 = 1;

impl DatasetBundle {
    pub(crate) fn encode_body(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u64(self.spec.seed);
        w.u64(self.len() as u64);
        w.u64(self.dim() as u64);
        w.u32(self.num_modes as u32);
        w.str(self.spec.name.as_str());
        w.str(std::str::from_utf8(&canonical_json(&self.spec.params)).expect("json is utf-8"));
        w.f64s(self.samples.data());
        for &l in &self.labels {
            w.u32(l);
        }
        w.buf
    }

    pub fn encode(&self) -> Vec<u8> {
        Writer {
            buf: self.encode_body(),
        }
        .finish()
    }

    pub fn decode(file: &[u8]) -> Result<Self> {
        let mut r = Reader::open(file, MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(format!(
                "dataset file version {version}, this build reads {VERSION}"
            )));
        }
        let seed = r.u64()?;
        let n = r.u64()? as usize;
        let dim = r.u64()? as usize;
        let modes = r.u32()? as usize;
        let name: DatasetName = r.str()?.parse()?;
        let params: DatasetParams = serde_json::from_str(&r.str()?)?;
        let samples = Tensor::matrix(n, dim, r.f64s(n * dim)?)?;
        let labels = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        let spec = DatasetSpec {
            name,
            n,
            params,
            seed,
        };
        DatasetBundle::from_parts(spec, samples, labels, modes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    /// `index,x0,x1,…,label` rows for inspection.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let d = self.dim();
        let cols: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        writeln!(out, "index,{},label", cols.join(","))?;
        for i in 0..self.len() {
            let row: Vec<String> = self.samples.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{i},{},{}", row.join(","), self.labels[i])?;
        }
        Ok(())
    }
}
