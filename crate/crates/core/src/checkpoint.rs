//! Binary checkpoint container.
//!
//! ```text
//! "SNNCKPT1"  u32 version  u32 section_count
//! section*:   [u8; 4] tag  u64 payload_len  payload
//! u32 crc32 of every preceding byte
//! ```
//!
//! All integers and floats are little-endian. Sections:
//! `SPEC` network shorthand, `NCFG` neuron and input settings, `PRMS`
//! parameter tensors (rank, dims, f64 values), `NORM` feature scaling,
//! `PROV` training provenance, `CONF` resolved run configuration.

use std::fs;
use std::path::Path;

use crate::encoding::{FeatureScaling, InputMode};
use crate::error::{Error, Result};
use crate::network::{NetworkSpec, ParamSet};
use crate::neuron::NeuronConfig;
use crate::optim::Model;

pub const MAGIC: &[u8; 8] = b"SNNCKPT1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub dataset: String,
    pub seed: u64,
    pub epochs: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub provenance: Provenance,
    /// Resolved configuration the model was trained with (TOML).
    pub config: String,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, values: &[f64]) {
        self.u64(values.len() as u64);
        for &v in values {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Corruption(format!("{} section truncated", self.what)));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| Error::Corruption(format!("{} length {n} out of bounds", self.what)))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Corruption(format!("{} text is not UTF-8", self.what)))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()?;
        if n.saturating_mul(8) > self.bytes.len() as u64 {
            return Err(Error::Corruption(format!("{} array truncated", self.what)));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn finish(&self) -> Result<()> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(Error::Corruption(format!("trailing bytes in {} section", self.what)))
        }
    }
}

fn input_code(mode: InputMode) -> u8 {
    match mode {
        InputMode::Poisson => 0,
        InputMode::Intensity => 1,
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let mut sections: Vec<(&[u8; 4], Vec<u8>)> = Vec::new();

        let mut w = Writer(Vec::new());
        w.str(&m.spec.to_string());
        sections.push((b"SPEC", w.0));

        let mut w = Writer(Vec::new());
        w.f64(m.neuron.threshold());
        w.f64(m.neuron.duration());
        w.f64(m.neuron.dt());
        w.u8(input_code(m.input));
        w.f64(m.rate);
        sections.push((b"NCFG", w.0));

        let mut w = Writer(Vec::new());
        w.u32(m.params.tensors().count() as u32);
        for t in m.params.tensors() {
            w.u32(t.rank() as u32);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            for &v in t.data() {
                w.f64(v);
            }
        }
        sections.push((b"PRMS", w.0));

        let mut w = Writer(Vec::new());
        w.f64s(&m.scaling.min);
        w.f64s(&m.scaling.max);
        sections.push((b"NORM", w.0));

        let mut w = Writer(Vec::new());
        w.u64(self.provenance.seed);
        w.u64(self.provenance.epochs);
        w.str(&self.provenance.dataset);
        sections.push((b"PROV", w.0));

        let mut w = Writer(Vec::new());
        w.str(&self.config);
        sections.push((b"CONF", w.0));

        let mut out = Writer(MAGIC.to_vec());
        out.u32(VERSION);
        out.u32(sections.len() as u32);
        for (tag, payload) in sections {
            out.0.extend_from_slice(tag);
            out.u64(payload.len() as u64);
            out.0.extend_from_slice(&payload);
        }
        let crc = crc32fast::hash(&out.0);
        out.u32(crc);
        out.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        if bytes.len() < MAGIC.len() + 12 {
            return Err(Error::Corruption("checkpoint truncated".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version}, this build reads version {VERSION}"
            )));
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Corruption("checksum mismatch".into()));
        }

        let mut r = Reader {
            bytes: &body[12..],
            what: "header",
        };
        let count = r.u32()?;
        let mut sections = std::collections::HashMap::new();
        for _ in 0..count {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let len = r.len()?;
            sections.insert(tag, r.take(len)?);
        }
        r.finish()?;
        let section = |tag: &'static [u8; 4], what: &'static str| -> Result<Reader<'_>> {
            sections
                .get(tag)
                .map(|&bytes| Reader { bytes, what })
                .ok_or_else(|| Error::Corruption(format!("missing {what} section")))
        };

        let mut r = section(b"SPEC", "SPEC")?;
        let spec = NetworkSpec::parse(&r.str()?)?;
        r.finish()?;

        let mut r = section(b"NCFG", "NCFG")?;
        let neuron = NeuronConfig::new(r.f64()?, r.f64()?, r.f64()?)?;
        let input = match r.u8()? {
            0 => InputMode::Poisson,
            1 => InputMode::Intensity,
            other => return Err(Error::Corruption(format!("unknown input mode {other}"))),
        };
        let rate = r.f64()?;
        r.finish()?;

        let mut r = section(b"PRMS", "PRMS")?;
        let mut params = ParamSet::zeros(&spec);
        let n = r.u32()? as usize;
        if n != params.tensors().count() {
            return Err(Error::Corruption(format!(
                "{n} parameter tensors for network `{spec}`"
            )));
        }
        for slot in params.tensors_mut() {
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if shape != slot.shape() {
                return Err(Error::Corruption(format!(
                    "tensor {shape:?} where network `{spec}` needs {:?}",
                    slot.shape()
                )));
            }
            for v in slot.data_mut() {
                *v = r.f64()?;
            }
        }
        r.finish()?;

        let mut r = section(b"NORM", "NORM")?;
        let scaling = FeatureScaling {
            min: r.f64s()?,
            max: r.f64s()?,
        };
        r.finish()?;
        if scaling.min.len() != spec.input_len() || scaling.max.len() != spec.input_len() {
            return Err(Error::Corruption("scaling does not match the input width".into()));
        }

        let mut r = section(b"PROV", "PROV")?;
        let provenance = Provenance {
            seed: r.u64()?,
            epochs: r.u64()?,
            dataset: r.str()?,
        };
        r.finish()?;

        let mut r = section(b"CONF", "CONF")?;
        let config = r.str()?;
        r.finish()?;

        Ok(Checkpoint {
            model: Model {
                spec,
                params,
                neuron,
                input,
                rate,
                scaling,
            },
            provenance,
            config,
        })
    }

    /// Writes through a temporary file and renames, so a failed save never
    /// leaves a partial checkpoint behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("ckpt.partial");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Fails unless the stored network is `spec`.
    pub fn check_network(&self, spec: &NetworkSpec) -> Result<()> {
        if &self.model.spec != spec {
            return Err(Error::Validation(format!(
                "checkpoint holds network `{}`, configuration expects `{spec}`",
                self.model.spec
            )));
        }
        self.model.params.check_matches(spec)
    }
}
