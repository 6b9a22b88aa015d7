//! Checkpoint files.
//!
//! Layout, all integers little-endian: magic `TS3D`, format version `u32`,
//! entry count `u32`, then per entry the name length `u32`, the UTF-8 name,
//! a dtype tag `u8`, the rank `u8`, the extents as `u32`s and the raw
//! little-endian elements.
//!
//! Entry names: `param.<name>` for weights, `adam.m.<name>` and
//! `adam.v.<name>` for the optimizer moments, `state.step`,
//! `state.priors.shape_z`, `state.priors.class_size`, and `config.<key>` for
//! every configuration key in its numeric encoding.

use std::path::Path;

use ts3d_core::detect::AnchorPriors;
use ts3d_core::tensor::{OptimState, ParamStore};
use ts3d_core::{DType, Tensor};

use crate::config::{RunConfig, KEYS};
use crate::error::{read, write, Error, Result};

pub const MAGIC: &[u8; 4] = b"TS3D";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum EntryData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: EntryData,
}

impl Entry {
    pub fn f32(name: impl Into<String>, shape: &[usize], data: Vec<f32>) -> Self {
        Entry { name: name.into(), shape: shape.to_vec(), data: EntryData::F32(data) }
    }

    pub fn f64(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Self {
        Entry { name: name.into(), shape: shape.to_vec(), data: EntryData::F64(data) }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        match &self.data {
            EntryData::F32(v) => v.clone(),
            EntryData::F64(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            EntryData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            EntryData::F64(v) => v.clone(),
        }
    }
}

pub fn encode_entries(entries: &[Entry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let numel: usize = e.shape.iter().product();
        let (dtype, len) = match &e.data {
            EntryData::F32(v) => (DType::F32, v.len()),
            EntryData::F64(v) => (DType::F64, v.len()),
        };
        if len != numel || e.shape.len() > usize::from(u8::MAX) {
            return Err(Error::Format(format!("entry {} holds {len} values for shape {:?}", e.name, e.shape)));
        }
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(dtype.tag());
        out.push(e.shape.len() as u8);
        for &d in &e.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &e.data {
            EntryData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            EntryData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_entries(bytes: &[u8]) -> Result<Vec<Entry>> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a ts3d checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("checkpoint format version {version} is not supported (expected {VERSION})")));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Format("entry name is not UTF-8".into()))?.to_string();
        let tag = r.u8()?;
        let dtype = DType::from_tag(tag).ok_or_else(|| Error::Format(format!("entry {name}: unknown dtype tag {tag}")))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(dtype.size_of()).ok_or_else(|| Error::Format(format!("entry {name} is too large")))?)?;
        let data = match dtype {
            DType::F32 => EntryData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()),
            DType::F64 => EntryData::F64(
                raw.chunks_exact(8).map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])).collect(),
            ),
        };
        entries.push(Entry { name, shape, data });
    }
    if r.at != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after the last entry", bytes.len() - r.at)));
    }
    Ok(entries)
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub step: u64,
    pub priors: AnchorPriors,
    pub params: ParamStore<f32>,
    pub optimizer: Option<OptimState<f32>>,
}

impl Checkpoint {
    pub fn to_entries(&self) -> Result<Vec<Entry>> {
        let mut out = Vec::new();
        for k in KEYS {
            let v = self.config.get_encoded(k).unwrap_or_default();
            out.push(Entry::f64(format!("config.{k}"), &[v.len()], v));
        }
        out.push(Entry::f64("state.step", &[2], vec![(self.step >> 32) as f64, (self.step & 0xffff_ffff) as f64]));
        let a = self.priors.shape_z.len();
        out.push(Entry::f64("state.priors.shape_z", &[a], self.priors.shape_z.clone()));
        let k = self.priors.class_size.len();
        out.push(Entry::f64("state.priors.class_size", &[k, 3], self.priors.class_size.iter().flatten().copied().collect()));
        for (_, p) in self.params.iter() {
            out.push(Entry::f32(format!("param.{}", p.name), p.value.shape(), p.value.data().to_vec()));
        }
        if let Some(opt) = &self.optimizer {
            if opt.first.len() != self.params.len() || opt.second.len() != self.params.len() {
                return Err(Error::Format("optimizer state does not cover every parameter".into()));
            }
            for (i, (_, p)) in self.params.iter().enumerate() {
                out.push(Entry::f32(format!("adam.m.{}", p.name), p.value.shape(), opt.first[i].clone()));
                out.push(Entry::f32(format!("adam.v.{}", p.name), p.value.shape(), opt.second[i].clone()));
            }
        }
        Ok(out)
    }

    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let find = |name: &str| entries.iter().find(|e| e.name == name);
        let need = |name: &str| find(name).ok_or_else(|| Error::Format(format!("checkpoint lacks entry {name}")));
        let config_pairs: Vec<(&str, Vec<f64>)> =
            entries.iter().filter_map(|e| e.name.strip_prefix("config.").map(|k| (k, e.to_f64()))).collect();
        let config = RunConfig::from_encoded(config_pairs.iter().map(|(k, v)| (*k, v.as_slice())))?;
        let step = match need("state.step")?.to_f64().as_slice() {
            [hi, lo] => ((*hi as u64) << 32) | (*lo as u64),
            _ => return Err(Error::Format("state.step is malformed".into())),
        };
        let class_size = need("state.priors.class_size")?.to_f64();
        if class_size.len() % 3 != 0 {
            return Err(Error::Format("state.priors.class_size is malformed".into()));
        }
        let priors = AnchorPriors {
            shape_z: need("state.priors.shape_z")?.to_f64(),
            class_size: class_size.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        };
        let mut params = ParamStore::new();
        let (mut first, mut second) = (Vec::new(), Vec::new());
        for e in entries {
            let Some(name) = e.name.strip_prefix("param.") else { continue };
            params.insert(name, Tensor::new(&e.shape, e.to_f32())?)?;
            first.push(find(&format!("adam.m.{name}")).map(Entry::to_f32));
            second.push(find(&format!("adam.v.{name}")).map(Entry::to_f32));
        }
        let optimizer = if first.iter().chain(&second).all(Option::is_some) && !first.is_empty() {
            let mut opt = OptimState::new(config.optimizer(), &params);
            opt.step = step;
            opt.first = first.into_iter().flatten().collect();
            opt.second = second.into_iter().flatten().collect();
            Some(opt)
        } else {
            None
        };
        Ok(Checkpoint { config, step, priors, params, optimizer })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        encode_entries(&self.to_entries()?)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Checkpoint::from_entries(&decode_entries(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::decode(&read(path)?).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Fails with the differing keys when `cfg` disagrees with the stored
    /// configuration on any key accepted by `filter`.
    pub fn check_config(&self, cfg: &RunConfig, filter: impl Fn(&str) -> bool) -> Result<()> {
        let diff = self.config.diff(cfg, filter);
        if diff.is_empty() {
            Ok(())
        } else {
            Err(Error::Mismatch(diff))
        }
    }

    /// Copies stored weights into a freshly built store, which must have
    /// exactly the same names and shapes.
    pub fn restore_params(&self, store: &mut ParamStore<f32>) -> Result<()> {
        let mut problems = Vec::new();
        for (_, p) in store.iter() {
            match self.params.id_of(&p.name) {
                None => problems.push(format!("param.{} (missing)", p.name)),
                Some(id) if self.params.get(id).value.shape() != p.value.shape() => {
                    problems.push(format!("param.{} (shape {:?} vs {:?})", p.name, self.params.get(id).value.shape(), p.value.shape()))
                }
                Some(_) => {}
            }
        }
        for (_, p) in self.params.iter() {
            if store.id_of(&p.name).is_none() {
                problems.push(format!("param.{} (unexpected)", p.name));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Mismatch(problems));
        }
        for (_, p) in self.params.iter() {
            store.set_value(&p.name, p.value.clone())?;
        }
        Ok(())
    }
}
