//! Named parameter storage, initialization and the `LSW1` binary format.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LayerKind, ModelGraph};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor};

pub const LSW_MAGIC: &[u8; 4] = b"LSW1";
const MAX_NAME: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Kernel,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }

    /// Weight decay only touches convolution kernels.
    pub fn decays(self) -> bool {
        self == ParamRole::Kernel
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub layer: String,
    pub role: ParamRole,
    /// Rank 4 for kernels, rank 1 for vectors.
    pub dims: Vec<usize>,
    pub fan_in: usize,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

pub(crate) fn param_specs(g: &ModelGraph) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    for l in g.layers() {
        let id = &l.spec.id;
        let mut push = |suffix: &str, role, dims: Vec<usize>, fan_in| {
            out.push(ParamSpec {
                name: format!("{id}.{suffix}"),
                layer: id.clone(),
                role,
                dims,
                fan_in,
            })
        };
        match &l.spec.kind {
            LayerKind::Conv(c) => {
                let icg = l.in_channels / c.params.groups;
                let dims = vec![c.out_c, icg, c.kernel[0], c.kernel[1]];
                push("weight", ParamRole::Kernel, dims, icg * c.kernel[0] * c.kernel[1]);
                if c.bias {
                    push("bias", ParamRole::Bias, vec![c.out_c], 0);
                }
            }
            LayerKind::DwSepConv(d) => {
                let cin = l.in_channels;
                push("dw", ParamRole::Kernel, vec![cin, 1, d.kernel, d.kernel], d.kernel * d.kernel);
                push("pw", ParamRole::Kernel, vec![d.out_c, cin, 1, 1], cin);
            }
            LayerKind::BatchNorm => {
                let c = l.channels;
                push("gamma", ParamRole::Gamma, vec![c], 0);
                push("beta", ParamRole::Beta, vec![c], 0);
                push("running_mean", ParamRole::RunningMean, vec![c], 0);
                push("running_var", ParamRole::RunningVar, vec![c], 0);
            }
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Param<T = f32> {
    Kernel(Tensor<T>),
    Vector(Vec<T>),
}

impl<T: Scalar> Param<T> {
    pub fn data(&self) -> &[T] {
        match self {
            Param::Kernel(t) => t.data(),
            Param::Vector(v) => v,
        }
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        match self {
            Param::Kernel(t) => t.data_mut(),
            Param::Vector(v) => v,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match self {
            Param::Kernel(t) => {
                let s = t.shape();
                vec![s.n, s.c, s.h, s.w]
            }
            Param::Vector(v) => vec![v.len()],
        }
    }

    fn from_dims(dims: &[usize], data: Vec<T>) -> Result<Self> {
        match *dims {
            [n, c, h, w] => Ok(Param::Kernel(Tensor::from_vec(Shape4::new(n, c, h, w)?, data)?)),
            [len] if len == data.len() => Ok(Param::Vector(data)),
            _ => Err(Error::Format(format!("bad parameter extents {dims:?}"))),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Param<U> {
        match self {
            Param::Kernel(t) => Param::Kernel(t.cast()),
            Param::Vector(v) => Param::Vector(v.iter().map(|x| U::from_f64(x.as_f64())).collect()),
        }
    }
}

/// Parameters keyed by `<layer>.<role>` names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore<T = f32> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T: Scalar> WeightStore<T> {
    pub fn new() -> Self {
        WeightStore { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, p: Param<T>) -> Option<Param<T>> {
        self.entries.insert(name.into(), p)
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.values().map(|p| p.data().len()).sum()
    }

    pub(crate) fn kernel(&self, layer: &str, suffix: &str) -> Result<&Tensor<T>> {
        match self.entries.get(&format!("{layer}.{suffix}")) {
            Some(Param::Kernel(t)) => Ok(t),
            Some(Param::Vector(_)) => Err(Error::Load(format!("layer `{layer}`: `{suffix}` should be rank 4"))),
            None => Err(missing(layer, suffix)),
        }
    }

    pub(crate) fn vector(&self, layer: &str, suffix: &str) -> Result<&[T]> {
        match self.entries.get(&format!("{layer}.{suffix}")) {
            Some(Param::Vector(v)) => Ok(v),
            Some(Param::Kernel(_)) => Err(Error::Load(format!("layer `{layer}`: `{suffix}` should be rank 1"))),
            None => Err(missing(layer, suffix)),
        }
    }

    /// He-uniform kernels (bound `sqrt(6 / fan_in)`), zero biases, identity batch norm.
    pub fn init(g: &ModelGraph, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = WeightStore::new();
        for spec in g.param_specs() {
            let n = spec.numel();
            let data: Vec<T> = match spec.role {
                ParamRole::Kernel => {
                    let bound = (6.0 / spec.fan_in as f64).sqrt();
                    (0..n).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect()
                }
                ParamRole::Gamma | ParamRole::RunningVar => vec![T::one(); n],
                ParamRole::Bias | ParamRole::Beta | ParamRole::RunningMean => vec![T::zero(); n],
            };
            let p = Param::from_dims(&spec.dims, data).expect("param spec extents are valid");
            store.insert(spec.name, p);
        }
        store
    }

    /// Every graph parameter present with matching extents and nothing extra.
    pub fn check(&self, g: &ModelGraph) -> Result<()> {
        let specs = g.param_specs();
        for s in &specs {
            let p = self
                .entries
                .get(&s.name)
                .ok_or_else(|| Error::Load(format!("layer `{}`: missing weight `{}`", s.layer, s.name)))?;
            if p.dims() != s.dims {
                return Err(Error::Load(format!(
                    "layer `{}`: weight `{}` has extents {:?}, expected {:?}",
                    s.layer,
                    s.name,
                    p.dims(),
                    s.dims
                )));
            }
        }
        if self.entries.len() != specs.len() {
            let known: std::collections::HashSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
            if let Some(extra) = self.entries.keys().find(|k| !known.contains(k.as_str())) {
                return Err(Error::Load(format!("unknown weight `{extra}`")));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> WeightStore<U> {
        WeightStore {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

fn missing(layer: &str, suffix: &str) -> Error {
    Error::Load(format!("layer `{layer}`: missing weight `{layer}.{suffix}`"))
}

impl WeightStore<f32> {
    pub fn write_lsw<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(LSW_MAGIC)?;
        for (name, p) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let dims = p.dims();
            w.write_all(&(dims.len() as u32).to_le_bytes())?;
            for d in dims {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(p.data().len() * 4);
            for v in p.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parse an `LSW1` stream. Structural problems are format errors.
    pub fn read_lsw<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != LSW_MAGIC {
            return Err(Error::Format("missing LSW1 magic".into()));
        }
        let mut store = WeightStore::new();
        while cur.pos < bytes.len() {
            let len = cur.u32()? as usize;
            if len == 0 || len > MAX_NAME {
                return Err(Error::Format(format!("implausible name length {len}")));
            }
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::Format("weight name is not UTF-8".into()))?
                .to_string();
            let rank = cur.u32()? as usize;
            if rank != 4 && rank != 1 {
                return Err(Error::Format(format!("`{name}`: rank {rank} (expected 4 or 1)")));
            }
            let dims = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&c| c > 0)
                .ok_or_else(|| Error::Format(format!("`{name}`: bad extents {dims:?}")))?;
            let payload = cur.take(count.checked_mul(4).ok_or_else(|| Error::Format("payload overflow".into()))?)?;
            let data = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            if store.insert(name.clone(), Param::from_dims(&dims, data)?).is_some() {
                return Err(Error::Format(format!("duplicate weight `{name}`")));
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_lsw(std::io::BufWriter::new(f))
    }

    /// Read a weights file and check it against `g`.
    pub fn load(path: &Path, g: &ModelGraph) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let store = Self::read_lsw(std::io::BufReader::new(f))?;
        store.check(g)?;
        Ok(store)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::Format(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use crate::ops::ConvParams;

    fn graph() -> ModelGraph {
        let mut b = GraphBuilder::new();
        b.input("in", 3).unwrap();
        b.conv_bn("c1", "in", 8, 3, ConvParams::same(3, 1), None).unwrap();
        b.conv("cls", "c1.bn", 2, 1, ConvParams::default(), true).unwrap();
        b.build().unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let g = graph();
        let w = WeightStore::<f32>::init(&g, 7);
        let mut buf = Vec::new();
        w.write_lsw(&mut buf).unwrap();
        assert_eq!(&buf[..4], LSW_MAGIC);
        let back = WeightStore::read_lsw(&buf[..]).unwrap();
        assert_eq!(back, w);
        back.check(&g).unwrap();
    }

    #[test]
    fn unknown_name_is_load_error() {
        let g = graph();
        let mut w = WeightStore::<f32>::init(&g, 7);
        w.insert("ghost.weight", Param::Vector(vec![1.0]));
        assert!(matches!(w.check(&g), Err(Error::Load(m)) if m.contains("ghost")));
    }

    #[test]
    fn truncated_stream_rejected() {
        let g = graph();
        let mut buf = Vec::new();
        WeightStore::<f32>::init(&g, 1).write_lsw(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(WeightStore::read_lsw(&buf[..]), Err(Error::Format(_))));
        assert!(matches!(WeightStore::read_lsw(&b"LSW0"[..]), Err(Error::Format(_))));
    }

    #[test]
    fn init_respects_he_bound() {
        let g = graph();
        let w = WeightStore::<f32>::init(&g, 3);
        let bound = (6.0f32 / 27.0).sqrt();
        assert!(w.get("c1.weight").unwrap().data().iter().all(|v| v.abs() < bound));
        assert!(w.get("cls.bias").unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(WeightStore::<f32>::init(&g, 3), w);
    }
}
