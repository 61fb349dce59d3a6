//! Binary checkpoint format: named weight arrays, optimizer moments, RNG
//! state and a config snapshot, all little-endian and bit-exact on
//! round-trip.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::ArrayD;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::write_atomic;
use crate::blocks::{Adam, Dtype, Param, Params, Real};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"mvsegckp";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    ShapeMae,
    MvUnet,
    Unet2d,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::ShapeMae, ModelKind::MvUnet, ModelKind::Unet2d];

    fn code(self) -> u8 {
        match self {
            ModelKind::ShapeMae => 1,
            ModelKind::MvUnet => 2,
            ModelKind::Unet2d => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::ShapeMae => "shape_mae",
            ModelKind::MvUnet => "mv_unet",
            ModelKind::Unet2d => "unet2d",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown model {s:?} (expected shape_mae, mv_unet or unet2d)"
                ))
            })
    }
}

/// A named tensor with explicit dtype, decoupled from any architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// Elements as little-endian bytes, logical (row-major) order.
    pub data: Vec<u8>,
}

impl NamedArray {
    pub fn from_array<F: Real>(name: impl Into<String>, a: &ArrayD<F>) -> Self {
        let mut data = Vec::with_capacity(a.len() * F::DTYPE.size());
        for v in a.iter() {
            match F::DTYPE {
                Dtype::F32 => data.extend_from_slice(&(v.f64() as f32).to_le_bytes()),
                Dtype::F64 => data.extend_from_slice(&v.f64().to_le_bytes()),
            }
        }
        NamedArray {
            name: name.into(),
            dtype: F::DTYPE,
            shape: a.shape().to_vec(),
            data,
        }
    }

    pub fn to_array<F: Real>(&self) -> Result<ArrayD<F>> {
        if self.dtype != F::DTYPE {
            return Err(Error::InvalidInput(format!(
                "array {:?} is {:?}, expected {:?}",
                self.name,
                self.dtype,
                F::DTYPE
            )));
        }
        let values: Vec<F> = match self.dtype {
            Dtype::F32 => self
                .data
                .chunks_exact(4)
                .map(|c| F::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            Dtype::F64 => self
                .data
                .chunks_exact(8)
                .map(|c| F::of(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        };
        ArrayD::from_shape_vec(self.shape.clone(), values).map_err(|e| {
            Error::InvalidInput(format!("array {:?}: {e}", self.name))
        })
    }
}

/// Restorable ChaCha8 position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
    pub stream: u64,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
            stream: rng.get_stream(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Adam moments plus hyperparameters, aligned by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamSnapshot {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// (name, first moment, second moment).
    pub moments: Vec<(String, NamedArray, NamedArray)>,
}

pub fn snapshot_adam<F: Real>(opt: &Adam<F>) -> AdamSnapshot {
    AdamSnapshot {
        step: opt.step,
        lr: opt.lr,
        beta1: opt.beta1,
        beta2: opt.beta2,
        eps: opt.eps,
        moments: opt
            .names
            .iter()
            .zip(opt.m.iter().zip(&opt.v))
            .map(|(n, (m, v))| {
                (
                    n.clone(),
                    NamedArray::from_array(n.clone(), m),
                    NamedArray::from_array(n.clone(), v),
                )
            })
            .collect(),
    }
}

pub fn restore_adam<F: Real>(snap: &AdamSnapshot) -> Result<Adam<F>> {
    let mut opt = Adam::new(snap.lr);
    opt.beta1 = snap.beta1;
    opt.beta2 = snap.beta2;
    opt.eps = snap.eps;
    opt.step = snap.step;
    for (name, m, v) in &snap.moments {
        opt.names.push(name.clone());
        opt.m.push(m.to_array::<F>()?);
        opt.v.push(v.to_array::<F>()?);
    }
    Ok(opt)
}

/// Everything needed to resume a run.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointData {
    pub model_kind: ModelKind,
    pub epoch: u64,
    pub step: u64,
    /// Resolved config at save time, TOML text.
    pub config_toml: String,
    pub rng: RngState,
    pub params: Vec<NamedArray>,
    /// Non-learned state (batch-norm running statistics).
    pub buffers: Vec<NamedArray>,
    pub optimizer: Option<AdamSnapshot>,
}

// ---- model <-> NamedArray plumbing -------------------------------------

pub fn collect_params<F: Real>(model: &mut dyn Params<F>) -> Vec<NamedArray> {
    let mut out = Vec::new();
    model.visit_params("", &mut |name: String, p: &mut Param<F>| {
        out.push(NamedArray::from_array(name, &p.value));
    });
    out
}

pub fn collect_buffers<F: Real>(model: &mut dyn Params<F>) -> Vec<NamedArray> {
    let mut out = Vec::new();
    model.visit_buffers("", &mut |name: String, b: &mut ArrayD<F>| {
        out.push(NamedArray::from_array(name, b));
    });
    out
}

fn check_names<F: Real>(
    model: &mut dyn Params<F>,
    arrays: &BTreeMap<&str, &NamedArray>,
    buffers: bool,
) -> Result<()> {
    let mut model_names = Vec::new();
    if buffers {
        model.visit_buffers("", &mut |name, _| model_names.push(name));
    } else {
        model.visit_params("", &mut |name, _| model_names.push(name));
    }
    let missing: Vec<String> = model_names
        .iter()
        .filter(|n| !arrays.contains_key(n.as_str()))
        .cloned()
        .collect();
    let unexpected: Vec<String> = arrays
        .keys()
        .filter(|k| !model_names.iter().any(|n| n == *k))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        return Err(Error::CheckpointMismatch { missing, unexpected });
    }
    Ok(())
}

/// Loads `arrays` into the model's parameters; name sets must match
/// exactly, shapes must agree.
pub fn apply_params<F: Real>(model: &mut dyn Params<F>, arrays: &[NamedArray]) -> Result<()> {
    let by_name: BTreeMap<&str, &NamedArray> =
        arrays.iter().map(|a| (a.name.as_str(), a)).collect();
    check_names(model, &by_name, false)?;
    let mut first_err = None;
    model.visit_params("", &mut |name: String, p: &mut Param<F>| {
        if first_err.is_some() {
            return;
        }
        let stored = by_name[name.as_str()];
        match stored.to_array::<F>() {
            Ok(a) if a.shape() == p.value.shape() => p.value = a,
            Ok(a) => {
                first_err = Some(Error::ShapeMismatch {
                    expected: format!("{name}: {:?}", p.value.shape()),
                    actual: format!("{:?}", a.shape()),
                })
            }
            Err(e) => first_err = Some(e),
        }
    });
    first_err.map_or(Ok(()), Err)
}

pub fn apply_buffers<F: Real>(model: &mut dyn Params<F>, arrays: &[NamedArray]) -> Result<()> {
    let by_name: BTreeMap<&str, &NamedArray> =
        arrays.iter().map(|a| (a.name.as_str(), a)).collect();
    check_names(model, &by_name, true)?;
    let mut first_err = None;
    model.visit_buffers("", &mut |name: String, b: &mut ArrayD<F>| {
        if first_err.is_some() {
            return;
        }
        match by_name[name.as_str()].to_array::<F>() {
            Ok(a) if a.shape() == b.shape() => *b = a,
            Ok(a) => {
                first_err = Some(Error::ShapeMismatch {
                    expected: format!("{name}: {:?}", b.shape()),
                    actual: format!("{:?}", a.shape()),
                })
            }
            Err(e) => first_err = Some(e),
        }
    });
    first_err.map_or(Ok(()), Err)
}

// ---- binary codec --------------------------------------------------------

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn array(&mut self, a: &NamedArray) {
        self.str(&a.name);
        self.u8(a.dtype.code());
        self.u8(a.shape.len() as u8);
        for &d in &a.shape {
            self.u64(d as u64);
        }
        self.buf.extend_from_slice(&a.data);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, detail: impl Into<String>) -> Error {
        Error::Corrupt {
            path: self.path.into(),
            detail: detail.into(),
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.corrupt(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| self.corrupt("invalid UTF-8 in string field"))
    }
    fn array(&mut self) -> Result<NamedArray> {
        let name = self.str()?;
        let dtype = Dtype::from_code(self.u8()?)
            .ok_or_else(|| self.corrupt(format!("unknown dtype code in array {name:?}")))?;
        let ndim = self.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let len: usize = shape.iter().product::<usize>() * dtype.size();
        let data = self.take(len)?.to_vec();
        Ok(NamedArray { name, dtype, shape, data })
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.corrupt(format!(
                "{} trailing bytes after the last record",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn encode(ckpt: &CheckpointData) -> Vec<u8> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u8(ckpt.model_kind.code());
    w.u64(ckpt.epoch);
    w.u64(ckpt.step);
    w.str(&ckpt.config_toml);
    w.buf.extend_from_slice(&ckpt.rng.seed);
    w.u128(ckpt.rng.word_pos);
    w.u64(ckpt.rng.stream);
    for group in [&ckpt.params, &ckpt.buffers] {
        w.u32(group.len() as u32);
        for a in group {
            w.array(a);
        }
    }
    match &ckpt.optimizer {
        None => w.u8(0),
        Some(o) => {
            w.u8(1);
            w.u64(o.step);
            w.f64(o.lr);
            w.f64(o.beta1);
            w.f64(o.beta2);
            w.f64(o.eps);
            w.u32(o.moments.len() as u32);
            for (name, m, v) in &o.moments {
                w.str(name);
                w.array(m);
                w.array(v);
            }
        }
    }
    w.buf
}

fn decode(bytes: &[u8], path: &Path) -> Result<CheckpointData> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(r.corrupt("bad magic; not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let model_kind = ModelKind::from_code(r.u8()?)
        .ok_or_else(|| r.corrupt("unknown model kind code"))?;
    let epoch = r.u64()?;
    let step = r.u64()?;
    let config_toml = r.str()?;
    let rng = RngState {
        seed: r.take(32)?.try_into().unwrap(),
        word_pos: r.u128()?,
        stream: r.u64()?,
    };
    let mut groups = [Vec::new(), Vec::new()];
    for group in &mut groups {
        let count = r.u32()?;
        for _ in 0..count {
            group.push(r.array()?);
        }
    }
    let [params, buffers] = groups;
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let lr = r.f64()?;
            let beta1 = r.f64()?;
            let beta2 = r.f64()?;
            let eps = r.f64()?;
            let count = r.u32()?;
            let mut moments = Vec::with_capacity(count as usize);
            for _ in 0..count {
                let name = r.str()?;
                let m = r.array()?;
                let v = r.array()?;
                moments.push((name, m, v));
            }
            Some(AdamSnapshot { step, lr, beta1, beta2, eps, moments })
        }
        other => return Err(r.corrupt(format!("bad optimizer flag {other}"))),
    };
    r.finish()?;
    Ok(CheckpointData {
        model_kind,
        epoch,
        step,
        config_toml,
        rng,
        params,
        buffers,
        optimizer,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &CheckpointData) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_atomic(path, &encode(ckpt))
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
