//! Parameter storage and the small layer set the network is built from.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{LgsanError, Result};
use crate::ops;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Updated by the forward pass (normalization statistics), never by the optimizer.
    Buffer,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// `U(-bound, bound)`.
    Uniform(f64),
    Normal(f64),
    Const(f64),
}

impl Init {
    /// Default for a layer with `fan_in` inputs: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn fan_in(fan_in: usize) -> Self {
        Init::Uniform(1.0 / (fan_in as f64).sqrt())
    }
}

struct Entry {
    var: Var,
    kind: ParamKind,
}

/// Named parameters. Initial values are drawn from a seeded stream in
/// construction order, so two stores built the same way are identical.
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
    rng: ChaCha8Rng,
    device: Device,
    dtype: DType,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: Device) -> Self {
        Self {
            entries: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            device,
            dtype,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        self.create(name, shape, init, ParamKind::Trainable)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        self.create(name, shape, Init::Const(value), ParamKind::Buffer)
    }

    fn create(&mut self, name: &str, shape: &[usize], init: Init, kind: ParamKind) -> Result<Tensor> {
        if self.entries.contains_key(name) {
            return Err(LgsanError::Config(format!("parameter {name} defined twice")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Uniform(b) => (0..n).map(|_| self.rng.random_range(-b..=b)).collect(),
            Init::Normal(s) => (0..n)
                .map(|_| s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut self.rng))
                .collect(),
            Init::Const(v) => vec![v; n],
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.entries.insert(name.to_string(), Entry { var, kind });
        Ok(out)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.get(name).map(|e| &e.var)
    }

    pub fn kind(&self, name: &str) -> Option<ParamKind> {
        self.entries.get(name).map(|e| e.kind)
    }

    /// Trainable variables, sorted by name.
    pub fn trainable(&self) -> Vec<(String, Var)> {
        self.entries
            .iter()
            .filter(|(_, e)| e.kind == ParamKind::Trainable)
            .map(|(k, e)| (k.clone(), e.var.clone()))
            .collect()
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.trainable().into_iter().map(|(_, v)| v).collect()
    }

    pub fn num_trainable(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.var.elem_count())
            .sum()
    }

    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .get(name)
            .ok_or_else(|| LgsanError::Config(format!("no parameter named {name}")))?;
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Sets every parameter whose name starts with `prefix` to zero.
    pub fn zero_prefix(&self, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for (name, e) in self.entries.range(prefix.to_string()..) {
            if !name.starts_with(prefix) {
                break;
            }
            e.var.set(&e.var.zeros_like()?)?;
            n += 1;
        }
        Ok(n)
    }

    pub fn fill(&self, name: &str, value: f64) -> Result<()> {
        let var = self
            .get(name)
            .ok_or_else(|| LgsanError::Config(format!("no parameter named {name}")))?;
        var.set(&(var.ones_like()? * value)?)?;
        Ok(())
    }

    pub fn save(&self, path: &Path, metadata: HashMap<String, String>) -> Result<()> {
        let dtype = match self.dtype {
            DType::F32 => safetensors::Dtype::F32,
            DType::F64 => safetensors::Dtype::F64,
            other => return Err(LgsanError::Checkpoint(format!("unsupported dtype {other:?}"))),
        };
        let mut blobs = Vec::with_capacity(self.entries.len());
        for (name, e) in &self.entries {
            let flat = e.var.as_tensor().flatten_all()?;
            let bytes: Vec<u8> = match self.dtype {
                DType::F32 => flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
                _ => flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
            };
            blobs.push((name.clone(), e.var.dims().to_vec(), bytes));
        }
        let views = blobs
            .iter()
            .map(|(n, s, b)| Ok((n.as_str(), safetensors::tensor::TensorView::new(dtype, s.clone(), b)?)))
            .collect::<std::result::Result<Vec<_>, safetensors::SafeTensorError>>()
            .map_err(|e| LgsanError::Checkpoint(e.to_string()))?;
        let bytes = safetensors::serialize(views, Some(metadata))
            .map_err(|e| LgsanError::Checkpoint(e.to_string()))?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    /// Overwrites every parameter from a file written by [`ParamStore::save`]
    /// and returns its metadata. Names and shapes must match exactly.
    pub fn load(&self, path: &Path) -> Result<HashMap<String, String>> {
        let bytes = std::fs::read(path)?;
        let ck = |e: safetensors::SafeTensorError| LgsanError::Checkpoint(e.to_string());
        let (_, meta) = safetensors::SafeTensors::read_metadata(&bytes).map_err(ck)?;
        let st = safetensors::SafeTensors::deserialize(&bytes).map_err(ck)?;
        let mut file_names: Vec<&str> = st.names();
        file_names.sort_unstable();
        let ours: Vec<&str> = self.names().collect();
        if file_names != ours {
            let missing: Vec<_> = ours.iter().filter(|n| !file_names.contains(n)).collect();
            let extra: Vec<_> = file_names.iter().filter(|n| !ours.contains(n)).collect();
            return Err(LgsanError::Version(format!(
                "parameter sets differ (missing {missing:?}, unexpected {extra:?})"
            )));
        }
        for (name, e) in &self.entries {
            let view = st.tensor(name).map_err(ck)?;
            if view.shape() != e.var.dims() {
                return Err(LgsanError::Version(format!(
                    "{name}: file shape {:?}, model shape {:?}",
                    view.shape(),
                    e.var.dims()
                )));
            }
            let values: Vec<f64> = match view.dtype() {
                safetensors::Dtype::F32 => view
                    .data()
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                safetensors::Dtype::F64 => view
                    .data()
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                other => return Err(LgsanError::Checkpoint(format!("{name}: unsupported dtype {other:?}"))),
            };
            let t = Tensor::from_vec(values, view.shape(), &self.device)?.to_dtype(self.dtype)?;
            e.var.set(&t)?;
        }
        Ok(meta.metadata().clone().unwrap_or_default())
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        path: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = cin * k * k;
        let weight = ps.param(&join(path, "weight"), &[cout, cin, k, k], Init::fan_in(fan_in))?;
        let bias = if bias {
            Some(ps.param(&join(path, "bias"), &[cout], Init::fan_in(fan_in))?)
        } else {
            None
        };
        Ok(Self { weight, bias, stride, padding })
    }

    pub fn pointwise(ps: &mut ParamStore, path: &str, cin: usize, cout: usize, bias: bool) -> Result<Self> {
        Self::new(ps, path, cin, cout, 1, 1, 0, bias)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = crate::ops::conv2d(x, &self.weight, self.padding, self.stride)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?,
            None => y,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, path: &str, din: usize, dout: usize) -> Result<Self> {
        Ok(Self {
            weight: ps.param(&join(path, "weight"), &[dout, din], Init::fan_in(din))?,
            bias: ps.param(&join(path, "bias"), &[dout], Init::fan_in(din))?,
        })
    }

    /// Works on `(.., din)` inputs of rank 2 or 3.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = self.weight.t()?;
        let y = match x.rank() {
            2 => x.matmul(&w)?,
            _ => x.broadcast_matmul(&w)?,
        };
        Ok(y.broadcast_add(&self.bias)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, path: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.param(&join(path, "gamma"), &[dim], Init::Const(1.0))?,
            beta: ps.param(&join(path, "beta"), &[dim], Init::Const(0.0))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(ops::layer_norm_last(x, &self.gamma, &self.beta, 1e-5)?)
    }
}

/// Layer normalization over the channel axis of an NCHW map.
#[derive(Debug, Clone)]
pub struct ChannelNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl ChannelNorm {
    pub fn new(ps: &mut ParamStore, path: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.param(&join(path, "gamma"), &[channels], Init::Const(1.0))?,
            beta: ps.param(&join(path, "beta"), &[channels], Init::Const(0.0))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(ops::channel_norm(x, &self.gamma, &self.beta, 1e-5)?)
    }
}

/// Batch normalization; batch statistics in training, running ones otherwise.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    gamma: Tensor,
    beta: Tensor,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm2d {
    pub fn new(ps: &mut ParamStore, path: &str, channels: usize) -> Result<Self> {
        let gamma = ps.param(&join(path, "gamma"), &[channels], Init::Const(1.0))?;
        let beta = ps.param(&join(path, "beta"), &[channels], Init::Const(0.0))?;
        let mean_name = join(path, "running_mean");
        let var_name = join(path, "running_var");
        ps.buffer(&mean_name, &[channels], 0.0)?;
        ps.buffer(&var_name, &[channels], 1.0)?;
        Ok(Self {
            gamma,
            beta,
            running_mean: ps.get(&mean_name).unwrap().clone(),
            running_var: ps.get(&var_name).unwrap().clone(),
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let (mean, var) = if train {
            let flat = x.transpose(0, 1)?.contiguous()?.reshape((c, n * h * w))?;
            let mean = flat.mean(1)?;
            let var = flat.broadcast_sub(&mean.unsqueeze(1)?)?.sqr()?.mean(1)?;
            let count = (n * h * w) as f64;
            let unbiased = if count > 1.0 { (var.detach() * (count / (count - 1.0)))? } else { var.detach() };
            let m = self.momentum;
            self.running_mean
                .set(&((self.running_mean.as_tensor() * (1.0 - m))? + (mean.detach() * m)?)?)?;
            self.running_var
                .set(&((self.running_var.as_tensor() * (1.0 - m))? + (unbiased * m)?)?)?;
            (mean, var)
        } else {
            (self.running_mean.as_tensor().detach(), self.running_var.as_tensor().detach())
        };
        let shape = (1, c, 1, 1);
        let scale = (self.gamma.reshape(shape)?).broadcast_div(&(var.reshape(shape)? + self.eps)?.sqrt()?)?;
        Ok(x.broadcast_sub(&mean.reshape(shape)?)?
            .broadcast_mul(&scale)?
            .broadcast_add(&self.beta.reshape(shape)?)?)
    }
}

/// 3x3 convolution (no bias) -> channel norm -> ReLU.
#[derive(Debug, Clone)]
pub struct ConvNormAct {
    conv: Conv2d,
    norm: ChannelNorm,
}

impl ConvNormAct {
    pub fn new(ps: &mut ParamStore, path: &str, cin: usize, cout: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(ps, &join(path, "conv"), cin, cout, 3, stride, 1, false)?,
            norm: ChannelNorm::new(ps, &join(path, "norm"), cout)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.norm.forward(&self.conv.forward(x)?)?.relu()?)
    }
}
