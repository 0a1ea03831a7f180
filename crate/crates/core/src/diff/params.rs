//! Named parameters with Adam state, and the checkpoint file.
//!
//! Checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "DABPCKPT"
//! version    u32      1
//! step       u64      Adam step counter
//! count      u32      number of parameters
//! per parameter, in store order:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   rows u32, cols u32
//!   value    rows*cols f64
//!   m        rows*cols f64   first-moment estimate
//!   v        rows*cols f64   second-moment estimate
//! ```

use std::io::{Read, Write};

use rand::Rng;

use super::{DiffError, ParamGrads, Tensor};

const MAGIC: &[u8; 8] = b"DABPCKPT";
const CHECKPOINT_VERSION: u32 = 1;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Param {
    name: String,
    value: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Parameter arrays plus Adam moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    params: Vec<Param>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let (rows, cols) = value.shape();
        self.params.push(Param {
            name: name.into(),
            value,
            m: Tensor::zeros(rows, cols),
            v: Tensor::zeros(rows, cols),
        });
        ParamId(self.params.len() - 1)
    }

    /// Adds a parameter drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        self.add(name, Tensor::from_vec(rows, cols, data).expect("sized"))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Sets every parameter to zero.
    pub fn zero_all(&mut self) {
        for p in &mut self.params {
            p.value.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// One Adam update with an L2 term: the gradient used is `g + weight_decay * θ`.
    pub fn adam_step(
        &mut self,
        grads: &ParamGrads,
        lr: f64,
        weight_decay: f64,
    ) -> Result<(), DiffError> {
        for (i, p) in self.params.iter().enumerate() {
            match grads.0.get(i).and_then(Option::as_ref) {
                None => return Err(DiffError::MissingGradient(p.name.clone())),
                Some(g) if g.shape() != p.value.shape() => {
                    return Err(DiffError::Shape {
                        op: "adam_step",
                        detail: format!(
                            "gradient {:?} for parameter {} of shape {:?}",
                            g.shape(),
                            p.name,
                            p.value.shape()
                        ),
                    })
                }
                Some(_) => {}
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (p, g) in self.params.iter_mut().zip(&grads.0) {
            let g = g.as_ref().expect("checked above");
            let value = p.value.data_mut();
            let m = p.m.data_mut();
            let v = p.v.data_mut();
            for k in 0..value.len() {
                let grad = g.data()[k] + weight_decay * value[k];
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * grad;
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * grad * grad;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                value[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }

    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<(), DiffError> {
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&(p.name.len() as u32).to_le_bytes())?;
            w.write_all(p.name.as_bytes())?;
            w.write_all(&(p.value.rows() as u32).to_le_bytes())?;
            w.write_all(&(p.value.cols() as u32).to_le_bytes())?;
            for t in [&p.value, &p.m, &p.v] {
                for x in t.data() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self, DiffError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(DiffError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(DiffError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let step = read_u64(&mut r)?;
        let count = read_u32(&mut r)? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| DiffError::Checkpoint("parameter name is not UTF-8".into()))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut read_tensor = || -> Result<Tensor, DiffError> {
                let data = (0..rows * cols)
                    .map(|_| read_f64(&mut r))
                    .collect::<Result<Vec<_>, _>>()?;
                Tensor::from_vec(rows, cols, data)
            };
            let value = read_tensor()?;
            let m = read_tensor()?;
            let v = read_tensor()?;
            params.push(Param { name, value, m, v });
        }
        Ok(Self { params, step })
    }

    /// Copies values and optimizer state from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &ParameterStore) -> Result<(), DiffError> {
        for p in &mut self.params {
            let src = other
                .params
                .iter()
                .find(|q| q.name == p.name)
                .ok_or_else(|| DiffError::Checkpoint(format!("missing parameter {}", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(DiffError::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    src.value.shape(),
                    p.value.shape()
                )));
            }
            p.value = src.value.clone();
            p.m = src.m.clone();
            p.v = src.v.clone();
        }
        self.step = other.step;
        Ok(())
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, DiffError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, DiffError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64, DiffError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
