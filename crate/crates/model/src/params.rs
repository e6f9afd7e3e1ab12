//! Named, seeded parameter storage.
//!
//! Parameters are initialized from a ChaCha stream on the host, so a seed
//! fully determines the initial weights.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Result, Tensor, Var};
use rand_distr::{Distribution, StandardNormal};

use dualcam_core::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Zero-mean normal with the given standard deviation.
    Normal(f64),
}

#[derive(Debug, Clone)]
pub struct ParamStore {
    dtype: DType,
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            dtype,
            vars: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Creates a parameter. Names must be unique.
    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut SeededRng) -> Result<Tensor> {
        assert!(!self.vars.contains_key(name), "duplicate parameter {name}");
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(std) => (0..n)
                .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect(),
        };
        let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn select(&self, keep: impl Fn(&str) -> bool) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| keep(k))
            .map(|(_, v)| v.clone())
            .collect()
    }

    /// Host copy of one parameter as `f64`.
    pub fn values(&self, name: &str) -> Result<Vec<f64>> {
        let v = self
            .vars
            .get(name)
            .ok_or_else(|| candle_core::Error::Msg(format!("unknown parameter {name}")))?;
        v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()
    }

    /// Overwrites one parameter from host values.
    pub fn set_values(&self, name: &str, values: &[f64]) -> Result<()> {
        let v = self
            .vars
            .get(name)
            .ok_or_else(|| candle_core::Error::Msg(format!("unknown parameter {name}")))?;
        let t = Tensor::from_slice(values, v.shape(), &Device::Cpu)?.to_dtype(self.dtype)?;
        v.set(&t)
    }

    /// Replaces every parameter (including zero-initialized ones) with
    /// normal noise. Used to exercise gradients through gated paths.
    pub fn randomize(&self, std: f64, rng: &mut SeededRng) -> Result<()> {
        for name in self.vars.keys() {
            let n = self.vars[name].elem_count();
            let values: Vec<f64> = (0..n)
                .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect();
            self.set_values(name, &values)?;
        }
        Ok(())
    }

    /// Bitwise equality of all parameter values.
    pub fn same_values(&self, other: &ParamStore) -> Result<bool> {
        if self.vars.len() != other.vars.len() {
            return Ok(false);
        }
        for (k, v) in &self.vars {
            let Some(o) = other.vars.get(k) else { return Ok(false) };
            let a = v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            let b = o.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            if a.iter().zip(&b).any(|(x, y)| x.to_bits() != y.to_bits()) || a.len() != b.len() {
                return Ok(false);
            }
        }
        Ok(true)
    }
}
