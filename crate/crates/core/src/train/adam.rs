//! Adam with bias correction.
//!
//! Moments are kept per parameter in the order the parameters are handed
//! to [`Adam::step`], which is the model's definition order. The update is
//! evaluated in `f64` per element and stored back in `f32`.

use crate::error::{Error, Result};
use crate::param::Param;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    names: Vec<String>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(1e-3)
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            names: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    fn ensure_state(&mut self, params: &[(String, &mut Param)]) -> Result<()> {
        if self.m.is_empty() {
            for (name, p) in params {
                self.names.push(name.clone());
                self.m.push(Tensor::zeros(p.value.shape())?);
                self.v.push(Tensor::zeros(p.value.shape())?);
            }
            return Ok(());
        }
        if self.names.len() != params.len() {
            return Err(Error::input(format!(
                "optimizer tracks {} parameters, got {}",
                self.names.len(),
                params.len()
            )));
        }
        for ((name, p), (known, m)) in params.iter().zip(self.names.iter().zip(&self.m)) {
            if name != known || p.value.dims() != m.dims() {
                return Err(Error::input(format!(
                    "parameter `{name}` {} does not match optimizer slot `{known}` {}",
                    p.value.dims(),
                    m.dims()
                )));
            }
        }
        Ok(())
    }

    /// One bias-corrected update of every parameter from its gradient.
    pub fn step(&mut self, mut params: Vec<(String, &mut Param)>) -> Result<()> {
        self.ensure_state(&params)?;
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (k, (_, p)) in params.iter_mut().enumerate() {
            let Param { value, grad } = &mut **p;
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (((w, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                let g = f64::from(g);
                let mk = b1 * f64::from(*m) + (1.0 - b1) * g;
                let vk = b2 * f64::from(*v) + (1.0 - b2) * g * g;
                *m = mk as f32;
                *v = vk as f32;
                let update = self.lr * (mk / c1) / ((vk / c2).sqrt() + self.eps);
                *w = (f64::from(*w) - update) as f32;
            }
        }
        Ok(())
    }

    /// `adam.m.<name>` and `adam.v.<name>` for every tracked parameter;
    /// empty before the first step.
    pub fn state_tensors(&self) -> Vec<(String, &Tensor)> {
        let m = self.names.iter().zip(&self.m).map(|(n, t)| (format!("adam.m.{n}"), t));
        let v = self.names.iter().zip(&self.v).map(|(n, t)| (format!("adam.v.{n}"), t));
        m.chain(v).collect()
    }

    /// Rebuilds state from saved moments in parameter order.
    pub fn restore(
        lr: f64,
        t: u64,
        names: Vec<String>,
        m: Vec<Tensor>,
        v: Vec<Tensor>,
    ) -> Result<Self> {
        if names.len() != m.len() || names.len() != v.len() {
            return Err(Error::input("optimizer state lengths differ"));
        }
        Ok(Self {
            t,
            names,
            m,
            v,
            ..Self::new(lr)
        })
    }
}
