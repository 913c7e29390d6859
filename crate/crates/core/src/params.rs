use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor<f32>)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.entries.push((name.into(), t));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<f32>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<f32>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Inserts every parameter into `g` (cast to `T`), in order.
    pub fn to_graph<T: Element>(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|(_, t)| {
                let t = t.cast::<T>();
                if trainable {
                    g.param(t)
                } else {
                    g.constant(t)
                }
            })
            .collect()
    }

    /// Replaces every tensor with the same-named entry of `other`; shapes
    /// and names must match exactly.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Config(alloc::format!(
                "expected {} tensors, got {}",
                self.len(),
                other.len()
            )));
        }
        for (name, t) in &mut self.entries {
            let src = other
                .get(name)
                .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
            if src.shape() != t.shape() {
                return Err(Error::Shape {
                    op: "load_params",
                    detail: alloc::format!("{name}: {:?} vs {:?}", src.shape(), t.shape()),
                });
            }
            *t = src.clone();
        }
        Ok(())
    }
}

/// Kaiming-normal conv weight `[out, in, k, k]`, std `sqrt(2 / fan_in)`.
pub(crate) fn kaiming_conv<R: Rng>(rng: &mut R, out: usize, inp: usize, k: usize) -> Tensor<f32> {
    let fan_in = (inp * k * k) as f32;
    let dist = Normal::new(0.0f32, libm::sqrtf(2.0 / fan_in)).expect("positive std");
    Tensor::from_fn(&[out, inp, k, k], |_| dist.sample(rng))
}
