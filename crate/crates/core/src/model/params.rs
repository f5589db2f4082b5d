use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{decode_checkpoint, encode_checkpoint, Scalar, Tape, Tensor, Var};
use crate::error::{AstnError, Result};

/// Disjoint parameter groups that the training phases update or freeze.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// Spatial, intrinsic and recurrent encoders.
    Generator,
    Classifier,
    Discriminator,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Generator, Partition::Classifier, Partition::Discriminator];
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<F: Scalar> {
    pub name: String,
    pub partition: Partition,
    pub tensor: Tensor<F>,
}

/// Named tensors in creation order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<F: Scalar> {
    params: Vec<Param<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, partition: Partition, tensor: Tensor<F>) -> usize {
        self.params.push(Param {
            name: name.into(),
            partition,
            tensor,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    pub fn get(&self, i: usize) -> &Param<F> {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param<F> {
        &mut self.params[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<F>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn indices(&self, partition: Partition) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&i| self.params[i].partition == partition)
            .collect()
    }

    pub fn count(&self, partition: Partition) -> usize {
        self.params
            .iter()
            .filter(|p| p.partition == partition)
            .map(|p| p.tensor.len())
            .sum()
    }

    pub fn tensors(&self, partition: Partition) -> impl Iterator<Item = &Tensor<F>> {
        self.params
            .iter()
            .filter(move |p| p.partition == partition)
            .map(|p| &p.tensor)
    }

    pub fn tensors_mut(&mut self, partition: Partition) -> Vec<&mut Tensor<F>> {
        self.params
            .iter_mut()
            .filter(|p| p.partition == partition)
            .map(|p| &mut p.tensor)
            .collect()
    }

    /// Mutable tensors of every listed partition, in store order.
    pub fn tensors_mut_in(&mut self, partitions: &[Partition]) -> Vec<&mut Tensor<F>> {
        self.params
            .iter_mut()
            .filter(|p| partitions.contains(&p.partition))
            .map(|p| &mut p.tensor)
            .collect()
    }

    /// Copy of every value in `partition`, for freeze assertions.
    pub fn snapshot(&self, partition: Partition) -> Vec<Vec<F>> {
        self.tensors(partition).map(|t| t.data().to_vec()).collect()
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    partition: p.partition,
                    tensor: p.tensor.cast(),
                })
                .collect(),
        }
    }

    /// Places every parameter on `tape`, as a variable when its partition
    /// is listed in `trainable` and as a constant otherwise.
    pub fn bind(&self, tape: &mut Tape<F>, trainable: &[Partition]) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                let mut t = p.tensor.clone();
                t.set_requires_grad(false);
                if trainable.contains(&p.partition) {
                    tape.variable(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect();
        Bound {
            vars,
            trainable: trainable.to_vec(),
        }
    }

    /// Copies the gradients of `partition` from a tape after backward into
    /// the parameters' gradient buffers.
    pub fn pull_grads(&mut self, tape: &Tape<F>, bound: &Bound, partition: Partition) -> Result<()> {
        if !bound.trainable.contains(&partition) {
            return Err(AstnError::Config(format!("{partition:?} was bound as constant")));
        }
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if p.partition != partition {
                continue;
            }
            let g = tape
                .grad(v)
                .ok_or_else(|| AstnError::Config(format!("no gradient for {}", p.name)))?;
            p.tensor.set_requires_grad(true);
            p.tensor.set_grad(&g)?;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.tensor.all_finite())
    }

    pub fn encode(&self, meta: serde_json::Value) -> Result<Vec<u8>> {
        let named: Vec<(&str, &Tensor<F>)> = self.params.iter().map(|p| (p.name.as_str(), &p.tensor)).collect();
        encode_checkpoint(&named, meta)
    }

    /// Overwrites values from checkpoint bytes; names and shapes must match.
    pub fn restore(&mut self, bytes: &[u8], path: &Path) -> Result<serde_json::Value> {
        let (tensors, meta) = decode_checkpoint::<F>(bytes, path)?;
        if tensors.len() != self.params.len() {
            return Err(AstnError::format(
                "checkpoint",
                path,
                format!("{} tensors, model has {}", tensors.len(), self.params.len()),
            ));
        }
        for (p, (name, t)) in self.params.iter_mut().zip(tensors) {
            if p.name != name || p.tensor.shape() != t.shape() {
                return Err(AstnError::format(
                    "checkpoint",
                    path,
                    format!("{name} {:?} does not match {} {:?}", t.shape(), p.name, p.tensor.shape()),
                ));
            }
            p.tensor = t;
        }
        Ok(meta)
    }
}

/// Tape handles for a bound [`ParamStore`], indexed like the store.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
    trainable: Vec<Partition>,
}

impl Bound {
    /// Wraps caller-created handles (one per parameter, in store order),
    /// treating every partition as trainable.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound {
            vars,
            trainable: Partition::ALL.to_vec(),
        }
    }

    pub fn var(&self, i: usize) -> Var {
        self.vars[i]
    }
}

/// Uniform weights with variance `gain² / fan_in`.
pub fn fan_in_uniform<F: Scalar>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut ChaCha8Rng) -> Tensor<F> {
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| F::from_f64(rng.random_range(-bound..=bound))).collect();
    Tensor::new(shape, data).expect("shape product matches")
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
