//! Dense layers over a [`Graph`], initialised from a seeded ChaCha stream.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

/// `y = act(x · W + b)` with `W` stored as `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl Dense {
    /// Uniform He/Glorot-style init: bound `sqrt(6 / fan_in)` for ReLU layers,
    /// `sqrt(6 / (fan_in + fan_out))` otherwise. Biases start at zero.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
    ) -> Self {
        let bound = match activation {
            Activation::Relu => libm::sqrt(6.0 / inputs as f64),
            _ => libm::sqrt(6.0 / (inputs + outputs) as f64),
        };
        let w: Vec<f64> = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::matrix(inputs, outputs, w).expect("sized"),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(alloc::vec![outputs]));
        Self {
            weight,
            bias,
            inputs,
            outputs,
            activation,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w)?;
        let y = g.add_bias(y, b)?;
        Ok(match self.activation {
            Activation::Linear => y,
            Activation::Relu => g.relu(y),
            Activation::Tanh => g.tanh(y),
        })
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Stack of dense layers; every hidden layer uses ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`; `last` is the output activation.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        widths: &[usize],
        last: Activation,
    ) -> Self {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { last } else { Activation::Relu };
                let layer_name: String = format!("{name}.{i}");
                Dense::new(store, rng, &layer_name, widths[i], widths[i + 1], act)
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, mut x: Var) -> Result<Var> {
        for l in &self.layers {
            x = l.forward(g, store, x)?;
        }
        Ok(x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_bounded_and_seeded() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        let la = Dense::new(&mut a, &mut rng_for(3, 1), "l", 6, 4, Activation::Relu);
        Dense::new(&mut b, &mut rng_for(3, 1), "l", 6, 4, Activation::Relu);
        assert_eq!(a, b);
        // sqrt(6 / fan_in) with six inputs
        let bound = 1.0;
        assert!(a.get(la.weight).values().iter().all(|w| w.abs() < bound));
        assert!(a.get(la.bias).values().iter().all(|&v| v == 0.0));
        assert_eq!(a.name(la.weight), "l.weight");
    }

    #[test]
    fn forward_applies_activation() {
        let mut store = ParamStore::new();
        let layer = Dense::new(&mut store, &mut rng_for(0, 0), "t", 2, 3, Activation::Tanh);
        let mut g = Graph::new();
        let x = g
            .constant(alloc::vec![5, 2], (0..10).map(|v| v as f64).collect())
            .unwrap();
        let y = layer.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(y), &[5, 3]);
        assert!(g.values(y).iter().all(|v| v.abs() < 1.0));
    }
}
