//! Plain feedforward Q-network on the flattened state.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::lattice::StateTensor;
use crate::tensor::{Tape, Tensor};

use super::{flatten_states, Linear, NetworkConfig, NetworkError, QNetwork};

/// Dense stack `8N -> head_sizes... -> 5` with ReLU between hidden layers
/// and a linear output.
pub struct Ffnn {
    config: NetworkConfig,
    layers: Vec<Linear>,
}

impl Ffnn {
    pub fn new(config: NetworkConfig) -> Result<Self, NetworkError> {
        config.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(config.init_seed);
        let mut dims = vec![config.seq_len * 8];
        dims.extend_from_slice(&config.head_sizes);
        dims.push(5);
        let layers = dims.windows(2).map(|w| Linear::new(w[0], w[1], &mut rng)).collect();
        Ok(Ffnn { config, layers })
    }
}

impl QNetwork for Ffnn {
    fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn forward_batch(&self, tape: &Tape, states: &[&StateTensor]) -> Result<Tensor, NetworkError> {
        let mut x = flatten_states(states, self.config.seq_len)?;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, &x)?;
            if i < last {
                x = tape.relu(&x)?;
            }
        }
        Ok(x)
    }

    fn parameters(&self) -> Vec<Tensor> {
        self.state_tensors().into_iter().map(|(_, t)| t).collect()
    }

    fn state_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.push_named(&format!("head.{i}"), &mut out);
        }
        out
    }

    fn clone_network(&self) -> Box<dyn QNetwork> {
        let fresh = Ffnn::new(self.config.clone()).expect("config already validated");
        (&fresh as &dyn QNetwork).clone_weights_from(self).expect("same architecture");
        Box::new(fresh)
    }
}
