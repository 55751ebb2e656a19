//! Reservoir-augmented feedforward Q-network: a frozen sparse random
//! recurrence over the state rows feeds a trainable dense head.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::lattice::StateTensor;
use crate::tensor::{xavier_uniform, SparseMatrix, Tape, Tensor};

use super::{state_rows, Linear, NetworkConfig, NetworkError, QNetwork, ReservoirConfig};

/// Draws the frozen reservoir matrix and the trainable input projection.
///
/// `W` is `size x size`; each entry is independently nonzero with
/// probability `connectivity`, nonzero values Xavier-uniform. `W_in` is
/// `size x 8`, Xavier-uniform, trainable.
pub fn init_reservoir(cfg: &ReservoirConfig) -> (Tensor, Tensor) {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let n = cfg.size;
    let bound = (6.0 / (2 * n) as f64).sqrt();
    let mut data = vec![0.0; n * n];
    for v in data.iter_mut() {
        if rng.gen::<f64>() < cfg.connectivity {
            *v = rng.gen_range(-bound..bound);
        }
    }
    let w = Tensor::from_vec(&[n, n], data);
    let w_in = xavier_uniform(&[n, 8], 8, n, &mut rng).param();
    (w, w_in)
}

/// Crude spectral radius estimate by power iteration on W^T W is overkill
/// here; plain power iteration on W converges well enough for rescaling.
fn spectral_radius_estimate(w: &Tensor) -> f64 {
    let n = w.shape()[0];
    let d = w.data();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..100 {
        let mut next = vec![0.0; n];
        for i in 0..n {
            let row = &d[i * n..(i + 1) * n];
            next[i] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let norm: f64 = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        for x in next.iter_mut() {
            *x /= norm;
        }
        v = next;
    }
    lambda
}

/// FFNN-R: `r(t) = tanh(W_in x(t) + W r(t-1))` over the N state rows with
/// `r(-1) = 0`, then a ReLU dense head on `r(N-1)`.
pub struct FfnnR {
    config: NetworkConfig,
    w: Tensor,
    w_sparse: Rc<SparseMatrix>,
    w_in: Tensor,
    head: Vec<Linear>,
}

impl FfnnR {
    pub fn new(config: NetworkConfig) -> Result<Self, NetworkError> {
        config.validate()?;
        let (w, w_in) = init_reservoir(&config.reservoir);
        if let Some(rho) = config.spectral_radius {
            let current = spectral_radius_estimate(&w);
            if current > 0.0 {
                let factor = rho / current;
                w.data_mut().iter_mut().for_each(|v| *v *= factor);
            }
        }
        w_in.set_requires_grad(config.w_in_trainable);
        let w_sparse = Rc::new(SparseMatrix::from_dense(&w));
        let mut rng = ChaCha12Rng::seed_from_u64(config.init_seed.wrapping_add(1));
        let mut dims = vec![config.reservoir.size];
        dims.extend_from_slice(&config.head_sizes);
        dims.push(5);
        let head = dims.windows(2).map(|d| Linear::new(d[0], d[1], &mut rng)).collect();
        Ok(FfnnR { config, w, w_sparse, w_in, head })
    }

    /// The frozen reservoir matrix (dense view).
    pub fn reservoir_matrix(&self) -> &Tensor {
        &self.w
    }

    pub fn input_weights(&self) -> &Tensor {
        &self.w_in
    }
}

impl QNetwork for FfnnR {
    fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn forward_batch(&self, tape: &Tape, states: &[&StateTensor]) -> Result<Tensor, NetworkError> {
        let n = self.config.seq_len;
        for s in states {
            if s.n() != n {
                return Err(NetworkError::WrongSequenceLength { expected: n, got: s.n() });
            }
        }
        let mut r: Option<Tensor> = None;
        for t in 0..n {
            let xt = state_rows(states, t);
            let projected = tape.matmul_nt(&xt, &self.w_in)?;
            let pre = match r {
                None => projected,
                Some(prev) => {
                    let rec = tape.matmul_sparse_nt(&prev, &self.w_sparse)?;
                    tape.add(&projected, &rec)?
                }
            };
            r = Some(tape.tanh(&pre)?);
        }
        let mut x = r.expect("sequence length >= 2");
        let last = self.head.len() - 1;
        for (i, layer) in self.head.iter().enumerate() {
            x = layer.forward(tape, &x)?;
            if i < last {
                x = tape.relu(&x)?;
            }
        }
        Ok(x)
    }

    fn parameters(&self) -> Vec<Tensor> {
        self.state_tensors()
            .into_iter()
            .filter(|(_, t)| t.requires_grad())
            .map(|(_, t)| t)
            .collect()
    }

    fn state_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("reservoir.w".to_string(), self.w.clone()),
            ("reservoir.w_in".to_string(), self.w_in.clone()),
        ];
        for (i, layer) in self.head.iter().enumerate() {
            layer.push_named(&format!("head.{i}"), &mut out);
        }
        out
    }

    fn clone_network(&self) -> Box<dyn QNetwork> {
        let fresh = FfnnR::new(self.config.clone()).expect("config already validated");
        (&fresh as &dyn QNetwork).clone_weights_from(self).expect("same architecture");
        Box::new(fresh)
    }
}

#[cfg(test)]
mod tests {
    use super::super::ArchKind;
    use super::*;
    use crate::lattice::{parse_hp_notation, Conformation};
    use std::sync::Arc;

    fn anchor_state(letters: &str) -> StateTensor {
        Conformation::anchor(Arc::new(parse_hp_notation(letters).unwrap())).encode_state()
    }

    #[test]
    fn full_connectivity_gives_dense_w() {
        let cfg = ReservoirConfig { size: 30, connectivity: 1.0, seed: 9 };
        let (w, _) = init_reservoir(&cfg);
        assert!(w.data().iter().all(|v| *v != 0.0));
    }

    #[test]
    fn nonzero_fraction_tracks_connectivity() {
        let cfg = ReservoirConfig { size: 1000, connectivity: 0.1, seed: 4 };
        let (w, _) = init_reservoir(&cfg);
        let nonzero = w.data().iter().filter(|v| **v != 0.0).count();
        let fraction = nonzero as f64 / 1_000_000.0;
        assert!((0.09..=0.11).contains(&fraction), "fraction {fraction}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = ReservoirConfig { size: 100, connectivity: 0.1, seed: 77 };
        let (w1, wi1) = init_reservoir(&cfg);
        let (w2, wi2) = init_reservoir(&cfg);
        assert_eq!(*w1.data(), *w2.data());
        assert_eq!(*wi1.data(), *wi2.data());
    }

    #[test]
    fn reservoir_matrix_is_excluded_from_parameters() {
        let net = FfnnR::new(NetworkConfig::desk(ArchKind::FfnnR, 5, 3)).unwrap();
        for p in net.parameters() {
            assert!(!p.same_storage(net.reservoir_matrix()));
        }
        // but present in the checkpoint view
        assert!(net.state_tensors().iter().any(|(n, _)| n == "reservoir.w"));
    }

    #[test]
    fn zero_weights_give_zero_output() {
        // W_in = 0 zeroes every reservoir state regardless of W, and a
        // zeroed head maps that to zero Q-values.
        let net = FfnnR::new(NetworkConfig::desk(ArchKind::FfnnR, 5, 3)).unwrap();
        net.w_in.data_mut().iter_mut().for_each(|v| *v = 0.0);
        for p in net.parameters() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let q = (&net as &dyn QNetwork).forward(&anchor_state("HPHPH")).unwrap();
        assert_eq!(q.values, [0.0; 5]);
    }

    #[test]
    fn recurrence_matches_hand_computation() {
        // r(0) = tanh(W_in x(0)) with no recurrence term, then
        // r(1) = tanh(W_in x(1) + W r(0)), head on the last state.
        let cfg = {
            let mut c = NetworkConfig::desk(ArchKind::FfnnR, 2, 3);
            c.reservoir.size = 6;
            c
        };
        let net = FfnnR::new(cfg).unwrap();
        let state = anchor_state("HP");
        let tape = Tape::no_grad();
        let x0 = state_rows(&[&state], 0);
        let r0 = tape.tanh(&tape.matmul_nt(&x0, &net.w_in).unwrap()).unwrap();
        let z1 = tape.matmul_nt(&state_rows(&[&state], 1), &net.w_in).unwrap();
        let rec = tape.matmul_sparse_nt(&r0, &net.w_sparse).unwrap();
        let mut x = tape.tanh(&tape.add(&z1, &rec).unwrap()).unwrap();
        for (i, layer) in net.head.iter().enumerate() {
            x = layer.forward(&tape, &x).unwrap();
            if i + 1 < net.head.len() {
                x = tape.relu(&x).unwrap();
            }
        }
        let q = (&net as &dyn QNetwork).forward(&state).unwrap();
        for j in 0..5 {
            assert_eq!(q.values[j], x.data()[j]);
        }
    }

    #[test]
    fn spectral_rescale_hits_target_radius() {
        let mut cfg = NetworkConfig::desk(ArchKind::FfnnR, 5, 3);
        cfg.reservoir.size = 50;
        cfg.spectral_radius = Some(0.9);
        let net = FfnnR::new(cfg).unwrap();
        let rho = spectral_radius_estimate(net.reservoir_matrix());
        assert!((rho - 0.9).abs() < 0.05, "rho {rho}");
    }
}
