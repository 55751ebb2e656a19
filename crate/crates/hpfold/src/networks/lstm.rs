//! LSTM Q-networks: plain last-hidden-state readout (LSTM-OLH) and the
//! multi-head-attention variant (LSTM-A).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::lattice::StateTensor;
use crate::tensor::{xavier_uniform, Tape, Tensor, TensorError};

use super::{state_rows, Linear, NetworkConfig, NetworkError, QNetwork};

/// One LSTM layer with stacked i/f/g/o gates and the conventional pair of
/// bias vectors.
struct LstmLayer {
    w_ih: Tensor, // (4h, in)
    w_hh: Tensor, // (4h, h)
    b_ih: Tensor, // (4h)
    b_hh: Tensor, // (4h)
    hidden: usize,
}

impl LstmLayer {
    fn new(input: usize, hidden: usize, forget_bias: f64, rng: &mut impl Rng) -> Self {
        let b_ih = Tensor::zeros(&[4 * hidden]).param();
        // forget-gate slice sits at [h, 2h)
        b_ih.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = forget_bias);
        LstmLayer {
            w_ih: xavier_uniform(&[4 * hidden, input], input, 4 * hidden, rng).param(),
            w_hh: xavier_uniform(&[4 * hidden, hidden], hidden, 4 * hidden, rng).param(),
            b_ih,
            b_hh: Tensor::zeros(&[4 * hidden]).param(),
            hidden,
        }
    }

    /// Processes `xs` (one `(B, in)` tensor per timestep) and returns the
    /// hidden state at every timestep.
    fn forward(&self, tape: &Tape, xs: &[Tensor], batch: usize) -> Result<Vec<Tensor>, TensorError> {
        let h0 = Tensor::zeros(&[batch, self.hidden]);
        let mut h = h0.clone();
        let mut c = h0;
        let mut outputs = Vec::with_capacity(xs.len());
        for x in xs {
            let gi = tape.matmul_nt(x, &self.w_ih)?;
            let gh = tape.matmul_nt(&h, &self.w_hh)?;
            let s = tape.add(&gi, &gh)?;
            let s = tape.add_row_broadcast(&s, &self.b_ih)?;
            let s = tape.add_row_broadcast(&s, &self.b_hh)?;
            let i_gate = tape.sigmoid(&tape.slice_cols(&s, 0, self.hidden)?)?;
            let f_gate = tape.sigmoid(&tape.slice_cols(&s, self.hidden, self.hidden)?)?;
            let g_gate = tape.tanh(&tape.slice_cols(&s, 2 * self.hidden, self.hidden)?)?;
            let o_gate = tape.sigmoid(&tape.slice_cols(&s, 3 * self.hidden, self.hidden)?)?;
            c = tape.add(&tape.mul(&f_gate, &c)?, &tape.mul(&i_gate, &g_gate)?)?;
            h = tape.mul(&o_gate, &tape.tanh(&c)?)?;
            outputs.push(h.clone());
        }
        Ok(outputs)
    }

    fn push_named(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.w_ih"), self.w_ih.clone()));
        out.push((format!("{prefix}.w_hh"), self.w_hh.clone()));
        out.push((format!("{prefix}.b_ih"), self.b_ih.clone()));
        out.push((format!("{prefix}.b_hh"), self.b_hh.clone()));
    }
}

/// Q/K/V/output projections of one multi-head attention block.
pub struct AttentionWeights {
    pub w_q: Tensor, // (d, d)
    pub b_q: Tensor,
    pub w_k: Tensor,
    pub b_k: Tensor,
    pub w_v: Tensor,
    pub b_v: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
    pub heads: usize,
}

impl AttentionWeights {
    fn new(d: usize, heads: usize, rng: &mut impl Rng) -> Self {
        let proj = |rng: &mut _| xavier_uniform(&[d, d], d, d, rng).param();
        AttentionWeights {
            w_q: proj(rng),
            b_q: Tensor::zeros(&[d]).param(),
            w_k: proj(rng),
            b_k: Tensor::zeros(&[d]).param(),
            w_v: proj(rng),
            b_v: Tensor::zeros(&[d]).param(),
            w_o: proj(rng),
            b_o: Tensor::zeros(&[d]).param(),
            heads,
        }
    }

    fn push_named(&self, out: &mut Vec<(String, Tensor)>) {
        for (name, t) in [
            ("attn.w_q", &self.w_q),
            ("attn.b_q", &self.b_q),
            ("attn.w_k", &self.w_k),
            ("attn.b_k", &self.b_k),
            ("attn.w_v", &self.w_v),
            ("attn.b_v", &self.b_v),
            ("attn.w_o", &self.w_o),
            ("attn.b_o", &self.b_o),
        ] {
            out.push((name.to_string(), t.clone()));
        }
    }
}

/// Scaled dot-product attention over `h (N, d)` with `heads` subspaces of
/// width `d / heads`, concatenated and projected back to `d`.
///
/// Returns the block output and each head's `(N, N)` weight matrix.
pub fn multihead_attention(
    tape: &Tape,
    h: &Tensor,
    weights: &AttentionWeights,
) -> Result<(Tensor, Vec<Tensor>), TensorError> {
    let d = weights.w_q.shape()[0];
    let heads = weights.heads;
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let q = tape.add_row_broadcast(&tape.matmul_nt(h, &weights.w_q)?, &weights.b_q)?;
    let k = tape.add_row_broadcast(&tape.matmul_nt(h, &weights.w_k)?, &weights.b_k)?;
    let v = tape.add_row_broadcast(&tape.matmul_nt(h, &weights.w_v)?, &weights.b_v)?;
    let mut contexts = Vec::with_capacity(heads);
    let mut attn = Vec::with_capacity(heads);
    for i in 0..heads {
        let qi = tape.slice_cols(&q, i * dk, dk)?;
        let ki = tape.slice_cols(&k, i * dk, dk)?;
        let vi = tape.slice_cols(&v, i * dk, dk)?;
        let scores = tape.scale(&tape.matmul_nt(&qi, &ki)?, scale)?;
        let a = tape.softmax_rows(&scores)?;
        contexts.push(tape.matmul(&a, &vi)?);
        attn.push(a);
    }
    let refs: Vec<&Tensor> = contexts.iter().collect();
    let concat = tape.concat_cols(&refs)?;
    let out = tape.add_row_broadcast(&tape.matmul_nt(&concat, &weights.w_o)?, &weights.b_o)?;
    Ok((out, attn))
}

struct LstmStack {
    layers: Vec<LstmLayer>,
}

impl LstmStack {
    fn new(config: &NetworkConfig, rng: &mut impl Rng) -> Self {
        let d = config.attention.hidden;
        let layers = (0..config.attention.lstm_layers)
            .map(|l| LstmLayer::new(if l == 0 { 8 } else { d }, d, config.forget_bias, rng))
            .collect();
        LstmStack { layers }
    }

    /// Top-layer hidden states, one `(B, d)` tensor per timestep.
    fn forward(&self, tape: &Tape, states: &[&StateTensor], seq_len: usize) -> Result<Vec<Tensor>, NetworkError> {
        for s in states {
            if s.n() != seq_len {
                return Err(NetworkError::WrongSequenceLength { expected: seq_len, got: s.n() });
            }
        }
        let batch = states.len();
        let mut xs: Vec<Tensor> = (0..seq_len).map(|t| state_rows(states, t)).collect();
        for layer in &self.layers {
            xs = layer.forward(tape, &xs, batch)?;
        }
        Ok(xs)
    }

    fn push_named(&self, out: &mut Vec<(String, Tensor)>) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.push_named(&format!("lstm.{i}"), out);
        }
    }
}

/// Per-sample `(N, d)` matrix of top-layer hidden states.
fn sample_hidden_matrix(tape: &Tape, hs: &[Tensor], b: usize) -> Result<Tensor, TensorError> {
    let rows: Vec<Tensor> = hs.iter().map(|h| tape.select_row(h, b)).collect::<Result<_, _>>()?;
    let refs: Vec<&Tensor> = rows.iter().collect();
    tape.concat_rows(&refs)
}

/// LSTM-OLH: stacked LSTM, decision from the last hidden state only.
pub struct LstmOlh {
    config: NetworkConfig,
    stack: LstmStack,
    fc: Linear,
}

impl LstmOlh {
    pub fn new(config: NetworkConfig) -> Result<Self, NetworkError> {
        config.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(config.init_seed);
        let stack = LstmStack::new(&config, &mut rng);
        let fc = Linear::new(config.attention.hidden, 5, &mut rng);
        Ok(LstmOlh { config, stack, fc })
    }
}

impl QNetwork for LstmOlh {
    fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn forward_batch(&self, tape: &Tape, states: &[&StateTensor]) -> Result<Tensor, NetworkError> {
        let hs = self.stack.forward(tape, states, self.config.seq_len)?;
        let last = hs.last().expect("sequence length >= 2");
        Ok(self.fc.forward(tape, last)?)
    }

    fn parameters(&self) -> Vec<Tensor> {
        self.state_tensors().into_iter().map(|(_, t)| t).collect()
    }

    fn state_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.stack.push_named(&mut out);
        self.fc.push_named("fc", &mut out);
        out
    }

    fn clone_network(&self) -> Box<dyn QNetwork> {
        let fresh = LstmOlh::new(self.config.clone()).expect("config already validated");
        (&fresh as &dyn QNetwork).clone_weights_from(self).expect("same architecture");
        Box::new(fresh)
    }
}

/// LSTM-A: stacked LSTM, multi-head attention over all hidden states, the
/// attention output's last row mapped to Q-values.
pub struct LstmA {
    config: NetworkConfig,
    stack: LstmStack,
    attn: AttentionWeights,
    fc: Linear,
}

impl LstmA {
    pub fn new(config: NetworkConfig) -> Result<Self, NetworkError> {
        config.validate()?;
        let d = config.attention.hidden;
        let mut rng = ChaCha12Rng::seed_from_u64(config.init_seed);
        let stack = LstmStack::new(&config, &mut rng);
        let attn = AttentionWeights::new(d, config.attention.heads, &mut rng);
        let fc = Linear::new(d, 5, &mut rng);
        Ok(LstmA { config, stack, attn, fc })
    }

    /// Per-head attention weight matrices for one state.
    pub fn attention_weights_for(&self, state: &StateTensor) -> Result<Vec<Vec<f64>>, NetworkError> {
        let tape = Tape::no_grad();
        let hs = self.stack.forward(&tape, &[state], self.config.seq_len)?;
        let h = sample_hidden_matrix(&tape, &hs, 0)?;
        let (_, attn) = multihead_attention(&tape, &h, &self.attn)?;
        Ok(attn.into_iter().map(|a| a.data().clone()).collect())
    }
}

impl QNetwork for LstmA {
    fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn forward_batch(&self, tape: &Tape, states: &[&StateTensor]) -> Result<Tensor, NetworkError> {
        let n = self.config.seq_len;
        let hs = self.stack.forward(tape, states, n)?;
        let mut q_rows = Vec::with_capacity(states.len());
        for b in 0..states.len() {
            let h = sample_hidden_matrix(tape, &hs, b)?;
            let (out, _) = multihead_attention(tape, &h, &self.attn)?;
            let last = tape.select_row(&out, n - 1)?;
            q_rows.push(self.fc.forward(tape, &last)?);
        }
        let refs: Vec<&Tensor> = q_rows.iter().collect();
        Ok(tape.concat_rows(&refs)?)
    }

    fn parameters(&self) -> Vec<Tensor> {
        self.state_tensors().into_iter().map(|(_, t)| t).collect()
    }

    fn state_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.stack.push_named(&mut out);
        self.attn.push_named(&mut out);
        self.fc.push_named("fc", &mut out);
        out
    }

    fn clone_network(&self) -> Box<dyn QNetwork> {
        let fresh = LstmA::new(self.config.clone()).expect("config already validated");
        (&fresh as &dyn QNetwork).clone_weights_from(self).expect("same architecture");
        Box::new(fresh)
    }

    fn as_lstm_a(&self) -> Option<&LstmA> {
        Some(self)
    }
}
