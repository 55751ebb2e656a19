//! Taped tensor operations and their backward rules.

use std::rc::Rc;

use super::sparse::SparseMatrix;
use super::{Tape, Tensor, TensorError};

fn mismatch(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

// Raw kernels on slices. `mm` is i-k-j so the inner loop runs over
// contiguous rows of both the output and `b`.

fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
}

/// out(m,n) = a(m,k) * b(n,k)^T
fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for kk in 0..k {
                acc += arow[kk] * brow[kk];
            }
            out[i * n + j] += acc;
        }
    }
}

/// out(m,n) = a(k,m)^T * b(k,n)
fn mm_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize, out: &mut [f64]) {
    for kk in 0..k {
        let arow = &a[kk * m..(kk + 1) * m];
        let brow = &b[kk * n..(kk + 1) * n];
        for i in 0..m {
            let aki = arow[i];
            if aki == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aki * brow[j];
            }
        }
    }
}

enum Broadcast {
    Equal,
    ScalarLhs,
    ScalarRhs,
}

fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast, TensorError> {
    if a.shape() == b.shape() {
        Ok(Broadcast::Equal)
    } else if a.numel() == 1 {
        Ok(Broadcast::ScalarLhs)
    } else if b.numel() == 1 {
        Ok(Broadcast::ScalarRhs)
    } else {
        Err(mismatch(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

impl Tape {
    /// Matrix product. Accepts `(m,k) x (k,n)` and batched `(t,m,k) x (k,n)`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let (bsh, ash) = (b.shape().to_vec(), a.shape().to_vec());
        if bsh.len() != 2 {
            return Err(mismatch("matmul", format!("rhs must be rank 2, got {:?}", bsh)));
        }
        let (k, n) = (bsh[0], bsh[1]);
        let (batch, m, out_shape) = match ash.as_slice() {
            [m, ak] if *ak == k => (1usize, *m, vec![*m, n]),
            [t, m, ak] if *ak == k => (*t, *m, vec![*t, *m, n]),
            _ => {
                return Err(mismatch("matmul", format!("{:?} x {:?}", ash, bsh)));
            }
        };
        let mut out = vec![0.0; batch * m * n];
        {
            let ad = a.data();
            let bd = b.data();
            for t in 0..batch {
                mm(&ad[t * m * k..(t + 1) * m * k], &bd, m, k, n, &mut out[t * m * n..(t + 1) * m * n]);
            }
        }
        let c = Tensor::from_vec(&out_shape, out);
        c.set_requires_grad(self.out_flag(&[a, b]));
        let (a2, b2, c2) = (a.clone(), b.clone(), c.clone());
        self.record(&c, move || {
            let g = match c2.grad() {
                Some(g) => g,
                None => return,
            };
            if a2.requires_grad() {
                // dA = dC * B^T, per batch slice
                let bd = b2.data();
                let mut da = vec![0.0; batch * m * k];
                for t in 0..batch {
                    mm_nt(&g[t * m * n..(t + 1) * m * n], &bd, m, n, k, &mut da[t * m * k..(t + 1) * m * k]);
                }
                drop(bd);
                a2.accumulate_grad(&da);
            }
            if b2.requires_grad() {
                // dB = sum_t A_t^T * dC_t
                let ad = a2.data();
                let mut db = vec![0.0; k * n];
                for t in 0..batch {
                    mm_tn(&ad[t * m * k..(t + 1) * m * k], &g[t * m * n..(t + 1) * m * n], m, k, n, &mut db);
                }
                drop(ad);
                b2.accumulate_grad(&db);
            }
        });
        Ok(c)
    }

    /// `a(m,k) x b(n,k)^T -> (m,n)`. The usual layout for weight matrices
    /// stored row-per-output-unit.
    pub fn matmul_nt(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let (ash, bsh) = (a.shape().to_vec(), b.shape().to_vec());
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[1] {
            return Err(mismatch("matmul_nt", format!("{:?} x {:?}", ash, bsh)));
        }
        let (m, k, n) = (ash[0], ash[1], bsh[0]);
        let mut out = vec![0.0; m * n];
        mm_nt(&a.data(), &b.data(), m, k, n, &mut out);
        let c = Tensor::from_vec(&[m, n], out);
        c.set_requires_grad(self.out_flag(&[a, b]));
        let (a2, b2, c2) = (a.clone(), b.clone(), c.clone());
        self.record(&c, move || {
            let g = match c2.grad() {
                Some(g) => g,
                None => return,
            };
            if a2.requires_grad() {
                // dA = dC * B
                let mut da = vec![0.0; m * k];
                mm(&g, &b2.data(), m, n, k, &mut da);
                a2.accumulate_grad(&da);
            }
            if b2.requires_grad() {
                // dB = dC^T * A
                let mut db = vec![0.0; n * k];
                mm_tn(&g, &a2.data(), m, n, k, &mut db);
                b2.accumulate_grad(&db);
            }
        });
        Ok(c)
    }

    /// `a(m,k) x w^T -> (m,n)` where `w (n,k)` is a frozen sparse matrix.
    /// No gradient flows into `w`; the input gradient uses the transposed
    /// sparse pattern.
    pub fn matmul_sparse_nt(&self, a: &Tensor, w: &Rc<SparseMatrix>) -> Result<Tensor, TensorError> {
        let ash = a.shape().to_vec();
        if ash.len() != 2 || ash[1] != w.cols() {
            return Err(mismatch(
                "matmul_sparse_nt",
                format!("{:?} x sparse ({},{})", ash, w.rows(), w.cols()),
            ));
        }
        let (m, k, n) = (ash[0], ash[1], w.rows());
        let mut out = vec![0.0; m * n];
        {
            let ad = a.data();
            for i in 0..m {
                w.apply_rows(&ad[i * k..(i + 1) * k], &mut out[i * n..(i + 1) * n]);
            }
        }
        let c = Tensor::from_vec(&[m, n], out);
        c.set_requires_grad(self.out_flag(&[a]));
        let (a2, c2, w2) = (a.clone(), c.clone(), Rc::clone(w));
        self.record(&c, move || {
            let g = match c2.grad() {
                Some(g) => g,
                None => return,
            };
            if a2.requires_grad() {
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    w2.apply_rows_transposed(&g[i * n..(i + 1) * n], &mut da[i * k..(i + 1) * k]);
                }
                a2.accumulate_grad(&da);
            }
        });
        Ok(c)
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let kind = broadcast_kind("add", a, b)?;
        let out = match kind {
            Broadcast::Equal => a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect(),
            Broadcast::ScalarLhs => {
                let s = a.item();
                b.data().iter().map(|y| s + y).collect()
            }
            Broadcast::ScalarRhs => {
                let s = b.item();
                a.data().iter().map(|x| x + s).collect()
            }
        };
        let shape = if a.numel() >= b.numel() { a.shape().to_vec() } else { b.shape().to_vec() };
        let c = Tensor::from_vec(&shape, out);
        c.set_requires_grad(self.out_flag(&[a, b]));
        let (a2, b2, c2) = (a.clone(), b.clone(), c.clone());
        self.record(&c, move || {
            let g = match c2.grad() {
                Some(g) => g,
                None => return,
            };
            for t in [&a2, &b2] {
                if t.requires_grad() {
                    if t.numel() == g.len() {
                        t.accumulate_grad(&g);
                    } else {
                        t.accumulate_grad(&[g.iter().sum()]);
                    }
                }
            }
        });
        Ok(c)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let kind = broadcast_kind("mul", a, b)?;
        let out: Vec<f64> = match kind {
            Broadcast::Equal => a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect(),
            Broadcast::ScalarLhs => {
                let s = a.item();
                b.data().iter().map(|y| s * y).collect()
            }
            Broadcast::ScalarRhs => {
                let s = b.item();
                a.data().iter().map(|x| x * s).collect()
            }
        };
        let shape = if a.numel() >= b.numel() { a.shape().to_vec() } else { b.shape().to_vec() };
        let c = Tensor::from_vec(&shape, out);
        c.set_requires_grad(self.out_flag(&[a, b]));
        let (a2, b2, c2) = (a.clone(), b.clone(), c.clone());
        self.record(&c, move || {
            let g = match c2.grad() {
                Some(g) => g,
                None => return,
            };
            if a2.requires_grad() {
                let delta: Vec<f64> = if b2.numel() == 1 {
                    let s = b2.item();
                    g.iter().map(|gi| gi * s).collect()
                } else if a2.numel() == 1 {
                    vec![g.iter().zip(b2.data().iter()).map(|(gi, y)| gi * y).sum()]
                } else {
                    g.iter().zip(b2.data().iter()).map(|(gi, y)| gi * y).collect()
                };
                a2.accumulate_grad(&delta);
            }
            if b2.requires_grad() {
                let delta: Vec<f64> = if a2.numel() == 1 {
                    let s = a2.item();
                    g.iter().map(|gi| gi * s).collect()
                } else if b2.numel() == 1 {
                    vec![g.iter().zip(a2.data().iter()).map(|(gi, x)| gi * x).sum()]
                } else {
                    g.iter().zip(a2.data().iter()).map(|(gi, x)| gi * x).collect()
                };
                b2.accumulate_grad(&delta);
            }
        });
        Ok(c)
    }

    /// Multiply by a compile-time constant (no gradient into the constant).
    pub fn scale(&self, a: &Tensor, factor: f64) -> Result<Tensor, TensorError> {
        let out: Vec<f64> = a.data().iter().map(|x| x * factor).collect();
        let c = Tensor::from_vec(a.shape(), out);
        c.set_requires_grad(self.out_flag(&[a]));
        let (a2, c2) = (a.clone(), c.clone());
        self.record(&c, move || {
            let g = match c2.grad() {
                Some(g) => g,
                None => return,
            };
            if a2.requires_grad() {
                let delta: Vec<f64> = g.iter().map(|gi| gi * factor).collect();
                a2.accumulate_grad(&delta);
            }
        });
        Ok(c)
    }

    pub fn tanh(&self, a: &Tensor) -> Result<Tensor, TensorError> {
        let out: Vec<f64> = a.data().iter().map(|x| x.tanh()).collect();
        let c = Tensor::from_vec(a.shape(), out);
        c.set_requires_grad(self.out_flag(&[a]));
        let (a2, c2) = (a.clone(), c.clone());
        self.record(&c, move || {
            let g = match c2.grad() {
                Some(g) => g,
                None => return,
            };
            if a2.requires_grad() {
                let y = c2.data();
                let delta: Vec<f64> = g.iter().zip(y.iter()).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect();
                drop(y);
                a2.accumulate_grad(&delta);
            }
        });
        Ok(c)
    }

    /// ReLU with the subgradient convention relu'(0) = 0.
    pub fn relu(&self, a: &Tensor) -> Result<Tensor, TensorError> {
        let out: Vec<f64> = a.data().iter().map(|x| x.max(0.0)).collect();
        let c = Tensor::from_vec(a.shape(), out);
        c.set_requires_grad(self.out_flag(&[a]));
        let (a2, c2) = (a.clone(), c.clone());
        self.record(&c, move || {
            let g = match c2.grad() {
                Some(g) => g,
                None => return,
            };
            if a2.requires_grad() {
                let x = a2.data();
                let delta: Vec<f64> = g.iter().zip(x.iter()).map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 }).collect();
                drop(x);
                a2.accumulate_grad(&delta);
            }
        });
        Ok(c)
    }

    pub fn sigmoid(&self, a: &Tensor) -> Result<Tensor, TensorError> {
        let out: Vec<f64> = a.data().iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        let c = Tensor::from_vec(a.shape(), out);
        c.set_requires_grad(self.out_flag(&[a]));
        let (a2, c2) = (a.clone(), c.clone());
        self.record(&c, move || {
            let g = match c2.grad() {
                Some(g) => g,
                None => return,
            };
            if a2.requires_grad() {
                let y = c2.data();
                let delta: Vec<f64> = g.iter().zip(y.iter()).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect();
                drop(y);
                a2.accumulate_grad(&delta);
            }
        });
        Ok(c)
    }

    /// Row-wise softmax along the last dimension, computed with
    /// max-subtraction so large magnitudes cannot overflow.
    pub fn softmax_rows(&self, a: &Tensor) -> Result<Tensor, TensorError> {
        let shape = a.shape().to_vec();
        let n = *shape.last().ok_or_else(|| mismatch("softmax_rows", "rank 0 input".into()))?;
        if n == 0 {
            return Err(mismatch("softmax_rows", "empty rows".into()));
        }
        if a.data().iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite("softmax_rows"));
        }
        let rows = a.numel() / n;
        let mut out = vec![0.0; a.numel()];
        {
            let ad = a.data();
            for r in 0..rows {
                let row = &ad[r * n..(r + 1) * n];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let orow = &mut out[r * n..(r + 1) * n];
                let mut z = 0.0;
                for (o, x) in orow.iter_mut().zip(row) {
                    *o = (x - m).exp();
                    z += *o;
                }
                for o in orow.iter_mut() {
                    *o /= z;
                }
            }
        }
        let c = Tensor::from_vec(&shape, out);
        c.set_requires_grad(self.out_flag(&[a]));
        let (a2, c2) = (a.clone(), c.clone());
        self.record(&c, move || {
            let g = match c2.grad() {
                Some(g) => g,
                None => return,
            };
            if a2.requires_grad() {
                let y = c2.data();
                let mut delta = vec![0.0; y.len()];
                for r in 0..rows {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(yi, gi)| yi * gi).sum();
                    for j in 0..n {
                        delta[r * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                drop(y);
                a2.accumulate_grad(&delta);
            }
        });
        Ok(c)
    }

    /// Mean smooth-L1 (Huber) loss.
    pub fn smooth_l1(&self, pred: &Tensor, target: &Tensor, beta: f64) -> Result<Tensor, TensorError> {
        if beta <= 0.0 {
            return Err(TensorError::InvalidBeta(beta));
        }
        if pred.shape() != target.shape() {
            return Err(mismatch("smooth_l1", format!("{:?} vs {:?}", pred.shape(), target.shape())));
        }
        let n = pred.numel() as f64;
        let total: f64 = pred
            .data()
            .iter()
            .zip(target.data().iter())
            .map(|(p, t)| {
                let d = p - t;
                if d.abs() < beta {
                    0.5 * d * d / beta
                } else {
                    d.abs() - 0.5 * beta
                }
            })
            .sum();
        let c = Tensor::scalar(total / n);
        c.set_requires_grad(self.out_flag(&[pred, target]));
        let (p2, t2, c2) = (pred.clone(), target.clone(), c.clone());
        self.record(&c, move || {
            let g = match c2.grad() {
                Some(g) => g[0],
                None => return,
            };
            let diffs: Vec<f64> = p2.data().iter().zip(t2.data().iter()).map(|(p, t)| p - t).collect();
            let dp: Vec<f64> = diffs
                .iter()
                .map(|d| {
                    let dd = if d.abs() < beta { d / beta } else { d.signum() };
                    g * dd / n
                })
                .collect();
            if p2.requires_grad() {
                p2.accumulate_grad(&dp);
            }
            if t2.requires_grad() {
                let dt: Vec<f64> = dp.iter().map(|x| -x).collect();
                t2.accumulate_grad(&dt);
            }
        });
        Ok(c)
    }

    /// Mean squared error.
    pub fn mse(&self, pred: &Tensor, target: &Tensor) -> Result<Tensor, TensorError> {
        if pred.shape() != target.shape() {
            return Err(mismatch("mse", format!("{:?} vs {:?}", pred.shape(), target.shape())));
        }
        let n = pred.numel() as f64;
        let total: f64 = pred
            .data()
            .iter()
            .zip(target.data().iter())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let c = Tensor::scalar(total / n);
        c.set_requires_grad(self.out_flag(&[pred, target]));
        let (p2, t2, c2) = (pred.clone(), target.clone(), c.clone());
        self.record(&c, move || {
            let g = match c2.grad() {
                Some(g) => g[0],
                None => return,
            };
            let dp: Vec<f64> = p2
                .data()
                .iter()
                .zip(t2.data().iter())
                .map(|(p, t)| g * 2.0 * (p - t) / n)
                .collect();
            if p2.requires_grad() {
                p2.accumulate_grad(&dp);
            }
            if t2.requires_grad() {
                let dt: Vec<f64> = dp.iter().map(|x| -x).collect();
                t2.accumulate_grad(&dt);
            }
        });
        Ok(c)
    }

    pub fn sum(&self, a: &Tensor) -> Result<Tensor, TensorError> {
        let c = Tensor::scalar(a.data().iter().sum());
        c.set_requires_grad(self.out_flag(&[a]));
        let (a2, c2) = (a.clone(), c.clone());
        self.record(&c, move || {
            let g = match c2.grad() {
                Some(g) => g[0],
                None => return,
            };
            if a2.requires_grad() {
                a2.accumulate_grad(&vec![g; a2.numel()]);
            }
        });
        Ok(c)
    }

    /// Adds a length-`c` row vector to every row of an `(r,c)` matrix.
    pub fn add_row_broadcast(&self, m: &Tensor, row: &Tensor) -> Result<Tensor, TensorError> {
        let msh = m.shape().to_vec();
        let c = row.numel();
        if msh.len() != 2 || msh[1] != c {
            return Err(mismatch("add_row_broadcast", format!("{:?} + row of {}", msh, c)));
        }
        let (r, cols) = (msh[0], msh[1]);
        let mut out = vec![0.0; r * cols];
        {
            let md = m.data();
            let rd = row.data();
            for i in 0..r {
                for j in 0..cols {
                    out[i * cols + j] = md[i * cols + j] + rd[j];
                }
            }
        }
        let cten = Tensor::from_vec(&msh, out);
        cten.set_requires_grad(self.out_flag(&[m, row]));
        let (m2, r2, c2) = (m.clone(), row.clone(), cten.clone());
        self.record(&cten, move || {
            let g = match c2.grad() {
                Some(g) => g,
                None => return,
            };
            if m2.requires_grad() {
                m2.accumulate_grad(&g);
            }
            if r2.requires_grad() {
                let mut delta = vec![0.0; cols];
                for i in 0..r {
                    for j in 0..cols {
                        delta[j] += g[i * cols + j];
                    }
                }
                r2.accumulate_grad(&delta);
            }
        });
        Ok(cten)
    }

    /// Column slice `[start, start+len)` of an `(r,c)` matrix.
    pub fn slice_cols(&self, a: &Tensor, start: usize, len: usize) -> Result<Tensor, TensorError> {
        let sh = a.shape().to_vec();
        if sh.len() != 2 || start + len > sh[1] {
            return Err(mismatch("slice_cols", format!("{:?} cols [{start}, {})", sh, start + len)));
        }
        let (r, c) = (sh[0], sh[1]);
        let mut out = vec![0.0; r * len];
        {
            let ad = a.data();
            for i in 0..r {
                out[i * len..(i + 1) * len].copy_from_slice(&ad[i * c + start..i * c + start + len]);
            }
        }
        let t = Tensor::from_vec(&[r, len], out);
        t.set_requires_grad(self.out_flag(&[a]));
        let (a2, t2) = (a.clone(), t.clone());
        self.record(&t, move || {
            let g = match t2.grad() {
                Some(g) => g,
                None => return,
            };
            if a2.requires_grad() {
                let mut delta = vec![0.0; r * c];
                for i in 0..r {
                    delta[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                a2.accumulate_grad(&delta);
            }
        });
        Ok(t)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&self, parts: &[&Tensor]) -> Result<Tensor, TensorError> {
        if parts.is_empty() {
            return Err(mismatch("concat_cols", "no parts".into()));
        }
        let r = parts[0].shape()[0];
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let sh = p.shape();
                if sh.len() == 2 && sh[0] == r {
                    Ok(sh[1])
                } else {
                    Err(mismatch("concat_cols", format!("{:?} with {} rows expected", sh, r)))
                }
            })
            .collect::<Result<_, _>>()?;
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; r * total];
        let mut offset = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let pd = p.data();
            for i in 0..r {
                out[i * total + offset..i * total + offset + w].copy_from_slice(&pd[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let t = Tensor::from_vec(&[r, total], out);
        t.set_requires_grad(self.recording && parts.iter().any(|p| p.requires_grad()));
        let owned: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        let t2 = t.clone();
        self.record(&t, move || {
            let g = match t2.grad() {
                Some(g) => g,
                None => return,
            };
            let mut offset = 0;
            for (p, w) in owned.iter().zip(&widths) {
                if p.requires_grad() {
                    let mut delta = vec![0.0; r * w];
                    for i in 0..r {
                        delta[i * w..(i + 1) * w].copy_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    p.accumulate_grad(&delta);
                }
                offset += w;
            }
        });
        Ok(t)
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&self, parts: &[&Tensor]) -> Result<Tensor, TensorError> {
        if parts.is_empty() {
            return Err(mismatch("concat_rows", "no parts".into()));
        }
        let c = parts[0].shape().last().copied().unwrap_or(0);
        let heights: Vec<usize> = parts
            .iter()
            .map(|p| {
                let sh = p.shape();
                if sh.len() == 2 && sh[1] == c {
                    Ok(sh[0])
                } else {
                    Err(mismatch("concat_rows", format!("{:?} with {} cols expected", sh, c)))
                }
            })
            .collect::<Result<_, _>>()?;
        let total: usize = heights.iter().sum();
        let mut out = Vec::with_capacity(total * c);
        for p in parts {
            out.extend_from_slice(&p.data());
        }
        let t = Tensor::from_vec(&[total, c], out);
        t.set_requires_grad(self.recording && parts.iter().any(|p| p.requires_grad()));
        let owned: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        let t2 = t.clone();
        self.record(&t, move || {
            let g = match t2.grad() {
                Some(g) => g,
                None => return,
            };
            let mut offset = 0;
            for (p, h) in owned.iter().zip(&heights) {
                if p.requires_grad() {
                    p.accumulate_grad(&g[offset * c..(offset + h) * c]);
                }
                offset += h;
            }
        });
        Ok(t)
    }

    /// Row slice `[start, start+len)` of an `(r,c)` matrix.
    pub fn slice_rows(&self, a: &Tensor, start: usize, len: usize) -> Result<Tensor, TensorError> {
        let sh = a.shape().to_vec();
        if sh.len() != 2 || start + len > sh[0] {
            return Err(mismatch("slice_rows", format!("{:?} rows [{start}, {})", sh, start + len)));
        }
        let c = sh[1];
        let out = a.data()[start * c..(start + len) * c].to_vec();
        let t = Tensor::from_vec(&[len, c], out);
        t.set_requires_grad(self.out_flag(&[a]));
        let (a2, t2) = (a.clone(), t.clone());
        self.record(&t, move || {
            let g = match t2.grad() {
                Some(g) => g,
                None => return,
            };
            if a2.requires_grad() {
                let mut delta = vec![0.0; a2.numel()];
                delta[start * c..(start + len) * c].copy_from_slice(&g);
                a2.accumulate_grad(&delta);
            }
        });
        Ok(t)
    }

    /// Row `i` of a matrix as a `(1,c)` tensor.
    pub fn select_row(&self, a: &Tensor, i: usize) -> Result<Tensor, TensorError> {
        let sh = a.shape().to_vec();
        if sh.len() != 2 || i >= sh[0] {
            return Err(mismatch("select_row", format!("row {i} of {:?}", sh)));
        }
        let c = sh[1];
        let out = a.data()[i * c..(i + 1) * c].to_vec();
        let t = Tensor::from_vec(&[1, c], out);
        t.set_requires_grad(self.out_flag(&[a]));
        let (a2, t2) = (a.clone(), t.clone());
        self.record(&t, move || {
            let g = match t2.grad() {
                Some(g) => g,
                None => return,
            };
            if a2.requires_grad() {
                let mut delta = vec![0.0; a2.numel()];
                delta[i * c..(i + 1) * c].copy_from_slice(&g);
                a2.accumulate_grad(&delta);
            }
        });
        Ok(t)
    }

    /// Picks one column per row: `out[i] = a[i, idx[i]]`, shape `(r,1)`.
    pub fn gather_per_row(&self, a: &Tensor, idx: &[usize]) -> Result<Tensor, TensorError> {
        let sh = a.shape().to_vec();
        if sh.len() != 2 || idx.len() != sh[0] || idx.iter().any(|&j| j >= sh[1]) {
            return Err(mismatch("gather_per_row", format!("{:?} with {} indices", sh, idx.len())));
        }
        let (r, c) = (sh[0], sh[1]);
        let out: Vec<f64> = {
            let ad = a.data();
            idx.iter().enumerate().map(|(i, &j)| ad[i * c + j]).collect()
        };
        let t = Tensor::from_vec(&[r, 1], out);
        t.set_requires_grad(self.out_flag(&[a]));
        let (a2, t2) = (a.clone(), t.clone());
        let idx = idx.to_vec();
        self.record(&t, move || {
            let g = match t2.grad() {
                Some(g) => g,
                None => return,
            };
            if a2.requires_grad() {
                let mut delta = vec![0.0; r * c];
                for (i, &j) in idx.iter().enumerate() {
                    delta[i * c + j] = g[i];
                }
                a2.accumulate_grad(&delta);
            }
        });
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{finite_difference_grad, max_rel_err, Tape, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha12Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        Tensor::from_vec(shape, data)
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::no_grad();
        let eye = Tensor::from_vec(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let m = Tensor::from_vec(&[3, 3], (1..=9).map(f64::from).collect());
        let c = tape.matmul(&eye, &m).unwrap();
        assert_eq!(*c.data(), *m.data());
    }

    #[test]
    fn matmul_hand_example() {
        let tape = Tape::no_grad();
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::from_vec(&[2, 1], vec![1.0, 1.0]);
        let c = tape.matmul(&a, &b).unwrap();
        assert_eq!(*c.data(), vec![3.0, 7.0]);
    }

    #[test]
    fn matmul_batched_matches_per_slice() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let tape = Tape::no_grad();
        let a = rand_tensor(&[3, 2, 4], &mut rng);
        let b = rand_tensor(&[4, 5], &mut rng);
        let c = tape.matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[3, 2, 5]);
        for t in 0..3 {
            let slice = Tensor::from_vec(&[2, 4], a.data()[t * 8..(t + 1) * 8].to_vec());
            let expect = tape.matmul(&slice, &b).unwrap();
            assert_eq!(c.data()[t * 10..(t + 1) * 10], *expect.data());
        }
    }

    #[test]
    fn matmul_shape_mismatch_rejected() {
        let tape = Tape::no_grad();
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        assert!(tape.matmul(&a, &b).is_err());
    }

    #[test]
    fn elementwise_values() {
        let tape = Tape::no_grad();
        let x = Tensor::from_vec(&[3], vec![0.0, -2.5, 2.5]);
        assert_eq!(tape.tanh(&x).unwrap().data()[0], 0.0);
        let r = tape.relu(&x).unwrap();
        assert_eq!(*r.data(), vec![0.0, 0.0, 2.5]);
        let s = tape.sigmoid(&Tensor::scalar(0.0)).unwrap();
        assert!((s.item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_symmetry_and_overflow() {
        let tape = Tape::no_grad();
        let x = Tensor::from_vec(&[1, 2], vec![0.0, 0.0]);
        assert_eq!(*tape.softmax_rows(&x).unwrap().data(), vec![0.5, 0.5]);
        let big = Tensor::from_vec(&[1, 2], vec![1000.0, 1000.0]);
        let y = tape.softmax_rows(&big).unwrap();
        assert_eq!(*y.data(), vec![0.5, 0.5]);
        let bad = Tensor::from_vec(&[1, 2], vec![f64::NAN, 0.0]);
        assert!(tape.softmax_rows(&bad).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..50 {
            let tape = Tape::no_grad();
            let x = rand_tensor(&[4, 6], &mut rng);
            let y = tape.softmax_rows(&x).unwrap();
            let d = y.data();
            for r in 0..4 {
                let s: f64 = d[r * 6..(r + 1) * 6].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(d[r * 6..(r + 1) * 6].iter().all(|v| *v >= 0.0));
            }
        }
    }

    #[test]
    fn smooth_l1_branches() {
        let tape = Tape::no_grad();
        let p = Tensor::scalar(0.5);
        let t = Tensor::scalar(0.0);
        assert!((tape.smooth_l1(&p, &t, 1.0).unwrap().item() - 0.125).abs() < 1e-15);
        let p = Tensor::scalar(2.0);
        assert!((tape.smooth_l1(&p, &t, 1.0).unwrap().item() - 1.5).abs() < 1e-15);
        let p = Tensor::scalar(0.0);
        assert_eq!(tape.smooth_l1(&p, &t, 1.0).unwrap().item(), 0.0);
        assert!(tape.smooth_l1(&p, &t, 0.0).is_err());
    }

    #[test]
    fn mse_values() {
        let tape = Tape::no_grad();
        let p = Tensor::from_vec(&[2], vec![1.0, -1.0]);
        let t = Tensor::from_vec(&[2], vec![0.0, 0.0]);
        assert_eq!(tape.mse(&p, &t).unwrap().item(), 1.0);
        assert_eq!(tape.mse(&t, &t).unwrap().item(), 0.0);
    }

    #[test]
    fn smooth_l1_and_mse_agree_to_first_order_near_zero() {
        // With beta = 1 the gradient ratio approaches 1 as |d| -> 0.
        for &d in &[1e-2, 1e-4, 1e-6] {
            let tape = Tape::new();
            let p = Tensor::scalar(d).param();
            let t = Tensor::scalar(0.0);
            let l1 = tape.smooth_l1(&p, &t, 1.0).unwrap();
            tape.backward(&l1).unwrap();
            let g_sl1 = p.grad().unwrap()[0];
            p.zero_grad();
            let tape2 = Tape::new();
            let l2 = tape2.mse(&p, &t).unwrap();
            tape2.backward(&l2).unwrap();
            let g_mse = p.grad().unwrap()[0];
            let ratio = g_sl1 / (0.5 * g_mse);
            assert!((ratio - 1.0).abs() < 1e-9, "d={d}: ratio {ratio}");
        }
    }

    // Finite-difference oracle over each differentiable op.

    fn check_op(build: impl Fn(&Tape, &[Tensor]) -> Tensor, inputs: &[Tensor], tol: f64) {
        let tape = Tape::new();
        let loss = build(&tape, inputs);
        tape.backward(&loss).unwrap();
        for x in inputs {
            if !x.requires_grad() {
                continue;
            }
            let analytic = x.grad().unwrap();
            let numeric = finite_difference_grad(x, || build(&Tape::no_grad(), inputs).item(), 1e-5);
            let err = max_rel_err(&analytic, &numeric);
            assert!(err < tol, "max rel err {err} exceeds {tol}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for trial in 0..100 {
            let op = trial % 10;
            match op {
                0 => {
                    let a = rand_tensor(&[4, 5], &mut rng).param();
                    let b = rand_tensor(&[5, 3], &mut rng).param();
                    check_op(
                        |t, xs| {
                            let c = t.matmul(&xs[0], &xs[1]).unwrap();
                            t.sum(&c).unwrap()
                        },
                        &[a, b],
                        1e-6,
                    );
                }
                1 => {
                    let a = rand_tensor(&[3, 4], &mut rng).param();
                    let b = rand_tensor(&[2, 4], &mut rng).param();
                    check_op(
                        |t, xs| {
                            let c = t.matmul_nt(&xs[0], &xs[1]).unwrap();
                            let d = t.tanh(&c).unwrap();
                            t.sum(&d).unwrap()
                        },
                        &[a, b],
                        1e-6,
                    );
                }
                2 => {
                    let a = rand_tensor(&[2, 6], &mut rng).param();
                    let b = rand_tensor(&[2, 6], &mut rng).param();
                    check_op(
                        |t, xs| {
                            let c = t.add(&xs[0], &xs[1]).unwrap();
                            let d = t.tanh(&c).unwrap();
                            t.sum(&d).unwrap()
                        },
                        &[a, b],
                        1e-6,
                    );
                }
                3 => {
                    let a = rand_tensor(&[5], &mut rng).param();
                    let b = rand_tensor(&[5], &mut rng).param();
                    check_op(
                        |t, xs| {
                            let c = t.mul(&xs[0], &xs[1]).unwrap();
                            let d = t.sigmoid(&c).unwrap();
                            t.sum(&d).unwrap()
                        },
                        &[a, b],
                        1e-6,
                    );
                }
                4 => {
                    let a = rand_tensor(&[3, 4], &mut rng).param();
                    check_op(
                        |t, xs| {
                            let c = t.softmax_rows(&xs[0]).unwrap();
                            let d = t.mul(&c, &c).unwrap();
                            t.sum(&d).unwrap()
                        },
                        &[a],
                        1e-6,
                    );
                }
                5 => {
                    let p = rand_tensor(&[4, 2], &mut rng).param();
                    let t0 = rand_tensor(&[4, 2], &mut rng);
                    check_op(|t, xs| t.smooth_l1(&xs[0], &xs[1], 1.0).unwrap(), &[p, t0], 1e-5);
                }
                6 => {
                    let p = rand_tensor(&[4, 2], &mut rng).param();
                    let t0 = rand_tensor(&[4, 2], &mut rng);
                    check_op(|t, xs| t.mse(&xs[0], &xs[1]).unwrap(), &[p, t0], 1e-6);
                }
                7 => {
                    let m = rand_tensor(&[3, 4], &mut rng).param();
                    let b = rand_tensor(&[4], &mut rng).param();
                    check_op(
                        |t, xs| {
                            let c = t.add_row_broadcast(&xs[0], &xs[1]).unwrap();
                            let d = t.relu(&c).unwrap();
                            t.sum(&d).unwrap()
                        },
                        &[m, b],
                        1e-6,
                    );
                }
                8 => {
                    let a = rand_tensor(&[2, 3, 4], &mut rng).param();
                    let b = rand_tensor(&[4, 2], &mut rng).param();
                    check_op(
                        |t, xs| {
                            let c = t.matmul(&xs[0], &xs[1]).unwrap();
                            t.sum(&c).unwrap()
                        },
                        &[a, b],
                        1e-6,
                    );
                }
                _ => {
                    let a = rand_tensor(&[3, 6], &mut rng).param();
                    check_op(
                        |t, xs| {
                            let s1 = t.slice_cols(&xs[0], 1, 3).unwrap();
                            let s2 = t.slice_cols(&xs[0], 3, 2).unwrap();
                            let c = t.concat_cols(&[&s1, &s2]).unwrap();
                            let r = t.select_row(&c, 1).unwrap();
                            let g = t.gather_per_row(&r, &[2]).unwrap();
                            let d = t.tanh(&g).unwrap();
                            t.sum(&d).unwrap()
                        },
                        &[a],
                        1e-6,
                    );
                }
            }
        }
    }

    #[test]
    fn determinism_bitwise() {
        let run = || {
            let mut rng = ChaCha12Rng::seed_from_u64(99);
            let tape = Tape::new();
            let a = rand_tensor(&[4, 4], &mut rng).param();
            let b = rand_tensor(&[4, 4], &mut rng).param();
            let c = tape.matmul(&a, &b).unwrap();
            let d = tape.tanh(&c).unwrap();
            let loss = tape.sum(&d).unwrap();
            tape.backward(&loss).unwrap();
            (loss.item().to_bits(), a.grad().unwrap().iter().map(|g| g.to_bits()).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }
}
