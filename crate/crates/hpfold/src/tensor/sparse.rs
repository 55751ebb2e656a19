//! Compressed sparse rows for the frozen reservoir matrix.

use super::Tensor;

/// CSR view of a frozen matrix. Stores both row-major entries and the
/// transposed pattern so forward and input-gradient products skip zeros.
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
    // transposed pattern (CSR of the transpose)
    t_row_ptr: Vec<usize>,
    t_col_idx: Vec<usize>,
    t_vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_dense(t: &Tensor) -> Self {
        let sh = t.shape();
        assert_eq!(sh.len(), 2, "sparse matrix needs a rank-2 tensor");
        let (rows, cols) = (sh[0], sh[1]);
        let d = t.data();
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..rows {
            for j in 0..cols {
                let v = d[i * cols + j];
                if v != 0.0 {
                    col_idx.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        // transpose pattern by counting sort over columns
        let mut t_row_ptr = vec![0usize; cols + 1];
        for &j in &col_idx {
            t_row_ptr[j + 1] += 1;
        }
        for j in 0..cols {
            t_row_ptr[j + 1] += t_row_ptr[j];
        }
        let nnz = vals.len();
        let mut t_col_idx = vec![0usize; nnz];
        let mut t_vals = vec![0.0; nnz];
        let mut cursor = t_row_ptr.clone();
        for i in 0..rows {
            for p in row_ptr[i]..row_ptr[i + 1] {
                let j = col_idx[p];
                let slot = cursor[j];
                t_col_idx[slot] = i;
                t_vals[slot] = vals[p];
                cursor[j] += 1;
            }
        }
        SparseMatrix { rows, cols, row_ptr, col_idx, vals, t_row_ptr, t_col_idx, t_vals }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// out[i] += sum_j M[i,j] * x[j]
    pub fn apply_rows(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for i in 0..self.rows {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[p] * x[self.col_idx[p]];
            }
            out[i] += acc;
        }
    }

    /// out[j] += sum_i M[i,j] * x[i]
    pub fn apply_rows_transposed(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for j in 0..self.cols {
            let mut acc = 0.0;
            for p in self.t_row_ptr[j]..self.t_row_ptr[j + 1] {
                acc += self.t_vals[p] * x[self.t_col_idx[p]];
            }
            out[j] += acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csr_matches_dense_products() {
        let dense = Tensor::from_vec(&[3, 4], vec![1.0, 0.0, 2.0, 0.0, 0.0, 3.0, 0.0, 0.0, 4.0, 0.0, 0.0, 5.0]);
        let sp = SparseMatrix::from_dense(&dense);
        assert_eq!(sp.nnz(), 5);

        let x = [1.0, 2.0, 3.0, 4.0];
        let mut out = [0.0; 3];
        sp.apply_rows(&x, &mut out);
        assert_eq!(out, [7.0, 6.0, 24.0]);

        let y = [1.0, 2.0, 3.0];
        let mut out_t = [0.0; 4];
        sp.apply_rows_transposed(&y, &mut out_t);
        // M^T y: col0 = 1*1 + 4*3, col1 = 3*2, col2 = 2*1, col3 = 5*3
        assert_eq!(out_t, [13.0, 6.0, 2.0, 15.0]);
    }
}
