use nalgebra::DMatrix;

use super::kmeans::{kmeans, nearest, KMeansParams, Metric};
use super::{dot, IndexError, Result};

/// Codewords per subquantizer (8-bit codes).
pub const PQ_CODES: usize = 256;

/// Product quantizer: `m` codebooks of 256 codewords over contiguous
/// `dim / m`-dimensional subvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebook {
    pub dim: usize,
    pub m: usize,
    pub sub_dim: usize,
    /// `m * 256 * sub_dim`.
    pub codebooks: Vec<f32>,
}

impl PqCodebook {
    /// Train one k-means per subspace. Returns the codebook and the summed
    /// per-vector squared reconstruction error after each iteration.
    pub fn train(data: &[f32], dim: usize, m: usize, iterations: usize, seed: u64) -> Result<(Self, Vec<f64>)> {
        if m == 0 || dim % m != 0 {
            return Err(IndexError::Params(format!("dim {dim} is not divisible by m {m}")));
        }
        let n = data.len() / dim;
        if n < PQ_CODES {
            return Err(IndexError::SampleTooSmall { needed: PQ_CODES, got: n });
        }
        let sub_dim = dim / m;
        let mut codebooks = Vec::with_capacity(m * PQ_CODES * sub_dim);
        let mut trace = vec![0f64; iterations.max(1)];
        for s in 0..m {
            let sub: Vec<f32> =
                data.chunks_exact(dim).flat_map(|row| row[s * sub_dim..(s + 1) * sub_dim].iter().copied()).collect();
            let r = kmeans(
                &sub,
                sub_dim,
                &KMeansParams { k: PQ_CODES, iterations, seed: seed.wrapping_add(s as u64), metric: Metric::L2 },
            );
            for (t, e) in trace.iter_mut().zip(&r.mse_trace) {
                *t += e;
            }
            codebooks.extend(r.centroids);
        }
        Ok((PqCodebook { dim, m, sub_dim, codebooks }, trace))
    }

    fn codeword(&self, s: usize, c: usize) -> &[f32] {
        let off = (s * PQ_CODES + c) * self.sub_dim;
        &self.codebooks[off..off + self.sub_dim]
    }

    pub fn encode(&self, v: &[f32], code: &mut [u8]) {
        let book = PQ_CODES * self.sub_dim;
        for (s, out) in code.iter_mut().enumerate().take(self.m) {
            let sub = &v[s * self.sub_dim..(s + 1) * self.sub_dim];
            let (j, _) = nearest(sub, &self.codebooks[s * book..(s + 1) * book], self.sub_dim, Metric::L2);
            *out = j as u8;
        }
    }

    pub fn decode(&self, code: &[u8], out: &mut [f32]) {
        for (s, &c) in code.iter().enumerate() {
            out[s * self.sub_dim..(s + 1) * self.sub_dim].copy_from_slice(self.codeword(s, c as usize));
        }
    }

    /// `table[s * 256 + c] = <query_s, codeword(s, c)>`.
    pub fn inner_product_table(&self, query: &[f32]) -> Vec<f32> {
        let mut table = Vec::with_capacity(self.m * PQ_CODES);
        for s in 0..self.m {
            let q = &query[s * self.sub_dim..(s + 1) * self.sub_dim];
            for c in 0..PQ_CODES {
                table.push(dot(q, self.codeword(s, c)));
            }
        }
        table
    }

    /// Mean squared reconstruction error over `data`.
    pub fn mse(&self, data: &[f32]) -> f64 {
        let n = data.len() / self.dim;
        let mut code = vec![0u8; self.m];
        let mut rec = vec![0f32; self.dim];
        let mut total = 0f64;
        for v in data.chunks_exact(self.dim) {
            self.encode(v, &mut code);
            self.decode(&code, &mut rec);
            total += v.iter().zip(&rec).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>();
        }
        total / n.max(1) as f64
    }
}

/// Orthonormal pre-rotation `y = R x`, or identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    pub dim: usize,
    /// Row-major `dim * dim`; `None` is the identity.
    pub matrix: Option<Vec<f32>>,
}

impl Rotation {
    pub fn identity(dim: usize) -> Self {
        Rotation { dim, matrix: None }
    }

    pub fn is_identity(&self) -> bool {
        self.matrix.is_none()
    }

    pub fn apply(&self, x: &[f32], out: &mut [f32]) {
        match &self.matrix {
            None => out.copy_from_slice(x),
            Some(m) => {
                for (o, row) in out.iter_mut().zip(m.chunks_exact(self.dim)) {
                    *o = dot(row, x);
                }
            }
        }
    }

    pub fn apply_all(&self, data: &[f32]) -> Vec<f32> {
        if self.matrix.is_none() {
            return data.to_vec();
        }
        let mut out = vec![0f32; data.len()];
        for (x, y) in data.chunks_exact(self.dim).zip(out.chunks_exact_mut(self.dim)) {
            self.apply(x, y);
        }
        out
    }

    /// Largest entry of `|R^T R - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let Some(m) = &self.matrix else { return 0.0 };
        let d = self.dim;
        let mut worst = 0f64;
        for i in 0..d {
            for j in 0..d {
                let v: f64 = (0..d).map(|k| m[k * d + i] as f64 * m[k * d + j] as f64).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        worst
    }

    /// Learn a rotation that lowers product-quantization error, alternating a
    /// PQ fit on the rotated data with an orthogonal Procrustes update.
    pub fn train_opq(data: &[f32], dim: usize, m: usize, rounds: usize, iterations: usize, seed: u64) -> Result<Self> {
        let mut rotation = Rotation::identity(dim);
        let mut code = vec![0u8; m];
        for round in 0..rounds {
            let rotated = rotation.apply_all(data);
            let (pq, _) = PqCodebook::train(&rotated, dim, m, iterations, seed.wrapping_add(1000 * round as u64))?;
            // M = sum_i yhat_i x_i^T
            let mut acc = vec![0f64; dim * dim];
            let mut rec = vec![0f32; dim];
            for (x, y) in data.chunks_exact(dim).zip(rotated.chunks_exact(dim)) {
                pq.encode(y, &mut code);
                pq.decode(&code, &mut rec);
                for a in 0..dim {
                    let ya = rec[a] as f64;
                    let row = &mut acc[a * dim..(a + 1) * dim];
                    for (r, &xb) in row.iter_mut().zip(x) {
                        *r += ya * xb as f64;
                    }
                }
            }
            let mat = DMatrix::from_row_slice(dim, dim, &acc);
            let svd = mat.svd(true, true);
            let (u, v_t) = match (svd.u, svd.v_t) {
                (Some(u), Some(v_t)) => (u, v_t),
                _ => return Err(IndexError::Params("rotation SVD did not converge".into())),
            };
            let r = u * v_t;
            let mut matrix = Vec::with_capacity(dim * dim);
            for i in 0..dim {
                for j in 0..dim {
                    matrix.push(r[(i, j)] as f32);
                }
            }
            rotation = Rotation { dim, matrix: Some(matrix) };
        }
        Ok(rotation)
    }
}
