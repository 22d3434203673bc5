//! Row-batched dual forward and reverse passes used by the training loss.
//!
//! Matrices are row-major with one row per point: activations of layer `l`
//! are `(B, n_l)`. Each layer is one GEMM per direction.

use super::Layout;

/// `C = A B + beta C` for row-major `A (m, k)`, `B` given by strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: isize, csa: isize, b: &[f64], rsb: isize, csb: isize, beta: f64, c: &mut [f64], rsc: isize) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe matrices fully inside the given slices.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, 1);
    }
}

pub(crate) struct Batch {
    rows: usize,
    dual: bool,
    a: Vec<Vec<f64>>,
    ad: Vec<Vec<f64>>,
    zd: Vec<Vec<f64>>,
    gz: Vec<f64>,
    gzd: Vec<f64>,
    ga: Vec<f64>,
    gad: Vec<f64>,
}

impl Batch {
    pub(crate) fn new(lay: &Layout, rows: usize) -> Self {
        let w = lay.max_width() * rows;
        Self {
            rows,
            dual: false,
            a: lay.sizes.iter().map(|&n| vec![0.0; n * rows]).collect(),
            ad: lay.sizes.iter().map(|&n| vec![0.0; n * rows]).collect(),
            zd: lay.sizes.iter().map(|&n| vec![0.0; n * rows]).collect(),
            gz: vec![0.0; w],
            gzd: vec![0.0; w],
            ga: vec![0.0; w],
            gad: vec![0.0; w],
        }
    }

    /// Row `p` of the input matrix.
    pub(crate) fn input_row(&mut self, p: usize, n_in: usize) -> &mut [f64] {
        &mut self.a[0][p * n_in..(p + 1) * n_in]
    }

    pub(crate) fn tangent_row(&mut self, p: usize, n_in: usize) -> &mut [f64] {
        &mut self.ad[0][p * n_in..(p + 1) * n_in]
    }

    pub(crate) fn output_row(&self, p: usize) -> &[f64] {
        let out = self.a.last().unwrap();
        let n = out.len() / self.rows;
        &out[p * n..(p + 1) * n]
    }

    pub(crate) fn output_rate_row(&self, p: usize) -> &[f64] {
        let out = self.ad.last().unwrap();
        let n = out.len() / self.rows;
        &out[p * n..(p + 1) * n]
    }

    /// Forward pass over the first `rows` inputs; `dual` also propagates the
    /// tangent rows.
    pub(crate) fn forward(&mut self, lay: &Layout, th: &[f64], rows: usize, dual: bool) {
        self.dual = dual;
        let last = lay.n_layers();
        for l in 1..=last {
            let (n_in, n_out) = (lay.sizes[l - 1], lay.sizes[l]);
            let w = &th[lay.w_off[l - 1]..lay.w_off[l - 1] + n_in * n_out];
            let b = &th[lay.b_off[l - 1]..lay.b_off[l - 1] + n_out];
            let (a_lo, a_hi) = self.a.split_at_mut(l);
            let (prev, cur) = (&a_lo[l - 1], &mut a_hi[0]);
            for p in 0..rows {
                cur[p * n_out..(p + 1) * n_out].copy_from_slice(b);
            }
            // Z (rows, n_out) = A (rows, n_in) W^T
            gemm(rows, n_in, n_out, prev, n_in as isize, 1, w, 1, n_in as isize, 1.0, cur, n_out as isize);
            if dual {
                let (ad_lo, ad_hi) = self.ad.split_at_mut(l);
                let (prev_d, cur_d) = (&ad_lo[l - 1], &mut ad_hi[0]);
                gemm(rows, n_in, n_out, prev_d, n_in as isize, 1, w, 1, n_in as isize, 0.0, cur_d, n_out as isize);
                if l < last {
                    let zd = &mut self.zd[l];
                    for k in 0..rows * n_out {
                        let ai = cur[k].tanh();
                        cur[k] = ai;
                        zd[k] = cur_d[k];
                        cur_d[k] *= 1.0 - ai * ai;
                    }
                }
            } else if l < last {
                cur[..rows * n_out].iter_mut().for_each(|v| *v = v.tanh());
            }
        }
    }

    /// Mutable cotangent rows for the output and (if dual) the output rate.
    pub(crate) fn seed_rows(&mut self, p: usize, n: usize) -> (&mut [f64], &mut [f64]) {
        (&mut self.ga[p * n..(p + 1) * n], &mut self.gad[p * n..(p + 1) * n])
    }

    /// Reverse pass accumulating the parameter gradient into `grad`.
    pub(crate) fn backward(&mut self, lay: &Layout, th: &[f64], rows: usize, grad: &mut [f64]) {
        let dual = self.dual;
        let last = lay.n_layers();
        for l in (1..=last).rev() {
            let (n_in, n_out) = (lay.sizes[l - 1], lay.sizes[l]);
            let m = rows * n_out;
            if l == last {
                self.gz[..m].copy_from_slice(&self.ga[..m]);
                if dual {
                    self.gzd[..m].copy_from_slice(&self.gad[..m]);
                }
            } else {
                let a = &self.a[l];
                if dual {
                    let zd = &self.zd[l];
                    for k in 0..m {
                        let s = 1.0 - a[k] * a[k];
                        self.gz[k] = self.ga[k] * s - 2.0 * a[k] * s * zd[k] * self.gad[k];
                        self.gzd[k] = self.gad[k] * s;
                    }
                } else {
                    for k in 0..m {
                        self.gz[k] = self.ga[k] * (1.0 - a[k] * a[k]);
                    }
                }
            }
            let (w_off, b_off) = (lay.w_off[l - 1], lay.b_off[l - 1]);
            let (gw, gb) = grad[w_off..b_off + n_out].split_at_mut(n_out * n_in);
            // gW (n_out, n_in) += GZ^T (n_out, rows) A (rows, n_in)
            gemm(n_out, rows, n_in, &self.gz, 1, n_out as isize, &self.a[l - 1], n_in as isize, 1, 1.0, gw, n_in as isize);
            if dual {
                gemm(n_out, rows, n_in, &self.gzd, 1, n_out as isize, &self.ad[l - 1], n_in as isize, 1, 1.0, gw, n_in as isize);
            }
            for p in 0..rows {
                for (g, z) in gb.iter_mut().zip(&self.gz[p * n_out..(p + 1) * n_out]) {
                    *g += z;
                }
            }
            if l > 1 {
                let w = &th[w_off..w_off + n_in * n_out];
                // GA (rows, n_in) = GZ (rows, n_out) W (n_out, n_in)
                gemm(rows, n_out, n_in, &self.gz, n_out as isize, 1, w, n_in as isize, 1, 0.0, &mut self.ga, n_in as isize);
                if dual {
                    gemm(rows, n_out, n_in, &self.gzd, n_out as isize, 1, w, n_in as isize, 1, 0.0, &mut self.gad, n_in as isize);
                }
            }
        }
    }
}
