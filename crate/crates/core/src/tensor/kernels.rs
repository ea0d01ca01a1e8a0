//! Raw numeric kernels shared by the forward and backward passes.

/// `c = a · b + beta · c` for row-major operands given as raw slices with
/// explicit strides. Transposes are expressed by swapping strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the debug assertions above describe the extents dgemm touches;
    // every caller passes slices sized from the same (m, k, n).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Output shape of numpy-style broadcasting, or `None` if incompatible.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` aligned to `out` (rank-padded), zero on broadcast axes.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + rank - shape.len();
        strides[oi] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every element of the broadcast
/// output.
pub(crate) fn for_each_broadcast(
    a: &[usize],
    b: &[usize],
    out: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let sa = aligned_strides(a, out);
    let sb = aligned_strides(b, out);
    let rank = out.len();
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        // Increment the multi-index, updating the input offsets incrementally.
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Geometry of a 2-D convolution with square kernels.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn h_out(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn w_out(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (ho, wo) = (self.h_out(), self.w_out());
        let npos = ho * wo;
        for ci in 0..self.c_in {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * npos..(row + 1) * npos];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            dst[oy * wo + ox] = if iy >= 0
                                && (iy as usize) < self.h
                                && ix >= 0
                                && (ix as usize) < self.w
                            {
                                x[(ci * self.h + iy as usize) * self.w + ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let (ho, wo) = (self.h_out(), self.w_out());
        let npos = ho * wo;
        for ci in 0..self.c_in {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &cols[row * npos..(row + 1) * npos];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix as usize >= self.w {
                                continue;
                            }
                            dx[(ci * self.h + iy as usize) * self.w + ix as usize] +=
                                src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let npos = self.h_out() * self.w_out();
        let kk = self.col_rows();
        let in_len = self.c_in * self.h * self.w;
        let out_len = self.c_out * npos;
        let mut out = vec![0.0; self.batch * out_len];
        let mut cols = vec![0.0; kk * npos];
        for b in 0..self.batch {
            self.im2col(&x[b * in_len..(b + 1) * in_len], &mut cols);
            let ob = &mut out[b * out_len..(b + 1) * out_len];
            for (co, chunk) in ob.chunks_mut(npos).enumerate() {
                chunk.fill(bias[co]);
            }
            gemm(self.c_out, kk, npos, weight, (kk, 1), &cols, (npos, 1), 1.0, ob, (npos, 1));
        }
        out
    }

    /// Returns `(dx, dweight, dbias)`; `dx` is skipped when not needed.
    pub fn backward(
        &self,
        x: &[f64],
        weight: &[f64],
        grad: &[f64],
        need_dx: bool,
    ) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let npos = self.h_out() * self.w_out();
        let kk = self.col_rows();
        let in_len = self.c_in * self.h * self.w;
        let out_len = self.c_out * npos;
        let mut dw = vec![0.0; self.c_out * kk];
        let mut db = vec![0.0; self.c_out];
        let mut dx = need_dx.then(|| vec![0.0; self.batch * in_len]);
        let mut cols = vec![0.0; kk * npos];
        let mut dcols = vec![0.0; kk * npos];
        for b in 0..self.batch {
            let gb = &grad[b * out_len..(b + 1) * out_len];
            for (co, chunk) in gb.chunks(npos).enumerate() {
                db[co] += chunk.iter().sum::<f64>();
            }
            self.im2col(&x[b * in_len..(b + 1) * in_len], &mut cols);
            // dW += G_b · colsᵀ
            gemm(self.c_out, npos, kk, gb, (npos, 1), &cols, (1, npos), 1.0, &mut dw, (kk, 1));
            if let Some(dx) = dx.as_mut() {
                // dcols = Wᵀ · G_b
                gemm(kk, self.c_out, npos, weight, (1, kk), gb, (npos, 1), 0.0, &mut dcols, (npos, 1));
                self.col2im(&dcols, &mut dx[b * in_len..(b + 1) * in_len]);
            }
        }
        (dx, dw, db)
    }
}

/// Five-point Laplacian with zero-flux boundaries, grid spacing 1, applied
/// independently to every trailing `h × w` plane of `x`.
///
/// Each cell receives `Σ (u_neighbour − u_cell)` over its in-grid
/// neighbours, which equals the reflecting-ghost-cell stencil. The operator
/// is symmetric, so it is its own adjoint.
pub(crate) fn laplacian_planes(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks(plane).zip(out.chunks_mut(plane)) {
        for i in 0..h {
            for j in 0..w {
                let c = src[i * w + j];
                let mut acc = 0.0;
                if i > 0 {
                    acc += src[(i - 1) * w + j] - c;
                }
                if i + 1 < h {
                    acc += src[(i + 1) * w + j] - c;
                }
                if j > 0 {
                    acc += src[i * w + j - 1] - c;
                }
                if j + 1 < w {
                    acc += src[i * w + j + 1] - c;
                }
                dst[i * w + j] = acc;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[4, 3], &[3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shape(&[4, 1], &[1, 5]), Some(vec![4, 5]));
        assert_eq!(broadcast_shape(&[4, 2], &[3]), None);
    }

    #[test]
    fn broadcast_iteration_visits_columns() {
        let mut seen = vec![];
        for_each_broadcast(&[2, 1], &[3], &[2, 3], |o, a, b| seen.push((o, a, b)));
        assert_eq!(seen, vec![(0, 0, 0), (1, 0, 1), (2, 0, 2), (3, 1, 0), (4, 1, 1), (5, 1, 2)]);
    }

    #[test]
    fn gemm_matches_naive() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 2.0, 1.0, 0.0, 3.0]; // 3x2
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, (3, 1), &b, (2, 1), 0.0, &mut c, (2, 1));
        assert_eq!(c, [5.0, 11.0, 14.0, 23.0]);
    }

    #[test]
    fn laplacian_spike() {
        let mut x = vec![0.0; 9];
        x[4] = 1.0;
        let l = laplacian_planes(&x, 3, 3);
        assert_eq!(l, vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0]);
    }
}
