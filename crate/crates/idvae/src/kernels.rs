//! Low-level dense kernels: dot products, small matmuls, im2col.
//!
//! Everything here is sequential with a fixed accumulation order, so results
//! are bit-reproducible run to run.

/// Dot product with eight parallel accumulators (vectorizes well, fixed order).
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let i = c * 8;
        let (xa, xb) = (&a[i..i + 8], &b[i..i + 8]);
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut s = 0.0;
    for l in 0..8 {
        s += acc[l];
    }
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// C[m,n] = A[m,k] * B^T where `bt` is stored row-major as [n,k].
/// Both operand rows are contiguous, which is the fast path.
pub fn mm_nt(a: &[f32], bt: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(bt.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let or = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            or[j] = dot(ar, &bt[j * k..(j + 1) * k]);
        }
    }
}

/// out[n,m] = transpose of a[m,n].
pub fn transpose(a: &[f32], m: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
}

/// C[m,n] = A[m,k] * B[k,n] (packs B^T internally).
pub fn mm_nn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    let mut bt = vec![0.0f32; n * k];
    transpose(b, k, n, &mut bt);
    mm_nt(a, &bt, m, k, n, out);
}

/// Convolution output extent: floor((in + 2*pad - kernel) / stride) + 1.
pub fn conv_out(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Transposed-convolution output extent.
pub fn conv_transpose_out(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> usize {
    (input - 1) * stride + kernel + out_pad - 2 * pad
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub h: usize,
    pub w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn forward(in_ch: usize, out_ch: usize, h: usize, w: usize, kernel: usize, stride: usize, pad: usize) -> ConvGeom {
        ConvGeom {
            in_ch,
            out_ch,
            h,
            w,
            kernel,
            stride,
            pad,
            oh: conv_out(h, kernel, stride, pad),
            ow: conv_out(w, kernel, stride, pad),
        }
    }

    /// Patch length: in_ch * kernel * kernel.
    pub fn patch(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    /// Output positions per channel.
    pub fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// Lower one sample [in_ch,h,w] into rows of patches: out is [oh*ow, patch].
pub fn im2col(x: &[f32], g: &ConvGeom, out: &mut [f32]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad);
    let patch = g.patch();
    debug_assert_eq!(x.len(), g.in_ch * g.h * g.w);
    debug_assert_eq!(out.len(), g.positions() * patch);
    for oi in 0..g.oh {
        for oj in 0..g.ow {
            let row = &mut out[(oi * g.ow + oj) * patch..(oi * g.ow + oj + 1) * patch];
            let mut idx = 0;
            for c in 0..g.in_ch {
                let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
                for ki in 0..k {
                    let ii = (oi * s + ki) as isize - p as isize;
                    for kj in 0..k {
                        let jj = (oj * s + kj) as isize - p as isize;
                        row[idx] = if ii >= 0 && jj >= 0 && (ii as usize) < g.h && (jj as usize) < g.w {
                            plane[ii as usize * g.w + jj as usize]
                        } else {
                            0.0
                        };
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// Scatter-add patch rows back into a sample image (adjoint of `im2col`).
pub fn col2im(cols: &[f32], g: &ConvGeom, out: &mut [f32]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad);
    let patch = g.patch();
    debug_assert_eq!(cols.len(), g.positions() * patch);
    debug_assert_eq!(out.len(), g.in_ch * g.h * g.w);
    for oi in 0..g.oh {
        for oj in 0..g.ow {
            let row = &cols[(oi * g.ow + oj) * patch..(oi * g.ow + oj + 1) * patch];
            let mut idx = 0;
            for c in 0..g.in_ch {
                for ki in 0..k {
                    let ii = (oi * s + ki) as isize - p as isize;
                    for kj in 0..k {
                        let jj = (oj * s + kj) as isize - p as isize;
                        if ii >= 0 && jj >= 0 && (ii as usize) < g.h && (jj as usize) < g.w {
                            out[c * g.h * g.w + ii as usize * g.w + jj as usize] += row[idx];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f32> = (0..37).map(|i| i as f32 * 0.25 - 3.0).collect();
        let b: Vec<f32> = (0..37).map(|i| (i as f32 * 0.1).sin()).collect();
        let naive: f32 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-4);
    }

    #[test]
    fn mm_nn_matches_triple_loop() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f32> = (0..m * k).map(|i| i as f32 - 5.0).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32) * 0.5).collect();
        let mut out = vec![0.0; m * n];
        mm_nn(&a, &b, m, k, n, &mut out);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                assert!((out[i * n + j] - s).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn conv_shapes_mirror() {
        // Encoder 8 -> 4 -> 2 -> 1 mirrors back to 8 with zero output padding.
        let mut h = 8;
        let mut sizes = vec![h];
        for _ in 0..3 {
            h = conv_out(h, 4, 2, 1);
            sizes.push(h);
        }
        assert_eq!(sizes, vec![8, 4, 2, 1]);
        for win in sizes.windows(2).rev() {
            let (big, small) = (win[0], win[1]);
            let base = conv_transpose_out(small, 4, 2, 1, 0);
            assert!(base <= big && big - base <= 1);
        }
    }

    #[test]
    fn im2col_roundtrip_counts_overlaps() {
        // col2im(im2col(x)) multiplies each pixel by its patch multiplicity;
        // with kernel=stride and no padding multiplicity is exactly 1.
        let g = ConvGeom::forward(1, 1, 4, 4, 2, 2, 0);
        let x: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let mut cols = vec![0.0; g.positions() * g.patch()];
        im2col(&x, &g, &mut cols);
        let mut back = vec![0.0; 16];
        col2im(&cols, &g, &mut back);
        assert_eq!(back, x);
    }
}
