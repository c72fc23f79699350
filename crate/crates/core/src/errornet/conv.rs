//! 3x3, stride 1, zero-padded ("same") convolution via im2col + GEMM.
//!
//! Feature maps are channel-major: `data[c * H * W + y * W + x]`.
//! Weights are `[out][in][ky][kx]`, so row `o` of the weight matrix lines up
//! with the im2col row index `c * 9 + ky * 3 + kx`.

use serde::{Deserialize, Serialize};

pub const KERNEL: usize = 3;
pub const TAPS: usize = KERNEL * KERNEL;

/// Arithmetic used inside the GEMMs. Parameters, activations and gradients
/// are always stored in `f64`; `F32` only narrows the unfolded buffers and
/// the matrix products, which roughly halves training time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// Element type of the unfolded buffers.
pub trait Scalar: Copy + Default + Into<f64> + Send + Sync {
    fn from_f64(v: f64) -> Self;

    /// `c = a * b + beta * c` with row/column strides; see [`matrixmultiply`].
    ///
    /// # Safety
    /// The strided index ranges must lie inside the pointed-to buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 0.0, c, rsc, csc);
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 0.0, c, rsc, csc);
    }
}

/// Unfolds every 3x3 neighborhood into a `(channels*9) x (H*W)` matrix.
pub fn im2col<T: Scalar>(input: &[f64], channels: usize, height: usize, width: usize, col: &mut Vec<T>) {
    let plane = height * width;
    col.clear();
    col.resize(channels * TAPS * plane, T::default());
    for c in 0..channels {
        let src = &input[c * plane..(c + 1) * plane];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * TAPS + ky * KERNEL + kx) * plane;
                let dst = &mut col[row..row + plane];
                for y in 0..height {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= height as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    // Valid x range where 0 <= x + kx - 1 < width.
                    let x0 = if kx == 0 { 1 } else { 0 };
                    let x1 = if kx == KERNEL - 1 { width - 1 } else { width };
                    if x0 >= x1 {
                        continue;
                    }
                    let s0 = sy * width + x0 + kx - 1;
                    for (d, v) in dst[y * width + x0..y * width + x1].iter_mut().zip(&src[s0..s0 + (x1 - x0)]) {
                        *d = T::from_f64(*v);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input grid.
pub fn col2im<T: Scalar>(col: &[T], channels: usize, height: usize, width: usize, out: &mut [f64]) {
    let plane = height * width;
    out.iter_mut().for_each(|v| *v = 0.0);
    for c in 0..channels {
        let dst = &mut out[c * plane..(c + 1) * plane];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * TAPS + ky * KERNEL + kx) * plane;
                let src = &col[row..row + plane];
                for y in 0..height {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= height as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let x0 = if kx == 0 { 1 } else { 0 };
                    let x1 = if kx == KERNEL - 1 { width - 1 } else { width };
                    if x0 >= x1 {
                        continue;
                    }
                    let d0 = sy * width + x0 + kx - 1;
                    for (d, s) in dst[d0..d0 + (x1 - x0)].iter_mut().zip(&src[y * width + x0..y * width + x1]) {
                        *d += (*s).into();
                    }
                }
            }
        }
    }
}

/// Returns the `m x n` row-major product of strided operands.
fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], (rsa, csa): (isize, isize), b: &[T], (rsb, csb): (isize, isize)) -> Vec<T> {
    let mut c = vec![T::default(); m * n];
    debug_assert!(a.len() >= m * k && b.len() >= k * n);
    // SAFETY: a spans m*k, b spans k*n and c spans m*n elements under the
    // stated strides, so every index the kernel touches is in bounds.
    unsafe {
        T::gemm(m, k, n, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, c.as_mut_ptr(), n as isize, 1);
    }
    c
}

fn narrow<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64(x)).collect()
}

/// `out = W * im2col(input) + bias`; returns the im2col buffer in `col`.
#[allow(clippy::too_many_arguments)]
pub fn forward<T: Scalar>(
    input: &[f64],
    in_channels: usize,
    height: usize,
    width: usize,
    weight: &[f64],
    bias: &[f64],
    out_channels: usize,
    col: &mut Vec<T>,
    out: &mut Vec<f64>,
) {
    let plane = height * width;
    let k = in_channels * TAPS;
    im2col(input, in_channels, height, width, col);
    let w = narrow::<T>(weight);
    let product = gemm(out_channels, k, plane, &w, (k as isize, 1), col, (plane as isize, 1));
    out.clear();
    out.extend(
        product
            .chunks_exact(plane)
            .zip(bias)
            .flat_map(|(row, &b)| row.iter().map(move |&v| b + v.into())),
    );
}

/// Accumulates weight and bias gradients and returns the input gradient.
///
/// `col` must hold `im2col` of the layer input.
#[allow(clippy::too_many_arguments)]
pub fn backward<T: Scalar>(
    col: &[T],
    d_out: &[f64],
    in_channels: usize,
    height: usize,
    width: usize,
    weight: &[f64],
    out_channels: usize,
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    d_input: Option<&mut Vec<f64>>,
) {
    let plane = height * width;
    let k = in_channels * TAPS;
    let g = narrow::<T>(d_out);
    // dW += dOut * col^T
    let dw = gemm(out_channels, plane, k, &g, (plane as isize, 1), col, (1, plane as isize));
    for (a, b) in d_weight.iter_mut().zip(dw) {
        *a += b.into();
    }
    for (db, g) in d_bias.iter_mut().zip(d_out.chunks_exact(plane)) {
        *db += g.iter().sum::<f64>();
    }
    if let Some(d_input) = d_input {
        // dcol = W^T * dOut
        let w = narrow::<T>(weight);
        let d_col = gemm(k, out_channels, plane, &w, (1, k as isize), &g, (plane as isize, 1));
        d_input.clear();
        d_input.resize(in_channels * plane, 0.0);
        col2im(&d_col, in_channels, height, width, d_input);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Direct nested-loop zero-padded convolution.
    fn naive(input: &[f64], cin: usize, h: usize, w: usize, weight: &[f64], bias: &[f64], cout: usize) -> Vec<f64> {
        let mut out = vec![0.0; cout * h * w];
        for o in 0..cout {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[o];
                    for c in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + ky as isize - 1;
                                let sx = x as isize + kx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += weight[((o * cin + c) * 3 + ky) * 3 + kx]
                                    * input[c * h * w + sy as usize * w + sx as usize];
                            }
                        }
                    }
                    out[o * h * w + y * w + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(cin, cout, h, w) in &[(1, 1, 1, 1), (2, 3, 5, 4), (4, 6, 16, 16), (3, 2, 1, 7)] {
            let input = random(cin * h * w, &mut rng);
            let weight = random(cout * cin * 9, &mut rng);
            let bias = random(cout, &mut rng);
            let (mut col, mut out) = (Vec::<f64>::new(), Vec::new());
            forward(&input, cin, h, w, &weight, &bias, cout, &mut col, &mut out);
            let expected = naive(&input, cin, h, w, &weight, &bias, cout);
            for (a, b) in out.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (c, h, w) = (3, 6, 5);
        let x = random(c * h * w, &mut rng);
        let z = random(c * 9 * h * w, &mut rng);
        let mut col = Vec::<f64>::new();
        im2col(&x, c, h, w, &mut col);
        let mut back = vec![0.0; c * h * w];
        col2im(&z, c, h, w, &mut back);
        let lhs: f64 = col.iter().zip(&z).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn backward_matches_linear_layer_formulas() {
        // For out = conv(x), L = <g, out>: dL/dW[o,c,k] = sum_p g[o,p] col[c*9+k, p],
        // dL/db[o] = sum_p g[o,p], dL/dx = conv^T(g).
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (cin, cout, h, w) = (2, 3, 4, 5);
        let x = random(cin * h * w, &mut rng);
        let weight = random(cout * cin * 9, &mut rng);
        let g = random(cout * h * w, &mut rng);
        let mut col = Vec::<f64>::new();
        im2col(&x, cin, h, w, &mut col);
        let mut dw = vec![0.0; weight.len()];
        let mut db = vec![0.0; cout];
        let mut dx = Vec::new();
        backward(&col, &g, cin, h, w, &weight, cout, &mut dw, &mut db, Some(&mut dx));

        for o in 0..cout {
            for c in 0..cin {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let mut expected = 0.0;
                        for y in 0..h {
                            for xx in 0..w {
                                let sy = y as isize + ky as isize - 1;
                                let sx = xx as isize + kx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                expected += g[o * h * w + y * w + xx] * x[c * h * w + sy as usize * w + sx as usize];
                            }
                        }
                        assert!((dw[((o * cin + c) * 3 + ky) * 3 + kx] - expected).abs() < 1e-12);
                    }
                }
            }
            let expected: f64 = g[o * h * w..(o + 1) * h * w].iter().sum();
            assert!((db[o] - expected).abs() < 1e-12);
        }

        // <g, conv(x)> = <conv^T g, x> for the bias-free part.
        let zero_bias = vec![0.0; cout];
        let mut out = Vec::new();
        forward(&x, cin, h, w, &weight, &zero_bias, cout, &mut col, &mut out);
        let lhs: f64 = g.iter().zip(&out).map(|(a, b)| a * b).sum();
        let rhs: f64 = dx.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn single_precision_tracks_double() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (cin, cout, h, w) = (8, 6, 12, 10);
        let x = random(cin * h * w, &mut rng);
        let weight = random(cout * cin * 9, &mut rng);
        let bias = random(cout, &mut rng);
        let g = random(cout * h * w, &mut rng);
        let (mut c64, mut c32) = (Vec::<f64>::new(), Vec::<f32>::new());
        let (mut o64, mut o32) = (Vec::new(), Vec::new());
        forward(&x, cin, h, w, &weight, &bias, cout, &mut c64, &mut o64);
        forward(&x, cin, h, w, &weight, &bias, cout, &mut c32, &mut o32);
        let close = |a: &[f64], b: &[f64]| {
            let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            a.iter().zip(b).all(|(p, q)| (p - q).abs() <= 1e-5 * scale)
        };
        assert!(close(&o64, &o32));
        let (mut dw64, mut dw32) = (vec![0.0; weight.len()], vec![0.0; weight.len()]);
        let (mut db64, mut db32) = (vec![0.0; cout], vec![0.0; cout]);
        let (mut dx64, mut dx32) = (Vec::new(), Vec::new());
        backward(&c64, &g, cin, h, w, &weight, cout, &mut dw64, &mut db64, Some(&mut dx64));
        backward(&c32, &g, cin, h, w, &weight, cout, &mut dw32, &mut db32, Some(&mut dx32));
        assert!(close(&dw64, &dw32));
        assert_eq!(db64, db32);
        assert!(close(&dx64, &dx32));
    }
}
