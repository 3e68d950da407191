//! Convolution and pooling kernels.
//!
//! Convolution follows the cross-correlation convention (no kernel flip):
//!
//! ```text
//! out[b,o,i,j] = bias[o] + Σ_{c,u,v} x[b,c, i·sh+u−ph, j·sw+v−pw] · k[o,c,u,v]
//! ```
//!
//! Two routes compute the same map:
//!
//! * **direct** — im2col followed by a GEMM, used for small kernels;
//! * **fft** — row-wise spectral correlation, used when the kernel spans the
//!   full input height with unit stride and no padding (the shape of the
//!   networks' wide first layer, where the direct route would dominate the
//!   entire training cost).
//!
//! The dispatch is a fixed shape predicate, so a given build always takes
//! the same route for the same shapes.

use num_complex::Complex;
use rustfft::FftPlanner;

use super::gemm::{gemm_nn, gemm_nt, transpose};
use super::{Scalar, Shape4, Tensor4, TensorError};
use crate::parallel::{fill_chunks, map_indices, Execution};

/// Output extent of one spatial axis, `⌊(in + 2·pad − k)/stride⌋ + 1`.
pub fn conv_out_dim(input: usize, kernel: usize, pad: usize, stride: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Work threshold (kernel taps per output row) above which the spectral
/// route wins over im2col.
const FFT_MIN_TAPS: usize = 512;

/// True when the spectral route applies: full-height kernel, unit stride,
/// no padding, and a kernel large enough to be worth the transforms.
pub fn uses_fft_route(x: Shape4, k: Shape4, stride: (usize, usize), pad: (usize, usize)) -> bool {
    pad == (0, 0)
        && stride == (1, 1)
        && k.height == x.height
        && k.maps * k.height * k.width >= FFT_MIN_TAPS
}

fn check_conv_shapes<T: Scalar>(
    x: &Tensor4<T>,
    k: &Tensor4<T>,
    bias: &Tensor4<T>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Shape4, TensorError> {
    let (xs, ks) = (x.shape(), k.shape());
    if ks.maps != xs.maps {
        return Err(TensorError::ShapeMismatch { op: "conv2d", left: xs, right: ks });
    }
    if bias.len() != ks.batch {
        return Err(TensorError::InvalidShape {
            op: "conv2d",
            shape: bias.shape(),
            reason: format!("bias must have one entry per output map ({})", ks.batch),
        });
    }
    let oh = conv_out_dim(xs.height, ks.height, pad.0, stride.0);
    let ow = conv_out_dim(xs.width, ks.width, pad.1, stride.1);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(Shape4::new(xs.batch, ks.batch, oh, ow)),
        _ => Err(TensorError::InvalidShape {
            op: "conv2d",
            shape: xs,
            reason: format!(
                "kernel {} with stride ({},{}) pad ({},{}) does not fit",
                ks, stride.0, stride.1, pad.0, pad.1
            ),
        }),
    }
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor4<T>,
    k: &Tensor4<T>,
    bias: &Tensor4<T>,
    stride: (usize, usize),
    pad: (usize, usize),
    exec: Execution,
) -> Result<Tensor4<T>, TensorError> {
    let out_shape = check_conv_shapes(x, k, bias, stride, pad)?;
    if uses_fft_route(x.shape(), k.shape(), stride, pad) {
        Ok(conv2d_forward_fft(x, k, bias, out_shape, exec))
    } else {
        Ok(conv2d_forward_direct(x, k, bias, stride, pad, out_shape, exec))
    }
}

/// Gradients of the convolution. `dx` is only produced when requested, so
/// the first layer of a network skips its (useless) input gradient.
pub struct ConvGrads<T> {
    pub dx: Option<Tensor4<T>>,
    pub dk: Tensor4<T>,
    pub db: Tensor4<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    k: &Tensor4<T>,
    dy: &Tensor4<T>,
    stride: (usize, usize),
    pad: (usize, usize),
    need_dx: bool,
    exec: Execution,
) -> ConvGrads<T> {
    if uses_fft_route(x.shape(), k.shape(), stride, pad) {
        conv2d_backward_fft(x, k, dy, need_dx, exec)
    } else {
        conv2d_backward_direct(x, k, dy, stride, pad, need_dx, exec)
    }
}

// ---------------------------------------------------------------- direct --

/// Unfolds one batch item into a `(Cin·KH·KW) × (OH·OW)` column matrix.
fn im2col<T: Scalar>(
    x: &Tensor4<T>,
    b: usize,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    pad: (usize, usize),
    oh: usize,
    ow: usize,
    col: &mut [T],
) {
    let xs = x.shape();
    let n = oh * ow;
    debug_assert_eq!(col.len(), xs.maps * kh * kw * n);
    for v in col.iter_mut() {
        *v = T::zero();
    }
    for c in 0..xs.maps {
        let plane = x.plane(b, c);
        for u in 0..kh {
            for v in 0..kw {
                let row = ((c * kh + u) * kw + v) * n;
                for i in 0..oh {
                    let src_h = (i * stride.0 + u) as isize - pad.0 as isize;
                    if src_h < 0 || src_h >= xs.height as isize {
                        continue;
                    }
                    let src_row = src_h as usize * xs.width;
                    for j in 0..ow {
                        let src_w = (j * stride.1 + v) as isize - pad.1 as isize;
                        if src_w < 0 || src_w >= xs.width as isize {
                            continue;
                        }
                        col[row + i * ow + j] = plane[src_row + src_w as usize];
                    }
                }
            }
        }
    }
}

/// Scatter-add of a column matrix back onto the input plane layout.
fn col2im_add<T: Scalar>(
    col: &[T],
    dst: &mut [T],
    maps: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    pad: (usize, usize),
    oh: usize,
    ow: usize,
) {
    let n = oh * ow;
    for c in 0..maps {
        let plane = &mut dst[c * height * width..(c + 1) * height * width];
        for u in 0..kh {
            for v in 0..kw {
                let row = ((c * kh + u) * kw + v) * n;
                for i in 0..oh {
                    let src_h = (i * stride.0 + u) as isize - pad.0 as isize;
                    if src_h < 0 || src_h >= height as isize {
                        continue;
                    }
                    let dst_row = src_h as usize * width;
                    for j in 0..ow {
                        let src_w = (j * stride.1 + v) as isize - pad.1 as isize;
                        if src_w < 0 || src_w >= width as isize {
                            continue;
                        }
                        plane[dst_row + src_w as usize] += col[row + i * ow + j];
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward_direct<T: Scalar>(
    x: &Tensor4<T>,
    k: &Tensor4<T>,
    bias: &Tensor4<T>,
    stride: (usize, usize),
    pad: (usize, usize),
    out_shape: Shape4,
    exec: Execution,
) -> Tensor4<T> {
    let ks = k.shape();
    let (kk, n) = (ks.maps * ks.height * ks.width, out_shape.height * out_shape.width);
    let mut out = Tensor4::zeros(out_shape);
    let item = out_shape.maps * n;
    fill_chunks(exec, out.values_mut(), item, |b, out_b| {
        let mut col = vec![T::zero(); kk * n];
        im2col(x, b, ks.height, ks.width, stride, pad, out_shape.height, out_shape.width, &mut col);
        gemm_nn(k.values(), &col, out_b, ks.batch, kk, n, Execution::Sequential);
        for (o, row) in out_b.chunks_mut(n).enumerate() {
            let bo = bias.values()[o];
            for v in row.iter_mut() {
                *v += bo;
            }
        }
    });
    out
}

fn conv2d_backward_direct<T: Scalar>(
    x: &Tensor4<T>,
    k: &Tensor4<T>,
    dy: &Tensor4<T>,
    stride: (usize, usize),
    pad: (usize, usize),
    need_dx: bool,
    exec: Execution,
) -> ConvGrads<T> {
    let (xs, ks, ys) = (x.shape(), k.shape(), dy.shape());
    let kk = ks.maps * ks.height * ks.width;
    let n = ys.height * ys.width;

    let kt = need_dx.then(|| transpose(k.values(), ks.batch, kk));

    // Per-batch partial results are kept separate and reduced in batch
    // order afterwards, which keeps the parallel path deterministic.
    let parts: Vec<(Vec<T>, Vec<T>, Option<Vec<T>>)> = map_indices(exec, xs.batch, |b| {
        let mut col = vec![T::zero(); kk * n];
        im2col(x, b, ks.height, ks.width, stride, pad, ys.height, ys.width, &mut col);
        let dy_b = dy.batch_item(b);

        let mut dk = vec![T::zero(); ks.batch * kk];
        gemm_nt(dy_b, &col, &mut dk, ks.batch, n, kk, Execution::Sequential);

        let mut db = vec![T::zero(); ks.batch];
        for (o, dbo) in db.iter_mut().enumerate() {
            let mut acc = T::zero();
            for &g in &dy_b[o * n..(o + 1) * n] {
                acc += g;
            }
            *dbo = acc;
        }

        let dx_b = kt.as_ref().map(|kt| {
            let mut dcol = vec![T::zero(); kk * n];
            gemm_nn(kt, dy_b, &mut dcol, kk, ks.batch, n, Execution::Sequential);
            let mut dx = vec![T::zero(); xs.maps * xs.height * xs.width];
            col2im_add(
                &dcol, &mut dx, xs.maps, xs.height, xs.width, ks.height, ks.width, stride, pad,
                ys.height, ys.width,
            );
            dx
        });
        (dk, db, dx_b)
    });

    let mut dk = Tensor4::zeros(ks);
    let mut db = Tensor4::zeros(Shape4::new(1, ks.batch, 1, 1));
    let mut dx = need_dx.then(|| Tensor4::zeros(xs));
    for (b, (dk_b, db_b, dx_b)) in parts.into_iter().enumerate() {
        for (acc, v) in dk.values_mut().iter_mut().zip(dk_b) {
            *acc += v;
        }
        for (acc, v) in db.values_mut().iter_mut().zip(db_b) {
            *acc += v;
        }
        if let (Some(dx), Some(dx_b)) = (dx.as_mut(), dx_b) {
            let item = xs.maps * xs.height * xs.width;
            dx.values_mut()[b * item..(b + 1) * item].copy_from_slice(&dx_b);
        }
    }
    ConvGrads { dx, dk, db }
}

// ------------------------------------------------------------------- fft --

/// Row spectra of every `(batch|map, row)` pair, zero-padded to `len`.
fn row_spectra<T: Scalar>(
    rows: usize,
    len: usize,
    exec: Execution,
    row_of: impl Fn(usize) -> (usize, usize) + Sync,
    src: &Tensor4<T>,
    src_width: usize,
) -> Vec<Complex<T>> {
    let fft = FftPlanner::<T>::new().plan_fft_forward(len);
    let mut spectra = vec![Complex::new(T::zero(), T::zero()); rows * len];
    fill_chunks(exec, &mut spectra, len, |r, buf| {
        let (bm, h) = row_of(r);
        let plane_w = src.shape().width;
        debug_assert_eq!(plane_w, src_width);
        let base = (bm * src.shape().height + h) * plane_w;
        for (dst, &v) in buf.iter_mut().zip(&src.values()[base..base + plane_w]) {
            *dst = Complex::new(v, T::zero());
        }
        fft.process(buf);
    });
    spectra
}

/// Forward pass on the spectral route. Requires `uses_fft_route` shapes.
pub fn conv2d_forward_fft<T: Scalar>(
    x: &Tensor4<T>,
    k: &Tensor4<T>,
    bias: &Tensor4<T>,
    out_shape: Shape4,
    exec: Execution,
) -> Tensor4<T> {
    let (xs, ks) = (x.shape(), k.shape());
    let len = xs.width;
    let rows = ks.maps * ks.height; // fused (channel, height) row index
    let inv_len = T::one() / T::of_f64(len as f64);

    let x_spec = row_spectra(xs.batch * rows, len, exec, |r| (r / rows * xs.maps + (r % rows) / xs.height, (r % rows) % xs.height), x, xs.width);
    let k_spec = kernel_spectra(k, len, exec);

    let ifft = FftPlanner::<T>::new().plan_fft_inverse(len);
    let mut out = Tensor4::zeros(out_shape);
    let ow = out_shape.width;
    fill_chunks(exec, out.values_mut(), ow, |bo, out_row| {
        let (b, o) = (bo / ks.batch, bo % ks.batch);
        let mut acc = vec![Complex::new(T::zero(), T::zero()); len];
        for r in 0..rows {
            let xr = &x_spec[(b * rows + r) * len..(b * rows + r + 1) * len];
            let kr = &k_spec[(o * rows + r) * len..(o * rows + r + 1) * len];
            for ((a, &xv), &kv) in acc.iter_mut().zip(xr).zip(kr) {
                *a += xv * kv.conj();
            }
        }
        ifft.process(&mut acc);
        let bo_bias = bias.values()[o];
        for (dst, a) in out_row.iter_mut().zip(&acc) {
            *dst = a.re * inv_len + bo_bias;
        }
    });
    out
}

fn kernel_spectra<T: Scalar>(k: &Tensor4<T>, len: usize, exec: Execution) -> Vec<Complex<T>> {
    let ks = k.shape();
    let rows = ks.maps * ks.height;
    let fft = FftPlanner::<T>::new().plan_fft_forward(len);
    let mut spectra = vec![Complex::new(T::zero(), T::zero()); ks.batch * rows * len];
    fill_chunks(exec, &mut spectra, len, |r, buf| {
        let (o, rest) = (r / rows, r % rows);
        let (c, u) = (rest / ks.height, rest % ks.height);
        let base = ((o * ks.maps + c) * ks.height + u) * ks.width;
        for (dst, &v) in buf.iter_mut().zip(&k.values()[base..base + ks.width]) {
            *dst = Complex::new(v, T::zero());
        }
        fft.process(buf);
    });
    spectra
}

fn conv2d_backward_fft<T: Scalar>(
    x: &Tensor4<T>,
    k: &Tensor4<T>,
    dy: &Tensor4<T>,
    need_dx: bool,
    exec: Execution,
) -> ConvGrads<T> {
    let (xs, ks, ys) = (x.shape(), k.shape(), dy.shape());
    let len = xs.width;
    let rows = ks.maps * ks.height;
    let inv_len = T::one() / T::of_f64(len as f64);

    let x_spec = row_spectra(xs.batch * rows, len, exec, |r| (r / rows * xs.maps + (r % rows) / xs.height, (r % rows) % xs.height), x, xs.width);

    // dy rows zero-padded from OW up to the input width.
    let fft = FftPlanner::<T>::new().plan_fft_forward(len);
    let mut dy_spec = vec![Complex::new(T::zero(), T::zero()); xs.batch * ks.batch * len];
    fill_chunks(exec, &mut dy_spec, len, |bo, buf| {
        let (b, o) = (bo / ks.batch, bo % ks.batch);
        let row = dy.plane(b, o);
        debug_assert_eq!(row.len(), ys.width);
        for (dst, &v) in buf.iter_mut().zip(row) {
            *dst = Complex::new(v, T::zero());
        }
        fft.process(buf);
    });

    let ifft = FftPlanner::<T>::new().plan_fft_inverse(len);

    // Kernel gradient: accumulate X·conj(dY) over the batch in the frequency
    // domain, one inverse transform per kernel row.
    let mut dk = Tensor4::zeros(ks);
    let kw = ks.width;
    fill_chunks(exec, dk.values_mut(), kw, |or, dk_row| {
        let (o, r) = (or / rows, or % rows);
        let mut acc = vec![Complex::new(T::zero(), T::zero()); len];
        for b in 0..xs.batch {
            let xr = &x_spec[(b * rows + r) * len..(b * rows + r + 1) * len];
            let dyr = &dy_spec[(b * ks.batch + o) * len..(b * ks.batch + o + 1) * len];
            for ((a, &xv), &gv) in acc.iter_mut().zip(xr).zip(dyr) {
                *a += xv * gv.conj();
            }
        }
        ifft.process(&mut acc);
        for (dst, a) in dk_row.iter_mut().zip(&acc) {
            *dst = a.re * inv_len;
        }
    });

    let mut db = Tensor4::zeros(Shape4::new(1, ks.batch, 1, 1));
    for o in 0..ks.batch {
        let mut acc = T::zero();
        for b in 0..xs.batch {
            for &g in dy.plane(b, o) {
                acc += g;
            }
        }
        db.values_mut()[o] = acc;
    }

    let dx = need_dx.then(|| {
        let k_spec = kernel_spectra(k, len, exec);
        let mut dx = Tensor4::zeros(xs);
        fill_chunks(exec, dx.values_mut(), len, |br, dx_row| {
            let (b, r) = (br / rows, br % rows);
            let mut acc = vec![Complex::new(T::zero(), T::zero()); len];
            for o in 0..ks.batch {
                let dyr = &dy_spec[(b * ks.batch + o) * len..(b * ks.batch + o + 1) * len];
                let kr = &k_spec[(o * rows + r) * len..(o * rows + r + 1) * len];
                for ((a, &gv), &kv) in acc.iter_mut().zip(dyr).zip(kr) {
                    *a += gv * kv;
                }
            }
            ifft.process(&mut acc);
            for (dst, a) in dx_row.iter_mut().zip(&acc) {
                *dst = a.re * inv_len;
            }
        });
        dx
    });

    ConvGrads { dx, dk, db }
}

// ------------------------------------------------------------------ pool --

pub fn avgpool2d_forward<T: Scalar>(
    x: &Tensor4<T>,
    win: (usize, usize),
    stride: (usize, usize),
    exec: Execution,
) -> Result<Tensor4<T>, TensorError> {
    let xs = x.shape();
    let oh = conv_out_dim(xs.height, win.0, 0, stride.0);
    let ow = conv_out_dim(xs.width, win.1, 0, stride.1);
    let (oh, ow) = match (oh, ow) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(TensorError::InvalidShape {
                op: "avgpool2d",
                shape: xs,
                reason: format!("window ({},{}) larger than input", win.0, win.1),
            })
        }
    };
    let mut out = Tensor4::zeros(Shape4::new(xs.batch, xs.maps, oh, ow));
    let norm = T::one() / T::of_f64((win.0 * win.1) as f64);
    let plane = oh * ow;
    fill_chunks(exec, out.values_mut(), plane, |bm, out_plane| {
        let (b, m) = (bm / xs.maps, bm % xs.maps);
        let src = x.plane(b, m);
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = T::zero();
                for u in 0..win.0 {
                    let row = (i * stride.0 + u) * xs.width + j * stride.1;
                    for v in 0..win.1 {
                        acc += src[row + v];
                    }
                }
                out_plane[i * ow + j] = acc * norm;
            }
        }
    });
    Ok(out)
}

pub fn avgpool2d_backward<T: Scalar>(
    x_shape: Shape4,
    dy: &Tensor4<T>,
    win: (usize, usize),
    stride: (usize, usize),
    exec: Execution,
) -> Tensor4<T> {
    let ys = dy.shape();
    let norm = T::one() / T::of_f64((win.0 * win.1) as f64);
    let mut dx = Tensor4::zeros(x_shape);
    let plane = x_shape.height * x_shape.width;
    fill_chunks(exec, dx.values_mut(), plane, |bm, dx_plane| {
        let (b, m) = (bm / x_shape.maps, bm % x_shape.maps);
        let g = dy.plane(b, m);
        for i in 0..ys.height {
            for j in 0..ys.width {
                let gv = g[i * ys.width + j] * norm;
                for u in 0..win.0 {
                    let row = (i * stride.0 + u) * x_shape.width + j * stride.1;
                    for v in 0..win.1 {
                        dx_plane[row + v] += gv;
                    }
                }
            }
        }
    });
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape4, v: Vec<f64>) -> Tensor4<f64> {
        Tensor4::from_vec(shape, v).unwrap()
    }

    #[test]
    fn hand_convolution() {
        // input (1,2,1,4) = [[1,2,3,4],[5,6,7,8]], all-ones (1,2,1,2) kernel
        let x = t(Shape4::new(1, 2, 1, 4), vec![1., 2., 3., 4., 5., 6., 7., 8.]);
        let k = t(Shape4::new(1, 2, 1, 2), vec![1.; 4]);
        let b = Tensor4::zeros(Shape4::new(1, 1, 1, 1));
        let y = conv2d_forward(&x, &k, &b, (1, 1), (0, 0), Execution::Sequential).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 1, 3));
        assert_eq!(y.values(), &[14.0, 18.0, 22.0]);
    }

    #[test]
    fn zero_input_stays_zero() {
        let x = Tensor4::<f64>::zeros(Shape4::new(2, 3, 5, 9));
        let k = t(Shape4::new(4, 3, 2, 3), (0..72).map(|i| i as f64 * 0.1).collect());
        let b = Tensor4::zeros(Shape4::new(1, 4, 1, 1));
        let y = conv2d_forward(&x, &k, &b, (1, 2), (1, 1), Execution::Sequential).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn first_layer_output_shape() {
        // (1,1,24,1000) with a (36,1,24,137) kernel → (1,36,1,864)
        let x = Tensor4::<f64>::zeros(Shape4::new(1, 1, 24, 1000));
        let k = Tensor4::<f64>::zeros(Shape4::new(36, 1, 24, 137));
        let b = Tensor4::zeros(Shape4::new(1, 36, 1, 1));
        assert!(uses_fft_route(x.shape(), k.shape(), (1, 1), (0, 0)));
        let y = conv2d_forward(&x, &k, &b, (1, 1), (0, 0), Execution::Sequential).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 36, 1, 864));
    }

    #[test]
    fn shape_mismatch_is_diagnosed() {
        let x = Tensor4::<f64>::zeros(Shape4::new(1, 2, 4, 4));
        let k = Tensor4::<f64>::zeros(Shape4::new(1, 3, 2, 2));
        let b = Tensor4::zeros(Shape4::new(1, 1, 1, 1));
        let err = conv2d_forward(&x, &k, &b, (1, 1), (0, 0), Execution::Sequential).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(1, 2, 4, 4)") && msg.contains("(1, 3, 2, 2)"), "{msg}");
    }

    #[test]
    fn fft_route_matches_direct_route() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let xs = Shape4::new(2, 3, 5, 64);
        let ks = Shape4::new(4, 3, 5, 40); // 600 taps ≥ threshold
        let x = t(xs, (0..xs.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let k = t(ks, (0..ks.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let b = t(Shape4::new(1, 4, 1, 1), (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
        assert!(uses_fft_route(xs, ks, (1, 1), (0, 0)));

        let out_shape = Shape4::new(2, 4, 1, 25);
        let direct = conv2d_forward_direct(&x, &k, &b, (1, 1), (0, 0), out_shape, Execution::Sequential);
        let fft = conv2d_forward_fft(&x, &k, &b, out_shape, Execution::Sequential);
        for (a, c) in direct.values().iter().zip(fft.values()) {
            assert!((a - c).abs() < 1e-11, "{a} vs {c}");
        }

        // gradients agree between the routes as well
        let dy = t(out_shape, (0..out_shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let gd = conv2d_backward_direct(&x, &k, &dy, (1, 1), (0, 0), true, Execution::Sequential);
        let gf = conv2d_backward_fft(&x, &k, &dy, true, Execution::Sequential);
        for (a, c) in gd.dk.values().iter().zip(gf.dk.values()) {
            assert!((a - c).abs() < 1e-11);
        }
        for (a, c) in gd.db.values().iter().zip(gf.db.values()) {
            assert!((a - c).abs() < 1e-11);
        }
        for (a, c) in gd.dx.unwrap().values().iter().zip(gf.dx.unwrap().values()) {
            assert!((a - c).abs() < 1e-11);
        }
    }

    #[test]
    fn conv_is_linear_in_input_and_kernel() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let xs = Shape4::new(1, 2, 3, 8);
        let ks = Shape4::new(2, 2, 2, 3);
        let mut gen = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let x1 = t(xs, gen(xs.len()));
        let x2 = t(xs, gen(xs.len()));
        let k1 = t(ks, gen(ks.len()));
        let k2 = t(ks, gen(ks.len()));
        let zero_bias = Tensor4::zeros(Shape4::new(1, 2, 1, 1));
        let (a, c) = (0.7, -1.3);
        let run = |x: &Tensor4<f64>, k: &Tensor4<f64>| {
            conv2d_forward(x, k, &zero_bias, (1, 1), (0, 1), Execution::Sequential).unwrap()
        };

        let mut xmix = Tensor4::zeros(xs);
        for i in 0..xs.len() {
            xmix.values_mut()[i] = a * x1.values()[i] + c * x2.values()[i];
        }
        let (y_mix, y1, y2) = (run(&xmix, &k1), run(&x1, &k1), run(&x2, &k1));
        for i in 0..y_mix.len() {
            let expect = a * y1.values()[i] + c * y2.values()[i];
            assert!((y_mix.values()[i] - expect).abs() < 1e-10);
        }

        let mut kmix = Tensor4::zeros(ks);
        for i in 0..ks.len() {
            kmix.values_mut()[i] = a * k1.values()[i] + c * k2.values()[i];
        }
        let (yk_mix, yk1, yk2) = (run(&x1, &kmix), run(&x1, &k1), run(&x1, &k2));
        for i in 0..yk_mix.len() {
            let expect = a * yk1.values()[i] + c * yk2.values()[i];
            assert!((yk_mix.values()[i] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn pool_hand_example_and_shapes() {
        let x = t(Shape4::new(1, 1, 1, 6), vec![0., 3., 6., 9., 12., 15.]);
        let y = avgpool2d_forward(&x, (1, 3), (1, 3), Execution::Sequential).unwrap();
        assert_eq!(y.values(), &[3.0, 12.0]);

        let big = Tensor4::<f32>::filled(Shape4::new(1, 36, 1, 864), 2.5);
        let pooled = avgpool2d_forward(&big, (1, 3), (1, 3), Execution::Sequential).unwrap();
        assert_eq!(pooled.shape(), Shape4::new(1, 36, 1, 288));
        assert!(pooled.values().iter().all(|&v| (v - 2.5).abs() < 1e-6));

        let err = avgpool2d_forward(&x, (2, 3), (1, 1), Execution::Sequential).unwrap_err();
        assert!(err.to_string().contains("window"));
    }

    #[test]
    fn pool_preserves_windowed_sum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let xs = Shape4::new(2, 3, 1, 12);
        let x = t(xs, (0..xs.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let y = avgpool2d_forward(&x, (1, 3), (1, 3), Execution::Sequential).unwrap();
        // mean-pool linearity: window size × pooled sum == input sum
        assert!((3.0 * y.sum() - x.sum()).abs() < 1e-12);
    }
}
