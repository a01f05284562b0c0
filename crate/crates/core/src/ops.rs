//! Layer kernels with hand-written backward passes.
//!
//! Every kernel is a pure function of its inputs. Backward functions accumulate
//! into parameter gradients (`+=`) and return a fresh input gradient.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Geometry of a square convolution kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub const SAME3: ConvGeom = ConvGeom {
        kernel: 3,
        stride: 1,
        pad: 1,
    };
    pub const DOWN3: ConvGeom = ConvGeom {
        kernel: 3,
        stride: 2,
        pad: 1,
    };
    pub const POINT: ConvGeom = ConvGeom {
        kernel: 1,
        stride: 1,
        pad: 0,
    };

    pub fn out_size(&self, size: usize) -> usize {
        (size + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<S: Scalar>(x: &[S], c: usize, h: usize, w: usize, g: ConvGeom, oh: usize, ow: usize, col: &mut [S]) {
    let k = g.kernel;
    let plane = oh * ow;
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out.fill(S::zero());
                        continue;
                    }
                    let line = &src[iy as usize * w..(iy as usize + 1) * w];
                    if g.stride == 1 {
                        let (lo, hi) = valid_span(kx, g.pad, w, ow);
                        out[..lo].fill(S::zero());
                        out[hi..].fill(S::zero());
                        if lo < hi {
                            let start = lo + kx - g.pad;
                            out[lo..hi].copy_from_slice(&line[start..start + hi - lo]);
                        }
                    } else {
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            *o = if ix < 0 || ix >= w as isize {
                                S::zero()
                            } else {
                                line[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Output columns `[lo, hi)` whose stride-1 input column `ox + kx - pad` is in bounds.
fn valid_span(kx: usize, pad: usize, w: usize, ow: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx).min(ow);
    let hi = (w + pad).saturating_sub(kx).min(ow).max(lo);
    (lo, hi)
}

#[allow(clippy::too_many_arguments)]
fn col2im<S: Scalar>(col: &[S], c: usize, h: usize, w: usize, g: ConvGeom, oh: usize, ow: usize, dx: &mut [S]) {
    let k = g.kernel;
    let plane = oh * ow;
    for ci in 0..c {
        let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    let vals = &src[oy * ow..(oy + 1) * ow];
                    if g.stride == 1 {
                        let (lo, hi) = valid_span(kx, g.pad, w, ow);
                        if lo < hi {
                            let start = lo + kx - g.pad;
                            for (d, &v) in line[start..start + hi - lo].iter_mut().zip(&vals[lo..hi]) {
                                *d += v;
                            }
                        }
                        continue;
                    }
                    for (ox, &v) in vals.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Convolution with weights `(cout, cin, k, k)` and bias `(cout)`.
pub fn conv2d_forward<S: Scalar>(x: &Tensor<S>, weight: &[S], bias: &[S], cout: usize, g: ConvGeom) -> Tensor<S> {
    let [n, cin, h, w] = x.shape();
    let (oh, ow) = (g.out_size(h), g.out_size(w));
    let rows = cin * g.kernel * g.kernel;
    assert_eq!(weight.len(), cout * rows, "conv weight size");
    assert_eq!(bias.len(), cout, "conv bias size");
    let plane = oh * ow;
    let mut out = Tensor::zeros([n, cout, oh, ow]);
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![S::zero(); rows * plane]
    };
    for b in 0..n {
        let xs = x.sample(b);
        let cols: &[S] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, cin, h, w, g, oh, ow, &mut col);
            &col
        };
        let ys = out.sample_mut(b);
        for (co, &bv) in bias.iter().enumerate() {
            ys[co * plane..(co + 1) * plane].fill(bv);
        }
        S::gemm(
            cout,
            rows,
            plane,
            S::one(),
            weight,
            rows as isize,
            1,
            cols,
            plane as isize,
            1,
            S::one(),
            ys,
            plane as isize,
            1,
        );
    }
    out
}

/// Backward of [`conv2d_forward`]. Returns the input gradient when `need_dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    weight: &[S],
    cout: usize,
    g: ConvGeom,
    dy: &Tensor<S>,
    mut dweight: Option<&mut [S]>,
    mut dbias: Option<&mut [S]>,
    need_dx: bool,
) -> Option<Tensor<S>> {
    let [n, cin, h, w] = x.shape();
    let (oh, ow) = (g.out_size(h), g.out_size(w));
    assert_eq!(dy.shape(), [n, cout, oh, ow], "conv output gradient shape");
    let rows = cin * g.kernel * g.kernel;
    let plane = oh * ow;
    let pointwise = g.is_pointwise();
    let mut col = if pointwise { Vec::new() } else { vec![S::zero(); rows * plane] };
    let mut dcol = if need_dx && !pointwise {
        vec![S::zero(); rows * plane]
    } else {
        Vec::new()
    };
    let mut dx = if need_dx { Some(Tensor::zeros(x.shape())) } else { None };
    for b in 0..n {
        let dys = dy.sample(b);
        if let Some(db) = dbias.as_deref_mut() {
            for (co, acc) in db.iter_mut().enumerate() {
                *acc += dys[co * plane..(co + 1) * plane].iter().copied().sum::<S>();
            }
        }
        if let Some(dw) = dweight.as_deref_mut() {
            let xs = x.sample(b);
            let cols: &[S] = if pointwise {
                xs
            } else {
                im2col(xs, cin, h, w, g, oh, ow, &mut col);
                &col
            };
            // dW[co, r] += dy[co, p] * col[r, p]
            S::gemm(
                cout,
                plane,
                rows,
                S::one(),
                dys,
                plane as isize,
                1,
                cols,
                1,
                plane as isize,
                S::one(),
                dw,
                rows as isize,
                1,
            );
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = dx.sample_mut(b);
            // dcol[r, p] = W[co, r]^T dy[co, p]
            let target: &mut [S] = if pointwise { dxs } else { &mut dcol };
            S::gemm(
                rows,
                cout,
                plane,
                S::one(),
                weight,
                1,
                rows as isize,
                dys,
                plane as isize,
                1,
                S::zero(),
                target,
                plane as isize,
                1,
            );
            if !pointwise {
                col2im(&dcol, cin, h, w, g, oh, ow, dx.sample_mut(b));
            }
        }
    }
    dx
}

/// 2x2 stride-2 transposed convolution, weights `(cin, cout, 2, 2)`.
pub fn conv_transpose2_forward<S: Scalar>(x: &Tensor<S>, weight: &[S], bias: &[S], cout: usize) -> Tensor<S> {
    let [n, cin, h, w] = x.shape();
    let co4 = cout * 4;
    assert_eq!(weight.len(), cin * co4, "transposed conv weight size");
    let plane = h * w;
    let mut y = vec![S::zero(); co4 * plane];
    let mut out = Tensor::zeros([n, cout, 2 * h, 2 * w]);
    for b in 0..n {
        S::gemm(
            co4,
            cin,
            plane,
            S::one(),
            weight,
            1,
            co4 as isize,
            x.sample(b),
            plane as isize,
            1,
            S::zero(),
            &mut y,
            plane as isize,
            1,
        );
        let os = out.sample_mut(b);
        for co in 0..cout {
            for a in 0..2 {
                for bb in 0..2 {
                    let src = &y[(co * 4 + a * 2 + bb) * plane..][..plane];
                    for i in 0..h {
                        let row = &mut os[(co * 2 * h + 2 * i + a) * 2 * w..][..2 * w];
                        for j in 0..w {
                            row[2 * j + bb] = src[i * w + j] + bias[co];
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv_transpose2_backward<S: Scalar>(
    x: &Tensor<S>,
    weight: &[S],
    cout: usize,
    dy: &Tensor<S>,
    mut dweight: Option<&mut [S]>,
    mut dbias: Option<&mut [S]>,
    need_dx: bool,
) -> Option<Tensor<S>> {
    let [n, cin, h, w] = x.shape();
    assert_eq!(dy.shape(), [n, cout, 2 * h, 2 * w], "transposed conv gradient shape");
    let co4 = cout * 4;
    let plane = h * w;
    let mut gy = vec![S::zero(); co4 * plane];
    let mut dx = if need_dx { Some(Tensor::zeros(x.shape())) } else { None };
    for b in 0..n {
        let ds = dy.sample(b);
        for co in 0..cout {
            for a in 0..2 {
                for bb in 0..2 {
                    let dst = &mut gy[(co * 4 + a * 2 + bb) * plane..][..plane];
                    for i in 0..h {
                        let row = &ds[(co * 2 * h + 2 * i + a) * 2 * w..][..2 * w];
                        for j in 0..w {
                            dst[i * w + j] = row[2 * j + bb];
                        }
                    }
                }
            }
        }
        if let Some(db) = dbias.as_deref_mut() {
            for (co, acc) in db.iter_mut().enumerate() {
                *acc += ds[co * 4 * plane..(co + 1) * 4 * plane].iter().copied().sum::<S>();
            }
        }
        if let Some(dw) = dweight.as_deref_mut() {
            S::gemm(
                cin,
                plane,
                co4,
                S::one(),
                x.sample(b),
                plane as isize,
                1,
                &gy,
                1,
                plane as isize,
                S::one(),
                dw,
                co4 as isize,
                1,
            );
        }
        if let Some(dx) = dx.as_mut() {
            S::gemm(
                cin,
                co4,
                plane,
                S::one(),
                weight,
                co4 as isize,
                1,
                &gy,
                plane as isize,
                1,
                S::zero(),
                dx.sample_mut(b),
                plane as isize,
                1,
            );
        }
    }
    dx
}

/// Normalization statistics kept for the backward pass.
#[derive(Clone, Debug)]
pub struct NormCache<S> {
    pub xhat: Tensor<S>,
    pub inv_std: Vec<S>,
}

pub const NORM_EPS: f64 = 1e-5;

/// Per-sample, per-channel normalization with affine `gamma`, `beta`.
pub fn instance_norm_forward<S: Scalar>(x: &Tensor<S>, gamma: &[S], beta: &[S]) -> (Tensor<S>, NormCache<S>) {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let inv_plane = S::one() / S::from_usize(plane).unwrap();
    let eps = S::from_f64_lossy(NORM_EPS);
    let mut xhat = x.clone();
    let mut y = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(n * c);
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let xs = &mut xhat.data_mut()[off..off + plane];
            let mean = xs.iter().copied().sum::<S>() * inv_plane;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_plane;
            let istd = S::one() / (var + eps).sqrt();
            inv_std.push(istd);
            for v in xs.iter_mut() {
                *v = (*v - mean) * istd;
            }
            let ys = &mut y.data_mut()[off..off + plane];
            for (o, &v) in ys.iter_mut().zip(xhat.data()[off..off + plane].iter()) {
                *o = gamma[ch] * v + beta[ch];
            }
        }
    }
    (y, NormCache { xhat, inv_std })
}

pub fn instance_norm_backward<S: Scalar>(
    cache: &NormCache<S>,
    gamma: &[S],
    dy: &Tensor<S>,
    mut dgamma: Option<&mut [S]>,
    mut dbeta: Option<&mut [S]>,
) -> Tensor<S> {
    let [n, c, h, w] = dy.shape();
    let plane = h * w;
    let m = S::from_usize(plane).unwrap();
    let mut dx = Tensor::zeros(dy.shape());
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let g = &dy.data()[off..off + plane];
            let xh = &cache.xhat.data()[off..off + plane];
            let sum_g: S = g.iter().copied().sum();
            let sum_gx: S = g.iter().zip(xh).map(|(&a, &b)| a * b).sum();
            if let Some(dg) = dgamma.as_deref_mut() {
                dg[ch] += sum_gx;
            }
            if let Some(db) = dbeta.as_deref_mut() {
                db[ch] += sum_g;
            }
            let scale = gamma[ch] * cache.inv_std[b * c + ch] / m;
            let out = &mut dx.data_mut()[off..off + plane];
            for ((o, &gi), &xi) in out.iter_mut().zip(g).zip(xh) {
                *o = scale * (m * gi - sum_g - xi * sum_gx);
            }
        }
    }
    dx
}

pub fn relu_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
    y
}

/// `y` is the forward output; ReLU passes gradient where it was positive.
pub fn relu_backward<S: Scalar>(y: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        if v <= S::zero() {
            *d = S::zero();
        }
    }
    dx
}

/// 2x2 average pooling; odd trailing rows/columns are dropped.
pub fn avg_pool2_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::from_f64_lossy(0.25);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            let src = &x.data()[(b * c + ch) * h * w..][..h * w];
            let dst = &mut y.data_mut()[(b * c + ch) * oh * ow..][..oh * ow];
            for i in 0..oh {
                for j in 0..ow {
                    let s = src[2 * i * w + 2 * j]
                        + src[2 * i * w + 2 * j + 1]
                        + src[(2 * i + 1) * w + 2 * j]
                        + src[(2 * i + 1) * w + 2 * j + 1];
                    dst[i * ow + j] = s * quarter;
                }
            }
        }
    }
    y
}

pub fn avg_pool2_backward<S: Scalar>(input_shape: [usize; 4], dy: &Tensor<S>) -> Tensor<S> {
    let [n, c, h, w] = input_shape;
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::from_f64_lossy(0.25);
    let mut dx = Tensor::zeros(input_shape);
    for b in 0..n {
        for ch in 0..c {
            let src = &dy.data()[(b * c + ch) * oh * ow..][..oh * ow];
            let dst = &mut dx.data_mut()[(b * c + ch) * h * w..][..h * w];
            for i in 0..oh {
                for j in 0..ow {
                    let g = src[i * ow + j] * quarter;
                    dst[2 * i * w + 2 * j] = g;
                    dst[2 * i * w + 2 * j + 1] = g;
                    dst[(2 * i + 1) * w + 2 * j] = g;
                    dst[(2 * i + 1) * w + 2 * j + 1] = g;
                }
            }
        }
    }
    dx
}

/// Mean over spatial positions, returned as `(n, c)` row-major.
pub fn global_avg_pool<S: Scalar>(x: &Tensor<S>) -> Vec<S> {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let inv = S::one() / S::from_usize(plane).unwrap();
    (0..n * c)
        .map(|i| x.data()[i * plane..(i + 1) * plane].iter().copied().sum::<S>() * inv)
        .collect()
}

pub fn global_avg_pool_backward<S: Scalar>(input_shape: [usize; 4], dy: &[S]) -> Tensor<S> {
    let [n, c, h, w] = input_shape;
    let plane = h * w;
    let inv = S::one() / S::from_usize(plane).unwrap();
    let mut dx = Tensor::zeros(input_shape);
    for i in 0..n * c {
        dx.data_mut()[i * plane..(i + 1) * plane].fill(dy[i] * inv);
    }
    dx
}

/// `y[n, o] = sum_i x[n, i] * w[o, i] + b[o]`.
pub fn linear_forward<S: Scalar>(x: &[S], n: usize, fin: usize, weight: &[S], bias: &[S], fout: usize) -> Vec<S> {
    let mut y = Vec::with_capacity(n * fout);
    for _ in 0..n {
        y.extend_from_slice(bias);
    }
    S::gemm(
        n,
        fin,
        fout,
        S::one(),
        x,
        fin as isize,
        1,
        weight,
        1,
        fin as isize,
        S::one(),
        &mut y,
        fout as isize,
        1,
    );
    y
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward<S: Scalar>(
    x: &[S],
    n: usize,
    fin: usize,
    weight: &[S],
    fout: usize,
    dy: &[S],
    mut dweight: Option<&mut [S]>,
    mut dbias: Option<&mut [S]>,
) -> Vec<S> {
    if let Some(db) = dbias.as_deref_mut() {
        for row in dy.chunks(fout) {
            for (acc, &g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
    }
    if let Some(dw) = dweight.as_deref_mut() {
        // dW[o, i] += dy[n, o]^T x[n, i]
        S::gemm(
            fout,
            n,
            fin,
            S::one(),
            dy,
            1,
            fout as isize,
            x,
            fin as isize,
            1,
            S::one(),
            dw,
            fin as isize,
            1,
        );
    }
    let mut dx = vec![S::zero(); n * fin];
    S::gemm(
        n,
        fout,
        fin,
        S::one(),
        dy,
        fout as isize,
        1,
        weight,
        fin as isize,
        1,
        S::zero(),
        &mut dx,
        fin as isize,
        1,
    );
    dx
}
