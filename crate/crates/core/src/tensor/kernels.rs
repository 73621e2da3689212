//! Raw forward/backward kernels operating on whole tensors. Shape checking
//! happens in the graph layer; these functions assume valid inputs.

use super::{ConvSpec, PoolSpec, Scalar, Shape, Tensor};

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    spec: ConvSpec,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }

    /// For kernel offset `k` along an axis, the half-open range of output
    /// positions whose input coordinate stays inside `[0, len)`.
    fn valid_range(&self, k: usize, len: usize, out: usize) -> (usize, usize) {
        let s = self.spec.stride as isize;
        let off = (k * self.spec.dilation) as isize - self.spec.padding as isize;
        // need 0 <= o*s + off < len
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi = if (len as isize) - off <= 0 {
            0
        } else {
            (((len as isize) - off + s - 1) / s).min(out as isize)
        };
        (lo as usize, (hi.max(lo as isize)) as usize)
    }
}

fn geom(input: Shape, kernel: Shape, spec: ConvSpec, out: Shape) -> ConvGeom {
    ConvGeom {
        c: input.c,
        h: input.h,
        w: input.w,
        kh: kernel.h,
        kw: kernel.w,
        oh: out.h,
        ow: out.w,
        spec,
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, img: &[T], cols: &mut [T]) {
    let ncols = g.cols();
    let s = g.spec.stride;
    let d = g.spec.dilation;
    let p = g.spec.padding as isize;
    for c in 0..g.c {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (ylo, yhi) = g.valid_range(ki, g.h, g.oh);
            for kj in 0..g.kw {
                let (xlo, xhi) = g.valid_range(kj, g.w, g.ow);
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                dst.fill(T::zero());
                for oy in ylo..yhi {
                    let iy = (oy * s + ki * d) as isize - p;
                    let src = &plane[iy as usize * g.w..];
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    for ox in xlo..xhi {
                        let ix = (ox * s + kj * d) as isize - p;
                        drow[ox] = src[ix as usize];
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], img: &mut [T]) {
    let ncols = g.cols();
    let s = g.spec.stride;
    let d = g.spec.dilation;
    let p = g.spec.padding as isize;
    for c in 0..g.c {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (ylo, yhi) = g.valid_range(ki, g.h, g.oh);
            for kj in 0..g.kw {
                let (xlo, xhi) = g.valid_range(kj, g.w, g.ow);
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in ylo..yhi {
                    let iy = ((oy * s + ki * d) as isize - p) as usize;
                    let srow = &src[oy * g.ow..(oy + 1) * g.ow];
                    for ox in xlo..xhi {
                        let ix = ((ox * s + kj * d) as isize - p) as usize;
                        let v = &mut plane[iy * g.w + ix];
                        *v = *v + srow[ox];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
    out_shape: Shape,
) -> Tensor<T> {
    let g = geom(input.shape(), weight.shape(), spec, out_shape);
    let oc = weight.shape().n;
    let mut out = Tensor::zeros(out_shape);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.rows() * g.cols()]
    };
    let in_per = g.c * g.h * g.w;
    let out_per = oc * g.cols();
    for n in 0..input.shape().n {
        let img = &input.data()[n * in_per..(n + 1) * in_per];
        let b: &[T] = if g.is_pointwise() {
            img
        } else {
            im2col(&g, img, &mut cols);
            &cols
        };
        let dst = &mut out.data_mut()[n * out_per..(n + 1) * out_per];
        T::matmul(oc, g.rows(), g.cols(), weight.data(), false, b, false, dst, false);
        if let Some(bias) = bias {
            for (o, row) in dst.chunks_mut(g.cols()).enumerate() {
                let bv = bias.data()[o];
                row.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    out
}

/// Returns `(d_input, d_weight, d_bias)`; each is computed only when requested.
#[allow(clippy::type_complexity)]
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: ConvSpec,
    grad_out: &Tensor<T>,
    want_input: bool,
    want_weight: bool,
    want_bias: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
    let g = geom(input.shape(), weight.shape(), spec, grad_out.shape());
    let oc = weight.shape().n;
    let mut d_in = want_input.then(|| Tensor::zeros(input.shape()));
    let mut d_w = want_weight.then(|| Tensor::zeros(weight.shape()));
    let mut d_b = want_bias.then(|| Tensor::zeros(Shape::new(1, oc, 1, 1)));
    let pointwise = g.is_pointwise();
    let mut cols = vec![T::zero(); if pointwise { 0 } else { g.rows() * g.cols() }];
    let mut dcols = vec![T::zero(); if pointwise || !want_input { 0 } else { g.rows() * g.cols() }];
    let in_per = g.c * g.h * g.w;
    let out_per = oc * g.cols();
    for n in 0..input.shape().n {
        let go = &grad_out.data()[n * out_per..(n + 1) * out_per];
        if let Some(d_w) = d_w.as_mut() {
            let img = &input.data()[n * in_per..(n + 1) * in_per];
            let b: &[T] = if pointwise {
                img
            } else {
                im2col(&g, img, &mut cols);
                &cols
            };
            // dW (oc × rows) += dOut (oc × cols) · colsᵀ
            T::matmul(oc, g.cols(), g.rows(), go, false, b, true, d_w.data_mut(), true);
        }
        if let Some(d_b) = d_b.as_mut() {
            for (o, row) in go.chunks(g.cols()).enumerate() {
                let s = row.iter().fold(T::zero(), |a, &b| a + b);
                d_b.data_mut()[o] = d_b.data_mut()[o] + s;
            }
        }
        if let Some(d_in) = d_in.as_mut() {
            let dst = &mut d_in.data_mut()[n * in_per..(n + 1) * in_per];
            if pointwise {
                T::matmul(g.rows(), oc, g.cols(), weight.data(), true, go, false, dst, true);
            } else {
                T::matmul(g.rows(), oc, g.cols(), weight.data(), true, go, false, &mut dcols, false);
                col2im(&g, &dcols, dst);
            }
        }
    }
    (d_in, d_w, d_b)
}

/// Max pooling; returns the output and, per output element, the flat index
/// of the winning input element (first maximum in row-major window order).
pub(crate) fn max_pool_forward<T: Scalar>(
    input: &Tensor<T>,
    spec: PoolSpec,
    out_shape: Shape,
) -> (Tensor<T>, Vec<u32>) {
    let s = input.shape();
    let mut out = Tensor::zeros(out_shape);
    let mut arg = vec![0u32; out_shape.len()];
    let p = spec.padding as isize;
    let mut o = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.plane();
            let plane = input.plane(n, c);
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    let mut best = T::neg_infinity();
                    let mut best_i = usize::MAX;
                    for ky in 0..spec.kernel {
                        let iy = (oy * spec.stride + ky) as isize - p;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        for kx in 0..spec.kernel {
                            let ix = (ox * spec.stride + kx) as isize - p;
                            if ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            let i = iy as usize * s.w + ix as usize;
                            if best_i == usize::MAX || plane[i] > best {
                                best = plane[i];
                                best_i = i;
                            }
                        }
                    }
                    out.data_mut()[o] = best;
                    arg[o] = (base + best_i) as u32;
                    o += 1;
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn max_pool_backward<T: Scalar>(in_shape: Shape, arg: &[u32], grad_out: &Tensor<T>) -> Tensor<T> {
    let mut d = Tensor::zeros(in_shape);
    for (&i, &g) in arg.iter().zip(grad_out.data()) {
        let v = &mut d.data_mut()[i as usize];
        *v = *v + g;
    }
    d
}

/// Source taps for one axis of an align-corners-false bilinear resize.
#[derive(Clone, Copy)]
struct Tap<T> {
    i0: usize,
    i1: usize,
    frac: T,
}

fn taps<T: Scalar>(input: usize, output: usize) -> Vec<Tap<T>> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = if i0 == i1 { 0.0 } else { src - i0 as f64 };
            Tap {
                i0,
                i1,
                frac: T::of(frac),
            }
        })
        .collect()
}

pub(crate) fn resize_forward<T: Scalar>(input: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let s = input.shape();
    if (oh, ow) == (s.h, s.w) {
        return input.clone();
    }
    let ty = taps::<T>(s.h, oh);
    let tx = taps::<T>(s.w, ow);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    let one = T::one();
    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (oy, ry) in ty.iter().enumerate() {
                let r0 = &src[ry.i0 * s.w..(ry.i0 + 1) * s.w];
                let r1 = &src[ry.i1 * s.w..(ry.i1 + 1) * s.w];
                for (ox, rx) in tx.iter().enumerate() {
                    let top = r0[rx.i0] * (one - rx.frac) + r0[rx.i1] * rx.frac;
                    let bot = r1[rx.i0] * (one - rx.frac) + r1[rx.i1] * rx.frac;
                    dst[oy * ow + ox] = top * (one - ry.frac) + bot * ry.frac;
                }
            }
        }
    }
    out
}

pub(crate) fn resize_backward<T: Scalar>(in_shape: Shape, grad_out: &Tensor<T>) -> Tensor<T> {
    let go = grad_out.shape();
    if (go.h, go.w) == (in_shape.h, in_shape.w) {
        return grad_out.clone();
    }
    let ty = taps::<T>(in_shape.h, go.h);
    let tx = taps::<T>(in_shape.w, go.w);
    let mut d = Tensor::zeros(in_shape);
    let one = T::one();
    let w = in_shape.w;
    for n in 0..in_shape.n {
        for c in 0..in_shape.c {
            let src = grad_out.plane(n, c);
            let dst = d.plane_mut(n, c);
            for (oy, ry) in ty.iter().enumerate() {
                for (ox, rx) in tx.iter().enumerate() {
                    let g = src[oy * go.w + ox];
                    let gt = g * (one - ry.frac);
                    let gb = g * ry.frac;
                    dst[ry.i0 * w + rx.i0] = dst[ry.i0 * w + rx.i0] + gt * (one - rx.frac);
                    dst[ry.i0 * w + rx.i1] = dst[ry.i0 * w + rx.i1] + gt * rx.frac;
                    dst[ry.i1 * w + rx.i0] = dst[ry.i1 * w + rx.i0] + gb * (one - rx.frac);
                    dst[ry.i1 * w + rx.i1] = dst[ry.i1 * w + rx.i1] + gb * rx.frac;
                }
            }
        }
    }
    d
}

pub(crate) fn softmax_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let p = s.plane();
    let mut out = Tensor::zeros(s);
    let src = input.data();
    let dst = out.data_mut();
    for n in 0..s.n {
        let base = n * s.c * p;
        for i in 0..p {
            let mut m = T::neg_infinity();
            for c in 0..s.c {
                m = m.max(src[base + c * p + i]);
            }
            let mut z = T::zero();
            for c in 0..s.c {
                let e = (src[base + c * p + i] - m).exp();
                dst[base + c * p + i] = e;
                z = z + e;
            }
            for c in 0..s.c {
                dst[base + c * p + i] = dst[base + c * p + i] / z;
            }
        }
    }
    out
}

pub(crate) fn softmax_backward<T: Scalar>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let s = y.shape();
    let p = s.plane();
    let mut d = Tensor::zeros(s);
    let (yv, gv) = (y.data(), grad_out.data());
    let dv = d.data_mut();
    for n in 0..s.n {
        let base = n * s.c * p;
        for i in 0..p {
            let mut dot = T::zero();
            for c in 0..s.c {
                dot = dot + yv[base + c * p + i] * gv[base + c * p + i];
            }
            for c in 0..s.c {
                let k = base + c * p + i;
                dv[k] = yv[k] * (gv[k] - dot);
            }
        }
    }
    d
}

/// Mean class-weighted binary cross entropy and its gradient w.r.t. `pred`.
pub(crate) fn weighted_ce<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    positive_weight: T,
    eps: T,
) -> (T, Tensor<T>) {
    let n = T::of(pred.shape().len() as f64);
    let one = T::one();
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(pred.shape());
    for ((&p, &t), g) in pred.data().iter().zip(target.data()).zip(grad.data_mut()) {
        let clamped = p < eps || p > one - eps;
        let pc = if p.is_nan() { p } else { p.max(eps).min(one - eps) };
        loss = loss - (positive_weight * t * pc.ln() + (one - t) * (one - pc).ln());
        *g = if clamped {
            T::zero()
        } else {
            -(positive_weight * t / pc - (one - t) / (one - pc)) / n
        };
    }
    (loss / n, grad)
}
