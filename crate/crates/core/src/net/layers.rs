//! Layer kernels: convolution via im2col + GEMM, 2×2 transposed convolution,
//! instance normalization and leaky ReLU, each with its backward pass.

use super::real::{MatRef, Real};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const NORM_EPS: f64 = 1e-5;

/// An N×C×H×W activation, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Act<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Act<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![T::zero(); n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "activation size");
        Self { n, c, h, w, data }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let s = self.c * self.plane();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let s = self.c * self.plane();
        &mut self.data[i * s..(i + 1) * s]
    }

    pub fn scale(&mut self, k: T) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }
}

/// Channel concatenation `[a, b]`.
pub fn concat_channels<T: Real>(a: &Act<T>, b: &Act<T>) -> Act<T> {
    assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w), "concat shapes");
    let mut out = Act::zeros(a.n, a.c + b.c, a.h, a.w);
    for i in 0..a.n {
        let dst = out.sample_mut(i);
        let sa = a.sample(i);
        dst[..sa.len()].copy_from_slice(sa);
        dst[sa.len()..].copy_from_slice(b.sample(i));
    }
    out
}

/// Inverse of [`concat_channels`] for gradients.
pub fn split_channels<T: Real>(g: &Act<T>, ca: usize) -> (Act<T>, Act<T>) {
    let cb = g.c - ca;
    let mut a = Act::zeros(g.n, ca, g.h, g.w);
    let mut b = Act::zeros(g.n, cb, g.h, g.w);
    let p = g.plane();
    for i in 0..g.n {
        let src = g.sample(i);
        a.sample_mut(i).copy_from_slice(&src[..ca * p]);
        b.sample_mut(i).copy_from_slice(&src[ca * p..]);
    }
    (a, b)
}

/// Square-kernel convolution with zero padding `k/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    /// `[cout][cin][k][k]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        Self {
            cin,
            cout,
            k,
            stride,
            weight: vec![T::zero(); cout * cin * k * k],
            bias: vec![T::zero(); cout],
        }
    }

    fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        ((h + 2 * p - self.k) / self.stride + 1, (w + 2 * p - self.k) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, cols: &mut [T]) {
        let (ho, wo) = self.out_dims(h, w);
        let (k, s, pad) = (self.k, self.stride, self.pad() as isize);
        let p = ho * wo;
        for ci in 0..self.cin {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - pad;
                        let dst = &mut row[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - pad;
                            *d = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, dx: &mut [T]) {
        let (ho, wo) = self.out_dims(h, w);
        let (k, s, pad) = (self.k, self.stride, self.pad() as isize);
        let p = ho * wo;
        for ci in 0..self.cin {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &g) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                            let ix = (ox * s + kx) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Act<T>) -> Act<T> {
        assert_eq!(x.c, self.cin, "conv input channels");
        let (ho, wo) = self.out_dims(x.h, x.w);
        let p = ho * wo;
        let kk = self.cin * self.k * self.k;
        let mut out = Act::zeros(x.n, self.cout, ho, wo);
        let mut cols = if self.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * p] };
        for i in 0..x.n {
            let xs = x.sample(i);
            let b = if self.is_pointwise() {
                MatRef::rows(xs, p)
            } else {
                self.im2col(xs, x.h, x.w, &mut cols);
                MatRef::rows(&cols[..], p)
            };
            let o = out.sample_mut(i);
            for (co, row) in o.chunks_exact_mut(p).enumerate() {
                row.fill(self.bias[co]);
            }
            T::gemm_raw(self.cout, kk, p, T::one(), MatRef::rows(&self.weight, kk), b, T::one(), o);
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns dL/dx.
    pub fn backward(&self, x: &Act<T>, dy: &Act<T>, grad: &mut Conv2d<T>) -> Act<T> {
        let (ho, wo) = self.out_dims(x.h, x.w);
        assert_eq!((dy.n, dy.c, dy.h, dy.w), (x.n, self.cout, ho, wo), "conv grad shape");
        let p = ho * wo;
        let kk = self.cin * self.k * self.k;
        let mut dx = Act::zeros(x.n, self.cin, x.h, x.w);
        let mut cols = vec![T::zero(); kk * p];
        for i in 0..x.n {
            let g = dy.sample(i);
            for (co, row) in g.chunks_exact(p).enumerate() {
                grad.bias[co] += row.iter().copied().sum::<T>();
            }
            let xs = x.sample(i);
            if self.is_pointwise() {
                T::gemm_raw(self.cout, p, kk, T::one(), MatRef::rows(g, p), MatRef::transposed(xs, p), T::one(), &mut grad.weight);
                T::gemm_raw(kk, self.cout, p, T::one(), MatRef::transposed(&self.weight, kk), MatRef::rows(g, p), T::zero(), dx.sample_mut(i));
            } else {
                self.im2col(xs, x.h, x.w, &mut cols);
                T::gemm_raw(self.cout, p, kk, T::one(), MatRef::rows(g, p), MatRef::transposed(&cols, p), T::one(), &mut grad.weight);
                T::gemm_raw(kk, self.cout, p, T::one(), MatRef::transposed(&self.weight, kk), MatRef::rows(g, p), T::zero(), &mut cols);
                self.col2im(&cols, x.h, x.w, dx.sample_mut(i));
            }
        }
        dx
    }
}

/// 2×2 transposed convolution, stride 2: doubles H and W.
#[derive(Debug, Clone, PartialEq)]
pub struct UpConv<T> {
    pub cin: usize,
    pub cout: usize,
    /// `[cin][cout][2][2]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> UpConv<T> {
    pub fn zeros(cin: usize, cout: usize) -> Self {
        Self {
            cin,
            cout,
            weight: vec![T::zero(); cin * cout * 4],
            bias: vec![T::zero(); cout],
        }
    }

    pub fn forward(&self, x: &Act<T>) -> Act<T> {
        assert_eq!(x.c, self.cin, "upconv input channels");
        let (h, w) = (x.h, x.w);
        let p = h * w;
        let q = self.cout * 4;
        let mut out = Act::zeros(x.n, self.cout, 2 * h, 2 * w);
        let mut tmp = vec![T::zero(); q * p];
        for i in 0..x.n {
            T::gemm_raw(q, self.cin, p, T::one(), MatRef::transposed(&self.weight, q), MatRef::rows(x.sample(i), p), T::zero(), &mut tmp);
            let o = out.sample_mut(i);
            for co in 0..self.cout {
                let b = self.bias[co];
                let plane = &mut o[co * 4 * p..(co + 1) * 4 * p];
                for tap in 0..4 {
                    let (a, bx) = (tap / 2, tap % 2);
                    let src = &tmp[(co * 4 + tap) * p..][..p];
                    for y in 0..h {
                        let dst_row = (2 * y + a) * 2 * w;
                        for xx in 0..w {
                            plane[dst_row + 2 * xx + bx] = src[y * w + xx] + b;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward(&self, x: &Act<T>, dy: &Act<T>, grad: &mut UpConv<T>) -> Act<T> {
        let (h, w) = (x.h, x.w);
        assert_eq!((dy.n, dy.c, dy.h, dy.w), (x.n, self.cout, 2 * h, 2 * w), "upconv grad shape");
        let p = h * w;
        let q = self.cout * 4;
        let mut dx = Act::zeros(x.n, self.cin, h, w);
        let mut tmp = vec![T::zero(); q * p];
        for i in 0..x.n {
            let g = dy.sample(i);
            for co in 0..self.cout {
                let plane = &g[co * 4 * p..(co + 1) * 4 * p];
                grad.bias[co] += plane.iter().copied().sum::<T>();
                for tap in 0..4 {
                    let (a, bx) = (tap / 2, tap % 2);
                    let dst = &mut tmp[(co * 4 + tap) * p..][..p];
                    for y in 0..h {
                        let src_row = (2 * y + a) * 2 * w;
                        for xx in 0..w {
                            dst[y * w + xx] = plane[src_row + 2 * xx + bx];
                        }
                    }
                }
            }
            let xs = x.sample(i);
            T::gemm_raw(self.cin, p, q, T::one(), MatRef::rows(xs, p), MatRef::transposed(&tmp, p), T::one(), &mut grad.weight);
            T::gemm_raw(self.cin, q, p, T::one(), MatRef::rows(&self.weight, q), MatRef::rows(&tmp, p), T::zero(), dx.sample_mut(i));
        }
        dx
    }
}

/// Per-sample, per-channel normalization over H×W with a learned affine.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceNorm<T> {
    pub c: usize,
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

/// What the backward pass needs from a normalization forward.
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    pub xhat: Act<T>,
    /// 1/√(σ²+ε) per (sample, channel).
    pub inv_std: Vec<T>,
}

impl<T: Real> InstanceNorm<T> {
    pub fn identity(c: usize) -> Self {
        Self {
            c,
            scale: vec![T::one(); c],
            shift: vec![T::zero(); c],
        }
    }

    pub fn zeros(c: usize) -> Self {
        Self {
            c,
            scale: vec![T::zero(); c],
            shift: vec![T::zero(); c],
        }
    }

    pub fn forward(&self, x: &Act<T>) -> (Act<T>, NormCache<T>) {
        assert_eq!(x.c, self.c, "norm channels");
        let p = x.plane();
        let mut y = Act::zeros(x.n, x.c, x.h, x.w);
        let mut xhat = Act::zeros(x.n, x.c, x.h, x.w);
        let mut inv_std = Vec::with_capacity(x.n * x.c);
        for (idx, (src, (dst, hat))) in x
            .data
            .chunks_exact(p)
            .zip(y.data.chunks_exact_mut(p).zip(xhat.data.chunks_exact_mut(p)))
            .enumerate()
        {
            let ch = idx % x.c;
            let mean = src.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / p as f64;
            let var = src
                .iter()
                .map(|v| {
                    let d = v.to_f64().unwrap() - mean;
                    d * d
                })
                .sum::<f64>()
                / p as f64;
            let istd = 1.0 / (var + NORM_EPS).sqrt();
            let (m, is) = (T::lit(mean), T::lit(istd));
            let (g, b) = (self.scale[ch], self.shift[ch]);
            for ((d, h), &v) in dst.iter_mut().zip(hat.iter_mut()).zip(src) {
                *h = (v - m) * is;
                *d = g * *h + b;
            }
            inv_std.push(is);
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &NormCache<T>, dy: &Act<T>, grad: &mut InstanceNorm<T>) -> Act<T> {
        let p = dy.plane();
        let mut dx = Act::zeros(dy.n, dy.c, dy.h, dy.w);
        for (idx, ((g, hat), out)) in dy
            .data
            .chunks_exact(p)
            .zip(cache.xhat.data.chunks_exact(p))
            .zip(dx.data.chunks_exact_mut(p))
            .enumerate()
        {
            let ch = idx % dy.c;
            let mut sum_g = 0.0f64;
            let mut sum_gx = 0.0f64;
            for (&gv, &hv) in g.iter().zip(hat) {
                let gv = gv.to_f64().unwrap();
                sum_g += gv;
                sum_gx += gv * hv.to_f64().unwrap();
            }
            grad.shift[ch] += T::lit(sum_g);
            grad.scale[ch] += T::lit(sum_gx);
            let gamma = self.scale[ch];
            // dxhat = gamma·dy; dx = istd·(dxhat − mean(dxhat) − xhat·mean(dxhat·xhat))
            let mean_g = T::lit(sum_g / p as f64) * gamma;
            let mean_gx = T::lit(sum_gx / p as f64) * gamma;
            let is = cache.inv_std[idx];
            for ((o, &gv), &hv) in out.iter_mut().zip(g).zip(hat) {
                *o = is * (gamma * gv - mean_g - hv * mean_gx);
            }
        }
        dx
    }
}

pub fn leaky_relu<T: Real>(x: &mut Act<T>) {
    let slope = T::lit(LEAKY_SLOPE);
    x.data.iter_mut().for_each(|v| {
        if *v <= T::zero() {
            *v *= slope
        }
    });
}

/// Backward through leaky ReLU given its input `z`.
pub fn leaky_relu_backward<T: Real>(z: &Act<T>, dy: &mut Act<T>) {
    let slope = T::lit(LEAKY_SLOPE);
    for (g, &v) in dy.data.iter_mut().zip(&z.data) {
        if v <= T::zero() {
            *g *= slope;
        }
    }
}
