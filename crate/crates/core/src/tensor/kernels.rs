//! Numeric kernels behind the spatial tape ops. Layouts are NCHW, row-major.

use super::Scalar;

pub(crate) fn conv_out_dim(size: usize, stride: usize) -> usize {
    // 3×3 kernel, one pixel of zero padding per side
    (size + 2 - 3) / stride + 1
}

pub(crate) fn pool_out_dim(size: usize) -> usize {
    size.div_ceil(2)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn ho(&self) -> usize {
        conv_out_dim(self.h, self.stride)
    }
    pub fn wo(&self) -> usize {
        conv_out_dim(self.w, self.stride)
    }
    fn k(&self) -> usize {
        self.c * 9
    }
    fn p(&self) -> usize {
        self.ho() * self.wo()
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (ho, wo) = (g.ho(), g.wo());
    let p = ho * wo;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    let out = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, slot) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - 1;
                        *slot = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (ho, wo) = (g.ho(), g.wo());
    let p = ho * wo;
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - 1;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Large stride-1 maps run the padded-plane kernels; small or strided maps go
/// through im2col and gemm.
fn use_direct(g: &ConvGeom) -> bool {
    g.stride == 1 && g.h * g.w >= 400
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    let mut s = acc.iter().copied().sum::<T>();
    for (x, y) in ra.iter().zip(rb) {
        s = s + *x * *y;
    }
    s
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// Planes stored with a one-pixel zero border and two trailing slack
/// elements, so that output row-major index `i` in a `h × (w+2)` layout
/// reads tap `(ky, kx)` at `i + ky·(w+2) + kx`.
struct Padded {
    wp: usize,
    len: usize,
    out_len: usize,
}

impl Padded {
    fn new(h: usize, w: usize) -> Self {
        let wp = w + 2;
        Padded {
            wp,
            len: (h + 2) * wp + 2,
            out_len: h * wp,
        }
    }
}

fn pad_into<T: Scalar>(src: &[T], h: usize, w: usize, pd: &Padded, dst: &mut [T]) {
    dst.fill(T::zero());
    for y in 0..h {
        let d = (y + 1) * pd.wp + 1;
        dst[d..d + w].copy_from_slice(&src[y * w..(y + 1) * w]);
    }
}

fn direct_forward<T: Scalar>(x: &[T], weight: &[T], bias: &[T], g: &ConvGeom, y: &mut [T]) {
    let (h, w) = (g.h, g.w);
    let plane = h * w;
    let pd = Padded::new(h, w);
    let mut xin = vec![T::zero(); g.c * pd.len];
    let mut acc = vec![T::zero(); pd.out_len];
    for n in 0..g.n {
        for c in 0..g.c {
            let src = &x[(n * g.c + c) * plane..(n * g.c + c + 1) * plane];
            pad_into(src, h, w, &pd, &mut xin[c * pd.len..(c + 1) * pd.len]);
        }
        for o in 0..g.o {
            acc.fill(bias[o]);
            for c in 0..g.c {
                let xp = &xin[c * pd.len..(c + 1) * pd.len];
                let wk = &weight[(o * g.c + c) * 9..(o * g.c + c + 1) * 9];
                for t in 0..9 {
                    let shift = (t / 3) * pd.wp + t % 3;
                    axpy(wk[t], &xp[shift..shift + pd.out_len], &mut acc);
                }
            }
            let out = &mut y[(n * g.o + o) * plane..(n * g.o + o + 1) * plane];
            for oy in 0..h {
                out[oy * w..(oy + 1) * w].copy_from_slice(&acc[oy * pd.wp..oy * pd.wp + w]);
            }
        }
    }
}

fn direct_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    g: &ConvGeom,
    dx: Option<&mut Vec<T>>,
    dw: Option<&mut Vec<T>>,
) {
    let (h, w) = (g.h, g.w);
    let plane = h * w;
    let pd = Padded::new(h, w);
    // output gradients in the h × (w+2) layout with zeroed slack columns
    let mut gp = vec![T::zero(); g.o * pd.len];
    let mut xin = if dw.is_some() { vec![T::zero(); g.c * pd.len] } else { Vec::new() };
    let mut dxp = if dx.is_some() { vec![T::zero(); pd.len] } else { Vec::new() };
    let (mut dx, mut dw) = (dx, dw);
    for n in 0..g.n {
        gp.fill(T::zero());
        for o in 0..g.o {
            let src = &dy[(n * g.o + o) * plane..(n * g.o + o + 1) * plane];
            let dst = &mut gp[o * pd.len..(o + 1) * pd.len];
            for oy in 0..h {
                dst[oy * pd.wp..oy * pd.wp + w].copy_from_slice(&src[oy * w..(oy + 1) * w]);
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            for c in 0..g.c {
                let src = &x[(n * g.c + c) * plane..(n * g.c + c + 1) * plane];
                pad_into(src, h, w, &pd, &mut xin[c * pd.len..(c + 1) * pd.len]);
            }
            for o in 0..g.o {
                let go = &gp[o * pd.len..o * pd.len + pd.out_len];
                for c in 0..g.c {
                    let xp = &xin[c * pd.len..(c + 1) * pd.len];
                    let wk = &mut dw[(o * g.c + c) * 9..(o * g.c + c + 1) * 9];
                    for t in 0..9 {
                        let shift = (t / 3) * pd.wp + t % 3;
                        wk[t] = wk[t] + dot(go, &xp[shift..shift + pd.out_len]);
                    }
                }
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            for c in 0..g.c {
                dxp.fill(T::zero());
                for o in 0..g.o {
                    let go = &gp[o * pd.len..o * pd.len + pd.out_len];
                    let wk = &weight[(o * g.c + c) * 9..(o * g.c + c + 1) * 9];
                    for t in 0..9 {
                        let shift = (t / 3) * pd.wp + t % 3;
                        axpy(wk[t], go, &mut dxp[shift..shift + pd.out_len]);
                    }
                }
                let dst = &mut dx[(n * g.c + c) * plane..(n * g.c + c + 1) * plane];
                for iy in 0..h {
                    let row = &dxp[(iy + 1) * pd.wp + 1..(iy + 1) * pd.wp + 1 + w];
                    for (d, &v) in dst[iy * w..(iy + 1) * w].iter_mut().zip(row) {
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

/// `weight` is `o × (c·9)`, `bias` has `o` entries.
pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], weight: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let (k, p) = (g.k(), g.p());
    if use_direct(g) {
        let mut y = vec![T::zero(); g.n * g.o * p];
        direct_forward(x, weight, bias, g, &mut y);
        return y;
    }
    let mut y = vec![T::zero(); g.n * g.o * p];
    let mut cols = vec![T::zero(); k * p];
    for n in 0..g.n {
        im2col(&x[n * g.c * g.h * g.w..(n + 1) * g.c * g.h * g.w], g, &mut cols);
        let out = &mut y[n * g.o * p..(n + 1) * g.o * p];
        for (o, chunk) in out.chunks_exact_mut(p).enumerate() {
            chunk.fill(bias[o]);
        }
        T::gemm(
            g.o,
            k,
            p,
            T::one(),
            weight,
            (k as isize, 1),
            &cols,
            (p as isize, 1),
            T::one(),
            out,
            (p as isize, 1),
        );
    }
    y
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (k, p) = (g.k(), g.p());
    let (need_x, need_w, need_b) = need;
    let mut dx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_w.then(|| vec![T::zero(); g.o * k]);
    let mut db = need_b.then(|| vec![T::zero(); g.o]);
    if use_direct(g) {
        if let Some(db) = db.as_mut() {
            for (i, chunk) in dy.chunks_exact(p).enumerate() {
                let o = i % g.o;
                db[o] = db[o] + chunk.iter().copied().sum::<T>();
            }
        }
        direct_backward(x, weight, dy, g, dx.as_mut(), dw.as_mut());
        return ConvGrads { dx, dw, db };
    }
    let mut cols = vec![T::zero(); k * p];
    let mut dcols = if need_x { vec![T::zero(); k * p] } else { Vec::new() };
    for n in 0..g.n {
        let dyn_ = &dy[n * g.o * p..(n + 1) * g.o * p];
        if let Some(db) = db.as_mut() {
            for (o, chunk) in dyn_.chunks_exact(p).enumerate() {
                db[o] = db[o] + chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            im2col(&x[n * g.c * g.h * g.w..(n + 1) * g.c * g.h * g.w], g, &mut cols);
            // dW += dY · colsᵀ
            T::gemm(
                g.o,
                p,
                k,
                T::one(),
                dyn_,
                (p as isize, 1),
                &cols,
                (1, p as isize),
                T::one(),
                dw,
                (k as isize, 1),
            );
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = Wᵀ · dY
            T::gemm(
                k,
                g.o,
                p,
                T::one(),
                weight,
                (1, k as isize),
                dyn_,
                (p as isize, 1),
                T::zero(),
                &mut dcols,
                (p as isize, 1),
            );
            col2im_add(&dcols, g, &mut dx[n * g.c * g.h * g.w..(n + 1) * g.c * g.h * g.w]);
        }
    }
    ConvGrads { dx, dw, db }
}

/// 2×2 / stride-2 max pooling. Odd trailing rows or columns are padded with
/// −∞. Returns the output and, per output cell, the flat input index of the
/// first maximum in row-major window order.
pub(crate) fn maxpool2x2_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<usize>) {
    let (ho, wo) = (pool_out_dim(h), pool_out_dim(w));
    let mut y = Vec::with_capacity(planes * ho * wo);
    let mut arg = Vec::with_capacity(planes * ho * wo);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (iy, ix) = (oy * 2 + dy, ox * 2 + dx);
                        if iy >= h || ix >= w {
                            continue;
                        }
                        let idx = base + iy * w + ix;
                        if best_idx == usize::MAX || x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                y.push(best);
                arg.push(best_idx);
            }
        }
    }
    (y, arg)
}

pub(crate) struct BnForward<T> {
    pub y: Vec<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Unbiased batch variance, used for the running estimate.
    pub var_unbiased: Vec<T>,
}

/// Batch statistics over `n × c × s` where `s` is the flattened spatial size.
pub(crate) fn batchnorm_train<T: Scalar>(
    x: &[T],
    n: usize,
    c: usize,
    s: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> BnForward<T> {
    let m = (n * s) as f64;
    let mut mean = vec![T::zero(); c];
    let mut var_b = vec![T::zero(); c];
    for ch in 0..c {
        let mut acc = 0.0f64;
        for b in 0..n {
            acc += x[(b * c + ch) * s..][..s].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mu = acc / m;
        let mut sq = 0.0f64;
        for b in 0..n {
            sq += x[(b * c + ch) * s..][..s]
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mu;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ch] = T::of(mu);
        var_b[ch] = T::of(sq / m);
    }
    let inv_std: Vec<T> = var_b.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * s;
            for i in off..off + s {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                y[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    let unbias = if n * s > 1 { m / (m - 1.0) } else { 1.0 };
    let var_unbiased = var_b.iter().map(|&v| v * T::of(unbias)).collect();
    BnForward {
        y,
        xhat,
        inv_std,
        mean,
        var_unbiased,
    }
}

pub(crate) fn batchnorm_eval<T: Scalar>(
    x: &[T],
    n: usize,
    c: usize,
    s: usize,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * s;
            for i in off..off + s {
                let xh = (x[i] - running_mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                y[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    (y, xhat, inv_std)
}

/// Input gradient for batch-statistics normalization.
pub(crate) fn batchnorm_train_dx<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    n: usize,
    c: usize,
    s: usize,
) -> Vec<T> {
    let m = T::of((n * s) as f64);
    let mut dx = vec![T::zero(); dy.len()];
    for ch in 0..c {
        let mut sum_d = T::zero();
        let mut sum_dx = T::zero();
        for b in 0..n {
            let off = (b * c + ch) * s;
            for i in off..off + s {
                let d = dy[i] * gamma[ch];
                sum_d = sum_d + d;
                sum_dx = sum_dx + d * xhat[i];
            }
        }
        let scale = inv_std[ch] / m;
        for b in 0..n {
            let off = (b * c + ch) * s;
            for i in off..off + s {
                let d = dy[i] * gamma[ch];
                dx[i] = scale * (m * d - sum_d - xhat[i] * sum_dx);
            }
        }
    }
    dx
}
