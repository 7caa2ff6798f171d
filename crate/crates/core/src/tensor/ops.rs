use super::{FlowField, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PadMode {
    Zero,
    /// Out-of-range taps read the nearest border sample.
    Replicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvOptions {
    pub pad_mode: PadMode,
    pub pad_h: usize,
    pub pad_w: usize,
    pub stride: usize,
}

impl ConvOptions {
    /// Stride 1 with `(k - 1) / 2` padding, so odd kernels keep the spatial size.
    pub fn same(kh: usize, kw: usize, pad_mode: PadMode) -> Self {
        ConvOptions {
            pad_mode,
            pad_h: (kh.saturating_sub(1)) / 2,
            pad_w: (kw.saturating_sub(1)) / 2,
            stride: 1,
        }
    }

    pub fn valid() -> Self {
        ConvOptions {
            pad_mode: PadMode::Zero,
            pad_h: 0,
            pad_w: 0,
            stride: 1,
        }
    }
}

#[inline]
fn resolve(i: isize, n: usize, mode: PadMode) -> Option<usize> {
    if i >= 0 && (i as usize) < n {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Replicate => Some(i.clamp(0, n as isize - 1) as usize),
    }
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>, opts: &ConvOptions) -> Result<Self> {
        let (c, h, w) = input.chw()?;
        let [o, kc, kh, kw] = kernel.shape()[..] else {
            return Err(Error::shape("conv2d", input.shape(), kernel.shape()));
        };
        if kc != c {
            return Err(Error::shape("conv2d", input.shape(), kernel.shape()));
        }
        if opts.stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be at least 1"));
        }
        if h + 2 * opts.pad_h < kh || w + 2 * opts.pad_w < kw {
            return Err(Error::shape("conv2d", input.shape(), kernel.shape()));
        }
        let ho = (h + 2 * opts.pad_h - kh) / opts.stride + 1;
        let wo = (w + 2 * opts.pad_w - kw) / opts.stride + 1;
        Ok(ConvGeom {
            c,
            h,
            w,
            o,
            kh,
            kw,
            ho,
            wo,
        })
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn pixels(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, opts: &ConvOptions) -> Vec<T> {
    let p = g.pixels();
    let mut cols = vec![T::zero(); g.patch() * p];
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * p;
                for oy in 0..g.ho {
                    let iy = (oy * opts.stride + ky) as isize - opts.pad_h as isize;
                    let Some(iy) = resolve(iy, g.h, opts.pad_mode) else {
                        continue;
                    };
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let dst = &mut cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * opts.stride + kx) as isize - opts.pad_w as isize;
                        if let Some(ix) = resolve(ix, g.w, opts.pad_mode) {
                            *d = src[ix];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom, opts: &ConvOptions) -> Vec<T> {
    let p = g.pixels();
    let mut x = vec![T::zero(); g.c * g.h * g.w];
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * p;
                for oy in 0..g.ho {
                    let iy = (oy * opts.stride + ky) as isize - opts.pad_h as isize;
                    let Some(iy) = resolve(iy, g.h, opts.pad_mode) else {
                        continue;
                    };
                    let src = &cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * opts.stride + kx) as isize - opts.pad_w as isize;
                        if let Some(ix) = resolve(ix, g.w, opts.pad_mode) {
                            plane[iy * g.w + ix] += v;
                        }
                    }
                }
            }
        }
    }
    x
}

/// Cross-correlation of a `(C, H, W)` input with an `(O, C, Kh, Kw)` kernel.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    opts: ConvOptions,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input, kernel, &opts)?;
    if let Some(b) = bias {
        if b.shape() != [g.o] {
            return Err(Error::shape("conv2d bias", b.shape(), &[g.o]));
        }
    }
    let p = g.pixels();
    let k = g.patch();
    let cols = im2col(input.data(), &g, &opts);
    let mut out = vec![T::zero(); g.o * p];
    if let Some(b) = bias {
        for (row, &bv) in out.chunks_mut(p.max(1)).zip(b.data()) {
            row.fill(bv);
        }
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    T::gemm(
        g.o,
        k,
        p,
        (kernel.data(), k as isize, 1),
        (&cols, p as isize, 1),
        beta,
        (&mut out, p as isize, 1),
    );
    Tensor::new([g.o, g.ho, g.wo], out)?.ensure_finite("conv2d")
}

/// Gradients of `conv2d` with respect to input, kernel and (optionally) bias.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    with_bias: bool,
    grad_out: &Tensor<T>,
    opts: ConvOptions,
) -> Result<(Tensor<T>, Tensor<T>, Option<Tensor<T>>)> {
    let g = ConvGeom::new(input, kernel, &opts)?;
    if grad_out.shape() != [g.o, g.ho, g.wo] {
        return Err(Error::shape(
            "conv2d backward",
            grad_out.shape(),
            &[g.o, g.ho, g.wo],
        ));
    }
    let p = g.pixels();
    let k = g.patch();
    let cols = im2col(input.data(), &g, &opts);

    let mut gk = vec![T::zero(); g.o * k];
    T::gemm(
        g.o,
        p,
        k,
        (grad_out.data(), p as isize, 1),
        (&cols, 1, p as isize),
        T::zero(),
        (&mut gk, k as isize, 1),
    );

    let mut dcols = vec![T::zero(); k * p];
    T::gemm(
        k,
        g.o,
        p,
        (kernel.data(), 1, k as isize),
        (grad_out.data(), p as isize, 1),
        T::zero(),
        (&mut dcols, p as isize, 1),
    );
    let gi = col2im(&dcols, &g, &opts);

    let gb = with_bias.then(|| {
        let sums = grad_out
            .data()
            .chunks(p.max(1))
            .map(|row| row.iter().copied().sum())
            .collect();
        Tensor::new([g.o], sums).expect("bias gradient shape")
    });
    Ok((
        Tensor::new(input.shape().to_vec(), gi)?,
        Tensor::new(kernel.shape().to_vec(), gk)?,
        gb,
    ))
}

fn depthwise_geom<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (c, h, w) = input.chw()?;
    match kernel.shape()[..] {
        [kh, kw] if kh % 2 == 1 && kw % 2 == 1 => Ok((c, h, w, kh, kw)),
        _ => Err(Error::shape("depthwise_conv2d", input.shape(), kernel.shape())),
    }
}

/// Applies one odd `(Kh, Kw)` kernel to every channel independently, keeping
/// the spatial size.
pub fn depthwise_conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    mode: PadMode,
) -> Result<Tensor<T>> {
    let (c, h, w, kh, kw) = depthwise_geom(input, kernel)?;
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let k = kernel.data();
    let x = input.data();
    let mut out = vec![T::zero(); c * h * w];
    // Column lookup per (kx, x); rows are resolved in the loop.
    let cols: Vec<Option<usize>> = (0..kw)
        .flat_map(|kx| (0..w).map(move |xx| resolve(xx as isize + kx as isize - pw, w, mode)))
        .collect();
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        let dst = &mut out[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            let row = &mut dst[y * w..(y + 1) * w];
            for ky in 0..kh {
                let Some(iy) = resolve(y as isize + ky as isize - ph, h, mode) else {
                    continue;
                };
                let src = &plane[iy * w..(iy + 1) * w];
                for kx in 0..kw {
                    let kv = k[ky * kw + kx];
                    let lookup = &cols[kx * w..(kx + 1) * w];
                    for (d, ix) in row.iter_mut().zip(lookup) {
                        if let Some(ix) = ix {
                            *d += kv * src[*ix];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input.shape().to_vec(), out)?.ensure_finite("depthwise_conv2d")
}

/// Adjoint of [`depthwise_conv2d`] with respect to its input.
pub fn depthwise_conv2d_adjoint<T: Real>(
    grad_out: &Tensor<T>,
    kernel: &Tensor<T>,
    mode: PadMode,
) -> Result<Tensor<T>> {
    let (c, h, w, kh, kw) = depthwise_geom(grad_out, kernel)?;
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let k = kernel.data();
    let g = grad_out.data();
    let mut out = vec![T::zero(); c * h * w];
    for ci in 0..c {
        let src = &g[ci * h * w..(ci + 1) * h * w];
        let dst = &mut out[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            for ky in 0..kh {
                let Some(iy) = resolve(y as isize + ky as isize - ph, h, mode) else {
                    continue;
                };
                for kx in 0..kw {
                    let kv = k[ky * kw + kx];
                    for x in 0..w {
                        if let Some(ix) = resolve(x as isize + kx as isize - pw, w, mode) {
                            dst[iy * w + ix] += kv * src[y * w + x];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(grad_out.shape().to_vec(), out)
}

fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::invalid(
            "softmax",
            format!("axis {axis} out of range for shape {shape:?}"),
        ));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Numerically stable softmax along `axis` (max-subtracted).
pub fn softmax_over_axis<T: Real>(input: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, n, inner) = axis_split(input.shape(), axis)?;
    if n == 0 {
        return Err(Error::invalid("softmax", "empty axis"));
    }
    let x = input.data();
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let max = (0..n).fold(T::neg_infinity(), |m, j| m.max(x[at(j)]));
            let mut total = T::zero();
            for j in 0..n {
                let e = (x[at(j)] - max).exp();
                out[at(j)] = e;
                total += e;
            }
            for j in 0..n {
                out[at(j)] = out[at(j)] / total;
            }
        }
    }
    Tensor::new(input.shape().to_vec(), out)?.ensure_finite("softmax")
}

pub(crate) fn softmax_backward<T: Real>(
    output: &Tensor<T>,
    grad_out: &Tensor<T>,
    axis: usize,
) -> Result<Tensor<T>> {
    let (outer, n, inner) = axis_split(output.shape(), axis)?;
    let (y, g) = (output.data(), grad_out.data());
    let mut out = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let dot: T = (0..n).map(|j| y[at(j)] * g[at(j)]).sum();
            for j in 0..n {
                out[at(j)] = y[at(j)] * (g[at(j)] - dot);
            }
        }
    }
    Tensor::new(output.shape().to_vec(), out)
}

/// Positive rational resize factor `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ResizeScale {
    pub num: usize,
    pub den: usize,
}

impl ResizeScale {
    pub fn int(r: usize) -> Self {
        ResizeScale { num: r, den: 1 }
    }

    fn apply(&self, n: usize) -> usize {
        n * self.num / self.den
    }
}

/// Source taps `(i0, i1, t)` per output index, align-corners=false.
fn resize_taps(input: usize, output: usize, scale: ResizeScale) -> Vec<(usize, usize, f64)> {
    let inv = scale.den as f64 / scale.num as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * inv - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let t = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, t)
        })
        .collect()
}

fn resize_plan(shape: &[usize], scale: ResizeScale) -> Result<(usize, usize, usize, usize, usize)> {
    let (c, h, w) = match shape {
        &[c, h, w] => (c, h, w),
        _ => return Err(Error::invalid("bilinear_resize", "expected (C, H, W)")),
    };
    if scale.num == 0 || scale.den == 0 {
        return Err(Error::invalid("bilinear_resize", "scale must be positive"));
    }
    let (ho, wo) = (scale.apply(h), scale.apply(w));
    if ho == 0 || wo == 0 {
        return Err(Error::invalid(
            "bilinear_resize",
            format!("{h}x{w} at scale {}/{} rounds to an empty image", scale.num, scale.den),
        ));
    }
    Ok((c, h, w, ho, wo))
}

/// Bilinear resampling by a rational factor, align-corners=false.
pub fn bilinear_resize<T: Real>(input: &Tensor<T>, scale: ResizeScale) -> Result<Tensor<T>> {
    let (c, h, w, ho, wo) = resize_plan(input.shape(), scale)?;
    let ys = resize_taps(h, ho, scale);
    let xs: Vec<(usize, usize, T)> = resize_taps(w, wo, scale)
        .into_iter()
        .map(|(a, b, t)| (a, b, T::lit(t)))
        .collect();
    let x = input.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for &(y0, y1, ty) in &ys {
            let ty = T::lit(ty);
            let (r0, r1) = (&plane[y0 * w..(y0 + 1) * w], &plane[y1 * w..(y1 + 1) * w]);
            for &(x0, x1, tx) in &xs {
                let top = r0[x0] + tx * (r0[x1] - r0[x0]);
                let bot = r1[x0] + tx * (r1[x1] - r1[x0]);
                out.push(top + ty * (bot - top));
            }
        }
    }
    Tensor::new([c, ho, wo], out)?.ensure_finite("bilinear_resize")
}

/// Adjoint of [`bilinear_resize`]; `input_shape` is the shape of the forward input.
pub fn bilinear_resize_adjoint<T: Real>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
    scale: ResizeScale,
) -> Result<Tensor<T>> {
    let (c, h, w, ho, wo) = resize_plan(input_shape, scale)?;
    if grad_out.shape() != [c, ho, wo] {
        return Err(Error::shape("bilinear_resize backward", grad_out.shape(), &[c, ho, wo]));
    }
    let ys = resize_taps(h, ho, scale);
    let xs = resize_taps(w, wo, scale);
    let g = grad_out.data();
    let mut out = vec![T::zero(); c * h * w];
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                let gv = g[(ci * ho + oy) * wo + ox];
                let (ty, tx) = (T::lit(ty), T::lit(tx));
                let one = T::one();
                plane[y0 * w + x0] += gv * (one - ty) * (one - tx);
                plane[y0 * w + x1] += gv * (one - ty) * tx;
                plane[y1 * w + x0] += gv * ty * (one - tx);
                plane[y1 * w + x1] += gv * ty * tx;
            }
        }
    }
    Tensor::new(input_shape.to_vec(), out)
}

/// `(C·r², H, W) -> (C, r·H, r·W)`.
pub fn pixel_shuffle<T: Real>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (cr, h, w) = input.chw()?;
    if r == 0 || cr % (r * r) != 0 {
        return Err(Error::invalid(
            "pixel_shuffle",
            format!("{cr} channels not divisible by {r}²"),
        ));
    }
    let c = cr / (r * r);
    let (ho, wo) = (h * r, w * r);
    let x = input.data();
    let mut out = vec![T::zero(); x.len()];
    for ci in 0..c {
        for i in 0..r {
            for j in 0..r {
                let src = &x[(ci * r * r + i * r + j) * h * w..][..h * w];
                for y in 0..h {
                    let dst_row = (ci * ho + y * r + i) * wo;
                    for xx in 0..w {
                        out[dst_row + xx * r + j] = src[y * w + xx];
                    }
                }
            }
        }
    }
    Tensor::new([c, ho, wo], out)
}

/// Inverse of [`pixel_shuffle`]: `(C, r·H, r·W) -> (C·r², H, W)`.
pub fn pixel_unshuffle<T: Real>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (c, ho, wo) = input.chw()?;
    if r == 0 || ho % r != 0 || wo % r != 0 {
        return Err(Error::invalid(
            "pixel_unshuffle",
            format!("{ho}x{wo} not divisible by {r}"),
        ));
    }
    let (h, w) = (ho / r, wo / r);
    let x = input.data();
    let mut out = vec![T::zero(); x.len()];
    for ci in 0..c {
        for i in 0..r {
            for j in 0..r {
                let dst = &mut out[(ci * r * r + i * r + j) * h * w..][..h * w];
                for y in 0..h {
                    let src_row = (ci * ho + y * r + i) * wo;
                    for xx in 0..w {
                        dst[y * w + xx] = x[src_row + xx * r + j];
                    }
                }
            }
        }
    }
    Tensor::new([c * r * r, h, w], out)
}

struct WarpTap<T> {
    i00: usize,
    i01: usize,
    i10: usize,
    i11: usize,
    tx: T,
    ty: T,
}

fn warp_taps<T: Real>(h: usize, w: usize, flow: &FlowField) -> Vec<WarpTap<T>> {
    let (dx, dy) = (flow.dx(), flow.dy());
    let mut taps = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let sx = T::from_usize(x).unwrap() + T::from_f32(dx[p]).unwrap();
            let sy = T::from_usize(y).unwrap() + T::from_f32(dy[p]).unwrap();
            let (fx, fy) = (sx.floor(), sy.floor());
            let (tx, ty) = (sx - fx, sy - fy);
            let (fx, fy) = (fx.to_isize().unwrap(), fy.to_isize().unwrap());
            let cx = |v: isize| v.clamp(0, w as isize - 1) as usize;
            let cy = |v: isize| v.clamp(0, h as isize - 1) as usize;
            let (x0, x1, y0, y1) = (cx(fx), cx(fx + 1), cy(fy), cy(fy + 1));
            taps.push(WarpTap {
                i00: y0 * w + x0,
                i01: y0 * w + x1,
                i10: y1 * w + x0,
                i11: y1 * w + x1,
                tx,
                ty,
            });
        }
    }
    taps
}

fn check_flow<T: Real>(input_shape: &[usize], flow: &FlowField) -> Result<(usize, usize, usize)> {
    match input_shape {
        &[c, h, w] if h == flow.height() && w == flow.width() => Ok((c, h, w)),
        _ => Err(Error::shape("backward_warp", input_shape, flow.as_tensor().shape())),
    }
}

/// `out(p) = input(p + flow(p))`, bilinear, edge-replicated outside the image.
pub fn backward_warp<T: Real>(input: &Tensor<T>, flow: &FlowField) -> Result<Tensor<T>> {
    let (c, h, w) = check_flow::<T>(input.shape(), flow)?;
    let taps = warp_taps::<T>(h, w, flow);
    let x = input.data();
    let mut out = Vec::with_capacity(x.len());
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for t in &taps {
            let top = plane[t.i00] + t.tx * (plane[t.i01] - plane[t.i00]);
            let bot = plane[t.i10] + t.tx * (plane[t.i11] - plane[t.i10]);
            out.push(top + t.ty * (bot - top));
        }
    }
    Tensor::new(input.shape().to_vec(), out)?.ensure_finite("backward_warp")
}

/// Adjoint of [`backward_warp`] with respect to its input (flow held fixed).
pub fn backward_warp_adjoint<T: Real>(grad_out: &Tensor<T>, flow: &FlowField) -> Result<Tensor<T>> {
    let (c, h, w) = check_flow::<T>(grad_out.shape(), flow)?;
    let taps = warp_taps::<T>(h, w, flow);
    let g = grad_out.data();
    let mut out = vec![T::zero(); g.len()];
    let one = T::one();
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for (p, t) in taps.iter().enumerate() {
            let gv = g[ci * h * w + p];
            plane[t.i00] += gv * (one - t.ty) * (one - t.tx);
            plane[t.i01] += gv * (one - t.ty) * t.tx;
            plane[t.i10] += gv * t.ty * (one - t.tx);
            plane[t.i11] += gv * t.ty * t.tx;
        }
    }
    Tensor::new(grad_out.shape().to_vec(), out)
}

/// Stacks `a`'s channels before `b`'s.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ca, ha, wa) = a.chw()?;
    let (cb, hb, wb) = b.chw()?;
    if (ha, wa) != (hb, wb) {
        return Err(Error::shape("concat_channels", a.shape(), b.shape()));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new([ca + cb, ha, wa], data)
}
