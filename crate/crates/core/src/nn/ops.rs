//! Single-sample layer kernels on HWC activations.
//!
//! Convolution weights are stored `[ky][kx][in_ch][out_ch]` and fully
//! connected weights `[in][out]`, so every inner loop runs over contiguous
//! output channels.

use super::layer::{LrnParams, Shape};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub input: Shape,
    pub output: Shape,
    pub size: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    /// Input coordinate for an output coordinate and kernel offset, if it
    /// falls inside the (unpadded) input.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

pub(crate) fn conv_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64], y: &mut [f64]) {
    let [ir, ic, ich] = g.input;
    let [or, oc, och] = g.output;
    for oy in 0..or {
        for ox in 0..oc {
            let out = &mut y[(oy * oc + ox) * och..][..och];
            out.copy_from_slice(b);
            for ky in 0..g.size {
                let Some(iy) = g.src(oy, ky, ir) else { continue };
                for kx in 0..g.size {
                    let Some(ix) = g.src(ox, kx, ic) else { continue };
                    let xin = &x[(iy * ic + ix) * ich..][..ich];
                    let wbase = (ky * g.size + kx) * ich * och;
                    for (c, &xv) in xin.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let wrow = &w[wbase + c * och..][..och];
                        for (o, &wv) in out.iter_mut().zip(wrow) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight and bias gradients; writes the input gradient when
/// `dx` is given.
pub(crate) fn conv_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let [ir, ic, ich] = g.input;
    let [or, oc, och] = g.output;
    if let Some(dx) = dx.as_deref_mut() {
        dx.fill(0.0);
    }
    for oy in 0..or {
        for ox in 0..oc {
            let grad = &dy[(oy * oc + ox) * och..][..och];
            for (d, &gv) in db.iter_mut().zip(grad) {
                *d += gv;
            }
            for ky in 0..g.size {
                let Some(iy) = g.src(oy, ky, ir) else { continue };
                for kx in 0..g.size {
                    let Some(ix) = g.src(ox, kx, ic) else { continue };
                    let xoff = (iy * ic + ix) * ich;
                    let wbase = (ky * g.size + kx) * ich * och;
                    for c in 0..ich {
                        let xv = x[xoff + c];
                        let off = wbase + c * och;
                        if xv != 0.0 {
                            for (d, &gv) in dw[off..off + och].iter_mut().zip(grad) {
                                *d += xv * gv;
                            }
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            let dot: f64 = w[off..off + och].iter().zip(grad).map(|(a, b)| a * b).sum();
                            dx[xoff + c] += dot;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn fc_forward(x: &[f64], w: &[f64], b: &[f64], y: &mut [f64]) {
    let n = b.len();
    y.copy_from_slice(b);
    for (i, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        for (o, &wv) in y.iter_mut().zip(&w[i * n..(i + 1) * n]) {
            *o += xv * wv;
        }
    }
}

pub(crate) fn fc_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let n = dy.len();
    for (d, &g) in db.iter_mut().zip(dy) {
        *d += g;
    }
    for (i, &xv) in x.iter().enumerate() {
        if xv != 0.0 {
            for (d, &g) in dw[i * n..(i + 1) * n].iter_mut().zip(dy) {
                *d += xv * g;
            }
        }
    }
    if let Some(dx) = dx {
        for (i, d) in dx.iter_mut().enumerate() {
            *d = w[i * n..(i + 1) * n].iter().zip(dy).map(|(a, b)| a * b).sum();
        }
    }
}

pub(crate) fn relu_forward(x: &[f64], y: &mut [f64]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o = v.max(0.0);
    }
}

pub(crate) fn relu_backward(x: &[f64], dy: &[f64], dx: &mut [f64]) {
    for ((d, &g), &v) in dx.iter_mut().zip(dy).zip(x) {
        *d = if v > 0.0 { g } else { 0.0 };
    }
}

fn lrn_window(c: usize, channels: usize, depth: usize) -> (usize, usize) {
    let half = depth / 2;
    (c.saturating_sub(half), (c + depth - 1 - half).min(channels - 1))
}

/// Denominator base `bias + alpha * sum(a^2)` for every element.
fn lrn_scale(x: &[f64], channels: usize, p: &LrnParams) -> Vec<f64> {
    let mut scale = vec![0.0; x.len()];
    for (px, sc) in x.chunks_exact(channels).zip(scale.chunks_exact_mut(channels)) {
        for (c, s) in sc.iter_mut().enumerate() {
            let (lo, hi) = lrn_window(c, channels, p.depth);
            let sq: f64 = px[lo..=hi].iter().map(|v| v * v).sum();
            *s = p.bias + p.alpha * sq;
        }
    }
    scale
}

pub(crate) fn lrn_forward(x: &[f64], channels: usize, p: &LrnParams, y: &mut [f64]) {
    let scale = lrn_scale(x, channels, p);
    for ((o, &v), &s) in y.iter_mut().zip(x).zip(&scale) {
        *o = v * s.powf(-p.beta);
    }
}

pub(crate) fn lrn_backward(x: &[f64], channels: usize, p: &LrnParams, dy: &[f64], dx: &mut [f64]) {
    let scale = lrn_scale(x, channels, p);
    // t_c = dy_c * a_c * s_c^(-beta-1)
    let t: Vec<f64> = dy
        .iter()
        .zip(x)
        .zip(&scale)
        .map(|((&g, &a), &s)| g * a * s.powf(-p.beta - 1.0))
        .collect();
    let coef = 2.0 * p.alpha * p.beta;
    for (pix, d) in dx.chunks_exact_mut(channels).enumerate() {
        let base = pix * channels;
        for (c, dv) in d.iter_mut().enumerate() {
            // channels whose window contains c
            let half = p.depth / 2;
            let lo = c.saturating_sub(p.depth - 1 - half);
            let hi = (c + half).min(channels - 1);
            let acc: f64 = t[base + lo..=base + hi].iter().sum();
            let i = base + c;
            *dv = dy[i] * scale[i].powf(-p.beta) - coef * x[i] * acc;
        }
    }
}

/// Flat input index of the maximum inside each pooling window; ties keep
/// the first element in scan order.
fn pool_argmax(x: &[f64], input: Shape, output: Shape, size: usize, stride: usize) -> Vec<usize> {
    let [_, ic, ch] = input;
    let [or, oc, _] = output;
    let mut idx = vec![0; or * oc * ch];
    for oy in 0..or {
        for ox in 0..oc {
            for c in 0..ch {
                let mut best = ((oy * stride) * ic + ox * stride) * ch + c;
                for ky in 0..size {
                    for kx in 0..size {
                        let i = ((oy * stride + ky) * ic + ox * stride + kx) * ch + c;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                idx[(oy * oc + ox) * ch + c] = best;
            }
        }
    }
    idx
}

pub(crate) fn pool_forward(x: &[f64], input: Shape, output: Shape, size: usize, stride: usize, y: &mut [f64]) {
    for (o, i) in y.iter_mut().zip(pool_argmax(x, input, output, size, stride)) {
        *o = x[i];
    }
}

pub(crate) fn pool_backward(
    x: &[f64],
    input: Shape,
    output: Shape,
    size: usize,
    stride: usize,
    dy: &[f64],
    dx: &mut [f64],
) {
    dx.fill(0.0);
    for (&g, i) in dy.iter().zip(pool_argmax(x, input, output, size, stride)) {
        dx[i] += g;
    }
}

/// Numerically stable softmax over one group of logits.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Softmax Jacobian-vector product: `dx = p * (dy - <dy, p>)`.
pub(crate) fn softmax_backward(p: &[f64], dy: &[f64], dx: &mut [f64]) {
    let dot: f64 = p.iter().zip(dy).map(|(a, b)| a * b).sum();
    for ((d, &pv), &g) in dx.iter_mut().zip(p).zip(dy) {
        *d = pv * (g - dot);
    }
}
