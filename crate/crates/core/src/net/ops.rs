//! Batched 2-D kernels on `[batch, channel, height, width]` buffers.

/// Shape of a 4-D activation buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Convolution geometry: `cout x cin x kh x kw` weights, zero "same" padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kh * self.kw
    }

    #[inline]
    fn widx(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.cin + i) * self.kh + ky) * self.kw + kx
    }
}

/// Valid output range along one axis for kernel offset `d`.
#[inline]
fn span(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d.max(0)).max(0) as usize;
    (lo.min(len), hi.min(len))
}

pub fn conv_forward(x: &[f64], s: Shape, g: &ConvGeom, weight: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    debug_assert_eq!(s.c, g.cin);
    let (h, w) = (s.h, s.w);
    let plane = s.plane();
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    let mut out = vec![0.0; s.n * g.cout * plane];
    for b in 0..s.n {
        for o in 0..g.cout {
            let dst = &mut out[(b * g.cout + o) * plane..][..plane];
            if let Some(bias) = bias {
                dst.iter_mut().for_each(|v| *v = bias[o]);
            }
            for i in 0..g.cin {
                let src = &x[(b * g.cin + i) * plane..][..plane];
                for ky in 0..g.kh {
                    let dy = ky as isize - ph;
                    let (y0, y1) = span(h, dy);
                    for kx in 0..g.kw {
                        let wv = weight[g.widx(o, i, ky, kx)];
                        if wv == 0.0 {
                            continue;
                        }
                        let dx = kx as isize - pw;
                        let (x0, x1) = span(w, dx);
                        if x0 >= x1 {
                            continue;
                        }
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let sx0 = (x0 as isize + dx) as usize;
                            let d = &mut dst[y * w + x0..y * w + x1];
                            let sr = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                            for (a, b) in d.iter_mut().zip(sr) {
                                *a += wv * b;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a convolution: returns `(dx, dw, db)`.
pub fn conv_backward(
    x: &[f64],
    s: Shape,
    g: &ConvGeom,
    weight: &[f64],
    dy: &[f64],
    want_bias: bool,
    want_dx: bool,
) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let (h, w) = (s.h, s.w);
    let plane = s.plane();
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    let mut dx = if want_dx { vec![0.0; x.len()] } else { Vec::new() };
    let mut dw = vec![0.0; g.weight_len()];
    let mut db = want_bias.then(|| vec![0.0; g.cout]);
    for b in 0..s.n {
        for o in 0..g.cout {
            let go = &dy[(b * g.cout + o) * plane..][..plane];
            if let Some(db) = db.as_mut() {
                db[o] += go.iter().sum::<f64>();
            }
            for i in 0..g.cin {
                let src = &x[(b * g.cin + i) * plane..][..plane];
                for ky in 0..g.kh {
                    let ddy = ky as isize - ph;
                    let (y0, y1) = span(h, ddy);
                    for kx in 0..g.kw {
                        let ddx = kx as isize - pw;
                        let (x0, x1) = span(w, ddx);
                        if x0 >= x1 {
                            continue;
                        }
                        let widx = g.widx(o, i, ky, kx);
                        let wv = weight[widx];
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let sy = (y as isize + ddy) as usize;
                            let sx0 = (x0 as isize + ddx) as usize;
                            let gr = &go[y * w + x0..y * w + x1];
                            let sr = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                            acc += gr.iter().zip(sr).map(|(a, b)| a * b).sum::<f64>();
                            if want_dx && wv != 0.0 {
                                let base = (b * g.cin + i) * plane + sy * w + sx0;
                                let dr = &mut dx[base..base + (x1 - x0)];
                                for (d, gv) in dr.iter_mut().zip(gr) {
                                    *d += wv * gv;
                                }
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Per-channel mean and population variance over batch and space.
pub fn channel_stats(x: &[f64], s: Shape) -> (Vec<f64>, Vec<f64>) {
    let plane = s.plane();
    let count = (s.n * plane) as f64;
    let mut mean = vec![0.0; s.c];
    let mut var = vec![0.0; s.c];
    for c in 0..s.c {
        let mut acc = 0.0;
        for b in 0..s.n {
            acc += x[(b * s.c + c) * plane..][..plane].iter().sum::<f64>();
        }
        let m = acc / count;
        let mut v = 0.0;
        for b in 0..s.n {
            v += x[(b * s.c + c) * plane..][..plane]
                .iter()
                .map(|t| (t - m) * (t - m))
                .sum::<f64>();
        }
        mean[c] = m;
        var[c] = v / count;
    }
    (mean, var)
}

/// `y = scale[c] * x + shift[c]` in place.
pub fn channel_affine(x: &mut [f64], s: Shape, scale: &[f64], shift: &[f64]) {
    let plane = s.plane();
    for b in 0..s.n {
        for c in 0..s.c {
            let (a, t) = (scale[c], shift[c]);
            x[(b * s.c + c) * plane..][..plane]
                .iter_mut()
                .for_each(|v| *v = a * *v + t);
        }
    }
}

/// Concatenates two buffers along the channel axis.
pub fn concat_channels(a: &[f64], ca: usize, b: &[f64], cb: usize, n: usize, plane: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * (ca + cb) * plane);
    for k in 0..n {
        out.extend_from_slice(&a[k * ca * plane..(k + 1) * ca * plane]);
        out.extend_from_slice(&b[k * cb * plane..(k + 1) * cb * plane]);
    }
    out
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels(g: &[f64], ca: usize, cb: usize, n: usize, plane: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::with_capacity(n * ca * plane);
    let mut b = Vec::with_capacity(n * cb * plane);
    let stride = (ca + cb) * plane;
    for k in 0..n {
        a.extend_from_slice(&g[k * stride..k * stride + ca * plane]);
        b.extend_from_slice(&g[k * stride + ca * plane..(k + 1) * stride]);
    }
    (a, b)
}
