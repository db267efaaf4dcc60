//! Dense loops shared by the forward and backward passes.

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Input coordinate for output coordinate `out` and kernel offset `k`, if inside the image.
    #[inline]
    fn src(&self, out: usize, k: usize, size: usize) -> Option<usize> {
        let pos = (out * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < size).then_some(pos as usize)
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], wt: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; g.n * g.o * g.oh * g.ow];
    for n in 0..g.n {
        for o in 0..g.o {
            let out = &mut y[(n * g.o + o) * g.oh * g.ow..][..g.oh * g.ow];
            out.fill(bias[o]);
            for c in 0..g.c {
                let img = &x[(n * g.c + c) * g.h * g.w..][..g.h * g.w];
                let ker = &wt[(o * g.c + c) * g.kh * g.kw..][..g.kh * g.kw];
                for oy in 0..g.oh {
                    for ky in 0..g.kh {
                        let Some(iy) = g.src(oy, ky, g.h) else {
                            continue;
                        };
                        let row = &img[iy * g.w..][..g.w];
                        for ox in 0..g.ow {
                            let mut acc = 0.0;
                            for kx in 0..g.kw {
                                if let Some(ix) = g.src(ox, kx, g.w) {
                                    acc += ker[ky * g.kw + kx] * row[ix];
                                }
                            }
                            out[oy * g.ow + ox] += acc;
                        }
                    }
                }
            }
        }
    }
    y
}

/// Gradients of a convolution with respect to input, weight and bias.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    wt: &[f64],
    dy: &[f64],
    want_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut dx = want_dx.then(|| vec![0.0; x.len()]);
    let mut dw = vec![0.0; wt.len()];
    let mut db = vec![0.0; g.o];
    for n in 0..g.n {
        for o in 0..g.o {
            let grad = &dy[(n * g.o + o) * g.oh * g.ow..][..g.oh * g.ow];
            db[o] += grad.iter().sum::<f64>();
            for c in 0..g.c {
                let base = (n * g.c + c) * g.h * g.w;
                let img = &x[base..][..g.h * g.w];
                let kbase = (o * g.c + c) * g.kh * g.kw;
                for oy in 0..g.oh {
                    for ky in 0..g.kh {
                        let Some(iy) = g.src(oy, ky, g.h) else {
                            continue;
                        };
                        for ox in 0..g.ow {
                            let go = grad[oy * g.ow + ox];
                            if go == 0.0 {
                                continue;
                            }
                            for kx in 0..g.kw {
                                if let Some(ix) = g.src(ox, kx, g.w) {
                                    dw[kbase + ky * g.kw + kx] += go * img[iy * g.w + ix];
                                    if let Some(dx) = dx.as_mut() {
                                        dx[base + iy * g.w + ix] += go * wt[kbase + ky * g.kw + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// `x[rows, k] · w[k, m] + bias[m]`.
pub(crate) fn affine(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    rows: usize,
    k: usize,
    m: usize,
) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows * m);
    for r in 0..rows {
        y.extend_from_slice(bias);
        let out = &mut y[r * m..];
        for (i, &xv) in x[r * k..(r + 1) * k].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, &wv) in out.iter_mut().zip(&w[i * m..(i + 1) * m]) {
                *o += xv * wv;
            }
        }
    }
    y
}

/// `a[n, d] · b[m, d]ᵀ`.
pub(crate) fn matmul_t(a: &[f64], b: &[f64], n: usize, m: usize, d: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * m];
    for i in 0..n {
        let ar = &a[i * d..(i + 1) * d];
        for j in 0..m {
            y[i * m + j] = dot(ar, &b[j * d..(j + 1) * d]);
        }
    }
    y
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn softmax_row(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub(crate) fn log_softmax_row(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}
