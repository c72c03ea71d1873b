//! Slice-level kernels shared by forward and backward passes.
//!
//! Convolutions work on 5-D `[N, C, D, H, W]` layouts; 2-D convolution is the
//! `D = 1` special case. Stride is always 1 with zero padding.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    pub fn output(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for a in 0..3 {
            out[a] = self.input[a] + 2 * self.pad[a] + 1 - self.kernel[a];
        }
        out
    }

    pub fn valid(&self) -> bool {
        (0..3).all(|a| self.input[a] + 2 * self.pad[a] >= self.kernel[a])
    }
}

/// Output index range `[lo, hi)` along one axis for which `o + k - pad` lands inside `[0, len)`.
#[inline]
fn valid_range(k: usize, pad: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (len + pad).saturating_sub(k).min(out_len);
    (lo, hi.max(lo))
}

/// Visits every (kernel tap, output row) pair with the matching input row offset.
/// The callback receives `(n, co, ci, weight_index, out_row_start, in_row_start, row_len)`.
#[inline]
fn for_each_row(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize)) {
    let [d, h, w] = g.input;
    let [od, oh, ow] = g.output();
    let [kd, kh, kw] = g.kernel;
    let [pd, ph, pw] = g.pad;
    for n in 0..g.n {
        for co in 0..g.cout {
            for ci in 0..g.cin {
                let in_base = (n * g.cin + ci) * d * h * w;
                let out_base = (n * g.cout + co) * od * oh * ow;
                for kz in 0..kd {
                    let (z0, z1) = valid_range(kz, pd, d, od);
                    for ky in 0..kh {
                        let (y0, y1) = valid_range(ky, ph, h, oh);
                        for kx in 0..kw {
                            let (x0, x1) = valid_range(kx, pw, w, ow);
                            if x1 <= x0 {
                                continue;
                            }
                            let widx = (((co * g.cin + ci) * kd + kz) * kh + ky) * kw + kx;
                            for oz in z0..z1 {
                                let iz = oz + kz - pd;
                                for oy in y0..y1 {
                                    let iy = oy + ky - ph;
                                    let out_row = out_base + (oz * oh + oy) * ow + x0;
                                    let in_row = in_base + (iz * h + iy) * w + x0 + kx - pw;
                                    f(n, co, ci, widx, out_row, in_row, x1 - x0);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward(
    g: &ConvGeom,
    x: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let [od, oh, ow] = g.output();
    let plane = od * oh * ow;
    let mut out = vec![0.0; g.n * g.cout * plane];
    if let Some(b) = bias {
        for n in 0..g.n {
            for co in 0..g.cout {
                let s = (n * g.cout + co) * plane;
                out[s..s + plane].iter_mut().for_each(|v| *v = b[co]);
            }
        }
    }
    for_each_row(g, |_, _, _, widx, o, i, len| {
        let wv = weight[widx];
        if wv == 0.0 {
            return;
        }
        for (dst, src) in out[o..o + len].iter_mut().zip(&x[i..i + len]) {
            *dst += wv * src;
        }
    });
    out
}

/// Gradients with respect to input and weight given the output gradient.
pub(crate) fn conv_backward(
    g: &ConvGeom,
    x: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    need_input: bool,
    need_weight: bool,
) -> (Vec<f64>, Vec<f64>) {
    let mut gx = if need_input {
        vec![0.0; x.len()]
    } else {
        Vec::new()
    };
    let mut gw = if need_weight {
        vec![0.0; weight.len()]
    } else {
        Vec::new()
    };
    for_each_row(g, |_, _, _, widx, o, i, len| {
        let go = &grad_out[o..o + len];
        if need_input {
            let wv = weight[widx];
            for (dst, src) in gx[i..i + len].iter_mut().zip(go) {
                *dst += wv * src;
            }
        }
        if need_weight {
            let acc: f64 = go.iter().zip(&x[i..i + len]).map(|(a, b)| a * b).sum();
            gw[widx] += acc;
        }
    });
    (gx, gw)
}

/// Per-channel sum of a `[N, C, rest]` gradient.
pub(crate) fn channel_sums(grad: &[f64], n: usize, c: usize) -> Vec<f64> {
    let rest = grad.len() / (n * c).max(1);
    let mut out = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let s = (b * c + ch) * rest;
            out[ch] += grad[s..s + rest].iter().sum::<f64>();
        }
    }
    out
}

/// Non-overlapping average pooling over `[NC, D, H, W]` with window `k`; trailing remainders are dropped.
pub(crate) fn avg_pool_forward(x: &[f64], nc: usize, dims: [usize; 3], k: [usize; 3]) -> Vec<f64> {
    let [d, h, w] = dims;
    let [od, oh, ow] = [d / k[0], h / k[1], w / k[2]];
    let scale = 1.0 / (k[0] * k[1] * k[2]) as f64;
    let mut out = vec![0.0; nc * od * oh * ow];
    for b in 0..nc {
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0;
                    for dz in 0..k[0] {
                        for dy in 0..k[1] {
                            let row = ((b * d + z * k[0] + dz) * h + y * k[1] + dy) * w + xo * k[2];
                            acc += x[row..row + k[2]].iter().sum::<f64>();
                        }
                    }
                    out[((b * od + z) * oh + y) * ow + xo] = acc * scale;
                }
            }
        }
    }
    out
}

pub(crate) fn avg_pool_backward(
    grad: &[f64],
    nc: usize,
    dims: [usize; 3],
    k: [usize; 3],
) -> Vec<f64> {
    let [d, h, w] = dims;
    let [od, oh, ow] = [d / k[0], h / k[1], w / k[2]];
    let scale = 1.0 / (k[0] * k[1] * k[2]) as f64;
    let mut gx = vec![0.0; nc * d * h * w];
    for b in 0..nc {
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let g = grad[((b * od + z) * oh + y) * ow + xo] * scale;
                    for dz in 0..k[0] {
                        for dy in 0..k[1] {
                            let row = ((b * d + z * k[0] + dz) * h + y * k[1] + dy) * w + xo * k[2];
                            gx[row..row + k[2]].iter_mut().for_each(|v| *v += g);
                        }
                    }
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-summation reference with explicit bounds checks.
    fn conv_reference(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
        let [d, h, wd] = g.input;
        let [od, oh, ow] = g.output();
        let [kd, kh, kw] = g.kernel;
        let mut out = vec![0.0; g.n * g.cout * od * oh * ow];
        for n in 0..g.n {
            for co in 0..g.cout {
                for oz in 0..od {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for ci in 0..g.cin {
                                for kz in 0..kd {
                                    for ky in 0..kh {
                                        for kx in 0..kw {
                                            let iz = oz as isize + kz as isize - g.pad[0] as isize;
                                            let iy = oy as isize + ky as isize - g.pad[1] as isize;
                                            let ix = ox as isize + kx as isize - g.pad[2] as isize;
                                            if iz < 0
                                                || iy < 0
                                                || ix < 0
                                                || iz >= d as isize
                                                || iy >= h as isize
                                                || ix >= wd as isize
                                            {
                                                continue;
                                            }
                                            let xi = (((n * g.cin + ci) * d + iz as usize) * h
                                                + iy as usize)
                                                * wd
                                                + ix as usize;
                                            let wi =
                                                (((co * g.cin + ci) * kd + kz) * kh + ky) * kw + kx;
                                            acc += x[xi] * w[wi];
                                        }
                                    }
                                }
                            }
                            out[(((n * g.cout + co) * od + oz) * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_summation() {
        let g = ConvGeom {
            n: 2,
            cin: 2,
            cout: 3,
            input: [3, 5, 4],
            kernel: [3, 3, 1],
            pad: [1, 0, 0],
        };
        let x: Vec<f64> = (0..2 * 2 * 3 * 5 * 4)
            .map(|i| ((i * 37 % 11) as f64) - 5.0)
            .collect();
        let w: Vec<f64> = (0..3 * 2 * 3 * 3)
            .map(|i| ((i * 13 % 7) as f64) * 0.25 - 0.7)
            .collect();
        let fast = conv_forward(&g, &x, &w, None);
        let slow = conv_reference(&g, &x, &w);
        assert_eq!(fast.len(), slow.len());
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn avg_pool_drops_remainder() {
        let x: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let out = avg_pool_forward(&x, 1, [1, 1, 5], [1, 1, 2]);
        assert_eq!(out, vec![0.5, 2.5]);
    }
}
